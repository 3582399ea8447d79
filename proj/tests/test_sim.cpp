#include "doctest.h"
#include "wallbuild/experiment.hpp"
#include "wallbuild/sim.hpp"

#include <random>

using namespace wb;
using namespace wb::sim;
using geometry::deg2rad;
using geometry::kPi;

namespace {

// fine midpoint-rule rollout, independent of the closed form
Pose euler(Pose p, double v, double w, double t) {
  const int n = 20000;
  const double h = t / n;
  for (int k = 0; k < n; ++k) {
    const double ym = p.yaw + 0.5 * w * h;
    p.x += v * h * std::cos(ym);
    p.y += v * h * std::sin(ym);
    p.yaw += w * h;
  }
  p.yaw = geometry::wrap_angle(p.yaw);
  return p;
}

Simulation load_sim(const NoiseConfig& noise, std::uint64_t seed, double rel = 60.0) {
  const auto s = experiment::load_trial(rel, 2.8);
  SimConfig cfg = s.sim;
  cfg.noise = noise;
  cfg.seed = seed;
  cfg.max_sim_time = 300;
  const auto c = world::Color::Red;
  return Simulation(s.world, s.mission,
                    {{mission::TaskKind::Load, c, -1}, {mission::TaskKind::Build, c, 0}}, cfg);
}

void run_until_loaded(Simulation& sim) {
  while (!sim.finished() && (sim.mission().top == mission::Top::GoToStacks ||
                             sim.mission().top == mission::Top::LoadBricks)) {
    sim.tick();
  }
}

}  // namespace

TEST_CASE("integrate_base examples") {
  const Pose p0 = Pose::planar(1.0, 2.0, 0.3);
  const Pose same = integrate_base(p0, 0, 0, 0.05);
  CHECK(same.x == p0.x);
  CHECK(same.y == p0.y);
  CHECK(same.yaw == p0.yaw);

  const Pose s = integrate_base(Pose::planar(0, 0, 0), 1.0, 0.0, 2.0);
  CHECK(s.x == doctest::Approx(2.0));
  CHECK(s.y == doctest::Approx(0.0));

  // half circle: heading flips, lateral displacement 2 v / omega
  const Pose h = integrate_base(Pose::planar(0, 0, 0), 1.0, 1.0, kPi<double>);
  CHECK(h.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(h.y == doctest::Approx(2.0));
  CHECK(std::abs(geometry::wrap_angle(h.yaw - kPi<double>)) < 1e-12);
}

TEST_CASE("integrate_base matches a fine rollout") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> v(-0.3, 1.0), w(-1.0, 1.0), t(0.01, 3.0), a(-3.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    const Pose p = Pose::planar(a(rng), a(rng), a(rng));
    const double vv = v(rng), ww = w(rng), tt = t(rng);
    const Pose e = integrate_base(p, vv, ww, tt), o = euler(p, vv, ww, tt);
    CHECK(std::hypot(e.x - o.x, e.y - o.y) < 1e-6);
    CHECK(std::abs(geometry::wrap_angle(e.yaw - o.yaw)) < 1e-9);
  }
}

TEST_CASE("move_effector rate limits and envelope") {
  world::WorldState w;
  const EffectorLimits lim;
  const auto before = w.effector;
  move_effector(w, {}, lim);
  CHECK(w.effector.position == before.position);
  CHECK(w.effector.pitch == before.pitch);

  EffectorDelta d;
  d.d_pos = Vec3d(0.5, 0, 0);
  move_effector(w, d, lim);
  CHECK(w.effector.position.x() == doctest::Approx(before.position.x() + 0.05));

  EffectorDelta t;
  t.d_pitch = 1.0;
  move_effector(w, t, lim);
  CHECK(w.effector.pitch == doctest::Approx(before.pitch + lim.max_turn));

  // push the gripper past r_max one step at a time
  w.effector.position = Vec3d(1.44, 0, 1.0);
  const auto edge = w.effector;
  EffectorDelta out;
  out.d_pos = Vec3d(0.5, 0, 0);
  CHECK_THROWS_AS(move_effector(w, out, lim), OutOfEnvelope);
  CHECK(w.effector.position == edge.position);
}

TEST_CASE("localization estimate noise") {
  std::mt19937_64 rng(3);
  const Pose truth = Pose::planar(2.0, -1.0, 0.4);
  const Pose exact = localization_estimate(truth, rng, 0.0, 0.0);
  CHECK(exact.x == truth.x);
  CHECK(exact.y == truth.y);
  CHECK(exact.yaw == truth.yaw);

  // 3 sigma per axis
  const int n = 100000;
  int inside_x = 0, inside_y = 0;
  for (int i = 0; i < n; ++i) {
    const Pose e = localization_estimate(truth, rng, 0.08, deg2rad(1.0));
    inside_x += std::abs(e.x - truth.x) <= 0.24;
    inside_y += std::abs(e.y - truth.y) <= 0.24;
  }
  CHECK(inside_x >= 0.996 * n);
  CHECK(inside_y >= 0.996 * n);

  std::mt19937_64 a(11), b(11);
  for (int i = 0; i < 10; ++i) {
    const Pose pa = localization_estimate(truth, a, 0.05, 0.01);
    const Pose pb = localization_estimate(truth, b, 0.05, 0.01);
    CHECK(pa.x == pb.x);
    CHECK(pa.yaw == pb.yaw);
  }
}

TEST_CASE("localization drift is stationary with the configured sigma") {
  LocalizationDrift zero(0, 0, 30, std::mt19937_64(1));
  zero.step(0.05);
  CHECK(zero.error().norm() == 0.0);

  // sample the process far apart in time so samples decorrelate
  LocalizationDrift d(0.05, deg2rad(1.0), 30, std::mt19937_64(2));
  double sx = 0, sy = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 40; ++k) d.step(1.0);
    sx += d.error().x() * d.error().x();
    sy += d.error().z() * d.error().z();
  }
  CHECK(std::sqrt(sx / n) == doctest::Approx(0.05).epsilon(0.08));
  CHECK(std::sqrt(sy / n) == doctest::Approx(deg2rad(1.0)).epsilon(0.08));
}

TEST_CASE("rng streams") {
  auto a = make_stream(5, "sensor"), b = make_stream(5, "sensor"), c = make_stream(5, "localization");
  const auto x = a(), y = b(), z = c();
  CHECK(x == y);
  CHECK(x != z);
  CHECK(make_stream(6, "sensor")() != x);
}

TEST_CASE("config validation") {
  SimConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.camera_every() == 4);
  c.dt = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.dt = 0.05;
  c.camera_period = 0.13;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("camera runs every fourth tick during vision behaviours") {
  auto sim = load_sim(NoiseConfig::off(), 1);
  std::vector<std::int64_t> at;
  int last = sim.frames();
  while (sim.ticks() < 400) {
    const bool vision = sim.behaviour() == BehaviourKind::LocalApproach;
    const std::int64_t t = sim.ticks();
    sim.tick();
    if (sim.frames() != last) {
      CHECK(t % 4 == 0);
      if (vision && sim.behaviour() == BehaviourKind::LocalApproach) at.push_back(t);
      last = sim.frames();
    }
  }
  REQUIRE(at.size() > 5);
  // gaps only where the behaviour restarted in between
  int consecutive = 0;
  for (size_t i = 1; i < at.size(); ++i) consecutive += at[i] - at[i - 1] == 4;
  CHECK(consecutive >= static_cast<int>(at.size()) - 3);
}

TEST_CASE("clock advances by dt per tick") {
  auto sim = load_sim(NoiseConfig::off(), 1);
  for (int i = 0; i < 123; ++i) sim.tick();
  CHECK(sim.ticks() == 123);
  CHECK(sim.time() == 123 * 0.05);
  CHECK(sim.world().clock == sim.time());
}

TEST_CASE("same seed gives identical traces") {
  auto a = load_sim(NoiseConfig::paper_like(), 4);
  auto b = load_sim(NoiseConfig::paper_like(), 4);
  run_until_loaded(a);
  run_until_loaded(b);
  REQUIRE(a.trace().size() == b.trace().size());
  for (size_t i = 0; i < a.trace().size(); ++i) CHECK(trace_line(a.trace()[i]) == trace_line(b.trace()[i]));
  CHECK(a.world().base.x == b.world().base.x);
  CHECK(a.world().base.yaw == b.world().base.yaw);
  CHECK(a.ticks() == b.ticks());
}

TEST_CASE("suppressed gate holds the base still") {
  // every plan has more switches than allowed and the timeout never fires
  const auto s = experiment::unload_trial(90, 2.5);
  SimConfig cfg = s.sim;
  cfg.max_switches = -1;
  cfg.gate_timeout = 1e9;
  auto mc = s.mission;
  mc.wall_view = Pose::planar(3.0, 3.0, 0.0);  // a goal far from the start
  Simulation sim(s.world, mc, {{mission::TaskKind::Build, world::Color::Red, 0}}, cfg);
  const Pose p0 = sim.world().base;
  // each suppressed tick asks for a new plan; stay below the replan cap
  for (int i = 0; i < 35; ++i) {
    sim.tick();
    CHECK(sim.last_command().v == 0.0);
    CHECK(sim.last_command().omega == 0.0);
  }
  CHECK(sim.behaviour() == BehaviourKind::Nav);
  CHECK(sim.world().base.x == p0.x);
  CHECK(sim.world().base.y == p0.y);
  CHECK(sim.world().base.yaw == p0.yaw);
}

TEST_CASE("noiseless pickup end to end") {
  for (const double rel : {-150.0, -20.0, 75.0}) {
    CAPTURE(rel);
    auto sim = load_sim(NoiseConfig::off(), 2, rel);
    run_until_loaded(sim);
    const auto& m = sim.metrics();
    REQUIRE(m.pickups.size() == 1);
    const auto& p = m.pickups.front();
    CHECK(p.success);
    CHECK(p.grasp_offset <= sim.world().params.grasp_radius);
    CHECK(std::abs(p.grasp_yaw_error) <= sim.world().params.compliance_yaw);
    CHECK(p.perpendicular_error <= deg2rad(26.0));
    CHECK(sim.world().basket.entries.size() == 1);
    CHECK(sim.mission().top == mission::Top::GoToWall);

    // planned motion respects the turning radius and the velocity limits
    const nav::VelocityLimits lim;
    REQUIRE(!sim.nav_log().empty());
    for (const auto& s : sim.nav_log()) {
      CHECK(std::abs(s.omega) * lim.r_min <= std::abs(s.v) + 1e-9);
      CHECK(s.v <= lim.v_max);
      CHECK(s.v >= lim.v_min);
      CHECK(std::abs(s.omega) <= lim.omega_max);
    }
  }
}

TEST_CASE("noiseless drop of a preloaded brick") {
  const auto s = experiment::unload_trial(52.22, 2.5);
  SimConfig cfg = s.sim;
  Simulation sim(s.world, s.mission, {{mission::TaskKind::Build, world::Color::Red, 0}}, cfg);
  CHECK(sim.world().basket.entries.size() == 1);
  const auto& m = sim.run();
  CHECK(m.completed);
  REQUIRE(m.drops.size() == 1);
  CHECK(m.drops[0].success);
  CHECK(m.drops[0].placement.inside_fraction >= 0.5);
  CHECK(std::abs(m.drops[0].placement.yaw_error) <= deg2rad(2.0));
  CHECK(sim.world().basket.entries.empty());
  CHECK(m.mission_time == sim.ticks() * 0.05);
}

TEST_CASE("time limit stops the mission with partial metrics") {
  const auto s = scenario::full_mission();
  SimConfig cfg = s.sim;
  cfg.max_sim_time = 60;
  Simulation sim(s.world, s.mission, scenario::scenario_plan(s), cfg);
  const auto& m = sim.run();
  CHECK_FALSE(m.completed);
  CHECK(m.mission_time == doctest::Approx(60.0));
  CHECK(m.pickups.size() >= 1);
  CHECK(m.bricks_placed == 0);
}

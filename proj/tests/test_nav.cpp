#include "doctest.h"
#include "wallbuild/nav.hpp"
#include "wallbuild/render.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace wb;
using namespace wb::nav;
using geometry::deg2rad;
using geometry::kPi;

namespace {

GridSpec arena(double w = 10, double h = 7.5) {
  GridSpec s;
  s.width = static_cast<int>(std::lround(w / 0.1));
  s.height = static_cast<int>(std::lround(h / 0.1));
  s.resolution = 0.1;
  return s;
}

// distance from a point to an axis-aligned cell square
double dist_to_cell(const Vec2d& p, const OccupancyGrid& g, int i, int j) {
  const Vec2d lo = g.spec.origin + g.resolution() * Vec2d(i, j);
  const Vec2d hi = lo + Vec2d::Constant(g.resolution());
  const Vec2d q = p.cwiseMax(lo).cwiseMin(hi);
  return (p - q).norm();
}

double min_dist_to_occupied(const Vec2d& p, const OccupancyGrid& g) {
  double best = 1e9;
  for (int j = 0; j < g.height(); ++j)
    for (int i = 0; i < g.width(); ++i)
      if (g.at(i, j) == Cell::Occupied) best = std::min(best, dist_to_cell(p, g, i, j));
  return best;
}

// endpoint of a plan by independent Euler integration at tiny steps
Pose euler_rollout(const MotionPlan& plan) {
  double x = plan.start.x, y = plan.start.y, yaw = plan.start.yaw;
  for (const auto& s : plan.segments) {
    const int n = std::max(1, static_cast<int>(s.duration / 1e-4));
    const double h = s.duration / n;
    for (int k = 0; k < n; ++k) {
      // midpoint rule
      const double ym = yaw + 0.5 * s.omega * h;
      x += s.v * h * std::cos(ym);
      y += s.v * h * std::sin(ym);
      yaw += s.omega * h;
    }
  }
  return Pose::planar(x, y, yaw);
}

}  // namespace

TEST_CASE("costmap height band") {
  const GridSpec s = arena();
  const auto g = build_costmap({{1.05, 1.05, 0.05}, {2.05, 2.05, 0.5}, {3.05, 3.05, 1.2}}, 0.1, 1.0, s);
  CHECK(g.at(10, 10) == Cell::Free);
  CHECK(g.at(20, 20) == Cell::Occupied);
  CHECK(g.at(30, 30) == Cell::Free);
  CHECK(g.count(Cell::Occupied) == 1);
  CHECK_THROWS_AS(build_costmap({}, 1.0, 0.5, s), Error);
}

TEST_CASE("costmap is monotone in its points") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> x(-1, 11), y(-1, 8.5), z(-0.2, 1.5);
  const GridSpec s = arena();
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3d> pts;
    for (int i = 0; i < 200; ++i) pts.emplace_back(x(rng), y(rng), z(rng));
    const auto a = build_costmap(pts, 0.15, 1.0, s);
    for (int i = 0; i < 200; ++i) pts.emplace_back(x(rng), y(rng), z(rng));
    const auto b = build_costmap(pts, 0.15, 1.0, s);
    for (size_t k = 0; k < a.cells.size(); ++k) {
      if (a.cells[k] == Cell::Occupied) REQUIRE(b.cells[k] == Cell::Occupied);
    }
  }
}

TEST_CASE("clearance matches brute force") {
  std::mt19937_64 rng(2);
  GridSpec s = arena(4, 3);
  OccupancyGrid g(s);
  std::uniform_int_distribution<int> ci(0, s.width - 1), cj(0, s.height - 1);
  for (int k = 0; k < 15; ++k) g.at(ci(rng), cj(rng)) = Cell::Occupied;
  const auto c = compute_clearance(g, 1.5);
  for (int j = 0; j < g.height(); ++j) {
    for (int i = 0; i < g.width(); ++i) {
      double best = 1.5;
      for (int jj = 0; jj < g.height(); ++jj)
        for (int ii = 0; ii < g.width(); ++ii)
          if (g.at(ii, jj) == Cell::Occupied) best = std::min(best, (g.center(i, j) - g.center(ii, jj)).norm());
      REQUIRE(c.at(i, j) == doctest::Approx(best).epsilon(1e-6));
    }
  }
}

TEST_CASE("arc integration") {
  const Pose p = Pose::planar(1, 2, 0.3);
  const Pose q = arc_pose(p, 0, 0, 1.0);
  CHECK(q.x == p.x);
  CHECK(q.y == p.y);
  const Pose s = arc_pose(Pose::planar(0, 0, 0), 1, 0, 2.0);
  CHECK(s.x == doctest::Approx(2.0));
  const Pose h = arc_pose(Pose::planar(0, 0, 0), 1, 1, kPi<double>);
  CHECK(h.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(h.y == doctest::Approx(2.0));
  CHECK(std::abs(h.yaw) == doctest::Approx(kPi<double>));
}

TEST_CASE("dubins paths land on the goal with bounded curvature") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> xy(-5, 5), th(-kPi<double>, kPi<double>);
  const VelocityLimits lim;
  for (int k = 0; k < 300; ++k) {
    const Pose a = Pose::planar(xy(rng), xy(rng), th(rng));
    const Pose b = Pose::planar(xy(rng), xy(rng), th(rng));
    const auto segs = dubins_path(a, b, 0.5, lim);
    MotionPlan plan{a, b, segs};
    const Pose e = euler_rollout(plan);
    CHECK(std::hypot(e.x - b.x, e.y - b.y) < 1e-4);
    CHECK(std::abs(geometry::wrap_angle(e.yaw - b.yaw)) < 1e-4);
    CHECK(plan.switch_count() == 0);
    CHECK(plan.length() >= std::hypot(a.x - b.x, a.y - b.y) - 1e-9);
    // never longer than turning in place-ish around both circles plus the chord
    CHECK(plan.length() <= std::hypot(a.x - b.x, a.y - b.y) + 4 * kPi<double> * 0.5 + 1e-9);
    for (const auto& s : segs) {
      CHECK(s.v > 0);
      if (s.omega != 0) CHECK(std::abs(s.v / s.omega) >= 0.5 - 1e-12);
      CHECK(std::abs(s.omega) <= lim.omega_max + 1e-12);
    }
  }
}

TEST_CASE("plan on an empty grid goes straight") {
  const OccupancyGrid g(arena());
  const auto plan = plan_path(g, Pose::planar(2, 3, 0), Pose::planar(5, 3, 0));
  REQUIRE(plan.segments.size() == 1);
  CHECK(plan.segments[0].omega == 0);
  CHECK(plan.segments[0].v > 0);
  CHECK(plan.length() == doctest::Approx(3.0));
}

TEST_CASE("plan around a wall clears every occupied cell") {
  OccupancyGrid g(arena());
  // wall from y=1.5 to y=6 at x=5
  for (int j = 15; j < 60; ++j) g.at(50, j) = Cell::Occupied;
  const PlannerParams pp;
  const VelocityLimits lim;
  for (double goal_yaw : {0.0, kPi<double> / 2, kPi<double>}) {
    const auto plan = plan_path(g, Pose::planar(2, 4, 0), Pose::planar(8, 4, goal_yaw), lim, pp);
    const auto poses = sample_plan(plan, 0.05);
    for (const auto& q : poses) {
      // clearance is measured between cell centers, so allow half a cell diagonal
      REQUIRE(min_dist_to_occupied(q.xy(), g) >= pp.robot_radius - 0.0708);
    }
    const Pose e = euler_rollout(plan);
    CHECK(goal_reached(e, plan.goal, pp.xy_tol, pp.yaw_tol));
    for (const auto& s : plan.segments) {
      CHECK(s.v != 0);
      if (s.omega != 0) CHECK(std::abs(s.v / s.omega) >= lim.r_min - 1e-12);
    }
  }
}

TEST_CASE("goal inside an inflated obstacle has no path") {
  OccupancyGrid g(arena());
  g.at(50, 40) = Cell::Occupied;
  CHECK_THROWS_AS(plan_path(g, Pose::planar(2, 4, 0), Pose::planar(5.3, 4.05, 0)), NoPath);
  // enclosed goal
  OccupancyGrid box(arena());
  for (int k = 30; k <= 70; ++k) box.at(k, 15) = box.at(k, 60) = Cell::Occupied;
  for (int k = 15; k <= 60; ++k) box.at(30, k) = box.at(70, k) = Cell::Occupied;
  PlannerParams pp;
  pp.max_expansions = 20000;
  CHECK_THROWS_AS(plan_path(box, Pose::planar(1, 1, 0), Pose::planar(5, 3.8, 0), {}, pp), NoPath);
}

TEST_CASE("planning from inside the inflation band backs out") {
  OccupancyGrid g(arena());
  for (int j = 30; j < 45; ++j) g.at(50, j) = Cell::Occupied;
  // robot parked 0.3 m in front of the obstacle, facing it
  const auto plan = plan_path(g, Pose::planar(4.7, 3.7, 0), Pose::planar(2, 3.7, kPi<double>));
  CHECK_FALSE(plan.empty());
  const Pose e = euler_rollout(plan);
  CHECK(goal_reached(e, plan.goal, 0.1, deg2rad(5.0)));
}

TEST_CASE("clamp_velocity") {
  VelocityLimits lim;
  auto t = clamp_velocity(2, 1, lim);
  CHECK(t.v == doctest::Approx(1.0));
  CHECK(t.omega == doctest::Approx(0.5));
  lim.omega_max = 2;
  t = clamp_velocity(0.5, 4, lim);
  CHECK(t.v == doctest::Approx(0.25));
  CHECK(t.omega == doctest::Approx(2.0));
  t = clamp_velocity(0.5, 0.5, lim);
  CHECK(t.v == 0.5);
  CHECK(t.omega == 0.5);
  t = clamp_velocity(0, 0, lim);
  CHECK(t.v == 0);
  CHECK(t.omega == 0);
  t = clamp_velocity(-0.6, 0.3, lim);
  CHECK(t.v == doctest::Approx(-0.3));
  CHECK(t.omega == doctest::Approx(0.15));
}

TEST_CASE("clamp_velocity keeps the radius, respects limits, is idempotent") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5, 5);
  const VelocityLimits lim;
  for (int k = 0; k < 100000; ++k) {
    const double v = u(rng), w = u(rng);
    const auto t = clamp_velocity(v, w, lim);
    REQUIRE(std::abs(t.v * w - t.omega * v) <= 1e-9 * std::abs(v * w));
    REQUIRE(t.v <= lim.v_max);
    REQUIRE(t.v >= lim.v_min);
    REQUIRE(std::abs(t.omega) <= lim.omega_max);
    REQUIRE(std::abs(t.v) <= std::abs(v));
    REQUIRE(std::abs(t.omega) <= std::abs(w));
    const auto t2 = clamp_velocity(t.v, t.omega, lim);
    REQUIRE(t2.v == t.v);
    REQUIRE(t2.omega == t.omega);
  }
}

namespace {

MotionPlan plan_with_switches(int n) {
  MotionPlan p;
  double v = 0.5;
  for (int k = 0; k <= n; ++k) {
    p.segments.push_back({v, 0.1, 1.0});
    v = -v;
  }
  return p;
}

}  // namespace

TEST_CASE("gate") {
  GateState gate;
  auto out = gate_plan(plan_with_switches(5), gate, 0.05);
  CHECK(out.suppressed);
  CHECK(out.cmd.v == 0);
  CHECK(out.cmd.omega == 0);
  out = gate_plan(plan_with_switches(1), gate, 0.05);
  CHECK_FALSE(out.suppressed);
  CHECK(out.cmd.v == 0.5);
  gate.elapsed = gate.timeout;
  out = gate_plan(plan_with_switches(5), gate, 0.05);
  CHECK_FALSE(out.suppressed);
  CHECK(out.cmd.v == 0.5);
}

TEST_CASE("gate never releases an over-budget plan before the timeout") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> sw(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    GateState gate;
    const double dt = 0.05;
    double t = 0;
    for (int k = 0; k < 150; ++k) {
      const auto plan = plan_with_switches(sw(rng));
      const auto out = gate_plan(plan, gate, dt);
      if (plan.switch_count() > gate.max_switches && t < gate.timeout - 1e-9) {
        REQUIRE(out.suppressed);
      }
      if (plan.switch_count() <= gate.max_switches) REQUIRE_FALSE(out.suppressed);
      if (out.suppressed) t += dt;
    }
  }
}

TEST_CASE("goal_reached") {
  const Pose g = Pose::planar(1, 1, 0.2);
  CHECK(goal_reached(g, g, 0.1, deg2rad(10.0)));
  CHECK(goal_reached(Pose::planar(1.09, 1, 0.2), g, 0.1, deg2rad(10.0)));
  CHECK_FALSE(goal_reached(Pose::planar(1, 1, 0.2 + deg2rad(20.0)), g, 0.1, deg2rad(10.0)));
}

TEST_CASE("grid and plan dumps") {
  const auto dir = std::filesystem::temp_directory_path() / "wb_nav_test";
  std::filesystem::create_directories(dir);
  OccupancyGrid g(arena(1, 0.5));
  g.at(0, 0) = Cell::Occupied;
  g.at(1, 0) = Cell::Unknown;
  write_grid_pgm(g, (dir / "g.pgm").string());
  std::ifstream is(dir / "g.pgm", std::ios::binary);
  std::string magic;
  int w, h, maxv;
  is >> magic >> w >> h >> maxv;
  is.get();
  std::vector<unsigned char> px(static_cast<size_t>(w) * h);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  CHECK(magic == "P5");
  CHECK(w == 10);
  CHECK(h == 5);
  // bottom-left cell is the last row of the image
  CHECK(px[static_cast<size_t>(4) * w + 0] == 0);
  CHECK(px[static_cast<size_t>(4) * w + 1] == 128);
  CHECK(px[0] == 255);
  CHECK_THROWS_AS(write_grid_pgm(g, "/nonexistent/dir/g.pgm"), IoError);
  write_plan_csv(plan_with_switches(2), (dir / "p.csv").string());
  std::ifstream cs(dir / "p.csv");
  std::string line;
  int lines = 0;
  while (std::getline(cs, line)) ++lines;
  CHECK(lines == 4);
}

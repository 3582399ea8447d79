// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include "oracles.hpp"
#include "test_util.hpp"
#include "wallbuild/experiment.hpp"
#include "wallbuild/nav.hpp"
#include "wallbuild/vision.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace wb;
using geometry::deg2rad;
using geometry::kPi;
using geometry::Vec2d;
using geometry::Vec3d;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// 1
Outcome full_mission() {
  const auto r = experiment::run_scenario(scenario::full_mission(), {});
  const auto& m = r.metrics;
  int inside = 0;
  for (const auto& d : m.drops) inside += d.failure.empty() && d.placement.inside_fraction >= 0.5;
  const bool ok = m.completed && m.bricks_placed == 6 && inside == 6 && m.mission_time <= 25 * 60 &&
                  r.wall_seconds <= 60;
  return {ok, fmt("%g bricks placed, %g inside, mission %.1f s, wall %.1f s", m.bricks_placed, inside,
                  m.mission_time, r.wall_seconds)};
}

// 2
Outcome load_noiseless() {
  const auto rep = experiment::experiment_load(7, 1, "off");
  const auto a = rep.aggregates();
  bool every_perp = true;
  for (const auto& r : rep.runs) every_perp = every_perp && r.perpendicular_error_deg && *r.perpendicular_error_deg <= 26.0;
  const bool ok = a.successes == 7 && a.distance_mae <= 0.03 && a.orientation_mae_deg <= 2.0 && every_perp;
  return {ok, fmt("%g/7 picked, distance MAE %.4f m, orientation MAE %.3f deg, worst perpendicular %.2f deg",
                  a.successes, a.distance_mae, a.orientation_mae_deg, a.max_perpendicular_error_deg)};
}

// 3
Outcome load_noisy() {
  const auto rep = experiment::experiment_load(50, 1, "paper-like");
  const auto a = rep.aggregates();
  const bool ok = a.success_rate >= 0.95 && a.distance_mae >= 0 && a.distance_mae <= 0.30 &&
                  a.orientation_mae_deg >= 0 && a.orientation_mae_deg <= 12.0;
  return {ok, fmt("%g/50 picked, distance MAE %.3f m, orientation MAE %.2f deg", a.successes, a.distance_mae,
                  a.orientation_mae_deg)};
}

// 4
Outcome unload() {
  const auto clean = experiment::experiment_unload(10, 1, "off");
  bool inside = true;
  for (const auto& r : clean.runs) inside = inside && r.inside_fraction && *r.inside_fraction >= 0.5;
  const auto noisy = experiment::experiment_unload(50, 1, "paper-like");
  const auto c = clean.aggregates(), n = noisy.aggregates();
  const bool ok = c.successes == 10 && inside && n.orientation_mae_deg >= 0 && n.orientation_mae_deg <= 10.0;
  return {ok, fmt("noiseless %g/10 placed, noisy orientation MAE %.2f deg (%g/50 placed)", c.successes,
                  n.orientation_mae_deg, n.successes)};
}

// 5
Outcome clamp() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5);
  const int n = 1000000;
  std::vector<double> v(n), w(n);
  for (int i = 0; i < n; ++i) {
    v[i] = u(rng);
    w[i] = u(rng);
  }
  const nav::VelocityLimits lim;
  std::vector<nav::Twist> out(n);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) out[i] = nav::clamp_velocity(v[i], w[i], lim);
  const double secs = seconds_since(t0);
  double worst = 0;
  bool limits = true;
  for (int i = 0; i < n; ++i) {
    const double scale = std::max(std::abs(v[i] * w[i]), 1e-300);
    worst = std::max(worst, std::abs(out[i].v * w[i] - out[i].omega * v[i]) / scale);
    limits = limits && out[i].v <= lim.v_max && out[i].v >= lim.v_min && std::abs(out[i].omega) <= lim.omega_max;
  }
  return {worst <= 1e-9 && limits && secs <= 1.0,
          fmt("worst ratio residual %.2e, %.3f s for 1e6 pairs", worst, secs) +
              (limits ? ", limits respected" : ", limit violated")};
}

// 6
Outcome oracles() {
  using namespace vision;
  std::mt19937_64 rng(6);
  int hull_bad = 0, rect_bad = 0, cc_bad = 0;
  double worst_rect = 0;
  std::uniform_int_distribution<int> npts(3, 60), c(-25, 25);
  for (int t = 0; t < 1000; ++t) {
    std::vector<Vec2d> pts(static_cast<size_t>(npts(rng)));
    for (auto& p : pts) p = Vec2d(c(rng), c(rng));
    auto got = convex_hull(pts);
    const auto lex = [](const Vec2d& a, const Vec2d& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); };
    std::sort(got.begin(), got.end(), lex);
    hull_bad += got != oracle::hull_vertices(pts);
  }
  std::uniform_real_distribution<double> r(-10, 10), squash(0.05, 1.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<Vec2d> pts(static_cast<size_t>(npts(rng)));
    const double s = squash(rng);
    for (auto& p : pts) p = Vec2d(r(rng), r(rng) * s);
    const auto hull = convex_hull(pts);
    if (hull.size() < 3) continue;
    const double ref = oracle::min_rect_area_sweep(hull);
    const double rel = std::abs(min_area_rect(hull).area() - ref) / ref;
    worst_rect = std::max(worst_rect, rel);
    rect_bad += rel > 1e-6;
  }
  std::uniform_real_distribution<double> density(0.2, 0.7);
  for (int t = 0; t < 500; ++t) {
    std::bernoulli_distribution bit(density(rng));
    Mask m(48 + t % 17, 64 + t % 13);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bit(rng);
    cc_bad += !oracle::same_partition(m, connected_components(m));
  }
  return {hull_bad == 0 && rect_bad == 0 && cc_bad == 0,
          fmt("hull mismatches %g/1000, rect mismatches %g/1000 (worst rel %.1e), component mismatches %g/500",
              hull_bad, rect_bad, worst_rect, cc_bad)};
}

// 7: project the true patch axis endpoints, snap them to pixel centers,
// back-project and compare
Outcome pose_roundtrip() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  const double half = 0.075;
  double sum1 = 0, sum2 = 0, worst_gsd = 0;
  int done = 0;
  while (done < 100) {
    const auto c2b = testutil::look_camera({0, 0, 0.9 + 0.5 * u(rng)}, (u(rng) - 0.5) * 1.0, 0.7 + 0.85 * u(rng));
    const double h = u(rng) < 0.5 ? 0.2 : 0.4;
    const vision::Intrinsics k1, k2 = k1.scaled(2.0);
    // random pixel in the central image, onto the brick top plane
    const geometry::ImagePoint<double> aim{(u(rng) - 0.5) * 0.6 * k1.width, (u(rng) - 0.5) * 0.6 * k1.height};
    const auto hit = vision::pixel_to_plane(aim, {c2b, k1}, h);
    const Vec3d center(hit.xy.x(), hit.xy.y(), h);
    const double range = (center - c2b.translation()).norm();
    if (range < 0.8 || range > 2.0) continue;
    const double yaw = (u(rng) - 0.5) * kPi<double>;
    const Vec3d ax(std::cos(yaw), std::sin(yaw), 0);
    const Vec3d e1 = center - half * ax, e2 = center + half * ax;

    double err[2];
    bool visible = true;
    int i = 0;
    for (const auto* k : {&k1, &k2}) {
      Vec2d q[2];
      int j = 0;
      for (const Vec3d& e : {e1, e2}) {
        geometry::ImagePoint<double> px;
        if (!geometry::project_point<double>(c2b.inverse() * e, *k, px)) visible = false;
        const int pu = static_cast<int>(std::floor(px.x_px + k->cx));
        const int pv = static_cast<int>(std::floor(px.y_px + k->cy));
        if (pu < 0 || pv < 0 || pu >= k->width || pv >= k->height) visible = false;
        const auto c = geometry::pixel_center(pu, pv, *k);
        q[j++] = Vec2d(c.x_px, c.y_px);
      }
      if (!visible) break;
      const auto est = vision::pose_from_image_endpoints(q[0], q[1], {c2b, *k}, h);
      err[i] = (est.center.head<2>() - center.head<2>()).norm();
      if (i == 0) worst_gsd = std::max(worst_gsd, err[0] / (range / k->focal_px));
      ++i;
    }
    if (!visible) continue;
    sum1 += err[0];
    sum2 += err[1];
    ++done;
  }
  const double ratio = sum2 / sum1;
  const bool ok = worst_gsd <= 2.0 && ratio >= 0.5 * 0.7 && ratio <= 0.5 * 1.3;
  return {ok, fmt("worst error %.2f GSD, mean error %.2f mm -> %.2f mm at double resolution (ratio %.2f)", worst_gsd,
                  sum1 / done * 1000, sum2 / done * 1000, ratio)};
}

// 8
int switches_over(double gap) {
  const vision::ScoringWeights w{0, 1, 0, 0.1, true};
  const auto cand = [](double x, double y) {
    vision::PatchCandidate c;
    c.position = {x, y};
    c.area = 1;
    return c;
  };
  vision::TrackerState tr;
  vision::track_and_select(tr, {cand(0, 50)}, w);
  for (int f = 0; f < 1000; ++f) vision::track_and_select(tr, {cand(0, 50), cand(100, 50 + gap)}, w);
  return tr.switches;
}

Outcome hysteresis() {
  // margin is 10% of the incumbent's score of 50
  const int below = switches_over(4.0), above = switches_over(6.0);
  return {below == 0 && above == 1, fmt("gap 4 < 5: %g switches, gap 6 > 5: %g switches", below, above)};
}

// 9
nav::MotionPlan plan_with_switches(int n) {
  nav::MotionPlan p;
  double v = 0.5;
  for (int k = 0; k <= n; ++k) {
    p.segments.push_back({v, 0.1, 1.0});
    v = -v;
  }
  return p;
}

Outcome gate() {
  // dt is a power of two so the elapsed time sums exactly
  const double dt = 0.0625;
  std::vector<std::string> got, want;
  const auto step = [&](nav::GateState& g, int sw) {
    const auto o = nav::gate_plan(plan_with_switches(sw), g, dt);
    got.push_back(fmt("%g %g %g", o.cmd.v, o.cmd.omega, o.suppressed));
  };
  nav::GateState g;
  for (int i = 0; i < 10; ++i) step(g, 5);
  for (int i = 0; i < 10; ++i) step(g, 4);
  for (int i = 0; i < 10; ++i) step(g, 1);
  for (int i = 0; i < 20; ++i) want.push_back("0 0 1");
  for (int i = 0; i < 10; ++i) want.push_back("0.5 0.1 0");
  const bool first = got == want;

  got.clear();
  want.clear();
  nav::GateState t;
  for (int i = 0; i < 90; ++i) step(t, 5);
  for (int i = 0; i < 80; ++i) want.push_back("0 0 1");  // 80 * 0.0625 = 5 s
  for (int i = 0; i < 10; ++i) want.push_back("0.5 0.1 0");
  const bool second = got == want;
  return {first && second, std::string("5->4->1 trace ") + (first ? "matches" : "differs") +
                               ", timeout trace " + (second ? "matches" : "differs")};
}

// 10
Outcome determinism() {
  const auto base = fs::temp_directory_path() / "wallbuild_acceptance";
  fs::remove_all(base);
  const auto s = scenario::full_mission();
  experiment::write_run(experiment::run_scenario(s, {}), base / "a");
  experiment::write_run(experiment::run_scenario(s, {}), base / "b");
  const std::string a = slurp(base / "a" / "trace.jsonl"), b = slurp(base / "b" / "trace.jsonl");
  const bool ok = !a.empty() && a == b;
  return {ok, fmt("trace.jsonl %g bytes, ", static_cast<double>(a.size())) + (ok ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"full mission", full_mission},
      {"loading experiment, noiseless", load_noiseless},
      {"loading experiment, paper-like noise", load_noisy},
      {"unloading experiment", unload},
      {"clamp_velocity", clamp},
      {"oracle equivalence", oracles},
      {"pose roundtrip", pose_roundtrip},
      {"hysteresis", hysteresis},
      {"gate", gate},
      {"determinism", determinism},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

#include "wallbuild/nav.hpp"

#include "wallbuild/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <unordered_map>

namespace wb::nav {

using geometry::kPi;
using geometry::wrap_angle;

OccupancyGrid::OccupancyGrid(const GridSpec& s, Cell fill) : spec(s) {
  if (!(s.resolution > 0) || s.width <= 0 || s.height <= 0) throw Error("bad grid spec");
  cells.assign(static_cast<size_t>(s.width) * s.height, fill);
}

Eigen::Vector2i OccupancyGrid::index(const Vec2d& p) const {
  const Vec2d q = (p - spec.origin) / spec.resolution;
  return {static_cast<int>(std::floor(q.x())), static_cast<int>(std::floor(q.y()))};
}

bool OccupancyGrid::contains(const Vec2d& p) const {
  const auto ij = index(p);
  return in_bounds(ij.x(), ij.y());
}

Vec2d OccupancyGrid::center(int i, int j) const {
  return spec.origin + spec.resolution * Vec2d(i + 0.5, j + 0.5);
}

int OccupancyGrid::count(Cell c) const {
  return static_cast<int>(std::count(cells.begin(), cells.end(), c));
}

OccupancyGrid build_costmap(const std::vector<Vec3d>& points, double z_low, double z_high,
                            const GridSpec& spec) {
  if (!(z_low < z_high)) throw Error("build_costmap needs z_low < z_high");
  OccupancyGrid g(spec);
  for (const auto& p : points) {
    if (p.z() < z_low || p.z() > z_high) continue;
    const auto ij = g.index(p.head<2>());
    if (g.in_bounds(ij.x(), ij.y())) g.at(ij.x(), ij.y()) = Cell::Occupied;
  }
  return g;
}

double Clearance::at(const Vec2d& p) const {
  const Vec2d q = (p - spec.origin) / spec.resolution;
  const int i = static_cast<int>(std::floor(q.x())), j = static_cast<int>(std::floor(q.y()));
  if (i < 0 || j < 0 || i >= spec.width || j >= spec.height) return 0.0;
  return at(i, j);
}

Clearance compute_clearance(const OccupancyGrid& g, double cap) {
  Clearance c{g.spec, std::vector<float>(g.cells.size(), static_cast<float>(cap))};
  const int r = static_cast<int>(std::ceil(cap / g.resolution()));
  for (int j = 0; j < g.height(); ++j) {
    for (int i = 0; i < g.width(); ++i) {
      if (g.at(i, j) != Cell::Occupied) continue;
      for (int dj = -r; dj <= r; ++dj) {
        for (int di = -r; di <= r; ++di) {
          const int x = i + di, y = j + dj;
          if (!g.in_bounds(x, y)) continue;
          const float d = static_cast<float>(std::hypot(di, dj) * g.resolution());
          float& slot = c.dist[static_cast<size_t>(y) * g.width() + x];
          slot = std::min(slot, d);
        }
      }
    }
  }
  return c;
}

int MotionPlan::switch_count() const {
  int n = 0;
  int last = 0;
  for (const auto& s : segments) {
    const int sign = (s.v > 0) - (s.v < 0);
    if (sign == 0) continue;
    if (last != 0 && sign != last) ++n;
    last = sign;
  }
  return n;
}

double MotionPlan::duration() const {
  double t = 0;
  for (const auto& s : segments) t += s.duration;
  return t;
}

double MotionPlan::length() const {
  double l = 0;
  for (const auto& s : segments) l += std::abs(s.v) * s.duration;
  return l;
}

Pose arc_pose(const Pose& p, double v, double omega, double t) {
  Pose q = p;
  if (std::abs(omega) < 1e-12) {
    q.x += v * t * std::cos(p.yaw);
    q.y += v * t * std::sin(p.yaw);
    return q;
  }
  const double r = v / omega;
  const double yaw1 = p.yaw + omega * t;
  q.x += r * (std::sin(yaw1) - std::sin(p.yaw));
  q.y -= r * (std::cos(yaw1) - std::cos(p.yaw));
  q.yaw = wrap_angle(yaw1);
  return q;
}

std::vector<Pose> sample_plan(const MotionPlan& plan, double ds) {
  std::vector<Pose> out{plan.start};
  Pose p = plan.start;
  for (const auto& s : plan.segments) {
    const double len = std::abs(s.v) * s.duration;
    const int n = std::max(1, static_cast<int>(std::ceil(len / ds)));
    for (int k = 1; k <= n; ++k) out.push_back(arc_pose(p, s.v, s.omega, s.duration * k / n));
    p = out.back();
  }
  return out;
}

namespace {

double mod2pi(double a) {
  a = std::fmod(a, 2 * kPi<double>);
  if (a < 0) a += 2 * kPi<double>;
  // a full turn is round-off of an empty arc
  return a > 2 * kPi<double> - 1e-9 ? 0.0 : a;
}

// Speed for a primitive of curvature kappa (= omega / v) driven in `dir`.
Segment make_segment(int dir, double kappa, double length, const VelocityLimits& lim) {
  double speed = dir > 0 ? lim.v_max : -lim.v_min;
  if (std::abs(kappa) > 1e-12) speed = std::min(speed, lim.omega_max / std::abs(kappa));
  const double v = dir * speed;
  return {v, v * kappa, length / speed};
}

void append_merged(std::vector<Segment>& out, const Segment& s) {
  if (s.duration <= 1e-12) return;
  if (!out.empty() && out.back().v == s.v && out.back().omega == s.omega) {
    out.back().duration += s.duration;
  } else {
    out.push_back(s);
  }
}

}  // namespace

std::vector<Segment> dubins_path(const Pose& start, const Pose& goal, double radius,
                                 const VelocityLimits& lim) {
  if (!(radius > 0)) throw Error("dubins_path needs a positive radius");
  const double dx = goal.x - start.x, dy = goal.y - start.y;
  const double d = std::hypot(dx, dy) / radius;
  const double phi = std::atan2(dy, dx);
  const double a = mod2pi(start.yaw - phi), b = mod2pi(goal.yaw - phi);
  const double sa = std::sin(a), sb = std::sin(b), ca = std::cos(a), cb = std::cos(b);
  const double cab = std::cos(a - b);

  // words as (turn types, normalized lengths); +1 left, -1 right, 0 straight
  struct Word {
    std::array<int, 3> turn;
    std::array<double, 3> len;
  };
  std::vector<Word> words;
  {
    const double p2 = 2 + d * d - 2 * cab + 2 * d * (sa - sb);
    if (p2 >= 0) {
      const double tmp = std::atan2(cb - ca, d + sa - sb);
      words.push_back({{1, 0, 1}, {mod2pi(-a + tmp), std::sqrt(p2), mod2pi(b - tmp)}});
    }
  }
  {
    const double p2 = 2 + d * d - 2 * cab + 2 * d * (sb - sa);
    if (p2 >= 0) {
      const double tmp = std::atan2(ca - cb, d - sa + sb);
      words.push_back({{-1, 0, -1}, {mod2pi(a - tmp), std::sqrt(p2), mod2pi(-b + tmp)}});
    }
  }
  {
    const double p2 = -2 + d * d + 2 * cab + 2 * d * (sa + sb);
    if (p2 >= 0) {
      const double p = std::sqrt(p2);
      const double tmp = std::atan2(-ca - cb, d + sa + sb) - std::atan2(-2.0, p);
      words.push_back({{1, 0, -1}, {mod2pi(-a + tmp), p, mod2pi(-b + tmp)}});
    }
  }
  {
    const double p2 = d * d - 2 + 2 * cab - 2 * d * (sa + sb);
    if (p2 >= 0) {
      const double p = std::sqrt(p2);
      const double tmp = std::atan2(ca + cb, d - sa - sb) - std::atan2(2.0, p);
      words.push_back({{-1, 0, 1}, {mod2pi(a - tmp), p, mod2pi(b - tmp)}});
    }
  }
  {
    const double tmp = (6 - d * d + 2 * cab + 2 * d * (sa - sb)) / 8;
    if (std::abs(tmp) <= 1) {
      const double p = mod2pi(2 * kPi<double> - std::acos(tmp));
      const double t = mod2pi(a - std::atan2(ca - cb, d - sa + sb) + p / 2);
      words.push_back({{-1, 1, -1}, {t, p, mod2pi(a - b - t + p)}});
    }
  }
  {
    const double tmp = (6 - d * d + 2 * cab + 2 * d * (sb - sa)) / 8;
    if (std::abs(tmp) <= 1) {
      const double p = mod2pi(2 * kPi<double> - std::acos(tmp));
      const double t = mod2pi(-a - std::atan2(ca - cb, d + sa - sb) + p / 2);
      words.push_back({{1, -1, 1}, {t, p, mod2pi(b - a - t + p)}});
    }
  }

  // keep the shortest word whose integrated endpoint actually lands on the goal
  std::vector<Segment> best;
  double best_len = std::numeric_limits<double>::infinity();
  for (const auto& w : words) {
    const double total = (w.len[0] + w.len[1] + w.len[2]) * radius;
    if (total >= best_len) continue;
    std::vector<Segment> segs;
    for (int k = 0; k < 3; ++k) {
      append_merged(segs, make_segment(1, w.turn[k] / radius, w.len[k] * radius, lim));
    }
    Pose p = start;
    for (const auto& s : segs) p = arc_pose(p, s.v, s.omega, s.duration);
    if (std::hypot(p.x - goal.x, p.y - goal.y) > 1e-6 ||
        std::abs(wrap_angle(p.yaw - goal.yaw)) > 1e-6)
      continue;
    best = std::move(segs);
    best_len = total;
  }
  if (!std::isfinite(best_len)) throw NoPath("no Dubins word connects the poses");
  return best;
}

namespace {

struct Node {
  Pose pose;
  double g{0};
  int parent{-1};
  int dir{0};
  double kappa{0};
};

class Planner {
 public:
  Planner(const Clearance& c, const Pose& start, const VelocityLimits& lim, const PlannerParams& p)
      : c_(c), lim_(lim), p_(p), start_clear_(c.at(start.xy())) {}

  bool free(const Pose& q) const {
    const double cl = c_.at(q.xy());
    return cl >= p_.robot_radius || (cl > 0.05 && cl >= start_clear_ - 1e-9);
  }

  bool free_arc(const Pose& from, double v, double omega, double t) const {
    const double len = std::abs(v) * t;
    const int n = std::max(1, static_cast<int>(std::ceil(len / 0.05)));
    for (int k = 1; k <= n; ++k) {
      if (!free(arc_pose(from, v, omega, t * k / n))) return false;
    }
    return true;
  }

  bool free_segments(Pose from, const std::vector<Segment>& segs) const {
    for (const auto& s : segs) {
      if (!free_arc(from, s.v, s.omega, s.duration)) return false;
      from = arc_pose(from, s.v, s.omega, s.duration);
    }
    return true;
  }

  const Clearance& c_;
  VelocityLimits lim_;
  PlannerParams p_;
  double start_clear_;
};

}  // namespace

MotionPlan plan_path(const Clearance& clearance, const Pose& start, const Pose& goal,
                     const VelocityLimits& lim, const PlannerParams& p) {
  if (!(lim.r_min >= 0) || !(lim.omega_max > 0) || lim.v_min > 0 || lim.v_max <= 0)
    throw Error("invalid velocity limits");
  MotionPlan plan;
  plan.start = start;
  plan.goal = goal;
  if (clearance.at(start.xy()) <= 0.0) throw NoPath("start outside the map");
  if (clearance.at(goal.xy()) < p.robot_radius) throw NoPath("goal inside an inflated obstacle");
  if (goal_reached(start, goal, p.xy_tol, p.yaw_tol)) return plan;

  Planner pl(clearance, start, lim, p);
  const double r_turn = std::max(lim.r_min, 1e-3);
  // the tightest arcs allowed, plus a gentler one each way
  const std::array<double, 5> kappas{0.0, 1.0 / r_turn, -1.0 / r_turn, 0.5 / r_turn, -0.5 / r_turn};

  std::vector<Node> nodes;
  nodes.push_back({start, 0.0, -1, 0, 0.0});
  const auto key = [&](const Pose& q) {
    const auto bx = static_cast<std::int64_t>(std::floor((q.x - clearance.spec.origin.x()) / p.bin_xy));
    const auto by = static_cast<std::int64_t>(std::floor((q.y - clearance.spec.origin.y()) / p.bin_xy));
    const auto bt = static_cast<std::int64_t>(
        std::floor(geometry::wrap_angle(q.yaw) / (2 * kPi<double>) * p.yaw_bins + p.yaw_bins)) %
        p.yaw_bins;
    return (bx * 100003 + by) * 512 + bt;
  };
  const auto h = [&](const Pose& q) { return std::hypot(goal.x - q.x, goal.y - q.y); };

  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::unordered_map<std::int64_t, double> best_g;
  open.push({p.heuristic_weight * h(start), 0});
  best_g[key(start)] = 0.0;

  const auto finish = [&](int idx, std::vector<Segment> tail) {
    std::vector<int> chain;
    for (int i = idx; i > 0; i = nodes[i].parent) chain.push_back(i);
    std::reverse(chain.begin(), chain.end());
    for (int i : chain) append_merged(plan.segments, make_segment(nodes[i].dir, nodes[i].kappa, p.step, lim));
    for (const auto& s : tail) append_merged(plan.segments, s);
    return plan;
  };

  int expansions = 0;
  while (!open.empty() && expansions < p.max_expansions) {
    const auto [f, idx] = open.top();
    open.pop();
    const Node cur = nodes[idx];
    if (best_g[key(cur.pose)] < cur.g - 1e-9) continue;
    ++expansions;

    if (goal_reached(cur.pose, goal, p.xy_tol, p.yaw_tol)) return finish(idx, {});
    if (h(cur.pose) < 4.0 || expansions % 10 == 1) {
      try {
        auto shot = dubins_path(cur.pose, goal, r_turn, lim);
        if (pl.free_segments(cur.pose, shot)) return finish(idx, std::move(shot));
      } catch (const NoPath&) {
      }
    }

    for (int dir : {1, -1}) {
      for (double kappa : kappas) {
        const Segment s = make_segment(dir, kappa, p.step, lim);
        if (!pl.free_arc(cur.pose, s.v, s.omega, s.duration)) continue;
        const Pose next = arc_pose(cur.pose, s.v, s.omega, s.duration);
        double g = cur.g + p.step * (dir > 0 ? 1.0 : p.reverse_cost) + 0.05 * std::abs(kappa) * p.step;
        if (cur.dir != 0 && cur.dir != dir) g += p.switch_cost;
        const auto k = key(next);
        const auto it = best_g.find(k);
        if (it != best_g.end() && it->second <= g) continue;
        best_g[k] = g;
        nodes.push_back({next, g, idx, dir, kappa});
        open.push({g + p.heuristic_weight * h(next), static_cast<int>(nodes.size()) - 1});
      }
    }
  }
  throw NoPath("planner exhausted its search budget");
}

MotionPlan plan_path(const OccupancyGrid& grid, const Pose& start, const Pose& goal,
                     const VelocityLimits& lim, const PlannerParams& p) {
  return plan_path(compute_clearance(grid, p.robot_radius + 1.0), start, goal, lim, p);
}

Twist clamp_velocity(double v, double omega, const VelocityLimits& lim) {
  double s = 1.0;
  if (v > lim.v_max) s = std::min(s, lim.v_max / v);
  if (v < lim.v_min) s = std::min(s, lim.v_min / v);
  if (std::abs(omega) > lim.omega_max) s = std::min(s, lim.omega_max / std::abs(omega));
  if (s == 1.0) return {v, omega};
  Twist t{v * s, omega * s};
  // guard the last ulp so the limits hold exactly
  t.v = std::clamp(t.v, lim.v_min, lim.v_max);
  t.omega = std::clamp(t.omega, -lim.omega_max, lim.omega_max);
  return t;
}

GateOutput gate_plan(const MotionPlan& plan, GateState& gate, double dt) {
  if (plan.switch_count() > gate.max_switches && gate.elapsed < gate.timeout) {
    gate.elapsed += dt;
    return {{0, 0}, true};
  }
  if (plan.segments.empty()) return {{0, 0}, false};
  return {{plan.segments.front().v, plan.segments.front().omega}, false};
}

bool goal_reached(const Pose& pose, const Pose& goal, double xy_tol, double yaw_tol) {
  return std::hypot(pose.x - goal.x, pose.y - goal.y) <= xy_tol &&
         std::abs(wrap_angle(pose.yaw - goal.yaw)) <= yaw_tol;
}

void write_grid_pgm(const OccupancyGrid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P5\n" << g.width() << " " << g.height() << "\n255\n";
  // top row of the image is the largest y
  for (int j = g.height() - 1; j >= 0; --j) {
    for (int i = 0; i < g.width(); ++i) {
      const Cell c = g.at(i, j);
      os.put(static_cast<char>(c == Cell::Free ? 255 : c == Cell::Occupied ? 0 : 128));
    }
  }
  if (!os) throw IoError("failed writing " + path);
}

void write_plan_csv(const MotionPlan& plan, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "index,v,omega,duration\n";
  for (size_t i = 0; i < plan.segments.size(); ++i) {
    const auto& s = plan.segments[i];
    os << i << "," << s.v << "," << s.omega << "," << s.duration << "\n";
  }
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace wb::nav

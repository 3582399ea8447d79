#pragma once

// Map navigation: a height-filtered occupancy grid, an arc-lattice planner
// that respects a minimum turning radius, the ratio-preserving velocity
// clamp and the forward-backward switch gate.

#include "wallbuild/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace wb {

class NoPath : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::nav {

using geometry::Pose;
using geometry::Vec2d;
using geometry::Vec3d;

enum class Cell : std::uint8_t { Free, Occupied, Unknown };

struct GridSpec {
  Vec2d origin{Vec2d::Zero()};  // lower-left corner in L_M
  int width{100};
  int height{75};
  double resolution{0.1};
};

struct OccupancyGrid {
  GridSpec spec;
  std::vector<Cell> cells;  // row-major, row = y index

  explicit OccupancyGrid(const GridSpec& s = {}, Cell fill = Cell::Free);

  int width() const { return spec.width; }
  int height() const { return spec.height; }
  double resolution() const { return spec.resolution; }
  bool in_bounds(int i, int j) const { return i >= 0 && j >= 0 && i < spec.width && j < spec.height; }
  bool contains(const Vec2d& p) const;
  /// Cell index (i along x, j along y); may be out of bounds.
  Eigen::Vector2i index(const Vec2d& p) const;
  Vec2d center(int i, int j) const;
  Cell at(int i, int j) const { return cells[static_cast<size_t>(j) * spec.width + i]; }
  Cell& at(int i, int j) { return cells[static_cast<size_t>(j) * spec.width + i]; }
  int count(Cell c) const;
};

/// Occupied iff a point with z_low <= z <= z_high falls in the cell.
OccupancyGrid build_costmap(const std::vector<Vec3d>& points, double z_low, double z_high,
                            const GridSpec& spec);

/// Distance from each cell center to the nearest occupied cell center,
/// saturated at `cap`.
struct Clearance {
  GridSpec spec;
  std::vector<float> dist;

  float at(int i, int j) const { return dist[static_cast<size_t>(j) * spec.width + i]; }
  /// Clearance at a point; 0 outside the grid.
  double at(const Vec2d& p) const;
};

Clearance compute_clearance(const OccupancyGrid& g, double cap = 2.0);

struct VelocityLimits {
  double v_min{-0.3};
  double v_max{1.0};
  double omega_max{1.0};
  double r_min{0.5};
};

struct Segment {
  double v{0};
  double omega{0};
  double duration{0};
};

struct MotionPlan {
  Pose start;
  Pose goal;
  std::vector<Segment> segments;

  int switch_count() const;
  double duration() const;
  double length() const;
  bool empty() const { return segments.empty(); }
};

struct PlannerParams {
  double robot_radius{0.5};
  double xy_tol{0.1};
  double yaw_tol{geometry::deg2rad(5.0)};
  double step{0.3};       // primitive arc length
  double bin_xy{0.15};
  int yaw_bins{72};
  double reverse_cost{2.0};
  double switch_cost{2.0};
  double heuristic_weight{1.5};
  int max_expansions{60000};
};

/// Hybrid-A* over forward/backward arcs and straights with an analytic
/// Dubins completion. Throws NoPath when the goal is unreachable.
MotionPlan plan_path(const OccupancyGrid& grid, const Pose& start, const Pose& goal,
                     const VelocityLimits& lim = {}, const PlannerParams& p = {});

/// Same, against a precomputed clearance field.
MotionPlan plan_path(const Clearance& clearance, const Pose& start, const Pose& goal,
                     const VelocityLimits& lim = {}, const PlannerParams& p = {});

/// Shortest forward-only path of bounded curvature, without obstacles.
/// Returns segments of unit speed scaled to the limits.
std::vector<Segment> dubins_path(const Pose& start, const Pose& goal, double radius,
                                 const VelocityLimits& lim = {});

/// Pose after driving (v, omega) for t seconds on an exact arc.
Pose arc_pose(const Pose& p, double v, double omega, double t);

/// Poses along a plan, every `ds` meters of travel (plus segment ends).
std::vector<Pose> sample_plan(const MotionPlan& plan, double ds = 0.05);

struct Twist {
  double v{0};
  double omega{0};
};

/// Scales (v, omega) by the largest factor in [0, 1] that satisfies every
/// limit, which keeps the turning radius v/omega.
Twist clamp_velocity(double v, double omega, const VelocityLimits& lim);

struct GateState {
  int max_switches{2};
  double elapsed{0};
  double timeout{5.0};
};

struct GateOutput {
  Twist cmd;
  bool suppressed{false};
};

/// Holds the robot still while the plan has too many direction switches,
/// until the timeout releases it.
GateOutput gate_plan(const MotionPlan& plan, GateState& gate, double dt);

bool goal_reached(const Pose& pose, const Pose& goal, double xy_tol, double yaw_tol);

/// PGM dump: free 255, occupied 0, unknown 128. Throws IoError.
void write_grid_pgm(const OccupancyGrid& g, const std::string& path);
/// One row per segment: index,v,omega,duration.
void write_plan_csv(const MotionPlan& plan, const std::string& path);

}  // namespace wb::nav

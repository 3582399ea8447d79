#pragma once

// Ground-truth arena: brick stacks, the wall footprint, the robot with its
// end effector and basket, and the bricks placed so far.

#include "wallbuild/geometry.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wb {

class AlreadyPicked : public Error {
 public:
  AlreadyPicked() : Error("brick was already picked") {}
};

class NoBrickAttached : public Error {
 public:
  NoBrickAttached() : Error("no brick attached to the gripper") {}
};

class GraspFailed : public Error {
 public:
  GraspFailed(double offset, double yaw_err);
  double offset;
  double yaw_err;
};

}  // namespace wb

namespace wb::world {

using geometry::Pose;
using geometry::Vec2d;
using geometry::Vec3d;

enum class Color : std::uint8_t { Red = 0, Green = 1, Blue = 2, Orange = 3 };
inline constexpr int kColorCount = 4;

std::string_view color_name(Color c);
/// Throws wb::Error on an unknown name.
Color parse_color(std::string_view name);

struct BrickSpec {
  double length{0.3};
  double width{0.2};
  double height{0.2};
  double patch_length{0.15};
  double patch_width{0.10};
  int slot_cost{1};
};

/// Per-color brick dimensions and basket costs.
struct BrickCatalog {
  std::array<BrickSpec, kColorCount> specs;

  static BrickCatalog defaults();
  const BrickSpec& operator[](Color c) const { return specs[static_cast<int>(c)]; }
  BrickSpec& operator[](Color c) { return specs[static_cast<int>(c)]; }
  /// Common brick height h_b (all colors share it by default).
  double brick_height() const { return specs[0].height; }
};

/// Oriented box resting on a horizontal surface. The long axis points along
/// `yaw`.
struct Box {
  int id{-1};
  Color color{Color::Red};
  Vec2d center{Vec2d::Zero()};
  double z_bottom{0};
  double yaw{0};
  double length{0}, width{0}, height{0};
  double patch_length{0}, patch_width{0};

  double z_top() const { return z_bottom + height; }
  /// True if `p` lies on the top face footprint (inclusive, with margin).
  bool covers(const Vec2d& p, double margin = 0) const;
  std::array<Vec2d, 4> corners() const;
};

/// Bricks of one color laid in `columns` side by side along the stack's
/// minor axis and `layers` high. Brick index = layer * columns + column.
struct BrickStack {
  Color color{Color::Red};
  Pose base;  // planar pose in L_M, yaw = brick long axis
  int layers{1};
  int columns{1};
  double column_gap{0.0};
  std::vector<bool> picked;
  std::vector<int> ids;

  int size() const { return layers * columns; }
  int layer_of(int index) const { return index / columns; }
  int column_of(int index) const { return index % columns; }
  bool exposed(int index) const;
  /// Index of the highest unpicked brick in a column, or -1.
  int top_of_column(int column) const;
};

struct WallFootprint {
  /// Right end of the footprint centerline; yaw points along the wall from
  /// the right end into it. The build side is the counter-clockwise normal.
  Pose anchor;
  double length{4.5};
  double width{0.3};
  /// Rows bottom-up, cells in order from the anchor.
  std::vector<std::vector<Color>> blueprint;

  Vec2d axis() const { return {std::cos(anchor.yaw), std::sin(anchor.yaw)}; }
  Vec2d normal() const { return {-std::sin(anchor.yaw), std::cos(anchor.yaw)}; }
  std::array<Vec2d, 4> corners() const;
  /// Point expressed in footprint coordinates (along axis, along normal).
  Vec2d to_local(const Vec2d& p) const;
};

/// End effector in L_B: gripper face center, camera pitch (0 = forward,
/// pi/2 = nadir) and yaw about the vertical.
struct Effector {
  Vec3d position{0.35, 0.0, 1.1};
  double pitch{0.35};
  double yaw{0.0};
};

/// Brick held by the gripper, expressed in the gripper's horizontal frame
/// (first axis = gripper long axis).
struct HeldBrick {
  int id{-1};
  Color color{Color::Red};
  Vec2d offset{Vec2d::Zero()};
  double yaw_offset{0};
};

struct BasketEntry {
  int slot{0};
  int cost{1};
  HeldBrick brick;
};

/// Ground-truth basket: `capacity` slot units, a brick occupies `cost`
/// consecutive units starting at its slot.
struct Basket {
  int capacity{4};
  std::vector<BasketEntry> entries;

  int used() const;
  bool is_free(int slot, int cost) const;
  /// First slot with `cost` consecutive free units, or -1.
  int first_fit(int cost) const;
};

struct WorldParams {
  double grasp_radius{0.05};
  double contact_epsilon{0.002};
  double compliance_yaw{geometry::deg2rad(10.0)};
};

struct GraspResult {
  int brick_id;
  double offset;
  double yaw_err;
};

struct PlacementRecord {
  int brick_id{-1};
  Color color{Color::Red};
  Vec2d position_in_footprint{Vec2d::Zero()};
  double z_bottom{0};
  double yaw_error{0};
  double inside_fraction{0};
};

struct WorldState {
  BrickCatalog catalog{BrickCatalog::defaults()};
  WorldParams params;
  std::vector<BrickStack> stacks;
  WallFootprint footprint;
  std::vector<Box> placed;
  std::vector<PlacementRecord> placements;

  Pose base;  // robot base in L_M
  Effector effector;
  bool magnet_on{false};
  std::optional<HeldBrick> attached;
  Basket basket;
  double clock{0};
  int next_brick_id{0};

  /// Assigns ids to stack bricks; call after editing stacks.
  void index_bricks();

  int initial_brick_count() const { return next_brick_id; }
  int bricks_in_stacks() const;
  /// Stack bricks + basket + attached + placed.
  int total_bricks() const;

  Box stack_box(int stack, int index) const;
  /// Every box currently standing in the arena (unpicked and placed).
  std::vector<Box> boxes() const;
  /// Height of the highest top face covering `p`, 0 for bare ground.
  double surface_height(const Vec2d& p, std::optional<Box>* hit = nullptr) const;

  /// Gripper face center in L_M.
  Vec3d gripper_in_map() const;
  /// Direction of the gripper long axis in L_M.
  double gripper_axis_yaw() const;
  /// Camera pose (camera -> map) derived from base and effector.
  geometry::Iso3<double> camera_in_map(double camera_offset) const;
};

/// Camera-to-base transform of an eye-in-hand camera mounted `offset`
/// meters toward image-up from the gripper center.
geometry::Iso3<double> camera_in_base(const Effector& e, double offset);

/// Pose of the patch center atop a stack brick.
Pose ground_truth_patch_pose(const WorldState& w, int stack, int index);

bool contact_triggered(const WorldState& w);

/// Grasps the brick under the gripper. Throws GraspFailed on misalignment.
GraspResult attach_brick(WorldState& w);

/// Releases the held brick at the gripper's current pose onto the surface
/// beneath it and scores it against the footprint.
PlacementRecord place_brick(WorldState& w);

/// Moves the held brick into the basket at `slot`.
void stow_in_basket(WorldState& w, int slot);

/// Attaches the basket brick at `slot` to the gripper.
void fetch_from_basket(WorldState& w, int slot);

/// Area of the intersection of two convex CCW polygons.
double convex_overlap_area(const std::vector<Vec2d>& a, const std::vector<Vec2d>& b);
double polygon_area(const std::vector<Vec2d>& poly);

}  // namespace wb::world

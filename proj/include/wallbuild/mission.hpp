#pragma once

// Mission layer: greedy load/build task sequencing under basket capacity,
// the hierarchical state machine, alignment goals and wall waypoints.

#include "wallbuild/world.hpp"

#include <array>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wb {

class InfeasibleBrick : public Error {
 public:
  using Error::Error;
};

class InvalidEvent : public Error {
 public:
  using Error::Error;
};

class MissingWallPose : public Error {
 public:
  MissingWallPose() : Error("wall pose has not been detected yet") {}
};

class BasketFull : public Error {
 public:
  BasketFull() : Error("no basket slot fits the brick") {}
};

class BrickUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::mission {

using geometry::Pose;
using geometry::Vec2d;
using world::Color;

enum class TaskKind { Load, Build };

struct BrickTask {
  TaskKind kind{TaskKind::Load};
  Color color{Color::Red};
  /// Build tasks: cell index in wall order (row-major from the bottom row).
  int cell{-1};

  bool operator==(const BrickTask&) const = default;
};

std::string task_label(const BrickTask& t);

using SlotCosts = std::array<int, world::kColorCount>;

/// Rows bottom-up; cells in each row ordered from the footprint anchor.
struct Blueprint {
  std::vector<std::vector<Color>> rows;

  int cell_count() const;
  /// (row, position in row) of a wall-order index.
  std::pair<int, int> cell(int index) const;
  Color color_of(int index) const;
};

/// Greedy batching: Load tasks until the next brick no longer fits, then the
/// batch's Build tasks in wall order. Throws InfeasibleBrick.
std::vector<BrickTask> plan_sequence(const Blueprint& bp, const SlotCosts& costs, int capacity);

enum class Top { GoToStacks, LoadBricks, GoToWall, UnloadBricks, Done };
enum class Sub { InitialApproach, PoseDetection, Alignment, FinalApproach, BrickPickup, BrickDrop, Idle };

std::string_view top_name(Top t);
std::string_view sub_name(Sub s);

enum class EventType {
  GoalReached,
  ObjectDetected,
  PoseEstimated,
  AlignmentReached,
  WithinReach,
  PickupDone,
  PickupFailed,
  DropDone,
  BasketFull,
  BasketEmpty,
  TaskQueueEmpty,
  PatchLost,
  Timeout,
};

std::string_view event_name(EventType e);

struct Event {
  EventType type{EventType::GoalReached};
  /// PoseEstimated: object pose in L_M. For a patch the yaw is the long
  /// axis; for the footprint it is the anchor pose (yaw along the wall).
  std::optional<Pose> pose;
  /// Robot pose estimate when the event fired.
  Pose robot;
};

/// Mission-side record of the basket: which color sits in which slot.
class BasketMap {
 public:
  BasketMap(int capacity = 4, const SlotCosts& costs = {1, 2, 4, 4});

  /// First slot with enough contiguous room. Throws BasketFull.
  int store(Color c);
  /// Slot of the most recently stored brick of `c`. Throws BrickUnavailable.
  int next_for(Color c) const;
  void take(int slot);
  bool fits(Color c) const;
  bool has(Color c) const;
  bool empty() const { return entries_.empty(); }
  int used() const;
  int capacity() const { return capacity_; }
  int cost(Color c) const { return costs_[static_cast<int>(c)]; }

 private:
  int capacity_;
  SlotCosts costs_;
  std::vector<std::pair<int, Color>> entries_;  // in store order
};

struct MissionConfig {
  Blueprint blueprint;
  world::BrickCatalog catalog{world::BrickCatalog::defaults()};
  int capacity{4};
  /// Base poses from which each stack is in view (e.g. from an aerial
  /// survey), by color.
  std::array<std::optional<Pose>, world::kColorCount> stack_view;
  /// Base pose from which the wall footprint is in view.
  Pose wall_view;
  double d_align{1.2};
  /// Distance of the base from a drop cell during the drop.
  double d_drop{0.9};
  int retry_max{2};
  /// Bricks already in the basket at the start, stored first-fit in order.
  std::vector<Color> preloaded;
};

enum class ActionKind {
  NavGoal,        // drive to `goal`
  LocalApproach,  // image-based approach towards `target`
  DetectPose,     // estimate the pose of `target`
  Pickup,         // visual-servo pickup, then stow in `slot`
  Drop,           // fetch from `slot`, servo over `cell`, release
  Finish,
};

enum class Target { Stack, Patch, Footprint };

struct Action {
  ActionKind kind{ActionKind::Finish};
  Target target{Target::Stack};
  Color color{Color::Red};
  Pose goal;
  int slot{-1};
  Pose cell;  // drop cell in L_M, z = bottom of the brick
};

struct SkipRecord {
  BrickTask task;
  std::string reason;
};

struct MissionState {
  Top top{Top::GoToStacks};
  Sub sub{Sub::Idle};
  std::deque<BrickTask> queue;
  BasketMap basket;
  std::optional<Pose> wall_pose;  // footprint anchor in L_M, written once
  int wall_pose_writes{0};
  int retries{0};
  std::vector<BrickTask> completed;
  std::vector<SkipRecord> skipped;
  /// Cells whose brick was dropped, for the drop targets of later rows.
  std::vector<int> built_cells;
};

struct StepResult {
  MissionState state;
  std::vector<Action> actions;
};

/// Initial state and the first actions for a plan.
StepResult start(const MissionConfig& cfg, std::vector<BrickTask> plan);

/// One deterministic transition. Throws InvalidEvent when the event is not
/// legal in the current state.
StepResult step(const MissionConfig& cfg, const MissionState& s, const Event& e);

/// Standoff goal facing the object across its minor axis, on the side of
/// `viewpoint`.
Pose alignment_goal(const Pose& object, double d_align, const Vec2d& viewpoint);

/// Base goal for dropping into `cell`: d_drop off the build side, facing
/// the wall.
Pose drop_goal(const MissionConfig& cfg, int cell, const std::optional<Pose>& wall);

/// Brick center pose for a wall-order cell (z = bottom of the brick). The
/// yaw follows the wall axis. Throws MissingWallPose.
Pose drop_target(const Blueprint& bp, int cell, const std::optional<Pose>& wall,
                 const world::BrickCatalog& catalog);

}  // namespace wb::mission

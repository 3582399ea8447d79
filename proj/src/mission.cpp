#include "wallbuild/mission.hpp"

#include <algorithm>
#include <cmath>

namespace wb::mission {

using geometry::kPi;
using geometry::wrap_angle;

std::string task_label(const BrickTask& t) {
  std::string s = t.kind == TaskKind::Load ? "L_" : "B_";
  s += std::string(1, static_cast<char>(std::toupper(world::color_name(t.color)[0])));
  return s;
}

int Blueprint::cell_count() const {
  int n = 0;
  for (const auto& r : rows) n += static_cast<int>(r.size());
  return n;
}

std::pair<int, int> Blueprint::cell(int index) const {
  if (index < 0) throw Error("negative cell index");
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    const int n = static_cast<int>(rows[r].size());
    if (index < n) return {r, index};
    index -= n;
  }
  throw Error("cell index past the blueprint");
}

Color Blueprint::color_of(int index) const {
  const auto [r, c] = cell(index);
  return rows[r][c];
}

std::vector<BrickTask> plan_sequence(const Blueprint& bp, const SlotCosts& costs, int capacity) {
  std::vector<BrickTask> out;
  std::vector<BrickTask> builds;
  int room = capacity;
  const auto flush = [&] {
    out.insert(out.end(), builds.begin(), builds.end());
    builds.clear();
    room = capacity;
  };
  for (int i = 0; i < bp.cell_count(); ++i) {
    const Color c = bp.color_of(i);
    const int cost = costs[static_cast<int>(c)];
    if (cost > capacity) {
      throw InfeasibleBrick(std::string(world::color_name(c)) + " brick needs " +
                            std::to_string(cost) + " slots, basket has " + std::to_string(capacity));
    }
    if (cost > room) flush();
    out.push_back({TaskKind::Load, c, -1});
    builds.push_back({TaskKind::Build, c, i});
    room -= cost;
  }
  flush();
  return out;
}

std::string_view top_name(Top t) {
  switch (t) {
    case Top::GoToStacks: return "GoToStacks";
    case Top::LoadBricks: return "LoadBricks";
    case Top::GoToWall: return "GoToWall";
    case Top::UnloadBricks: return "UnloadBricks";
    case Top::Done: return "Done";
  }
  return "?";
}

std::string_view sub_name(Sub s) {
  switch (s) {
    case Sub::InitialApproach: return "InitialApproach";
    case Sub::PoseDetection: return "PoseDetection";
    case Sub::Alignment: return "Alignment";
    case Sub::FinalApproach: return "FinalApproach";
    case Sub::BrickPickup: return "BrickPickup";
    case Sub::BrickDrop: return "BrickDrop";
    case Sub::Idle: return "Idle";
  }
  return "?";
}

std::string_view event_name(EventType e) {
  switch (e) {
    case EventType::GoalReached: return "GoalReached";
    case EventType::ObjectDetected: return "ObjectDetected";
    case EventType::PoseEstimated: return "PoseEstimated";
    case EventType::AlignmentReached: return "AlignmentReached";
    case EventType::WithinReach: return "WithinReach";
    case EventType::PickupDone: return "PickupDone";
    case EventType::PickupFailed: return "PickupFailed";
    case EventType::DropDone: return "DropDone";
    case EventType::BasketFull: return "BasketFull";
    case EventType::BasketEmpty: return "BasketEmpty";
    case EventType::TaskQueueEmpty: return "TaskQueueEmpty";
    case EventType::PatchLost: return "PatchLost";
    case EventType::Timeout: return "Timeout";
  }
  return "?";
}

BasketMap::BasketMap(int capacity, const SlotCosts& costs) : capacity_(capacity), costs_(costs) {}

int BasketMap::used() const {
  int n = 0;
  for (const auto& [slot, c] : entries_) n += cost(c);
  return n;
}

namespace {

int first_fit(const std::vector<std::pair<int, Color>>& entries, const BasketMap& b, int need) {
  for (int s = 0; s + need <= b.capacity(); ++s) {
    bool ok = true;
    for (const auto& [slot, c] : entries) {
      if (s < slot + b.cost(c) && slot < s + need) {
        ok = false;
        break;
      }
    }
    if (ok) return s;
  }
  return -1;
}

}  // namespace

bool BasketMap::fits(Color c) const { return first_fit(entries_, *this, cost(c)) >= 0; }

int BasketMap::store(Color c) {
  const int s = first_fit(entries_, *this, cost(c));
  if (s < 0) throw BasketFull();
  entries_.emplace_back(s, c);
  return s;
}

bool BasketMap::has(Color c) const {
  return std::any_of(entries_.begin(), entries_.end(), [c](const auto& e) { return e.second == c; });
}

int BasketMap::next_for(Color c) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->second == c) return it->first;
  }
  throw BrickUnavailable(std::string("no ") + std::string(world::color_name(c)) + " brick in the basket");
}

void BasketMap::take(int slot) {
  const auto it = std::find_if(entries_.begin(), entries_.end(), [slot](const auto& e) { return e.first == slot; });
  if (it == entries_.end()) throw BrickUnavailable("basket slot " + std::to_string(slot) + " is empty");
  entries_.erase(it);
}

Pose alignment_goal(const Pose& object, double d_align, const Vec2d& viewpoint) {
  Vec2d n(-std::sin(object.yaw), std::cos(object.yaw));
  // n points from the robot's side into the object
  if (n.dot(object.xy() - viewpoint) < 0) n = -n;
  const Vec2d g = object.xy() - d_align * n;
  return Pose::planar(g.x(), g.y(), std::atan2(n.y(), n.x()));
}

Pose drop_target(const Blueprint& bp, int cell, const std::optional<Pose>& wall,
                 const world::BrickCatalog& catalog) {
  if (!wall) throw MissingWallPose();
  const auto [row, pos] = bp.cell(cell);
  double along = 0;
  for (int k = 0; k < pos; ++k) along += catalog[bp.rows[row][k]].length;
  along += catalog[bp.rows[row][pos]].length / 2;
  const Vec2d axis(std::cos(wall->yaw), std::sin(wall->yaw));
  const Vec2d c = wall->xy() + along * axis;
  return Pose::planar(c.x(), c.y(), wall->yaw, row * catalog.brick_height());
}

Pose drop_goal(const MissionConfig& cfg, int cell, const std::optional<Pose>& wall) {
  const Pose t = drop_target(cfg.blueprint, cell, wall, cfg.catalog);
  const Vec2d normal(-std::sin(wall->yaw), std::cos(wall->yaw));
  return alignment_goal(t, cfg.d_drop, t.xy() + normal);
}

namespace {

SlotCosts costs_of(const world::BrickCatalog& c) {
  SlotCosts s{};
  for (int i = 0; i < world::kColorCount; ++i) s[i] = c.specs[i].slot_cost;
  return s;
}

Action nav(const Pose& goal) {
  Action a;
  a.kind = ActionKind::NavGoal;
  a.goal = goal;
  return a;
}

Action act(ActionKind k, Target t, Color c) {
  Action a;
  a.kind = k;
  a.target = t;
  a.color = c;
  return a;
}

class Machine {
 public:
  Machine(const MissionConfig& cfg, MissionState s) : cfg_(cfg), r_{std::move(s), {}} {}

  StepResult run(const Event& e);
  void begin_next_task();

  StepResult& result() { return r_; }

 private:
  MissionState& s() { return r_.state; }
  const BrickTask& head() { return s().queue.front(); }
  [[noreturn]] void invalid(const Event& e) {
    throw InvalidEvent(std::string(event_name(e.type)) + " is not valid in " +
                       std::string(top_name(s().top)) + "/" + std::string(sub_name(s().sub)));
  }
  void skip(const std::string& reason) {
    s().skipped.push_back({head(), reason});
    s().queue.pop_front();
    s().retries = 0;
  }
  void complete() {
    s().completed.push_back(head());
    s().queue.pop_front();
    s().retries = 0;
  }
  void go_to_stack();
  void go_to_wall();
  void wall_alignment();
  void fail(const Event& e);

  const MissionConfig& cfg_;
  StepResult r_;
};

void Machine::go_to_stack() {
  s().top = Top::GoToStacks;
  s().sub = Sub::Idle;
  r_.actions.push_back(nav(*cfg_.stack_view[static_cast<int>(head().color)]));
}

void Machine::wall_alignment() {
  s().top = Top::UnloadBricks;
  s().sub = Sub::Alignment;
  r_.actions.push_back(nav(drop_goal(cfg_, head().cell, s().wall_pose)));
}

void Machine::go_to_wall() {
  s().top = Top::GoToWall;
  s().sub = Sub::Idle;
  r_.actions.push_back(nav(s().wall_pose ? drop_goal(cfg_, head().cell, s().wall_pose) : cfg_.wall_view));
}

void Machine::begin_next_task() {
  const Top from = s().top;
  while (!s().queue.empty()) {
    const BrickTask t = head();
    if (t.kind == TaskKind::Load) {
      if (!cfg_.stack_view[static_cast<int>(t.color)]) {
        skip("no stack of this color");
        continue;
      }
      if (!s().basket.fits(t.color)) {
        skip("basket full");
        continue;
      }
      go_to_stack();
      return;
    }
    if (!s().basket.has(t.color)) {
      skip("brick unavailable");
      continue;
    }
    // consecutive drops go straight to the next cell's alignment
    if (from == Top::UnloadBricks && s().wall_pose) {
      wall_alignment();
    } else {
      go_to_wall();
    }
    return;
  }
  s().top = Top::Done;
  s().sub = Sub::Idle;
  r_.actions.push_back(Action{});
}

void Machine::fail(const Event& e) {
  ++s().retries;
  if (s().retries > cfg_.retry_max) {
    skip(std::string("retries exhausted after ") + std::string(event_name(e.type)));
    begin_next_task();
    return;
  }
  if (head().kind == TaskKind::Load) {
    go_to_stack();
  } else if (s().wall_pose) {
    wall_alignment();
  } else {
    go_to_wall();
  }
}

StepResult Machine::run(const Event& e) {
  const Top top = s().top;
  const Sub sub = s().sub;
  if (top == Top::Done) invalid(e);

  switch (e.type) {
    case EventType::TaskQueueEmpty:
      if (!s().queue.empty()) invalid(e);
      s().top = Top::Done;
      s().sub = Sub::Idle;
      r_.actions.push_back(Action{});
      return r_;
    case EventType::PatchLost:
    case EventType::Timeout:
      fail(e);
      return r_;
    default: break;
  }

  switch (top) {
    case Top::GoToStacks:
      if (e.type != EventType::GoalReached) invalid(e);
      s().top = Top::LoadBricks;
      s().sub = Sub::InitialApproach;
      r_.actions.push_back(act(ActionKind::LocalApproach, Target::Stack, head().color));
      break;

    case Top::GoToWall:
      if (e.type != EventType::GoalReached) invalid(e);
      if (s().wall_pose) {
        wall_alignment();
      } else {
        s().top = Top::UnloadBricks;
        s().sub = Sub::InitialApproach;
        r_.actions.push_back(act(ActionKind::LocalApproach, Target::Footprint, head().color));
      }
      break;

    case Top::LoadBricks:
      if (sub == Sub::InitialApproach && e.type == EventType::ObjectDetected) {
        s().sub = Sub::PoseDetection;
        r_.actions.push_back(act(ActionKind::DetectPose, Target::Patch, head().color));
      } else if (sub == Sub::PoseDetection && e.type == EventType::PoseEstimated && e.pose) {
        s().sub = Sub::Alignment;
        r_.actions.push_back(nav(alignment_goal(*e.pose, cfg_.d_align, e.robot.xy())));
      } else if (sub == Sub::Alignment &&
                 (e.type == EventType::AlignmentReached || e.type == EventType::GoalReached)) {
        s().sub = Sub::FinalApproach;
        r_.actions.push_back(act(ActionKind::LocalApproach, Target::Patch, head().color));
      } else if (sub == Sub::FinalApproach && e.type == EventType::WithinReach) {
        s().sub = Sub::BrickPickup;
        auto a = act(ActionKind::Pickup, Target::Patch, head().color);
        auto probe = s().basket;
        a.slot = probe.store(head().color);
        r_.actions.push_back(a);
      } else if (sub == Sub::BrickPickup && e.type == EventType::PickupDone) {
        s().basket.store(head().color);
        complete();
        begin_next_task();
      } else if (sub == Sub::BrickPickup && e.type == EventType::PickupFailed) {
        fail(e);
      } else if (e.type == EventType::BasketFull) {
        skip("basket full");
        begin_next_task();
      } else {
        invalid(e);
      }
      break;

    case Top::UnloadBricks:
      if (sub == Sub::InitialApproach && e.type == EventType::ObjectDetected) {
        s().sub = Sub::PoseDetection;
        r_.actions.push_back(act(ActionKind::DetectPose, Target::Footprint, head().color));
      } else if (sub == Sub::PoseDetection && e.type == EventType::PoseEstimated && e.pose) {
        if (!s().wall_pose) {
          s().wall_pose = *e.pose;
          ++s().wall_pose_writes;
        }
        wall_alignment();
      } else if (sub == Sub::Alignment &&
                 (e.type == EventType::AlignmentReached || e.type == EventType::GoalReached)) {
        s().sub = Sub::BrickDrop;
        auto a = act(ActionKind::Drop, Target::Footprint, head().color);
        a.slot = s().basket.next_for(head().color);
        a.cell = drop_target(cfg_.blueprint, head().cell, s().wall_pose, cfg_.catalog);
        r_.actions.push_back(a);
      } else if (sub == Sub::BrickDrop && e.type == EventType::DropDone) {
        s().basket.take(s().basket.next_for(head().color));
        s().built_cells.push_back(head().cell);
        complete();
        begin_next_task();
      } else if (e.type == EventType::BasketEmpty) {
        skip("basket empty");
        begin_next_task();
      } else {
        invalid(e);
      }
      break;

    case Top::Done: invalid(e);
  }
  return r_;
}

}  // namespace

StepResult start(const MissionConfig& cfg, std::vector<BrickTask> plan) {
  MissionState s;
  s.basket = BasketMap(cfg.capacity, costs_of(cfg.catalog));
  for (const Color c : cfg.preloaded) s.basket.store(c);
  s.queue.assign(plan.begin(), plan.end());
  Machine m(cfg, std::move(s));
  m.begin_next_task();
  return m.result();
}

StepResult step(const MissionConfig& cfg, const MissionState& s, const Event& e) {
  Machine m(cfg, s);
  return m.run(e);
}

}  // namespace wb::mission

#include "wallbuild/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace wb {

namespace {
std::string grasp_message(double offset, double yaw_err) {
  std::ostringstream os;
  os << "grasp failed: offset " << offset << " m, yaw error " << geometry::rad2deg(yaw_err)
     << " deg";
  return os.str();
}
}  // namespace

GraspFailed::GraspFailed(double offset_, double yaw_err_)
    : Error(grasp_message(offset_, yaw_err_)), offset(offset_), yaw_err(yaw_err_) {}

}  // namespace wb

namespace wb::world {

using geometry::kPi;
using geometry::wrap_axis;

namespace {

Eigen::Matrix2d rot2(double a) {
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

std::array<Vec2d, 4> rect_corners(const Vec2d& c, double yaw, double length, double width) {
  const Eigen::Matrix2d r = rot2(yaw);
  const double hl = length / 2, hw = width / 2;
  return {c + r * Vec2d(-hl, -hw), c + r * Vec2d(hl, -hw), c + r * Vec2d(hl, hw),
          c + r * Vec2d(-hl, hw)};
}

double cross(const Vec2d& a, const Vec2d& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

std::string_view color_name(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Orange: return "orange";
  }
  return "?";
}

Color parse_color(std::string_view name) {
  for (int i = 0; i < kColorCount; ++i) {
    if (color_name(static_cast<Color>(i)) == name) return static_cast<Color>(i);
  }
  throw Error("unknown brick color '" + std::string(name) + "'");
}

BrickCatalog BrickCatalog::defaults() {
  BrickCatalog c;
  const std::array<double, kColorCount> lengths{0.30, 0.60, 1.20, 1.80};
  const std::array<int, kColorCount> costs{1, 2, 4, 4};
  for (int i = 0; i < kColorCount; ++i) {
    c.specs[i] = BrickSpec{lengths[i], 0.20, 0.20, lengths[i] / 2, 0.10, costs[i]};
  }
  return c;
}

bool Box::covers(const Vec2d& p, double margin) const {
  const Vec2d local = rot2(-yaw) * (p - center);
  return std::abs(local.x()) <= length / 2 + margin && std::abs(local.y()) <= width / 2 + margin;
}

std::array<Vec2d, 4> Box::corners() const { return rect_corners(center, yaw, length, width); }

bool BrickStack::exposed(int index) const {
  for (int i = index + columns; i < size(); i += columns) {
    if (!picked[i]) return false;
  }
  return true;
}

int BrickStack::top_of_column(int column) const {
  for (int layer = layers - 1; layer >= 0; --layer) {
    const int i = layer * columns + column;
    if (!picked[i]) return i;
  }
  return -1;
}

std::array<Vec2d, 4> WallFootprint::corners() const {
  return rect_corners(anchor.xy() + axis() * (length / 2), anchor.yaw, length, width);
}

Vec2d WallFootprint::to_local(const Vec2d& p) const {
  const Vec2d d = p - anchor.xy();
  return {d.dot(axis()), d.dot(normal())};
}

int Basket::used() const {
  int n = 0;
  for (const auto& e : entries) n += e.cost;
  return n;
}

bool Basket::is_free(int slot, int cost) const {
  if (slot < 0 || slot + cost > capacity) return false;
  for (const auto& e : entries) {
    if (slot < e.slot + e.cost && e.slot < slot + cost) return false;
  }
  return true;
}

int Basket::first_fit(int cost) const {
  for (int s = 0; s + cost <= capacity; ++s) {
    if (is_free(s, cost)) return s;
  }
  return -1;
}

void WorldState::index_bricks() {
  next_brick_id = 0;
  for (auto& s : stacks) {
    s.picked.assign(s.size(), false);
    s.ids.resize(s.size());
    for (int i = 0; i < s.size(); ++i) s.ids[i] = next_brick_id++;
  }
}

int WorldState::bricks_in_stacks() const {
  int n = 0;
  for (const auto& s : stacks) n += static_cast<int>(std::count(s.picked.begin(), s.picked.end(), false));
  return n;
}

int WorldState::total_bricks() const {
  return bricks_in_stacks() + static_cast<int>(basket.entries.size()) + (attached ? 1 : 0) +
         static_cast<int>(placed.size());
}

Box WorldState::stack_box(int stack, int index) const {
  const BrickStack& s = stacks.at(stack);
  const BrickSpec& spec = catalog[s.color];
  const double pitch = spec.width + s.column_gap;
  const double off = (s.column_of(index) - (s.columns - 1) / 2.0) * pitch;
  Box b;
  b.id = s.ids.empty() ? -1 : s.ids[index];
  b.color = s.color;
  b.center = s.base.xy() + rot2(s.base.yaw) * Vec2d(0.0, off);
  b.z_bottom = s.layer_of(index) * spec.height;
  b.yaw = s.base.yaw;
  b.length = spec.length;
  b.width = spec.width;
  b.height = spec.height;
  b.patch_length = spec.patch_length;
  b.patch_width = spec.patch_width;
  return b;
}

std::vector<Box> WorldState::boxes() const {
  std::vector<Box> out;
  for (int s = 0; s < static_cast<int>(stacks.size()); ++s) {
    for (int i = 0; i < stacks[s].size(); ++i) {
      if (!stacks[s].picked[i]) out.push_back(stack_box(s, i));
    }
  }
  out.insert(out.end(), placed.begin(), placed.end());
  return out;
}

double WorldState::surface_height(const Vec2d& p, std::optional<Box>* hit) const {
  double best = 0.0;
  std::optional<Box> found;
  for (const Box& b : boxes()) {
    if (b.covers(p) && b.z_top() > best) {
      best = b.z_top();
      found = b;
    }
  }
  if (hit) *hit = found;
  return best;
}

Vec3d WorldState::gripper_in_map() const { return base.isometry() * effector.position; }

double WorldState::gripper_axis_yaw() const { return base.yaw + effector.yaw + kPi<double> / 2; }

geometry::Iso3<double> camera_in_base(const Effector& e, double offset) {
  Eigen::Matrix3d r0;
  // camera x -> -y_B, camera y -> -z_B, camera z -> +x_B
  r0 << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(e.yaw, Vec3d::UnitZ()) *
                             Eigen::AngleAxisd(e.pitch, Vec3d::UnitY()))
                                .toRotationMatrix() *
                            r0;
  geometry::Iso3<double> t = geometry::Iso3<double>::Identity();
  t.linear() = r;
  t.translation() = e.position + r * Vec3d(0.0, -offset, 0.0);
  return t;
}

geometry::Iso3<double> WorldState::camera_in_map(double camera_offset) const {
  return base.isometry() * camera_in_base(effector, camera_offset);
}

Pose ground_truth_patch_pose(const WorldState& w, int stack, int index) {
  const BrickStack& s = w.stacks.at(stack);
  if (s.picked.at(index)) throw AlreadyPicked();
  const Box b = w.stack_box(stack, index);
  return Pose::planar(b.center.x(), b.center.y(), b.yaw, b.z_top());
}

bool contact_triggered(const WorldState& w) {
  const Vec3d g = w.gripper_in_map();
  const double surface = w.surface_height(g.head<2>());
  return g.z() - surface <= w.params.contact_epsilon;
}

GraspResult attach_brick(WorldState& w) {
  if (w.attached) throw Error("gripper already holds a brick");
  if (!w.magnet_on) throw Error("electromagnet is off");
  if (!contact_triggered(w)) throw Error("attach requires contact");
  const Vec3d g = w.gripper_in_map();
  std::optional<Box> hit;
  w.surface_height(g.head<2>(), &hit);
  const double axis = w.gripper_axis_yaw();
  if (!hit) throw GraspFailed(std::numeric_limits<double>::infinity(), 0.0);
  const Box box = *hit;
  // Placed bricks are not pickable.
  int stack_idx = -1, brick_idx = -1;
  for (int s = 0; s < static_cast<int>(w.stacks.size()); ++s) {
    const auto it = std::find(w.stacks[s].ids.begin(), w.stacks[s].ids.end(), box.id);
    if (it != w.stacks[s].ids.end()) {
      stack_idx = s;
      brick_idx = static_cast<int>(it - w.stacks[s].ids.begin());
    }
  }
  const Vec2d delta = box.center - g.head<2>();
  const double offset = delta.norm();
  const double yaw_err = wrap_axis(box.yaw - axis);
  if (stack_idx < 0 || offset > w.params.grasp_radius ||
      std::abs(yaw_err) > w.params.compliance_yaw) {
    throw GraspFailed(offset, yaw_err);
  }
  w.stacks[stack_idx].picked[brick_idx] = true;
  w.attached = HeldBrick{box.id, box.color, rot2(-axis) * delta, yaw_err};
  return {box.id, offset, yaw_err};
}

PlacementRecord place_brick(WorldState& w) {
  if (!w.attached) throw NoBrickAttached();
  const HeldBrick held = *w.attached;
  const BrickSpec& spec = w.catalog[held.color];
  const double axis = w.gripper_axis_yaw();
  const Vec3d g = w.gripper_in_map();

  Box b;
  b.id = held.id;
  b.color = held.color;
  b.center = g.head<2>() + rot2(axis) * held.offset;
  b.yaw = wrap_axis(axis + held.yaw_offset);
  b.length = spec.length;
  b.width = spec.width;
  b.height = spec.height;
  b.patch_length = spec.patch_length;
  b.patch_width = spec.patch_width;
  b.z_bottom = w.surface_height(b.center);

  PlacementRecord rec;
  rec.brick_id = b.id;
  rec.color = b.color;
  rec.position_in_footprint = w.footprint.to_local(b.center);
  rec.z_bottom = b.z_bottom;
  rec.yaw_error = wrap_axis(b.yaw - w.footprint.anchor.yaw);
  const auto bc = b.corners();
  const auto fc = w.footprint.corners();
  const std::vector<Vec2d> bp(bc.begin(), bc.end()), fp(fc.begin(), fc.end());
  rec.inside_fraction = convex_overlap_area(bp, fp) / polygon_area(bp);

  w.placed.push_back(b);
  w.placements.push_back(rec);
  w.attached.reset();
  w.magnet_on = false;
  return rec;
}

void stow_in_basket(WorldState& w, int slot) {
  if (!w.attached) throw NoBrickAttached();
  const int cost = w.catalog[w.attached->color].slot_cost;
  if (!w.basket.is_free(slot, cost)) throw Error("basket slot is occupied");
  w.basket.entries.push_back({slot, cost, *w.attached});
  w.attached.reset();
  w.magnet_on = false;
}

void fetch_from_basket(WorldState& w, int slot) {
  if (w.attached) throw Error("gripper already holds a brick");
  auto it = std::find_if(w.basket.entries.begin(), w.basket.entries.end(),
                         [slot](const BasketEntry& e) { return e.slot == slot; });
  if (it == w.basket.entries.end()) throw Error("basket slot is empty");
  w.attached = it->brick;
  w.magnet_on = true;
  w.basket.entries.erase(it);
}

double polygon_area(const std::vector<Vec2d>& poly) {
  double a = 0;
  for (size_t i = 0; i < poly.size(); ++i) a += cross(poly[i], poly[(i + 1) % poly.size()]);
  return std::abs(a) / 2;
}

double convex_overlap_area(const std::vector<Vec2d>& a, const std::vector<Vec2d>& b) {
  // Sutherland-Hodgman: clip `a` by every edge of `b`.
  std::vector<Vec2d> out = a;
  for (size_t i = 0; i < b.size() && !out.empty(); ++i) {
    const Vec2d p = b[i], q = b[(i + 1) % b.size()];
    const auto side = [&](const Vec2d& x) { return cross(q - p, x - p); };
    std::vector<Vec2d> in;
    in.swap(out);
    for (size_t j = 0; j < in.size(); ++j) {
      const Vec2d cur = in[j], nxt = in[(j + 1) % in.size()];
      const double sc = side(cur), sn = side(nxt);
      if (sc >= 0) out.push_back(cur);
      if ((sc >= 0) != (sn >= 0)) out.push_back(cur + (nxt - cur) * (sc / (sc - sn)));
    }
  }
  return out.size() < 3 ? 0.0 : polygon_area(out);
}

}  // namespace wb::world

#include "wallbuild/sim.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

namespace wb::sim {

namespace {

constexpr double kPi = geometry::kPi<double>;
using geometry::Iso3;
using geometry::wrap_angle;
using geometry::wrap_axis;
using mission::ActionKind;
using mission::EventType;
using mission::Target;

Vec2d rot2(double a, const Vec2d& v) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

Vec2d map_to_base(const Pose& base, const Vec2d& p) { return rot2(-base.yaw, p - base.xy()); }
Vec2d base_to_map(const Pose& base, const Vec2d& p) { return base.xy() + rot2(base.yaw, p); }

bool in_envelope(const Vec3d& p, const EffectorLimits& lim) {
  const double r = p.head<2>().norm();
  return r >= lim.r_min - 1e-9 && r <= lim.r_max + 1e-9 && p.z() >= lim.z_min - 1e-9 &&
         p.z() <= lim.z_max + 1e-9;
}

world::Effector effector_of(const Pose& p) { return {p.position(), p.pitch, p.yaw}; }

bool same_effector(const world::Effector& a, const world::Effector& b) {
  return (a.position - b.position).cwiseAbs().maxCoeff() < 1e-9 &&
         std::abs(a.pitch - b.pitch) < 1e-9 && std::abs(wrap_angle(a.yaw - b.yaw)) < 1e-9;
}

double median(std::vector<double> v) {
  auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------- plumbing

void SimConfig::validate() const {
  if (!(dt > 0)) throw Error("dt must be positive");
  const double n = camera_period / dt;
  if (!(camera_period > 0) || std::abs(n - std::round(n)) > 1e-9 || std::round(n) < 1) {
    throw Error("camera period must be a positive multiple of dt");
  }
}

int SimConfig::camera_every() const { return static_cast<int>(std::lround(camera_period / dt)); }

Pose integrate_base(const Pose& p, double v, double omega, double dt) {
  Pose out = p;
  if (std::abs(omega) < 1e-12) {
    out.x += v * dt * std::cos(p.yaw);
    out.y += v * dt * std::sin(p.yaw);
    return out;
  }
  const double r = v / omega;
  const double yaw1 = p.yaw + omega * dt;
  out.x += r * (std::sin(yaw1) - std::sin(p.yaw));
  out.y -= r * (std::cos(yaw1) - std::cos(p.yaw));
  out.yaw = wrap_angle(yaw1);
  return out;
}

void move_effector(world::WorldState& w, const EffectorDelta& d, const EffectorLimits& lim) {
  world::Effector e = w.effector;
  for (int i = 0; i < 3; ++i) e.position[i] += std::clamp(d.d_pos[i], -lim.max_step, lim.max_step);
  e.pitch += std::clamp(d.d_pitch, -lim.max_turn, lim.max_turn);
  e.yaw = wrap_angle(e.yaw + std::clamp(d.d_yaw, -lim.max_turn, lim.max_turn));
  if (!in_envelope(e.position, lim)) throw OutOfEnvelope("effector target leaves the reach envelope");
  w.effector = e;
}

Pose localization_estimate(const Pose& truth, std::mt19937_64& rng, double sigma_xy,
                           double sigma_yaw) {
  std::normal_distribution<double> n(0.0, 1.0);
  Pose p = truth;
  const double ex = n(rng), ey = n(rng), ez = n(rng);
  p.x += sigma_xy * ex;
  p.y += sigma_xy * ey;
  p.yaw = wrap_angle(p.yaw + sigma_yaw * ez);
  return p;
}

LocalizationDrift::LocalizationDrift(double sigma_xy, double sigma_yaw, double tau,
                                     std::mt19937_64 rng)
    : sxy_(sigma_xy), syaw_(sigma_yaw), tau_(tau), rng_(rng) {
  // start from the stationary distribution
  std::normal_distribution<double> n(0.0, 1.0);
  e_ = {sxy_ * n(rng_), sxy_ * n(rng_), syaw_ * n(rng_)};
}

void LocalizationDrift::step(double dt) {
  if (sxy_ <= 0 && syaw_ <= 0) return;
  std::normal_distribution<double> n(0.0, 1.0);
  const double phi = std::exp(-dt / tau_);
  const double k = std::sqrt(1 - phi * phi);
  e_.x() = phi * e_.x() + sxy_ * k * n(rng_);
  e_.y() = phi * e_.y() + sxy_ * k * n(rng_);
  e_.z() = phi * e_.z() + syaw_ * k * n(rng_);
}

Pose LocalizationDrift::apply(const Pose& truth) const {
  Pose p = truth;
  p.x += e_.x();
  p.y += e_.y();
  p.yaw = wrap_angle(p.yaw + e_.z());
  return p;
}

std::mt19937_64 make_stream(std::uint64_t seed, const std::string& label) {
  const std::uint64_t h = fnv1a(label);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

std::string trace_line(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = std::round(r.t * 1000.0) / 1000.0;
  j["state"] = r.state;
  j["sub_state"] = r.sub_state;
  j["event"] = r.event;
  j["task"] = r.task;
  return j.dump();
}

// ---------------------------------------------------------------- executive

struct Simulation::Exec {
  BehaviourKind kind{BehaviourKind::Idle};
  mission::Action action;
  double started{0};

  // nav
  std::optional<nav::MotionPlan> plan;
  nav::GateState gate;
  int refine{0};
  int nopath{0};
  double retry_at{0};
  int replans{0};

  // base command for this tick, split at segment boundaries
  std::vector<nav::Segment> pieces;
  nav::Twist hold;  // local approach: held between frames

  // vision
  control::DistanceFilter filter;
  vision::TrackerState tracker;
  std::optional<Iso3<double>> last_cam;  // camera -> map at the previous frame
  double plane_h{0.2};
  int missed{0};
  int good{0};
  double last_frame_t{0};
  std::optional<geometry::PatchPose> reach_patch;

  // arm
  world::Effector target;
  std::optional<control::ServoSupervisor> sup;
  enum class Phase { Servo, ZApproach, Grasped, Fetch, Move, Return } phase{Phase::Servo};
  double phase_t{0};
  bool picked{false};
  bool contact{false};
  PickupRecord pickup;
};

Simulation::Simulation(world::WorldState w, mission::MissionConfig mc,
                       std::vector<mission::BrickTask> plan, SimConfig cfg)
    : w_(std::move(w)),
      mc_(std::move(mc)),
      cfg_(std::move(cfg)),
      drift_(cfg_.noise.sigma_xy, cfg_.noise.sigma_yaw, cfg_.noise.drift_tau,
             make_stream(cfg_.seed, "localization")),
      sensor_rng_(make_stream(cfg_.seed, "sensor")),
      ex_(std::make_unique<Exec>()) {
  cfg_.validate();
  ex_->target = w_.effector;
  // bricks the mission expects in the basket from the start
  if (w_.basket.entries.empty()) {
    for (const auto c : mc_.preloaded) {
      const int cost = w_.catalog[c].slot_cost;
      const int slot = w_.basket.first_fit(cost);
      if (slot < 0) throw Error("preloaded bricks exceed the basket capacity");
      w_.basket.entries.push_back({slot, cost, world::HeldBrick{w_.next_brick_id++, c}});
    }
  }
  auto r = mission::start(mc_, std::move(plan));
  ms_ = std::move(r.state);
  trace_.push_back({0.0, std::string(mission::top_name(ms_.top)),
                    std::string(mission::sub_name(ms_.sub)), "Start",
                    ms_.queue.empty() ? "" : mission::task_label(ms_.queue.front())});
  for (const auto& a : r.actions) start_action(a);
}

Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;

Pose Simulation::base_estimate() const { return drift_.apply(w_.base); }

BehaviourKind Simulation::behaviour() const { return ex_->kind; }

bool Simulation::finished() const {
  return ms_.top == mission::Top::Done || time() >= cfg_.max_sim_time - 1e-9;
}

nav::OccupancyGrid Simulation::costmap() const {
  std::vector<Vec3d> pts;
  for (const auto& s : scans_) pts.insert(pts.end(), s.begin(), s.end());
  return nav::build_costmap(pts, cfg_.z_low, cfg_.z_high, cfg_.grid);
}

void Simulation::emit(EventType t, std::optional<Pose> pose) {
  pending_.push_back({t, pose, base_estimate()});
  ex_->kind = BehaviourKind::Idle;
}

void Simulation::consume_events() {
  auto events = std::move(pending_);
  pending_.clear();
  for (const auto& e : events) {
    if (ms_.top == mission::Top::Done) break;
    auto r = mission::step(mc_, ms_, e);
    ms_ = std::move(r.state);
    trace_.push_back({time(), std::string(mission::top_name(ms_.top)),
                      std::string(mission::sub_name(ms_.sub)), std::string(mission::event_name(e.type)),
                      ms_.queue.empty() ? "" : mission::task_label(ms_.queue.front())});
    for (const auto& a : r.actions) start_action(a);
  }
  metrics_.skipped = ms_.skipped;
}

void Simulation::start_action(const mission::Action& a) {
  Exec& x = *ex_;
  x.action = a;
  x.started = time();
  x.missed = 0;
  x.good = 0;
  switch (a.kind) {
    case ActionKind::NavGoal:
      x.kind = BehaviourKind::Nav;
      x.plan.reset();
      x.gate = nav::GateState{cfg_.max_switches, 0.0, cfg_.gate_timeout};
      x.refine = 0;
      x.nopath = 0;
      x.retry_at = 0;
      x.replans = 0;
      x.target = effector_of(cfg_.stow_pose);
      break;
    case ActionKind::LocalApproach:
      x.kind = BehaviourKind::LocalApproach;
      x.filter = control::DistanceFilter{};
      x.tracker = vision::TrackerState{};
      x.last_cam.reset();
      x.hold = {};
      break;
    case ActionKind::DetectPose: x.kind = BehaviourKind::DetectPose; break;
    case ActionKind::Pickup:
      x.kind = BehaviourKind::Pickup;
      x.phase = Exec::Phase::Servo;
      x.sup.emplace(control::ServoMode::Pickup, w_.catalog.brick_height(), cfg_.servo,
                    cfg_.servo_tol);
      x.picked = false;
      x.pickup = PickupRecord{};
      x.pickup.t = time();
      x.pickup.color = a.color;
      if (x.reach_patch) x.pickup.perpendicular_error = control::perpendicularity_error(x.reach_patch->yaw);
      x.target = w_.effector;
      break;
    case ActionKind::Drop:
      x.kind = BehaviourKind::Drop;
      x.phase = Exec::Phase::Fetch;
      x.phase_t = time();
      x.sup.reset();
      x.target = effector_of(cfg_.stow_pose);
      break;
    case ActionKind::Finish:
      x.kind = BehaviourKind::Idle;
      metrics_.completed = true;
      break;
  }
}

// One tick: (1) mission, (2) commands, (3) clamp + gate, (4) integration,
// (5) camera, (6) contact.
void Simulation::tick() {
  if (finished()) return;
  consume_events();
  Exec& x = *ex_;
  x.pieces.clear();
  const double now = time();
  const int every = cfg_.camera_every();
  const bool camera_tick = ticks_ % every == 0;

  if (x.kind != BehaviourKind::Idle && x.kind != BehaviourKind::Nav &&
      now - x.started > cfg_.behaviour_timeout) {
    if (w_.attached && x.kind == BehaviourKind::Drop) stow_in_basket(w_, x.action.slot);
    w_.magnet_on = false;
    emit(EventType::Timeout);
  }

  // (2)-(3) commands
  switch (x.kind) {
    case BehaviourKind::Nav: {
      const Pose est = base_estimate();
      const Pose& goal = x.action.goal;
      if (nav::goal_reached(est, goal, cfg_.planner.xy_tol, cfg_.planner.yaw_tol)) {
        emit(ms_.sub == mission::Sub::Alignment ? EventType::AlignmentReached : EventType::GoalReached);
        break;
      }
      if (now - x.started > cfg_.nav_timeout) {
        emit(EventType::Timeout);
        break;
      }
      if (!x.plan || x.plan->segments.empty()) {
        if (now < x.retry_at) break;
        nav::PlannerParams pp = cfg_.planner;
        pp.switch_cost *= std::pow(2.0, x.refine);
        try {
          const auto clearance = nav::compute_clearance(costmap(), pp.robot_radius + 1.0);
          x.plan = nav::plan_path(clearance, est, goal, cfg_.limits, pp);
          ++metrics_.replans;
          ++x.replans;
        } catch (const NoPath&) {
          x.plan.reset();
          x.retry_at = now + 1.0;
          if (++x.nopath > 5) emit(EventType::Timeout);
          break;
        }
        if (x.replans > 40) {
          emit(EventType::Timeout);
          break;
        }
      }
      const auto g = nav::gate_plan(*x.plan, x.gate, cfg_.dt);
      if (g.suppressed) {
        // hold still and ask for a plan with fewer direction switches
        ++x.refine;
        x.plan.reset();
        break;
      }
      double left = cfg_.dt;
      auto& segs = x.plan->segments;
      while (left > 1e-12 && !segs.empty()) {
        auto& s = segs.front();
        const double t = std::min(left, s.duration);
        const auto c = nav::clamp_velocity(s.v, s.omega, cfg_.limits);
        x.pieces.push_back({c.v, c.omega, t});
        s.duration -= t;
        left -= t;
        if (s.duration <= 1e-12) segs.erase(segs.begin());
      }
      for (const auto& p : x.pieces) nav_log_.push_back(p);
      break;
    }
    case BehaviourKind::LocalApproach:
      if (std::abs(x.hold.v) > 0 || std::abs(x.hold.omega) > 0) {
        x.pieces.push_back({x.hold.v, x.hold.omega, cfg_.dt});
      }
      break;
    case BehaviourKind::Pickup:
    case BehaviourKind::Drop: arm_step(); break;
    default: break;
  }
  last_cmd_ = x.pieces.empty() ? nav::Twist{} : nav::Twist{x.pieces.front().v, x.pieces.front().omega};

  // (4) integrate
  for (const auto& p : x.pieces) w_.base = integrate_base(w_.base, p.v, p.omega, p.duration);
  {
    EffectorDelta d;
    d.d_pos = x.target.position - w_.effector.position;
    d.d_pitch = x.target.pitch - w_.effector.pitch;
    d.d_yaw = wrap_angle(x.target.yaw - w_.effector.yaw);
    try {
      move_effector(w_, d, cfg_.effector);
    } catch (const OutOfEnvelope&) {
      x.target = w_.effector;
    }
  }
  ++ticks_;
  w_.clock = time();
  drift_.step(cfg_.dt);

  // (5) camera
  if (camera_tick) {
    take_scan();
    if (x.kind == BehaviourKind::LocalApproach || x.kind == BehaviourKind::DetectPose ||
        ((x.kind == BehaviourKind::Pickup || x.kind == BehaviourKind::Drop) &&
         x.phase == Exec::Phase::Servo)) {
      process_frame();
    }
  }

  // (6) contact, read by the z approach on the next tick
  x.contact = world::contact_triggered(w_);
}

const RunMetrics& Simulation::run() {
  while (!finished()) tick();
  metrics_.mission_time = time();
  metrics_.completed = ms_.top == mission::Top::Done;
  metrics_.bricks_placed = static_cast<int>(w_.placed.size());
  metrics_.skipped = ms_.skipped;
  return metrics_;
}

void Simulation::take_scan() {
  const Pose est = base_estimate();
  const Iso3<double> true_to_est = est.isometry() * w_.base.isometry().inverse();
  std::vector<Vec3d> pts;
  for (const auto& b : w_.boxes()) {
    if ((b.center - w_.base.xy()).norm() > cfg_.scan_range + b.length) continue;
    const auto c = b.corners();
    for (int i = 0; i < 4; ++i) {
      const Vec2d p = c[i], q = c[(i + 1) % 4];
      const int n = std::max(1, static_cast<int>(std::ceil((q - p).norm() / 0.05)));
      for (int k = 0; k < n; ++k) {
        const Vec2d s = p + (q - p) * (static_cast<double>(k) / n);
        if ((s - w_.base.xy()).norm() > cfg_.scan_range) continue;
        pts.push_back(true_to_est * Vec3d(s.x(), s.y(), b.z_top() - 0.02));
      }
      // ground return next to the box, filtered out by the height band
      pts.push_back(true_to_est * Vec3d(p.x(), p.y(), 0.05));
    }
  }
  scans_.push_back(std::move(pts));
  while (static_cast<int>(scans_.size()) > cfg_.scan_window) scans_.pop_front();
}

// ---------------------------------------------------------------- vision

namespace {

std::vector<vision::PatchCandidate> patch_candidates(const render::LabelImage& labels,
                                                     world::Color color,
                                                     const geometry::Intrinsics& k) {
  std::vector<vision::PatchCandidate> out;
  const double min_area = vision::scaled_min_stack_area(k);
  for (const auto& s : vision::detect_stacks(labels, color, min_area, k)) {
    auto c = vision::extract_patch_candidates(labels, s.hull, k);
    for (auto& p : c) out.push_back(std::move(p));
  }
  return out;
}

// Projects a map point into the camera; nullopt behind the camera.
std::optional<geometry::Pixel> project(const Iso3<double>& cam_to_map, const Vec3d& p,
                                       const geometry::Intrinsics& k) {
  geometry::Pixel px;
  if (!geometry::project_point<double>(cam_to_map.inverse() * p, k, px)) return std::nullopt;
  return px;
}

}  // namespace

void Simulation::process_frame() {
  Exec& x = *ex_;
  const auto& k = cfg_.camera;
  const Iso3<double> cam_map = w_.camera_in_map(cfg_.camera_offset);
  render::RgbdFrame frame = render::render_rgbd(w_, cam_map, k, cfg_.render);
  if (cfg_.noise.sigma_px > 0 || cfg_.noise.depth_coeff > 0) {
    frame = render::apply_sensor_noise(frame, sensor_rng_,
                                       {cfg_.noise.sigma_px, cfg_.noise.depth_coeff, 16});
  }
  ++metrics_.vision_frames;
  if (!cfg_.frame_dir.empty()) {
    std::filesystem::create_directories(cfg_.frame_dir);
    char name[64];
    std::snprintf(name, sizeof name, "frame_%06d", metrics_.vision_frames);
    const std::filesystem::path base = std::filesystem::path(cfg_.frame_dir) / name;
    render::write_label_ppm(frame.labels, base.string() + "_labels.ppm");
    render::write_depth_pgm(frame.depth, base.string() + "_depth.pgm");
  }
  const vision::CameraState cs{world::camera_in_base(w_.effector, cfg_.camera_offset), k};
  const double h_b = w_.catalog.brick_height();
  const double frame_dt = time() - x.last_frame_t;
  x.last_frame_t = time();

  // ego-motion prediction of the tracks through the patch plane
  if (x.last_cam) {
    const Iso3<double> prev = *x.last_cam;
    const double h = x.plane_h;
    vision::predict_tracks(x.tracker, [&](const geometry::Pixel& p) {
      const Vec3d m = geometry::pixel_to_metric(p, k) * 1e-3;
      const Vec3d o = prev.translation(), q = prev * m;
      if (std::abs(o.z() - q.z()) < 1e-9) return p;
      const auto hit = geometry::ray_height_intersect<double>(o, q, h);
      if (!hit.in_front()) return p;
      return project(cam_map, {hit.xy.x(), hit.xy.y(), h}, k).value_or(p);
    });
  }
  x.last_cam = cam_map;

  const auto color = x.action.color;
  switch (x.kind) {
    case BehaviourKind::LocalApproach: {
      const control::ApproachGains& g = x.action.target == Target::Stack       ? cfg_.stack_approach
                                        : x.action.target == Target::Patch     ? cfg_.patch_approach
                                                                               : cfg_.footprint_approach;
      std::optional<geometry::Pixel> pos;
      std::optional<double> range;
      std::optional<geometry::PatchPose> patch;
      if (x.action.target == Target::Stack) {
        const auto st = vision::detect_stacks(frame.labels, color, vision::scaled_min_stack_area(k), k);
        if (!st.empty()) {
          // columns of one stack show up as separate blobs: use them all
          double area = 0, cx = 0, cy = 0;
          for (const auto& o : st) {
            area += o.area;
            cx += o.area * o.position.x_px;
            cy += o.area * o.position.y_px;
          }
          pos = geometry::Pixel{cx / area, cy / area};
          const auto cloud = render::cloud_from_depth(frame.depth, k, cs.camera_to_base);
          std::vector<double> r;
          for (const auto& o : st) {
            const auto& px = o.region.pixels;
            for (size_t i = 0; i < px.size(); i += 4) {
              if (cloud.valid(px[i].x(), px[i].y())) {
                r.push_back(cloud.at(px[i].x(), px[i].y()).head<2>().cast<double>().norm());
              }
            }
          }
          if (!r.empty()) range = median(r);
        }
      } else if (x.action.target == Target::Footprint) {
        try {
          const auto p = vision::detect_footprint(frame.labels, k);
          const auto hit = vision::pixel_to_plane(p, cs, 0.0);
          if (hit.in_front()) {
            pos = p;
            range = hit.xy.norm();
          }
        } catch (const NotVisible&) {
        }
      } else {
        auto sel = vision::track_and_select(x.tracker, patch_candidates(frame.labels, color, k),
                                            cfg_.scoring, cfg_.tracker);
        if (sel) {
          try {
            const auto cloud = render::cloud_from_depth(frame.depth, k, cs.camera_to_base);
            const auto est = vision::estimate_patch_pose(*sel, cs, cloud, h_b);
            pos = sel->position;
            patch = est.pose;
            x.plane_h = est.pose.center.z();
            range = est.pose.center.head<2>().norm();
          } catch (const Error&) {
          }
        }
      }
      x.filter = control::filter_step(x.filter, frame_dt > 0 ? frame_dt : cfg_.camera_period, range);
      if (!pos || !range) {
        x.hold = {};
        if (++x.missed > 8) emit(EventType::PatchLost);
        break;
      }
      x.missed = 0;
      const auto c = control::approach_command(pos->x_px, pos->y_px, x.filter.estimate(), g);
      const auto t = nav::clamp_velocity(c.v_x, c.omega_z, cfg_.limits);
      x.hold = t;
      x.target.pitch = std::clamp(w_.effector.pitch + c.d_theta, 0.0, kPi / 2);
      const bool near = std::abs(x.filter.estimate() - g.d_r) < cfg_.approach_tol &&
                        std::abs(pos->x_px) < 15.0;
      x.good = near ? x.good + 1 : 0;
      if (x.good >= 2) {
        x.hold = {};
        if (x.action.target == Target::Patch) {
          x.reach_patch = patch;
          control::ReachLimits lim;
          lim.r_min = cfg_.effector.r_min;
          lim.r_max = cfg_.effector.r_max;
          if (patch && control::check_reachability(*patch, lim)) {
            emit(EventType::WithinReach);
          } else {
            emit(EventType::PatchLost);
          }
        } else {
          emit(EventType::ObjectDetected);
        }
      }
      break;
    }
    case BehaviourKind::DetectPose: {
      const Pose est = base_estimate();
      if (x.action.target == Target::Footprint) {
        try {
          const auto fe = vision::estimate_footprint_pose(frame.labels, cs);
          if (fe.right_end_visible) {
            const Vec2d a = base_to_map(est, fe.anchor.xy());
            const Pose anchor = Pose::planar(a.x(), a.y(), est.yaw + fe.anchor.yaw);
            const Pose& truth = w_.footprint.anchor;
            FootprintRecord r;
            r.t = time();
            r.distance = (truth.xy() - w_.base.xy()).norm();
            r.orientation = wrap_angle(truth.yaw - w_.base.yaw);
            r.anchor_error = (anchor.xy() - truth.xy()).norm();
            r.yaw_error = wrap_angle(anchor.yaw - truth.yaw);
            metrics_.footprints.push_back(r);
            emit(EventType::PoseEstimated, anchor);
            break;
          }
        } catch (const Error&) {
        }
      } else {
        auto sel = vision::track_and_select(x.tracker, patch_candidates(frame.labels, color, k),
                                            cfg_.scoring, cfg_.tracker);
        if (sel) {
          try {
            const auto cloud = render::cloud_from_depth(frame.depth, k, cs.camera_to_base);
            const auto pe = vision::estimate_patch_pose(*sel, cs, cloud, h_b);
            x.plane_h = pe.pose.center.z();
            const Vec2d c = base_to_map(est, pe.pose.center.head<2>());
            const Pose pose = Pose::planar(c.x(), c.y(), wrap_axis(est.yaw + pe.pose.yaw),
                                           pe.pose.center.z());
            // score against the nearest true patch
            double best = std::numeric_limits<double>::infinity();
            Pose truth;
            for (int s = 0; s < static_cast<int>(w_.stacks.size()); ++s) {
              for (int i = 0; i < w_.stacks[s].size(); ++i) {
                if (w_.stacks[s].picked[i] || !w_.stacks[s].exposed(i)) continue;
                const Pose t = world::ground_truth_patch_pose(w_, s, i);
                const double d = (t.xy() - c).norm();
                if (d < best) {
                  best = d;
                  truth = t;
                }
              }
            }
            if (std::isfinite(best)) {
              DetectionRecord r;
              r.t = time();
              r.color = color;
              r.distance = (truth.xy() - w_.base.xy()).norm();
              r.distance_error = best;
              r.orientation = wrap_axis(truth.yaw - w_.base.yaw);
              r.orientation_error = wrap_axis(pose.yaw - truth.yaw);
              metrics_.detections.push_back(r);
            }
            emit(EventType::PoseEstimated, pose);
            break;
          } catch (const Error&) {
          }
        }
      }
      if (time() - x.started > 3.0) emit(EventType::PatchLost);
      break;
    }
    case BehaviourKind::Pickup: servo_frame(frame, cs, cam_map); break;
    case BehaviourKind::Drop: servo_frame(frame, cs, cam_map); break;
    default: break;
  }
}

// ---------------------------------------------------------------- arm

namespace {

// Camera minus gripper, horizontal, in the tool frame.
Vec2d tool_camera_offset(const world::Effector& e, double offset) {
  world::Effector z = e;
  z.position.setZero();
  const Vec3d t = world::camera_in_base(z, offset).translation();
  return rot2(-e.yaw, t.head<2>());
}

}  // namespace

void Simulation::apply_servo(const control::ServoCommand& c) {
  Exec& x = *ex_;
  world::Effector t = w_.effector;
  const Vec2d d = rot2(w_.effector.yaw, {c.dx, c.dy});
  t.position += Vec3d(d.x(), d.y(), c.dz);
  t.pitch = std::clamp(t.pitch + c.d_theta, 0.0, kPi / 2);
  t.yaw = wrap_angle(t.yaw + c.d_psi);
  if (!in_envelope(t.position, cfg_.effector)) throw OutOfEnvelope("servo target out of reach");
  x.target = t;
}

void Simulation::servo_frame(const render::RgbdFrame& frame, const vision::CameraState& cs,
                             const Iso3<double>& cam_map) {
  Exec& x = *ex_;
  const auto& k = cfg_.camera;
  control::ServoInput in;
  in.theta = w_.effector.pitch;
  in.camera_z = cam_map.translation().z();
  in.gripper_z = w_.gripper_in_map().z();
  in.camera_offset = tool_camera_offset(w_.effector, cfg_.camera_offset);

  if (x.kind == BehaviourKind::Pickup) {
    auto sel = vision::track_and_select(x.tracker, patch_candidates(frame.labels, x.action.color, k),
                                        cfg_.scoring, cfg_.tracker);
    if (sel) {
      control::ServoObservation o;
      o.position = {sel->rect.center.x(), sel->rect.center.y()};
      o.psi = sel->rect.angle;
      const int u = std::clamp(static_cast<int>(std::floor(o.position.x_px + k.cx)), 0, k.width - 1);
      const int v = std::clamp(static_cast<int>(std::floor(o.position.y_px + k.cy)), 0, k.height - 1);
      const float d = frame.depth(v, u);
      if (d != render::kNoReturn) o.depth = d;
      in.target = o;
    }
  } else {
    // drop: the target cell predicted from the memorized wall pose, pulled
    // onto the visible pattern strip when the first row is still open
    const Pose est = base_estimate();
    const Pose& cell = x.action.cell;
    const Iso3<double> cam_est = est.isometry() * cs.camera_to_base;
    const auto pc = project(cam_est, {cell.x, cell.y, cell.z}, k);
    const Vec2d ax(std::cos(cell.yaw), std::sin(cell.yaw));
    const auto pa = project(cam_est, {cell.x + 0.3 * ax.x(), cell.y + 0.3 * ax.y(), cell.z}, k);
    if (pc && pa) {
      double psi = wrap_axis(std::atan2(pa->y_px - pc->y_px, pa->x_px - pc->x_px));
      Vec2d p = pc->vec();
      if (cell.z < 1e-6) {
        if (const auto strip = vision::detect_pattern_strip(frame.labels, k, 400.0)) {
          if (strip->length >= 1.5 * strip->width) psi = strip->angle;
          const Vec2d a(std::cos(psi), std::sin(psi));
          p = strip->center + a * a.dot(p - strip->center);
        }
      }
      control::ServoObservation o;
      o.position = {p.x(), p.y()};
      o.psi = psi;
      in.target = o;
    }
    in.release_z = cell.z + w_.catalog.brick_height();
  }

  try {
    const auto c = x.sup->step(in);
    apply_servo(c);
    if (x.sup->stage() == control::ServoStage::ZApproach) {
      x.phase = Exec::Phase::ZApproach;
      if (x.kind == BehaviourKind::Pickup) w_.magnet_on = true;
    }
  } catch (const Error& e) {
    servo_failed(e.what());
  }
}

void Simulation::servo_failed(const std::string& why) {
  Exec& x = *ex_;
  if (x.kind == BehaviourKind::Pickup) {
    w_.magnet_on = false;
    x.pickup.failure = why;
    x.pickup.success = false;
    metrics_.pickups.push_back(x.pickup);
    emit(EventType::PickupFailed);
  } else {
    if (w_.attached) stow_in_basket(w_, x.action.slot);
    DropRecord r;
    r.t = time();
    r.failure = why;
    metrics_.drops.push_back(r);
    emit(EventType::PatchLost);
  }
}

// Per-tick arm sequencing outside the frame-driven servo stages.
void Simulation::arm_step() {
  Exec& x = *ex_;
  const bool arrived = same_effector(w_.effector, x.target);
  switch (x.phase) {
    case Exec::Phase::ZApproach: {
      if (!arrived) return;
      control::ServoInput in;
      in.theta = w_.effector.pitch;
      in.camera_z = w_.camera_in_map(cfg_.camera_offset).translation().z();
      in.gripper_z = w_.gripper_in_map().z();
      in.camera_offset = tool_camera_offset(w_.effector, cfg_.camera_offset);
      in.contact = x.contact;
      in.release_z = x.action.cell.z + w_.catalog.brick_height();
      try {
        const auto c = x.sup->step(in);
        if (x.sup->stage() == control::ServoStage::Done) {
          finish_servo();
        } else {
          apply_servo(c);
        }
      } catch (const Error& e) {
        servo_failed(e.what());
      }
      return;
    }
    case Exec::Phase::Grasped:
      // lift, swing to the basket and back to the stow pose
      if (arrived && time() - x.phase_t >= cfg_.stow_time) {
        if (x.kind == BehaviourKind::Pickup) {
          stow_in_basket(w_, x.action.slot);
          emit(EventType::PickupDone);
        } else {
          emit(EventType::DropDone);
        }
      }
      return;
    case Exec::Phase::Fetch:
      if (arrived && time() - x.phase_t >= cfg_.stow_time) {
        try {
          world::fetch_from_basket(w_, x.action.slot);
        } catch (const Error& e) {
          servo_failed(e.what());
          return;
        }
        // camera straight over the cell, gripper axis along the wall
        const Pose est = base_estimate();
        const Pose& cell = x.action.cell;
        world::Effector t;
        t.pitch = kPi / 2;
        t.yaw = wrap_axis(cell.yaw - est.yaw - kPi / 2);
        const Vec2d cb = map_to_base(est, cell.xy());
        const Vec2d off = rot2(t.yaw, tool_camera_offset(t, cfg_.camera_offset));
        t.position = Vec3d(cb.x() - off.x(), cb.y() - off.y(),
                           cell.z + w_.catalog.brick_height() + cfg_.drop_clearance);
        if (!in_envelope(t.position, cfg_.effector)) {
          servo_failed("drop cell out of reach");
          return;
        }
        x.target = t;
        x.phase = Exec::Phase::Move;
        x.sup.emplace(control::ServoMode::Drop, w_.catalog.brick_height(), cfg_.servo, cfg_.servo_tol);
      }
      return;
    case Exec::Phase::Move:
      if (arrived) x.phase = Exec::Phase::Servo;
      return;
    default: return;
  }
}

void Simulation::finish_servo() {
  Exec& x = *ex_;
  if (x.kind == BehaviourKind::Pickup) {
    try {
      const auto g = world::attach_brick(w_);
      x.pickup.success = true;
      x.pickup.grasp_offset = g.offset;
      x.pickup.grasp_yaw_error = g.yaw_err;
      metrics_.pickups.push_back(x.pickup);
    } catch (const GraspFailed& e) {
      w_.magnet_on = false;
      x.pickup.failure = "grasp failed";
      x.pickup.grasp_offset = e.offset;
      x.pickup.grasp_yaw_error = e.yaw_err;
      metrics_.pickups.push_back(x.pickup);
      emit(EventType::PickupFailed);
      return;
    } catch (const Error& e) {
      servo_failed(e.what());
      return;
    }
  } else {
    DropRecord r;
    r.t = time();
    r.placement = world::place_brick(w_);
    w_.magnet_on = false;
    r.success = r.placement.inside_fraction >= 0.5;
    metrics_.drops.push_back(r);
  }
  x.phase = Exec::Phase::Grasped;
  x.phase_t = time();
  x.target = effector_of(cfg_.stow_pose);
}

}  // namespace wb::sim

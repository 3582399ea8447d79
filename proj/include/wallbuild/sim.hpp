#pragma once

// Deterministic time-stepped simulation: unicycle base, rate-limited end
// effector, localization drift, camera scheduling with sensor noise, and the
// executive that turns mission actions into nav/vision/servo behaviours and
// their outcomes back into mission events.

#include "wallbuild/control.hpp"
#include "wallbuild/mission.hpp"
#include "wallbuild/nav.hpp"
#include "wallbuild/render.hpp"
#include "wallbuild/vision.hpp"
#include "wallbuild/world.hpp"

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace wb {

class OutOfEnvelope : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::sim {

using geometry::Pose;
using geometry::Vec2d;
using geometry::Vec3d;

struct NoiseConfig {
  double sigma_px{0};     // label boundary jitter, pixels
  double depth_coeff{0};  // depth sigma = a * d^2
  double sigma_xy{0};     // localization drift, stationary std per axis
  double sigma_yaw{0};
  double drift_tau{30.0};  // drift correlation time, s

  static NoiseConfig off() { return {}; }
  static NoiseConfig paper_like() { return {2.0, 0.0004, 0.05, geometry::deg2rad(1.0), 30.0}; }
  bool any() const { return sigma_px > 0 || depth_coeff > 0 || sigma_xy > 0 || sigma_yaw > 0; }
};

struct EffectorLimits {
  double max_step{0.05};                      // m per tick, per axis
  double max_turn{geometry::deg2rad(6.0)};    // rad per tick
  double r_min{0.3};
  double r_max{1.46};
  double z_min{0.0};
  double z_max{1.8};
};

struct SimConfig {
  double dt{0.05};
  double camera_period{0.2};
  std::uint64_t seed{1};
  NoiseConfig noise;
  EffectorLimits effector;
  geometry::Intrinsics camera{geometry::Intrinsics::centered(640, 480, 460.0)};
  double camera_offset{0.08};
  render::RenderOptions render;

  nav::GridSpec grid;  // arena covered by the costmap
  nav::VelocityLimits limits;
  nav::PlannerParams planner;
  int max_switches{2};
  double gate_timeout{5.0};
  double z_low{0.15};
  double z_high{1.0};
  int scan_window{30};
  double scan_range{6.0};

  control::ApproachGains stack_approach{0.5, 0.004, 0.002, 1.6};
  control::ApproachGains patch_approach{0.5, 0.004, 0.002, 0.9};
  control::ApproachGains footprint_approach{0.5, 0.004, 0.002, 1.6};
  double approach_tol{0.05};
  control::ServoGains servo;
  control::ServoTolerances servo_tol;
  vision::ScoringWeights scoring;
  vision::TrackerParams tracker;

  Pose stow_pose{0.35, 0.0, 1.1, 0.0, 0.35, 0.0};  // effector position + pitch/yaw
  double stow_time{3.0};                          // arm motion to or from the basket
  double drop_clearance{0.45};                    // camera height over the cell top for the drop
  double nav_timeout{150.0};
  double behaviour_timeout{60.0};
  double max_sim_time{1800.0};

  std::string frame_dir;  // dumps vision frames when set

  /// Throws Error unless dt > 0 and the camera period is a multiple of dt.
  void validate() const;
  int camera_every() const;
};

/// Exact arc integration of the unicycle model.
Pose integrate_base(const Pose& p, double v, double omega, double dt);

struct EffectorDelta {
  Vec3d d_pos{Vec3d::Zero()};  // in L_B
  double d_pitch{0};
  double d_yaw{0};
};

/// Rate-limits each component and applies it. Throws OutOfEnvelope (world
/// unchanged) if the result leaves the reach envelope.
void move_effector(world::WorldState& w, const EffectorDelta& d, const EffectorLimits& lim);

/// Gaussian perturbation of position and yaw.
Pose localization_estimate(const Pose& truth, std::mt19937_64& rng, double sigma_xy, double sigma_yaw);

/// First-order Gauss-Markov drift of the localization error.
class LocalizationDrift {
 public:
  LocalizationDrift(double sigma_xy, double sigma_yaw, double tau, std::mt19937_64 rng);
  void step(double dt);
  Pose apply(const Pose& truth) const;
  Eigen::Vector3d error() const { return e_; }

 private:
  double sxy_, syaw_, tau_;
  std::mt19937_64 rng_;
  Eigen::Vector3d e_{Eigen::Vector3d::Zero()};
};

/// Independent stream per subsystem label, reproducible for a seed.
std::mt19937_64 make_stream(std::uint64_t seed, const std::string& label);

struct TraceRecord {
  double t{0};
  std::string state;
  std::string sub_state;
  std::string event;
  std::string task;
};

std::string trace_line(const TraceRecord& r);

struct DetectionRecord {
  double t{0};
  world::Color color{world::Color::Red};
  double distance{0};           // true robot-to-patch distance
  double distance_error{0};     // estimated vs true patch center, m
  double orientation{0};        // true patch axis relative to the robot heading, rad
  double orientation_error{0};  // rad
};

struct PickupRecord {
  double t{0};
  world::Color color{world::Color::Red};
  bool success{false};
  double perpendicular_error{0};  // at the reach check, rad
  double grasp_offset{0};
  double grasp_yaw_error{0};
  std::string failure;
};

struct FootprintRecord {
  double t{0};
  double distance{0};     // true robot-to-anchor distance
  double orientation{0};  // wall axis relative to the robot heading, rad
  double anchor_error{0};
  double yaw_error{0};
};

struct DropRecord {
  double t{0};
  world::PlacementRecord placement;
  bool success{false};  // inside fraction >= 0.5
  std::string failure;
};

struct RunMetrics {
  std::vector<DetectionRecord> detections;
  std::vector<PickupRecord> pickups;
  std::vector<FootprintRecord> footprints;
  std::vector<DropRecord> drops;
  std::vector<mission::SkipRecord> skipped;
  bool completed{false};
  double mission_time{0};
  int bricks_placed{0};
  int vision_frames{0};
  int replans{0};
};

enum class BehaviourKind { Idle, Nav, LocalApproach, DetectPose, Pickup, Drop };

class Simulation {
 public:
  Simulation(world::WorldState w, mission::MissionConfig mc, std::vector<mission::BrickTask> plan,
             SimConfig cfg);
  ~Simulation();
  Simulation(Simulation&&) noexcept;

  void tick();
  /// Ticks until the mission is done or the clock passes max_sim_time.
  const RunMetrics& run();
  bool finished() const;

  double time() const { return static_cast<double>(ticks_) * cfg_.dt; }
  std::int64_t ticks() const { return ticks_; }
  const world::WorldState& world() const { return w_; }
  const mission::MissionState& mission() const { return ms_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const RunMetrics& metrics() const { return metrics_; }
  Pose base_estimate() const;
  BehaviourKind behaviour() const;
  /// Last command sent to the base after clamp and gate.
  nav::Twist last_command() const { return last_cmd_; }
  /// Vision frames processed so far.
  int frames() const { return metrics_.vision_frames; }

  /// Costmap from the retained scans.
  nav::OccupancyGrid costmap() const;
  /// Every (v, omega, duration) piece executed while following a nav plan.
  const std::vector<nav::Segment>& nav_log() const { return nav_log_; }

 private:
  struct Exec;

  void consume_events();
  void start_action(const mission::Action& a);
  void emit(mission::EventType t, std::optional<Pose> pose = std::nullopt);
  void take_scan();
  void process_frame();
  void servo_frame(const render::RgbdFrame& frame, const vision::CameraState& cs,
                   const geometry::Iso3<double>& cam_map);
  void apply_servo(const control::ServoCommand& c);
  void servo_failed(const std::string& why);
  void finish_servo();
  void arm_step();

  world::WorldState w_;
  mission::MissionConfig mc_;
  SimConfig cfg_;
  mission::MissionState ms_;
  std::int64_t ticks_{0};
  std::vector<mission::Event> pending_;
  std::vector<TraceRecord> trace_;
  RunMetrics metrics_;
  LocalizationDrift drift_;
  std::mt19937_64 sensor_rng_;
  std::deque<std::vector<Vec3d>> scans_;
  nav::Twist last_cmd_;
  std::vector<nav::Segment> nav_log_;
  std::unique_ptr<Exec> ex_;
};

}  // namespace wb::sim

#pragma once

// Local object approach (proportional image-space laws with a Kalman-filtered
// distance) and the four-stage eye-in-hand visual servo used for pickup and
// drop.

#include "wallbuild/geometry.hpp"

#include <Eigen/Core>

#include <optional>
#include <string_view>

namespace wb {

class PatchLost : public Error {
 public:
  PatchLost() : Error("servo target lost") {}
};

class DepthLost : public Error {
 public:
  DepthLost() : Error("no depth reading for the z approach") {}
};

class ContactMissed : public Error {
 public:
  ContactMissed() : Error("z approach passed the target surface without contact") {}
};

}  // namespace wb

namespace wb::control {

using geometry::Pixel;
using geometry::Vec2d;

struct ApproachGains {
  double K_dx{0.5};
  double K_ximg{0.004};
  double K_yimg{0.002};
  double d_r{1.6};
};

struct ServoGains {
  double K_theta{0.5};
  double K_yp{0.001};
  double K_xp{0.002};
  double K_psi{0.5};
  double K_dz{0.25};
  double theta_d{geometry::kPi<double> / 2};
};

struct ServoTolerances {
  double eps_y{5.0};
  double eps_x{5.0};
  double eps_psi{geometry::deg2rad(2.0)};
  double eps_theta{geometry::deg2rad(0.5)};
};

/// Constant-velocity Kalman filter on the distance to the approached object.
struct DistanceFilter {
  Eigen::Vector2d x{Eigen::Vector2d::Zero()};  // (d, d_dot)
  Eigen::Matrix2d P{Eigen::Matrix2d::Identity() * 1e3};
  double q{0.05};  // white-acceleration spectral density
  double r{0.01};  // measurement variance
  bool initialized{false};

  double estimate() const { return x(0); }
};

/// Predict over dt, then fuse the measurement if one is present.
DistanceFilter filter_step(DistanceFilter f, double dt, std::optional<double> measurement);

struct ApproachCommand {
  double v_x{0};
  double omega_z{0};
  double d_theta{0};
};

ApproachCommand approach_command(double x_img, double y_img, double d_hat, const ApproachGains& g);

struct XPitchOut {
  double d_theta{0};
  double d_x{0};
  bool done{false};
};

XPitchOut servo_x_pitch(double theta, double y_p, const ServoGains& g,
                        const ServoTolerances& tol = {});

struct YYawOut {
  double d_y{0};
  double d_psi{0};
  bool done{false};
};

YYawOut servo_y_yaw(double x_p, double psi_p, const ServoGains& g, const ServoTolerances& tol = {});

/// Nearest positive multiple of the brick height.
double z_snap(double d_meas, double h_b);

struct ZOut {
  double d_z{0};
  bool done{false};
};

ZOut z_approach(double d_z, bool contact, const ServoGains& g);

struct ReachLimits {
  double r_min{0.3};
  double r_max{1.46};
  double yaw_tol{geometry::deg2rad(26.0)};
};

/// Planar range from the arm base (the L_B origin) and perpendicularity
/// between the robot heading and the patch's long axis.
bool check_reachability(const geometry::PatchPose& patch_in_base, const ReachLimits& lim = {});
double perpendicularity_error(double patch_yaw_in_base);

enum class ServoStage { XPitch, YServo, YawServo, ZApproach, Done };
std::string_view stage_name(ServoStage s);

enum class ServoMode {
  Pickup,  // ends on contact
  Drop,    // centers the pattern strip, ends at the release height
};

struct ServoObservation {
  Pixel position;  // target in signed image coordinates
  double psi{0};   // axis angle in the image
  /// Range along the optical axis at the target, if the depth had a return.
  std::optional<double> depth;
};

struct ServoInput {
  std::optional<ServoObservation> target;
  double theta{0};
  double camera_z{0};
  double gripper_z{0};
  /// Camera position minus gripper position, horizontal, in the tool frame.
  Vec2d camera_offset{Vec2d::Zero()};
  bool contact{false};
  /// Gripper height at which a held brick is released (drop mode).
  double release_z{0};
};

/// Per-frame displacement request. dx/dy are in the tool frame (x toward
/// image-up, y toward image-left at nadir), dz positive up.
struct ServoCommand {
  double dx{0}, dy{0}, dz{0}, d_theta{0}, d_psi{0};
  ServoStage stage{ServoStage::XPitch};
};

class ServoSupervisor {
 public:
  ServoSupervisor(ServoMode mode, double brick_height, const ServoGains& g = {},
                  const ServoTolerances& tol = {}, int max_missed = 3);

  /// One control step. Throws PatchLost once the target is missing for more
  /// than max_missed consecutive steps before the z approach.
  ServoCommand step(const ServoInput& in);

  ServoStage stage() const { return stage_; }
  ServoMode mode() const { return mode_; }
  /// Snapped height of the target surface, known once the z approach starts.
  std::optional<double> target_height() const { return target_height_; }

 private:
  void advance();

  ServoMode mode_;
  double h_b_;
  ServoGains g_;
  ServoTolerances tol_;
  int max_missed_;
  int missed_{0};
  ServoStage stage_{ServoStage::XPitch};
  std::optional<double> last_depth_;
  double last_camera_z_{0};
  std::optional<double> target_height_;
  bool shifted_{false};
};

}  // namespace wb::control

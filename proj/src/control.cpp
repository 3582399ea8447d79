#include "wallbuild/control.hpp"

#include <algorithm>
#include <cmath>

namespace wb::control {

using geometry::kPi;
using geometry::wrap_axis;

DistanceFilter filter_step(DistanceFilter f, double dt, std::optional<double> z) {
  if (!(dt > 0)) throw Error("filter_step needs dt > 0");
  if (!f.initialized) {
    if (z) {
      f.x << *z, 0.0;
      f.P(0, 0) = f.r;
      f.P(0, 1) = f.P(1, 0) = 0.0;
      f.initialized = true;
    }
    return f;
  }
  Eigen::Matrix2d F;
  F << 1, dt, 0, 1;
  Eigen::Matrix2d Q;
  Q << dt * dt * dt / 3, dt * dt / 2, dt * dt / 2, dt;
  f.x = F * f.x;
  f.P = F * f.P * F.transpose() + f.q * Q;

  if (z) {
    const double s = f.P(0, 0) + f.r;
    if (s > 1e-15) {
      const Eigen::Vector2d k = f.P.col(0) / s;
      f.x += k * (*z - f.x(0));
      Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
      ikh.col(0) -= k;
      // Joseph form keeps P symmetric positive semi-definite
      f.P = ikh * f.P * ikh.transpose() + f.r * k * k.transpose();
    }
  }
  f.P = ((f.P + f.P.transpose()) / 2).eval();
  return f;
}

ApproachCommand approach_command(double x_img, double y_img, double d_hat, const ApproachGains& g) {
  if (!(d_hat > 0)) throw Error("approach_command needs a positive distance");
  return {-g.K_dx * (g.d_r - d_hat), -g.K_ximg * x_img, g.K_yimg * y_img};
}

XPitchOut servo_x_pitch(double theta, double y_p, const ServoGains& g, const ServoTolerances& tol) {
  const double e = g.theta_d - theta;
  return {g.K_theta * e, -g.K_yp * y_p, std::abs(e) <= tol.eps_theta && std::abs(y_p) <= tol.eps_y};
}

YYawOut servo_y_yaw(double x_p, double psi_p, const ServoGains& g, const ServoTolerances& tol) {
  return {-g.K_xp * x_p, -g.K_psi * psi_p,
          std::abs(x_p) <= tol.eps_x && std::abs(psi_p) <= tol.eps_psi};
}

double z_snap(double d, double h_b) {
  if (!(d > 0) || !(h_b > 0)) throw Error("z_snap needs positive inputs");
  return std::max(1.0, std::round(d / h_b)) * h_b;
}

ZOut z_approach(double d_z, bool contact, const ServoGains& g) {
  if (contact) return {0.0, true};
  return {g.K_dz * d_z, false};
}

double perpendicularity_error(double patch_yaw) {
  // heading is perpendicular to the long axis when the axis lies along y_B
  return std::abs(wrap_axis(patch_yaw - kPi<double> / 2));
}

bool check_reachability(const geometry::PatchPose& p, const ReachLimits& lim) {
  const double range = p.center.head<2>().norm();
  return range >= lim.r_min && range <= lim.r_max && perpendicularity_error(p.yaw) <= lim.yaw_tol;
}

std::string_view stage_name(ServoStage s) {
  switch (s) {
    case ServoStage::XPitch: return "XPitch";
    case ServoStage::YServo: return "YServo";
    case ServoStage::YawServo: return "YawServo";
    case ServoStage::ZApproach: return "ZApproach";
    case ServoStage::Done: return "Done";
  }
  return "?";
}

ServoSupervisor::ServoSupervisor(ServoMode mode, double brick_height, const ServoGains& g,
                                 const ServoTolerances& tol, int max_missed)
    : mode_(mode), h_b_(brick_height), g_(g), tol_(tol), max_missed_(max_missed) {}

void ServoSupervisor::advance() {
  stage_ = static_cast<ServoStage>(static_cast<int>(stage_) + 1);
  // the drop keeps the along-wall position from the metric target
  if (stage_ == ServoStage::YServo && mode_ == ServoMode::Drop) stage_ = ServoStage::YawServo;
}

ServoCommand ServoSupervisor::step(const ServoInput& in) {
  ServoCommand cmd;
  cmd.stage = stage_;
  if (stage_ == ServoStage::Done) return cmd;

  if (stage_ != ServoStage::ZApproach) {
    if (!in.target) {
      if (++missed_ > max_missed_) throw PatchLost();
      return cmd;
    }
    missed_ = 0;
    if (in.target->depth) {
      last_depth_ = in.target->depth;
      last_camera_z_ = in.camera_z;
    }
    const auto& t = *in.target;
    switch (stage_) {
      case ServoStage::XPitch: {
        const auto o = servo_x_pitch(in.theta, t.position.y_px, g_, tol_);
        cmd.d_theta = o.d_theta;
        cmd.dx = o.d_x;
        if (o.done) advance();
        break;
      }
      case ServoStage::YServo: {
        const auto o = servo_y_yaw(t.position.x_px, 0.0, g_, tol_);
        cmd.dy = o.d_y;
        if (o.done) advance();
        break;
      }
      case ServoStage::YawServo: {
        const auto o = servo_y_yaw(0.0, t.psi, g_, tol_);
        cmd.d_psi = o.d_psi;
        if (o.done) advance();
        break;
      }
      default: break;
    }
    if (stage_ == ServoStage::ZApproach) {
      if (mode_ == ServoMode::Pickup) {
        if (!last_depth_) throw DepthLost();
        target_height_ = z_snap(last_camera_z_ - *last_depth_, h_b_);
      } else {
        target_height_ = in.release_z;
      }
    }
    return cmd;
  }

  // z approach: first bring the gripper where the camera was
  if (!shifted_) {
    shifted_ = true;
    cmd.dx = in.camera_offset.x();
    cmd.dy = in.camera_offset.y();
    return cmd;
  }
  const double d_z = in.gripper_z - *target_height_;
  if (mode_ == ServoMode::Pickup) {
    const auto o = z_approach(d_z, in.contact, g_);
    if (o.done) {
      stage_ = ServoStage::Done;
      cmd.stage = stage_;
      return cmd;
    }
    if (d_z < -h_b_ / 2) throw ContactMissed();
    // keep creeping down when the snapped height is a hair off
    cmd.dz = -std::max(o.d_z, 0.004);
  } else {
    if (d_z <= 0.002) {
      stage_ = ServoStage::Done;
      cmd.stage = stage_;
      return cmd;
    }
    cmd.dz = -std::min(d_z, std::max(g_.K_dz * d_z, 0.004));
  }
  return cmd;
}

}  // namespace wb::control

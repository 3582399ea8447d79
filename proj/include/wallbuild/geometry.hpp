#pragma once

// Frames, rigid transforms, the pinhole camera model and the projection
// routines that recover metric patch poses from image endpoints.
//
// Conventions:
//   L_M  map frame, z up.
//   L_B  robot base frame: x forward, y left, z up, origin on the ground.
//   L_C  camera optical frame: x image-right, y image-down, z optical axis.
// Image coordinates are signed and centered on the principal point.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace wb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateRay : public Error {
 public:
  DegenerateRay() : Error("ray is parallel to the intersection plane") {}
};

class DegenerateAxis : public Error {
 public:
  DegenerateAxis() : Error("axis endpoints coincide") {}
};

class FrameMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::geometry {

template <typename Scalar>
constexpr Scalar kPi = std::numbers::pi_v<Scalar>;

template <typename Scalar>
constexpr Scalar deg2rad(Scalar deg) {
  return deg * kPi<Scalar> / Scalar(180);
}

template <typename Scalar>
constexpr Scalar rad2deg(Scalar rad) {
  return rad * Scalar(180) / kPi<Scalar>;
}

/// Wraps an angle to (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  const Scalar two_pi = Scalar(2) * kPi<Scalar>;
  a = std::fmod(a, two_pi);
  if (a <= -kPi<Scalar>) a += two_pi;
  if (a > kPi<Scalar>) a -= two_pi;
  return a;
}

/// Wraps the angle of an undirected axis to (-pi/2, pi/2].
template <typename Scalar>
Scalar wrap_axis(Scalar a) {
  const Scalar half = kPi<Scalar> / Scalar(2);
  a = std::fmod(a, kPi<Scalar>);
  if (a <= -half) a += kPi<Scalar>;
  if (a > half) a -= kPi<Scalar>;
  return a;
}

enum class Frame { Map, Base, Camera, Effector, Footprint };

inline const char* frame_name(Frame f) {
  switch (f) {
    case Frame::Map: return "map";
    case Frame::Base: return "base";
    case Frame::Camera: return "camera";
    case Frame::Effector: return "effector";
    case Frame::Footprint: return "footprint";
  }
  return "?";
}

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Iso3 = Eigen::Transform<Scalar, 3, Eigen::Isometry>;

/// Position plus roll/pitch/yaw (Z-Y-X intrinsic), angles kept in (-pi, pi].
template <typename Scalar>
struct RigidPose {
  Scalar x{0}, y{0}, z{0};
  Scalar roll{0}, pitch{0}, yaw{0};

  static RigidPose planar(Scalar x, Scalar y, Scalar yaw, Scalar z = Scalar(0)) {
    return RigidPose{x, y, z, Scalar(0), Scalar(0), wrap_angle(yaw)};
  }

  static RigidPose from_isometry(const Iso3<Scalar>& t) {
    const Mat3<Scalar> r = t.rotation();
    RigidPose p;
    p.x = t.translation().x();
    p.y = t.translation().y();
    p.z = t.translation().z();
    // ZYX extraction; r = Rz(yaw) Ry(pitch) Rx(roll).
    p.pitch = std::asin(std::clamp(-r(2, 0), Scalar(-1), Scalar(1)));
    p.roll = wrap_angle(std::atan2(r(2, 1), r(2, 2)));
    p.yaw = wrap_angle(std::atan2(r(1, 0), r(0, 0)));
    p.pitch = wrap_angle(p.pitch);
    return p;
  }

  Vec3<Scalar> position() const { return {x, y, z}; }

  Mat3<Scalar> rotation() const {
    using Eigen::AngleAxis;
    return (AngleAxis<Scalar>(yaw, Vec3<Scalar>::UnitZ()) *
            AngleAxis<Scalar>(pitch, Vec3<Scalar>::UnitY()) *
            AngleAxis<Scalar>(roll, Vec3<Scalar>::UnitX()))
        .toRotationMatrix();
  }

  Iso3<Scalar> isometry() const {
    Iso3<Scalar> t = Iso3<Scalar>::Identity();
    t.linear() = rotation();
    t.translation() = position();
    return t;
  }

  RigidPose compose(const RigidPose& other) const {
    return from_isometry(isometry() * other.isometry());
  }

  RigidPose inverse() const { return from_isometry(isometry().inverse()); }

  Vec2<Scalar> xy() const { return {x, y}; }
};

/// A point tagged with the frame it is expressed in.
template <typename Scalar>
struct FramedPoint {
  Vec3<Scalar> p;
  Frame frame;
};

/// Rigid transform mapping points expressed in `source` into `target`.
template <typename Scalar>
class FrameTransform {
 public:
  FrameTransform(Frame source, Frame target, const Iso3<Scalar>& t = Iso3<Scalar>::Identity())
      : source_(source), target_(target), t_(t) {}

  FrameTransform(Frame source, Frame target, const RigidPose<Scalar>& pose)
      : FrameTransform(source, target, pose.isometry()) {}

  static FrameTransform identity(Frame f) { return FrameTransform(f, f); }

  Frame source() const { return source_; }
  Frame target() const { return target_; }
  const Iso3<Scalar>& isometry() const { return t_; }
  Mat3<Scalar> rotation() const { return t_.linear(); }
  Vec3<Scalar> translation() const { return t_.translation(); }

  FrameTransform inverse() const { return FrameTransform(target_, source_, t_.inverse()); }

  /// this ∘ inner: first applies `inner`, then this.
  FrameTransform operator*(const FrameTransform& inner) const {
    if (inner.target_ != source_) {
      throw FrameMismatch(std::string("cannot compose ") + frame_name(source_) + "->" +
                          frame_name(target_) + " after " + frame_name(inner.source_) + "->" +
                          frame_name(inner.target_));
    }
    return FrameTransform(inner.source_, target_, t_ * inner.t_);
  }

  /// Largest entry of |R^T R - I|.
  Scalar orthonormality_error() const {
    const Mat3<Scalar> r = t_.linear();
    return (r.transpose() * r - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff();
  }

 private:
  Frame source_;
  Frame target_;
  Iso3<Scalar> t_;
};

template <typename Scalar>
FramedPoint<Scalar> transform_point(const FrameTransform<Scalar>& t, const FramedPoint<Scalar>& p) {
  if (p.frame != t.source()) {
    throw FrameMismatch(std::string("point in ") + frame_name(p.frame) + " frame given to " +
                        frame_name(t.source()) + "->" + frame_name(t.target()) + " transform");
  }
  return {t.isometry() * p.p, t.target()};
}

/// Pinhole intrinsics. The principal point is stored in raw pixel
/// coordinates (origin at the top-left image corner).
template <typename Scalar>
struct CameraIntrinsics {
  Scalar focal_px{460};
  Scalar focal_mm{1.93};
  int width{640};
  int height{480};
  Scalar cx{320};
  Scalar cy{240};

  static CameraIntrinsics centered(int width, int height, Scalar focal_px,
                                   Scalar focal_mm = Scalar(1.93)) {
    return {focal_px, focal_mm, width, height, Scalar(width) / 2, Scalar(height) / 2};
  }

  bool valid() const {
    return focal_px > 0 && focal_mm > 0 && width > 0 && height > 0 && cx >= 0 && cx <= width &&
           cy >= 0 && cy <= height;
  }

  /// Same field of view at a different resolution.
  CameraIntrinsics scaled(Scalar factor) const {
    return {focal_px * factor, focal_mm,
            static_cast<int>(std::lround(width * factor)),
            static_cast<int>(std::lround(height * factor)), cx * factor, cy * factor};
  }
};

/// Signed image coordinates, origin at the principal point, y pointing down.
template <typename Scalar>
struct ImagePoint {
  Scalar x_px{0};
  Scalar y_px{0};

  Vec2<Scalar> vec() const { return {x_px, y_px}; }
};

/// Signed coordinates of the center of raw pixel (u, v).
template <typename Scalar>
ImagePoint<Scalar> pixel_center(int u, int v, const CameraIntrinsics<Scalar>& k) {
  return {Scalar(u) + Scalar(0.5) - k.cx, Scalar(v) + Scalar(0.5) - k.cy};
}

/// Image point scaled onto the metric image plane z = z_mm (camera frame,
/// millimeters).
template <typename Scalar>
Vec3<Scalar> pixel_to_metric(const ImagePoint<Scalar>& p, const CameraIntrinsics<Scalar>& k) {
  const Scalar s = k.focal_mm / k.focal_px;
  return {p.x_px * s, p.y_px * s, k.focal_mm};
}

/// Projects a camera-frame point (meters) to signed image coordinates.
/// Returns false if the point is not in front of the camera.
template <typename Scalar>
bool project_point(const Vec3<Scalar>& pc, const CameraIntrinsics<Scalar>& k, ImagePoint<Scalar>& out) {
  if (pc.z() <= Scalar(0)) return false;
  out = {k.focal_px * pc.x() / pc.z(), k.focal_px * pc.y() / pc.z()};
  return true;
}

template <typename Scalar>
struct RayHit {
  Vec2<Scalar> xy;
  /// Ray parameter: 0 at the camera, 1 at the projected point.
  Scalar t;
  /// False when the plane lies behind the camera along the ray.
  bool in_front() const { return t > Scalar(0); }
};

/// Intersects the line through `cam` and `proj` (both in L_B) with the
/// horizontal plane z = h.
template <typename Scalar>
RayHit<Scalar> ray_height_intersect(const Vec3<Scalar>& cam, const Vec3<Scalar>& proj, Scalar h) {
  const Scalar dz = cam.z() - proj.z();
  if (std::abs(dz) < Scalar(1e-9)) throw DegenerateRay();
  const Scalar t = (cam.z() - h) / dz;
  return {{cam.x() - t * (cam.x() - proj.x()), cam.y() - t * (cam.y() - proj.y())}, t};
}

/// Center and undirected yaw of a horizontal segment.
template <typename Scalar>
struct PlanarPose {
  Vec3<Scalar> center{Vec3<Scalar>::Zero()};
  Scalar yaw{0};

  RigidPose<Scalar> rigid() const {
    return RigidPose<Scalar>::planar(center.x(), center.y(), yaw, center.z());
  }
};

template <typename Scalar>
PlanarPose<Scalar> patch_pose_from_endpoints(const Vec3<Scalar>& p1, const Vec3<Scalar>& p2) {
  const Vec3<Scalar> d = p2 - p1;
  if (d.template head<2>().norm() <= Scalar(1e-6)) throw DegenerateAxis();
  return {(p1 + p2) / Scalar(2), wrap_axis(std::atan2(d.y(), d.x()))};
}

/// Pose tagged with its frame.
template <typename Scalar>
struct FramedPose {
  PlanarPose<Scalar> pose;
  Frame frame;
};

/// Applies a planar rigid transform to a pose, keeping the axis convention.
template <typename Scalar>
FramedPose<Scalar> transform_pose(const FrameTransform<Scalar>& t, const FramedPose<Scalar>& p) {
  const auto c = transform_point(t, FramedPoint<Scalar>{p.pose.center, p.frame});
  const Mat3<Scalar> r = t.rotation();
  const Scalar dyaw = std::atan2(r(1, 0), r(0, 0));
  return {{c.p, wrap_axis(p.pose.yaw + dyaw)}, t.target()};
}

using Pose = RigidPose<double>;
using Transform = FrameTransform<double>;
using Intrinsics = CameraIntrinsics<double>;
using Pixel = ImagePoint<double>;
using PatchPose = PlanarPose<double>;
using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;

}  // namespace wb::geometry

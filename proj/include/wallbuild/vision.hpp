#pragma once

// Detection pipeline: brick stacks, the wall footprint, magnetic patch
// candidates with scored selection and ID tracking, and metric patch pose
// estimation from the two endpoints of the patch's major axis.

#include "wallbuild/geometry.hpp"
#include "wallbuild/render.hpp"
#include "wallbuild/world.hpp"

#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <vector>

namespace wb {

class DegenerateHull : public Error {
 public:
  DegenerateHull() : Error("hull has fewer than three non-collinear points") {}
};

class NotVisible : public Error {
 public:
  NotVisible() : Error("footprint pattern not visible") {}
};

class NoDepth : public Error {
 public:
  NoDepth() : Error("no valid depth over the candidate region") {}
};

}  // namespace wb

namespace wb::vision {

using geometry::Intrinsics;
using geometry::Pixel;
using geometry::Vec2d;
using render::Label;
using render::LabelImage;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mask mask_of(const LabelImage& img, std::initializer_list<Label> labels);

/// 4-connected pixel region; pixels are raw (u, v) coordinates.
struct Region {
  std::vector<Eigen::Vector2i> pixels;

  double area() const { return static_cast<double>(pixels.size()); }
};

/// Maximal 4-connected regions in raster order of their first pixel.
std::vector<Region> connected_components(const Mask& mask);
std::vector<Region> connected_components(const LabelImage& img, Label label);

/// Counter-clockwise convex hull without collinear vertices. Collinear input
/// yields its two extreme points.
std::vector<Vec2d> convex_hull(std::vector<Vec2d> points);

/// Hull of the pixel squares of a region, in signed image coordinates.
std::vector<Vec2d> region_hull(const Region& r, const Intrinsics& k);

struct RotatedRect {
  Vec2d center{Vec2d::Zero()};
  double width{0};   // minor side
  double length{0};  // major side
  /// Major-axis angle in (-pi/2, pi/2].
  double angle{0};

  double area() const { return width * length; }
  Vec2d major_axis() const { return {std::cos(angle), std::sin(angle)}; }
  Vec2d minor_axis() const { return {-std::sin(angle), std::cos(angle)}; }
};

/// Minimum-area enclosing rectangle of a convex polygon (rotating calipers).
RotatedRect min_area_rect(const std::vector<Vec2d>& hull);

bool point_in_convex(const std::vector<Vec2d>& hull, const Vec2d& p);

struct StackObservation {
  world::Color color{world::Color::Red};
  Pixel position;
  double area{0};
  std::vector<Vec2d> hull;
  Region region;
};

/// Regions of `color` with at least `min_area` pixels, largest first.
std::vector<StackObservation> detect_stacks(const LabelImage& img, world::Color color,
                                            double min_area, const Intrinsics& k);

/// Minimum stack area for an image size, scaled from 400 px at 640x480.
double scaled_min_stack_area(const Intrinsics& k, double base_area = 400.0);

/// Rightmost pattern pixel (ties: smallest image y). Throws NotVisible.
Pixel detect_footprint(const LabelImage& img, const Intrinsics& k);

struct PatchCandidate {
  int id{-1};
  Pixel position;
  double area{0};
  RotatedRect rect;
  Vec2d p1{Vec2d::Zero()}, p2{Vec2d::Zero()};
  double rectangularity{0};
  Region region;
};

std::vector<PatchCandidate> extract_patch_candidates(const LabelImage& img,
                                                     const std::vector<Vec2d>& stack_hull,
                                                     const Intrinsics& k, double rect_min = 0.65);

struct ScoringWeights {
  double w_x{1.0};
  double w_y{1.0};
  double w_area{0.01};
  /// Hysteresis margin; a fraction of |incumbent score| when `relative`.
  double margin{0.10};
  bool relative{true};
};

double score(const PatchCandidate& c, const ScoringWeights& w);

struct TrackerParams {
  double gate_px{30.0};
  int max_age{3};
};

struct Track {
  Pixel position;
  double area{0};
  double score{0};
  /// Consecutive frames without a matching detection.
  int age{0};
};

struct TrackerState {
  std::map<int, Track> tracks;
  std::optional<int> selected;
  int next_id{0};
  int switches{0};
};

/// Associates detections with tracks, then applies the hysteresis rule.
/// Returns the selected candidate if it was observed in this frame.
std::optional<PatchCandidate> track_and_select(TrackerState& tracker,
                                               std::vector<PatchCandidate> detections,
                                               const ScoringWeights& w,
                                               const TrackerParams& p = {});

/// Moves every track through `predict` (ego-motion compensation).
void predict_tracks(TrackerState& tracker, const std::function<Pixel(const Pixel&)>& predict);

struct CameraState {
  geometry::Iso3<double> camera_to_base;
  Intrinsics intrinsics;
};

struct PatchEstimate {
  geometry::PatchPose pose;  // in L_B
  double measured_height{0};
  int layers{1};
};

/// Axis endpoints given in the image, back-projected onto the plane z = h of
/// L_B, define the patch center and yaw.
geometry::PatchPose pose_from_image_endpoints(const Vec2d& p1, const Vec2d& p2,
                                              const CameraState& cam, double h);

/// Metric patch pose in L_B at the brick-multiple height read from the
/// organized cloud (in L_B). The axis endpoints come from the rectangle fitted
/// to the contour back-projected onto that height.
PatchEstimate estimate_patch_pose(const PatchCandidate& c, const CameraState& cam,
                                  const render::OrganizedCloud& cloud_base, double brick_height);

/// Back-projects a signed image point onto the plane z = h of L_B.
geometry::RayHit<double> pixel_to_plane(const Pixel& p, const CameraState& cam, double h);

geometry::FramedPose<double> to_map_frame(const geometry::FramedPose<double>& pose_base,
                                          const geometry::Transform& base_to_map);

struct FootprintEstimate {
  /// Right end of the visible strip centerline; yaw along the wall into it.
  geometry::Pose anchor;  // in L_B
  Pixel rightmost;
  bool right_end_visible{false};
  double visible_length{0};
};

/// Wall anchor in L_B from the ground-projected pattern region.
FootprintEstimate estimate_footprint_pose(const LabelImage& img, const CameraState& cam);

/// Strip fitted to the largest pattern region in the image.
std::optional<RotatedRect> detect_pattern_strip(const LabelImage& img, const Intrinsics& k,
                                                double min_area);

}  // namespace wb::vision

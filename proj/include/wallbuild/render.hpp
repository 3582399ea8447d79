#pragma once

// Synthetic pinhole RGB-D camera: z-buffered rasterization of the arena into
// a color-label image and a depth image, plus organized point clouds.

#include "wallbuild/geometry.hpp"
#include "wallbuild/world.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>

namespace wb {

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::render {

enum class Label : std::uint8_t {
  Background = 0,
  Ground,
  Red,
  Green,
  Blue,
  Orange,
  PatchGray,
  PatternYellow,
  PatternMagenta,
};

Label brick_label(world::Color c);

/// Row-major (row = image v, column = image u).
using LabelImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DepthImage = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Depth value of pixels without a return.
inline constexpr float kNoReturn = 0.0f;

inline Label label_at(const LabelImage& img, int u, int v) { return static_cast<Label>(img(v, u)); }

struct RgbdFrame {
  LabelImage labels;
  DepthImage depth;
};

struct RenderOptions {
  double max_range{10.0};
  double min_range{0.1};
  /// Length of the alternating yellow / magenta segments of the footprint.
  double stripe_length{0.5};
};

/// Renders the arena as seen from `camera_to_map`.
RgbdFrame render_rgbd(const world::WorldState& w, const geometry::Iso3<double>& camera_to_map,
                      const geometry::Intrinsics& k, const RenderOptions& opts = {});

/// Organized cloud: column v * width + u holds the point seen by pixel
/// (u, v) in the target frame of `camera_to_frame`, NaN without a return.
struct OrganizedCloud {
  int width{0};
  int height{0};
  Eigen::Matrix3Xf points;

  bool valid(int u, int v) const { return !std::isnan(points(0, v * width + u)); }
  Eigen::Vector3f at(int u, int v) const { return points.col(v * width + u); }
};

OrganizedCloud cloud_from_depth(const DepthImage& depth, const geometry::Intrinsics& k,
                                const geometry::Iso3<double>& camera_to_frame);

struct NoiseParams {
  /// Standard deviation of the label boundary displacement in pixels.
  double sigma_px{0.0};
  /// Depth variance coefficient a: var = a * d^2.
  double depth_coeff{0.0};
  /// Spacing of the random displacement lattice in pixels.
  int warp_cell{16};
};

/// Boundary jitter through a smooth random warp of the label image plus
/// range-dependent zero-mean depth noise.
RgbdFrame apply_sensor_noise(const RgbdFrame& in, std::mt19937_64& rng, const NoiseParams& p);

std::array<std::uint8_t, 3> label_rgb(Label l);

/// Binary PPM (P6) of the label image mapped to RGB.
void write_label_ppm(const LabelImage& img, const std::filesystem::path& path);
/// 16-bit binary PGM (P5), depth in millimeters.
void write_depth_pgm(const DepthImage& img, const std::filesystem::path& path);

}  // namespace wb::render

#include "wallbuild/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace wb::render {

using geometry::Vec2d;
using geometry::Vec3d;

Label brick_label(world::Color c) {
  switch (c) {
    case world::Color::Red: return Label::Red;
    case world::Color::Green: return Label::Green;
    case world::Color::Blue: return Label::Blue;
    case world::Color::Orange: return Label::Orange;
  }
  return Label::Background;
}

namespace {

/// Planar rectangle P0 + s*e1 + t*e2, s in [0, len1], t in [0, len2].
struct Face {
  Vec3d origin;
  Vec3d e1, e2, normal;
  double len1, len2;
  Label label;
  bool top;
  double patch_length, patch_width;
};

void box_faces(const world::Box& b, std::vector<Face>& out) {
  const Vec3d a(std::cos(b.yaw), std::sin(b.yaw), 0.0);
  const Vec3d n(-std::sin(b.yaw), std::cos(b.yaw), 0.0);
  const Vec3d z = Vec3d::UnitZ();
  const Vec3d base(b.center.x(), b.center.y(), b.z_bottom);
  const double hl = b.length / 2, hw = b.width / 2;
  const Label color = brick_label(b.color);

  out.push_back({base + z * b.height - a * hl - n * hw, a, n, z, b.length, b.width, color, true,
                 b.patch_length, b.patch_width});
  out.push_back({base + a * hl - n * hw, n, z, a, b.width, b.height, color, false, 0, 0});
  out.push_back({base - a * hl - n * hw, n, z, -a, b.width, b.height, color, false, 0, 0});
  out.push_back({base + n * hw - a * hl, a, z, n, b.length, b.height, color, false, 0, 0});
  out.push_back({base - n * hw - a * hl, a, z, -n, b.length, b.height, color, false, 0, 0});
}

}  // namespace

RgbdFrame render_rgbd(const world::WorldState& w, const geometry::Iso3<double>& camera_to_map,
                      const geometry::Intrinsics& k, const RenderOptions& opts) {
  const int width = k.width, height = k.height;
  RgbdFrame f;
  f.labels.setConstant(height, width, static_cast<std::uint8_t>(Label::Background));
  f.depth.setConstant(height, width, kNoReturn);
  std::vector<double> zbuf(static_cast<size_t>(width) * height,
                           std::numeric_limits<double>::infinity());

  const Eigen::Matrix3d r = camera_to_map.linear();
  const Vec3d c = camera_to_map.translation();
  if (c.z() <= 0.0) return f;

  // World-frame ray per pixel, scaled so that its optical-axis component is 1.
  std::vector<Vec3d> rays(static_cast<size_t>(width) * height);
  for (int v = 0; v < height; ++v) {
    const double y = (v + 0.5 - k.cy) / k.focal_px;
    const Vec3d row = r.col(1) * y + r.col(2);
    for (int u = 0; u < width; ++u) {
      const double x = (u + 0.5 - k.cx) / k.focal_px;
      rays[static_cast<size_t>(v) * width + u] = r.col(0) * x + row;
    }
  }

  // Ground plane and footprint pattern.
  const auto& fp = w.footprint;
  const Vec2d axis = fp.axis(), normal = fp.normal();
  const bool has_pattern = fp.length > 0 && fp.width > 0;
  for (size_t i = 0; i < rays.size(); ++i) {
    const Vec3d& d = rays[i];
    if (d.z() >= 0) continue;
    const double t = -c.z() / d.z();
    if (t > opts.max_range) continue;
    Label l = Label::Ground;
    if (has_pattern) {
      const Vec2d rel = (c + t * d).head<2>() - fp.anchor.xy();
      const double s = rel.dot(axis), q = rel.dot(normal);
      if (s >= 0 && s <= fp.length && std::abs(q) <= fp.width / 2) {
        const int stripe = static_cast<int>(std::floor(s / opts.stripe_length));
        l = (stripe % 2 == 0) ? Label::PatternYellow : Label::PatternMagenta;
      }
    }
    zbuf[i] = t;
    f.labels.data()[i] = static_cast<std::uint8_t>(l);
  }

  std::vector<Face> faces;
  for (const auto& b : w.boxes()) box_faces(b, faces);

  const Eigen::Matrix3d rt = r.transpose();
  for (const Face& face : faces) {
    if ((c - face.origin).dot(face.normal) <= 0) continue;

    int u0 = 0, u1 = width - 1, v0 = 0, v1 = height - 1;
    const std::array<Vec3d, 4> corners{face.origin, face.origin + face.e1 * face.len1,
                                       face.origin + face.e1 * face.len1 + face.e2 * face.len2,
                                       face.origin + face.e2 * face.len2};
    bool all_front = true;
    double umin = 1e18, umax = -1e18, vmin = 1e18, vmax = -1e18;
    for (const auto& p : corners) {
      const Vec3d pc = rt * (p - c);
      if (pc.z() < 1e-3) {
        all_front = false;
        break;
      }
      const double u = k.focal_px * pc.x() / pc.z() + k.cx;
      const double v = k.focal_px * pc.y() / pc.z() + k.cy;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    if (all_front) {
      if (umax < 0 || vmax < 0 || umin > width || vmin > height) continue;
      u0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
      u1 = std::min(width - 1, static_cast<int>(std::ceil(umax)) + 1);
      v0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
      v1 = std::min(height - 1, static_cast<int>(std::ceil(vmax)) + 1);
    }

    const double num = face.normal.dot(face.origin - c);
    for (int v = v0; v <= v1; ++v) {
      for (int u = u0; u <= u1; ++u) {
        const size_t i = static_cast<size_t>(v) * width + u;
        const Vec3d& d = rays[i];
        const double den = face.normal.dot(d);
        if (den >= 0) continue;
        const double t = num / den;
        if (t <= 0 || t >= zbuf[i] || t > opts.max_range) continue;
        const Vec3d rel = c + t * d - face.origin;
        const double s = rel.dot(face.e1), q = rel.dot(face.e2);
        if (s < 0 || s > face.len1 || q < 0 || q > face.len2) continue;
        Label l = face.label;
        if (face.top && std::abs(s - face.len1 / 2) <= face.patch_length / 2 &&
            std::abs(q - face.len2 / 2) <= face.patch_width / 2) {
          l = Label::PatchGray;
        }
        zbuf[i] = t;
        f.labels.data()[i] = static_cast<std::uint8_t>(l);
      }
    }
  }

  for (size_t i = 0; i < zbuf.size(); ++i) {
    if (std::isfinite(zbuf[i]) && zbuf[i] >= opts.min_range) {
      f.depth.data()[i] = static_cast<float>(zbuf[i]);
    }
  }
  return f;
}

OrganizedCloud cloud_from_depth(const DepthImage& depth, const geometry::Intrinsics& k,
                                const geometry::Iso3<double>& camera_to_frame) {
  OrganizedCloud cloud;
  cloud.width = static_cast<int>(depth.cols());
  cloud.height = static_cast<int>(depth.rows());
  cloud.points.resize(3, static_cast<Eigen::Index>(cloud.width) * cloud.height);
  const Eigen::Matrix3d r = camera_to_frame.linear();
  const Vec3d t = camera_to_frame.translation();
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (int v = 0; v < cloud.height; ++v) {
    for (int u = 0; u < cloud.width; ++u) {
      const Eigen::Index i = static_cast<Eigen::Index>(v) * cloud.width + u;
      const float d = depth(v, u);
      if (!(d > 0.0f) || !std::isfinite(d)) {
        cloud.points.col(i).setConstant(nan);
        continue;
      }
      const Vec3d pc((u + 0.5 - k.cx) / k.focal_px * d, (v + 0.5 - k.cy) / k.focal_px * d, d);
      cloud.points.col(i) = (r * pc + t).cast<float>();
    }
  }
  return cloud;
}

RgbdFrame apply_sensor_noise(const RgbdFrame& in, std::mt19937_64& rng, const NoiseParams& p) {
  RgbdFrame out = in;
  const int height = static_cast<int>(in.labels.rows());
  const int width = static_cast<int>(in.labels.cols());
  std::normal_distribution<double> unit(0.0, 1.0);

  if (p.sigma_px > 0) {
    const int cell = std::max(1, p.warp_cell);
    const int gw = width / cell + 2, gh = height / cell + 2;
    Eigen::ArrayXXd gx(gh, gw), gy(gh, gw);
    for (int j = 0; j < gh; ++j) {
      for (int i = 0; i < gw; ++i) {
        gx(j, i) = unit(rng) * p.sigma_px;
        gy(j, i) = unit(rng) * p.sigma_px;
      }
    }
    for (int v = 0; v < height; ++v) {
      const double fy = static_cast<double>(v) / cell;
      const int j = static_cast<int>(fy);
      const double wy = fy - j;
      for (int u = 0; u < width; ++u) {
        const double fx = static_cast<double>(u) / cell;
        const int i = static_cast<int>(fx);
        const double wx = fx - i;
        const auto lerp = [&](const Eigen::ArrayXXd& g) {
          return (1 - wy) * ((1 - wx) * g(j, i) + wx * g(j, i + 1)) +
                 wy * ((1 - wx) * g(j + 1, i) + wx * g(j + 1, i + 1));
        };
        const int su = std::clamp(u + static_cast<int>(std::lround(lerp(gx))), 0, width - 1);
        const int sv = std::clamp(v + static_cast<int>(std::lround(lerp(gy))), 0, height - 1);
        out.labels(v, u) = in.labels(sv, su);
      }
    }
  }

  if (p.depth_coeff > 0) {
    const double s = std::sqrt(p.depth_coeff);
    for (Eigen::Index i = 0; i < out.depth.size(); ++i) {
      const float d = in.depth.data()[i];
      if (d == kNoReturn) continue;
      const double noisy = d + unit(rng) * s * d;
      out.depth.data()[i] = noisy > 0 ? static_cast<float>(noisy) : kNoReturn;
    }
  }
  return out;
}

std::array<std::uint8_t, 3> label_rgb(Label l) {
  switch (l) {
    case Label::Background: return {135, 170, 210};
    case Label::Ground: return {110, 100, 80};
    case Label::Red: return {200, 30, 30};
    case Label::Green: return {30, 170, 50};
    case Label::Blue: return {30, 60, 200};
    case Label::Orange: return {240, 140, 20};
    case Label::PatchGray: return {150, 150, 150};
    case Label::PatternYellow: return {240, 220, 30};
    case Label::PatternMagenta: return {220, 40, 200};
  }
  return {0, 0, 0};
}

void write_label_ppm(const LabelImage& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.cols() << " " << img.rows() << "\n255\n";
  std::vector<char> buf(static_cast<size_t>(img.size()) * 3);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const auto rgb = label_rgb(static_cast<Label>(img.data()[i]));
    for (int ch = 0; ch < 3; ++ch) buf[static_cast<size_t>(i) * 3 + ch] = static_cast<char>(rgb[ch]);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

void write_depth_pgm(const DepthImage& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.cols() << " " << img.rows() << "\n65535\n";
  std::vector<char> buf(static_cast<size_t>(img.size()) * 2);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const double mm = std::clamp(std::round(img.data()[i] * 1000.0), 0.0, 65535.0);
    const auto val = static_cast<std::uint16_t>(mm);
    buf[static_cast<size_t>(i) * 2] = static_cast<char>(val >> 8);
    buf[static_cast<size_t>(i) * 2 + 1] = static_cast<char>(val & 0xff);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace wb::render

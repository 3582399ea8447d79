#include "wallbuild/vision.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace wb::vision {

using geometry::kPi;
using geometry::wrap_axis;

Mask mask_of(const LabelImage& img, std::initializer_list<Label> labels) {
  Mask m = Mask::Constant(img.rows(), img.cols(), false);
  for (Label l : labels) m = m || (img == static_cast<std::uint8_t>(l));
  return m;
}

std::vector<Region> connected_components(const Mask& mask) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  std::vector<char> seen(static_cast<size_t>(w) * h, 0);
  std::vector<Region> out;
  std::vector<Eigen::Vector2i> stack;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!mask(v, u) || seen[v * w + u]) continue;
      Region r;
      seen[v * w + u] = 1;
      stack.push_back({u, v});
      while (!stack.empty()) {
        const Eigen::Vector2i p = stack.back();
        stack.pop_back();
        r.pixels.push_back(p);
        static constexpr int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
        for (int n = 0; n < 4; ++n) {
          const int x = p.x() + du[n], y = p.y() + dv[n];
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          if (!mask(y, x) || seen[y * w + x]) continue;
          seen[y * w + x] = 1;
          stack.push_back({x, y});
        }
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Region> connected_components(const LabelImage& img, Label label) {
  return connected_components(mask_of(img, {label}));
}

namespace {

double cross(const Vec2d& o, const Vec2d& a, const Vec2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

Vec2d centroid(const Region& r, const Intrinsics& k) {
  Vec2d c = Vec2d::Zero();
  for (const auto& p : r.pixels) c += geometry::pixel_center(p.x(), p.y(), k).vec();
  return c / r.area();
}

}  // namespace

std::vector<Vec2d> convex_hull(std::vector<Vec2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2d& a, const Vec2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  // Andrew's monotone chain; collinear points dropped.
  std::vector<Vec2d> hull(2 * pts.size());
  size_t n = 0;
  for (const auto& p : pts) {
    while (n >= 2 && cross(hull[n - 2], hull[n - 1], p) <= 0) --n;
    hull[n++] = p;
  }
  for (size_t i = pts.size() - 1, lower = n + 1; i-- > 0;) {
    const auto& p = pts[i];
    while (n >= lower && cross(hull[n - 2], hull[n - 1], p) <= 0) --n;
    hull[n++] = p;
  }
  hull.resize(n - 1);
  return hull;
}

std::vector<Vec2d> region_hull(const Region& r, const Intrinsics& k) {
  // Only the leftmost and rightmost pixel of each row can touch the hull.
  std::map<int, std::pair<int, int>> rows;
  for (const auto& p : r.pixels) {
    auto [it, fresh] = rows.try_emplace(p.y(), p.x(), p.x());
    if (!fresh) {
      it->second.first = std::min(it->second.first, p.x());
      it->second.second = std::max(it->second.second, p.x());
    }
  }
  std::vector<Vec2d> pts;
  pts.reserve(rows.size() * 4);
  for (const auto& [v, span] : rows) {
    const double y0 = v - k.cy, y1 = v + 1 - k.cy;
    const double x0 = span.first - k.cx, x1 = span.second + 1 - k.cx;
    pts.push_back({x0, y0});
    pts.push_back({x0, y1});
    pts.push_back({x1, y0});
    pts.push_back({x1, y1});
  }
  return convex_hull(std::move(pts));
}

RotatedRect min_area_rect(const std::vector<Vec2d>& hull) {
  if (hull.size() < 3 || std::abs(world::polygon_area(hull)) < 1e-12) throw DegenerateHull();

  RotatedRect best;
  double best_area = std::numeric_limits<double>::infinity();
  const size_t n = hull.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2d d = hull[(i + 1) % n] - hull[i];
    const double len = d.norm();
    if (len < 1e-12) continue;
    const Vec2d e = d / len, q(-e.y(), e.x());
    double a0 = std::numeric_limits<double>::infinity(), a1 = -a0, b0 = a0, b1 = -a0;
    for (const auto& p : hull) {
      const double s = p.dot(e), t = p.dot(q);
      a0 = std::min(a0, s);
      a1 = std::max(a1, s);
      b0 = std::min(b0, t);
      b1 = std::max(b1, t);
    }
    const double area = (a1 - a0) * (b1 - b0);
    if (area >= best_area * (1 - 1e-12)) continue;
    best_area = area;
    const double sa = a1 - a0, sb = b1 - b0;
    best.center = e * (a0 + a1) / 2 + q * (b0 + b1) / 2;
    const double ang_e = wrap_axis(std::atan2(e.y(), e.x()));
    const double ang_q = wrap_axis(std::atan2(q.y(), q.x()));
    double ang;
    if (std::abs(sa - sb) <= 1e-9 * std::max(sa, sb)) {
      // square: axis tie goes to the direction closer to image x
      ang = std::abs(ang_e) <= std::abs(ang_q) ? ang_e : ang_q;
    } else {
      ang = sa > sb ? ang_e : ang_q;
    }
    best.angle = ang;
    best.length = std::max(sa, sb);
    best.width = std::min(sa, sb);
  }
  return best;
}

bool point_in_convex(const std::vector<Vec2d>& hull, const Vec2d& p) {
  if (hull.size() < 3) return false;
  for (size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < -1e-9) return false;
  }
  return true;
}

std::vector<StackObservation> detect_stacks(const LabelImage& img, world::Color color,
                                            double min_area, const Intrinsics& k) {
  std::vector<StackObservation> out;
  for (auto& r : connected_components(img, render::brick_label(color))) {
    if (r.area() < min_area) continue;
    StackObservation o;
    o.color = color;
    const Vec2d c = centroid(r, k);
    o.position = {c.x(), c.y()};
    o.area = r.area();
    o.hull = region_hull(r, k);
    o.region = std::move(r);
    out.push_back(std::move(o));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.area > b.area; });
  return out;
}

double scaled_min_stack_area(const Intrinsics& k, double base_area) {
  return base_area * (static_cast<double>(k.width) * k.height) / (640.0 * 480.0);
}

Pixel detect_footprint(const LabelImage& img, const Intrinsics& k) {
  const Mask m = mask_of(img, {Label::PatternYellow, Label::PatternMagenta});
  // Scan columns right to left, rows top-down: the first hit wins both rules.
  for (int u = static_cast<int>(m.cols()) - 1; u >= 0; --u) {
    for (int v = 0; v < m.rows(); ++v) {
      if (m(v, u)) return geometry::pixel_center(u, v, k);
    }
  }
  throw NotVisible();
}

std::vector<PatchCandidate> extract_patch_candidates(const LabelImage& img,
                                                     const std::vector<Vec2d>& stack_hull,
                                                     const Intrinsics& k, double rect_min) {
  std::vector<PatchCandidate> out;
  for (auto& r : connected_components(img, Label::PatchGray)) {
    const Vec2d c = centroid(r, k);
    if (!point_in_convex(stack_hull, c)) continue;
    const auto hull = region_hull(r, k);
    RotatedRect rect;
    try {
      rect = min_area_rect(hull);
    } catch (const DegenerateHull&) {
      continue;
    }
    const double rectangularity = r.area() / rect.area();
    if (rectangularity < rect_min) continue;
    PatchCandidate pc;
    pc.position = {c.x(), c.y()};
    pc.area = r.area();
    pc.rect = rect;
    pc.p1 = rect.center - rect.major_axis() * rect.length / 2;
    pc.p2 = rect.center + rect.major_axis() * rect.length / 2;
    pc.rectangularity = rectangularity;
    pc.region = std::move(r);
    out.push_back(std::move(pc));
  }
  return out;
}

double score(const PatchCandidate& c, const ScoringWeights& w) {
  return -w.w_x * std::abs(c.position.x_px) + w.w_y * c.position.y_px + w.w_area * c.area;
}

std::optional<PatchCandidate> track_and_select(TrackerState& tr,
                                               std::vector<PatchCandidate> dets,
                                               const ScoringWeights& w, const TrackerParams& p) {
  struct Pair {
    double dist;
    int track;
    size_t det;
  };
  std::vector<Pair> pairs;
  for (const auto& [id, t] : tr.tracks) {
    for (size_t i = 0; i < dets.size(); ++i) {
      const double d = (t.position.vec() - dets[i].position.vec()).norm();
      if (d <= p.gate_px) pairs.push_back({d, id, i});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.dist < b.dist; });

  std::vector<char> det_used(dets.size(), 0);
  std::map<int, bool> track_used;
  for (const auto& pr : pairs) {
    if (det_used[pr.det] || track_used[pr.track]) continue;
    det_used[pr.det] = 1;
    track_used[pr.track] = true;
    dets[pr.det].id = pr.track;
  }
  for (auto it = tr.tracks.begin(); it != tr.tracks.end();) {
    if (track_used[it->first]) {
      ++it;
      continue;
    }
    if (++it->second.age > p.max_age) {
      if (tr.selected == it->first) tr.selected.reset();
      it = tr.tracks.erase(it);
    } else {
      ++it;
    }
  }
  for (size_t i = 0; i < dets.size(); ++i) {
    if (!det_used[i]) dets[i].id = tr.next_id++;
    auto& t = tr.tracks[dets[i].id];
    t.position = dets[i].position;
    t.area = dets[i].area;
    t.score = score(dets[i], w);
    t.age = 0;
  }

  // best observed candidate; ties go to the lower id
  const PatchCandidate* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& d : dets) {
    const double s = tr.tracks[d.id].score;
    if (!best || s > best_score || (s == best_score && d.id < best->id)) {
      best = &d;
      best_score = s;
    }
  }
  if (!tr.selected) {
    if (best) tr.selected = best->id;
  } else if (best && best->id != *tr.selected) {
    const double inc = tr.tracks.at(*tr.selected).score;
    const double margin = w.relative ? w.margin * std::abs(inc) : w.margin;
    if (best_score > inc + margin) {
      tr.selected = best->id;
      ++tr.switches;
    }
  }
  if (tr.selected) {
    for (auto& d : dets) {
      if (d.id == *tr.selected) return std::move(d);
    }
  }
  return std::nullopt;
}

void predict_tracks(TrackerState& tr, const std::function<Pixel(const Pixel&)>& predict) {
  for (auto& [id, t] : tr.tracks) t.position = predict(t.position);
}

geometry::RayHit<double> pixel_to_plane(const Pixel& p, const CameraState& cam, double h) {
  const geometry::Vec3d m = geometry::pixel_to_metric(p, cam.intrinsics) * 1e-3;
  const geometry::Vec3d proj = cam.camera_to_base * m;
  return geometry::ray_height_intersect<double>(cam.camera_to_base.translation(), proj, h);
}

geometry::PatchPose pose_from_image_endpoints(const Vec2d& p1, const Vec2d& p2,
                                              const CameraState& cam, double h) {
  const auto a = pixel_to_plane({p1.x(), p1.y()}, cam, h);
  const auto b = pixel_to_plane({p2.x(), p2.y()}, cam, h);
  return geometry::patch_pose_from_endpoints<double>({a.xy.x(), a.xy.y(), h},
                                                     {b.xy.x(), b.xy.y(), h});
}

PatchEstimate estimate_patch_pose(const PatchCandidate& c, const CameraState& cam,
                                  const render::OrganizedCloud& cloud, double h_b) {
  std::vector<float> z;
  z.reserve(c.region.pixels.size());
  for (const auto& px : c.region.pixels) {
    if (cloud.valid(px.x(), px.y())) z.push_back(cloud.at(px.x(), px.y()).z());
  }
  if (z.empty()) throw NoDepth();
  auto mid = z.begin() + z.size() / 2;
  std::nth_element(z.begin(), mid, z.end());
  PatchEstimate est;
  est.measured_height = *mid;
  est.layers = std::max(1, static_cast<int>(std::lround(est.measured_height / h_b)));
  const double h = est.layers * h_b;

  // The rectangle is fitted after back-projecting the contour onto the patch
  // plane: oblique views skew the patch into a parallelogram and can swap its
  // apparent major and minor sides.
  std::vector<Vec2d> plane;
  for (const auto& v : region_hull(c.region, cam.intrinsics)) {
    const auto hit = pixel_to_plane({v.x(), v.y()}, cam, h);
    if (hit.in_front()) plane.push_back(hit.xy);
  }
  const RotatedRect r = min_area_rect(convex_hull(std::move(plane)));
  const Vec2d a = r.center - r.major_axis() * r.length / 2;
  const Vec2d b = r.center + r.major_axis() * r.length / 2;
  est.pose = geometry::patch_pose_from_endpoints<double>({a.x(), a.y(), h}, {b.x(), b.y(), h});
  return est;
}

geometry::FramedPose<double> to_map_frame(const geometry::FramedPose<double>& pose,
                                          const geometry::Transform& base_to_map) {
  return geometry::transform_pose(base_to_map, pose);
}

FootprintEstimate estimate_footprint_pose(const LabelImage& img, const CameraState& cam) {
  const auto& k = cam.intrinsics;
  FootprintEstimate out;
  out.rightmost = detect_footprint(img, k);

  auto regions = connected_components(mask_of(img, {Label::PatternYellow, Label::PatternMagenta}));
  const auto largest = std::max_element(regions.begin(), regions.end(), [](auto& a, auto& b) {
    return a.pixels.size() < b.pixels.size();
  });
  std::vector<Vec2d> ground;
  for (const auto& v : region_hull(*largest, k)) {
    const auto hit = pixel_to_plane({v.x(), v.y()}, cam, 0.0);
    if (hit.in_front()) ground.push_back(hit.xy);
  }
  ground = convex_hull(std::move(ground));
  const RotatedRect rect = min_area_rect(ground);
  Vec2d u = rect.major_axis();
  if (u.y() < 0) u = -u;  // the right end has the smallest base y
  const Vec2d end = rect.center - u * rect.length / 2;
  out.anchor = geometry::Pose::planar(end.x(), end.y(), std::atan2(u.y(), u.x()));
  out.visible_length = rect.length;
  const double px_right = out.rightmost.x_px + k.cx;
  out.right_end_visible = px_right < k.width - 2;
  return out;
}

std::optional<RotatedRect> detect_pattern_strip(const LabelImage& img, const Intrinsics& k,
                                                double min_area) {
  auto regions = connected_components(mask_of(img, {Label::PatternYellow, Label::PatternMagenta}));
  const Region* best = nullptr;
  for (const auto& r : regions) {
    if (r.area() >= min_area && (!best || r.area() > best->area())) best = &r;
  }
  if (!best) return std::nullopt;
  try {
    return min_area_rect(region_hull(*best, k));
  } catch (const DegenerateHull&) {
    return std::nullopt;
  }
}

}  // namespace wb::vision

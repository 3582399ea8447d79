#include "wallbuild/experiment.hpp"

#include "wallbuild/render.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace wb::experiment {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using geometry::deg2rad;
using geometry::rad2deg;

constexpr double kTrialTime = 300.0;

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + p.string());
}

ordered_json pose_json(double x, double y, double yaw) {
  return {{"x", x}, {"y", y}, {"yaw_deg", rad2deg(yaw)}};
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

sim::Simulation make_sim(const scenario::Scenario& s, std::vector<mission::BrickTask> plan,
                         const sim::NoiseConfig& noise, std::uint64_t seed) {
  sim::SimConfig cfg = s.sim;
  cfg.noise = noise;
  cfg.seed = seed;
  cfg.max_sim_time = kTrialTime;
  return sim::Simulation(s.world, s.mission, std::move(plan), cfg);
}

/// Orientation of run `i` of `n`: uniform within the i-th of n bins.
double stratified(std::mt19937_64& rng, int i, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = (hi - lo) / n;
  return lo + w * (i + u(rng));
}

template <typename F>
std::vector<RunRecord> fan_out(int n, int workers, F&& body) {
  std::vector<RunRecord> out(static_cast<size_t>(n));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, n);
  std::atomic<int> next{0};
  const auto loop = [&] {
    for (int i = next++; i < n; i = next++) out[static_cast<size_t>(i)] = body(i);
  };
  if (workers <= 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- single runs

RunResult run_scenario(const scenario::Scenario& s, const RunOptions& o) {
  sim::SimConfig cfg = s.sim;
  cfg.seed = o.seed;
  if (o.noise) cfg.noise = *o.noise;
  if (o.max_sim_time) cfg.max_sim_time = *o.max_sim_time;
  cfg.frame_dir = o.frame_dir;
  const auto t0 = std::chrono::steady_clock::now();
  sim::Simulation sim(s.world, s.mission, scenario::scenario_plan(s), cfg);
  RunResult r;
  r.scenario = s.name;
  r.seed = o.seed;
  r.metrics = sim.run();
  r.trace = sim.trace();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string trace_jsonl(const std::vector<sim::TraceRecord>& trace) {
  std::string out;
  for (const auto& t : trace) {
    out += sim::trace_line(t);
    out += '\n';
  }
  return out;
}

ordered_json run_report(const RunResult& r) {
  const auto& m = r.metrics;
  ordered_json j;
  j["schema"] = 1;
  j["scenario"] = r.scenario;
  j["seed"] = r.seed;
  j["completed"] = m.completed;
  j["bricks_placed"] = m.bricks_placed;
  j["mission_time_s"] = m.mission_time;
  j["vision_frames"] = m.vision_frames;
  j["replans"] = m.replans;
  j["wall_seconds"] = r.wall_seconds;
  j["skipped"] = ordered_json::array();
  for (const auto& s : m.skipped) {
    j["skipped"].push_back({{"task", mission::task_label(s.task)}, {"reason", s.reason}});
  }
  j["detections"] = ordered_json::array();
  for (const auto& d : m.detections) {
    j["detections"].push_back({{"t", d.t},
                               {"color", world::color_name(d.color)},
                               {"distance_m", d.distance},
                               {"distance_error_m", d.distance_error},
                               {"orientation_deg", rad2deg(d.orientation)},
                               {"orientation_error_deg", rad2deg(d.orientation_error)}});
  }
  j["pickups"] = ordered_json::array();
  for (const auto& p : m.pickups) {
    j["pickups"].push_back({{"t", p.t},
                            {"color", world::color_name(p.color)},
                            {"success", p.success},
                            {"perpendicular_error_deg", rad2deg(p.perpendicular_error)},
                            {"grasp_offset_m", p.grasp_offset},
                            {"grasp_yaw_error_deg", rad2deg(p.grasp_yaw_error)},
                            {"failure", p.failure}});
  }
  j["footprints"] = ordered_json::array();
  for (const auto& f : m.footprints) {
    j["footprints"].push_back({{"t", f.t},
                               {"distance_m", f.distance},
                               {"orientation_deg", rad2deg(f.orientation)},
                               {"anchor_error_m", f.anchor_error},
                               {"yaw_error_deg", rad2deg(f.yaw_error)}});
  }
  j["drops"] = ordered_json::array();
  for (const auto& d : m.drops) {
    j["drops"].push_back({{"t", d.t},
                          {"color", world::color_name(d.placement.color)},
                          {"success", d.success},
                          {"inside_fraction", d.placement.inside_fraction},
                          {"yaw_error_deg", rad2deg(d.placement.yaw_error)},
                          {"along_m", d.placement.position_in_footprint.x()},
                          {"across_m", d.placement.position_in_footprint.y()},
                          {"failure", d.failure}});
  }
  return j;
}

std::string metrics_csv(const sim::RunMetrics& m) {
  std::ostringstream os;
  os << "record,t,color,success,distance,error,orientation_deg,orientation_error_deg,inside_fraction\n";
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& d : m.detections) {
    os << "detection," << num(d.t) << ',' << world::color_name(d.color) << ",," << num(d.distance)
       << ',' << num(d.distance_error) << ',' << num(rad2deg(d.orientation)) << ','
       << num(rad2deg(d.orientation_error)) << ",\n";
  }
  for (const auto& p : m.pickups) {
    os << "pickup," << num(p.t) << ',' << world::color_name(p.color) << ',' << (p.success ? 1 : 0)
       << ",," << num(p.grasp_offset) << ",," << num(rad2deg(p.grasp_yaw_error)) << ",\n";
  }
  for (const auto& f : m.footprints) {
    os << "footprint," << num(f.t) << ",,," << num(f.distance) << ',' << num(f.anchor_error) << ','
       << num(rad2deg(f.orientation)) << ',' << num(rad2deg(f.yaw_error)) << ",\n";
  }
  for (const auto& d : m.drops) {
    os << "drop," << num(d.t) << ',' << world::color_name(d.placement.color) << ','
       << (d.success ? 1 : 0) << ",,,," << num(rad2deg(d.placement.yaw_error)) << ','
       << num(d.failure.empty() ? d.placement.inside_fraction : nan) << "\n";
  }
  return os.str();
}

void write_run(const RunResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "report.json", run_report(r).dump(2) + "\n");
  write_text(dir / "trace.jsonl", trace_jsonl(r.trace));
  write_text(dir / "metrics.csv", metrics_csv(r.metrics));
}

// ---------------------------------------------------------------- reports

Aggregates ExperimentReport::aggregates() const {
  Aggregates a;
  a.runs = static_cast<int>(runs.size());
  double de = 0, oe = 0;
  int nd = 0, no = 0;
  for (const auto& r : runs) {
    if (r.success) ++a.successes;
    if (r.distance_error) {
      de += std::abs(*r.distance_error);
      ++nd;
    }
    if (r.orientation_error_deg) {
      oe += std::abs(*r.orientation_error_deg);
      ++no;
    }
    if (r.perpendicular_error_deg) {
      a.max_perpendicular_error_deg = std::max(a.max_perpendicular_error_deg, *r.perpendicular_error_deg);
    }
  }
  a.success_rate = a.runs ? static_cast<double>(a.successes) / a.runs : 0.0;
  a.distance_mae = nd ? de / nd : 0.0;
  a.orientation_mae_deg = no ? oe / no : 0.0;
  return a;
}

bool ExperimentReport::all_succeeded() const {
  return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.success; });
}

ordered_json ExperimentReport::to_json() const {
  ordered_json j;
  j["schema"] = 1;
  j["kind"] = kind;
  j["noise"] = noise;
  j["seed"] = seed;
  j["runs"] = ordered_json::array();
  for (const auto& r : runs) {
    j["runs"].push_back({{"run_id", r.run_id},
                         {"seed", r.seed},
                         {"success", r.success},
                         {"duration_s", r.duration},
                         {"distance_m", opt(r.distance)},
                         {"distance_error_m", opt(r.distance_error)},
                         {"orientation_deg", r.orientation_deg},
                         {"orientation_error_deg", opt(r.orientation_error_deg)},
                         {"perpendicular_error_deg", opt(r.perpendicular_error_deg)},
                         {"inside_fraction", opt(r.inside_fraction)},
                         {"failure", r.failure}});
  }
  const Aggregates a = aggregates();
  j["aggregates"] = {{"runs", a.runs},
                     {"successes", a.successes},
                     {"success_rate", a.success_rate},
                     {"distance_mae_m", a.distance_mae},
                     {"orientation_mae_deg", a.orientation_mae_deg},
                     {"max_perpendicular_error_deg", a.max_perpendicular_error_deg}};
  return j;
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  const auto get_opt = [](const json& r, const char* key) -> std::optional<double> {
    if (!r.contains(key) || r.at(key).is_null()) return std::nullopt;
    return r.at(key).get<double>();
  };
  ExperimentReport rep;
  try {
    rep.kind = j.at("kind").get<std::string>();
    rep.noise = j.at("noise").get<std::string>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("runs")) {
      RunRecord rr;
      rr.run_id = r.at("run_id").get<int>();
      rr.seed = r.at("seed").get<std::uint64_t>();
      rr.success = r.at("success").get<bool>();
      rr.duration = r.at("duration_s").get<double>();
      rr.distance = get_opt(r, "distance_m");
      rr.distance_error = get_opt(r, "distance_error_m");
      rr.orientation_deg = r.at("orientation_deg").get<double>();
      rr.orientation_error_deg = get_opt(r, "orientation_error_deg");
      rr.perpendicular_error_deg = get_opt(r, "perpendicular_error_deg");
      rr.inside_fraction = get_opt(r, "inside_fraction");
      rr.failure = r.at("failure").get<std::string>();
      rep.runs.push_back(rr);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment report: ") + e.what());
  }
  const Aggregates a = rep.aggregates();
  bool ok = false;
  try {
    const json& s = j.at("aggregates");
    const auto close = [](const json& v, double x) {
      return std::abs(v.get<double>() - x) <= 1e-9 * std::max(1.0, std::abs(x));
    };
    ok = s.at("runs").get<int>() == a.runs && s.at("successes").get<int>() == a.successes &&
         close(s.at("success_rate"), a.success_rate) && close(s.at("distance_mae_m"), a.distance_mae) &&
         close(s.at("orientation_mae_deg"), a.orientation_mae_deg) &&
         close(s.at("max_perpendicular_error_deg"), a.max_perpendicular_error_deg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment report aggregates: ") + e.what());
  }
  if (!ok) throw ConfigError("experiment report aggregates do not match its runs");
  return rep;
}

// ---------------------------------------------------------------- trials

scenario::Scenario load_trial(double rel_deg, double distance, double jitter_deg) {
  const double cx = 5.0, cy = 3.75, stack_yaw = geometry::kPi<double> / 2;
  const double h = stack_yaw + deg2rad(rel_deg);
  const double rx = cx - distance * std::cos(h), ry = cy - distance * std::sin(h);
  const auto robot = pose_json(rx, ry, h + deg2rad(jitter_deg));
  ordered_json j = {
      {"schema", 1},
      {"name", "load-trial"},
      {"arena", {{"width", 10.0}, {"height", 7.5}, {"resolution", 0.1}}},
      {"robot", robot},
      {"stacks",
       {{{"color", "red"}, {"x", cx}, {"y", cy}, {"yaw_deg", rad2deg(stack_yaw)}, {"layers", 1},
         {"columns", 2}, {"column_gap", 0.02}, {"view", robot}}}},
      {"footprint",
       {{"x", 9.8}, {"y", 7.3}, {"yaw_deg", 180}, {"length", 3.0}, {"width", 0.3},
        {"view", pose_json(8.0, 5.5, geometry::kPi<double> / 2)}}},
      {"blueprint", {{"red"}}},
  };
  return scenario::parse_scenario(j.dump());
}

scenario::Scenario unload_trial(double rho_deg, double distance, double jitter_deg) {
  const double ax = 6.5, ay = 6.0, axis = geometry::kPi<double>;
  const double h = axis - deg2rad(rho_deg);
  const double rx = ax - distance * std::cos(h), ry = ay - distance * std::sin(h);
  const auto robot = pose_json(rx, ry, h + deg2rad(jitter_deg));
  ordered_json j = {
      {"schema", 1},
      {"name", "unload-trial"},
      {"arena", {{"width", 10.0}, {"height", 7.5}, {"resolution", 0.1}}},
      {"robot", robot},
      {"stacks", ordered_json::array()},
      {"footprint",
       {{"x", ax}, {"y", ay}, {"yaw_deg", rad2deg(axis)}, {"length", 4.5}, {"width", 0.3}, {"view", robot}}},
      {"blueprint", {{"red"}}},
      {"preloaded", {"red"}},
  };
  return scenario::parse_scenario(j.dump());
}

RunRecord run_load_trial(const scenario::Scenario& s, const sim::NoiseConfig& noise, std::uint64_t seed) {
  const auto color = s.mission.blueprint.color_of(0);
  auto sim = make_sim(s, {{mission::TaskKind::Load, color, -1}, {mission::TaskKind::Build, color, 0}},
                      noise, seed);
  while (!sim.finished()) {
    const auto top = sim.mission().top;
    if (top != mission::Top::GoToStacks && top != mission::Top::LoadBricks) break;
    sim.tick();
  }
  const auto& m = sim.metrics();
  RunRecord r;
  r.seed = seed;
  r.duration = sim.time();
  r.success = std::any_of(m.pickups.begin(), m.pickups.end(), [](const auto& p) { return p.success; });
  if (!m.detections.empty()) {
    const auto& d = m.detections.front();
    r.distance = d.distance;
    r.distance_error = d.distance_error;
    r.orientation_error_deg = rad2deg(d.orientation_error);
  }
  for (const auto& p : m.pickups) {
    if (p.success || !r.perpendicular_error_deg) r.perpendicular_error_deg = rad2deg(p.perpendicular_error);
    if (!p.failure.empty()) r.failure = p.failure;
  }
  if (!r.success && r.failure.empty()) {
    r.failure = m.skipped.empty() ? "timed out" : m.skipped.front().reason;
  }
  if (r.success) r.failure.clear();
  return r;
}

RunRecord run_unload_trial(const scenario::Scenario& s, const sim::NoiseConfig& noise,
                           std::uint64_t seed) {
  const auto color = s.mission.blueprint.color_of(0);
  auto sim = make_sim(s, {{mission::TaskKind::Build, color, 0}}, noise, seed);
  while (!sim.finished()) sim.tick();
  const auto& m = sim.metrics();
  RunRecord r;
  r.seed = seed;
  r.duration = sim.time();
  if (!m.footprints.empty()) {
    r.distance = m.footprints.front().distance;
    r.distance_error = m.footprints.front().anchor_error;
  }
  for (const auto& d : m.drops) {
    if (!d.failure.empty()) {
      r.failure = d.failure;
      continue;
    }
    r.success = d.success;
    r.inside_fraction = d.placement.inside_fraction;
    r.orientation_error_deg = rad2deg(d.placement.yaw_error);
    r.failure = d.success ? "" : "brick mostly outside the pattern";
  }
  if (!r.inside_fraction && r.failure.empty()) {
    r.failure = m.skipped.empty() ? "timed out" : m.skipped.front().reason;
  }
  return r;
}

ExperimentReport experiment_load(int n, std::uint64_t seed, const std::string& noise, int workers) {
  if (n < 1) throw Error("need at least one run");
  const sim::NoiseConfig nc = scenario::noise_preset(noise);
  ExperimentReport rep;
  rep.kind = "load";
  rep.noise = noise;
  rep.seed = seed;
  rep.runs = fan_out(n, workers, [&](int i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    auto rng = sim::make_stream(s, "trial");
    const double rel = stratified(rng, i, n, -170.0, 170.0);
    std::uniform_real_distribution<double> d(2.5, 3.0), jit(-5.0, 5.0);
    const double dist = d(rng);
    RunRecord r = run_load_trial(load_trial(rel, dist, jit(rng)), nc, s);
    r.run_id = i;
    r.orientation_deg = rel;
    return r;
  });
  return rep;
}

ExperimentReport experiment_unload(int n, std::uint64_t seed, const std::string& noise, int workers) {
  if (n < 1) throw Error("need at least one run");
  const sim::NoiseConfig nc = scenario::noise_preset(noise);
  ExperimentReport rep;
  rep.kind = "unload";
  rep.noise = noise;
  rep.seed = seed;
  rep.runs = fan_out(n, workers, [&](int i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    auto rng = sim::make_stream(s, "trial");
    const double rho = stratified(rng, i, n, 30.0, 150.0);
    std::uniform_real_distribution<double> d(2.2, 2.8), jit(-5.0, 5.0);
    const double dist = d(rng);
    RunRecord r = run_unload_trial(unload_trial(rho, dist, jit(rng)), nc, s);
    r.run_id = i;
    r.orientation_deg = rho;
    return r;
  });
  return rep;
}

void snapshot(const scenario::Scenario& s, const geometry::Vec3d& position, double yaw, double pitch,
              const std::filesystem::path& prefix) {
  Eigen::Matrix3d r0;
  r0 << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  geometry::Iso3<double> cam = geometry::Iso3<double>::Identity();
  cam.linear() = (Eigen::AngleAxisd(yaw, geometry::Vec3d::UnitZ()) *
                  Eigen::AngleAxisd(pitch, geometry::Vec3d::UnitY()))
                     .toRotationMatrix() *
                 r0;
  cam.translation() = position;
  const auto frame = render::render_rgbd(s.world, cam, s.sim.camera, s.sim.render);
  render::write_label_ppm(frame.labels, prefix.string() + "_labels.ppm");
  render::write_depth_pgm(frame.depth, prefix.string() + "_depth.pgm");
}

}  // namespace wb::experiment

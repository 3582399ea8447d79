#pragma once

// Experiment harness: single scenario runs with their artifacts, the seeded
// loading and unloading protocols with MAE reports, and camera snapshots.

#include "wallbuild/scenario.hpp"
#include "wallbuild/sim.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wb::experiment {

struct RunOptions {
  std::uint64_t seed{1};
  std::optional<sim::NoiseConfig> noise;  // overrides the scenario's
  std::optional<double> max_sim_time;
  std::string frame_dir;
};

struct RunResult {
  std::string scenario;
  std::uint64_t seed{1};
  sim::RunMetrics metrics;
  std::vector<sim::TraceRecord> trace;
  double wall_seconds{0};
};

RunResult run_scenario(const scenario::Scenario& s, const RunOptions& o);

std::string trace_jsonl(const std::vector<sim::TraceRecord>& trace);
nlohmann::ordered_json run_report(const RunResult& r);
/// One row per detection, pickup, footprint and drop record.
std::string metrics_csv(const sim::RunMetrics& m);
/// report.json, trace.jsonl and metrics.csv under `dir`. Throws IoError.
void write_run(const RunResult& r, const std::filesystem::path& dir);

struct RunRecord {
  int run_id{0};
  std::uint64_t seed{0};
  bool success{false};
  double duration{0};  // simulated seconds
  // loading: patch at detection; unloading: pattern at detection
  std::optional<double> distance;
  std::optional<double> distance_error;
  double orientation_deg{0};  // initial relative orientation
  std::optional<double> orientation_error_deg;
  std::optional<double> perpendicular_error_deg;
  std::optional<double> inside_fraction;
  std::string failure;
};

struct Aggregates {
  int runs{0};
  int successes{0};
  double success_rate{0};
  double distance_mae{0};
  double orientation_mae_deg{0};
  double max_perpendicular_error_deg{0};
};

struct ExperimentReport {
  std::string kind;   // "load" or "unload"
  std::string noise;  // preset name
  std::uint64_t seed{0};
  std::vector<RunRecord> runs;

  Aggregates aggregates() const;
  bool all_succeeded() const;
  nlohmann::ordered_json to_json() const;
  /// Throws ConfigError when a field is missing or the stored aggregates do
  /// not match the per-run records.
  static ExperimentReport from_json(const nlohmann::json& j);
};

/// Loading trial: one stack in an open arena, the robot on a circle around
/// it with the given heading relative to the brick's long axis.
scenario::Scenario load_trial(double relative_orientation_deg, double distance,
                              double heading_jitter_deg = 0.0);
/// Unloading trial: one preloaded brick, the robot looking at the right end
/// of the pattern with the given wall orientation relative to its heading.
scenario::Scenario unload_trial(double pattern_orientation_deg, double distance,
                                double heading_jitter_deg = 0.0);

/// Evaluates one trial to a record.
RunRecord run_load_trial(const scenario::Scenario& s, const sim::NoiseConfig& noise,
                         std::uint64_t seed);
RunRecord run_unload_trial(const scenario::Scenario& s, const sim::NoiseConfig& noise,
                           std::uint64_t seed);

/// n seeded trials; orientations are drawn uniformly within n equal bins
/// of the range so that small n still spans it. Runs fan out over
/// `workers` threads (0 = hardware concurrency); records stay in run order.
ExperimentReport experiment_load(int n, std::uint64_t seed, const std::string& noise,
                                 int workers = 0);
ExperimentReport experiment_unload(int n, std::uint64_t seed, const std::string& noise,
                                   int workers = 0);

/// Writes `<prefix>_labels.ppm` and `<prefix>_depth.pgm` as seen from a
/// camera at `position` with map yaw/pitch (pitch pi/2 = nadir). Throws
/// IoError.
void snapshot(const scenario::Scenario& s, const geometry::Vec3d& position, double yaw,
              double pitch, const std::filesystem::path& prefix);

}  // namespace wb::experiment

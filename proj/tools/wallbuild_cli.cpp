// wallbuild: run the wall-building mission and the loading / unloading
// experiments in simulation.

#include "wallbuild/experiment.hpp"
#include "wallbuild/scenario.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace wb;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
}

void write_experiment(const experiment::ExperimentReport& rep, const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string());
  write_file(out / "report.json", rep.to_json().dump(2) + "\n");
  std::ostringstream csv;
  csv << "run_id,seed,success,duration_s,distance_m,distance_error_m,orientation_deg,"
         "orientation_error_deg,perpendicular_error_deg,inside_fraction,failure\n";
  const auto o = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : rep.runs) {
    csv << r.run_id << ',' << r.seed << ',' << (r.success ? 1 : 0) << ',' << r.duration << ','
        << o(r.distance) << ',' << o(r.distance_error) << ',' << r.orientation_deg << ','
        << o(r.orientation_error_deg) << ',' << o(r.perpendicular_error_deg) << ','
        << o(r.inside_fraction) << ',' << r.failure << '\n';
  }
  write_file(out / "metrics.csv", csv.str());
  // experiments keep their traces short: one line per run outcome
  std::string trace;
  for (const auto& r : rep.runs) {
    nlohmann::ordered_json j{{"run", r.run_id}, {"seed", r.seed}, {"success", r.success},
                             {"t", r.duration}, {"failure", r.failure}};
    trace += j.dump() + "\n";
  }
  write_file(out / "trace.jsonl", trace);
}

void print_aggregates(const experiment::ExperimentReport& rep) {
  const auto a = rep.aggregates();
  std::cout << rep.kind << " (" << rep.noise << "): " << a.successes << "/" << a.runs
            << " succeeded, distance MAE " << a.distance_mae << " m, orientation MAE "
            << a.orientation_mae_deg << " deg";
  if (rep.kind == "load") std::cout << ", worst perpendicular error " << a.max_perpendicular_error_deg << " deg";
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autonomous brick-wall building in simulation"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::uint64_t seed = 1;
  int runs = 0;
  std::string noise;
  bool dump_frames = false;
  std::string out = "out";
  double max_sim_time = 0;
  int workers = 0;

  auto* run = app.add_subcommand("run", "Run the full mission of a scenario");
  run->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  run->add_option("--seed", seed, "Random seed");
  run->add_option("--noise", noise, "Noise preset: paper-like or off (default: the scenario's)");
  run->add_flag("--dump-frames", dump_frames, "Write every processed camera frame");
  run->add_option("--out", out, "Output directory");
  run->add_option("--max-sim-time", max_sim_time, "Simulated time limit in seconds");

  auto* load = app.add_subcommand("exp-load", "Loading experiment");
  auto* unload = app.add_subcommand("exp-unload", "Unloading experiment");
  for (auto* c : {load, unload}) {
    c->add_option("--runs", runs, "Number of runs")->required()->check(CLI::PositiveNumber);
    c->add_option("--seed", seed, "Base seed");
    c->add_option("--noise", noise, "Noise preset: paper-like or off")->default_val("off");
    c->add_option("--out", out, "Output directory");
    c->add_option("--workers", workers, "Parallel runs (0 = all cores)");
  }

  auto* snap = app.add_subcommand("snapshot", "Render one camera view of a scenario");
  std::vector<double> pose;
  snap->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  snap->add_option("--pose", pose, "Camera x y z yaw_deg pitch_deg (pitch 90 = nadir)")
      ->expected(5)
      ->required();
  snap->add_option("--out", out, "Output prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto sc = scenario::load_scenario(scenario_path);
      experiment::RunOptions o;
      o.seed = seed;
      if (!noise.empty()) o.noise = scenario::noise_preset(noise);
      if (max_sim_time > 0) o.max_sim_time = max_sim_time;
      if (dump_frames) o.frame_dir = (fs::path(out) / "frames").string();
      const auto r = experiment::run_scenario(sc, o);
      experiment::write_run(r, out);
      std::cout << sc.name << " seed " << seed << ": "
                << (r.metrics.completed ? "completed" : "not completed") << ", "
                << r.metrics.bricks_placed << " bricks placed, mission time "
                << r.metrics.mission_time << " s\n";
      bool ok = r.metrics.completed && r.metrics.skipped.empty();
      for (const auto& d : r.metrics.drops) ok = ok && (d.success || !d.failure.empty());
      return ok ? 0 : 1;
    }
    if (load->parsed() || unload->parsed()) {
      const auto rep = load->parsed() ? experiment::experiment_load(runs, seed, noise, workers)
                                      : experiment::experiment_unload(runs, seed, noise, workers);
      write_experiment(rep, out);
      print_aggregates(rep);
      return rep.all_succeeded() ? 0 : 1;
    }
    if (snap->parsed()) {
      const auto sc = scenario::load_scenario(scenario_path);
      experiment::snapshot(sc, {pose[0], pose[1], pose[2]}, geometry::deg2rad(pose[3]),
                           geometry::deg2rad(pose[4]), out);
      std::cout << "wrote " << out << "_labels.ppm and " << out << "_depth.pgm\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

#include "wallbuild/scenario.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace wb::scenario {

namespace {

using nlohmann::json;
using geometry::deg2rad;
using geometry::Pose;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("field '" + path + "': " + what);
}

const json& need(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

double number_or(const json& j, const std::string& key, const std::string& path, double fallback) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : fallback;
}

int integer_or(const json& j, const std::string& key, const std::string& path, int fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  return v.get<int>();
}

world::Color color(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a color name");
  try {
    return world::parse_color(j.get<std::string>());
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

Pose planar(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  return Pose::planar(number(need(j, "x", path), join(path, "x")),
                      number(need(j, "y", path), join(path, "y")),
                      deg2rad(number_or(j, "yaw_deg", path, 0.0)));
}

sim::NoiseConfig noise(const json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return noise_preset(j.get<std::string>());
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
  }
  if (!j.is_object()) fail(path, "expected a preset name or an object");
  sim::NoiseConfig n;
  n.sigma_px = number_or(j, "sigma_px", path, 0.0);
  n.depth_coeff = number_or(j, "depth_coeff", path, 0.0);
  n.sigma_xy = number_or(j, "sigma_xy", path, 0.0);
  n.sigma_yaw = deg2rad(number_or(j, "sigma_yaw_deg", path, 0.0));
  n.drift_tau = number_or(j, "drift_tau", path, 30.0);
  if (n.sigma_px < 0 || n.depth_coeff < 0 || n.sigma_xy < 0 || n.sigma_yaw < 0 || n.drift_tau <= 0) {
    fail(path, "noise parameters must be non-negative");
  }
  return n;
}

const char* kFullMission = R"({
  "schema": 1,
  "name": "full-mission-2r2g2b",
  "arena": {"width": 10.0, "height": 7.5, "resolution": 0.1},
  "robot": {"x": 1.5, "y": 4.0, "yaw_deg": 0},
  "basket_capacity": 4,
  "stacks": [
    {"color": "red", "x": 8.5, "y": 2.5, "yaw_deg": 90, "layers": 1, "columns": 2,
     "column_gap": 0.02, "view": {"x": 6.0, "y": 2.5, "yaw_deg": 0}},
    {"color": "green", "x": 8.5, "y": 4.0, "yaw_deg": 90, "layers": 1, "columns": 2,
     "column_gap": 0.02, "view": {"x": 6.0, "y": 4.0, "yaw_deg": 0}},
    {"color": "blue", "x": 8.5, "y": 5.5, "yaw_deg": 90, "layers": 1, "columns": 2,
     "column_gap": 0.02, "view": {"x": 6.0, "y": 5.5, "yaw_deg": 0}}
  ],
  "footprint": {"x": 6.0, "y": 7.0, "yaw_deg": 180, "length": 4.5, "width": 0.3,
                "view": {"x": 6.5, "y": 4.5, "yaw_deg": 100}},
  "blueprint": [["red", "red", "green", "green", "blue", "blue"]],
  "sim": {"noise": "off", "max_sim_time": 1800}
}
)";

}  // namespace

sim::NoiseConfig noise_preset(const std::string& name) {
  if (name == "paper-like") return sim::NoiseConfig::paper_like();
  if (name == "off") return sim::NoiseConfig::off();
  throw ConfigError("unknown noise preset '" + name + "' (expected paper-like or off)");
}

Scenario parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number
    const size_t upto = std::min(e.byte, text.size());
    const long line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ConfigError("line " + std::to_string(line) + ": " + e.what());
  }
  if (!j.is_object()) fail("", "scenario must be a JSON object");
  const json& schema = need(j, "schema", "");
  if (!schema.is_number_integer() || schema.get<int>() != kSchemaVersion) {
    fail("schema", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }

  Scenario s;
  s.name = j.value("name", std::string("scenario"));
  world::WorldState& w = s.world;
  mission::MissionConfig& mc = s.mission;

  if (j.contains("catalog")) {
    const json& cat = j.at("catalog");
    if (!cat.is_object()) fail("catalog", "expected an object");
    for (const auto& [name, spec] : cat.items()) {
      const std::string path = "catalog." + name;
      const world::Color c = color(json(name), path);
      world::BrickSpec& b = w.catalog[c];
      b.length = number_or(spec, "length", path, b.length);
      b.width = number_or(spec, "width", path, b.width);
      b.height = number_or(spec, "height", path, b.height);
      b.patch_length = number_or(spec, "patch_length", path, b.patch_length);
      b.patch_width = number_or(spec, "patch_width", path, b.patch_width);
      b.slot_cost = integer_or(spec, "slot_cost", path, b.slot_cost);
      if (b.length <= 0 || b.width <= 0 || b.height <= 0 || b.slot_cost < 1) {
        fail(path, "brick dimensions and slot cost must be positive");
      }
    }
  }
  mc.catalog = w.catalog;

  if (j.contains("arena")) {
    const json& a = j.at("arena");
    const double res = number_or(a, "resolution", "arena", 0.1);
    const double width = number(need(a, "width", "arena"), "arena.width");
    const double height = number(need(a, "height", "arena"), "arena.height");
    if (res <= 0 || width <= 0 || height <= 0) fail("arena", "sizes must be positive");
    s.sim.grid.width = static_cast<int>(std::ceil(width / res));
    s.sim.grid.height = static_cast<int>(std::ceil(height / res));
    s.sim.grid.resolution = res;
  }

  w.base = planar(need(j, "robot", ""), "robot");

  const int capacity = integer_or(j, "basket_capacity", "", 4);
  if (capacity < 1) fail("basket_capacity", "must be at least 1");
  w.basket.capacity = capacity;
  mc.capacity = capacity;

  const json& stacks = need(j, "stacks", "");
  if (!stacks.is_array()) fail("stacks", "expected an array");
  for (size_t i = 0; i < stacks.size(); ++i) {
    const std::string path = "stacks[" + std::to_string(i) + "]";
    const json& js = stacks[i];
    world::BrickStack st;
    st.color = color(need(js, "color", path), path + ".color");
    st.base = planar(js, path);
    st.layers = integer_or(js, "layers", path, 1);
    st.columns = integer_or(js, "columns", path, 1);
    st.column_gap = number_or(js, "column_gap", path, 0.0);
    if (st.layers < 1 || st.columns < 1) fail(path, "layers and columns must be at least 1");
    for (const auto& other : w.stacks) {
      if (other.color == st.color) fail(path + ".color", "one stack per color");
    }
    const int ci = static_cast<int>(st.color);
    mc.stack_view[ci] = planar(need(js, "view", path), path + ".view");
    w.stacks.push_back(st);
  }
  w.index_bricks();

  const json& fp = need(j, "footprint", "");
  w.footprint.anchor = planar(fp, "footprint");
  w.footprint.length = number_or(fp, "length", "footprint", 4.5);
  w.footprint.width = number_or(fp, "width", "footprint", 0.3);
  if (w.footprint.length <= 0 || w.footprint.width <= 0) fail("footprint", "sizes must be positive");
  mc.wall_view = planar(need(fp, "view", "footprint"), "footprint.view");

  const json& bp = need(j, "blueprint", "");
  if (!bp.is_array() || bp.empty()) fail("blueprint", "expected a non-empty array of rows");
  for (size_t r = 0; r < bp.size(); ++r) {
    const std::string path = "blueprint[" + std::to_string(r) + "]";
    if (!bp[r].is_array()) fail(path, "expected an array of colors");
    std::vector<world::Color> row;
    double len = 0;
    for (size_t c = 0; c < bp[r].size(); ++c) {
      row.push_back(color(bp[r][c], path + "[" + std::to_string(c) + "]"));
      len += w.catalog[row.back()].length;
    }
    if (len > w.footprint.length + 1e-9) fail(path, "row is longer than the footprint");
    mc.blueprint.rows.push_back(std::move(row));
  }
  w.footprint.blueprint = mc.blueprint.rows;

  if (j.contains("preloaded")) {
    const json& pl = j.at("preloaded");
    if (!pl.is_array()) fail("preloaded", "expected an array of colors");
    for (size_t i = 0; i < pl.size(); ++i) {
      mc.preloaded.push_back(color(pl[i], "preloaded[" + std::to_string(i) + "]"));
    }
  }

  if (j.contains("mission")) {
    const json& m = j.at("mission");
    mc.d_align = number_or(m, "d_align", "mission", mc.d_align);
    mc.d_drop = number_or(m, "d_drop", "mission", mc.d_drop);
    mc.retry_max = integer_or(m, "retry_max", "mission", mc.retry_max);
  }

  if (j.contains("sim")) {
    const json& js = j.at("sim");
    s.sim.dt = number_or(js, "dt", "sim", s.sim.dt);
    s.sim.camera_period = number_or(js, "camera_period", "sim", s.sim.camera_period);
    s.sim.max_sim_time = number_or(js, "max_sim_time", "sim", s.sim.max_sim_time);
    if (js.contains("noise")) s.sim.noise = noise(js.at("noise"), "sim.noise");
    try {
      s.sim.validate();
    } catch (const Error& e) {
      fail("sim", e.what());
    }
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_scenario(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<mission::BrickTask> scenario_plan(const Scenario& s) {
  mission::SlotCosts costs{};
  for (int c = 0; c < world::kColorCount; ++c) {
    costs[c] = s.mission.catalog[static_cast<world::Color>(c)].slot_cost;
  }
  return mission::plan_sequence(s.mission.blueprint, costs, s.mission.capacity);
}

Scenario full_mission() { return parse_scenario(kFullMission); }

}  // namespace wb::scenario

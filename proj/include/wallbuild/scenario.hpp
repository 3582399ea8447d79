#pragma once

// Scenario files: arena, stacks, wall footprint, blueprint and simulation
// settings as versioned JSON.

#include "wallbuild/mission.hpp"
#include "wallbuild/sim.hpp"
#include "wallbuild/world.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wb {

/// Malformed scenario. The message names the line (syntax errors) or the
/// field path (schema errors).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace wb

namespace wb::scenario {

struct Scenario {
  std::string name;
  world::WorldState world;
  mission::MissionConfig mission;
  sim::SimConfig sim;
};

inline constexpr int kSchemaVersion = 1;

/// Throws ConfigError.
Scenario parse_scenario(const std::string& text);
/// Throws IoError when the file cannot be read, ConfigError otherwise.
Scenario load_scenario(const std::filesystem::path& path);

/// "paper-like" or "off". Throws ConfigError.
sim::NoiseConfig noise_preset(const std::string& name);

/// Greedy load/build sequence for the scenario's blueprint.
std::vector<mission::BrickTask> scenario_plan(const Scenario& s);

/// The 2R 2G 2B single-row wall used for the full-mission runs.
Scenario full_mission();

}  // namespace wb::scenario

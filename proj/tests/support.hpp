#pragma once

#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sandsim/scenario.hpp"

namespace sandsim::fixtures {

inline std::string data_path(const std::string& rel) { return std::string(SANDSIM_DATA_DIR) + "/" + rel; }

inline RobotModel panda() { return load_robot(data_path("data/franka_panda.json")); }

// Camera config that looks down at the small flat plate below.
inline nlohmann::json overhead_joints() { return {0.0, -0.5, 0.0, -2.2, 0.0, 1.7, 0.785}; }

/// Small flat plate on the table in front of the arm, fully reachable.
inline nlohmann::json flat_plate_json() {
  return {
      {"name", "flat_plate"},
      {"workflow", "structured"},
      {"robot", data_path("data/franka_panda.json")},
      {"geometries",
       {{"plate",
         {{"surface", {{"kind", "flat"}, {"width", 0.3}, {"height", 0.2}, {"cell_size", 0.004}}},
          {"targets", {{0.05, 0.05, 0.25, 0.15}}},
          {"model", {{"nominal", {{"passes", 1}, {"orientation", "Horizontal"}, {"force", 15.0}, {"feed", 50.0}}}}}}}}},
      {"workpiece", {{"geometry", "plate"}, {"pose", {{"position", {0.5, 0.0, 0.05}}, {"rpy", {0.0, 0.0, 0.0}}}}}},
      {"scan", {{"noise_sigma", 0.0}, {"camera", {{"ray_stride", 8}}}}},
      {"seed", 3}};
}

inline std::shared_ptr<const Scenario> flat_plate() {
  return std::make_shared<const Scenario>(scenario_from_json(flat_plate_json()));
}

inline Scenario load_demo(const std::string& name) { return load_scenario(data_path("scenarios/" + name)); }

inline nlohmann::json load_script(const std::string& name) {
  std::ifstream in(data_path("scenarios/operators/" + name));
  return nlohmann::json::parse(in);
}

}  // namespace sandsim::fixtures

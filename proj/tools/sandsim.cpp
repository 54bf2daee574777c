#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sandsim/driver.hpp"
#include "sandsim/gateway.hpp"
#include "sandsim/perception.hpp"
#include "sandsim/scenario.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sandsim::SchemaError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw sandsim::SchemaError("'" + path + "': " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sandsim::Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes via a temporary so a failed run leaves no partial file behind.
void write_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw sandsim::Error("cannot write '" + path + "'");
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

void write_outputs(const sandsim::Session& s, const std::string& out, const std::string& events,
                   const std::string& ply) {
  if (!out.empty()) write_file(out, sandsim::metrics_document(s).dump(2) + "\n");
  if (!events.empty()) write_file(events, sandsim::events_to_jsonl(s.event_log));
  if (!ply.empty()) {
    if (!s.last_scan) throw sandsim::Error("no scan was taken; nothing to write to '" + ply + "'");
    sandsim::write_ply(*s.last_scan, ply);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-in-the-loop robotic sanding simulator"};
  app.require_subcommand(1);

  std::string scenario_path, operator_path, out_path, events_path, ply_path, record_path, recording_path;
  std::optional<std::uint64_t> seed;
  bool headless = false;
  unsigned short port = 8765;
  double time_scale = 1.0;
  std::string address = "127.0.0.1";

  auto* run = app.add_subcommand("run", "Run a scripted episode");
  run->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  run->add_flag("--headless", headless, "Run without a console (the only supported run mode)");
  run->add_option("--operator", operator_path, "Operator script JSON")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_path, "Metrics JSON output");
  run->add_option("--events", events_path, "Event log JSON-lines output");
  run->add_option("--ply", ply_path, "Write the last scan point cloud as PLY");
  run->add_option("--record", record_path, "Write the client-message recording");

  auto* serve = app.add_subcommand("serve", "Serve one operator session over WebSocket");
  serve->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  serve->add_option("--port", port, "Listen port (0 picks a free one)");
  serve->add_option("--address", address, "Listen address");
  serve->add_option("--seed", seed, "Override the scenario seed");
  serve->add_option("--time-scale", time_scale, "Session seconds per wall second")->check(CLI::PositiveNumber);
  serve->add_option("--record", record_path, "Write the client-message recording on exit");
  serve->add_option("--events", events_path, "Write the event log on exit");

  auto* validate = app.add_subcommand("validate", "Check a scenario against the schema");
  validate->add_option("--scenario", scenario_path, "Scenario JSON")->required();

  auto* replay = app.add_subcommand("replay", "Replay a recorded session headless");
  replay->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  replay->add_option("--recording", recording_path, "Recording from serve --record or run --record")->required();
  replay->add_option("--out", out_path, "Metrics JSON output");
  replay->add_option("--events", events_path, "Event log JSON-lines output");

  CLI11_PARSE(app, argc, argv);

  try {
    const sandsim::Scenario scenario = sandsim::load_scenario(scenario_path);
    if (validate->parsed()) {
      std::cout << "scenario '" << scenario.name << "' is valid\n";
      return 0;
    }
    if (run->parsed()) {
      if (!headless) throw sandsim::Error("run requires --headless; use 'serve' for interactive sessions");
      const auto script = read_json(operator_path);
      std::optional<sandsim::Recorder> rec;
      const std::uint64_t s = seed.value_or(scenario.seed);
      if (!record_path.empty()) rec.emplace(s, scenario.name);
      const auto result = sandsim::run_headless(scenario, script, s, rec ? &*rec : nullptr);
      write_outputs(result.session, out_path, events_path, ply_path);
      if (rec) write_file(record_path, rec->text());
      std::cout << sandsim::metrics_to_json(result.metrics).dump() << "\n";
      return 0;
    }
    if (serve->parsed()) {
      sandsim::ServeOptions opt;
      opt.address = address;
      opt.port = port;
      opt.time_scale = time_scale;
      if (!record_path.empty()) opt.record_path = record_path;
      if (!events_path.empty()) opt.events_path = events_path;
      opt.handle_signals = true;
      opt.on_listening = [](unsigned short p) {
        std::cout << "listening on port " << p << std::endl;
      };
      auto sc = std::make_shared<const sandsim::Scenario>(scenario);
      const auto r = sandsim::serve_session(sc, seed.value_or(scenario.seed), opt);
      std::cout << sandsim::metrics_to_json(r.metrics).dump() << "\n";
      return 0;
    }
    if (replay->parsed()) {
      const auto rec = sandsim::parse_recording(read_text(recording_path));
      const auto session = sandsim::replay_recording(scenario, rec);
      write_outputs(session, out_path, events_path, {});
      std::cout << sandsim::metrics_to_json(sandsim::coverage_metrics(session.grid, session.material())).dump()
                << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

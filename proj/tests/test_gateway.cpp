#include <future>
#include <string>

#include <gtest/gtest.h>

#include "sandsim/gateway.hpp"
#include "support.hpp"
#include "ws_client.hpp"

using namespace sandsim;
using namespace sandsim::fixtures;

namespace {

struct Server {
  std::promise<unsigned short> port;
  std::future<ServeResult> result;

  explicit Server(ServeOptions opt = {}) {
    opt.on_listening = [this](unsigned short p) { port.set_value(p); };
    result = std::async(std::launch::async, [opt] { return serve_session(fixtures::flat_plate(), 3, opt); });
  }
  unsigned short wait_port() { return port.get_future().get(); }
};

}  // namespace

TEST(Gateway, LiveSessionOverWebSocket) {
  Server server;
  Client c(server.wait_port());

  c.send({{"type", "RequestSnapshot"}});
  const json first = c.snapshot_in("Positioning");
  EXPECT_EQ(first["protocol_version"], kProtocolVersion);
  const std::string session_id = first["session"];
  EXPECT_FALSE(session_id.empty());

  // Malformed input is answered with an Error and changes nothing.
  c.send_text("{not json");
  const json err = c.read_until([](const json& m) { return m["type"] == "Error"; });
  EXPECT_EQ(err["in_reply_to"], "{not json");
  c.send(phase_action("start"));
  const json err2 = c.read_until([](const json& m) { return m["type"] == "Error"; });
  EXPECT_NE(err2["message"].get<std::string>().find("start"), std::string::npos);
  c.send({{"type", "CorrectionStream"}, {"correction", {{"mode", "coupled"}, {"u", 4.0}}}});
  c.read_until([](const json& m) { return m["type"] == "Error"; });
  c.send({{"type", "RequestSnapshot"}});
  EXPECT_EQ(c.snapshot_in("Positioning")["ticks"], 0);

  c.send(phase_action("move_arm", {{"joints", fixtures::overhead_joints()}}));
  c.send(phase_action("scan"));
  c.snapshot_in("Scanning");
  c.send(phase_action("scan_complete"));
  c.snapshot_in("Registering");
  c.send({{"type", "PoseNudge"}, {"translation", {0.0005, 0.0, 0.0}}});
  c.send(phase_action("confirm_fit"));
  c.snapshot_in("ReachabilityReview");
  c.send(phase_action("start"));
  c.snapshot_in("Executing");

  // Stream corrections at 30 Hz for 1.5 s while collecting snapshots.
  const auto t0 = Clock::now();
  auto next_send = t0;
  std::uint64_t sent = 0;
  std::size_t first_exec = c.all.size();
  while (Clock::now() - t0 < std::chrono::milliseconds(1500)) {
    if (Clock::now() >= next_send) {
      ++sent;
      c.send({{"type", "CorrectionStream"},
              {"correction", {{"mode", "coupled"}, {"u", 0.5 * std::sin(0.2 * static_cast<double>(sent))}}}});
      next_send += std::chrono::microseconds(33333);
    }
    c.read();
  }
  const auto t1 = Clock::now();
  int snaps = 0;
  std::uint64_t last_input = 0;
  for (std::size_t i = first_exec; i < c.all.size(); ++i) {
    const auto& m = c.all[i].message;
    if (m["type"] != "StateSnapshot" || m["phase"] != "Executing") continue;
    ++snaps;
    const std::uint64_t in = m["last_input_seq"];
    EXPECT_GE(in, last_input);  // the loop only ever sees newer corrections
    EXPECT_LE(in, sent);
    last_input = in;
  }
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  EXPECT_GE(snaps / secs, 20.0) << snaps << " snapshots in " << secs << " s";
  EXPECT_GT(last_input, sent / 2);

  c.send({{"type", "RequestView"}});
  const json vf = c.read_until([](const json& m) { return m["type"] == "ViewFrame"; });
  Received png;
  do png = c.read();
  while (png.binary.empty());
  EXPECT_EQ(png.binary.size(), vf["png_bytes"].get<std::size_t>());
  const auto img = decode_png(std::vector<std::uint8_t>(png.binary.begin(), png.binary.end()));
  EXPECT_EQ(img.width, vf["overlay"]["image"]["width"]);

  c.send(phase_action("pause"));
  c.snapshot_in("Paused");
  c.close();
  const ServeResult res = server.result.get();

  std::uint64_t seq = 0;
  for (const auto& r : c.all) {
    if (r.message.is_null()) continue;
    EXPECT_GT(r.message["seq"].get<std::uint64_t>(), seq);
    EXPECT_EQ(r.message["session"], session_id);
    seq = r.message["seq"];
  }
  EXPECT_GE(res.snapshots_sent, static_cast<std::uint64_t>(snaps));

  // The recorded client log replays to the same event log.
  const Session replayed = replay_recording(*fixtures::flat_plate(), parse_recording(res.recording));
  EXPECT_EQ(events_to_jsonl(replayed.event_log), events_to_jsonl(res.event_log));
  EXPECT_EQ(replayed.phase, Phase::Paused);
}

TEST(Gateway, BindFailuresAreReported) {
  net::io_context ioc;
  tcp::acceptor busy(ioc, tcp::endpoint(net::ip::make_address("127.0.0.1"), 0));
  ServeOptions opt;
  opt.port = busy.local_endpoint().port();
  EXPECT_THROW(serve_session(fixtures::flat_plate(), 1, opt), BindError);
  ServeOptions bad;
  bad.address = "not-an-address";
  EXPECT_THROW(serve_session(fixtures::flat_plate(), 1, bad), BindError);
}

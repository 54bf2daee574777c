#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <nlohmann/json.hpp>

namespace sandsim::fixtures {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Received {
  json message;
  std::string binary;  // payload when the frame was binary
  Clock::time_point at;
};

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver r(ioc_);
    net::connect(ws_.next_layer(), r.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
  }

  void send(const json& j) { send_text(j.dump()); }
  void send_text(const std::string& s) {
    ws_.text(true);
    ws_.write(net::buffer(s));
  }

  Received read() {
    beast::flat_buffer buf;
    ws_.read(buf);
    Received r;
    r.at = Clock::now();
    const std::string s = beast::buffers_to_string(buf.data());
    if (ws_.got_binary()) r.binary = s;
    else r.message = json::parse(s);
    all.push_back(r);
    return r;
  }

  // Reads until a text message matches; everything read is kept in `all`.
  json read_until(const std::function<bool(const json&)>& pred) {
    for (;;) {
      const auto r = read();
      if (!r.message.is_null() && pred(r.message)) return r.message;
    }
  }

  json snapshot_in(const std::string& phase) {
    return read_until([&](const json& m) { return m["type"] == "StateSnapshot" && m["phase"] == phase; });
  }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  std::vector<Received> all;

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

inline json phase_action(const std::string& a, json args = json::object()) {
  return {{"type", "PhaseAction"}, {"action", a}, {"args", std::move(args)}};
}

}  // namespace sandsim::fixtures

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <nlohmann/json.hpp>

#include "sandsim/driver.hpp"
#include "sandsim/errors.hpp"
#include "sandsim/view.hpp"

namespace sandsim {

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  double time_scale = 1.0;  // session seconds per wall-clock second
  std::optional<std::string> record_path;
  std::optional<std::string> events_path;
  bool handle_signals = false;
  std::function<void(unsigned short)> on_listening;
};

struct ServeResult {
  std::vector<Event> event_log;
  std::string recording;
  CoverageMetrics metrics;
  std::uint64_t snapshots_sent = 0;
};

namespace detail {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

class Gateway {
 public:
  Gateway(std::shared_ptr<const Scenario> scenario, std::uint64_t seed, ServeOptions opt)
      : opt_(std::move(opt)), driver_(std::move(scenario), seed), recorder_(seed, driver_.session().scenario->name) {
    driver_.set_recorder(&recorder_);
    std::random_device rd;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
    session_id_ = buf;
  }

  ServeResult run() {
    bind();
    if (opt_.handle_signals) {
      signals_.emplace(ioc_, SIGINT, SIGTERM);
      signals_->async_wait([this](const beast::error_code& ec, int) {
        if (!ec) shutdown();
      });
    }
    acceptor_->async_accept([this](beast::error_code ec, tcp::socket sock) { on_accept(ec, std::move(sock)); });
    std::thread io([this] { ioc_.run(); });
    if (opt_.on_listening) opt_.on_listening(port_);
    loop();
    net::post(ioc_, [this] { close_socket(); });
    ioc_.stop();
    io.join();

    recorder_.finish(driver_.session().ticks);
    ServeResult r;
    r.event_log = driver_.session().event_log;
    r.recording = recorder_.text();
    r.metrics = coverage_metrics(driver_.session().grid, driver_.session().material());
    r.snapshots_sent = snapshots_;
    if (opt_.record_path) recorder_.save(*opt_.record_path);
    if (opt_.events_path) {
      std::ofstream out(*opt_.events_path, std::ios::binary);
      out << events_to_jsonl(r.event_log);
    }
    return r;
  }

 private:
  struct Outgoing {
    std::string data;
    bool binary;
  };

  void bind() {
    beast::error_code ec;
    const auto addr = net::ip::make_address(opt_.address, ec);
    if (ec) throw BindError("bad listen address '" + opt_.address + "'");
    acceptor_.emplace(ioc_);
    const tcp::endpoint ep(addr, opt_.port);
    acceptor_->open(ep.protocol(), ec);
    if (!ec) acceptor_->set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_->bind(ep, ec);
    if (!ec) acceptor_->listen(1, ec);
    if (ec) throw BindError("cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    port_ = acceptor_->local_endpoint().port();
  }

  void on_accept(beast::error_code ec, tcp::socket sock) {
    if (ec) return;
    // One operator per session: stop accepting further connections.
    beast::error_code ignored;
    acceptor_->close(ignored);
    ws_.emplace(std::move(sock));
    ws_->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_->async_accept([this](beast::error_code e) {
      if (e) return shutdown();
      connected_ = true;
      cv_.notify_all();
      read();
    });
  }

  void read() {
    ws_->async_read(buffer_, [this](beast::error_code ec, std::size_t) {
      if (ec) return shutdown();
      const std::string text = beast::buffers_to_string(buffer_.data());
      buffer_.consume(buffer_.size());
      on_message(text);
      read();
    });
  }

  // Network thread. Corrections go straight to the mailbox; everything else
  // is queued for the loop thread.
  void on_message(const std::string& text) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(text);
      if (!m.is_object() || !m.contains("type") || !m.at("type").is_string())
        throw SchemaError("message needs a string 'type'");
      if (m.at("type") == msg::kCorrectionStream) {
        // Numbered only once valid, so sequence numbers count accepted samples.
        const CorrectionInput c = correction_from_json(m.at("correction"));
        driver_.mailbox().post(c, ++correction_seq_);
        return;
      }
    } catch (const std::exception& e) {
      enqueue_json(error_json(e.what(), session_id_, 0, m.is_null() ? nlohmann::json(text) : m), false);
      return;
    }
    {
      std::lock_guard lock(inbox_mutex_);
      inbox_.push_back(std::move(m));
    }
    cv_.notify_all();
  }

  void shutdown() {
    stop_ = true;
    cv_.notify_all();
  }

  void close_socket() {
    beast::error_code ec;
    if (ws_ && ws_->is_open()) ws_->next_layer().close(ec);
    if (acceptor_) acceptor_->close(ec);
    if (signals_) signals_->cancel(ec);
  }

  // Any thread: hand a message to the network thread, which stamps the
  // outgoing sequence number so order on the wire matches numbering.
  void enqueue_json(nlohmann::json j, bool snapshot, std::vector<std::uint8_t> binary = {}) {
    net::post(ioc_, [this, j = std::move(j), snapshot, binary = std::move(binary)]() mutable {
      if (!connected_) return;
      j["seq"] = ++out_seq_;
      j["session"] = session_id_;
      writes_.push_back({j.dump(), false});
      if (!binary.empty()) writes_.push_back({std::string(binary.begin(), binary.end()), true});
      if (snapshot) ++snapshots_;
      if (!writing_) write_next();
    });
  }

  void write_next() {
    if (writes_.empty() || !ws_) {
      writing_ = false;
      return;
    }
    writing_ = true;
    ws_->binary(writes_.front().binary);
    ws_->async_write(net::buffer(writes_.front().data), [this](beast::error_code ec, std::size_t) {
      if (ec) {
        writing_ = false;
        return shutdown();
      }
      writes_.pop_front();
      write_next();
    });
  }

  void send_snapshot() { enqueue_json(snapshot_json(driver_.session(), session_id_, 0), true); }

  void send_view() {
    const auto f = render_view(driver_.session());
    nlohmann::json h{{"type", msg::kViewFrame},
                     {"protocol_version", kProtocolVersion},
                     {"png_bytes", f.png.size()},
                     {"overlay", f.overlay}};
    enqueue_json(std::move(h), false, f.png);
  }

  // Loop thread: sole owner of the session.
  void loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(driver_.session().scenario->execution.dt / opt_.time_scale));
    const int every = driver_.session().scenario->execution.snapshot_every_ticks;
    auto deadline = clock::now();
    bool was_executing = false;
    while (!stop_) {
      std::deque<nlohmann::json> batch;
      {
        std::unique_lock lock(inbox_mutex_);
        if (driver_.session().phase != Phase::Executing)
          cv_.wait_for(lock, std::chrono::milliseconds(20), [this] { return stop_ || !inbox_.empty(); });
        batch.swap(inbox_);
      }
      if (stop_) break;
      bool changed = false;
      for (const auto& m : batch) {
        const std::string type = m.value("type", "");
        try {
          changed = driver_.apply(m) || changed;
          if (type == msg::kRequestSnapshot) send_snapshot();
          if (type == msg::kRequestView) send_view();
        } catch (const std::exception& e) {
          enqueue_json(error_json(e.what(), session_id_, 0, m), false);
        }
      }
      if (changed) send_snapshot();

      const bool executing = driver_.session().phase == Phase::Executing;
      if (executing && !was_executing) deadline = clock::now();
      was_executing = executing;
      if (!executing) continue;
      driver_.step();
      if (driver_.session().phase != Phase::Executing || driver_.session().ticks % every == 0) send_snapshot();
      deadline += period;
      std::unique_lock lock(inbox_mutex_);
      cv_.wait_until(lock, deadline, [this] { return stop_.load(); });
    }
  }

  ServeOptions opt_;
  Driver driver_;
  Recorder recorder_;
  std::string session_id_;
  unsigned short port_ = 0;

  net::io_context ioc_;
  std::optional<tcp::acceptor> acceptor_;
  std::optional<net::signal_set> signals_;
  std::optional<websocket::stream<tcp::socket>> ws_;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> writes_;
  bool writing_ = false;
  bool connected_ = false;  // network thread only
  std::uint64_t out_seq_ = 0;
  std::uint64_t snapshots_ = 0;
  std::atomic<std::uint64_t> correction_seq_{0};

  std::atomic<bool> stop_{false};
  std::mutex inbox_mutex_;
  std::condition_variable cv_;
  std::deque<nlohmann::json> inbox_;
};

}  // namespace detail

/// Serves one operator connection over WebSocket until it disconnects (or a
/// signal arrives when `handle_signals` is set). Blocks the calling thread,
/// which runs the execution loop.
inline ServeResult serve_session(std::shared_ptr<const Scenario> scenario, std::uint64_t seed,
                                 ServeOptions opt = {}) {
  detail::Gateway g(std::move(scenario), seed, std::move(opt));
  return g.run();
}

}  // namespace sandsim

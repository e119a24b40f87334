#pragma once

// Streaming steering service. One WebSocket connection drives one Session;
// each connection gets its own thread and io_context, so sessions never wait
// on each other. Within a connection, messages and generation ticks run on
// that single thread in arrival order.

#include "motionforge/control.hpp"
#include "motionforge/corpus.hpp"
#include "motionforge/io.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

namespace motionforge::service {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

// Shared, read-only for the life of the server.
struct ServiceContext {
  Skeleton skeleton;
  const OccupancyGrid* grid = nullptr;
  SessionConfig session;
  EpisodeSampler sampler;
  int n_actions = 12;
  double fps = 10.0;
};

struct Reply {
  std::vector<json> messages;
  bool close = false;
};

inline json error_message(const std::string& code, const std::string& msg) {
  return {{"type", "error"}, {"code", code}, {"msg", msg}};
}

inline json frames_message(const Emission& e, const std::vector<ActionSegment>& actions) {
  json data = json::array();
  for (Eigen::Index r = 0; r < e.frames.rows(); ++r) {
    json frame = json::array();
    for (Eigen::Index j = 0; j < e.frames.cols(); j += 3)
      frame.push_back({e.frames(r, j), e.frames(r, j + 1), e.frames(r, j + 2)});
    data.push_back(std::move(frame));
  }
  json segs = json::array();
  for (const auto& s : actions) segs.push_back({{"action", s.action}, {"start", s.start}, {"end", s.end}});
  return {{"type", "frames"}, {"frame_index", e.first_frame}, {"data", data}, {"actions", segs}};
}

// Transport-free protocol state for one connection.
class ProtocolHandler {
 public:
  explicit ProtocolHandler(const ServiceContext& ctx) : ctx_(ctx) {}

  json greeting() const { return {{"type", "hello"}, {"proto", kProtocolVersion}}; }

  bool streaming() const { return session_ && session_->status() == SessionStatus::Streaming; }
  const Session* session() const { return session_ ? &*session_ : nullptr; }

  Reply on_text(const std::string& text) {
    Reply r;
    try {
      const json msg = io::parse_json(text, "message");
      require(msg.is_object() && msg.contains("type") && msg.at("type").is_string(), ErrorCode::ParseError,
              "message needs a string \"type\"");
      io::reading("message", [&] {
        dispatch(msg, r);
        return 0;
      });
    } catch (const Error& e) {
      r.messages.push_back(error_message(to_string(e.code()), e.what()));
    } catch (const std::exception& e) {
      r.messages.push_back(error_message("InternalError", e.what()));
    }
    return r;
  }

  // One more chunk of the running episode, if any.
  Reply tick() {
    Reply r;
    if (!streaming()) return r;
    try {
      emit(session_->step(events::Tick{}), r);
    } catch (const Error& e) {
      r.messages.push_back(error_message(to_string(e.code()), e.what()));
    }
    return r;
  }

 private:
  void dispatch(const json& msg, Reply& r) {
    const std::string type = msg.at("type");
    if (type == "hello") {
      const int proto = msg.at("proto").get<int>();
      if (proto != kProtocolVersion) {
        r.messages.push_back(error_message("ProtocolMismatch", "server speaks proto " + std::to_string(kProtocolVersion)));
        r.close = true;
      }
      return;
    }
    if (type == "start") {
      const auto seed = msg.at("seed").get<std::uint64_t>();
      const Vec2 xy = io::json_vec2(msg.at("start_xy"));
      session_.emplace(ctx_.session, ctx_.sampler, ctx_.grid);
      session_->start(seed, starting_frames(ctx_.skeleton, xy, ctx_.session.k, ctx_.fps));
      if (ctx_.grid) r.messages.push_back({{"type", "scene"}, {"grid", io::grid_message(*ctx_.grid)}});
      r.messages.push_back(status());
      return;
    }
    require(session_.has_value(), ErrorCode::InvalidState, "send start first");
    if (type == "set_goal") {
      Subgoal g;
      if (msg.contains("xy")) {
        g = Subgoal::navigation(io::json_vec2(msg.at("xy")));
      } else {
        const std::string hand = msg.at("hand");
        require(hand == "left" || hand == "right", ErrorCode::ParseError, "hand must be left or right");
        g = Subgoal::reach(hand == "left" ? joints::kLeftHand : joints::kRightHand, io::json_vec3(msg.at("xyz")));
      }
      emit(session_->step(events::NewGoal{g}), r);
    } else if (type == "set_action") {
      const int action = msg.at("action");
      const int duration = msg.at("duration_frames");
      require(action >= 0 && action < ctx_.n_actions, ErrorCode::InvalidInput, "action id out of range");
      emit(session_->step(events::NewAction{action, duration}), r);
    } else if (type == "stop") {
      session_->stop();
      r.messages.push_back(status());
    } else {
      throw Error(ErrorCode::ParseError, "unknown message type '" + type + "'");
    }
  }

  void emit(const Emission& e, Reply& r) {
    if (!e.empty()) {
      const auto& ep = session_->current_episode();
      r.messages.push_back(frames_message(e, ep ? ep->request.actions : std::vector<ActionSegment>{}));
    }
    r.messages.push_back(status());
  }

  json status() const {
    return {{"type", "status"},
            {"state", to_string(session_->status())},
            {"emitted", session_->emitted()},
            {"queued", session_->queued_subgoals()}};
  }

  const ServiceContext& ctx_;
  std::optional<Session> session_;
};

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, const ServiceContext& ctx) : ws_(std::move(socket)), proto_(ctx) {}

  void run() {
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->send(self->proto_.greeting().dump());
      self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closing_ = true;
        return;
      }
      const std::string text = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      self->apply(self->proto_.on_text(text));
      if (!self->closing_) self->read();
    });
  }

  void apply(Reply r) {
    for (const auto& m : r.messages) send(m.dump());
    if (r.close) {
      closing_ = true;
      if (outbox_.empty()) close();
    }
    if (proto_.streaming()) schedule_tick();
  }

  // Posted rather than looped so that incoming messages interleave with
  // generation.
  void schedule_tick() {
    if (tick_queued_ || closing_) return;
    tick_queued_ = true;
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->tick_queued_ = false;
      if (!self->closing_) self->apply(self->proto_.tick());
    });
  }

  void send(std::string text) {
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write();
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closing_ = true;
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty())
        self->write();
      else if (self->closing_)
        self->close();
    });
  }

  void close() {
    ws_.async_close(websocket::close_reason(websocket::close_code::policy_error, "protocol mismatch"),
                    [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<tcp::socket> ws_;
  ProtocolHandler proto_;
  beast::flat_buffer buf_;
  std::deque<std::string> outbox_;
  bool tick_queued_ = false;
  bool closing_ = false;
};

class Server {
 public:
  Server(ServiceContext ctx, const std::string& bind, unsigned short port)
      : ctx_(std::move(ctx)), acceptor_(ioc_, tcp::endpoint(net::ip::make_address(bind), port)) {
    require(static_cast<bool>(ctx_.sampler), ErrorCode::InvalidInput, "service needs a sampler");
  }

  ~Server() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  // Blocks until stop() or, with handle_signals, SIGINT/SIGTERM.
  void run(bool handle_signals = false) {
    std::optional<net::signal_set> signals;
    if (handle_signals) {
      signals.emplace(ioc_, SIGINT, SIGTERM);
      signals->async_wait([this](beast::error_code, int) { ioc_.stop(); });
    }
    accept();
    ioc_.run();
    stop_connections();
  }

  void start() {
    accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
    stop_connections();
  }

 private:
  struct Worker {
    std::shared_ptr<net::io_context> ioc;
    std::thread thread;
  };

  void accept() {
    auto conn_ioc = std::make_shared<net::io_context>(1);
    acceptor_.async_accept(*conn_ioc, [this, conn_ioc](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Connection>(std::move(socket), ctx_)->run();
      {
        std::lock_guard<std::mutex> lock(mu_);
        workers_.push_back({conn_ioc, std::thread([conn_ioc] { conn_ioc->run(); })});
      }
      accept();
    });
  }

  void stop_connections() {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& w : workers_) w.ioc->stop();
    for (auto& w : workers_)
      if (w.thread.joinable()) w.thread.join();
    workers_.clear();
  }

  ServiceContext ctx_;
  net::io_context ioc_{1};
  tcp::acceptor acceptor_;
  std::thread thread_;
  std::mutex mu_;
  std::list<Worker> workers_;
};

}  // namespace motionforge::service

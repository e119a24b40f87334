#include "motionforge/service.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <future>

using namespace motionforge;
using service::json;

namespace {

// Pelvis eases toward the goal, everything else jitters; goals with x > 100
// are slow, standing in for an expensive model call.
MatX toy_sampler(const EpisodeRequest& req, Rng& rng) {
  const auto& spec = req.spec;
  if (spec.goal.kind == Subgoal::Kind::Navigation && spec.goal.xy.x() > 100)
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  const EpisodeMask mask = make_episode_mask(spec.length, spec.joint_count, spec.k(), spec.goal, spec.pelvis);
  MatX x = episode_conditioning(spec);
  for (int r = spec.k(); r < spec.length; ++r)
    for (int c = 0; c < x.cols(); ++c)
      if (!mask(r, c)) x(r, c) = x(spec.k() - 1, c) + 0.01 * rng.normal();
  return x;
}

service::ServiceContext toy_context(const OccupancyGrid* grid = nullptr) {
  service::ServiceContext c;
  c.skeleton = default_humanoid();
  c.grid = grid;
  c.sampler = toy_sampler;
  return c;
}

std::vector<json> of_type(const service::Reply& r, const std::string& type) {
  std::vector<json> out;
  for (const auto& m : r.messages)
    if (m.at("type") == type) out.push_back(m);
  return out;
}

// Drives a handler the way a connection does: reply, then tick while streaming.
std::vector<json> drain(service::ProtocolHandler& h, service::Reply r) {
  std::vector<json> all = r.messages;
  while (h.streaming()) {
    const auto t = h.tick();
    all.insert(all.end(), t.messages.begin(), t.messages.end());
  }
  return all;
}

}  // namespace

TEST(Protocol, MalformedMessagesAreReportedAndSessionContinues) {
  const auto ctx = toy_context();
  service::ProtocolHandler h(ctx);
  for (const char* bad : {"{nope", "[1,2]", R"({"type":5})", R"({"type":"dance"})", R"({"type":"start","seed":"x"})",
                          R"({"type":"set_goal","xy":[1,2]})"}) {
    const auto r = h.on_text(bad);
    ASSERT_EQ(r.messages.size(), 1u) << bad;
    EXPECT_EQ(r.messages[0].at("type"), "error");
    EXPECT_TRUE(r.messages[0].contains("code"));
    EXPECT_TRUE(r.messages[0].contains("msg"));
    EXPECT_FALSE(r.close);
  }
  EXPECT_EQ(h.on_text(R"({"type":"set_goal","xy":[1,2]})").messages[0].at("code"), "InvalidState");
  EXPECT_TRUE(of_type(h.on_text(R"({"type":"start","seed":1,"start_xy":[0,0]})"), "error").empty());
  EXPECT_FALSE(of_type(h.on_text(R"({"type":"set_goal","hand":"middle","xyz":[0,0,1]})"), "error").empty());
  EXPECT_FALSE(of_type(h.on_text(R"({"type":"set_action","action":99,"duration_frames":3})"), "error").empty());
  EXPECT_FALSE(of_type(h.on_text(R"({"type":"set_goal","xy":[2,0]})"), "frames").empty());
}

TEST(Protocol, VersionMismatchCloses) {
  const auto ctx = toy_context();
  service::ProtocolHandler h(ctx);
  EXPECT_EQ(h.greeting(), json({{"type", "hello"}, {"proto", 1}}));
  EXPECT_FALSE(h.on_text(R"({"type":"hello","proto":1})").close);
  const auto r = h.on_text(R"({"type":"hello","proto":2})");
  EXPECT_TRUE(r.close);
  EXPECT_EQ(r.messages.at(0).at("code"), "ProtocolMismatch");
}

TEST(Protocol, StartSendsSceneWhenGridLoaded) {
  const OccupancyGrid grid({10, 10, 18}, Vec3(-0.5, -0.5, 0), 0.1, 1);
  const auto ctx = toy_context(&grid);
  service::ProtocolHandler h(ctx);
  const auto r = h.on_text(R"({"type":"start","seed":1,"start_xy":[0,0]})");
  const auto scene = of_type(r, "scene");
  ASSERT_EQ(scene.size(), 1u);
  EXPECT_EQ(scene[0].at("grid").at("dims"), json({10, 10, 18}));
  EXPECT_EQ(of_type(r, "status").at(0).at("state"), "idle");
}

TEST(Protocol, FramesStrictlyIncreaseAndTile) {
  const auto ctx = toy_context();
  service::ProtocolHandler h(ctx);
  h.on_text(R"({"type":"start","seed":4,"start_xy":[0.5,0]})");
  std::vector<json> all = drain(h, h.on_text(R"({"type":"set_goal","xy":[2,0]})"));
  const auto mid = drain(h, h.on_text(R"({"type":"set_goal","xy":[2,1]})"));
  all.insert(all.end(), mid.begin(), mid.end());
  int next = 0;
  for (const auto& m : all) {
    if (m.at("type") != "frames") continue;
    EXPECT_EQ(m.at("frame_index").get<int>(), next);
    for (const auto& f : m.at("data")) EXPECT_EQ(f.size(), 24u);
    next += static_cast<int>(m.at("data").size());
  }
  EXPECT_EQ(next, 16 + 14);
  EXPECT_EQ(h.session()->status(), SessionStatus::Idle);
}

TEST(Protocol, SetActionShowsInNextEpisode) {
  const auto ctx = toy_context();
  service::ProtocolHandler h(ctx);
  h.on_text(R"({"type":"start","seed":4,"start_xy":[0,0]})");
  h.on_text(R"({"type":"set_goal","xy":[3,0]})");
  h.tick();
  const int emitted = h.session()->emitted();
  const auto r = h.on_text(R"({"type":"set_action","action":3,"duration_frames":12})");
  const auto frames = of_type(r, "frames");
  ASSERT_EQ(frames.size(), 1u);
  // Session oracle: the new segment starts at the next unemitted frame.
  EXPECT_EQ(frames[0].at("actions"), json::parse(R"([{"action":3,"start":)" + std::to_string(emitted) + R"(,"end":)" +
                                                 std::to_string(emitted + 11) + "}]"));
  EXPECT_EQ(frames[0].at("frame_index").get<int>(), emitted);
}

TEST(Protocol, StopDropsQueuedWork) {
  const auto ctx = toy_context();
  service::ProtocolHandler h(ctx);
  h.on_text(R"({"type":"start","seed":4,"start_xy":[0,0]})");
  h.on_text(R"({"type":"set_goal","xy":[3,0]})");
  ASSERT_TRUE(h.streaming());
  const auto r = h.on_text(R"({"type":"stop"})");
  EXPECT_FALSE(h.streaming());
  EXPECT_EQ(of_type(r, "status").at(0).at("state"), "idle");
  EXPECT_TRUE(h.tick().messages.empty());
}

// ---- over the wire ----

namespace {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = net::ip::tcp;

struct Client {
  net::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit Client(unsigned short port) {
    tcp::resolver resolver(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }
  void send(const json& j) { ws.write(net::buffer(j.dump())); }
  json recv() {
    beast::flat_buffer b;
    ws.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  // Frames until the session reports idle after the last frame.
  std::vector<json> stream_until_idle() {
    std::vector<json> frames;
    for (;;) {
      json m = recv();
      if (m.at("type") == "frames") frames.push_back(m);
      if (m.at("type") == "status" && m.at("state") == "idle" && !frames.empty()) return frames;
    }
  }
};

}  // namespace

TEST(Service, StartGoalStreamOverWebSocket) {
  service::Server server(toy_context(), "127.0.0.1", 0);
  server.start();
  Client c(server.port());
  EXPECT_EQ(c.recv(), json({{"type", "hello"}, {"proto", 1}}));
  c.send({{"type", "hello"}, {"proto", 1}});
  c.send({{"type", "start"}, {"seed", 3}, {"start_xy", {0, 0}}});
  EXPECT_EQ(c.recv().at("type"), "status");
  c.send({{"type", "set_goal"}, {"xy", {1.5, 0.2}}});
  const auto frames = c.stream_until_idle();
  int last = -1;
  for (const auto& f : frames) {
    EXPECT_GT(f.at("frame_index").get<int>(), last);
    last = f.at("frame_index");
  }
  EXPECT_EQ(frames.back().at("data").back().at(0), json({1.5, 0.2, frames.back()["data"].back()[0][2]}));
  c.send(json{{"type", "bogus"}});
  EXPECT_EQ(c.recv().at("type"), "error");
  c.send({{"type", "set_goal"}, {"xy", {0.5, 0.0}}});
  EXPECT_EQ(c.stream_until_idle().front().at("frame_index"), 16);
  c.ws.close(websocket::close_code::normal);
  server.stop();
}

TEST(Service, ProtocolMismatchClosesConnection) {
  service::Server server(toy_context(), "127.0.0.1", 0);
  server.start();
  Client c(server.port());
  c.recv();
  c.send({{"type", "hello"}, {"proto", 7}});
  EXPECT_EQ(c.recv().at("code"), "ProtocolMismatch");
  beast::flat_buffer b;
  beast::error_code ec;
  c.ws.read(b, ec);
  EXPECT_EQ(ec, websocket::error::closed);
  server.stop();
}

TEST(Service, ConcurrentSessionsAreIndependent) {
  service::Server server(toy_context(), "127.0.0.1", 0);
  server.start();
  auto run = [&](std::uint64_t seed, double goal_x) {
    Client c(server.port());
    c.recv();
    c.send({{"type", "start"}, {"seed", seed}, {"start_xy", {0, 0}}});
    c.recv();
    c.send({{"type", "set_goal"}, {"xy", {goal_x, 0}}});
    const auto frames = c.stream_until_idle();
    c.ws.close(websocket::close_code::normal);
    json all = json::array();
    for (const auto& f : frames)
      for (const auto& d : f.at("data")) all.push_back(d);
    return all;
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto slow = std::async(std::launch::async, run, 1, 150.0);
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const json a = run(1, 2.0);
  const double fast_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const json b = run(2, 2.0);
  slow.get();
  EXPECT_LT(fast_s, 1.2);  // did not wait for the slow session's model call
  ASSERT_EQ(a.size(), b.size());
  EXPECT_NE(a, b);
  EXPECT_EQ(a, run(1, 2.0));
  server.stop();
}

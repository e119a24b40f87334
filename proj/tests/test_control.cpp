#include "motionforge/control.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace motionforge;

namespace {

OccupancyGrid open_room(int n = 100) { return OccupancyGrid({n, n, 18}, Vec3(-1.0, -5.0, 0.0), 0.1, 1); }

double polyline_gap(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Deterministic stand-in for the model: eases the pelvis from the transition
// toward the goal and jitters everything else with the session rng.
MatX toy_sampler(const EpisodeRequest& req, Rng& rng) {
  const auto& spec = req.spec;
  const EpisodeMask mask = make_episode_mask(spec.length, spec.joint_count, spec.k(), spec.goal, spec.pelvis);
  MatX x = episode_conditioning(spec);
  for (int r = spec.k(); r < spec.length; ++r)
    for (int c = 0; c < x.cols(); ++c)
      if (!mask(r, c)) x(r, c) = x(spec.k() - 1, c) + 0.01 * rng.normal();
  return x;
}

MatX seed_frames(int k = 2, int j = 24) { return MatX::Zero(k, j * 3); }

}  // namespace

TEST(ChunkSchedule, Examples) {
  EXPECT_EQ(make_chunk_schedule(16), (std::vector<int>{2, 4, 8, 2}));
  EXPECT_EQ(make_chunk_schedule(2), (std::vector<int>{2}));
  EXPECT_EQ(make_chunk_schedule(6), (std::vector<int>{2, 4}));
  EXPECT_EQ(make_chunk_schedule(14), (std::vector<int>{2, 4, 8}));
  EXPECT_THROW(make_chunk_schedule(1), Error);
}

TEST(ChunkSchedule, SumsAndGrowth) {
  for (int n = 2; n <= 300; ++n) {
    const auto c = make_chunk_schedule(n);
    int sum = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_GT(c[i], 0);
      if (i + 1 < c.size()) EXPECT_EQ(c[i], 2 << i);
      sum += c[i];
    }
    EXPECT_EQ(sum, n);
  }
}

TEST(Planner, GoalEqualsStart) {
  const auto sg = plan_subgoals(open_room(), Vec2(0.33, 0.21), Vec2(0.33, 0.21));
  ASSERT_EQ(sg.size(), 1u);
  EXPECT_EQ(sg[0], Vec2(0.33, 0.21));
}

TEST(Planner, OpenRoomStraightLine) {
  const auto sg = plan_subgoals(open_room(), Vec2(0.05, 0.05), Vec2(5.05, 0.05));
  ASSERT_EQ(sg.size(), 5u);
  EXPECT_EQ(sg.back(), Vec2(5.05, 0.05));
  Vec2 prev(0.05, 0.05);
  for (const auto& p : sg) {
    EXPECT_NEAR(p.y(), 0.05, 1e-6);
    EXPECT_LE(polyline_gap(prev, p), 1.0 + 1e-12);
    prev = p;
  }
  const Traversability t = traversability(open_room());
  const auto path = astar(t, t.cell_of(Vec2(0.05, 0.05)), t.cell_of(Vec2(5.05, 0.05)));
  EXPECT_NEAR(path.cost, 5.0, 0.1 + 1e-9);
}

TEST(Planner, OffGridPointsStayWithinACell) {
  const auto sg = plan_subgoals(open_room(), Vec2(0.0, 0.0), Vec2(5.0, 0.0));
  for (const auto& p : sg) EXPECT_LE(std::abs(p.y()), 0.05 + 1e-6);
  EXPECT_EQ(sg.back(), Vec2(5.0, 0.0));
}

TEST(Planner, WallWithDoor) {
  OccupancyGrid g = open_room(40);  // x in [-1, 3), y in [-5, -1)
  const int wall_x = 20, door_y = 30;
  for (int y = 0; y < 40; ++y)
    if (y != door_y) g.set(wall_x, y, 12, 0);
  const Traversability t = traversability(g);
  const auto path = astar(t, {5, 5}, {35, 5});
  bool through_door = false;
  for (const auto& c : path.cells) {
    EXPECT_TRUE(t.walkable(c[0], c[1]));
    if (c[0] == wall_x) through_door = c[1] == door_y;
  }
  EXPECT_TRUE(through_door);
  const double oracle = mftest::oracle_path_cost(mftest::oracle_walkable(g), 5, 5, 35, 5);
  EXPECT_NEAR(path.cost, oracle * g.cell_size(), 1e-9);
}

TEST(Planner, ObstacleAboveStandingBandIsIgnored) {
  OccupancyGrid g({10, 10, 25}, Vec3(0, 0, 0), 0.1, 1);
  for (int y = 0; y < 10; ++y) g.set(5, y, 22, 0);  // 2.25 m, above the band
  EXPECT_NO_THROW(plan_subgoals(g, Vec2(0.05, 0.5), Vec2(0.95, 0.5)));
  for (int y = 0; y < 10; ++y) g.set(5, y, 17, 0);  // 1.75 m, inside
  try {
    plan_subgoals(g, Vec2(0.05, 0.5), Vec2(0.95, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unreachable);
  }
}

TEST(Planner, BlockedEndpointsAndShortGrids) {
  OccupancyGrid g = open_room(20);
  g.set(3, 3, 0, 0);
  EXPECT_THROW(plan_subgoals(g, Vec2(-1 + 0.35, -5 + 0.35), Vec2(0.5, -4.0)), Error);
  EXPECT_THROW(plan_subgoals(g, Vec2(-0.5, -4.5), Vec2(50, 50)), Error);
  OccupancyGrid flat({10, 10, 2}, Vec3::Zero(), 0.1, 1);
  EXPECT_THROW(plan_subgoals(flat, Vec2(0.05, 0.05), Vec2(0.5, 0.5)), Error);
}

TEST(Planner, CostMatchesDijkstraOnRandomGrids) {
  Rng rng(21);
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const OccupancyGrid g = mftest::random_plan_grid(rng);
    const auto w = mftest::oracle_walkable(g);
    const int sx = static_cast<int>(rng.uniform_int(0, 63)), sy = static_cast<int>(rng.uniform_int(0, 63));
    const int gx = static_cast<int>(rng.uniform_int(0, 63)), gy = static_cast<int>(rng.uniform_int(0, 63));
    const double oracle = mftest::oracle_path_cost(w, sx, sy, gx, gy);
    const Traversability t = traversability(g);
    if (oracle < 0) {
      EXPECT_THROW(astar(t, {sx, sy}, {gx, gy}), Error);
      continue;
    }
    const auto path = astar(t, {sx, sy}, {gx, gy});
    EXPECT_NEAR(path.cost, oracle * g.cell_size(), 1e-9) << "trial " << trial;
    ++solved;
    const Vec2 s = t.center(sx, sy), e = t.center(gx, gy);
    const auto sg = plan_subgoals(g, s, e);
    EXPECT_EQ(sg.back(), e);
    Vec2 prev = s;
    for (const auto& p : sg) {
      EXPECT_LE((p - prev).norm(), 1.0 + 1e-9);
      const auto c = t.cell_of(p);
      EXPECT_TRUE(t.walkable(c[0], c[1]) || (p - t.center(c[0], c[1])).cwiseAbs().maxCoeff() > 0.0499);
      prev = p;
    }
  }
  EXPECT_GT(solved, 50);
}

TEST(SessionTest, EventBeforeStartIsInvalidState) {
  Session s({}, toy_sampler);
  try {
    s.step(events::Tick{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidState);
  }
}

TEST(SessionTest, SingleGoalPassThroughAndChunks) {
  Session s({}, toy_sampler);
  s.start(7, seed_frames());
  std::vector<int> cumulative;
  MatX stream(0, 72);
  auto append = [&](const Emission& e) {
    EXPECT_EQ(e.first_frame, stream.rows());
    MatX joined(stream.rows() + e.frames.rows(), 72);
    joined << stream, e.frames;
    stream = joined;
    cumulative.push_back(static_cast<int>(stream.rows()));
  };
  append(s.step(events::NewGoal{Subgoal::navigation(Vec2(1, 0))}));
  while (s.status() != SessionStatus::Idle) append(s.step(events::Tick{}));
  EXPECT_EQ(cumulative, (std::vector<int>{2, 6, 14, 16}));
  EXPECT_TRUE(s.step(events::Tick{}).empty());

  EpisodeRequest req;
  req.spec.transition = seed_frames();
  req.spec.goal = Subgoal::navigation(Vec2(1, 0));
  Rng rng(7);
  EXPECT_TRUE((stream.array() == toy_sampler(req, rng).array()).all());
}

TEST(SessionTest, NewGoalMidEpisodeStitchesOnEmittedFrames) {
  Session s({}, toy_sampler);
  std::vector<EpisodeRecord> episodes;
  s.on_episode = [&](const EpisodeRecord& r) { episodes.push_back(r); };
  s.start(3, seed_frames());
  MatX stream(0, 72);
  auto take = [&](const Emission& e) {
    ASSERT_EQ(e.first_frame, stream.rows());
    MatX joined(stream.rows() + e.frames.rows(), 72);
    joined << stream, e.frames;
    stream = joined;
  };
  take(s.step(events::NewGoal{Subgoal::navigation(Vec2(1, 0))}));
  take(s.step(events::Tick{}));  // 6 frames out
  take(s.step(events::NewGoal{Subgoal::navigation(Vec2(0, 1))}));
  ASSERT_EQ(episodes.size(), 2u);
  EXPECT_EQ(episodes[1].request.first_frame, 4);
  EXPECT_TRUE((episodes[1].frames.topRows(2).array() == stream.middleRows(4, 2).array()).all());
  EXPECT_EQ(stream.rows(), 8);
  while (s.status() != SessionStatus::Idle) take(s.step(events::Tick{}));
  EXPECT_EQ(stream.rows(), 6 + 14);
  EXPECT_EQ(stream(19, 0), 0.0);
  EXPECT_EQ(stream(19, 1), 1.0);
}

TEST(SessionTest, ActionSegmentsStartAtNextFrame) {
  Session s({}, toy_sampler);
  std::vector<EpisodeRecord> episodes;
  s.on_episode = [&](const EpisodeRecord& r) { episodes.push_back(r); };
  s.start(3, seed_frames());
  s.step(events::NewGoal{Subgoal::navigation(Vec2(1, 0))});
  s.step(events::Tick{});
  s.step(events::NewAction{4, 30});
  ASSERT_EQ(episodes.size(), 2u);
  ASSERT_EQ(episodes[1].request.actions.size(), 1u);
  EXPECT_EQ(episodes[1].request.actions[0], (ActionSegment{4, 6, 35}));
  // The interrupted goal is resumed.
  EXPECT_EQ(episodes[1].request.spec.goal.xy, Vec2(1, 0));
  s.step(events::NewAction{4, 5});
  EXPECT_EQ(s.actions().size(), 2u);
  EXPECT_EQ(s.actions()[0].end, s.actions()[1].start - 1);
}

TEST(SessionTest, RandomInterleavingsEmitEachFrameOnce) {
  Rng rng(5);
  for (int run = 0; run < 200; ++run) {
    SessionConfig cfg;
    cfg.k = static_cast<int>(rng.uniform_int(1, 4));
    cfg.length = static_cast<int>(rng.uniform_int(cfg.k + 1, 20));
    Session s(cfg, toy_sampler);
    std::vector<EpisodeRecord> episodes;
    s.on_episode = [&](const EpisodeRecord& r) { episodes.push_back(r); };
    s.start(static_cast<std::uint64_t>(run), seed_frames(cfg.k));
    MatX stream = seed_frames(cfg.k);  // seed rows count as stream frames 0..k-1
    int emitted = 0;
    for (int ev = 0; ev < 40; ++ev) {
      const double u = rng.uniform();
      Emission e;
      if (u < 0.15)
        e = s.step(events::NewGoal{Subgoal::navigation(Vec2(rng.uniform(-3, 3), rng.uniform(-3, 3)))});
      else if (u < 0.25)
        e = s.step(events::NewAction{static_cast<int>(rng.uniform_int(0, 3)), static_cast<int>(rng.uniform_int(1, 40))});
      else
        e = s.step(events::Tick{});
      ASSERT_EQ(e.first_frame, emitted);
      for (Eigen::Index r = 0; r < e.frames.rows(); ++r) {
        const int f = emitted + static_cast<int>(r);
        if (f < stream.rows()) {
          ASSERT_TRUE((stream.row(f).array() == e.frames.row(r).array()).all());
        } else {
          stream.conservativeResize(f + 1, Eigen::NoChange);
          stream.row(f) = e.frames.row(r);
        }
      }
      emitted += static_cast<int>(e.frames.rows());
      ASSERT_EQ(s.emitted(), emitted);
    }
    for (const auto& ep : episodes) {
      const int f0 = ep.request.first_frame;
      ASSERT_TRUE((ep.frames.topRows(cfg.k).array() == stream.middleRows(f0, cfg.k).array()).all());
    }
  }
}

TEST(SessionTest, GridPlansSubgoalQueue) {
  const OccupancyGrid g = open_room();
  Session s({}, toy_sampler, &g);
  s.start(1, seed_frames());
  s.step(events::NewGoal{Subgoal::navigation(Vec2(2.5, 0.0))});
  EXPECT_EQ(s.queued_subgoals(), 2u);
  try {
    s.step(events::NewGoal{Subgoal::navigation(Vec2(300.0, 0.0))});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unreachable);
  }
  EXPECT_EQ(s.queued_subgoals(), 2u);
}

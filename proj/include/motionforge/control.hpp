#pragma once

// Goal segmentation over the occupancy grid, the chunked emission schedule
// and the interactive session that streams frames episode by episode.

#include "motionforge/action.hpp"
#include "motionforge/diffusion.hpp"
#include "motionforge/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <tuple>
#include <variant>
#include <vector>

namespace motionforge {

// ---- Planner ----------------------------------------------------------------

// xy projection of the grid: a column is walkable iff every cell whose
// center lies in the standing band z in [0, 1.8] m is reachable.
struct Traversability {
  int nx = 0, ny = 0;
  Vec2 origin = Vec2::Zero();
  double cell = 0;
  std::vector<std::uint8_t> free;  // ix * ny + iy

  bool in_bounds(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < nx && iy < ny; }
  bool walkable(int ix, int iy) const { return in_bounds(ix, iy) && free[static_cast<std::size_t>(ix) * ny + iy]; }
  Vec2 center(int ix, int iy) const { return origin + cell * Vec2(ix + 0.5, iy + 0.5); }
  std::array<int, 2> cell_of(const Vec2& p) const {
    const Vec2 rel = (p - origin) / cell;
    return {static_cast<int>(std::floor(rel.x())), static_cast<int>(std::floor(rel.y()))};
  }
};

inline constexpr double kStandingBand = 1.8;

inline Traversability traversability(const OccupancyGrid& grid) {
  const auto& d = grid.dims();
  const double h = grid.cell_size();
  const double z0 = grid.origin().z();
  require(z0 <= 1e-9 && z0 + d[2] * h >= kStandingBand - 1e-9, ErrorCode::InvalidInput,
          "grid does not span the standing band");
  Traversability t{d[0], d[1], grid.origin().head<2>(), h, {}};
  t.free.assign(static_cast<std::size_t>(d[0]) * d[1], 1);
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < d[2]; ++iz) {
        const double zc = z0 + (iz + 0.5) * h;
        if (zc < 0 || zc > kStandingBand) continue;
        if (!grid.at(ix, iy, iz)) {
          t.free[static_cast<std::size_t>(ix) * d[1] + iy] = 0;
          break;
        }
      }
  return t;
}

struct GridPath {
  std::vector<std::array<int, 2>> cells;
  double cost = 0;  // meters
};

// 8-connected moves, no corner cutting: a diagonal step needs both
// orthogonal neighbours walkable.
inline constexpr std::array<std::array<int, 2>, 8> kMoves = {
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

inline bool move_allowed(const Traversability& t, int ix, int iy, int dx, int dy) {
  if (!t.walkable(ix + dx, iy + dy)) return false;
  if (dx != 0 && dy != 0) return t.walkable(ix + dx, iy) && t.walkable(ix, iy + dy);
  return true;
}

inline double octile(int dx, int dy) {
  const int ax = std::abs(dx), ay = std::abs(dy);
  return std::max(ax, ay) + (std::sqrt(2.0) - 1.0) * std::min(ax, ay);
}

inline GridPath astar(const Traversability& t, std::array<int, 2> from, std::array<int, 2> to) {
  require(t.walkable(from[0], from[1]), ErrorCode::Unreachable, "start cell is not walkable");
  require(t.walkable(to[0], to[1]), ErrorCode::Unreachable, "goal cell is not walkable");
  const auto id = [&](int ix, int iy) { return static_cast<std::size_t>(ix) * t.ny + iy; };
  const std::size_t n = static_cast<std::size_t>(t.nx) * t.ny;
  std::vector<double> g(n, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);

  // (f, g, index); ties on f prefer larger g, then the lower index.
  using Entry = std::tuple<double, double, std::size_t>;
  auto worse = [](const Entry& a, const Entry& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) > std::get<2>(b);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  const std::size_t start = id(from[0], from[1]), goal = id(to[0], to[1]);
  g[start] = 0;
  open.emplace(octile(to[0] - from[0], to[1] - from[1]), 0.0, start);
  while (!open.empty()) {
    const auto [f, gc, cur] = open.top();
    open.pop();
    if (closed[cur]) continue;
    closed[cur] = 1;
    if (cur == goal) break;
    const int ix = static_cast<int>(cur / t.ny), iy = static_cast<int>(cur % t.ny);
    for (const auto& m : kMoves) {
      if (!move_allowed(t, ix, iy, m[0], m[1])) continue;
      const std::size_t nb = id(ix + m[0], iy + m[1]);
      if (closed[nb]) continue;
      const double ng = gc + ((m[0] != 0 && m[1] != 0) ? std::sqrt(2.0) : 1.0);
      if (ng < g[nb]) {
        g[nb] = ng;
        parent[nb] = static_cast<std::int64_t>(cur);
        open.emplace(ng + octile(to[0] - ix - m[0], to[1] - iy - m[1]), ng, nb);
      }
    }
  }
  if (!closed[goal]) throw Error(ErrorCode::Unreachable, "no walkable path to the goal");
  GridPath path;
  path.cost = g[goal] * t.cell;
  for (std::int64_t c = static_cast<std::int64_t>(goal); c >= 0; c = parent[static_cast<std::size_t>(c)])
    path.cells.push_back({static_cast<int>(c / t.ny), static_cast<int>(c % t.ny)});
  std::reverse(path.cells.begin(), path.cells.end());
  return path;
}

struct PlannerConfig {
  double max_spacing = 1.0;  // meters between consecutive subgoals
};

// Polyline start -> interior cell centers -> goal, resampled at equal arc
// length so that no gap exceeds max_spacing. The last subgoal is the goal.
inline std::vector<Vec2> resample_path(const std::vector<Vec2>& poly, double max_spacing) {
  std::vector<double> acc{0.0};
  for (std::size_t i = 1; i < poly.size(); ++i) acc.push_back(acc.back() + (poly[i] - poly[i - 1]).norm());
  const double total = acc.back();
  const int n = std::max(1, static_cast<int>(std::ceil(total / max_spacing - 1e-9)));
  std::vector<Vec2> out;
  std::size_t seg = 1;
  for (int i = 1; i < n; ++i) {
    const double s = total * i / n;
    while (seg + 1 < poly.size() && acc[seg] < s) ++seg;
    const double len = acc[seg] - acc[seg - 1];
    const double u = len > 0 ? (s - acc[seg - 1]) / len : 0.0;
    out.push_back(poly[seg - 1] + u * (poly[seg] - poly[seg - 1]));
  }
  out.push_back(poly.back());
  return out;
}

inline std::vector<Vec2> plan_subgoals(const OccupancyGrid& grid, const Vec2& start_xy, const Vec2& goal_xy,
                                       const PlannerConfig& cfg = {}) {
  require(cfg.max_spacing > 0, ErrorCode::InvalidInput, "subgoal spacing must be positive");
  const Traversability t = traversability(grid);
  const GridPath path = astar(t, t.cell_of(start_xy), t.cell_of(goal_xy));
  std::vector<Vec2> poly{start_xy};
  for (std::size_t i = 1; i + 1 < path.cells.size(); ++i) poly.push_back(t.center(path.cells[i][0], path.cells[i][1]));
  poly.push_back(goal_xy);
  return resample_path(poly, cfg.max_spacing);
}

// ---- Chunk schedule -------------------------------------------------------

namespace detail {
inline std::vector<int> doubling_chunks(int length) {
  std::vector<int> chunks;
  int total = 0;
  for (int c = 2; total < length; c *= 2) {
    chunks.push_back(std::min(c, length - total));
    total += chunks.back();
  }
  return chunks;
}
}  // namespace detail

// 2, 4, 8, ... until the total reaches `length`; the last chunk is cut to fit.
inline std::vector<int> make_chunk_schedule(int length) {
  require(length >= 2, ErrorCode::InvalidInput, "episode length must be at least 2");
  return detail::doubling_chunks(length);
}

// ---- Session --------------------------------------------------------------

struct EpisodeRequest {
  EpisodeSpec spec;      // transition and goal filled in, embeddings left to the sampler
  int first_frame = 0;   // global frame of row 0
  std::vector<ActionSegment> actions;
};

using EpisodeSampler = std::function<MatX(const EpisodeRequest&, Rng&)>;

struct SessionConfig {
  int length = 16;
  int k = 2;
  int joint_count = 24;
  int pelvis = 0;
  PlannerConfig planner;
};

enum class SessionStatus { Uninitialized, Idle, Sampling, Streaming };

inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Uninitialized: return "uninitialized";
    case SessionStatus::Idle: return "idle";
    case SessionStatus::Sampling: return "sampling";
    case SessionStatus::Streaming: return "streaming";
  }
  return "?";
}

namespace events {
struct NewGoal {
  Subgoal goal;
};
struct NewAction {
  int action = 0;
  int duration_frames = 1;
};
struct Tick {};
}  // namespace events

using SessionEvent = std::variant<events::NewGoal, events::NewAction, events::Tick>;

struct Emission {
  int first_frame = 0;
  MatX frames;  // rows x J*3, possibly empty

  bool empty() const { return frames.rows() == 0; }
};

struct EpisodeRecord {
  EpisodeRequest request;
  MatX frames;
};

// Every event yields at most one chunk. A control signal drops whatever is
// left of the running episode and resamples from the last k emitted frames.
class Session {
 public:
  Session(SessionConfig cfg, EpisodeSampler sampler, const OccupancyGrid* grid = nullptr)
      : cfg_(cfg), sampler_(std::move(sampler)), grid_(grid) {
    require(cfg_.k >= 1 && cfg_.k < cfg_.length, ErrorCode::InvalidInput, "need 1 <= k < episode length");
    require(static_cast<bool>(sampler_), ErrorCode::InvalidInput, "session needs an episode sampler");
  }

  // `seed_frames` (k rows) are the first k frames of the stream.
  void start(std::uint64_t seed, const MatX& seed_frames) {
    require(seed_frames.rows() == cfg_.k && seed_frames.cols() == cfg_.joint_count * 3, ErrorCode::ShapeMismatch,
            "seed frames must be k x J*3");
    rng_ = Rng(seed);
    tail_ = seed_frames;
    stream_len_ = cfg_.k;
    emitted_ = 0;
    queue_.clear();
    actions_.clear();
    active_.reset();
    status_ = SessionStatus::Idle;
  }

  Emission step(const SessionEvent& ev) {
    require(status_ != SessionStatus::Uninitialized, ErrorCode::InvalidState, "session not started");
    return std::visit([this](const auto& e) { return handle(e); }, ev);
  }

  // Drops the running episode and every queued subgoal; emitted frames stay.
  void stop() {
    require(status_ != SessionStatus::Uninitialized, ErrorCode::InvalidState, "session not started");
    abort_active(false);
    queue_.clear();
    status_ = SessionStatus::Idle;
  }

  SessionStatus status() const { return status_; }
  int emitted() const { return emitted_; }
  const MatX& tail() const { return tail_; }
  std::size_t queued_subgoals() const { return queue_.size(); }
  const std::vector<ActionSegment>& actions() const { return actions_; }
  const SessionConfig& config() const { return cfg_; }
  const std::optional<EpisodeRecord>& current_episode() const { return current_; }
  Vec2 pelvis_xy() const {
    return Vec2(tail_(tail_.rows() - 1, cfg_.pelvis * 3), tail_(tail_.rows() - 1, cfg_.pelvis * 3 + 1));
  }

  // Called after each episode is sampled.
  std::function<void(const EpisodeRecord&)> on_episode;

 private:
  struct Active {
    std::vector<int> chunk_ends;  // rows of the episode, exclusive
    std::size_t next = 0;
    int row = 0;  // next row to emit
  };

  Emission handle(const events::NewGoal& e) {
    std::deque<Subgoal> goals;
    if (e.goal.kind == Subgoal::Kind::Navigation && grid_) {
      for (const Vec2& p : plan_subgoals(*grid_, pelvis_xy(), e.goal.xy, cfg_.planner))
        goals.push_back(Subgoal::navigation(p));
    } else {
      goals.push_back(e.goal);
    }
    abort_active(false);
    queue_ = std::move(goals);
    return advance();
  }

  Emission handle(const events::NewAction& e) {
    require(e.duration_frames >= 1, ErrorCode::InvalidInput, "action duration must be positive");
    const ActionSegment seg{e.action, emitted_, emitted_ + e.duration_frames - 1};
    std::vector<ActionSegment> next;
    for (ActionSegment s : actions_) {
      if (s.action == seg.action && s.end >= seg.start) {
        s.end = seg.start - 1;
        if (s.end < s.start) continue;
      }
      next.push_back(s);
    }
    next.push_back(seg);
    validate_segments(next, std::numeric_limits<int>::max());
    actions_ = std::move(next);
    abort_active(true);
    return advance();
  }

  Emission handle(const events::Tick&) { return advance(); }

  void abort_active(bool requeue) {
    if (active_ && requeue && current_) queue_.push_front(current_->request.spec.goal);
    active_.reset();
  }

  Emission advance() {
    if (!active_ && !queue_.empty()) begin_episode();
    if (!active_) {
      status_ = SessionStatus::Idle;
      return Emission{emitted_, MatX(0, cfg_.joint_count * 3)};
    }
    Active& a = *active_;
    const int end = a.chunk_ends[a.next++];
    const int first_global = current_->request.first_frame + a.row;
    Emission out{first_global, current_->frames.middleRows(a.row, end - a.row)};
    a.row = end;
    push_emitted(out);
    if (a.next == a.chunk_ends.size()) {
      active_.reset();
      status_ = queue_.empty() ? SessionStatus::Idle : SessionStatus::Streaming;
    } else {
      status_ = SessionStatus::Streaming;
    }
    return out;
  }

  void begin_episode() {
    EpisodeRequest req;
    req.spec.length = cfg_.length;
    req.spec.joint_count = cfg_.joint_count;
    req.spec.pelvis = cfg_.pelvis;
    req.spec.transition = tail_;
    req.spec.goal = queue_.front();
    req.first_frame = stream_len_ - cfg_.k;
    req.actions = actions_;
    status_ = SessionStatus::Sampling;
    MatX frames = sampler_(req, rng_);
    require(frames.rows() == cfg_.length && frames.cols() == cfg_.joint_count * 3, ErrorCode::ShapeMismatch,
            "sampler returned an episode of the wrong shape");
    require((frames.topRows(cfg_.k).array() == tail_.array()).all(), ErrorCode::InvalidState,
            "sampler broke the transition frames");
    queue_.pop_front();

    // Rows before `first` are already part of the stream.
    const int first = emitted_ - req.first_frame;
    Active a;
    a.row = first;
    int end = first;
    for (int c : detail::doubling_chunks(cfg_.length - first)) a.chunk_ends.push_back(end += c);
    active_ = a;
    current_ = EpisodeRecord{std::move(req), std::move(frames)};
    if (on_episode) on_episode(*current_);
  }

  void push_emitted(const Emission& e) {
    emitted_ = e.first_frame + static_cast<int>(e.frames.rows());
    if (emitted_ <= stream_len_) return;
    const int fresh = emitted_ - stream_len_;
    MatX joined(tail_.rows() + fresh, tail_.cols());
    joined << tail_, e.frames.bottomRows(fresh);
    tail_ = joined.bottomRows(cfg_.k);
    stream_len_ = emitted_;
  }

  SessionConfig cfg_;
  EpisodeSampler sampler_;
  const OccupancyGrid* grid_ = nullptr;
  Rng rng_{0};
  MatX tail_;
  int stream_len_ = 0;  // frames known to the stream (seed rows count)
  int emitted_ = 0;
  std::deque<Subgoal> queue_;
  std::vector<ActionSegment> actions_;
  std::optional<Active> active_;
  std::optional<EpisodeRecord> current_;
  SessionStatus status_ = SessionStatus::Uninitialized;
};

inline Emission session_step(Session& session, const SessionEvent& ev) { return session.step(ev); }

}  // namespace motionforge

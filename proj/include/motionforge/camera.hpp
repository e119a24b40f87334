#pragma once

// Camera tracking for rendering. A ring of proposals around the body is
// scored at keyframes by how many joints of the interacting hand each can
// see; a DP picks the keyframe sequence, and a natural cubic spline through
// the chosen yaws fills the frames between.

#include "motionforge/kinematics.hpp"
#include "motionforge/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace motionforge {

struct CameraConfig {
  int proposals = 20;
  double radius = 2.0;
  double height = 1.4;
  double fov_h = kPi / 2;
  double aspect = 4.0 / 3.0;  // width / height of the image plane
  double hit_tolerance = 0.10;
  double hand_threshold = 0.20;
  int keyframe_interval = 30;
  double lambda = 1.0;  // coverage weight, radians per visible joint
};

struct CameraProposal {
  int index = 0;
  double yaw = 0;  // about z in the human frame
  Vec3 position = Vec3::Zero();
  Vec3 forward = Vec3::UnitX();  // horizontal, toward the body
};

inline double proposal_yaw(int index, int count) { return wrap_angle(2 * kPi * index / count); }

// Proposal i sits at yaw 2*pi*i/n measured from the human's heading.
inline std::vector<CameraProposal> make_proposals(const Vec2& human_xy, double heading, const CameraConfig& cfg = {}) {
  require(cfg.proposals >= 1 && cfg.radius > 0, ErrorCode::InvalidInput, "bad camera ring");
  std::vector<CameraProposal> out;
  for (int i = 0; i < cfg.proposals; ++i) {
    CameraProposal p;
    p.index = i;
    p.yaw = proposal_yaw(i, cfg.proposals);
    const double a = heading + 2 * kPi * i / cfg.proposals;
    const Vec2 xy = human_xy + cfg.radius * Vec2(std::cos(a), std::sin(a));
    p.position = Vec3(xy.x(), xy.y(), cfg.height);
    p.forward = Vec3(-std::cos(a), -std::sin(a), 0.0);
    out.push_back(p);
  }
  return out;
}

enum class Hand { Left, Right };

// Ties and far hands go to the right hand.
inline Hand select_interacting_hand(const std::vector<Vec3>& left, const std::vector<Vec3>& right,
                                    const std::vector<Vec3>& object_points, double threshold = 0.20) {
  auto nearest = [&](const std::vector<Vec3>& hand) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& h : hand)
      for (const auto& p : object_points) best = std::min(best, (h - p).norm());
    return best;
  };
  const double dl = nearest(left), dr = nearest(right);
  return dl < dr && dl <= threshold ? Hand::Left : Hand::Right;
}

inline bool in_frustum(const CameraProposal& cam, const Vec3& p, const CameraConfig& cfg) {
  const Vec3 d = p - cam.position;
  const Vec3 right = cam.forward.cross(Vec3::UnitZ());
  const double depth = d.dot(cam.forward);
  if (depth <= 0) return false;
  const double th = std::tan(cfg.fov_h / 2);
  const double tv = th / cfg.aspect;
  return std::abs(d.dot(right)) <= depth * th && std::abs(d.z()) <= depth * tv;
}

// A joint is visible when it is in the frustum and no scene surface crosses
// the ray more than hit_tolerance before reaching it. Hits behind the joint
// do not occlude it.
inline bool joint_visible(const CameraProposal& cam, const Vec3& joint, const TriangleMesh& scene, const CameraConfig& cfg) {
  if (!in_frustum(cam, joint, cfg)) return false;
  const Vec3 d = joint - cam.position;
  const double dist = d.norm();
  if (dist == 0) return true;
  const auto hit = raycast(scene, cam.position, d / dist);
  return !hit || hit->t >= dist - cfg.hit_tolerance;
}

inline int visibility_count(const CameraProposal& cam, const std::vector<Vec3>& joints, const TriangleMesh& scene,
                            const CameraConfig& cfg = {}) {
  int n = 0;
  for (const auto& j : joints) n += joint_visible(cam, j, scene, cfg);
  return n;
}

// Per keyframe, the requirement drops from all joints toward one until some
// proposal meets it, which leaves the proposals with the best count. A
// keyframe where nothing is visible stays unconstrained.
inline std::vector<std::vector<bool>> adjust_thresholds(const std::vector<std::vector<int>>& counts) {
  std::vector<std::vector<bool>> feasible;
  for (const auto& row : counts) {
    const int best = row.empty() ? 0 : *std::max_element(row.begin(), row.end());
    std::vector<bool> f;
    for (int c : row) f.push_back(best == 0 || c >= best);
    feasible.push_back(std::move(f));
  }
  return feasible;
}

struct DpResult {
  std::vector<int> path;
  double cost = 0;
};

inline double path_cost(const std::vector<int>& path, const std::vector<double>& yaws,
                        const std::vector<std::vector<double>>& coverage, double lambda) {
  double c = 0;
  for (std::size_t k = 0; k < path.size(); ++k) {
    c -= lambda * coverage[k][path[k]];
    if (k > 0) c += std::abs(wrap_angle(yaws[path[k]] - yaws[path[k - 1]]));
  }
  return c;
}

// Minimizes total |yaw change| - lambda * total coverage over feasible
// proposals. Among equal costs (within 1e-9) the lexicographically smallest
// index sequence wins.
inline DpResult dp_select_path(const std::vector<std::vector<double>>& coverage, const std::vector<std::vector<bool>>& feasible,
                               const std::vector<double>& yaws, double lambda = 1.0) {
  const int kf = static_cast<int>(coverage.size());
  const int n = static_cast<int>(yaws.size());
  require(kf >= 1, ErrorCode::InvalidInput, "need at least one keyframe");
  require(static_cast<int>(feasible.size()) == kf, ErrorCode::ShapeMismatch, "feasible mask per keyframe");
  for (int k = 0; k < kf; ++k) {
    require(static_cast<int>(coverage[k].size()) == n && static_cast<int>(feasible[k].size()) == n,
            ErrorCode::ShapeMismatch, "score per proposal");
    require(std::find(feasible[k].begin(), feasible[k].end(), true) != feasible[k].end(), ErrorCode::InvalidInput,
            "keyframe " + std::to_string(k) + " has no feasible proposal");
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr double eps = 1e-9;
  // Cost to go from proposal i at keyframe k.
  std::vector<std::vector<double>> go(kf, std::vector<double>(n, inf));
  for (int i = 0; i < n; ++i)
    if (feasible[kf - 1][i]) go[kf - 1][i] = -lambda * coverage[kf - 1][i];
  for (int k = kf - 2; k >= 0; --k)
    for (int i = 0; i < n; ++i) {
      if (!feasible[k][i]) continue;
      double best = inf;
      for (int j = 0; j < n; ++j)
        if (go[k + 1][j] < inf) best = std::min(best, std::abs(wrap_angle(yaws[j] - yaws[i])) + go[k + 1][j]);
      go[k][i] = best - lambda * coverage[k][i];
    }
  auto pick = [&](auto value) {
    double best = inf;
    for (int j = 0; j < n; ++j) best = std::min(best, value(j));
    for (int j = 0; j < n; ++j)
      if (value(j) <= best + eps) return j;
    return -1;
  };
  DpResult r;
  r.path.push_back(pick([&](int j) { return go[0][j]; }));
  for (int k = 1; k < kf; ++k) {
    const int prev = r.path.back();
    r.path.push_back(pick([&](int j) {
      return go[k][j] < inf ? std::abs(wrap_angle(yaws[j] - yaws[prev])) + go[k][j] : inf;
    }));
  }
  r.cost = path_cost(r.path, yaws, coverage, lambda);
  return r;
}

namespace detail {

// Second derivatives of the natural cubic spline through (x, y).
inline std::vector<double> natural_spline_moments(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  // Thomas algorithm on the interior equations.
  std::vector<double> c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    const double a = h0 / 6, b = (h0 + h1) / 3, cc = h1 / 6;
    const double r = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    const double denom = b - a * c[i - 1];
    c[i] = cc / denom;
    d[i] = (r - a * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = d[i] - c[i] * m[i + 1];
    if (i == 1) break;
  }
  return m;
}

}  // namespace detail

inline std::vector<double> unwrap_angles(const std::vector<double>& a) {
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(i == 0 ? a[0] : out.back() + wrap_angle(a[i] - a[i - 1]));
  return out;
}

// Natural cubic spline through the unwrapped keyframe yaws, wrapped back to
// (-pi, pi]. Frames outside the keyframe span hold the end values.
inline std::vector<double> interpolate_yaw(const std::vector<double>& key_yaws, const std::vector<int>& key_frames, int frames) {
  require(!key_yaws.empty() && key_yaws.size() == key_frames.size(), ErrorCode::InvalidInput, "one yaw per keyframe");
  for (std::size_t i = 1; i < key_frames.size(); ++i)
    require(key_frames[i] > key_frames[i - 1], ErrorCode::InvalidInput, "keyframes must increase");
  const std::vector<double> y = unwrap_angles(key_yaws);
  std::vector<double> x(key_frames.begin(), key_frames.end());
  const auto m = detail::natural_spline_moments(x, y);
  std::vector<double> out(static_cast<std::size_t>(std::max(0, frames)));
  std::size_t seg = 0;
  for (int f = 0; f < frames; ++f) {
    const auto node = std::find(key_frames.begin(), key_frames.end(), f);
    if (node != key_frames.end()) {
      out[f] = wrap_angle(key_yaws[node - key_frames.begin()]);
      continue;
    }
    if (x.size() == 1 || f <= key_frames.front()) {
      out[f] = wrap_angle(y.front());
      continue;
    }
    if (f >= key_frames.back()) {
      out[f] = wrap_angle(y.back());
      continue;
    }
    while (x[seg + 1] < f) ++seg;
    const double h = x[seg + 1] - x[seg];
    const double a = x[seg + 1] - f, b = f - x[seg];
    const double v = m[seg] * a * a * a / (6 * h) + m[seg + 1] * b * b * b / (6 * h) + (y[seg] / h - m[seg] * h / 6) * a +
                     (y[seg + 1] / h - m[seg + 1] * h / 6) * b;
    out[f] = wrap_angle(v);
  }
  return out;
}

inline std::vector<int> keyframe_indices(int frames, int interval) {
  require(frames >= 1 && interval >= 1, ErrorCode::InvalidInput, "bad keyframe request");
  std::vector<int> k;
  for (int f = 0; f < frames; f += interval) k.push_back(f);
  if (k.back() != frames - 1) k.push_back(frames - 1);
  return k;
}

struct CameraFrame {
  double yaw = 0;  // human frame
  Vec3 position = Vec3::Zero();
  Vec3 look_at = Vec3::Zero();
};

struct KeyframePlan {
  std::vector<int> keyframes;
  std::vector<int> chosen;
  std::vector<Hand> hands;
  std::vector<std::vector<int>> counts;
  std::vector<CameraFrame> frames;
};

inline double body_heading(const JointFrame& j) {
  const Vec3 l = (j.row(joints::kLeftHip) - j.row(joints::kRightHip)).transpose();
  return std::atan2(-l.x(), l.y());
}

// `objects` holds the dynamic object points per frame and may be empty.
inline KeyframePlan plan_camera_track(const Motion& motion, const std::vector<std::vector<Vec3>>& objects,
                                      const TriangleMesh& scene, const CameraConfig& cfg = {}) {
  const int frames = static_cast<int>(motion.size());
  require(frames >= 1, ErrorCode::InvalidInput, "empty motion");
  require(motion.front().rows() == joints::kCount, ErrorCode::ShapeMismatch, "camera tracking needs the 24-joint body");
  require(objects.empty() || static_cast<int>(objects.size()) == frames, ErrorCode::ShapeMismatch, "object points per frame");
  KeyframePlan plan;
  plan.keyframes = keyframe_indices(frames, cfg.keyframe_interval);
  std::vector<double> yaws;
  for (int i = 0; i < cfg.proposals; ++i) yaws.push_back(proposal_yaw(i, cfg.proposals));

  std::vector<std::vector<double>> coverage;
  for (int f : plan.keyframes) {
    const JointFrame& j = motion[f];
    auto pts = [&](int a, int b) { return std::vector<Vec3>{j.row(a).transpose(), j.row(b).transpose()}; };
    const auto left = pts(joints::kLeftWrist, joints::kLeftHand);
    const auto right = pts(joints::kRightWrist, joints::kRightHand);
    const Hand hand = objects.empty() ? Hand::Right : select_interacting_hand(left, right, objects[f], cfg.hand_threshold);
    plan.hands.push_back(hand);
    const Vec2 xy(j(joints::kPelvis, 0), j(joints::kPelvis, 1));
    std::vector<int> row;
    for (const auto& cam : make_proposals(xy, body_heading(j), cfg))
      row.push_back(visibility_count(cam, hand == Hand::Left ? left : right, scene, cfg));
    coverage.emplace_back(row.begin(), row.end());
    plan.counts.push_back(std::move(row));
  }
  plan.chosen = dp_select_path(coverage, adjust_thresholds(plan.counts), yaws, cfg.lambda).path;

  std::vector<double> key_yaws;
  for (int c : plan.chosen) key_yaws.push_back(yaws[c]);
  const auto per_frame = interpolate_yaw(key_yaws, plan.keyframes, frames);
  for (int f = 0; f < frames; ++f) {
    const JointFrame& j = motion[f];
    const Vec2 xy(j(joints::kPelvis, 0), j(joints::kPelvis, 1));
    const double a = body_heading(j) + per_frame[f];
    CameraFrame cf;
    cf.yaw = per_frame[f];
    cf.position = Vec3(xy.x() + cfg.radius * std::cos(a), xy.y() + cfg.radius * std::sin(a), cfg.height);
    cf.look_at = Vec3(xy.x(), xy.y(), cfg.height);
    plan.frames.push_back(cf);
  }
  return plan;
}

}  // namespace motionforge

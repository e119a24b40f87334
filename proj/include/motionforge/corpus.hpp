#pragma once

// Procedural corridor-walking corpus: a straight corridor between two
// walls and a parametric gait driven through forward kinematics. Every clip
// is fully determined by the seed.

#include "motionforge/kinematics.hpp"
#include "motionforge/mesh.hpp"
#include "motionforge/scene.hpp"

#include <cmath>
#include <vector>

namespace motionforge {

inline MatX motion_to_matrix(const Motion& m) {
  require(!m.empty(), ErrorCode::InvalidInput, "empty motion");
  const Eigen::Index j = m.front().rows();
  MatX out(static_cast<Eigen::Index>(m.size()), j * 3);
  for (std::size_t f = 0; f < m.size(); ++f) {
    require(m[f].rows() == j, ErrorCode::ShapeMismatch, "ragged motion");
    for (Eigen::Index i = 0; i < j; ++i)
      for (int d = 0; d < 3; ++d) out(static_cast<Eigen::Index>(f), i * 3 + d) = m[f](i, d);
  }
  return out;
}

inline Motion matrix_to_motion(const MatX& x) {
  require(x.cols() % 3 == 0, ErrorCode::ShapeMismatch, "width must be a multiple of 3");
  const Eigen::Index j = x.cols() / 3;
  Motion m(static_cast<std::size_t>(x.rows()), JointFrame(j, 3));
  for (Eigen::Index f = 0; f < x.rows(); ++f)
    for (Eigen::Index i = 0; i < j; ++i)
      for (int d = 0; d < 3; ++d) m[static_cast<std::size_t>(f)](i, d) = x(f, i * 3 + d);
  return m;
}

// Mean over frames and joints of |X_{f+1,j} - X_{f,j}|.
inline double mean_joint_displacement(const MatX& x) {
  require(x.rows() >= 2 && x.cols() % 3 == 0, ErrorCode::InvalidInput, "need two frames of xyz joints");
  double sum = 0;
  const Eigen::Index j = x.cols() / 3;
  for (Eigen::Index f = 0; f + 1 < x.rows(); ++f)
    for (Eigen::Index i = 0; i < j; ++i) sum += (x.block(f + 1, i * 3, 1, 3) - x.block(f, i * 3, 1, 3)).norm();
  return sum / static_cast<double>((x.rows() - 1) * j);
}

// Pelvis heading from the hip line; forward is left-hip minus right-hip
// turned a quarter clockwise.
inline double pelvis_yaw(const MatX& x, Eigen::Index frame) {
  const double lx = x(frame, joints::kLeftHip * 3) - x(frame, joints::kRightHip * 3);
  const double ly = x(frame, joints::kLeftHip * 3 + 1) - x(frame, joints::kRightHip * 3 + 1);
  return std::atan2(-lx, ly);
}

struct CorridorConfig {
  int clips = 200;
  int frames = 48;
  double fps = 10.0;
  double length = 12.0;      // corridor runs along +x from 0
  double half_width = 1.0;   // walls at y = +-half_width
  double wall_thickness = 0.2;
  double wall_height = 2.2;
  double cell = 0.1;
};

struct CorridorCorpus {
  CorridorConfig config;
  Skeleton skeleton;
  TriangleMesh scene;
  OccupancyGrid grid;
  std::vector<MatX> clips;  // frames x J*3, world coordinates
};

inline TriangleMesh corridor_mesh(const CorridorConfig& c) {
  TriangleMesh m;
  for (double s : {1.0, -1.0}) {
    const double y0 = s > 0 ? c.half_width : -c.half_width - c.wall_thickness;
    const TriangleMesh wall = make_box(Vec3(-1.0, y0, 0.0), Vec3(c.length + 1.0, y0 + c.wall_thickness, c.wall_height));
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), wall.vertices.begin(), wall.vertices.end());
    for (auto t : wall.triangles) {
      for (auto& v : t) v += base;
      m.triangles.push_back(t);
    }
  }
  return m;
}

// Bounds of the corridor grid: one cell of margin beyond the walls, z over
// the standing band.
inline OccupancyGrid corridor_grid(const CorridorConfig& c, const TriangleMesh& mesh) {
  const double margin = c.wall_thickness + 0.2;
  const Vec3 lo(-1.0, -c.half_width - margin, 0.0);
  const Vec3 hi(c.length + 1.0, c.half_width + margin, 1.8);
  return voxelize(mesh, lo, hi, c.cell).grid;
}

struct GaitParams {
  double speed;        // m/s along x
  double period;       // s per full gait cycle
  double phase;        // rad
  double x0, y0;       // start
  double sway_amp;     // lateral wander (m)
  double sway_period;  // s
  double sway_phase;
  double leg_swing;    // rad
  double arm_swing;    // rad
  double knee_bend;    // rad
};

inline GaitParams random_gait(Rng& rng, const CorridorConfig& c) {
  GaitParams g;
  g.speed = rng.uniform(0.7, 1.3);
  g.period = 1.1 * std::pow(1.0 / g.speed, 0.3);
  g.phase = rng.uniform(0, 2 * kPi);
  g.x0 = rng.uniform(0.5, c.length - 0.5 - g.speed * c.frames / c.fps);
  g.y0 = rng.uniform(-0.3, 0.3);
  g.sway_amp = rng.uniform(0.0, 0.25);
  g.sway_period = rng.uniform(3.0, 6.0);
  g.sway_phase = rng.uniform(0, 2 * kPi);
  g.leg_swing = rng.uniform(0.3, 0.45);
  g.arm_swing = rng.uniform(0.15, 0.35);
  g.knee_bend = rng.uniform(0.4, 0.7);
  return g;
}

inline Pose gait_pose(const GaitParams& g, double t, int joint_count) {
  Pose p = Pose::identity(joint_count);
  const double w = 2 * kPi / g.sway_period;
  const double y = g.y0 + g.sway_amp * std::sin(w * t + g.sway_phase);
  const double dy = g.sway_amp * w * std::cos(w * t + g.sway_phase);
  const double heading = std::atan2(dy, g.speed);
  const double phi = 2 * kPi * t / g.period + g.phase;
  p.root_translation = Vec3(g.x0 + g.speed * t, y, 0.93 - 0.02 * (1 - std::cos(2 * phi)) / 2);

  auto set = [&](int j, const Mat3& r) { p.rotations[j] = matrix_to_rot6d(r); };
  auto rx = [](double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); };
  auto ry = [](double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); };
  auto rz = [](double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); };

  set(joints::kPelvis, rz(heading + 0.05 * std::sin(phi)));
  set(joints::kSpine2, rz(-0.08 * std::sin(phi)));
  // Negative rotation about y swings a hanging limb forward.
  const double left = std::sin(phi), right = std::sin(phi + kPi);
  set(joints::kLeftHip, ry(-g.leg_swing * left));
  set(joints::kRightHip, ry(-g.leg_swing * right));
  set(joints::kLeftKnee, ry(g.knee_bend * std::max(0.0, std::sin(phi - 0.6 * kPi))));
  set(joints::kRightKnee, ry(g.knee_bend * std::max(0.0, std::sin(phi + 0.4 * kPi))));
  set(joints::kLeftShoulder, ry(g.arm_swing * left) * rx(-1.35));
  set(joints::kRightShoulder, ry(g.arm_swing * right) * rx(1.35));
  set(joints::kLeftElbow, rz(0.25 + 0.1 * std::max(0.0, -left)));
  set(joints::kRightElbow, rz(-0.25 - 0.1 * std::max(0.0, -right)));
  return p;
}

inline MatX synthesize_walk(const Skeleton& skel, const GaitParams& g, int frames, double fps) {
  Motion m;
  for (int f = 0; f < frames; ++f) m.push_back(forward_kinematics(skel, gait_pose(g, f / fps, skel.joint_count())));
  return motion_to_matrix(m);
}

// First k frames of a steady walk along +x starting at `xy`, the state a
// fresh session or long-form generation starts from.
inline MatX starting_frames(const Skeleton& skel, const Vec2& xy, int k, double fps = 10.0) {
  require(k >= 1, ErrorCode::InvalidInput, "need at least one starting frame");
  GaitParams g{1.0, 1.1, 0.0, xy.x(), xy.y(), 0.0, 4.0, 0.0, 0.38, 0.25, 0.55};
  return synthesize_walk(skel, g, k, fps);
}

inline CorridorCorpus make_corridor_corpus(const CorridorConfig& cfg, std::uint64_t seed) {
  require(cfg.clips > 0 && cfg.frames >= 2, ErrorCode::InvalidInput, "corpus needs clips of at least 2 frames");
  CorridorCorpus c{cfg, default_humanoid(), corridor_mesh(cfg), {}, {}};
  c.grid = corridor_grid(cfg, c.scene);
  Rng rng(seed);
  for (int i = 0; i < cfg.clips; ++i) c.clips.push_back(synthesize_walk(c.skeleton, random_gait(rng, cfg), cfg.frames, cfg.fps));
  return c;
}

inline double corpus_joint_displacement(const std::vector<MatX>& clips) {
  double sum = 0;
  double n = 0;
  for (const auto& c : clips) {
    const double w = static_cast<double>(c.rows() - 1);
    sum += mean_joint_displacement(c) * w;
    n += w;
  }
  return sum / n;
}

}  // namespace motionforge

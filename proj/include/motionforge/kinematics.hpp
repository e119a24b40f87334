#pragma once

// Skeleton, 6D rotations, forward kinematics and the clipped/regularized CCD
// inverse-kinematics solver.

#include "motionforge/core.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace motionforge {

// Per-frame joint positions, one row per joint, meters, world frame.
using JointFrame = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Motion = std::vector<JointFrame>;

struct Bone {
  std::string name;
  int parent = -1;  // -1 marks the root
  Vec3 offset = Vec3::Zero();
};

class Skeleton {
 public:
  Skeleton() = default;

  explicit Skeleton(std::vector<Bone> bones) : bones_(std::move(bones)) {
    require(!bones_.empty(), ErrorCode::InvalidInput, "skeleton has no bones");
    int roots = 0;
    for (std::size_t i = 0; i < bones_.size(); ++i) {
      const int p = bones_[i].parent;
      if (p < 0) {
        ++roots;
        require(i == 0, ErrorCode::InvalidInput, "root must be the first bone");
      } else {
        require(p < static_cast<int>(i), ErrorCode::InvalidInput,
                "bone '" + bones_[i].name + "' is not in topological order");
      }
      require(bones_[i].offset.allFinite(), ErrorCode::InvalidInput, "non-finite bone offset");
    }
    require(roots == 1, ErrorCode::InvalidInput, "skeleton must have exactly one root");

    children_.resize(bones_.size());
    depth_.assign(bones_.size(), 0);
    for (std::size_t i = 1; i < bones_.size(); ++i) {
      children_[bones_[i].parent].push_back(static_cast<int>(i));
      depth_[i] = depth_[bones_[i].parent] + 1;
    }
  }

  int joint_count() const { return static_cast<int>(bones_.size()); }
  const Bone& bone(int i) const { return bones_[i]; }
  const std::vector<Bone>& bones() const { return bones_; }
  int parent(int i) const { return bones_[i].parent; }
  const std::vector<int>& children(int i) const { return children_[i]; }
  int depth(int i) const { return depth_[i]; }
  int max_depth() const { return *std::max_element(depth_.begin(), depth_.end()); }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < bones_.size(); ++i)
      if (bones_[i].name == name) return static_cast<int>(i);
    return std::nullopt;
  }

  int index(const std::string& name) const {
    auto i = find(name);
    require(i.has_value(), ErrorCode::InvalidInput, "unknown joint '" + name + "'");
    return *i;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& b : bones_) out.push_back(b.name);
    return out;
  }

  // Joints from `joint` up to and including the root.
  std::vector<int> ancestors(int joint) const {
    std::vector<int> out;
    for (int p = bones_[joint].parent; p >= 0; p = bones_[p].parent) out.push_back(p);
    return out;
  }

  bool is_ancestor(int ancestor, int joint) const {
    for (int p = bones_[joint].parent; p >= 0; p = bones_[p].parent)
      if (p == ancestor) return true;
    return false;
  }

 private:
  std::vector<Bone> bones_;
  std::vector<std::vector<int>> children_;
  std::vector<int> depth_;
};

// Joint names of the built-in 24-joint humanoid; z up, facing +x, left is +y.
namespace joints {
inline constexpr int kPelvis = 0;
inline constexpr int kSpine1 = 1;
inline constexpr int kSpine2 = 2;
inline constexpr int kSpine3 = 3;
inline constexpr int kNeck = 4;
inline constexpr int kHead = 5;
inline constexpr int kLeftClavicle = 6;
inline constexpr int kLeftShoulder = 7;
inline constexpr int kLeftElbow = 8;
inline constexpr int kLeftWrist = 9;
inline constexpr int kLeftHand = 10;
inline constexpr int kRightClavicle = 11;
inline constexpr int kRightShoulder = 12;
inline constexpr int kRightElbow = 13;
inline constexpr int kRightWrist = 14;
inline constexpr int kRightHand = 15;
inline constexpr int kLeftHip = 16;
inline constexpr int kLeftKnee = 17;
inline constexpr int kLeftAnkle = 18;
inline constexpr int kLeftFoot = 19;
inline constexpr int kRightHip = 20;
inline constexpr int kRightKnee = 21;
inline constexpr int kRightAnkle = 22;
inline constexpr int kRightFoot = 23;
inline constexpr int kCount = 24;
}  // namespace joints

inline Skeleton default_humanoid() {
  std::vector<Bone> b;
  b.push_back({"pelvis", -1, Vec3(0, 0, 0)});
  b.push_back({"spine1", 0, Vec3(0, 0, 0.10)});
  b.push_back({"spine2", 1, Vec3(0, 0, 0.13)});
  b.push_back({"spine3", 2, Vec3(0, 0, 0.13)});
  b.push_back({"neck", 3, Vec3(0, 0, 0.15)});
  b.push_back({"head", 4, Vec3(0, 0, 0.12)});
  for (double s : {1.0, -1.0}) {
    const std::string p = s > 0 ? "left_" : "right_";
    const int base = static_cast<int>(b.size());
    b.push_back({p + "clavicle", 3, Vec3(0, s * 0.07, 0.09)});
    b.push_back({p + "shoulder", base, Vec3(0, s * 0.12, 0)});
    b.push_back({p + "elbow", base + 1, Vec3(0, s * 0.28, 0)});
    b.push_back({p + "wrist", base + 2, Vec3(0, s * 0.25, 0)});
    b.push_back({p + "hand", base + 3, Vec3(0, s * 0.08, 0)});
  }
  for (double s : {1.0, -1.0}) {
    const std::string p = s > 0 ? "left_" : "right_";
    const int base = static_cast<int>(b.size());
    b.push_back({p + "hip", 0, Vec3(0, s * 0.09, -0.07)});
    b.push_back({p + "knee", base, Vec3(0, 0, -0.40)});
    b.push_back({p + "ankle", base + 1, Vec3(0, 0, -0.40)});
    b.push_back({p + "foot", base + 2, Vec3(0.13, 0, -0.06)});
  }
  return Skeleton(std::move(b));
}

// Continuous 6D rotation: the first two columns of a rotation matrix.
struct Rot6D {
  Vec3 a = Vec3::UnitX();
  Vec3 b = Vec3::UnitY();

  bool operator==(const Rot6D&) const = default;
};

inline Mat3 rot6d_to_matrix(const Rot6D& r) {
  const double na = r.a.norm();
  require(std::isfinite(na) && na > 1e-12, ErrorCode::DegenerateRotation,
          "first 6D vector has zero norm");
  const Vec3 c0 = r.a / na;
  const Vec3 rej = r.b - c0.dot(r.b) * c0;
  const double nr = rej.norm();
  require(std::isfinite(nr) && nr > 1e-12 * std::max(1.0, r.b.norm()), ErrorCode::DegenerateRotation,
          "6D vectors are parallel");
  const Vec3 c1 = rej / nr;
  Mat3 m;
  m.col(0) = c0;
  m.col(1) = c1;
  m.col(2) = c0.cross(c1);
  return m;
}

inline Rot6D matrix_to_rot6d(const Mat3& m) { return {m.col(0), m.col(1)}; }

struct Pose {
  Vec3 root_translation = Vec3::Zero();
  std::vector<Rot6D> rotations;

  static Pose identity(int joint_count) {
    Pose p;
    p.rotations.assign(joint_count, Rot6D{});
    return p;
  }

  bool operator==(const Pose&) const = default;
};

// World-space rotations and positions of every joint.
struct WorldTransforms {
  std::vector<Mat3> rotations;
  JointFrame positions;
};

inline WorldTransforms world_transforms(const Skeleton& skel, const std::vector<Mat3>& local,
                                        const Vec3& root_translation) {
  const int n = skel.joint_count();
  require(static_cast<int>(local.size()) == n, ErrorCode::ShapeMismatch, "pose bone count mismatch");
  WorldTransforms w;
  w.rotations.resize(n);
  w.positions.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const int p = skel.parent(i);
    if (p < 0) {
      w.rotations[i] = local[i];
      w.positions.row(i) = root_translation.transpose();
    } else {
      w.rotations[i] = w.rotations[p] * local[i];
      w.positions.row(i) = (w.positions.row(p).transpose() + w.rotations[p] * skel.bone(i).offset).transpose();
    }
  }
  return w;
}

inline std::vector<Mat3> local_matrices(const Pose& pose) {
  std::vector<Mat3> out;
  out.reserve(pose.rotations.size());
  for (const auto& r : pose.rotations) out.push_back(rot6d_to_matrix(r));
  return out;
}

inline JointFrame forward_kinematics(const Skeleton& skel, const Pose& pose) {
  require(static_cast<int>(pose.rotations.size()) == skel.joint_count(), ErrorCode::ShapeMismatch,
          "pose has " + std::to_string(pose.rotations.size()) + " bones, skeleton has " +
              std::to_string(skel.joint_count()));
  return world_transforms(skel, local_matrices(pose), pose.root_translation).positions;
}

// Rotation angle of a rotation matrix, robust near 0 and pi.
inline double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

// Minimal rotation taking direction u onto direction v.
inline Mat3 rotation_between(const Vec3& u, const Vec3& v) {
  const Vec3 a = u.normalized();
  const Vec3 b = v.normalized();
  const Vec3 axis = a.cross(b);
  const double s = axis.norm();
  const double c = a.dot(b);
  if (s < 1e-14) {
    if (c > 0) return Mat3::Identity();
    Vec3 ortho = a.unitOrthogonal();
    return Eigen::AngleAxisd(kPi, ortho).toRotationMatrix();
  }
  return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

// Per-bone cap on rotation change per IK iteration, radians.
struct RotationLimits {
  std::vector<double> per_bone;
};

// Linear in depth from `root_limit` at the root to `tip_limit` at the deepest joint.
inline RotationLimits default_rotation_limits(const Skeleton& skel, double root_limit = 0.05,
                                              double tip_limit = 0.25) {
  RotationLimits lim;
  const int md = std::max(1, skel.max_depth());
  for (int i = 0; i < skel.joint_count(); ++i)
    lim.per_bone.push_back(root_limit + (tip_limit - root_limit) * skel.depth(i) / md);
  return lim;
}

struct IkConfig {
  int max_iters = 50;
  double tol = 1e-3;
  // Weight of the pull toward the initial pose. Applied to the twist about
  // the joint-to-target axis, which leaves the current effector in place.
  double regularization = 0.1;
};

struct IkResult {
  Pose pose;
  std::map<int, double> residuals;  // joint -> distance to target, meters
  int iterations = 0;
  bool converged = false;
  // Largest observed (per-iteration rotation change / limit) over all bones.
  double max_limit_ratio = 0.0;
  // Sum of squared residuals after each iteration, index 0 is the initial state.
  std::vector<double> error_history;
};

namespace detail {

inline Mat3 clip_rotation(const Mat3& candidate, const Mat3& start, double limit) {
  const Mat3 delta = candidate * start.transpose();
  const double angle = rotation_angle(delta);
  if (angle <= limit) return candidate;
  Eigen::AngleAxisd aa(delta);
  return Eigen::AngleAxisd(limit, aa.axis()).toRotationMatrix() * start;
}

// Twist about `axis` (local frame) that best moves `candidate` toward `initial`.
inline double best_twist(const Vec3& axis, const Mat3& candidate, const Mat3& initial) {
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  const Mat3 n = candidate * initial.transpose();
  const double a = (k * n).trace();
  const double b = (k * k * n).trace();
  if (std::abs(a) + std::abs(b) < 1e-14) return 0.0;
  return std::atan2(a, -b);
}

// Sum of squared target distances; per-target distances go to `per_target`.
inline double total_error(const WorldTransforms& w, const std::map<int, Vec3>& targets,
                          std::map<int, double>* per_target = nullptr) {
  double sum = 0.0;
  for (const auto& [j, t] : targets) {
    const double e = (w.positions.row(j).transpose() - t).norm();
    if (per_target) (*per_target)[j] = e;
    sum += e * e;
  }
  return sum;
}

// Rotation R maximizing sum_i w_i (R u_i) . v_i.
inline Mat3 weighted_kabsch(const std::vector<Vec3>& u, const std::vector<Vec3>& v, const std::vector<double>& wt) {
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < u.size(); ++i) h += wt[i] * v[i] * u[i].transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace detail

// One CCD sweep visits every bone from the leaves toward the root. A bone
// driving a single effector takes the minimal rotation pointing the effector
// at its target, nudged toward the initial pose by a twist about the target
// axis (which leaves the effector in place). A bone shared by several
// effectors takes the best-fit rotation over all of them. Each update is clipped so a
// bone's total change within one iteration stays under its limit. A targeted
// root joint is reached by translating the root.
inline IkResult ccd_ik_solve(const Skeleton& skel, const Pose& initial, const std::map<int, Vec3>& targets,
                             const RotationLimits& limits, const IkConfig& config = {}) {
  const int n = skel.joint_count();
  require(static_cast<int>(initial.rotations.size()) == n, ErrorCode::ShapeMismatch, "pose bone count mismatch");
  require(static_cast<int>(limits.per_bone.size()) == n, ErrorCode::ShapeMismatch, "limits bone count mismatch");
  require(config.tol > 0, ErrorCode::InvalidInput, "tol must be positive");
  for (const auto& [j, t] : targets) {
    require(j >= 0 && j < n, ErrorCode::InvalidInput, "target joint out of range");
    require(t.allFinite(), ErrorCode::InvalidInput, "non-finite target");
  }

  // Effectors below each bone.
  std::vector<std::vector<int>> driven(n);
  for (const auto& [j, t] : targets)
    if (j != 0)
      for (int a : skel.ancestors(j)) driven[a].push_back(j);

  const std::vector<Mat3> init_local = local_matrices(initial);
  std::vector<Mat3> local = init_local;
  std::vector<bool> touched(n, false);
  Vec3 root = initial.root_translation;
  bool root_touched = false;

  IkResult result;
  WorldTransforms w = world_transforms(skel, local, root);
  double err = detail::total_error(w, targets, &result.residuals);
  result.error_history.push_back(err);

  auto all_within = [&] {
    for (const auto& [j, e] : result.residuals)
      if (e >= config.tol) return false;
    return true;
  };

  const double reg = std::max(0.0, config.regularization);
  const double twist_fraction = reg / (1.0 + reg);

  int iter = 0;
  while (!all_within() && iter < config.max_iters) {
    ++iter;
    const std::vector<Mat3> start = local;

    if (auto it = targets.find(0); it != targets.end()) {
      root = it->second;
      root_touched = true;
      w = world_transforms(skel, local, root);
    }

    for (int a = n - 1; a >= 0; --a) {
      if (driven[a].empty()) continue;
      const Vec3 pa = w.positions.row(a).transpose();
      const int p = skel.parent(a);
      const Mat3 gp = p < 0 ? Mat3::Identity() : w.rotations[p];
      Mat3 q;  // world-frame update
      if (driven[a].size() == 1) {
        const int e = driven[a].front();
        const Vec3 u = w.positions.row(e).transpose() - pa;
        const Vec3 v = targets.at(e) - pa;
        if (u.norm() < 1e-12 || v.norm() < 1e-12) continue;
        q = rotation_between(u, v);
        if (twist_fraction > 0) {
          const Mat3 cand_local = gp.transpose() * q * gp * local[a];
          const Vec3 axis_local = (gp.transpose() * v).normalized();
          const double phi = twist_fraction * detail::best_twist(axis_local, cand_local, init_local[a]);
          q = gp * Eigen::AngleAxisd(phi, axis_local).toRotationMatrix() * gp.transpose() * q;
        }
      } else {
        std::vector<Vec3> us, vs;
        std::vector<double> wt;
        double scale = 0.0;
        for (int e : driven[a]) {
          us.push_back(w.positions.row(e).transpose() - pa);
          vs.push_back(targets.at(e) - pa);
          wt.push_back(1.0);
          scale += us.back().squaredNorm();
        }
        scale /= static_cast<double>(driven[a].size());
        // A full-strength pull here would fight the effectors every sweep, so
        // the initial pose only breaks ties (colinear effectors leave a free twist).
        const Mat3 cur = gp * local[a];
        const Mat3 want = gp * init_local[a];
        for (int c = 0; c < 3; ++c) {
          us.push_back(cur.col(c));
          vs.push_back(want.col(c));
          wt.push_back(1e-9 * scale);
        }
        q = detail::weighted_kabsch(us, vs, wt);
      }
      Mat3 candidate = gp.transpose() * q * gp * local[a];
      // Re-orthonormalize, otherwise rounding compounds through the chain.
      candidate = rot6d_to_matrix(matrix_to_rot6d(detail::clip_rotation(candidate, start[a], limits.per_bone[a])));
      if (candidate.isApprox(local[a], 0.0)) continue;
      local[a] = candidate;
      touched[a] = true;
      w = world_transforms(skel, local, root);
    }

    for (int b = 0; b < n; ++b) {
      if (limits.per_bone[b] > 0) {
        const double ratio = rotation_angle(local[b] * start[b].transpose()) / limits.per_bone[b];
        result.max_limit_ratio = std::max(result.max_limit_ratio, ratio);
      }
    }
    err = detail::total_error(w, targets, &result.residuals);
    result.error_history.push_back(err);
  }

  result.iterations = iter;
  result.converged = all_within();
  result.pose = initial;
  if (root_touched) result.pose.root_translation = root;
  for (int b = 0; b < n; ++b)
    if (touched[b]) result.pose.rotations[b] = matrix_to_rot6d(local[b]);
  return result;
}

// Analytic pose recovery from joint positions. Each joint's world rotation is
// the least-squares alignment of its children's rest offsets with the observed
// child directions, starting from the hint pose so that single-child joints
// keep the hint's twist. Exact when bone lengths match the skeleton.
inline Pose align_pose_to_joints(const Skeleton& skel, const JointFrame& joints, const Pose& hint) {
  const int n = skel.joint_count();
  require(joints.rows() == n, ErrorCode::ShapeMismatch, "joint frame size mismatch");
  const auto hint_local = local_matrices(hint);
  const auto hint_world = world_transforms(skel, hint_local, hint.root_translation);

  std::vector<Mat3> world(n);
  std::vector<Mat3> local(n);
  for (int i = 0; i < n; ++i) {
    const auto& kids = skel.children(i);
    const Mat3 g_hint = hint_world.rotations[i];
    Mat3 g = g_hint;
    if (kids.size() == 1) {
      const int c = kids[0];
      const Vec3 rest = g_hint * skel.bone(c).offset;
      const Vec3 obs = (joints.row(c) - joints.row(i)).transpose();
      if (rest.norm() > 1e-12 && obs.norm() > 1e-12) g = rotation_between(rest, obs) * g_hint;
    } else if (kids.size() > 1) {
      // Wahba problem: find G minimizing sum |G o_c - d_c|^2.
      Mat3 h = Mat3::Zero();
      for (int c : kids) h += (joints.row(c) - joints.row(i)).transpose() * skel.bone(c).offset.transpose();
      Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Mat3 d = Mat3::Identity();
      d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
      g = svd.matrixU() * d * svd.matrixV().transpose();
    }
    world[i] = g;
    const int p = skel.parent(i);
    local[i] = p < 0 ? g : world[p].transpose() * g;
  }

  Pose out = hint;
  out.root_translation = joints.row(0).transpose();
  for (int i = 0; i < n; ++i) out.rotations[i] = matrix_to_rot6d(local[i]);
  return out;
}

// Gradient of 0.5 * sum_j w_j |FK(pose)_j - target_j|^2 with respect to the
// root translation and every bone's 6D parameters. Returns the loss.
struct PoseGradient {
  Vec3 root_translation = Vec3::Zero();
  std::vector<Rot6D> rotations;  // gradients w.r.t. (a, b)
};

namespace detail {

// Backward pass of Gram-Schmidt 6D -> matrix.
inline Rot6D rot6d_backward(const Rot6D& r, const Mat3& grad_m) {
  const double na = r.a.norm();
  const Vec3 c0 = r.a / na;
  const double d = c0.dot(r.b);
  const Vec3 rej = r.b - d * c0;
  const double nr = rej.norm();
  const Vec3 c1 = rej / nr;

  // m = [c0, c1, c0 x c1]
  Vec3 g0 = grad_m.col(0);
  Vec3 g1 = grad_m.col(1);
  const Vec3 g2 = grad_m.col(2);
  g0 += c1.cross(g2);  // d(c0 x c1)/dc0^T g2 = c1 x g2
  g1 += g2.cross(c0);

  // c1 = rej / |rej|
  const Vec3 g_rej = (g1 - c1 * c1.dot(g1)) / nr;
  // rej = b - (c0.b) c0
  Vec3 gb = g_rej - c0 * c0.dot(g_rej);
  Vec3 gc0 = g0 - d * g_rej - c0.dot(g_rej) * r.b;
  // c0 = a / |a|
  const Vec3 ga = (gc0 - c0 * c0.dot(gc0)) / na;
  return {ga, gb};
}

}  // namespace detail

inline double fk_loss_and_gradient(const Skeleton& skel, const Pose& pose, const JointFrame& target,
                                   PoseGradient* grad) {
  const int n = skel.joint_count();
  require(target.rows() == n, ErrorCode::ShapeMismatch, "target frame size mismatch");
  const auto local = local_matrices(pose);
  const auto w = world_transforms(skel, local, pose.root_translation);

  const JointFrame diff = w.positions - target;
  const double loss = 0.5 * diff.squaredNorm();
  if (!grad) return loss;

  std::vector<Vec3> gp(n);
  std::vector<Mat3> gg(n, Mat3::Zero());
  for (int i = 0; i < n; ++i) gp[i] = diff.row(i).transpose();
  // Reverse topological order: accumulate into parents.
  for (int i = n - 1; i >= 1; --i) {
    const int p = skel.parent(i);
    // p_i = p_p + G_p o_i ; G_i = G_p R_i
    gp[p] += gp[i];
    gg[p] += gp[i] * skel.bone(i).offset.transpose();
    gg[p] += gg[i] * local[i].transpose();
  }
  grad->root_translation = gp[0];
  grad->rotations.resize(n);
  for (int i = 0; i < n; ++i) {
    const int p = skel.parent(i);
    const Mat3 gr = p < 0 ? gg[i] : Mat3(w.rotations[p].transpose() * gg[i]);
    grad->rotations[i] = detail::rot6d_backward(pose.rotations[i], gr);
  }
  return loss;
}

}  // namespace motionforge

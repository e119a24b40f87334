#pragma once

// Human-object interaction utilities: a capsule proxy for the body surface,
// per-vertex contact labels, penetration statistics against a scene, and
// refinement of a held object's track so its distance to the hand stays
// steady through a grasp.

#include "motionforge/kinematics.hpp"
#include "motionforge/mesh.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace motionforge {

// ---- body surface ----

struct CapsuleConfig {
  int rings = 4;      // along each bone
  int segments = 8;   // around each bone
  std::vector<double> radii;  // per joint; empty picks defaults by bone name
};

struct BodySurface {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<int> joint;  // capsule owner of each vertex
  std::size_t size() const { return vertices.size(); }
};

inline double default_capsule_radius(const std::string& name) {
  auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  if (has("pelvis") || has("spine")) return 0.12;
  if (has("head")) return 0.10;
  if (has("hip")) return 0.08;
  if (has("knee")) return 0.07;
  if (has("neck") || has("clavicle") || has("elbow") || has("ankle")) return 0.05;
  if (has("foot")) return 0.045;
  if (has("wrist")) return 0.04;
  if (has("hand")) return 0.035;
  return 0.05;
}

inline std::vector<double> capsule_radii(const Skeleton& skel, const CapsuleConfig& cfg) {
  if (!cfg.radii.empty()) {
    require(static_cast<int>(cfg.radii.size()) == skel.joint_count(), ErrorCode::ShapeMismatch, "radius per joint");
    return cfg.radii;
  }
  std::vector<double> r;
  for (int i = 0; i < skel.joint_count(); ++i) r.push_back(default_capsule_radius(skel.bone(i).name));
  return r;
}

// One capsule per joint, spanning parent to joint; the root gets a sphere.
// The sample points sit on the cylinder at the ring midpoints so every vertex
// has a well defined radial normal.
inline BodySurface body_surface(const Skeleton& skel, const JointFrame& joints, const CapsuleConfig& cfg = {}) {
  require(joints.rows() == skel.joint_count(), ErrorCode::ShapeMismatch, "joint frame size mismatch");
  require(cfg.rings >= 1 && cfg.segments >= 3, ErrorCode::InvalidInput, "capsule needs rings and segments");
  const auto radii = capsule_radii(skel, cfg);
  const int per = cfg.rings * cfg.segments;
  BodySurface s;
  for (int i = 0; i < skel.joint_count(); ++i) {
    const Vec3 b = joints.row(i).transpose();
    const Vec3 a = skel.parent(i) < 0 ? b : Vec3(joints.row(skel.parent(i)).transpose());
    const Vec3 axis = b - a;
    if (axis.norm() < 1e-9) {
      // Fibonacci sphere
      const double golden = kPi * (3.0 - std::sqrt(5.0));
      for (int k = 0; k < per; ++k) {
        const double z = 1.0 - (k + 0.5) * 2.0 / per;
        const double r = std::sqrt(1.0 - z * z);
        const Vec3 n(r * std::cos(golden * k), r * std::sin(golden * k), z);
        s.vertices.push_back(b + radii[i] * n);
        s.normals.push_back(n);
        s.joint.push_back(i);
      }
      continue;
    }
    const Vec3 u = axis.normalized();
    const Vec3 e1 = u.unitOrthogonal();
    const Vec3 e2 = u.cross(e1);
    for (int r = 0; r < cfg.rings; ++r) {
      const Vec3 c = a + axis * ((r + 0.5) / cfg.rings);
      for (int k = 0; k < cfg.segments; ++k) {
        const double ph = 2 * kPi * k / cfg.segments;
        const Vec3 n = std::cos(ph) * e1 + std::sin(ph) * e2;
        s.vertices.push_back(c + radii[i] * n);
        s.normals.push_back(n);
        s.joint.push_back(i);
      }
    }
  }
  return s;
}

// ---- contacts ----

using ContactSet = std::vector<bool>;

struct ContactConfig {
  double dist_threshold = 0.02;  // meters
  double angle_threshold = kPi / 3;
};

inline bool vertex_in_contact(const TriangleMesh& mesh, const Vec3& v, const Vec3& normal, const ContactConfig& cfg) {
  if (point_inside(mesh, v)) return true;
  const ClosestPoint cp = closest_point(mesh, v);
  if (cp.distance > cfg.dist_threshold) return false;
  if (cp.distance == 0.0) return true;
  const Vec3 to = (cp.point - v) / cp.distance;
  return to.dot(normal.normalized()) > std::cos(cfg.angle_threshold);
}

inline ContactSet annotate_contacts(const BodySurface& surface, const TriangleMesh& mesh, const ContactConfig& cfg = {}) {
  require(surface.normals.size() == surface.vertices.size(), ErrorCode::ShapeMismatch, "normal per vertex");
  ContactSet out(surface.size(), false);
  if (mesh.empty()) return out;
  const auto [lo, hi] = mesh.bounds();
  const Vec3 pad = Vec3::Constant(cfg.dist_threshold);
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const Vec3& v = surface.vertices[i];
    require(v.allFinite() && surface.normals[i].allFinite(), ErrorCode::InvalidInput, "non-finite surface vertex");
    // Farther than the threshold from the bounding box: neither inside nor near.
    if ((v.array() < (lo - pad).array()).any() || (v.array() > (hi + pad).array()).any()) continue;
    out[i] = vertex_in_contact(mesh, v, surface.normals[i], cfg);
  }
  return out;
}

inline std::vector<ContactSet> annotate_motion_contacts(const Skeleton& skel, const Motion& motion, const TriangleMesh& mesh,
                                                        const ContactConfig& cfg = {}, const CapsuleConfig& caps = {}) {
  std::vector<ContactSet> out;
  for (const auto& f : motion) out.push_back(annotate_contacts(body_surface(skel, f, caps), mesh, cfg));
  return out;
}

// ---- penetration ----

// Distance to the surface for points inside the mesh, zero outside.
inline double penetration_depth(const TriangleMesh& mesh, const Vec3& p) {
  if (!point_inside(mesh, p)) return 0.0;
  return closest_point(mesh, p).distance;
}

struct PenetrationStats {
  double max = 0;
  double mean = 0;
  double median = 0;
};

inline PenetrationStats penetration_stats(const std::vector<Vec3>& vertices, const TriangleMesh& scene) {
  PenetrationStats s;
  if (vertices.empty()) return s;
  const auto [lo, hi] = scene.bounds();
  std::vector<double> d;
  d.reserve(vertices.size());
  for (const auto& v : vertices) {
    const bool boxed = (v.array() >= lo.array()).all() && (v.array() <= hi.array()).all();
    d.push_back(boxed ? penetration_depth(scene, v) : 0.0);
  }
  double sum = 0;
  for (double x : d) {
    s.max = std::max(s.max, x);
    sum += x;
  }
  s.mean = sum / static_cast<double>(d.size());
  const std::size_t m = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m), d.end());
  s.median = d[m];
  if (d.size() % 2 == 0) s.median = 0.5 * (s.median + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m)));
  return s;
}

inline std::vector<PenetrationStats> penetration_stats(const std::vector<std::vector<Vec3>>& frames, const TriangleMesh& scene) {
  std::vector<PenetrationStats> out;
  for (const auto& f : frames) out.push_back(penetration_stats(f, scene));
  return out;
}

// Fraction of values at or below each threshold.
inline std::vector<double> cumulative_fraction(const std::vector<double>& values, const std::vector<double>& thresholds) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double t : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(sorted.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  return out;
}

// ---- held objects ----

struct ObjectTrack {
  std::vector<Vec3> points;  // canonical frame
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;

  int frames() const { return static_cast<int>(rotations.size()); }
  Vec3 world(int f, const Vec3& p) const { return rotations[f] * p + translations[f]; }

  void validate() const {
    require(!points.empty(), ErrorCode::InvalidInput, "object has no points");
    require(rotations.size() == translations.size(), ErrorCode::ShapeMismatch, "rotation and translation counts differ");
    for (const auto& r : rotations)
      require((r * r.transpose() - Mat3::Identity()).norm() < 1e-6 && r.determinant() > 0, ErrorCode::InvalidInput,
              "object rotation is not a rotation");
  }
};

struct RefineConfig {
  int max_iters = 500;
  double step = 1.0;  // initial step on the variance gradient, meters^-1
  double grad_tol = 1e-12;
  double variance_tol = 1e-20;
};

struct RefineResult {
  ObjectTrack track;
  double variance_before = 0;
  double variance_after = 0;
  int iterations = 0;
};

namespace detail {

inline double hand_object_distance(const ObjectTrack& o, int f, const Vec3& hand, Vec3* nearest = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : o.points) {
    const Vec3 w = o.world(f, p);
    const double d = (hand - w).norm();
    if (d < best) {
      best = d;
      if (nearest) *nearest = w;
    }
  }
  return best;
}

inline double distance_variance(const std::vector<double>& d) {
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double v = 0;
  for (double x : d) v += (x - mean) * (x - mean);
  return v / static_cast<double>(d.size());
}

}  // namespace detail

// Variance over [first, last] of the hand's distance to the nearest object point.
inline double grasp_variance(const std::vector<Vec3>& hand, const ObjectTrack& o, int first, int last) {
  std::vector<double> d;
  for (int f = first; f <= last; ++f) d.push_back(detail::hand_object_distance(o, f, hand[f]));
  return detail::distance_variance(d);
}

// Gradient descent on the grasp-frame translations with a backtracking step,
// so the objective never rises. With hand rotations given, object rotations
// over the grasp follow the hand's rotation relative to the first grasp frame
// before refinement starts; the objective is then measured from that carried
// track. Frames outside the grasp are not touched.
inline RefineResult refine_object_track(const std::vector<Vec3>& hand, const ObjectTrack& object, int first, int last,
                                        const RefineConfig& cfg = {}, const std::vector<Mat3>& hand_rotations = {}) {
  object.validate();
  require(first <= last, ErrorCode::InvalidInput, "empty grasp range");
  require(first >= 0 && last < object.frames() && last < static_cast<int>(hand.size()), ErrorCode::InvalidInput,
          "grasp range outside the motion");
  RefineResult out;
  out.track = object;
  ObjectTrack& o = out.track;
  if (!hand_rotations.empty()) {
    require(static_cast<int>(hand_rotations.size()) > last, ErrorCode::ShapeMismatch, "hand rotation per frame");
    for (int f = first + 1; f <= last; ++f) {
      const Mat3 delta = hand_rotations[f] * hand_rotations[first].transpose();
      o.rotations[f] = delta * object.rotations[first];
      o.translations[f] = hand[f] + delta * (object.translations[first] - hand[first]);
    }
  }
  const int n = last - first + 1;
  auto objective = [&](const ObjectTrack& t) { return grasp_variance(hand, t, first, last); };
  double obj = objective(o);
  out.variance_before = obj;
  double step = cfg.step;
  for (int it = 0; it < cfg.max_iters && obj > cfg.variance_tol; ++it) {
    std::vector<double> d(n);
    std::vector<Vec3> dir(n);
    for (int i = 0; i < n; ++i) {
      Vec3 q;
      d[i] = detail::hand_object_distance(o, first + i, hand[first + i], &q);
      dir[i] = d[i] > 0 ? Vec3((hand[first + i] - q) / d[i]) : Vec3::Zero();
    }
    double mean = 0;
    for (double x : d) mean += x;
    mean /= n;
    // d(var)/dT_f = -2 (d_f - mean) / n * dir_f
    std::vector<Vec3> g(n);
    double gn = 0;
    for (int i = 0; i < n; ++i) {
      g[i] = -2.0 * (d[i] - mean) / n * dir[i];
      gn += g[i].squaredNorm();
    }
    if (gn < cfg.grad_tol * cfg.grad_tol) break;
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      ObjectTrack trial = o;
      for (int i = 0; i < n; ++i) trial.translations[first + i] -= step * n * g[i];
      const double v = objective(trial);
      if (v < obj) {
        o = std::move(trial);
        obj = v;
        accepted = true;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    out.iterations = it + 1;
    if (!accepted) break;
  }
  out.variance_after = obj;
  return out;
}

}  // namespace motionforge

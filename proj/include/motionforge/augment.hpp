#pragma once

// Contact-preserving motion augmentation. When an object under a contact is
// moved or resized, the contacting joint's IK target is shifted by the
// contact point's displacement and the shift is faded in and out linearly
// over a window of frames. A second window catches joints that drift when
// another contact is solved; where two windows meet on one joint their
// offsets are blended with norm weights.

#include "motionforge/kinematics.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <vector>

namespace motionforge {

inline constexpr int kDefaultAugmentWindow = 30;

struct ContactEvent {
  int joint = 0;
  int frame_start = 0;
  int frame_end = 0;  // inclusive
  Vec3 point_old = Vec3::Zero();
  Vec3 point_new = Vec3::Zero();
};

struct OffsetWindow {
  Vec3 offset = Vec3::Zero();
  int anchor = 0;
  int length = kDefaultAugmentWindow;
  // Frames after the anchor held at full offset. A contact lasting several
  // frames keeps its joint on the moved point for all of them.
  int hold = 0;
  int joint = 0;

  // Frames from the held span, zero inside it.
  int distance(int t) const {
    if (t < anchor) return anchor - t;
    if (t > anchor + hold) return t - anchor - hold;
    return 0;
  }
  bool active(int t) const { return distance(t) < length; }
};

using TargetTrajectory = Motion;

inline Vec3 compute_target_offset(const Vec3& l, const Vec3& v_m, const Vec3& v_m_new) { return l + (v_m_new - v_m); }

inline Vec3 window_offset(const OffsetWindow& w, int t) {
  require(w.length >= 1, ErrorCode::InvalidInput, "window length must be at least 1");
  const int d = w.distance(t);
  if (d >= w.length) return Vec3::Zero();
  return (1.0 - static_cast<double>(d) / w.length) * w.offset;
}

inline Vec3 blend_offsets(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na + nb == 0.0) return Vec3::Zero();
  return (na * a + nb * b) / (na + nb);
}

inline OffsetWindow contact_window(const ContactEvent& e, int length) {
  require(e.frame_start <= e.frame_end, ErrorCode::InvalidInput, "contact event ends before it starts");
  require(e.point_old.allFinite() && e.point_new.allFinite(), ErrorCode::InvalidInput, "non-finite contact point");
  return {e.point_new - e.point_old, e.frame_start, length, e.frame_end - e.frame_start, e.joint};
}

namespace detail {

// Offset for one joint at frame t, or false when no window covers t.
inline bool joint_offset(const std::vector<const OffsetWindow*>& ws, int t, Vec3& out) {
  const OffsetWindow* hit[2] = {nullptr, nullptr};
  int n = 0;
  for (const OffsetWindow* w : ws) {
    if (!w->active(t)) continue;
    if (n == 2) throw Error(ErrorCode::UnsupportedOverlap, "more than two offset windows overlap on joint " +
                                                               std::to_string(w->joint) + " at frame " + std::to_string(t));
    hit[n++] = w;
  }
  if (n == 0) return false;
  out = n == 1 ? window_offset(*hit[0], t) : blend_offsets(window_offset(*hit[0], t), window_offset(*hit[1], t));
  return true;
}

inline std::map<int, std::vector<const OffsetWindow*>> by_joint(const std::vector<OffsetWindow>& ws) {
  std::map<int, std::vector<const OffsetWindow*>> out;
  for (const auto& w : ws) out[w.joint].push_back(&w);
  return out;
}

}  // namespace detail

inline std::vector<OffsetWindow> collect_windows(const std::vector<ContactEvent>& events,
                                                 const std::vector<OffsetWindow>& deviations, int length) {
  std::vector<OffsetWindow> ws;
  for (const auto& e : events) ws.push_back(contact_window(e, length));
  ws.insert(ws.end(), deviations.begin(), deviations.end());
  return ws;
}

inline TargetTrajectory build_smoothed_trajectory(const TargetTrajectory& base, const std::vector<ContactEvent>& events,
                                                  const std::vector<OffsetWindow>& post_ik_deviations,
                                                  int length = kDefaultAugmentWindow) {
  require(length >= 1, ErrorCode::InvalidInput, "window length must be at least 1");
  const int frames = static_cast<int>(base.size());
  const int joints = frames ? static_cast<int>(base.front().rows()) : 0;
  const auto ws = collect_windows(events, post_ik_deviations, length);
  for (const auto& w : ws) {
    require(w.joint >= 0 && w.joint < joints, ErrorCode::InvalidInput, "offset joint out of range");
    require(w.anchor >= 0 && w.anchor + w.hold < frames, ErrorCode::InvalidInput, "offset window outside the motion");
    require(w.length >= 1 && w.hold >= 0, ErrorCode::InvalidInput, "bad offset window");
  }
  TargetTrajectory out = base;
  for (const auto& [j, list] : detail::by_joint(ws))
    for (int t = 0; t < frames; ++t) {
      Vec3 off;
      if (detail::joint_offset(list, t, off)) out[t].row(j) += off.transpose();
    }
  return out;
}

struct RetargetConfig {
  int window = kDefaultAugmentWindow;
  IkConfig ik{200, 1e-4, 0.1};
  double root_limit = 0.05;
  double tip_limit = 0.25;
  // Drift below this (meters) does not open a deviation window.
  double deviation_floor = 1e-6;
};

struct RetargetResult {
  Motion motion;
  std::vector<double> residuals;  // per frame, worst target distance
  std::vector<bool> converged;
  std::vector<std::string> errors;  // per frame, empty when IK ran
  std::vector<OffsetWindow> deviations;
};

namespace detail {

struct IkPass {
  std::vector<Pose> poses;
  std::vector<std::map<int, Vec3>> targets;
  std::vector<double> residuals;
  std::vector<bool> converged;
  std::vector<std::string> errors;
};

// Per-frame targets for every joint with an active window. Frames whose
// windows all carry zero offset need no IK.
inline IkPass run_ik(const Skeleton& skel, const Motion& motion, const std::vector<Pose>& source,
                     const std::vector<OffsetWindow>& ws, const RotationLimits& lim, const IkConfig& ik) {
  const int frames = static_cast<int>(motion.size());
  const auto groups = by_joint(ws);
  IkPass p;
  p.poses = source;
  p.targets.resize(frames);
  p.residuals.assign(frames, 0.0);
  p.converged.assign(frames, true);
  p.errors.assign(frames, "");
  for (int t = 0; t < frames; ++t) {
    bool moved = false;
    for (const auto& [j, list] : groups) {
      Vec3 off;
      if (!joint_offset(list, t, off)) continue;
      p.targets[t][j] = motion[t].row(j).transpose() + off;
      moved |= off.squaredNorm() > 0;
    }
    if (!moved) continue;
    try {
      IkResult r = ccd_ik_solve(skel, source[t], p.targets[t], lim, ik);
      p.poses[t] = r.pose;
      p.converged[t] = r.converged;
      for (const auto& [j, e] : r.residuals) p.residuals[t] = std::max(p.residuals[t], e);
    } catch (const Error& e) {
      p.converged[t] = false;
      p.errors[t] = e.what();
    }
  }
  return p;
}

}  // namespace detail

// Source poses are recovered frame by frame, each alignment seeded from the
// previous frame's pose. Two IK passes follow: the first solves the contact
// targets; joints of other events that drifted at a contact's anchor frame
// get a deviation window, and the second pass solves the blended targets.
// Frames without a nonzero offset are copied from the input untouched.
inline RetargetResult retarget_motion(const Motion& motion, const Skeleton& skel, const std::vector<ContactEvent>& events,
                                      const RetargetConfig& cfg = {}) {
  const int frames = static_cast<int>(motion.size());
  const int n = skel.joint_count();
  require(frames > 0, ErrorCode::InvalidInput, "empty motion");
  for (const auto& f : motion) require(f.rows() == n, ErrorCode::ShapeMismatch, "joint frame size mismatch");
  for (const auto& e : events) {
    require(e.joint >= 0 && e.joint < n, ErrorCode::InvalidInput, "event joint out of range");
    require(e.frame_start >= 0 && e.frame_end < frames, ErrorCode::InvalidInput, "event outside the motion");
  }
  // Validates overlaps up front so a bad event set fails before any IK runs.
  build_smoothed_trajectory(motion, events, {}, cfg.window);

  std::vector<Pose> source;
  Pose hint = Pose::identity(n);
  for (int t = 0; t < frames; ++t) {
    hint = align_pose_to_joints(skel, motion[t], hint);
    source.push_back(hint);
  }
  const RotationLimits lim = default_rotation_limits(skel, cfg.root_limit, cfg.tip_limit);

  std::vector<OffsetWindow> ws = collect_windows(events, {}, cfg.window);
  const detail::IkPass first = detail::run_ik(skel, motion, source, ws, lim, cfg.ik);

  std::vector<OffsetWindow> deviations;
  for (const auto& anchor_event : events) {
    const int t = anchor_event.frame_start;
    const JointFrame solved = forward_kinematics(skel, first.poses[t]);
    for (const auto& other : events) {
      if (other.joint == anchor_event.joint || first.targets[t].count(other.joint)) continue;
      const Vec3 drift = (solved.row(other.joint) - motion[t].row(other.joint)).transpose();
      if (drift.norm() <= cfg.deviation_floor) continue;
      bool dup = false;
      for (const auto& d : deviations) dup |= d.joint == other.joint && d.anchor == t;
      if (!dup) deviations.push_back({drift, t, cfg.window, 0, other.joint});
    }
  }

  RetargetResult out;
  out.deviations = deviations;
  detail::IkPass second = first;
  if (!deviations.empty()) {
    build_smoothed_trajectory(motion, events, deviations, cfg.window);
    ws.insert(ws.end(), deviations.begin(), deviations.end());
    second = detail::run_ik(skel, motion, source, ws, lim, cfg.ik);
  }

  out.motion = motion;
  for (int t = 0; t < frames; ++t) {
    bool moved = false;
    for (const auto& [j, target] : second.targets[t]) moved |= (target - motion[t].row(j).transpose()).squaredNorm() > 0;
    if (moved && second.errors[t].empty()) out.motion[t] = forward_kinematics(skel, second.poses[t]);
  }
  out.residuals = second.residuals;
  out.converged = second.converged;
  out.errors = second.errors;
  return out;
}

}  // namespace motionforge

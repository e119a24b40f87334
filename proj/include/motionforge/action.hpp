#pragma once

// Frame-wise multi-hot action labels with the progress ramp: inside a
// segment the label climbs affinely from 1 at its first frame to 2 at its
// last, so every entry lies in {0} U [1, 2].

#include "motionforge/core.hpp"

#include <algorithm>
#include <vector>

namespace motionforge {

// Frames are global indices, so a segment may span several episodes.
struct ActionSegment {
  int action = 0;
  int start = 0;
  int end = 0;  // inclusive

  bool operator==(const ActionSegment&) const = default;
};

struct ActionTrack {
  int first_frame = 0;  // global index of row 0
  MatX labels;          // frames x n_actions
  std::vector<ActionSegment> segments;
};

inline double progress_value(const ActionSegment& s, int frame) {
  if (frame < s.start || frame > s.end) return 0.0;
  if (s.end == s.start) return 1.0;
  return 1.0 + static_cast<double>(frame - s.start) / static_cast<double>(s.end - s.start);
}

inline void validate_segments(const std::vector<ActionSegment>& segments, int n_actions) {
  for (const auto& s : segments) {
    require(s.action >= 0 && s.action < n_actions, ErrorCode::InvalidSegments, "action id out of range");
    require(s.start <= s.end, ErrorCode::InvalidSegments, "segment ends before it starts");
  }
  for (std::size_t i = 0; i < segments.size(); ++i)
    for (std::size_t j = i + 1; j < segments.size(); ++j) {
      const auto& a = segments[i];
      const auto& b = segments[j];
      if (a.action == b.action && a.start <= b.end && b.start <= a.end)
        throw Error(ErrorCode::InvalidSegments, "overlapping segments for action " + std::to_string(a.action));
    }
}

// Labels for global frames [first_frame, first_frame + length).
inline ActionTrack add_progress_indicator(const std::vector<ActionSegment>& segments, int length, int n_actions,
                                          int first_frame = 0) {
  require(length > 0 && n_actions > 0, ErrorCode::InvalidInput, "track shape must be positive");
  validate_segments(segments, n_actions);
  ActionTrack track{first_frame, MatX::Zero(length, n_actions), segments};
  for (const auto& s : segments) {
    const int lo = std::max(s.start, first_frame);
    const int hi = std::min(s.end, first_frame + length - 1);
    for (int f = lo; f <= hi; ++f) track.labels(f - first_frame, s.action) = progress_value(s, f);
  }
  return track;
}

}  // namespace motionforge

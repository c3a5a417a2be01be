#pragma once

#include <cstdint>
#include <vector>

#include "lted/geometry.hpp"
#include "lted/rng.hpp"

namespace lted {

// Synthetic stand-in for the traffic video and for the detector/tracker
// running on it. Ground truth comes from a generative motion model; the
// detector and tracker are noise models around that truth.

/// From `start_frame` on, the object moves by (vx, vy) px per frame.
struct VelocitySegment {
  std::uint32_t start_frame = 1;
  double vx = 0.0;
  double vy = 0.0;
};

struct ObjectSpec {
  BoundingBox initial;
  std::vector<VelocitySegment> velocity;  // sorted by start_frame
};

struct SceneConfig {
  double frame_width = 640.0;
  double frame_height = 480.0;
  std::uint32_t num_frames = 300;

  // Explicit objects. When empty, `num_objects` objects are drawn from `seed`
  // using the random-generation knobs below.
  std::vector<ObjectSpec> objects;
  std::uint32_t num_objects = 6;
  double min_box_side = 50.0;
  double max_box_side = 110.0;
  double max_speed = 2.0;                // px/frame per axis
  std::uint32_t segment_length = 60;     // frames between velocity changes

  double jitter_std = 0.3;               // px, per-frame rigid position noise
  double detector_noise_std = 2.0;       // px, per corner coordinate
  double detector_miss_prob = 0.02;
  double tracker_drift_std = 1.0;        // px per sqrt(tracked frame)
  std::uint64_t seed = 1;

  /// Throws ConfigError on an invalid field.
  void validate() const;
};

struct FrameTruth {
  std::uint32_t frame = 1;  // 1-based
  BoxSet boxes;             // role kGroundTruth, one box per object id

  friend bool operator==(const FrameTruth&, const FrameTruth&) = default;
};

using Scene = std::vector<FrameTruth>;

/// Deterministic for a fixed config; returns frames 1..num_frames.
Scene generate_scene(const SceneConfig& config);

/// Detector model: each truth box is dropped with probability
/// detector_miss_prob, survivors get independent Gaussian corner noise.
BoxSet simulate_detection(const FrameTruth& truth, const SceneConfig& config,
                          RandomStream& rng);

/// Tracker model: each keyframe box follows its object's true corner
/// displacement since the keyframe plus random-walk drift with standard
/// deviation tracker_drift_std * sqrt(frames_since_keyframe). Objects absent
/// from the keyframe stay absent. Throws PreconditionError on an empty
/// keyframe set.
BoxSet simulate_tracking(const BoxSet& keyframe_boxes,
                         const FrameTruth& truth_keyframe,
                         const FrameTruth& truth_now,
                         std::uint32_t frames_since_keyframe,
                         const SceneConfig& config, RandomStream& rng);

struct PixelDeviation {
  double x = 0.0;
  double y = 0.0;
  bool no_common_objects = false;
};

/// Mean absolute per-axis offset of the box corner points of objects present
/// in both frames. Returns (0, 0) with the flag set when nothing is shared.
PixelDeviation pixel_deviation(const FrameTruth& truth_now,
                               const FrameTruth& truth_keyframe);

}  // namespace lted

#include "lted/scene.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {
namespace {

void require(bool ok, const char* field, const char* rule) {
  if (!ok) throw ConfigError(fmt::format("scene.{}: {}", field, rule));
}

BoundingBox clip_to_frame(BoundingBox b, double width, double height) {
  b.x_min = std::clamp(b.x_min, 0.0, width);
  b.x_max = std::clamp(b.x_max, 0.0, width);
  b.y_min = std::clamp(b.y_min, 0.0, height);
  b.y_max = std::clamp(b.y_max, 0.0, height);
  return b;
}

// Noise can invert an edge pair; collapse it to the midpoint instead.
BoundingBox restore_order(BoundingBox b) {
  if (b.x_min > b.x_max) b.x_min = b.x_max = 0.5 * (b.x_min + b.x_max);
  if (b.y_min > b.y_max) b.y_min = b.y_max = 0.5 * (b.y_min + b.y_max);
  return b;
}

std::vector<ObjectSpec> random_objects(const SceneConfig& cfg,
                                       RandomStream& rng) {
  std::vector<ObjectSpec> out;
  out.reserve(cfg.num_objects);
  for (std::uint32_t i = 0; i < cfg.num_objects; ++i) {
    ObjectSpec obj;
    const double w = cfg.min_box_side +
                     rng.uniform() * (cfg.max_box_side - cfg.min_box_side);
    const double h = cfg.min_box_side +
                     rng.uniform() * (cfg.max_box_side - cfg.min_box_side);
    const double x = rng.uniform() * std::max(0.0, cfg.frame_width - w);
    const double y = rng.uniform() * std::max(0.0, cfg.frame_height - h);
    obj.initial = {x, y, std::min(x + w, cfg.frame_width),
                   std::min(y + h, cfg.frame_height)};
    for (std::uint32_t start = 1; start <= cfg.num_frames;
         start += cfg.segment_length) {
      const double vx = (2.0 * rng.uniform() - 1.0) * cfg.max_speed;
      const double vy = (2.0 * rng.uniform() - 1.0) * cfg.max_speed;
      obj.velocity.push_back({start, vx, vy});
    }
    out.push_back(std::move(obj));
  }
  return out;
}

// Mirror a 1-D interval back inside [0, limit]; returns true when reflected.
bool reflect(double& lo, double& hi, double limit) {
  const double span = hi - lo;
  if (span >= limit) return false;
  if (lo < 0.0) {
    lo = -lo;
    hi = lo + span;
    return true;
  }
  if (hi > limit) {
    hi = 2.0 * limit - hi;
    lo = hi - span;
    return true;
  }
  return false;
}

}  // namespace

void SceneConfig::validate() const {
  require(std::isfinite(frame_width) && frame_width > 0.0, "frame_width",
          "must be positive");
  require(std::isfinite(frame_height) && frame_height > 0.0, "frame_height",
          "must be positive");
  require(num_frames >= 2, "num_frames",
          "must be at least 2 (frame 1 is always a detection keyframe)");
  require(!objects.empty() || num_objects >= 1, "num_objects",
          "must be at least 1");
  require(min_box_side > 0.0 && min_box_side <= max_box_side, "min_box_side",
          "must satisfy 0 < min_box_side <= max_box_side");
  require(max_box_side <= std::min(frame_width, frame_height), "max_box_side",
          "must fit inside the frame");
  require(max_speed >= 0.0, "max_speed", "must be non-negative");
  require(segment_length >= 1, "segment_length", "must be at least 1");
  require(jitter_std >= 0.0, "jitter_std", "must be non-negative");
  require(detector_noise_std >= 0.0, "detector_noise_std",
          "must be non-negative");
  require(detector_miss_prob >= 0.0 && detector_miss_prob < 1.0,
          "detector_miss_prob", "must lie in [0, 1)");
  require(tracker_drift_std >= 0.0, "tracker_drift_std",
          "must be non-negative");
  for (const ObjectSpec& obj : objects) {
    require(obj.initial.valid(), "objects.initial", "invalid box");
    require(!obj.velocity.empty() && obj.velocity.front().start_frame == 1,
            "objects.velocity", "first segment must start at frame 1");
    require(std::is_sorted(obj.velocity.begin(), obj.velocity.end(),
                           [](const auto& a, const auto& b) {
                             return a.start_frame < b.start_frame;
                           }),
            "objects.velocity", "segments must be sorted by start_frame");
  }
}

Scene generate_scene(const SceneConfig& config) {
  config.validate();
  RandomStream rng = RandomStream::derive(config.seed, 0, 0, 0,
                                          StreamPurpose::kScene);
  const std::vector<ObjectSpec> objects =
      config.objects.empty() ? random_objects(config, rng) : config.objects;

  struct Motion {
    BoundingBox base;
    double sign_x = 1.0;
    double sign_y = 1.0;
    std::size_t segment = 0;
  };
  std::vector<Motion> motion;
  motion.reserve(objects.size());
  for (const ObjectSpec& obj : objects) motion.push_back({obj.initial});

  Scene scene;
  scene.reserve(config.num_frames);
  for (std::uint32_t f = 1; f <= config.num_frames; ++f) {
    FrameTruth frame{f, {BoxRole::kGroundTruth, {}}};
    frame.boxes.boxes.reserve(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) {
      Motion& m = motion[i];
      const auto& segs = objects[i].velocity;
      if (f > 1) {
        while (m.segment + 1 < segs.size() &&
               segs[m.segment + 1].start_frame <= f) {
          ++m.segment;
        }
        const double dx = m.sign_x * segs[m.segment].vx;
        const double dy = m.sign_y * segs[m.segment].vy;
        m.base.x_min += dx;
        m.base.x_max += dx;
        m.base.y_min += dy;
        m.base.y_max += dy;
        if (reflect(m.base.x_min, m.base.x_max, config.frame_width)) {
          m.sign_x = -m.sign_x;
        }
        if (reflect(m.base.y_min, m.base.y_max, config.frame_height)) {
          m.sign_y = -m.sign_y;
        }
      }
      BoundingBox box = m.base;
      if (config.jitter_std > 0.0) {
        const double jx = config.jitter_std * rng.normal();
        const double jy = config.jitter_std * rng.normal();
        box.x_min += jx;
        box.x_max += jx;
        box.y_min += jy;
        box.y_max += jy;
      }
      box = clip_to_frame(box, config.frame_width, config.frame_height);
      frame.boxes.boxes.push_back({static_cast<ObjectId>(i), box});
    }
    scene.push_back(std::move(frame));
  }
  return scene;
}

BoxSet simulate_detection(const FrameTruth& truth, const SceneConfig& config,
                          RandomStream& rng) {
  BoxSet out{BoxRole::kDetected, {}};
  out.boxes.reserve(truth.boxes.size());
  const double sigma = config.detector_noise_std;
  for (const LabeledBox& gt : truth.boxes.boxes) {
    // Draw both variates unconditionally so stream consumption is fixed.
    const bool missed = rng.bernoulli(config.detector_miss_prob);
    BoundingBox b = gt.box;
    const double n0 = rng.normal(), n1 = rng.normal();
    const double n2 = rng.normal(), n3 = rng.normal();
    if (missed) continue;
    b.x_min += sigma * n0;
    b.y_min += sigma * n1;
    b.x_max += sigma * n2;
    b.y_max += sigma * n3;
    b = clip_to_frame(restore_order(b), config.frame_width,
                      config.frame_height);
    out.boxes.push_back({gt.object, b});
  }
  return out;
}

BoxSet simulate_tracking(const BoxSet& keyframe_boxes,
                         const FrameTruth& truth_keyframe,
                         const FrameTruth& truth_now,
                         std::uint32_t frames_since_keyframe,
                         const SceneConfig& config, RandomStream& rng) {
  if (keyframe_boxes.empty()) {
    throw PreconditionError(
        "simulate_tracking: tracking needs a non-empty keyframe detection");
  }
  BoxSet out{BoxRole::kTracked, keyframe_boxes.boxes};
  if (frames_since_keyframe == 0) return out;

  const double sigma = config.tracker_drift_std *
                       std::sqrt(static_cast<double>(frames_since_keyframe));
  for (LabeledBox& tb : out.boxes) {
    const LabeledBox* then = truth_keyframe.boxes.find(tb.object);
    const LabeledBox* now = truth_now.boxes.find(tb.object);
    BoundingBox b = tb.box;
    if (then != nullptr && now != nullptr) {
      b.x_min += now->box.x_min - then->box.x_min;
      b.y_min += now->box.y_min - then->box.y_min;
      b.x_max += now->box.x_max - then->box.x_max;
      b.y_max += now->box.y_max - then->box.y_max;
    }
    b.x_min += sigma * rng.normal();
    b.y_min += sigma * rng.normal();
    b.x_max += sigma * rng.normal();
    b.y_max += sigma * rng.normal();
    tb.box = clip_to_frame(restore_order(b), config.frame_width,
                           config.frame_height);
  }
  return out;
}

PixelDeviation pixel_deviation(const FrameTruth& truth_now,
                               const FrameTruth& truth_keyframe) {
  PixelDeviation dev;
  std::size_t common = 0;
  for (const LabeledBox& now : truth_now.boxes.boxes) {
    const LabeledBox* then = truth_keyframe.boxes.find(now.object);
    if (then == nullptr) continue;
    ++common;
    // Two corners share each x edge and two share each y edge.
    dev.x += 0.5 * (std::abs(now.box.x_min - then->box.x_min) +
                    std::abs(now.box.x_max - then->box.x_max));
    dev.y += 0.5 * (std::abs(now.box.y_min - then->box.y_min) +
                    std::abs(now.box.y_max - then->box.y_max));
  }
  if (common == 0) {
    dev.no_common_objects = true;
    return dev;
  }
  dev.x /= static_cast<double>(common);
  dev.y /= static_cast<double>(common);
  return dev;
}

}  // namespace lted

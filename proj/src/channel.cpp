#include "lted/channel.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {
namespace {

constexpr double kTruncation = 3.0;

double jitter_factor(double jitter, RandomStream& rng) {
  const double z = std::clamp(rng.normal(), -kTruncation, kTruncation);
  return 1.0 + jitter * z;
}

void require_positive(double v, const char* field) {
  if (!(std::isfinite(v) && v > 0.0)) {
    throw ConfigError(fmt::format("channel.{}: must be positive, got {}", field, v));
  }
}

void require_jitter(double v, const char* field) {
  if (!(v >= 0.0 && v < 1.0 / kTruncation)) {
    throw ConfigError(
        fmt::format("channel.{}: must lie in [0, 1/3), got {}", field, v));
  }
}

}  // namespace

void ChannelConfig::validate() const {
  require_positive(uplink_rate_mean, "uplink_rate_mean");
  require_positive(downlink_rate_mean, "downlink_rate_mean");
  require_positive(frame_size_bits, "frame_size_bits");
  require_positive(result_size_bits, "result_size_bits");
  require_positive(detection_delay, "detection_delay");
  require_positive(tracking_delay, "tracking_delay");
  require_jitter(rate_jitter, "rate_jitter");
  require_jitter(delay_jitter, "delay_jitter");
}

double ChannelConfig::max_tracking_delay() const {
  return tracking_delay * (1.0 + kTruncation * delay_jitter);
}

double ChannelConfig::max_detection_path_delay() const {
  const double slowest = 1.0 - kTruncation * rate_jitter;
  return frame_size_bits / (uplink_rate_mean * slowest) +
         detection_delay * (1.0 + kTruncation * delay_jitter) +
         result_size_bits / (downlink_rate_mean * slowest);
}

double ChannelConfig::light_load_interval() const {
  const double bound = std::max(max_detection_path_delay(), max_tracking_delay());
  return std::ceil(bound * 100.0 + 1e-6) / 100.0;
}

ChannelSample sample_channel(const ChannelConfig& config, RandomStream& rng) {
  ChannelSample s;
  s.uplink_rate = config.uplink_rate_mean * jitter_factor(config.rate_jitter, rng);
  s.downlink_rate =
      config.downlink_rate_mean * jitter_factor(config.rate_jitter, rng);
  s.uplink_delay = config.frame_size_bits / s.uplink_rate;
  s.downlink_delay = config.result_size_bits / s.downlink_rate;
  return s;
}

ComputeSample sample_compute(const ChannelConfig& config, RandomStream& rng) {
  ComputeSample s;
  s.detection_delay =
      config.detection_delay * jitter_factor(config.delay_jitter, rng);
  s.tracking_delay =
      config.tracking_delay * jitter_factor(config.delay_jitter, rng);
  return s;
}

FrameDelays sample_frame_delays(const ChannelConfig& config, RandomStream& rng) {
  FrameDelays d;
  d.channel = sample_channel(config, rng);
  d.compute = sample_compute(config, rng);
  return d;
}

}  // namespace lted

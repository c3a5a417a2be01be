#pragma once

#include "lted/rng.hpp"

namespace lted {

/// Wireless link and processing-delay model. Jittered quantities are drawn as
/// mean * (1 + jitter * z) with z ~ N(0, 1) truncated to [-3, 3], so every
/// sample stays strictly positive and has a known upper bound.
struct ChannelConfig {
  double uplink_rate_mean = 88.5e6;    // bits/s
  double downlink_rate_mean = 88.5e6;  // bits/s
  double rate_jitter = 0.1;            // relative std
  double frame_size_bits = 6.195e6;    // 0.07 s upload at the mean rate
  double result_size_bits = 88.5e3;    // 0.001 s download at the mean rate
  double detection_delay = 1.38;       // s
  double tracking_delay = 0.47;        // s
  double delay_jitter = 0.02;          // relative std

  void validate() const;

  double mean_uplink_delay() const { return frame_size_bits / uplink_rate_mean; }
  double mean_downlink_delay() const {
    return result_size_bits / downlink_rate_mean;
  }

  /// Largest tracking delay the sampler can produce.
  double max_tracking_delay() const;
  /// Largest d^UT + d^D + d^DT the sampler can produce.
  double max_detection_path_delay() const;
  /// Smallest capture interval, rounded up to 10 ms, for which neither queue
  /// can ever hold a waiting frame.
  double light_load_interval() const;
};

struct ChannelSample {
  double uplink_delay = 0.0;    // d^UT
  double downlink_delay = 0.0;  // d^DT
  double uplink_rate = 0.0;     // v_U
  double downlink_rate = 0.0;   // v_D
};

struct ComputeSample {
  double detection_delay = 0.0;  // d^D
  double tracking_delay = 0.0;   // d^T
};

ChannelSample sample_channel(const ChannelConfig& config, RandomStream& rng);
ComputeSample sample_compute(const ChannelConfig& config, RandomStream& rng);

/// All per-frame delays; the engine draws one of these per (device, frame)
/// regardless of the action taken.
struct FrameDelays {
  ChannelSample channel;
  ComputeSample compute;
};

FrameDelays sample_frame_delays(const ChannelConfig& config, RandomStream& rng);

}  // namespace lted

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "lted/channel.hpp"
#include "lted/decision.hpp"
#include "lted/scene.hpp"

namespace lted {

/// Event times are compared with this tolerance (seconds).
inline constexpr double kTimeEpsilon = 1e-9;

/// Operating point for a range of frames. A device without a schedule change
/// has a single segment starting at frame 1.
struct LoadSegment {
  std::uint32_t first_frame = 1;
  double capture_interval = 0.7;  // Δf, s
  double alpha = 0.5;             // weight of handling delay, 1/s
  double beta = 1.0;              // weight of waiting delay, 1/s
};

struct DeviceConfig {
  std::uint32_t id = 1;  // 1-based; also the edge-queue tie-break key
  std::uint32_t num_frames = 300;
  std::vector<LoadSegment> segments{LoadSegment{}};
  // Key for this device's detection/tracking/channel streams. Defaults to id;
  // two devices with equal keys see identical noise.
  std::optional<std::uint64_t> stream_key;

  static DeviceConfig uniform(std::uint32_t id, double capture_interval,
                              double alpha, double beta,
                              std::uint32_t num_frames = 300);

  const LoadSegment& segment_for(std::uint32_t frame) const;
  /// τ_{k,f}; equals (f-1)·Δf for a single segment.
  double arrival(std::uint32_t frame) const;
  std::uint64_t stream() const { return stream_key.value_or(id); }

  /// Throws ConfigError. `channel` supplies the tracking-delay bound.
  void validate(const ChannelConfig& channel) const;
};

/// Everything known about one frame once it has been processed.
struct FrameTimeline {
  std::uint32_t device = 1;
  std::uint32_t frame = 1;
  Action action = Action::kDetect;

  double arrival = 0.0;                      // τ
  std::optional<double> edge_arrival;        // τ⁰
  std::optional<double> tracking_done;       // t^T
  std::optional<double> detection_done;      // t^D
  double completion = 0.0;                   // T
  double waiting_local = 0.0;                // w
  std::optional<double> waiting_edge;        // w⁰

  // Sampled delays and the branch's accuracy; inputs to frame_metrics.
  double uplink_delay = 0.0;
  double downlink_delay = 0.0;
  double detection_delay = 0.0;
  double tracking_delay = 0.0;
  double miou = 0.0;
  std::uint32_t keyframe = 0;  // keyframe the boxes derive from

  double accuracy = 0.0;   // A
  double handling = 0.0;   // H
  double waiting = 0.0;    // W
  double reward = 0.0;     // R
};

// ---------------------------------------------------------------------------
// Delay recursions

/// w_{k,f}: 0 for the first frame, else max(0, T_{k,f-1} - τ_{k,f}).
double waiting_local(double prev_completion, double arrival,
                     std::uint32_t frame);

/// t^T_{k,f} = max(T_{k,f-1}, τ_{k,f}) + d^T. Frame 1 cannot be tracked.
double tracking_completion(double prev_completion, double arrival,
                           double tracking_delay, std::uint32_t frame = 2);

/// τ⁰_{k,f}: d^UT for frame 1, else max(T_{k,f-1}, τ_{k,f}) + d^UT.
double edge_arrival_time(double prev_completion, double arrival,
                         double uplink_delay, std::uint32_t frame);

/// The shared FIFO queue Q_0 in front of the single edge detector.
class EdgeQueue {
 public:
  struct Entry {
    std::uint32_t device = 0;
    std::uint32_t frame = 0;
    double arrival = 0.0;  // τ⁰
  };
  struct Service {
    double completion = 0.0;  // t^D
    double waiting = 0.0;     // w⁰
  };

  /// Inserts in (τ⁰, device, frame) order. Throws InternalError on a
  /// duplicate (device, frame).
  void enqueue(std::uint32_t device, std::uint32_t frame, double arrival);

  /// Serves the head entry, which must be (device, frame):
  /// t^D = max(τ⁰, previous t^D) + d^D and w⁰ = max(0, previous t^D - τ⁰);
  /// the first frame ever served has t^D = τ⁰ + d^D, w⁰ = 0.
  Service serve_head(std::uint32_t device, std::uint32_t frame,
                     double detection_delay);

  const std::deque<Entry>& pending() const noexcept { return pending_; }
  std::optional<double> last_completion() const noexcept { return busy_until_; }
  /// Frames waiting or in service at time `now`.
  std::size_t occupancy(double now) const noexcept;

 private:
  std::deque<Entry> pending_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seen_;
  std::optional<double> busy_until_;
  std::uint32_t served_ = 0;
};

struct FrameMetrics {
  double accuracy = 0.0;
  double handling = 0.0;
  double waiting = 0.0;
  double reward = 0.0;
};

/// A, H, W and R = A - αH - βW for a resolved timeline. Throws InternalError
/// when a field required by the chosen branch is missing.
FrameMetrics frame_metrics(const FrameTimeline& timeline, double alpha,
                           double beta);

// ---------------------------------------------------------------------------
// Episode driver

/// One simulated world: devices, what they see, and the network between them.
struct World {
  std::vector<DeviceConfig> devices;
  std::vector<std::shared_ptr<const Scene>> scenes;  // one per device
  SceneConfig scene_config;  // sensor noise parameters
  ChannelConfig channel;
  std::uint64_t seed = 1;
  // When false every device gets a private edge server.
  bool shared_edge = true;
  // Include the edge queue length in the state; defaults to devices.size() > 1.
  std::optional<bool> multi_device_state;

  bool uses_edge_state() const {
    return multi_device_state.value_or(devices.size() > 1);
  }
  void validate() const;
};

/// Builds a world in which every device watches the same generated scene.
World make_world(std::vector<DeviceConfig> devices, const SceneConfig& scene,
                 const ChannelConfig& channel, std::uint64_t seed);

/// Runs every device of `world` through its frames under the given policies
/// (one per device, same order). Returns timelines ordered by (device, frame).
std::vector<FrameTimeline> run_episode(const World& world,
                                       std::uint64_t episode,
                                       std::span<Policy* const> policies);

/// Per-frame delays the engine uses for (device, frame) in `episode`.
FrameDelays frame_delays(const World& world, std::uint64_t episode,
                         const DeviceConfig& device, std::uint32_t frame);

// ---------------------------------------------------------------------------
// Export

inline constexpr const char* kTimelineCsvHeader =
    "device,frame,action,tau,tau0,tT,tD,T,w,w0,H,W,A,R";

/// Writes the fixed header plus one row per frame; absent values are empty
/// fields and numbers use shortest round-trip formatting.
void write_timeline_csv(std::ostream& out,
                        std::span<const FrameTimeline> timelines);

struct Totals {
  double accuracy = 0.0;
  double handling = 0.0;
  double waiting = 0.0;
  double reward = 0.0;
  std::size_t frames = 0;
  std::size_t detections = 0;
};

Totals summarize(std::span<const FrameTimeline> timelines);
Totals summarize_device(std::span<const FrameTimeline> timelines,
                        std::uint32_t device);

}  // namespace lted

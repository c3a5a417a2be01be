#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace lted {

struct FrameTimeline;

enum class Action : std::uint8_t {
  kDetect = 0,  // offload to the edge detector
  kTrack = 1,   // track locally from the last keyframe
};

constexpr int to_int(Action a) noexcept { return static_cast<int>(a); }
constexpr bool is_valid(Action a) noexcept {
  return a == Action::kDetect || a == Action::kTrack;
}

/// What a device observes when frame f reaches the head of its local queue.
struct DecisionState {
  double deviation_x = 0.0;  // px, mean |offset| of corner points vs keyframe
  double deviation_y = 0.0;
  std::uint32_t frames_since_keyframe = 1;
  std::uint32_t local_queue = 0;             // waiting in Q_k, excluding f
  std::optional<std::uint32_t> edge_queue;   // frames in Q_0; multi-device only
  double uplink_rate = 0.0;                  // bits/s
  double downlink_rate = 0.0;                // bits/s
};

/// Decision rule for one device. Implementations may keep state across
/// frames; the engine creates no copies.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string name() const = 0;

  /// Called once before an episode starts.
  virtual void begin_episode(std::uint64_t /*episode*/) {}

  /// Frame 1 is always a keyframe; the engine does not consult the policy
  /// for it, but every implementation must still answer kDetect there.
  virtual Action decide(const DecisionState& state, std::uint32_t frame) = 0;

  /// Called once per frame as soon as its timeline is fully known.
  virtual void on_frame_resolved(const FrameTimeline& /*timeline*/) {}

  /// When true, the engine tracks frames that arrive while a detection is in
  /// flight concurrently instead of queueing them (LTED-Paral).
  virtual bool concurrent_tracking() const { return false; }
};

}  // namespace lted

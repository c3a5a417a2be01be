#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lted/decision.hpp"
#include "lted/rng.hpp"

namespace lted {

// Baseline decision rules. Each returns kDetect for frame 1.

/// LTw/oD: track everything after the first frame.
Action ltwod(const DecisionState& state, std::uint32_t frame);

/// EDw/oT: offload everything.
Action edwot(const DecisionState& state, std::uint32_t frame);

/// LTED-IntV: detect once `interval` captured frames have passed since the
/// last keyframe. Throws ConfigError for interval < 1.
Action lted_intv(const DecisionState& state, std::uint32_t frame,
                 std::uint32_t interval = 15);

/// LTED-DeV: detect when the Euclidean norm of the per-axis deviation
/// exceeds `threshold` px. Throws ConfigError for threshold < 0.
Action lted_dev(const DecisionState& state, std::uint32_t frame,
                double threshold = 10.0);

/// LTED-Rand: track with probability `track_probability`.
Action lted_rand(const DecisionState& state, std::uint32_t frame,
                 double track_probability, RandomStream& rng);

/// LTED-Paral: always requests detection for the head frame; the engine
/// tracks frames that arrive meanwhile (see Policy::concurrent_tracking).
Action lted_paral(const DecisionState& state, std::uint32_t frame);

struct BaselineParams {
  std::uint32_t interval = 15;
  double deviation_threshold = 10.0;
  double track_probability = 0.5;
};

/// Policy names accepted by make_baseline, in report order.
const std::vector<std::string>& baseline_names();

/// Human-readable label ("LTED-IntV", ...) for a policy slug.
std::string display_name(std::string_view slug);

/// Creates a baseline by slug: ltwod, edwot, lted-intv, lted-dev, lted-rand,
/// lted-paral. `seed` and `device` key the random stream of lted-rand.
/// Throws ConfigError for an unknown name.
std::unique_ptr<Policy> make_baseline(std::string_view slug,
                                      const BaselineParams& params,
                                      std::uint64_t seed, std::uint32_t device);

}  // namespace lted

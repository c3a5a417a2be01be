#include "lted/policies.hpp"

#include <cmath>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {

Action ltwod(const DecisionState&, std::uint32_t frame) {
  return frame <= 1 ? Action::kDetect : Action::kTrack;
}

Action edwot(const DecisionState&, std::uint32_t) { return Action::kDetect; }

Action lted_intv(const DecisionState& state, std::uint32_t frame,
                 std::uint32_t interval) {
  if (interval < 1) throw ConfigError("lted-intv: interval must be >= 1");
  if (frame <= 1 || state.frames_since_keyframe >= interval) return Action::kDetect;
  return Action::kTrack;
}

Action lted_dev(const DecisionState& state, std::uint32_t frame, double threshold) {
  if (!(threshold >= 0.0)) throw ConfigError("lted-dev: threshold must be >= 0");
  if (frame <= 1) return Action::kDetect;
  const double magnitude = std::hypot(state.deviation_x, state.deviation_y);
  return magnitude > threshold ? Action::kDetect : Action::kTrack;
}

Action lted_rand(const DecisionState&, std::uint32_t frame, double track_probability,
                 RandomStream& rng) {
  if (!(track_probability >= 0.0 && track_probability <= 1.0)) {
    throw ConfigError("lted-rand: probability must lie in [0, 1]");
  }
  if (frame <= 1) return Action::kDetect;
  return rng.uniform() < track_probability ? Action::kTrack : Action::kDetect;
}

Action lted_paral(const DecisionState&, std::uint32_t) { return Action::kDetect; }

namespace {

class LocalTrackingOnly final : public Policy {
 public:
  std::string name() const override { return "ltwod"; }
  Action decide(const DecisionState& s, std::uint32_t f) override { return ltwod(s, f); }
};

class EdgeDetectionOnly final : public Policy {
 public:
  std::string name() const override { return "edwot"; }
  Action decide(const DecisionState& s, std::uint32_t f) override { return edwot(s, f); }
};

class FixedInterval final : public Policy {
 public:
  explicit FixedInterval(std::uint32_t interval) : interval_(interval) {
    if (interval < 1) throw ConfigError("lted-intv: interval must be >= 1");
  }
  std::string name() const override { return "lted-intv"; }
  Action decide(const DecisionState& s, std::uint32_t f) override {
    return lted_intv(s, f, interval_);
  }

 private:
  std::uint32_t interval_;
};

class DeviationThreshold final : public Policy {
 public:
  explicit DeviationThreshold(double threshold) : threshold_(threshold) {
    if (!(threshold >= 0.0)) throw ConfigError("lted-dev: threshold must be >= 0");
  }
  std::string name() const override { return "lted-dev"; }
  Action decide(const DecisionState& s, std::uint32_t f) override {
    return lted_dev(s, f, threshold_);
  }

 private:
  double threshold_;
};

class RandomChoice final : public Policy {
 public:
  RandomChoice(double p, std::uint64_t seed, std::uint32_t device)
      : p_(p), seed_(seed), device_(device) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("lted-rand: probability must lie in [0, 1]");
    begin_episode(0);
  }
  std::string name() const override { return "lted-rand"; }
  void begin_episode(std::uint64_t episode) override {
    rng_ = RandomStream::derive(seed_, episode, device_, 0, StreamPurpose::kPolicy);
  }
  Action decide(const DecisionState& s, std::uint32_t f) override {
    return lted_rand(s, f, p_, rng_);
  }

 private:
  double p_;
  std::uint64_t seed_;
  std::uint32_t device_;
  RandomStream rng_;
};

class ParallelTracking final : public Policy {
 public:
  std::string name() const override { return "lted-paral"; }
  Action decide(const DecisionState& s, std::uint32_t f) override { return lted_paral(s, f); }
  bool concurrent_tracking() const override { return true; }
};

}  // namespace

const std::vector<std::string>& baseline_names() {
  static const std::vector<std::string> names{"ltwod",    "edwot",     "lted-rand",
                                              "lted-intv", "lted-dev", "lted-paral"};
  return names;
}

std::string display_name(std::string_view slug) {
  if (slug == "ltwod") return "LTw/oD";
  if (slug == "edwot") return "EDw/oT";
  if (slug == "lted-intv") return "LTED-IntV";
  if (slug == "lted-dev") return "LTED-DeV";
  if (slug == "lted-rand") return "LTED-Rand";
  if (slug == "lted-paral") return "LTED-Paral";
  if (slug == "lted-ada") return "LTED-Ada";
  if (slug == "lted-indiv") return "LTED-Indiv";
  return std::string(slug);
}

std::unique_ptr<Policy> make_baseline(std::string_view slug, const BaselineParams& params,
                                      std::uint64_t seed, std::uint32_t device) {
  if (slug == "ltwod") return std::make_unique<LocalTrackingOnly>();
  if (slug == "edwot") return std::make_unique<EdgeDetectionOnly>();
  if (slug == "lted-intv") return std::make_unique<FixedInterval>(params.interval);
  if (slug == "lted-dev") return std::make_unique<DeviationThreshold>(params.deviation_threshold);
  if (slug == "lted-rand") {
    return std::make_unique<RandomChoice>(params.track_probability, seed, device);
  }
  if (slug == "lted-paral") return std::make_unique<ParallelTracking>();
  throw ConfigError(fmt::format("unknown policy '{}'", slug));
}

}  // namespace lted

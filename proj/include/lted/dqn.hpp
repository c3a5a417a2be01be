#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lted/decision.hpp"
#include "lted/rng.hpp"
#include "lted/timing.hpp"

namespace lted {

enum class Activation : std::uint8_t { kRelu };

/// Two-action value network: affine -> activation -> affine. Parameters live
/// in one flat buffer laid out as [W1 (hidden x inputs) | b1 | W2 (2 x hidden) | b2]
/// so optimizers and averaging can treat them as a single vector.
class QNetwork {
 public:
  static constexpr std::size_t kActions = 2;

  QNetwork() = default;
  QNetwork(std::size_t inputs, std::size_t hidden,
           Activation activation = Activation::kRelu);

  /// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)); biases zero.
  static QNetwork initialized(std::size_t inputs, std::size_t hidden,
                              RandomStream& rng);

  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t hidden() const noexcept { return hidden_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t size() const noexcept { return params_.size(); }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::span<double> w1() noexcept { return params().subspan(0, hidden_ * inputs_); }
  std::span<double> b1() noexcept { return params().subspan(hidden_ * inputs_, hidden_); }
  std::span<double> w2() noexcept {
    return params().subspan(hidden_ * (inputs_ + 1), kActions * hidden_);
  }
  std::span<double> b2() noexcept {
    return params().subspan(hidden_ * (inputs_ + 1) + kActions * hidden_, kActions);
  }
  std::span<const double> w1() const noexcept { return params().subspan(0, hidden_ * inputs_); }
  std::span<const double> b1() const noexcept {
    return params().subspan(hidden_ * inputs_, hidden_);
  }
  std::span<const double> w2() const noexcept {
    return params().subspan(hidden_ * (inputs_ + 1), kActions * hidden_);
  }
  std::span<const double> b2() const noexcept {
    return params().subspan(hidden_ * (inputs_ + 1) + kActions * hidden_, kActions);
  }

  bool same_shape(const QNetwork& other) const noexcept {
    return inputs_ == other.inputs_ && hidden_ == other.hidden_ &&
           activation_ == other.activation_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const QNetwork&, const QNetwork&) = default;

 private:
  std::size_t inputs_ = 0;
  std::size_t hidden_ = 0;
  Activation activation_ = Activation::kRelu;
  std::vector<double> params_;
};

using QValues = std::array<double, QNetwork::kActions>;

/// Throws InputError when the state dimension does not match.
QValues forward(const QNetwork& net, std::span<const double> state);

/// argmax with ties resolved to kDetect.
Action greedy_action(const QValues& q) noexcept;

/// With probability epsilon a uniformly random action, otherwise greedy.
Action epsilon_greedy(const QNetwork& net, std::span<const double> state,
                      double epsilon, RandomStream& rng);

struct Transition {
  std::vector<double> state;
  Action action = Action::kDetect;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
};

/// r for terminal transitions, else r + γ·max_a' Q(s', a'; target).
double td_target(double reward, std::span<const double> next_state, bool terminal,
                 const QNetwork& target, double gamma);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as QNetwork::params()
};

/// Mean squared TD error over the batch and its gradient with respect to the
/// online network; the target network is held fixed. Throws InputError on an
/// empty batch.
LossAndGradient loss_and_gradient(const QNetwork& online,
                                  std::span<const Transition* const> batch,
                                  const QNetwork& target, double gamma);

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t parameters)
      : first_moment(parameters, 0.0), second_moment(parameters, 0.0) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update in place. Throws InputError on a shape
/// mismatch.
void adam_step(std::span<double> params, std::span<const double> gradient,
               AdamState& state, double learning_rate);

/// Bounded experience buffer. Once full, each insertion overwrites a
/// uniformly chosen stored transition.
class ReplayMemory {
 public:
  ReplayMemory(std::size_t capacity, RandomStream rng);

  void push(Transition t);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t inserted() const noexcept { return inserted_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }

  /// `count` distinct transitions chosen uniformly. Throws InputError if the
  /// memory holds fewer than `count`.
  std::vector<const Transition*> sample(std::size_t count);

 private:
  std::size_t capacity_;
  RandomStream rng_;
  std::vector<Transition> items_;
  std::uint64_t inserted_ = 0;
};

enum class LearningRateSchedule : std::uint8_t {
  kCompound,  // η0·decay^⌊iterations/every⌋
  kOnce,      // η0 until `every` iterations, η0·decay afterwards
};

struct TrainerConfig {
  std::size_t hidden = 128;
  double gamma = 0.95;
  std::size_t batch_size = 64;
  std::size_t memory_capacity = 10000;
  std::uint32_t update_every = 2;     // κ1, decided frames between updates
  std::uint32_t target_sync_every = 100;  // κ2, decided frames between syncs
  double epsilon_start = 1.0;
  double epsilon_min = 0.001;
  double epsilon_decay = 0.9999;
  double learning_rate = 0.001;
  double learning_rate_decay = 0.1;
  std::uint64_t learning_rate_decay_every = 10000;  // decided frames
  LearningRateSchedule learning_rate_schedule = LearningRateSchedule::kOnce;
  std::uint32_t episodes = 300;
  bool early_stop = true;
  std::uint32_t early_stop_window = 20;
  double early_stop_tolerance = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
  /// Stable FNV-1a hash of every field, stored in checkpoints.
  std::uint64_t hash() const;
};

/// Learning rate in effect after `iterations` decided frames.
double scheduled_learning_rate(const TrainerConfig& cfg, std::uint64_t iterations);

/// Scales applied to raw observations before they reach the network.
struct NormalizationConfig {
  double frame_width = 640.0;
  double frame_height = 480.0;
  double keyframe_interval_scale = 30.0;   // frames
  double queue_scale = 10.0;               // frames
  double rate_scale = 88.5e6;              // bits/s

  void validate() const;
};

/// Feature order: (o_x, o_y, finv, qlen[, edge_qlen], v_U, v_D).
std::vector<double> normalize_state(const DecisionState& raw,
                                    const NormalizationConfig& norms);

inline std::size_t feature_count(bool multi_device) { return multi_device ? 7 : 6; }

struct EpisodeLog {
  std::uint32_t episode = 0;
  double average_reward = 0.0;  // mean R over the episode's decided frames
  double total_reward = 0.0;    // sum of R over all frames
  double epsilon = 0.0;
  double learning_rate = 0.0;
};

/// A device's DQN trainer, exposed to the engine as a Policy so that it acts
/// at the correctly timed decision points. Frame 1 is never stored; each
/// decided frame yields one transition, the last one terminal. `device` keys
/// the learner's random streams.
class DqnLearner final : public Policy {
 public:
  DqnLearner(const TrainerConfig& cfg, const NormalizationConfig& norms,
             std::size_t features, std::uint32_t num_frames, std::uint32_t device);

  std::string name() const override { return "lted-ada"; }
  void begin_episode(std::uint64_t episode) override;
  Action decide(const DecisionState& state, std::uint32_t frame) override;
  void on_frame_resolved(const FrameTimeline& timeline) override;

  const QNetwork& network() const noexcept { return online_; }
  const QNetwork& target_network() const noexcept { return target_; }
  /// Replaces the online network only; the target network is untouched.
  void set_network(const QNetwork& net);
  /// Replaces both the online and the target network.
  void initialize_network(const QNetwork& net);
  const AdamState& adam() const noexcept { return adam_; }
  const ReplayMemory& memory() const noexcept { return memory_; }
  double epsilon() const noexcept { return epsilon_; }
  double learning_rate() const noexcept;
  std::uint64_t decisions() const noexcept { return decisions_; }
  std::uint64_t updates() const noexcept { return adam_.step; }

  /// Invoked after every stored transition (one per decided frame).
  void set_step_hook(std::function<void(std::uint32_t device)> hook) {
    step_hook_ = std::move(hook);
  }
  /// Invoked after each target-network sync with the decision count.
  void set_sync_hook(std::function<void(std::uint64_t)> hook) {
    sync_hook_ = std::move(hook);
  }

  /// Episode statistics for the most recent episode.
  EpisodeLog episode_summary(std::uint32_t episode) const;

 private:
  void store(std::vector<double> next_state, bool terminal);

  TrainerConfig cfg_;
  NormalizationConfig norms_;
  std::size_t features_;
  std::uint32_t num_frames_;
  std::uint32_t device_;
  RandomStream rng_;
  QNetwork online_;
  QNetwork target_;
  AdamState adam_;
  ReplayMemory memory_;
  double epsilon_;
  std::uint64_t decisions_ = 0;
  std::function<void(std::uint32_t)> step_hook_;
  std::function<void(std::uint64_t)> sync_hook_;

  struct Pending {
    std::uint32_t frame = 0;
    std::vector<double> state;
    Action action = Action::kDetect;
    std::optional<double> reward;
  };
  std::optional<Pending> pending_;
  double episode_decided_reward_ = 0.0;
  double episode_total_reward_ = 0.0;
  std::uint32_t episode_decided_ = 0;
};

/// Greedy rollout policy for a trained network.
class GreedyPolicy final : public Policy {
 public:
  GreedyPolicy(QNetwork net, const NormalizationConfig& norms, std::string label = "lted-ada");
  std::string name() const override { return label_; }
  Action decide(const DecisionState& state, std::uint32_t frame) override;
  const QNetwork& network() const noexcept { return net_; }

 private:
  QNetwork net_;
  NormalizationConfig norms_;
  std::string label_;
};

struct TrainingResult {
  QNetwork network;
  AdamState adam;
  std::vector<EpisodeLog> log;
  std::uint64_t decisions = 0;
  bool stopped_early = false;
};

/// Whether the convergence log meets the early-stop rule: exploration has
/// ended and the mean of the last `window` episodes differs from the mean of
/// the preceding `window` by less than `tolerance` (relative).
bool converged(const TrainerConfig& cfg, std::span<const EpisodeLog> log,
               double epsilon);

/// Trains the single device of `world` for cfg.episodes episodes.
TrainingResult train_single_device(const World& world, const TrainerConfig& cfg,
                                   const NormalizationConfig& norms);

/// Episode index used for evaluation traces; disjoint from training episodes.
inline constexpr std::uint64_t kEvaluationEpisodeBase = 1'000'000'000ULL;

/// Greedy rollout of `net` on every device of `world`.
std::vector<FrameTimeline> infer(const QNetwork& net, const World& world,
                                 const NormalizationConfig& norms,
                                 std::uint64_t episode = kEvaluationEpisodeBase);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  QNetwork network;
  AdamState adam;
  std::uint64_t trainer_hash = 0;
  std::string tag;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Throws InputError on a malformed or incompatible checkpoint.
Checkpoint read_checkpoint(std::istream& in);

void write_convergence_csv(std::ostream& out, std::span<const EpisodeLog> log);

}  // namespace lted

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lted/dqn.hpp"
#include "lted/timing.hpp"

namespace lted {

/// Element-wise unweighted mean. Throws InputError on an empty list or a
/// shape mismatch.
QNetwork fedavg(std::span<const QNetwork> networks);

struct FederationConfig {
  // κ3: decided frames per device between aggregations. nullopt disables
  // aggregation, which is the independent-training ablation.
  std::optional<std::uint32_t> sync_every = 300;

  void validate() const;
};

struct BarrierEvent {
  std::uint64_t index = 0;  // 1-based
  std::uint64_t decisions_per_device = 0;
  const QNetwork* global = nullptr;
  std::span<const DqnLearner* const> learners;  // already overwritten
  std::span<const QNetwork> snapshots;          // per device, before averaging
};

using BarrierHook = std::function<void(const BarrierEvent&)>;

struct FederatedResult {
  // Average of the final device networks; equals every device's network when
  // the run ends on a barrier.
  QNetwork global;
  std::vector<QNetwork> device_networks;  // device order of the world
  std::vector<AdamState> device_adams;
  std::vector<std::vector<EpisodeLog>> logs;
  std::uint64_t barriers = 0;
  bool stopped_early = false;
};

/// Trains one learner per device of `world` in the same episodes, so the
/// devices contend for the edge exactly as they would at inference. All
/// learners start from one broadcast initialization. When device k reaches
/// n·κ3 decided frames its parameters are snapshotted; once every device has
/// a snapshot for barrier n, their mean overwrites every online network.
/// Target networks, Adam moments and replay memories stay local.
FederatedResult train_federated(const World& world, const TrainerConfig& trainer,
                                const NormalizationConfig& norms,
                                const FederationConfig& federation,
                                const BarrierHook& on_barrier = {});

/// Greedy rollout with one network for every device, or one per device.
/// Throws InputError if the count is neither 1 nor the device count.
std::vector<FrameTimeline> infer_distributed(std::span<const QNetwork> networks,
                                             const World& world,
                                             const NormalizationConfig& norms,
                                             std::uint64_t episode = kEvaluationEpisodeBase);

}  // namespace lted

#include "lted/federated.hpp"

#include <map>
#include <memory>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {

QNetwork fedavg(std::span<const QNetwork> networks) {
  if (networks.empty()) throw InputError("fedavg: no networks");
  QNetwork out = networks.front();
  for (const QNetwork& n : networks) {
    if (!n.same_shape(out)) throw InputError("fedavg: shape mismatch");
  }
  const double k = static_cast<double>(networks.size());
  std::span<double> p = out.params();
  for (std::size_t i = 0; i < p.size(); ++i) {
    double sum = 0.0;
    for (const QNetwork& n : networks) sum += n.params()[i];
    p[i] = sum / k;
  }
  return out;
}

void FederationConfig::validate() const {
  if (sync_every && *sync_every == 0) throw ConfigError("federation.sync_every: must be >= 1");
}

namespace {

class Aggregator {
 public:
  Aggregator(std::vector<DqnLearner*> learners, std::uint32_t every, const BarrierHook& hook)
      : learners_(std::move(learners)), every_(every), counts_(learners_.size(), 0),
        hook_(hook) {}

  void on_step(std::size_t k) {
    const std::uint64_t c = ++counts_[k];
    if (c % every_ != 0) return;
    auto& slot = pending_[c / every_];
    if (slot.empty()) slot.resize(learners_.size());
    slot[k] = learners_[k]->network();
    flush();
  }

  std::uint64_t barriers() const noexcept { return completed_; }

 private:
  void flush() {
    while (!pending_.empty()) {
      auto it = pending_.begin();
      for (const auto& snap : it->second) {
        if (!snap) return;
      }
      std::vector<QNetwork> snapshots;
      snapshots.reserve(learners_.size());
      for (auto& snap : it->second) snapshots.push_back(std::move(*snap));
      const QNetwork global = fedavg(snapshots);
      for (DqnLearner* l : learners_) l->set_network(global);
      ++completed_;
      if (hook_) {
        std::vector<const DqnLearner*> view(learners_.begin(), learners_.end());
        hook_(BarrierEvent{it->first, it->first * every_, &global, view, snapshots});
      }
      pending_.erase(it);
    }
  }

  std::vector<DqnLearner*> learners_;
  std::uint32_t every_;
  std::vector<std::uint64_t> counts_;
  std::map<std::uint64_t, std::vector<std::optional<QNetwork>>> pending_;
  std::uint64_t completed_ = 0;
  const BarrierHook& hook_;
};

}  // namespace

FederatedResult train_federated(const World& world, const TrainerConfig& trainer,
                                const NormalizationConfig& norms,
                                const FederationConfig& federation,
                                const BarrierHook& on_barrier) {
  world.validate();
  trainer.validate();
  federation.validate();
  const std::size_t features = feature_count(world.uses_edge_state());

  std::vector<std::unique_ptr<DqnLearner>> owned;
  std::vector<DqnLearner*> learners;
  std::vector<Policy*> policies;
  for (const DeviceConfig& d : world.devices) {
    owned.push_back(
        std::make_unique<DqnLearner>(trainer, norms, features, d.num_frames, d.stream()));
    learners.push_back(owned.back().get());
    policies.push_back(owned.back().get());
  }
  const QNetwork initial = learners.front()->network();
  for (DqnLearner* l : learners) l->initialize_network(initial);

  std::optional<Aggregator> aggregator;
  if (federation.sync_every) {
    aggregator.emplace(learners, *federation.sync_every, on_barrier);
    for (std::size_t k = 0; k < learners.size(); ++k) {
      learners[k]->set_step_hook([&aggregator, k](std::uint32_t) { aggregator->on_step(k); });
    }
  }

  FederatedResult result;
  result.logs.resize(learners.size());
  for (std::uint32_t e = 0; e < trainer.episodes; ++e) {
    run_episode(world, e, policies);
    bool all_converged = true;
    for (std::size_t k = 0; k < learners.size(); ++k) {
      result.logs[k].push_back(learners[k]->episode_summary(e));
      all_converged = all_converged &&
                      converged(trainer, result.logs[k], learners[k]->epsilon());
    }
    if (trainer.early_stop && all_converged) {
      result.stopped_early = true;
      break;
    }
  }

  for (DqnLearner* l : learners) {
    result.device_networks.push_back(l->network());
    result.device_adams.push_back(l->adam());
  }
  result.global = fedavg(result.device_networks);
  result.barriers = aggregator ? aggregator->barriers() : 0;
  return result;
}

std::vector<FrameTimeline> infer_distributed(std::span<const QNetwork> networks,
                                             const World& world,
                                             const NormalizationConfig& norms,
                                             std::uint64_t episode) {
  const std::size_t k = world.devices.size();
  if (networks.size() != 1 && networks.size() != k) {
    throw InputError(fmt::format("infer_distributed: {} networks for {} devices",
                                 networks.size(), k));
  }
  std::vector<GreedyPolicy> greedy;
  greedy.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    greedy.emplace_back(networks.size() == 1 ? networks.front() : networks[i], norms);
  }
  std::vector<Policy*> policies;
  for (GreedyPolicy& g : greedy) policies.push_back(&g);
  return run_episode(world, episode, policies);
}

}  // namespace lted

#include "lted/dqn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "lted/errors.hpp"

namespace lted {

// ---------------------------------------------------------------------------
// Network

QNetwork::QNetwork(std::size_t inputs, std::size_t hidden, Activation activation)
    : inputs_(inputs),
      hidden_(hidden),
      activation_(activation),
      params_(hidden * inputs + hidden + kActions * hidden + kActions, 0.0) {
  if (inputs == 0 || hidden == 0) {
    throw InputError("QNetwork: layer sizes must be positive");
  }
}

QNetwork QNetwork::initialized(std::size_t inputs, std::size_t hidden, RandomStream& rng) {
  QNetwork net(inputs, hidden);
  const double limit1 = std::sqrt(6.0 / static_cast<double>(inputs + hidden));
  for (double& w : net.w1()) w = (2.0 * rng.uniform() - 1.0) * limit1;
  const double limit2 = std::sqrt(6.0 / static_cast<double>(hidden + kActions));
  for (double& w : net.w2()) w = (2.0 * rng.uniform() - 1.0) * limit2;
  return net;
}

bool QNetwork::all_finite() const noexcept {
  return std::all_of(params_.begin(), params_.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

// Hidden pre-activations and activations for one state.
void hidden_layer(const QNetwork& net, std::span<const double> s,
                  std::vector<double>& pre, std::vector<double>& act) {
  const std::size_t in = net.inputs();
  const std::size_t hid = net.hidden();
  const double* w1 = net.w1().data();
  const double* b1 = net.b1().data();
  pre.resize(hid);
  act.resize(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    double z = b1[j];
    const double* row = w1 + j * in;
    for (std::size_t i = 0; i < in; ++i) z += row[i] * s[i];
    pre[j] = z;
    act[j] = z > 0.0 ? z : 0.0;
  }
}

QValues output_layer(const QNetwork& net, std::span<const double> act) {
  const std::size_t hid = net.hidden();
  const double* w2 = net.w2().data();
  const double* b2 = net.b2().data();
  QValues q{};
  for (std::size_t a = 0; a < QNetwork::kActions; ++a) {
    double z = b2[a];
    const double* row = w2 + a * hid;
    for (std::size_t j = 0; j < hid; ++j) z += row[j] * act[j];
    q[a] = z;
  }
  return q;
}

void check_dimension(const QNetwork& net, std::span<const double> state) {
  if (state.size() != net.inputs()) {
    throw InputError(fmt::format("state has {} features, network expects {}",
                                 state.size(), net.inputs()));
  }
}

}  // namespace

QValues forward(const QNetwork& net, std::span<const double> state) {
  check_dimension(net, state);
  thread_local std::vector<double> pre, act;
  hidden_layer(net, state, pre, act);
  return output_layer(net, act);
}

Action greedy_action(const QValues& q) noexcept {
  return q[1] > q[0] ? Action::kTrack : Action::kDetect;
}

Action epsilon_greedy(const QNetwork& net, std::span<const double> state, double epsilon,
                      RandomStream& rng) {
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return rng.uniform() < 0.5 ? Action::kDetect : Action::kTrack;
  }
  return greedy_action(forward(net, state));
}

double td_target(double reward, std::span<const double> next_state, bool terminal,
                 const QNetwork& target, double gamma) {
  if (terminal) return reward;
  const QValues q = forward(target, next_state);
  return reward + gamma * std::max(q[0], q[1]);
}

LossAndGradient loss_and_gradient(const QNetwork& online,
                                  std::span<const Transition* const> batch,
                                  const QNetwork& target, double gamma) {
  if (batch.empty()) throw InputError("loss_and_gradient: empty batch");
  const std::size_t in = online.inputs();
  const std::size_t hid = online.hidden();
  LossAndGradient out;
  out.gradient.assign(online.size(), 0.0);
  double* g_w1 = out.gradient.data();
  double* g_b1 = g_w1 + hid * in;
  double* g_w2 = g_b1 + hid;
  double* g_b2 = g_w2 + QNetwork::kActions * hid;
  const double* w2 = online.w2().data();

  std::vector<double> pre, act;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Transition* t : batch) {
    check_dimension(online, t->state);
    const double y = td_target(t->reward, t->next_state, t->terminal, target, gamma);
    hidden_layer(online, t->state, pre, act);
    const QValues q = output_layer(online, act);
    const std::size_t a = static_cast<std::size_t>(to_int(t->action));
    const double diff = q[a] - y;
    out.loss += diff * diff * scale;

    const double dq = 2.0 * diff * scale;
    g_b2[a] += dq;
    double* g_row2 = g_w2 + a * hid;
    const double* row2 = w2 + a * hid;
    for (std::size_t j = 0; j < hid; ++j) {
      g_row2[j] += dq * act[j];
      if (pre[j] <= 0.0) continue;
      const double dh = dq * row2[j];
      g_b1[j] += dh;
      double* g_row1 = g_w1 + j * in;
      for (std::size_t i = 0; i < in; ++i) g_row1[i] += dh * t->state[i];
    }
  }
  return out;
}

void adam_step(std::span<double> params, std::span<const double> gradient, AdamState& s,
               double learning_rate) {
  if (params.size() != gradient.size() || params.size() != s.first_moment.size() ||
      params.size() != s.second_moment.size()) {
    throw InputError("adam_step: parameter, gradient and moment shapes differ");
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double correction1 = 1.0 - std::pow(s.beta1, t);
  const double correction2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
    s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
    const double m_hat = s.first_moment[i] / correction1;
    const double v_hat = s.second_moment[i] / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Replay memory

ReplayMemory::ReplayMemory(std::size_t capacity, RandomStream rng)
    : capacity_(capacity), rng_(rng) {
  if (capacity == 0) throw ConfigError("replay memory capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 14));
}

void ReplayMemory::push(Transition t) {
  ++inserted_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[rng_.below(items_.size())] = std::move(t);
}

std::vector<const Transition*> ReplayMemory::sample(std::size_t count) {
  if (count > items_.size()) {
    throw InputError(fmt::format("cannot sample {} transitions from {}", count, items_.size()));
  }
  // Floyd's algorithm: `count` distinct indices in O(count^2) without
  // touching the rest of the buffer.
  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  const std::size_t n = items_.size();
  for (std::size_t j = n - count; j < n; ++j) {
    const std::size_t r = static_cast<std::size_t>(rng_.below(j + 1));
    if (std::find(chosen.begin(), chosen.end(), r) == chosen.end()) {
      chosen.push_back(r);
    } else {
      chosen.push_back(j);
    }
  }
  std::vector<const Transition*> out;
  out.reserve(count);
  for (std::size_t i : chosen) out.push_back(&items_[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainerConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("trainer." + what); };
  if (hidden == 0) fail("hidden: must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma: must lie in [0, 1)");
  if (batch_size == 0 || batch_size > memory_capacity) {
    fail("batch_size: must satisfy 0 < batch_size <= memory_capacity");
  }
  if (update_every == 0) fail("update_every: must be >= 1");
  if (target_sync_every == 0) fail("target_sync_every: must be >= 1");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) fail("epsilon_start: must lie in [0, 1]");
  if (!(epsilon_min >= 0.0 && epsilon_min <= 1.0)) fail("epsilon_min: must lie in [0, 1]");
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) fail("epsilon_decay: must lie in (0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate: must be positive");
  if (!(learning_rate_decay > 0.0 && learning_rate_decay <= 1.0)) {
    fail("learning_rate_decay: must lie in (0, 1]");
  }
  if (learning_rate_decay_every == 0) fail("learning_rate_decay_every: must be >= 1");
  if (episodes == 0) fail("episodes: must be >= 1");
  if (early_stop_window == 0) fail("early_stop_window: must be >= 1");
  if (!(early_stop_tolerance >= 0.0)) fail("early_stop_tolerance: must be >= 0");
}

std::uint64_t TrainerConfig::hash() const {
  const std::string text = fmt::format(
      "{}|{:.17g}|{}|{}|{}|{}|{:.17g}|{:.17g}|{:.17g}|{:.17g}|{:.17g}|{}|{}|{}|{}|{}|{:.17g}|{}",
      hidden, gamma, batch_size, memory_capacity, update_every, target_sync_every,
      epsilon_start, epsilon_min, epsilon_decay, learning_rate, learning_rate_decay,
      learning_rate_decay_every, static_cast<int>(learning_rate_schedule), episodes, early_stop, early_stop_window,
      early_stop_tolerance, seed);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double scheduled_learning_rate(const TrainerConfig& cfg, std::uint64_t iterations) {
  const std::uint64_t steps = iterations / cfg.learning_rate_decay_every;
  if (cfg.learning_rate_schedule == LearningRateSchedule::kOnce) {
    return steps == 0 ? cfg.learning_rate : cfg.learning_rate * cfg.learning_rate_decay;
  }
  return cfg.learning_rate * std::pow(cfg.learning_rate_decay, static_cast<double>(steps));
}

void NormalizationConfig::validate() const {
  for (double v : {frame_width, frame_height, keyframe_interval_scale, queue_scale, rate_scale}) {
    if (!(std::isfinite(v) && v > 0.0)) {
      throw ConfigError("normalization scales must be positive");
    }
  }
}

std::vector<double> normalize_state(const DecisionState& raw, const NormalizationConfig& n) {
  const std::array<double, 4> raw_values{raw.deviation_x, raw.deviation_y, raw.uplink_rate,
                                         raw.downlink_rate};
  for (double v : raw_values) {
    if (!std::isfinite(v)) throw InputError("normalize_state: non-finite observation");
  }
  std::vector<double> x;
  x.reserve(7);
  x.push_back(raw.deviation_x / n.frame_width);
  x.push_back(raw.deviation_y / n.frame_height);
  x.push_back(static_cast<double>(raw.frames_since_keyframe) / n.keyframe_interval_scale);
  x.push_back(static_cast<double>(raw.local_queue) / n.queue_scale);
  if (raw.edge_queue) x.push_back(static_cast<double>(*raw.edge_queue) / n.queue_scale);
  x.push_back(raw.uplink_rate / n.rate_scale);
  x.push_back(raw.downlink_rate / n.rate_scale);
  return x;
}

// ---------------------------------------------------------------------------
// Learner

DqnLearner::DqnLearner(const TrainerConfig& cfg, const NormalizationConfig& norms,
                       std::size_t features, std::uint32_t num_frames, std::uint32_t device)
    : cfg_(cfg),
      norms_(norms),
      features_(features),
      num_frames_(num_frames),
      device_(device),
      rng_(RandomStream::derive(cfg.seed, 0, device, 0, StreamPurpose::kTrainer)),
      memory_(cfg.memory_capacity,
              RandomStream::derive(cfg.seed, 0, device, 1, StreamPurpose::kTrainer)),
      epsilon_(cfg.epsilon_start) {
  cfg_.validate();
  norms_.validate();
  RandomStream init = RandomStream::derive(cfg.seed, 0, device, 0, StreamPurpose::kInit);
  online_ = QNetwork::initialized(features, cfg.hidden, init);
  target_ = online_;
  adam_ = AdamState(online_.size());
}

void DqnLearner::set_network(const QNetwork& net) {
  if (!net.same_shape(online_)) throw InputError("set_network: shape mismatch");
  online_ = net;
}

void DqnLearner::initialize_network(const QNetwork& net) {
  set_network(net);
  target_ = net;
}

double DqnLearner::learning_rate() const noexcept {
  return scheduled_learning_rate(cfg_, decisions_);
}

void DqnLearner::begin_episode(std::uint64_t) {
  pending_.reset();
  episode_decided_reward_ = 0.0;
  episode_total_reward_ = 0.0;
  episode_decided_ = 0;
}

Action DqnLearner::decide(const DecisionState& state, std::uint32_t frame) {
  std::vector<double> x = normalize_state(state, norms_);
  if (x.size() != features_) {
    throw InputError(fmt::format("learner expects {} features, observed {}", features_,
                                 x.size()));
  }
  if (pending_) {
    if (!pending_->reward) {
      throw InternalError("learner: previous frame not resolved before next decision");
    }
    store(x, false);
  }
  const Action a = frame <= 1 ? Action::kDetect : epsilon_greedy(online_, x, epsilon_, rng_);
  epsilon_ *= cfg_.epsilon_decay;
  if (epsilon_ < cfg_.epsilon_min) epsilon_ = 0.0;
  pending_ = Pending{frame, std::move(x), a, std::nullopt};
  return a;
}

void DqnLearner::on_frame_resolved(const FrameTimeline& tl) {
  episode_total_reward_ += tl.reward;
  if (tl.frame <= 1) return;
  episode_decided_reward_ += tl.reward;
  ++episode_decided_;
  if (!pending_ || pending_->frame != tl.frame) {
    throw InternalError(fmt::format("learner: unexpected resolution of frame {}", tl.frame));
  }
  pending_->reward = tl.reward;
  if (tl.frame == num_frames_) store(pending_->state, true);
}

void DqnLearner::store(std::vector<double> next_state, bool terminal) {
  Pending p = std::move(*pending_);
  pending_.reset();
  memory_.push(Transition{std::move(p.state), p.action, *p.reward, std::move(next_state),
                          terminal});
  ++decisions_;
  if (decisions_ % cfg_.update_every == 0 && memory_.size() >= cfg_.batch_size) {
    const std::vector<const Transition*> batch = memory_.sample(cfg_.batch_size);
    const LossAndGradient lg = loss_and_gradient(online_, batch, target_, cfg_.gamma);
    adam_step(online_.params(), lg.gradient, adam_, learning_rate());
  }
  if (decisions_ % cfg_.target_sync_every == 0) {
    target_ = online_;
    if (sync_hook_) sync_hook_(decisions_);
  }
  if (step_hook_) step_hook_(device_);
}

EpisodeLog DqnLearner::episode_summary(std::uint32_t episode) const {
  EpisodeLog log;
  log.episode = episode;
  log.average_reward =
      episode_decided_ == 0 ? 0.0 : episode_decided_reward_ / episode_decided_;
  log.total_reward = episode_total_reward_;
  log.epsilon = epsilon_;
  log.learning_rate = learning_rate();
  return log;
}

GreedyPolicy::GreedyPolicy(QNetwork net, const NormalizationConfig& norms, std::string label)
    : net_(std::move(net)), norms_(norms), label_(std::move(label)) {}

Action GreedyPolicy::decide(const DecisionState& state, std::uint32_t frame) {
  if (frame <= 1) return Action::kDetect;
  return greedy_action(forward(net_, normalize_state(state, norms_)));
}

// ---------------------------------------------------------------------------
// Training and inference

bool converged(const TrainerConfig& cfg, std::span<const EpisodeLog> log, double epsilon) {
  const std::size_t w = cfg.early_stop_window;
  if (epsilon > 0.0 || log.size() < 2 * w) return false;
  auto mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + w; ++i) s += log[i].average_reward;
    return s / static_cast<double>(w);
  };
  const double recent = mean(log.size() - w);
  const double before = mean(log.size() - 2 * w);
  const double scale = std::max(std::abs(before), 1e-12);
  return std::abs(recent - before) / scale < cfg.early_stop_tolerance;
}

TrainingResult train_single_device(const World& world, const TrainerConfig& cfg,
                                   const NormalizationConfig& norms) {
  world.validate();
  cfg.validate();
  if (world.devices.size() != 1) {
    throw ConfigError("train_single_device: world must contain exactly one device");
  }
  const DeviceConfig& device = world.devices.front();
  DqnLearner learner(cfg, norms, feature_count(world.uses_edge_state()), device.num_frames,
                     device.stream());
  Policy* policies[] = {&learner};
  TrainingResult result;
  for (std::uint32_t e = 0; e < cfg.episodes; ++e) {
    run_episode(world, e, policies);
    result.log.push_back(learner.episode_summary(e));
    if (cfg.early_stop && converged(cfg, result.log, learner.epsilon())) {
      result.stopped_early = true;
      break;
    }
  }
  result.network = learner.network();
  result.adam = learner.adam();
  result.decisions = learner.decisions();
  return result;
}

std::vector<FrameTimeline> infer(const QNetwork& net, const World& world,
                                 const NormalizationConfig& norms, std::uint64_t episode) {
  std::vector<GreedyPolicy> greedy;
  greedy.reserve(world.devices.size());
  for (std::size_t i = 0; i < world.devices.size(); ++i) greedy.emplace_back(net, norms);
  std::vector<Policy*> policies;
  for (GreedyPolicy& g : greedy) policies.push_back(&g);
  return run_episode(world, episode, policies);
}

// ---------------------------------------------------------------------------
// Persistence

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "lted-checkpoint";
  j["version"] = kCheckpointVersion;
  j["tag"] = ckpt.tag;
  j["trainer_hash"] = fmt::format("{:016x}", ckpt.trainer_hash);
  j["network"] = {{"inputs", ckpt.network.inputs()},
                  {"hidden", ckpt.network.hidden()},
                  {"activation", "relu"},
                  {"params", std::vector<double>(ckpt.network.params().begin(),
                                                 ckpt.network.params().end())}};
  j["adam"] = {{"step", ckpt.adam.step},
               {"beta1", ckpt.adam.beta1},
               {"beta2", ckpt.adam.beta2},
               {"epsilon", ckpt.adam.epsilon},
               {"first_moment", ckpt.adam.first_moment},
               {"second_moment", ckpt.adam.second_moment}};
  out << j.dump(1) << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("checkpoint: {}", e.what()));
  }
  try {
    if (j.at("format") != "lted-checkpoint") throw InputError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw InputError("checkpoint: unsupported version");
    }
    if (j.at("network").at("activation") != "relu") {
      throw InputError("checkpoint: unsupported activation");
    }
    Checkpoint c;
    c.tag = j.at("tag").get<std::string>();
    const auto hash_text = j.at("trainer_hash").get<std::string>();
    std::from_chars(hash_text.data(), hash_text.data() + hash_text.size(), c.trainer_hash, 16);
    c.network = QNetwork(j.at("network").at("inputs").get<std::size_t>(),
                         j.at("network").at("hidden").get<std::size_t>());
    const auto params = j.at("network").at("params").get<std::vector<double>>();
    if (params.size() != c.network.size()) throw InputError("checkpoint: parameter count");
    std::copy(params.begin(), params.end(), c.network.params().begin());
    const auto& a = j.at("adam");
    c.adam.step = a.at("step").get<std::uint64_t>();
    c.adam.beta1 = a.at("beta1").get<double>();
    c.adam.beta2 = a.at("beta2").get<double>();
    c.adam.epsilon = a.at("epsilon").get<double>();
    c.adam.first_moment = a.at("first_moment").get<std::vector<double>>();
    c.adam.second_moment = a.at("second_moment").get<std::vector<double>>();
    if (c.adam.first_moment.size() != c.network.size() ||
        c.adam.second_moment.size() != c.network.size()) {
      throw InputError("checkpoint: optimizer moment count");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("checkpoint: {}", e.what()));
  }
}

void write_convergence_csv(std::ostream& out, std::span<const EpisodeLog> log) {
  out << "episode,average_total_reward,epsilon,eta\n";
  for (const EpisodeLog& e : log) {
    out << fmt::format("{},{},{},{}\n", e.episode, e.average_reward, e.epsilon,
                       e.learning_rate);
  }
}

}  // namespace lted

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace oracle {

std::vector<Frame> replay(const lted::World& world, std::uint64_t episode,
                          const ActionOf& action_of) {
  const std::size_t k_count = world.devices.size();
  std::vector<std::vector<Frame>> done(k_count);
  std::vector<double> last_detect(k_count, -1.0);
  bool any_detect = false;
  double global_last_detect = 0.0;

  auto prev_completion = [&](std::size_t k) { return done[k].back().completion; };
  auto head = [&](std::size_t k) { return static_cast<std::uint32_t>(done[k].size() + 1); };
  auto finished = [&](std::size_t k) { return head(k) > world.devices[k].num_frames; };

  for (;;) {
    bool progress = true;
    while (progress) {
      progress = false;
      for (std::size_t k = 0; k < k_count; ++k) {
        if (finished(k)) continue;
        const auto& dev = world.devices[k];
        const std::uint32_t f = head(k);
        const Action a = f == 1 ? Action::kDetect : action_of(dev.id, f);
        if (a != Action::kTrack) continue;
        const auto d = lted::frame_delays(world, episode, dev, f);
        Frame fr;
        fr.device = dev.id;
        fr.frame = f;
        fr.action = a;
        fr.tau = dev.arrival(f);
        const double prev = prev_completion(k);
        fr.w = std::max(0.0, prev - fr.tau);
        fr.t_track = std::max(prev, fr.tau) + d.compute.tracking_delay;
        fr.completion = *fr.t_track;
        fr.handling = d.compute.tracking_delay;
        fr.waiting = fr.w;
        done[k].push_back(fr);
        progress = true;
      }
    }

    // Pick the detection head that reaches the edge first.
    std::optional<std::tuple<double, std::uint32_t, std::uint32_t, std::size_t>> best;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (finished(k)) continue;
      const auto& dev = world.devices[k];
      const std::uint32_t f = head(k);
      const auto d = lted::frame_delays(world, episode, dev, f);
      const double tau0 = f == 1 ? d.channel.uplink_delay
                                 : std::max(prev_completion(k), dev.arrival(f)) +
                                       d.channel.uplink_delay;
      auto cand = std::make_tuple(tau0, dev.id, f, k);
      if (!best) {
        best = cand;
        continue;
      }
      const double bt = std::get<0>(*best);
      const bool earlier =
          tau0 < bt - lted::kTimeEpsilon ||
          (std::abs(tau0 - bt) <= lted::kTimeEpsilon &&
           std::make_pair(dev.id, f) < std::make_pair(std::get<1>(*best), std::get<2>(*best)));
      if (earlier) best = cand;
    }
    if (!best) break;

    const auto [tau0, id, f, k] = *best;
    const auto& dev = world.devices[k];
    const auto d = lted::frame_delays(world, episode, dev, f);
    Frame fr;
    fr.device = id;
    fr.frame = f;
    fr.action = Action::kDetect;
    fr.tau = dev.arrival(f);
    fr.w = f == 1 ? 0.0 : std::max(0.0, prev_completion(k) - fr.tau);
    fr.tau0 = tau0;
    if (!any_detect) {
      fr.t_detect = tau0 + d.compute.detection_delay;
      fr.w0 = 0.0;
    } else {
      fr.t_detect = std::max(tau0, global_last_detect) + d.compute.detection_delay;
      fr.w0 = std::max(0.0, global_last_detect - tau0);
    }
    any_detect = true;
    global_last_detect = *fr.t_detect;
    fr.completion = *fr.t_detect + d.channel.downlink_delay;
    fr.handling =
        d.channel.uplink_delay + d.compute.detection_delay + d.channel.downlink_delay;
    fr.waiting = fr.w + *fr.w0;
    done[k].push_back(fr);
  }

  std::vector<Frame> out;
  for (auto& v : done) out.insert(out.end(), v.begin(), v.end());
  return out;
}

Action coin(std::uint64_t seed, std::uint32_t device, std::uint32_t frame, double p_track) {
  if (frame <= 1) return Action::kDetect;
  auto rng = lted::RandomStream::derive(seed, 0, device, frame, lted::StreamPurpose::kPolicy);
  return rng.uniform() < p_track ? Action::kTrack : Action::kDetect;
}

double iou_by_intervals(const lted::BoundingBox& a, const lted::BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) +
                     (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<double> mean_by_summation(const std::vector<std::vector<double>>& vectors) {
  std::vector<double> out(vectors.front().size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double s = 0.0L;
    for (const auto& v : vectors) s += v[i];
    out[i] = static_cast<double>(s / static_cast<long double>(vectors.size()));
  }
  return out;
}

namespace {

double naive_q(const lted::QNetwork& net, const std::vector<double>& s, std::size_t action) {
  const auto w1 = net.w1();
  const auto b1 = net.b1();
  const auto w2 = net.w2();
  const auto b2 = net.b2();
  double q = b2[action];
  for (std::size_t j = 0; j < net.hidden(); ++j) {
    double z = b1[j];
    for (std::size_t i = 0; i < net.inputs(); ++i) z += w1[j * net.inputs() + i] * s[i];
    q += w2[action * net.hidden() + j] * std::max(0.0, z);
  }
  return q;
}

double naive_loss(const lted::QNetwork& online, std::span<const lted::Transition* const> batch,
                  const lted::QNetwork& target, double gamma) {
  double loss = 0.0;
  for (const lted::Transition* t : batch) {
    double y = t->reward;
    if (!t->terminal) {
      y += gamma * std::max(naive_q(target, t->next_state, 0), naive_q(target, t->next_state, 1));
    }
    const double d = naive_q(online, t->state, static_cast<std::size_t>(lted::to_int(t->action))) - y;
    loss += d * d;
  }
  return loss / static_cast<double>(batch.size());
}

}  // namespace

std::vector<double> numeric_gradient(const lted::QNetwork& online,
                                     std::span<const lted::Transition* const> batch,
                                     const lted::QNetwork& target, double gamma,
                                     double step) {
  lted::QNetwork probe = online;
  std::vector<double> grad(online.size());
  for (std::size_t i = 0; i < online.size(); ++i) {
    const double saved = probe.params()[i];
    probe.params()[i] = saved + step;
    const double up = naive_loss(probe, batch, target, gamma);
    probe.params()[i] = saved - step;
    const double down = naive_loss(probe, batch, target, gamma);
    probe.params()[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace oracle

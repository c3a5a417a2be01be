#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "lted/errors.hpp"
#include "lted/policies.hpp"
#include "lted/timing.hpp"
#include "oracles.hpp"

namespace lted {
namespace {

TEST(Recursions, WaitingLocal) {
  EXPECT_EQ(waiting_local(5.0, 0.0, 1), 0.0);
  EXPECT_DOUBLE_EQ(waiting_local(3.0, 2.5, 2), 0.5);
  EXPECT_EQ(waiting_local(3.0, 3.5, 2), 0.0);
}

TEST(Recursions, TrackingCompletion) {
  EXPECT_DOUBLE_EQ(tracking_completion(0.8, 1.0, 0.47), 1.47);
  EXPECT_DOUBLE_EQ(tracking_completion(1.2, 1.0, 0.47), 1.67);
  EXPECT_EQ(tracking_completion(1.2, 1.0, 0.0), 1.2);
  EXPECT_THROW(tracking_completion(0.0, 0.0, 0.47, 1), PreconditionError);
}

TEST(Recursions, EdgeArrival) {
  EXPECT_DOUBLE_EQ(edge_arrival_time(9.0, 0.0, 0.07, 1), 0.07);
  EXPECT_DOUBLE_EQ(edge_arrival_time(2.0, 1.4, 0.07, 3), 2.07);
  EXPECT_DOUBLE_EQ(edge_arrival_time(1.0, 1.4, 0.07, 3), 1.47);
}

TEST(EdgeQueueTest, ServiceSequence) {
  EdgeQueue q;
  q.enqueue(1, 1, 1.0);
  ASSERT_EQ(q.pending().size(), 1u);
  auto s = q.serve_head(1, 1, 1.38);
  EXPECT_DOUBLE_EQ(s.completion, 2.38);
  EXPECT_EQ(s.waiting, 0.0);
  q.enqueue(1, 2, 1.5);
  s = q.serve_head(1, 2, 1.38);
  EXPECT_DOUBLE_EQ(s.completion, 3.76);
  EXPECT_DOUBLE_EQ(s.waiting, 0.88);
  q.enqueue(1, 3, 10.0);
  s = q.serve_head(1, 3, 1.38);
  EXPECT_DOUBLE_EQ(s.completion, 11.38);
  EXPECT_EQ(s.waiting, 0.0);
}

TEST(EdgeQueueTest, FifoAndTieBreak) {
  EdgeQueue q;
  q.enqueue(1, 2, 1.5);
  q.enqueue(2, 1, 1.0);
  q.enqueue(1, 1, 1.0);
  ASSERT_EQ(q.pending().size(), 3u);
  EXPECT_EQ(q.pending()[0].device, 1u);
  EXPECT_EQ(q.pending()[0].frame, 1u);
  EXPECT_EQ(q.pending()[1].device, 2u);
  EXPECT_EQ(q.pending()[2].frame, 2u);
}

TEST(EdgeQueueTest, InternalErrors) {
  EdgeQueue q;
  q.enqueue(1, 1, 1.0);
  EXPECT_THROW(q.enqueue(1, 1, 2.0), InternalError);
  q.enqueue(2, 1, 2.0);
  EXPECT_THROW(q.serve_head(2, 1, 1.0), InternalError);
}

TEST(Metrics, TrackingReward) {
  FrameTimeline tl;
  tl.action = Action::kTrack;
  tl.tracking_done = 1.0;
  tl.tracking_delay = 0.47;
  tl.miou = 0.9;
  const FrameMetrics m = frame_metrics(tl, 0.5, 1.0);
  EXPECT_NEAR(m.reward, 0.665, 1e-12);
  EXPECT_DOUBLE_EQ(m.handling, 0.47);
}

TEST(Metrics, DetectionReward) {
  FrameTimeline tl;
  tl.action = Action::kDetect;
  tl.edge_arrival = 0.07;
  tl.detection_done = 1.45;
  tl.waiting_edge = 0.0;
  tl.uplink_delay = 0.07;
  tl.detection_delay = 1.38;
  tl.downlink_delay = 0.001;
  tl.miou = 1.0;
  EXPECT_NEAR(frame_metrics(tl, 0.5, 1.0).reward, 0.2745, 1e-12);
  EXPECT_EQ(frame_metrics(tl, 0.0, 0.0).reward, 1.0);
}

TEST(Metrics, UnresolvedTimelineThrows) {
  FrameTimeline tl;
  tl.action = Action::kDetect;
  EXPECT_THROW(frame_metrics(tl, 0.5, 1.0), InternalError);
  tl.action = Action::kTrack;
  EXPECT_THROW(frame_metrics(tl, 0.5, 1.0), InternalError);
}

TEST(DeviceConfigTest, PiecewiseArrivals) {
  DeviceConfig d;
  d.segments = {{1, 1.0, 0.5, 0.5}, {4, 0.5, 0.5, 1.0}};
  EXPECT_EQ(d.arrival(1), 0.0);
  EXPECT_DOUBLE_EQ(d.arrival(3), 2.0);
  EXPECT_DOUBLE_EQ(d.arrival(4), 2.5);
  EXPECT_DOUBLE_EQ(d.arrival(6), 3.5);
  EXPECT_EQ(d.segment_for(3).beta, 0.5);
  EXPECT_EQ(d.segment_for(4).beta, 1.0);
}

TEST(DeviceConfigTest, RejectsFastCapture) {
  ChannelConfig ch;
  EXPECT_THROW(DeviceConfig::uniform(1, 0.3, 0.5, 1).validate(ch), ConfigError);
  EXPECT_NO_THROW(DeviceConfig::uniform(1, 0.47, 0.5, 1).validate(ch));
}

class Fixed final : public Policy {
 public:
  explicit Fixed(Action a) : a_(a) {}
  std::string name() const override { return "fixed"; }
  Action decide(const DecisionState&, std::uint32_t f) override {
    return f <= 1 ? Action::kDetect : a_;
  }

 private:
  Action a_;
};

World world_of(std::vector<DeviceConfig> devices, std::uint64_t seed = 3, std::uint32_t frames = 300) {
  SceneConfig sc;
  sc.num_frames = frames;
  return make_world(std::move(devices), sc, ChannelConfig{}, seed);
}

std::vector<FrameTimeline> run_fixed(const World& w, Action a) {
  std::vector<Fixed> ps(w.devices.size(), Fixed(a));
  std::vector<Policy*> ptrs;
  for (auto& p : ps) ptrs.push_back(&p);
  return run_episode(w, 0, ptrs);
}

TEST(Episode, AllTrackingDrainsStartupBacklog) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1)});
  const auto tl = run_fixed(w, Action::kTrack);
  // Frame 1 is detected and finishes after frame 2 arrives.
  EXPECT_DOUBLE_EQ(tl[1].waiting_local, tl[0].completion - tl[1].arrival);
  EXPECT_GT(tl[1].waiting_local, 0.0);
  std::size_t drained = 1;
  while (drained < tl.size() && tl[drained].waiting_local > 0.0) {
    if (drained > 1) {
      EXPECT_LT(tl[drained].waiting_local, tl[drained - 1].waiting_local);
    }
    ++drained;
  }
  EXPECT_LE(drained, 10u);
  for (std::size_t i = drained; i < tl.size(); ++i) EXPECT_EQ(tl[i].waiting_local, 0.0) << i + 1;
}

TEST(Episode, AllTrackingAfterIdleKeyframeNeverWaits) {
  // A capture interval above the detection path leaves no start-up backlog.
  const World w = world_of({DeviceConfig::uniform(1, 1.6, 0.5, 1)});
  for (const FrameTimeline& t : run_fixed(w, Action::kTrack)) EXPECT_EQ(t.waiting_local, 0.0);
}

TEST(Episode, LightLoadHasNoWaiting) {
  ChannelConfig ch;
  const World w = world_of({DeviceConfig::uniform(1, ch.light_load_interval(), 0.5, 0.5)});
  for (Action a : {Action::kTrack, Action::kDetect}) {
    for (const FrameTimeline& t : run_fixed(w, a)) {
      EXPECT_EQ(t.waiting, 0.0);
      EXPECT_EQ(t.waiting_local, 0.0);
    }
  }
}

TEST(Episode, TwoDevicesAlternateAndBacklogGrows) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1, 30),
                            DeviceConfig::uniform(2, 0.7, 0.5, 1, 30)},
                           3, 30);
  const auto tl = run_fixed(w, Action::kDetect);
  std::vector<const FrameTimeline*> by_service;
  for (const auto& t : tl) by_service.push_back(&t);
  std::sort(by_service.begin(), by_service.end(),
            [](auto* a, auto* b) { return *a->detection_done < *b->detection_done; });
  for (std::size_t i = 1; i < by_service.size(); ++i) {
    EXPECT_NE(by_service[i]->device, by_service[i - 1]->device);
  }
  // Each device holds at most one frame at the edge, so w0 stays near one
  // detection delay while the local backlog grows by a fixed amount per frame.
  const auto at = [&](std::uint32_t d, std::uint32_t f) { return tl[(d - 1) * 30 + f - 1]; };
  for (std::uint32_t f = 3; f <= 30; ++f) {
    EXPECT_LE(*at(2, f).waiting_edge, 1.38 * 1.06 + 1e-9);
  }
  const auto wl = [&](std::uint32_t f) { return at(1, f).waiting_local; };
  EXPECT_GT(wl(30), wl(20));
  EXPECT_GT(wl(20), wl(10));
  const double slope1 = (wl(20) - wl(10)) / 10, slope2 = (wl(30) - wl(20)) / 10;
  EXPECT_NEAR(slope1, slope2, 0.1 * slope1);
  EXPECT_NEAR(slope1, 2 * 1.38 - 0.7, 0.15);
}

TEST(Episode, InvariantsUnderRandomPolicies) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1, 60), DeviceConfig::uniform(2, 0.9, 0.5, 1, 60)},
                       seed, 60);
    oracle::CoinPolicy p1(seed, 0.6), p2(seed, 0.6);
    p2.set_device(2);
    Policy* ps[] = {&p1, &p2};
    const auto tl = run_episode(w, 0, ps);
    ASSERT_EQ(tl.size(), 120u);
    for (std::size_t i = 0; i < tl.size(); ++i) {
      const FrameTimeline& t = tl[i];
      EXPECT_GE(t.completion, t.arrival);
      EXPECT_GE(t.waiting_local, 0.0);
      EXPECT_GE(t.handling, 0.0);
      if (t.action == Action::kTrack) {
        EXPECT_FALSE(t.edge_arrival || t.detection_done || t.waiting_edge);
      } else {
        EXPECT_FALSE(t.tracking_done);
        EXPECT_GE(*t.waiting_edge, 0.0);
        EXPECT_GE(*t.edge_arrival, t.arrival);
      }
      if (i > 0 && tl[i - 1].device == t.device) {
        EXPECT_GT(t.completion, tl[i - 1].completion);
      }
      EXPECT_NEAR(t.reward, t.accuracy - 0.5 * t.handling - 1.0 * t.waiting, 1e-12);
    }
  }
}

TEST(Episode, MatchesReplayOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomStream rng(seed);
    const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng.below(3));
    const std::uint32_t frames = 2 + static_cast<std::uint32_t>(rng.below(49));
    std::vector<DeviceConfig> devs;
    for (std::uint32_t d = 1; d <= k; ++d) {
      devs.push_back(DeviceConfig::uniform(d, 0.47 + rng.uniform() * 1.5, 0.5, 1, frames));
    }
    const World w = world_of(devs, seed, frames);
    const double p = rng.uniform();
    std::vector<oracle::CoinPolicy> ps(k, oracle::CoinPolicy(seed, p));
    std::vector<Policy*> ptrs;
    for (std::uint32_t d = 0; d < k; ++d) {
      ps[d].set_device(d + 1);
      ptrs.push_back(&ps[d]);
    }
    const auto got = run_episode(w, 0, ptrs);
    const auto want = oracle::replay(w, 0, [&](std::uint32_t dev, std::uint32_t f) {
      return oracle::coin(seed, dev, f, p);
    });
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].action, want[i].action);
      EXPECT_NEAR(got[i].completion, want[i].completion, kTimeEpsilon);
      EXPECT_NEAR(got[i].waiting, want[i].waiting, kTimeEpsilon);
      EXPECT_NEAR(got[i].handling, want[i].handling, kTimeEpsilon);
    }
  }
}

TEST(Episode, ParallelTrackingUsesCompletedKeyframes) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1, 60)}, 2, 60);
  auto paral = make_baseline("lted-paral", {}, 1, 1);
  Policy* ps[] = {paral.get()};
  const auto tl = run_episode(w, 0, ps);
  std::size_t tracked = 0;
  for (const FrameTimeline& t : tl) {
    if (t.action != Action::kTrack) continue;
    ++tracked;
    const FrameTimeline& key = tl[t.keyframe - 1];
    EXPECT_EQ(key.action, Action::kDetect);
    EXPECT_LE(key.completion, *t.tracking_done - t.tracking_delay + kTimeEpsilon);
  }
  EXPECT_GT(tracked, 10u);
  EXPECT_LT(tracked, 55u);
}

TEST(Episode, DeterministicForSeed) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1)}, 9);
  auto a = make_baseline("lted-dev", {}, 1, 1), b = make_baseline("lted-dev", {}, 1, 1);
  Policy* pa[] = {a.get()};
  Policy* pb[] = {b.get()};
  std::ostringstream x, y;
  write_timeline_csv(x, run_episode(w, 4, pa));
  write_timeline_csv(y, run_episode(w, 4, pb));
  EXPECT_EQ(x.str(), y.str());
}

TEST(Export, CsvLayout) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1, 5)}, 1, 5);
  std::ostringstream out;
  write_timeline_csv(out, run_fixed(w, Action::kTrack));
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "device,frame,action,tau,tau0,tT,tD,T,w,w0,H,W,A,R");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,1,0,0,", 0), 0u);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 13);
  std::getline(in, line);
  EXPECT_NE(line.find(",,"), std::string::npos);  // absent tau0
}

TEST(Export, TotalsAreColumnSums) {
  const World w = world_of({DeviceConfig::uniform(1, 0.7, 0.5, 1)}, 5);
  auto p = make_baseline("lted-intv", {}, 1, 1);
  Policy* ps[] = {p.get()};
  const auto tl = run_episode(w, 0, ps);
  std::ostringstream out;
  write_timeline_csv(out, tl);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  double sum_r = 0, sum_h = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    sum_h += std::stod(cols[10]);
    sum_r += std::stod(cols[13]);
  }
  const Totals t = summarize(tl);
  EXPECT_EQ(t.reward, sum_r);
  EXPECT_EQ(t.handling, sum_h);
}

}  // namespace
}  // namespace lted

#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "lted/errors.hpp"
#include "lted/policies.hpp"
#include "lted/timing.hpp"

namespace lted {
namespace {

DecisionState with_finv(std::uint32_t n) {
  DecisionState s;
  s.frames_since_keyframe = n;
  return s;
}

DecisionState with_dev(double x, double y) {
  DecisionState s;
  s.deviation_x = x;
  s.deviation_y = y;
  return s;
}

TEST(Baselines, FirstFrameAlwaysDetected) {
  for (const std::string& name : baseline_names()) {
    auto p = make_baseline(name, {}, 1, 1);
    p->begin_episode(0);
    EXPECT_EQ(p->decide(DecisionState{}, 1), Action::kDetect) << name;
  }
}

TEST(Baselines, LocalTrackingOnly) {
  EXPECT_EQ(ltwod({}, 1), Action::kDetect);
  EXPECT_EQ(ltwod({}, 2), Action::kTrack);
  EXPECT_EQ(ltwod({}, 300), Action::kTrack);
}

TEST(Baselines, EdgeDetectionOnly) {
  EXPECT_EQ(edwot({}, 1), Action::kDetect);
  EXPECT_EQ(edwot({}, 2), Action::kDetect);
  EXPECT_EQ(edwot({}, 300), Action::kDetect);
}

TEST(Baselines, FixedInterval) {
  EXPECT_EQ(lted_intv(with_finv(15), 20), Action::kDetect);
  EXPECT_EQ(lted_intv(with_finv(3), 20), Action::kTrack);
  for (std::uint32_t n : {1u, 2u, 9u}) EXPECT_EQ(lted_intv(with_finv(n), 5, 1), Action::kDetect);
  EXPECT_THROW(lted_intv(with_finv(1), 5, 0), ConfigError);
  EXPECT_THROW(make_baseline("lted-intv", BaselineParams{0, 10, 0.5}, 1, 1), ConfigError);
}

TEST(Baselines, DeviationThreshold) {
  EXPECT_EQ(lted_dev(with_dev(8, 8), 5), Action::kDetect);
  EXPECT_EQ(lted_dev(with_dev(1, 1), 5), Action::kTrack);
  EXPECT_EQ(lted_dev(with_dev(0, 0), 5, 0.0), Action::kTrack);
  EXPECT_THROW(lted_dev(with_dev(0, 0), 5, -1.0), ConfigError);
}

TEST(Baselines, RandomChoice) {
  RandomStream rng(7);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(lted_rand({}, 2, 0.0, rng), Action::kDetect);
    EXPECT_EQ(lted_rand({}, 2, 1.0, rng), Action::kTrack);
  }
  int tracked = 0;
  for (int i = 0; i < 10000; ++i) tracked += lted_rand({}, 2, 0.5, rng) == Action::kTrack;
  EXPECT_NEAR(tracked / 10000.0, 0.5, 0.02);
  EXPECT_THROW(lted_rand({}, 2, 1.5, rng), ConfigError);
}

TEST(Baselines, RandomChoiceReplaysPerEpisode) {
  auto p = make_baseline("lted-rand", {}, 4, 1);
  auto draw = [&] {
    std::string s;
    for (std::uint32_t f = 2; f < 50; ++f) s += to_int(p->decide({}, f)) ? 'T' : 'D';
    return s;
  };
  p->begin_episode(3);
  const std::string a = draw();
  p->begin_episode(3);
  EXPECT_EQ(a, draw());
  p->begin_episode(4);
  EXPECT_NE(a, draw());
}

TEST(Baselines, UnknownName) {
  EXPECT_THROW(make_baseline("nope", {}, 1, 1), ConfigError);
}

TEST(Baselines, UnitIntervalEqualsEdgeOnly) {
  SceneConfig sc;
  const World w = make_world({DeviceConfig::uniform(1, 0.7, 0.5, 1)}, sc, ChannelConfig{}, 2);
  auto a = make_baseline("lted-intv", BaselineParams{1, 10, 0.5}, 1, 1);
  auto b = make_baseline("edwot", {}, 1, 1);
  Policy* pa[] = {a.get()};
  Policy* pb[] = {b.get()};
  std::ostringstream x, y;
  write_timeline_csv(x, run_episode(w, 0, pa));
  write_timeline_csv(y, run_episode(w, 0, pb));
  EXPECT_EQ(x.str(), y.str());
}

TEST(Baselines, ParallelTrackingNeverWaitsLocally) {
  SceneConfig sc;
  const World w = make_world({DeviceConfig::uniform(1, 0.7, 0.5, 1)}, sc, ChannelConfig{}, 2);
  auto p = make_baseline("lted-paral", {}, 1, 1);
  Policy* ps[] = {p.get()};
  for (const FrameTimeline& t : run_episode(w, 0, ps)) {
    if (t.action == Action::kTrack) EXPECT_LE(*t.tracking_done - t.arrival, t.tracking_delay + 1.0);
  }
}

TEST(Baselines, ParallelSingleFrame) {
  SceneConfig sc;
  const World w = make_world({DeviceConfig::uniform(1, 0.7, 0.5, 1, 1)}, sc, ChannelConfig{}, 2);
  auto p = make_baseline("lted-paral", {}, 1, 1);
  Policy* ps[] = {p.get()};
  const auto tl = run_episode(w, 0, ps);
  ASSERT_EQ(tl.size(), 1u);
  EXPECT_EQ(tl.front().action, Action::kDetect);
}

TEST(Baselines, LightLoadOrderingOverEvaluationEpisodes) {
  ChannelConfig ch;
  SceneConfig sc;
  const World w = make_world({DeviceConfig::uniform(1, ch.light_load_interval(), 0.5, 0.5)}, sc, ch, 1);
  std::map<std::string, Totals> mean;
  for (const std::string& name : baseline_names()) {
    auto p = make_baseline(name, {}, 1, 1);
    Policy* ps[] = {p.get()};
    for (std::uint64_t e = 0; e < 10; ++e) {
      const Totals t = summarize(run_episode(w, e, ps));
      mean[name].accuracy += t.accuracy / 10;
      mean[name].handling += t.handling / 10;
    }
  }
  for (const auto& [name, t] : mean) {
    EXPECT_LE(t.accuracy, mean["edwot"].accuracy) << name;
    EXPECT_GE(t.handling, mean["ltwod"].handling) << name;
  }
}

TEST(Baselines, DisplayNames) {
  EXPECT_EQ(display_name("lted-intv"), "LTED-IntV");
  EXPECT_EQ(display_name("edwot"), "EDw/oT");
  EXPECT_EQ(display_name("lted-ada"), "LTED-Ada");
}

}  // namespace
}  // namespace lted

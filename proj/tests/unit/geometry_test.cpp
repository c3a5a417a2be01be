#include <gtest/gtest.h>

#include "lted/errors.hpp"
#include "lted/geometry.hpp"
#include "lted/rng.hpp"
#include "oracles.hpp"

namespace lted {
namespace {

BoundingBox box(double a, double b, double c, double d) { return {a, b, c, d}; }

TEST(Iou, IdenticalBoxesGiveOne) {
  EXPECT_DOUBLE_EQ(iou(box(0, 0, 10, 10), box(0, 0, 10, 10)), 1.0);
}

TEST(Iou, DisjointBoxesGiveZero) {
  EXPECT_DOUBLE_EQ(iou(box(0, 0, 1, 1), box(5, 5, 6, 6)), 0.0);
}

TEST(Iou, HalfOverlapByHand) {
  EXPECT_NEAR(iou(box(0, 0, 2, 2), box(1, 1, 3, 3)), 1.0 / 7.0, 1e-15);
}

TEST(Iou, ZeroUnionIsZero) {
  EXPECT_EQ(iou(box(1, 1, 1, 1), box(1, 1, 1, 1)), 0.0);
}

TEST(Iou, RejectsInvertedBox) {
  EXPECT_THROW(iou(box(2, 0, 1, 1), box(0, 0, 1, 1)), InputError);
  EXPECT_THROW(iou(box(0, 0, 1, 1), box(0, 3, 1, 1)), InputError);
}

TEST(Iou, SymmetricAndBounded) {
  RandomStream rng(11);
  for (int i = 0; i < 500; ++i) {
    auto random_box = [&] {
      const double x = rng.uniform() * 100, y = rng.uniform() * 100;
      return box(x, y, x + rng.uniform() * 50, y + rng.uniform() * 50);
    };
    const BoundingBox a = random_box(), b = random_box();
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, oracle::iou_by_intervals(a, b), 1e-12);
  }
}

TEST(RasterizeIou, SpecExamples) {
  EXPECT_DOUBLE_EQ(rasterize_iou(box(0, 0, 10, 10), box(0, 0, 10, 10), 0.1), 1.0);
  EXPECT_DOUBLE_EQ(rasterize_iou(box(0, 0, 1, 1), box(5, 5, 6, 6), 0.1), 0.0);
  EXPECT_NEAR(rasterize_iou(box(0, 0, 2, 2), box(1, 1, 3, 3), 0.01), 0.1428, 0.001);
}

TEST(RasterizeIou, RejectsNonPositiveStep) {
  EXPECT_THROW(rasterize_iou(box(0, 0, 1, 1), box(0, 0, 1, 1), 0.0), InputError);
  EXPECT_THROW(rasterize_iou(box(0, 0, 1, 1), box(0, 0, 1, 1), -1.0), InputError);
}

TEST(RasterizeIou, AgreesWithinTenSteps) {
  RandomStream rng(5);
  const double step = 0.05;
  for (int i = 0; i < 100; ++i) {
    auto random_box = [&] {
      const double x = rng.uniform() * 20, y = rng.uniform() * 20;
      return box(x, y, x + 1 + rng.uniform() * 10, y + 1 + rng.uniform() * 10);
    };
    const BoundingBox a = random_box(), b = random_box();
    EXPECT_LE(std::abs(iou(a, b) - rasterize_iou(a, b, step)), 10 * step);
  }
}

BoxSet set_of(BoxRole role, std::vector<LabeledBox> boxes) { return BoxSet{role, std::move(boxes)}; }

TEST(MeanIou, PerfectPrediction) {
  const BoxSet truth = set_of(BoxRole::kGroundTruth, {{1, box(0, 0, 4, 4)}, {2, box(5, 5, 9, 9)}});
  BoxSet pred = truth;
  pred.role = BoxRole::kDetected;
  EXPECT_DOUBLE_EQ(mean_iou(pred, truth), 1.0);
}

TEST(MeanIou, MissedObjectCountsInDenominator) {
  // Prediction overlaps its truth with IoU 0.5: [0,0,2,1] vs [0,0,1,1].
  const BoxSet truth = set_of(BoxRole::kGroundTruth, {{1, box(0, 0, 1, 1)}, {2, box(5, 5, 6, 6)}});
  const BoxSet pred = set_of(BoxRole::kDetected, {{1, box(0, 0, 2, 1)}});
  EXPECT_DOUBLE_EQ(mean_iou(pred, truth), 0.25);
}

TEST(MeanIou, EmptyPrediction) {
  const BoxSet truth = set_of(BoxRole::kGroundTruth, {{1, box(0, 0, 1, 1)}});
  EXPECT_EQ(mean_iou(BoxSet{BoxRole::kDetected, {}}, truth), 0.0);
}

TEST(MeanIou, EmptyTruthThrows) {
  EXPECT_THROW(mean_iou(BoxSet{}, BoxSet{}), InputError);
}

TEST(MeanIou, IndexMatching) {
  const BoxSet truth = set_of(BoxRole::kGroundTruth, {{1, box(0, 0, 1, 1)}, {2, box(5, 5, 6, 6)}});
  const BoxSet pred = set_of(BoxRole::kDetected, {{7, box(0, 0, 1, 1)}, {8, box(5, 5, 6, 6)}});
  EXPECT_DOUBLE_EQ(mean_iou(pred, truth, MatchRule::kIndex), 1.0);
  EXPECT_DOUBLE_EQ(mean_iou(pred, truth, MatchRule::kObjectIdentity), 0.0);
}

TEST(MeanIou, RemovingPredictionNeverIncreases) {
  RandomStream rng(3);
  BoxSet truth{BoxRole::kGroundTruth, {}};
  BoxSet pred{BoxRole::kDetected, {}};
  for (ObjectId id = 0; id < 8; ++id) {
    const double x = rng.uniform() * 100, y = rng.uniform() * 100;
    truth.boxes.push_back({id, box(x, y, x + 20, y + 20)});
    pred.boxes.push_back({id, box(x + rng.uniform() * 5, y, x + 20, y + 20 + rng.uniform() * 5)});
  }
  double prev = mean_iou(pred, truth);
  while (!pred.boxes.empty()) {
    pred.boxes.pop_back();
    const double now = mean_iou(pred, truth);
    EXPECT_LE(now, prev);
    prev = now;
  }
}

}  // namespace
}  // namespace lted

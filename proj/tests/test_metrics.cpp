#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tubelink/metrics.hpp"

using namespace tubelink;

namespace {

using Video = std::vector<PanopticFrame>;

// 1×4 frame from per-pixel (class, id) pairs.
PanopticFrame strip(std::vector<std::pair<int, int>> px) {
  PanopticFrame f(1, static_cast<int>(px.size()));
  for (std::size_t i = 0; i < px.size(); ++i) {
    f.class_ids[i] = px[i].first;
    f.instance_ids[i] = px[i].second;
  }
  return f;
}

constexpr int V = kVoidClass;

}  // namespace

TEST(MetricOracles, AgreeOnRandomSmallVideos) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [pred, gt] = oracle::random_case(rng);
    for (int k = 1; k <= 4; ++k) EXPECT_NEAR(vpq(pred, gt, k), oracle::vpq(pred, gt, k), 1e-12) << trial;
    EXPECT_NEAR(association_quality(pred, gt), oracle::aq(pred, gt), 1e-12) << trial;
    EXPECT_NEAR(miou(pred, gt), oracle::miou(pred, gt), 1e-12) << trial;
    for (int c = 2; c <= 4; ++c) EXPECT_NEAR(mvc(pred, gt, c), oracle::mvc(pred, gt, c), 1e-12) << trial;
    const auto s = stq(pred, gt);
    EXPECT_NEAR(s.stq, std::sqrt(s.aq * s.sq), 1e-12);
    for (double v : {s.stq, s.aq, s.sq, vpq(pred, gt, 2), mvc(pred, gt, 2)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(MetricOracles, PerfectPredictionScoresOne) {
  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = oracle::random_case(rng).second;
    const auto r = evaluate_video(gt, gt, EvalOptions{{1, 2, 4}, {2, 4}});
    for (const auto& [k, v] : r.vpq_per_k) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(r.vpq_mean, 1.0);
    EXPECT_EQ(r.stq, 1.0);
    EXPECT_EQ(r.miou, 1.0);
    for (const auto& [c, v] : r.mvc_per_c) EXPECT_EQ(v, 1.0);
  }
}

TEST(MetricOracles, InvariantToConsistentIdRenaming) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    auto [pred, gt] = oracle::random_case(rng);
    Video renamed = pred;
    for (auto& f : renamed)
      for (int& id : f.instance_ids) id = id == 0 ? 0 : 1000 - id;
    EXPECT_DOUBLE_EQ(vpq(pred, gt, 2), vpq(renamed, gt, 2));
    EXPECT_DOUBLE_EQ(association_quality(pred, gt), association_quality(renamed, gt));
  }
}

TEST(Vpq, HandComputedFourPixelFrames) {
  // gt box covers three pixels; pred covers two of them and nothing else.
  Video gt{strip({{2, 1}, {2, 1}, {2, 1}, {V, 0}})};
  Video pred{strip({{2, 5}, {2, 5}, {V, 0}, {V, 0}})};
  EXPECT_NEAR(vpq(pred, gt, 1), 2.0 / 3.0, 1e-15);  // one TP with IoU 2/3
  // Pred overlapping half the box and one sky pixel: IoU 1/3 is no match.
  Video gt2{strip({{2, 1}, {2, 1}, {0, 0}, {0, 0}})};
  Video pred2{strip({{V, 0}, {2, 4}, {2, 4}, {V, 0}})};
  EXPECT_EQ(vpq(pred2, gt2, 1), 0.0);
}

TEST(Vpq, EmptyPredictionScoresZero) {
  Video gt{strip({{0, 0}, {2, 1}, {2, 1}, {1, 0}})}, pred{strip({{V, 0}, {V, 0}, {V, 0}, {V, 0}})};
  EXPECT_EQ(vpq(pred, gt, 1), 0.0);
}

TEST(Vpq, MeanSkipsWindowsLongerThanTheVideo) {
  Video gt{strip({{2, 1}, {2, 1}, {0, 0}, {0, 0}}), strip({{0, 0}, {2, 1}, {2, 1}, {0, 0}})};
  Video pred = gt;
  pred[1].class_ids[0] = 1;  // damage frame 1 only
  const double expected = (vpq(pred, gt, 1) + vpq(pred, gt, 2)) / 2.0;
  EXPECT_DOUBLE_EQ(vpq_mean(pred, gt), expected);
  EXPECT_THROW(vpq(pred, gt, 4), Error);
}

TEST(Vpq, LengthMismatchThrows) {
  Video a{strip({{0, 0}})}, b{strip({{0, 0}}), strip({{0, 0}})};
  EXPECT_THROW(vpq(a, b, 1), ShapeError);
  EXPECT_THROW(miou(a, b), ShapeError);
  EXPECT_THROW(association_quality(a, b), ShapeError);
}

TEST(Stq, GeometricMean) {
  // Class sky (IoU 1) and box split into halves (IoU 0.5 each side of an ID
  // switch): checks the identity on a hand-made case.
  Video gt{strip({{2, 1}, {2, 1}}), strip({{2, 1}, {2, 1}})};
  Video pred{strip({{2, 7}, {2, 7}}), strip({{2, 8}, {2, 8}})};
  const auto s = stq(pred, gt);
  EXPECT_DOUBLE_EQ(s.aq, 0.5);  // two pred tracks, each IoU ½ over half the gt
  EXPECT_DOUBLE_EQ(s.sq, 1.0);
  EXPECT_NEAR(s.stq, std::sqrt(0.5), 1e-15);
  EXPECT_DOUBLE_EQ(oracle::aq(pred, gt), 0.5);
}

TEST(Stq, AggregateKeepsTheIdentity) {
  EvalResult a, b;
  a.aq = 0.25;
  a.sq = 0.64;
  b.aq = 0.25;
  b.sq = 0.64;
  a.videos = b.videos = 1;
  const std::vector<EvalResult> both{a, b};
  EXPECT_NEAR(aggregate(both).stq, 0.4, 1e-15);
}

TEST(Mvc, MeasuresConsistencyNotCorrectness) {
  Video gt(3, strip({{0, 0}, {0, 0}, {0, 0}, {0, 0}}));
  Video constant(3, strip({{1, 0}, {1, 0}, {1, 0}, {1, 0}}));
  EXPECT_EQ(mvc(constant, gt, 2), 1.0);
  EXPECT_EQ(miou(constant, gt), 0.0);
  Video alternating{constant[0], gt[0], constant[0]};
  EXPECT_EQ(mvc(alternating, gt, 2), 0.0);
  EXPECT_THROW(mvc(gt, gt, 4), Error);
}

TEST(Aq, NoGroundTruthTracksScoresOne) {
  Video gt{strip({{0, 0}, {1, 0}})}, pred{strip({{2, 3}, {1, 0}})};
  EXPECT_EQ(association_quality(pred, gt), 1.0);
  EXPECT_EQ(oracle::aq(pred, gt), 1.0);
}

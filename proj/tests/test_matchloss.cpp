#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "tubelink/matchloss.hpp"

using namespace tubelink;

namespace {

TubeMask random_tube(Rng& rng, int f, int h, int w) {
  TubeMask m(f, h, w);
  for (auto& b : m.bits) b = rng.uniform() < 0.4 ? 1 : 0;
  return m;
}

}  // namespace

TEST(MajorityPool, StrictMajorityPerCell) {
  TubeMask m(1, 2, 4);
  // Left cell: 3 of 4 on; right cell: 2 of 4 on (not a strict majority).
  m.at(0, 0, 0) = m.at(0, 0, 1) = m.at(0, 1, 0) = 1;
  m.at(0, 0, 2) = m.at(0, 1, 3) = 1;
  TubeMask p = majority_pool(m, 2);
  EXPECT_EQ(p.height, 1);
  EXPECT_EQ(p.width, 2);
  EXPECT_EQ(p.at(0, 0, 0), 1);
  EXPECT_EQ(p.at(0, 0, 1), 0);
  EXPECT_THROW(majority_pool(m, 3), Error);
}

TEST(DiceLoss, MatchesFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    TubeMask g = random_tube(rng, 2, 2, 3);
    std::vector<double> p(12);
    for (double& v : p) v = rng.uniform();
    double pg = 0, ps = 0, gs = 0;
    for (std::size_t i = 0; i < 12; ++i) {
      pg += p[i] * g.bits[i];
      ps += p[i];
      gs += g.bits[i];
    }
    EXPECT_NEAR(tube_dice_loss(Tensor({1, 12}, p), g).item(), 1.0 - (2 * pg + 1) / (ps + gs + 1), 1e-14);
  }
  TubeMask g = random_tube(rng, 1, 2, 2);
  std::vector<double> exact(g.bits.begin(), g.bits.end());
  EXPECT_NEAR(tube_dice_loss(Tensor({1, 4}, exact), g).item(), 0.0, 1e-15);
}

TEST(ClassificationLoss, WeightedMeanCrossEntropy) {
  Tensor logits({2, 3}, {2.0, 0.0, -1.0, 0.5, 0.5, 1.0});
  const double lse0 = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0));
  const double lse1 = std::log(2 * std::exp(0.5) + std::exp(1.0));
  const double expected = ((lse0 - 2.0) * 1.0 + (lse1 - 1.0) * 0.1) / 1.1;  // second target is no-object
  EXPECT_NEAR(classification_loss(logits, {0, 2}, 0.1).item(), expected, 1e-14);
  EXPECT_THROW(classification_loss(logits, {0, 3}, 0.1), Error);
}

TEST(MatchingCost, PerfectPredictionIsMatchedToItsTube) {
  // Two gt tubes; query 2 predicts gt 0 exactly, query 0 predicts gt 1.
  TubeMask a(1, 1, 4), b(1, 1, 4);
  a.bits = {1, 1, 0, 0};
  b.bits = {0, 0, 1, 1};
  std::vector<TubeAnnotation> gts{{a, 0, 0}, {b, 2, 5}};
  const double hi = 10, lo = -10;
  Tensor masks({3, 4}, {lo, lo, hi, hi, 0, 0, 0, 0, hi, hi, lo, lo});
  Tensor cls({3, 4}, {lo, lo, hi, lo, 0, 0, 0, 0, hi, lo, lo, lo});
  Assignment asg = hungarian(matching_cost(cls, masks, gts, LossWeights{}));
  EXPECT_EQ(asg.row_to_col(3), (std::vector<int>{1, -1, 0}));
  StageLoss l = stage_loss(cls, masks, gts, LossWeights{});
  EXPECT_LT(l.dice.item(), 1e-3);
  EXPECT_LT(l.ce.item(), 1e-3);
}

TEST(TotalLoss, SemanticModeDropsTrackingTerms) {
  SegmentationLoss seg;
  seg.weighted = Tensor::scalar(3.0);
  TrackLossTerms tr;
  tr.track = Tensor::scalar(2.0);
  tr.aux = Tensor::scalar(4.0);
  std::vector<SegmentationLoss> segs{seg, seg};
  LossWeights w;
  EXPECT_DOUBLE_EQ(total_loss(segs, tr, w, TaskMode::kVPS).total.item(), 6.0 + 2.0 + 0.5 * 4.0);
  EXPECT_DOUBLE_EQ(total_loss(segs, tr, w, TaskMode::kVSS).total.item(), 6.0);
}

TEST(LossWeights, RejectNegative) {
  LossWeights w;
  w.dice = -1;
  EXPECT_THROW(w.validate(), Error);
}

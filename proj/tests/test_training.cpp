#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "tubelink/synthgen.hpp"
#include "tubelink/training.hpp"

using namespace tubelink;

namespace {

struct Fixture {
  std::vector<GeneratedVideo> data;
  std::vector<TrainingVideo> videos;
};

Fixture small_videos(int n) {
  Fixture f;
  for (int i = 0; i < n; ++i) {
    SceneConfig sc;
    sc.frames = 4;
    sc.height = sc.width = 16;
    sc.min_size = 5;
    sc.max_size = 8;
    sc.seed = static_cast<std::uint64_t>(i);
    f.data.push_back(generate_video(sc));
  }
  for (const auto& v : f.data) f.videos.push_back({&v.clip, &v.annotations});
  return f;
}

TrainConfig small_config() {
  TrainConfig tc;
  tc.model.decoder.num_queries = 6;
  tc.model.decoder.width = 16;
  tc.model.decoder.stages = 2;
  tc.model.decoder.ffn_hidden = 16;
  tc.model.embed_dim = 8;
  tc.optimizer.iterations = 80;
  tc.optimizer.batch_size = 2;
  tc.seed = 3;
  return tc;
}

double mean_total(const std::vector<TrainStepRecord>& c, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += c[i].total;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST(Training, LossDecreases) {
  auto fx = small_videos(4);
  const auto tc = small_config();
  TubeLinkModel model(tc.model, synthetic_label_space(), tc.seed);
  const auto curve = train(model, fx.videos, tc);
  ASSERT_EQ(curve.size(), 80u);
  for (const auto& r : curve) ASSERT_TRUE(std::isfinite(r.total));
  EXPECT_LT(mean_total(curve, 70, 80), 0.8 * mean_total(curve, 0, 10));
}

TEST(Training, SameSeedSameParameters) {
  auto fx = small_videos(2);
  auto tc = small_config();
  tc.optimizer.iterations = 5;
  TubeLinkModel a(tc.model, synthetic_label_space(), tc.seed), b(tc.model, synthetic_label_space(), tc.seed);
  const auto ca = train(a, fx.videos, tc), cb = train(b, fx.videos, tc);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].total, cb[i].total);
  for (std::size_t i = 0; i < a.parameters().items().size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(a.parameters().items()[i].tensor.values(), b.parameters().items()[i].tensor.values()));
  }
}

TEST(Training, WarmupThenCosineDecay) {
  OptimizerConfig oc;
  oc.iterations = 120;
  oc.warmup = 20;
  ParameterSet none;
  Optimizer opt(none, oc);
  EXPECT_DOUBLE_EQ(opt.learning_rate(0), oc.learning_rate / 21.0);
  EXPECT_DOUBLE_EQ(opt.learning_rate(20), oc.learning_rate);
  EXPECT_NEAR(opt.learning_rate(70), oc.learning_rate / 2.0, 1e-15);
  EXPECT_NEAR(opt.learning_rate(119), oc.learning_rate * 0.5 * (1 + std::cos(std::numbers::pi * 0.99)), 1e-15);
  oc.kind = "rmsprop";
  EXPECT_THROW(Optimizer(none, oc), Error);
}

TEST(Training, PaddedSubclipTargetsRepeatTheLastFrame) {
  auto fx = small_videos(1);
  const auto& v = fx.data[0];
  const auto subs = split_into_subclips(v.clip, 3);  // 4 frames -> second subclip padded
  ASSERT_EQ(subs.size(), 2u);
  const auto targets = subclip_targets(v.annotations, subs[1], TaskMode::kVPS, synthetic_label_space(), 1);
  for (const auto& t : targets) {
    ASSERT_EQ(t.mask.frames, 3);
    for (int k = 1; k < 3; ++k) {
      for (int y = 0; y < t.mask.height; ++y)
        for (int x = 0; x < t.mask.width; ++x) EXPECT_EQ(t.mask.at(k, y, x), t.mask.at(0, y, x));
    }
  }
  const auto vis = subclip_targets(v.annotations, subs[0], TaskMode::kVIS, synthetic_label_space(), 4);
  for (const auto& t : vis) EXPECT_TRUE(t.is_thing());
}

#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tubelink/synthgen.hpp"
#include "tubelink/metrics.hpp"
#include "tubelink/tracker.hpp"

using namespace tubelink;

namespace {

// Hand-built prediction over a 1×2×2 feature grid upsampled to 4×4.
PredictionSet make_prediction(std::vector<double> class_logits, std::vector<double> mask_logits, std::size_t nq) {
  PredictionSet p;
  p.frames = 1;
  p.height = 2;
  p.width = 2;
  const std::size_t k = class_logits.size() / nq;
  p.class_logits = Tensor({nq, k}, std::move(class_logits));
  p.mask_logits = Tensor({nq, 4}, std::move(mask_logits));
  return p;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.decoder.num_queries = 4;
  mc.decoder.width = 8;
  mc.decoder.stages = 2;
  mc.decoder.ffn_hidden = 8;
  mc.embed_dim = 4;
  return mc;
}

}  // namespace

TEST(Postprocess, PixelsGoToTheHighestScoringQuery) {
  const LabelSpace labels = synthetic_label_space();
  // Classes: sky, ground, box, ball, no-object. q0 = sky on the top row,
  // q1 = box on cell (1,1), q2 = no-object everywhere.
  const double H = 8, L = -8;
  auto pred = make_prediction({H, L, L, L, L, L, L, H, L, L, L, L, L, L, H},
                              {H, H, L, L, L, L, L, H, H, H, H, H}, 3);
  InferenceConfig cfg;
  auto out = panoptic_postprocess(pred, labels, cfg, 4, 4, 1);
  ASSERT_EQ(out.frames.size(), 1u);
  ASSERT_EQ(out.kept.size(), 2u);
  const auto& f = out.frames[0];
  EXPECT_EQ(f.class_ids[0], kSkyClass);
  EXPECT_EQ(f.instance_ids[0], 0);
  EXPECT_EQ(f.class_ids[3 * 4 + 3], kBoxClass);
  EXPECT_EQ(f.instance_ids[3 * 4 + 3], 2);  // query index + 1 before linking
  EXPECT_EQ(f.class_ids[2 * 4 + 0], kVoidClass);
}

TEST(Postprocess, LowScoreQueriesAreDropped) {
  const LabelSpace labels = synthetic_label_space();
  auto pred = make_prediction({0, 0, 0, 0, 0}, {5, 5, 5, 5}, 1);  // top score 0.2
  auto out = panoptic_postprocess(pred, labels, InferenceConfig{}, 2, 2, 1);
  EXPECT_TRUE(out.kept.empty());
  for (int c : out.frames[0].class_ids) EXPECT_EQ(c, kVoidClass);
}

TEST(Postprocess, MostlyOccludedThingIsRemoved) {
  const LabelSpace labels = synthetic_label_space();
  const double H = 8, L = -8;
  // q0 box covers all four cells with a weaker score; q1 ball covers three.
  auto pred = make_prediction({L, L, 1, L, L, L, L, L, H, L}, {2, 2, 2, 2, 4, 4, 4, L}, 2);
  auto out = panoptic_postprocess(pred, labels, InferenceConfig{}, 2, 2, 1);
  ASSERT_EQ(out.kept.size(), 1u);
  EXPECT_EQ(out.kept[0].class_id, kBallClass);
  EXPECT_EQ(out.frames[0].class_ids[3], kVoidClass);  // q0 kept only 1/4 of its area
}

TEST(Association, BidirectionalSoftmaxFormula) {
  std::vector<std::vector<double>> prev{{1, 0}, {0, 1}, {1, 1}}, cur{{2, 0}, {0, -1}};
  const auto s = association_scores(prev, cur);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t m = 0; m < 3; ++m) {
      auto d = [&](std::size_t a, std::size_t b) { return cur[a][0] * prev[b][0] + cur[a][1] * prev[b][1]; };
      double row = 0, col = 0;
      for (std::size_t j = 0; j < 3; ++j) row += std::exp(d(k, j));
      for (std::size_t i = 0; i < 2; ++i) col += std::exp(d(i, m));
      EXPECT_NEAR(s[k][m], 0.5 * (std::exp(d(k, m)) / row + std::exp(d(k, m)) / col), 1e-14);
      EXPECT_GE(s[k][m], 0.0);
      EXPECT_LE(s[k][m], 1.0);
    }
}

TEST(Association, SingleCurrentTubeWithEqualLogits) {
  const auto s = association_scores({{1, 0}, {1, 0}}, {{1, 1}});
  EXPECT_DOUBLE_EQ(s[0][0], 0.75);
  EXPECT_DOUBLE_EQ(s[0][1], 0.75);
}

TEST(LinkTubes, KeepsIdsAcrossSubclipsAndAgesOutLostTracks) {
  TrackStore store;
  InferenceConfig cfg;
  std::vector<double> a{5, 0, 0}, b{0, 5, 0};
  auto ids0 = link_tubes(store, {{0, kBoxClass, a, a}, {1, kBallClass, b, b}}, cfg, 0);
  EXPECT_EQ(ids0, (std::vector<int>{1, 2}));
  // Query order swapped in the next subclip: identities follow embeddings.
  auto ids1 = link_tubes(store, {{3, kBallClass, b, b}, {0, kBoxClass, a, a}}, cfg, 1);
  EXPECT_EQ(ids1, (std::vector<int>{2, 1}));
  // Embedding a now arrives as a ball: the box track may not take it.
  auto ids2 = link_tubes(store, {{0, kBallClass, a, a}, {1, kBallClass, b, b}}, cfg, 2);
  EXPECT_EQ(ids2, (std::vector<int>{3, 2}));
  EXPECT_EQ(store.tracks().size(), 3u);
  link_tubes(store, {}, cfg, 3);  // track 1 reaches max_age
  EXPECT_FALSE(store.tracks().contains(1));
  EXPECT_TRUE(store.tracks().contains(2));
  link_tubes(store, {}, cfg, 4);
  EXPECT_TRUE(store.tracks().empty());
  EXPECT_EQ(link_tubes(store, {{0, kBoxClass, a, a}}, cfg, 5), (std::vector<int>{4}));  // ids never reused
}

TEST(LinkTubes, CrossingFixturePreservesIdentities) {
  // Two boxes swap places in a 4-frame 1×4 video. Each subclip sees them in a
  // different query order, so only the embeddings carry identity.
  oracle::Video gt;
  for (int t = 0; t < 4; ++t) {
    PanopticFrame g(1, 4, kBoxClass);
    for (std::size_t x = 0; x < 4; ++x) g.instance_ids[x] = (x < 2) == (t < 2) ? 1 : 2;
    gt.push_back(g);
  }
  const std::vector<double> red{4, 0}, cyan{0, 4};
  // Per subclip: tube k carries (embedding, gt identity it covers).
  const std::vector<std::vector<std::pair<std::vector<double>, int>>> tubes{{{red, 1}, {cyan, 2}},
                                                                             {{cyan, 2}, {red, 1}}};
  TrackStore store;
  oracle::Video linked, by_query;
  for (int s = 0; s < 2; ++s) {
    std::vector<CurrentTube> cur;
    for (int k = 0; k < 2; ++k) {
      const auto& e = tubes[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)].first;
      cur.push_back({k, kBoxClass, e, e});
    }
    const auto ids = link_tubes(store, cur, InferenceConfig{}, s);
    for (int f = 2 * s; f < 2 * s + 2; ++f) {
      PanopticFrame p = gt[static_cast<std::size_t>(f)], q = p;
      for (std::size_t x = 0; x < 4; ++x) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (tubes[static_cast<std::size_t>(s)][k].second != gt[static_cast<std::size_t>(f)].instance_ids[x]) continue;
          p.instance_ids[x] = ids[k];
          q.instance_ids[x] = static_cast<int>(k) + 1;
        }
      }
      linked.push_back(p);
      by_query.push_back(q);
    }
  }
  EXPECT_DOUBLE_EQ(oracle::aq(linked, gt), 1.0);
  EXPECT_DOUBLE_EQ(association_quality(linked, gt), 1.0);
  EXPECT_LT(oracle::aq(by_query, gt), 1.0);  // raw query slots would switch identities
}

TEST(Inference, OutputCoversEveryFrameForAllWindowSizes) {
  TubeLinkModel model(tiny_model(), synthetic_label_space(), 3);
  for (int T : {1, 2, 5, 7}) {
    SceneConfig sc;
    sc.frames = T;
    sc.height = sc.width = 16;
    sc.min_size = 4;
    sc.max_size = 6;
    sc.seed = static_cast<std::uint64_t>(T);
    const auto video = generate_video(sc);
    for (int W : {1, 2, 3, 6, 8}) {
      for (int stride : {0, 1}) {
        InferenceConfig cfg;
        cfg.window = W;
        cfg.stride = stride;
        cfg.score_thresh = 0.0;
        const auto out = run_inference(video.clip, model, cfg);
        ASSERT_EQ(out.frames.size(), static_cast<std::size_t>(T)) << "T=" << T << " W=" << W;
        for (const auto& f : out.frames) EXPECT_EQ(f.size(), 256u);
        for (const auto& [id, tr] : out.tracks) EXPECT_GT(id, 0);
        EXPECT_EQ(run_vss_inference(video.clip, model, cfg).size(), static_cast<std::size_t>(T));
      }
    }
  }
}

TEST(Inference, DeterministicAndThingIdsBelongToOneClass) {
  TubeLinkModel model(tiny_model(), synthetic_label_space(), 4);
  SceneConfig sc;
  sc.frames = 6;
  sc.height = sc.width = 16;
  sc.min_size = 4;
  sc.max_size = 6;
  const auto video = generate_video(sc);
  InferenceConfig cfg;
  cfg.window = 2;
  cfg.score_thresh = 0.0;
  const auto a = run_inference(video.clip, model, cfg), b = run_inference(video.clip, model, cfg);
  EXPECT_EQ(a.frames, b.frames);
  std::map<int, int> cls;
  for (const auto& f : a.frames)
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f.instance_ids[i] == 0) continue;
      auto [it, fresh] = cls.emplace(f.instance_ids[i], f.class_ids[i]);
      EXPECT_EQ(it->second, f.class_ids[i]);
    }
}

TEST(Inference, RejectsBadConfig) {
  InferenceConfig cfg;
  cfg.window = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.window = 2;
  cfg.stride = 3;
  EXPECT_THROW(cfg.validate(), Error);
}

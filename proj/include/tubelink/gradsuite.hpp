#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "tubelink/crosstube.hpp"
#include "tubelink/decoder.hpp"
#include "tubelink/gradcheck.hpp"
#include "tubelink/matchloss.hpp"
#include "tubelink/model.hpp"
#include "tubelink/synthgen.hpp"
#include "tubelink/training.hpp"

namespace tubelink {

struct GradCheckOutcome {
  std::string name;
  int instances = 0;
  double max_error = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

struct GradSuiteConfig {
  int instances = 20;
  double eps = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
};

namespace gradsuite_detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Contracts any tensor to a scalar with fixed random weights, so every output
// coordinate reaches the loss with a distinct coefficient.
inline Tensor project(const Tensor& t, const Tensor& weights) { return sum(mul(t, reshape(weights, t.shape()))); }

template <typename Setup>
GradCheckOutcome run(const std::string& name, const GradSuiteConfig& cfg, std::uint64_t salt, Setup setup) {
  GradCheckOutcome out;
  out.name = name;
  const auto start = std::chrono::steady_clock::now();
  Rng root(cfg.seed ^ (salt * 0x9E3779B97F4A7C15ULL));
  for (int i = 0; i < cfg.instances; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    std::vector<Tensor> params;
    std::size_t coords = 0;
    std::function<Tensor()> loss = setup(rng, params, coords);
    out.max_error = std::max(out.max_error, finite_difference_check(loss, params, cfg.eps, coords, rng.next_u64()));
    ++out.instances;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.passed = out.max_error < cfg.tolerance;
  return out;
}

inline TubeMask random_tube(int frames, int height, int width, Rng& rng) {
  TubeMask m(frames, height, width);
  for (auto& b : m.bits) b = rng.uniform() < 0.4 ? 1 : 0;
  return m;
}

}  // namespace gradsuite_detail

// Central-difference checks of every differentiable building block and of the
// composed training loss on small random instances.
inline std::vector<GradCheckOutcome> run_gradient_suite(const GradSuiteConfig& cfg = {}) {
  namespace gd = gradsuite_detail;
  std::vector<GradCheckOutcome> out;

  out.push_back(gd::run("masked_attention_stage", cfg, 1, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    DecoderConfig dc;
    dc.width = 4;
    dc.ffn_hidden = 6;
    DecoderStage stage(dc, rng);
    const std::size_t n = 3, s = 5;
    Tensor q = gd::random_tensor({n, 4}, rng);
    Tensor f = gd::random_tensor({s, 4}, rng);
    std::vector<double> m(n * s, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 1; j < s; ++j) m[i * s + j] = rng.uniform() < 0.4 ? kMaskedLogit : 0.0;
    Tensor mask({n, s}, m);
    Tensor r1 = gd::random_tensor({n, 4}, rng, 1.0, false);
    Tensor r2 = gd::random_tensor({n, s}, rng, 1.0, false);
    ParameterSet set;
    stage.register_into(set, "stage");
    params = set.tensors();
    params.push_back(q);
    params.push_back(f);
    return [=] {
      AttentionOutput att = masked_cross_attention(stage, q, f, mask);
      Tensor normed = stage.attn_norm(att.output);
      Tensor next = stage.ffn_norm(add(normed, stage.ffn(normed)));
      FeatureMap fm{f, 1, 1, static_cast<int>(s)};
      return add(gd::project(next, r1), gd::project(predict_tube_masks(stage.mask_proj, next, fm), r2));
    };
  }));

  out.push_back(gd::run("temporal_contrastive", cfg, 2, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    const std::size_t e = 5;
    const auto p = static_cast<std::size_t>(rng.integer(1, 3));
    const auto m = static_cast<std::size_t>(rng.integer(0, 3));
    Tensor x = gd::random_tensor({1, e}, rng, 0.7);
    Tensor pos = gd::random_tensor({p, e}, rng, 0.7);
    Tensor neg = m > 0 ? gd::random_tensor({m, e}, rng, 0.7) : Tensor();
    params = {x, pos};
    if (m > 0) params.push_back(neg);
    return [=] { return temporal_contrastive_loss({x, pos, neg}); };
  }));

  out.push_back(gd::run("aux_cosine", cfg, 3, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    Tensor x = gd::random_tensor({1, 6}, rng);
    Tensor y = gd::random_tensor({1, 6}, rng);
    const double b = rng.uniform() < 0.5 ? 1.0 : 0.0;
    params = {x, y};
    return [=] { return aux_cosine_loss(x, y, b); };
  }));

  out.push_back(gd::run("cross_tube_link", cfg, 4, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    CrossTubeLinker linker(LinkerConfig{4, 2, 8, true}, rng);
    Tensor target = gd::random_tensor({3, 4}, rng);
    Tensor source = gd::random_tensor({4, 4}, rng);
    Tensor r = gd::random_tensor({3, 4}, rng, 1.0, false);
    ParameterSet set;
    linker.register_into(set, "linker");
    params = set.tensors();
    params.push_back(target);
    params.push_back(source);
    return [=] { return gd::project(linker(target, source), r); };
  }));

  out.push_back(gd::run("dice_loss", cfg, 5, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    Tensor logits = gd::random_tensor({1, 12}, rng, 2.0);
    TubeMask gt = gd::random_tube(2, 2, 3, rng);
    params = {logits};
    return [=] { return tube_dice_loss(sigmoid(logits), gt); };
  }));

  out.push_back(gd::run("bce_loss", cfg, 6, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    Tensor logits = gd::random_tensor({1, 12}, rng, 3.0);
    TubeMask gt = gd::random_tube(2, 2, 3, rng);
    params = {logits};
    return [=] { return tube_bce_loss(logits, gt); };
  }));

  out.push_back(gd::run("classification_loss", cfg, 7, [](Rng& rng, std::vector<Tensor>& params, std::size_t&) {
    const std::size_t n = 4, k1 = 4;
    Tensor logits = gd::random_tensor({n, k1}, rng, 2.0);
    std::vector<int> targets;
    for (std::size_t q = 0; q < n; ++q) targets.push_back(rng.integer(0, static_cast<int>(k1) - 1));
    params = {logits};
    return [=] { return classification_loss(logits, targets, 0.1); };
  }));

  out.push_back(gd::run("total_loss", cfg, 8, [](Rng& rng, std::vector<Tensor>& params, std::size_t& coords) {
    SceneConfig sc;
    sc.frames = 4;
    sc.height = sc.width = 8;
    sc.min_size = 3;
    sc.max_size = 5;
    sc.num_things = 2;
    sc.seed = rng.next_u64();
    auto video = std::make_shared<GeneratedVideo>(generate_video(sc));
    ModelConfig mc;
    mc.decoder.num_queries = 4;
    mc.decoder.width = 8;
    mc.decoder.stages = 2;
    mc.decoder.patch = 2;
    mc.decoder.ffn_hidden = 8;
    mc.embed_dim = 4;
    auto model = std::make_shared<TubeLinkModel>(mc, synthetic_label_space(), rng.next_u64());
    auto subclips = std::make_shared<std::vector<SubClip>>(split_into_subclips(video->clip, 2));
    const auto labels = synthetic_label_space();
    auto ga = subclip_targets(video->annotations, (*subclips)[0], mc.mode, labels, 2);
    auto gb = subclip_targets(video->annotations, (*subclips)[1], mc.mode, labels, 2);
    params = model->parameters().tensors();
    coords = 3;
    return [=] { return pair_loss(*model, (*subclips)[0], ga, &(*subclips)[1], &gb, LossWeights{}, AssignConfig{}).total; };
  }));
  return out;
}

}  // namespace tubelink

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/nn.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

struct DecoderConfig {
  int num_queries = 16;
  int width = 64;  // channel width D shared by queries and pixel features
  int stages = 3;
  int patch = 4;
  int channels = 3;
  int num_classes = 4;  // real classes; the class head adds one no-object slot
  int ffn_hidden = 128;

  void validate() const {
    if (num_queries < 1 || width < 1 || stages < 1 || patch < 1 || channels < 1 || num_classes < 1 || ffn_hidden < 1) {
      throw Error("DecoderConfig: every dimension must be >= 1");
    }
  }
  bool operator==(const DecoderConfig&) const = default;
};

// Spatial-temporal features of one subclip. `tokens` holds the n×D×H′×W′
// volume as (n·H′·W′)×D rows ordered (t, y, x).
struct FeatureMap {
  Tensor tokens;
  int frames = 0;
  int height = 0;
  int width = 0;

  std::size_t positions() const { return static_cast<std::size_t>(frames) * height * width; }
};

// Predictions of one decoder stage. mask_logits is N×(n·H′·W′), i.e. the
// N×n×H′×W′ tube logits with the trailing axes flattened.
struct StagePrediction {
  Tensor class_logits;  // N×(K+1), last column = no-object
  Tensor mask_logits;
  Tensor queries;
};

struct PredictionSet {
  Tensor class_logits;
  Tensor mask_logits;
  Tensor queries_final;
  int frames = 0;
  int height = 0;  // feature-grid resolution H′×W′
  int width = 0;
  std::vector<StagePrediction> stages;  // every stage, the last equals the final outputs
  std::vector<Tensor> attention;        // per-stage attention weights N×(n·H′·W′)

  std::size_t num_queries() const { return class_logits.dim(0); }
  std::size_t positions() const { return static_cast<std::size_t>(frames) * height * width; }
};

struct GlobalQuerySet {
  Tensor queries;    // N×D learned initial values
  Tensor positions;  // N×D, zero at initialisation

  Tensor initial() const { return add(queries, positions); }
};

struct DecoderStage {
  Linear query_mlp;
  Linear key;
  Linear value;
  LayerNorm attn_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;
  Linear mask_proj;  // no bias: a zero query yields zero mask logits

  DecoderStage() = default;
  DecoderStage(const DecoderConfig& cfg, Rng& rng)
      : query_mlp(cfg.width, cfg.width, rng, true, 0.25),
        key(cfg.width, cfg.width, rng),
        value(cfg.width, cfg.width, rng),
        attn_norm(cfg.width),
        ffn(cfg.width, cfg.ffn_hidden, cfg.width, rng),
        ffn_norm(cfg.width),
        mask_proj(cfg.width, cfg.width, rng, false, 0.25) {}

  void register_into(ParameterSet& set, const std::string& prefix) const {
    query_mlp.register_into(set, prefix + ".query_mlp");
    key.register_into(set, prefix + ".key");
    value.register_into(set, prefix + ".value");
    attn_norm.register_into(set, prefix + ".attn_norm");
    ffn.register_into(set, prefix + ".ffn");
    ffn_norm.register_into(set, prefix + ".ffn_norm");
    mask_proj.register_into(set, prefix + ".mask_proj");
  }
};

// Cuts every frame into P×P patches, flattens each patch as (dy, dx, channel)
// and projects it to D channels.
inline FeatureMap extract_features(const SubClip& subclip, const Linear& patch_embed, int patch) {
  const VideoClip& v = subclip.frames;
  if (patch < 1 || v.height() % patch != 0 || v.width() % patch != 0) {
    throw ShapeError("extract_features: frame " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                     " not divisible by patch " + std::to_string(patch));
  }
  const int gh = v.height() / patch;
  const int gw = v.width() / patch;
  const std::size_t patch_len = static_cast<std::size_t>(patch) * patch * v.channels();
  if (patch_embed.in_features() != patch_len) throw ShapeError("extract_features: patch embedding width mismatch");
  const std::size_t positions = static_cast<std::size_t>(v.frame_count()) * gh * gw;
  std::vector<double> flat(positions * patch_len);
  std::size_t row = 0;
  for (int t = 0; t < v.frame_count(); ++t)
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx, ++row) {
        double* dst = flat.data() + row * patch_len;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int c = 0; c < v.channels(); ++c) *dst++ = v.at(t, gy * patch + dy, gx * patch + dx, c);
      }
  Tensor patches({positions, patch_len}, std::move(flat));
  return FeatureMap{patch_embed(patches), v.frame_count(), gh, gw};
}

struct AttentionOutput {
  Tensor output;   // N×D
  Tensor weights;  // N×S
};

// softmax(M + MLP(Q)·Key(F)ᵀ)·Value(F) + Q, one head.
inline AttentionOutput masked_cross_attention(const DecoderStage& stage, const Tensor& queries,
                                              const Tensor& features, const Tensor& additive_mask) {
  if (queries.rank() != 2 || features.rank() != 2 || queries.dim(1) != features.dim(1)) {
    throw ShapeError("masked_cross_attention: queries " + shape_string(queries.shape()) + " vs features " +
                     shape_string(features.shape()));
  }
  if (additive_mask.size() != queries.dim(0) * features.dim(0)) {
    throw ShapeError("masked_cross_attention: mask must be N×S");
  }
  Tensor q = stage.query_mlp(queries);
  Tensor k = stage.key(features);
  Tensor v = stage.value(features);
  Tensor weights = masked_softmax(matmul_nt(q, k), additive_mask);
  return {add(matmul(weights, v), queries), weights};
}

// logits[q, (t,y,x)] = ⟨MaskProj(Q[q]), F[(t,y,x)]⟩
inline Tensor predict_tube_masks(const Linear& mask_proj, const Tensor& queries, const FeatureMap& features) {
  return matmul_nt(mask_proj(queries), features.tokens);
}

// 0 where sigmoid(logit) >= 0.5, kMaskedLogit elsewhere; a row that would be
// fully blocked is opened completely.
inline Tensor binarize_to_attention_mask(const Tensor& mask_logits) {
  if (mask_logits.rank() != 2) throw ShapeError("binarize_to_attention_mask: expected N×S logits");
  const std::size_t n = mask_logits.dim(0), s = mask_logits.dim(1);
  std::vector<double> out(n * s);
  for (std::size_t i = 0; i < n; ++i) {
    bool any_open = false;
    for (std::size_t j = 0; j < s; ++j) {
      const bool open = mask_logits[i * s + j] >= 0.0;
      out[i * s + j] = open ? 0.0 : kMaskedLogit;
      any_open = any_open || open;
    }
    if (!any_open) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * s), s, 0.0);
  }
  return Tensor({n, s}, std::move(out));
}

class TubeDecoder {
 public:
  TubeDecoder() = default;
  TubeDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg.width);
    const auto patch_len = static_cast<std::size_t>(cfg.patch) * cfg.patch * cfg.channels;
    patch_embed_ = Linear(patch_len, d, rng);
    queries_.queries = uniform_tensor({static_cast<std::size_t>(cfg.num_queries), d}, 1.0, rng);
    queries_.positions = Tensor::zeros({static_cast<std::size_t>(cfg.num_queries), d}, true);
    for (int l = 0; l < cfg.stages; ++l) stages_.emplace_back(cfg, rng);
    class_head_ = Linear(d, static_cast<std::size_t>(cfg.num_classes) + 1, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  const Linear& patch_embed() const { return patch_embed_; }
  const GlobalQuerySet& queries() const { return queries_; }
  GlobalQuerySet& queries() { return queries_; }
  const std::vector<DecoderStage>& stages() const { return stages_; }
  const Linear& class_head() const { return class_head_; }

  FeatureMap features(const SubClip& subclip) const { return extract_features(subclip, patch_embed_, cfg_.patch); }

  // Stage 0 attends freely; stage l > 0 attends inside the binarised masks
  // predicted by stage l-1. Every stage's prediction is retained.
  PredictionSet forward(const SubClip& subclip) const {
    FeatureMap f = features(subclip);
    PredictionSet out;
    out.frames = f.frames;
    out.height = f.height;
    out.width = f.width;
    Tensor q = queries_.initial();
    Tensor mask = Tensor::zeros({static_cast<std::size_t>(cfg_.num_queries), f.positions()});
    for (const auto& stage : stages_) {
      AttentionOutput att = masked_cross_attention(stage, q, f.tokens, mask);
      Tensor normed = stage.attn_norm(att.output);
      q = stage.ffn_norm(add(normed, stage.ffn(normed)));
      StagePrediction pred{class_head_(q), predict_tube_masks(stage.mask_proj, q, f), q};
      mask = binarize_to_attention_mask(pred.mask_logits);
      out.attention.push_back(att.weights);
      out.stages.push_back(std::move(pred));
    }
    out.class_logits = out.stages.back().class_logits;
    out.mask_logits = out.stages.back().mask_logits;
    out.queries_final = out.stages.back().queries;
    return out;
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    patch_embed_.register_into(set, prefix + ".patch_embed");
    set.add(prefix + ".queries", queries_.queries);
    set.add(prefix + ".query_pos", queries_.positions);
    for (std::size_t l = 0; l < stages_.size(); ++l) stages_[l].register_into(set, prefix + ".stage" + std::to_string(l));
    class_head_.register_into(set, prefix + ".class_head");
  }

 private:
  DecoderConfig cfg_;
  Linear patch_embed_;
  GlobalQuerySet queries_;
  std::vector<DecoderStage> stages_;
  Linear class_head_;
};

}  // namespace tubelink

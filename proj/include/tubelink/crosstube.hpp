#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/nn.hpp"
#include "tubelink/rng.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

// Tube-mask IoU thresholds for contrastive targets.
struct AssignConfig {
  double alpha1 = 0.7;  // positive at or above
  double alpha2 = 0.3;  // negative strictly below

  // alpha2 == alpha1 is accepted: it removes the ignore band.
  void validate() const {
    if (!(alpha2 >= 0.0 && alpha2 <= alpha1 && alpha1 <= 1.0)) {
      throw Error("AssignConfig: need 0 <= alpha2 <= alpha1 <= 1");
    }
  }
};

struct ContrastLabel {
  enum class Kind { kPositive, kNegative, kIgnore };
  Kind kind = Kind::kIgnore;
  int gt_index = -1;  // valid for positives

  bool positive() const { return kind == Kind::kPositive; }
  bool negative() const { return kind == Kind::kNegative; }
};

// Uniform draw over ordered pairs (i, j), i != j, |i - j| <= radius.
inline std::pair<int, int> sample_subclip_pair(int subclip_count, Rng& rng, int radius = 1) {
  if (subclip_count < 2) throw Error("sample_subclip_pair: need at least two subclips");
  if (radius < 1) throw Error("sample_subclip_pair: radius must be >= 1");
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < subclip_count; ++i)
    for (int j = std::max(0, i - radius); j <= std::min(subclip_count - 1, i + radius); ++j)
      if (i != j) pairs.emplace_back(i, j);
  return pairs[rng.index(pairs.size())];
}

// Positive for the max-IoU ground truth when that IoU reaches alpha1 (ties go
// to the lowest gt index), negative when every IoU is below alpha2.
inline std::vector<ContrastLabel> assign_contrastive_targets(const std::vector<TubeMask>& pred_tubes,
                                                             const std::vector<TubeAnnotation>& gt_tubes,
                                                             const AssignConfig& cfg) {
  cfg.validate();
  std::vector<ContrastLabel> labels(pred_tubes.size());
  for (std::size_t q = 0; q < pred_tubes.size(); ++q) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_tubes.size(); ++g) {
      const double iou = tube_iou(pred_tubes[q], gt_tubes[g].mask);
      if (best_gt < 0 || iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= cfg.alpha1) {
      labels[q] = {ContrastLabel::Kind::kPositive, best_gt};
    } else if (best < cfg.alpha2) {
      labels[q] = {ContrastLabel::Kind::kNegative, -1};
    }
  }
  return labels;
}

// Anchor x with positives (P×E) and negatives (M×E, possibly zero rows).
struct ContrastiveBatch {
  Tensor anchor;  // 1×E
  Tensor positives;
  Tensor negatives;
};

// -Σ_{y+} log( exp(x·y+) / (exp(x·y+) + Σ_{y-} exp(x·y-)) ) with raw dot products.
// An anchor without positives contributes 0.
inline Tensor temporal_contrastive_loss(const ContrastiveBatch& batch) {
  if (!batch.positives.defined() || batch.positives.dim(0) == 0) return Tensor::scalar(0.0);
  Tensor pos = matmul_nt(batch.anchor, batch.positives);
  const bool has_neg = batch.negatives.defined() && batch.negatives.dim(0) > 0;
  Tensor neg = has_neg ? matmul_nt(batch.anchor, batch.negatives) : Tensor();
  std::vector<Tensor> terms;
  for (std::size_t p = 0; p < pos.size(); ++p) {
    Tensor sp = select(pos, {p});
    Tensor lse = has_neg ? logsumexp(concat({sp, neg})) : logsumexp(sp);
    terms.push_back(sub(lse, sp));
  }
  return sum(concat(terms));
}

// (cos(x, y) - b)^2. Norms carry a tiny additive guard so a zero vector
// yields cosine 0 and finite gradients.
inline Tensor aux_cosine_loss(const Tensor& x, const Tensor& y, double b) {
  if (x.size() != y.size()) throw ShapeError("aux_cosine_loss: size mismatch");
  constexpr double kGuard = 1e-24;
  Tensor yy = y.shape() == x.shape() ? y : reshape(y, x.shape());
  Tensor dot = sum(mul(x, yy));
  Tensor nx = sqrt(add_scalar(sum(square(x)), kGuard));
  Tensor ny = sqrt(add_scalar(sum(square(yy)), kGuard));
  return square(add_scalar(div(dot, mul(nx, ny)), -b));
}

// Feed-forward stack D -> D -> D_emb producing association embeddings.
struct EmbeddingHead {
  FeedForward mlp;

  EmbeddingHead() = default;
  EmbeddingHead(std::size_t width, std::size_t embed_dim, Rng& rng) : mlp(width, width, embed_dim, rng) {}

  void register_into(ParameterSet& set, const std::string& prefix) const { mlp.register_into(set, prefix); }
};

inline Tensor embed(const Tensor& queries, const EmbeddingHead& head) { return head.mlp(queries); }

struct LinkerConfig {
  int width = 64;
  int heads = 2;
  int ffn_hidden = 128;
  bool residual = true;  // residual + layer norm around attention and FFN
};

// One transformer block: queries from tube j, keys/values from tube i.
class CrossTubeLinker {
 public:
  CrossTubeLinker() = default;
  CrossTubeLinker(const LinkerConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.heads < 1 || cfg.width % cfg.heads != 0) throw Error("CrossTubeLinker: width must divide into heads");
    const auto d = static_cast<std::size_t>(cfg.width);
    const auto dh = d / static_cast<std::size_t>(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
      query_.emplace_back(d, dh, rng);
      key_.emplace_back(d, dh, rng);
      value_.emplace_back(d, dh, rng);
      out_.emplace_back(dh, d, rng, h == 0);  // the summed head projections share one bias
    }
    norm1_ = LayerNorm(d);
    ffn_ = FeedForward(d, static_cast<std::size_t>(cfg.ffn_hidden), d, rng);
    norm2_ = LayerNorm(d);
  }

  const LinkerConfig& config() const { return cfg_; }

  // Multi-head attention output before the residual/FFN part.
  Tensor attention(const Tensor& target, const Tensor& source) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.width / cfg_.heads));
    Tensor total;
    for (std::size_t h = 0; h < query_.size(); ++h) {
      Tensor w = softmax_rows(mul_scalar(matmul_nt(query_[h](target), key_[h](source)), scale));
      Tensor head = out_[h](matmul(w, value_[h](source)));
      total = total.defined() ? add(total, head) : head;
    }
    return total;
  }

  Tensor feed_forward(const Tensor& attended, const Tensor& target) const {
    if (!cfg_.residual) return ffn_(attended);
    Tensor x = norm1_(add(target, attended));
    return norm2_(add(x, ffn_(x)));
  }

  // Q_j^f = FFN(MHSA(Query(Q_j), Key(Q_i), Value(Q_i)))
  Tensor operator()(const Tensor& target, const Tensor& source) const {
    if (target.rank() != 2 || source.rank() != 2 || target.dim(1) != source.dim(1) ||
        target.dim(1) != static_cast<std::size_t>(cfg_.width)) {
      throw ShapeError("cross_tube_link: expected N×D inputs of width " + std::to_string(cfg_.width));
    }
    return feed_forward(attention(target, source), target);
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    for (std::size_t h = 0; h < query_.size(); ++h) {
      const std::string p = prefix + ".head" + std::to_string(h);
      query_[h].register_into(set, p + ".query");
      key_[h].register_into(set, p + ".key");
      value_[h].register_into(set, p + ".value");
      out_[h].register_into(set, p + ".out");
    }
    norm1_.register_into(set, prefix + ".norm1");
    ffn_.register_into(set, prefix + ".ffn");
    norm2_.register_into(set, prefix + ".norm2");
  }

 private:
  LinkerConfig cfg_;
  std::vector<Linear> query_;
  std::vector<Linear> key_;
  std::vector<Linear> value_;
  std::vector<Linear> out_;
  LayerNorm norm1_;
  FeedForward ffn_;
  LayerNorm norm2_;
};

inline Tensor cross_tube_link(const CrossTubeLinker& linker, const Tensor& target, const Tensor& source) {
  return linker(target, source);
}

struct TrackLossTerms {
  Tensor track = Tensor::scalar(0.0);
  Tensor aux = Tensor::scalar(0.0);
  int anchors = 0;
  int aux_pairs = 0;
};

// Tracking losses between an earlier subclip (anchors) and a later one
// (targets). Identities are compared through gt_identity_*: one key per gt
// tube. Only queries flagged in matched_* take part.
inline TrackLossTerms tracking_losses(const Tensor& anchor_embeddings, const Tensor& target_embeddings,
                                      const std::vector<ContrastLabel>& anchor_labels,
                                      const std::vector<ContrastLabel>& target_labels,
                                      const std::vector<bool>& anchor_matched, const std::vector<bool>& target_matched,
                                      const std::vector<long>& anchor_identity,
                                      const std::vector<long>& target_identity) {
  TrackLossTerms out;
  std::vector<Tensor> track_terms;
  std::vector<Tensor> aux_terms;
  for (std::size_t a = 0; a < anchor_labels.size(); ++a) {
    if (!anchor_matched[a] || !anchor_labels[a].positive()) continue;
    const long id = anchor_identity[static_cast<std::size_t>(anchor_labels[a].gt_index)];
    std::vector<std::size_t> pos, neg;
    for (std::size_t b = 0; b < target_labels.size(); ++b) {
      if (!target_matched[b]) continue;
      const auto& lb = target_labels[b];
      if (lb.positive() && target_identity[static_cast<std::size_t>(lb.gt_index)] == id) {
        pos.push_back(b);
      } else if (lb.negative() || lb.positive()) {
        neg.push_back(b);
      }
    }
    if (pos.empty()) continue;
    Tensor x = rows(anchor_embeddings, {a});
    ContrastiveBatch batch{x, rows(target_embeddings, pos), neg.empty() ? Tensor() : rows(target_embeddings, neg)};
    track_terms.push_back(temporal_contrastive_loss(batch));
    for (std::size_t b : pos) aux_terms.push_back(aux_cosine_loss(x, rows(target_embeddings, {b}), 1.0));
    for (std::size_t b : neg) aux_terms.push_back(aux_cosine_loss(x, rows(target_embeddings, {b}), 0.0));
  }
  out.anchors = static_cast<int>(track_terms.size());
  out.aux_pairs = static_cast<int>(aux_terms.size());
  if (!track_terms.empty()) out.track = mul_scalar(sum(concat(track_terms)), 1.0 / static_cast<double>(track_terms.size()));
  if (!aux_terms.empty()) out.aux = mul_scalar(sum(concat(aux_terms)), 1.0 / static_cast<double>(aux_terms.size()));
  return out;
}

}  // namespace tubelink

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/crosstube.hpp"
#include "tubelink/decoder.hpp"
#include "tubelink/hungarian.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

struct LossWeights {
  double cls = 2.0;
  double ce = 5.0;
  double dice = 5.0;
  double track = 1.0;
  double aux = 0.5;
  double no_object = 0.1;  // class weight of the no-object slot

  void validate() const {
    for (double w : {cls, ce, dice, track, aux, no_object}) {
      if (!std::isfinite(w) || w < 0.0) throw Error("LossWeights: weights must be finite and >= 0");
    }
  }
};

// Strict-majority pooling of a full-resolution tube down to the feature grid.
inline TubeMask majority_pool(const TubeMask& tube, int patch) {
  if (patch < 1 || tube.height % patch != 0 || tube.width % patch != 0) {
    throw ShapeError("majority_pool: tube not divisible by patch");
  }
  TubeMask out(tube.frames, tube.height / patch, tube.width / patch, tube.window.start_index);
  const int area = patch * patch;
  for (int t = 0; t < tube.frames; ++t)
    for (int gy = 0; gy < out.height; ++gy)
      for (int gx = 0; gx < out.width; ++gx) {
        int count = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) count += tube.at(t, gy * patch + dy, gx * patch + dx);
        out.at(t, gy, gx) = 2 * count > area ? 1 : 0;
      }
  return out;
}

inline std::vector<TubeAnnotation> pool_annotations(const std::vector<TubeAnnotation>& gts, int patch) {
  std::vector<TubeAnnotation> out;
  out.reserve(gts.size());
  for (const auto& g : gts) out.push_back({majority_pool(g.mask, patch), g.class_id, g.track_id});
  return out;
}

namespace detail {

inline std::vector<double> as_targets(const TubeMask& m) { return {m.bits.begin(), m.bits.end()}; }

inline void check_tube_shape(const PredictionSet& pred, const TubeAnnotation& g) {
  if (g.mask.frames != pred.frames || g.mask.height != pred.height || g.mask.width != pred.width) {
    throw ShapeError("matching: ground-truth tube not at prediction resolution");
  }
}

}  // namespace detail

// cost[q, g] = -λ_cls p̂_q(c_g) + λ_ce BCE(logits_q, m_g) + λ_dice Dice(σ(logits_q), m_g)
inline CostMatrix matching_cost(const Tensor& class_logits, const Tensor& mask_logits,
                                const std::vector<TubeAnnotation>& gts, const LossWeights& w) {
  const std::size_t nq = class_logits.dim(0), k1 = class_logits.dim(1), s = mask_logits.dim(1);
  CostMatrix cost(nq, gts.size());
  std::vector<double> prob(k1), sig(s), bce_pos(s), bce_neg(s);
  for (std::size_t q = 0; q < nq; ++q) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k1; ++c) mx = std::max(mx, class_logits[q * k1 + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k1; ++c) z += (prob[c] = std::exp(class_logits[q * k1 + c] - mx));
    for (double& p : prob) p /= z;
    double sig_sum = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double x = mask_logits[q * s + i];
      sig[i] = detail::stable_sigmoid(x);
      sig_sum += sig[i];
      const double softplus = std::log1p(std::exp(-std::abs(x)));
      bce_pos[i] = std::max(x, 0.0) - x + softplus;  // target 1
      bce_neg[i] = std::max(x, 0.0) + softplus;      // target 0
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto& bits = gts[g].mask.bits;
      if (bits.size() != s) throw ShapeError("matching_cost: ground-truth tube not at prediction resolution");
      double bce = 0.0, inter = 0.0, gsum = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        if (bits[i]) {
          bce += bce_pos[i];
          inter += sig[i];
          gsum += 1.0;
        } else {
          bce += bce_neg[i];
        }
      }
      bce /= static_cast<double>(s);
      const double dice = 1.0 - (2.0 * inter + 1.0) / (sig_sum + gsum + 1.0);
      cost(q, g) = -w.cls * prob[static_cast<std::size_t>(gts[g].class_id)] + w.ce * bce + w.dice * dice;
    }
  }
  return cost;
}

inline CostMatrix matching_cost(const PredictionSet& pred, const std::vector<TubeAnnotation>& gts,
                                const LossWeights& w) {
  for (const auto& g : gts) detail::check_tube_shape(pred, g);
  return matching_cost(pred.class_logits, pred.mask_logits, gts, w);
}

// 1 - (2 Σ p·g + 1) / (Σ p + Σ g + 1) over the flattened tube.
inline Tensor tube_dice_loss(const Tensor& pred_prob, const TubeMask& gt) {
  if (pred_prob.size() != gt.bits.size()) throw ShapeError("tube_dice_loss: shape mismatch");
  const auto targets = detail::as_targets(gt);
  Tensor g(pred_prob.shape(), targets);
  const double gsum = static_cast<double>(gt.count());
  Tensor ratio = div(add_scalar(mul_scalar(sum(mul(pred_prob, g)), 2.0), 1.0), add_scalar(sum(pred_prob), gsum + 1.0));
  return add_scalar(mul_scalar(ratio, -1.0), 1.0);
}

// Mean binary cross-entropy of tube logits against a binary tube.
inline Tensor tube_bce_loss(const Tensor& pred_logits, const TubeMask& gt) {
  if (pred_logits.size() != gt.bits.size()) throw ShapeError("tube_bce_loss: shape mismatch");
  return mean(bce_with_logits(pred_logits, detail::as_targets(gt)));
}

// Weighted mean cross-entropy. targets[q] is a class id or K (= no object).
inline Tensor classification_loss(const Tensor& class_logits, const std::vector<int>& targets,
                                  double no_object_weight) {
  const std::size_t nq = class_logits.dim(0), k1 = class_logits.dim(1);
  if (targets.size() != nq) throw ShapeError("classification_loss: one target per query");
  std::vector<std::size_t> idx(nq);
  std::vector<double> weights(nq);
  double wsum = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    if (targets[q] < 0 || static_cast<std::size_t>(targets[q]) >= k1) throw Error("classification_loss: bad target");
    idx[q] = q * k1 + static_cast<std::size_t>(targets[q]);
    weights[q] = static_cast<std::size_t>(targets[q]) == k1 - 1 ? no_object_weight : 1.0;
    wsum += weights[q];
  }
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  Tensor picked = select(log_softmax_rows(class_logits), idx);
  return mul_scalar(sum(mul(picked, Tensor({nq}, weights))), -1.0 / wsum);
}

struct StageLoss {
  Tensor cls;
  Tensor ce;
  Tensor dice;
  Assignment assignment;
};

// Hungarian-matched tube losses for one stage; gts must be at feature resolution.
inline StageLoss stage_loss(const Tensor& class_logits, const Tensor& mask_logits,
                            const std::vector<TubeAnnotation>& gts, const LossWeights& w) {
  StageLoss out;
  out.assignment = hungarian(matching_cost(class_logits, mask_logits, gts, w));
  const std::size_t nq = class_logits.dim(0);
  const int no_object = static_cast<int>(class_logits.dim(1)) - 1;
  std::vector<int> targets(nq, no_object);
  std::vector<Tensor> ce_terms, dice_terms;
  for (auto [q, g] : out.assignment.pairs) {
    const auto& gt = gts[static_cast<std::size_t>(g)];
    targets[static_cast<std::size_t>(q)] = gt.class_id;
    Tensor logits = rows(mask_logits, {static_cast<std::size_t>(q)});
    ce_terms.push_back(tube_bce_loss(logits, gt.mask));
    dice_terms.push_back(tube_dice_loss(sigmoid(logits), gt.mask));
  }
  out.cls = classification_loss(class_logits, targets, w.no_object);
  const double inv = ce_terms.empty() ? 0.0 : 1.0 / static_cast<double>(ce_terms.size());
  out.ce = ce_terms.empty() ? Tensor::scalar(0.0) : mul_scalar(sum(concat(ce_terms)), inv);
  out.dice = dice_terms.empty() ? Tensor::scalar(0.0) : mul_scalar(sum(concat(dice_terms)), inv);
  return out;
}

struct SegmentationLoss {
  Tensor weighted = Tensor::scalar(0.0);  // Σ_stages λ_cls cls + λ_ce ce + λ_dice dice
  double cls = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  Assignment final_assignment;
};

// Deep supervision: the matching and tube losses are applied to every stage.
inline SegmentationLoss segmentation_loss(const PredictionSet& pred, const std::vector<TubeAnnotation>& gts,
                                          const LossWeights& w) {
  for (const auto& g : gts) detail::check_tube_shape(pred, g);
  SegmentationLoss out;
  std::vector<Tensor> terms;
  for (const auto& stage : pred.stages) {
    StageLoss l = stage_loss(stage.class_logits, stage.mask_logits, gts, w);
    out.cls += l.cls.item();
    out.ce += l.ce.item();
    out.dice += l.dice.item();
    terms.push_back(add(add(mul_scalar(l.cls, w.cls), mul_scalar(l.ce, w.ce)), mul_scalar(l.dice, w.dice)));
    out.final_assignment = std::move(l.assignment);
  }
  if (!terms.empty()) out.weighted = sum(concat(terms));
  return out;
}

struct LossBreakdown {
  Tensor total;
  double cls = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  double track = 0.0;
  double aux = 0.0;
};

// L = Σ_subclips Σ_stages (λ_cls L_cls + λ_ce L_ce + λ_dice L_dice) + λ_track L_track + λ_aux L_aux.
// VSS drops both tracking terms.
inline LossBreakdown total_loss(std::span<const SegmentationLoss> segmentation, const TrackLossTerms& tracking,
                                const LossWeights& w, TaskMode mode) {
  LossBreakdown out;
  std::vector<Tensor> terms;
  for (const auto& s : segmentation) {
    terms.push_back(s.weighted);
    out.cls += s.cls;
    out.ce += s.ce;
    out.dice += s.dice;
  }
  if (mode != TaskMode::kVSS) {
    terms.push_back(mul_scalar(tracking.track, w.track));
    terms.push_back(mul_scalar(tracking.aux, w.aux));
    out.track = tracking.track.item();
    out.aux = tracking.aux.item();
  }
  out.total = terms.empty() ? Tensor::scalar(0.0) : sum(concat(terms));
  return out;
}

}  // namespace tubelink

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/crosstube.hpp"
#include "tubelink/matchloss.hpp"
#include "tubelink/model.hpp"
#include "tubelink/rng.hpp"

namespace tubelink {

struct OptimizerConfig {
  std::string kind = "sgd";  // "sgd" (momentum) or "adam"
  double learning_rate = 0.02;
  double momentum = 0.9;
  double beta2 = 0.999;
  double grad_clip = 1.0;  // global-norm clip, 0 disables
  int iterations = 1200;
  int batch_size = 4;
  int warmup = 20;

  void validate() const {
    if (kind != "sgd" && kind != "adam") throw Error("optimizer: kind must be sgd or adam");
    if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
      throw Error("optimizer: bad step size or momentum");
    }
    if (iterations < 0 || batch_size < 1 || warmup < 0 || grad_clip < 0.0) throw Error("optimizer: bad schedule");
  }
};

struct TrainConfig {
  ModelConfig model;
  int subclip_size = 2;
  int pair_radius = 1;
  LossWeights weights;
  AssignConfig assign;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

// Ground-truth tubes for the frames of a subclip, with padded frames repeating
// the last real annotation, adapted to the task and pooled to the feature grid.
inline std::vector<TubeAnnotation> subclip_targets(std::span<const PanopticFrame> video_annotations,
                                                   const SubClip& subclip, TaskMode mode, const LabelSpace& labels,
                                                   int patch) {
  std::vector<PanopticFrame> frames;
  const int total = static_cast<int>(video_annotations.size());
  for (int k = 0; k < subclip.size(); ++k) {
    const int t = std::min(subclip.start_index + k, total - 1);
    frames.push_back(video_annotations[static_cast<std::size_t>(t)]);
    if (mode == TaskMode::kVSS) std::fill(frames.back().instance_ids.begin(), frames.back().instance_ids.end(), 0);
  }
  auto tubes = flatten_tube_annotations(frames, Window{subclip.start_index, subclip.size()});
  if (mode == TaskMode::kVIS) {
    std::erase_if(tubes, [&](const TubeAnnotation& t) { return !labels.is_thing(t.class_id); });
  }
  return pool_annotations(tubes, patch);
}

// Binarised tubes (logit >= 0) at feature resolution, one per query.
inline std::vector<TubeMask> predicted_tubes(const PredictionSet& pred) {
  const std::size_t s = pred.positions();
  std::vector<TubeMask> out;
  for (std::size_t q = 0; q < pred.num_queries(); ++q) {
    TubeMask m(pred.frames, pred.height, pred.width);
    for (std::size_t i = 0; i < s; ++i) m.bits[i] = pred.mask_logits[q * s + i] >= 0.0 ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

// Thing tubes are identified by track id, stuff tubes by class.
inline std::vector<long> tube_identities(const std::vector<TubeAnnotation>& gts) {
  std::vector<long> ids;
  for (const auto& g : gts) ids.push_back(g.is_thing() ? static_cast<long>(g.track_id) : -1L - g.class_id);
  return ids;
}

// Loss of one training pair: the earlier subclip supplies anchors, the later
// one is linked to it and supplies contrastive targets. `second` may be null
// for single-subclip videos, which pair the subclip with itself.
inline LossBreakdown pair_loss(const TubeLinkModel& model, const SubClip& first,
                               const std::vector<TubeAnnotation>& gts_first, const SubClip* second,
                               const std::vector<TubeAnnotation>* gts_second, const LossWeights& w,
                               const AssignConfig& assign) {
  const TaskMode mode = model.config().mode;
  PredictionSet pa = model.decoder().forward(first);
  std::vector<SegmentationLoss> seg;
  seg.push_back(segmentation_loss(pa, gts_first, w));
  PredictionSet pb;
  if (second != nullptr) {
    pb = model.decoder().forward(*second);
    seg.push_back(segmentation_loss(pb, *gts_second, w));
  }
  const PredictionSet& target_pred = second != nullptr ? pb : pa;
  const auto& target_gts = second != nullptr ? *gts_second : gts_first;
  const SegmentationLoss& target_seg = seg.back();

  TrackLossTerms tracking;
  if (mode != TaskMode::kVSS) {
    Tensor anchor_emb = embed(pa.queries_final, model.embedding());
    Tensor linked = cross_tube_link(model.linker(), target_pred.queries_final, pa.queries_final);
    Tensor target_emb = embed(linked, model.embedding());
    const auto matched = [](const Assignment& a, std::size_t n) {
      std::vector<bool> m(n, false);
      for (auto [q, g] : a.pairs) m[static_cast<std::size_t>(q)] = true;
      return m;
    };
    tracking = tracking_losses(anchor_emb, target_emb, assign_contrastive_targets(predicted_tubes(pa), gts_first, assign),
                               assign_contrastive_targets(predicted_tubes(target_pred), target_gts, assign),
                               matched(seg.front().final_assignment, pa.num_queries()),
                               matched(target_seg.final_assignment, target_pred.num_queries()),
                               tube_identities(gts_first), tube_identities(target_gts));
  }
  return total_loss(seg, tracking, w, mode);
}

class Optimizer {
 public:
  Optimizer(const ParameterSet& params, OptimizerConfig cfg) : params_(params), cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& p : params_.items()) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(cfg_.kind == "adam" ? p.tensor.size() : 0, 0.0);
    }
  }

  // Warmup, then cosine decay to zero over the configured iterations.
  double learning_rate(int iteration) const {
    const double base = cfg_.learning_rate;
    if (iteration < cfg_.warmup) return base * (iteration + 1) / static_cast<double>(cfg_.warmup + 1);
    const double span = std::max(1, cfg_.iterations - cfg_.warmup);
    const double progress = std::min(1.0, (iteration - cfg_.warmup) / span);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }

  // Applies accumulated gradients (scaled by grad_scale) and clears them.
  double step(int iteration, double grad_scale) {
    double norm_sq = 0.0;
    for (const auto& p : params_.items()) {
      for (double g : p.tensor.grad()) norm_sq += g * g * grad_scale * grad_scale;
    }
    const double norm = std::sqrt(norm_sq);
    double scale = grad_scale;
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) scale *= cfg_.grad_clip / norm;
    const double lr = learning_rate(iteration);
    ++steps_;
    for (std::size_t k = 0; k < params_.items().size(); ++k) {
      Tensor t = params_.items()[k].tensor;
      if (!t.has_grad()) continue;
      auto values = t.mutable_values();
      auto grads = t.grad();
      auto& m = m_[k];
      if (cfg_.kind == "sgd") {
        for (std::size_t i = 0; i < values.size(); ++i) {
          m[i] = cfg_.momentum * m[i] + grads[i] * scale;
          values[i] -= lr * m[i];
        }
      } else {
        auto& v = v_[k];
        const double b1 = cfg_.momentum, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, steps_), c2 = 1.0 - std::pow(b2, steps_);
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double g = grads[i] * scale;
          m[i] = b1 * m[i] + (1 - b1) * g;
          v[i] = b2 * v[i] + (1 - b2) * g * g;
          values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
        }
      }
      t.zero_grad();
    }
    return norm;
  }

 private:
  ParameterSet params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int steps_ = 0;
};

struct TrainingVideo {
  const VideoClip* clip = nullptr;
  const std::vector<PanopticFrame>* annotations = nullptr;
};

struct TrainStepRecord {
  int iteration = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  double cls = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  double track = 0.0;
  double aux = 0.0;
  double grad_norm = 0.0;
};

// Sequential, seeded training loop. Each batch element is one video: a pair
// of neighbouring subclips is sampled, both are forwarded and the pair loss is
// backpropagated. The callback, if set, sees every step record.
inline std::vector<TrainStepRecord> train(TubeLinkModel& model, std::span<const TrainingVideo> videos,
                                          const TrainConfig& cfg,
                                          const std::function<void(const TrainStepRecord&)>& on_step = {}) {
  if (videos.empty()) throw Error("train: no training videos");
  cfg.weights.validate();
  cfg.assign.validate();
  if (cfg.subclip_size < 1) throw Error("train: subclip size must be >= 1");
  Optimizer opt(model.parameters(), cfg.optimizer);
  Rng rng(cfg.seed ^ 0x5EEDULL);
  const int patch = model.config().decoder.patch;
  std::vector<TrainStepRecord> curve;
  model.parameters().zero_grad();
  for (int it = 0; it < cfg.optimizer.iterations; ++it) {
    TrainStepRecord rec;
    rec.iteration = it;
    rec.learning_rate = opt.learning_rate(it);
    const int batch = cfg.optimizer.batch_size;
    for (int b = 0; b < batch; ++b) {
      const auto& v = videos[rng.index(videos.size())];
      auto subclips = split_into_subclips(*v.clip, cfg.subclip_size);
      int i = 0, j = 0;
      if (subclips.size() >= 2) std::tie(i, j) = sample_subclip_pair(static_cast<int>(subclips.size()), rng, cfg.pair_radius);
      if (i > j) std::swap(i, j);
      const auto& sa = subclips[static_cast<std::size_t>(i)];
      const auto& sb = subclips[static_cast<std::size_t>(j)];
      auto ga = subclip_targets(*v.annotations, sa, model.config().mode, model.labels(), patch);
      std::vector<TubeAnnotation> gb;
      if (i != j) gb = subclip_targets(*v.annotations, sb, model.config().mode, model.labels(), patch);
      LossBreakdown l = pair_loss(model, sa, ga, i != j ? &sb : nullptr, i != j ? &gb : nullptr, cfg.weights, cfg.assign);
      l.total.backward();
      rec.total += l.total.item() / batch;
      rec.cls += l.cls / batch;
      rec.ce += l.ce / batch;
      rec.dice += l.dice / batch;
      rec.track += l.track / batch;
      rec.aux += l.aux / batch;
    }
    rec.grad_norm = opt.step(it, 1.0 / batch);
    curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  return curve;
}

}  // namespace tubelink

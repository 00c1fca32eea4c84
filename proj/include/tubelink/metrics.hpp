#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "tubelink/coretypes.hpp"

namespace tubelink {

using PanopticVideo = std::vector<PanopticFrame>;

inline const std::vector<int>& default_vpq_windows() {
  static const std::vector<int> k{1, 2, 4, 6};
  return k;
}
inline const std::vector<int>& default_mvc_windows() {
  static const std::vector<int> c{8, 16};
  return c;
}

namespace metric_detail {

inline void check_aligned(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt) {
  if (pred.size() != gt.size()) throw ShapeError("metrics: prediction and ground truth differ in frame count");
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (pred[t].height != gt[t].height || pred[t].width != gt[t].width || pred[t].size() != gt[t].size()) {
      throw ShapeError("metrics: frame size mismatch at frame " + std::to_string(t));
    }
  }
}

// Segment key: class in the high bits, instance id in the low 22.
inline std::int64_t segment_key(int class_id, int instance_id) {
  return (static_cast<std::int64_t>(class_id) << 22) | static_cast<std::int64_t>(instance_id);
}
inline int key_class(std::int64_t key) { return static_cast<int>(key >> 22); }

struct PqCounts {
  double iou_sum = 0.0;
  int tp = 0, fp = 0, fn = 0;
  double pq() const { return iou_sum / (tp + 0.5 * fp + 0.5 * fn); }
  bool present() const { return tp + fp + fn > 0; }
};

// Per-class PQ counts over frames [first, first + k). Ground-truth void pixels
// are ignored; predicted void pixels belong to no segment.
inline std::map<int, PqCounts> span_pq(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt,
                                       std::size_t first, std::size_t k) {
  std::map<std::int64_t, std::int64_t> pred_area, gt_area;
  std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> inter;
  for (std::size_t t = first; t < first + k; ++t) {
    const auto& p = pred[t];
    const auto& g = gt[t];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.class_ids[i] == kVoidClass) continue;
      const auto gk = segment_key(g.class_ids[i], g.instance_ids[i]);
      ++gt_area[gk];
      if (p.class_ids[i] == kVoidClass) continue;
      const auto pk = segment_key(p.class_ids[i], p.instance_ids[i]);
      ++pred_area[pk];
      if (key_class(pk) == key_class(gk)) ++inter[{pk, gk}];
    }
  }
  std::map<int, PqCounts> out;
  std::map<std::int64_t, bool> pred_matched, gt_matched;
  for (const auto& [pair, n] : inter) {
    const double uni = static_cast<double>(pred_area[pair.first] + gt_area[pair.second] - n);
    const double iou = static_cast<double>(n) / uni;
    if (iou <= 0.5) continue;
    auto& c = out[key_class(pair.second)];
    c.iou_sum += iou;
    ++c.tp;
    pred_matched[pair.first] = true;
    gt_matched[pair.second] = true;
  }
  for (const auto& [key, area] : pred_area) {
    if (!pred_matched.contains(key)) ++out[key_class(key)].fp;
  }
  for (const auto& [key, area] : gt_area) {
    if (!gt_matched.contains(key)) ++out[key_class(key)].fn;
  }
  return out;
}

struct ClassIoU {
  std::int64_t intersection = 0;
  std::int64_t uni = 0;
};

inline std::map<int, ClassIoU> class_iou_counts(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt) {
  std::map<int, ClassIoU> out;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      const int g = gt[t].class_ids[i];
      if (g == kVoidClass) continue;
      const int p = pred[t].class_ids[i];
      if (p == g) {
        ++out[g].intersection;
        ++out[g].uni;
      } else {
        ++out[g].uni;
        if (p != kVoidClass) ++out[p].uni;
      }
    }
  }
  return out;
}

}  // namespace metric_detail

// Video panoptic quality over all spans of k consecutive frames (stride 1 by
// default): per span, per-class PQ averaged over classes present, then the
// mean over spans.
inline double vpq(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt, int k, int stride = 1) {
  metric_detail::check_aligned(pred, gt);
  if (k < 1 || stride < 1) throw Error("vpq: window and stride must be >= 1");
  const auto T = gt.size();
  if (static_cast<std::size_t>(k) > T) throw Error("vpq: window longer than the video");
  double total = 0.0;
  int spans = 0;
  for (std::size_t s = 0; s + static_cast<std::size_t>(k) <= T; s += static_cast<std::size_t>(stride)) {
    const auto counts = metric_detail::span_pq(pred, gt, s, static_cast<std::size_t>(k));
    double sum = 0.0;
    int classes = 0;
    for (const auto& [cls, c] : counts) {
      if (!c.present()) continue;
      sum += c.pq();
      ++classes;
    }
    total += classes > 0 ? sum / classes : 1.0;  // nothing in pred or gt: vacuously perfect
    ++spans;
  }
  return total / spans;
}

inline double vpq_mean(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt,
                       const std::vector<int>& windows = default_vpq_windows()) {
  double sum = 0.0;
  int n = 0;
  for (int k : windows) {
    if (static_cast<std::size_t>(k) > gt.size()) continue;
    sum += vpq(pred, gt, k);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

// Class-mean IoU with intersection and union accumulated over the video,
// over classes occurring in prediction or ground truth.
inline double miou(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt) {
  metric_detail::check_aligned(pred, gt);
  const auto counts = metric_detail::class_iou_counts(pred, gt);
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, c] : counts) {
    if (c.uni == 0) continue;
    sum += static_cast<double>(c.intersection) / static_cast<double>(c.uni);
    ++n;
  }
  return n > 0 ? sum / n : 1.0;
}

// Association quality over whole-video tubes of thing instances (id != 0).
// Pred tracks are identified by instance id alone. A video without gt tracks
// scores 1.
inline double association_quality(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt) {
  metric_detail::check_aligned(pred, gt);
  std::map<int, std::int64_t> pred_area, gt_area;
  std::map<std::pair<int, int>, std::int64_t> inter;  // (gt, pred)
  for (std::size_t t = 0; t < gt.size(); ++t) {
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      if (gt[t].class_ids[i] == kVoidClass) continue;
      const int g = gt[t].instance_ids[i];
      const int p = pred[t].class_ids[i] == kVoidClass ? 0 : pred[t].instance_ids[i];
      if (g != 0) ++gt_area[g];
      if (p != 0) ++pred_area[p];
      if (g != 0 && p != 0) ++inter[{g, p}];
    }
  }
  if (gt_area.empty()) return 1.0;
  std::map<int, double> per_gt;
  for (const auto& [key, n] : inter) {
    const auto [g, p] = key;
    const double iou = static_cast<double>(n) / static_cast<double>(pred_area[p] + gt_area[g] - n);
    per_gt[g] += static_cast<double>(n) * iou;
  }
  double sum = 0.0;
  for (const auto& [g, area] : gt_area) sum += per_gt[g] / static_cast<double>(area);
  return sum / static_cast<double>(gt_area.size());
}

struct StqResult {
  double stq = 0.0;
  double aq = 0.0;
  double sq = 0.0;
};

inline StqResult stq(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt) {
  StqResult r;
  r.aq = association_quality(pred, gt);
  r.sq = miou(pred, gt);
  r.stq = std::sqrt(r.aq * r.sq);
  return r;
}

// Fraction of gt-stable pixels whose prediction is also stable, averaged over
// windows of c frames. Measures consistency, not correctness. Windows without
// gt-stable pixels are skipped.
inline double mvc(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt, int c) {
  metric_detail::check_aligned(pred, gt);
  if (c < 1) throw Error("mvc: window must be >= 1");
  if (static_cast<std::size_t>(c) > gt.size()) throw Error("mvc: window longer than the video");
  double sum = 0.0;
  int windows = 0;
  const std::size_t pixels = gt.front().size();
  for (std::size_t s = 0; s + static_cast<std::size_t>(c) <= gt.size(); ++s) {
    std::int64_t stable_gt = 0, stable_both = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
      bool g_const = true, p_const = true;
      for (std::size_t t = s + 1; t < s + static_cast<std::size_t>(c); ++t) {
        g_const = g_const && gt[t].class_ids[i] == gt[s].class_ids[i];
        p_const = p_const && pred[t].class_ids[i] == pred[s].class_ids[i];
      }
      if (!g_const) continue;
      ++stable_gt;
      if (p_const) ++stable_both;
    }
    if (stable_gt == 0) continue;
    sum += static_cast<double>(stable_both) / static_cast<double>(stable_gt);
    ++windows;
  }
  return windows > 0 ? sum / windows : 1.0;
}

struct ClassScores {
  double pq = 0.0;  // mean over k and over spans where the class occurs
  double iou = 0.0;
  int occurrences = 0;
};

struct EvalResult {
  std::map<int, double> vpq_per_k;
  double vpq_mean = 0.0;
  double stq = 0.0;
  double aq = 0.0;
  double sq = 0.0;
  double miou = 0.0;
  std::map<int, double> mvc_per_c;
  std::map<int, ClassScores> per_class;
  int videos = 0;
};

struct EvalOptions {
  std::vector<int> vpq_windows = default_vpq_windows();
  std::vector<int> mvc_windows = default_mvc_windows();
};

inline EvalResult evaluate_video(std::span<const PanopticFrame> pred, std::span<const PanopticFrame> gt,
                                 const EvalOptions& opt = {}) {
  metric_detail::check_aligned(pred, gt);
  EvalResult r;
  r.videos = 1;
  for (int k : opt.vpq_windows) {
    if (static_cast<std::size_t>(k) <= gt.size()) r.vpq_per_k[k] = vpq(pred, gt, k);
  }
  double sum = 0.0;
  for (const auto& [k, v] : r.vpq_per_k) sum += v;
  r.vpq_mean = r.vpq_per_k.empty() ? 0.0 : sum / static_cast<double>(r.vpq_per_k.size());
  const auto s = stq(pred, gt);
  r.stq = s.stq;
  r.aq = s.aq;
  r.sq = s.sq;
  r.miou = s.sq;
  for (int c : opt.mvc_windows) {
    if (static_cast<std::size_t>(c) <= gt.size()) r.mvc_per_c[c] = mvc(pred, gt, c);
  }

  std::map<int, std::pair<double, int>> pq_acc;
  for (const auto& [k, v] : r.vpq_per_k) {
    for (std::size_t st = 0; st + static_cast<std::size_t>(k) <= gt.size(); ++st) {
      for (const auto& [cls, c] : metric_detail::span_pq(pred, gt, st, static_cast<std::size_t>(k))) {
        pq_acc[cls].first += c.pq();
        ++pq_acc[cls].second;
      }
    }
  }
  for (const auto& [cls, acc] : pq_acc) r.per_class[cls].pq = acc.first / acc.second;
  for (const auto& [cls, c] : metric_detail::class_iou_counts(pred, gt)) {
    auto& e = r.per_class[cls];
    e.iou = c.uni > 0 ? static_cast<double>(c.intersection) / static_cast<double>(c.uni) : 0.0;
    e.occurrences = 1;
  }
  return r;
}

// Dataset aggregate: unweighted means over videos; stq is recomputed from the
// mean aq and sq so the geometric-mean identity holds exactly.
inline EvalResult aggregate(std::span<const EvalResult> per_video) {
  EvalResult out;
  if (per_video.empty()) return out;
  std::map<int, int> k_count, c_count;
  std::map<int, int> class_count;
  for (const auto& r : per_video) {
    for (const auto& [k, v] : r.vpq_per_k) {
      out.vpq_per_k[k] += v;
      ++k_count[k];
    }
    for (const auto& [c, v] : r.mvc_per_c) {
      out.mvc_per_c[c] += v;
      ++c_count[c];
    }
    out.vpq_mean += r.vpq_mean;
    out.aq += r.aq;
    out.sq += r.sq;
    out.miou += r.miou;
    for (const auto& [cls, s] : r.per_class) {
      out.per_class[cls].pq += s.pq;
      out.per_class[cls].iou += s.iou;
      ++class_count[cls];
    }
    out.videos += r.videos;
  }
  const double n = static_cast<double>(per_video.size());
  for (auto& [k, v] : out.vpq_per_k) v /= k_count[k];
  for (auto& [c, v] : out.mvc_per_c) v /= c_count[c];
  for (auto& [cls, s] : out.per_class) {
    s.occurrences = class_count[cls];
    s.pq /= s.occurrences;
    s.iou /= s.occurrences;
  }
  out.vpq_mean /= n;
  out.aq /= n;
  out.sq /= n;
  out.miou /= n;
  out.stq = std::sqrt(out.aq * out.sq);
  return out;
}

}  // namespace tubelink

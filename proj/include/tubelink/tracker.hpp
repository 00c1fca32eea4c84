#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/crosstube.hpp"
#include "tubelink/decoder.hpp"
#include "tubelink/model.hpp"
#include "tubelink/tensor.hpp"

namespace tubelink {

struct InferenceConfig {
  int window = 6;
  int stride = 0;  // 0 = window (no overlap)
  double score_thresh = 0.3;
  double overlap_thresh = 0.8;
  double match_thresh = 0.5;
  int max_age = 2;  // subclips a track may go unseen before eviction
  bool use_linked_embeddings = true;
  TaskMode mode = TaskMode::kVPS;

  int effective_stride() const { return stride == 0 ? window : stride; }

  void validate() const {
    if (window < 1) throw Error("InferenceConfig: window must be >= 1");
    if (stride < 0 || stride > window) throw Error("InferenceConfig: stride must be in [0, window]");
    if (max_age < 1) throw Error("InferenceConfig: max_age must be >= 1");
  }
};

// A query surviving panoptic post-processing.
struct KeptQuery {
  int query = 0;
  int class_id = 0;
  double score = 0.0;
  bool thing = false;
};

// Panoptic maps of the real (unpadded) frames of one subclip. Thing pixels
// carry instance id query+1 until linking replaces it with a track id.
struct SubclipPanoptic {
  std::vector<PanopticFrame> frames;
  std::vector<KeptQuery> kept;
};

namespace detail {

inline std::vector<double> softmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::vector<double> p(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[row * k + c]);
  double z = 0.0;
  for (std::size_t c = 0; c < k; ++c) z += (p[c] = std::exp(logits[row * k + c] - mx));
  for (double& v : p) v /= z;
  return p;
}

// Nearest-neighbour lookup of a full-resolution pixel in the feature grid.
inline std::size_t cell_index(const PredictionSet& pred, int t, int y, int x, int full_h, int full_w) {
  const int gy = y * pred.height / full_h;
  const int gx = x * pred.width / full_w;
  return (static_cast<std::size_t>(t) * pred.height + static_cast<std::size_t>(gy)) * pred.width +
         static_cast<std::size_t>(gx);
}

}  // namespace detail

// Per pixel the kept query maximising p̂_q(c_q)·σ(logit) wins. Thing segments
// keeping less than overlap_thresh of their σ >= 0.5 area are dropped; stuff
// segments of one class merge.
inline SubclipPanoptic panoptic_postprocess(const PredictionSet& pred, const LabelSpace& labels,
                                            const InferenceConfig& cfg, int full_h, int full_w, int real_frames) {
  const std::size_t nq = pred.num_queries();
  const std::size_t k1 = pred.class_logits.dim(1);
  const std::size_t s = pred.positions();
  struct Candidate {
    KeptQuery info;
    std::vector<double> sig;
  };
  std::vector<Candidate> cand;
  for (std::size_t q = 0; q < nq; ++q) {
    auto p = detail::softmax_row(pred.class_logits, q);
    const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (top == k1 - 1 || p[top] < cfg.score_thresh) continue;
    const int cls = static_cast<int>(top);
    if (cfg.mode == TaskMode::kVIS && !labels.is_thing(cls)) continue;
    Candidate c{{static_cast<int>(q), cls, p[top], labels.is_thing(cls)}, std::vector<double>(s)};
    for (std::size_t i = 0; i < s; ++i) c.sig[i] = detail::stable_sigmoid(pred.mask_logits[q * s + i]);
    cand.push_back(std::move(c));
  }

  const std::size_t pixels = static_cast<std::size_t>(full_h) * full_w;
  std::vector<int> winner(static_cast<std::size_t>(real_frames) * pixels, -1);
  std::vector<std::size_t> original(cand.size(), 0), kept_area(cand.size(), 0);
  for (int t = 0; t < real_frames; ++t)
    for (int y = 0; y < full_h; ++y)
      for (int x = 0; x < full_w; ++x) {
        const std::size_t cell = detail::cell_index(pred, t, y, x, full_h, full_w);
        int best = -1;
        double best_score = -1.0;
        for (std::size_t k = 0; k < cand.size(); ++k) {
          const double sig = cand[k].sig[cell];
          if (sig >= 0.5) ++original[k];
          const double score = cand[k].info.score * sig;
          if (score > best_score) {
            best_score = score;
            best = static_cast<int>(k);
          }
        }
        if (best >= 0 && cand[static_cast<std::size_t>(best)].sig[cell] >= 0.5) {
          winner[static_cast<std::size_t>(t) * pixels + static_cast<std::size_t>(y) * full_w + static_cast<std::size_t>(x)] = best;
          ++kept_area[static_cast<std::size_t>(best)];
        }
      }

  std::vector<bool> survive(cand.size(), false);
  SubclipPanoptic out;
  for (std::size_t k = 0; k < cand.size(); ++k) {
    if (kept_area[k] == 0 || original[k] == 0) continue;
    if (cand[k].info.thing &&
        static_cast<double>(kept_area[k]) / static_cast<double>(original[k]) < cfg.overlap_thresh) {
      continue;
    }
    survive[k] = true;
    out.kept.push_back(cand[k].info);
  }
  for (int t = 0; t < real_frames; ++t) {
    PanopticFrame f(full_h, full_w);
    for (std::size_t p = 0; p < pixels; ++p) {
      const int w = winner[static_cast<std::size_t>(t) * pixels + p];
      if (w < 0 || !survive[static_cast<std::size_t>(w)]) continue;
      const auto& info = cand[static_cast<std::size_t>(w)].info;
      f.class_ids[p] = info.class_id;
      f.instance_ids[p] = info.thing ? info.query + 1 : 0;
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

// score[k][m] = ½·[softmax_m(E_cur·E_prevᵀ)[k][m] + softmax_k(E_cur·E_prevᵀ)[k][m]]
inline std::vector<std::vector<double>> association_scores(const std::vector<std::vector<double>>& prev,
                                                           const std::vector<std::vector<double>>& cur) {
  const std::size_t m = prev.size(), k = cur.size();
  std::vector<std::vector<double>> logits(k, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (cur[i].size() != prev[j].size()) throw ShapeError("association_scores: embedding width mismatch");
      double d = 0.0;
      for (std::size_t e = 0; e < cur[i].size(); ++e) d += cur[i][e] * prev[j][e];
      logits[i][j] = d;
    }
  std::vector<std::vector<double>> out(k, std::vector<double>(m, 0.0));
  if (m == 0 || k == 0) return out;
  for (std::size_t i = 0; i < k; ++i) {
    const double mx = *std::max_element(logits[i].begin(), logits[i].end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(logits[i][j] - mx);
    for (std::size_t j = 0; j < m; ++j) out[i][j] = 0.5 * std::exp(logits[i][j] - mx) / z;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, logits[i][j]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(logits[i][j] - mx);
    for (std::size_t i = 0; i < k; ++i) out[i][j] += 0.5 * std::exp(logits[i][j] - mx) / z;
  }
  return out;
}

struct Track {
  std::vector<double> embedding;
  int class_id = 0;
  int age = 0;  // subclips since last seen
  int last_subclip = 0;
};

class TrackStore {
 public:
  const std::map<int, Track>& tracks() const { return tracks_; }
  std::map<int, Track>& tracks() { return tracks_; }
  int next_id() const { return next_id_; }
  int allocate() { return next_id_++; }

 private:
  std::map<int, Track> tracks_;
  int next_id_ = 1;
};

// One kept thing tube of the current subclip.
struct CurrentTube {
  int query = 0;
  int class_id = 0;
  std::vector<double> match_embedding;  // compared against stored embeddings
  std::vector<double> store_embedding;  // kept for later subclips
};

// Greedy descending-score association. A pair needs score >= match_thresh and
// equal classes. Returns one track id per current tube.
inline std::vector<int> link_tubes(TrackStore& store, const std::vector<CurrentTube>& current,
                                   const InferenceConfig& cfg, int subclip_index) {
  std::vector<int> track_ids;
  std::vector<std::vector<double>> prev;
  for (const auto& [id, tr] : store.tracks()) {
    track_ids.push_back(id);
    prev.push_back(tr.embedding);
  }
  std::vector<std::vector<double>> cur;
  for (const auto& c : current) cur.push_back(c.match_embedding);
  const auto scores = association_scores(prev, cur);

  std::vector<std::tuple<double, std::size_t, std::size_t>> cands;
  for (std::size_t k = 0; k < current.size(); ++k)
    for (std::size_t m = 0; m < prev.size(); ++m) {
      if (scores[k][m] < cfg.match_thresh) continue;
      if (store.tracks().at(track_ids[m]).class_id != current[k].class_id) continue;
      cands.emplace_back(scores[k][m], k, m);
    }
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<int> assigned(current.size(), 0);
  std::vector<bool> used(prev.size(), false);
  for (const auto& [score, k, m] : cands) {
    if (assigned[k] != 0 || used[m]) continue;
    assigned[k] = track_ids[m];
    used[m] = true;
  }
  for (std::size_t m = 0; m < prev.size(); ++m) {
    if (used[m]) continue;
    auto it = store.tracks().find(track_ids[m]);
    if (++it->second.age >= cfg.max_age) store.tracks().erase(it);
  }
  for (std::size_t k = 0; k < current.size(); ++k) {
    if (assigned[k] == 0) assigned[k] = store.allocate();
    store.tracks()[assigned[k]] = Track{current[k].store_embedding, current[k].class_id, 0, subclip_index};
  }
  return assigned;
}

struct TrackSummary {
  int class_id = 0;
  int first_frame = 0;
  int last_frame = 0;
  int frame_count = 0;
};

struct InferenceResult {
  std::vector<PanopticFrame> frames;  // one per input frame
  std::map<int, TrackSummary> tracks;
  int subclips = 0;
};

namespace detail {

inline std::vector<double> row_values(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.values().begin() + static_cast<std::ptrdiff_t>(r * w), t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

inline void summarise_tracks(InferenceResult& result) {
  for (std::size_t t = 0; t < result.frames.size(); ++t) {
    std::map<int, int> seen;
    const auto& f = result.frames[t];
    for (std::size_t p = 0; p < f.size(); ++p) {
      if (f.instance_ids[p] != 0) seen.emplace(f.instance_ids[p], f.class_ids[p]);
    }
    for (auto [id, cls] : seen) {
      auto [it, inserted] = result.tracks.try_emplace(id, TrackSummary{cls, static_cast<int>(t), static_cast<int>(t), 0});
      it->second.last_frame = static_cast<int>(t);
      ++it->second.frame_count;
    }
  }
}

}  // namespace detail

// Near-online inference: windows of cfg.window frames are segmented
// independently (query index = identity inside a window) and kept thing
// tubes are linked across windows by embedding association. Padded frames are
// dropped; with overlapping windows the earlier window owns shared frames.
inline InferenceResult run_inference(const VideoClip& video, const TubeLinkModel& model, const InferenceConfig& cfg) {
  cfg.validate();
  NoGradGuard no_grad;
  const auto subclips = split_into_windows(video, cfg.window, cfg.effective_stride());
  InferenceResult result;
  result.frames.resize(static_cast<std::size_t>(video.frame_count()));
  std::vector<bool> written(static_cast<std::size_t>(video.frame_count()), false);
  TrackStore store;
  Tensor previous_queries;
  for (std::size_t si = 0; si < subclips.size(); ++si) {
    const SubClip& sub = subclips[si];
    PredictionSet pred = model.decoder().forward(sub);
    SubclipPanoptic pan = panoptic_postprocess(pred, model.labels(), cfg, video.height(), video.width(), sub.real_count());

    std::vector<CurrentTube> current;
    std::vector<std::size_t> thing_rows;
    for (const auto& k : pan.kept) {
      if (k.thing) thing_rows.push_back(static_cast<std::size_t>(k.query));
    }
    if (!thing_rows.empty()) {
      Tensor raw = embed(pred.queries_final, model.embedding());
      Tensor linked = raw;
      if (cfg.use_linked_embeddings && previous_queries.defined()) {
        linked = embed(cross_tube_link(model.linker(), pred.queries_final, previous_queries), model.embedding());
      }
      for (const auto& k : pan.kept) {
        if (!k.thing) continue;
        const auto q = static_cast<std::size_t>(k.query);
        current.push_back({k.query, k.class_id, detail::row_values(linked, q), detail::row_values(raw, q)});
      }
    }
    const auto ids = link_tubes(store, current, cfg, static_cast<int>(si));
    std::map<int, int> local_to_track;
    for (std::size_t k = 0; k < current.size(); ++k) local_to_track[current[k].query + 1] = ids[k];

    for (int t = 0; t < sub.real_count(); ++t) {
      const auto g = static_cast<std::size_t>(sub.start_index + t);
      if (written[g]) continue;
      PanopticFrame f = std::move(pan.frames[static_cast<std::size_t>(t)]);
      for (int& id : f.instance_ids) {
        if (id != 0) id = local_to_track.at(id);
      }
      result.frames[g] = std::move(f);
      written[g] = true;
    }
    previous_queries = pred.queries_final;
    ++result.subclips;
  }
  detail::summarise_tracks(result);
  return result;
}

// Semantic-only path: class = argmax_c Σ_q p̂_q(c)·σ(logit_q), no instances.
inline std::vector<PanopticFrame> semantic_fusion(const PredictionSet& pred, int full_h, int full_w, int real_frames) {
  const std::size_t nq = pred.num_queries();
  const std::size_t k = pred.class_logits.dim(1) - 1;
  const std::size_t s = pred.positions();
  std::vector<std::vector<double>> probs;
  for (std::size_t q = 0; q < nq; ++q) probs.push_back(detail::softmax_row(pred.class_logits, q));
  std::vector<double> sig(nq * s);
  for (std::size_t i = 0; i < nq * s; ++i) sig[i] = detail::stable_sigmoid(pred.mask_logits[i]);
  std::vector<PanopticFrame> out;
  std::vector<double> acc(k);
  for (int t = 0; t < real_frames; ++t) {
    PanopticFrame f(full_h, full_w);
    for (int y = 0; y < full_h; ++y)
      for (int x = 0; x < full_w; ++x) {
        const std::size_t cell = detail::cell_index(pred, t, y, x, full_h, full_w);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t q = 0; q < nq; ++q)
          for (std::size_t c = 0; c < k; ++c) acc[c] += probs[q][c] * sig[q * s + cell];
        f.class_ids[static_cast<std::size_t>(y) * full_w + static_cast<std::size_t>(x)] =
            static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin());
      }
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<PanopticFrame> run_vss_inference(const VideoClip& video, const TubeLinkModel& model,
                                                    const InferenceConfig& cfg) {
  cfg.validate();
  NoGradGuard no_grad;
  std::vector<PanopticFrame> frames(static_cast<std::size_t>(video.frame_count()));
  std::vector<bool> written(frames.size(), false);
  for (const auto& sub : split_into_windows(video, cfg.window, cfg.effective_stride())) {
    auto fused = semantic_fusion(model.decoder().forward(sub), video.height(), video.width(), sub.real_count());
    for (int t = 0; t < sub.real_count(); ++t) {
      const auto g = static_cast<std::size_t>(sub.start_index + t);
      if (written[g]) continue;
      frames[g] = std::move(fused[static_cast<std::size_t>(t)]);
      written[g] = true;
    }
  }
  return frames;
}

}  // namespace tubelink

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tubelink/error.hpp"

namespace tubelink {

// Stuff segments carry this track id; thing track ids start at 1.
inline constexpr int kStuffTrackId = 0;
// Class id of pixels no segment claims (predictions only).
inline constexpr int kVoidClass = 999;

enum class TaskMode { kVPS, kVIS, kVSS };

inline const char* to_string(TaskMode m) {
  switch (m) {
    case TaskMode::kVPS: return "VPS";
    case TaskMode::kVIS: return "VIS";
    case TaskMode::kVSS: return "VSS";
  }
  return "?";
}

inline TaskMode parse_task_mode(const std::string& s) {
  if (s == "VPS" || s == "vps") return TaskMode::kVPS;
  if (s == "VIS" || s == "vis") return TaskMode::kVIS;
  if (s == "VSS" || s == "vss") return TaskMode::kVSS;
  throw Error("unknown mode '" + s + "' (expected VPS, VIS or VSS)");
}

// Dense T×H×W×C block of intensities in [0, 1].
class VideoClip {
 public:
  VideoClip() = default;

  VideoClip(int frames, int height, int width, int channels, std::vector<double> data)
      : frames_(frames), height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (frames_ < 1 || height_ < 1 || width_ < 1 || channels_ < 1) {
      throw Error("VideoClip: empty clip (every dimension must be >= 1)");
    }
    if (data_.size() != static_cast<std::size_t>(frames_) * height_ * width_ * channels_) {
      throw ShapeError("VideoClip: data length does not match T*H*W*C");
    }
    for (double v : data_) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error("VideoClip: intensity outside [0,1]");
    }
  }

  int frame_count() const { return frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t frame_size() const { return static_cast<std::size_t>(height_) * width_ * channels_; }

  double at(int t, int y, int x, int c) const {
    return data_[((static_cast<std::size_t>(t) * height_ + y) * width_ + x) * channels_ + c];
  }
  std::span<const double> frame(int t) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size());
  }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const VideoClip&) const = default;

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  int channels_ = 3;
  std::vector<double> data_;
};

// A window of n frames cut from a parent clip; trailing frames may repeat the
// last real frame.
struct SubClip {
  VideoClip frames;
  int start_index = 0;
  int padded_count = 0;

  int size() const { return frames.frame_count(); }
  int real_count() const { return size() - padded_count; }
};

// Windows of size n starting every `stride` frames until the clip is covered.
// The final window repeats the last frame to reach size n.
inline std::vector<SubClip> split_into_windows(const VideoClip& clip, int n, int stride) {
  if (n < 1) throw Error("split_into_subclips: window size must be >= 1");
  if (stride < 1 || stride > n) throw Error("split_into_subclips: stride must be in [1, n]");
  const int total = clip.frame_count();
  if (total < 1) throw Error("split_into_subclips: empty clip");
  std::vector<SubClip> out;
  for (int start = 0;; start += stride) {
    std::vector<double> data;
    data.reserve(clip.frame_size() * n);
    int padded = 0;
    for (int k = 0; k < n; ++k) {
      int t = start + k;
      if (t >= total) {
        t = total - 1;
        ++padded;
      }
      auto f = clip.frame(t);
      data.insert(data.end(), f.begin(), f.end());
    }
    out.push_back(SubClip{VideoClip(n, clip.height(), clip.width(), clip.channels(), std::move(data)), start, padded});
    if (start + n >= total) break;
  }
  return out;
}

inline std::vector<SubClip> split_into_subclips(const VideoClip& clip, int n) {
  return split_into_windows(clip, n, n);
}

// Per-frame panoptic labelling: class grid plus instance grid (0 = stuff/none).
struct PanopticFrame {
  int height = 0;
  int width = 0;
  std::vector<int> class_ids;
  std::vector<int> instance_ids;

  PanopticFrame() = default;
  PanopticFrame(int h, int w, int fill_class = kVoidClass)
      : height(h), width(w), class_ids(static_cast<std::size_t>(h) * w, fill_class),
        instance_ids(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t size() const { return class_ids.size(); }
  bool operator==(const PanopticFrame&) const = default;
};

struct Window {
  int start_index = 0;
  int length = 0;
};

// Binary spatial-temporal mask over a window of frames.
struct TubeMask {
  int frames = 0;
  int height = 0;
  int width = 0;
  Window window;
  std::vector<std::uint8_t> bits;

  TubeMask() = default;
  TubeMask(int n, int h, int w, int start = 0)
      : frames(n), height(h), width(w), window{start, n}, bits(static_cast<std::size_t>(n) * h * w, 0) {}

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }
  std::uint8_t& at(int t, int y, int x) { return bits[(static_cast<std::size_t>(t) * height + y) * width + x]; }
  std::uint8_t at(int t, int y, int x) const { return bits[(static_cast<std::size_t>(t) * height + y) * width + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  std::size_t slice_count(int t) const {
    auto first = bits.begin() + static_cast<std::ptrdiff_t>(t * slice_size());
    return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(slice_size()), 1));
  }
  bool same_shape(const TubeMask& o) const { return frames == o.frames && height == o.height && width == o.width; }
  bool operator==(const TubeMask&) const = default;
};

struct TubeAnnotation {
  TubeMask mask;
  int class_id = 0;
  int track_id = kStuffTrackId;

  bool is_thing() const { return track_id != kStuffTrackId; }
};

class LabelSpace {
 public:
  LabelSpace() = default;
  LabelSpace(std::vector<int> things, std::vector<int> stuff, std::vector<std::string> names = {})
      : things_(std::move(things)), stuff_(std::move(stuff)), names_(std::move(names)) {
    std::sort(things_.begin(), things_.end());
    std::sort(stuff_.begin(), stuff_.end());
    std::vector<int> all = things_;
    all.insert(all.end(), stuff_.begin(), stuff_.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i] != static_cast<int>(i)) {
        throw Error("LabelSpace: thing and stuff classes must be disjoint and dense from 0");
      }
    }
    if (!names_.empty() && names_.size() != all.size()) throw Error("LabelSpace: one name per class");
  }

  int num_classes() const { return static_cast<int>(things_.size() + stuff_.size()); }
  const std::vector<int>& thing_classes() const { return things_; }
  const std::vector<int>& stuff_classes() const { return stuff_; }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(int c) const { return c >= 0 && c < num_classes(); }
  bool is_thing(int c) const { return std::binary_search(things_.begin(), things_.end(), c); }
  bool is_stuff(int c) const { return std::binary_search(stuff_.begin(), stuff_.end(), c); }
  std::string name(int c) const {
    return (c >= 0 && c < static_cast<int>(names_.size())) ? names_[static_cast<std::size_t>(c)] : std::to_string(c);
  }

  bool operator==(const LabelSpace&) const = default;

 private:
  std::vector<int> things_;
  std::vector<int> stuff_;
  std::vector<std::string> names_;
};

inline TubeMask stack_frame_masks(std::span<const std::vector<std::uint8_t>> per_frame, int height, int width,
                                  int start_index = 0) {
  if (per_frame.empty()) throw ShapeError("stack_frame_masks: no frames");
  TubeMask tube(static_cast<int>(per_frame.size()), height, width, start_index);
  for (std::size_t t = 0; t < per_frame.size(); ++t) {
    if (per_frame[t].size() != tube.slice_size()) throw ShapeError("stack_frame_masks: frame mask shape mismatch");
    for (std::size_t i = 0; i < tube.slice_size(); ++i) {
      tube.bits[t * tube.slice_size() + i] = per_frame[t][i] ? 1 : 0;
    }
  }
  return tube;
}

// |a ∧ b| / |a ∨ b|, with 0 for two empty masks.
inline double tube_iou(const TubeMask& a, const TubeMask& b) {
  if (!a.same_shape(b)) throw ShapeError("tube_iou: shape mismatch");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += static_cast<std::size_t>(a.bits[i] & b.bits[i]);
    uni += static_cast<std::size_t>(a.bits[i] | b.bits[i]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Builds one tube per identity visible anywhere in the window. Things are keyed
// by track id, stuff by class. Output order: stuff by class, then things by id.
inline std::vector<TubeAnnotation> flatten_tube_annotations(std::span<const PanopticFrame> frames, Window window) {
  if (frames.empty() || static_cast<int>(frames.size()) != window.length) {
    throw ShapeError("flatten_tube_annotations: frame count must equal window length");
  }
  const int h = frames.front().height;
  const int w = frames.front().width;
  std::map<std::pair<int, int>, std::size_t> index;  // (track or -1, class) -> slot
  std::map<int, int> track_class;
  std::vector<TubeAnnotation> tubes;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    if (f.height != h || f.width != w) throw ShapeError("flatten_tube_annotations: frame shape mismatch");
    for (std::size_t p = 0; p < f.size(); ++p) {
      const int c = f.class_ids[p];
      if (c == kVoidClass) continue;
      const int id = f.instance_ids[p];
      if (id != kStuffTrackId) {
        auto [it, inserted] = track_class.emplace(id, c);
        if (!inserted && it->second != c) {
          throw Error("flatten_tube_annotations: track " + std::to_string(id) + " has conflicting class ids");
        }
      }
      const std::pair<int, int> key = id == kStuffTrackId ? std::pair{-1, c} : std::pair{id, -1};
      auto found = index.find(key);
      if (found == index.end()) {
        found = index.emplace(key, tubes.size()).first;
        tubes.push_back(TubeAnnotation{TubeMask(window.length, h, w, window.start_index), c, id});
      }
      tubes[found->second].mask.bits[t * tubes[found->second].mask.slice_size() + p] = 1;
    }
  }
  std::vector<TubeAnnotation> ordered;
  ordered.reserve(tubes.size());
  for (const auto& [key, slot] : index) ordered.push_back(std::move(tubes[slot]));
  return ordered;
}

}  // namespace tubelink

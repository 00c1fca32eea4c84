#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tubelink/coretypes.hpp"
#include "tubelink/rng.hpp"

namespace tubelink {

enum class ThingShape { kRectangle, kDisk };

// Stuff classes come first (sky, ground), then one thing class per shape.
inline LabelSpace synthetic_label_space() { return LabelSpace({2, 3}, {0, 1}, {"sky", "ground", "box", "ball"}); }

inline constexpr int kSkyClass = 0;
inline constexpr int kGroundClass = 1;
inline constexpr int kBoxClass = 2;
inline constexpr int kBallClass = 3;

struct SceneConfig {
  int frames = 8;
  int height = 32;
  int width = 32;
  int num_things = 2;
  std::vector<ThingShape> shapes{ThingShape::kRectangle, ThingShape::kDisk};
  double min_speed = 0.5;  // px / frame
  double max_speed = 1.5;
  int min_size = 12;
  int max_size = 16;
  int num_stuff_bands = 2;
  double occlusion_rate = 0.0;  // fraction of thing pairs placed on crossing paths
  double noise = 0.03;          // per-pixel Gaussian σ
  std::uint64_t seed = 0;

  void validate() const {
    if (frames < 1 || height < 1 || width < 1) throw Error("SceneConfig: degenerate dimensions");
    if (num_things < 0 || num_things > 6) throw Error("SceneConfig: num_things must be in [0, 6]");
    if (num_stuff_bands < 1) throw Error("SceneConfig: need at least one stuff band");
    if (min_size < 1 || max_size < min_size || max_size > std::min(height, width)) {
      throw Error("SceneConfig: thing sizes must fit in the frame");
    }
    if (min_speed < 0.0 || max_speed < min_speed) throw Error("SceneConfig: bad speed range");
    if (shapes.empty() && num_things > 0) throw Error("SceneConfig: no thing shapes");
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0 || noise < 0.0) throw Error("SceneConfig: bad rates");
  }
};

struct ThingState {
  ThingShape shape = ThingShape::kRectangle;
  int class_id = kBoxClass;
  int track_id = 1;
  int palette_index = 0;
  double x = 0, y = 0;  // top-left corner
  double vx = 0, vy = 0;
  double w = 0, h = 0;
  std::array<double, 3> color{};
};

struct GeneratedVideo {
  VideoClip clip;
  std::vector<PanopticFrame> annotations;
  std::vector<ThingState> things;  // initial states
  int crossing_frames = 0;         // frames where some thing is partly hidden by another
};

namespace synth {

// Corners of a cube around mid-grey: every colour is an extreme point of the
// palette, so each is linearly separable from the rest.
inline std::array<double, 3> corner(int bits) {
  return {bits & 4 ? 0.85 : 0.15, bits & 2 ? 0.85 : 0.15, bits & 1 ? 0.85 : 0.15};
}
inline std::array<double, 3> stuff_color(int stuff_class) { return stuff_class == kSkyClass ? corner(1) : corner(2); }
// Three hues per thing class.
inline constexpr std::array<int, 3> kBoxPalette{4, 6, 7};   // red, yellow, white
inline constexpr std::array<int, 3> kBallPalette{3, 5, 0};  // cyan, magenta, black

inline bool covers(const ThingState& s, double px, double py) {
  if (s.shape == ThingShape::kRectangle) return px >= s.x && px < s.x + s.w && py >= s.y && py < s.y + s.h;
  const double r = s.w / 2.0;
  const double cx = s.x + r, cy = s.y + r;
  return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
}

inline void advance(ThingState& s, int width, int height) {
  s.x += s.vx;
  s.y += s.vy;
  const double max_x = width - s.w, max_y = height - s.h;
  for (int guard = 0; guard < 4 && (s.x < 0 || s.x > max_x); ++guard) {
    s.x = s.x < 0 ? -s.x : 2 * max_x - s.x;
    s.vx = -s.vx;
  }
  for (int guard = 0; guard < 4 && (s.y < 0 || s.y > max_y); ++guard) {
    s.y = s.y < 0 ? -s.y : 2 * max_y - s.y;
    s.vy = -s.vy;
  }
  s.x = std::clamp(s.x, 0.0, std::max(0.0, max_x));
  s.y = std::clamp(s.y, 0.0, std::max(0.0, max_y));
}

}  // namespace synth

// Constant-velocity things reflecting off the borders over horizontal stuff
// bands. Later things occlude earlier ones; annotations are the visible masks.
inline GeneratedVideo generate_video(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int T = cfg.frames, H = cfg.height, W = cfg.width;

  // Stuff: band k spans [edges[k], edges[k+1]) and alternates sky/ground.
  std::vector<int> edges{0};
  for (int k = 1; k < cfg.num_stuff_bands; ++k) {
    const int lo = k * H / cfg.num_stuff_bands - H / (4 * cfg.num_stuff_bands);
    const int hi = k * H / cfg.num_stuff_bands + H / (4 * cfg.num_stuff_bands);
    edges.push_back(std::clamp(rng.integer(lo, hi), edges.back() + 1, H - 1));
  }
  edges.push_back(H);
  std::vector<int> row_class(static_cast<std::size_t>(H));
  for (int k = 0; k + 1 < static_cast<int>(edges.size()); ++k)
    for (int y = edges[static_cast<std::size_t>(k)]; y < edges[static_cast<std::size_t>(k) + 1]; ++y)
      row_class[static_cast<std::size_t>(y)] = k % 2 == 0 ? kSkyClass : kGroundClass;

  // Things: distinct hues per video, so appearance identifies each entity.
  std::vector<int> palette;
  for (int p : synth::kBoxPalette) palette.push_back(p);
  for (int p : synth::kBallPalette) palette.push_back(p);
  for (std::size_t i = palette.size(); i > 1; --i) std::swap(palette[i - 1], palette[rng.index(i)]);

  std::vector<ThingState> things;
  for (int i = 0; i < cfg.num_things; ++i) {
    ThingState s;
    s.palette_index = palette[static_cast<std::size_t>(i)];
    const bool is_box = std::find(synth::kBoxPalette.begin(), synth::kBoxPalette.end(), s.palette_index) !=
                        synth::kBoxPalette.end();
    s.class_id = is_box ? kBoxClass : kBallClass;
    const ThingShape wanted = is_box ? ThingShape::kRectangle : ThingShape::kDisk;
    s.shape = std::find(cfg.shapes.begin(), cfg.shapes.end(), wanted) != cfg.shapes.end() ? wanted : cfg.shapes.front();
    s.track_id = i + 1;
    s.w = rng.integer(cfg.min_size, cfg.max_size);
    s.h = s.shape == ThingShape::kDisk ? s.w : rng.integer(cfg.min_size, cfg.max_size);
    const auto base = synth::corner(s.palette_index);
    for (int c = 0; c < 3; ++c) s.color[static_cast<std::size_t>(c)] = std::clamp(base[static_cast<std::size_t>(c)] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    s.x = rng.uniform(0.0, W - s.w);
    s.y = rng.uniform(0.0, H - s.h);
    things.push_back(s);
  }

  // Crossing pairs (2k, 2k+1): both centres meet at time tm without touching a
  // border on the way.
  const int pairs = cfg.num_things / 2;
  for (int k = 0; k < pairs; ++k) {
    if (rng.uniform() >= cfg.occlusion_rate) continue;
    auto& a = things[static_cast<std::size_t>(2 * k)];
    auto& b = things[static_cast<std::size_t>(2 * k + 1)];
    const double tm = rng.uniform(T / 3.0, std::max(T / 3.0, 2.0 * T / 3.0));
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double mx = rng.uniform(0.3 * W, 0.7 * W);
      const double my = rng.uniform(0.3 * H, 0.7 * H);
      auto place = [&](ThingState& s, double angle) {
        const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
        s.vx = speed * std::cos(angle);
        s.vy = speed * std::sin(angle);
        s.x = mx - s.w / 2 - s.vx * tm;
        s.y = my - s.h / 2 - s.vy * tm;
      };
      const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      place(a, angle);
      place(b, angle + rng.uniform(0.6, 1.4) * 3.14159265358979323846);
      auto inside = [&](const ThingState& s) {
        for (double t : {0.0, tm}) {
          const double x = s.x + s.vx * t, y = s.y + s.vy * t;
          if (x < 0 || y < 0 || x > W - s.w || y > H - s.h) return false;
        }
        return true;
      };
      if (inside(a) && inside(b)) break;
      if (attempt == 63) {  // give up on a straight crossing: park both at the meeting point
        a.vx = a.vy = b.vx = b.vy = 0.0;
        a.x = std::clamp(mx - a.w / 2, 0.0, W - a.w);
        a.y = std::clamp(my - a.h / 2, 0.0, H - a.h);
        b.x = std::clamp(mx - b.w / 2 + 2, 0.0, W - b.w);
        b.y = std::clamp(my - b.h / 2, 0.0, H - b.h);
      }
    }
  }

  GeneratedVideo out;
  out.things = things;
  std::vector<double> pixels(static_cast<std::size_t>(T) * H * W * 3);
  std::vector<ThingState> state = things;
  for (int t = 0; t < T; ++t) {
    PanopticFrame ann(H, W);
    bool occluded = false;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        int cls = row_class[static_cast<std::size_t>(y)];
        int id = kStuffTrackId;
        std::array<double, 3> color = synth::stuff_color(cls);
        int hits = 0;
        for (const auto& s : state) {
          if (!synth::covers(s, x + 0.5, y + 0.5)) continue;
          ++hits;
          cls = s.class_id;
          id = s.track_id;
          color = s.color;
        }
        occluded = occluded || hits > 1;
        ann.class_ids[p] = cls;
        ann.instance_ids[p] = id;
        for (int c = 0; c < 3; ++c) {
          const double v = color[static_cast<std::size_t>(c)] + (cfg.noise > 0 ? rng.normal(0.0, cfg.noise) : 0.0);
          pixels[(static_cast<std::size_t>(t) * H * W + p) * 3 + static_cast<std::size_t>(c)] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    out.crossing_frames += occluded ? 1 : 0;
    out.annotations.push_back(std::move(ann));
    for (auto& s : state) synth::advance(s, W, H);
  }
  out.clip = VideoClip(T, H, W, 3, std::move(pixels));
  return out;
}

enum class Split { kTrain, kVal };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "val"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  throw Error("unknown split '" + s + "' (expected train or val)");
}

struct BenchmarkSpec {
  std::string name;
  SceneConfig scene;  // seed is overwritten per video
  int train_videos = 32;
  int val_videos = 8;
  int min_crossing_frames = 0;  // regenerate until reached
};

inline BenchmarkSpec benchmark_spec(const std::string& name) {
  BenchmarkSpec b;
  b.name = name;
  if (name == "easy") {
    b.scene.frames = 8;
    b.scene.num_things = 2;
  } else if (name == "occlusion") {
    b.scene.frames = 12;
    b.scene.num_things = 4;
    b.scene.occlusion_rate = 1.0;
    b.min_crossing_frames = 1;
  } else if (name == "long") {
    b.scene.frames = 48;
    b.scene.num_things = 2;
  } else {
    throw Error("unknown benchmark '" + name + "' (expected easy, occlusion or long)");
  }
  return b;
}

struct BenchmarkVideo {
  std::string id;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  GeneratedVideo video;
};

// Videos are generated from per-video seeds forked off the benchmark seed, so
// the dataset is a pure function of (name, seed).
inline std::vector<BenchmarkVideo> generate_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  Rng root(seed);
  std::vector<BenchmarkVideo> out;
  const int total = spec.train_videos + spec.val_videos;
  for (int i = 0; i < total; ++i) {
    BenchmarkVideo v;
    v.split = i < spec.train_videos ? Split::kTrain : Split::kVal;
    const int local = v.split == Split::kTrain ? i : i - spec.train_videos;
    v.id = to_string(v.split) + "_" + std::string(local < 10 ? "00" : local < 100 ? "0" : "") + std::to_string(local);
    Rng stream = root.fork(static_cast<std::uint64_t>(i));
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw Error("generate_benchmark: could not produce a crossing for " + v.id);
      SceneConfig sc = spec.scene;
      sc.seed = stream.next_u64();
      GeneratedVideo g = generate_video(sc);
      if (g.crossing_frames < spec.min_crossing_frames) continue;
      v.seed = sc.seed;
      v.video = std::move(g);
      break;
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<BenchmarkVideo> generate_benchmark(const std::string& name, std::uint64_t seed) {
  return generate_benchmark(benchmark_spec(name), seed);
}

}  // namespace tubelink

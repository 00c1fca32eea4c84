#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tubelink/coretypes.hpp"
#include "tubelink/model.hpp"
#include "tubelink/synthgen.hpp"

namespace tubelink {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kInstanceRadix = 1u << 22;
inline constexpr int kMaxClassId = 999;

enum class IoErrorCode { kOpen, kBadMagic, kBadVersion, kTruncated, kBadValue, kManifest, kArchitecture };

inline const char* to_string(IoErrorCode c) {
  switch (c) {
    case IoErrorCode::kOpen: return "open";
    case IoErrorCode::kBadMagic: return "bad_magic";
    case IoErrorCode::kBadVersion: return "bad_version";
    case IoErrorCode::kTruncated: return "truncated";
    case IoErrorCode::kBadValue: return "bad_value";
    case IoErrorCode::kManifest: return "manifest";
    case IoErrorCode::kArchitecture: return "architecture";
  }
  return "unknown";
}

class IoError : public Error {
 public:
  IoError(IoErrorCode code, const std::string& path, const std::string& detail)
      : Error(std::string(to_string(code)) + ": " + path + ": " + detail), code_(code), path_(path) {}
  IoErrorCode code() const { return code_; }
  const std::string& path() const { return path_; }

 private:
  IoErrorCode code_;
  std::string path_;
};

namespace io_detail {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void header(const char magic[4], std::uint32_t h, std::uint32_t w) {
    raw(std::string(magic, 4));
    u32(kFormatVersion);
    u32(h);
    u32(w);
  }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorCode::kOpen, path.string(), "cannot open for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError(IoErrorCode::kOpen, path.string(), "write failed");
  }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorCode::kOpen, path_, "cannot open for reading");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  // Returns (H, W) after checking magic and version.
  std::pair<std::uint32_t, std::uint32_t> header(const char magic[4]) {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), magic, 4) != 0) {
      throw IoError(IoErrorCode::kBadMagic, path_, std::string("expected magic ") + std::string(magic, 4));
    }
    pos_ = 4;
    const auto version = u32();
    if (version != kFormatVersion) {
      throw IoError(IoErrorCode::kBadVersion, path_, "unsupported version " + std::to_string(version));
    }
    const auto h = u32();
    const auto w = u32();
    return {h, w};
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw IoError(IoErrorCode::kBadValue, path_, "trailing bytes");
  }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(IoErrorCode::kTruncated, path_, "unexpected end of file");
  }
  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace io_detail

// Cell = class_id·2^22 + instance_id.
inline std::uint32_t encode_cell(int class_id, int instance_id) {
  if (class_id < 0 || class_id > kMaxClassId) throw Error("panoptic cell: class id must be in [0, 999]");
  if (instance_id < 0 || static_cast<std::uint32_t>(instance_id) >= kInstanceRadix) {
    throw Error("panoptic cell: instance id must be in [0, 2^22)");
  }
  return static_cast<std::uint32_t>(class_id) * kInstanceRadix + static_cast<std::uint32_t>(instance_id);
}

inline std::pair<int, int> decode_cell(std::uint32_t cell) {
  return {static_cast<int>(cell / kInstanceRadix), static_cast<int>(cell % kInstanceRadix)};
}

inline void write_panoptic_grid(const fs::path& path, const PanopticFrame& frame) {
  io_detail::Writer w;
  w.header("TLNK", static_cast<std::uint32_t>(frame.height), static_cast<std::uint32_t>(frame.width));
  for (std::size_t i = 0; i < frame.size(); ++i) w.u32(encode_cell(frame.class_ids[i], frame.instance_ids[i]));
  w.save(path);
}

inline PanopticFrame read_panoptic_grid(const fs::path& path) {
  io_detail::Reader r(path);
  const auto [h, w] = r.header("TLNK");
  if (h == 0 || w == 0) throw IoError(IoErrorCode::kBadValue, r.path(), "empty grid");
  PanopticFrame f(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto [cls, inst] = decode_cell(r.u32());
    if (cls > kMaxClassId) throw IoError(IoErrorCode::kBadValue, r.path(), "class id out of range");
    f.class_ids[i] = cls;
    f.instance_ids[i] = inst;
  }
  r.expect_end();
  return f;
}

// Frame file: same header with magic "TLFR", then u32 channels and
// row-major (y, x, c) f64 values.
inline void write_frame(const fs::path& path, const VideoClip& clip, int t) {
  io_detail::Writer w;
  w.header("TLFR", static_cast<std::uint32_t>(clip.height()), static_cast<std::uint32_t>(clip.width()));
  w.u32(static_cast<std::uint32_t>(clip.channels()));
  for (double v : clip.frame(t)) w.f64(v);
  w.save(path);
}

struct FrameData {
  int height = 0, width = 0, channels = 0;
  std::vector<double> values;
};

inline FrameData read_frame(const fs::path& path) {
  io_detail::Reader r(path);
  const auto [h, w] = r.header("TLFR");
  FrameData f{static_cast<int>(h), static_cast<int>(w), static_cast<int>(r.u32()), {}};
  if (f.height == 0 || f.width == 0 || f.channels == 0) throw IoError(IoErrorCode::kBadValue, r.path(), "empty frame");
  f.values.resize(static_cast<std::size_t>(f.height) * f.width * f.channels);
  for (double& v : f.values) v = r.f64();
  r.expect_end();
  return f;
}

// ---------------------------------------------------------------- manifests

struct VideoEntry {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
  int frames = 0, height = 0, width = 0;
  std::vector<std::string> frame_files;       // empty for prediction sets
  std::vector<std::string> annotation_files;  // relative to the manifest directory
};

struct DatasetManifest {
  std::uint32_t format_version = kFormatVersion;
  std::string kind = "dataset";  // or "predictions"
  std::string benchmark;
  std::uint64_t seed = 0;
  LabelSpace labels;
  std::vector<VideoEntry> videos;

  const VideoEntry& video(const std::string& id) const {
    for (const auto& v : videos) {
      if (v.id == id) return v;
    }
    throw IoError(IoErrorCode::kManifest, id, "video not in manifest");
  }
};

inline nlohmann::ordered_json label_space_to_json(const LabelSpace& l) {
  return {{"things", l.thing_classes()}, {"stuff", l.stuff_classes()}, {"names", l.names()}};
}

inline LabelSpace label_space_from_json(const nlohmann::json& j) {
  return LabelSpace(j.at("things").get<std::vector<int>>(), j.at("stuff").get<std::vector<int>>(),
                    j.value("names", std::vector<std::string>{}));
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["kind"] = m.kind;
  j["benchmark"] = m.benchmark;
  j["seed"] = m.seed;
  j["label_space"] = label_space_to_json(m.labels);
  j["cell_encoding"] = "class_id*4194304+instance_id";
  auto& vids = j["videos"] = nlohmann::ordered_json::array();
  for (const auto& v : m.videos) {
    vids.push_back({{"id", v.id},
                    {"split", v.split},
                    {"seed", v.seed},
                    {"T", v.frames},
                    {"H", v.height},
                    {"W", v.width},
                    {"frames", v.frame_files},
                    {"annotations", v.annotation_files}});
  }
  return j;
}

inline void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::kOpen, (dir / "manifest.json").string(), "cannot open for writing");
  out << manifest_to_json(m).dump(2) << "\n";
}

// Parses and validates: version, label space, per-video sizes and that every
// referenced file exists.
inline DatasetManifest load_manifest(const fs::path& dir) {
  const auto path = (dir / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::kOpen, path, "cannot open manifest");
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kFormatVersion) {
      throw IoError(IoErrorCode::kBadVersion, path, "unsupported format_version " + std::to_string(m.format_version));
    }
    m.kind = j.at("kind").get<std::string>();
    m.benchmark = j.value("benchmark", std::string{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.labels = label_space_from_json(j.at("label_space"));
    for (const auto& v : j.at("videos")) {
      VideoEntry e;
      e.id = v.at("id").get<std::string>();
      e.split = v.at("split").get<std::string>();
      e.seed = v.value("seed", std::uint64_t{0});
      e.frames = v.at("T").get<int>();
      e.height = v.at("H").get<int>();
      e.width = v.at("W").get<int>();
      e.frame_files = v.at("frames").get<std::vector<std::string>>();
      e.annotation_files = v.at("annotations").get<std::vector<std::string>>();
      if (e.frames < 1 || e.height < 1 || e.width < 1) throw IoError(IoErrorCode::kManifest, path, e.id + ": bad size");
      if (static_cast<int>(e.annotation_files.size()) != e.frames ||
          (!e.frame_files.empty() && static_cast<int>(e.frame_files.size()) != e.frames)) {
        throw IoError(IoErrorCode::kManifest, path, e.id + ": file count does not match T");
      }
      for (const auto* files : {&e.frame_files, &e.annotation_files}) {
        for (const auto& f : *files) {
          if (!fs::exists(dir / f)) throw IoError(IoErrorCode::kManifest, path, "missing file " + f);
        }
      }
      m.videos.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(IoErrorCode::kManifest, path, ex.what());
  } catch (const IoError&) {
    throw;
  } catch (const Error& ex) {
    throw IoError(IoErrorCode::kManifest, path, ex.what());
  }
  return m;
}

inline std::string indexed_name(const std::string& stem, int t) {
  std::string n = std::to_string(t);
  return stem + "_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n + ".bin";
}

inline VideoEntry write_video(const fs::path& dir, const std::string& id, const std::string& split,
                              std::uint64_t seed, const VideoClip* clip, std::span<const PanopticFrame> annotations) {
  fs::create_directories(dir / id);
  VideoEntry e{id, split, seed, static_cast<int>(annotations.size()), annotations.front().height,
               annotations.front().width, {}, {}};
  for (int t = 0; t < e.frames; ++t) {
    if (clip != nullptr) {
      e.frame_files.push_back(id + "/" + indexed_name("frame", t));
      write_frame(dir / e.frame_files.back(), *clip, t);
    }
    e.annotation_files.push_back(id + "/" + indexed_name("pan", t));
    write_panoptic_grid(dir / e.annotation_files.back(), annotations[static_cast<std::size_t>(t)]);
  }
  return e;
}

inline DatasetManifest write_benchmark(const fs::path& dir, const std::string& name, std::uint64_t seed) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.benchmark = name;
  m.seed = seed;
  m.labels = synthetic_label_space();
  for (const auto& v : generate_benchmark(name, seed)) {
    m.videos.push_back(write_video(dir, v.id, to_string(v.split), v.seed, &v.video.clip, v.video.annotations));
  }
  write_manifest(dir, m);
  return m;
}

inline VideoClip load_clip(const fs::path& dir, const VideoEntry& e) {
  if (e.frame_files.empty()) throw IoError(IoErrorCode::kManifest, e.id, "video has no frame files");
  std::vector<double> data;
  int channels = 0;
  for (const auto& f : e.frame_files) {
    auto fr = read_frame(dir / f);
    if (fr.height != e.height || fr.width != e.width) {
      throw IoError(IoErrorCode::kBadValue, (dir / f).string(), "frame size differs from manifest");
    }
    channels = fr.channels;
    data.insert(data.end(), fr.values.begin(), fr.values.end());
  }
  return VideoClip(e.frames, e.height, e.width, channels, std::move(data));
}

inline std::vector<PanopticFrame> load_annotations(const fs::path& dir, const VideoEntry& e) {
  std::vector<PanopticFrame> out;
  for (const auto& f : e.annotation_files) {
    out.push_back(read_panoptic_grid(dir / f));
    if (out.back().height != e.height || out.back().width != e.width) {
      throw IoError(IoErrorCode::kBadValue, (dir / f).string(), "grid size differs from manifest");
    }
  }
  return out;
}

// --------------------------------------------------------------- checkpoints

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  const auto& d = c.decoder;
  return {{"num_queries", d.num_queries}, {"width", d.width},     {"stages", d.stages},
          {"patch", d.patch},             {"channels", d.channels}, {"ffn_hidden", d.ffn_hidden},
          {"embed_dim", c.embed_dim},     {"link_heads", c.link_heads}, {"mode", to_string(c.mode)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.decoder.num_queries = j.at("num_queries").get<int>();
  c.decoder.width = j.at("width").get<int>();
  c.decoder.stages = j.at("stages").get<int>();
  c.decoder.patch = j.at("patch").get<int>();
  c.decoder.channels = j.at("channels").get<int>();
  c.decoder.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.link_heads = j.at("link_heads").get<int>();
  c.mode = parse_task_mode(j.at("mode").get<std::string>());
  return c;
}

// "TLCK", u32 version, u32 config length + config JSON, u32 parameter count,
// then per parameter: u32 name length + name, u32 rank, u64 dims, f64 values.
inline void save_checkpoint(const TubeLinkModel& model, const fs::path& path) {
  io_detail::Writer w;
  w.raw("TLCK");
  w.u32(kFormatVersion);
  nlohmann::ordered_json cfg{{"model", model_config_to_json(model.config())},
                             {"label_space", label_space_to_json(model.labels())}};
  const std::string text = cfg.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  const auto& items = model.parameters().items();
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& p : items) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (auto d : p.tensor.shape()) w.u64(d);
    for (double v : p.tensor.values()) w.f64(v);
  }
  w.save(path);
}

inline TubeLinkModel load_checkpoint(const fs::path& path) {
  io_detail::Reader r(path);
  const std::string magic = r.raw(4);
  if (magic != "TLCK") throw IoError(IoErrorCode::kBadMagic, r.path(), "expected magic TLCK");
  const auto version = r.u32();
  if (version != kFormatVersion) throw IoError(IoErrorCode::kBadVersion, r.path(), "unsupported version " + std::to_string(version));
  TubeLinkModel model;
  try {
    const auto cfg = nlohmann::json::parse(r.raw(r.u32()));
    model = TubeLinkModel(model_config_from_json(cfg.at("model")), label_space_from_json(cfg.at("label_space")), 0);
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(IoErrorCode::kBadValue, r.path(), std::string("config: ") + ex.what());
  }

  struct Stored {
    Shape shape;
    std::vector<double> values;
  };
  std::map<std::string, Stored> stored;
  std::vector<std::string> order;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Stored s;
    const std::string name = r.raw(r.u32());
    const auto rank = r.u32();
    if (rank > 8) throw IoError(IoErrorCode::kBadValue, r.path(), name + ": implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) s.shape.push_back(static_cast<std::size_t>(r.u64()));
    s.values.resize(shape_size(s.shape));
    for (double& v : s.values) v = r.f64();
    order.push_back(name);
    stored.emplace(name, std::move(s));
  }
  r.expect_end();

  std::vector<std::string> problems;
  const auto& items = model.parameters().items();
  for (const auto& p : items) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      problems.push_back("missing " + p.name);
    } else if (it->second.shape != p.tensor.shape()) {
      problems.push_back("shape mismatch " + p.name + " " + shape_string(it->second.shape) + " vs " +
                         shape_string(p.tensor.shape()));
    }
  }
  for (const auto& name : order) {
    if (model.parameters().find(name) == nullptr) problems.push_back("unexpected " + name);
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
    throw IoError(IoErrorCode::kArchitecture, r.path(), msg);
  }
  for (const auto& p : items) {
    auto dst = Tensor(p.tensor).mutable_values();
    const auto& src = stored.at(p.name).values;
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return model;
}

}  // namespace tubelink

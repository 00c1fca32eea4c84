#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tubelink/dataio.hpp"
#include "tubelink/gradsuite.hpp"
#include "tubelink/metrics.hpp"
#include "tubelink/tracker.hpp"
#include "tubelink/training.hpp"

namespace tubelink {

inline constexpr int kReportSchemaVersion = 1;

struct RunConfig {
  TaskMode mode = TaskMode::kVPS;
  ModelConfig model;
  int subclip_size = 2;
  int pair_radius = 1;
  int window = 6;
  int stride = 0;
  LossWeights loss_weights;
  AssignConfig assign;
  double score_thresh = 0.3;
  double overlap_thresh = 0.8;
  double match_thresh = 0.5;
  int max_age = 2;
  bool use_linked_embeddings = true;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const {
    ModelConfig m = model;
    m.mode = mode;
    m.validate();
    if (subclip_size < 1) throw Error("config: subclip_size must be >= 1");
    if (pair_radius < 1) throw Error("config: pair_radius must be >= 1");
    loss_weights.validate();
    assign.validate();
    optimizer.validate();
    for (double t : {score_thresh, overlap_thresh, match_thresh}) {
      if (!(t >= 0.0 && t <= 1.0)) throw Error("config: thresholds must be in [0, 1]");
    }
    inference().validate();
  }

  InferenceConfig inference() const {
    InferenceConfig c;
    c.window = window;
    c.stride = stride;
    c.score_thresh = score_thresh;
    c.overlap_thresh = overlap_thresh;
    c.match_thresh = match_thresh;
    c.max_age = max_age;
    c.use_linked_embeddings = use_linked_embeddings;
    c.mode = mode;
    return c;
  }

  TrainConfig training() const {
    TrainConfig c;
    c.model = model;
    c.model.mode = mode;
    c.subclip_size = subclip_size;
    c.pair_radius = pair_radius;
    c.weights = loss_weights;
    c.assign = assign;
    c.optimizer = optimizer;
    c.seed = seed;
    return c;
  }
};

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  const auto& d = c.model.decoder;
  const auto& w = c.loss_weights;
  const auto& o = c.optimizer;
  return {{"mode", to_string(c.mode)},
          {"model",
           {{"num_queries", d.num_queries},
            {"width", d.width},
            {"embed_dim", c.model.embed_dim},
            {"stages", d.stages},
            {"patch", d.patch},
            {"channels", d.channels},
            {"ffn_hidden", d.ffn_hidden},
            {"link_heads", c.model.link_heads}}},
          {"subclip_size", c.subclip_size},
          {"pair_radius", c.pair_radius},
          {"window", c.window},
          {"stride", c.stride},
          {"loss_weights",
           {{"cls", w.cls}, {"ce", w.ce}, {"dice", w.dice}, {"track", w.track}, {"aux", w.aux}, {"no_object", w.no_object}}},
          {"assign", {{"alpha1", c.assign.alpha1}, {"alpha2", c.assign.alpha2}}},
          {"tracker",
           {{"score_thresh", c.score_thresh},
            {"overlap_thresh", c.overlap_thresh},
            {"match_thresh", c.match_thresh},
            {"max_age", c.max_age},
            {"use_linked_embeddings", c.use_linked_embeddings}}},
          {"optimizer",
           {{"kind", o.kind},
            {"learning_rate", o.learning_rate},
            {"momentum", o.momentum},
            {"beta2", o.beta2},
            {"grad_clip", o.grad_clip},
            {"iterations", o.iterations},
            {"batch_size", o.batch_size},
            {"warmup", o.warmup}}},
          {"seed", c.seed}};
}

namespace command_detail {

// Reads j[key] into out when present; unknown keys are rejected by the caller.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw Error("config: unknown key '" + where + key + "'");
  }
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::kOpen, path.string(), "cannot open for writing");
  out << text;
}

}  // namespace command_detail

// Overlays the keys present in j on top of cfg.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig cfg = {}) {
  namespace cd = command_detail;
  try {
    cd::reject_unknown(j, {"mode", "model", "subclip_size", "pair_radius", "window", "stride", "loss_weights", "assign",
                           "tracker", "optimizer", "seed"},
                       "");
    if (j.contains("mode")) cfg.mode = parse_task_mode(j.at("mode").get<std::string>());
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cd::reject_unknown(m, {"num_queries", "width", "embed_dim", "stages", "patch", "channels", "ffn_hidden", "link_heads"},
                         "model.");
      auto& d = cfg.model.decoder;
      cd::read(m, "num_queries", d.num_queries);
      cd::read(m, "width", d.width);
      cd::read(m, "embed_dim", cfg.model.embed_dim);
      cd::read(m, "stages", d.stages);
      cd::read(m, "patch", d.patch);
      cd::read(m, "channels", d.channels);
      cd::read(m, "ffn_hidden", d.ffn_hidden);
      cd::read(m, "link_heads", cfg.model.link_heads);
    }
    cd::read(j, "subclip_size", cfg.subclip_size);
    cd::read(j, "pair_radius", cfg.pair_radius);
    cd::read(j, "window", cfg.window);
    cd::read(j, "stride", cfg.stride);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      cd::reject_unknown(w, {"cls", "ce", "dice", "track", "aux", "no_object"}, "loss_weights.");
      cd::read(w, "cls", cfg.loss_weights.cls);
      cd::read(w, "ce", cfg.loss_weights.ce);
      cd::read(w, "dice", cfg.loss_weights.dice);
      cd::read(w, "track", cfg.loss_weights.track);
      cd::read(w, "aux", cfg.loss_weights.aux);
      cd::read(w, "no_object", cfg.loss_weights.no_object);
    }
    if (j.contains("assign")) {
      const auto& a = j.at("assign");
      cd::reject_unknown(a, {"alpha1", "alpha2"}, "assign.");
      cd::read(a, "alpha1", cfg.assign.alpha1);
      cd::read(a, "alpha2", cfg.assign.alpha2);
    }
    if (j.contains("tracker")) {
      const auto& t = j.at("tracker");
      cd::reject_unknown(t, {"score_thresh", "overlap_thresh", "match_thresh", "max_age", "use_linked_embeddings"}, "tracker.");
      cd::read(t, "score_thresh", cfg.score_thresh);
      cd::read(t, "overlap_thresh", cfg.overlap_thresh);
      cd::read(t, "match_thresh", cfg.match_thresh);
      cd::read(t, "max_age", cfg.max_age);
      cd::read(t, "use_linked_embeddings", cfg.use_linked_embeddings);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      cd::reject_unknown(o, {"kind", "learning_rate", "momentum", "beta2", "grad_clip", "iterations", "batch_size", "warmup"},
                         "optimizer.");
      cd::read(o, "kind", cfg.optimizer.kind);
      cd::read(o, "learning_rate", cfg.optimizer.learning_rate);
      cd::read(o, "momentum", cfg.optimizer.momentum);
      cd::read(o, "beta2", cfg.optimizer.beta2);
      cd::read(o, "grad_clip", cfg.optimizer.grad_clip);
      cd::read(o, "iterations", cfg.optimizer.iterations);
      cd::read(o, "batch_size", cfg.optimizer.batch_size);
      cd::read(o, "warmup", cfg.optimizer.warmup);
    }
    cd::read(j, "seed", cfg.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("config: ") + ex.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::kOpen, path.string(), "cannot open config");
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(IoErrorCode::kBadValue, path.string(), ex.what());
  }
}

inline std::string config_hash(const RunConfig& cfg) {
  return command_detail::hex64(command_detail::fnv1a(run_config_to_json(cfg).dump()));
}

inline void print_config(std::ostream& log, const std::string& command, const nlohmann::ordered_json& resolved) {
  log << command << " config: " << resolved.dump() << "\n";
}

// ------------------------------------------------------------------ gen

inline DatasetManifest cmd_gen(const std::string& benchmark, std::uint64_t seed, const fs::path& out_dir,
                               std::ostream& log) {
  print_config(log, "gen", {{"benchmark", benchmark}, {"seed", seed}, {"out", out_dir.string()}});
  auto m = write_benchmark(out_dir, benchmark, seed);
  log << "gen: wrote " << m.videos.size() << " videos to " << out_dir.string() << "\n";
  return m;
}

// ---------------------------------------------------------------- train

struct TrainOutputs {
  TubeLinkModel model;
  std::vector<TrainStepRecord> curve;
  fs::path checkpoint;
};

inline TrainOutputs cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir,
                              std::ostream& log) {
  cfg.validate();
  print_config(log, "train", run_config_to_json(cfg));
  const auto manifest = load_manifest(dataset_dir);
  std::vector<VideoClip> clips;
  std::vector<std::vector<PanopticFrame>> annotations;
  for (const auto& v : manifest.videos) {
    if (v.split != "train") continue;
    clips.push_back(load_clip(dataset_dir, v));
    annotations.push_back(load_annotations(dataset_dir, v));
  }
  if (clips.empty()) throw Error("train: dataset has no train split");
  std::vector<TrainingVideo> videos;
  for (std::size_t i = 0; i < clips.size(); ++i) videos.push_back({&clips[i], &annotations[i]});

  const TrainConfig tc = cfg.training();
  TrainOutputs out{TubeLinkModel(tc.model, manifest.labels, cfg.seed), {}, out_dir / "model.ckpt"};
  const int every = std::max(1, cfg.optimizer.iterations / 10);
  out.curve = train(out.model, videos, tc, [&](const TrainStepRecord& r) {
    if (r.iteration % every == 0 || r.iteration + 1 == cfg.optimizer.iterations) {
      log << "train: it " << r.iteration << " loss " << r.total << "\n";
    }
  });

  fs::create_directories(out_dir);
  save_checkpoint(out.model, out.checkpoint);
  std::ostringstream csv;
  csv << std::setprecision(17) << "iteration,learning_rate,total,cls,ce,dice,track,aux,grad_norm\n";
  for (const auto& r : out.curve) {
    csv << r.iteration << ',' << r.learning_rate << ',' << r.total << ',' << r.cls << ',' << r.ce << ',' << r.dice << ','
        << r.track << ',' << r.aux << ',' << r.grad_norm << '\n';
  }
  command_detail::write_text(out_dir / "loss_curve.csv", csv.str());
  nlohmann::ordered_json report{{"report_schema", kReportSchemaVersion},
                                {"format_version", kFormatVersion},
                                {"config_hash", config_hash(cfg)},
                                {"config", run_config_to_json(cfg)},
                                {"dataset", dataset_dir.string()},
                                {"train_videos", videos.size()},
                                {"parameters", out.model.parameters().scalar_count()},
                                {"final_loss", out.curve.empty() ? 0.0 : out.curve.back().total}};
  command_detail::write_text(out_dir / "train_report.json", report.dump(2) + "\n");
  log << "train: checkpoint " << out.checkpoint.string() << "\n";
  return out;
}

// ---------------------------------------------------------------- infer

struct InferTiming {
  int frames = 0;
  double seconds = 0.0;
  double fps() const { return seconds > 0.0 ? frames / seconds : 0.0; }
};

// Writes predictions in the dataset layout (annotation grids only) plus
// timing.json. Timing is kept out of the prediction manifest so that
// predictions stay byte-identical across runs.
inline InferTiming infer_model(const TubeLinkModel& model, const RunConfig& cfg, const fs::path& dataset_dir,
                               const std::string& split, const fs::path& out_dir) {
  const auto manifest = load_manifest(dataset_dir);
  const InferenceConfig ic = cfg.inference();
  DatasetManifest preds;
  preds.kind = "predictions";
  preds.benchmark = manifest.benchmark;
  preds.seed = manifest.seed;
  preds.labels = manifest.labels;
  fs::create_directories(out_dir);
  InferTiming timing;
  for (const auto& v : manifest.videos) {
    if (v.split != split) continue;
    const VideoClip clip = load_clip(dataset_dir, v);
    const auto start = std::chrono::steady_clock::now();
    std::vector<PanopticFrame> frames =
        cfg.mode == TaskMode::kVSS ? run_vss_inference(clip, model, ic) : run_inference(clip, model, ic).frames;
    timing.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing.frames += clip.frame_count();
    preds.videos.push_back(write_video(out_dir, v.id, v.split, v.seed, nullptr, frames));
  }
  if (preds.videos.empty()) throw Error("infer: no videos in split '" + split + "'");
  write_manifest(out_dir, preds);
  nlohmann::ordered_json t{{"window", cfg.window}, {"frames", timing.frames}, {"seconds", timing.seconds},
                           {"fps", timing.fps()}};
  command_detail::write_text(out_dir / "timing.json", t.dump(2) + "\n");
  return timing;
}

inline InferTiming cmd_infer(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dataset_dir,
                             const std::string& split, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  print_config(log, "infer", {{"checkpoint", checkpoint.string()}, {"split", split}, {"config", run_config_to_json(cfg)}});
  const TubeLinkModel model = load_checkpoint(checkpoint);
  const auto timing = infer_model(model, cfg, dataset_dir, split, out_dir);
  log << "infer: " << timing.frames << " frames at " << timing.fps() << " fps\n";
  return timing;
}

// ----------------------------------------------------------------- eval

// Task-specific views: VIS scores things only, VSS ignores instances.
inline std::vector<PanopticFrame> adapt_for_task(std::vector<PanopticFrame> frames, TaskMode mode, const LabelSpace& labels) {
  for (auto& f : frames) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (mode == TaskMode::kVSS) f.instance_ids[i] = 0;
      if (mode == TaskMode::kVIS && f.class_ids[i] != kVoidClass && !labels.is_thing(f.class_ids[i])) {
        f.class_ids[i] = kVoidClass;
        f.instance_ids[i] = 0;
      }
    }
  }
  return frames;
}

inline nlohmann::ordered_json eval_to_json(const EvalResult& r) {
  nlohmann::ordered_json vpq_k = nlohmann::ordered_json::object(), mvc_c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.vpq_per_k) vpq_k[std::to_string(k)] = v;
  for (const auto& [c, v] : r.mvc_per_c) mvc_c[std::to_string(c)] = v;
  return {{"vpq_per_k", vpq_k}, {"vpq_mean", r.vpq_mean}, {"stq", r.stq},   {"aq", r.aq},
          {"sq", r.sq},         {"miou", r.miou},         {"mvc_per_c", mvc_c}, {"videos", r.videos}};
}

struct EvalOutputs {
  EvalResult result;
  std::vector<std::pair<std::string, EvalResult>> per_video;
};

inline EvalOutputs evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, TaskMode mode) {
  const auto preds = load_manifest(pred_dir);
  const auto gts = load_manifest(gt_dir);
  EvalOutputs out;
  std::vector<EvalResult> results;
  for (const auto& pv : preds.videos) {
    const auto& gv = gts.video(pv.id);
    auto p = adapt_for_task(load_annotations(pred_dir, pv), mode, gts.labels);
    auto g = adapt_for_task(load_annotations(gt_dir, gv), mode, gts.labels);
    results.push_back(evaluate_video(p, g));
    out.per_video.emplace_back(pv.id, results.back());
  }
  if (results.empty()) throw Error("eval: prediction set is empty");
  out.result = aggregate(results);
  return out;
}

inline EvalOutputs cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir,
                            const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  print_config(log, "eval", {{"pred", pred_dir.string()}, {"gt", gt_dir.string()}, {"mode", to_string(cfg.mode)}});
  auto out = evaluate_dirs(pred_dir, gt_dir, cfg.mode);
  const auto labels = load_manifest(gt_dir).labels;

  nlohmann::ordered_json per_video = nlohmann::ordered_json::object();
  for (const auto& [id, r] : out.per_video) per_video[id] = eval_to_json(r);
  nlohmann::ordered_json report{{"report_schema", kReportSchemaVersion},
                                {"format_version", kFormatVersion},
                                {"config_hash", config_hash(cfg)},
                                {"mode", to_string(cfg.mode)},
                                {"result", eval_to_json(out.result)},
                                {"per_video", per_video}};
  fs::create_directories(out_dir);
  command_detail::write_text(out_dir / "report.json", report.dump(2) + "\n");

  std::ostringstream csv;
  csv << std::setprecision(17) << "class_id,name,kind,pq,iou,videos\n";
  for (const auto& [cls, s] : out.result.per_class) {
    const std::string name = cls == kVoidClass ? "void" : labels.name(cls);
    const std::string kind = labels.is_thing(cls) ? "thing" : labels.is_stuff(cls) ? "stuff" : "other";
    csv << cls << ',' << name << ',' << kind << ',' << s.pq << ',' << s.iou << ',' << s.occurrences << '\n';
  }
  command_detail::write_text(out_dir / "per_class.csv", csv.str());
  log << "eval: VPQ " << out.result.vpq_mean << " STQ " << out.result.stq << " mIoU " << out.result.miou << "\n";
  return out;
}

// ------------------------------------------------------------- gradcheck

inline std::vector<GradCheckOutcome> cmd_gradcheck(const GradSuiteConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  print_config(log, "gradcheck", {{"instances", cfg.instances}, {"eps", cfg.eps}, {"tolerance", cfg.tolerance}, {"seed", cfg.seed}});
  auto results = run_gradient_suite(cfg);
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    log << (r.passed ? "PASS " : "FAIL ") << r.name << " instances=" << r.instances << " max_rel_err=" << r.max_error << "\n";
    checks.push_back({{"name", r.name}, {"instances", r.instances}, {"max_rel_error", r.max_error}, {"passed", r.passed}});
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    nlohmann::ordered_json report{{"report_schema", kReportSchemaVersion}, {"tolerance", cfg.tolerance}, {"checks", checks}};
    command_detail::write_text(out_dir / "gradcheck.json", report.dump(2) + "\n");
  }
  return results;
}

}  // namespace tubelink

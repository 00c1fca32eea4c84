// Acceptance run: one PASS/FAIL line per criterion. Tolerances and budgets
// are pinned below; detailed command logs go to <work-dir>/acceptance.log.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "tubelink/commands.hpp"

using namespace tubelink;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr int kHungarianMatrices = 500;
constexpr double kHungarianBudgetSeconds = 30.0;
constexpr int kMetricCases = 200;
constexpr double kMetricTolerance = 1e-12;
constexpr double kClosedFormTolerance = 1e-12;
constexpr double kEasyVpqBound = 0.5;
constexpr double kEasyStqBound = 0.5;
constexpr double kEasyBudgetSeconds = 1800.0;
const std::vector<std::uint64_t> kEasySeeds{1, 2, 3};
const std::vector<std::uint64_t> kTrendSeeds{11, 12, 13, 14, 15};  // val sets for the trend criteria

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

struct Verdict {
  bool passed = false;
  std::string detail;
};

struct Context {
  fs::path work;
  std::ofstream log;
};

// ------------------------------------------------------------------ 1

Verdict gradients(Context& ctx) {
  GradSuiteConfig g;
  g.tolerance = kGradTolerance;
  const auto t0 = Clock::now();
  const auto results = cmd_gradcheck(g, ctx.work / "gradcheck", ctx.log);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < kGradBudgetSeconds;
  double worst = 0.0;
  int min_instances = g.instances;
  for (const auto& r : results) {
    ok = ok && r.passed;
    worst = std::max(worst, r.max_error);
    min_instances = std::min(min_instances, r.instances);
  }
  ok = ok && min_instances >= 20;
  return {ok, std::to_string(results.size()) + " checks, max rel err " + fmt(worst) + ", " + fmt(elapsed, 3) + " s"};
}

// ------------------------------------------------------------------ 2

Verdict assignment(Context&) {
  Rng rng(4242);
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (int i = 0; i < kHungarianMatrices; ++i) {
    CostMatrix m(rng.index(7) + 1, rng.index(7) + 1);
    const bool integral = i % 2 == 0;
    for (double& v : m.data) v = integral ? static_cast<double>(rng.integer(0, 9)) : rng.uniform(-10.0, 10.0);
    if (hungarian(m).total_cost != oracle::brute_force_assignment(m)) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && elapsed < kHungarianBudgetSeconds,
          std::to_string(kHungarianMatrices) + " matrices, " + std::to_string(mismatches) + " mismatches, " +
              fmt(elapsed, 3) + " s"};
}

// ------------------------------------------------------------------ 3

Verdict metric_oracles(Context&) {
  Rng rng(777);
  double worst = 0.0, worst_identity = 0.0;
  bool perfect = true;
  for (int i = 0; i < kMetricCases; ++i) {
    const auto [pred, gt] = oracle::random_case(rng, 4, 4, 4, 3);
    for (int k = 1; k <= 4; ++k) worst = std::max(worst, std::abs(vpq(pred, gt, k) - oracle::vpq(pred, gt, k)));
    for (int c = 1; c <= 4; ++c) worst = std::max(worst, std::abs(mvc(pred, gt, c) - oracle::mvc(pred, gt, c)));
    const auto s = stq(pred, gt);
    worst = std::max(worst, std::abs(s.aq - oracle::aq(pred, gt)));
    worst = std::max(worst, std::abs(s.sq - oracle::miou(pred, gt)));
    worst = std::max(worst, std::abs(miou(pred, gt) - oracle::miou(pred, gt)));
    worst_identity = std::max(worst_identity, std::abs(s.stq - std::sqrt(s.aq * s.sq)));

    const auto p = evaluate_video(gt, gt, EvalOptions{{1, 2, 4}, {1, 2, 4}});
    perfect = perfect && p.vpq_mean == 1.0 && p.stq == 1.0 && p.aq == 1.0 && p.sq == 1.0 && p.miou == 1.0;
    for (const auto& [k, v] : p.vpq_per_k) perfect = perfect && v == 1.0;
    for (const auto& [c, v] : p.mvc_per_c) perfect = perfect && v == 1.0;
  }
  return {worst <= kMetricTolerance && worst_identity <= kMetricTolerance && perfect,
          std::to_string(kMetricCases) + " videos, max dev " + fmt(worst) + ", stq identity dev " +
              fmt(worst_identity) + ", perfect=" + (perfect ? "1.0" : "not 1.0")};
}

// ------------------------------------------------------------------ 4

Verdict closed_forms(Context&) {
  auto row = [](std::vector<double> v) {
    const auto n = v.size();
    return Tensor({1, n}, std::move(v));
  };
  const double no_neg = temporal_contrastive_loss({row({0.4, -1.0}), row({1.5, 2.0}), Tensor()}).item();
  const double one_neg = temporal_contrastive_loss({row({1.0, 2.0}), row({3.0, -1.0}), row({-1.0, 1.0})}).item();
  const double aux_par = aux_cosine_loss(row({0.5, -1.0, 2.0}), row({1.0, -2.0, 4.0}), 1.0).item();
  const double aux_orth = aux_cosine_loss(row({1.0, 0.0}), row({0.0, 3.0}), 1.0).item();
  const bool ok = std::abs(no_neg) <= kClosedFormTolerance && std::abs(one_neg - std::log(2.0)) <= kClosedFormTolerance &&
                  std::abs(aux_par) <= kClosedFormTolerance && std::abs(aux_orth - 1.0) <= kClosedFormTolerance;
  return {ok, "contrastive " + fmt(no_neg) + " / " + fmt(one_neg, 15) + ", aux " + fmt(aux_par) + " / " + fmt(aux_orth)};
}

// ------------------------------------------------------------------ 5

Verdict easy_training(Context& ctx) {
  bool ok = true;
  std::string detail;
  for (auto seed : kEasySeeds) {
    const fs::path dir = ctx.work / ("easy_seed" + std::to_string(seed));
    cmd_gen("easy", seed, dir / "data", ctx.log);
    RunConfig cfg;
    cfg.seed = seed;
    const auto t0 = Clock::now();
    cmd_train(cfg, dir / "data", dir / "train", ctx.log);
    cmd_infer(cfg, dir / "train" / "model.ckpt", dir / "data", "val", dir / "pred", ctx.log);
    const auto r = cmd_eval(cfg, dir / "pred", dir / "data", dir / "eval", ctx.log).result;
    const double elapsed = seconds_since(t0);
    const bool pass = r.vpq_mean >= kEasyVpqBound && r.stq >= kEasyStqBound && elapsed < kEasyBudgetSeconds;
    ok = ok && pass;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": VPQ " + fmt(r.vpq_mean, 3) +
              " STQ " + fmt(r.stq, 3) + " in " + fmt(elapsed, 4) + " s";
  }
  return {ok, detail};
}

// ------------------------------------------------- 6 and 7 shared harness

struct WindowRun {
  double vpq_sum = 0.0;
  int frames = 0;
  double seconds = 0.0;
};

// Trains one checkpoint on `benchmark` and evaluates it at every window on
// the val splits of the trend seeds.
std::map<int, WindowRun> window_sweep(Context& ctx, const std::string& benchmark, const std::vector<int>& windows,
                                      std::vector<std::map<int, double>>& per_seed) {
  const fs::path dir = ctx.work / benchmark;
  cmd_gen(benchmark, 100, dir / "train_data", ctx.log);
  RunConfig cfg;
  cfg.seed = 100;
  const auto model = cmd_train(cfg, dir / "train_data", dir / "train", ctx.log).model;
  std::map<int, WindowRun> out;
  for (auto seed : kTrendSeeds) {
    const fs::path data = dir / ("val_seed" + std::to_string(seed));
    cmd_gen(benchmark, seed, data, ctx.log);
    std::map<int, double> row;
    for (int w : windows) {
      RunConfig c = cfg;
      c.window = w;
      const fs::path pred = dir / ("pred_seed" + std::to_string(seed) + "_w" + std::to_string(w));
      const auto timing = infer_model(model, c, data, "val", pred);
      const double v = evaluate_dirs(pred, data, c.mode).result.vpq_mean;
      ctx.log << benchmark << " seed " << seed << " W=" << w << " VPQ " << v << " fps " << timing.fps() << "\n";
      row[w] = v;
      out[w].vpq_sum += v;
      out[w].frames += timing.frames;
      out[w].seconds += timing.seconds;
    }
    per_seed.push_back(row);
  }
  return out;
}

std::string seed_wins(const std::vector<std::map<int, double>>& per_seed, int better, int worse) {
  int wins = 0;
  for (const auto& r : per_seed) wins += r.at(better) >= r.at(worse);
  return std::to_string(wins) + "/" + std::to_string(per_seed.size()) + " seeds";
}

Verdict tube_matching_trend(Context& ctx) {
  std::vector<std::map<int, double>> per_seed;
  const auto runs = window_sweep(ctx, "occlusion", {1, 2}, per_seed);
  const double n = static_cast<double>(kTrendSeeds.size());
  const double w1 = runs.at(1).vpq_sum / n, w2 = runs.at(2).vpq_sum / n;
  return {w2 >= w1, "mean VPQ W=2 " + fmt(w2) + " vs W=1 " + fmt(w1) + " (W=2 >= W=1 on " + seed_wins(per_seed, 2, 1) + ")"};
}

Verdict window_size_trend(Context& ctx) {
  std::vector<std::map<int, double>> per_seed;
  const auto runs = window_sweep(ctx, "long", {1, 2, 6}, per_seed);
  const double n = static_cast<double>(kTrendSeeds.size());
  const double w2 = runs.at(2).vpq_sum / n, w6 = runs.at(6).vpq_sum / n;
  const double fps1 = runs.at(1).frames / runs.at(1).seconds, fps6 = runs.at(6).frames / runs.at(6).seconds;
  return {w6 >= w2 && fps6 > fps1, "mean VPQ W=6 " + fmt(w6) + " vs W=2 " + fmt(w2) + " (" + seed_wins(per_seed, 6, 2) +
                                       "); fps W=6 " + fmt(fps6, 4) + " vs W=1 " + fmt(fps1, 4)};
}

// ------------------------------------------------------------------ 8

Verdict structural(Context& ctx) {
  bool frames_ok = true, ids_ok = true;
  int pairs = 0;
  TubeLinkModel model(ModelConfig{}, synthetic_label_space(), 5);
  for (int T : {1, 2, 3, 5, 7, 8, 12, 13}) {
    SceneConfig sc;
    sc.frames = T;
    sc.num_things = 3;
    sc.seed = static_cast<std::uint64_t>(T);
    const auto clip = generate_video(sc).clip;
    for (int W : {1, 2, 3, 4, 6, 8}) {
      for (int stride : {0, 1}) {
        InferenceConfig ic;
        ic.window = W;
        ic.stride = stride;
        ic.score_thresh = 0.0;
        const auto out = run_inference(clip, model, ic);
        ++pairs;
        frames_ok = frames_ok && out.frames.size() == static_cast<std::size_t>(T);
        std::map<int, int> cls;
        for (const auto& f : out.frames) {
          frames_ok = frames_ok && f.height == sc.height && f.width == sc.width;
          for (std::size_t i = 0; i < f.size(); ++i) {
            if (f.instance_ids[i] == 0) continue;
            auto [it, fresh] = cls.emplace(f.instance_ids[i], f.class_ids[i]);
            ids_ok = ids_ok && it->second == f.class_ids[i] && out.tracks.contains(f.instance_ids[i]);
          }
        }
        ids_ok = ids_ok && cls.size() == out.tracks.size();
      }
    }
  }

  // Two seeded runs of the full pipeline must produce identical bytes.
  RunConfig cfg;
  cfg.optimizer.iterations = 20;
  cfg.seed = 9;
  const fs::path dir = ctx.work / "determinism";
  cmd_gen("easy", 9, dir / "data", ctx.log);
  for (const std::string run : {"a", "b"}) {
    cmd_train(cfg, dir / "data", dir / run, ctx.log);
    cmd_infer(cfg, dir / run / "model.ckpt", dir / "data", "val", dir / run / "pred", ctx.log);
    cmd_eval(cfg, dir / run / "pred", dir / "data", dir / run / "eval", ctx.log);
  }
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  bool same = true;
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    same = same && bytes(e.path()) == bytes(dir / "b" / rel);
    ++compared;
  }
  return {frames_ok && ids_ok && same, std::to_string(pairs) + " (T,W,stride) cases frame count " +
                                           (frames_ok ? "ok" : "WRONG") + ", ids " + (ids_ok ? "unique" : "NOT unique") +
                                           ", " + std::to_string(compared) + " report files " +
                                           (same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tube-Link acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory for datasets and checkpoints");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  fs::create_directories(ctx.work);
  ctx.log.open(ctx.work / "acceptance.log", std::ios::trunc);

  const std::vector<std::pair<std::string, std::function<Verdict(Context&)>>> criteria{
      {"gradient correctness", gradients},
      {"assignment oracle", assignment},
      {"metric oracles", metric_oracles},
      {"closed-form losses", closed_forms},
      {"easy benchmark training", easy_training},
      {"tube vs frame matching trend", tube_matching_trend},
      {"window size trend", window_size_trend},
      {"structural invariants", structural},
  };
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second(ctx);
    } catch (const std::exception& ex) {
      v = {false, std::string("error: ") + ex.what()};
    }
    ++ran;
    failed += !v.passed;
    std::cout << "criterion " << id << " " << (v.passed ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

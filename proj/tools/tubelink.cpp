// Command-line front end: gen, train, infer, eval, gradcheck.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tubelink/commands.hpp"

namespace {

struct Overrides {
  std::string config_file;
  std::string mode;
  std::optional<int> subclip_size;
  std::optional<int> window;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "JSON run config (keys mirror RunConfig)")->check(CLI::ExistingFile);
  cmd->add_option("--mode", o.mode, "task mode")->check(CLI::IsMember({"VPS", "VIS", "VSS", "vps", "vis", "vss"}));
  cmd->add_option("--subclip-size", o.subclip_size, "training subclip size n");
  cmd->add_option("--window", o.window, "inference window W");
  cmd->add_option("--seed", o.seed, "random seed");
}

tubelink::RunConfig resolve(const Overrides& o) {
  tubelink::RunConfig cfg = o.config_file.empty() ? tubelink::RunConfig{} : tubelink::load_run_config(o.config_file);
  if (!o.mode.empty()) cfg.mode = tubelink::parse_task_mode(o.mode);
  if (o.subclip_size) cfg.subclip_size = *o.subclip_size;
  if (o.window) cfg.window = *o.window;
  if (o.seed) cfg.seed = *o.seed;
  if (o.iterations) cfg.optimizer.iterations = *o.iterations;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tube-Link video segmentation toolkit"};
  app.require_subcommand(1);

  std::string benchmark = "easy", out_dir, data_dir, checkpoint, split = "val", pred_dir;
  std::uint64_t gen_seed = 0;
  Overrides ov;

  auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark");
  gen->add_option("--benchmark", benchmark, "easy | occlusion | long")->check(CLI::IsMember({"easy", "occlusion", "long"}));
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on the train split");
  add_common(train, ov);
  train->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--iterations", ov.iterations, "optimizer iterations");
  train->add_option("--out", out_dir, "output directory")->required();

  auto* infer = app.add_subcommand("infer", "run inference on a dataset split");
  add_common(infer, ov);
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--split", split, "train | val")->check(CLI::IsMember({"train", "val"}));
  infer->add_option("--out", out_dir, "prediction directory")->required();

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(eval, ov);
  eval->add_option("--pred", pred_dir, "prediction directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", data_dir, "ground-truth dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_dir, "report directory")->required();

  tubelink::GradSuiteConfig gcfg;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("--instances", gcfg.instances, "random instances per check");
  grad->add_option("--seed", gcfg.seed, "suite seed");
  grad->add_option("--out", out_dir, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      tubelink::cmd_gen(benchmark, gen_seed, out_dir, std::cout);
    } else if (train->parsed()) {
      tubelink::cmd_train(resolve(ov), data_dir, out_dir, std::cout);
    } else if (infer->parsed()) {
      tubelink::cmd_infer(resolve(ov), checkpoint, data_dir, split, out_dir, std::cout);
    } else if (eval->parsed()) {
      tubelink::cmd_eval(resolve(ov), pred_dir, data_dir, out_dir, std::cout);
    } else if (grad->parsed()) {
      bool ok = true;
      for (const auto& r : tubelink::cmd_gradcheck(gcfg, out_dir, std::cout)) ok = ok && r.passed;
      return ok ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

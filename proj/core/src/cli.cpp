#include "crackseg/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "crackseg/config.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/pipeline.hpp"
#include "crackseg/report.hpp"

namespace crackseg {

namespace {

RunConfig effective_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& kv : overrides) apply_override(config, kv);
  config.validate();
  return config;
}

void write_text(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data;
  std::string images;
  std::string val_data;
  std::string val_images;
  std::string out_dir;
  std::string resume;
};

int run_train(const TrainArgs& a) {
  const RunConfig config = effective_config(a.config_path, a.overrides);
  DatasetSplit train_split;
  DatasetSplit val_split;
  if (!a.val_data.empty()) {
    train_split = load_coco(a.data, a.images);
    train_split.name = SplitName::train;
    val_split = load_coco(a.val_data, a.val_images.empty() ? a.images : a.val_images);
    val_split.name = SplitName::val;
  } else {
    DatasetSplit full = load_coco(a.data, a.images);
    auto parts = split_dataset(full.records, full.annotations,
                               {config.train_fraction, config.val_fraction}, config.seed);
    train_split = std::move(std::get<0>(parts));
    val_split = std::move(std::get<1>(parts));
    train_split.image_root = full.image_root;
    val_split.image_root = full.image_root;
  }

  const TrainResult result = train(config, train_split, val_split, a.out_dir, a.resume);
  char line[160];
  std::snprintf(line, sizeof line, "trained %lld epoch(s), last checkpoint: %s\n",
                static_cast<long long>(result.epochs_run), result.last_checkpoint_path.c_str());
  std::cout << line;
  if (result.best_val_mask_ap) {
    std::snprintf(line, sizeof line, "best val mask AP %.2f at epoch %lld: %s\n",
                  *result.best_val_mask_ap, static_cast<long long>(result.best_epoch),
                  result.best_checkpoint_path.c_str());
    std::cout << line;
  }
  return 0;
}

struct EvaluateArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string data;
  std::string images;
  std::string split = "all";
  std::string out_path;
};

int run_evaluate(const EvaluateArgs& a) {
  const RunConfig config = effective_config(a.config_path, a.overrides);
  const Detector detector = detector_from_checkpoint(config, a.checkpoint);

  DatasetSplit full = load_coco(a.data, a.images);
  DatasetSplit chosen;
  if (a.split == "all") {
    chosen = std::move(full);
  } else {
    auto parts = split_dataset(full.records, full.annotations,
                               {config.train_fraction, config.val_fraction}, config.seed);
    if (a.split == "train")
      chosen = std::move(std::get<0>(parts));
    else if (a.split == "val")
      chosen = std::move(std::get<1>(parts));
    else
      chosen = std::move(std::get<2>(parts));
    chosen.image_root = full.image_root;
  }

  EvalResult result =
      evaluate_split(detector, chosen, config.inference, to_string(config.backbone.kind));
  result.split = a.split;
  write_text(eval_json_text(result), a.out_path);
  return 0;
}

struct InferArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string out_dir;
  std::vector<std::string> images;
};

int run_infer(const InferArgs& a) {
  const RunConfig config = effective_config(a.config_path, a.overrides);
  const Detector detector = detector_from_checkpoint(config, a.checkpoint);
  const InferResult result = infer(detector, a.images, config.inference, a.out_dir);
  for (const auto& failure : result.failures) std::cerr << "skipped " << failure << "\n";
  std::cout << "wrote detections for " << result.processed << " image(s) to " << a.out_dir << "\n";
  return result.failures.empty() ? 0 : 1;
}

struct ReportArgs {
  std::vector<std::string> from;
  std::string out_path;
};

int run_report(const ReportArgs& a) {
  std::vector<EvalResult> results;
  results.reserve(a.from.size());
  for (const auto& path : a.from) results.push_back(read_eval_json(path));
  write_text(format_comparison(results), a.out_path);
  return 0;
}

struct ValidateArgs {
  std::string data;
  std::string images;
};

int run_validate(const ValidateArgs& a) {
  const DatasetSplit split = load_coco(a.data, a.images);
  size_t instances = 0;
  for (const auto& [id, anns] : split.annotations) instances += anns.size();
  std::cout << "ok: " << split.records.size() << " image(s), " << instances
            << " instance(s), digest " << digest_hex(dataset_digest(split)) << "\n";
  return 0;
}

void add_config_options(CLI::App* cmd, std::string& config_path,
                        std::vector<std::string>& overrides) {
  cmd->add_option("--config", config_path, "Run configuration file");
  cmd->add_option("--set", overrides, "Override a config key, as key=value")
      ->type_name("KEY=VALUE");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Crack instance segmentation: training, evaluation and inference"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* cmd_train = app.add_subcommand("train", "Train a detector");
  add_config_options(cmd_train, train_args.config_path, train_args.overrides);
  cmd_train->add_option("--data", train_args.data, "Annotation file")->required();
  cmd_train->add_option("--images", train_args.images, "Image root directory")->required();
  cmd_train->add_option("--val-data", train_args.val_data,
                        "Separate validation annotation file; without it the training file is "
                        "split by the configured fractions");
  cmd_train->add_option("--val-images", train_args.val_images,
                        "Image root for --val-data, defaults to --images");
  cmd_train->add_option("--out", train_args.out_dir, "Output directory")->required();
  cmd_train->add_option("--resume", train_args.resume, "Checkpoint to continue from");

  EvaluateArgs eval_args;
  auto* cmd_eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  add_config_options(cmd_eval, eval_args.config_path, eval_args.overrides);
  cmd_eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  cmd_eval->add_option("--data", eval_args.data, "Annotation file")->required();
  cmd_eval->add_option("--images", eval_args.images, "Image root directory")->required();
  cmd_eval->add_option("--split", eval_args.split, "Portion to evaluate")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  cmd_eval->add_option("--out", eval_args.out_path, "Write the evaluation JSON here instead of "
                                                    "standard output");

  InferArgs infer_args;
  auto* cmd_infer = app.add_subcommand("infer", "Run detection on images");
  add_config_options(cmd_infer, infer_args.config_path, infer_args.overrides);
  cmd_infer->add_option("--checkpoint", infer_args.checkpoint, "Checkpoint file")->required();
  cmd_infer->add_option("--out", infer_args.out_dir, "Output directory")->required();
  cmd_infer->add_option("images", infer_args.images, "Images to process")->required();

  ReportArgs report_args;
  auto* cmd_report = app.add_subcommand("report", "Format stored evaluations as tables");
  cmd_report->add_option("--from", report_args.from, "Evaluation JSON file, repeatable")
      ->required();
  cmd_report->add_option("--out", report_args.out_path, "Write the table here instead of "
                                                        "standard output");

  ValidateArgs validate_args;
  auto* cmd_validate = app.add_subcommand("validate-data", "Check an annotation file");
  cmd_validate->add_option("--data", validate_args.data, "Annotation file")->required();
  cmd_validate->add_option("--images", validate_args.images, "Image root directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (cmd_train->parsed()) return run_train(train_args);
    if (cmd_eval->parsed()) return run_evaluate(eval_args);
    if (cmd_infer->parsed()) return run_infer(infer_args);
    if (cmd_report->parsed()) return run_report(report_args);
    return run_validate(validate_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace crackseg

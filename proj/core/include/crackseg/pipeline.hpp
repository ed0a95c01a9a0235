#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crackseg/checkpoint.hpp"
#include "crackseg/config.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/detector.hpp"
#include "crackseg/report.hpp"

namespace crackseg {

// One decoded training or evaluation image. The image tensor and the masks
// are zero-padded on the bottom and right so both dimensions divide the
// coarsest backbone stride; boxes stay in the original pixel frame.
struct PreparedSample {
  ImageRecord record;
  Tensor image;
  std::vector<Mask> masks;
  std::vector<Box> boxes;
};

std::vector<PreparedSample> prepare_samples(const DatasetSplit& split);

// Runs the detector on the padded image, then clips boxes and crops masks
// back to the record's true width and height.
std::vector<Detection> predict_record(const Detector& detector, const PreparedSample& sample,
                                      const InferenceConfig& cfg);

// Rescales all gradients so their global L2 norm is at most clip_norm;
// clip_norm <= 0 leaves them untouched. Parameters without a gradient from
// the current backward pass are skipped.
void clip_gradients(nn::ParamStore& params, double clip_norm);

// Momentum update with weight decay folded into the gradient:
// v = momentum*v + (grad + weight_decay*value), value -= lr*v. Parameters
// without a gradient contribute only their decay term.
void sgd_step(nn::ParamStore& params, std::map<std::string, Tensor>& velocity, double lr,
              double momentum, double weight_decay);

struct EpochStats {
  int64_t epoch = 0;
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;
  double head_class = 0.0;
  double head_box = 0.0;
  double mask = 0.0;
  double total = 0.0;
  std::optional<double> val_box_ap;
  std::optional<double> val_mask_ap;
  std::optional<double> val_mask_ap50;
  double wall_seconds = 0.0;
};

struct TrainResult {
  int64_t epochs_run = 0;
  std::optional<double> best_val_mask_ap;
  int64_t best_epoch = 0;
  std::string last_checkpoint_path;
  std::string best_checkpoint_path;
  std::vector<EpochStats> history;
};

// Full training run: deterministic for a fixed config, writes last.ckpt after
// every epoch, best.ckpt whenever the validation mask AP improves, and
// appends one structured line per epoch to train_log.jsonl under out_dir.
// A nonempty resume_from continues from that checkpoint; its config digest
// must match. An empty validation split skips per-epoch evaluation.
TrainResult train(const RunConfig& config, const DatasetSplit& train_split,
                  const DatasetSplit& val_split, const std::string& out_dir,
                  const std::string& resume_from = "");

// Copies every model parameter array out of the checkpoint into the detector,
// refusing unknown names, missing names and shape mismatches. Entries under
// "opt/" and "meta/" are ignored here.
void restore_parameters(const Checkpoint& ckpt, Detector& detector);

// Builds a detector from the config, then loads the checkpoint into it after
// verifying the config digest.
Detector detector_from_checkpoint(const RunConfig& config, const std::string& checkpoint_path);

EvalResult evaluate_split(const Detector& detector, const DatasetSplit& split,
                          const InferenceConfig& cfg, const std::string& method);

struct InferResult {
  int64_t processed = 0;
  // One "path: reason" entry per image that could not be read.
  std::vector<std::string> failures;
};

// Writes <stem>.json (boxes, scores, run-length masks) and <stem>_overlay.png
// per readable image into out_dir. Unreadable images are collected in the
// result instead of aborting the batch.
InferResult infer(const Detector& detector, const std::vector<std::string>& image_paths,
                  const InferenceConfig& cfg, const std::string& out_dir);

}  // namespace crackseg

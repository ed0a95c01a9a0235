#include "crackseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crackseg/errors.hpp"
#include "crackseg/image_io.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

using json = nlohmann::ordered_json;

namespace {

constexpr int64_t kPadStride = 32;
constexpr uint64_t kOrderPurpose = 0x4F52444552ull;
constexpr uint64_t kAugmentPurpose = 0x415547ull;

int64_t round_up(int64_t v, int64_t multiple) { return (v + multiple - 1) / multiple * multiple; }

Tensor pad_image(const Tensor& image) {
  const int64_t c = image.size(0), h = image.size(1), w = image.size(2);
  const int64_t ph = round_up(h, kPadStride), pw = round_up(w, kPadStride);
  if (ph == h && pw == w) return image;
  Tensor out({c, ph, pw});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t col = 0; col < w; ++col) out.at3(ch, r, col) = image.at3(ch, r, col);
  return out;
}

Mask resize_canvas(const Mask& m, int64_t height, int64_t width) {
  Mask out(height, width);
  const int64_t h = std::min(height, m.height()), w = std::min(width, m.width());
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) out.at(r, c) = m.at(r, c);
  return out;
}

Sample pad_sample(Sample s) {
  const int64_t h = s.image.size(1), w = s.image.size(2);
  const int64_t ph = round_up(h, kPadStride), pw = round_up(w, kPadStride);
  if (ph == h && pw == w) return s;
  s.image = pad_image(s.image);
  for (auto& m : s.masks) m = resize_canvas(m, ph, pw);
  return s;
}

Sample to_sample(const PreparedSample& p) {
  Sample s;
  s.image = p.image;
  s.masks = p.masks;
  s.boxes = p.boxes;
  s.scene_level = p.record.scene_level;
  return s;
}

// Drops the padding margin from predictions: boxes are clipped to the true
// frame and masks cropped to it.
std::vector<Detection> clip_to_frame(std::vector<Detection> detections, int64_t width,
                                     int64_t height) {
  std::vector<Detection> out;
  out.reserve(detections.size());
  for (auto& d : detections) {
    const Box clipped = clip_box(d.box, static_cast<double>(width), static_cast<double>(height));
    if (clipped.degenerate()) continue;
    Detection kept;
    kept.box = clipped;
    kept.score = d.score;
    kept.raw_mask = std::move(d.raw_mask);
    kept.mask = (d.mask.height() == height && d.mask.width() == width)
                    ? std::move(d.mask)
                    : resize_canvas(d.mask, height, width);
    out.push_back(std::move(kept));
  }
  return out;
}

std::string join_ids(const std::vector<int64_t>& ids) {
  std::ostringstream out;
  for (size_t i = 0; i < ids.size(); ++i) out << (i ? ", " : "") << ids[i];
  return out.str();
}

Checkpoint snapshot(const Detector& detector, const std::map<std::string, Tensor>& velocity,
                    int64_t epoch, uint64_t digest, double best_ap, int64_t best_epoch) {
  Checkpoint ckpt;
  ckpt.config_digest = digest;
  ckpt.epoch = epoch;
  for (const auto& [name, node] : detector.params().items())
    ckpt.arrays.emplace_back(name, node->value);
  for (const auto& [name, node] : detector.params().items())
    ckpt.arrays.emplace_back("opt/" + name, velocity.at(name));
  ckpt.arrays.emplace_back("meta/best_ap", Tensor::scalar(best_ap));
  ckpt.arrays.emplace_back("meta/best_epoch", Tensor::scalar(static_cast<double>(best_epoch)));
  return ckpt;
}

json epoch_line(const EpochStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["epoch"] = s.epoch;
  j["rpn_objectness"] = s.rpn_objectness;
  j["rpn_box"] = s.rpn_box;
  j["head_class"] = s.head_class;
  j["head_box"] = s.head_box;
  j["mask"] = s.mask;
  j["total"] = s.total;
  j["val_box_ap"] = opt(s.val_box_ap);
  j["val_mask_ap"] = opt(s.val_mask_ap);
  j["val_mask_ap50"] = opt(s.val_mask_ap50);
  j["wall_seconds"] = s.wall_seconds;
  return j;
}

}  // namespace

void clip_gradients(nn::ParamStore& params, double clip_norm) {
  if (clip_norm <= 0) return;
  double sq = 0.0;
  for (const auto& [name, node] : params.items()) {
    if (node->grad.numel() != node->value.numel()) continue;
    for (int64_t i = 0; i < node->grad.numel(); ++i) sq += node->grad[i] * node->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const double scale = clip_norm / norm;
  for (const auto& [name, node] : params.items()) {
    if (node->grad.numel() != node->value.numel()) continue;
    for (int64_t i = 0; i < node->grad.numel(); ++i) node->grad[i] *= scale;
  }
}

void sgd_step(nn::ParamStore& params, std::map<std::string, Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
  for (const auto& [name, node] : params.items()) {
    Tensor& v = velocity.at(name);
    Tensor& value = node->value;
    const int64_t n = value.numel();
    const bool has_grad = node->grad.numel() == n;
    for (int64_t i = 0; i < n; ++i) {
      const double g = (has_grad ? node->grad[i] : 0.0) + weight_decay * value[i];
      v[i] = momentum * v[i] + g;
      value[i] -= lr * v[i];
    }
  }
}

std::vector<PreparedSample> prepare_samples(const DatasetSplit& split) {
  std::vector<PreparedSample> out;
  out.reserve(split.records.size());
  for (const auto& record : split.records) {
    Tensor image = load_image_rgb(split.image_path(record));
    if (image.size(1) != record.height || image.size(2) != record.width)
      throw ValidationError("image " + record.file_path + " decodes to " +
                            std::to_string(image.size(2)) + "x" + std::to_string(image.size(1)) +
                            " but the annotation says " + std::to_string(record.width) + "x" +
                            std::to_string(record.height));
    PreparedSample p;
    p.record = record;
    p.image = pad_image(image);
    const int64_t ph = p.image.size(1), pw = p.image.size(2);
    if (const auto* anns = split.annotations_for(record.id)) {
      for (const auto& ann : *anns) {
        p.masks.push_back(rasterize_mask(ann, pw, ph));
        p.boxes.push_back(ann.bbox);
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Detection> predict_record(const Detector& detector, const PreparedSample& sample,
                                      const InferenceConfig& cfg) {
  auto detections = detector.predict(sample.image, cfg);
  if (sample.image.size(1) == sample.record.height && sample.image.size(2) == sample.record.width)
    return detections;
  return clip_to_frame(std::move(detections), sample.record.width, sample.record.height);
}

void restore_parameters(const Checkpoint& ckpt, Detector& detector) {
  const auto& params = detector.params();
  for (const auto& [name, tensor] : ckpt.arrays) {
    if (name.rfind("opt/", 0) == 0 || name.rfind("meta/", 0) == 0) continue;
    if (!params.contains(name)) throw ValidationError("checkpoint has unknown parameter: " + name);
  }
  for (const auto& [name, node] : params.items()) {
    const Tensor* stored = ckpt.find(name);
    if (!stored) throw ValidationError("checkpoint is missing parameter: " + name);
    if (!stored->same_shape(node->value))
      throw ValidationError("checkpoint shape mismatch for parameter: " + name);
    node->value = *stored;
  }
}

Detector detector_from_checkpoint(const RunConfig& config, const std::string& checkpoint_path) {
  config.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const uint64_t digest = config_digest(config);
  if (ckpt.config_digest != digest)
    throw ValidationError("checkpoint digest " + digest_hex(ckpt.config_digest) +
                          " does not match config digest " + digest_hex(digest));
  Detector detector(config.backbone, config.heads, config.seed);
  restore_parameters(ckpt, detector);
  return detector;
}

TrainResult train(const RunConfig& config, const DatasetSplit& train_split,
                  const DatasetSplit& val_split, const std::string& out_dir,
                  const std::string& resume_from) {
  config.validate();
  if (train_split.records.empty()) throw ValidationError("training split is empty");
  std::filesystem::create_directories(out_dir);

  const uint64_t digest = config_digest(config);
  Detector detector(config.backbone, config.heads, config.seed);

  std::map<std::string, Tensor> velocity;
  for (const auto& [name, node] : detector.params().items())
    velocity.emplace(name, Tensor(node->value.shape()));

  int64_t start_epoch = 1;
  double best_ap = -1.0;
  int64_t best_epoch = 0;

  if (!resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_from);
    if (ckpt.config_digest != digest)
      throw ValidationError("cannot resume: checkpoint digest " + digest_hex(ckpt.config_digest) +
                            " does not match config digest " + digest_hex(digest));
    restore_parameters(ckpt, detector);
    for (auto& [name, v] : velocity) {
      const Tensor* stored = ckpt.find("opt/" + name);
      if (!stored) throw ValidationError("checkpoint is missing optimizer state for: " + name);
      if (!stored->same_shape(v))
        throw ValidationError("checkpoint optimizer shape mismatch for: " + name);
      v = *stored;
    }
    if (const Tensor* t = ckpt.find("meta/best_ap")) best_ap = (*t)[0];
    if (const Tensor* t = ckpt.find("meta/best_epoch"))
      best_epoch = static_cast<int64_t>(std::llround((*t)[0]));
    start_epoch = ckpt.epoch + 1;
  }

  const auto prepared = prepare_samples(train_split);
  const AugmentPolicy policy = config.augment_policy();
  const std::string method = to_string(config.backbone.kind);

  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
  if (!log) throw std::runtime_error("cannot open train log under " + out_dir);
  json echo;
  echo["config"] = to_config_text(config);
  log << echo.dump() << "\n" << std::flush;

  TrainResult result;
  result.last_checkpoint_path = out_dir + "/last.ckpt";
  result.best_checkpoint_path = out_dir + "/best.ckpt";

  const auto batch_size = static_cast<size_t>(config.batch_size);
  for (int64_t epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();

    std::vector<size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng order_rng(derive_seed(config.seed, kOrderPurpose, static_cast<uint64_t>(epoch)));
    order_rng.shuffle(order);

    EpochStats stats;
    stats.epoch = epoch;

    for (size_t begin = 0; begin < order.size(); begin += batch_size) {
      const size_t end = std::min(order.size(), begin + batch_size);
      detector.params().zero_grads();
      nn::Graph g(true);
      std::vector<nn::NodePtr> totals;
      std::vector<int64_t> batch_ids;
      bool finite = true;
      for (size_t i = begin; i < end; ++i) {
        const PreparedSample& p = prepared[order[i]];
        batch_ids.push_back(p.record.id);
        Rng rng(derive_seed(config.seed, kAugmentPurpose, static_cast<uint64_t>(epoch), order[i]));
        Sample s = pad_sample(apply(policy, to_sample(p), rng));
        const TrainingLosses losses = detector.compute_losses(g, s, rng);
        const double total = losses.total->value[0];
        finite = finite && std::isfinite(total);
        totals.push_back(losses.total);
        stats.rpn_objectness += losses.rpn_objectness;
        stats.rpn_box += losses.rpn_box;
        stats.head_class += losses.head_class;
        stats.head_box += losses.head_box;
        stats.mask += losses.mask;
        stats.total += total;
      }
      if (!finite)
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                 " on images " + join_ids(batch_ids));
      const auto in_batch = static_cast<double>(end - begin);
      g.backward(g.mul_scalar(g.add_n(totals), 1.0 / in_batch));
      clip_gradients(detector.params(), config.clip_norm);
      sgd_step(detector.params(), velocity, config.lr, config.momentum, config.weight_decay);
    }

    const auto seen = static_cast<double>(prepared.size());
    stats.rpn_objectness /= seen;
    stats.rpn_box /= seen;
    stats.head_class /= seen;
    stats.head_box /= seen;
    stats.mask /= seen;
    stats.total /= seen;

    if (!val_split.records.empty()) {
      const EvalResult val = evaluate_split(detector, val_split, config.inference, method);
      stats.val_box_ap = val.box_ap.ap;
      stats.val_mask_ap = val.mask_ap.ap;
      stats.val_mask_ap50 = val.mask_ap.ap50;
    }

    const bool improved = stats.val_mask_ap.has_value() && *stats.val_mask_ap > best_ap;
    if (improved) {
      best_ap = *stats.val_mask_ap;
      best_epoch = epoch;
    }
    const Checkpoint snap = snapshot(detector, velocity, epoch, digest, best_ap, best_epoch);
    save_checkpoint(snap, result.last_checkpoint_path);
    if (improved) save_checkpoint(snap, result.best_checkpoint_path);

    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log << epoch_line(stats).dump() << "\n" << std::flush;
    result.history.push_back(stats);
  }

  result.epochs_run = static_cast<int64_t>(result.history.size());
  result.best_epoch = best_epoch;
  if (best_ap >= 0.0) result.best_val_mask_ap = best_ap;
  return result;
}

EvalResult evaluate_split(const Detector& detector, const DatasetSplit& split,
                          const InferenceConfig& cfg, const std::string& method) {
  if (split.records.empty()) throw ValidationError("cannot evaluate an empty split");
  const auto prepared = prepare_samples(split);

  std::vector<std::vector<EvalDetection>> detections;
  std::vector<std::vector<EvalGroundTruth>> ground_truth;
  std::map<int64_t, std::vector<double>> scores;
  std::map<int64_t, bool> has_crack;

  for (const auto& p : prepared) {
    auto predicted = predict_record(detector, p, cfg);
    std::vector<EvalDetection> drow;
    std::vector<double> srow;
    drow.reserve(predicted.size());
    for (auto& d : predicted) {
      srow.push_back(d.score);
      drow.emplace_back(d.box, d.score, std::move(d.mask));
    }
    std::vector<EvalGroundTruth> grow;
    if (const auto* anns = split.annotations_for(p.record.id)) {
      grow.reserve(anns->size());
      for (const auto& ann : *anns)
        grow.emplace_back(ann.bbox, rasterize_mask(ann, p.record.width, p.record.height));
    }
    has_crack[p.record.id] = !grow.empty();
    scores[p.record.id] = std::move(srow);
    detections.push_back(std::move(drow));
    ground_truth.push_back(std::move(grow));
  }

  EvalResult result;
  result.method = method;
  result.split = to_string(split.name);
  result.dataset_digest = dataset_digest(split);
  result.images = static_cast<int64_t>(prepared.size());
  result.score_threshold = cfg.score_threshold;
  result.mask_threshold = cfg.mask_threshold;
  result.box_ap = coco_ap(detections, ground_truth, ApVariant::box);
  result.mask_ap = coco_ap(detections, ground_truth, ApVariant::mask);
  result.counts = confusion(scores, has_crack, cfg.score_threshold);
  result.rates = prf_accuracy(result.counts);
  return result;
}

InferResult infer(const Detector& detector, const std::vector<std::string>& image_paths,
                  const InferenceConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  InferResult result;
  std::set<std::string> used;
  for (const auto& path : image_paths) {
    Tensor image;
    try {
      image = load_image_rgb(path);
    } catch (const std::exception& e) {
      result.failures.push_back(path + ": " + e.what());
      continue;
    }
    const int64_t h = image.size(1), w = image.size(2);
    auto detections = clip_to_frame(detector.predict(pad_image(image), cfg), w, h);

    std::string stem = std::filesystem::path(path).stem().string();
    if (stem.empty()) stem = "image";
    std::string name = stem;
    for (int suffix = 2; !used.insert(name).second; ++suffix)
      name = stem + "_" + std::to_string(suffix);

    const std::string record_path = out_dir + "/" + name + ".json";
    std::ofstream record(record_path, std::ios::binary | std::ios::trunc);
    if (!record) throw std::runtime_error("cannot write detection record: " + record_path);
    record << detection_record_json(path, w, h, detections);
    save_image_rgb(render_overlay(image, detections), out_dir + "/" + name + "_overlay.png");
    ++result.processed;
  }
  return result;
}

}  // namespace crackseg

#include "crackseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "crackseg/errors.hpp"

namespace crackseg {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("not a number: '" + s + "'");
  return v;
}

int64_t parse_i64(const std::string& s) {
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("not an integer: '" + s + "'");
  return v;
}

uint64_t parse_u64(const std::string& s) {
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("not an unsigned integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError("not a boolean: '" + s + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a == std::string::npos) throw ValidationError("empty list element in '" + s + "'");
    out.push_back(parse_double(item.substr(a, b - a + 1)));
  }
  if (out.empty()) throw ValidationError("empty list: '" + s + "'");
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

struct Entry {
  const char* section;
  const char* name;
  bool in_digest;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"model", "backbone", true,
       [](RunConfig& c, const std::string& v) { c.backbone.kind = backbone_kind_from_string(v); },
       [](const RunConfig& c) { return to_string(c.backbone.kind); }},
      {"model", "base_channels", true,
       [](RunConfig& c, const std::string& v) {
         c.backbone.base_channels = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.base_channels); }},
      {"model", "depth", true,
       [](RunConfig& c, const std::string& v) { c.backbone.depth = static_cast<int>(parse_i64(v)); },
       [](const RunConfig& c) { return std::to_string(c.backbone.depth); }},
      {"model", "out_channels", true,
       [](RunConfig& c, const std::string& v) {
         c.backbone.out_channels = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.backbone.out_channels); }},
      {"model", "attention", true,
       [](RunConfig& c, const std::string& v) { c.backbone.attention_enabled = parse_bool(v); },
       [](const RunConfig& c) { return c.backbone.attention_enabled ? "true" : "false"; }},
      {"model", "anchor_scales", true,
       [](RunConfig& c, const std::string& v) { c.heads.anchor_scales = parse_list(v); },
       [](const RunConfig& c) { return fmt_list(c.heads.anchor_scales); }},
      {"model", "anchor_ratios", true,
       [](RunConfig& c, const std::string& v) { c.heads.anchor_ratios = parse_list(v); },
       [](const RunConfig& c) { return fmt_list(c.heads.anchor_ratios); }},
      {"model", "roi_output_size", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.roi_output_size = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.roi_output_size); }},
      {"model", "mask_roi_size", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.mask_roi_size = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.mask_roi_size); }},
      {"model", "mask_grid", true,
       [](RunConfig& c, const std::string& v) { c.heads.mask_grid = static_cast<int>(parse_i64(v)); },
       [](const RunConfig& c) { return std::to_string(c.heads.mask_grid); }},
      {"model", "samples_per_bin", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.samples_per_bin = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.samples_per_bin); }},
      {"model", "head_fc_dim", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.head_fc_dim = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.head_fc_dim); }},
      {"model", "rpn_pre_nms", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.rpn_pre_nms = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.rpn_pre_nms); }},
      {"model", "rpn_post_nms", true,
       [](RunConfig& c, const std::string& v) {
         c.heads.rpn_post_nms = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.heads.rpn_post_nms); }},
      {"model", "rpn_nms_iou", true,
       [](RunConfig& c, const std::string& v) { c.heads.rpn_nms_iou = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.heads.rpn_nms_iou); }},
      {"train", "lr", true,
       [](RunConfig& c, const std::string& v) { c.lr = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.lr); }},
      {"train", "momentum", true,
       [](RunConfig& c, const std::string& v) { c.momentum = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.momentum); }},
      {"train", "weight_decay", true,
       [](RunConfig& c, const std::string& v) { c.weight_decay = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.weight_decay); }},
      {"train", "clip_norm", true,
       [](RunConfig& c, const std::string& v) { c.clip_norm = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.clip_norm); }},
      {"train", "epochs", true,
       [](RunConfig& c, const std::string& v) { c.epochs = static_cast<int>(parse_i64(v)); },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"train", "batch_size", true,
       [](RunConfig& c, const std::string& v) { c.batch_size = static_cast<int>(parse_i64(v)); },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},
      {"train", "seed", true,
       [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"infer", "score_threshold", false,
       [](RunConfig& c, const std::string& v) { c.inference.score_threshold = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.inference.score_threshold); }},
      {"infer", "mask_threshold", false,
       [](RunConfig& c, const std::string& v) { c.inference.mask_threshold = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.inference.mask_threshold); }},
      {"infer", "nms_iou", false,
       [](RunConfig& c, const std::string& v) { c.inference.nms_iou = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.inference.nms_iou); }},
      {"infer", "max_detections", false,
       [](RunConfig& c, const std::string& v) {
         c.inference.max_detections = static_cast<int>(parse_i64(v));
       },
       [](const RunConfig& c) { return std::to_string(c.inference.max_detections); }},
      {"augment", "hflip", true,
       [](RunConfig& c, const std::string& v) { c.hflip = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.hflip); }},
      {"augment", "vflip", true,
       [](RunConfig& c, const std::string& v) { c.vflip = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.vflip); }},
      {"augment", "rotate90", true,
       [](RunConfig& c, const std::string& v) { c.rotate90 = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.rotate90); }},
      {"augment", "crop", true,
       [](RunConfig& c, const std::string& v) { c.crop = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.crop); }},
      {"augment", "crop_min_fraction", true,
       [](RunConfig& c, const std::string& v) { c.crop_min_fraction = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.crop_min_fraction); }},
      {"data", "train_fraction", true,
       [](RunConfig& c, const std::string& v) { c.train_fraction = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.train_fraction); }},
      {"data", "val_fraction", true,
       [](RunConfig& c, const std::string& v) { c.val_fraction = parse_double(v); },
       [](const RunConfig& c) { return fmt_double(c.val_fraction); }},
  };
  return table;
}

const Entry* find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (key == e.name) return &e;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  heads.validate();
  if (!(lr > 0)) throw ValidationError("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ValidationError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be >= 0");
  if (!(clip_norm >= 0)) throw ValidationError("clip_norm must be >= 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(inference.score_threshold >= 0 && inference.score_threshold <= 1))
    throw ValidationError("score_threshold must be in [0, 1]");
  if (!(inference.mask_threshold >= 0 && inference.mask_threshold <= 1))
    throw ValidationError("mask_threshold must be in [0, 1]");
  if (!(inference.nms_iou >= 0 && inference.nms_iou <= 1))
    throw ValidationError("nms_iou must be in [0, 1]");
  if (inference.max_detections < 1) throw ValidationError("max_detections must be >= 1");
  for (double p : {hflip, vflip, rotate90, crop})
    if (!(p >= 0 && p <= 1)) throw ValidationError("augment probabilities must be in [0, 1]");
  if (!(crop_min_fraction > 0 && crop_min_fraction <= 1))
    throw ValidationError("crop_min_fraction must be in (0, 1]");
  if (!(train_fraction > 0 && val_fraction > 0))
    throw ValidationError("split fractions must be positive");
  if (train_fraction + val_fraction > 1.0 + 1e-9)
    throw ValidationError("train_fraction + val_fraction must be <= 1");
}

AugmentPolicy RunConfig::augment_policy() const {
  AugmentPolicy policy;
  policy.ops = {{AugmentKind::hflip, hflip, 1.0},
                {AugmentKind::vflip, vflip, 1.0},
                {AugmentKind::rotate90, rotate90, 1.0},
                {AugmentKind::random_crop, crop, crop_min_fraction}};
  return policy;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError("line " + std::to_string(line_no) + ": malformed section header");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Entry* entry = find_entry(key);
    if (!entry)
      throw ValidationError("line " + std::to_string(line_no) + ": unknown config key '" + key +
                            "'");
    for (const auto& s : seen)
      if (s == key)
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate config key '" +
                              key + "'");
    seen.push_back(key);
    try {
      entry->set(config, value);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": key '" + key + "': " +
                            e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(RunConfig& config, const std::string& key_equals_value) {
  const auto eq = key_equals_value.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override '" + key_equals_value + "' is not of the form key=value");
  const std::string key = trim(key_equals_value.substr(0, eq));
  const std::string value = trim(key_equals_value.substr(eq + 1));
  const Entry* entry = find_entry(key);
  if (!entry) throw ValidationError("unknown config key '" + key + "'");
  entry->set(config, value);
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  const char* current_section = "";
  for (const auto& e : entries()) {
    if (std::string(current_section) != e.section) {
      if (!out.empty()) out += "\n";
      out += "[" + std::string(e.section) + "]\n";
      current_section = e.section;
    }
    out += std::string(e.name) + " = " + e.get(config) + "\n";
  }
  return out;
}

uint64_t config_digest(const RunConfig& config) {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries()) {
    if (!e.in_digest) continue;
    feed(e.name);
    feed("=");
    feed(e.get(config));
    feed("\n");
  }
  return h;
}

}  // namespace crackseg

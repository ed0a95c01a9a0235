#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crackseg/augment.hpp"
#include "crackseg/backbones.hpp"
#include "crackseg/detector.hpp"

namespace crackseg {

// Every experiment knob in one place. The text form is a flat key = value
// file; [section] headers are allowed for readability and carry no meaning,
// since key names are globally unique.
struct RunConfig {
  BackboneConfig backbone;
  HeadConfig heads;

  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  // Global gradient-norm cap applied before the momentum update; 0 disables.
  double clip_norm = 0.0;
  int epochs = 100;
  int batch_size = 2;
  uint64_t seed = 1;

  InferenceConfig inference;

  double hflip = 0.5;
  double vflip = 0.0;
  double rotate90 = 0.0;
  double crop = 0.0;
  double crop_min_fraction = 0.5;

  double train_fraction = 0.8;
  double val_fraction = 0.1;

  void validate() const;
  AugmentPolicy augment_policy() const;
};

// Parses the flat key = value text form, rejecting unknown and duplicate
// keys. Line numbers appear in error messages.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies one "key=value" override onto an existing config; unknown keys are
// rejected by name.
void apply_override(RunConfig& config, const std::string& key_equals_value);

// Canonical text form; parse_config_text(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

// Digest over everything that shapes training. Inference-only settings
// (score/mask thresholds, NMS IoU, detection cap) are excluded so resuming
// with different reporting thresholds stays legal.
uint64_t config_digest(const RunConfig& config);

}  // namespace crackseg

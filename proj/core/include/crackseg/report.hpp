#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crackseg/heads.hpp"
#include "crackseg/metrics.hpp"

namespace crackseg {

// One evaluation run over one split: both AP variants plus the image-level
// confusion and derived rates.
struct EvalResult {
  std::string method;
  std::string split;
  uint64_t dataset_digest = 0;
  int64_t images = 0;
  double score_threshold = 0.0;
  double mask_threshold = 0.0;
  ApReport box_ap;
  ApReport mask_ap;
  ConfusionCounts counts;
  PrfAccuracy rates;
};

std::string eval_json_text(const EvalResult& result);
void write_eval_json(const EvalResult& result, const std::string& path);
EvalResult read_eval_json(const std::string& path);

// Fixed-width AP table (both variants) followed by the accuracy, recall and
// precision table. Byte-stable for fixed input.
std::string format_eval_tables(const EvalResult& result);

// One row per evaluation, same layout. Inputs must share a dataset digest;
// mismatches are refused naming the offending digests.
std::string format_comparison(const std::vector<EvalResult>& results);

// Machine-readable per-image detection record: boxes, scores, and
// run-length-encoded masks.
std::string detection_record_json(const std::string& image_path, int64_t width, int64_t height,
                                  const std::vector<Detection>& detections);

std::string digest_hex(uint64_t digest);

}  // namespace crackseg

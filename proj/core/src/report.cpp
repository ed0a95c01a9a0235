#include "crackseg/report.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crackseg/errors.hpp"
#include "crackseg/rle.hpp"

namespace crackseg {

using json = nlohmann::ordered_json;

namespace {

json ap_to_json(const ApReport& ap) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  json j;
  j["ap"] = ap.ap;
  j["ap50"] = ap.ap50;
  j["ap75"] = ap.ap75;
  j["ap_s"] = opt(ap.ap_s);
  j["ap_m"] = opt(ap.ap_m);
  j["ap_l"] = opt(ap.ap_l);
  return j;
}

ApReport ap_from_json(const json& j, ApVariant variant) {
  ApReport ap;
  ap.variant = variant;
  ap.ap = j.at("ap").get<double>();
  ap.ap50 = j.at("ap50").get<double>();
  ap.ap75 = j.at("ap75").get<double>();
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  ap.ap_s = opt("ap_s");
  ap.ap_m = opt("ap_m");
  ap.ap_l = opt("ap_l");
  return ap;
}

std::string cell(const std::optional<double>& v) {
  char buf[16];
  if (v)
    std::snprintf(buf, sizeof buf, "%8.1f", *v);
  else
    std::snprintf(buf, sizeof buf, "%8s", "-");
  return buf;
}

std::string pct_cell(const std::optional<double>& v) {
  char buf[16];
  if (v)
    std::snprintf(buf, sizeof buf, "%9.1f%%", 100.0 * *v);
  else
    std::snprintf(buf, sizeof buf, "%10s", "-");
  return buf;
}

void append_ap_row(std::string& out, const std::string& method, const ApReport& ap) {
  char head[64];
  std::snprintf(head, sizeof head, "%-20s %-7s", method.c_str(), to_string(ap.variant).c_str());
  out += head;
  out += cell(ap.ap);
  out += cell(ap.ap50);
  out += cell(ap.ap75);
  out += cell(ap.ap_s);
  out += cell(ap.ap_m);
  out += cell(ap.ap_l);
  out += "\n";
}

void append_rate_row(std::string& out, const std::string& method, const EvalResult& r) {
  char head[64];
  std::snprintf(head, sizeof head, "%-20s", method.c_str());
  out += head;
  out += pct_cell(r.rates.accuracy);
  out += pct_cell(r.rates.recall);
  out += pct_cell(r.rates.precision);
  char counts[80];
  std::snprintf(counts, sizeof counts, " %6" PRId64 " %6" PRId64 " %6" PRId64 " %6" PRId64,
                r.counts.tp, r.counts.fp, r.counts.fn, r.counts.tn);
  out += counts;
  out += "\n";
}

std::string tables_for(const std::vector<EvalResult>& results) {
  std::string out;
  char head[128];
  std::snprintf(head, sizeof head, "%-20s %-7s%8s%8s%8s%8s%8s%8s\n", "Method", "Variant", "AP",
                "AP50", "AP75", "APS", "APM", "APL");
  out += head;
  for (const auto& r : results) {
    append_ap_row(out, r.method, r.box_ap);
    append_ap_row(out, r.method, r.mask_ap);
  }
  out += "\n";
  std::snprintf(head, sizeof head, "%-20s%10s%10s%10s %6s %6s %6s %6s\n", "Method", "Accuracy",
                "Recall", "Precision", "TP", "FP", "FN", "TN");
  out += head;
  for (const auto& r : results) append_rate_row(out, r.method, r);
  return out;
}

}  // namespace

std::string digest_hex(uint64_t digest) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, digest);
  return buf;
}

std::string eval_json_text(const EvalResult& result) {
  json j;
  j["method"] = result.method;
  j["split"] = result.split;
  j["dataset_digest"] = digest_hex(result.dataset_digest);
  j["images"] = result.images;
  j["score_threshold"] = result.score_threshold;
  j["mask_threshold"] = result.mask_threshold;
  j["ap"] = json{{"box", ap_to_json(result.box_ap)}, {"mask", ap_to_json(result.mask_ap)}};
  j["confusion"] = json{{"tp", result.counts.tp},
                        {"fp", result.counts.fp},
                        {"fn", result.counts.fn},
                        {"tn", result.counts.tn}};
  j["rates"] = json{
      {"accuracy", result.rates.accuracy},
      {"recall", result.rates.recall ? json(*result.rates.recall) : json(nullptr)},
      {"precision", result.rates.precision ? json(*result.rates.precision) : json(nullptr)}};
  return j.dump(2) + "\n";
}

void write_eval_json(const EvalResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << eval_json_text(result);
}

EvalResult read_eval_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open report: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path + " at byte " + std::to_string(e.byte) + ": " +
                          e.what());
  }
  try {
    EvalResult r;
    r.method = j.at("method").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.dataset_digest = std::stoull(j.at("dataset_digest").get<std::string>(), nullptr, 16);
    r.images = j.at("images").get<int64_t>();
    r.score_threshold = j.at("score_threshold").get<double>();
    r.mask_threshold = j.at("mask_threshold").get<double>();
    r.box_ap = ap_from_json(j.at("ap").at("box"), ApVariant::box);
    r.mask_ap = ap_from_json(j.at("ap").at("mask"), ApVariant::mask);
    r.counts.tp = j.at("confusion").at("tp").get<int64_t>();
    r.counts.fp = j.at("confusion").at("fp").get<int64_t>();
    r.counts.fn = j.at("confusion").at("fn").get<int64_t>();
    r.counts.tn = j.at("confusion").at("tn").get<int64_t>();
    r.rates.accuracy = j.at("rates").at("accuracy").get<double>();
    if (!j.at("rates").at("recall").is_null())
      r.rates.recall = j.at("rates").at("recall").get<double>();
    if (!j.at("rates").at("precision").is_null())
      r.rates.precision = j.at("rates").at("precision").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed report " + path + ": " + e.what());
  }
}

std::string format_eval_tables(const EvalResult& result) { return tables_for({result}); }

std::string format_comparison(const std::vector<EvalResult>& results) {
  if (results.empty()) throw ValidationError("comparison needs at least one evaluation");
  for (const auto& r : results)
    if (r.dataset_digest != results[0].dataset_digest)
      throw ValidationError("evaluations cover different datasets: digest " +
                            digest_hex(results[0].dataset_digest) + " vs " +
                            digest_hex(r.dataset_digest));
  return tables_for(results);
}

std::string detection_record_json(const std::string& image_path, int64_t width, int64_t height,
                                  const std::vector<Detection>& detections) {
  json j;
  j["image"] = image_path;
  j["width"] = width;
  j["height"] = height;
  j["detections"] = json::array();
  for (const auto& det : detections) {
    const Rle rle = rle_encode(det.mask);
    json d;
    d["box"] = json::array({det.box.x1, det.box.y1, det.box.x2, det.box.y2});
    d["score"] = det.score;
    d["mask"] = json{{"size", json::array({rle.height, rle.width})}, {"counts", rle.counts}};
    j["detections"].push_back(std::move(d));
  }
  return j.dump(2) + "\n";
}

}  // namespace crackseg

#include "crackseg/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "crackseg/errors.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

using json = nlohmann::ordered_json;

std::string to_string(SceneLevel level) {
  switch (level) {
    case SceneLevel::pixel: return "pixel";
    case SceneLevel::object: return "object";
    case SceneLevel::structural: return "structural";
    case SceneLevel::unknown: return "unknown";
  }
  return "unknown";
}

SceneLevel scene_level_from_string(const std::string& s) {
  if (s == "pixel") return SceneLevel::pixel;
  if (s == "object") return SceneLevel::object;
  if (s == "structural") return SceneLevel::structural;
  if (s == "unknown") return SceneLevel::unknown;
  throw ValidationError("unknown scene_level value '" + s + "'");
}

std::string to_string(SplitName name) {
  switch (name) {
    case SplitName::train: return "train";
    case SplitName::val: return "val";
    case SplitName::test: return "test";
  }
  return "train";
}

const std::vector<InstanceAnnotation>* DatasetSplit::annotations_for(int64_t image_id) const {
  auto it = annotations.find(image_id);
  return it == annotations.end() ? nullptr : &it->second;
}

std::string DatasetSplit::image_path(const ImageRecord& record) const {
  return (std::filesystem::path(image_root) / record.file_path).string();
}

namespace {

struct PolyBounds {
  double x1, y1, x2, y2;
};

PolyBounds polygon_bounds(const std::vector<std::pair<double, double>>& poly) {
  PolyBounds b{poly[0].first, poly[0].second, poly[0].first, poly[0].second};
  for (const auto& [x, y] : poly) {
    b.x1 = std::min(b.x1, x);
    b.y1 = std::min(b.y1, y);
    b.x2 = std::max(b.x2, x);
    b.y2 = std::max(b.y2, y);
  }
  return b;
}

// Counts pixels whose centers fall inside the polygon, scanning only the
// integer window around the bounding box.
int64_t rasterized_area(const InstanceAnnotation& ann, int64_t width, int64_t height) {
  const auto b = polygon_bounds(ann.polygon);
  const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.x1)));
  const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y1)));
  const int64_t c1 = std::min<int64_t>(width, static_cast<int64_t>(std::ceil(b.x2)));
  const int64_t r1 = std::min<int64_t>(height, static_cast<int64_t>(std::ceil(b.y2)));
  int64_t count = 0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c)
      if (point_in_polygon(c + 0.5, r + 0.5, ann.polygon)) ++count;
  return count;
}

void validate_annotation(const InstanceAnnotation& ann, const ImageRecord& image) {
  const std::string who = "annotation " + std::to_string(ann.id);
  if (ann.polygon.size() < 3) throw ValidationError(who + ": polygon has fewer than 3 vertices");
  const Box& b = ann.bbox;
  if (!(b.x1 >= 0 && b.x1 < b.x2 && b.x2 <= static_cast<double>(image.width)))
    throw ValidationError(who + ": bbox x range [" + std::to_string(b.x1) + ", " +
                          std::to_string(b.x2) + ") outside image width " +
                          std::to_string(image.width));
  if (!(b.y1 >= 0 && b.y1 < b.y2 && b.y2 <= static_cast<double>(image.height)))
    throw ValidationError(who + ": bbox y range [" + std::to_string(b.y1) + ", " +
                          std::to_string(b.y2) + ") outside image height " +
                          std::to_string(image.height));
  const auto pb = polygon_bounds(ann.polygon);
  const double tol = 0.5;
  if (std::abs(pb.x1 - b.x1) > tol || std::abs(pb.y1 - b.y1) > tol ||
      std::abs(pb.x2 - b.x2) > tol || std::abs(pb.y2 - b.y2) > tol)
    throw ValidationError(who + ": bbox disagrees with polygon bounds by more than 0.5 px");
  if (ann.area <= 0) throw ValidationError(who + ": rasterized polygon area is zero");
}

uint64_t fnv1a_init() { return 1469598103934665603ull; }

void fnv1a(uint64_t& h, const void* data, size_t len) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

void fnv1a_u64(uint64_t& h, uint64_t v) { fnv1a(h, &v, sizeof v); }

void fnv1a_double(uint64_t& h, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  fnv1a(h, &bits, sizeof bits);
}

void fnv1a_str(uint64_t& h, const std::string& s) {
  fnv1a_u64(h, s.size());
  fnv1a(h, s.data(), s.size());
}

}  // namespace

DatasetSplit load_coco(const std::string& annotation_file, const std::string& image_root) {
  std::ifstream in(annotation_file, std::ios::binary);
  if (!in) throw ValidationError("cannot open annotation file: " + annotation_file);

  json root;
  try {
    root = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + annotation_file + " at byte " +
                          std::to_string(e.byte) + ": " + e.what());
  }

  for (const char* key : {"images", "annotations", "categories"})
    if (!root.contains(key) || !root[key].is_array())
      throw ValidationError(annotation_file + ": missing top-level array '" + std::string(key) +
                            "'");

  const auto& cats = root["categories"];
  if (cats.size() != 1 || cats[0].value("name", "") != "crack")
    throw ValidationError(annotation_file + ": expected a single category named 'crack'");
  const int64_t crack_category = cats[0].value("id", 1);

  DatasetSplit split;
  split.records.reserve(root["images"].size());
  std::map<int64_t, size_t> by_id;
  for (const auto& j : root["images"]) {
    ImageRecord rec;
    rec.id = j.at("id").get<int64_t>();
    rec.file_path = j.at("file_name").get<std::string>();
    rec.width = j.at("width").get<int64_t>();
    rec.height = j.at("height").get<int64_t>();
    if (j.contains("scene_level")) {
      try {
        rec.scene_level = scene_level_from_string(j["scene_level"].get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError("image " + std::to_string(rec.id) + ": " + e.what());
      }
    }
    if (rec.width < 1 || rec.height < 1)
      throw ValidationError("image " + std::to_string(rec.id) + ": non-positive dimensions");
    if (by_id.count(rec.id))
      throw ValidationError("image id " + std::to_string(rec.id) + " appears twice");
    by_id[rec.id] = split.records.size();
    split.records.push_back(std::move(rec));
  }

  std::vector<int64_t> seen_ann_ids;
  for (const auto& j : root["annotations"]) {
    InstanceAnnotation ann;
    ann.id = j.at("id").get<int64_t>();
    ann.image_id = j.at("image_id").get<int64_t>();
    const std::string who = "annotation " + std::to_string(ann.id);
    if (j.at("category_id").get<int64_t>() != crack_category)
      throw ValidationError(who + ": unknown category_id");
    auto it = by_id.find(ann.image_id);
    if (it == by_id.end())
      throw ValidationError(who + ": image_id " + std::to_string(ann.image_id) +
                            " has no matching image");
    const ImageRecord& owner = split.records[it->second];
    const auto& seg = j.at("segmentation");
    if (!seg.is_array() || seg.size() != 1 || !seg[0].is_array())
      throw ValidationError(who + ": segmentation must hold exactly one polygon");
    const auto& flat = seg[0];
    if (flat.size() < 6 || flat.size() % 2 != 0)
      throw ValidationError(who + ": polygon needs at least 3 (x, y) pairs");
    for (size_t i = 0; i + 1 < flat.size(); i += 2)
      ann.polygon.emplace_back(flat[i].get<double>(), flat[i + 1].get<double>());
    const auto& bb = j.at("bbox");
    if (!bb.is_array() || bb.size() != 4) throw ValidationError(who + ": bbox must be [x,y,w,h]");
    const double bx = bb[0].get<double>(), by = bb[1].get<double>();
    const double bw = bb[2].get<double>(), bh = bb[3].get<double>();
    ann.bbox = Box{bx, by, bx + bw, by + bh};
    ann.area = static_cast<double>(rasterized_area(ann, owner.width, owner.height));
    validate_annotation(ann, owner);
    seen_ann_ids.push_back(ann.id);
    split.annotations[ann.image_id].push_back(std::move(ann));
  }
  std::sort(seen_ann_ids.begin(), seen_ann_ids.end());
  if (std::adjacent_find(seen_ann_ids.begin(), seen_ann_ids.end()) != seen_ann_ids.end())
    throw ValidationError("duplicate annotation id " +
                          std::to_string(*std::adjacent_find(seen_ann_ids.begin(),
                                       seen_ann_ids.end())));

  std::vector<std::string> missing;
  for (const auto& rec : split.records) {
    const auto path = std::filesystem::path(image_root) / rec.file_path;
    if (!std::filesystem::exists(path)) missing.push_back(path.string());
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << missing.size() << " image file(s) missing:";
    for (const auto& m : missing) msg << "\n  " << m;
    throw ValidationError(msg.str());
  }
  split.image_root = image_root;
  return split;
}

void save_coco(const DatasetSplit& split, const std::string& annotation_file) {
  json root;
  root["images"] = json::array();
  for (const auto& rec : split.records) {
    json j;
    j["id"] = rec.id;
    j["file_name"] = rec.file_path;
    j["width"] = rec.width;
    j["height"] = rec.height;
    if (rec.scene_level != SceneLevel::unknown) j["scene_level"] = to_string(rec.scene_level);
    root["images"].push_back(std::move(j));
  }
  root["annotations"] = json::array();
  for (const auto& rec : split.records) {
    auto it = split.annotations.find(rec.id);
    if (it == split.annotations.end()) continue;
    for (const auto& ann : it->second) {
      json j;
      j["id"] = ann.id;
      j["image_id"] = ann.image_id;
      j["category_id"] = 1;
      json flat = json::array();
      for (const auto& [x, y] : ann.polygon) {
        flat.push_back(x);
        flat.push_back(y);
      }
      j["segmentation"] = json::array({std::move(flat)});
      j["bbox"] = json::array(
          {ann.bbox.x1, ann.bbox.y1, ann.bbox.x2 - ann.bbox.x1, ann.bbox.y2 - ann.bbox.y1});
      j["area"] = ann.area;
      root["annotations"].push_back(std::move(j));
    }
  }
  root["categories"] = json::array({json{{"id", 1}, {"name", "crack"}}});

  std::ofstream out(annotation_file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write annotation file: " + annotation_file);
  out << root.dump(2) << "\n";
}

Mask rasterize_mask(const InstanceAnnotation& ann, int64_t width, int64_t height) {
  if (ann.polygon.size() < 3) throw ValidationError("rasterize_mask: degenerate polygon");
  Mask mask(height, width);
  const auto b = polygon_bounds(ann.polygon);
  const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.x1)));
  const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y1)));
  const int64_t c1 = std::min<int64_t>(width, static_cast<int64_t>(std::ceil(b.x2)));
  const int64_t r1 = std::min<int64_t>(height, static_cast<int64_t>(std::ceil(b.y2)));
  int64_t count = 0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c)
      if (point_in_polygon(c + 0.5, r + 0.5, ann.polygon)) {
        mask.at(r, c) = 1;
        ++count;
      }
  if (count == 0) throw ValidationError("rasterize_mask: polygon rasterizes to zero area");
  return mask;
}

std::tuple<DatasetSplit, DatasetSplit, DatasetSplit> split_dataset(
    const std::vector<ImageRecord>& records,
    const std::map<int64_t, std::vector<InstanceAnnotation>>& annotations,
    std::pair<double, double> fractions, uint64_t seed) {
  const auto [f_train, f_val] = fractions;
  if (f_train <= 0 || f_val <= 0)
    throw ValidationError("split_dataset: fractions must be positive");
  const double total = f_train + f_val;
  if (total > 1.0 + 1e-9)
    throw ValidationError("split_dataset: fractions sum to " + std::to_string(total) +
                          ", more than 1");
  const bool want_test = total < 1.0 - 1e-9;

  const int64_t n = static_cast<int64_t>(records.size());
  const int64_t splits_requested = want_test ? 3 : 2;
  if (n < splits_requested)
    throw ValidationError("split_dataset: " + std::to_string(n) + " records cannot fill " +
                          std::to_string(splits_requested) + " splits");

  int64_t n_train = static_cast<int64_t>(std::floor(f_train * static_cast<double>(n)));
  int64_t n_val = static_cast<int64_t>(std::floor(f_val * static_cast<double>(n)));
  int64_t n_test = n - n_train - n_val;
  if (!want_test) {
    n_train += n_test;
    n_test = 0;
  }
  if (n_train == 0 || n_val == 0 || (want_test && n_test == 0))
    throw ValidationError("split_dataset: a requested split would be empty");

  std::vector<int64_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  Rng rng(derive_seed(seed, 0x53504C4954ull, 0, 0));
  rng.shuffle(order);

  auto build = [&](SplitName name, int64_t begin, int64_t count) {
    DatasetSplit s;
    s.name = name;
    for (int64_t i = begin; i < begin + count; ++i) {
      const auto& rec = records[order[i]];
      s.records.push_back(rec);
      auto it = annotations.find(rec.id);
      if (it != annotations.end()) s.annotations[rec.id] = it->second;
    }
    return s;
  };
  return {build(SplitName::train, 0, n_train), build(SplitName::val, n_train, n_val),
          build(SplitName::test, n_train + n_val, n_test)};
}

uint64_t dataset_digest(const DatasetSplit& split) {
  std::vector<const ImageRecord*> recs;
  for (const auto& r : split.records) recs.push_back(&r);
  std::sort(recs.begin(), recs.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });
  uint64_t h = fnv1a_init();
  fnv1a_u64(h, recs.size());
  for (const auto* r : recs) {
    fnv1a_u64(h, static_cast<uint64_t>(r->id));
    fnv1a_str(h, r->file_path);
    fnv1a_u64(h, static_cast<uint64_t>(r->width));
    fnv1a_u64(h, static_cast<uint64_t>(r->height));
    fnv1a_str(h, to_string(r->scene_level));
    auto it = split.annotations.find(r->id);
    const size_t n_anns = it == split.annotations.end() ? 0 : it->second.size();
    fnv1a_u64(h, n_anns);
    if (!n_anns) continue;
    for (const auto& ann : it->second) {
      fnv1a_u64(h, static_cast<uint64_t>(ann.id));
      fnv1a_u64(h, ann.polygon.size());
      for (const auto& [x, y] : ann.polygon) {
        fnv1a_double(h, x);
        fnv1a_double(h, y);
      }
      fnv1a_double(h, ann.bbox.x1);
      fnv1a_double(h, ann.bbox.y1);
      fnv1a_double(h, ann.bbox.x2);
      fnv1a_double(h, ann.bbox.y2);
      fnv1a_double(h, ann.area);
    }
  }
  return h;
}

}  // namespace crackseg

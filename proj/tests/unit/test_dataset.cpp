#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crackseg/dataset.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/geometry.hpp"
#include "testenv.hpp"

using namespace crackseg;
namespace ct = crackseg::testing;
using nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Minimal valid annotation file: one 100x80 image with a 10x20 rectangle
// instance whose polygon and bbox agree exactly.
json base_coco() {
  json image;
  image["id"] = 1;
  image["file_name"] = "img0.png";
  image["width"] = 100;
  image["height"] = 80;

  json ann;
  ann["id"] = 1;
  ann["image_id"] = 1;
  ann["category_id"] = 1;
  ann["segmentation"] = json::array({json::array({10, 10, 20, 10, 20, 30, 10, 30})});
  ann["bbox"] = json::array({10, 10, 10, 20});
  ann["area"] = 12345;

  json category;
  category["id"] = 1;
  category["name"] = "crack";

  json root;
  root["images"] = json::array({image});
  root["annotations"] = json::array({ann});
  root["categories"] = json::array({category});
  return root;
}

std::string write_coco(const ct::TempDir& dir, const json& root) {
  const std::string path = dir.file("ann.json");
  write_file(path, root.dump(2));
  return path;
}

template <typename Fn>
std::string error_text(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("load_coco reads a valid file without decoding images") {
  ct::TempDir dir("dataset");
  // Deliberately not a decodable image; only existence is checked at load.
  write_file(dir.file("img0.png"), "not an actual png payload");
  const auto split = load_coco(write_coco(dir, base_coco()), dir.path());

  REQUIRE(split.records.size() == 1);
  CHECK(split.records[0].id == 1);
  CHECK(split.records[0].width == 100);
  CHECK(split.records[0].height == 80);
  CHECK(split.records[0].scene_level == SceneLevel::unknown);
  CHECK(split.image_root == dir.path());

  const auto* anns = split.annotations_for(1);
  REQUIRE(anns != nullptr);
  REQUIRE(anns->size() == 1);
  const auto& ann = (*anns)[0];
  CHECK(ann.bbox == Box{10, 10, 20, 30});
  // The stored area field (12345 above) is ignored; the loader recomputes it
  // from the rasterized polygon: 10 columns by 20 rows.
  CHECK(ann.area == 200.0);

  const Mask mask = rasterize_mask(ann, 100, 80);
  CHECK(mask.count() == 200);
  CHECK(tight_bbox(mask) == Box{10, 10, 20, 30});
}

TEST_CASE("load_coco accepts images with no annotations") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  root["annotations"] = json::array();
  const auto split = load_coco(write_coco(dir, root), dir.path());
  REQUIRE(split.records.size() == 1);
  CHECK(split.annotations_for(1) == nullptr);
}

TEST_CASE("load_coco reports parse errors with a byte offset") {
  ct::TempDir dir("dataset");
  const std::string path = dir.file("broken.json");
  write_file(path, "{ \"images\": [ oops");
  const std::string msg = error_text([&] { load_coco(path, dir.path()); });
  CHECK(contains(msg, "parse error in " + path));
  CHECK(contains(msg, "at byte"));
}

TEST_CASE("load_coco rejects out-of-range bboxes by annotation id") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  root["annotations"][0]["bbox"] = json::array({95, 10, 10, 20});
  root["annotations"][0]["segmentation"] =
      json::array({json::array({95, 10, 105, 10, 105, 30, 95, 30})});
  const std::string path = write_coco(dir, root);
  CHECK_THROWS_AS(load_coco(path, dir.path()), ValidationError);
  const std::string msg = error_text([&] { load_coco(path, dir.path()); });
  CHECK(contains(msg, "annotation 1: bbox x range"));
  CHECK(contains(msg, "outside image width 100"));
}

TEST_CASE("load_coco rejects duplicate image ids") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  json second = root["images"][0];
  root["images"].push_back(second);
  const std::string msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "image id 1 appears twice"));
}

TEST_CASE("load_coco rejects duplicate annotation ids") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  json second = root["annotations"][0];
  root["annotations"].push_back(second);
  const std::string msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "duplicate annotation id 1"));
}

TEST_CASE("load_coco lists missing image files") {
  ct::TempDir dir("dataset");
  const std::string msg =
      error_text([&] { load_coco(write_coco(dir, base_coco()), dir.path()); });
  CHECK(contains(msg, "1 image file(s) missing:"));
  CHECK(contains(msg, "img0.png"));
}

TEST_CASE("load_coco rejects bbox that disagrees with polygon bounds") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  root["annotations"][0]["bbox"] = json::array({9, 10, 11, 20});
  const std::string msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "annotation 1: bbox disagrees with polygon bounds"));
}

TEST_CASE("load_coco parses and validates scene_level") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");

  json root = base_coco();
  root["images"][0]["scene_level"] = "structural";
  auto split = load_coco(write_coco(dir, root), dir.path());
  CHECK(split.records[0].scene_level == SceneLevel::structural);

  root["images"][0]["scene_level"] = "roof";
  const std::string msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "image 1: unknown scene_level value 'roof'"));
}

TEST_CASE("load_coco enforces the single crack category") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");

  json root = base_coco();
  root["categories"][0]["name"] = "pothole";
  std::string msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "expected a single category named 'crack'"));

  root = base_coco();
  json extra;
  extra["id"] = 2;
  extra["name"] = "crack";
  root["categories"].push_back(extra);
  msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "expected a single category named 'crack'"));

  root = base_coco();
  root["annotations"][0]["category_id"] = 9;
  msg = error_text([&] { load_coco(write_coco(dir, root), dir.path()); });
  CHECK(contains(msg, "annotation 1: unknown category_id"));
}

TEST_CASE("save_coco and load_coco round-trip") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  json root = base_coco();
  root["images"][0]["scene_level"] = "object";
  const auto original = load_coco(write_coco(dir, root), dir.path());

  const std::string saved = dir.file("saved.json");
  save_coco(original, saved);
  const auto reloaded = load_coco(saved, dir.path());

  CHECK(reloaded.records == original.records);
  CHECK(reloaded.annotations == original.annotations);
  CHECK(dataset_digest(reloaded) == dataset_digest(original));
}

TEST_CASE("rasterize_mask covers pixel centers under the even-odd rule") {
  InstanceAnnotation rect;
  rect.polygon = {{2, 2}, {5, 2}, {5, 4}, {2, 4}};
  const Mask m = rasterize_mask(rect, 8, 8);
  // Columns 2..4 and rows 2..3 have centers inside.
  CHECK(m.count() == 6);
  CHECK(tight_bbox(m) == Box{2, 2, 5, 4});

  InstanceAnnotation full;
  full.polygon = {{0, 0}, {8, 0}, {8, 8}, {0, 8}};
  CHECK(rasterize_mask(full, 8, 8).count() == 64);

  InstanceAnnotation tri;
  tri.polygon = {{0, 0}, {8, 0}, {0, 8}};
  const Mask tm = rasterize_mask(tri, 8, 8);
  int64_t expected = 0;
  for (int64_t r = 0; r < 8; ++r)
    for (int64_t c = 0; c < 8; ++c)
      if (point_in_polygon(c + 0.5, r + 0.5, tri.polygon)) ++expected;
  CHECK(tm.count() == expected);
  CHECK(tm.count() >= 24);
  CHECK(tm.count() <= 40);

  InstanceAnnotation degenerate;
  degenerate.polygon = {{0, 0}, {1, 1}};
  CHECK_THROWS_AS(rasterize_mask(degenerate, 8, 8), ValidationError);
}

namespace {

std::vector<ImageRecord> make_records(int64_t n) {
  std::vector<ImageRecord> records;
  for (int64_t i = 0; i < n; ++i) {
    ImageRecord rec;
    rec.id = i + 1;
    rec.file_path = "img" + std::to_string(i) + ".png";
    rec.width = 64;
    rec.height = 64;
    records.push_back(rec);
  }
  return records;
}

std::vector<int64_t> ids_of(const DatasetSplit& s) {
  std::vector<int64_t> out;
  for (const auto& r : s.records) out.push_back(r.id);
  return out;
}

}  // namespace

TEST_CASE("split_dataset honours fractions and the seed") {
  const auto records = make_records(10);
  const std::map<int64_t, std::vector<InstanceAnnotation>> no_anns;

  const auto [train, val, test] = split_dataset(records, no_anns, {0.8, 0.1}, 7);
  CHECK(train.records.size() == 8);
  CHECK(val.records.size() == 1);
  CHECK(test.records.size() == 1);
  CHECK(train.name == SplitName::train);
  CHECK(val.name == SplitName::val);
  CHECK(test.name == SplitName::test);

  // Disjoint and exhaustive.
  std::set<int64_t> all;
  for (const auto* s : {&train, &val, &test})
    for (int64_t id : ids_of(*s)) CHECK(all.insert(id).second);
  CHECK(all.size() == 10);

  const auto [train2, val2, test2] = split_dataset(records, no_anns, {0.8, 0.1}, 7);
  CHECK(ids_of(train2) == ids_of(train));
  CHECK(ids_of(val2) == ids_of(val));
  CHECK(ids_of(test2) == ids_of(test));

  const auto [train3, val3, test3] = split_dataset(records, no_anns, {0.8, 0.1}, 8);
  const bool any_difference =
      ids_of(train3) != ids_of(train) || ids_of(val3) != ids_of(val) || ids_of(test3) != ids_of(test);
  CHECK(any_difference);
}

TEST_CASE("split_dataset without a test remainder absorbs into train") {
  const auto records = make_records(10);
  const std::map<int64_t, std::vector<InstanceAnnotation>> no_anns;
  const auto [train, val, test] = split_dataset(records, no_anns, {0.9, 0.1}, 3);
  CHECK(train.records.size() == 9);
  CHECK(val.records.size() == 1);
  CHECK(test.records.empty());
}

TEST_CASE("split_dataset carries annotations with their images") {
  const auto records = make_records(4);
  std::map<int64_t, std::vector<InstanceAnnotation>> anns;
  InstanceAnnotation a;
  a.id = 10;
  a.image_id = 2;
  a.polygon = {{1, 1}, {5, 1}, {5, 5}, {1, 5}};
  a.bbox = Box{1, 1, 5, 5};
  a.area = 16;
  anns[2].push_back(a);

  const auto [train, val, test] = split_dataset(records, anns, {0.5, 0.25}, 11);
  int found = 0;
  for (const auto* s : {&train, &val, &test}) {
    if (const auto* list = s->annotations_for(2); list != nullptr) {
      CHECK(list->size() == 1);
      CHECK((*list)[0] == a);
      ++found;
    }
  }
  CHECK(found == 1);
}

TEST_CASE("split_dataset rejects bad fractions and starved splits") {
  const auto records = make_records(10);
  const std::map<int64_t, std::vector<InstanceAnnotation>> no_anns;

  CHECK_THROWS_AS(split_dataset(records, no_anns, {0.9, 0.2}, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(records, no_anns, {0.0, 0.5}, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(records, no_anns, {0.5, -0.1}, 1), ValidationError);

  const std::string few = error_text(
      [&] { split_dataset(make_records(2), no_anns, {0.5, 0.25}, 1); });
  CHECK(contains(few, "2 records cannot fill 3 splits"));

  const std::string starved = error_text(
      [&] { split_dataset(make_records(3), no_anns, {0.05, 0.6}, 1); });
  CHECK(contains(starved, "a requested split would be empty"));
}

TEST_CASE("dataset_digest ignores record order but tracks content") {
  ct::TempDir dir("dataset");
  write_file(dir.file("img0.png"), "x");
  write_file(dir.file("img1.png"), "x");
  json root = base_coco();
  json second;
  second["id"] = 2;
  second["file_name"] = "img1.png";
  second["width"] = 64;
  second["height"] = 64;
  root["images"].push_back(second);
  auto split = load_coco(write_coco(dir, root), dir.path());
  const uint64_t digest = dataset_digest(split);

  std::reverse(split.records.begin(), split.records.end());
  CHECK(dataset_digest(split) == digest);

  auto renamed = split;
  renamed.records[0].file_path = "other.png";
  CHECK(dataset_digest(renamed) != digest);

  auto moved = split;
  moved.annotations[1][0].bbox.x1 += 0.25;
  CHECK(dataset_digest(moved) != digest);

  auto releveled = split;
  for (auto& rec : releveled.records)
    if (rec.id == 2) rec.scene_level = SceneLevel::pixel;
  CHECK(dataset_digest(releveled) != digest);
}

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

enum class SceneLevel { pixel, object, structural, unknown };

std::string to_string(SceneLevel level);
SceneLevel scene_level_from_string(const std::string& s);

struct ImageRecord {
  int64_t id = 0;
  std::string file_path;
  int64_t width = 0;
  int64_t height = 0;
  SceneLevel scene_level = SceneLevel::unknown;

  bool operator==(const ImageRecord&) const = default;
};

struct InstanceAnnotation {
  int64_t id = 0;
  int64_t image_id = 0;
  std::vector<std::pair<double, double>> polygon;
  Box bbox;
  double area = 0.0;

  bool operator==(const InstanceAnnotation&) const = default;
};

enum class SplitName { train, val, test };

std::string to_string(SplitName name);

struct DatasetSplit {
  SplitName name = SplitName::train;
  // Directory the records' file_path entries are relative to. Kept separate
  // so digests and saved annotation files stay machine-independent.
  std::string image_root;
  std::vector<ImageRecord> records;
  std::map<int64_t, std::vector<InstanceAnnotation>> annotations;

  const std::vector<InstanceAnnotation>* annotations_for(int64_t image_id) const;
  std::string image_path(const ImageRecord& record) const;
};

// Reads a COCO-style annotation file and validates every record against the
// dataset invariants. Image files are checked for existence under image_root
// but are not decoded.
DatasetSplit load_coco(const std::string& annotation_file, const std::string& image_root);

// Writes a split back to the same interchange format load_coco reads.
void save_coco(const DatasetSplit& split, const std::string& annotation_file);

// Rasterizes the annotation polygon onto a height by width grid. A pixel is
// set iff its center lies inside the polygon under the even-odd rule.
Mask rasterize_mask(const InstanceAnnotation& ann, int64_t width, int64_t height);

std::tuple<DatasetSplit, DatasetSplit, DatasetSplit> split_dataset(
    const std::vector<ImageRecord>& records,
    const std::map<int64_t, std::vector<InstanceAnnotation>>& annotations,
    std::pair<double, double> fractions, uint64_t seed);

// Order-independent digest of a split's records and annotations. Two
// evaluation reports are comparable only when their digests agree.
uint64_t dataset_digest(const DatasetSplit& split);

}  // namespace crackseg

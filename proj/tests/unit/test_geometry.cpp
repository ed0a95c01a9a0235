#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/rng.hpp"
#include "oracles.hpp"
#include "testenv.hpp"

using namespace crackseg;
namespace ct = crackseg::testing;

TEST_CASE("box accessors and degeneracy") {
  const Box b{1.0, 2.0, 4.0, 8.0};
  CHECK(b.width() == 3.0);
  CHECK(b.height() == 6.0);
  CHECK(b.area() == 18.0);
  CHECK(b.cx() == doctest::Approx(2.5));
  CHECK(b.cy() == doctest::Approx(5.0));
  CHECK_FALSE(b.degenerate());

  CHECK(Box{1, 1, 1, 2}.degenerate());
  CHECK(Box{1, 1, 2, 1}.degenerate());
  CHECK(Box{3, 1, 2, 4}.degenerate());

  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(Box{nan, 1, 2, 4}.degenerate());
  CHECK(Box{1, 1, nan, 4}.degenerate());
}

TEST_CASE("clip_box clamps to the image window") {
  const Box b = clip_box(Box{-5, -3, 120, 90}, 100, 80);
  CHECK(b.x1 == 0.0);
  CHECK(b.y1 == 0.0);
  CHECK(b.x2 == 100.0);
  CHECK(b.y2 == 80.0);
  const Box inside = clip_box(Box{2, 3, 4, 5}, 100, 80);
  CHECK(inside == Box{2, 3, 4, 5});
}

TEST_CASE("box_iou on the pinned cases") {
  CHECK(box_iou(Box{0, 0, 2, 2}, Box{0, 0, 2, 2}) == 1.0);
  CHECK(box_iou(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}) == 0.0);
  // Overlap 1, union 4 + 4 - 1.
  CHECK(box_iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(box_iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) ==
        doctest::Approx(ct::grid_box_iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3})).epsilon(1e-3));
  CHECK_THROWS_WITH(box_iou(Box{0, 0, 0, 2}, Box{0, 0, 2, 2}), "box_iou: degenerate box");
}

TEST_CASE("box_iou matches the rasterization oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const Box a = ct::random_quarter_grid_box(rng, 16, 16);
    const Box b = ct::random_quarter_grid_box(rng, 16, 16);
    const double fast = box_iou(a, b);
    const double slow = ct::grid_box_iou(a, b);
    CHECK(fast == doctest::Approx(slow).epsilon(1e-3));
    CHECK(fast == box_iou(b, a));
    CHECK(fast >= 0.0);
    CHECK(fast <= 1.0);
    CHECK((fast == 1.0) == (a == b));
  }
}

TEST_CASE("mask_iou on the pinned cases") {
  Mask a(4, 4), b(4, 4);
  a.at(0, 0) = 1;
  a.at(0, 1) = 1;
  b.at(0, 0) = 1;
  b.at(0, 1) = 1;
  CHECK(mask_iou(a, b) == 1.0);

  Mask c(4, 4);
  c.at(3, 3) = 1;
  CHECK(mask_iou(a, c) == 0.0);

  Mask empty1(4, 4), empty2(4, 4);
  CHECK_THROWS_WITH(mask_iou(empty1, empty2), "mask_iou: both masks empty");
  Mask other(3, 4);
  CHECK_THROWS_WITH(mask_iou(a, other), "mask_iou: shape mismatch");
}

TEST_CASE("mask_iou matches the counting oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const Mask a = ct::random_rect_mask(rng, 12, 15);
    const Mask b = ct::random_rect_mask(rng, 12, 15);
    const double fast = mask_iou(a, b);
    CHECK(fast == ct::count_mask_iou(a, b));
    CHECK(fast == mask_iou(b, a));
    CHECK((fast == 1.0) == (a == b));
  }
}

TEST_CASE("tight_bbox on the pinned cases") {
  Mask single(8, 8);
  single.at(3, 5) = 1;
  CHECK(tight_bbox(single) == Box{5, 3, 6, 4});

  Mask full(6, 9);
  for (auto& v : full.raw()) v = 1;
  CHECK(tight_bbox(full) == Box{0, 0, 9, 6});

  Mask empty(4, 4);
  CHECK_THROWS_WITH(tight_bbox(empty), "tight_bbox: empty mask");
}

TEST_CASE("tight_bbox matches the brute-force scan") {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const Mask m = ct::random_rect_mask(rng, 10 + rng.uniform_int(10), 10 + rng.uniform_int(10));
    CHECK(tight_bbox(m) == ct::scan_tight_bbox(m));
  }
}

TEST_CASE("nms keeps one of two heavily overlapping boxes") {
  const std::vector<Box> boxes = {Box{0, 0, 10, 10}, Box{0.5, 0, 10.5, 10}};
  const std::vector<double> scores = {0.9, 0.8};
  const auto keep = nms(boxes, scores, 0.7);
  REQUIRE(keep.size() == 1);
  CHECK(keep[0] == 0);
}

TEST_CASE("nms keeps well separated boxes") {
  const std::vector<Box> boxes = {Box{0, 0, 10, 10}, Box{20, 20, 30, 30}};
  const auto keep = nms(boxes, {0.5, 0.9}, 0.5);
  REQUIRE(keep.size() == 2);
  // Output is ordered by descending score.
  CHECK(keep[0] == 1);
  CHECK(keep[1] == 0);
}

TEST_CASE("nms selection is independent of input order") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 12; ++i) {
      boxes.push_back(ct::random_quarter_grid_box(rng, 24, 24));
      scores.push_back(rng.uniform());
    }
    // Give two boxes identical scores so the lexicographic tie-break is hit.
    scores[3] = scores[7];
    const auto keep = nms(boxes, scores, 0.5);

    std::vector<size_t> perm(boxes.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<Box> shuffled_boxes;
    std::vector<double> shuffled_scores;
    for (size_t i : perm) {
      shuffled_boxes.push_back(boxes[i]);
      shuffled_scores.push_back(scores[i]);
    }
    const auto keep_shuffled = nms(shuffled_boxes, shuffled_scores, 0.5);

    // Map kept indices back to the original numbering and compare as sets of
    // boxes, since indices refer to different orderings.
    auto kept_boxes = [](const std::vector<Box>& bs, const std::vector<int64_t>& idx) {
      std::vector<Box> out;
      for (int64_t i : idx) out.push_back(bs[static_cast<size_t>(i)]);
      std::sort(out.begin(), out.end(), [](const Box& a, const Box& b) {
        return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
      });
      return out;
    };
    CHECK(kept_boxes(boxes, keep) == kept_boxes(shuffled_boxes, keep_shuffled));
  }
}

TEST_CASE("point_in_polygon follows the even-odd rule") {
  const std::vector<std::pair<double, double>> square = {{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  CHECK(point_in_polygon(2, 2, square));
  CHECK_FALSE(point_in_polygon(5, 2, square));
  CHECK_FALSE(point_in_polygon(-1, 2, square));

  // Concave "C" shape: the notch on the right side is outside.
  const std::vector<std::pair<double, double>> concave = {{0, 0}, {6, 0}, {6, 2}, {2, 2},
                                                          {2, 4}, {6, 4}, {6, 6}, {0, 6}};
  CHECK(point_in_polygon(1, 3, concave));
  CHECK_FALSE(point_in_polygon(4, 3, concave));
  CHECK(point_in_polygon(4, 1, concave));
  CHECK(point_in_polygon(4, 5, concave));
}

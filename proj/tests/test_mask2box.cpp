// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "support.hpp"
#include "wwbl/mask2box.hpp"

using namespace wwbl;
using wwbl::testing::box_less;
using wwbl::testing::box_mask;
using wwbl::testing::flood_fill_boxes;

namespace {

BinaryMask to_binary(const SaliencyMask& m) { return binarize(m, 0.5); }

std::vector<BoundingBox> outer_boxes(const std::vector<Contour>& cs) {
  std::vector<BoundingBox> out;
  for (const auto& c : cs)
    if (!c.hole) out.push_back(c.bounds());
  std::sort(out.begin(), out.end(), box_less);
  return out;
}

BinaryMask random_binary(int h, int w, double density, std::mt19937_64& rng) {
  BinaryMask m(h, w);
  std::bernoulli_distribution on(density);
  for (double& v : m.values()) v = on(rng) ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST_CASE("binarize uses a >= threshold") {
  const auto below = binarize(SaliencyMask(4, 4, 0.05), 0.1);
  const auto at = binarize(SaliencyMask(4, 4, 0.1), 0.1);
  for (double v : below.values()) CHECK(v == 0.0);
  for (double v : at.values()) CHECK(v == 1.0);
  SaliencyMask checker(6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) checker.at(y, x) = (x + y) % 2 ? 0.9 : 0.0;
  const auto b = binarize(checker, 0.5);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) CHECK(b.at(y, x) == ((x + y) % 2 ? 1.0 : 0.0));
}

TEST_CASE("contours of simple shapes") {
  CHECK(trace_contours(BinaryMask(8, 8)).empty());

  const auto one = trace_contours(to_binary(box_mask(8, 8, {2, 2, 3, 3})));
  REQUIRE(one.size() == 1);
  CHECK(one[0].bounds() == BoundingBox{2, 2, 3, 3});
  CHECK_FALSE(one[0].hole);
  CHECK(one[0].parent == -1);
  CHECK(one[0].area() == doctest::Approx(4.0));

  auto two = box_mask(16, 16, {1, 1, 4, 4});
  for (int y = 9; y < 14; ++y)
    for (int x = 8; x < 15; ++x) two.at(y, x) = 1.0;
  const auto cs = trace_contours(to_binary(two));
  CHECK(outer_boxes(cs) == flood_fill_boxes(to_binary(two)));

  // Single pixel and a one-pixel-wide line.
  BinaryMask px(5, 5);
  px.at(2, 3) = 1.0;
  const auto p = trace_contours(px);
  REQUIRE(p.size() == 1);
  CHECK(p[0].bounds() == BoundingBox{3, 2, 1, 1});
  BinaryMask line(5, 7);
  for (int x = 1; x < 6; ++x) line.at(2, x) = 1.0;
  CHECK(trace_contours(line)[0].bounds() == BoundingBox{1, 2, 5, 1});
}

TEST_CASE("a ring has one outer border and one hole with the right parent") {
  auto ring = box_mask(12, 12, {2, 2, 8, 8});
  for (int y = 4; y < 8; ++y)
    for (int x = 4; x < 8; ++x) ring.at(y, x) = 0.0;
  ring.at(5, 5) = 1.0;  // island inside the hole
  const auto cs = trace_contours(to_binary(ring));
  REQUIRE(cs.size() == 3);
  CHECK_FALSE(cs[0].hole);
  CHECK(cs[1].hole);
  CHECK(cs[1].parent == 0);
  CHECK_FALSE(cs[2].hole);
  CHECK(cs[2].parent == 1);
  CHECK(cs[2].bounds() == BoundingBox{5, 5, 1, 1});
}

TEST_CASE("contour tracing agrees with flood fill on random masks") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> side(1, 64);
  std::uniform_real_distribution<double> dens(0.1, 0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_binary(side(rng), side(rng), dens(rng), rng);
    const auto cs = trace_contours(m);
    const auto expected = [&] {
      auto b = flood_fill_boxes(m);
      std::sort(b.begin(), b.end(), box_less);
      return b;
    }();
    REQUIRE(outer_boxes(cs) == expected);
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const auto& c = cs[k];
      REQUIRE_FALSE(c.points.empty());
      CHECK(c.parent < static_cast<int>(k));
      if (c.parent >= 0) CHECK(cs[static_cast<std::size_t>(c.parent)].hole != c.hole);
      for (std::size_t i = 0; i < c.points.size(); ++i) {
        const auto& a = c.points[i];
        const auto& b = c.points[(i + 1) % c.points.size()];
        CHECK(m.at(a.y, a.x) == 1.0);
        CHECK(std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)) <= 1);
      }
    }
  }
}

TEST_CASE("contour tracing matches OpenCV's border following") {
  // cv::findContours is an independent Suzuki-Abe implementation. Compare
  // each border as (hole?, box, pixel set); the orders of the lists differ.
  using Key = std::tuple<bool, int, int, int, int, std::vector<std::pair<int, int>>>;
  std::mt19937_64 rng(29);
  std::uniform_int_distribution<int> side(1, 48);
  std::uniform_real_distribution<double> dens(0.1, 0.8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_binary(side(rng), side(rng), dens(rng), rng);
    std::vector<Key> ours;
    for (const auto& c : trace_contours(m)) {
      std::vector<std::pair<int, int>> px;
      for (const auto& p : c.points) px.emplace_back(p.y, p.x);
      std::sort(px.begin(), px.end());
      px.erase(std::unique(px.begin(), px.end()), px.end());
      const auto b = c.bounds();
      ours.emplace_back(c.hole, b.x, b.y, b.w, b.h, std::move(px));
    }

    cv::Mat img(m.height(), m.width(), CV_8U);
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) img.at<std::uint8_t>(y, x) = m.at(y, x) > 0.5 ? 1 : 0;
    std::vector<std::vector<cv::Point>> cvc;
    std::vector<cv::Vec4i> hier;
    cv::findContours(img, cvc, hier, cv::RETR_TREE, cv::CHAIN_APPROX_NONE);
    std::vector<Key> theirs;
    for (std::size_t k = 0; k < cvc.size(); ++k) {
      int depth = 0;
      for (int p = hier[k][3]; p >= 0; p = hier[static_cast<std::size_t>(p)][3]) ++depth;
      std::vector<std::pair<int, int>> px;
      for (const auto& p : cvc[k]) px.emplace_back(p.y, p.x);
      std::sort(px.begin(), px.end());
      px.erase(std::unique(px.begin(), px.end()), px.end());
      const cv::Rect r = cv::boundingRect(cvc[k]);
      theirs.emplace_back(depth % 2 == 1, r.x, r.y, r.width, r.height, std::move(px));
    }
    std::sort(ours.begin(), ours.end());
    std::sort(theirs.begin(), theirs.end());
    REQUIRE(ours == theirs);
  }
}

TEST_CASE("wsol box picks the largest contour or falls back to the frame") {
  const ExtractionConfig cfg;
  CHECK(extract_wsol_box(box_mask(32, 40, {5, 6, 10, 8}, 0.8, 0.0), cfg) == BoundingBox{5, 6, 10, 8});
  CHECK(extract_wsol_box(SaliencyMask(32, 40, 0.0), cfg) == BoundingBox{0, 0, 40, 32});
  auto two = box_mask(32, 32, {2, 2, 10, 10}, 0.9);
  for (int y = 20; y < 23; ++y)
    for (int x = 20; x < 23; ++x) two.at(y, x) = 0.9;
  CHECK(extract_wsol_box(two, cfg) == BoundingBox{2, 2, 10, 10});
  // The small blob comes first in raster order but still loses.
  auto first_small = box_mask(32, 32, {1, 1, 3, 3}, 0.9);
  for (int y = 10; y < 20; ++y)
    for (int x = 10; x < 20; ++x) first_small.at(y, x) = 0.9;
  CHECK(extract_wsol_box(first_small, cfg) == BoundingBox{10, 10, 10, 10});
  CHECK_FALSE(largest_contour_box(SaliencyMask(8, 8, 0.2), 0.5).has_value());
}

TEST_CASE("wsg boxes: scoring, ratio filter and NMS") {
  ExtractionConfig cfg;
  auto single = box_mask(32, 32, {4, 4, 8, 8}, 0.9);
  const auto s = extract_wsg_boxes(single, cfg);
  REQUIRE(s.size() == 1);
  CHECK(s[0].box == BoundingBox{4, 4, 8, 8});
  CHECK(s[0].score == doctest::Approx(0.9));

  // 0.4 < 0.5 * 0.9, so the weaker blob is dropped by the ratio filter.
  cfg.wsg_threshold = 0.3;
  auto pair = box_mask(48, 48, {2, 2, 10, 10}, 0.9);
  for (int y = 20; y < 30; ++y)
    for (int x = 20; x < 30; ++x) pair.at(y, x) = 0.4;
  const auto p = extract_wsg_boxes(pair, cfg);
  REQUIRE(p.size() == 1);
  CHECK(p[0].box == BoundingBox{2, 2, 10, 10});
  const ExtractionConfig loose{0.1, 0.3, 0.3, 0.4};
  CHECK(extract_wsg_boxes(pair, loose).size() == 2);
}

TEST_CASE("wsg NMS suppresses nested detections") {
  // A ring around a second blob. The inner box scores 0.8, the outer box
  // (ring, gap and inner blob averaged) about 0.74.
  ExtractionConfig cfg;
  SaliencyMask m(40, 40, 0.0);
  for (int y = 5; y < 35; ++y)
    for (int x = 5; x < 35; ++x) m.at(y, x) = 0.9;
  for (int y = 7; y < 33; ++y)
    for (int x = 7; x < 33; ++x) m.at(y, x) = 0.0;
  for (int y = 8; y < 32; ++y)
    for (int x = 8; x < 32; ++x) m.at(y, x) = 0.8;
  const auto boxes = extract_wsg_boxes(m, cfg);
  // IoU of (8,8,24,24) with (5,5,30,30) is 576/900 = 0.64 > 0.3: only one survives.
  CHECK(iou({8, 8, 24, 24}, {5, 5, 30, 30}) == doctest::Approx(0.64));
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].box == BoundingBox{8, 8, 24, 24});
}

TEST_CASE("wsg output invariants on random masks") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  const ExtractionConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    SaliencyMask m(24, 30);
    for (double& v : m.values()) v = u(rng) * u(rng) * 1.6;
    for (double& v : m.values()) v = std::min(v, 1.0);
    const auto boxes = extract_wsg_boxes(m, cfg);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      CHECK(boxes[i].box.inside_frame(24, 30));
      CHECK(boxes[i].score >= cfg.energy_keep_ratio * boxes[0].score);
      if (i) CHECK(boxes[i].score <= boxes[i - 1].score);
      for (std::size_t j = 0; j < i; ++j) CHECK(iou(boxes[i].box, boxes[j].box) < cfg.nms_iou);
    }
    CHECK(extract_wsol_box(m, cfg).inside_frame(24, 30));
  }
}

TEST_CASE("extraction config validation") {
  CHECK_NOTHROW(ExtractionConfig{}.validate());
  CHECK_THROWS_AS((ExtractionConfig{0.0, 0.5, 0.3, 0.5}.validate()), Error);
  CHECK_THROWS_AS((ExtractionConfig{0.1, 1.0, 0.3, 0.5}.validate()), Error);
  CHECK_THROWS_AS((ExtractionConfig{0.1, 0.5, 0.3, 0.0}.validate()), Error);
  CHECK_NOTHROW((ExtractionConfig{0.1, 0.5, 0.3, 1.0}.validate()));
}

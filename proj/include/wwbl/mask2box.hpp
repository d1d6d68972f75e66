// SPDX-License-Identifier: Apache-2.0
//
// Saliency mask -> boxes. Contours come from Suzuki-Abe border following
// over 8-connected foreground.
#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "wwbl/core.hpp"

namespace wwbl {

struct ExtractionConfig {
  double wsol_threshold = 0.1;
  double wsg_threshold = 0.5;
  double nms_iou = 0.3;
  double energy_keep_ratio = 0.5;

  void validate() const;
};

struct Contour {
  struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
  };

  std::vector<Point> points;  ///< closed chain, consecutive points 8-adjacent
  bool hole = false;
  int parent = -1;            ///< index of the enclosing contour, -1 for the frame

  BoundingBox bounds() const noexcept;
  /// Polygon area of the chain (shoelace).
  double area() const noexcept;
};

/// Foreground iff value >= threshold.
BinaryMask binarize(const SaliencyMask& mask, double threshold);

/// Outer borders and hole borders in discovery (raster) order.
std::vector<Contour> trace_contours(const BinaryMask& mask);

/// Box of the outer contour with the largest polygon area (ties: larger box,
/// then discovery order); nullopt when nothing reaches `threshold`.
std::optional<BoundingBox> largest_contour_box(const SaliencyMask& mask, double threshold);

/// Largest contour at wsol_threshold; the full frame when the mask is empty.
BoundingBox extract_wsol_box(const SaliencyMask& mask, const ExtractionConfig& cfg);

/// One box per outer contour at wsg_threshold, scored by the mean raw mask
/// value inside it, then NMS and the relative-score filter. Scores come out
/// non-increasing.
std::vector<ScoredBox> extract_wsg_boxes(const SaliencyMask& mask, const ExtractionConfig& cfg);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Line-delimited JSON records.
//
//   annotations:  {"image": path, "regions": [{"phrase": s, "box": [x,y,w,h]}],
//                  "captions": [s, ...]}          ("captions" optional)
//   predictions:  {"image_id": s, "detections": [{"phrase": s, "box": [x,y,w,h],
//                  "score": f, "mask": path, "point": [x,y]}]}
//                 ("mask" and "point" optional; "point" is the mask's argmax)
//
// Relative image and mask paths resolve against the record file's directory.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wwbl/core.hpp"

namespace wwbl {

struct AnnotationRecord {
  std::string image;
  std::vector<GroundingRegion> regions;
  std::vector<std::string> captions;

  GroundingAnnotation annotation() const { return {image, regions}; }
};

struct PredictedDetection {
  Detection detection;
  std::string mask;  ///< empty when no mask was saved
  std::optional<std::pair<int, int>> point;  ///< (x, y) argmax of the mask, if it had one
};

struct PredictionRecord {
  std::string image_id;
  std::vector<PredictedDetection> detections;
};

/// Throws DataError naming the file and 1-based line on any malformed record.
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, std::span<const AnnotationRecord> records);

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records);

/// `relative` against the directory holding `record_file` (absolute paths pass through).
std::filesystem::path resolve_path(const std::filesystem::path& record_file, const std::string& relative);

}  // namespace wwbl

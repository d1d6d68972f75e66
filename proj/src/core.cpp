// SPDX-License-Identifier: Apache-2.0
#include "wwbl/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace wwbl {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::UninitializedWeights: return "UninitializedWeights";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidPhrase: return "InvalidPhrase";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::CheckpointError: return "CheckpointError";
  }
  return "Unknown";
}

ImageTensor::ImageTensor(int height, int width, double fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(kChannels) * height * width, fill) {
  if (height < 0 || width < 0) raise(ErrorCode::InvalidArgument, "negative image extent");
}

void ImageTensor::validate() const {
  if (height_ < 1 || width_ < 1) raise(ErrorCode::InvalidArgument, "image must be at least 1x1");
  for (double v : data_) {
    if (!(v >= 0.0 && v <= 1.0))
      raise(ErrorCode::InvalidArgument, "image values must lie in [0,1]");
  }
}

namespace {

std::string trim(const std::string& s) {
  auto first = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto last = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return first < last ? std::string(first, last) : std::string();
}

}  // namespace

Phrase::Phrase(std::string text) : text_(trim(text)) {
  if (text_.empty()) raise(ErrorCode::InvalidPhrase, "phrase is empty");
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double TextEmbedding::norm() const noexcept { return std::sqrt(dot(values, values)); }

double cosine(const TextEmbedding& a, const TextEmbedding& b) noexcept {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a.values, b.values) / (na * nb), -1.0, 1.0);
}

BoundingBox BoundingBox::clipped(int height, int width) const noexcept {
  const int x0 = std::clamp(x, 0, width);
  const int y0 = std::clamp(y, 0, height);
  const int x1 = std::clamp(right(), 0, width);
  const int y1 = std::clamp(bottom(), 0, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const long long ix = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const long long iy = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (boxes[i].score != boxes[j].score) return boxes[i].score > boxes[j].score;
    return boxes[i].box.area() > boxes[j].box.area();
  });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const bool keep = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(boxes[idx].box, boxes[k].box) < iou_threshold;
    });
    if (keep) kept.push_back(idx);
  }
  return kept;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold) {
  std::vector<ScoredBox> out;
  for (std::size_t idx : nms_indices(boxes, iou_threshold)) out.push_back(boxes[idx]);
  return out;
}

std::pair<int, int> argmax_location(const SaliencyMask& mask) {
  const auto& v = mask.values();
  if (v.empty()) raise(ErrorCode::InvalidArgument, "argmax of an empty mask");
  // max_element returns the first maximum, which is the row-major tie-break.
  const auto it = std::max_element(v.begin(), v.end());
  const auto idx = static_cast<int>(it - v.begin());
  return {idx % mask.width(), idx / mask.width()};
}

bool pointing_hit(const SaliencyMask& mask, const BoundingBox& gt) {
  const auto [x, y] = argmax_location(mask);
  return gt.contains(x, y);
}

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Value types shared by every stage of the grounding pipeline, plus the box
// geometry primitives (IoU, greedy NMS, pointing test).
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wwbl/error.hpp"

namespace wwbl {

/// RGB image with channel-planar storage, values in [0,1].
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int height, int width, double fill = 0.0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const noexcept { return height_ == 0 || width_ == 0; }

  double& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

  std::span<double> channel(int c) noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }
  std::span<const double> channel(int c) const noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  /// Throws InvalidArgument unless H,W >= 1 and every value lies in [0,1].
  void validate() const;

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Dense H x W real plane. The tag keeps masks and relevancy maps apart.
template <class Tag>
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        values_(static_cast<std::size_t>(height) * width, fill) {}
  Plane(int height, int width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(height) * width)
      raise(ErrorCode::DimensionMismatch, "plane value count does not match shape");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& at(int y, int x) noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool same_shape(int height, int width) const noexcept {
    return height_ == height && width_ == width;
  }
  template <class Other>
  bool same_shape(const Plane<Other>& other) const noexcept {
    return same_shape(other.height(), other.width());
  }

  bool operator==(const Plane&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

struct SaliencyTag;
struct RelevancyTag;
struct BinaryTag;

/// Per-pixel foreground probability.
using SaliencyMask = Plane<SaliencyTag>;
/// Backend explainability heat-map in [0,1].
using RelevancyMap = Plane<RelevancyTag>;
/// Thresholded mask; values are exactly 0 or 1.
using BinaryMask = Plane<BinaryTag>;

/// Non-empty (after trimming) text query or caption.
class Phrase {
 public:
  /// Throws InvalidPhrase when the trimmed text is empty.
  explicit Phrase(std::string text);

  const std::string& text() const noexcept { return text_; }

  bool operator==(const Phrase&) const = default;

 private:
  std::string text_;
};

/// Unit-norm text embedding.
struct TextEmbedding {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  double norm() const noexcept;
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double cosine(const TextEmbedding& a, const TextEmbedding& b) noexcept;

/// Axis-aligned pixel box: top-left corner plus extent.
struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const noexcept { return static_cast<long long>(w) * h; }
  int right() const noexcept { return x + w; }
  int bottom() const noexcept { return y + h; }
  bool valid() const noexcept { return w > 0 && h > 0; }
  bool contains(int px, int py) const noexcept {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool inside_frame(int height, int width) const noexcept {
    return valid() && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
  }
  /// Intersection with the frame; may come back invalid if fully outside.
  BoundingBox clipped(int height, int width) const noexcept;

  bool operator==(const BoundingBox&) const = default;
};

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;

  bool operator==(const ScoredBox&) const = default;
};

struct Detection {
  BoundingBox box;
  Phrase phrase;
  double score = 0.0;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Detection> detections;
};

struct GroundingRegion {
  Phrase phrase;
  BoundingBox box;
};

struct GroundingAnnotation {
  std::string image_id;
  std::vector<GroundingRegion> regions;
};

double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Greedy NMS. Candidates are visited by descending score, then larger area,
/// then input order; a box survives iff its IoU with every kept box is below
/// `iou_threshold`. Output is in keep order.
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold);

/// Same as nms() but returns the surviving input indices in keep order.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold);

/// Row-major first maximum of the mask, as (x, y).
std::pair<int, int> argmax_location(const SaliencyMask& mask);

/// True iff the argmax pixel of `mask` lies inside `gt`.
bool pointing_hit(const SaliencyMask& mask, const BoundingBox& gt);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Geometric image helpers. Bilinear resampling uses half-pixel centres and
// exposes its adjoint so gradients can flow back through a resize.
#pragma once

#include <span>
#include <vector>

#include "wwbl/core.hpp"

namespace wwbl {

class BilinearResize {
 public:
  BilinearResize(int in_height, int in_width, int out_height, int out_width);

  int in_height() const noexcept { return in_h_; }
  int in_width() const noexcept { return in_w_; }
  int out_height() const noexcept { return out_h_; }
  int out_width() const noexcept { return out_w_; }

  template <class T>
  void forward(std::span<const T> in, std::span<T> out) const;

  /// Accumulates the transpose of forward() into `grad_in`.
  template <class T>
  void adjoint(std::span<const T> grad_out, std::span<T> grad_in) const;

 private:
  struct Tap {
    int lo;
    int hi;
    double w_hi;
  };
  static std::vector<Tap> taps(int in, int out);

  int in_h_, in_w_, out_h_, out_w_;
  std::vector<Tap> rows_;
  std::vector<Tap> cols_;
};

ImageTensor resize(const ImageTensor& image, int height, int width);

template <class Tag>
Plane<Tag> resize(const Plane<Tag>& plane, int height, int width) {
  if (plane.same_shape(height, width)) return plane;
  Plane<Tag> out(height, width);
  BilinearResize(plane.height(), plane.width(), height, width)
      .forward<double>(plane.values(), out.values());
  return out;
}

ImageTensor hflip(const ImageTensor& image);

template <class Tag>
Plane<Tag> hflip(const Plane<Tag>& plane) {
  Plane<Tag> out(plane.height(), plane.width());
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x) out.at(y, x) = plane.at(y, plane.width() - 1 - x);
  return out;
}

/// Copies the pixels of `box` (which must lie inside the frame).
ImageTensor crop(const ImageTensor& image, const BoundingBox& box);

template <class Tag>
Plane<Tag> crop(const Plane<Tag>& plane, const BoundingBox& box) {
  if (!box.inside_frame(plane.height(), plane.width()))
    raise(ErrorCode::InvalidArgument, "crop box outside plane");
  Plane<Tag> out(box.h, box.w);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) out.at(y, x) = plane.at(box.y + y, box.x + x);
  return out;
}

/// Every channel multiplied pixel-wise by `weights` (H*W values).
ImageTensor apply_mask(const ImageTensor& image, std::span<const double> weights);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
#include "wwbl/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace wwbl {

std::vector<BilinearResize::Tap> BilinearResize::taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    t[o] = {lo, hi, src - lo};
  }
  return t;
}

BilinearResize::BilinearResize(int in_height, int in_width, int out_height, int out_width)
    : in_h_(in_height), in_w_(in_width), out_h_(out_height), out_w_(out_width) {
  if (in_height < 1 || in_width < 1 || out_height < 1 || out_width < 1)
    raise(ErrorCode::InvalidArgument, "resize extents must be positive");
  rows_ = taps(in_height, out_height);
  cols_ = taps(in_width, out_width);
}

template <class T>
void BilinearResize::forward(std::span<const T> in, std::span<T> out) const {
  for (int oy = 0; oy < out_h_; ++oy) {
    const Tap& r = rows_[oy];
    const T* lo = in.data() + static_cast<std::size_t>(r.lo) * in_w_;
    const T* hi = in.data() + static_cast<std::size_t>(r.hi) * in_w_;
    const T wy = static_cast<T>(r.w_hi);
    T* dst = out.data() + static_cast<std::size_t>(oy) * out_w_;
    for (int ox = 0; ox < out_w_; ++ox) {
      const Tap& c = cols_[ox];
      const T wx = static_cast<T>(c.w_hi);
      const T top = lo[c.lo] + wx * (lo[c.hi] - lo[c.lo]);
      const T bot = hi[c.lo] + wx * (hi[c.hi] - hi[c.lo]);
      dst[ox] = top + wy * (bot - top);
    }
  }
}

template <class T>
void BilinearResize::adjoint(std::span<const T> grad_out, std::span<T> grad_in) const {
  for (int oy = 0; oy < out_h_; ++oy) {
    const Tap& r = rows_[oy];
    T* lo = grad_in.data() + static_cast<std::size_t>(r.lo) * in_w_;
    T* hi = grad_in.data() + static_cast<std::size_t>(r.hi) * in_w_;
    const T wy = static_cast<T>(r.w_hi);
    const T* g = grad_out.data() + static_cast<std::size_t>(oy) * out_w_;
    for (int ox = 0; ox < out_w_; ++ox) {
      const Tap& c = cols_[ox];
      const T wx = static_cast<T>(c.w_hi);
      const T gt = g[ox] * (1 - wy);
      const T gb = g[ox] * wy;
      lo[c.lo] += gt * (1 - wx);
      lo[c.hi] += gt * wx;
      hi[c.lo] += gb * (1 - wx);
      hi[c.hi] += gb * wx;
    }
  }
}

template void BilinearResize::forward<float>(std::span<const float>, std::span<float>) const;
template void BilinearResize::forward<double>(std::span<const double>, std::span<double>) const;
template void BilinearResize::adjoint<float>(std::span<const float>, std::span<float>) const;
template void BilinearResize::adjoint<double>(std::span<const double>, std::span<double>) const;

ImageTensor resize(const ImageTensor& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  ImageTensor out(height, width);
  const BilinearResize plan(image.height(), image.width(), height, width);
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    plan.forward<double>(image.channel(c), out.channel(c));
  }
  return out;
}

ImageTensor hflip(const ImageTensor& image) {
  ImageTensor out(image.height(), image.width());
  for (int c = 0; c < ImageTensor::kChannels; ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x)
        out.at(c, y, x) = image.at(c, y, image.width() - 1 - x);
  return out;
}

ImageTensor crop(const ImageTensor& image, const BoundingBox& box) {
  if (!box.inside_frame(image.height(), image.width()))
    raise(ErrorCode::InvalidArgument, "crop box outside image");
  ImageTensor out(box.h, box.w);
  for (int c = 0; c < ImageTensor::kChannels; ++c)
    for (int y = 0; y < box.h; ++y)
      for (int x = 0; x < box.w; ++x) out.at(c, y, x) = image.at(c, box.y + y, box.x + x);
  return out;
}

ImageTensor apply_mask(const ImageTensor& image, std::span<const double> weights) {
  if (weights.size() != image.pixel_count())
    raise(ErrorCode::DimensionMismatch, "mask shape does not match image shape");
  ImageTensor out(image.height(), image.width());
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    auto src = image.channel(c);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < weights.size(); ++i) dst[i] = src[i] * weights[i];
  }
  return out;
}

}  // namespace wwbl

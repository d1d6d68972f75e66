// SPDX-License-Identifier: Apache-2.0
#include "wwbl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace wwbl::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

Parameter::Parameter(std::string name_, std::vector<int> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  const std::size_t n = product(shape);
  value.assign(n, 0.0f);
  grad.assign(n, 0.0f);
  velocity.assign(n, 0.0f);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), pad_(kernel / 2), has_bias_(bias),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}) {
  if (bias) bias_ = Parameter(name + ".bias", {out_channels});
}

void Conv2d::init(std::mt19937_64& rng) {
  // He initialisation for rectifier networks.
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (float& v : weight_.value) v = static_cast<float>(normal(rng));
  if (has_bias_) std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

void Conv2d::collect(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  if (has_bias_) params.push_back(&bias_);
}

void Conv2d::im2col(const float* src, int h, int w, std::vector<float>& col) const {
  const int k = kernel_;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  col.assign(static_cast<std::size_t>(in_) * k * k * hw, 0.0f);
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    const float* plane = src + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        float* dst = col.data() + row * hw;
        const int dy = ky - pad_;
        const int dx = kx - pad_;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const float* s = plane + static_cast<std::size_t>(sy) * w + dx;
          float* d = dst + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) d[x] = s[x];
        }
      }
    }
  }
}

void Conv2d::col2im(const std::vector<float>& col, int h, int w, float* dst) const {
  const int k = kernel_;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    float* plane = dst + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const float* src = col.data() + row * hw;
        const int dy = ky - pad_;
        const int dx = kx - pad_;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          float* d = plane + static_cast<std::size_t>(sy) * w + dx;
          const float* s = src + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_) raise(ErrorCode::DimensionMismatch, weight_.name + ": unexpected input channel count");
  Tensor y(x.n, out_, x.h, x.w);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const auto kk = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
  ConstMapMatrix wmat(weight_.value.data(), out_, kk);
  std::vector<float> col;
  for (int i = 0; i < x.n; ++i) {
    MapMatrix out(y.sample(i), out_, hw);
    if (kernel_ == 1) {
      out.noalias() = wmat * ConstMapMatrix(x.sample(i), in_, hw);
    } else {
      im2col(x.sample(i), x.h, x.w, col);
      out.noalias() = wmat * ConstMapMatrix(col.data(), kk, hw);
    }
    if (has_bias_)
      for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out) {
  Tensor gx(x.n, x.c, x.h, x.w);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const auto kk = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
  ConstMapMatrix wmat(weight_.value.data(), out_, kk);
  MapMatrix gw(weight_.grad.data(), out_, kk);
  std::vector<float> col;
  std::vector<float> gcol;
  for (int i = 0; i < x.n; ++i) {
    ConstMapMatrix g(grad_out.sample(i), out_, hw);
    if (has_bias_)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += g.row(o).sum();
    if (kernel_ == 1) {
      gw.noalias() += g * ConstMapMatrix(x.sample(i), in_, hw).transpose();
      MapMatrix(gx.sample(i), in_, hw).noalias() = wmat.transpose() * g;
    } else {
      im2col(x.sample(i), x.h, x.w, col);
      gw.noalias() += g * ConstMapMatrix(col.data(), kk, hw).transpose();
      gcol.resize(static_cast<std::size_t>(kk * hw));
      MapMatrix(gcol.data(), kk, hw).noalias() = wmat.transpose() * g;
      col2im(gcol, x.h, x.w, gx.sample(i));
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels)
    : channels_(channels), gamma_(name + ".gamma", {channels}), beta_(name + ".beta", {channels}),
      running_mean_{name + ".running_mean", std::vector<float>(static_cast<std::size_t>(channels), 0.0f)},
      running_var_{name + ".running_var", std::vector<float>(static_cast<std::size_t>(channels), 1.0f)} {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
}

void BatchNorm2d::collect(std::vector<Parameter*>& params) {
  params.push_back(&gamma_);
  params.push_back(&beta_);
}

void BatchNorm2d::collect(std::vector<Buffer*>& buffers) {
  buffers.push_back(&running_mean_);
  buffers.push_back(&running_var_);
}

Tensor BatchNorm2d::forward_train(const Tensor& x, Cache& cache) {
  if (x.c != channels_) raise(ErrorCode::DimensionMismatch, gamma_.name + ": unexpected channel count");
  Tensor y(x.n, x.c, x.h, x.w);
  cache.xhat = Tensor(x.n, x.c, x.h, x.w);
  cache.inv_std.assign(static_cast<std::size_t>(channels_), 0.0f);
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(x.n) * static_cast<double>(plane);

  for (int c = 0; c < channels_; ++c) {
    double s = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
    }
    const double mean = s / count;
    double v = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) v += (p[k] - mean) * (p[k] - mean);
    }
    const double var = v / count;
    const double unbiased = count > 1 ? v / (count - 1) : var;
    running_mean_.value[c] = static_cast<float>((1 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
    running_var_.value[c] = static_cast<float>((1 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);

    const float inv = static_cast<float>(1.0 / std::sqrt(var + kEps));
    cache.inv_std[c] = inv;
    const float g = gamma_.value[c];
    const float b = beta_.value[c];
    const auto m = static_cast<float>(mean);
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * plane;
      float* xh = cache.xhat.sample(i) + c * plane;
      float* q = y.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        xh[k] = (p[k] - m) * inv;
        q[k] = g * xh[k] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::forward_eval(const Tensor& x) const {
  if (x.c != channels_) raise(ErrorCode::DimensionMismatch, gamma_.name + ": unexpected channel count");
  Tensor y(x.n, x.c, x.h, x.w);
  const std::size_t plane = x.plane();
  for (int c = 0; c < channels_; ++c) {
    const float inv = 1.0f / std::sqrt(running_var_.value[c] + kEps);
    const float scale = gamma_.value[c] * inv;
    const float shift = beta_.value[c] - running_mean_.value[c] * scale;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * plane;
      float* q = y.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) q[k] = p[k] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Cache& cache, const Tensor& grad_out) {
  Tensor gx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  const std::size_t plane = grad_out.plane();
  const double count = static_cast<double>(grad_out.n) * static_cast<double>(plane);
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < grad_out.n; ++i) {
      const float* g = grad_out.sample(i) + c * plane;
      const float* xh = cache.xhat.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_g += g[k];
        sum_gx += static_cast<double>(g[k]) * xh[k];
      }
    }
    beta_.grad[c] += static_cast<float>(sum_g);
    gamma_.grad[c] += static_cast<float>(sum_gx);
    const float scale = gamma_.value[c] * cache.inv_std[c];
    const auto mean_g = static_cast<float>(sum_g / count);
    const auto mean_gx = static_cast<float>(sum_gx / count);
    for (int i = 0; i < grad_out.n; ++i) {
      const float* g = grad_out.sample(i) + c * plane;
      const float* xh = cache.xhat.sample(i) + c * plane;
      float* d = gx.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) d[k] = scale * (g[k] - mean_g - xh[k] * mean_gx);
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------

Tensor relu(Tensor x) {
  for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
  return x;
}

Tensor relu_backward(const Tensor& y, Tensor grad_out) {
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    if (y.data[i] <= 0.0f) grad_out.data[i] = 0.0f;
  return grad_out;
}

Tensor sigmoid(Tensor x) {
  for (float& v : x.data) v = 1.0f / (1.0f + std::exp(-v));
  return x;
}

Tensor sigmoid_backward(const Tensor& y, Tensor grad_out) {
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
    const float s = y.data[i];
    grad_out.data[i] *= s * (1.0f - s);
  }
  return grad_out;
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  const int oh = (x.h + 1) / 2;
  const int ow = (x.w + 1) / 2;
  Tensor y(x.n, x.c, oh, ow);
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const float* p = x.sample(i) + c * x.plane();
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::uint32_t arg = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int sy = 2 * yy + dy;
              const int sx = 2 * xx + dx;
              if (sy >= x.h || sx >= x.w) continue;
              const auto idx = static_cast<std::uint32_t>(sy * x.w + sx);
              if (p[idx] > best) {
                best = p[idx];
                arg = idx;
              }
            }
          y.data[o] = best;
          if (argmax) (*argmax)[o] = arg;
        }
    }
  return y;
}

Tensor maxpool2_backward(const std::vector<std::uint32_t>& argmax, int in_h, int in_w,
                         const Tensor& grad_out) {
  Tensor gx(grad_out.n, grad_out.c, in_h, in_w);
  const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
  const std::size_t out_plane = grad_out.plane();
  for (int i = 0; i < grad_out.n; ++i)
    for (int c = 0; c < grad_out.c; ++c) {
      const std::size_t base_o = (static_cast<std::size_t>(i) * grad_out.c + c) * out_plane;
      float* d = gx.sample(i) + c * in_plane;
      for (std::size_t k = 0; k < out_plane; ++k) d[argmax[base_o + k]] += grad_out.data[base_o + k];
    }
  return gx;
}

Tensor resample(const Tensor& x, int out_h, int out_w) {
  if (x.h == out_h && x.w == out_w) return x;
  Tensor y(x.n, x.c, out_h, out_w);
  const BilinearResize plan(x.h, x.w, out_h, out_w);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c)
      plan.forward<float>({x.sample(i) + c * x.plane(), x.plane()}, {y.sample(i) + c * y.plane(), y.plane()});
  return y;
}

Tensor resample_backward(const Tensor& grad_out, int in_h, int in_w) {
  if (grad_out.h == in_h && grad_out.w == in_w) return grad_out;
  Tensor gx(grad_out.n, grad_out.c, in_h, in_w);
  const BilinearResize plan(in_h, in_w, grad_out.h, grad_out.w);
  for (int i = 0; i < grad_out.n; ++i)
    for (int c = 0; c < grad_out.c; ++c)
      plan.adjoint<float>({grad_out.sample(i) + c * grad_out.plane(), grad_out.plane()},
                          {gx.sample(i) + c * gx.plane(), gx.plane()});
  return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    raise(ErrorCode::DimensionMismatch, "concat_channels: spatial shapes differ");
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.sample(i), a.sample(i) + a.sample_size(), y.sample(i));
    std::copy(b.sample(i), b.sample(i) + b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

void split_channels(const Tensor& grad, int channels_a, Tensor& grad_a, Tensor& grad_b) {
  grad_a = Tensor(grad.n, channels_a, grad.h, grad.w);
  grad_b = Tensor(grad.n, grad.c - channels_a, grad.h, grad.w);
  for (int i = 0; i < grad.n; ++i) {
    const float* src = grad.sample(i);
    std::copy(src, src + grad_a.sample_size(), grad_a.sample(i));
    std::copy(src + grad_a.sample_size(), src + grad.sample_size(), grad_b.sample(i));
  }
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) raise(ErrorCode::DimensionMismatch, "add_inplace: shapes differ");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace wwbl::nn

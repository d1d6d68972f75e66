// SPDX-License-Identifier: Apache-2.0
//
// Minimal float32 layer library with explicit backward passes. Forward passes
// are const (batch-norm training aside); whatever a backward pass needs is
// handed back to it by the caller.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wwbl/image_ops.hpp"

namespace wwbl::nn {

/// NCHW float tensor.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * plane(); }
  float* sample(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const float* sample(int i) const noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  float& at(int i, int ch, int y, int x) noexcept {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  float at(int i, int ch, int y, int x) const noexcept {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> velocity;

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_);
  void zero_grad();
};

/// Non-trainable state saved with checkpoints (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<float> value;
};

/// 2-D convolution, stride 1, square kernel, "same" zero padding.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  /// Accumulates weight gradients; `x` is the input of the matching forward.
  Tensor backward(const Tensor& x, const Tensor& grad_out);
  void collect(std::vector<Parameter*>& params);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }

 private:
  void im2col(const float* src, int h, int w, std::vector<float>& col) const;
  void col2im(const std::vector<float>& col, int h, int w, float* dst) const;

  int in_ = 0, out_ = 0, kernel_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Parameter weight_;
  Parameter bias_;
};

class BatchNorm2d {
 public:
  struct Cache {
    Tensor xhat;
    std::vector<float> inv_std;
  };

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels);

  /// Batch statistics; updates the running estimates.
  Tensor forward_train(const Tensor& x, Cache& cache);
  /// Running statistics.
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& grad_out);
  void collect(std::vector<Parameter*>& params);
  void collect(std::vector<Buffer*>& buffers);

  static constexpr float kMomentum = 0.1f;
  static constexpr float kEps = 1e-5f;

 private:
  int channels_ = 0;
  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;
};

Tensor relu(Tensor x);
/// `y` is the forward output.
Tensor relu_backward(const Tensor& y, Tensor grad_out);

Tensor sigmoid(Tensor x);
Tensor sigmoid_backward(const Tensor& y, Tensor grad_out);

/// 2x2 max pooling, stride 2, ceil mode: output extent is ceil(in / 2).
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const std::vector<std::uint32_t>& argmax, int in_h, int in_w,
                         const Tensor& grad_out);

/// Bilinear resampling of every channel.
Tensor resample(const Tensor& x, int out_h, int out_w);
Tensor resample_backward(const Tensor& grad_out, int in_h, int in_w);

/// Channel concatenation [a, b].
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels for gradients: splits off the first `channels_a` channels.
void split_channels(const Tensor& grad, int channels_a, Tensor& grad_a, Tensor& grad_b);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace wwbl::nn

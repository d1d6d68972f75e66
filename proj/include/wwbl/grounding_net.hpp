// SPDX-License-Identifier: Apache-2.0
//
// The segmentation network g. Two variants share the same decoder block
// (upsample x2, conv3x3 + ReLU, conv3x3 + batch-norm, then ReLU or, on the
// last block, sigmoid):
//
//  * wsol        image-only U-Net; skip connections concatenate encoder
//                features of equal resolution.
//  * multimodal  stride-16 encoder -> per-location cosine with the text
//                embedding (Z_s) -> every channel scaled by Z_s -> decoder
//                -> bilinear resize to the input resolution.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wwbl/archive.hpp"
#include "wwbl/core.hpp"
#include "wwbl/nn.hpp"

namespace wwbl {

enum class NetVariant { Wsol, Multimodal };

const char* to_string(NetVariant variant) noexcept;
NetVariant parse_net_variant(const std::string& text);

struct NetConfig {
  NetVariant variant = NetVariant::Multimodal;
  std::string encoder = "small-cnn";
  int feature_dim = 512;
  int input_size = 299;
  int decoder_blocks = 3;
  int width = 16;  ///< channel count of the first encoder stage

  void validate() const;
  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);

  bool operator==(const NetConfig&) const = default;
};

/// Encoder output Z_I, C x h x w.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

/// Single-channel map Z_s with values in [-1,1].
struct SimilarityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

/// Per-location cosine between the C-vector of `features` and `text`.
/// Throws DimensionMismatch when C differs from the embedding dimension.
SimilarityMap condition(const FeatureMap& features, const TextEmbedding& text);

class GroundingNet {
 public:
  /// Architecture only; weights stay uninitialised until init() or load().
  explicit GroundingNet(NetConfig config);
  GroundingNet(NetConfig config, std::uint64_t seed);
  ~GroundingNet();
  GroundingNet(GroundingNet&&) noexcept;
  GroundingNet& operator=(GroundingNet&&) noexcept;

  const NetConfig& config() const noexcept { return config_; }
  bool initialized() const noexcept { return initialized_; }
  void init(std::uint64_t seed);

  /// Evaluation-mode forward pass. `text` is required by the multimodal
  /// variant and ignored by wsol. Output has the image's spatial shape.
  SaliencyMask forward(const ImageTensor& image, const TextEmbedding* text) const;

  /// Evaluation-mode encoder output (multimodal variant).
  FeatureMap encode(const ImageTensor& image) const;

  /// Batched pass used for training. Returns N x 1 x H x W masks.
  nn::Tensor forward_batch(const nn::Tensor& images, std::span<const TextEmbedding> texts, bool training);
  /// Accumulates parameter gradients given d(loss)/d(mask).
  void backward_batch(const nn::Tensor& grad_masks);

  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Buffer*> buffers();
  void zero_grad();

  Archive to_archive() const;
  /// Restores weights from an archive produced by to_archive(). Throws
  /// CheckpointError if the stored configuration or tensors do not match.
  void load(const Archive& archive);
  static GroundingNet from_archive(const Archive& archive);

  static nn::Tensor to_tensor(std::span<const ImageTensor> images);

 private:
  struct Impl;
  NetConfig config_;
  bool initialized_ = false;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wwbl

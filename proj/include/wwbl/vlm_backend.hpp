// SPDX-License-Identifier: Apache-2.0
//
// Vision-language backend: the frozen image-text matcher, text encoder,
// relevancy provider and captioner the grounding network learns from.
#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "wwbl/core.hpp"

namespace wwbl {

enum class BackendKind { Pretrained, Mock };

struct BackendDescriptor {
  BackendKind kind = BackendKind::Mock;
  int embed_dim = 64;
  int match_resolution = 64;

  /// embed_dim >= 8 and match_resolution >= 32.
  void validate() const;
};

class VisionLanguageBackend {
 public:
  virtual ~VisionLanguageBackend() = default;

  virtual const BackendDescriptor& descriptor() const noexcept = 0;
  /// Stable identifier used to key on-disk caches.
  virtual std::string identity() const = 0;

  virtual TextEmbedding encode_text(const Phrase& text) const = 0;

  /// Cosine similarity between the image embedding of `image` (resized to the
  /// match resolution) and `text`. When `grad` is given it receives
  /// d(score)/d(pixel) at the input image's resolution.
  virtual double match_score(const ImageTensor& image, const TextEmbedding& text,
                             ImageTensor* grad = nullptr) const = 0;

  /// Relevancy heat-map at match resolution, values in [0,1].
  virtual RelevancyMap relevancy(const ImageTensor& image, const Phrase& text) const = 0;

  virtual Phrase caption(const ImageTensor& image) const = 0;

  double match_score(const ImageTensor& image, const Phrase& text, ImageTensor* grad = nullptr) const {
    return match_score(image, encode_text(text), grad);
  }

  double text_similarity(const Phrase& a, const Phrase& b) const {
    return cosine(encode_text(a), encode_text(b));
  }
};

enum class MockShape { Square, Circle, Triangle };

struct MockColor {
  std::string word;
  std::array<double, 3> rgb;
};

struct MockShapeWord {
  std::string word;
  MockShape shape;
};

/// Vocabulary and seed of the synthetic colour-blob world.
struct MockWorldSpec {
  std::vector<MockColor> colors;
  std::vector<MockShapeWord> shapes;
  std::uint64_t seed = 7;

  static MockWorldSpec standard(std::uint64_t seed = 7);

  /// Non-empty vocabulary with distinct colour triples.
  void validate() const;

  const MockColor* find_color(const std::string& word) const noexcept;
  const MockShapeWord* find_shape(const std::string& word) const noexcept;
  const std::string& shape_word(MockShape shape) const;
};

/// Blob found by the mock world's (non-differentiable) scene parser.
struct MockBlob {
  int color = 0;  ///< index into MockWorldSpec::colors
  MockShape shape = MockShape::Square;
  BoundingBox box;
  long long pixels = 0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Deterministic colour-blob world.
///
/// Text: content words map to an orthonormal seeded basis (colour words
/// weighted 2, shape words 1, stop words ignored, other words hashed to
/// seeded random unit vectors), summed and renormalised.
///
/// Image: every pixel contributes its intensity times a Gaussian affinity
/// between its chromaticity and each vocabulary colour; achromatic content
/// pools into the "background" direction. All of it is smooth in the pixels,
/// so match_score() is differentiable.
class MockBackend final : public VisionLanguageBackend {
 public:
  explicit MockBackend(MockWorldSpec world, int embed_dim = 64, int match_resolution = 64);

  const BackendDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::string identity() const override;

  TextEmbedding encode_text(const Phrase& text) const override;
  double match_score(const ImageTensor& image, const TextEmbedding& text,
                     ImageTensor* grad = nullptr) const override;
  using VisionLanguageBackend::match_score;
  RelevancyMap relevancy(const ImageTensor& image, const Phrase& text) const override;
  Phrase caption(const ImageTensor& image) const override;

  const MockWorldSpec& world() const noexcept { return world_; }

  /// Connected colour blobs in `image`, largest first.
  std::vector<MockBlob> find_blobs(const ImageTensor& image) const;
  std::string describe(const MockBlob& blob) const;

 private:
  std::vector<double> token_vector(const std::string& token) const;

  MockWorldSpec world_;
  BackendDescriptor descriptor_;
  std::vector<std::array<double, 3>> chroma_;  // unit-length colour directions
  std::vector<std::vector<double>> basis_;     // colour words, shape words, "background"
};

/// Adapter for exported dual-encoder weights (see README, "Pretrained
/// backend"): a token embedding table, a linear patch projection, and a
/// caption bank ranked by match score. Relevancy is the gradient-weighted
/// patch activation map.
class PretrainedBackend final : public VisionLanguageBackend {
 public:
  /// Throws BackendUnavailable if the checkpoint cannot be loaded.
  explicit PretrainedBackend(const std::filesystem::path& checkpoint);

  const BackendDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::string identity() const override { return identity_; }

  TextEmbedding encode_text(const Phrase& text) const override;
  double match_score(const ImageTensor& image, const TextEmbedding& text,
                     ImageTensor* grad = nullptr) const override;
  using VisionLanguageBackend::match_score;
  RelevancyMap relevancy(const ImageTensor& image, const Phrase& text) const override;
  Phrase caption(const ImageTensor& image) const override;

 private:
  std::vector<double> patch_features(const ImageTensor& resized) const;  // [patches x dim]

  BackendDescriptor descriptor_;
  std::string identity_;
  int patch_ = 16;
  std::vector<std::string> vocabulary_;
  std::vector<float> token_table_;   // [vocab x dim]
  std::vector<float> projection_;    // [dim x 3*patch*patch]
  std::vector<std::string> caption_bank_;
};

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string checkpoint;
  std::uint64_t mock_seed = 7;
  std::vector<MockColor> mock_colors;  ///< empty -> standard vocabulary
  int embed_dim = 64;
  int match_resolution = 64;
};

std::unique_ptr<VisionLanguageBackend> make_backend(const BackendConfig& config);

/// Lower-cased alphanumeric tokens of `text`.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace wwbl

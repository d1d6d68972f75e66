// SPDX-License-Identifier: Apache-2.0
#include "wwbl/losses.hpp"

#include <cmath>
#include <string>

#include "wwbl/image_ops.hpp"

namespace wwbl {

void LossWeights::validate() const {
  const double values[] = {lambda1, lambda2, lambda3, lambda4};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(values[i]) || values[i] < 0.0)
      raise(ErrorCode::ConfigError, "loss.lambda" + std::to_string(i + 1) + " must be finite and >= 0");
}

namespace {

void check_shapes(const ImageTensor& image, const SaliencyMask& mask) {
  image.validate();
  if (image.height() != mask.height() || image.width() != mask.width())
    raise(ErrorCode::DimensionMismatch, "mask is " + std::to_string(mask.height()) + "x" +
                                            std::to_string(mask.width()) + " but image is " +
                                            std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

// Scores `weights * image`; optionally returns d(score)/d(weights) through the
// chain rule d/dw_p = sum_c d(score)/dJ_cp * I_cp.
double masked_score(const ImageTensor& image, std::span<const double> weights, const TextEmbedding& text,
                    const VisionLanguageBackend& backend, std::vector<double>* grad) {
  const ImageTensor masked = apply_mask(image, weights);
  if (!grad) return backend.match_score(masked, text, nullptr);
  ImageTensor g;
  const double score = backend.match_score(masked, text, &g);
  const std::size_t plane = weights.size();
  grad->assign(plane, 0.0);
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    const auto gc = g.channel(c);
    const auto ic = image.channel(c);
    for (std::size_t p = 0; p < plane; ++p) (*grad)[p] += gc[p] * ic[p];
  }
  return score;
}

}  // namespace

double loss_fore(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                 const VisionLanguageBackend& backend, std::vector<double>* grad) {
  check_shapes(image, mask);
  const double score = masked_score(image, mask.values(), text, backend, grad);
  if (grad)
    for (double& g : *grad) g = -g;
  return -score;
}

double loss_fore(const ImageTensor& image, const SaliencyMask& mask, const Phrase& text,
                 const VisionLanguageBackend& backend) {
  return loss_fore(image, mask, backend.encode_text(text), backend);
}

double loss_back(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                 const VisionLanguageBackend& backend, std::vector<double>* grad) {
  check_shapes(image, mask);
  std::vector<double> complement(mask.values().begin(), mask.values().end());
  for (double& v : complement) v = 1.0 - v;
  const double score = masked_score(image, complement, text, backend, grad);
  // d(1 - m)/dm = -1
  if (grad)
    for (double& g : *grad) g = -g;
  return score;
}

double loss_back(const ImageTensor& image, const SaliencyMask& mask, const Phrase& text,
                 const VisionLanguageBackend& backend) {
  return loss_back(image, mask, backend.encode_text(text), backend);
}

double loss_rmap(const SaliencyMask& mask, const RelevancyMap& relevancy, std::vector<double>* grad) {
  if (mask.height() != relevancy.height() || mask.width() != relevancy.width())
    raise(ErrorCode::DimensionMismatch, "relevancy map shape differs from mask shape");
  const std::size_t n = mask.size();
  if (n == 0) raise(ErrorCode::InvalidArgument, "empty mask");
  const auto m = mask.values();
  const auto h = relevancy.values();
  double sum = 0.0;
  if (grad) grad->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = m[i] - h[i];
    sum += d * d;
    if (grad) (*grad)[i] = 2.0 * d / static_cast<double>(n);
  }
  return sum / static_cast<double>(n);
}

double loss_reg(const SaliencyMask& mask, std::vector<double>* grad) {
  const std::size_t n = mask.size();
  if (n == 0) raise(ErrorCode::InvalidArgument, "empty mask");
  double sum = 0.0;
  for (double v : mask.values()) sum += v;
  if (grad) grad->assign(n, 1.0 / static_cast<double>(n));
  return sum / static_cast<double>(n);
}

LossBreakdown loss_total(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                         const RelevancyMap& relevancy, const LossWeights& weights,
                         const VisionLanguageBackend& backend, std::vector<double>* grad) {
  check_shapes(image, mask);
  LossBreakdown out;
  std::vector<double> term;
  std::vector<double>* term_grad = grad ? &term : nullptr;
  if (grad) grad->assign(mask.size(), 0.0);

  auto accumulate = [&](double lambda, double value, double& slot) {
    slot = value;
    out.total += lambda * value;
    if (grad)
      for (std::size_t i = 0; i < term.size(); ++i) (*grad)[i] += lambda * term[i];
  };

  if (weights.lambda1 != 0.0)
    accumulate(weights.lambda1, loss_fore(image, mask, text, backend, term_grad), out.fore);
  if (weights.lambda2 != 0.0)
    accumulate(weights.lambda2, loss_back(image, mask, text, backend, term_grad), out.back);
  if (weights.lambda3 != 0.0) accumulate(weights.lambda3, loss_rmap(mask, relevancy, term_grad), out.rmap);
  if (weights.lambda4 != 0.0) accumulate(weights.lambda4, loss_reg(mask, term_grad), out.reg);
  return out;
}

}  // namespace wwbl

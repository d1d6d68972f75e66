// SPDX-License-Identifier: Apache-2.0
//
// Weak-supervision objective for the grounding network. Every term can also
// return its gradient with respect to the mask values (row-major, same
// layout as SaliencyMask::values()).
#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "wwbl/core.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl {

struct LossWeights {
  double lambda1 = 1.0;  ///< foreground
  double lambda2 = 1.0;  ///< background
  double lambda3 = 4.0;  ///< relevancy map
  double lambda4 = 1.0;  ///< regularisation

  /// All weights finite and >= 0.
  void validate() const;
};

struct LossBreakdown {
  double fore = 0.0;
  double back = 0.0;
  double rmap = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// -match(mask * I, t).
double loss_fore(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                 const VisionLanguageBackend& backend, std::vector<double>* grad = nullptr);
double loss_fore(const ImageTensor& image, const SaliencyMask& mask, const Phrase& text,
                 const VisionLanguageBackend& backend);

/// +match((1 - mask) * I, t).
double loss_back(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                 const VisionLanguageBackend& backend, std::vector<double>* grad = nullptr);
double loss_back(const ImageTensor& image, const SaliencyMask& mask, const Phrase& text,
                 const VisionLanguageBackend& backend);

/// Mean squared difference between the mask and the relevancy map.
double loss_rmap(const SaliencyMask& mask, const RelevancyMap& relevancy, std::vector<double>* grad = nullptr);

/// Mean mask value.
double loss_reg(const SaliencyMask& mask, std::vector<double>* grad = nullptr);

/// Weighted sum of the four terms. Terms with zero weight are neither
/// evaluated nor differentiated (their breakdown entry stays 0).
LossBreakdown loss_total(const ImageTensor& image, const SaliencyMask& mask, const TextEmbedding& text,
                         const RelevancyMap& relevancy, const LossWeights& weights,
                         const VisionLanguageBackend& backend, std::vector<double>* grad = nullptr);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Threshold community detection over caption embeddings, used to merge the
// captions of overlapping proposals into one phrase per object.
#pragma once

#include <span>
#include <vector>

#include "wwbl/core.hpp"

namespace wwbl {

struct ClusterConfig {
  double similarity_threshold = 0.85;
  int min_cluster_size = 2;

  void validate() const;
};

struct CaptionCluster {
  Phrase representative;
  TextEmbedding embedding;          ///< embedding of the representative
  std::vector<int> member_indices;  ///< ascending
  int seed = 0;                     ///< caption whose neighbourhood formed the cluster
};

/// Candidate i = every caption with cosine >= threshold to caption i (itself
/// included). Candidates reaching min size are visited by size (largest
/// first, ties by lower seed); each takes the members no earlier cluster
/// claimed and is kept if that still reaches min size. The representative is
/// the member with the largest summed similarity to the cluster (ties: lower
/// index). Output is in acceptance order.
std::vector<CaptionCluster> cluster_captions(std::span<const Phrase> captions,
                                             std::span<const TextEmbedding> embeddings,
                                             const ClusterConfig& cfg);

}  // namespace wwbl

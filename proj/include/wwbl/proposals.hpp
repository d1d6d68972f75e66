// SPDX-License-Identifier: Apache-2.0
//
// Selective search: graph-based over-segmentation followed by greedy
// hierarchical grouping of adjacent regions.
#pragma once

#include <vector>

#include "wwbl/core.hpp"

namespace wwbl {

struct ProposalConfig {
  double initial_segmentation_scale = 200.0;  ///< k, on 0..255 colour distances
  double smoothing_sigma = 0.8;               ///< Gaussian pre-smoothing; 0 disables
  int min_component_size = 40;                ///< px^2
  double color_weight = 1.0;
  double texture_weight = 1.0;
  double size_weight = 1.0;
  double fill_weight = 1.0;
  int max_proposals = 100;
  int min_box_side = 20;

  void validate() const;
};

struct RegionProposal {
  BoundingBox box;
  ImageTensor crop;
};

/// Row-major segment labels 0..count-1, numbered by first appearance.
struct Segmentation {
  int height = 0;
  int width = 0;
  int count = 0;
  std::vector<int> labels;

  int at(int y, int x) const noexcept { return labels[static_cast<std::size_t>(y) * width + x]; }
};

Segmentation oversegment(const ImageTensor& image, const ProposalConfig& cfg);

/// Every region of the greedy grouping. Ids 0..initial_count-1 are the
/// initial segments; merge k creates region initial_count + k.
struct GroupingHierarchy {
  struct Merge {
    int a = 0;
    int b = 0;
    int merged = 0;
  };
  int initial_count = 0;
  std::vector<BoundingBox> boxes;  ///< indexed by region id
  std::vector<Merge> merges;
};

GroupingHierarchy group_regions(const ImageTensor& image, const ProposalConfig& cfg);

/// Region boxes in hierarchy order (initial segments, then each merge),
/// de-duplicated, thin boxes dropped, capped at max_proposals.
std::vector<BoundingBox> selective_search_boxes(const ImageTensor& image, const ProposalConfig& cfg);

std::vector<RegionProposal> selective_search(const ImageTensor& image, const ProposalConfig& cfg);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Inference modes and the evaluation harness.
//
//   wsol       image -> mask -> largest-contour box
//   wsg        image + phrase -> mask -> scored boxes
//   wwbl       proposals -> captions -> caption clusters -> one wsg pass per cluster
//   wwbl-iter  caption the image, ground the caption, keep the box if its
//              crop's caption agrees with the first caption, blank it, repeat
#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wwbl/caption_cluster.hpp"
#include "wwbl/grounding_net.hpp"
#include "wwbl/mask2box.hpp"
#include "wwbl/proposals.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl {

enum class WwblMode { SelectiveSearch, Iterative };

const char* to_string(WwblMode mode) noexcept;
WwblMode parse_wwbl_mode(const std::string& text);

struct WwblConfig {
  WwblMode mode = WwblMode::SelectiveSearch;
  int max_iterations = 5;          ///< n
  double accept_similarity = 0.6;  ///< tau

  void validate() const;
};

struct PipelineContext {
  const GroundingNet& net;
  const VisionLanguageBackend& backend;
  ExtractionConfig extract;
  ProposalConfig proposals;
  ClusterConfig cluster;
  WwblConfig wwbl;
};

using MaskPtr = std::shared_ptr<const SaliencyMask>;

/// Detections for one image, each with the mask it was extracted from.
struct ImagePrediction {
  DetectionSet set;
  std::vector<MaskPtr> masks;  ///< parallel to set.detections; may hold nullptr
  /// Optional, parallel to set.detections: a stored (x, y) mask argmax, used
  /// for pointing in place of the mask (predictions read back from records).
  std::vector<std::optional<std::pair<int, int>>> points;
};

/// Network pass at net.input_size, mask resized back to the image's shape.
SaliencyMask predict_mask(const PipelineContext& ctx, const ImageTensor& image, const TextEmbedding* text);

struct WsgResult {
  SaliencyMask mask;
  std::vector<ScoredBox> boxes;
};

WsgResult infer_wsg(const PipelineContext& ctx, const ImageTensor& image, const Phrase& phrase);

struct WsolResult {
  SaliencyMask mask;
  BoundingBox box;
};

/// `phrase` is only needed by a multimodal network.
WsolResult infer_wsol(const PipelineContext& ctx, const ImageTensor& image, const Phrase* phrase);

/// WSG detections for every phrase, all sharing that phrase's mask. When no
/// box clears the filters the largest-contour box at wsol_threshold stands in,
/// so the map still counts for pointing.
ImagePrediction predict_wsg(const PipelineContext& ctx, const ImageTensor& image, std::span<const Phrase> phrases);

/// One WSOL box per phrase; with no phrases, a single class-agnostic query
/// (wsol variant only).
ImagePrediction predict_wsol(const PipelineContext& ctx, const ImageTensor& image, std::span<const Phrase> phrases);

/// Proposal-based detection: selective search, captioning, clustering, grounding.
ImagePrediction infer_wwbl_ss(const PipelineContext& ctx, const ImageTensor& image);

/// Iterative detection: caption, ground, erase, repeat.
ImagePrediction infer_wwbl_iter(const PipelineContext& ctx, const ImageTensor& image);

/// Dispatches on ctx.wwbl.mode.
ImagePrediction infer_wwbl(const PipelineContext& ctx, const ImageTensor& image);

// ---------------------------------------------------------------------------

enum class EvalTask { Wsol, Wsg, Wwbl };

const char* to_string(EvalTask task) noexcept;
EvalTask parse_eval_task(const std::string& text);

struct EvalRecord {
  std::string image_id;
  std::string phrase;          ///< ground-truth phrase
  std::string matched_phrase;  ///< empty when nothing matched
  bool point_hit = false;
  bool box_hit = false;
};

struct EvalReport {
  EvalTask task = EvalTask::Wwbl;
  int total = 0;
  int point_hits = 0;
  int box_hits = 0;
  double pointing_accuracy = 0.0;
  double box_accuracy = 0.0;
  std::vector<EvalRecord> records;

  nlohmann::json to_json() const;
};

/// Scores predictions against ground truth, one record per ground-truth
/// region (per image for wsol).
///
///   wwbl  each region takes the detection whose phrase embedding is closest
///         to the region phrase (ties: higher score, then smaller box coords)
///   wsg   detections whose phrase equals the region phrase; the top-scored one
///   wsol  the top-scored detection against any ground-truth box
///
/// Pointing uses the matched detection's mask, or the box centre when it has
/// none. Missing predictions count as misses. Throws DataError if a
/// prediction names an image absent from the ground truth.
EvalReport evaluate(const std::vector<ImagePrediction>& predictions, const std::vector<GroundingAnnotation>& truth,
                    const VisionLanguageBackend& backend, EvalTask task);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Weakly supervised training: (image, caption) pairs only, SGD with momentum
// and weight decay at a constant learning rate.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wwbl/archive.hpp"
#include "wwbl/grounding_net.hpp"
#include "wwbl/losses.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl {

enum class TrainTask { Wsol, Wsg };

const char* to_string(TrainTask task) noexcept;
TrainTask parse_train_task(const std::string& text);

struct TrainConfig {
  TrainTask task = TrainTask::Wsg;
  int batch_size = 32;
  double lr = 0.0003;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int epochs = 100;
  double flip_prob = 0.5;
  int resize = 256;     ///< wsol: resize before cropping
  int crop = 224;       ///< wsol: random crop side
  int wsg_input = 299;  ///< wsg: training resolution
  std::uint64_t seed = 0;
  std::string name = "run";
  std::string runs_dir;      ///< checkpoints go to <runs_dir>/<name>/; empty disables writing
  std::string class_phrase;  ///< wsol: fixed phrase when an example carries no caption

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  /// Side of the square images the network sees during training.
  int train_resolution() const noexcept { return task == TrainTask::Wsol ? crop : wsg_input; }
  /// Side of the image before cropping.
  int base_resolution() const noexcept { return task == TrainTask::Wsol ? resize : wsg_input; }
};

/// A training example: no boxes by construction.
struct TrainingExample {
  std::string id;
  ImageTensor image;
  std::vector<Phrase> captions;
};

struct AugmentPlan {
  int crop_x = 0;
  int crop_y = 0;
  bool flip = false;
};

AugmentPlan sample_augment(const TrainConfig& cfg, std::mt19937_64& rng);
/// `image` must already be at base_resolution().
ImageTensor apply_augment(const ImageTensor& image, const AugmentPlan& plan, const TrainConfig& cfg);
RelevancyMap apply_augment(const RelevancyMap& map, const AugmentPlan& plan, const TrainConfig& cfg);
/// Resize to base_resolution(), then sample and apply a plan.
ImageTensor augment(const ImageTensor& image, const TrainConfig& cfg, std::mt19937_64& rng);

/// Relevancy maps keyed by (image, caption, resolution), held in memory and,
/// when a directory is given, persisted as archives.
class RelevancyCache {
 public:
  explicit RelevancyCache(std::filesystem::path dir = {});
  /// Uses $WWBL_CACHE_DIR when set.
  static RelevancyCache from_environment();

  /// Relevancy of `image` for `text`, resized to the image's resolution.
  RelevancyMap get(const VisionLanguageBackend& backend, const ImageTensor& image, const Phrase& text);

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 private:
  std::filesystem::path dir_;
  std::mutex mutex_;
  std::map<std::string, RelevancyMap> memory_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
  /// v = mu v + (g + wd w); w -= lr v
  void step(std::span<nn::Parameter* const> params) const;

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
};

/// One element of a batch, already augmented to the training resolution.
struct TrainSample {
  ImageTensor image;
  Phrase text;
  RelevancyMap relevancy;
};

struct StepResult {
  LossBreakdown mean;  ///< batch average of every term
};

/// Forward, loss, backward and one optimiser update. Throws NonFiniteLoss.
StepResult train_step(std::span<const TrainSample> batch, GroundingNet& net, const LossWeights& weights,
                      const VisionLanguageBackend& backend, const SgdMomentum& optimizer);

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  LossBreakdown mean;
};

struct FitResult {
  std::vector<EpochStats> epochs;
  int total_steps = 0;
  double final_loss = 0.0;                          ///< mean loss of the last epoch
  std::vector<std::filesystem::path> checkpoints;  ///< one per epoch when writing is enabled
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Runs cfg.epochs epochs over `dataset` in a seeded shuffled order; one
/// caption is drawn uniformly per example per epoch. Reproducible for a
/// given seed.
FitResult fit(std::span<const TrainingExample> dataset, const TrainConfig& cfg, const LossWeights& weights,
              GroundingNet& net, const VisionLanguageBackend& backend, RelevancyCache& cache,
              const EpochCallback& on_epoch = {});

/// Network weights plus training metadata.
Archive make_checkpoint(const GroundingNet& net, const TrainConfig& cfg, const LossWeights& weights,
                        const EpochStats& stats);
/// Network from a checkpoint archive; throws CheckpointError.
GroundingNet load_checkpoint(const std::filesystem::path& path);

}  // namespace wwbl

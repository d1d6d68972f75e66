// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON object with the sections backend, net, train,
// loss, extract, proposals, cluster, pipeline and synthetic. A file only
// needs the keys it changes; unknown sections or keys are rejected.
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "wwbl/caption_cluster.hpp"
#include "wwbl/grounding_net.hpp"
#include "wwbl/losses.hpp"
#include "wwbl/mask2box.hpp"
#include "wwbl/pipeline.hpp"
#include "wwbl/proposals.hpp"
#include "wwbl/synthetic.hpp"
#include "wwbl/trainer.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl {

struct RunConfig {
  BackendConfig backend;
  NetConfig net;
  TrainConfig train;
  LossWeights loss;
  ExtractionConfig extract;
  ProposalConfig proposals;
  ClusterConfig cluster;
  WwblConfig pipeline;
  SyntheticConfig synthetic;

  RunConfig();

  /// Overlays `patch` onto this configuration. Throws ConfigError naming the
  /// offending key on unknown keys or wrong value types.
  void merge(const nlohmann::json& patch);
  nlohmann::json to_json() const;
  /// Every section's own checks plus cross-section consistency.
  void validate() const;

  /// Defaults overlaid with the file at `path`.
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace wwbl

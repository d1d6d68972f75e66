// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary archive used for network checkpoints and exported
// backend weights:
//
//   "WWBLARC1" | u64 little-endian header size | JSON header | float32 blob
//
// The JSON header carries a mandatory integer "version", free-form metadata,
// and a "tensors" table of {name, shape, offset, count} into the blob.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wwbl {

struct ArchiveTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Archive {
  static constexpr int kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArchiveTensor> tensors;

  const ArchiveTensor* find(const std::string& name) const noexcept;
  /// Throws CheckpointError when the tensor is missing or has the wrong size.
  const ArchiveTensor& require(const std::string& name, std::size_t count) const;
};

/// Throws CheckpointError on I/O failure.
void write_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws CheckpointError on I/O failure, bad magic, or a missing/unknown version.
Archive read_archive(const std::filesystem::path& path);

}  // namespace wwbl

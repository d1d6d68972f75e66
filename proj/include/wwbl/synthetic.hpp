// SPDX-License-Identifier: Apache-2.0
//
// Generator for the colour-blob world: 1-3 non-overlapping solid shapes of
// distinct vocabulary colours on a grey textured background.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wwbl/core.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl {

struct SyntheticConfig {
  int image_size = 96;
  int min_objects = 1;
  int max_objects = 3;
  int min_side = 22;
  int max_side = 36;
  int margin = 4;  ///< minimum gap between object boxes

  void validate() const;
};

struct SyntheticObject {
  int color = 0;
  MockShape shape = MockShape::Square;
  BoundingBox box;  ///< exact extent of the painted pixels
};

struct SyntheticScene {
  std::string image_id;
  ImageTensor image;
  std::vector<SyntheticObject> objects;
  std::vector<GroundingRegion> regions;  ///< phrase "<colour> <shape>" per object
  std::vector<std::string> captions;     ///< whole-scene caption, then one per object
};

/// Scene `index` of the stream seeded by `seed`; independent of other indices.
SyntheticScene make_scene(const MockWorldSpec& world, const SyntheticConfig& cfg, std::uint64_t seed, int index);

std::vector<SyntheticScene> make_scenes(const MockWorldSpec& world, const SyntheticConfig& cfg, std::uint64_t seed,
                                        int count, int first_index = 0);

/// Writes images/scene_<k>.png and annotations.jsonl under `dir`.
void write_synthetic_dataset(const std::filesystem::path& dir, std::span<const SyntheticScene> scenes);

}  // namespace wwbl

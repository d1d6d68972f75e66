// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>

#include "wwbl/core.hpp"

namespace wwbl {

/// 8-bit colour or grayscale file -> RGB in [0,1]. Throws DataError.
ImageTensor read_image(const std::filesystem::path& path);
/// Lossless 8-bit PNG. Throws DataError.
void write_image(const std::filesystem::path& path, const ImageTensor& image);

/// Grayscale, pixel = round(255 * value).
void write_mask(const std::filesystem::path& path, const SaliencyMask& mask);
SaliencyMask read_mask(const std::filesystem::path& path);

/// Image with each detection's box drawn and "phrase score" written above it.
void write_overlay(const std::filesystem::path& path, const ImageTensor& image,
                   std::span<const Detection> detections);

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
//
// Conversions between ImageTensor and OpenCV matrices (internal).
#pragma once

#include <opencv2/core.hpp>

#include "wwbl/core.hpp"

namespace wwbl::detail {

/// CV_32FC3 in RGB order, values as stored.
inline cv::Mat to_mat(const ImageTensor& image) {
  cv::Mat out(image.height(), image.width(), CV_32FC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) row[x][c] = static_cast<float>(image.at(c, y, x));
  }
  return out;
}

/// Accepts CV_32FC3 RGB.
inline ImageTensor from_mat(const cv::Mat& mat) {
  ImageTensor out(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<cv::Vec3f>(y);
    for (int x = 0; x < mat.cols; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<double>(row[x][c]);
  }
  return out;
}

}  // namespace wwbl::detail

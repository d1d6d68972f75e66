// SPDX-License-Identifier: Apache-2.0
#include "wwbl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace wwbl {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

cv::Mat to_bgr8(const ImageTensor& image) {
  cv::Mat out(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
  }
  return out;
}

void write_mat(const std::filesystem::path& path, const cv::Mat& mat) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    raise(ErrorCode::DataError, "cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) raise(ErrorCode::DataError, "cannot write " + path.string());
}

}  // namespace

ImageTensor read_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) raise(ErrorCode::DataError, "cannot read image " + path.string());
  ImageTensor out(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][2 - c] / 255.0;
  }
  return out;
}

void write_image(const std::filesystem::path& path, const ImageTensor& image) {
  write_mat(path, to_bgr8(image));
}

void write_mask(const std::filesystem::path& path, const SaliencyMask& mask) {
  cv::Mat out(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      out.at<unsigned char>(y, x) =
          static_cast<unsigned char>(std::lround(std::clamp(mask.at(y, x), 0.0, 1.0) * 255.0));
  write_mat(path, out);
}

SaliencyMask read_mask(const std::filesystem::path& path) {
  const cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) raise(ErrorCode::DataError, "cannot read mask " + path.string());
  SaliencyMask out(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) out.at(y, x) = gray.at<unsigned char>(y, x) / 255.0;
  return out;
}

void write_overlay(const std::filesystem::path& path, const ImageTensor& image,
                   std::span<const Detection> detections) {
  cv::Mat canvas = to_bgr8(image);
  const double font_scale = std::max(0.3, image.width() / 640.0);
  for (const auto& d : detections) {
    const cv::Scalar colour(0, 255, 255);
    cv::rectangle(canvas, cv::Rect(d.box.x, d.box.y, d.box.w, d.box.h), colour, 1);
    char score[16];
    std::snprintf(score, sizeof score, " %.2f", d.score);
    const std::string label = d.phrase.text() + score;
    const int baseline_y = std::max(10, d.box.y - 3);
    cv::putText(canvas, label, cv::Point(d.box.x, baseline_y), cv::FONT_HERSHEY_SIMPLEX, font_scale, colour, 1,
                cv::LINE_AA);
  }
  write_mat(path, canvas);
}

}  // namespace wwbl

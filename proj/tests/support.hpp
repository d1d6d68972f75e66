// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <tuple>
#include <vector>

#include "wwbl/core.hpp"
#include "wwbl/vlm_backend.hpp"

namespace wwbl::testing {

inline ImageTensor random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  ImageTensor img(h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : img.data()) v = u(rng);
  return img;
}

inline void paint(ImageTensor& img, const BoundingBox& b, double r, double g, double bl) {
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = bl;
    }
}

/// Mask that is 1 inside `b` and `outside` elsewhere.
inline SaliencyMask box_mask(int h, int w, const BoundingBox& b, double inside = 1.0, double outside = 0.0) {
  SaliencyMask m(h, w, outside);
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) m.at(y, x) = inside;
  return m;
}

/// 8-connected foreground components by breadth-first flood fill, as boxes in
/// raster order of their first pixel.
inline std::vector<BoundingBox> flood_fill_boxes(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<char> seen(static_cast<std::size_t>(h) * w, 0);
  std::vector<BoundingBox> out;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (mask.at(y0, x0) == 0.0 || seen[static_cast<std::size_t>(y0) * w + x0]) continue;
      int xa = x0, xb = x0, ya = y0, yb = y0;
      std::deque<std::pair<int, int>> q{{y0, x0}};
      seen[static_cast<std::size_t>(y0) * w + x0] = 1;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        xa = std::min(xa, x);
        xb = std::max(xb, x);
        ya = std::min(ya, y);
        yb = std::max(yb, y);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            const std::size_t k = static_cast<std::size_t>(yy) * w + xx;
            if (seen[k] || mask.at(yy, xx) == 0.0) continue;
            seen[k] = 1;
            q.emplace_back(yy, xx);
          }
      }
      out.push_back({xa, ya, xb - xa + 1, yb - ya + 1});
    }
  return out;
}

inline bool box_less(const BoundingBox& a, const BoundingBox& b) {
  return std::tie(a.y, a.x, a.w, a.h) < std::tie(b.y, b.x, b.w, b.h);
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline MockBackend standard_mock(int embed_dim = 64, int match_resolution = 64) {
  return MockBackend(MockWorldSpec::standard(7), embed_dim, match_resolution);
}

}  // namespace wwbl::testing

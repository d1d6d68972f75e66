// SPDX-License-Identifier: Apache-2.0
#include "wwbl/mask2box.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace wwbl {

void ExtractionConfig::validate() const {
  auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open_unit(wsol_threshold)) raise(ErrorCode::ConfigError, "extract.wsol_threshold must be in (0,1)");
  if (!open_unit(wsg_threshold)) raise(ErrorCode::ConfigError, "extract.wsg_threshold must be in (0,1)");
  if (!open_unit(nms_iou)) raise(ErrorCode::ConfigError, "extract.nms_iou must be in (0,1)");
  if (!(energy_keep_ratio > 0.0 && energy_keep_ratio <= 1.0))
    raise(ErrorCode::ConfigError, "extract.energy_keep_ratio must be in (0,1]");
}

BoundingBox Contour::bounds() const noexcept {
  if (points.empty()) return {};
  int x0 = points[0].x, x1 = points[0].x, y0 = points[0].y, y1 = points[0].y;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

double Contour::area() const noexcept {
  long long twice = 0;
  const std::size_t n = points.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = points[i];
    const auto& b = points[(i + 1) % n];
    twice += static_cast<long long>(a.x) * b.y - static_cast<long long>(b.x) * a.y;
  }
  return std::abs(static_cast<double>(twice)) / 2.0;
}

BinaryMask binarize(const SaliencyMask& mask, double threshold) {
  BinaryMask out(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = mask.values()[i] >= threshold ? 1.0 : 0.0;
  return out;
}

namespace {

// Neighbour offsets, clockwise on screen (y grows downwards), starting east.
constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};

int direction_of(int dy, int dx) {
  for (int d = 0; d < 8; ++d)
    if (kDy[d] == dy && kDx[d] == dx) return d;
  return -1;
}

}  // namespace

std::vector<Contour> trace_contours(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  const int pw = w + 2;
  // Zero-padded label image: 0 background, 1 unvisited foreground,
  // +/-k visited by border k+1 (NBD numbering starts at 2).
  std::vector<int> f(static_cast<std::size_t>(h + 2) * pw, 0);
  auto F = [&](int y, int x) -> int& { return f[static_cast<std::size_t>(y) * pw + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) F(y + 1, x + 1) = mask.at(y, x) != 0.0 ? 1 : 0;

  std::vector<Contour> contours;
  int nbd = 1;

  for (int i = 1; i <= h; ++i) {
    int lnbd = 1;
    for (int j = 1; j <= w; ++j) {
      const int fij = F(i, j);
      if (fij == 0) continue;

      int i2 = 0, j2 = 0;
      bool start = false;
      bool hole = false;
      if (fij == 1 && F(i, j - 1) == 0) {
        start = true;
        i2 = i;
        j2 = j - 1;
      } else if (fij >= 1 && F(i, j + 1) == 0) {
        start = true;
        hole = true;
        i2 = i;
        j2 = j + 1;
        if (fij > 1) lnbd = fij;
      }

      if (start) {
        ++nbd;
        Contour c;
        c.hole = hole;
        // Parent from the border most recently met on this row (LNBD).
        if (lnbd >= 2) {
          const Contour& prior = contours[static_cast<std::size_t>(lnbd - 2)];
          const bool prior_hole = prior.hole;
          c.parent = (hole != prior_hole) ? lnbd - 2 : prior.parent;
        }

        // 3.1: clockwise search around (i, j) from (i2, j2).
        const int d0 = direction_of(i2 - i, j2 - j);
        int found = -1;
        for (int k = 0; k < 8; ++k) {
          const int d = (d0 + k) % 8;
          if (F(i + kDy[d], j + kDx[d]) != 0) {
            found = d;
            break;
          }
        }
        if (found < 0) {
          F(i, j) = -nbd;
          c.points.push_back({j - 1, i - 1});
        } else {
          const int i1 = i + kDy[found], j1 = j + kDx[found];
          i2 = i1;
          j2 = j1;
          int i3 = i, j3 = j;
          while (true) {
            c.points.push_back({j3 - 1, i3 - 1});
            // 3.3: counter-clockwise search around (i3, j3), starting after (i2, j2).
            const int dprev = direction_of(i2 - i3, j2 - j3);
            bool east_zero_examined = false;
            int i4 = i3, j4 = j3;
            for (int k = 1; k <= 8; ++k) {
              const int d = ((dprev - k) % 8 + 8) % 8;
              const int yy = i3 + kDy[d], xx = j3 + kDx[d];
              if (F(yy, xx) != 0) {
                i4 = yy;
                j4 = xx;
                break;
              }
              if (d == 0) east_zero_examined = true;
            }
            // 3.4
            if (east_zero_examined)
              F(i3, j3) = -nbd;
            else if (F(i3, j3) == 1)
              F(i3, j3) = nbd;
            // 3.5
            if (i4 == i && j4 == j && i3 == i1 && j3 == j1) break;
            i2 = i3;
            j2 = j3;
            i3 = i4;
            j3 = j4;
          }
        }
        contours.push_back(std::move(c));
      }

      // 4
      const int now = F(i, j);
      if (now != 1) lnbd = std::abs(now);
    }
  }
  return contours;
}

std::optional<BoundingBox> largest_contour_box(const SaliencyMask& mask, double threshold) {
  const auto contours = trace_contours(binarize(mask, threshold));
  const Contour* best = nullptr;
  double best_area = -1.0;
  long long best_box = -1;
  for (const auto& c : contours) {
    if (c.hole) continue;
    const double a = c.area();
    const long long b = c.bounds().area();
    if (a > best_area || (a == best_area && b > best_box)) {
      best = &c;
      best_area = a;
      best_box = b;
    }
  }
  if (!best) return std::nullopt;
  return best->bounds();
}

BoundingBox extract_wsol_box(const SaliencyMask& mask, const ExtractionConfig& cfg) {
  if (auto box = largest_contour_box(mask, cfg.wsol_threshold)) return *box;
  return {0, 0, mask.width(), mask.height()};
}

std::vector<ScoredBox> extract_wsg_boxes(const SaliencyMask& mask, const ExtractionConfig& cfg) {
  std::vector<ScoredBox> candidates;
  for (const auto& c : trace_contours(binarize(mask, cfg.wsg_threshold))) {
    if (c.hole) continue;
    const BoundingBox b = c.bounds();
    double sum = 0.0;
    for (int y = b.y; y < b.bottom(); ++y)
      for (int x = b.x; x < b.right(); ++x) sum += mask.at(y, x);
    candidates.push_back({b, sum / static_cast<double>(b.area())});
  }
  auto kept = nms(candidates, cfg.nms_iou);
  if (kept.empty()) return kept;
  const double floor = cfg.energy_keep_ratio * kept.front().score;
  std::erase_if(kept, [&](const ScoredBox& s) { return s.score < floor; });
  return kept;
}

}  // namespace wwbl

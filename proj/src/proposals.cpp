// SPDX-License-Identifier: Apache-2.0
#include "wwbl/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "wwbl/image_ops.hpp"

namespace wwbl {

void ProposalConfig::validate() const {
  if (!(initial_segmentation_scale > 0.0)) raise(ErrorCode::ConfigError, "proposals.scale must be > 0");
  if (smoothing_sigma < 0.0) raise(ErrorCode::ConfigError, "proposals.sigma must be >= 0");
  if (min_component_size < 1) raise(ErrorCode::ConfigError, "proposals.min_component_size must be >= 1");
  for (double w : {color_weight, texture_weight, size_weight, fill_weight})
    if (!(w >= 0.0)) raise(ErrorCode::ConfigError, "proposals similarity weights must be >= 0");
  if (max_proposals < 1) raise(ErrorCode::ConfigError, "proposals.max_proposals must be >= 1");
  if (min_box_side < 1) raise(ErrorCode::ConfigError, "proposals.min_box_side must be >= 1");
}

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(int n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  int join(int a, int b, double weight) {
    if (size_[a] < size_[b] || (size_[a] == size_[b] && b < a)) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = weight;
    return a;
  }
  int size(int a) const { return size_[a]; }
  double internal(int a) const { return internal_[a]; }

 private:
  std::vector<int> parent_;
  std::vector<int> size_;
  std::vector<double> internal_;
};

struct Edge {
  int a = 0;
  int b = 0;
  double w = 0.0;
};

cv::Mat smoothed(const ImageTensor& image, double sigma) {
  cv::Mat m = detail::to_mat(image);
  if (sigma > 0.0) cv::GaussianBlur(m, m, cv::Size(0, 0), sigma, sigma, cv::BORDER_REPLICATE);
  return m;
}

}  // namespace

Segmentation oversegment(const ImageTensor& image, const ProposalConfig& cfg) {
  image.validate();
  cfg.validate();
  const int h = image.height();
  const int w = image.width();
  const cv::Mat m = smoothed(image, cfg.smoothing_sigma);

  auto dist = [&](int y0, int x0, int y1, int x1) {
    const cv::Vec3f a = m.at<cv::Vec3f>(y0, x0);
    const cv::Vec3f b = m.at<cv::Vec3f>(y1, x1);
    const cv::Vec3f d = a - b;
    return 255.0 * std::sqrt(static_cast<double>(d.dot(d)));
  };

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(h) * w * 4);
  auto id = [w](int y, int x) { return y * w + x; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) edges.push_back({id(y, x), id(y, x + 1), dist(y, x, y, x + 1)});
      if (y + 1 < h) edges.push_back({id(y, x), id(y + 1, x), dist(y, x, y + 1, x)});
      if (x + 1 < w && y + 1 < h) edges.push_back({id(y, x), id(y + 1, x + 1), dist(y, x, y + 1, x + 1)});
      if (x + 1 < w && y > 0) edges.push_back({id(y, x), id(y - 1, x + 1), dist(y, x, y - 1, x + 1)});
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.w < r.w; });

  const double k = cfg.initial_segmentation_scale;
  DisjointSet ds(h * w);
  for (const auto& e : edges) {
    const int a = ds.find(e.a);
    const int b = ds.find(e.b);
    if (a == b) continue;
    const double ta = ds.internal(a) + k / ds.size(a);
    const double tb = ds.internal(b) + k / ds.size(b);
    if (e.w <= std::min(ta, tb)) ds.join(a, b, e.w);
  }
  for (const auto& e : edges) {
    const int a = ds.find(e.a);
    const int b = ds.find(e.b);
    if (a != b && (ds.size(a) < cfg.min_component_size || ds.size(b) < cfg.min_component_size))
      ds.join(a, b, std::max(ds.internal(a), ds.internal(b)));
  }

  Segmentation seg{h, w, 0, std::vector<int>(static_cast<std::size_t>(h) * w)};
  std::map<int, int> relabel;
  for (int p = 0; p < h * w; ++p) {
    const int root = ds.find(p);
    auto [it, inserted] = relabel.emplace(root, seg.count);
    if (inserted) ++seg.count;
    seg.labels[static_cast<std::size_t>(p)] = it->second;
  }
  return seg;
}

namespace {

constexpr int kColorBins = 25;
constexpr int kOrientations = 8;
constexpr int kMagnitudeBins = 10;
constexpr int kColorLen = 3 * kColorBins;
constexpr int kTextureLen = 3 * kOrientations * kMagnitudeBins;

struct Region {
  long long size = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
  std::vector<double> color;
  std::vector<double> texture;

  BoundingBox box() const { return {x0, y0, x1 - x0 + 1, y1 - y0 + 1}; }
};

void l1_normalise(std::vector<double>& h) {
  const double s = std::accumulate(h.begin(), h.end(), 0.0);
  if (s > 0.0)
    for (double& v : h) v /= s;
}

double intersection(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return s;
}

struct Grouping {
  const ProposalConfig& cfg;
  double image_size;
  std::vector<Region> regions;

  double similarity(int i, int j) const {
    const Region& a = regions[i];
    const Region& b = regions[j];
    double s = 0.0;
    if (cfg.color_weight > 0.0) s += cfg.color_weight * intersection(a.color, b.color);
    if (cfg.texture_weight > 0.0) s += cfg.texture_weight * intersection(a.texture, b.texture);
    if (cfg.size_weight > 0.0) s += cfg.size_weight * (1.0 - static_cast<double>(a.size + b.size) / image_size);
    if (cfg.fill_weight > 0.0) {
      const double bw = std::max(a.x1, b.x1) - std::min(a.x0, b.x0) + 1;
      const double bh = std::max(a.y1, b.y1) - std::min(a.y0, b.y0) + 1;
      s += cfg.fill_weight * (1.0 - (bw * bh - static_cast<double>(a.size + b.size)) / image_size);
    }
    return s;
  }

  int merge(int i, int j) {
    const Region& a = regions[i];
    const Region& b = regions[j];
    Region r;
    r.size = a.size + b.size;
    r.x0 = std::min(a.x0, b.x0);
    r.y0 = std::min(a.y0, b.y0);
    r.x1 = std::max(a.x1, b.x1);
    r.y1 = std::max(a.y1, b.y1);
    const double wa = static_cast<double>(a.size) / r.size;
    const double wb = static_cast<double>(b.size) / r.size;
    r.color.resize(a.color.size());
    r.texture.resize(a.texture.size());
    for (std::size_t k = 0; k < r.color.size(); ++k) r.color[k] = wa * a.color[k] + wb * b.color[k];
    for (std::size_t k = 0; k < r.texture.size(); ++k) r.texture[k] = wa * a.texture[k] + wb * b.texture[k];
    regions.push_back(std::move(r));
    return static_cast<int>(regions.size()) - 1;
  }
};

std::vector<Region> initial_regions(const ImageTensor& image, const Segmentation& seg, const ProposalConfig& cfg) {
  const int h = seg.height;
  const int w = seg.width;
  std::vector<Region> regions(static_cast<std::size_t>(seg.count));
  for (auto& r : regions) {
    r.x0 = w;
    r.y0 = h;
    r.x1 = -1;
    r.y1 = -1;
    r.color.assign(kColorLen, 0.0);
    r.texture.assign(kTextureLen, 0.0);
  }

  cv::Mat rgb = detail::to_mat(image);
  cv::Mat hsv;
  cv::cvtColor(rgb, hsv, cv::COLOR_RGB2HSV);  // H in [0,360), S and V in [0,1]

  // Per-channel gradient orientation and magnitude of the smoothed image.
  cv::Mat sm = smoothed(image, std::max(1.0, cfg.smoothing_sigma));
  std::vector<cv::Mat> planes;
  cv::split(sm, planes);
  std::vector<cv::Mat> gx(3), gy(3);
  double max_mag = 0.0;
  for (int c = 0; c < 3; ++c) {
    cv::Sobel(planes[c], gx[c], CV_32F, 1, 0, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
    cv::Sobel(planes[c], gy[c], CV_32F, 0, 1, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
    cv::Mat mag;
    cv::magnitude(gx[c], gy[c], mag);
    double mx = 0.0;
    cv::minMaxLoc(mag, nullptr, &mx);
    max_mag = std::max(max_mag, mx);
  }

  constexpr double kTwoPi = 6.283185307179586;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Region& r = regions[static_cast<std::size_t>(seg.at(y, x))];
      ++r.size;
      r.x0 = std::min(r.x0, x);
      r.y0 = std::min(r.y0, y);
      r.x1 = std::max(r.x1, x);
      r.y1 = std::max(r.y1, y);
      const cv::Vec3f v = hsv.at<cv::Vec3f>(y, x);
      const double hsv_unit[3] = {v[0] / 360.0, v[1], v[2]};
      for (int c = 0; c < 3; ++c) {
        const int bin = std::clamp(static_cast<int>(hsv_unit[c] * kColorBins), 0, kColorBins - 1);
        r.color[static_cast<std::size_t>(c * kColorBins + bin)] += 1.0;

        const double dx = gx[c].at<float>(y, x);
        const double dy = gy[c].at<float>(y, x);
        double theta = std::atan2(dy, dx);
        if (theta < 0.0) theta += kTwoPi;
        const int o = std::clamp(static_cast<int>(theta / kTwoPi * kOrientations), 0, kOrientations - 1);
        const double mag = std::hypot(dx, dy);
        const int m = max_mag > 0.0
                          ? std::clamp(static_cast<int>(mag / max_mag * kMagnitudeBins), 0, kMagnitudeBins - 1)
                          : 0;
        r.texture[static_cast<std::size_t>((c * kOrientations + o) * kMagnitudeBins + m)] += 1.0;
      }
    }
  for (auto& r : regions) {
    l1_normalise(r.color);
    l1_normalise(r.texture);
  }
  return regions;
}

}  // namespace

GroupingHierarchy group_regions(const ImageTensor& image, const ProposalConfig& cfg) {
  const Segmentation seg = oversegment(image, cfg);
  Grouping g{cfg, static_cast<double>(seg.height) * seg.width, initial_regions(image, seg, cfg)};

  // Adjacency between initial segments (8-neighbourhood).
  std::set<std::pair<int, int>> adjacent;
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const int a = seg.at(y, x);
      const int nb[4][2] = {{0, 1}, {1, 0}, {1, 1}, {-1, 1}};
      for (const auto& d : nb) {
        const int yy = y + d[0], xx = x + d[1];
        if (yy < 0 || yy >= seg.height || xx >= seg.width) continue;
        const int b = seg.at(yy, xx);
        if (a != b) adjacent.emplace(std::min(a, b), std::max(a, b));
      }
    }

  std::vector<GroupingHierarchy::Merge> merges;
  std::map<std::pair<int, int>, double> sims;
  for (const auto& p : adjacent) sims[p] = g.similarity(p.first, p.second);

  // Regions enter the hierarchy in id order: initial segments, then merges.
  while (!sims.empty()) {
    auto best = sims.begin();
    for (auto it = sims.begin(); it != sims.end(); ++it)
      if (it->second > best->second) best = it;  // map order breaks ties by lowest id pair
    const auto [i, j] = best->first;
    const int merged = g.merge(i, j);
    merges.push_back({i, j, merged});

    std::set<int> neighbours;
    for (auto it = sims.begin(); it != sims.end();) {
      const auto [a, b] = it->first;
      if (a == i || a == j || b == i || b == j) {
        const int other = (a == i || a == j) ? b : a;
        if (other != i && other != j) neighbours.insert(other);
        it = sims.erase(it);
      } else {
        ++it;
      }
    }
    for (int n : neighbours) sims[{n, merged}] = g.similarity(n, merged);
  }

  GroupingHierarchy h;
  h.initial_count = seg.count;
  for (const auto& r : g.regions) h.boxes.push_back(r.box());
  h.merges = std::move(merges);
  return h;
}

std::vector<BoundingBox> selective_search_boxes(const ImageTensor& image, const ProposalConfig& cfg) {
  std::vector<BoundingBox> out;
  std::set<std::tuple<int, int, int, int>> seen;
  for (const BoundingBox& b : group_regions(image, cfg).boxes) {
    if (b.w < cfg.min_box_side || b.h < cfg.min_box_side) continue;
    if (!seen.emplace(b.x, b.y, b.w, b.h).second) continue;
    out.push_back(b);
    if (static_cast<int>(out.size()) >= cfg.max_proposals) break;
  }
  return out;
}

std::vector<RegionProposal> selective_search(const ImageTensor& image, const ProposalConfig& cfg) {
  std::vector<RegionProposal> out;
  for (const auto& b : selective_search_boxes(image, cfg)) out.push_back({b, crop(image, b)});
  return out;
}

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
#include "wwbl/vlm_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <random>
#include <set>

#include "wwbl/archive.hpp"
#include "wwbl/image_ops.hpp"

namespace wwbl {

void BackendDescriptor::validate() const {
  if (embed_dim < 8) raise(ErrorCode::InvalidArgument, "backend embed_dim must be >= 8");
  if (match_resolution < 32) raise(ErrorCode::InvalidArgument, "backend match_resolution must be >= 32");
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// ---------------------------------------------------------------------------
// Mock world

MockWorldSpec MockWorldSpec::standard(std::uint64_t seed) {
  MockWorldSpec spec;
  spec.colors = {
      {"red", {0.90, 0.10, 0.10}},   {"green", {0.10, 0.80, 0.10}}, {"blue", {0.10, 0.20, 0.90}},
      {"yellow", {0.95, 0.90, 0.10}}, {"magenta", {0.90, 0.10, 0.90}}, {"cyan", {0.10, 0.85, 0.85}},
  };
  spec.shapes = {
      {"square", MockShape::Square}, {"circle", MockShape::Circle}, {"triangle", MockShape::Triangle}};
  spec.seed = seed;
  return spec;
}

void MockWorldSpec::validate() const {
  if (colors.empty() || shapes.empty())
    raise(ErrorCode::InvalidArgument, "mock vocabulary must not be empty");
  for (std::size_t i = 0; i < colors.size(); ++i) {
    for (double v : colors[i].rgb)
      if (!(v >= 0.0 && v <= 1.0)) raise(ErrorCode::InvalidArgument, "mock colour outside [0,1]");
    for (std::size_t j = i + 1; j < colors.size(); ++j) {
      if (colors[i].rgb == colors[j].rgb)
        raise(ErrorCode::InvalidArgument, "mock colour triples must be distinct");
      if (colors[i].word == colors[j].word)
        raise(ErrorCode::InvalidArgument, "duplicate mock colour word '" + colors[i].word + "'");
    }
  }
}

const MockColor* MockWorldSpec::find_color(const std::string& word) const noexcept {
  for (const auto& c : colors)
    if (c.word == word) return &c;
  return nullptr;
}

const MockShapeWord* MockWorldSpec::find_shape(const std::string& word) const noexcept {
  for (const auto& s : shapes)
    if (s.word == word) return &s;
  return nullptr;
}

const std::string& MockWorldSpec::shape_word(MockShape shape) const {
  for (const auto& s : shapes)
    if (s.shape == shape) return s.word;
  raise(ErrorCode::InvalidArgument, "shape has no vocabulary word");
}

namespace {

constexpr double kColorWeight = 2.0;
constexpr double kShapeWeight = 1.0;
constexpr double kOtherWeight = 1.0;
constexpr double kChromaSharpness = 60.0;
constexpr double kColorGain = 40.0;
constexpr double kTextureGain = 1.0;
constexpr double kBackgroundFloor = 0.05;
constexpr double kNormEps = 1e-3;
constexpr double kBlobAffinity = 0.5;
constexpr double kBlobIntensity = 0.15;
constexpr long long kMinBlobPixels = 4;
const double kInvSqrt3 = 1.0 / std::sqrt(3.0);

const std::set<std::string>& stop_words() {
  static const std::set<std::string> words = {"a",   "an",    "the",     "of",    "image", "in",
                                              "on",  "and",   "with",    "photo", "picture",
                                              "is",  "at",    "there",   "to"};
  return words;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> random_unit(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  for (double& x : v) {
    x = normal(rng);
    n2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0)
    for (double& x : v) x /= n;
}

}  // namespace

MockBackend::MockBackend(MockWorldSpec world, int embed_dim, int match_resolution)
    : world_(std::move(world)), descriptor_{BackendKind::Mock, embed_dim, match_resolution} {
  descriptor_.validate();
  world_.validate();
  const std::size_t basis_size = world_.colors.size() + world_.shapes.size() + 1;
  if (basis_size > static_cast<std::size_t>(embed_dim))
    raise(ErrorCode::InvalidArgument, "mock embed_dim too small for the vocabulary");

  for (const auto& c : world_.colors) {
    const double n = std::sqrt(c.rgb[0] * c.rgb[0] + c.rgb[1] * c.rgb[1] + c.rgb[2] * c.rgb[2]);
    if (n == 0.0) raise(ErrorCode::InvalidArgument, "mock colour must not be black");
    chroma_.push_back({c.rgb[0] / n, c.rgb[1] / n, c.rgb[2] / n});
  }

  // Gram-Schmidt over seeded Gaussian draws gives an orthonormal word basis.
  for (std::size_t i = 0; i < basis_size; ++i) {
    auto v = random_unit(world_.seed * 0x9E3779B97F4A7C15ull + i + 1, embed_dim);
    for (const auto& b : basis_) {
      const double p = dot(v, b);
      for (int k = 0; k < embed_dim; ++k) v[k] -= p * b[k];
    }
    normalize(v);
    basis_.push_back(std::move(v));
  }
}

std::string MockBackend::identity() const {
  std::string id = "mock:" + std::to_string(world_.seed) + ":" + std::to_string(descriptor_.embed_dim) +
                   ":" + std::to_string(descriptor_.match_resolution);
  for (const auto& c : world_.colors) id += ":" + c.word;
  return id;
}

std::vector<double> MockBackend::token_vector(const std::string& token) const {
  return random_unit(fnv1a(token) ^ (world_.seed * 0xD1B54A32D192ED03ull), descriptor_.embed_dim);
}

TextEmbedding MockBackend::encode_text(const Phrase& text) const {
  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  std::vector<double> sum(dim, 0.0);
  const std::size_t shape_base = world_.colors.size();
  const std::size_t background = shape_base + world_.shapes.size();

  std::set<std::string> seen;
  for (const auto& tok : tokenize(text.text())) {
    if (stop_words().count(tok) || !seen.insert(tok).second) continue;
    const std::vector<double>* vec = nullptr;
    std::vector<double> hashed;
    double weight = kOtherWeight;
    for (std::size_t i = 0; i < world_.colors.size(); ++i)
      if (world_.colors[i].word == tok) vec = &basis_[i], weight = kColorWeight;
    for (std::size_t i = 0; i < world_.shapes.size(); ++i)
      if (world_.shapes[i].word == tok) vec = &basis_[shape_base + i], weight = kShapeWeight;
    if (tok == "background") vec = &basis_[background];
    if (!vec) {
      hashed = token_vector(tok);
      vec = &hashed;
    }
    for (std::size_t k = 0; k < dim; ++k) sum[k] += weight * (*vec)[k];
  }
  if (seen.empty()) sum = token_vector(text.text());
  normalize(sum);
  return TextEmbedding{std::move(sum)};
}

double MockBackend::match_score(const ImageTensor& image, const TextEmbedding& text,
                                ImageTensor* grad) const {
  if (text.dim() != static_cast<std::size_t>(descriptor_.embed_dim))
    raise(ErrorCode::DimensionMismatch, "text embedding dimension does not match backend");
  if (image.empty()) raise(ErrorCode::InvalidArgument, "empty image");

  const int res = descriptor_.match_resolution;
  const ImageTensor view = resize(image, res, res);
  const std::size_t n_pix = view.pixel_count();
  const std::size_t n_col = chroma_.size();
  const double inv_p = 1.0 / static_cast<double>(n_pix);
  const std::size_t background = n_col + world_.shapes.size();

  auto r = view.channel(0);
  auto g = view.channel(1);
  auto b = view.channel(2);

  std::vector<double> mass(n_col, 0.0);
  double other = 0.0;
  std::vector<double> aff(n_pix * n_col);
  for (std::size_t p = 0; p < n_pix; ++p) {
    const double v[3] = {r[p], g[p], b[p]};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + kNormEps * kNormEps);
    const double intensity = n * kInvSqrt3;
    double rest = 1.0;
    for (std::size_t c = 0; c < n_col; ++c) {
      const auto& k = chroma_[c];
      const double d = (v[0] * k[0] + v[1] * k[1] + v[2] * k[2]) / n;
      const double a = std::exp(kChromaSharpness * (d - 1.0));
      aff[p * n_col + c] = a;
      mass[c] += intensity * a;
      rest *= 1.0 - a;
    }
    other += intensity * rest;
  }

  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  std::vector<double> u(dim, 0.0);
  std::vector<double> alpha(n_col);
  for (std::size_t c = 0; c < n_col; ++c) {
    alpha[c] = kColorGain * mass[c] * inv_p;
    for (std::size_t k = 0; k < dim; ++k) u[k] += alpha[c] * basis_[c][k];
  }
  const double alpha_bg = kBackgroundFloor + kTextureGain * other * inv_p;
  for (std::size_t k = 0; k < dim; ++k) u[k] += alpha_bg * basis_[background][k];

  const double un = std::sqrt(dot(u, u));
  const double uz = dot(u, text.values);
  const double score = std::clamp(uz / un, -1.0, 1.0);
  if (!grad) return score;

  // d score / d u = z/|u| - (u.z) u / |u|^3, projected onto each pooling direction.
  std::vector<double> dscore_du(dim);
  for (std::size_t k = 0; k < dim; ++k)
    dscore_du[k] = text.values[k] / un - uz * u[k] / (un * un * un);
  std::vector<double> g_col(n_col);
  for (std::size_t c = 0; c < n_col; ++c) g_col[c] = dot(dscore_du, basis_[c]) * kColorGain * inv_p;
  const double g_bg = dot(dscore_du, basis_[background]) * kTextureGain * inv_p;

  ImageTensor local(res, res);
  auto gr = local.channel(0);
  auto gg = local.channel(1);
  auto gb = local.channel(2);
  std::vector<double> da(n_col * 3);
  for (std::size_t p = 0; p < n_pix; ++p) {
    const double v[3] = {r[p], g[p], b[p]};
    const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + kNormEps * kNormEps;
    const double n = std::sqrt(n2);
    const double intensity = n * kInvSqrt3;
    double d_int[3];
    for (int i = 0; i < 3; ++i) d_int[i] = v[i] * kInvSqrt3 / n;

    double out[3] = {0.0, 0.0, 0.0};
    double rest = 1.0;
    for (std::size_t c = 0; c < n_col; ++c) {
      const auto& k = chroma_[c];
      const double a = aff[p * n_col + c];
      const double vk = v[0] * k[0] + v[1] * k[1] + v[2] * k[2];
      for (int i = 0; i < 3; ++i) {
        const double dd = k[i] / n - vk * v[i] / (n2 * n);
        da[c * 3 + i] = kChromaSharpness * a * dd;
        out[i] += g_col[c] * (a * d_int[i] + intensity * da[c * 3 + i]);
      }
      rest *= 1.0 - a;
    }
    for (int i = 0; i < 3; ++i) {
      double d_rest = 0.0;
      for (std::size_t c = 0; c < n_col; ++c) {
        double others = 1.0;
        for (std::size_t c2 = 0; c2 < n_col; ++c2)
          if (c2 != c) others *= 1.0 - aff[p * n_col + c2];
        d_rest -= da[c * 3 + i] * others;
      }
      out[i] += g_bg * (rest * d_int[i] + intensity * d_rest);
    }
    gr[p] = out[0];
    gg[p] = out[1];
    gb[p] = out[2];
  }

  *grad = ImageTensor(image.height(), image.width());
  if (image.height() == res && image.width() == res) {
    *grad = std::move(local);
  } else {
    const BilinearResize plan(image.height(), image.width(), res, res);
    for (int c = 0; c < 3; ++c) plan.adjoint<double>(local.channel(c), grad->channel(c));
  }
  return score;
}

std::vector<MockBlob> MockBackend::find_blobs(const ImageTensor& image) const {
  const int h = image.height();
  const int w = image.width();
  const std::size_t n_pix = image.pixel_count();
  std::vector<int> label(n_pix, -1);
  for (std::size_t p = 0; p < n_pix; ++p) {
    const double v[3] = {image.channel(0)[p], image.channel(1)[p], image.channel(2)[p]};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n * kInvSqrt3 < kBlobIntensity) continue;
    double best = kBlobAffinity;
    for (std::size_t c = 0; c < chroma_.size(); ++c) {
      const auto& k = chroma_[c];
      const double a = std::exp(kChromaSharpness * ((v[0] * k[0] + v[1] * k[1] + v[2] * k[2]) / n - 1.0));
      if (a > best) {
        best = a;
        label[p] = static_cast<int>(c);
      }
    }
  }

  std::vector<MockBlob> blobs;
  std::vector<char> visited(n_pix, 0);
  std::deque<int> queue;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const int start = y0 * w + x0;
      if (label[start] < 0 || visited[start]) continue;
      const int color = label[start];
      int x_min = x0, x_max = x0, y_min = y0, y_max = y0;
      long long count = 0;
      double sx = 0.0, sy = 0.0;
      visited[start] = 1;
      queue.push_back(start);
      while (!queue.empty()) {
        const int p = queue.front();
        queue.pop_front();
        const int px = p % w;
        const int py = p / w;
        ++count;
        sx += px;
        sy += py;
        x_min = std::min(x_min, px);
        x_max = std::max(x_max, px);
        y_min = std::min(y_min, py);
        y_max = std::max(y_max, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx;
            const int ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const int q = ny * w + nx;
            if (visited[q] || label[q] != color) continue;
            visited[q] = 1;
            queue.push_back(q);
          }
        }
      }
      if (count < kMinBlobPixels) continue;
      MockBlob blob;
      blob.color = color;
      blob.box = {x_min, y_min, x_max - x_min + 1, y_max - y_min + 1};
      blob.pixels = count;
      blob.cx = sx / static_cast<double>(count);
      blob.cy = sy / static_cast<double>(count);
      const double fill = static_cast<double>(count) / static_cast<double>(blob.box.area());
      blob.shape = fill >= 0.9 ? MockShape::Square : fill >= 0.64 ? MockShape::Circle : MockShape::Triangle;
      blobs.push_back(blob);
    }
  }
  std::stable_sort(blobs.begin(), blobs.end(),
                   [](const MockBlob& a, const MockBlob& b) { return a.pixels > b.pixels; });
  return blobs;
}

std::string MockBackend::describe(const MockBlob& blob) const {
  return world_.colors[static_cast<std::size_t>(blob.color)].word + " " + world_.shape_word(blob.shape);
}

RelevancyMap MockBackend::relevancy(const ImageTensor& image, const Phrase& text) const {
  const int res = descriptor_.match_resolution;
  const ImageTensor view = resize(image, res, res);
  RelevancyMap map(res, res, 0.0);

  const auto tokens = tokenize(text.text());
  const auto has = [&](const std::string& word) {
    return std::find(tokens.begin(), tokens.end(), word) != tokens.end();
  };
  const bool names_shape = std::any_of(world_.shapes.begin(), world_.shapes.end(),
                                       [&](const MockShapeWord& s) { return has(s.word); });

  for (const auto& blob : find_blobs(view)) {
    if (!has(world_.colors[static_cast<std::size_t>(blob.color)].word)) continue;
    if (names_shape && !has(world_.shape_word(blob.shape))) continue;
    const double sigma = std::max(blob.box.w, blob.box.h) / 8.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        const double dx = x - blob.cx;
        const double dy = y - blob.cy;
        map.at(y, x) += std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  const double peak = *std::max_element(map.values().begin(), map.values().end());
  if (peak > 0.0)
    for (double& v : map.values()) v /= peak;
  return map;
}

Phrase MockBackend::caption(const ImageTensor& image) const {
  if (image.empty()) raise(ErrorCode::InvalidArgument, "empty image");
  const auto blobs = find_blobs(image);
  if (blobs.empty()) return Phrase("image of a background");
  return Phrase("image of a " + describe(blobs.front()));
}

// ---------------------------------------------------------------------------
// Exported dual-encoder weights

PretrainedBackend::PretrainedBackend(const std::filesystem::path& checkpoint) {
  Archive archive;
  try {
    if (checkpoint.empty() || !std::filesystem::exists(checkpoint))
      raise(ErrorCode::BackendUnavailable,
            "pretrained backend checkpoint '" + checkpoint.string() + "' not found");
    archive = read_archive(checkpoint);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BackendUnavailable) throw;
    raise(ErrorCode::BackendUnavailable, std::string("cannot load pretrained backend: ") + e.what());
  }

  try {
    const auto& meta = archive.meta;
    if (meta.value("kind", std::string()) != "dual-encoder")
      raise(ErrorCode::BackendUnavailable, "checkpoint is not a dual-encoder export");
    descriptor_ = {BackendKind::Pretrained, meta.at("embed_dim").get<int>(),
                   meta.at("match_resolution").get<int>()};
    descriptor_.validate();
    patch_ = meta.at("patch_size").get<int>();
    if (patch_ < 1 || descriptor_.match_resolution % patch_ != 0)
      raise(ErrorCode::BackendUnavailable, "match_resolution must be a multiple of patch_size");
    vocabulary_ = meta.at("vocabulary").get<std::vector<std::string>>();
    caption_bank_ = meta.value("caption_bank", std::vector<std::string>{});
    const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
    token_table_ = archive.require("token_embedding", vocabulary_.size() * dim).data;
    projection_ =
        archive.require("patch_projection", dim * 3 * static_cast<std::size_t>(patch_ * patch_)).data;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BackendUnavailable) throw;
    raise(ErrorCode::BackendUnavailable, e.what());
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::BackendUnavailable, std::string("malformed backend metadata: ") + e.what());
  }
  identity_ = "pretrained:" + std::filesystem::absolute(checkpoint).string() + ":" +
              std::to_string(std::filesystem::file_size(checkpoint));
}

TextEmbedding PretrainedBackend::encode_text(const Phrase& text) const {
  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  std::vector<double> sum(dim, 0.0);
  bool any = false;
  auto add_token = [&](const std::string& tok) {
    const auto it = std::find(vocabulary_.begin(), vocabulary_.end(), tok);
    if (it == vocabulary_.end()) return false;
    const auto row = static_cast<std::size_t>(it - vocabulary_.begin());
    for (std::size_t k = 0; k < dim; ++k) sum[k] += token_table_[row * dim + k];
    return true;
  };
  for (const auto& tok : tokenize(text.text())) any = add_token(tok) || any;
  if (!any && !add_token("<unk>"))
    raise(ErrorCode::InvalidPhrase, "no token of '" + text.text() + "' is in the backend vocabulary");
  normalize(sum);
  if (dot(sum, sum) == 0.0) raise(ErrorCode::InvalidPhrase, "phrase embeds to the zero vector");
  return TextEmbedding{std::move(sum)};
}

std::vector<double> PretrainedBackend::patch_features(const ImageTensor& view) const {
  const int grid = descriptor_.match_resolution / patch_;
  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  const std::size_t in = 3 * static_cast<std::size_t>(patch_ * patch_);
  std::vector<double> feats(static_cast<std::size_t>(grid * grid) * dim, 0.0);
  std::vector<double> x(in);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      std::size_t i = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch_; ++y)
          for (int xx = 0; xx < patch_; ++xx) x[i++] = view.at(c, gy * patch_ + y, gx * patch_ + xx);
      double* f = feats.data() + static_cast<std::size_t>(gy * grid + gx) * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < in; ++j) s += projection_[k * in + j] * x[j];
        f[k] = s;
      }
    }
  }
  return feats;
}

double PretrainedBackend::match_score(const ImageTensor& image, const TextEmbedding& text,
                                      ImageTensor* grad) const {
  if (text.dim() != static_cast<std::size_t>(descriptor_.embed_dim))
    raise(ErrorCode::DimensionMismatch, "text embedding dimension does not match backend");
  const int res = descriptor_.match_resolution;
  const ImageTensor view = resize(image, res, res);
  const auto feats = patch_features(view);
  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  const std::size_t n_patch = feats.size() / dim;

  std::vector<double> pooled(dim, 0.0);
  for (std::size_t p = 0; p < n_patch; ++p)
    for (std::size_t k = 0; k < dim; ++k) pooled[k] += feats[p * dim + k] / static_cast<double>(n_patch);
  const double n = std::sqrt(dot(pooled, pooled));
  if (n == 0.0) {
    if (grad) *grad = ImageTensor(image.height(), image.width());
    return 0.0;
  }
  const double pz = dot(pooled, text.values);
  const double score = std::clamp(pz / n, -1.0, 1.0);
  if (!grad) return score;

  std::vector<double> dpool(dim);
  for (std::size_t k = 0; k < dim; ++k)
    dpool[k] = (text.values[k] / n - pz * pooled[k] / (n * n * n)) / static_cast<double>(n_patch);
  const std::size_t in = 3 * static_cast<std::size_t>(patch_ * patch_);
  std::vector<double> dx(in, 0.0);
  for (std::size_t k = 0; k < dim; ++k)
    for (std::size_t j = 0; j < in; ++j) dx[j] += projection_[k * in + j] * dpool[k];

  // Every patch shares the same pixel gradient since pooling is a plain mean.
  ImageTensor local(res, res);
  const int grid = res / patch_;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      std::size_t i = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < patch_; ++y)
          for (int xx = 0; xx < patch_; ++xx) local.at(c, gy * patch_ + y, gx * patch_ + xx) = dx[i++];
    }
  *grad = ImageTensor(image.height(), image.width());
  if (image.height() == res && image.width() == res) {
    *grad = std::move(local);
  } else {
    const BilinearResize plan(image.height(), image.width(), res, res);
    for (int c = 0; c < 3; ++c) plan.adjoint<double>(local.channel(c), grad->channel(c));
  }
  return score;
}

RelevancyMap PretrainedBackend::relevancy(const ImageTensor& image, const Phrase& text) const {
  const int res = descriptor_.match_resolution;
  const ImageTensor view = resize(image, res, res);
  const auto z = encode_text(text);
  const auto feats = patch_features(view);
  const auto dim = static_cast<std::size_t>(descriptor_.embed_dim);
  const int grid = res / patch_;
  const std::size_t n_patch = feats.size() / dim;

  std::vector<double> pooled(dim, 0.0);
  for (std::size_t p = 0; p < n_patch; ++p)
    for (std::size_t k = 0; k < dim; ++k) pooled[k] += feats[p * dim + k] / static_cast<double>(n_patch);
  const double n = std::max(std::sqrt(dot(pooled, pooled)), 1e-12);
  const double pz = dot(pooled, z.values);

  // Gradient of the score w.r.t. each patch feature, times the feature, rectified.
  std::vector<double> coarse(n_patch, 0.0);
  for (std::size_t p = 0; p < n_patch; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double g = z.values[k] / n - pz * pooled[k] / (n * n * n);
      s += g * feats[p * dim + k];
    }
    coarse[p] = std::max(0.0, s);
  }
  const double peak = *std::max_element(coarse.begin(), coarse.end());
  if (peak > 0.0)
    for (double& v : coarse) v /= peak;
  return resize(RelevancyMap(grid, grid, std::move(coarse)), res, res);
}

Phrase PretrainedBackend::caption(const ImageTensor& image) const {
  if (caption_bank_.empty())
    raise(ErrorCode::BackendUnavailable, "pretrained backend export has no caption bank");
  double best = -2.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < caption_bank_.size(); ++i) {
    const double s = match_score(image, Phrase(caption_bank_[i]));
    if (s > best) {
      best = s;
      best_idx = i;
    }
  }
  return Phrase(caption_bank_[best_idx]);
}

std::unique_ptr<VisionLanguageBackend> make_backend(const BackendConfig& config) {
  if (config.kind == BackendKind::Pretrained)
    return std::make_unique<PretrainedBackend>(config.checkpoint);
  MockWorldSpec world = MockWorldSpec::standard(config.mock_seed);
  if (!config.mock_colors.empty()) world.colors = config.mock_colors;
  return std::make_unique<MockBackend>(std::move(world), config.embed_dim, config.match_resolution);
}

}  // namespace wwbl

// SPDX-License-Identifier: Apache-2.0
#include "wwbl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "wwbl/image_io.hpp"
#include "wwbl/records.hpp"

namespace wwbl {

void SyntheticConfig::validate() const {
  if (image_size < 32) raise(ErrorCode::ConfigError, "synthetic.image_size must be >= 32");
  if (min_objects < 1 || max_objects < min_objects)
    raise(ErrorCode::ConfigError, "synthetic object counts must satisfy 1 <= min <= max");
  if (min_side < 4 || max_side < min_side || max_side > image_size / 2)
    raise(ErrorCode::ConfigError, "synthetic sides must satisfy 4 <= min <= max <= image_size/2");
  if (margin < 0) raise(ErrorCode::ConfigError, "synthetic.margin must be >= 0");
}

namespace {

bool inside_shape(MockShape shape, int side, int dx, int dy) {
  switch (shape) {
    case MockShape::Square:
      return true;
    case MockShape::Circle: {
      const double r = side / 2.0;
      const double cx = dx + 0.5 - r;
      const double cy = dy + 0.5 - r;
      return cx * cx + cy * cy <= r * r;
    }
    case MockShape::Triangle: {
      // Apex at the top centre, base along the bottom row.
      const double t = (dy + 0.5) / side;
      const double half = t * side / 2.0;
      const double c = dx + 0.5 - side / 2.0;
      return std::abs(c) <= half;
    }
  }
  return false;
}

std::string join_caption(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += (i + 1 == parts.size()) ? " and " : ", ";
    out += "a " + parts[i];
  }
  return out;
}

}  // namespace

SyntheticScene make_scene(const MockWorldSpec& world, const SyntheticConfig& cfg, std::uint64_t seed, int index) {
  cfg.validate();
  world.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5ce7e5u};
  std::mt19937_64 rng(seq);
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto integer = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

  const int s = cfg.image_size;
  SyntheticScene scene;
  char id[32];
  std::snprintf(id, sizeof id, "scene_%04d", index);
  scene.image_id = id;
  scene.image = ImageTensor(s, s);

  // Achromatic background: base grey, low-frequency stripes, pixel noise.
  const double base = uniform(0.3, 0.6);
  const double amp = uniform(0.03, 0.1);
  const double fx = uniform(0.05, 0.3);
  const double fy = uniform(0.05, 0.3);
  const double phase = uniform(0.0, 6.283185307179586);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double v = std::clamp(base + amp * std::sin(fx * x + fy * y + phase) + noise(rng), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = v;
    }

  std::vector<int> palette(world.colors.size());
  std::iota(palette.begin(), palette.end(), 0);
  std::shuffle(palette.begin(), palette.end(), rng);
  const int wanted = std::min<int>(integer(cfg.min_objects, cfg.max_objects), static_cast<int>(palette.size()));

  std::vector<BoundingBox> placed;
  for (int k = 0; k < wanted; ++k) {
    const int side = integer(cfg.min_side, cfg.max_side);
    const MockShape shape = world.shapes[static_cast<std::size_t>(integer(0, static_cast<int>(world.shapes.size()) - 1))].shape;
    bool ok = false;
    BoundingBox frame;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      frame = {integer(1, s - side - 1), integer(1, s - side - 1), side, side};
      ok = std::none_of(placed.begin(), placed.end(), [&](const BoundingBox& o) {
        return frame.x < o.right() + cfg.margin && o.x < frame.right() + cfg.margin &&
               frame.y < o.bottom() + cfg.margin && o.y < frame.bottom() + cfg.margin;
      });
    }
    if (!ok) break;
    placed.push_back(frame);

    const int color = palette[static_cast<std::size_t>(k)];
    const auto& rgb = world.colors[static_cast<std::size_t>(color)].rgb;
    const double gain = uniform(0.85, 1.0);
    int x0 = s, y0 = s, x1 = -1, y1 = -1;
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx) {
        if (!inside_shape(shape, side, dx, dy)) continue;
        const int x = frame.x + dx;
        const int y = frame.y + dy;
        for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = std::clamp(gain * rgb[c], 0.0, 1.0);
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    scene.objects.push_back({color, shape, {x0, y0, x1 - x0 + 1, y1 - y0 + 1}});
  }

  std::vector<std::string> names;
  for (const auto& o : scene.objects) {
    names.push_back(world.colors[static_cast<std::size_t>(o.color)].word + " " + world.shape_word(o.shape));
    scene.regions.push_back({Phrase(names.back()), o.box});
  }
  scene.captions.push_back(join_caption(names));
  if (names.size() > 1)
    for (const auto& n : names) scene.captions.push_back("a " + n);
  return scene;
}

std::vector<SyntheticScene> make_scenes(const MockWorldSpec& world, const SyntheticConfig& cfg, std::uint64_t seed,
                                        int count, int first_index) {
  std::vector<SyntheticScene> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) out.push_back(make_scene(world, cfg, seed, first_index + i));
  return out;
}

void write_synthetic_dataset(const std::filesystem::path& dir, std::span<const SyntheticScene> scenes) {
  std::vector<AnnotationRecord> records;
  for (const auto& s : scenes) {
    const std::string rel = "images/" + s.image_id + ".png";
    write_image(dir / rel, s.image);
    records.push_back({rel, s.regions, s.captions});
  }
  write_annotations(dir / "annotations.jsonl", records);
}

}  // namespace wwbl

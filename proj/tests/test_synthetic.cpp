// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "support.hpp"
#include "wwbl/image_io.hpp"
#include "wwbl/records.hpp"
#include "wwbl/synthetic.hpp"

using namespace wwbl;

TEST_CASE("scenes are deterministic per seed and index") {
  const auto world = MockWorldSpec::standard();
  const SyntheticConfig cfg;
  const auto a = make_scene(world, cfg, 1, 3);
  const auto b = make_scene(world, cfg, 1, 3);
  CHECK(a.image == b.image);
  CHECK(a.image_id == "scene_0003");
  CHECK(make_scenes(world, cfg, 1, 5)[3].image == a.image);
  CHECK(make_scene(world, cfg, 2, 3).image != a.image);
}

TEST_CASE("object boxes are exact, in frame, separated and uniquely coloured") {
  const auto world = MockWorldSpec::standard();
  const SyntheticConfig cfg;
  const auto scenes = make_scenes(world, cfg, 9, 40);
  for (const auto& s : scenes) {
    REQUIRE(s.image.height() == cfg.image_size);
    CHECK(s.objects.size() >= static_cast<std::size_t>(cfg.min_objects));
    CHECK(s.objects.size() <= static_cast<std::size_t>(cfg.max_objects));
    CHECK(s.regions.size() == s.objects.size());
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& o = s.objects[i];
      CHECK(o.box.inside_frame(cfg.image_size, cfg.image_size));
      // Painted pixels are chromatic, the background is grey: the tight box of
      // the chromatic pixels inside the object's neighbourhood is the box.
      int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
      for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x) {
          const double r = s.image.at(0, y, x), g = s.image.at(1, y, x), b = s.image.at(2, y, x);
          const auto& rgb = world.colors[static_cast<std::size_t>(o.color)].rgb;
          const double gain = r / rgb[0];
          const bool grey = std::abs(r - g) < 1e-9 && std::abs(g - b) < 1e-9;
          if (grey || std::abs(g - gain * rgb[1]) > 1e-6 || std::abs(b - gain * rgb[2]) > 1e-6) continue;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
      CHECK(BoundingBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1} == o.box);
      CHECK(s.regions[i].box == o.box);
      CHECK(s.regions[i].phrase.text() ==
            world.colors[static_cast<std::size_t>(o.color)].word + " " + world.shape_word(o.shape));
      for (std::size_t j = 0; j < i; ++j) {
        CHECK(s.objects[j].color != o.color);
        CHECK(iou(s.objects[j].box, o.box) == 0.0);
      }
    }
    CHECK(s.captions.size() == (s.objects.size() > 1 ? s.objects.size() + 1 : 1));
  }
}

TEST_CASE("the mock captioner recognises the largest object") {
  const auto backend = testing::standard_mock();
  const auto world = MockWorldSpec::standard();
  const auto scenes = make_scenes(world, SyntheticConfig{}, 4, 20);
  int named = 0;
  for (const auto& s : scenes) {
    const auto caption = backend.caption(s.image).text();
    for (const auto& r : s.regions)
      if (caption.find(r.phrase.text()) != std::string::npos) {
        ++named;
        break;
      }
  }
  CHECK(named >= 18);
}

TEST_CASE("datasets are written as images plus annotations") {
  const auto dir = std::filesystem::temp_directory_path() / "wwbl_test_synthetic";
  std::filesystem::remove_all(dir);
  const auto scenes = make_scenes(MockWorldSpec::standard(), SyntheticConfig{}, 1, 3);
  write_synthetic_dataset(dir, scenes);
  const auto recs = read_annotations(dir / "annotations.jsonl");
  REQUIRE(recs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(recs[i].image == "images/" + scenes[i].image_id + ".png");
    CHECK(recs[i].captions == scenes[i].captions);
    const auto img = read_image(resolve_path(dir / "annotations.jsonl", recs[i].image));
    CHECK(img.height() == scenes[i].image.height());
    // 8-bit PNG quantisation.
    for (std::size_t k = 0; k < img.data().size(); ++k) CHECK(std::abs(img.data()[k] - scenes[i].image.data()[k]) <= 0.5 / 255 + 1e-9);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_objects = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.max_side = 200;
  CHECK_THROWS_AS(c.validate(), Error);
}

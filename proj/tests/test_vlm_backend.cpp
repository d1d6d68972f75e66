// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "support.hpp"
#include "wwbl/archive.hpp"
#include "wwbl/vlm_backend.hpp"

using namespace wwbl;
using wwbl::testing::paint;
using wwbl::testing::random_image;
using wwbl::testing::standard_mock;

namespace {

ImageTensor scene_with(const BoundingBox& box, double r, double g, double b, int size = 64) {
  ImageTensor img(size, size, 0.5);
  paint(img, box, r, g, b);
  return img;
}

}  // namespace

TEST_CASE("tokenize lower-cases and splits on non-alphanumerics") {
  CHECK(tokenize("A Red-Square, 2x!") == std::vector<std::string>{"a", "red", "square", "2x"});
  CHECK(tokenize("  ").empty());
}

TEST_CASE("mock text embeddings are unit norm, deterministic and ignore stop words") {
  const auto backend = standard_mock();
  const auto e = backend.encode_text(Phrase("a red square"));
  CHECK(e.dim() == 64);
  CHECK(e.norm() == doctest::Approx(1.0));
  CHECK(backend.encode_text(Phrase("a red square")).values == e.values);
  CHECK(backend.encode_text(Phrase("the red square in the image")).values == e.values);
  CHECK(standard_mock().encode_text(Phrase("zebra")).values == backend.encode_text(Phrase("zebra")).values);
  CHECK(backend.encode_text(Phrase("zebra")).norm() == doctest::Approx(1.0));
}

TEST_CASE("colour words weigh twice as much as shape words") {
  const auto backend = standard_mock();
  // (2r + s) . (2r + c) / 5 with an orthonormal basis.
  CHECK(backend.text_similarity(Phrase("red square"), Phrase("red circle")) == doctest::Approx(0.8));
  // (2r + s) . (2b + s) / 5.
  CHECK(backend.text_similarity(Phrase("red square"), Phrase("blue square")) == doctest::Approx(0.2));
  CHECK(backend.text_similarity(Phrase("red"), Phrase("blue")) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("match score prefers the colour that is present") {
  const auto backend = standard_mock();
  const auto img = scene_with({16, 16, 24, 24}, 0.9, 0.1, 0.1);
  const double red = backend.match_score(img, Phrase("red square"));
  const double blue = backend.match_score(img, Phrase("blue square"));
  CHECK(red > blue);
  CHECK(red <= 1.0);
  CHECK(blue >= -1.0);
}

TEST_CASE("match score gradient agrees with finite differences") {
  const auto backend = standard_mock(64, 32);
  std::mt19937_64 rng(11);
  auto img = random_image(20, 24, rng, 0.1, 0.9);
  paint(img, {4, 4, 10, 8}, 0.85, 0.15, 0.1);
  const auto text = backend.encode_text(Phrase("red square"));
  ImageTensor grad;
  backend.match_score(img, text, &grad);
  REQUIRE(grad.height() == img.height());
  REQUIRE(grad.width() == img.width());

  std::uniform_int_distribution<std::size_t> pick(0, img.data().size() - 1);
  const double h = 1e-5;
  double scale = 0.0;
  for (double v : grad.data()) scale = std::max(scale, std::abs(v));
  REQUIRE(scale > 0.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t i = pick(rng);
    auto up = img, down = img;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (backend.match_score(up, text) - backend.match_score(down, text)) / (2 * h);
    CHECK(std::abs(fd - grad.data()[i]) <= 1e-4 * scale + 1e-8);
  }
}

TEST_CASE("relevancy lies in [0,1] and peaks on the named object") {
  const auto backend = standard_mock();
  auto img = scene_with({8, 8, 16, 16}, 0.9, 0.1, 0.1);
  paint(img, {40, 36, 16, 16}, 0.1, 0.2, 0.9);
  const BoundingBox red_box{8, 8, 16, 16}, blue_box{40, 36, 16, 16};
  for (const auto& [text, box] : {std::pair{"red square", red_box}, std::pair{"blue square", blue_box}}) {
    const auto r = backend.relevancy(img, Phrase(text));
    CHECK(r.height() == 64);
    CHECK(r.width() == 64);
    for (double v : r.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    SaliencyMask as_mask(r.height(), r.width(), r.values());
    CHECK(pointing_hit(as_mask, box));
  }
}

TEST_CASE("caption names the largest blob and its colour") {
  const auto backend = standard_mock();
  auto img = scene_with({4, 4, 30, 30}, 0.1, 0.8, 0.1);
  paint(img, {44, 44, 12, 12}, 0.9, 0.1, 0.1);
  const auto caption = backend.caption(img).text();
  CHECK(caption.find("green") != std::string::npos);
  CHECK(caption.find("square") != std::string::npos);

  const auto blobs = backend.find_blobs(img);
  REQUIRE(blobs.size() == 2);
  CHECK(blobs[0].box == BoundingBox{4, 4, 30, 30});
  CHECK(blobs[1].box == BoundingBox{44, 44, 12, 12});
  CHECK(backend.describe(blobs[1]).find("red") != std::string::npos);
}

TEST_CASE("descriptor and world validation") {
  CHECK_THROWS_AS(BackendDescriptor({BackendKind::Mock, 4, 64}).validate(), Error);
  CHECK_THROWS_AS(BackendDescriptor({BackendKind::Mock, 64, 16}).validate(), Error);
  MockWorldSpec empty;
  CHECK_THROWS_AS(empty.validate(), Error);
  auto dup = MockWorldSpec::standard();
  dup.colors.push_back({"crimson", dup.colors[0].rgb});
  CHECK_THROWS_AS(dup.validate(), Error);
}

TEST_CASE("missing pretrained weights report BackendUnavailable") {
  BackendConfig cfg;
  cfg.kind = BackendKind::Pretrained;
  cfg.checkpoint = "/nonexistent/dual_encoder.wwbl";
  try {
    make_backend(cfg);
    FAIL("expected an exception");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackendUnavailable);
  }
}

TEST_CASE("a tiny dual-encoder export loads and scores") {
  const auto dir = std::filesystem::temp_directory_path() / "wwbl_test_backend";
  std::filesystem::create_directories(dir);
  const auto path = dir / "tiny.wwbl";
  const int dim = 8, patch = 8, res = 32;
  Archive a;
  a.meta = {{"kind", "dual-encoder"},
            {"embed_dim", dim},
            {"match_resolution", res},
            {"patch_size", patch},
            {"vocabulary", {"red", "blue", "dog"}},
            {"caption_bank", {"a red dog", "a blue dog"}}};
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0, 1);
  ArchiveTensor tok{"token_embedding", {3, dim}, std::vector<float>(3 * dim)};
  for (float& v : tok.data) v = g(rng);
  ArchiveTensor proj{"patch_projection", {dim, 3 * patch * patch}, std::vector<float>(dim * 3 * patch * patch)};
  for (float& v : proj.data) v = 0.05f * g(rng);
  a.tensors = {tok, proj};
  write_archive(path, a);

  BackendConfig cfg;
  cfg.kind = BackendKind::Pretrained;
  cfg.checkpoint = path.string();
  const auto backend = make_backend(cfg);
  CHECK(backend->descriptor().embed_dim == dim);
  CHECK(backend->encode_text(Phrase("red dog")).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(backend->encode_text(Phrase("zebra")), Error);

  const auto img = random_image(40, 40, rng);
  const double s = backend->match_score(img, Phrase("red dog"));
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  const auto r = backend->relevancy(img, Phrase("red dog"));
  CHECK(r.height() == res);
  for (double v : r.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto cap = backend->caption(img).text();
  CHECK((cap == "a red dog" || cap == "a blue dog"));
  std::filesystem::remove_all(dir);
}

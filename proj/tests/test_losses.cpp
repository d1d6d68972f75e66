// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "support.hpp"
#include "wwbl/losses.hpp"

using namespace wwbl;
using wwbl::testing::box_mask;
using wwbl::testing::paint;
using wwbl::testing::random_image;
using wwbl::testing::relative_error;
using wwbl::testing::standard_mock;

namespace {

struct BlobScene {
  ImageTensor image{48, 48, 0.0};
  BoundingBox blob{8, 10, 16, 16};
  BoundingBox elsewhere{28, 26, 16, 16};
  BlobScene() { paint(image, blob, 0.9, 0.1, 0.1); }
};

}  // namespace

TEST_CASE("default weights") {
  const LossWeights w;
  CHECK(w.lambda1 == 1.0);
  CHECK(w.lambda2 == 1.0);
  CHECK(w.lambda3 == 4.0);
  CHECK(w.lambda4 == 1.0);
  CHECK_NOTHROW(w.validate());
  CHECK_THROWS_AS((LossWeights{1, -1, 4, 1}.validate()), Error);
  CHECK_THROWS_AS((LossWeights{1, 1, std::nan(""), 1}.validate()), Error);
}

TEST_CASE("identity and empty masks reduce to plain match scores") {
  const auto backend = standard_mock();
  std::mt19937_64 rng(1);
  const auto img = random_image(32, 32, rng);
  const SaliencyMask ones(32, 32, 1.0);
  const Phrase t("red square");
  CHECK(loss_fore(img, ones, t, backend) == doctest::Approx(-backend.match_score(img, t)));
  CHECK(loss_back(img, ones, t, backend) == doctest::Approx(backend.match_score(ImageTensor(32, 32, 0.0), t)));
  for (const auto* m : {&ones}) {
    CHECK(loss_fore(img, *m, t, backend) >= -1.0);
    CHECK(loss_fore(img, *m, t, backend) <= 1.0);
  }
}

TEST_CASE("covering the named blob lowers both image terms") {
  const auto backend = standard_mock();
  const BlobScene s;
  const Phrase t("red square");
  const auto on = box_mask(48, 48, s.blob);
  const auto off = box_mask(48, 48, s.elsewhere);
  CHECK(loss_fore(s.image, on, t, backend) < loss_fore(s.image, off, t, backend));
  CHECK(loss_back(s.image, on, t, backend) < loss_back(s.image, off, t, backend));
}

TEST_CASE("relevancy and regularisation terms") {
  SaliencyMask m(8, 8, 0.3);
  RelevancyMap h(8, 8, std::vector<double>(m.values()));
  CHECK(loss_rmap(m, h) == 0.0);
  CHECK(loss_rmap(SaliencyMask(8, 8, 1.0), RelevancyMap(8, 8, 0.0)) == doctest::Approx(1.0));
  CHECK(loss_rmap(SaliencyMask(8, 8, 0.5), RelevancyMap(8, 8, 0.0)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(loss_rmap(SaliencyMask(8, 8), RelevancyMap(4, 4)), Error);

  CHECK(loss_reg(SaliencyMask(8, 8, 0.0)) == 0.0);
  CHECK(loss_reg(SaliencyMask(8, 8, 1.0)) == 1.0);
  CHECK(loss_reg(box_mask(8, 8, {0, 0, 4, 8})) == doctest::Approx(0.5));
}

TEST_CASE("loss_rmap is non-negative and zero only on equality") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    SaliencyMask m(6, 6);
    RelevancyMap h(6, 6);
    for (double& v : m.values()) v = u(rng);
    for (double& v : h.values()) v = u(rng);
    CHECK(loss_rmap(m, h) > 0.0);
    h.values() = m.values();
    CHECK(loss_rmap(m, h) == 0.0);
  }
}

TEST_CASE("total is the weighted sum of the terms") {
  const auto backend = standard_mock();
  const BlobScene s;
  const auto t = backend.encode_text(Phrase("red square"));
  std::mt19937_64 rng(3);
  SaliencyMask m(48, 48);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (double& v : m.values()) v = u(rng);
  RelevancyMap h(48, 48, 0.2);

  const double f = loss_fore(s.image, m, t, backend);
  const double b = loss_back(s.image, m, t, backend);
  const double r = loss_rmap(m, h);
  const double g = loss_reg(m);
  const auto total = loss_total(s.image, m, t, h, LossWeights{}, backend);
  CHECK(total.fore == doctest::Approx(f));
  CHECK(total.back == doctest::Approx(b));
  CHECK(total.rmap == doctest::Approx(r));
  CHECK(total.reg == doctest::Approx(g));
  CHECK(total.total == doctest::Approx(f + b + 4 * r + g));

  // Arithmetic oracle for the weighting itself.
  CHECK(1 * 0.5 + 1 * 0.2 + 4 * 0.1 + 1 * 0.3 == doctest::Approx(1.4));

  const auto none = loss_total(s.image, m, t, h, LossWeights{0, 0, 0, 0}, backend);
  CHECK(none.total == 0.0);
  CHECK(none.fore == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  const auto backend = standard_mock(64, 32);
  std::mt19937_64 rng(4);
  auto img = random_image(16, 16, rng, 0.1, 0.9);
  paint(img, {3, 4, 7, 6}, 0.9, 0.15, 0.1);
  const auto t = backend.encode_text(Phrase("red square"));
  SaliencyMask m(16, 16);
  RelevancyMap h(16, 16);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (double& v : m.values()) v = u(rng);
  for (double& v : h.values()) v = u(rng);

  for (const LossWeights w : {LossWeights{}, LossWeights{1, 0, 0, 0}, LossWeights{0, 1, 0, 0}, LossWeights{0, 0, 1, 0},
                              LossWeights{0, 0, 0, 1}}) {
    std::vector<double> grad;
    loss_total(img, m, t, h, w, backend, &grad);
    REQUIRE(grad.size() == m.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto up = m, down = m;
      const double eps = 1e-6;
      up.values()[i] += eps;
      down.values()[i] -= eps;
      const double fd = (loss_total(img, up, t, h, w, backend).total - loss_total(img, down, t, h, w, backend).total) /
                        (2 * eps);
      worst = std::max(worst, relative_error(grad[i], fd, 1e-4));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("shape mismatches are rejected") {
  const auto backend = standard_mock();
  const ImageTensor img(16, 16, 0.5);
  CHECK_THROWS_AS(loss_fore(img, SaliencyMask(8, 8), Phrase("red"), backend), Error);
  CHECK_THROWS_AS(loss_back(img, SaliencyMask(8, 8), Phrase("red"), backend), Error);
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

#include "wwbl/config.hpp"

using namespace wwbl;
using nlohmann::json;

namespace {

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("defaults follow the published training setup") {
  const RunConfig c;
  CHECK(c.train.lr == doctest::Approx(0.0003));
  CHECK(c.train.momentum == doctest::Approx(0.9));
  CHECK(c.train.weight_decay == doctest::Approx(0.0001));
  CHECK(c.train.epochs == 100);
  CHECK(c.train.flip_prob == doctest::Approx(0.5));
  CHECK(c.train.wsg_input == 299);
  CHECK(c.loss.lambda3 == 4.0);
  CHECK(c.extract.wsol_threshold == 0.1);
  CHECK(c.extract.wsg_threshold == 0.5);
  CHECK(c.extract.nms_iou == 0.3);
  CHECK(c.extract.energy_keep_ratio == 0.5);
  CHECK(c.cluster.similarity_threshold == 0.85);
  CHECK(c.cluster.min_cluster_size == 2);
  CHECK(c.net.feature_dim == c.backend.embed_dim);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("merge overlays only the given keys") {
  RunConfig c;
  c.merge(json::parse(R"({"train": {"lr": 0.01, "epochs": 3}, "cluster": {"threshold": 0.9}})"));
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.momentum == doctest::Approx(0.9));
  CHECK(c.cluster.similarity_threshold == 0.9);
  CHECK(c.cluster.min_cluster_size == 2);

  RunConfig round;
  round.merge(c.to_json());
  CHECK(round.to_json() == c.to_json());
}

TEST_CASE("unknown keys and wrong types are config errors naming the key") {
  RunConfig c;
  try {
    c.merge(json::parse(R"({"train": {"learning_rate": 0.1}})"));
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
  }
  CHECK(code_of([&] { c.merge(json::parse(R"({"optimizer": {}})")); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { c.merge(json::parse(R"({"train": {"lr": "fast"}})")); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { c.merge(json::parse(R"({"net": 3})")); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { c.merge(json::parse(R"({"backend": {"kind": "clip"}})")); }) == ErrorCode::ConfigError);
}

TEST_CASE("validation catches bad values and inconsistent sections") {
  RunConfig c;
  c.net.feature_dim = 32;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigError);

  RunConfig d;
  d.train.batch_size = 0;
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::ConfigError);
  RunConfig e;
  e.train.lr = -0.1;
  CHECK(code_of([&] { e.validate(); }) == ErrorCode::ConfigError);
  RunConfig f;
  f.extract.nms_iou = 1.5;
  CHECK(code_of([&] { f.validate(); }) == ErrorCode::ConfigError);
  RunConfig g;
  g.loss.lambda2 = -1;
  CHECK(code_of([&] { g.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("load reads a partial file") {
  const auto p = std::filesystem::temp_directory_path() / "wwbl_test_config.json";
  std::ofstream(p) << R"({"net": {"width": 8}, "pipeline": {"mode": "iterative"}})";
  const auto c = RunConfig::load(p);
  CHECK(c.net.width == 8);
  CHECK(c.pipeline.mode == WwblMode::Iterative);
  std::ofstream(p) << "{ broken";
  CHECK(code_of([&] { RunConfig::load(p); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { RunConfig::load("/nonexistent/config.json"); }) == ErrorCode::ConfigError);
  std::filesystem::remove(p);
}

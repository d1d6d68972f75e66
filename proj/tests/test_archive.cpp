// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "wwbl/archive.hpp"
#include "wwbl/error.hpp"

using namespace wwbl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wwbl_test_archive";
  fs::create_directories(dir);
  return dir / name;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("archive round-trips metadata and tensors exactly") {
  Archive a;
  a.meta["kind"] = "test";
  a.meta["answer"] = 42;
  a.tensors.push_back({"w", {2, 3}, {1.5f, -2.0f, 3.25f, 0.0f, 1e-7f, -1e7f}});
  a.tensors.push_back({"b", {1}, {0.125f}});
  const fs::path p = temp_file("roundtrip.bin");
  write_archive(p, a);
  const Archive b = read_archive(p);
  CHECK(b.meta["kind"] == "test");
  CHECK(b.meta["answer"] == 42);
  REQUIRE(b.tensors.size() == 2);
  CHECK(b.tensors[0].name == "w");
  CHECK(b.tensors[0].shape == std::vector<int>{2, 3});
  CHECK(b.tensors[0].data == a.tensors[0].data);
  CHECK(b.require("b", 1).data == std::vector<float>{0.125f});
  CHECK(b.find("missing") == nullptr);
  CHECK(code_of([&] { (void)b.require("missing", 1); }) == ErrorCode::CheckpointError);
  CHECK(code_of([&] { (void)b.require("w", 5); }) == ErrorCode::CheckpointError);
}

TEST_CASE("archive reader rejects foreign and truncated files") {
  const fs::path bad = temp_file("bad.bin");
  std::ofstream(bad) << "not an archive at all";
  CHECK(code_of([&] { (void)read_archive(bad); }) == ErrorCode::CheckpointError);
  CHECK(code_of([&] { (void)read_archive(temp_file("does_not_exist.bin")); }) == ErrorCode::CheckpointError);

  Archive a;
  a.tensors.push_back({"w", {4}, {1, 2, 3, 4}});
  const fs::path p = temp_file("trunc.bin");
  write_archive(p, a);
  fs::resize_file(p, fs::file_size(p) - 4);
  CHECK(code_of([&] { (void)read_archive(p); }) == ErrorCode::CheckpointError);
}

// SPDX-License-Identifier: Apache-2.0
#include "wwbl/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "wwbl/error.hpp"

namespace wwbl {

namespace {

constexpr char kMagic[8] = {'W', 'W', 'B', 'L', 'A', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

}  // namespace

const ArchiveTensor* Archive::find(const std::string& name) const noexcept {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const ArchiveTensor& Archive::require(const std::string& name, std::size_t count) const {
  const ArchiveTensor* t = find(name);
  if (!t) raise(ErrorCode::CheckpointError, "archive is missing tensor '" + name + "'");
  if (t->data.size() != count)
    raise(ErrorCode::CheckpointError, "tensor '" + name + "' has " + std::to_string(t->data.size()) +
                                          " values, expected " + std::to_string(count));
  return *t;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["version"] = Archive::kVersion;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : archive.tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size();
  }
  const std::string text = header.dump();
  const std::uint64_t size = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::CheckpointError, "cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&size), sizeof size);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : archive.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) raise(ErrorCode::CheckpointError, "write failed for '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::CheckpointError, "cannot open '" + path.string() + "'");

  char magic[sizeof kMagic];
  std::uint64_t size = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    raise(ErrorCode::CheckpointError, "'" + path.string() + "' is not a wwbl archive");
  if (size > (1ull << 30)) raise(ErrorCode::CheckpointError, "archive header is implausibly large");

  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) raise(ErrorCode::CheckpointError, "truncated archive header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::CheckpointError, std::string("malformed archive header: ") + e.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer())
    raise(ErrorCode::CheckpointError, "archive header has no version field");
  if (header["version"].get<int>() != Archive::kVersion)
    raise(ErrorCode::CheckpointError,
          "unsupported archive version " + std::to_string(header["version"].get<int>()));

  Archive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  const auto data_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    ArchiveTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    t.data.resize(count);
    in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(float)));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) raise(ErrorCode::CheckpointError, "truncated tensor '" + t.name + "'");
    archive.tensors.push_back(std::move(t));
  }
  return archive;
}

}  // namespace wwbl

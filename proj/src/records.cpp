// SPDX-License-Identifier: Apache-2.0
#include "wwbl/records.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace wwbl {

namespace {

using nlohmann::json;

BoundingBox parse_box(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x, y, w, h]");
  BoundingBox b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (!b.valid()) throw std::invalid_argument("box must have positive width and height");
  return b;
}

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

void require_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw std::invalid_argument(std::string("unknown key '") + item.key() + "' in " + what);
  }
}

template <class Parse>
auto read_lines(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::DataError, "cannot open " + path.string());
  std::vector<decltype(parse(json{}))> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const std::exception& e) {
      raise(ErrorCode::DataError, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) raise(ErrorCode::DataError, "cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
  if (!out) raise(ErrorCode::DataError, "cannot write " + path.string());
}

}  // namespace

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  return read_lines(path, [](const json& j) {
    require_keys(j, {"image", "regions", "captions"}, "annotation");
    AnnotationRecord r;
    r.image = j.at("image").get<std::string>();
    for (const auto& reg : j.at("regions")) {
      require_keys(reg, {"phrase", "box"}, "region");
      r.regions.push_back({Phrase(reg.at("phrase").get<std::string>()), parse_box(reg.at("box"))});
    }
    if (j.contains("captions")) r.captions = j.at("captions").get<std::vector<std::string>>();
    return r;
  });
}

void write_annotations(const std::filesystem::path& path, std::span<const AnnotationRecord> records) {
  std::vector<json> lines;
  for (const auto& r : records) {
    json regions = json::array();
    for (const auto& reg : r.regions) regions.push_back({{"phrase", reg.phrase.text()}, {"box", box_json(reg.box)}});
    json j = {{"image", r.image}, {"regions", regions}};
    if (!r.captions.empty()) j["captions"] = r.captions;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  return read_lines(path, [](const json& j) {
    require_keys(j, {"image_id", "detections"}, "prediction");
    PredictionRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    for (const auto& d : j.at("detections")) {
      require_keys(d, {"phrase", "box", "score", "mask", "point"}, "detection");
      PredictedDetection p{{parse_box(d.at("box")), Phrase(d.at("phrase").get<std::string>()),
                            d.at("score").get<double>()},
                           d.value("mask", std::string()),
                           std::nullopt};
      if (d.contains("point")) {
        const auto& pt = d.at("point");
        if (!pt.is_array() || pt.size() != 2) throw std::invalid_argument("point must be [x, y]");
        p.point = std::pair{pt[0].get<int>(), pt[1].get<int>()};
      }
      r.detections.push_back(std::move(p));
    }
    return r;
  });
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::vector<json> lines;
  for (const auto& r : records) {
    json dets = json::array();
    for (const auto& p : r.detections) {
      json d = {{"phrase", p.detection.phrase.text()},
                {"box", box_json(p.detection.box)},
                {"score", p.detection.score}};
      if (!p.mask.empty()) d["mask"] = p.mask;
      if (p.point) d["point"] = json::array({p.point->first, p.point->second});
      dets.push_back(std::move(d));
    }
    lines.push_back({{"image_id", r.image_id}, {"detections", dets}});
  }
  write_lines(path, lines);
}

std::filesystem::path resolve_path(const std::filesystem::path& record_file, const std::string& relative) {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  return record_file.parent_path() / p;
}

}  // namespace wwbl

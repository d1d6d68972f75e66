// SPDX-License-Identifier: Apache-2.0
#include "wwbl/config.hpp"

#include <fstream>

namespace wwbl {

using nlohmann::json;

RunConfig::RunConfig() {
  // The network conditions on backend text embeddings, so the two widths agree.
  backend.embed_dim = net.feature_dim;
}

namespace {

const char* backend_kind_name(BackendKind k) { return k == BackendKind::Mock ? "mock" : "pretrained"; }

BackendKind parse_backend_kind(const std::string& s) {
  if (s == "mock") return BackendKind::Mock;
  if (s == "pretrained") return BackendKind::Pretrained;
  raise(ErrorCode::ConfigError, "unknown backend.kind '" + s + "' (expected mock or pretrained)");
}

void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) raise(ErrorCode::ConfigError, (where.empty() ? "config" : where) + " must be an object");
  for (const auto& item : patch.items()) {
    const std::string key = where.empty() ? item.key() : where + "." + item.key();
    if (!base.contains(item.key())) raise(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    json& slot = base[item.key()];
    if (slot.is_object()) {
      overlay(slot, item.value(), key);
      continue;
    }
    const json& v = item.value();
    const bool compatible = (slot.is_number() && v.is_number() && (!slot.is_number_integer() || v.is_number_integer())) ||
                            (slot.is_string() && v.is_string()) || (slot.is_boolean() && v.is_boolean());
    if (!compatible) raise(ErrorCode::ConfigError, "config key '" + key + "' has the wrong type");
    slot = v;
  }
}

}  // namespace

json RunConfig::to_json() const {
  return {
      {"backend",
       {{"kind", backend_kind_name(backend.kind)},
        {"checkpoint", backend.checkpoint},
        {"mock_seed", backend.mock_seed},
        {"embed_dim", backend.embed_dim},
        {"match_resolution", backend.match_resolution}}},
      {"net", net.to_json()},
      {"train", train.to_json()},
      {"loss", {{"lambda1", loss.lambda1}, {"lambda2", loss.lambda2}, {"lambda3", loss.lambda3}, {"lambda4", loss.lambda4}}},
      {"extract",
       {{"wsol_threshold", extract.wsol_threshold},
        {"wsg_threshold", extract.wsg_threshold},
        {"nms_iou", extract.nms_iou},
        {"energy_keep_ratio", extract.energy_keep_ratio}}},
      {"proposals",
       {{"scale", proposals.initial_segmentation_scale},
        {"sigma", proposals.smoothing_sigma},
        {"min_component_size", proposals.min_component_size},
        {"color_weight", proposals.color_weight},
        {"texture_weight", proposals.texture_weight},
        {"size_weight", proposals.size_weight},
        {"fill_weight", proposals.fill_weight},
        {"max_proposals", proposals.max_proposals},
        {"min_box_side", proposals.min_box_side}}},
      {"cluster", {{"threshold", cluster.similarity_threshold}, {"min_size", cluster.min_cluster_size}}},
      {"pipeline",
       {{"mode", to_string(pipeline.mode)},
        {"max_iterations", pipeline.max_iterations},
        {"accept_similarity", pipeline.accept_similarity}}},
      {"synthetic",
       {{"image_size", synthetic.image_size},
        {"min_objects", synthetic.min_objects},
        {"max_objects", synthetic.max_objects},
        {"min_side", synthetic.min_side},
        {"max_side", synthetic.max_side},
        {"margin", synthetic.margin}}},
  };
}

void RunConfig::merge(const json& patch) {
  json full = to_json();
  overlay(full, patch, "");
  try {
    const json& b = full["backend"];
    backend.kind = parse_backend_kind(b["kind"].get<std::string>());
    backend.checkpoint = b["checkpoint"].get<std::string>();
    backend.mock_seed = b["mock_seed"].get<std::uint64_t>();
    backend.embed_dim = b["embed_dim"].get<int>();
    backend.match_resolution = b["match_resolution"].get<int>();

    net = NetConfig::from_json(full["net"]);
    train = TrainConfig::from_json(full["train"]);

    const json& l = full["loss"];
    loss = {l["lambda1"].get<double>(), l["lambda2"].get<double>(), l["lambda3"].get<double>(),
            l["lambda4"].get<double>()};

    const json& e = full["extract"];
    extract = {e["wsol_threshold"].get<double>(), e["wsg_threshold"].get<double>(), e["nms_iou"].get<double>(),
               e["energy_keep_ratio"].get<double>()};

    const json& p = full["proposals"];
    proposals.initial_segmentation_scale = p["scale"].get<double>();
    proposals.smoothing_sigma = p["sigma"].get<double>();
    proposals.min_component_size = p["min_component_size"].get<int>();
    proposals.color_weight = p["color_weight"].get<double>();
    proposals.texture_weight = p["texture_weight"].get<double>();
    proposals.size_weight = p["size_weight"].get<double>();
    proposals.fill_weight = p["fill_weight"].get<double>();
    proposals.max_proposals = p["max_proposals"].get<int>();
    proposals.min_box_side = p["min_box_side"].get<int>();

    cluster = {full["cluster"]["threshold"].get<double>(), full["cluster"]["min_size"].get<int>()};

    const json& w = full["pipeline"];
    pipeline = {parse_wwbl_mode(w["mode"].get<std::string>()), w["max_iterations"].get<int>(),
                w["accept_similarity"].get<double>()};

    const json& s = full["synthetic"];
    synthetic = {s["image_size"].get<int>(), s["min_objects"].get<int>(), s["max_objects"].get<int>(),
                 s["min_side"].get<int>(),   s["max_side"].get<int>(),    s["margin"].get<int>()};
  } catch (const json::exception& ex) {
    raise(ErrorCode::ConfigError, std::string("invalid configuration: ") + ex.what());
  }
}

void RunConfig::validate() const {
  try {
    BackendDescriptor{backend.kind, backend.embed_dim, backend.match_resolution}.validate();
  } catch (const Error& e) {
    raise(ErrorCode::ConfigError, e.what());
  }
  if (backend.kind == BackendKind::Pretrained && backend.checkpoint.empty())
    raise(ErrorCode::ConfigError, "backend.checkpoint is required for the pretrained backend");
  net.validate();
  train.validate();
  loss.validate();
  extract.validate();
  proposals.validate();
  cluster.validate();
  pipeline.validate();
  synthetic.validate();
  if (net.variant == NetVariant::Multimodal && backend.kind == BackendKind::Mock &&
      net.feature_dim != backend.embed_dim)
    raise(ErrorCode::ConfigError, "net.feature_dim (" + std::to_string(net.feature_dim) +
                                      ") must equal backend.embed_dim (" + std::to_string(backend.embed_dim) + ")");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ConfigError, "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, "cannot parse " + path.string() + ": " + e.what());
  }
  RunConfig cfg;
  cfg.merge(j);
  return cfg;
}

}  // namespace wwbl

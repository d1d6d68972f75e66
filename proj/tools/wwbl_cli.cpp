// SPDX-License-Identifier: Apache-2.0
//
// wwbl: train, infer, eval and make-synthetic on top of the C API.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wwbl/wwbl.h"

namespace {

struct Failure {
  int code;
};

void check(wwbl_status s) {
  if (s == WWBL_OK) return;
  std::fprintf(stderr, "error: %s\n", wwbl_last_error());
  const int code = static_cast<int>(s);
  throw Failure{code >= 2 && code <= 5 ? code : 1};
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  throw Failure{2};
}

struct ConfigDeleter {
  void operator()(wwbl_config* c) const { wwbl_config_free(c); }
};
struct SessionDeleter {
  void operator()(wwbl_session* s) const { wwbl_session_free(s); }
};
using ConfigPtr = std::unique_ptr<wwbl_config, ConfigDeleter>;
using SessionPtr = std::unique_ptr<wwbl_session, SessionDeleter>;

ConfigPtr load_config(const std::string& path, const nlohmann::json& patch) {
  wwbl_config* raw = nullptr;
  check(path.empty() ? wwbl_config_default(&raw) : wwbl_config_load(path.c_str(), &raw));
  ConfigPtr cfg(raw);
  if (!patch.is_null() && !patch.empty()) check(wwbl_config_merge_json(cfg.get(), patch.dump().c_str()));
  return cfg;
}

SessionPtr open_session(const wwbl_config* cfg) {
  wwbl_session* raw = nullptr;
  check(wwbl_session_create(cfg, &raw));
  return SessionPtr(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised phrase grounding and open-world localisation"};
  app.require_subcommand(1);

  std::string config_path;
  std::int64_t seed = -1;
  int workers = 1;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for training, synthetic data and initialisation");
  app.add_option("--workers", workers, "Parallel inference workers")->check(CLI::PositiveNumber);

  // train
  auto* train = app.add_subcommand("train", "Train the grounding network from (image, caption) pairs");
  std::string train_data, train_task, train_name, runs_dir;
  int train_epochs = -1;
  train->add_option("--data", train_data, "Annotation file (only images and captions are used)")->required();
  train->add_option("--task", train_task, "wsol or wsg");
  train->add_option("--epochs", train_epochs, "Override train.epochs");
  train->add_option("--name", train_name, "Run name (checkpoints go to <runs-dir>/<name>/)");
  train->add_option("--runs-dir", runs_dir, "Checkpoint root (default: runs)");

  // infer
  auto* infer = app.add_subcommand("infer", "Run wsol, wsg, wwbl or wwbl-iter inference");
  std::string mode, checkpoint, annotations, out_records = "predictions.jsonl", overlay_dir, mask_dir;
  std::vector<std::string> prompts, images;
  infer->add_option("--mode", mode, "wsol | wsg | wwbl | wwbl-iter")
      ->required()
      ->check(CLI::IsMember({"wsol", "wsg", "wwbl", "wwbl-iter"}));
  infer->add_option("--checkpoint", checkpoint, "Trained network")->required();
  infer->add_option("--prompt", prompts, "Phrase to ground (wsg; repeatable)")->allow_extra_args(false);
  infer->add_option("--annotations", annotations, "Run on every image of an annotation file");
  infer->add_option("--out", out_records, "Prediction records (JSON lines)");
  infer->add_option("--overlay", overlay_dir, "Write images with boxes and phrases here");
  infer->add_option("--save-masks", mask_dir, "Write grayscale masks here");
  infer->add_option("images", images, "Image files");

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions against annotations");
  std::string pred_path, gt_path, eval_task = "wwbl", metric = "both", report_path;
  eval->add_option("--pred", pred_path, "Prediction records")->required();
  eval->add_option("--gt", gt_path, "Annotation records")->required();
  eval->add_option("--task", eval_task, "wsol | wsg | wwbl")->check(CLI::IsMember({"wsol", "wsg", "wwbl"}));
  eval->add_option("--metric", metric, "point | box | both")->check(CLI::IsMember({"point", "box", "both"}));
  eval->add_option("--report", report_path, "Machine-readable report (default: <pred>.report.json)");

  // make-synthetic
  auto* synth = app.add_subcommand("make-synthetic", "Generate a colour-blob dataset");
  std::string synth_out;
  int synth_count = 50;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of scenes")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    nlohmann::json patch = nlohmann::json::object();
    if (seed >= 0) patch["train"]["seed"] = seed;

    if (train->parsed()) {
      if (!train_task.empty()) patch["train"]["task"] = train_task;
      if (train_epochs >= 0) patch["train"]["epochs"] = train_epochs;
      if (!train_name.empty()) patch["train"]["name"] = train_name;
      if (!runs_dir.empty()) patch["train"]["runs_dir"] = runs_dir;
      const ConfigPtr cfg = load_config(config_path, patch);
      const SessionPtr session = open_session(cfg.get());
      char* ckpt = nullptr;
      check(wwbl_train(session.get(), train_data.c_str(), &ckpt));
      if (ckpt) {
        std::printf("%s\n", ckpt);
        wwbl_string_free(ckpt);
      }
      return 0;
    }

    if (infer->parsed()) {
      const bool wwbl_mode = mode == "wwbl" || mode == "wwbl-iter";
      if (wwbl_mode && !prompts.empty()) usage_error("--prompt is not accepted in mode '" + mode + "'");
      if (mode == "wsg" && prompts.empty() && annotations.empty()) usage_error("mode 'wsg' requires --prompt");
      if (images.empty() && annotations.empty()) usage_error("no input images (give files or --annotations)");
      const ConfigPtr cfg = load_config(config_path, patch);
      const SessionPtr session = open_session(cfg.get());
      check(wwbl_session_load_checkpoint(session.get(), checkpoint.c_str()));
      std::vector<const char*> image_ptrs, prompt_ptrs;
      for (const auto& s : images) image_ptrs.push_back(s.c_str());
      for (const auto& s : prompts) prompt_ptrs.push_back(s.c_str());
      check(wwbl_infer(session.get(), mode.c_str(), annotations.empty() ? nullptr : annotations.c_str(),
                       image_ptrs.data(), image_ptrs.size(), prompt_ptrs.data(), prompt_ptrs.size(),
                       out_records.c_str(), overlay_dir.empty() ? nullptr : overlay_dir.c_str(),
                       mask_dir.empty() ? nullptr : mask_dir.c_str(), workers));
      return 0;
    }

    if (eval->parsed()) {
      const ConfigPtr cfg = load_config(config_path, patch);
      const SessionPtr session = open_session(cfg.get());
      if (report_path.empty()) report_path = pred_path + ".report.json";
      wwbl_eval_result r{};
      check(wwbl_eval(session.get(), pred_path.c_str(), gt_path.c_str(), eval_task.c_str(), report_path.c_str(), &r));
      const double point = 100.0 * r.pointing_accuracy;
      const double box = 100.0 * r.box_accuracy;
      if (metric == "point")
        std::printf("point: %.2f\n", point);
      else if (metric == "box")
        std::printf("box: %.2f\n", box);
      else
        std::printf("point: %.2f  box: %.2f\n", point, box);
      return 0;
    }

    if (synth->parsed()) {
      const ConfigPtr cfg = load_config(config_path, patch);
      check(wwbl_make_synthetic(cfg.get(), synth_out.c_str(), synth_count, seed >= 0 ? static_cast<uint64_t>(seed) : 0));
      return 0;
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}

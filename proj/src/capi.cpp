// SPDX-License-Identifier: Apache-2.0
#include "wwbl/wwbl.h"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <thread>

#include "wwbl/config.hpp"
#include "wwbl/image_io.hpp"
#include "wwbl/pipeline.hpp"
#include "wwbl/records.hpp"
#include "wwbl/synthetic.hpp"
#include "wwbl/trainer.hpp"

struct wwbl_config {
  wwbl::RunConfig cfg;
};

struct wwbl_session {
  wwbl::RunConfig cfg;
  std::unique_ptr<wwbl::VisionLanguageBackend> backend;
  std::optional<wwbl::GroundingNet> net;
};

namespace {

using namespace wwbl;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

wwbl_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidPhrase:
    case ErrorCode::ConfigError:
      return WWBL_ERR_CONFIG;
    case ErrorCode::DataError:
      return WWBL_ERR_DATA;
    case ErrorCode::NonFiniteLoss:
      return WWBL_ERR_NONFINITE;
    case ErrorCode::CheckpointError:
      return WWBL_ERR_CHECKPOINT;
    case ErrorCode::DimensionMismatch:
      return WWBL_ERR_DIMENSION;
    case ErrorCode::BackendUnavailable:
      return WWBL_ERR_BACKEND;
    case ErrorCode::UninitializedWeights:
      return WWBL_ERR_UNINITIALIZED;
  }
  return WWBL_ERR_INTERNAL;
}

template <class F>
wwbl_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return WWBL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return WWBL_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return WWBL_ERR_INTERNAL;
  }
}

wwbl_status null_argument(const char* name) {
  g_last_error = std::string("null argument: ") + name;
  return WWBL_ERR_CONFIG;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string file_stem_id(const std::string& id) {
  std::string out = fs::path(id).replace_extension().string();
  std::replace(out.begin(), out.end(), '/', '_');
  std::replace(out.begin(), out.end(), '\\', '_');
  return out;
}

PipelineContext context(const wwbl_session& s) {
  if (!s.net) raise(ErrorCode::UninitializedWeights, "session has no network; load a checkpoint first");
  return {*s.net, *s.backend, s.cfg.extract, s.cfg.proposals, s.cfg.cluster, s.cfg.pipeline};
}

struct InferItem {
  std::string id;
  fs::path path;
  std::vector<Phrase> prompts;
};

struct InferOptions {
  std::string mode;
  fs::path records;
  fs::path overlay_dir;
  fs::path mask_dir;
};

PredictionRecord infer_one(const PipelineContext& ctx, const InferItem& item, const InferOptions& opt) {
  const ImageTensor image = read_image(item.path);
  ImagePrediction pred;
  if (opt.mode == "wsg") {
    pred = predict_wsg(ctx, image, item.prompts);
  } else if (opt.mode == "wsol") {
    pred = predict_wsol(ctx, image, item.prompts);
  } else {
    pred = infer_wwbl(ctx, image);
  }
  pred.set.image_id = item.id;

  PredictionRecord rec{item.id, {}};
  std::map<const SaliencyMask*, std::string> saved;
  const std::string stem = file_stem_id(item.id);
  for (std::size_t k = 0; k < pred.set.detections.size(); ++k) {
    std::string mask_ref;
    const auto& m = pred.masks[k];
    if (!opt.mask_dir.empty() && m) {
      auto it = saved.find(m.get());
      if (it == saved.end()) {
        const fs::path file = opt.mask_dir / (stem + "_mask" + std::to_string(saved.size()) + ".png");
        write_mask(file, *m);
        const fs::path base = opt.records.has_parent_path() ? opt.records.parent_path() : fs::path(".");
        it = saved.emplace(m.get(), fs::relative(fs::absolute(file), fs::absolute(base)).string()).first;
      }
      mask_ref = it->second;
    }
    std::optional<std::pair<int, int>> point;
    if (m) point = argmax_location(*m);
    rec.detections.push_back({pred.set.detections[k], mask_ref, point});
  }
  if (!opt.overlay_dir.empty()) write_overlay(opt.overlay_dir / (stem + ".png"), image, pred.set.detections);
  return rec;
}

}  // namespace

extern "C" {

const char* wwbl_version(void) { return "0.1.0"; }

const char* wwbl_last_error(void) { return g_last_error.c_str(); }

void wwbl_string_free(char* s) { std::free(s); }

wwbl_status wwbl_config_default(wwbl_config** out) {
  if (!out) return null_argument("out");
  return guarded([&] { *out = new wwbl_config{}; });
}

wwbl_status wwbl_config_load(const char* path, wwbl_config** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new wwbl_config{RunConfig::load(path)}; });
}

wwbl_status wwbl_config_merge_json(wwbl_config* cfg, const char* json) {
  if (!cfg) return null_argument("cfg");
  if (!json) return null_argument("json");
  return guarded([&] {
    nlohmann::json patch;
    try {
      patch = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorCode::ConfigError, std::string("cannot parse configuration patch: ") + e.what());
    }
    RunConfig next = cfg->cfg;
    next.merge(patch);
    cfg->cfg = std::move(next);
  });
}

wwbl_status wwbl_config_to_json(const wwbl_config* cfg, char** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] { *out = dup_string(cfg->cfg.to_json().dump(2)); });
}

void wwbl_config_free(wwbl_config* cfg) { delete cfg; }

wwbl_status wwbl_session_create(const wwbl_config* cfg, wwbl_session** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] {
    cfg->cfg.validate();
    auto s = std::make_unique<wwbl_session>();
    s->cfg = cfg->cfg;
    s->backend = make_backend(s->cfg.backend);
    *out = s.release();
  });
}

void wwbl_session_free(wwbl_session* s) { delete s; }

wwbl_status wwbl_session_init_net(wwbl_session* s, uint64_t seed) {
  if (!s) return null_argument("session");
  return guarded([&] { s->net.emplace(s->cfg.net, seed); });
}

wwbl_status wwbl_session_load_checkpoint(wwbl_session* s, const char* path) {
  if (!s) return null_argument("session");
  if (!path) return null_argument("path");
  return guarded([&] {
    const Archive a = read_archive(path);
    GroundingNet net(s->cfg.net);
    net.load(a);
    s->net.emplace(std::move(net));
  });
}

wwbl_status wwbl_train(wwbl_session* s, const char* annotations, char** out_checkpoint) {
  if (!s) return null_argument("session");
  if (!annotations) return null_argument("annotations");
  return guarded([&] {
    const TrainConfig& tc = s->cfg.train;
    const NetVariant want = tc.task == TrainTask::Wsol ? NetVariant::Wsol : NetVariant::Multimodal;
    if (s->cfg.net.variant != want)
      raise(ErrorCode::ConfigError, std::string("train.task '") + to_string(tc.task) + "' does not fit net.variant '" +
                                        to_string(s->cfg.net.variant) + "'");
    const fs::path ann_path(annotations);
    if (!fs::exists(ann_path)) raise(ErrorCode::DataError, "dataset not found: " + ann_path.string());

    std::vector<TrainingExample> examples;
    for (const auto& rec : read_annotations(ann_path)) {
      TrainingExample ex{rec.image, read_image(resolve_path(ann_path, rec.image)), {}};
      // Only text is taken from the record; boxes are never read.
      if (!rec.captions.empty())
        for (const auto& c : rec.captions) ex.captions.emplace_back(c);
      else
        for (const auto& r : rec.regions) ex.captions.push_back(r.phrase);
      examples.push_back(std::move(ex));
    }

    TrainConfig cfg = tc;
    if (cfg.runs_dir.empty()) cfg.runs_dir = "runs";
    if (!s->net) s->net.emplace(s->cfg.net, cfg.seed);
    RelevancyCache cache = RelevancyCache::from_environment();
    const FitResult r = fit(examples, cfg, s->cfg.loss, *s->net, *s->backend, cache);
    if (out_checkpoint) *out_checkpoint = r.checkpoints.empty() ? nullptr : dup_string(r.checkpoints.back().string());
  });
}

wwbl_status wwbl_infer(wwbl_session* s, const char* mode, const char* annotations, const char* const* images,
                       size_t image_count, const char* const* prompts, size_t prompt_count, const char* out_records,
                       const char* overlay_dir, const char* mask_dir, int workers) {
  if (!s) return null_argument("session");
  if (!mode) return null_argument("mode");
  if (!out_records) return null_argument("out_records");
  if (image_count > 0 && !images) return null_argument("images");
  if (prompt_count > 0 && !prompts) return null_argument("prompts");
  return guarded([&] {
    InferOptions opt{mode, out_records, overlay_dir ? overlay_dir : "", mask_dir ? mask_dir : ""};
    const bool wwbl_mode = opt.mode == "wwbl" || opt.mode == "wwbl-iter";
    if (!wwbl_mode && opt.mode != "wsg" && opt.mode != "wsol")
      raise(ErrorCode::ConfigError, "unknown mode '" + opt.mode + "' (expected wsol, wsg, wwbl or wwbl-iter)");
    if (wwbl_mode && prompt_count > 0) raise(ErrorCode::ConfigError, "mode '" + opt.mode + "' takes no prompt");
    if (workers < 1) raise(ErrorCode::ConfigError, "workers must be >= 1");

    PipelineContext ctx = context(*s);
    if (opt.mode == "wwbl-iter") ctx.wwbl.mode = WwblMode::Iterative;
    if (opt.mode == "wwbl") ctx.wwbl.mode = WwblMode::SelectiveSearch;

    std::vector<Phrase> given;
    for (size_t i = 0; i < prompt_count; ++i) given.emplace_back(prompts[i]);

    std::vector<InferItem> items;
    if (annotations) {
      const fs::path ann(annotations);
      for (const auto& rec : read_annotations(ann)) {
        InferItem item{rec.image, resolve_path(ann, rec.image), given};
        if (opt.mode == "wsg" && given.empty())
          for (const auto& r : rec.regions) item.prompts.push_back(r.phrase);
        items.push_back(std::move(item));
      }
    }
    for (size_t i = 0; i < image_count; ++i) items.push_back({images[i], images[i], given});
    if (items.empty()) raise(ErrorCode::DataError, "no input images");
    if (opt.mode == "wsg" && std::any_of(items.begin(), items.end(), [](const InferItem& it) { return it.prompts.empty(); }))
      raise(ErrorCode::ConfigError, "mode 'wsg' requires a prompt");

    std::vector<std::optional<PredictionRecord>> results(items.size());
    std::vector<std::string> errors(items.size());
    std::vector<ErrorCode> codes(items.size(), ErrorCode::DataError);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
        try {
          results[i] = infer_one(ctx, items[i], opt);
        } catch (const Error& e) {
          errors[i] = e.what();
          codes[i] = e.code();
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    };
    const int threads = std::min<int>(workers, static_cast<int>(items.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!results[i]) raise(codes[i], items[i].id + ": " + errors[i]);

    std::vector<PredictionRecord> records;
    for (auto& r : results) records.push_back(std::move(*r));
    write_predictions(opt.records, records);
  });
}

wwbl_status wwbl_eval(wwbl_session* s, const char* predictions, const char* annotations, const char* task,
                      const char* report_path, wwbl_eval_result* out) {
  if (!s) return null_argument("session");
  if (!predictions) return null_argument("predictions");
  if (!annotations) return null_argument("annotations");
  if (!task) return null_argument("task");
  return guarded([&] {
    const EvalTask t = parse_eval_task(task);
    const fs::path pred_path(predictions);
    std::vector<ImagePrediction> preds;
    std::map<std::string, MaskPtr> masks;
    for (const auto& rec : read_predictions(pred_path)) {
      ImagePrediction p;
      p.set.image_id = rec.image_id;
      for (const auto& d : rec.detections) {
        p.set.detections.push_back(d.detection);
        MaskPtr m;
        if (!d.mask.empty()) {
          auto it = masks.find(d.mask);
          if (it == masks.end())
            it = masks.emplace(d.mask, std::make_shared<const SaliencyMask>(read_mask(resolve_path(pred_path, d.mask))))
                     .first;
          m = it->second;
        }
        p.masks.push_back(m);
        p.points.push_back(d.point);
      }
      preds.push_back(std::move(p));
    }
    std::vector<GroundingAnnotation> truth;
    for (const auto& rec : read_annotations(annotations)) truth.push_back(rec.annotation());

    const EvalReport report = evaluate(preds, truth, *s->backend, t);
    if (report_path) {
      const fs::path rp(report_path);
      if (rp.has_parent_path()) fs::create_directories(rp.parent_path());
      std::ofstream f(rp);
      f << report.to_json().dump(2) << '\n';
      if (!f) raise(ErrorCode::DataError, "cannot write " + rp.string());
    }
    if (out) *out = {report.pointing_accuracy, report.box_accuracy, report.total};
  });
}

wwbl_status wwbl_make_synthetic(const wwbl_config* cfg, const char* out_dir, int count, uint64_t seed) {
  if (!cfg) return null_argument("cfg");
  if (!out_dir) return null_argument("out_dir");
  return guarded([&] {
    if (count < 1) raise(ErrorCode::ConfigError, "count must be >= 1");
    MockWorldSpec world = MockWorldSpec::standard(cfg->cfg.backend.mock_seed);
    if (!cfg->cfg.backend.mock_colors.empty()) world.colors = cfg->cfg.backend.mock_colors;
    const auto scenes = make_scenes(world, cfg->cfg.synthetic, seed, count);
    write_synthetic_dataset(out_dir, scenes);
  });
}

double wwbl_iou(wwbl_box a, wwbl_box b) {
  return iou(BoundingBox{a.x, a.y, a.w, a.h}, BoundingBox{b.x, b.y, b.w, b.h});
}

wwbl_status wwbl_nms(const wwbl_box* boxes, const double* scores, size_t n, double iou_threshold, size_t* keep,
                     size_t* kept) {
  if (n > 0 && (!boxes || !scores || !keep)) return null_argument("boxes/scores/keep");
  if (!kept) return null_argument("kept");
  return guarded([&] {
    std::vector<ScoredBox> in;
    in.reserve(n);
    for (size_t i = 0; i < n; ++i) in.push_back({{boxes[i].x, boxes[i].y, boxes[i].w, boxes[i].h}, scores[i]});
    const auto idx = nms_indices(in, iou_threshold);
    std::copy(idx.begin(), idx.end(), keep);
    *kept = idx.size();
  });
}

}  // extern "C"

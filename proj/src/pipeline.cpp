// SPDX-License-Identifier: Apache-2.0
#include "wwbl/pipeline.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "wwbl/image_ops.hpp"

namespace wwbl {

const char* to_string(WwblMode mode) noexcept {
  return mode == WwblMode::SelectiveSearch ? "selective_search" : "iterative";
}

WwblMode parse_wwbl_mode(const std::string& text) {
  if (text == "selective_search") return WwblMode::SelectiveSearch;
  if (text == "iterative") return WwblMode::Iterative;
  raise(ErrorCode::ConfigError, "unknown pipeline.mode '" + text + "' (expected selective_search or iterative)");
}

void WwblConfig::validate() const {
  if (max_iterations < 1) raise(ErrorCode::ConfigError, "pipeline.max_iterations must be >= 1");
  if (!(accept_similarity > 0.0 && accept_similarity < 1.0))
    raise(ErrorCode::ConfigError, "pipeline.accept_similarity must be in (0,1)");
}

SaliencyMask predict_mask(const PipelineContext& ctx, const ImageTensor& image, const TextEmbedding* text) {
  const int side = ctx.net.config().input_size;
  if (image.height() == side && image.width() == side) return ctx.net.forward(image, text);
  const SaliencyMask small = ctx.net.forward(resize(image, side, side), text);
  return resize(small, image.height(), image.width());
}

WsgResult infer_wsg(const PipelineContext& ctx, const ImageTensor& image, const Phrase& phrase) {
  const TextEmbedding z = ctx.backend.encode_text(phrase);
  WsgResult r{predict_mask(ctx, image, &z), {}};
  r.boxes = extract_wsg_boxes(r.mask, ctx.extract);
  return r;
}

WsolResult infer_wsol(const PipelineContext& ctx, const ImageTensor& image, const Phrase* phrase) {
  std::optional<TextEmbedding> z;
  if (ctx.net.config().variant == NetVariant::Multimodal) {
    if (!phrase) raise(ErrorCode::InvalidArgument, "a multimodal network needs a phrase for wsol inference");
    z = ctx.backend.encode_text(*phrase);
  }
  WsolResult r{predict_mask(ctx, image, z ? &*z : nullptr), {}};
  r.box = extract_wsol_box(r.mask, ctx.extract);
  return r;
}

namespace {

double mean_inside(const SaliencyMask& m, const BoundingBox& b) {
  double sum = 0.0;
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) sum += m.at(y, x);
  return sum / static_cast<double>(b.area());
}

void add_detection(ImagePrediction& out, const BoundingBox& b, const Phrase& p, double score, const MaskPtr& m) {
  out.set.detections.push_back({b, p, score});
  out.masks.push_back(m);
}

}  // namespace

ImagePrediction predict_wsg(const PipelineContext& ctx, const ImageTensor& image, std::span<const Phrase> phrases) {
  ImagePrediction out;
  for (const auto& phrase : phrases) {
    WsgResult r = infer_wsg(ctx, image, phrase);
    auto mask = std::make_shared<const SaliencyMask>(std::move(r.mask));
    if (r.boxes.empty()) {
      const BoundingBox b = extract_wsol_box(*mask, ctx.extract);
      add_detection(out, b, phrase, mean_inside(*mask, b), mask);
    }
    for (const auto& b : r.boxes) add_detection(out, b.box, phrase, b.score, mask);
  }
  return out;
}

ImagePrediction predict_wsol(const PipelineContext& ctx, const ImageTensor& image, std::span<const Phrase> phrases) {
  ImagePrediction out;
  auto run = [&](const Phrase* phrase) {
    WsolResult r = infer_wsol(ctx, image, phrase);
    auto mask = std::make_shared<const SaliencyMask>(std::move(r.mask));
    add_detection(out, r.box, phrase ? *phrase : Phrase("object"), mean_inside(*mask, r.box), mask);
  };
  if (phrases.empty()) {
    if (ctx.net.config().variant == NetVariant::Multimodal)
      raise(ErrorCode::ConfigError, "wsol inference with a multimodal network needs a prompt");
    run(nullptr);
  }
  for (const auto& p : phrases) run(&p);
  return out;
}

ImagePrediction infer_wwbl_ss(const PipelineContext& ctx, const ImageTensor& image) {
  ImagePrediction out;
  const auto proposals = selective_search(image, ctx.proposals);
  std::vector<Phrase> captions;
  std::vector<TextEmbedding> embeddings;
  captions.reserve(proposals.size());
  for (const auto& p : proposals) {
    captions.push_back(ctx.backend.caption(p.crop));
    embeddings.push_back(ctx.backend.encode_text(captions.back()));
  }
  for (const auto& cluster : cluster_captions(captions, embeddings, ctx.cluster)) {
    auto mask = std::make_shared<const SaliencyMask>(predict_mask(ctx, image, &cluster.embedding));
    for (const auto& b : extract_wsg_boxes(*mask, ctx.extract)) {
      out.set.detections.push_back({b.box, cluster.representative, b.score});
      out.masks.push_back(mask);
    }
  }
  return out;
}

namespace {

std::size_t nonzero_pixels(const ImageTensor& image) {
  std::size_t count = 0;
  for (std::size_t p = 0; p < image.pixel_count(); ++p)
    if (image.channel(0)[p] != 0.0 || image.channel(1)[p] != 0.0 || image.channel(2)[p] != 0.0) ++count;
  return count;
}

}  // namespace

ImagePrediction infer_wwbl_iter(const PipelineContext& ctx, const ImageTensor& image) {
  ImagePrediction out;
  ImageTensor working = image;
  const Phrase first = ctx.backend.caption(working);
  Phrase current = first;
  for (int i = 0; i < ctx.wwbl.max_iterations; ++i) {
    const TextEmbedding z = ctx.backend.encode_text(current);
    auto mask = std::make_shared<const SaliencyMask>(predict_mask(ctx, working, &z));
    const auto box = largest_contour_box(*mask, ctx.extract.wsg_threshold);
    if (!box) break;
    const ImageTensor patch = crop(working, *box);
    // An already blanked patch cannot deplete the image further.
    if (nonzero_pixels(patch) == 0) break;
    const Phrase patch_caption = ctx.backend.caption(patch);
    if (ctx.backend.text_similarity(patch_caption, first) < ctx.wwbl.accept_similarity) break;

    double energy = 0.0;
    for (int y = box->y; y < box->bottom(); ++y)
      for (int x = box->x; x < box->right(); ++x) energy += mask->at(y, x);
    out.set.detections.push_back({*box, patch_caption, energy / static_cast<double>(box->area())});
    out.masks.push_back(mask);

    for (int c = 0; c < ImageTensor::kChannels; ++c)
      for (int y = box->y; y < box->bottom(); ++y)
        for (int x = box->x; x < box->right(); ++x) working.at(c, y, x) = 0.0;
    current = ctx.backend.caption(working);
  }
  return out;
}

ImagePrediction infer_wwbl(const PipelineContext& ctx, const ImageTensor& image) {
  return ctx.wwbl.mode == WwblMode::SelectiveSearch ? infer_wwbl_ss(ctx, image) : infer_wwbl_iter(ctx, image);
}

// ---------------------------------------------------------------------------

const char* to_string(EvalTask task) noexcept {
  switch (task) {
    case EvalTask::Wsol:
      return "wsol";
    case EvalTask::Wsg:
      return "wsg";
    case EvalTask::Wwbl:
      return "wwbl";
  }
  return "wwbl";
}

EvalTask parse_eval_task(const std::string& text) {
  if (text == "wsol") return EvalTask::Wsol;
  if (text == "wsg") return EvalTask::Wsg;
  if (text == "wwbl" || text == "wwbl-iter") return EvalTask::Wwbl;
  raise(ErrorCode::ConfigError, "unknown evaluation task '" + text + "'");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"image_id", r.image_id},
                    {"phrase", r.phrase},
                    {"matched_phrase", r.matched_phrase},
                    {"point_hit", r.point_hit},
                    {"box_hit", r.box_hit}});
  return {{"task", to_string(task)},
          {"total", total},
          {"point_hits", point_hits},
          {"box_hits", box_hits},
          {"pointing_accuracy", pointing_accuracy},
          {"box_accuracy", box_accuracy},
          {"records", recs}};
}

namespace {

bool point_in(const ImagePrediction& pred, std::size_t k, const BoundingBox& gt) {
  if (k < pred.points.size() && pred.points[k]) return gt.contains(pred.points[k]->first, pred.points[k]->second);
  const auto& mask = k < pred.masks.size() ? pred.masks[k] : nullptr;
  if (mask) return pointing_hit(*mask, gt);
  const BoundingBox& b = pred.set.detections[k].box;
  return gt.contains(b.x + b.w / 2, b.y + b.h / 2);
}

// Strict "a ranks before b" among candidates of equal primary key.
bool better_secondary(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.box.x, a.box.y, a.box.w, a.box.h) < std::tie(b.box.x, b.box.y, b.box.w, b.box.h);
}

}  // namespace

EvalReport evaluate(const std::vector<ImagePrediction>& predictions, const std::vector<GroundingAnnotation>& truth,
                    const VisionLanguageBackend& backend, EvalTask task) {
  std::map<std::string, const GroundingAnnotation*> by_id;
  for (const auto& a : truth) by_id[a.image_id] = &a;
  std::map<std::string, const ImagePrediction*> pred_by_id;
  for (const auto& p : predictions) {
    if (!by_id.count(p.set.image_id))
      raise(ErrorCode::DataError, "prediction for unknown image '" + p.set.image_id + "'");
    pred_by_id[p.set.image_id] = &p;
  }

  EvalReport report;
  report.task = task;
  static const ImagePrediction kEmpty;

  for (const auto& ann : truth) {
    const auto it = pred_by_id.find(ann.image_id);
    const ImagePrediction& pred = it == pred_by_id.end() ? kEmpty : *it->second;
    const auto& dets = pred.set.detections;

    if (task == EvalTask::Wsol) {
      EvalRecord rec{ann.image_id, ann.regions.empty() ? std::string() : ann.regions.front().phrase.text(), {}, false,
                     false};
      std::optional<std::size_t> best;
      for (std::size_t k = 0; k < dets.size(); ++k)
        if (!best || better_secondary(dets[k], dets[*best])) best = k;
      if (best) {
        rec.matched_phrase = dets[*best].phrase.text();
        for (const auto& r : ann.regions) {
          rec.box_hit = rec.box_hit || iou(dets[*best].box, r.box) >= 0.5;
          rec.point_hit = rec.point_hit || point_in(pred, *best, r.box);
        }
      }
      report.records.push_back(std::move(rec));
      continue;
    }

    std::vector<TextEmbedding> det_embeddings;
    if (task == EvalTask::Wwbl)
      for (const auto& d : dets) det_embeddings.push_back(backend.encode_text(d.phrase));

    for (const auto& region : ann.regions) {
      EvalRecord rec{ann.image_id, region.phrase.text(), {}, false, false};
      std::optional<std::size_t> best;
      if (task == EvalTask::Wwbl) {
        const TextEmbedding z = backend.encode_text(region.phrase);
        double best_sim = 0.0;
        for (std::size_t k = 0; k < dets.size(); ++k) {
          const double s = cosine(z, det_embeddings[k]);
          if (!best || s > best_sim || (s == best_sim && better_secondary(dets[k], dets[*best]))) {
            best = k;
            best_sim = s;
          }
        }
      } else {
        for (std::size_t k = 0; k < dets.size(); ++k)
          if (dets[k].phrase == region.phrase && (!best || better_secondary(dets[k], dets[*best]))) best = k;
      }
      if (best) {
        rec.matched_phrase = dets[*best].phrase.text();
        rec.point_hit = point_in(pred, *best, region.box);
        rec.box_hit = iou(dets[*best].box, region.box) >= 0.5;
      }
      report.records.push_back(std::move(rec));
    }
  }

  report.total = static_cast<int>(report.records.size());
  for (const auto& r : report.records) {
    report.point_hits += r.point_hit ? 1 : 0;
    report.box_hits += r.box_hit ? 1 : 0;
  }
  if (report.total > 0) {
    report.pointing_accuracy = static_cast<double>(report.point_hits) / report.total;
    report.box_accuracy = static_cast<double>(report.box_hits) / report.total;
  }
  return report;
}

}  // namespace wwbl

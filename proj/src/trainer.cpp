// SPDX-License-Identifier: Apache-2.0
#include "wwbl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "wwbl/image_ops.hpp"

namespace wwbl {

const char* to_string(TrainTask task) noexcept { return task == TrainTask::Wsol ? "wsol" : "wsg"; }

TrainTask parse_train_task(const std::string& text) {
  if (text == "wsol") return TrainTask::Wsol;
  if (text == "wsg") return TrainTask::Wsg;
  raise(ErrorCode::ConfigError, "unknown train.task '" + text + "' (expected wsol or wsg)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) raise(ErrorCode::ConfigError, "train.batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) raise(ErrorCode::ConfigError, "train.lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) raise(ErrorCode::ConfigError, "train.momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) raise(ErrorCode::ConfigError, "train.weight_decay must be >= 0");
  if (epochs < 0) raise(ErrorCode::ConfigError, "train.epochs must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) raise(ErrorCode::ConfigError, "train.flip_prob must be in [0,1]");
  if (crop < 16 || resize < crop) raise(ErrorCode::ConfigError, "train.crop must satisfy 16 <= crop <= resize");
  if (wsg_input < 16) raise(ErrorCode::ConfigError, "train.wsg_input must be >= 16");
  if (name.empty() || name.find('/') != std::string::npos)
    raise(ErrorCode::ConfigError, "train.name must be a non-empty single path component");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"task", to_string(task)},   {"batch_size", batch_size}, {"lr", lr},
          {"momentum", momentum},      {"weight_decay", weight_decay}, {"epochs", epochs},
          {"flip_prob", flip_prob},    {"resize", resize},         {"crop", crop},
          {"wsg_input", wsg_input},    {"seed", seed},             {"name", name},
          {"runs_dir", runs_dir},      {"class_phrase", class_phrase}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.task = parse_train_task(j.at("task").get<std::string>());
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.flip_prob = j.at("flip_prob").get<double>();
  c.resize = j.at("resize").get<int>();
  c.crop = j.at("crop").get<int>();
  c.wsg_input = j.at("wsg_input").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.name = j.at("name").get<std::string>();
  c.runs_dir = j.at("runs_dir").get<std::string>();
  c.class_phrase = j.at("class_phrase").get<std::string>();
  return c;
}

// ---------------------------------------------------------------------------

AugmentPlan sample_augment(const TrainConfig& cfg, std::mt19937_64& rng) {
  AugmentPlan plan;
  if (cfg.task == TrainTask::Wsol) {
    const int slack = cfg.resize - cfg.crop;
    plan.crop_x = std::uniform_int_distribution<int>(0, slack)(rng);
    plan.crop_y = std::uniform_int_distribution<int>(0, slack)(rng);
  }
  plan.flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_prob;
  return plan;
}

namespace {

template <class T>
T augment_any(const T& in, const AugmentPlan& plan, const TrainConfig& cfg) {
  const int base = cfg.base_resolution();
  if (in.height() != base || in.width() != base)
    raise(ErrorCode::DimensionMismatch, "augment expects a " + std::to_string(base) + "x" + std::to_string(base) +
                                            " input");
  T out = cfg.task == TrainTask::Wsol ? crop(in, BoundingBox{plan.crop_x, plan.crop_y, cfg.crop, cfg.crop}) : in;
  return plan.flip ? hflip(out) : out;
}

}  // namespace

ImageTensor apply_augment(const ImageTensor& image, const AugmentPlan& plan, const TrainConfig& cfg) {
  return augment_any(image, plan, cfg);
}

RelevancyMap apply_augment(const RelevancyMap& map, const AugmentPlan& plan, const TrainConfig& cfg) {
  return augment_any(map, plan, cfg);
}

ImageTensor augment(const ImageTensor& image, const TrainConfig& cfg, std::mt19937_64& rng) {
  const int base = cfg.base_resolution();
  const ImageTensor resized = resize(image, base, base);
  return apply_augment(resized, sample_augment(cfg, rng), cfg);
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string cache_key(const VisionLanguageBackend& backend, const ImageTensor& image, const Phrase& text) {
  std::uint64_t h = fnv1a(image.data().data(), image.data().size() * sizeof(double));
  h = fnv1a(text.text().data(), text.text().size(), h);
  const std::string id = backend.identity();
  h = fnv1a(id.data(), id.size(), h);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx_%dx%d", static_cast<unsigned long long>(h), image.height(), image.width());
  return buf;
}

}  // namespace

RelevancyCache::RelevancyCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

RelevancyCache RelevancyCache::from_environment() {
  const char* env = std::getenv("WWBL_CACHE_DIR");
  return RelevancyCache(env && *env ? std::filesystem::path(env) / "relevancy" : std::filesystem::path());
}

RelevancyMap RelevancyCache::get(const VisionLanguageBackend& backend, const ImageTensor& image, const Phrase& text) {
  const std::string key = cache_key(backend, image, text);
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) {
      ++hits_;
      return it->second;
    }
  }
  const std::filesystem::path file = dir_.empty() ? std::filesystem::path() : dir_ / (key + ".rel");
  if (!file.empty() && std::filesystem::exists(file)) {
    try {
      const Archive a = read_archive(file);
      const auto& t = a.require("relevancy", image.pixel_count());
      RelevancyMap map(image.height(), image.width(), std::vector<double>(t.data.begin(), t.data.end()));
      std::lock_guard lock(mutex_);
      ++hits_;
      memory_.emplace(key, map);
      return map;
    } catch (const Error&) {
      // Unreadable entry: recompute and overwrite below.
    }
  }

  RelevancyMap map = resize(backend.relevancy(image, text), image.height(), image.width());
  if (!file.empty()) {
    Archive a;
    a.meta["kind"] = "relevancy";
    a.meta["phrase"] = text.text();
    a.tensors.push_back({"relevancy", {map.height(), map.width()},
                         std::vector<float>(map.values().begin(), map.values().end())});
    std::filesystem::create_directories(dir_);
    write_archive(file, a);
    // Store what a later reader would see so that hits and misses agree exactly.
    const auto& stored = a.tensors.front().data;
    map.values().assign(stored.begin(), stored.end());
  }
  std::lock_guard lock(mutex_);
  ++misses_;
  memory_.emplace(key, map);
  return map;
}

// ---------------------------------------------------------------------------

void SgdMomentum::step(std::span<nn::Parameter* const> params) const {
  const auto lr = static_cast<float>(lr_);
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = mu * p->velocity[i] + (p->grad[i] + wd * p->value[i]);
      p->value[i] -= lr * p->velocity[i];
    }
  }
}

StepResult train_step(std::span<const TrainSample> batch, GroundingNet& net, const LossWeights& weights,
                      const VisionLanguageBackend& backend, const SgdMomentum& optimizer) {
  if (batch.empty()) raise(ErrorCode::InvalidArgument, "empty training batch");
  const int n = static_cast<int>(batch.size());
  std::vector<ImageTensor> images;
  std::vector<TextEmbedding> texts;
  images.reserve(batch.size());
  texts.reserve(batch.size());
  for (const auto& s : batch) {
    images.push_back(s.image);
    texts.push_back(backend.encode_text(s.text));
  }
  const nn::Tensor x = GroundingNet::to_tensor(images);

  net.zero_grad();
  const nn::Tensor y = net.forward_batch(x, texts, true);
  nn::Tensor grad(y.n, y.c, y.h, y.w);
  const std::size_t plane = y.plane();

  StepResult result;
  std::vector<double> g;
  for (int i = 0; i < n; ++i) {
    SaliencyMask mask(y.h, y.w, std::vector<double>(y.sample(i), y.sample(i) + plane));
    const LossBreakdown l =
        loss_total(batch[i].image, mask, texts[i], batch[i].relevancy, weights, backend, &g);
    if (!std::isfinite(l.total)) {
      std::ostringstream msg;
      msg << "non-finite loss on batch element " << i << " (\"" << batch[i].text.text() << "\"): fore=" << l.fore
          << " back=" << l.back << " rmap=" << l.rmap << " reg=" << l.reg;
      raise(ErrorCode::NonFiniteLoss, msg.str());
    }
    result.mean.fore += l.fore / n;
    result.mean.back += l.back / n;
    result.mean.rmap += l.rmap / n;
    result.mean.reg += l.reg / n;
    result.mean.total += l.total / n;
    float* gi = grad.sample(i);
    for (std::size_t p = 0; p < plane; ++p) gi[p] = static_cast<float>(g[p] / n);
  }

  net.backward_batch(grad);
  const auto params = net.parameters();
  for (const auto* p : params)
    for (float v : p->grad)
      if (!std::isfinite(v)) raise(ErrorCode::NonFiniteLoss, "non-finite gradient in " + p->name);
  optimizer.step(params);
  return result;
}

// ---------------------------------------------------------------------------

Archive make_checkpoint(const GroundingNet& net, const TrainConfig& cfg, const LossWeights& weights,
                        const EpochStats& stats) {
  Archive a = net.to_archive();
  a.meta["train"] = cfg.to_json();
  a.meta["loss_weights"] = {weights.lambda1, weights.lambda2, weights.lambda3, weights.lambda4};
  a.meta["epoch"] = stats.epoch;
  a.meta["stats"] = {{"steps", stats.steps},
                     {"total", stats.mean.total},
                     {"fore", stats.mean.fore},
                     {"back", stats.mean.back},
                     {"rmap", stats.mean.rmap},
                     {"reg", stats.mean.reg}};
  return a;
}

GroundingNet load_checkpoint(const std::filesystem::path& path) {
  return GroundingNet::from_archive(read_archive(path));
}

namespace {

std::vector<Phrase> training_phrases(const TrainingExample& ex, const TrainConfig& cfg) {
  if (cfg.task == TrainTask::Wsol && !cfg.class_phrase.empty()) return {Phrase(cfg.class_phrase)};
  if (ex.captions.empty()) raise(ErrorCode::DataError, "training example '" + ex.id + "' has no caption");
  return ex.captions;
}

}  // namespace

FitResult fit(std::span<const TrainingExample> dataset, const TrainConfig& cfg, const LossWeights& weights,
              GroundingNet& net, const VisionLanguageBackend& backend, RelevancyCache& cache,
              const EpochCallback& on_epoch) {
  cfg.validate();
  weights.validate();
  const NetVariant want = cfg.task == TrainTask::Wsol ? NetVariant::Wsol : NetVariant::Multimodal;
  if (net.config().variant != want)
    raise(ErrorCode::ConfigError, std::string("train.task '") + to_string(cfg.task) + "' needs a '" +
                                      to_string(want) + "' network, got '" + to_string(net.config().variant) + "'");
  if (!net.initialized()) raise(ErrorCode::UninitializedWeights, "network must be initialised before training");
  if (dataset.empty()) raise(ErrorCode::DataError, "training set is empty");

  const int base = cfg.base_resolution();
  std::vector<ImageTensor> bases;
  std::vector<std::vector<Phrase>> phrases;
  bases.reserve(dataset.size());
  for (const auto& ex : dataset) {
    bases.push_back(resize(ex.image, base, base));
    phrases.push_back(training_phrases(ex, cfg));
  }

  std::filesystem::path run_dir;
  if (!cfg.runs_dir.empty()) {
    run_dir = std::filesystem::path(cfg.runs_dir) / cfg.name;
    std::filesystem::create_directories(run_dir);
    std::ofstream(run_dir / "train_log.jsonl", std::ios::trunc);
  }

  std::mt19937_64 rng(cfg.seed);
  const SgdMomentum optimizer(cfg.lr, cfg.momentum, cfg.weight_decay);
  FitResult result;
  std::vector<std::size_t> order(dataset.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    EpochStats stats;
    stats.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainSample> batch;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        const auto& options = phrases[idx];
        const Phrase& text =
            options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
        const AugmentPlan plan = sample_augment(cfg, rng);
        const RelevancyMap h = cache.get(backend, bases[idx], text);
        batch.push_back({apply_augment(bases[idx], plan, cfg), text, apply_augment(h, plan, cfg)});
      }
      const StepResult step = train_step(batch, net, weights, backend, optimizer);
      const double share = static_cast<double>(batch.size());
      stats.mean.fore += step.mean.fore * share;
      stats.mean.back += step.mean.back * share;
      stats.mean.rmap += step.mean.rmap * share;
      stats.mean.reg += step.mean.reg * share;
      stats.mean.total += step.mean.total * share;
      seen += batch.size();
      ++stats.steps;
    }
    const double inv = 1.0 / static_cast<double>(seen);
    stats.mean.fore *= inv;
    stats.mean.back *= inv;
    stats.mean.rmap *= inv;
    stats.mean.reg *= inv;
    stats.mean.total *= inv;

    result.total_steps += stats.steps;
    result.final_loss = stats.mean.total;
    result.epochs.push_back(stats);

    if (!run_dir.empty()) {
      const auto ckpt = run_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      write_archive(ckpt, make_checkpoint(net, cfg, weights, stats));
      result.checkpoints.push_back(ckpt);
      std::ofstream log(run_dir / "train_log.jsonl", std::ios::app);
      log << nlohmann::json{{"epoch", epoch},           {"steps", stats.steps},
                            {"total", stats.mean.total}, {"fore", stats.mean.fore},
                            {"back", stats.mean.back},   {"rmap", stats.mean.rmap},
                            {"reg", stats.mean.reg}}
                 .dump()
          << '\n';
    }
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

}  // namespace wwbl

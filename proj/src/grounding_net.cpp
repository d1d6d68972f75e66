// SPDX-License-Identifier: Apache-2.0
#include "wwbl/grounding_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace wwbl {

const char* to_string(NetVariant variant) noexcept {
  return variant == NetVariant::Wsol ? "wsol" : "multimodal";
}

NetVariant parse_net_variant(const std::string& text) {
  if (text == "wsol") return NetVariant::Wsol;
  if (text == "multimodal") return NetVariant::Multimodal;
  raise(ErrorCode::ConfigError, "unknown net variant '" + text + "'");
}

void NetConfig::validate() const {
  if (decoder_blocks < 1) raise(ErrorCode::ConfigError, "net.decoder_blocks must be >= 1");
  if (feature_dim < 1) raise(ErrorCode::ConfigError, "net.feature_dim must be positive");
  if (input_size < 16) raise(ErrorCode::ConfigError, "net.input_size must be >= 16");
  if (width < 2) raise(ErrorCode::ConfigError, "net.width must be >= 2");
  if (encoder != "small-cnn") raise(ErrorCode::ConfigError, "unknown net.encoder '" + encoder + "'");
}

nlohmann::json NetConfig::to_json() const {
  return {{"variant", to_string(variant)}, {"encoder", encoder},       {"feature_dim", feature_dim},
          {"input_size", input_size},      {"decoder_blocks", decoder_blocks}, {"width", width}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.variant = parse_net_variant(j.at("variant").get<std::string>());
  c.encoder = j.at("encoder").get<std::string>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.input_size = j.at("input_size").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.width = j.at("width").get<int>();
  return c;
}

namespace {

constexpr double kConditionEps = 1e-6;

template <class Feat, class Text, class Out>
void condition_kernel(const Feat* features, int channels, std::size_t plane, const Text* text, Out* out,
                      Out* norms) {
  for (std::size_t p = 0; p < plane; ++p) {
    double n2 = 0.0;
    double fz = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double f = features[static_cast<std::size_t>(c) * plane + p];
      n2 += f * f;
      fz += f * static_cast<double>(text[c]);
    }
    const double n = std::sqrt(n2 + kConditionEps * kConditionEps);
    out[p] = static_cast<Out>(std::clamp(fz / n, -1.0, 1.0));
    if (norms) norms[p] = static_cast<Out>(n);
  }
}

}  // namespace

SimilarityMap condition(const FeatureMap& features, const TextEmbedding& text) {
  if (static_cast<std::size_t>(features.channels) != text.dim())
    raise(ErrorCode::DimensionMismatch, "feature channels (" + std::to_string(features.channels) +
                                            ") differ from embedding dimension (" +
                                            std::to_string(text.dim()) + ")");
  const std::size_t plane = static_cast<std::size_t>(features.height) * features.width;
  if (features.values.size() != plane * features.channels)
    raise(ErrorCode::DimensionMismatch, "feature map value count does not match its shape");
  SimilarityMap out{features.height, features.width, std::vector<double>(plane)};
  condition_kernel<double, double, double>(features.values.data(), features.channels, plane,
                                           text.values.data(), out.values.data(), nullptr);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct EncoderStage {
  nn::Conv2d conv;
  nn::BatchNorm2d bn;

  struct Tape {
    nn::Tensor input;
    nn::BatchNorm2d::Cache bn;
    nn::Tensor activation;
    std::vector<std::uint32_t> argmax;
  };

  EncoderStage(const std::string& name, int in, int out)
      : conv(name + ".conv", in, out, 3, false), bn(name + ".bn", out) {}

  /// Returns the pre-pool activation (skip features); `pooled` receives the pooled map.
  nn::Tensor forward(const nn::Tensor& x, nn::Tensor& pooled, Tape* tape) {
    nn::Tensor c = conv.forward(x);
    nn::Tensor b = tape ? bn.forward_train(c, tape->bn) : bn.forward_eval(c);
    nn::Tensor a = nn::relu(std::move(b));
    pooled = nn::maxpool2(a, tape ? &tape->argmax : nullptr);
    if (tape) {
      tape->input = x;
      tape->activation = a;
    }
    return a;
  }

  /// `grad_act` already includes any skip-connection gradient.
  nn::Tensor backward(Tape& tape, const nn::Tensor& grad_pooled, nn::Tensor grad_act) {
    nn::add_inplace(grad_act, nn::maxpool2_backward(tape.argmax, tape.activation.h, tape.activation.w,
                                                    grad_pooled));
    nn::Tensor g = nn::relu_backward(tape.activation, std::move(grad_act));
    g = bn.backward(tape.bn, g);
    return conv.backward(tape.input, g);
  }

  void collect(std::vector<nn::Parameter*>& p) {
    conv.collect(p);
    bn.collect(p);
  }
  void collect(std::vector<nn::Buffer*>& b) { bn.collect(b); }
};

struct DecoderBlock {
  nn::Conv2d conv1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn;
  bool last = false;
  int skip_channels = 0;

  struct Tape {
    int in_h = 0, in_w = 0;
    nn::Tensor cat;
    nn::Tensor hidden;
    nn::BatchNorm2d::Cache bn;
    nn::Tensor out;
  };

  DecoderBlock(const std::string& name, int in, int skip, int mid, int out, bool is_last)
      : conv1(name + ".conv1", in + skip, mid, 3, true),
        conv2(name + ".conv2", mid, out, 3, false),
        bn(name + ".bn", out),
        last(is_last),
        skip_channels(skip) {}

  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor* skip, int out_h, int out_w, Tape* tape) {
    nn::Tensor up = nn::resample(x, out_h, out_w);
    nn::Tensor cat = skip ? nn::concat_channels(up, *skip) : std::move(up);
    nn::Tensor hidden = nn::relu(conv1.forward(cat));
    nn::Tensor c2 = conv2.forward(hidden);
    nn::Tensor b = tape ? bn.forward_train(c2, tape->bn) : bn.forward_eval(c2);
    nn::Tensor out = last ? nn::sigmoid(std::move(b)) : nn::relu(std::move(b));
    if (tape) {
      tape->in_h = x.h;
      tape->in_w = x.w;
      tape->cat = std::move(cat);
      tape->hidden = std::move(hidden);
      tape->out = out;
    }
    return out;
  }

  nn::Tensor backward(Tape& tape, nn::Tensor grad, nn::Tensor* grad_skip) {
    grad = last ? nn::sigmoid_backward(tape.out, std::move(grad)) : nn::relu_backward(tape.out, std::move(grad));
    grad = bn.backward(tape.bn, grad);
    grad = conv2.backward(tape.hidden, grad);
    grad = nn::relu_backward(tape.hidden, std::move(grad));
    grad = conv1.backward(tape.cat, grad);
    if (skip_channels > 0) {
      nn::Tensor g_up;
      nn::split_channels(grad, grad.c - skip_channels, g_up, *grad_skip);
      grad = std::move(g_up);
    }
    return nn::resample_backward(grad, tape.in_h, tape.in_w);
  }

  void collect(std::vector<nn::Parameter*>& p) {
    conv1.collect(p);
    conv2.collect(p);
    bn.collect(p);
  }
  void collect(std::vector<nn::Buffer*>& b) { bn.collect(b); }
};

constexpr int kMultimodalDepth = 4;  // four halvings: stride 16

}  // namespace

struct GroundingNet::Impl {
  NetConfig config;
  std::vector<EncoderStage> stages;
  nn::Conv2d projection;  // multimodal only: last stage -> feature_dim
  std::vector<DecoderBlock> decoder;

  struct Tape {
    int in_h = 0, in_w = 0;
    std::vector<EncoderStage::Tape> stages;
    std::vector<nn::Tensor> skips;
    nn::Tensor proj_input;
    nn::Tensor features;       // Z_I
    nn::Tensor similarity;     // Z_s
    nn::Tensor norms;
    std::vector<float> texts;  // N x D
    std::vector<DecoderBlock::Tape> blocks;
    int small_h = 0, small_w = 0;
  } tape;

  explicit Impl(const NetConfig& cfg) : config(cfg) {
    const int w = cfg.width;
    auto enc_channels = [&](int k) { return w * std::min(1 << k, 4); };
    if (cfg.variant == NetVariant::Multimodal) {
      int in = 3;
      for (int k = 0; k < kMultimodalDepth; ++k) {
        stages.emplace_back("enc" + std::to_string(k), in, enc_channels(k));
        in = enc_channels(k);
      }
      projection = nn::Conv2d("proj", in, cfg.feature_dim, 1, true);
      int prev = cfg.feature_dim;
      for (int j = 0; j < cfg.decoder_blocks; ++j) {
        const int mid = std::max(4, (2 * w) >> j);
        const bool is_last = j + 1 == cfg.decoder_blocks;
        decoder.emplace_back("dec" + std::to_string(j), prev, 0, mid, is_last ? 1 : mid, is_last);
        prev = mid;
      }
    } else {
      const int depth = cfg.decoder_blocks;
      int in = 3;
      for (int k = 0; k < depth; ++k) {
        stages.emplace_back("enc" + std::to_string(k), in, enc_channels(k));
        in = enc_channels(k);
      }
      int prev = in;
      for (int j = 0; j < depth; ++j) {
        const int skip = enc_channels(depth - 1 - j);
        const int mid = std::max(4, skip);
        const bool is_last = j + 1 == depth;
        decoder.emplace_back("dec" + std::to_string(j), prev, skip, mid, is_last ? 1 : mid, is_last);
        prev = mid;
      }
    }
  }

  void collect(std::vector<nn::Parameter*>& p) {
    for (auto& s : stages) s.collect(p);
    if (config.variant == NetVariant::Multimodal) projection.collect(p);
    for (auto& d : decoder) d.collect(p);
  }
  void collect(std::vector<nn::Buffer*>& b) {
    for (auto& s : stages) s.collect(b);
    for (auto& d : decoder) d.collect(b);
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& s : stages) s.conv.init(rng);
    if (config.variant == NetVariant::Multimodal) projection.init(rng);
    for (auto& d : decoder) {
      d.conv1.init(rng);
      d.conv2.init(rng);
    }
  }

  nn::Tensor encode(const nn::Tensor& x, Tape* t) {
    nn::Tensor cur = x;
    if (t) {
      t->stages.assign(stages.size(), {});
      t->skips.clear();
    }
    for (std::size_t k = 0; k < stages.size(); ++k) {
      nn::Tensor pooled;
      nn::Tensor act = stages[k].forward(cur, pooled, t ? &t->stages[k] : nullptr);
      if (t) t->skips.push_back(std::move(act));
      cur = std::move(pooled);
    }
    if (config.variant == NetVariant::Multimodal) {
      if (t) t->proj_input = cur;
      cur = projection.forward(cur);
    }
    return cur;
  }

  nn::Tensor run(const nn::Tensor& x, std::span<const TextEmbedding> texts, Tape* t) {
    if (x.c != 3) raise(ErrorCode::DimensionMismatch, "network input must have 3 channels");
    if (t) {
      t->in_h = x.h;
      t->in_w = x.w;
      t->blocks.assign(decoder.size(), {});
    }

    if (config.variant == NetVariant::Wsol) {
      std::vector<nn::Tensor> skips;
      nn::Tensor cur = x;
      if (t) t->stages.assign(stages.size(), {});
      for (std::size_t k = 0; k < stages.size(); ++k) {
        nn::Tensor pooled;
        skips.push_back(stages[k].forward(cur, pooled, t ? &t->stages[k] : nullptr));
        cur = std::move(pooled);
      }
      for (std::size_t j = 0; j < decoder.size(); ++j) {
        const nn::Tensor& skip = skips[decoder.size() - 1 - j];
        cur = decoder[j].forward(cur, &skip, skip.h, skip.w, t ? &t->blocks[j] : nullptr);
      }
      return nn::resample(cur, x.h, x.w);
    }

    if (texts.size() != static_cast<std::size_t>(x.n))
      raise(ErrorCode::DimensionMismatch, "multimodal forward needs one text embedding per image");
    const int dim = config.feature_dim;
    for (const auto& z : texts)
      if (z.dim() != static_cast<std::size_t>(dim))
        raise(ErrorCode::DimensionMismatch, "text embedding dimension (" + std::to_string(z.dim()) +
                                                ") differs from net.feature_dim (" + std::to_string(dim) + ")");

    nn::Tensor feats = encode(x, t);
    const std::size_t plane = feats.plane();
    nn::Tensor sim(x.n, 1, feats.h, feats.w);
    nn::Tensor norms(x.n, 1, feats.h, feats.w);
    std::vector<float> zt(static_cast<std::size_t>(x.n) * dim);
    for (int i = 0; i < x.n; ++i) {
      for (int k = 0; k < dim; ++k) zt[static_cast<std::size_t>(i) * dim + k] = static_cast<float>(texts[i].values[k]);
      condition_kernel<float, float, float>(feats.sample(i), dim, plane, zt.data() + static_cast<std::size_t>(i) * dim,
                                            sim.sample(i), norms.sample(i));
    }
    nn::Tensor weighted = feats;
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < dim; ++c) {
        float* p = weighted.sample(i) + c * plane;
        const float* s = sim.sample(i);
        for (std::size_t k = 0; k < plane; ++k) p[k] *= s[k];
      }
    if (t) {
      t->features = std::move(feats);
      t->similarity = sim;
      t->norms = std::move(norms);
      t->texts = std::move(zt);
    }

    nn::Tensor cur = std::move(weighted);
    for (std::size_t j = 0; j < decoder.size(); ++j)
      cur = decoder[j].forward(cur, nullptr, cur.h * 2, cur.w * 2, t ? &t->blocks[j] : nullptr);
    if (t) {
      t->small_h = cur.h;
      t->small_w = cur.w;
    }
    return nn::resample(cur, x.h, x.w);
  }

  void backward(const nn::Tensor& grad_mask) {
    Tape& t = tape;
    if (t.blocks.empty()) raise(ErrorCode::InvalidArgument, "backward called without a training forward pass");

    if (config.variant == NetVariant::Wsol) {
      nn::Tensor g = nn::resample_backward(grad_mask, t.in_h, t.in_w);
      const std::size_t depth = stages.size();
      std::vector<nn::Tensor> grad_skips(depth);
      for (std::size_t j = decoder.size(); j-- > 0;) {
        nn::Tensor gs;
        g = decoder[j].backward(t.blocks[j], std::move(g), &gs);
        grad_skips[depth - 1 - j] = std::move(gs);
      }
      for (std::size_t k = depth; k-- > 0;) g = stages[k].backward(t.stages[k], g, std::move(grad_skips[k]));
      return;
    }

    nn::Tensor g = nn::resample_backward(grad_mask, t.small_h, t.small_w);
    for (std::size_t j = decoder.size(); j-- > 0;) g = decoder[j].backward(t.blocks[j], std::move(g), nullptr);

    // g is d(loss)/d(Z_I * Z_s).
    const nn::Tensor& f = t.features;
    const int dim = config.feature_dim;
    const std::size_t plane = f.plane();
    nn::Tensor gf(f.n, f.c, f.h, f.w);
    for (int i = 0; i < f.n; ++i) {
      const float* s = t.similarity.sample(i);
      const float* nrm = t.norms.sample(i);
      const float* z = t.texts.data() + static_cast<std::size_t>(i) * dim;
      std::vector<double> g_sim(plane, 0.0);
      for (int c = 0; c < dim; ++c) {
        const float* gp = g.sample(i) + c * plane;
        const float* fp = f.sample(i) + c * plane;
        for (std::size_t k = 0; k < plane; ++k) g_sim[k] += static_cast<double>(gp[k]) * fp[k];
      }
      for (int c = 0; c < dim; ++c) {
        const float* gp = g.sample(i) + c * plane;
        const float* fp = f.sample(i) + c * plane;
        float* out = gf.sample(i) + c * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double n = nrm[k];
          const double ds = z[c] / n - s[k] * fp[k] / (n * n);
          out[k] = static_cast<float>(gp[k] * s[k] + g_sim[k] * ds);
        }
      }
    }

    nn::Tensor gp = projection.backward(t.proj_input, gf);
    for (std::size_t k = stages.size(); k-- > 0;) {
      const nn::Tensor& act = t.stages[k].activation;
      gp = stages[k].backward(t.stages[k], gp, nn::Tensor(act.n, act.c, act.h, act.w));
    }
  }
};

GroundingNet::GroundingNet(NetConfig config) : config_(std::move(config)) {
  config_.validate();
  impl_ = std::make_unique<Impl>(config_);
}

GroundingNet::GroundingNet(NetConfig config, std::uint64_t seed) : GroundingNet(std::move(config)) {
  init(seed);
}

GroundingNet::~GroundingNet() = default;
GroundingNet::GroundingNet(GroundingNet&&) noexcept = default;
GroundingNet& GroundingNet::operator=(GroundingNet&&) noexcept = default;

void GroundingNet::init(std::uint64_t seed) {
  impl_->init(seed);
  initialized_ = true;
}

nn::Tensor GroundingNet::to_tensor(std::span<const ImageTensor> images) {
  if (images.empty()) raise(ErrorCode::InvalidArgument, "empty image batch");
  const int h = images[0].height();
  const int w = images[0].width();
  nn::Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w)
      raise(ErrorCode::DimensionMismatch, "all images in a batch must share one shape");
    const auto& src = images[i].data();
    std::transform(src.begin(), src.end(), t.sample(static_cast<int>(i)),
                   [](double v) { return static_cast<float>(v); });
  }
  return t;
}

SaliencyMask GroundingNet::forward(const ImageTensor& image, const TextEmbedding* text) const {
  if (!initialized_) raise(ErrorCode::UninitializedWeights, "grounding network has no weights");
  if (image.empty()) raise(ErrorCode::InvalidArgument, "empty image");
  if (config_.variant == NetVariant::Multimodal && !text)
    raise(ErrorCode::InvalidArgument, "multimodal network requires a text embedding");
  const nn::Tensor x = to_tensor(std::span<const ImageTensor>(&image, 1));
  std::span<const TextEmbedding> texts;
  if (config_.variant == NetVariant::Multimodal) texts = std::span<const TextEmbedding>(text, 1);
  const nn::Tensor y = impl_->run(x, texts, nullptr);

  SaliencyMask mask(image.height(), image.width());
  constexpr double kFloor = 1e-7;
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.values()[i] = std::clamp(static_cast<double>(y.data[i]), kFloor, 1.0 - kFloor);
  return mask;
}

FeatureMap GroundingNet::encode(const ImageTensor& image) const {
  if (!initialized_) raise(ErrorCode::UninitializedWeights, "grounding network has no weights");
  if (config_.variant != NetVariant::Multimodal)
    raise(ErrorCode::InvalidArgument, "encode() is defined for the multimodal variant");
  const nn::Tensor f = impl_->encode(to_tensor(std::span<const ImageTensor>(&image, 1)), nullptr);
  return FeatureMap{f.c, f.h, f.w, std::vector<double>(f.data.begin(), f.data.end())};
}

nn::Tensor GroundingNet::forward_batch(const nn::Tensor& images, std::span<const TextEmbedding> texts,
                                       bool training) {
  if (!initialized_) raise(ErrorCode::UninitializedWeights, "grounding network has no weights");
  return impl_->run(images, texts, training ? &impl_->tape : nullptr);
}

void GroundingNet::backward_batch(const nn::Tensor& grad_masks) { impl_->backward(grad_masks); }

std::vector<nn::Parameter*> GroundingNet::parameters() {
  std::vector<nn::Parameter*> p;
  impl_->collect(p);
  return p;
}

std::vector<nn::Buffer*> GroundingNet::buffers() {
  std::vector<nn::Buffer*> b;
  impl_->collect(b);
  return b;
}

void GroundingNet::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Archive GroundingNet::to_archive() const {
  if (!initialized_) raise(ErrorCode::UninitializedWeights, "cannot save an uninitialised network");
  Archive a;
  a.meta["kind"] = "grounding-net";
  a.meta["net"] = config_.to_json();
  std::vector<nn::Parameter*> params;
  std::vector<nn::Buffer*> bufs;
  impl_->collect(params);
  impl_->collect(bufs);
  for (auto* p : params) a.tensors.push_back({p->name, p->shape, p->value});
  for (auto* b : bufs) a.tensors.push_back({b->name, {static_cast<int>(b->value.size())}, b->value});
  return a;
}

void GroundingNet::load(const Archive& archive) {
  NetConfig stored;
  try {
    stored = NetConfig::from_json(archive.meta.at("net"));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::CheckpointError, std::string("checkpoint has no usable net config: ") + e.what());
  }
  if (!(stored == config_))
    raise(ErrorCode::CheckpointError, "checkpoint net config " + stored.to_json().dump() +
                                          " does not match " + config_.to_json().dump());
  for (auto* p : parameters()) p->value = archive.require(p->name, p->value.size()).data;
  for (auto* b : buffers()) b->value = archive.require(b->name, b->value.size()).data;
  initialized_ = true;
}

GroundingNet GroundingNet::from_archive(const Archive& archive) {
  NetConfig cfg;
  try {
    cfg = NetConfig::from_json(archive.meta.at("net"));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::CheckpointError, std::string("checkpoint has no usable net config: ") + e.what());
  } catch (const Error& e) {
    raise(ErrorCode::CheckpointError, e.what());
  }
  GroundingNet net(cfg);
  net.load(archive);
  return net;
}

}  // namespace wwbl

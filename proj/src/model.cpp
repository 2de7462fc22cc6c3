#include "ynet/model.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>

#include "ynet/checkpoint.hpp"

namespace ynet {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::YNet:
      return "ynet";
    case Variant::UNetScratch:
      return "unet_scratch";
    case Variant::UNetPretrainedEncoder:
      return "unet_pretrained_encoder";
  }
  return "?";
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder1:
      return "encoder1";
    case ParamGroup::Encoder2:
      return "encoder2";
    case ParamGroup::Decoder:
      return "decoder";
    case ParamGroup::Buffer:
      return "buffer";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "ynet") return Variant::YNet;
  if (s == "unet_scratch") return Variant::UNetScratch;
  if (s == "unet_pretrained_encoder") return Variant::UNetPretrainedEncoder;
  throw std::invalid_argument("unknown model variant '" + std::string(s) + "'");
}

ParamGroup parse_group(std::string_view s) {
  if (s == "encoder1") return ParamGroup::Encoder1;
  if (s == "encoder2") return ParamGroup::Encoder2;
  if (s == "decoder") return ParamGroup::Decoder;
  if (s == "buffer") return ParamGroup::Buffer;
  throw std::invalid_argument("unknown parameter group '" + std::string(s) + "'");
}

namespace {

std::size_t scaled(std::size_t base, double scale) {
  const auto w = static_cast<std::size_t>(std::lround(static_cast<double>(base) * scale));
  return w == 0 ? 1 : w;
}

std::string conv_name(std::size_t block, std::size_t index) {
  return "conv" + std::to_string(block + 1) + "_" + std::to_string(index + 1);
}

ConvRef add_conv(ParameterStore& store, const std::string& name, ParamGroup group, std::size_t out,
                 std::size_t in, std::size_t k, std::mt19937_64& rng) {
  ConvRef ref;
  ref.weight = store.add(name + ".weight", group, xavier_normal({out, in, k, k}, rng));
  ref.bias = store.add(name + ".bias", group, Tensor::zeros({out}));
  return ref;
}

template <typename T>
Var apply_conv(ForwardPass<T>& pass, const ConvRef& ref, Var x) {
  return conv2d(pass.tape, x, pass.params[ref.weight], pass.params[ref.bias]);
}

}  // namespace

void ModelConfig::validate() const {
  if (input_size == 0 || input_size % 32 != 0) {
    throw std::invalid_argument("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if (in_channels != 3) throw std::invalid_argument("in_channels must be 3");
  if (!(width_scale > 0.0 && width_scale <= 1.0)) {
    throw std::invalid_argument("width_scale must lie in (0, 1], got " + std::to_string(width_scale));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    total += block_convs[i];
    if (block_convs[i] != kSkipConvIndex[i]) {
      throw std::invalid_argument("block_convs must be [2,2,4,4,4] (VGG19 conv stack)");
    }
  }
  if (total != 16) throw std::invalid_argument("encoder must have 16 convolutions");
  if (decoder_convs_per_block == 0) throw std::invalid_argument("decoder_convs_per_block must be positive");
}

std::array<std::size_t, 5> ModelConfig::encoder_widths() const {
  std::array<std::size_t, 5> w{};
  for (std::size_t i = 0; i < 5; ++i) w[i] = scaled(kEncoderBaseWidths[i], width_scale);
  return w;
}

std::array<std::size_t, 5> ModelConfig::decoder_widths() const {
  std::array<std::size_t, 5> w{};
  for (std::size_t i = 0; i < 5; ++i) w[i] = scaled(kDecoderBaseWidths[i], width_scale);
  return w;
}

std::size_t ParameterStore::add(std::string name, ParamGroup group, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.group = group;
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

Parameter& ParameterStore::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return params_[*i];
}

const Parameter& ParameterStore::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return params_[*i];
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable()) n += p.value.size();
  }
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.grad = Tensor{};
}

Tensor xavier_normal(const Shape& kernel_shape, std::mt19937_64& rng) {
  if (kernel_shape.size() != 4) throw ShapeError("xavier_normal expects a conv kernel shape");
  const double receptive = static_cast<double>(kernel_shape[2] * kernel_shape[3]);
  const double fan_in = static_cast<double>(kernel_shape[1]) * receptive;
  const double fan_out = static_cast<double>(kernel_shape[0]) * receptive;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (fan_in + fan_out)));
  Tensor w(kernel_shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(dist(rng));
  return w;
}

template <typename T>
ForwardPass<T> bind_parameters(BasicTape<T>& tape, const ParameterStore& store, bool requires_grad,
                               BatchNormMode mode) {
  ForwardPass<T> pass{tape, {}, mode};
  pass.params.reserve(store.size());
  for (const auto& p : store) {
    if (p.trainable()) {
      pass.params.push_back(tape.leaf(p.value.template cast<T>(), requires_grad));
    } else {
      pass.params.push_back(Var{});
    }
  }
  return pass;
}

void collect_gradients(const Tape& tape, const ForwardPass<float>& pass, ParameterStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].trainable()) continue;
    store[i].grad = tape.grad(pass.params[i]);
  }
}

EncoderLayout build_encoder(const ModelConfig& config, ParameterStore& store, const std::string& prefix,
                            ParamGroup group, Activation activation, std::mt19937_64& rng) {
  config.validate();
  EncoderLayout layout;
  layout.prefix = prefix;
  layout.group = group;
  layout.activation = activation;
  const auto widths = config.encoder_widths();
  std::size_t in = config.in_channels;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t j = 0; j < config.block_convs[b]; ++j) {
      layout.blocks[b].push_back(add_conv(store, prefix + "." + conv_name(b, j), group, widths[b], in, 3, rng));
      in = widths[b];
    }
  }
  return layout;
}

template <typename T>
EncoderFeatures encode(ForwardPass<T>& pass, const EncoderLayout& layout, Var input) {
  EncoderFeatures features;
  Var x = input;
  for (std::size_t b = 0; b < 5; ++b) {
    for (const auto& conv : layout.blocks[b]) {
      x = apply_conv(pass, conv, x);
      x = layout.activation == Activation::Relu ? relu(pass.tape, x) : selu(pass.tape, x);
    }
    if (layout.blocks[b].size() != kSkipConvIndex[b]) {
      throw std::logic_error("encoder block " + std::to_string(b + 1) + " does not end at its skip conv");
    }
    features.skips[b] = x;
    x = maxpool2d(pass.tape, x);
  }
  features.bottleneck = x;
  return features;
}

template <typename T>
EncoderFeatures sum_skips(BasicTape<T>& tape, const EncoderFeatures& a, const EncoderFeatures& b) {
  EncoderFeatures fused;
  for (std::size_t i = 0; i < 5; ++i) fused.skips[i] = add(tape, a.skips[i], b.skips[i]);
  fused.bottleneck = add(tape, a.bottleneck, b.bottleneck);
  return fused;
}

DecoderLayout build_decoder(const ModelConfig& config, ParameterStore& store, std::mt19937_64& rng) {
  config.validate();
  DecoderLayout layout;
  const auto enc = config.encoder_widths();
  const auto dec = config.decoder_widths();
  std::size_t prev = enc[4];
  for (std::size_t b = 0; b < 5; ++b) {
    std::size_t in = prev + enc[4 - b];
    const std::string block = "decoder.up" + std::to_string(b + 1);
    for (std::size_t j = 0; j < config.decoder_convs_per_block; ++j) {
      const std::string idx = std::to_string(j + 1);
      layout.convs[b].push_back(add_conv(store, block + ".conv" + idx, ParamGroup::Decoder, dec[b], in, 3, rng));
      BatchNormRef bn;
      bn.gamma = store.add(block + ".bn" + idx + ".gamma", ParamGroup::Decoder, Tensor::full({dec[b]}, 1.0f));
      bn.beta = store.add(block + ".bn" + idx + ".beta", ParamGroup::Decoder, Tensor::zeros({dec[b]}));
      bn.running_mean =
          store.add(block + ".bn" + idx + ".running_mean", ParamGroup::Buffer, Tensor::zeros({dec[b]}));
      bn.running_var =
          store.add(block + ".bn" + idx + ".running_var", ParamGroup::Buffer, Tensor::full({dec[b]}, 1.0f));
      layout.norms[b].push_back(bn);
      in = dec[b];
    }
    prev = dec[b];
  }
  layout.head = add_conv(store, "decoder.head", ParamGroup::Decoder, 1, prev, 1, rng);
  return layout;
}

template <typename T>
Var decode(ForwardPass<T>& pass, const ParameterStore& store, const DecoderLayout& layout,
           const EncoderFeatures& fused, PendingStats* pending) {
  Var x = fused.bottleneck;
  for (std::size_t b = 0; b < 5; ++b) {
    x = upsample2d(pass.tape, x);
    x = concat(pass.tape, x, fused.skips[4 - b]);
    for (std::size_t j = 0; j < layout.convs[b].size(); ++j) {
      x = apply_conv(pass, layout.convs[b][j], x);
      x = selu(pass.tape, x);
      const auto& bn = layout.norms[b][j];
      BatchStats<T> stats;
      x = batchnorm(pass.tape, x, pass.params[bn.gamma], pass.params[bn.beta], pass.mode,
                    store[bn.running_mean].value, store[bn.running_var].value, &stats);
      if (pending && pass.mode == BatchNormMode::Train) {
        pending->updates.emplace_back(bn, BatchStats<double>{stats.mean.template cast<double>(),
                                                             stats.var.template cast<double>()});
      }
    }
  }
  x = apply_conv(pass, layout.head, x);
  return sigmoid(pass.tape, x);
}

SegmentationModel::SegmentationModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  switch (config_.variant) {
    case Variant::YNet:
      encoders_.push_back(build_encoder(config_, store_, "encoder1", ParamGroup::Encoder1, Activation::Relu, rng));
      encoders_.push_back(build_encoder(config_, store_, "encoder2", ParamGroup::Encoder2, Activation::Selu, rng));
      break;
    case Variant::UNetPretrainedEncoder:
      encoders_.push_back(build_encoder(config_, store_, "encoder", ParamGroup::Encoder1, Activation::Relu, rng));
      break;
    case Variant::UNetScratch:
      // Not a transfer target, so it trains at the full rate of the scratch group.
      encoders_.push_back(build_encoder(config_, store_, "encoder", ParamGroup::Encoder2, Activation::Relu, rng));
      break;
  }
  decoder_ = build_decoder(config_, store_, rng);
}

std::string SegmentationModel::pretrained_slot() const { return encoders_.front().prefix; }

template <typename T>
Var SegmentationModel::forward(ForwardPass<T>& pass, Var input, bool update_running_stats) {
  const auto& shape = pass.tape.value(input).shape();
  const std::size_t s = config_.input_size;
  if (shape.size() != 4 || shape[1] != config_.in_channels || shape[2] != s || shape[3] != s) {
    throw ShapeError("model input must be [N,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                     to_string(shape));
  }
  if (pass.mode == BatchNormMode::Infer && !norms_trained_ && !warned_untrained_norms_) {
    spdlog::warn("batch-norm layers used in inference mode before any training step; running stats are at init");
    warned_untrained_norms_ = true;
  }
  EncoderFeatures fused = encode(pass, encoders_[0], input);
  if (encoders_.size() == 2) {
    EncoderFeatures second = encode(pass, encoders_[1], input);
    fused = sum_skips(pass.tape, fused, second);
  }
  PendingStats pending;
  Var out = decode(pass, store_, decoder_, fused, update_running_stats ? &pending : nullptr);
  if (pass.mode == BatchNormMode::Train && update_running_stats) apply_stats(pending);
  return out;
}

void SegmentationModel::apply_stats(const PendingStats& pending) {
  for (const auto& [ref, stats] : pending.updates) {
    auto& rm = store_[ref.running_mean].value;
    auto& rv = store_[ref.running_var].value;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>(kBatchNormMomentum * rm[c] + (1.0 - kBatchNormMomentum) * stats.mean[c]);
      rv[c] = static_cast<float>(kBatchNormMomentum * rv[c] + (1.0 - kBatchNormMomentum) * stats.var[c]);
    }
  }
  if (!pending.updates.empty()) norms_trained_ = true;
}

Tensor SegmentationModel::predict(const Tensor& input) {
  Tape tape;
  auto pass = bind_parameters(tape, store_, false, BatchNormMode::Infer);
  const Var x = tape.constant(input);
  return tape.value(forward(pass, x, false));
}

EncoderClassifier::EncoderClassifier(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  encoder_ = build_encoder(config_, store_, "encoder", ParamGroup::Encoder1, Activation::Relu, rng);
  const std::size_t c = config_.encoder_widths()[4];
  // Pooled features of a deep Xavier-initialized ReLU stack are orders of
  // magnitude below one; normalizing them lets the head see their pattern.
  head_norm_.gamma = store_.add("classifier.bn.gamma", ParamGroup::Decoder, Tensor::full({c}, 1.0f));
  head_norm_.beta = store_.add("classifier.bn.beta", ParamGroup::Decoder, Tensor::zeros({c}));
  head_norm_.running_mean = store_.add("classifier.bn.running_mean", ParamGroup::Buffer, Tensor::zeros({c}));
  head_norm_.running_var = store_.add("classifier.bn.running_var", ParamGroup::Buffer, Tensor::full({c}, 1.0f));
  head_ = add_conv(store_, "classifier", ParamGroup::Decoder, 1, c, 1, rng);
}

template <typename T>
Var EncoderClassifier::forward(ForwardPass<T>& pass, Var input) {
  const EncoderFeatures f = encode(pass, encoder_, input);
  Var pooled = global_avg_pool(pass.tape, f.bottleneck);
  BatchStats<T> stats;
  auto& rm = store_[head_norm_.running_mean].value;
  auto& rv = store_[head_norm_.running_var].value;
  pooled = batchnorm(pass.tape, pooled, pass.params[head_norm_.gamma], pass.params[head_norm_.beta], pass.mode, rm, rv,
                     &stats);
  if (pass.mode == BatchNormMode::Train) {
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>(kBatchNormMomentum * rm[c] + (1.0 - kBatchNormMomentum) * static_cast<double>(stats.mean[c]));
      rv[c] = static_cast<float>(kBatchNormMomentum * rv[c] + (1.0 - kBatchNormMomentum) * static_cast<double>(stats.var[c]));
    }
  }
  return sigmoid(pass.tape, apply_conv(pass, head_, pooled));
}

Tensor EncoderClassifier::predict(const Tensor& input) {
  Tape tape;
  auto pass = bind_parameters(tape, store_, false, BatchNormMode::Infer);
  return tape.value(forward(pass, tape.constant(input)));
}

void EncoderClassifier::calibrate_head(const std::vector<Tensor>& batches) {
  auto& rm = store_[head_norm_.running_mean].value;
  auto& rv = store_[head_norm_.running_var].value;
  const std::size_t c = rm.size();
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t n = 0;
  for (const auto& batch : batches) {
    Tape tape;
    auto pass = bind_parameters(tape, store_, false, BatchNormMode::Infer);
    const EncoderFeatures f = encode(pass, encoder_, tape.constant(batch));
    const Tensor& pooled = tape.value(global_avg_pool(tape, f.bottleneck));
    const std::size_t rows = pooled.size() / c;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double v = pooled[i * c + k];
        sum[k] += v;
        sq[k] += v * v;
      }
    n += rows;
  }
  if (n == 0) return;
  for (std::size_t k = 0; k < c; ++k) {
    const double mean = sum[k] / static_cast<double>(n);
    rm[k] = static_cast<float>(mean);
    rv[k] = static_cast<float>(std::max(0.0, sq[k] / static_cast<double>(n) - mean * mean));
  }
}

SegmentationModel build_ynet(const ModelConfig& config, std::uint64_t seed, const std::vector<NamedTensor>* pretrained) {
  if (config.variant != Variant::YNet) throw std::invalid_argument("build_ynet: config variant must be ynet");
  SegmentationModel model(config, seed);
  if (pretrained) {
    transfer_encoder(*pretrained, model);
  } else {
    spdlog::warn("no pretrained checkpoint given: encoder one keeps its Xavier initialization");
  }
  return model;
}

SegmentationModel build_unet_baseline(const ModelConfig& config, std::uint64_t seed,
                                      const std::vector<NamedTensor>* pretrained) {
  if (config.variant == Variant::YNet) {
    throw std::invalid_argument("build_unet_baseline: variant must be unet_scratch or unet_pretrained_encoder");
  }
  SegmentationModel model(config, seed);
  if (config.variant == Variant::UNetPretrainedEncoder) {
    if (pretrained) {
      transfer_encoder(*pretrained, model);
    } else {
      spdlog::warn("no pretrained checkpoint given: the U-Net encoder keeps its Xavier initialization");
    }
  } else if (pretrained) {
    spdlog::warn("unet_scratch ignores the pretrained checkpoint");
  }
  return model;
}

template ForwardPass<float> bind_parameters<float>(Tape&, const ParameterStore&, bool, BatchNormMode);
template ForwardPass<double> bind_parameters<double>(TapeD&, const ParameterStore&, bool, BatchNormMode);
template EncoderFeatures encode<float>(ForwardPass<float>&, const EncoderLayout&, Var);
template EncoderFeatures encode<double>(ForwardPass<double>&, const EncoderLayout&, Var);
template EncoderFeatures sum_skips<float>(Tape&, const EncoderFeatures&, const EncoderFeatures&);
template EncoderFeatures sum_skips<double>(TapeD&, const EncoderFeatures&, const EncoderFeatures&);
template Var decode<float>(ForwardPass<float>&, const ParameterStore&, const DecoderLayout&, const EncoderFeatures&,
                           PendingStats*);
template Var decode<double>(ForwardPass<double>&, const ParameterStore&, const DecoderLayout&,
                            const EncoderFeatures&, PendingStats*);
template Var SegmentationModel::forward<float>(ForwardPass<float>&, Var, bool);
template Var SegmentationModel::forward<double>(ForwardPass<double>&, Var, bool);
template Var EncoderClassifier::forward<float>(ForwardPass<float>&, Var);
template Var EncoderClassifier::forward<double>(ForwardPass<double>&, Var);

}  // namespace ynet

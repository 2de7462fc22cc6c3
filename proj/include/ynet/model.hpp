#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ynet/ops.hpp"
#include "ynet/tape.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

enum class Variant { YNet, UNetScratch, UNetPretrainedEncoder };
enum class Activation { Relu, Selu };
/// Optimizer groups. Buffer marks non-trainable state (batch-norm running stats).
enum class ParamGroup { Encoder1, Encoder2, Decoder, Buffer };

std::string_view to_string(Variant v);
std::string_view to_string(ParamGroup g);
Variant parse_variant(std::string_view s);
ParamGroup parse_group(std::string_view s);

/// VGG19 conv widths per block before scaling.
inline constexpr std::array<std::size_t, 5> kEncoderBaseWidths{64, 128, 256, 512, 512};
inline constexpr std::array<std::size_t, 5> kDecoderBaseWidths{512, 256, 128, 64, 32};
/// Index (1-based) of the conv within each encoder depth whose response is
/// summed across encoders and skipped to the decoder.
inline constexpr std::array<std::size_t, 5> kSkipConvIndex{2, 2, 4, 4, 4};

struct ModelConfig {
  std::size_t input_size = 224;
  std::size_t in_channels = 3;
  double width_scale = 1.0;
  std::array<std::size_t, 5> block_convs{2, 2, 4, 4, 4};
  std::size_t decoder_convs_per_block = 3;
  Variant variant = Variant::YNet;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  std::array<std::size_t, 5> encoder_widths() const;
  std::array<std::size_t, 5> decoder_widths() const;
};

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::Decoder;
  Tensor value;
  Tensor grad;

  bool trainable() const { return group != ParamGroup::Buffer; }
};

/// Ordered parameter list; order is construction order and is the
/// checkpoint entry order.
class ParameterStore {
 public:
  std::size_t add(std::string name, ParamGroup group, Tensor value);
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Number of trainable scalars.
  std::size_t trainable_count() const;
  void zero_grads();

 private:
  std::vector<Parameter> params_;
};

struct ConvRef {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct BatchNormRef {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::size_t running_mean = 0;
  std::size_t running_var = 0;
};

struct EncoderLayout {
  std::string prefix;
  ParamGroup group = ParamGroup::Encoder1;
  Activation activation = Activation::Relu;
  std::array<std::vector<ConvRef>, 5> blocks;
};

struct DecoderLayout {
  std::array<std::vector<ConvRef>, 5> convs;
  std::array<std::vector<BatchNormRef>, 5> norms;
  ConvRef head;
};

/// Per-depth activations of one encoder: block-final conv responses (pre-pool)
/// and the post-pool5 bottleneck.
struct EncoderFeatures {
  std::array<Var, 5> skips;
  Var bottleneck;
};

/// Tape-side view of a ParameterStore for one forward pass.
template <typename T>
struct ForwardPass {
  BasicTape<T>& tape;
  std::vector<Var> params;  // indexed like the store; buffers are not on the tape
  BatchNormMode mode = BatchNormMode::Infer;
};

/// Puts every trainable parameter on the tape as a leaf.
template <typename T>
ForwardPass<T> bind_parameters(BasicTape<T>& tape, const ParameterStore& store, bool requires_grad,
                               BatchNormMode mode);

/// Copies tape gradients of every trainable parameter into Parameter::grad.
void collect_gradients(const Tape& tape, const ForwardPass<float>& pass, ParameterStore& store);

/// Adds one VGG19-topology conv stack to `store`.
EncoderLayout build_encoder(const ModelConfig& config, ParameterStore& store, const std::string& prefix,
                            ParamGroup group, Activation activation, std::mt19937_64& rng);

template <typename T>
EncoderFeatures encode(ForwardPass<T>& pass, const EncoderLayout& layout, Var input);

/// Per-depth elementwise sum of two encoders' features (bottleneck included).
template <typename T>
EncoderFeatures sum_skips(BasicTape<T>& tape, const EncoderFeatures& a, const EncoderFeatures& b);

DecoderLayout build_decoder(const ModelConfig& config, ParameterStore& store, std::mt19937_64& rng);

/// Running-stat updates requested by a train-mode decoder pass.
struct PendingStats {
  std::vector<std::pair<BatchNormRef, BatchStats<double>>> updates;
};

template <typename T>
Var decode(ForwardPass<T>& pass, const ParameterStore& store, const DecoderLayout& layout,
           const EncoderFeatures& fused, PendingStats* pending);

/// Xavier-normal sample: N(0, 2 / (fan_in + fan_out)), fans counted over the
/// receptive field as for a conv kernel [F,C,k,k].
Tensor xavier_normal(const Shape& kernel_shape, std::mt19937_64& rng);

/// Encoder/decoder segmentation network (Y-Net or a single-encoder U-Net).
class SegmentationModel {
 public:
  /// Xavier-initialized model of the configured variant.
  explicit SegmentationModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const std::vector<EncoderLayout>& encoders() const { return encoders_; }
  const DecoderLayout& decoder() const { return decoder_; }

  /// Encoder parameter-name prefix holding the transfer target ("encoder1"
  /// for Y-Net, "encoder" for the U-Net baselines).
  std::string pretrained_slot() const;

  /// input [N,3,S,S] -> probabilities [N,1,S,S]. In train mode the batch
  /// statistics are folded into the running averages when
  /// `update_running_stats` is set.
  template <typename T>
  Var forward(ForwardPass<T>& pass, Var input, bool update_running_stats = true);

  /// Inference-mode forward without gradient tracking.
  Tensor predict(const Tensor& input);

  bool has_trained_norms() const { return norms_trained_; }

 private:
  void apply_stats(const PendingStats& pending);

  ModelConfig config_;
  ParameterStore store_;
  std::vector<EncoderLayout> encoders_;
  DecoderLayout decoder_;
  bool norms_trained_ = false;
  bool warned_untrained_norms_ = false;
};

/// Encoder backbone plus a global-pool, batch-norm, linear head; used for proxy
/// pretraining of the transferable encoder.
class EncoderClassifier {
 public:
  EncoderClassifier(ModelConfig config, std::uint64_t seed = 0);

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const EncoderLayout& encoder() const { return encoder_; }
  const ModelConfig& config() const { return config_; }

  /// input [N,3,S,S] -> probabilities [N,1,1,1].
  template <typename T>
  Var forward(ForwardPass<T>& pass, Var input);

  Tensor predict(const Tensor& input);

  /// Sets the head's running statistics to the population statistics of the
  /// pooled features over `batches` ([N,3,S,S] each).
  void calibrate_head(const std::vector<Tensor>& batches);

 private:
  ModelConfig config_;
  ParameterStore store_;
  EncoderLayout encoder_;
  BatchNormRef head_norm_;
  ConvRef head_;
};

/// Y-Net: both encoders see the same input; their per-depth responses are
/// summed before the decoder. With `pretrained` set, encoder one is loaded
/// from it; without, encoder one stays Xavier-initialized and a warning is
/// logged.
SegmentationModel build_ynet(const ModelConfig& config, std::uint64_t seed,
                             const std::vector<NamedTensor>* pretrained = nullptr);

/// Single-encoder baselines (variant unet_scratch or unet_pretrained_encoder).
SegmentationModel build_unet_baseline(const ModelConfig& config, std::uint64_t seed,
                                      const std::vector<NamedTensor>* pretrained = nullptr);

}  // namespace ynet

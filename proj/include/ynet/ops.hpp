#pragma once

#include "ynet/tape.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

// Self-normalizing activation constants (Klambauer et al.).
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

enum class BatchNormMode { Train, Infer };

template <typename T>
struct BatchStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;  // population (biased) variance
};

/// Same-padded stride-1 convolution. input [N,C,H,W], kernel [F,C,k,k] with
/// k in {1,3}, bias [F] -> [N,F,H,W].
template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, Var bias);

/// 2x2 window, stride 2. Gradient goes to the first maximum in row-major order.
template <typename T>
Var maxpool2d(BasicTape<T>& tape, Var input);

/// Nearest-neighbour x2.
template <typename T>
Var upsample2d(BasicTape<T>& tape, Var input);

template <typename T>
Var selu(BasicTape<T>& tape, Var input);

template <typename T>
Var relu(BasicTape<T>& tape, Var input);

/// Output clamped to the open interval (0,1) at the type's resolution.
template <typename T>
Var sigmoid(BasicTape<T>& tape, Var input);

/// Per-channel normalization over N,H,W. Train mode normalizes with batch
/// statistics and, if `stats` is non-null, reports them for the running
/// average; Infer mode normalizes with the supplied running statistics.
template <typename T>
Var batchnorm(BasicTape<T>& tape, Var input, Var gamma, Var beta, BatchNormMode mode, const Tensor& running_mean,
              const Tensor& running_var, BatchStats<T>* stats = nullptr);

/// Channel concatenation, order (a, b).
template <typename T>
Var concat(BasicTape<T>& tape, Var a, Var b);

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b);

/// [N,C,H,W] -> [N,C,1,1]
template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var input);

/// sum_i input_i * weights_i, as a [1] tensor. Used to scalarize outputs.
template <typename T>
Var weighted_sum(BasicTape<T>& tape, Var input, const BasicTensor<T>& weights);

/// Mean binary cross-entropy of probabilities against {0,1} labels, with
/// probabilities clipped to [clamp, 1-clamp].
template <typename T>
Var binary_cross_entropy(BasicTape<T>& tape, Var probs, const BasicTensor<T>& labels, double clamp);

/// Channel slice [begin, end) of an NCHW tensor (no tape).
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t end);

}  // namespace ynet

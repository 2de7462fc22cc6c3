#pragma once

#include <span>

#include "ynet/tape.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

struct LossConfig {
  double lambda = 2.0;   // false-negative weight of the cross-entropy term
  double epsilon = 1.0;  // dice smoothing
  double clamp = 1e-7;   // probabilities are clipped to [clamp, 1 - clamp] inside the log

  void validate() const;
};

struct LossTerms {
  double cross_entropy = 0.0;  // -(1/N) sum (lambda/2) g log p
  double dice_term = 0.0;      // 1 - dice
  double total() const { return cross_entropy + dice_term; }
};

/// Evaluates both loss terms in double precision. Rejects non-finite or
/// mismatched inputs with std::invalid_argument.
LossTerms composite_loss_terms(std::span<const float> p, std::span<const float> g, const LossConfig& cfg);

/// (2 sum(g p) + eps) / (sum p + sum g + eps)
double dice_coefficient(std::span<const float> p, std::span<const float> g, double epsilon);

/// Tape op: scalar weighted cross-entropy + dice loss over all elements of
/// `probs` (every pixel of every sample in the batch).
template <typename T>
Var composite_loss(BasicTape<T>& tape, Var probs, const BasicTensor<T>& truth, const LossConfig& cfg);

}  // namespace ynet

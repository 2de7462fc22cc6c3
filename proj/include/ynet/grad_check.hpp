#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ynet/tape.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

/// A scalar-valued function of tensors, available on both a 32-bit tape
/// (analytic route) and a 64-bit tape (finite-difference route).
struct DifferentiableFn {
  std::function<Var(Tape&, std::span<const Var>)> f32;
  std::function<Var(TapeD&, std::span<const Var>)> f64;
};

/// Wraps a generic lambda `(auto& tape, std::span<const Var>) -> Var`.
template <typename F>
DifferentiableFn make_differentiable(F f) {
  return DifferentiableFn{
      [f](Tape& t, std::span<const Var> in) { return f(t, in); },
      [f](TapeD& t, std::span<const Var> in) { return f(t, in); },
  };
}

/// Deterministic weights in [-1, 1] used to reduce a tensor output to a scalar.
template <typename T>
BasicTensor<T> probe_weights(const Shape& shape, std::uint64_t seed);

/// weighted_sum(out, probe_weights(out.shape, seed)).
template <typename T>
Var scalarize(BasicTape<T>& tape, Var out, std::uint64_t seed);

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Lower bound of the relative-error denominator.
  double floor = 1e-8;
  /// 0 checks every entry; otherwise a seeded random subset per input.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
  /// Inputs excluded from the check (still fed to the function).
  std::vector<bool> frozen;
  /// Run the reverse pass on the 64-bit tape instead of the 32-bit one.
  bool analytic_f64 = false;
};

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string location;  // worst entry, or the first non-finite one
  std::size_t checked = 0;
};

/// Central finite differences against the reverse-mode gradient. Error per
/// entry is |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult grad_check(const DifferentiableFn& fn, std::span<const Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace ynet

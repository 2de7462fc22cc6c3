#include "ynet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ynet/ops.hpp"

namespace ynet {

template <typename T>
BasicTensor<T> probe_weights(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  BasicTensor<T> w(shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(static_cast<float>(dist(rng)));
  return w;
}

template <typename T>
Var scalarize(BasicTape<T>& tape, Var out, std::uint64_t seed) {
  return weighted_sum(tape, out, probe_weights<T>(tape.value(out).shape(), seed));
}

template BasicTensor<float> probe_weights<float>(const Shape&, std::uint64_t);
template BasicTensor<double> probe_weights<double>(const Shape&, std::uint64_t);
template Var scalarize<float>(Tape&, Var, std::uint64_t);
template Var scalarize<double>(TapeD&, Var, std::uint64_t);

namespace {

double evaluate(const DifferentiableFn& fn, const std::vector<TensorD>& inputs) {
  TapeD tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  const Var out = fn.f64(tape, vars);
  const auto& v = tape.value(out);
  if (v.size() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
  return v[0];
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult grad_check(const DifferentiableFn& fn, std::span<const Tensor> inputs,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  result.passed = true;

  std::vector<TensorD> base;
  base.reserve(inputs.size());
  for (const auto& x : inputs) base.push_back(x.cast<double>());

  auto is_frozen = [&](std::size_t i) { return i < options.frozen.size() && options.frozen[i]; };
  std::vector<TensorD> analytic_grads(inputs.size());
  if (options.analytic_f64) {
    TapeD tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(base[i], !is_frozen(i)));
    tape.backward(fn.f64(tape, vars));
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (!is_frozen(i)) analytic_grads[i] = tape.grad(vars[i]);
  } else {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], !is_frozen(i)));
    tape.backward(fn.f32(tape, vars));
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (!is_frozen(i)) analytic_grads[i] = tape.grad(vars[i]).cast<double>();
  }

  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (is_frozen(i)) continue;
    const TensorD& analytic = analytic_grads[i];
    for (std::size_t e : pick_entries(inputs[i].size(), options.max_entries_per_input, rng)) {
      auto perturbed = base;
      perturbed[i][e] = base[i][e] + h;
      const double fp = evaluate(fn, perturbed);
      perturbed[i][e] = base[i][e] - h;
      const double fm = evaluate(fn, perturbed);
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[e];
      std::ostringstream where;
      where << "input " << i << " entry " << e << " (analytic " << a << ", numeric " << numeric << ")";
      ++result.checked;
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        result.passed = false;
        result.max_rel_error = std::numeric_limits<double>::infinity();
        result.location = "non-finite gradient at " + where.str();
        return result;
      }
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.location = where.str();
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace ynet

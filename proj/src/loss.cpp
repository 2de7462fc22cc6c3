#include "ynet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ynet {

void LossConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("loss lambda must be > 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("loss epsilon must be > 0");
  if (!(clamp > 0.0 && clamp < 0.5)) throw std::invalid_argument("loss clamp must lie in (0, 0.5)");
}

namespace {

template <typename P, typename G>
void check_inputs(std::span<const P> p, std::span<const G> g) {
  if (p.size() != g.size()) {
    throw std::invalid_argument("loss: prediction has " + std::to_string(p.size()) + " elements, truth has " +
                                std::to_string(g.size()));
  }
  if (p.empty()) throw std::invalid_argument("loss: empty input");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i])) || !std::isfinite(static_cast<double>(g[i]))) {
      throw std::invalid_argument("loss: non-finite value at element " + std::to_string(i));
    }
  }
}

struct Sums {
  double ce = 0.0;  // sum g log p (clamped)
  double gp = 0.0;
  double p = 0.0;
  double g = 0.0;
};

template <typename P, typename G>
Sums accumulate_sums(std::span<const P> p, std::span<const G> g, double clamp) {
  Sums s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], gi = g[i];
    if (gi != 0.0) s.ce += gi * std::log(std::clamp(pi, clamp, 1.0 - clamp));
    s.gp += gi * pi;
    s.p += pi;
    s.g += gi;
  }
  return s;
}

}  // namespace

LossTerms composite_loss_terms(std::span<const float> p, std::span<const float> g, const LossConfig& cfg) {
  cfg.validate();
  check_inputs(p, g);
  const Sums s = accumulate_sums(p, g, cfg.clamp);
  const double n = static_cast<double>(p.size());
  LossTerms t;
  t.cross_entropy = -(cfg.lambda / 2.0) * s.ce / n;
  t.dice_term = 1.0 - (2.0 * s.gp + cfg.epsilon) / (s.p + s.g + cfg.epsilon);
  return t;
}

double dice_coefficient(std::span<const float> p, std::span<const float> g, double epsilon) {
  if (p.size() != g.size()) throw std::invalid_argument("dice_coefficient: size mismatch");
  double gp = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    gp += static_cast<double>(g[i]) * p[i];
    sp += p[i];
    sg += g[i];
  }
  return (2.0 * gp + epsilon) / (sp + sg + epsilon);
}

template <typename T>
Var composite_loss(BasicTape<T>& tape, Var probs, const BasicTensor<T>& truth, const LossConfig& cfg) {
  cfg.validate();
  const auto& p = tape.value(probs);
  require_same_shape(p.shape(), truth.shape(), "composite_loss");
  check_inputs(p.data(), truth.data());
  const Sums s = accumulate_sums(p.data(), truth.data(), cfg.clamp);
  const double n = static_cast<double>(p.size());
  const double num = 2.0 * s.gp + cfg.epsilon;
  const double den = s.p + s.g + cfg.epsilon;
  const double loss = -(cfg.lambda / 2.0) * s.ce / n + 1.0 - num / den;

  const std::size_t pid = probs.id;
  return tape.record(BasicTensor<T>({1}, static_cast<T>(loss)), {pid},
                     [=](BasicTape<T>& t, std::size_t self) {
                       const double up = t.grad_ref(self)[0];
                       const auto& pv = t.value(pid);
                       auto& gp = t.grad_buffer(pid);
                       const double ce_scale = -(cfg.lambda / 2.0) / n;
                       const double lo = cfg.clamp, hi = 1.0 - cfg.clamp;
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const double pi = pv[i], gi = truth[i];
                         double d = -(2.0 * gi * den - num) / (den * den);
                         if (gi != 0.0 && pi >= lo && pi <= hi) d += ce_scale * gi / pi;
                         gp[i] += static_cast<T>(up * d);
                       }
                     });
}

template Var composite_loss<float>(Tape&, Var, const Tensor&, const LossConfig&);
template Var composite_loss<double>(TapeD&, Var, const TensorD&, const LossConfig&);

}  // namespace ynet

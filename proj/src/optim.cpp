#include "ynet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ynet/checkpoint.hpp"

namespace ynet {

void RmsPropConfig::validate() const {
  if (!(eta >= 0.0)) throw std::invalid_argument("rmsprop eta must be >= 0");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rmsprop rho must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("rmsprop eps must be > 0");
  for (const auto& [group, c] : c_map) {
    if (!(c > 0.0)) throw std::invalid_argument("rmsprop c for group " + std::string(to_string(group)) + " must be > 0");
  }
}

void rmsprop_update(std::span<float> theta, std::span<const float> grad, std::span<float> mean_square, double c,
                    const RmsPropConfig& cfg) {
  if (theta.size() != grad.size() || theta.size() != mean_square.size()) {
    throw std::invalid_argument("rmsprop_update: parameter, gradient and state sizes differ");
  }
  const float cf = static_cast<float>(c);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double e = cfg.rho * mean_square[i] + (1.0 - cfg.rho) * g * g;
    mean_square[i] = static_cast<float>(e);
    const auto base = static_cast<float>(cfg.eta * g / std::sqrt(static_cast<double>(mean_square[i]) + cfg.eps));
    theta[i] -= cf * base;
  }
}

RmsProp::RmsProp(RmsPropConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

double RmsProp::c_for(ParamGroup group) const {
  auto it = cfg_.c_map.find(group);
  if (it == cfg_.c_map.end()) {
    throw std::invalid_argument("rmsprop: parameter group " + std::string(to_string(group)) + " has no c entry");
  }
  return it->second;
}

void RmsProp::step(ParameterStore& store) {
  if (mean_square_.size() != store.size()) {
    mean_square_.clear();
    for (const auto& p : store) mean_square_.push_back(Tensor::zeros(p.value.shape()));
  }
  // Resolve every group first so an unmapped group rejects the whole step.
  for (const auto& p : store) {
    if (p.trainable()) c_for(p.group);
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable() || p.grad.empty()) continue;
    require_same_shape(p.grad.shape(), p.value.shape(), ("rmsprop gradient for " + p.name).c_str());
    rmsprop_update(p.value.data(), p.grad.data(), mean_square_[i].data(), c_for(p.group), cfg_);
  }
}

StopDecision EarlyStopping::check(double val_dice, const ParameterStore* store) {
  if (!(val_dice >= 0.0 && val_dice <= 1.0)) {
    throw std::invalid_argument("early_stop_check: validation dice must lie in [0,1], got " + std::to_string(val_dice));
  }
  ++epoch_;
  improved_ = !best_ || val_dice >= *best_ + cfg_.min_delta;
  if (improved_) {
    best_ = val_dice;
    best_epoch_ = epoch_;
    since_ = 0;
    if (store) snapshot_ = snapshot(*store);
    return StopDecision::Continue;
  }
  ++since_;
  return since_ > cfg_.patience ? StopDecision::Stop : StopDecision::Continue;
}

bool EarlyStopping::restore_best(ParameterStore& store) const {
  if (snapshot_.empty()) return false;
  restore(store, snapshot_);
  return true;
}

}  // namespace ynet

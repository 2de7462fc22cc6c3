#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ynet/model.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

struct RmsPropConfig {
  double eta = 1e-4;
  double rho = 0.9;
  double eps = 1e-8;
  /// Learning-rate multiplier per parameter group.
  std::map<ParamGroup, double> c_map{
      {ParamGroup::Encoder1, 0.01}, {ParamGroup::Encoder2, 1.0}, {ParamGroup::Decoder, 1.0}};

  void validate() const;
};

/// One RMSProp update of a single tensor:
///   E <- rho E + (1 - rho) g^2
///   theta <- theta - c * (eta g / sqrt(E + eps))
/// The c-free step is rounded to float first and then multiplied by c, so
/// the update for any c is exactly c times the c = 1 update (one rounding).
void rmsprop_update(std::span<float> theta, std::span<const float> grad, std::span<float> mean_square, double c,
                    const RmsPropConfig& cfg);

/// RMSProp over a ParameterStore with group-scaled rates. State is kept per
/// store index and sized on first use.
class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig cfg = {});

  /// Applies Parameter::grad to every trainable parameter. Throws if a
  /// parameter's group has no c entry or a gradient's shape is wrong.
  /// Parameters without a gradient are left untouched.
  void step(ParameterStore& store);

  const RmsPropConfig& config() const { return cfg_; }
  double c_for(ParamGroup group) const;
  double effective_lr(ParamGroup group) const { return c_for(group) * cfg_.eta; }
  const std::vector<Tensor>& mean_square() const { return mean_square_; }

 private:
  RmsPropConfig cfg_;
  std::vector<Tensor> mean_square_;
};

struct EarlyStopConfig {
  std::size_t patience = 10;
  double min_delta = 1e-4;
};

enum class StopDecision { Continue, Stop };

/// Tracks validation dice; keeps the weights of the best epoch.
class EarlyStopping {
 public:
  explicit EarlyStopping(EarlyStopConfig cfg = {}) : cfg_(cfg) {}

  /// An improvement of at least min_delta resets the counter and, when
  /// `store` is given, snapshots it. Stop once the counter exceeds patience.
  StopDecision check(double val_dice, const ParameterStore* store = nullptr);

  /// Copies the best snapshot back into `store`; false if none was taken.
  bool restore_best(ParameterStore& store) const;

  std::optional<double> best_dice() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }
  std::size_t epochs_seen() const { return epoch_; }
  bool improved_last() const { return improved_; }
  const std::vector<NamedTensor>& best_snapshot() const { return snapshot_; }
  const EarlyStopConfig& config() const { return cfg_; }

 private:
  EarlyStopConfig cfg_;
  std::optional<double> best_;
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
  std::size_t epoch_ = 0;
  bool improved_ = false;
  std::vector<NamedTensor> snapshot_;
};

}  // namespace ynet

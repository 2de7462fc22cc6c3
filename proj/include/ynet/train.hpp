#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ynet/data.hpp"
#include "ynet/loss.hpp"
#include "ynet/model.hpp"
#include "ynet/optim.hpp"

namespace ynet {

/// Non-finite loss during training. Carries what is needed to replay the
/// failing batch: the run seed, epoch and batch index.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::uint64_t seed, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), seed_(seed), epoch_(epoch), batch_(batch) {}
  std::uint64_t seed() const { return seed_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::uint64_t seed_;
  std::size_t epoch_;
  std::size_t batch_;
};

struct TrainConfig {
  std::size_t batch_size = 3;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  bool online_augment = true;
  LossConfig loss;
  RmsPropConfig optimizer;
  EarlyStopConfig early_stop;
  OnlineAugmentConfig augment;
};

struct StepResult {
  double loss = 0.0;
  double dice = 0.0;  // soft dice of the batch
};

/// Forward in train mode, composite loss, backward and one optimizer step.
StepResult train_step(SegmentationModel& model, RmsProp& optimizer, const Tensor& frames, const Tensor& masks,
                      const LossConfig& loss);

struct EpochStats {
  double mean_loss = 0.0;
  double mean_dice = 0.0;
  std::size_t batches = 0;
};

/// Generator for epoch `epoch` of a run seeded with `seed`; shuffling and
/// augmentation draws of one epoch come only from it.
std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch);

/// Indices 0..n-1 in a seeded Fisher-Yates order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

/// One pass over `samples` (already at the model's input size) in shuffled
/// batches. Throws NumericError on a non-finite loss.
EpochStats train_epoch(SegmentationModel& model, const std::vector<Sample>& samples, RmsProp& optimizer,
                       const TrainConfig& cfg, std::size_t epoch);

/// Inference-mode probabilities, one [S*S] tensor per sample.
std::vector<Tensor> predict_masks(SegmentationModel& model, const std::vector<Sample>& samples,
                                  std::size_t batch_size = 8);

/// Soft dice pooled over every pixel of every sample.
double pooled_dice(const std::vector<Tensor>& probs, const std::vector<Sample>& samples, double epsilon);

double evaluate_dice(SegmentationModel& model, const std::vector<Sample>& samples, double epsilon,
                     std::size_t batch_size = 8);

struct EpochRecord {
  std::size_t epoch = 0;
  EpochStats train;
  double val_dice = 0.0;
  bool stopped = false;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::vector<NamedTensor> best;  // best-validation weights (initial weights if no epoch ran)
  double best_val_dice = 0.0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

inline constexpr const char* kEpochCsvHeader = "epoch,train_loss,train_dice,val_dice,lr,stopped_flag";
std::string epoch_csv_row(const EpochRecord& r, double lr);

/// train_epoch + early stopping on validation dice. On a stop the model is
/// rolled back to the best epoch. `on_epoch` runs after every epoch.
FitResult fit(SegmentationModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Proxy pretraining of the transferable encoder: polyp present / absent.

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double eta = 1e-3;
  double clamp = 1e-7;
  bool flips = true;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // fraction of training samples classified correctly
};

std::vector<PretrainEpoch> pretrain_encoder(EncoderClassifier& classifier, const std::vector<Sample>& samples,
                                            const PretrainConfig& cfg,
                                            const std::function<void(const PretrainEpoch&)>& on_epoch = {});

/// Classification accuracy at probability 0.5.
double classifier_accuracy(EncoderClassifier& classifier, const std::vector<Sample>& samples,
                           std::size_t batch_size = 8);

}  // namespace ynet

#include "ynet/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>

#include "ynet/checkpoint.hpp"

namespace ynet {

namespace {

Tensor frames_of(const std::vector<const Sample*>& batch) {
  std::vector<Tensor> items;
  items.reserve(batch.size());
  for (const auto* s : batch) items.push_back(frame_to_tensor(s->frame));
  return stack(items);
}

Tensor masks_of(const std::vector<const Sample*>& batch) {
  std::vector<Tensor> items;
  items.reserve(batch.size());
  for (const auto* s : batch) items.push_back(mask_to_tensor(s->mask));
  return stack(items);
}

void require_model_size(const SegmentationModel& model, const std::vector<Sample>& samples) {
  const std::size_t S = model.config().input_size;
  for (const auto& s : samples) {
    if (s.frame.width != S || s.frame.height != S) {
      throw std::invalid_argument("sample '" + s.video_id + "' frame " + std::to_string(s.frame_index) + " is " +
                                  std::to_string(s.frame.width) + "x" + std::to_string(s.frame.height) +
                                  ", model expects " + std::to_string(S));
    }
  }
}

}  // namespace

StepResult train_step(SegmentationModel& model, RmsProp& optimizer, const Tensor& frames, const Tensor& masks,
                      const LossConfig& loss_cfg) {
  Tape tape;
  auto pass = bind_parameters(tape, model.params(), true, BatchNormMode::Train);
  const Var probs = model.forward(pass, tape.constant(frames), true);
  if (!tape.value(probs).all_finite()) throw std::domain_error("non-finite prediction");
  const Var loss = composite_loss(tape, probs, masks, loss_cfg);
  StepResult r;
  r.loss = tape.value(loss)[0];
  if (!std::isfinite(r.loss)) throw std::domain_error("non-finite loss");
  r.dice = dice_coefficient(tape.value(probs).data(), masks.data(), loss_cfg.epsilon);
  tape.backward(loss);
  collect_gradients(tape, pass, model.params());
  optimizer.step(model.params());
  return r;
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

EpochStats train_epoch(SegmentationModel& model, const std::vector<Sample>& samples, RmsProp& optimizer,
                       const TrainConfig& cfg, std::size_t epoch) {
  if (samples.empty()) throw std::invalid_argument("train_epoch: empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_epoch: batch size must be positive");
  require_model_size(model, samples);
  auto rng = epoch_rng(cfg.seed, epoch);
  const auto order = shuffled_indices(samples.size(), rng);

  EpochStats stats;
  std::vector<Sample> augmented;
  std::vector<const Sample*> batch;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    augmented.clear();
    batch.clear();
    for (std::size_t i = start; i < end; ++i) {
      const Sample& s = samples[order[i]];
      if (cfg.online_augment) {
        augmented.push_back(augment_online(s, rng, cfg.augment));
      } else {
        batch.push_back(&s);
      }
    }
    for (const auto& s : augmented) batch.push_back(&s);

    StepResult r;
    try {
      r = train_step(model, optimizer, frames_of(batch), masks_of(batch), cfg.loss);
    } catch (const std::domain_error& ex) {
      throw NumericError(std::string(ex.what()) + " in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(stats.batches) + " (seed " + std::to_string(cfg.seed) + ")",
                         cfg.seed, epoch, stats.batches);
    }
    stats.mean_loss += r.loss;
    stats.mean_dice += r.dice;
    ++stats.batches;
  }
  stats.mean_loss /= static_cast<double>(stats.batches);
  stats.mean_dice /= static_cast<double>(stats.batches);
  return stats;
}

std::vector<Tensor> predict_masks(SegmentationModel& model, const std::vector<Sample>& samples,
                                  std::size_t batch_size) {
  require_model_size(model, samples);
  const std::size_t S = model.config().input_size;
  std::vector<Tensor> out;
  out.reserve(samples.size());
  std::vector<const Sample*> batch;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) batch.push_back(&samples[i]);
    const Tensor probs = model.predict(frames_of(batch));
    for (std::size_t n = 0; n < batch.size(); ++n) {
      Tensor t({S * S});
      std::copy_n(probs.ptr() + n * S * S, S * S, t.ptr());
      out.push_back(std::move(t));
    }
  }
  return out;
}

double pooled_dice(const std::vector<Tensor>& probs, const std::vector<Sample>& samples, double epsilon) {
  if (probs.size() != samples.size()) throw std::invalid_argument("pooled_dice: prediction count mismatch");
  double gp = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& m = samples[i].mask.pixels;
    if (m.size() != probs[i].size()) throw std::invalid_argument("pooled_dice: prediction size mismatch");
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double p = probs[i][j], g = m[j] ? 1.0 : 0.0;
      gp += g * p;
      sp += p;
      sg += g;
    }
  }
  return (2.0 * gp + epsilon) / (sp + sg + epsilon);
}

double evaluate_dice(SegmentationModel& model, const std::vector<Sample>& samples, double epsilon,
                     std::size_t batch_size) {
  return pooled_dice(predict_masks(model, samples, batch_size), samples, epsilon);
}

std::string epoch_csv_row(const EpochRecord& r, double lr) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%g,%d", r.epoch, r.train.mean_loss, r.train.mean_dice, r.val_dice,
                lr, r.stopped ? 1 : 0);
  return buf;
}

FitResult fit(SegmentationModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  FitResult result;
  if (cfg.max_epochs == 0) {
    result.best = snapshot(model.params());
    return result;
  }
  if (val.empty()) throw std::invalid_argument("fit: empty validation set");
  RmsProp optimizer(cfg.optimizer);
  EarlyStopping stopper(cfg.early_stop);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = train_epoch(model, train, optimizer, cfg, epoch);
    rec.val_dice = evaluate_dice(model, val, cfg.loss.epsilon);
    rec.stopped = stopper.check(rec.val_dice, &model.params()) == StopDecision::Stop;
    spdlog::info("epoch {}: train loss {:.4f}, train dice {:.4f}, val dice {:.4f}{}", epoch, rec.train.mean_loss,
                 rec.train.mean_dice, rec.val_dice, rec.stopped ? " (early stop)" : "");
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.stopped) {
      stopper.restore_best(model.params());
      result.early_stopped = true;
      break;
    }
  }
  result.best = stopper.best_snapshot();
  result.best_val_dice = stopper.best_dice().value_or(0.0);
  result.best_epoch = stopper.best_epoch();
  return result;
}

// ---------------------------------------------------------------------------

std::vector<PretrainEpoch> pretrain_encoder(EncoderClassifier& classifier, const std::vector<Sample>& samples,
                                            const PretrainConfig& cfg,
                                            const std::function<void(const PretrainEpoch&)>& on_epoch) {
  std::vector<PretrainEpoch> history;
  if (cfg.epochs == 0) return history;
  if (samples.empty()) throw std::invalid_argument("pretrain_encoder: empty training set");
  RmsPropConfig opt_cfg;
  opt_cfg.eta = cfg.eta;
  opt_cfg.c_map = {{ParamGroup::Encoder1, 1.0}, {ParamGroup::Encoder2, 1.0}, {ParamGroup::Decoder, 1.0}};
  RmsProp optimizer(opt_cfg);
  OnlineAugmentConfig aug{.p_negative_crop = 0.0, .p_perspective = 0.0};
  if (!cfg.flips) aug.p_hflip = aug.p_vflip = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = epoch_rng(cfg.seed, epoch);
    const auto order = shuffled_indices(samples.size(), rng);
    PretrainEpoch rec;
    rec.epoch = epoch;
    std::size_t correct = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<Tensor> frames;
      std::vector<float> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const Sample s = augment_online(samples[order[i]], rng, aug);
        frames.push_back(frame_to_tensor(s.frame));
        labels.push_back(s.has_polyp() ? 1.0f : 0.0f);
      }
      const std::size_t n = labels.size();
      Tape tape;
      auto pass = bind_parameters(tape, classifier.params(), true, BatchNormMode::Train);
      const Var probs = classifier.forward(pass, tape.constant(stack(frames)));
      const Var loss = binary_cross_entropy(tape, probs, Tensor({n, 1, 1, 1}, labels), cfg.clamp);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite pretraining loss in epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batches) + " (seed " + std::to_string(cfg.seed) + ")",
                           cfg.seed, epoch, batches);
      }
      for (std::size_t i = 0; i < n; ++i) correct += ((tape.value(probs)[i] > 0.5f) == (labels[i] > 0.5f)) ? 1 : 0;
      tape.backward(loss);
      collect_gradients(tape, pass, classifier.params());
      optimizer.step(classifier.params());
      rec.mean_loss += value;
      ++batches;
    }
    rec.mean_loss /= static_cast<double>(batches);
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    spdlog::info("pretrain epoch {}: loss {:.4f}, accuracy {:.3f}", epoch, rec.mean_loss, rec.accuracy);
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  std::vector<Tensor> batches;
  for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
    std::vector<Tensor> frames;
    for (std::size_t i = start; i < std::min(samples.size(), start + cfg.batch_size); ++i)
      frames.push_back(frame_to_tensor(samples[i].frame));
    batches.push_back(stack(frames));
  }
  classifier.calibrate_head(batches);
  return history;
}

double classifier_accuracy(EncoderClassifier& classifier, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<Tensor> frames;
    std::vector<bool> labels;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      frames.push_back(frame_to_tensor(samples[i].frame));
      labels.push_back(samples[i].has_polyp());
    }
    const Tensor probs = classifier.predict(stack(frames));
    for (std::size_t i = 0; i < labels.size(); ++i) correct += ((probs[i] > 0.5f) == labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace ynet

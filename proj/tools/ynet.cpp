// Command-line entry point: synth | pretrain | train | eval | infer | score.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "ynet/checkpoint.hpp"
#include "ynet/config.hpp"
#include "ynet/data.hpp"
#include "ynet/eval.hpp"
#include "ynet/train.hpp"

namespace fs = std::filesystem;
using namespace ynet;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Flags shared by the model-facing commands. Unset flags leave the value
/// from the profile / config file in place.
struct RunFlags {
  std::string profile = "paper";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> input_size;
  std::optional<double> width_scale;
  std::optional<double> lambda, epsilon;
  std::optional<double> eta, rho;
  std::optional<double> c_encoder1, c_encoder2, c_decoder;
  std::optional<std::size_t> batch_size, max_epochs, patience;
  std::optional<std::string> data, out;

  void attach(CLI::App* cmd, bool training) {
    cmd->add_option("--profile", profile, "Default set: paper (size 224, width 1.0) or desk (size 64, width 0.125)")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    cmd->add_option("--config", config_path, "JSON config file; flags override it, it overrides the profile");
    cmd->add_option("--seed", seed, "Random seed (default 0)");
    cmd->add_option("--variant", variant, "ynet | unet_scratch | unet_pretrained_encoder (default ynet)")
        ->check(CLI::IsMember({"ynet", "unet_scratch", "unet_pretrained_encoder"}));
    cmd->add_option("--input-size", input_size, "Input side in pixels, multiple of 32 (paper 224, desk 64)");
    cmd->add_option("--width-scale", width_scale, "Channel-width multiplier (paper 1.0, desk 0.125)");
    cmd->add_option("--data", data, "Dataset root (default data)");
    if (!training) return;
    cmd->add_option("--batch-size", batch_size, "Batch size (paper 3, desk 3)");
    cmd->add_option("--eta", eta, "Base learning rate (paper 0.0001, desk 0.0001)");
    cmd->add_option("--rho", rho, "RMSProp decay (default 0.9)");
    cmd->add_option("--c-encoder1", c_encoder1, "Learning-rate multiplier of encoder one (default 0.01)");
    cmd->add_option("--c-encoder2", c_encoder2, "Learning-rate multiplier of encoder two (default 1)");
    cmd->add_option("--c-decoder", c_decoder, "Learning-rate multiplier of the decoder (default 1)");
    cmd->add_option("--lambda", lambda, "False-negative weight of the loss (default 2)");
    cmd->add_option("--epsilon", epsilon, "Dice smoothing of the loss (default 1)");
    cmd->add_option("--max-epochs", max_epochs, "Epoch budget (default 30)");
    cmd->add_option("--patience", patience, "Early-stopping patience in epochs (default 10)");
  }

  RunConfig resolve() const {
    RunConfig c = RunConfig::defaults(parse_profile(profile));
    if (!config_path.empty()) c = load_config(config_path, c);
    if (seed) c.seed = *seed;
    if (variant) c.variant = parse_variant(*variant);
    if (input_size) c.input_size = *input_size;
    if (width_scale) c.width_scale = *width_scale;
    if (lambda) c.loss.lambda = *lambda;
    if (epsilon) c.loss.epsilon = *epsilon;
    if (eta) c.optimizer.eta = *eta;
    if (rho) c.optimizer.rho = *rho;
    if (c_encoder1) c.optimizer.c_map[ParamGroup::Encoder1] = *c_encoder1;
    if (c_encoder2) c.optimizer.c_map[ParamGroup::Encoder2] = *c_encoder2;
    if (c_decoder) c.optimizer.c_map[ParamGroup::Decoder] = *c_decoder;
    if (batch_size) c.batch_size = *batch_size;
    if (max_epochs) c.max_epochs = *max_epochs;
    if (patience) c.patience = *patience;
    if (data) c.dataset_root = *data;
    if (out) c.output_dir = *out;
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sample> load_split_resized(const RunConfig& cfg, Split split, bool double_polyps, std::uint64_t seed) {
  const DatasetManifest manifest = load_manifest(cfg.dataset_root);
  std::vector<Sample> samples = load_samples(cfg.dataset_root, manifest, split);
  if (double_polyps) {
    std::mt19937_64 rng(seed);
    samples = double_polyp_frames(samples, rng);
  }
  for (auto& s : samples) s = crop_and_resize(s, cfg.input_size);
  return samples;
}

SegmentationModel load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  SegmentationModel model(cfg.model(), cfg.seed);
  const auto expected = expected_entries(model.params());
  restore(model.params(), load_checkpoint(checkpoint, &expected));
  return model;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunFlags& flags, std::size_t count, std::size_t val_count, std::size_t test_count,
              std::optional<std::size_t> size, double polyp_fraction, std::size_t frames_per_video) {
  RunConfig cfg = flags.resolve();
  const fs::path root = cfg.dataset_root;
  if (fs::exists(root) && !fs::is_empty(root)) {
    spdlog::error("dataset root {} is not empty", root.string());
    return kDataError;
  }
  DatasetManifest manifest;
  const std::array<std::pair<Split, std::size_t>, 3> splits{
      {{Split::Train, count}, {Split::Val, val_count}, {Split::Test, test_count}}};
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto [split, n] = splits[i];
    if (n == 0) continue;
    SynthConfig sc;
    sc.count = n;
    sc.size = size.value_or(cfg.input_size);
    sc.seed = cfg.seed * 3 + i;  // independent stream per split
    sc.polyp_fraction = polyp_fraction;
    sc.frames_per_video = frames_per_video;
    for (auto& v : generate_synthetic(root, split, sc)) manifest.videos.push_back(std::move(v));
    spdlog::info("wrote {} {} frames", n, to_string(split));
  }
  fs::create_directories(root);
  write_text(root / "manifest.json", manifest_to_json(manifest));
  return kOk;
}

int cmd_pretrain(const RunFlags& flags, std::size_t epochs, std::size_t batch, std::optional<double> eta,
                 const std::string& out_path) {
  RunConfig cfg = flags.resolve();
  const auto samples = load_split_resized(cfg, Split::Train, false, cfg.seed);
  if (samples.empty()) throw DataError("no training frames under " + cfg.dataset_root);
  EncoderClassifier classifier(cfg.model(), cfg.seed);
  PretrainConfig pc;
  pc.epochs = epochs;
  pc.batch_size = batch;
  pc.seed = cfg.seed;
  if (eta) pc.eta = *eta;
  const fs::path out = out_path.empty() ? fs::path(cfg.output_dir) / "encoder.ynw" : fs::path(out_path);
  std::string csv = "epoch,loss,accuracy\n";
  pretrain_encoder(classifier, samples, pc, [&](const PretrainEpoch& e) {
    char row[96];
    std::snprintf(row, sizeof row, "%zu,%.6f,%.4f\n", e.epoch, e.mean_loss, e.accuracy);
    csv += row;
  });
  // Encoder-local names plus the classifier head (ignored on transfer).
  auto entries = export_encoder(classifier.params(), classifier.encoder());
  for (const auto& p : classifier.params()) {
    if (p.name.starts_with("classifier.")) entries.push_back({p.name, p.value});
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const std::size_t bytes = save_checkpoint(out, entries);
  write_text(out.parent_path() / "pretrain.csv", csv);
  spdlog::info("wrote encoder checkpoint {} ({} bytes)", out.string(), bytes);
  return kOk;
}

int cmd_train(const RunFlags& flags, const std::string& pretrained, bool no_augment) {
  RunConfig cfg = flags.resolve();
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(cfg));

  std::optional<std::vector<NamedTensor>> encoder;
  if (!pretrained.empty()) encoder = load_checkpoint(pretrained);
  SegmentationModel model = cfg.variant == Variant::YNet
                                ? build_ynet(cfg.model(), cfg.seed, encoder ? &*encoder : nullptr)
                                : build_unet_baseline(cfg.model(), cfg.seed, encoder ? &*encoder : nullptr);

  std::set<ParamGroup> groups;
  for (const auto& p : model.params()) {
    if (p.trainable()) groups.insert(p.group);
  }
  RmsProp probe(cfg.optimizer);
  for (ParamGroup g : groups) {
    spdlog::info("effective learning rate {}: {:g} (c={:g}, eta={:g})", to_string(g), probe.effective_lr(g),
                 probe.c_for(g), cfg.optimizer.eta);
  }

  std::ofstream csv(out / "train.csv");
  csv << kEpochCsvHeader << "\n";
  if (cfg.max_epochs == 0) {
    const auto init = snapshot(model.params());
    save_checkpoint(out / "final.ynw", init);
    save_checkpoint(out / "best.ynw", init);
    return kOk;
  }
  const auto train = load_split_resized(cfg, Split::Train, true, cfg.seed);
  const auto val = load_split_resized(cfg, Split::Val, false, cfg.seed);
  if (train.empty()) throw DataError("no training frames under " + cfg.dataset_root);
  if (val.empty()) throw DataError("no validation frames under " + cfg.dataset_root);

  TrainConfig tc = cfg.train();
  tc.online_augment = !no_augment;
  const FitResult result = fit(model, train, val, tc, [&](const EpochRecord& r) {
    csv << epoch_csv_row(r, cfg.optimizer.eta) << "\n" << std::flush;
  });
  save_checkpoint(out / "final.ynw", snapshot(model.params()));
  save_checkpoint(out / "best.ynw", result.best);
  spdlog::info("best validation dice {:.4f} at epoch {}", result.best_val_dice, result.best_epoch);
  return kOk;
}

std::vector<FrameTruth> truth_of(const std::vector<Sample>& samples) {
  std::vector<FrameTruth> truth;
  for (const auto& s : samples) truth.push_back({s.video_id, s.frame_index, ground_truth_boxes(s.mask)});
  return truth;
}

void write_report(const fs::path& out, const ScoreReport& report) {
  write_text(out / "report.csv", report_to_csv(report));
  write_text(out / "report.json", report_to_json(report));
  const auto& s = report.scores;
  std::printf("TP %zu FP %zu FN %zu | precision %.1f recall %.1f F1 %.1f F2 %.1f\n", report.counts.tp,
              report.counts.fp, report.counts.fn, s.precision, s.recall, s.f1, s.f2);
  for (const auto& l : report.latencies) {
    if (l.t2) {
      std::printf("latency %s: %zu frames\n", l.video_id.c_str(), *l.delta());
    } else {
      std::printf("latency %s: missed\n", l.video_id.c_str());
    }
  }
}

int cmd_eval(const RunFlags& flags, const std::string& checkpoint, const std::string& split_name) {
  RunConfig cfg = flags.resolve();
  SegmentationModel model = load_model(cfg, checkpoint);
  const auto samples = load_split_resized(cfg, parse_split(split_name), false, cfg.seed);
  if (samples.empty()) throw DataError("no " + split_name + " frames under " + cfg.dataset_root);
  const auto probs = predict_masks(model, samples);
  std::vector<FrameDetections> dets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto d = extract_detections(probs[i].data(), cfg.input_size, cfg.input_size);
    dets.push_back({samples[i].video_id, samples[i].frame_index, d.boxes, d.scores});
  }
  const fs::path out = cfg.output_dir;
  write_text(out / "detections.jsonl", detections_to_jsonl(dets));
  std::printf("dice %.4f\n", pooled_dice(probs, samples, cfg.loss.epsilon));
  write_report(out, score_run(truth_of(samples), dets));
  return kOk;
}

int cmd_infer(const RunFlags& flags, const std::string& checkpoint, const std::vector<std::string>& inputs) {
  RunConfig cfg = flags.resolve();
  SegmentationModel model = load_model(cfg, checkpoint);
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  std::vector<FrameDetections> dets;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Image frame;
    try {
      frame = read_png(files[i], 3);
    } catch (const std::exception& ex) {
      spdlog::error("skipping {}: {}", files[i].string(), ex.what());
      continue;
    }
    Sample s{.frame = frame, .mask = Image(frame.width, frame.height, 1), .video_id = {}, .frame_index = i};
    const ModelInput in = preprocess(s, cfg.input_size);
    const Tensor probs = model.predict(stack(std::span<const Tensor>(&in.frame, 1)));
    Image small(cfg.input_size, cfg.input_size, 1);
    for (std::size_t j = 0; j < small.pixels.size(); ++j) small.pixels[j] = static_cast<std::uint8_t>(
        std::clamp(std::lround(probs[j] * 255.0f), 0L, 255L));
    // Back to input geometry: the prediction covers the border-cropped region.
    Image full(frame.width, frame.height, 1);
    const Rect r = content_bounds(frame).value_or(Rect{0, 0, frame.width, frame.height});
    const Image region = resize(small, r.width, r.height, Interp::Bilinear);
    for (std::size_t y = 0; y < r.height; ++y) {
      for (std::size_t x = 0; x < r.width; ++x) full.at(r.x0 + x, r.y0 + y) = region.at(x, y);
    }
    write_png(out / (files[i].stem().string() + "_mask.png"), full);
    std::vector<float> p(full.pixels.size());
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = static_cast<float>(full.pixels[j]) / 255.0f;
    const auto d = extract_detections(p, full.height, full.width);
    dets.push_back({files[i].stem().string(), i, d.boxes, d.scores});
    ++ok;
  }
  write_text(out / "detections.jsonl", detections_to_jsonl(dets));
  if (ok == 0) {
    spdlog::error("no input frame could be processed");
    return kDataError;
  }
  return kOk;
}

int cmd_score(const RunFlags& flags, const std::string& counts, const std::string& predictions,
              const std::string& split_name) {
  if (!counts.empty()) {
    DetectionCounts c;
    if (std::sscanf(counts.c_str(), "%zu,%zu,%zu", &c.tp, &c.fp, &c.fn) != 3) {
      std::fprintf(stderr, "--counts expects TP,FP,FN\n");
      return kUsage;
    }
    const auto s = prf_scores(c);
    std::printf("precision/recall/F1/F2\n%.1f/%.1f/%.1f/%.1f\n", s.precision, s.recall, s.f1, s.f2);
    return kOk;
  }
  if (predictions.empty()) {
    std::fprintf(stderr, "score needs --counts or --predictions\n");
    return kUsage;
  }
  RunConfig cfg = flags.resolve();
  const auto samples = load_split_resized(cfg, parse_split(split_name), false, cfg.seed);
  std::vector<FrameDetections> dets;
  try {
    dets = detections_from_jsonl(read_text(predictions));
  } catch (const std::invalid_argument& ex) {
    throw DataError(ex.what());
  }
  std::set<FrameKey> known;
  for (const auto& s : samples) known.insert({s.video_id, s.frame_index});
  for (const auto& d : dets) {
    if (!known.contains({d.video_id, d.frame_index})) {
      throw DataError("prediction for unknown frame " + std::to_string(d.frame_index) + " of '" + d.video_id + "'");
    }
    for (const auto& b : d.boxes) {
      if (b.x1 >= cfg.input_size || b.y1 >= cfg.input_size) {
        throw DataError("box outside the " + std::to_string(cfg.input_size) + "px frame in '" + d.video_id + "'");
      }
    }
  }
  write_report(cfg.output_dir, score_run(truth_of(samples), dets));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Y-Net polyp segmentation and detection"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error")->capture_default_str();

  RunFlags synth_flags, pretrain_flags, train_flags, eval_flags, infer_flags, score_flags;

  auto* synth = app.add_subcommand("synth", "Write a synthetic polyp dataset");
  synth_flags.attach(synth, false);
  std::size_t count = 200, val_count = 0, test_count = 0, frames_per_video = 10;
  std::optional<std::size_t> synth_size;
  double polyp_fraction = 0.5;
  synth->add_option("--count", count, "Training frames")->capture_default_str();
  synth->add_option("--val-count", val_count, "Validation frames")->capture_default_str();
  synth->add_option("--test-count", test_count, "Test frames")->capture_default_str();
  synth->add_option("--size", synth_size, "Frame side in pixels (paper 224, desk 64; default: --input-size)");
  synth->add_option("--polyp-fraction", polyp_fraction, "Fraction of frames showing a polyp")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--frames-per-video", frames_per_video, "Frames per synthetic video")->capture_default_str();

  auto* pretrain = app.add_subcommand("pretrain", "Train the transferable encoder on polyp present/absent");
  pretrain_flags.attach(pretrain, false);
  std::size_t pre_epochs = 20, pre_batch = 8;
  std::optional<double> pre_eta;
  std::string pre_out;
  pretrain->add_option("--epochs", pre_epochs, "Pretraining epochs")->capture_default_str();
  pretrain->add_option("--batch-size", pre_batch, "Pretraining batch size")->capture_default_str();
  pretrain->add_option("--eta", pre_eta, "Learning rate of the proxy task (default 0.001)");
  pretrain->add_option("--out", pre_out, "Checkpoint path (default <output_dir>/encoder.ynw)");
  pretrain->add_option("--output-dir", pretrain_flags.out, "Output directory (default runs)");

  auto* train = app.add_subcommand("train", "Train a segmentation model with early stopping");
  train_flags.attach(train, true);
  std::string pretrained;
  bool no_augment = false;
  train->add_option("--pretrained", pretrained, "Encoder checkpoint for the pretrained slot");
  train->add_flag("--no-augment", no_augment, "Disable online augmentation");
  train->add_option("--out", train_flags.out, "Output directory (default runs)");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval_flags.attach(eval, false);
  std::string eval_ckpt, eval_split = "test";
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--split", eval_split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval->add_option("--out", eval_flags.out, "Output directory (default runs)");

  auto* infer = app.add_subcommand("infer", "Predict masks and boxes for PNG frames");
  infer_flags.attach(infer, false);
  std::string infer_ckpt;
  std::vector<std::string> infer_inputs;
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
  infer->add_option("--input", infer_inputs, "PNG files or directories")->required();
  infer->add_option("--out", infer_flags.out, "Output directory (default runs)");

  auto* score = app.add_subcommand("score", "Score a detection dump, or precision/recall from raw counts");
  score_flags.attach(score, false);
  std::string score_counts, score_preds, score_split = "test";
  score->add_option("--counts", score_counts, "TP,FP,FN; prints precision/recall/F1/F2");
  score->add_option("--predictions", score_preds, "Detection dump (JSON lines)");
  score->add_option("--split", score_split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  score->add_option("--out", score_flags.out, "Output directory (default runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("ynet"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*synth) return cmd_synth(synth_flags, count, val_count, test_count, synth_size, polyp_fraction,
                                 frames_per_video);
    if (*pretrain) return cmd_pretrain(pretrain_flags, pre_epochs, pre_batch, pre_eta, pre_out);
    if (*train) return cmd_train(train_flags, pretrained, no_augment);
    if (*eval) return cmd_eval(eval_flags, eval_ckpt, eval_split);
    if (*infer) return cmd_infer(infer_flags, infer_ckpt, infer_inputs);
    if (*score) return cmd_score(score_flags, score_counts, score_preds, score_split);
  } catch (const NumericError& e) {
    spdlog::error("{} (replay with --seed {})", e.what(), e.seed());
    return kNumericError;
  } catch (const ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kUsage;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return kDataError;
  } catch (const CheckpointError& e) {
    spdlog::error("checkpoint: {}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kUsage;
}

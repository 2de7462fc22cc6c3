#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ynet/loss.hpp"
#include "ynet/model.hpp"
#include "ynet/optim.hpp"
#include "ynet/train.hpp"

namespace ynet {

/// Invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// `paper`: 224x224 input, full VGG19 widths. `desk`: 64x64, width 0.125.
/// Both use batch 3 and eta 1e-4.
enum class Profile { Paper, Desk };
Profile parse_profile(std::string_view s);

struct RunConfig {
  std::uint64_t seed = 0;
  Variant variant = Variant::YNet;
  std::size_t input_size = 224;
  double width_scale = 1.0;
  LossConfig loss;
  RmsPropConfig optimizer;
  std::size_t batch_size = 3;
  std::size_t max_epochs = 30;
  std::size_t patience = 10;
  double min_delta = 1e-4;
  std::string dataset_root = "data";
  std::string output_dir = "runs";

  static RunConfig defaults(Profile profile);
  /// Throws ConfigError naming the offending field.
  void validate() const;

  ModelConfig model() const;
  TrainConfig train() const;
};

std::string config_to_json(const RunConfig& cfg);

/// Overlays the keys present in `text` onto `base`. Unknown keys and
/// ill-typed values throw ConfigError.
RunConfig config_from_json(std::string_view text, const RunConfig& base);
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base);

}  // namespace ynet

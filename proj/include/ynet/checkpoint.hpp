#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ynet/tensor.hpp"

namespace ynet {

class ParameterStore;
class SegmentationModel;
struct EncoderLayout;

// .ynw layout (all integers little-endian):
//   "YNW1" | u32 version | u32 entry_count
//   entry: u32 name_len | name | u8 dtype (0 = f32) | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//   u32 CRC32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorKind { Io, BadMagic, Crc, Version, Format, Shape, Coverage };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct ExpectedEntry {
  std::string name;
  Shape shape;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> entries,
                                            std::uint32_t version = kCheckpointVersion);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes atomically (temp file + rename). Returns bytes written.
std::size_t save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries);

/// With `expected`, every listed entry must be present with the listed shape;
/// the first offender is named in the Shape error.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path,
                                         const std::vector<ExpectedEntry>* expected = nullptr);

/// Every parameter and buffer of the store, in store order.
std::vector<NamedTensor> snapshot(const ParameterStore& store);
std::vector<ExpectedEntry> expected_entries(const ParameterStore& store);
/// Overwrites store values by name; all store entries must be covered.
void restore(ParameterStore& store, std::span<const NamedTensor> entries);

/// Encoder conv parameters with the encoder prefix stripped ("conv1_1.weight").
std::vector<NamedTensor> export_encoder(const ParameterStore& store, const EncoderLayout& layout);

/// Loads encoder-local conv entries into the model's transfer slot. Entries
/// that are not encoder convs (e.g. "classifier.*") are skipped and logged;
/// a conv layer missing from the checkpoint is a Coverage error.
void transfer_encoder(std::span<const NamedTensor> checkpoint, SegmentationModel& model);

}  // namespace ynet

#include "ynet/checkpoint.hpp"

#include <spdlog/spdlog.h>
#include <zlib.h>

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "ynet/model.hpp"

namespace ynet {
namespace {

constexpr char kMagic[4] = {'Y', 'N', 'W', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(CheckpointErrorKind::Format, "checkpoint: unexpected end of payload");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> entries, std::uint32_t version) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, version);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(kDtypeF32);
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_u64(out, d);
    for (float f : e.value.data()) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc_of(out));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrorKind::BadMagic, "checkpoint: bad magic (expected YNW1)");
  }
  if (bytes.size() < 16) {
    throw CheckpointError(CheckpointErrorKind::Crc, "checkpoint: truncated file (" + std::to_string(bytes.size()) +
                                                        " bytes), CRC cannot validate");
  }
  const auto payload = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored = static_cast<std::uint32_t>(tail.uint(4));
  if (crc_of(payload) != stored) throw CheckpointError(CheckpointErrorKind::Crc, "checkpoint: CRC mismatch");

  Reader r(payload);
  r.take(4);
  const auto version = static_cast<std::uint32_t>(r.uint(4));
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::Version, "checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.uint(4);
  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto name_len = r.uint(4);
    auto name = r.take(name_len);
    e.name.assign(name.begin(), name.end());
    if (r.uint(1) != kDtypeF32) throw CheckpointError(CheckpointErrorKind::Format, "checkpoint: unknown dtype in " + e.name);
    const auto rank = r.uint(4);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(r.uint(8)));
      n *= shape.back();
    }
    if (n * 4 > r.remaining()) throw CheckpointError(CheckpointErrorKind::Format, "checkpoint: entry " + e.name + " overruns payload");
    std::vector<float> data(n);
    for (auto& f : data) {
      const auto bits = static_cast<std::uint32_t>(r.uint(4));
      std::memcpy(&f, &bits, sizeof f);
    }
    try {
      e.value = Tensor(std::move(shape), std::move(data));
    } catch (const ShapeError& err) {
      throw CheckpointError(CheckpointErrorKind::Format, "checkpoint: entry " + e.name + ": " + err.what());
    }
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw CheckpointError(CheckpointErrorKind::Format, "checkpoint: trailing bytes after entries");
  return entries;
}

std::size_t save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  const auto bytes = encode_checkpoint(entries);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointErrorKind::Io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  return bytes.size();
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path, const std::vector<ExpectedEntry>* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto entries = decode_checkpoint(bytes);
  if (expected) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (const auto& want : *expected) {
      auto it = by_name.find(want.name);
      if (it == by_name.end()) {
        throw CheckpointError(CheckpointErrorKind::Shape, "checkpoint " + path.string() + ": missing layer " + want.name);
      }
      if (it->second->value.shape() != want.shape) {
        throw CheckpointError(CheckpointErrorKind::Shape, "checkpoint " + path.string() + ": layer " + want.name + " has shape " +
                                                              to_string(it->second->value.shape()) + ", expected " +
                                                              to_string(want.shape));
      }
    }
  }
  return entries;
}

std::vector<NamedTensor> snapshot(const ParameterStore& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back({p.name, p.value});
  return out;
}

std::vector<ExpectedEntry> expected_entries(const ParameterStore& store) {
  std::vector<ExpectedEntry> out;
  for (const auto& p : store) out.push_back({p.name, p.value.shape()});
  return out;
}

void restore(ParameterStore& store, std::span<const NamedTensor> entries) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (auto& p : store) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError(CheckpointErrorKind::Coverage, "restore: no entry for " + p.name);
    if (it->second->value.shape() != p.value.shape()) {
      throw CheckpointError(CheckpointErrorKind::Shape, "restore: layer " + p.name + " has shape " +
                                                            to_string(it->second->value.shape()) + ", expected " +
                                                            to_string(p.value.shape()));
    }
  }
  for (auto& p : store) p.value = by_name.at(p.name)->value;
}

std::vector<NamedTensor> export_encoder(const ParameterStore& store, const EncoderLayout& layout) {
  std::vector<NamedTensor> out;
  const std::string prefix = layout.prefix + ".";
  for (const auto& block : layout.blocks) {
    for (const auto& conv : block) {
      for (auto idx : {conv.weight, conv.bias}) {
        const auto& p = store[idx];
        out.push_back({p.name.substr(prefix.size()), p.value});
      }
    }
  }
  return out;
}

void transfer_encoder(std::span<const NamedTensor> checkpoint, SegmentationModel& model) {
  const std::string slot = model.pretrained_slot();
  const EncoderLayout* layout = nullptr;
  for (const auto& enc : model.encoders()) {
    if (enc.prefix == slot) layout = &enc;
  }
  if (!layout) throw std::logic_error("transfer_encoder: model has no encoder slot " + slot);

  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& e : checkpoint) by_name[e.name] = &e;

  auto& store = model.params();
  std::vector<std::pair<std::size_t, const NamedTensor*>> plan;
  std::vector<std::string> missing;
  const std::string prefix = slot + ".";
  for (const auto& block : layout->blocks) {
    for (const auto& conv : block) {
      for (auto idx : {conv.weight, conv.bias}) {
        const std::string local = store[idx].name.substr(prefix.size());
        auto it = by_name.find(local);
        if (it == by_name.end()) {
          missing.push_back(local);
          continue;
        }
        if (it->second->value.shape() != store[idx].value.shape()) {
          throw CheckpointError(CheckpointErrorKind::Shape, "transfer_encoder: layer " + local + " has shape " +
                                                                to_string(it->second->value.shape()) + ", expected " +
                                                                to_string(store[idx].value.shape()));
        }
        plan.emplace_back(idx, it->second);
        by_name.erase(it);
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw CheckpointError(CheckpointErrorKind::Coverage,
                          "transfer_encoder: checkpoint lacks " + std::to_string(missing.size()) + " encoder entries: " + list);
  }
  for (const auto& e : checkpoint) {
    if (by_name.count(e.name)) spdlog::info("transfer_encoder: skipping non-encoder entry {}", e.name);
  }
  for (const auto& [idx, src] : plan) store[idx].value = src->value;
  spdlog::info("transfer_encoder: loaded {} tensors into {}", plan.size(), slot);
}

}  // namespace ynet

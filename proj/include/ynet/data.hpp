#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ynet/image.hpp"
#include "ynet/tensor.hpp"

namespace ynet {

/// Malformed or inconsistent dataset on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One annotated frame. `mask` holds 0/1 values.
struct Sample {
  Image frame;  // RGB
  Image mask;   // single channel
  std::string video_id;
  std::size_t frame_index = 0;

  /// Throws std::invalid_argument unless frame is RGB, mask is single
  /// channel, both have the same size and the mask is binary.
  void validate() const;
  bool has_polyp() const;
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Rows/columns whose mean intensity falls below this fraction of 255 are
/// treated as black border.
inline constexpr double kBorderThreshold = 10.0 / 255.0;

struct Rect {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Bounding rectangle of the non-border content, or nullopt if every row is
/// border (a black frame).
std::optional<Rect> content_bounds(const Image& frame, double threshold = kBorderThreshold);

/// Border crop then resize (bilinear frame, nearest mask) to target x target.
/// A black frame is resized whole and `*blank` set.
Sample crop_and_resize(const Sample& sample, std::size_t target, bool* blank = nullptr);

struct ModelInput {
  Tensor frame;  // [3,S,S] in [0,1]
  Tensor mask;   // [1,S,S] in {0,1}
  bool blank_frame = false;
};

/// crop_and_resize followed by normalization to [0,1]. target must be a
/// positive multiple of 32.
ModelInput preprocess(const Sample& sample, std::size_t target);

/// Normalized CHW tensors of an already target-sized sample.
Tensor frame_to_tensor(const Image& frame);
Tensor mask_to_tensor(const Image& mask);

/// Stacks [C,S,S] tensors into [N,C,S,S].
Tensor stack(std::span<const Tensor> items);

// ---------------------------------------------------------------------------
// Offline augmentation (applied once per polyp frame before training)

struct AffineParams {
  double rotation_deg = 0.0;
  double zoom = 1.0;  // content magnification
  double tx = 0.0;    // pixels
  double ty = 0.0;
  double shear_deg = 0.0;
};

struct OfflineAugmentRanges {
  std::array<double, 2> rotation_deg{10.0, 350.0};
  std::array<double, 2> zoom{1.0, 1.3};
  std::array<double, 2> translation{-10.0, 10.0};
  std::array<double, 2> shear_deg{-25.0, 25.0};
  std::size_t max_retries = 10;
  /// Smallest accepted crop scale when removing padded regions.
  double min_crop_scale = 0.1;
};

/// Forward (source -> output) map of the affine about the image center.
Homography affine_forward(const AffineParams& params, std::size_t width, std::size_t height);

/// Applies the affine, recenters on the mask centroid, crops to the largest
/// centered window without padded pixels and resizes back, in one resampling.
/// nullopt when the polyp leaves the frame or no window of at least
/// `min_crop_scale` exists. Requires a non-empty mask.
std::optional<Sample> augment_offline(const Sample& sample, const AffineParams& params,
                                      double min_crop_scale = 0.1);

/// Draws parameters uniformly from `ranges`, retrying failed draws.
std::optional<Sample> augment_offline(const Sample& sample, std::mt19937_64& rng,
                                      const OfflineAugmentRanges& ranges = {});

/// Original samples followed by one augmented copy of every polyp frame
/// (copies whose retries all fail are skipped).
std::vector<Sample> double_polyp_frames(const std::vector<Sample>& samples, std::mt19937_64& rng,
                                        const OfflineAugmentRanges& ranges = {});

// ---------------------------------------------------------------------------
// Online augmentation (per training iteration)

struct OnlineAugmentConfig {
  double p_negative_crop = 0.3;
  double p_perspective = 0.4;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  /// Max corner displacement as a fraction of the side.
  double perspective_jitter = 0.1;
  /// Smallest crop side as a fraction of the image side.
  double min_crop_fraction = 0.25;
};

/// Homography taking the 4 `dst` points onto the 4 `src` points
/// (maps output pixel indices to source pixel indices).
Homography homography_from_points(const std::array<std::array<double, 2>, 4>& dst,
                                  const std::array<std::array<double, 2>, 4>& src);

/// Random square that does not intersect the polyp bounding box, or nullopt
/// if none of the minimum side fits.
std::optional<Rect> negative_crop_rect(const Image& mask, double min_fraction, std::mt19937_64& rng);

Sample augment_online(const Sample& sample, std::mt19937_64& rng, const OnlineAugmentConfig& cfg = {});

// ---------------------------------------------------------------------------
// Datasets on disk: root/{train,val,test}/<video>/{frames,masks}/%05d.png

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct VideoEntry {
  std::string id;
  Split split = Split::Train;
  bool has_polyp = false;
  std::vector<std::size_t> indices;
  std::vector<std::filesystem::path> frames;  // relative to the dataset root
  std::vector<std::filesystem::path> masks;

  friend bool operator==(const VideoEntry&, const VideoEntry&) = default;
};

struct DatasetManifest {
  std::vector<VideoEntry> videos;

  std::vector<const VideoEntry*> split(Split s) const;
  std::size_t frame_count(Split s) const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);

/// Scans the directory tree; throws DataError on unpaired frames/masks.
/// A missing or empty root yields an empty manifest and a warning.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Reads every frame of `split`; mask pixels > 127 become 1.
std::vector<Sample> load_samples(const std::filesystem::path& root, const DatasetManifest& manifest, Split split);

/// Writes samples (grouped by video_id, in order) under root/<split>/ and
/// returns their manifest entries. Masks are stored as 0/255.
std::vector<VideoEntry> write_samples(const std::filesystem::path& root, Split split,
                                      const std::vector<Sample>& samples);

// ---------------------------------------------------------------------------
// Synthetic polyp-like data

struct SynthConfig {
  std::size_t count = 200;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  double polyp_fraction = 0.5;
  std::size_t frames_per_video = 10;
  /// Negative frames preceding the polyp in each polyp video.
  std::size_t lead_in = 2;
};

/// Exactly round(count * polyp_fraction) polyp frames, in videos where the
/// blob persists and drifts.
std::vector<Sample> synthesize_samples(const SynthConfig& cfg);

/// synthesize_samples written under root/<split>; returns the entries.
std::vector<VideoEntry> generate_synthetic(const std::filesystem::path& root, Split split, const SynthConfig& cfg);

}  // namespace ynet

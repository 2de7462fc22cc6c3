#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ynet/image.hpp"

namespace ynet {

/// Pixels strictly above this probability count as detections.
inline constexpr double kDetectionThreshold = 0.9;

/// Axis-aligned box with inclusive pixel bounds.
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  std::size_t area() const { return (x1 - x0 + 1) * (y1 - y0 + 1); }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Smallest kept component: 16 px at 224x224, scaled with image area.
std::size_t scaled_min_area(std::size_t height, std::size_t width);

struct Component {
  Box box;
  std::size_t area = 0;
  double mean_value = 0.0;
};

/// 8-connected components of the nonzero pixels of a row-major HxW grid, in
/// raster order of their first pixel. `values` (optional) feeds mean_value.
std::vector<Component> connected_components(std::span<const std::uint8_t> binary, std::size_t height, std::size_t width,
                                            std::span<const float> values = {});

struct Detections {
  std::vector<Box> boxes;
  std::vector<double> scores;  // mean probability inside each component
  Image mask;                  // binarized detection mask (0/1)
};

/// Thresholds a probability map and boxes its components. `min_area`
/// defaults to scaled_min_area(height, width).
Detections extract_detections(std::span<const float> probs, std::size_t height, std::size_t width,
                              double threshold = kDetectionThreshold, std::optional<std::size_t> min_area = {});

/// Boxes of every ground-truth instance (8-connected, no size filter).
std::vector<Box> ground_truth_boxes(const Image& mask);

/// The printed overlap formula: sum(p*g) / (sum p + sum g + eps) * 100.
double iou_eq5(std::span<const std::uint8_t> p, std::span<const std::uint8_t> g, double epsilon);

/// |p & g| / |p | g| * 100; 0 when both are empty.
double iou_standard(const Box& p, const Box& g);
double iou_standard(std::span<const std::uint8_t> p, std::span<const std::uint8_t> g);

struct DetectionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  DetectionCounts& operator+=(const DetectionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const DetectionCounts&, const DetectionCounts&) = default;
};

/// Greedy matching in descending IoU; each ground-truth box takes at most one
/// detection and zero-IoU pairs never match.
DetectionCounts match_frame(const std::vector<Box>& detections, const std::vector<Box>& ground_truth);

/// Percentages; any 0/0 is 0.
struct PrfScores {
  double precision = 0.0, recall = 0.0, f1 = 0.0, f2 = 0.0;
};
PrfScores prf_scores(const DetectionCounts& counts);

struct LatencyRecord {
  std::string video_id;
  std::size_t t1 = 0;
  std::optional<std::size_t> t2;  // empty when never detected

  std::optional<std::size_t> delta() const {
    return t2 ? std::optional<std::size_t>(*t2 - t1) : std::nullopt;
  }
};

/// Latency from the first ground-truth polyp frame to the first correct
/// detection at or after it; nullopt if the video never shows a polyp.
std::optional<LatencyRecord> detection_latency(const std::vector<bool>& gt_timeline,
                                               const std::vector<bool>& det_timeline, std::string video_id = {});

using FrameKey = std::pair<std::string, std::size_t>;  // (video, frame index)

struct FrameTruth {
  std::string video_id;
  std::size_t frame_index = 0;
  std::vector<Box> boxes;
};

struct FrameDetections {
  std::string video_id;
  std::size_t frame_index = 0;
  std::vector<Box> boxes;
  std::vector<double> scores;
};

struct ScoreReport {
  DetectionCounts counts;
  PrfScores scores;
  std::vector<LatencyRecord> latencies;
  std::size_t frames = 0;
  std::size_t missing_predictions = 0;
};

/// Aggregates match_frame over every ground-truth frame (in the given order,
/// which also defines each video's timeline). Frames without a prediction
/// count as having no detections.
ScoreReport score_run(const std::vector<FrameTruth>& truth, const std::vector<FrameDetections>& predictions);

std::string report_to_csv(const ScoreReport& report);
std::string report_to_json(const ScoreReport& report);

/// One JSON object per line: {"video", "frame", "boxes": [[x0,y0,x1,y1]...], "scores"}.
std::string detections_to_jsonl(const std::vector<FrameDetections>& frames);
std::vector<FrameDetections> detections_from_jsonl(const std::string& text);

}  // namespace ynet

#include "ynet/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace ynet {

std::size_t scaled_min_area(std::size_t height, std::size_t width) {
  const double scaled = 16.0 * static_cast<double>(height * width) / (224.0 * 224.0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

std::vector<Component> connected_components(std::span<const std::uint8_t> binary, std::size_t height, std::size_t width,
                                            std::span<const float> values) {
  if (binary.size() != height * width) throw std::invalid_argument("connected_components: size mismatch");
  if (!values.empty() && values.size() != binary.size()) {
    throw std::invalid_argument("connected_components: values size mismatch");
  }
  std::vector<bool> seen(binary.size(), false);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary[start] || seen[start]) continue;
    Component comp;
    comp.box = {start % width, start / width, start % width, start / width};
    double sum = 0.0;
    seen[start] = true;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t x = i % width, y = i / width;
      ++comp.area;
      if (!values.empty()) sum += values[i];
      comp.box.x0 = std::min(comp.box.x0, x);
      comp.box.x1 = std::max(comp.box.x1, x);
      comp.box.y0 = std::min(comp.box.y0, y);
      comp.box.y1 = std::max(comp.box.y1, y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto nx = static_cast<std::ptrdiff_t>(x) + dx, ny = static_cast<std::ptrdiff_t>(y) + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(width) || ny >= static_cast<std::ptrdiff_t>(height)) {
            continue;
          }
          const auto j = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
          if (binary[j] && !seen[j]) {
            seen[j] = true;
            stack.push_back(j);
          }
        }
      }
    }
    comp.mean_value = values.empty() ? 1.0 : sum / static_cast<double>(comp.area);
    out.push_back(comp);
  }
  return out;
}

Detections extract_detections(std::span<const float> probs, std::size_t height, std::size_t width, double threshold,
                              std::optional<std::size_t> min_area) {
  if (probs.size() != height * width) throw std::invalid_argument("extract_detections: size mismatch");
  const std::size_t keep = min_area.value_or(scaled_min_area(height, width));
  Detections d;
  d.mask = Image(width, height, 1);
  for (std::size_t i = 0; i < probs.size(); ++i) d.mask.pixels[i] = probs[i] > threshold ? 1 : 0;
  for (const auto& c : connected_components(d.mask.pixels, height, width, probs)) {
    if (c.area < keep) continue;
    d.boxes.push_back(c.box);
    d.scores.push_back(c.mean_value);
  }
  return d;
}

std::vector<Box> ground_truth_boxes(const Image& mask) {
  std::vector<Box> boxes;
  for (const auto& c : connected_components(mask.pixels, mask.height, mask.width)) boxes.push_back(c.box);
  return boxes;
}

double iou_eq5(std::span<const std::uint8_t> p, std::span<const std::uint8_t> g, double epsilon) {
  if (p.size() != g.size()) throw std::invalid_argument("iou_eq5: size mismatch");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i] && g[i]);
    sp += static_cast<double>(p[i] != 0);
    sg += static_cast<double>(g[i] != 0);
  }
  return inter / (sp + sg + epsilon) * 100.0;
}

double iou_standard(const Box& p, const Box& g) {
  const std::size_t ix0 = std::max(p.x0, g.x0), iy0 = std::max(p.y0, g.y0);
  const std::size_t ix1 = std::min(p.x1, g.x1), iy1 = std::min(p.y1, g.y1);
  if (ix0 > ix1 || iy0 > iy1) return 0.0;
  const double inter = static_cast<double>((ix1 - ix0 + 1) * (iy1 - iy0 + 1));
  return inter / (static_cast<double>(p.area() + g.area()) - inter) * 100.0;
}

double iou_standard(std::span<const std::uint8_t> p, std::span<const std::uint8_t> g) {
  if (p.size() != g.size()) throw std::invalid_argument("iou_standard: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += (p[i] && g[i]) ? 1 : 0;
    uni += (p[i] || g[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni) * 100.0;
}

DetectionCounts match_frame(const std::vector<Box>& detections, const std::vector<Box>& ground_truth) {
  struct Pair {
    double iou;
    std::size_t det, gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double iou = iou_standard(detections[d], ground_truth[g]);
      if (iou > 0.0) pairs.push_back({iou, d, g});
    }
  }
  // Stable order on ties keeps the matching deterministic.
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> det_used(detections.size(), false), gt_used(ground_truth.size(), false);
  DetectionCounts c;
  for (const auto& p : pairs) {
    if (det_used[p.det] || gt_used[p.gt]) continue;
    det_used[p.det] = gt_used[p.gt] = true;
    ++c.tp;
  }
  c.fp = detections.size() - c.tp;
  c.fn = ground_truth.size() - c.tp;
  return c;
}

PrfScores prf_scores(const DetectionCounts& counts) {
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  const double tp = static_cast<double>(counts.tp);
  PrfScores s;
  const double p = ratio(tp, tp + static_cast<double>(counts.fp));
  const double r = ratio(tp, tp + static_cast<double>(counts.fn));
  s.precision = 100.0 * p;
  s.recall = 100.0 * r;
  s.f1 = 100.0 * ratio(2.0 * p * r, p + r);
  s.f2 = 100.0 * ratio(5.0 * p * r, 4.0 * p + r);
  return s;
}

std::optional<LatencyRecord> detection_latency(const std::vector<bool>& gt_timeline,
                                               const std::vector<bool>& det_timeline, std::string video_id) {
  if (gt_timeline.size() != det_timeline.size()) {
    throw std::invalid_argument("detection_latency: timelines have different lengths");
  }
  const auto first = std::find(gt_timeline.begin(), gt_timeline.end(), true);
  if (first == gt_timeline.end()) return std::nullopt;
  LatencyRecord rec;
  rec.video_id = std::move(video_id);
  rec.t1 = static_cast<std::size_t>(first - gt_timeline.begin());
  for (std::size_t t = rec.t1; t < det_timeline.size(); ++t) {
    if (det_timeline[t]) {
      rec.t2 = t;
      break;
    }
  }
  return rec;
}

ScoreReport score_run(const std::vector<FrameTruth>& truth, const std::vector<FrameDetections>& predictions) {
  std::map<FrameKey, const FrameDetections*> by_key;
  for (const auto& p : predictions) by_key[{p.video_id, p.frame_index}] = &p;

  ScoreReport report;
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<bool>, std::vector<bool>>> timelines;
  static const std::vector<Box> kNone;
  for (const auto& f : truth) {
    auto it = by_key.find({f.video_id, f.frame_index});
    if (it == by_key.end()) {
      ++report.missing_predictions;
      spdlog::warn("no prediction for frame {} of '{}'; counted as no detections", f.frame_index, f.video_id);
    }
    const auto& dets = it == by_key.end() ? kNone : it->second->boxes;
    const DetectionCounts c = match_frame(dets, f.boxes);
    report.counts += c;
    ++report.frames;
    if (!timelines.contains(f.video_id)) order.push_back(f.video_id);
    auto& [gt, det] = timelines[f.video_id];
    gt.push_back(!f.boxes.empty());
    det.push_back(c.tp > 0);
  }
  report.scores = prf_scores(report.counts);
  for (const auto& id : order) {
    const auto& [gt, det] = timelines[id];
    if (auto rec = detection_latency(gt, det, id)) {
      report.latencies.push_back(*rec);
    }
  }
  return report;
}

namespace {

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string report_to_csv(const ScoreReport& r) {
  std::ostringstream out;
  out << "tp,fp,fn,precision,recall,f1,f2\n"
      << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.fn << ',' << fixed1(r.scores.precision) << ','
      << fixed1(r.scores.recall) << ',' << fixed1(r.scores.f1) << ',' << fixed1(r.scores.f2) << "\n\n"
      << "video,t1,t2,delta_t\n";
  for (const auto& l : r.latencies) {
    out << l.video_id << ',' << l.t1 << ',';
    if (l.t2) {
      out << *l.t2 << ',' << *l.delta() << '\n';
    } else {
      out << ",missed\n";
    }
  }
  return out.str();
}

std::string report_to_json(const ScoreReport& r) {
  nlohmann::json lat = nlohmann::json::array();
  for (const auto& l : r.latencies) {
    nlohmann::json e{{"video", l.video_id}, {"t1", l.t1}};
    if (l.t2) {
      e["t2"] = *l.t2;
      e["delta_t"] = *l.delta();
    } else {
      e["t2"] = nullptr;
      e["delta_t"] = "missed";
    }
    lat.push_back(e);
  }
  const nlohmann::json j{{"tp", r.counts.tp},
                         {"fp", r.counts.fp},
                         {"fn", r.counts.fn},
                         {"precision", r.scores.precision},
                         {"recall", r.scores.recall},
                         {"f1", r.scores.f1},
                         {"f2", r.scores.f2},
                         {"frames", r.frames},
                         {"missing_predictions", r.missing_predictions},
                         {"latency", lat}};
  return j.dump(2) + "\n";
}

std::string detections_to_jsonl(const std::vector<FrameDetections>& frames) {
  std::string out;
  for (const auto& f : frames) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : f.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    out += nlohmann::json{{"video", f.video_id}, {"frame", f.frame_index}, {"boxes", boxes}, {"scores", f.scores}}
               .dump() +
           "\n";
  }
  return out;
}

std::vector<FrameDetections> detections_from_jsonl(const std::string& text) {
  std::vector<FrameDetections> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FrameDetections f;
      f.video_id = j.at("video").get<std::string>();
      f.frame_index = j.at("frame").get<std::size_t>();
      for (const auto& b : j.at("boxes")) {
        const auto v = b.get<std::vector<std::size_t>>();
        if (v.size() != 4 || v[0] > v[2] || v[1] > v[3]) throw std::invalid_argument("bad box");
        f.boxes.push_back({v[0], v[1], v[2], v[3]});
      }
      if (j.contains("scores")) f.scores = j.at("scores").get<std::vector<double>>();
      out.push_back(std::move(f));
    } catch (const std::exception& ex) {
      throw std::invalid_argument("detection dump line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace ynet

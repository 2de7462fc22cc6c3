#include "ynet/data.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>

#include "json.hpp"

namespace ynet {

namespace fs = std::filesystem;

namespace {

// Portable uniform draws: the standard distributions are not specified
// bit-for-bit across library implementations.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

bool bernoulli(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Homography translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty, 0, 0, 1}; }
Homography scaling(double sx, double sy) { return {sx, 0, 0, 0, sy, 0, 0, 0, 1}; }

std::optional<Rect> mask_bounds(const Image& mask) {
  std::size_t x0 = mask.width, y0 = mask.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      any = true;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (!any) return std::nullopt;
  return Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace

void Sample::validate() const {
  if (frame.channels != 3) throw std::invalid_argument("sample frame must be RGB");
  if (mask.channels != 1) throw std::invalid_argument("sample mask must be single channel");
  if (frame.width != mask.width || frame.height != mask.height) {
    throw std::invalid_argument("sample frame is " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                                " but mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  if (frame.empty()) throw std::invalid_argument("sample is empty");
  for (auto v : mask.pixels) {
    if (v > 1) throw std::invalid_argument("sample mask is not binary");
  }
}

bool Sample::has_polyp() const {
  return std::any_of(mask.pixels.begin(), mask.pixels.end(), [](std::uint8_t v) { return v != 0; });
}

// ---------------------------------------------------------------------------

std::optional<Rect> content_bounds(const Image& frame, double threshold) {
  const double limit = threshold * 255.0;
  std::vector<double> rows(frame.height, 0.0), cols(frame.width, 0.0);
  for (std::size_t y = 0; y < frame.height; ++y) {
    for (std::size_t x = 0; x < frame.width; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < frame.channels; ++c) s += frame.at(x, y, c);
      rows[y] += s;
      cols[x] += s;
    }
  }
  const double row_n = static_cast<double>(frame.width * frame.channels);
  const double col_n = static_cast<double>(frame.height * frame.channels);
  auto is_content_row = [&](std::size_t y) { return rows[y] / row_n >= limit; };
  auto is_content_col = [&](std::size_t x) { return cols[x] / col_n >= limit; };

  std::size_t top = 0, bottom = frame.height, left = 0, right = frame.width;
  while (top < bottom && !is_content_row(top)) ++top;
  if (top == bottom) return std::nullopt;
  while (!is_content_row(bottom - 1)) --bottom;
  while (left < right && !is_content_col(left)) ++left;
  if (left == right) return std::nullopt;
  while (!is_content_col(right - 1)) --right;
  return Rect{left, top, right - left, bottom - top};
}

Sample crop_and_resize(const Sample& sample, std::size_t target, bool* blank) {
  sample.validate();
  const auto bounds = content_bounds(sample.frame);
  if (blank) *blank = !bounds.has_value();
  Sample out{.frame = {}, .mask = {}, .video_id = sample.video_id, .frame_index = sample.frame_index};
  if (!bounds) {
    out.frame = resize(sample.frame, target, target, Interp::Bilinear);
    out.mask = resize(sample.mask, target, target, Interp::Nearest);
    return out;
  }
  const Rect& r = *bounds;
  out.frame = resize(crop(sample.frame, r.x0, r.y0, r.width, r.height), target, target, Interp::Bilinear);
  out.mask = resize(crop(sample.mask, r.x0, r.y0, r.width, r.height), target, target, Interp::Nearest);
  return out;
}

ModelInput preprocess(const Sample& sample, std::size_t target) {
  if (target == 0 || target % 32 != 0) {
    throw std::invalid_argument("preprocess: target size " + std::to_string(target) + " is not a multiple of 32");
  }
  ModelInput in;
  const Sample resized = crop_and_resize(sample, target, &in.blank_frame);
  if (in.blank_frame) {
    spdlog::warn("frame {} of video '{}' is entirely black", sample.frame_index, sample.video_id);
  }
  in.frame = frame_to_tensor(resized.frame);
  in.mask = mask_to_tensor(resized.mask);
  return in;
}

Tensor frame_to_tensor(const Image& frame) {
  const std::size_t hw = frame.width * frame.height;
  Tensor t({frame.channels, frame.height, frame.width});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < frame.channels; ++c) {
      t[c * hw + i] = static_cast<float>(frame.pixels[i * frame.channels + c]) / 255.0f;
    }
  }
  return t;
}

Tensor mask_to_tensor(const Image& mask) {
  Tensor t({1, mask.height, mask.width});
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) t[i] = mask.pixels[i] ? 1.0f : 0.0f;
  return t;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack: no tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& t : items) {
    require_same_shape(t.shape(), items[0].shape(), "stack");
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += t.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

Homography affine_forward(const AffineParams& p, std::size_t width, std::size_t height) {
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = p.shear_deg * std::numbers::pi / 180.0;
  const Homography rotation{std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1};
  const Homography shear{1, -std::sin(sh), 0, 0, std::cos(sh), 0, 0, 0, 1};
  Homography m = multiply(rotation, multiply(shear, scaling(p.zoom, p.zoom)));
  return multiply(translation(cx + p.tx, cy + p.ty), multiply(m, translation(-cx, -cy)));
}

std::optional<Sample> augment_offline(const Sample& sample, const AffineParams& params, double min_crop_scale) {
  sample.validate();
  if (!sample.has_polyp()) throw std::invalid_argument("augment_offline: sample has no polyp");
  const std::size_t W = sample.frame.width, H = sample.frame.height;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;

  double mx = 0.0, my = 0.0, n = 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!sample.mask.at(x, y)) continue;
      mx += static_cast<double>(x);
      my += static_cast<double>(y);
      n += 1.0;
    }
  }
  const Homography affine = affine_forward(params, W, H);
  const auto [px, py] = apply(affine, mx / n, my / n);
  const Homography forward = multiply(translation(cx - px, cy - py), affine);
  const Homography backward = invert(forward);

  auto out_to_src = [&](double k) {
    return multiply(backward, multiply(translation(cx, cy), multiply(scaling(k, k), translation(-cx, -cy))));
  };
  auto window_valid = [&](double k) {
    const Homography g = out_to_src(k);
    const double xs[2] = {-0.5, static_cast<double>(W) - 0.5};
    const double ys[2] = {-0.5, static_cast<double>(H) - 0.5};
    constexpr double tol = 1e-9;
    for (double x : xs) {
      for (double y : ys) {
        const auto [sx, sy] = apply(g, x, y);
        if (sx < xs[0] - tol || sx > xs[1] + tol || sy < ys[0] - tol || sy > ys[1] + tol) return false;
      }
    }
    return true;
  };

  double k = 1.0;
  if (!window_valid(1.0)) {
    if (!window_valid(min_crop_scale)) return std::nullopt;
    double lo = min_crop_scale, hi = 1.0;
    for (int i = 0; i < 50; ++i) {
      const double mid = 0.5 * (lo + hi);
      (window_valid(mid) ? lo : hi) = mid;
    }
    k = lo;
  }
  const Homography g = out_to_src(k);
  Sample out{.frame = warp(sample.frame, g, W, H, Interp::Bilinear),
             .mask = warp(sample.mask, g, W, H, Interp::Nearest),
             .video_id = sample.video_id,
             .frame_index = sample.frame_index};
  if (!out.has_polyp()) return std::nullopt;
  return out;
}

std::optional<Sample> augment_offline(const Sample& sample, std::mt19937_64& rng, const OfflineAugmentRanges& r) {
  for (std::size_t attempt = 0; attempt <= r.max_retries; ++attempt) {
    AffineParams p;
    p.rotation_deg = uniform(rng, r.rotation_deg[0], r.rotation_deg[1]);
    p.zoom = uniform(rng, r.zoom[0], r.zoom[1]);
    p.tx = uniform(rng, r.translation[0], r.translation[1]);
    p.ty = uniform(rng, r.translation[0], r.translation[1]);
    p.shear_deg = uniform(rng, r.shear_deg[0], r.shear_deg[1]);
    if (auto out = augment_offline(sample, p, r.min_crop_scale)) return out;
  }
  spdlog::debug("offline augmentation skipped frame {} of '{}'", sample.frame_index, sample.video_id);
  return std::nullopt;
}

std::vector<Sample> double_polyp_frames(const std::vector<Sample>& samples, std::mt19937_64& rng,
                                        const OfflineAugmentRanges& ranges) {
  std::vector<Sample> out = samples;
  std::size_t skipped = 0;
  for (const auto& s : samples) {
    if (!s.has_polyp()) continue;
    if (auto aug = augment_offline(s, rng, ranges)) {
      out.push_back(std::move(*aug));
    } else {
      ++skipped;
    }
  }
  if (skipped) spdlog::info("offline augmentation skipped {} polyp frames", skipped);
  return out;
}

// ---------------------------------------------------------------------------

Homography homography_from_points(const std::array<std::array<double, 2>, 4>& dst,
                                  const std::array<std::array<double, 2>, 4>& src) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = dst[i][0], y = dst[i][1], X = src[i][0], Y = src[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -x * X, -y * X;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * Y, -y * Y;
    b(2 * i) = X;
    b(2 * i + 1) = Y;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) throw std::invalid_argument("homography_from_points: degenerate point set");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  return {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0};
}

std::optional<Rect> negative_crop_rect(const Image& mask, double min_fraction, std::mt19937_64& rng) {
  const std::size_t W = mask.width, H = mask.height;
  const auto min_side = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(min_fraction * static_cast<double>(std::min(W, H)))));
  const Rect box = mask_bounds(mask).value_or(Rect{W, H, 0, 0});
  // Strips around the box: left, right, top, bottom.
  std::vector<Rect> strips;
  if (box.x0 > 0) strips.push_back({0, 0, std::min(box.x0, W), H});
  if (box.x0 + box.width < W) strips.push_back({box.x0 + box.width, 0, W - box.x0 - box.width, H});
  if (box.y0 > 0) strips.push_back({0, 0, W, std::min(box.y0, H)});
  if (box.y0 + box.height < H) strips.push_back({0, box.y0 + box.height, W, H - box.y0 - box.height});
  std::erase_if(strips, [&](const Rect& s) { return std::min(s.width, s.height) < min_side; });
  if (strips.empty()) return std::nullopt;
  const Rect& s = strips[uniform_index(rng, 0, strips.size() - 1)];
  const std::size_t side = uniform_index(rng, min_side, std::min(s.width, s.height));
  return Rect{s.x0 + uniform_index(rng, 0, s.width - side), s.y0 + uniform_index(rng, 0, s.height - side), side, side};
}

Sample augment_online(const Sample& sample, std::mt19937_64& rng, const OnlineAugmentConfig& cfg) {
  Sample out = sample;
  const std::size_t W = out.frame.width, H = out.frame.height;
  if (bernoulli(rng, cfg.p_negative_crop) && out.has_polyp()) {
    if (auto r = negative_crop_rect(out.mask, cfg.min_crop_fraction, rng)) {
      out.frame = resize(crop(out.frame, r->x0, r->y0, r->width, r->height), W, H, Interp::Bilinear);
      out.mask = resize(crop(out.mask, r->x0, r->y0, r->width, r->height), W, H, Interp::Nearest);
    }
  }
  if (bernoulli(rng, cfg.p_perspective)) {
    const double w1 = static_cast<double>(W) - 1.0, h1 = static_cast<double>(H) - 1.0;
    const std::array<std::array<double, 2>, 4> corners{{{0, 0}, {w1, 0}, {w1, h1}, {0, h1}}};
    auto jittered = corners;
    const double jx = cfg.perspective_jitter * static_cast<double>(W);
    const double jy = cfg.perspective_jitter * static_cast<double>(H);
    for (auto& c : jittered) {
      c[0] += uniform(rng, -jx, jx);
      c[1] += uniform(rng, -jy, jy);
    }
    const Homography h = homography_from_points(corners, jittered);
    out.frame = warp(out.frame, h, W, H, Interp::Bilinear);
    out.mask = warp(out.mask, h, W, H, Interp::Nearest);
  }
  if (bernoulli(rng, cfg.p_hflip)) {
    out.frame = flip_horizontal(out.frame);
    out.mask = flip_horizontal(out.mask);
  }
  if (bernoulli(rng, cfg.p_vflip)) {
    out.frame = flip_vertical(out.frame);
    out.mask = flip_vertical(out.mask);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::vector<const VideoEntry*> DatasetManifest::split(Split s) const {
  std::vector<const VideoEntry*> out;
  for (const auto& v : videos) {
    if (v.split == s) out.push_back(&v);
  }
  return out;
}

std::size_t DatasetManifest::frame_count(Split s) const {
  std::size_t n = 0;
  for (const auto* v : split(s)) n += v->frames.size();
  return n;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : manifest.videos) {
    nlohmann::json frames = nlohmann::json::array(), masks = nlohmann::json::array();
    for (const auto& f : v.frames) frames.push_back(f.generic_string());
    for (const auto& m : v.masks) masks.push_back(m.generic_string());
    videos.push_back({{"id", v.id},
                      {"split", to_string(v.split)},
                      {"has_polyp", v.has_polyp},
                      {"indices", v.indices},
                      {"frames", frames},
                      {"masks", masks}});
  }
  return nlohmann::json{{"videos", videos}}.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& v : j.at("videos")) {
      VideoEntry e;
      e.id = v.at("id").get<std::string>();
      e.split = parse_split(v.at("split").get<std::string>());
      e.has_polyp = v.at("has_polyp").get<bool>();
      e.indices = v.at("indices").get<std::vector<std::size_t>>();
      for (const auto& f : v.at("frames")) e.frames.emplace_back(f.get<std::string>());
      for (const auto& f : v.at("masks")) e.masks.emplace_back(f.get<std::string>());
      if (e.frames.size() != e.masks.size() || e.frames.size() != e.indices.size()) {
        throw DataError("manifest video '" + e.id + "' has unaligned frame/mask lists");
      }
      m.videos.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

namespace {

std::map<std::size_t, fs::path> list_indexed_pngs(const fs::path& dir) {
  std::map<std::size_t, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    std::size_t index = 0;
    const auto [end, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), index);
    if (ec != std::errc{} || end != stem.data() + stem.size()) {
      throw DataError("file name is not a frame index: " + entry.path().string());
    }
    if (!out.emplace(index, entry.path()).second) {
      throw DataError("duplicate frame index " + std::to_string(index) + " in " + dir.string());
    }
  }
  return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image read_mask(const fs::path& path) {
  Image m = read_png(path, 1);
  for (auto& v : m.pixels) v = v > 127 ? 1 : 0;
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root) {
  DatasetManifest manifest;
  if (!fs::is_directory(root) || fs::is_empty(root)) {
    spdlog::warn("dataset root {} is missing or empty", root.string());
    return manifest;
  }
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const fs::path split_dir = root / to_string(split);
    if (!fs::is_directory(split_dir)) continue;
    for (const auto& video_dir : sorted_subdirs(split_dir)) {
      VideoEntry e;
      e.id = video_dir.filename().string();
      e.split = split;
      const fs::path frames_dir = video_dir / "frames", masks_dir = video_dir / "masks";
      if (!fs::is_directory(frames_dir)) throw DataError("video directory without frames/: " + video_dir.string());
      const auto frames = list_indexed_pngs(frames_dir);
      const auto masks = fs::is_directory(masks_dir) ? list_indexed_pngs(masks_dir) : std::map<std::size_t, fs::path>{};

      std::vector<std::string> orphans;
      for (const auto& [i, f] : frames) {
        if (!masks.contains(i)) orphans.push_back("frame without mask: " + f.string());
      }
      for (const auto& [i, m] : masks) {
        if (!frames.contains(i)) orphans.push_back("mask without frame: " + m.string());
      }
      if (!orphans.empty()) {
        std::string msg = "unpaired files in video '" + e.id + "':";
        for (const auto& o : orphans) msg += "\n  " + o;
        throw DataError(msg);
      }
      for (const auto& [i, f] : frames) {
        e.indices.push_back(i);
        e.frames.push_back(fs::relative(f, root));
        e.masks.push_back(fs::relative(masks.at(i), root));
        if (!e.has_polyp) {
          const Image m = read_mask(masks.at(i));
          e.has_polyp = std::any_of(m.pixels.begin(), m.pixels.end(), [](std::uint8_t v) { return v != 0; });
        }
      }
      manifest.videos.push_back(std::move(e));
    }
  }
  if (manifest.videos.empty()) spdlog::warn("no videos found under {}", root.string());
  return manifest;
}

std::vector<Sample> load_samples(const fs::path& root, const DatasetManifest& manifest, Split split) {
  std::vector<Sample> out;
  for (const auto* v : manifest.split(split)) {
    for (std::size_t i = 0; i < v->frames.size(); ++i) {
      Sample s;
      try {
        s.frame = read_png(root / v->frames[i], 3);
        s.mask = read_mask(root / v->masks[i]);
      } catch (const std::runtime_error& ex) {
        throw DataError(ex.what());
      }
      s.video_id = v->id;
      s.frame_index = v->indices[i];
      if (s.frame.width != s.mask.width || s.frame.height != s.mask.height) {
        throw DataError("frame and mask sizes differ: " + (root / v->frames[i]).string());
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<VideoEntry> write_samples(const fs::path& root, Split split, const std::vector<Sample>& samples) {
  std::vector<VideoEntry> videos;
  std::map<std::string, std::size_t> slot;
  for (const auto& s : samples) {
    s.validate();
    auto [it, inserted] = slot.emplace(s.video_id, videos.size());
    if (inserted) {
      VideoEntry e;
      e.id = s.video_id;
      e.split = split;
      videos.push_back(std::move(e));
    }
    VideoEntry& e = videos[it->second];
    if (!e.indices.empty() && s.frame_index <= e.indices.back()) {
      throw std::invalid_argument("write_samples: frame indices of '" + s.video_id + "' are not increasing");
    }
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", s.frame_index);
    const fs::path rel_dir = fs::path(to_string(split)) / s.video_id;
    fs::create_directories(root / rel_dir / "frames");
    fs::create_directories(root / rel_dir / "masks");
    Image mask = s.mask;
    for (auto& v : mask.pixels) v = v ? 255 : 0;
    write_png(root / rel_dir / "frames" / name, s.frame);
    write_png(root / rel_dir / "masks" / name, mask);
    e.indices.push_back(s.frame_index);
    e.frames.push_back(rel_dir / "frames" / name);
    e.masks.push_back(rel_dir / "masks" / name);
    e.has_polyp = e.has_polyp || s.has_polyp();
  }
  return videos;
}

// ---------------------------------------------------------------------------

namespace {

/// Sum of bilinear value-noise octaves with halving amplitude, in [0,1].
std::vector<double> pink_noise(std::size_t size, std::mt19937_64& rng) {
  std::vector<double> out(size * size, 0.0);
  double amplitude = 1.0, total = 0.0;
  for (std::size_t cells = 3; cells <= 24; cells *= 2) {
    std::vector<double> grid((cells + 1) * (cells + 1));
    for (auto& g : grid) g = uniform(rng, 0.0, 1.0);
    const double step = static_cast<double>(cells) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
      const double gy = (static_cast<double>(y) + 0.5) * step;
      const auto iy = std::min(static_cast<std::size_t>(gy), cells - 1);
      const double fy = gy - static_cast<double>(iy);
      for (std::size_t x = 0; x < size; ++x) {
        const double gx = (static_cast<double>(x) + 0.5) * step;
        const auto ix = std::min(static_cast<std::size_t>(gx), cells - 1);
        const double fx = gx - static_cast<double>(ix);
        auto g = [&](std::size_t a, std::size_t b) { return grid[b * (cells + 1) + a]; };
        const double top = g(ix, iy) * (1 - fx) + g(ix + 1, iy) * fx;
        const double bot = g(ix, iy + 1) * (1 - fx) + g(ix + 1, iy + 1) * fx;
        out[y * size + x] += amplitude * (top * (1 - fy) + bot * fy);
      }
    }
    total += amplitude;
    amplitude *= 0.5;
  }
  for (auto& v : out) v /= total;
  return out;
}

struct Ellipse {
  double cx, cy, a, b, angle;

  /// Normalized radius: <= 1 inside.
  double radius(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / a;
    const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / b;
    return std::sqrt(u * u + v * v);
  }
};

struct Scene {
  std::array<double, 3> tint;  // per-video mucosa colour
  std::optional<Ellipse> polyp;
  std::array<double, 3> polyp_tint;
  double vx = 0.0, vy = 0.0;
};

void paint_disc(std::vector<std::array<double, 3>>& rgb, std::size_t size, double cx, double cy, double r,
                const std::array<double, 3>& colour) {
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      if (d > r + 0.5) continue;
      const double w = std::clamp(r + 0.5 - d, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) rgb[y * size + x][c] = (1 - w) * rgb[y * size + x][c] + w * colour[c];
    }
  }
}

Sample render(const Scene& scene, std::size_t size, std::mt19937_64& rng) {
  const auto lum = pink_noise(size, rng);
  const auto hue = pink_noise(size, rng);
  const double s = static_cast<double>(size);
  const double centre = (s - 1.0) / 2.0;
  std::vector<std::array<double, 3>> rgb(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double r = std::hypot(static_cast<double>(x) - centre, static_cast<double>(y) - centre) / (0.5 * s * 1.414);
      const double vignette = 1.0 - 0.5 * r * r;
      const double l = (0.65 + 0.6 * lum[y * size + x]) * vignette;
      const double h = hue[y * size + x] - 0.5;
      rgb[y * size + x] = {scene.tint[0] * l * (1 + 0.1 * h), scene.tint[1] * l * (1 - 0.15 * h),
                           scene.tint[2] * l * (1 - 0.1 * h)};
    }
  }

  // A dark lumen opening in some frames: a non-polyp distractor.
  if (bernoulli(rng, 0.4)) {
    const Ellipse lumen{uniform(rng, 0, s), uniform(rng, 0, s), uniform(rng, 0.08, 0.2) * s,
                        uniform(rng, 0.08, 0.2) * s, uniform(rng, 0, std::numbers::pi)};
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double d = lumen.radius(static_cast<double>(x), static_cast<double>(y));
        const double f = d < 1.0 ? 0.25 + 0.5 * d * d : 1.0;
        for (auto& c : rgb[y * size + x]) c *= f;
      }
    }
  }

  Image mask(size, size, 1);
  if (scene.polyp) {
    const Ellipse& e = *scene.polyp;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double xd = static_cast<double>(x), yd = static_cast<double>(y);
        const double d = e.radius(xd, yd);
        auto& px = rgb[y * size + x];
        if (d <= 1.0) {
          mask.at(x, y) = 1;
          // Dome shading lit from the upper left.
          const double dome = std::sqrt(1.0 - d * d);
          const double lx = (xd - e.cx) / e.a, ly = (yd - e.cy) / e.a;
          const double shade = 0.6 + 0.35 * dome - 0.15 * (lx + ly) / 1.414;
          for (int c = 0; c < 3; ++c) px[c] = scene.polyp_tint[c] * shade;
        } else if (d < 1.25) {
          for (auto& c : px) c *= 0.55 + 0.45 * (d - 1.0) / 0.25;  // contour shadow
        }
      }
    }
    const double off = 0.35;
    paint_disc(rgb, size, e.cx - off * e.a * 0.7, e.cy - off * e.b * 0.7, std::max(0.8, 0.15 * e.b), {1, 1, 1});
  }

  // Specular highlights on the mucosa.
  const std::size_t spots = uniform_index(rng, 0, 3);
  for (std::size_t i = 0; i < spots; ++i) {
    paint_disc(rgb, size, uniform(rng, 0, s), uniform(rng, 0, s), uniform(rng, 0.5, 1.5), {0.97, 0.95, 0.95});
  }

  Image frame(size, size, 3);
  for (std::size_t i = 0; i < size * size; ++i) {
    for (int c = 0; c < 3; ++c) frame.pixels[i * 3 + c] = to_u8(255.0 * rgb[i][c]);
  }
  return Sample{.frame = std::move(frame), .mask = std::move(mask), .video_id = {}, .frame_index = 0};
}

Ellipse random_polyp(std::size_t size, std::mt19937_64& rng) {
  const double s = static_cast<double>(size);
  // Polyp size is its major-axis length, 5-30% of the side.
  const double a = uniform(rng, 0.025, 0.15) * s;
  const double b = a * uniform(rng, 0.55, 1.0);
  const double margin = 0.6 * a;
  return {uniform(rng, margin, s - 1 - margin), uniform(rng, margin, s - 1 - margin), a, b,
          uniform(rng, 0.0, std::numbers::pi)};
}

void drift(Scene& scene, std::size_t size, std::mt19937_64& rng) {
  Ellipse& e = *scene.polyp;
  const double s = static_cast<double>(size);
  const double margin = 0.6 * e.a;
  e.cx += scene.vx;
  e.cy += scene.vy;
  if (e.cx < margin || e.cx > s - 1 - margin) scene.vx = -scene.vx;
  if (e.cy < margin || e.cy > s - 1 - margin) scene.vy = -scene.vy;
  e.cx = std::clamp(e.cx, margin, s - 1 - margin);
  e.cy = std::clamp(e.cy, margin, s - 1 - margin);
  e.angle += uniform(rng, -0.05, 0.05);
  const double grow = uniform(rng, 0.98, 1.02);
  if (e.a * grow <= 0.15 * s && e.b * grow >= 0.025 * s * 0.55) {
    e.a *= grow;
    e.b *= grow;
  }
}

}  // namespace

std::vector<Sample> synthesize_samples(const SynthConfig& cfg) {
  if (!(cfg.polyp_fraction >= 0.0 && cfg.polyp_fraction <= 1.0)) {
    throw std::invalid_argument("polyp_fraction must lie in [0,1]");
  }
  if (cfg.size < 8) throw std::invalid_argument("synthetic frame size must be at least 8");
  if (cfg.frames_per_video == 0) throw std::invalid_argument("frames_per_video must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::size_t polyp_left = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.count) * cfg.polyp_fraction));
  std::size_t negative_left = cfg.count - polyp_left;
  std::vector<Sample> out;
  out.reserve(cfg.count);

  std::size_t video = 0;
  auto new_scene = [&] {
    Scene sc;
    sc.tint = {uniform(rng, 0.75, 0.9), uniform(rng, 0.38, 0.5), uniform(rng, 0.33, 0.45)};
    sc.polyp_tint = {std::min(1.0, sc.tint[0] + uniform(rng, 0.05, 0.12)), sc.tint[1] + uniform(rng, 0.1, 0.2),
                     sc.tint[2] + uniform(rng, 0.02, 0.1)};
    sc.vx = uniform(rng, -1.5, 1.5);
    sc.vy = uniform(rng, -1.5, 1.5);
    return sc;
  };
  auto emit = [&](const Scene& sc, std::size_t index) {
    Sample s = render(sc, cfg.size, rng);
    char id[16];
    std::snprintf(id, sizeof id, "vid%03zu", video);
    s.video_id = id;
    s.frame_index = index;
    out.push_back(std::move(s));
  };

  while (polyp_left > 0) {
    Scene sc = new_scene();
    const std::size_t lead = std::min({cfg.lead_in, negative_left, cfg.frames_per_video - 1});
    const std::size_t polyps = std::min(cfg.frames_per_video - lead, polyp_left);
    std::size_t index = 0;
    for (std::size_t i = 0; i < lead; ++i) emit(sc, index++);
    sc.polyp = random_polyp(cfg.size, rng);
    for (std::size_t i = 0; i < polyps; ++i) {
      emit(sc, index++);
      drift(sc, cfg.size, rng);
    }
    negative_left -= lead;
    polyp_left -= polyps;
    ++video;
  }
  while (negative_left > 0) {
    const Scene sc = new_scene();
    const std::size_t n = std::min(cfg.frames_per_video, negative_left);
    for (std::size_t i = 0; i < n; ++i) emit(sc, i);
    negative_left -= n;
    ++video;
  }
  return out;
}

std::vector<VideoEntry> generate_synthetic(const fs::path& root, Split split, const SynthConfig& cfg) {
  return write_samples(root, split, synthesize_samples(cfg));
}

}  // namespace ynet

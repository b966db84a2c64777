#pragma once

// Slide pyramids on disk, region reads, background filtering and the
// per-criterion window streams.
//
// Pyramid layout: <pyramid_path>/level_<L>/<tx>_<ty>.png, 512-px tiles.
// Level L has dimensions ceil(level0 / 2^L).

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "meningrade/core.hpp"
#include "meningrade/raster.hpp"

namespace meningrade {

inline constexpr int kTileSize = 512;
inline constexpr int kPyramidTopSide = 1024;

inline std::int64_t level_dim(std::int64_t dim0, int level) {
  const std::int64_t f = std::int64_t{1} << level;
  return (dim0 + f - 1) / f;
}

inline std::int64_t tile_count(std::int64_t dim) { return (dim + kTileSize - 1) / kTileSize; }

// Number of levels needed to halve the long side down to <= 1024 px.
inline int pyramid_levels(std::int64_t width, std::int64_t height) {
  int levels = 1;
  while (std::max(level_dim(width, levels - 1), level_dim(height, levels - 1)) > kPyramidTopSide) ++levels;
  return levels;
}

inline std::filesystem::path tile_path(const std::filesystem::path& root, int level, std::int64_t tx,
                                       std::int64_t ty) {
  return root / ("level_" + std::to_string(level)) / (std::to_string(tx) + "_" + std::to_string(ty) + ".png");
}

class PyramidSlide {
 public:
  PyramidSlide(SlideMeta meta, std::filesystem::path root) : meta_(std::move(meta)), root_(std::move(root)) {}

  const SlideMeta& meta() const { return meta_; }
  const std::filesystem::path& root() const { return root_; }

  std::int64_t level_width(int level) const { return level_dim(meta_.width_px, level); }
  std::int64_t level_height(int level) const { return level_dim(meta_.height_px, level); }

  bool has_tile(int level, std::int64_t tx, std::int64_t ty) const {
    if (level < 0 || level >= meta_.levels || tx < 0 || ty < 0) return false;
    return tx < tile_count(level_width(level)) && ty < tile_count(level_height(level));
  }

  std::filesystem::path tile_file(int level, std::int64_t tx, std::int64_t ty) const {
    if (!has_tile(level, tx, ty)) throw Error(ErrorCode::not_found, "no tile at that pyramid address");
    return tile_path(root_, level, tx, ty);
  }

  std::vector<std::uint8_t> tile_bytes(int level, std::int64_t tx, std::int64_t ty) const {
    return read_binary_file(tile_file(level, tx, ty));
  }

  Raster read_tile(int level, std::int64_t tx, std::int64_t ty) const {
    auto r = read_png(tile_file(level, tx, ty));
    if (r.channels != 3) throw Error(ErrorCode::tile_mismatch, "tile is not RGB");
    return r;
  }

  // Checks that the stored tile grid agrees with the metadata at every level.
  void verify() const {
    for (int level = 0; level < meta_.levels; ++level) {
      const auto dir = root_ / ("level_" + std::to_string(level));
      if (!std::filesystem::is_directory(dir))
        throw Error(ErrorCode::tile_mismatch, meta_.slide_id + ": missing " + dir.string());
      const auto lw = level_width(level);
      const auto lh = level_height(level);
      const auto nx = tile_count(lw);
      const auto ny = tile_count(lh);
      for (auto [tx, ty] : {std::pair{std::int64_t{0}, std::int64_t{0}}, std::pair{nx - 1, ny - 1}}) {
        const auto path = tile_path(root_, level, tx, ty);
        if (!std::filesystem::exists(path))
          throw Error(ErrorCode::tile_mismatch, meta_.slide_id + ": missing tile " + path.string());
        const auto [w, h] = png_dimensions(path);
        const auto ew = std::min<std::int64_t>(kTileSize, lw - tx * kTileSize);
        const auto eh = std::min<std::int64_t>(kTileSize, lh - ty * kTileSize);
        if (w != ew || h != eh)
          throw Error(ErrorCode::tile_mismatch, meta_.slide_id + ": tile " + path.string() +
                                                    " has unexpected dimensions");
      }
      if (std::filesystem::exists(tile_path(root_, level, nx, 0)) ||
          std::filesystem::exists(tile_path(root_, level, 0, ny)))
        throw Error(ErrorCode::tile_mismatch, meta_.slide_id + ": more tiles stored than metadata declares");
    }
  }

 private:
  SlideMeta meta_;
  std::filesystem::path root_;
};

// Footprint of a level-0 rect at a pyramid level: floor of the origin, ceil
// of the far edge, clamped to the level.
inline Rect level_footprint(const PyramidSlide& slide, const Rect& rect0, int level) {
  const std::int64_t f = std::int64_t{1} << level;
  const auto x0 = rect0.x / f;
  const auto y0 = rect0.y / f;
  const auto x1 = std::min((rect0.right() + f - 1) / f, slide.level_width(level));
  const auto y1 = std::min((rect0.bottom() + f - 1) / f, slide.level_height(level));
  return {x0, y0, x1 - x0, y1 - y0};
}

// Reads the pixels of a level-0 rect from level `level`. The result has the
// dimensions of level_footprint(slide, rect, level).
inline Raster read_region(const PyramidSlide& slide, const Rect& rect0, int level) {
  if (level < 0 || level >= slide.meta().levels) throw Error(ErrorCode::out_of_range, "level out of range");
  if (!rect0.valid() || !slide.meta().bounds().contains(rect0))
    throw Error(ErrorCode::out_of_range, "region outside slide bounds");
  const auto fp = level_footprint(slide, rect0, level);
  Raster out(static_cast<int>(fp.w), static_cast<int>(fp.h), 3);
  const auto tx0 = fp.x / kTileSize;
  const auto ty0 = fp.y / kTileSize;
  const auto tx1 = (fp.right() - 1) / kTileSize;
  const auto ty1 = (fp.bottom() - 1) / kTileSize;
  for (auto ty = ty0; ty <= ty1; ++ty) {
    for (auto tx = tx0; tx <= tx1; ++tx) {
      const auto tile = slide.read_tile(level, tx, ty);
      const Rect tile_rect{tx * kTileSize, ty * kTileSize, tile.width, tile.height};
      const auto ix0 = std::max(fp.x, tile_rect.x);
      const auto iy0 = std::max(fp.y, tile_rect.y);
      const auto ix1 = std::min(fp.right(), tile_rect.right());
      const auto iy1 = std::min(fp.bottom(), tile_rect.bottom());
      if (ix1 <= ix0 || iy1 <= iy0) continue;
      const auto row_bytes = static_cast<std::size_t>((ix1 - ix0) * 3);
      for (auto y = iy0; y < iy1; ++y) {
        std::copy_n(tile.px(static_cast<int>(ix0 - tile_rect.x), static_cast<int>(y - tile_rect.y)), row_bytes,
                    out.px(static_cast<int>(ix0 - fp.x), static_cast<int>(y - fp.y)));
      }
    }
  }
  return out;
}

struct Case {
  CaseManifest manifest;
  std::filesystem::path manifest_path;
  std::vector<PyramidSlide> slides;

  const PyramidSlide& slide(std::string_view id) const {
    for (const auto& s : slides) {
      if (s.meta().slide_id == id) return s;
    }
    throw Error(ErrorCode::not_found, "unknown slide '" + std::string(id) + "'");
  }
};

inline std::filesystem::path resolve_pyramid(const std::filesystem::path& manifest_path, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = manifest_path.parent_path() / path;
  return path.lexically_normal();
}

inline Case open_case(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorCode::missing_file, "manifest not found: " + manifest_path.string());
  Case c;
  c.manifest_path = std::filesystem::absolute(manifest_path);
  c.manifest = parse_manifest(read_json_file(manifest_path));
  for (const auto& meta : c.manifest.slides) {
    PyramidSlide slide(meta, resolve_pyramid(c.manifest_path, meta.pyramid_path));
    slide.verify();
    c.slides.push_back(std::move(slide));
  }
  return c;
}

// Strictly greater than 240 means background.
inline bool is_background(const Raster& patch) {
  if (patch.empty()) throw Error(ErrorCode::contract, "empty patch");
  return mean_value(patch) > 240.0;
}

// ---------------------------------------------------------------------------
// Window streams

enum class PatchFamily { base_he, mitosis, nucleoli, sheeting, ki67 };

inline std::string_view to_string(PatchFamily f) {
  switch (f) {
    case PatchFamily::base_he: return "base_he";
    case PatchFamily::mitosis: return "mitosis";
    case PatchFamily::nucleoli: return "nucleoli";
    case PatchFamily::sheeting: return "sheeting";
    case PatchFamily::ki67: return "ki67";
  }
  return "";
}

struct WindowSpec {
  int window_px = kTileSize;
  int stride_px = kTileSize;
  std::optional<int> resize_to;
  double scale_mpp = 0.25;
};

inline WindowSpec window_spec(PatchFamily family) {
  switch (family) {
    case PatchFamily::base_he: return {512, 512, std::nullopt, 0.25};
    case PatchFamily::mitosis: return {240, 120, std::nullopt, 0.25};
    case PatchFamily::nucleoli: return {96, 96, std::nullopt, 0.25};
    case PatchFamily::sheeting: return {512, 512, 224, 0.5};
    case PatchFamily::ki67: return {512, 512, std::nullopt, 0.5};
  }
  return {};
}

struct PatchRef {
  std::string slide_id;
  Rect rect;
  PatchFamily family = PatchFamily::base_he;

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

// Pyramid level whose resolution equals the window scale. Only power-of-two
// ratios between the scale and the slide's level-0 mpp are supported.
inline int level_for_scale(const SlideMeta& meta, double scale_mpp) {
  const double ratio = scale_mpp / meta.mpp;
  const double lg = std::log2(ratio);
  const int level = static_cast<int>(std::lround(lg));
  if (ratio < 1.0 - 1e-9 || std::abs(lg - level) > 1e-6)
    throw Error(ErrorCode::unsupported, meta.slide_id + ": window scale is not a power-of-two multiple of mpp");
  if (level >= meta.levels) throw Error(ErrorCode::unsupported, meta.slide_id + ": pyramid lacks a level for scale");
  return level;
}

// Row-major origins at multiples of the stride; windows that do not fit
// entirely inside the node are skipped.
inline std::vector<Rect> enumerate_windows(const Rect& node, std::int64_t window, std::int64_t stride) {
  if (window < 1 || stride < 1) throw Error(ErrorCode::contract, "window and stride must be positive");
  std::vector<Rect> out;
  for (auto y = node.y; y + window <= node.bottom(); y += stride) {
    for (auto x = node.x; x + window <= node.right(); x += stride) out.push_back({x, y, window, window});
  }
  return out;
}

// Level-0 window rects for a spec over every node, in node order.
inline std::vector<Rect> enumerate_windows(const SlideMeta& meta, const WindowSpec& spec,
                                           const std::vector<Rect>& nodes) {
  const auto f = std::int64_t{1} << level_for_scale(meta, spec.scale_mpp);
  std::vector<Rect> out;
  for (const auto& node : nodes) {
    auto w = enumerate_windows(node, spec.window_px * f, spec.stride_px * f);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

// Foreground patches of a family: windows read at the family's scale and
// filtered by is_background.
inline std::vector<PatchRef> iter_patches(const PyramidSlide& slide, const WindowSpec& spec,
                                          const std::vector<Rect>& nodes, PatchFamily family) {
  const int level = level_for_scale(slide.meta(), spec.scale_mpp);
  std::vector<PatchRef> out;
  for (const auto& rect : enumerate_windows(slide.meta(), spec, nodes)) {
    if (is_background(read_region(slide, rect, level))) continue;
    out.push_back({slide.meta().slide_id, rect, family});
  }
  return out;
}

// Antialiased bilinear (triangle filter) downsampling of a square patch.
inline Raster resize_patch(const Raster& patch, int target_px) {
  if (patch.empty() || patch.width != patch.height) throw Error(ErrorCode::contract, "resize needs a square patch");
  if (target_px < 1) throw Error(ErrorCode::contract, "target must be positive");
  if (target_px > patch.width) throw Error(ErrorCode::unsupported, "upscaling is not supported");
  if (target_px == patch.width) return patch;

  const int src = patch.width;
  const int c = patch.channels;
  const double scale = static_cast<double>(src) / target_px;
  struct Taps {
    int first = 0;
    std::vector<double> w;
  };
  std::vector<Taps> taps(static_cast<std::size_t>(target_px));
  for (int i = 0; i < target_px; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - scale)));
    const int hi = std::min(src, static_cast<int>(std::ceil(center + scale)));
    auto& t = taps[static_cast<std::size_t>(i)];
    t.first = lo;
    double total = 0.0;
    for (int j = lo; j < hi; ++j) {
      const double wgt = std::max(0.0, 1.0 - std::abs((j + 0.5) - center) / scale);
      t.w.push_back(wgt);
      total += wgt;
    }
    for (auto& wgt : t.w) wgt /= total;
  }

  std::vector<double> horiz(static_cast<std::size_t>(target_px) * src * c, 0.0);
  for (int y = 0; y < src; ++y) {
    for (int i = 0; i < target_px; ++i) {
      const auto& t = taps[static_cast<std::size_t>(i)];
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.w.size(); ++k) acc += t.w[k] * patch.px(t.first + static_cast<int>(k), y)[ch];
        horiz[(static_cast<std::size_t>(y) * target_px + i) * c + ch] = acc;
      }
    }
  }
  Raster out(target_px, target_px, c);
  for (int j = 0; j < target_px; ++j) {
    const auto& t = taps[static_cast<std::size_t>(j)];
    for (int i = 0; i < target_px; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.w.size(); ++k)
          acc += t.w[k] * horiz[((t.first + k) * static_cast<std::size_t>(target_px) + i) * c + ch];
        out.px(i, j)[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace meningrade

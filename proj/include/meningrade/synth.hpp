#pragma once

// Synthetic case generator: procedural H&E (and optional Ki-67) pyramids with
// planted findings, the matching oracle annotation files and a bindings file.

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "meningrade/core.hpp"
#include "meningrade/detectors.hpp"
#include "meningrade/raster.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

struct SynthParams {
  std::uint64_t seed = 42;
  std::string case_id;            // default synth-<seed>
  std::int64_t node_size = 8192;  // multiple of 512
  std::int64_t margin = 512;
  std::int64_t slide_size = 0;    // 0: node_size + 2 * margin
  double mpp = 0.25;
  // Mitoses, all inside one cell-aligned HPF.
  int mitoses = 0;
  std::int64_t mitosis_spacing = 48;
  std::int64_t hpf_px = 2000;
  std::int64_t cell_px = 400;
  // Nuclei per 512-px patch.
  int nuclei_per_patch = 60;
  int small_cell_patches = 0;
  int small_cell_nuclei = 130;
  int brain_columns = 0;  // rightmost patch columns with brain-like density
  int brain_nuclei = 30;
  int necrosis = 0;       // washed-out regions
  int sheeting = 0;       // flat-texture regions
  int nucleoli = 0;       // dark specks
  bool ki67 = false;
  double ki67_positive_fraction = 0.1;
};

inline void to_json(json& j, const SynthParams& p) {
  j = json{{"seed", p.seed}, {"case_id", p.case_id}, {"node_size", p.node_size}, {"margin", p.margin},
           {"slide_size", p.slide_size}, {"mpp", p.mpp}, {"mitoses", p.mitoses},
           {"mitosis_spacing", p.mitosis_spacing}, {"hpf_px", p.hpf_px}, {"cell_px", p.cell_px},
           {"nuclei_per_patch", p.nuclei_per_patch}, {"small_cell_patches", p.small_cell_patches},
           {"small_cell_nuclei", p.small_cell_nuclei}, {"brain_columns", p.brain_columns},
           {"brain_nuclei", p.brain_nuclei}, {"necrosis", p.necrosis}, {"sheeting", p.sheeting},
           {"nucleoli", p.nucleoli}, {"ki67", p.ki67}, {"ki67_positive_fraction", p.ki67_positive_fraction}};
}

inline void from_json(const json& j, SynthParams& p) {
  SynthParams d;
  p.seed = j.value("seed", d.seed);
  p.case_id = j.value("case_id", d.case_id);
  p.node_size = j.value("node_size", d.node_size);
  p.margin = j.value("margin", d.margin);
  p.slide_size = j.value("slide_size", d.slide_size);
  p.mpp = j.value("mpp", d.mpp);
  p.mitoses = j.value("mitoses", d.mitoses);
  p.mitosis_spacing = j.value("mitosis_spacing", d.mitosis_spacing);
  p.hpf_px = j.value("hpf_px", d.hpf_px);
  p.cell_px = j.value("cell_px", d.cell_px);
  p.nuclei_per_patch = j.value("nuclei_per_patch", d.nuclei_per_patch);
  p.small_cell_patches = j.value("small_cell_patches", d.small_cell_patches);
  p.small_cell_nuclei = j.value("small_cell_nuclei", d.small_cell_nuclei);
  p.brain_columns = j.value("brain_columns", d.brain_columns);
  p.brain_nuclei = j.value("brain_nuclei", d.brain_nuclei);
  p.necrosis = j.value("necrosis", d.necrosis);
  p.sheeting = j.value("sheeting", d.sheeting);
  p.nucleoli = j.value("nucleoli", d.nucleoli);
  p.ki67 = j.value("ki67", d.ki67);
  p.ki67_positive_fraction = j.value("ki67_positive_fraction", d.ki67_positive_fraction);
}

struct SynthResult {
  std::filesystem::path manifest;
  std::filesystem::path bindings;
  CaseManifest case_manifest;
  std::vector<AnnotationDoc> annotations;
  std::optional<Rect> mitosis_hpf;
};

namespace synth {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Portable integer draws; std distributions differ between libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return splitmix(state_++ * 0x2545F4914F6CDD1Dull + 0x1234567ull); }
  std::int64_t uniform(std::int64_t lo, std::int64_t hi) {  // [lo, hi]
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<std::int64_t>(next() % span);
  }
  double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }

 private:
  std::uint64_t state_;
};

enum class Shape { ellipse, disc, square };

struct Stamp {
  Rect box;
  Shape shape = Shape::disc;
  std::array<std::uint8_t, 3> color{};
};

struct SlidePlan {
  SlideMeta meta;
  std::uint64_t noise_seed = 0;
  std::array<int, 3> tissue{219, 165, 201};
  int whorl = 14;
  int grain = 8;
  std::vector<Rect> washed;  // necrosis
  std::vector<Rect> flat;    // sheeting
  std::vector<Stamp> stamps;
  std::int64_t tiles_x = 0;
  std::vector<std::vector<std::size_t>> by_tile;

  void index() {
    tiles_x = tile_count(meta.width_px);
    const auto ty = tile_count(meta.height_px);
    by_tile.assign(static_cast<std::size_t>(tiles_x * ty), {});
    for (std::size_t i = 0; i < stamps.size(); ++i) {
      const auto& b = stamps[i].box;
      for (auto y = b.y / kTileSize; y <= (b.bottom() - 1) / kTileSize; ++y)
        for (auto x = b.x / kTileSize; x <= (b.right() - 1) / kTileSize; ++x)
          by_tile[static_cast<std::size_t>(y * tiles_x + x)].push_back(i);
    }
  }
};

inline bool in_any(const std::vector<Rect>& rs, std::int64_t x, std::int64_t y) {
  for (const auto& r : rs)
    if (x >= r.x && x < r.right() && y >= r.y && y < r.bottom()) return true;
  return false;
}

inline std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

inline Raster render_level0_tile(const SlidePlan& plan, std::int64_t tx, std::int64_t ty) {
  const auto& m = plan.meta;
  const int w = static_cast<int>(std::min<std::int64_t>(kTileSize, m.width_px - tx * kTileSize));
  const int h = static_cast<int>(std::min<std::int64_t>(kTileSize, m.height_px - ty * kTileSize));
  Raster r(w, h, 3);
  const Rect tile{tx * kTileSize, ty * kTileSize, w, h};
  bool tissue_here = false;
  for (const auto& n : m.nodes) tissue_here = tissue_here || n.intersects(tile);
  std::fill(r.data.begin(), r.data.end(), std::uint8_t{246});
  if (!tissue_here) return r;
  // whorl = sin(0.05 x + 3 sin(0.01 y)), expanded so rows and columns factor
  std::vector<double> sx(static_cast<std::size_t>(w)), cx(static_cast<std::size_t>(w));
  for (int x = 0; x < w; ++x) {
    sx[static_cast<std::size_t>(x)] = std::sin(0.05 * static_cast<double>(tile.x + x));
    cx[static_cast<std::size_t>(x)] = std::cos(0.05 * static_cast<double>(tile.x + x));
  }
  for (int y = 0; y < h; ++y) {
    const auto gy = tile.y + y;
    const double phase = 3.0 * std::sin(0.01 * static_cast<double>(gy));
    const double cp = std::cos(phase), sp = std::sin(phase);
    for (int x = 0; x < w; ++x) {
      const auto gx = tile.x + x;
      if (!in_any(m.nodes, gx, gy)) continue;
      auto* p = r.px(x, y);
      const auto hsh = splitmix(plan.noise_seed ^ (static_cast<std::uint64_t>(gx) * 0x9E3779B1ull) ^
                                (static_cast<std::uint64_t>(gy) << 32));
      if (in_any(plan.washed, gx, gy)) {
        const int n = static_cast<int>(hsh % 13) - 6;
        p[0] = clamp8(200 + n);
        p[1] = clamp8(192 + n);
        p[2] = clamp8(196 + n);
      } else if (in_any(plan.flat, gx, gy)) {
        const int n = static_cast<int>(hsh % 5) - 2;
        p[0] = clamp8(205 + n);
        p[1] = clamp8(150 + n);
        p[2] = clamp8(188 + n);
      } else {
        const int n = static_cast<int>(hsh % static_cast<std::uint64_t>(2 * plan.grain + 1)) - plan.grain;
        const auto ux = static_cast<std::size_t>(x);
        const double s = sx[ux] * cp + cx[ux] * sp;
        const int wv = static_cast<int>(std::lround(plan.whorl * s));
        for (int c = 0; c < 3; ++c) p[c] = clamp8(plan.tissue[static_cast<std::size_t>(c)] + n + wv);
      }
    }
  }
  for (auto idx : plan.by_tile[static_cast<std::size_t>(ty * plan.tiles_x + tx)]) {
    const auto& st = plan.stamps[idx];
    const auto& b = st.box;
    const double cx = static_cast<double>(b.x) + static_cast<double>(b.w) / 2.0;
    const double cy = static_cast<double>(b.y) + static_cast<double>(b.h) / 2.0;
    const double rx = static_cast<double>(b.w) / 2.0, ry = static_cast<double>(b.h) / 2.0;
    const auto x0 = std::max(b.x, tile.x), x1 = std::min(b.right(), tile.right());
    const auto y0 = std::max(b.y, tile.y), y1 = std::min(b.bottom(), tile.bottom());
    for (auto gy = y0; gy < y1; ++gy) {
      for (auto gx = x0; gx < x1; ++gx) {
        if (st.shape != Shape::square) {
          const double dx = (static_cast<double>(gx) + 0.5 - cx) / rx;
          const double dy = (static_cast<double>(gy) + 0.5 - cy) / ry;
          if (dx * dx + dy * dy > 1.0) continue;
        }
        auto* p = r.px(static_cast<int>(gx - tile.x), static_cast<int>(gy - tile.y));
        p[0] = st.color[0];
        p[1] = st.color[1];
        p[2] = st.color[2];
      }
    }
  }
  return r;
}

// 2x2 box average of the level below; odd edges average what exists.
inline Raster downsample_tile(const std::filesystem::path& root, const SlideMeta& m, int level, std::int64_t tx,
                              std::int64_t ty) {
  const auto lw = level_dim(m.width_px, level), lh = level_dim(m.height_px, level);
  const auto cw = level_dim(m.width_px, level - 1), ch = level_dim(m.height_px, level - 1);
  const int w = static_cast<int>(std::min<std::int64_t>(kTileSize, lw - tx * kTileSize));
  const int h = static_cast<int>(std::min<std::int64_t>(kTileSize, lh - ty * kTileSize));
  Raster out(w, h, 3);
  Raster child[2][2];
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      const auto cx = 2 * tx + i, cy = 2 * ty + j;
      if (cx < tile_count(cw) && cy < tile_count(ch)) child[j][i] = read_png(tile_path(root, level - 1, cx, cy));
    }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sum[3] = {0, 0, 0};
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;  // within the 1024 child block
          const auto& c = child[sy / kTileSize][sx / kTileSize];
          const int lx = sx % kTileSize, ly = sy % kTileSize;
          if (c.empty() || lx >= c.width || ly >= c.height) continue;
          const auto* p = c.px(lx, ly);
          for (int k = 0; k < 3; ++k) sum[k] += p[k];
          ++n;
        }
      }
      auto* o = out.px(x, y);
      for (int k = 0; k < 3; ++k) o[k] = static_cast<std::uint8_t>((sum[k] + n / 2) / std::max(1, n));
    }
  }
  return out;
}

inline void write_pyramid(const SlidePlan& plan, const std::filesystem::path& root) {
  std::filesystem::remove_all(root);
  const auto& m = plan.meta;
  std::filesystem::create_directories(root / "level_0");
  for (std::int64_t ty = 0; ty < tile_count(m.height_px); ++ty)
    for (std::int64_t tx = 0; tx < tile_count(m.width_px); ++tx)
      write_png(tile_path(root, 0, tx, ty), render_level0_tile(plan, tx, ty));
  for (int level = 1; level < m.levels; ++level) {
    std::filesystem::create_directories(root / ("level_" + std::to_string(level)));
    for (std::int64_t ty = 0; ty < tile_count(level_dim(m.height_px, level)); ++ty)
      for (std::int64_t tx = 0; tx < tile_count(level_dim(m.width_px, level)); ++tx)
        write_png(tile_path(root, level, tx, ty), downsample_tile(root, m, level, tx, ty));
  }
}

inline Rect random_rect_in(Rng& rng, const Rect& area, std::int64_t w, std::int64_t h) {
  w = std::min(w, area.w);
  h = std::min(h, area.h);
  return {rng.uniform(area.x, area.right() - w), rng.uniform(area.y, area.bottom() - h), w, h};
}

// Nuclei inside one patch, centroids strictly inside it.
inline void plant_nuclei(Rng& rng, const Rect& patch, int n, std::vector<Stamp>& stamps,
                         std::vector<AnnotationObject>& objs, CriterionKind layer,
                         const std::function<std::pair<std::array<std::uint8_t, 3>, std::string>(Rng&)>& style) {
  for (int i = 0; i < n; ++i) {
    const auto r = rng.uniform(3, 5);
    const auto cx = rng.uniform(patch.x + r, patch.right() - r - 1);
    const auto cy = rng.uniform(patch.y + r, patch.bottom() - r - 1);
    const Rect box{cx - r, cy - r, 2 * r + 1, 2 * r + 1};
    auto [color, label] = style(rng);
    stamps.push_back({box, Shape::disc, color});
    objs.push_back({layer, {box.center().x, box.center().y, 1, 1}, true, label});
  }
}

}  // namespace synth

// Writes <out>/manifest.json, bindings.json, annotations/ and slides/.
inline SynthResult generate_case(const SynthParams& p, const std::filesystem::path& out) {
  using namespace synth;
  if (p.node_size <= 0 || p.node_size % kTileSize != 0)
    throw Error(ErrorCode::validation, "node_size must be a positive multiple of 512");
  if (p.margin < 0 || p.margin % kTileSize != 0) throw Error(ErrorCode::validation, "margin must be a multiple of 512");
  const auto side = p.slide_size > 0 ? p.slide_size : p.node_size + 2 * p.margin;
  if (side < p.node_size + p.margin) throw Error(ErrorCode::validation, "slide too small for the node");
  Rng rng(p.seed);
  SynthResult res;
  CaseManifest manifest;
  manifest.case_id = p.case_id.empty() ? "synth-" + std::to_string(p.seed) : p.case_id;
  const Rect node{p.margin, p.margin, p.node_size, p.node_size};

  auto base_meta = [&](const std::string& id, Stain stain) {
    SlideMeta m;
    m.slide_id = id;
    m.stain = stain;
    m.width_px = side;
    m.height_px = side;
    m.mpp = p.mpp;
    m.levels = pyramid_levels(side, side);
    m.pyramid_path = "slides/" + id;
    m.nodes = {node};
    return m;
  };

  // H&E slide
  SlidePlan he;
  he.meta = base_meta(manifest.case_id + "-HE", Stain::HE);
  he.noise_seed = splitmix(p.seed ^ 0xAB);
  AnnotationDoc he_doc{he.meta.slide_id, {}};

  for (int i = 0; i < p.necrosis; ++i) {
    const auto r = random_rect_in(rng, node, 768, 768);
    he.washed.push_back(r);
    he_doc.objects.push_back({CriterionKind::Necrosis, r, false, "necrosis"});
  }
  for (int i = 0; i < p.sheeting; ++i) {
    const auto r = random_rect_in(rng, node, 1536, 1536);
    he.flat.push_back(r);
    he_doc.objects.push_back({CriterionKind::Sheeting, r, false, "sheeting"});
  }

  // Nuclei per base patch.
  const auto cols = node.w / kTileSize, rows = node.h / kTileSize;
  std::vector<std::int64_t> order(static_cast<std::size_t>(cols * rows));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform(0, static_cast<std::int64_t>(i) - 1))]);
  std::set<std::int64_t> small_cell(order.begin(),
                                    order.begin() + std::min<std::int64_t>(p.small_cell_patches, cols * rows));
  const auto he_style = [](Rng&) { return std::pair{std::array<std::uint8_t, 3>{110, 80, 170}, std::string("nucleus")}; };
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const Rect patch{node.x + c * kTileSize, node.y + r * kTileSize, kTileSize, kTileSize};
      bool flat = false;
      for (const auto& f : he.flat) flat = flat || f.contains(patch.center());
      if (flat) continue;
      int n = p.nuclei_per_patch;
      if (c >= cols - p.brain_columns) n = p.brain_nuclei;
      if (small_cell.count(r * cols + c)) n = p.small_cell_nuclei;
      plant_nuclei(rng, patch, n, he.stamps, he_doc.objects, CriterionKind::Hypercellularity, he_style);
    }
  }

  // Nucleoli stay out of the band past the last 96-px sub-window of a patch.
  for (int i = 0; i < p.nucleoli; ++i) {
    Rect r;
    do {
      r = random_rect_in(rng, node, 5, 5);
    } while ((r.x - node.x) % kTileSize > 470 || (r.y - node.y) % kTileSize > 470);
    he.stamps.push_back({r, Shape::square, {15, 10, 30}});
    he_doc.objects.push_back({CriterionKind::ProminentNucleoli, r, false, "nucleolus"});
  }

  // Mitoses: one cell-aligned HPF; each figure sits in the part of its base
  // patch that the mitosis sub-windows cover.
  if (p.mitoses > 0) {
    const auto first = (node.x + p.cell_px - 1) / p.cell_px;
    const auto last = (node.right() - p.hpf_px) / p.cell_px;
    if (last < first) throw Error(ErrorCode::validation, "node too small for a mitosis HPF");
    const Rect hpf{rng.uniform(first, last) * p.cell_px, rng.uniform(first, last) * p.cell_px, p.hpf_px, p.hpf_px};
    res.mitosis_hpf = hpf;
    const std::int64_t mw = 24, mh = 18;
    std::vector<Point> centers;
    int attempts = 0;
    while (static_cast<int>(centers.size()) < p.mitoses) {
      if (++attempts > 200000) throw Error(ErrorCode::validation, "cannot place that many mitoses in one HPF");
      const Point c{rng.uniform(hpf.x + mw, hpf.right() - mw), rng.uniform(hpf.y + mh, hpf.bottom() - mh)};
      const auto lx = (c.x - node.x) % kTileSize, ly = (c.y - node.y) % kTileSize;
      if (lx < 16 + mw / 2 || lx > 460 - mw / 2 || ly < 16 + mh / 2 || ly > 460 - mh / 2) continue;
      bool close = false;
      for (const auto& o : centers)
        close = close || std::hypot(static_cast<double>(o.x - c.x), static_cast<double>(o.y - c.y)) <
                             static_cast<double>(p.mitosis_spacing);
      if (close) continue;
      centers.push_back(c);
    }
    for (const auto& c : centers) {
      const Rect box{c.x - mw / 2, c.y - mh / 2, mw, mh};
      he.stamps.push_back({box, Shape::ellipse, {40, 30, 60}});
      he_doc.objects.push_back({CriterionKind::MitoticCount, box, false, "mitosis"});
    }
  }
  he.index();
  manifest.slides.push_back(he.meta);
  res.annotations.push_back(he_doc);
  write_pyramid(he, out / he.meta.pyramid_path);

  Pairing pairing{he.meta.slide_id, std::nullopt};
  if (p.ki67) {
    SlidePlan k;
    k.meta = base_meta(manifest.case_id + "-KI67", Stain::KI67);
    k.noise_seed = splitmix(p.seed ^ 0xCD);
    k.tissue = {205, 198, 214};
    AnnotationDoc k_doc{k.meta.slide_id, {}};
    const auto frac = p.ki67_positive_fraction;
    const auto style = [frac](Rng& g) {
      return g.unit() < frac ? std::pair{std::array<std::uint8_t, 3>{150, 90, 60}, std::string("positive")}
                             : std::pair{std::array<std::uint8_t, 3>{90, 90, 170}, std::string("negative")};
    };
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c)
        plant_nuclei(rng, {node.x + c * kTileSize, node.y + r * kTileSize, kTileSize, kTileSize}, p.nuclei_per_patch,
                     k.stamps, k_doc.objects, CriterionKind::Ki67Index, style);
    k.index();
    manifest.slides.push_back(k.meta);
    res.annotations.push_back(k_doc);
    write_pyramid(k, out / k.meta.pyramid_path);
    pairing.ki67 = k.meta.slide_id;
  }
  manifest.pairings.push_back(pairing);
  validate(manifest);

  std::filesystem::create_directories(out / "annotations");
  for (const auto& doc : res.annotations)
    write_text_file(out / "annotations" / (doc.slide_id + ".json"), json(doc).dump() + "\n");
  res.manifest = out / "manifest.json";
  write_text_file(res.manifest, json(manifest).dump(2) + "\n");

  std::vector<DetectorBinding> bindings;
  for (auto kind : kAiCriteria) bindings.push_back({kind, DetectorKind::oracle_annotation, "annotations"});
  res.bindings = out / "bindings.json";
  write_text_file(res.bindings, bindings_to_json(bindings).dump(2) + "\n");
  json truth{{"params", p}, {"case_id", manifest.case_id}};
  truth["mitosis_hpf"] = res.mitosis_hpf ? json(*res.mitosis_hpf) : json(nullptr);
  write_text_file(out / "truth.json", truth.dump(2) + "\n");
  res.case_manifest = std::move(manifest);
  return res;
}

}  // namespace meningrade

#pragma once

// Spatial aggregation of detections and nuclei counts: count grids, O(1)
// window sums, highest-region searches, heatmaps, recommenders and the
// per-criterion evidence lists.

#include <algorithm>
#include <functional>
#include <numeric>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "meningrade/config.hpp"
#include "meningrade/core.hpp"
#include "meningrade/detectors.hpp"
#include "meningrade/raster.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

// Window over grid cells.
struct CellWindow {
  std::int64_t row = 0;
  std::int64_t col = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  bool contains_cell(std::int64_t r, std::int64_t c) const {
    return r >= row && r < row + rows && c >= col && c < col + cols;
  }
  friend bool operator==(const CellWindow&, const CellWindow&) = default;
};

struct CountGrid {
  std::string slide_id;
  std::int64_t cell_px = 1;
  Rect origin;  // level-0 area the grid covers; cells start at origin.x/y
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::int64_t> cells;

  CountGrid() = default;
  CountGrid(std::string slide, std::int64_t cell, Rect area)
      : slide_id(std::move(slide)), cell_px(cell), origin(area) {
    if (cell < 1) throw Error(ErrorCode::contract, "cell size must be positive");
    rows = (area.h + cell - 1) / cell;
    cols = (area.w + cell - 1) / cell;
    cells.assign(static_cast<std::size_t>(rows * cols), 0);
  }

  static CountGrid from_rows(const std::vector<std::vector<std::int64_t>>& values, std::int64_t cell = 1) {
    CountGrid g;
    g.cell_px = cell;
    g.rows = static_cast<std::int64_t>(values.size());
    g.cols = values.empty() ? 0 : static_cast<std::int64_t>(values.front().size());
    g.origin = {0, 0, g.cols * cell, g.rows * cell};
    for (const auto& r : values) g.cells.insert(g.cells.end(), r.begin(), r.end());
    return g;
  }

  std::int64_t& at(std::int64_t r, std::int64_t c) { return cells[static_cast<std::size_t>(r * cols + c)]; }
  std::int64_t at(std::int64_t r, std::int64_t c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }

  std::int64_t total() const { return std::accumulate(cells.begin(), cells.end(), std::int64_t{0}); }
  bool empty() const { return rows == 0 || cols == 0; }

  // Cell of a level-0 point, if inside the covered area.
  std::optional<std::pair<std::int64_t, std::int64_t>> cell_of(Point p) const {
    if (!origin.contains(p)) return std::nullopt;
    return std::pair{(p.y - origin.y) / cell_px, (p.x - origin.x) / cell_px};
  }

  bool add(Point p, std::int64_t weight = 1) {
    const auto c = cell_of(p);
    if (!c) return false;
    at(c->first, c->second) += weight;
    return true;
  }

  // Level-0 rect of a cell window, clipped to the covered area.
  Rect window_rect(const CellWindow& w) const {
    const auto x = origin.x + w.col * cell_px;
    const auto y = origin.y + w.row * cell_px;
    const auto r = std::min(origin.right(), x + w.cols * cell_px);
    const auto b = std::min(origin.bottom(), y + w.rows * cell_px);
    return {x, y, r - x, b - y};
  }
};

inline std::int64_t grid_cell_px(const Config& cfg, double mpp) { return um_to_px(cfg.cell_um(), mpp); }

// Bins detections by bbox center. `include` decides which statuses count.
inline CountGrid build_count_grid(const std::vector<Detection>& detections, const std::string& slide_id,
                                  const Rect& area, std::int64_t cell_px,
                                  const std::function<bool(const Detection&)>& include) {
  CountGrid g(slide_id, cell_px, area);
  for (const auto& d : detections) {
    if (d.slide_id != slide_id || !include(d)) continue;
    g.add(d.bbox.center());
  }
  return g;
}

// Default inclusion: only effective detections (not declined or uncertain).
inline CountGrid build_count_grid(const std::vector<Detection>& detections, const std::string& slide_id,
                                  const Rect& area, std::int64_t cell_px) {
  return build_count_grid(detections, slide_id, area, cell_px, [](const Detection& d) {
    return d.status == ReviewStatus::unreviewed || d.status == ReviewStatus::approved;
  });
}

inline CountGrid build_count_grid(const std::vector<Point>& points, const std::string& slide_id, const Rect& area,
                                  std::int64_t cell_px) {
  CountGrid g(slide_id, cell_px, area);
  for (const auto& p : points) g.add(p);
  return g;
}

// Summed-area table with a zero border row and column.
class IntegralGrid {
 public:
  explicit IntegralGrid(const CountGrid& g) : rows_(g.rows), cols_(g.cols) {
    table_.assign(static_cast<std::size_t>((rows_ + 1) * (cols_ + 1)), 0);
    for (std::int64_t r = 0; r < rows_; ++r) {
      std::int64_t run = 0;
      for (std::int64_t c = 0; c < cols_; ++c) {
        run += g.at(r, c);
        t(r + 1, c + 1) = t(r, c + 1) + run;
      }
    }
  }

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }

  std::int64_t window_sum(const CellWindow& w) const {
    if (w.row < 0 || w.col < 0 || w.rows < 0 || w.cols < 0 || w.row + w.rows > rows_ || w.col + w.cols > cols_)
      throw Error(ErrorCode::out_of_range, "window outside grid");
    return t(w.row + w.rows, w.col + w.cols) - t(w.row, w.col + w.cols) - t(w.row + w.rows, w.col) + t(w.row, w.col);
  }

 private:
  std::int64_t& t(std::int64_t r, std::int64_t c) { return table_[static_cast<std::size_t>(r * (cols_ + 1) + c)]; }
  std::int64_t t(std::int64_t r, std::int64_t c) const {
    return table_[static_cast<std::size_t>(r * (cols_ + 1) + c)];
  }

  std::int64_t rows_;
  std::int64_t cols_;
  std::vector<std::int64_t> table_;
};

inline std::int64_t window_sum(const IntegralGrid& g, const CellWindow& w) { return g.window_sum(w); }

enum class SampleKind { focal_1hpf, region_10hpf };

inline std::string_view to_string(SampleKind k) {
  return k == SampleKind::focal_1hpf ? "focal_1hpf" : "region_10hpf";
}

struct RegionSample {
  std::string slide_id;
  SampleKind kind = SampleKind::focal_1hpf;
  CellWindow window;
  Rect rect;
  std::int64_t count = 0;
  std::optional<Ki67Index> ki67;
  bool degenerate = false;      // window clipped to a grid smaller than it
  bool not_applicable = false;  // no window qualified
  std::vector<std::string> member_detections;

  double value() const { return ki67 ? ki67->percent() : static_cast<double>(count); }
};

// Window shapes (rows, cols) searched in order; ties keep the earliest shape,
// then the row-major first placement.
inline RegionSample best_count_window(const CountGrid& g, const std::vector<std::pair<std::int64_t, std::int64_t>>& shapes,
                                      SampleKind kind) {
  RegionSample s;
  s.slide_id = g.slide_id;
  s.kind = kind;
  if (g.empty()) {
    s.degenerate = true;
    s.rect = {g.origin.x, g.origin.y, 0, 0};
    return s;
  }
  const IntegralGrid ig(g);
  bool found = false;
  for (auto [h, w] : shapes) {
    const auto wh = std::min(h, g.rows);
    const auto ww = std::min(w, g.cols);
    const bool clipped = wh < h || ww < w;
    for (std::int64_t r = 0; r + wh <= g.rows; ++r) {
      for (std::int64_t c = 0; c + ww <= g.cols; ++c) {
        const CellWindow win{r, c, wh, ww};
        const auto v = ig.window_sum(win);
        if (!found || v > s.count) {
          found = true;
          s.count = v;
          s.window = win;
          s.degenerate = clipped;
        }
      }
    }
  }
  s.rect = g.window_rect(s.window);
  return s;
}

inline RegionSample highest_focal_region(const CountGrid& g, std::int64_t hpf_cells) {
  return best_count_window(g, {{hpf_cells, hpf_cells}}, SampleKind::focal_1hpf);
}

// 2x5 HPF block in either orientation; height-2 orientation wins ties.
inline RegionSample highest_region(const CountGrid& g, std::int64_t hpf_cells) {
  return best_count_window(g, {{2 * hpf_cells, 5 * hpf_cells}, {5 * hpf_cells, 2 * hpf_cells}},
                           SampleKind::region_10hpf);
}

// Highest positive fraction over windows holding at least `min_total` nuclei.
inline RegionSample best_ki67_window(const CountGrid& pos, const CountGrid& total,
                                     const std::vector<std::pair<std::int64_t, std::int64_t>>& shapes,
                                     std::int64_t min_total, SampleKind kind) {
  if (pos.rows != total.rows || pos.cols != total.cols) throw Error(ErrorCode::contract, "grids are not congruent");
  RegionSample s;
  s.slide_id = total.slide_id;
  s.kind = kind;
  s.not_applicable = true;
  if (total.empty()) {
    s.degenerate = true;
    s.rect = {total.origin.x, total.origin.y, 0, 0};
    return s;
  }
  const IntegralGrid ip(pos), it(total);
  for (auto [h, w] : shapes) {
    const auto wh = std::min(h, total.rows);
    const auto ww = std::min(w, total.cols);
    for (std::int64_t r = 0; r + wh <= total.rows; ++r) {
      for (std::int64_t c = 0; c + ww <= total.cols; ++c) {
        const CellWindow win{r, c, wh, ww};
        const auto n = it.window_sum(win);
        if (n < min_total || n == 0) continue;
        const Ki67Index v{ip.window_sum(win), n};
        if (s.not_applicable || *s.ki67 < v) {
          s.not_applicable = false;
          s.ki67 = v;
          s.count = v.positive;
          s.window = win;
          s.degenerate = wh < h || ww < w;
        }
      }
    }
  }
  s.rect = s.not_applicable ? Rect{total.origin.x, total.origin.y, 0, 0} : total.window_rect(s.window);
  return s;
}

inline RegionSample highest_ki67_region(const CountGrid& pos, const CountGrid& total, std::int64_t window_rows,
                                        std::int64_t window_cols, std::int64_t min_total,
                                        SampleKind kind = SampleKind::focal_1hpf) {
  return best_ki67_window(pos, total, {{window_rows, window_cols}}, min_total, kind);
}

// Ids of the detections whose bbox center falls inside the sample window.
inline std::vector<std::string> members_in(const RegionSample& s, const CountGrid& g,
                                           const std::vector<Detection>& detections) {
  std::vector<std::string> out;
  if (s.not_applicable || g.empty()) return out;
  for (const auto& d : detections) {
    if (d.slide_id != g.slide_id) continue;
    const auto c = g.cell_of(d.bbox.center());
    if (c && s.window.contains_cell(c->first, c->second)) out.push_back(d.detection_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps

struct HeatmapMeta {
  std::int64_t cell_px = 1;
  Point origin;
  std::int64_t max_value = 0;
  std::string criterion;
  std::string slide_id;
};

inline void to_json(json& j, const HeatmapMeta& m) {
  j = json{{"cell_px", m.cell_px}, {"origin", m.origin}, {"max_value", m.max_value}, {"criterion", m.criterion},
           {"slide_id", m.slide_id}};
}

struct Heatmap {
  Raster raster;
  HeatmapMeta meta;
};

// One pixel per cell, linear map of [0, max] onto [0, 255].
inline Heatmap render_heatmap(const CountGrid& g, std::string criterion = {}) {
  Heatmap h;
  h.meta = {g.cell_px, {g.origin.x, g.origin.y}, 0, std::move(criterion), g.slide_id};
  h.raster = Raster(static_cast<int>(std::max<std::int64_t>(1, g.cols)), static_cast<int>(std::max<std::int64_t>(1, g.rows)), 1);
  if (g.empty()) return h;
  h.meta.max_value = *std::max_element(g.cells.begin(), g.cells.end());
  if (h.meta.max_value <= 0) return h;
  for (std::int64_t r = 0; r < g.rows; ++r) {
    for (std::int64_t c = 0; c < g.cols; ++c) {
      const double v = 255.0 * static_cast<double>(g.at(r, c)) / static_cast<double>(h.meta.max_value);
      h.raster.px(static_cast<int>(c), static_cast<int>(r))[0] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Recommenders

struct PatchCount {
  PatchRef patch;
  std::int64_t count = 0;
  std::optional<double> value;  // shown instead of count when set
};

inline bool row_major_less(const Rect& a, const Rect& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); }

inline std::vector<PatchCount> sorted_by_count(std::vector<PatchCount> counts) {
  std::stable_sort(counts.begin(), counts.end(), [](const PatchCount& a, const PatchCount& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.patch.slide_id != b.patch.slide_id) return a.patch.slide_id < b.patch.slide_id;
    return row_major_less(a.patch.rect, b.patch.rect);
  });
  return counts;
}

// Top-k patches by nuclei count, then only those above the small-cell cutoff.
inline std::vector<PatchCount> recommend_small_cell(const std::vector<PatchCount>& counts,
                                                    const ThresholdTable& table = {}) {
  auto sorted = sorted_by_count(counts);
  if (sorted.size() > static_cast<std::size_t>(table.small_cell_top_k))
    sorted.resize(static_cast<std::size_t>(table.small_cell_top_k));
  std::erase_if(sorted, [&](const PatchCount& p) { return p.count <= table.small_cell_min_nuclei; });
  return sorted;
}

inline std::vector<PatchCount> hypercellularity_hotspots(const std::vector<PatchCount>& counts, int k) {
  auto sorted = sorted_by_count(counts);
  if (sorted.size() > static_cast<std::size_t>(std::max(0, k))) sorted.resize(static_cast<std::size_t>(std::max(0, k)));
  return sorted;
}

// Tumor patches with at least one 8-neighbour brain patch, ordered by count.
// Patches absent from `counts` are treated as background.
inline std::vector<PatchCount> brain_boundary_patches(const std::vector<PatchCount>& counts,
                                                      const ThresholdTable& table = {}) {
  std::map<std::tuple<std::string, std::int64_t, std::int64_t>, RegionType> types;
  for (const auto& p : counts)
    types[{p.patch.slide_id, p.patch.rect.x, p.patch.rect.y}] = classify_region_type(p.count, table);
  std::vector<PatchCount> out;
  for (const auto& p : counts) {
    if (classify_region_type(p.count, table) != RegionType::tumor) continue;
    bool touches_brain = false;
    for (int dy = -1; dy <= 1 && !touches_brain; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const auto it = types.find({p.patch.slide_id, p.patch.rect.x + dx * p.patch.rect.w, p.patch.rect.y + dy * p.patch.rect.h});
        if (it != types.end() && it->second == RegionType::brain) {
          touches_brain = true;
          break;
        }
      }
    }
    if (touches_brain) out.push_back(p);
  }
  return sorted_by_count(out);
}

// ---------------------------------------------------------------------------
// Evidence

struct EvidenceItem {
  std::string evidence_id;
  CriterionKind criterion = CriterionKind::MitoticCount;
  std::string slide_id;
  std::optional<std::string> detection_id;
  std::optional<double> prob;
  std::optional<Confidence> confidence;
  std::optional<double> value;  // nuclei count or per-patch Ki-67 percent
  Rect hpf_rect;      // outer box: one HPF around the finding
  Rect context_rect;  // patch or tile that produced the finding
  Rect zoom_rect;     // localized finding
  std::optional<std::string> saliency_ref;
  ReviewStatus status = ReviewStatus::unreviewed;

  friend bool operator==(const EvidenceItem&, const EvidenceItem&) = default;
};

inline void to_json(json& j, const EvidenceItem& e) {
  j = json{{"evidence_id", e.evidence_id},
           {"criterion", to_string(e.criterion)},
           {"slide_id", e.slide_id},
           {"detection_id", e.detection_id ? json(*e.detection_id) : json(nullptr)},
           {"prob", e.prob ? json(*e.prob) : json(nullptr)},
           {"confidence", e.confidence ? json(to_string(*e.confidence)) : json(nullptr)},
           {"value", e.value ? json(*e.value) : json(nullptr)},
           {"hpf_rect", e.hpf_rect},
           {"context_rect", e.context_rect},
           {"zoom_rect", e.zoom_rect},
           {"saliency_ref", e.saliency_ref ? json(*e.saliency_ref) : json(nullptr)},
           {"status", to_string(e.status)}};
}

inline std::string patch_evidence_id(CriterionKind k, const PatchRef& p) {
  return p.slide_id + "/" + std::string(to_string(k)) + "/patch/" + std::to_string(p.rect.x) + "_" +
         std::to_string(p.rect.y);
}

// HPF-sized square centered on `c`, shifted to stay inside `bounds`.
inline Rect hpf_box(Point c, std::int64_t hpf_px, const Rect& bounds) {
  const auto w = std::min(hpf_px, bounds.w);
  const auto h = std::min(hpf_px, bounds.h);
  const auto x = std::clamp(c.x - w / 2, bounds.x, bounds.right() - w);
  const auto y = std::clamp(c.y - h / 2, bounds.y, bounds.bottom() - h);
  return {x, y, w, h};
}

inline bool prob_desc_less(const Detection& a, const Detection& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  return std::tie(a.bbox.y, a.bbox.x, a.detection_id) < std::tie(b.bbox.y, b.bbox.x, b.detection_id);
}

struct EvidenceInputs {
  const CaseManifest* manifest = nullptr;
  const Config* config = nullptr;
  // Detections of the criterion with their current review status.
  std::vector<Detection> detections;
  // Mitosis: ids inside the highest region and focal region.
  std::set<std::string> sampled_ids;
  // Recommender output for patch-based criteria.
  std::vector<PatchCount> patches;
  // Review status of patch evidence, by evidence id.
  const std::map<std::string, ReviewStatus>* patch_status = nullptr;
};

inline EvidenceItem evidence_from_detection(const Detection& d, const EvidenceInputs& in) {
  const auto& slide = in.manifest->slide(d.slide_id);
  EvidenceItem e;
  e.evidence_id = d.detection_id;
  e.criterion = d.criterion;
  e.slide_id = d.slide_id;
  e.detection_id = d.detection_id;
  e.prob = d.prob;
  if (in.config->thresholds.probability_threshold(d.criterion)) {
    const bool above = apply_threshold(d.criterion, d.prob, in.config->thresholds);
    if (above) e.confidence = confidence_level(d.prob, d.criterion, in.config->thresholds, in.config->high_confidence_from);
  }
  e.zoom_rect = d.bbox;
  e.context_rect = d.tile;
  e.hpf_rect = hpf_box(d.bbox.center(), um_to_px(in.config->hpf_side_um, slide.mpp), slide.bounds());
  e.saliency_ref = d.saliency_ref;
  e.status = d.status;
  return e;
}

inline EvidenceItem evidence_from_patch(CriterionKind k, const PatchCount& p, const EvidenceInputs& in) {
  const auto& slide = in.manifest->slide(p.patch.slide_id);
  EvidenceItem e;
  e.evidence_id = patch_evidence_id(k, p.patch);
  e.criterion = k;
  e.slide_id = p.patch.slide_id;
  e.value = p.value ? *p.value : static_cast<double>(p.count);
  e.zoom_rect = p.patch.rect;
  e.context_rect = p.patch.rect;
  e.hpf_rect = hpf_box(p.patch.rect.center(), um_to_px(in.config->hpf_side_um, slide.mpp), slide.bounds());
  if (in.patch_status) {
    const auto it = in.patch_status->find(e.evidence_id);
    if (it != in.patch_status->end()) e.status = it->second;
  }
  return e;
}

// Ordered evidence for one criterion:
//  - mitoses: members of the highest region and focal region, by probability;
//  - necrosis, sheeting, prominent nucleoli: top-n detections by probability;
//  - hypercellularity, small cell, brain invasion, Ki-67: the recommender's
//    patches in the order given.
inline std::vector<EvidenceItem> sample_evidence(CriterionKind criterion, const EvidenceInputs& in, int n) {
  std::vector<EvidenceItem> out;
  switch (criterion) {
    case CriterionKind::MitoticCount: {
      std::vector<Detection> members;
      for (const auto& d : in.detections)
        if (in.sampled_ids.count(d.detection_id)) members.push_back(d);
      std::sort(members.begin(), members.end(), prob_desc_less);
      for (const auto& d : members) out.push_back(evidence_from_detection(d, in));
      break;
    }
    case CriterionKind::Necrosis:
    case CriterionKind::Sheeting:
    case CriterionKind::ProminentNucleoli: {
      auto ds = in.detections;
      std::sort(ds.begin(), ds.end(), prob_desc_less);
      if (ds.size() > static_cast<std::size_t>(std::max(0, n))) ds.resize(static_cast<std::size_t>(std::max(0, n)));
      for (const auto& d : ds) out.push_back(evidence_from_detection(d, in));
      break;
    }
    case CriterionKind::Hypercellularity:
    case CriterionKind::SmallCell:
    case CriterionKind::BrainInvasion:
    case CriterionKind::Ki67Index: {
      auto ps = in.patches;
      if (ps.size() > static_cast<std::size_t>(std::max(0, n))) ps.resize(static_cast<std::size_t>(std::max(0, n)));
      for (const auto& p : ps) out.push_back(evidence_from_patch(criterion, p, in));
      break;
    }
    case CriterionKind::Subtype:
      break;
  }
  return out;
}

}  // namespace meningrade

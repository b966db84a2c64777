#pragma once

// Detection sources and the post-processing rules applied to their output:
// probability cutoffs, NMS, nuclei counting, the Ki-67 index and the
// nuclei-count region classes.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "meningrade/config.hpp"
#include "meningrade/core.hpp"
#include "meningrade/raster.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

enum class DetectorKind { oracle_annotation, external_scores, synthetic_heuristic };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::oracle_annotation: return "oracle_annotation";
    case DetectorKind::external_scores: return "external_scores";
    case DetectorKind::synthetic_heuristic: return "synthetic_heuristic";
  }
  return "";
}

inline DetectorKind detector_kind_from_string(std::string_view s) {
  if (s == "oracle_annotation") return DetectorKind::oracle_annotation;
  if (s == "external_scores") return DetectorKind::external_scores;
  if (s == "synthetic_heuristic") return DetectorKind::synthetic_heuristic;
  throw Error(ErrorCode::validation, "unknown detector kind '" + std::string(s) + "'");
}

struct DetectorBinding {
  CriterionKind criterion = CriterionKind::MitoticCount;
  DetectorKind kind = DetectorKind::oracle_annotation;
  std::string source_path;
};

// Parses {"bindings": [{"criterion", "kind", "source_path"}]} (or a bare
// array). Relative source paths resolve against `base_dir`. Requires exactly
// one binding per AI criterion.
inline std::vector<DetectorBinding> parse_bindings(const json& j, const std::filesystem::path& base_dir = {}) {
  const json& list = j.is_array() ? j : j.at("bindings");
  std::vector<DetectorBinding> out;
  try {
    for (const auto& b : list) {
      DetectorBinding db;
      db.criterion = criterion_from_string(b.at("criterion").get<std::string>());
      db.kind = detector_kind_from_string(b.at("kind").get<std::string>());
      db.source_path = b.value("source_path", std::string{});
      if (!db.source_path.empty() && std::filesystem::path(db.source_path).is_relative() && !base_dir.empty())
        db.source_path = (base_dir / db.source_path).lexically_normal().string();
      out.push_back(db);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, std::string("bindings: ") + e.what());
  }
  for (auto k : kAiCriteria) {
    const auto n = std::count_if(out.begin(), out.end(), [k](const auto& b) { return b.criterion == k; });
    if (n != 1)
      throw Error(ErrorCode::validation, "need exactly one binding for " + std::string(to_string(k)));
  }
  if (out.size() != kAiCriteria.size()) throw Error(ErrorCode::validation, "bindings for non-AI criteria");
  return out;
}

inline std::vector<DetectorBinding> load_bindings(const std::filesystem::path& path) {
  return parse_bindings(read_json_file(path), std::filesystem::absolute(path).parent_path());
}

inline json bindings_to_json(const std::vector<DetectorBinding>& bindings) {
  json list = json::array();
  for (const auto& b : bindings)
    list.push_back({{"criterion", to_string(b.criterion)}, {"kind", to_string(b.kind)}, {"source_path", b.source_path}});
  return json{{"bindings", list}};
}

// ---------------------------------------------------------------------------
// Detector output types

struct RawScore {
  PatchRef patch;
  double prob = 0.0;
  std::optional<std::string> saliency_ref;
  // Level-0 boxes of what the detector localized inside the window.
  std::vector<Rect> localizations;
};

enum class Polarity { positive, negative };

struct NucleiResult {
  PatchRef patch;
  std::int64_t count = 0;
  std::vector<Point> centroids;
  std::vector<Polarity> polarity;  // Ki-67 only; empty for H&E

  std::int64_t positive_count() const {
    return std::count(polarity.begin(), polarity.end(), Polarity::positive);
  }
};

// ---------------------------------------------------------------------------
// Annotations (oracle input)

struct AnnotationObject {
  CriterionKind criterion = CriterionKind::MitoticCount;
  Rect box;      // points are stored as 1x1 boxes
  bool is_point = false;
  std::string label;
};

struct AnnotationDoc {
  std::string slide_id;
  std::vector<AnnotationObject> objects;
};

inline void to_json(json& j, const AnnotationDoc& d) {
  json objs = json::array();
  for (const auto& o : d.objects) {
    json e{{"criterion", to_string(o.criterion)}, {"label", o.label}};
    if (o.is_point) {
      e["point"] = Point{o.box.x, o.box.y};
    } else {
      e["bbox"] = o.box;
    }
    objs.push_back(std::move(e));
  }
  j = json{{"slide_id", d.slide_id}, {"objects", objs}};
}

inline void from_json(const json& j, AnnotationDoc& d) {
  d.slide_id = j.at("slide_id").get<std::string>();
  d.objects.clear();
  for (const auto& e : j.at("objects")) {
    AnnotationObject o;
    o.criterion = criterion_from_string(e.at("criterion").get<std::string>());
    o.label = e.value("label", std::string{});
    if (e.contains("bbox")) {
      o.box = e.at("bbox").get<Rect>();
    } else {
      const auto p = e.at("point").get<Point>();
      o.box = {p.x, p.y, 1, 1};
      o.is_point = true;
    }
    d.objects.push_back(std::move(o));
  }
}

// Per-slide, per-criterion object lists with a coarse bucket index.
class AnnotationIndex {
 public:
  static constexpr std::int64_t kBucket = 512;

  void add(const std::string& slide_id, const AnnotationObject& obj) {
    auto& entry = slides_[slide_id][obj.criterion];
    const auto idx = entry.objects.size();
    entry.objects.push_back(obj);
    for (auto by = obj.box.y / kBucket; by <= (obj.box.bottom() - 1) / kBucket; ++by) {
      for (auto bx = obj.box.x / kBucket; bx <= (obj.box.right() - 1) / kBucket; ++bx)
        entry.buckets[{bx, by}].push_back(idx);
    }
  }

  // Objects whose box intersects `r`, in insertion order.
  std::vector<const AnnotationObject*> query(const std::string& slide_id, CriterionKind k, const Rect& r) const {
    std::vector<const AnnotationObject*> out;
    const auto s = slides_.find(slide_id);
    if (s == slides_.end()) return out;
    const auto e = s->second.find(k);
    if (e == s->second.end()) return out;
    std::vector<std::size_t> hits;
    for (auto by = r.y / kBucket; by <= (r.bottom() - 1) / kBucket; ++by) {
      for (auto bx = r.x / kBucket; bx <= (r.right() - 1) / kBucket; ++bx) {
        const auto b = e->second.buckets.find({bx, by});
        if (b == e->second.buckets.end()) continue;
        hits.insert(hits.end(), b->second.begin(), b->second.end());
      }
    }
    std::sort(hits.begin(), hits.end());
    hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
    for (auto i : hits) {
      const auto& obj = e->second.objects[i];
      if (obj.box.intersects(r)) out.push_back(&obj);
    }
    return out;
  }

  std::vector<AnnotationObject> objects(const std::string& slide_id, CriterionKind k) const {
    const auto s = slides_.find(slide_id);
    if (s == slides_.end()) return {};
    const auto e = s->second.find(k);
    if (e == s->second.end()) return {};
    return e->second.objects;
  }

 private:
  struct Entry {
    std::vector<AnnotationObject> objects;
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> buckets;
  };
  std::map<std::string, std::map<CriterionKind, Entry>> slides_;
};

// Accepts one annotation file, a JSON array of annotation docs, or a
// directory of *.json annotation files.
inline AnnotationIndex load_annotations(const std::filesystem::path& source) {
  AnnotationIndex index;
  auto add_doc = [&](const json& j) {
    const auto doc = j.get<AnnotationDoc>();
    for (const auto& o : doc.objects) index.add(doc.slide_id, o);
  };
  auto add_file = [&](const std::filesystem::path& p) {
    const auto j = read_json_file(p);
    try {
      if (j.is_array()) {
        for (const auto& d : j) add_doc(d);
      } else {
        add_doc(j);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::schema_violation, p.string() + ": " + e.what());
    }
  };
  if (std::filesystem::is_directory(source)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(source)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_file(f);
  } else if (std::filesystem::exists(source)) {
    add_file(source);
  } else {
    throw Error(ErrorCode::unreadable_source, "annotation source not found: " + source.string());
  }
  return index;
}

// ---------------------------------------------------------------------------
// External score cache (JSON Lines)

struct ExternalEntry {
  double prob = 0.0;
  std::optional<std::string> saliency_path;
  std::vector<Point> centroids;
  std::vector<Polarity> polarity;
  bool has_nuclei = false;
};

using ExternalKey = std::tuple<std::string, CriterionKind, std::int64_t, std::int64_t, std::int64_t, std::int64_t>;

inline ExternalKey external_key(const std::string& slide, CriterionKind k, const Rect& r) {
  return {slide, k, r.x, r.y, r.w, r.h};
}

inline std::map<ExternalKey, ExternalEntry> load_external_scores(const std::filesystem::path& path,
                                                                 CriterionKind criterion) {
  std::map<ExternalKey, ExternalEntry> out;
  try {
    for (const auto& j : read_json_lines(path)) {
      const auto k = j.contains("criterion") ? criterion_from_string(j.at("criterion").get<std::string>()) : criterion;
      if (k != criterion) continue;
      ExternalEntry e;
      e.prob = j.value("prob", 0.0);
      if (e.prob < 0.0 || e.prob > 1.0) throw Error(ErrorCode::validation, "prob outside [0,1] in " + path.string());
      if (j.contains("saliency_path") && !j.at("saliency_path").is_null())
        e.saliency_path = j.at("saliency_path").get<std::string>();
      if (j.contains("centroids")) {
        e.has_nuclei = true;
        for (const auto& c : j.at("centroids")) {
          e.centroids.push_back(c.get<Point>());
          if (c.contains("polarity"))
            e.polarity.push_back(c.at("polarity").get<std::string>() == "positive" ? Polarity::positive
                                                                                   : Polarity::negative);
        }
      }
      out[external_key(j.at("slide_id").get<std::string>(), k, j.at("rect").get<Rect>())] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pixel statistics for the synthetic_heuristic detectors. These are
// non-clinical stand-ins that keep the pipeline runnable from pixels alone.

struct Component {
  std::int64_t area = 0;
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  std::int64_t sum_x = 0, sum_y = 0;
};

// 4-connected components of a boolean mask, in raster-scan order of their
// first pixel.
inline std::vector<Component> connected_components(const std::vector<std::uint8_t>& mask, int w, int h) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      if (!mask[i] || seen[i]) continue;
      Component c{0, x, y, x, y, 0, 0};
      seen[i] = 1;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w;
        const int py = p / w;
        ++c.area;
        c.sum_x += px;
        c.sum_y += py;
        c.min_x = std::min(c.min_x, px);
        c.max_x = std::max(c.max_x, px);
        c.min_y = std::min(c.min_y, py);
        c.max_y = std::max(c.max_y, py);
        const int nb[4][2] = {{px - 1, py}, {px + 1, py}, {px, py - 1}, {px, py + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
          const auto j = static_cast<std::size_t>(n[1]) * w + n[0];
          if (mask[j] && !seen[j]) {
            seen[j] = 1;
            stack.push_back(static_cast<int>(j));
          }
        }
      }
      out.push_back(c);
    }
  }
  return out;
}

namespace heuristic {

inline constexpr int kDarkCutoff = 90;        // mitotic figure: mean RGB below this
inline constexpr int kNucleusCutoff = 170;    // any nucleus: mean RGB below this
inline constexpr double kMitosisNominalArea = 300.0;  // at 0.25 um/px
inline constexpr int kNucleolusCutoff = 40;

inline int gray(const std::uint8_t* p) { return (p[0] + p[1] + p[2]) / 3; }

inline std::vector<std::uint8_t> mask_where(const Raster& r, auto pred) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(r.width) * r.height, 0);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) m[static_cast<std::size_t>(y) * r.width + x] = pred(r.px(x, y)) ? 1 : 0;
  return m;
}

// Dark-blob compactness: size of the largest dark component relative to a
// nominal mitotic figure, times how well it fills its bounding ellipse.
inline std::pair<double, std::optional<Component>> mitosis_score(const Raster& r) {
  const auto comps = connected_components(mask_where(r, [](const std::uint8_t* p) { return gray(p) < kDarkCutoff; }),
                                          r.width, r.height);
  if (comps.empty()) return {0.0, std::nullopt};
  const auto best = *std::max_element(comps.begin(), comps.end(),
                                      [](const auto& a, const auto& b) { return a.area < b.area; });
  const double box = static_cast<double>(best.max_x - best.min_x + 1) * (best.max_y - best.min_y + 1);
  const double fill = static_cast<double>(best.area) / box;
  const double size_term = std::min(1.0, static_cast<double>(best.area) / kMitosisNominalArea);
  const double compact_term = std::min(1.0, fill / (std::numbers::pi / 4.0));
  return {size_term * compact_term, best};
}

// Fraction of tissue pixels with low saturation, scaled so that half the
// tissue being washed out saturates the score.
inline double necrosis_score(const Raster& r) {
  std::int64_t tissue = 0, washed = 0;
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const auto* p = r.px(x, y);
      if (gray(p) >= 230) continue;
      ++tissue;
      const int sat = std::max({p[0], p[1], p[2]}) - std::min({p[0], p[1], p[2]});
      if (sat < 25) ++washed;
    }
  }
  if (tissue == 0) return 0.0;
  return std::min(1.0, 2.0 * static_cast<double>(washed) / static_cast<double>(tissue));
}

// Near-black specks; n specks map to n / (n + 0.1).
inline std::pair<double, std::vector<Component>> nucleoli_score(const Raster& r) {
  auto comps = connected_components(
      mask_where(r, [](const std::uint8_t* p) { return gray(p) < kNucleolusCutoff; }), r.width, r.height);
  std::erase_if(comps, [](const auto& c) { return c.area < 4 || c.area > 80; });
  const double n = static_cast<double>(comps.size());
  return {n / (n + 0.1), comps};
}

// Loss of texture: low gray-level spread across tissue.
inline double sheeting_score(const Raster& r) {
  double sum = 0.0, sq = 0.0;
  std::int64_t tissue = 0;
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const int g = gray(r.px(x, y));
      if (g >= 230) continue;
      ++tissue;
      sum += g;
      sq += static_cast<double>(g) * g;
    }
  }
  const auto total = static_cast<std::int64_t>(r.width) * r.height;
  if (tissue * 2 < total) return 0.0;
  const double mean = sum / tissue;
  const double sd = std::sqrt(std::max(0.0, sq / tissue - mean * mean));
  return std::clamp(1.0 - sd / 12.0, 0.0, 1.0);
}

// Nuclei as components of nucleus-dark pixels; Ki-67 polarity from the
// brown (red > blue) vs blue balance of each component.
inline std::vector<std::pair<Component, Polarity>> nuclei(const Raster& r) {
  const auto comps = connected_components(
      mask_where(r, [](const std::uint8_t* p) { return gray(p) < kNucleusCutoff; }), r.width, r.height);
  std::vector<std::pair<Component, Polarity>> out;
  for (const auto& c : comps) {
    if (c.area < 4) continue;
    const int cx = static_cast<int>(c.sum_x / c.area);
    const int cy = static_cast<int>(c.sum_y / c.area);
    const auto* p = r.px(cx, cy);
    out.emplace_back(c, p[0] > p[2] ? Polarity::positive : Polarity::negative);
  }
  return out;
}

}  // namespace heuristic

// ---------------------------------------------------------------------------
// Detector

// A bound detection source. Immutable after construction, so one instance can
// serve any number of workers.
class Detector {
 public:
  explicit Detector(DetectorBinding binding) : binding_(std::move(binding)) {
    switch (binding_.kind) {
      case DetectorKind::oracle_annotation:
        annotations_ = load_annotations(binding_.source_path);
        break;
      case DetectorKind::external_scores:
        external_ = load_external_scores(binding_.source_path, binding_.criterion);
        break;
      case DetectorKind::synthetic_heuristic:
        break;
    }
  }

  const DetectorBinding& binding() const { return binding_; }
  CriterionKind criterion() const { return binding_.criterion; }
  bool needs_pixels() const { return binding_.kind == DetectorKind::synthetic_heuristic; }

  // `pixels` is the window read at its family's scale; `level` maps window
  // pixels back to level-0 coordinates.
  RawScore score(const PatchRef& patch, const Raster* pixels = nullptr, int level = 0) const {
    RawScore out{patch, 0.0, std::nullopt, {}};
    switch (binding_.kind) {
      case DetectorKind::oracle_annotation: {
        const bool clip = binding_.criterion == CriterionKind::Necrosis || binding_.criterion == CriterionKind::Sheeting;
        for (const auto* obj : annotations_.query(patch.slide_id, binding_.criterion, patch.rect)) {
          out.prob = 1.0;
          out.localizations.push_back(clip ? clip_to(obj->box, patch.rect) : obj->box);
        }
        break;
      }
      case DetectorKind::external_scores: {
        const auto it = external_.find(external_key(patch.slide_id, binding_.criterion, patch.rect));
        if (it == external_.end())
          throw Error(ErrorCode::missing_score, "no external score for " + patch.slide_id + " " + rect_str(patch.rect));
        out.prob = it->second.prob;
        out.saliency_ref = it->second.saliency_path;
        break;
      }
      case DetectorKind::synthetic_heuristic: {
        if (pixels == nullptr) throw Error(ErrorCode::contract, "heuristic detector needs pixels");
        const std::int64_t f = std::int64_t{1} << level;
        auto to_level0 = [&](const Component& c) {
          return Rect{patch.rect.x + c.min_x * f, patch.rect.y + c.min_y * f, (c.max_x - c.min_x + 1) * f,
                      (c.max_y - c.min_y + 1) * f};
        };
        switch (binding_.criterion) {
          case CriterionKind::MitoticCount: {
            auto [p, comp] = heuristic::mitosis_score(*pixels);
            out.prob = p;
            if (comp) out.localizations.push_back(to_level0(*comp));
            break;
          }
          case CriterionKind::Necrosis:
            out.prob = heuristic::necrosis_score(*pixels);
            break;
          case CriterionKind::ProminentNucleoli: {
            auto [p, comps] = heuristic::nucleoli_score(*pixels);
            out.prob = p;
            break;
          }
          case CriterionKind::Sheeting:
            out.prob = heuristic::sheeting_score(*pixels);
            break;
          default:
            throw Error(ErrorCode::contract, "criterion has no probability detector");
        }
        break;
      }
    }
    return out;
  }

  NucleiResult count_nuclei(const PatchRef& patch, const Raster* pixels = nullptr, int level = 0) const {
    NucleiResult out{patch, 0, {}, {}};
    const bool ki67 = binding_.criterion == CriterionKind::Ki67Index;
    switch (binding_.kind) {
      case DetectorKind::oracle_annotation:
        // Nuclei are annotated once per slide: H&E nuclei under
        // Hypercellularity, Ki-67 nuclei under Ki67Index with a polarity label.
        for (const auto* obj : annotations_.query(
                 patch.slide_id, ki67 ? CriterionKind::Ki67Index : CriterionKind::Hypercellularity, patch.rect)) {
          const Point c = obj->box.center();
          if (!patch.rect.contains(c)) continue;
          out.centroids.push_back(c);
          if (ki67) out.polarity.push_back(obj->label == "positive" ? Polarity::positive : Polarity::negative);
        }
        break;
      case DetectorKind::external_scores: {
        const auto it = external_.find(external_key(patch.slide_id, binding_.criterion, patch.rect));
        if (it == external_.end() || !it->second.has_nuclei)
          throw Error(ErrorCode::missing_score, "no external nuclei for " + patch.slide_id + " " + rect_str(patch.rect));
        out.centroids = it->second.centroids;
        if (ki67) {
          out.polarity = it->second.polarity;
          if (out.polarity.size() != out.centroids.size())
            throw Error(ErrorCode::validation, "external Ki-67 nuclei need a polarity per centroid");
        }
        break;
      }
      case DetectorKind::synthetic_heuristic: {
        if (pixels == nullptr) throw Error(ErrorCode::contract, "heuristic detector needs pixels");
        const std::int64_t f = std::int64_t{1} << level;
        for (const auto& [c, pol] : heuristic::nuclei(*pixels)) {
          out.centroids.push_back({patch.rect.x + (c.sum_x / c.area) * f, patch.rect.y + (c.sum_y / c.area) * f});
          if (ki67) out.polarity.push_back(pol);
        }
        break;
      }
    }
    out.count = static_cast<std::int64_t>(out.centroids.size());
    return out;
  }

 private:
  static Rect clip_to(const Rect& a, const Rect& b) {
    const auto x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const auto x1 = std::min(a.right(), b.right()), y1 = std::min(a.bottom(), b.bottom());
    return {x0, y0, x1 - x0, y1 - y0};
  }

  static std::string rect_str(const Rect& r) {
    return "(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) + "," +
           std::to_string(r.h) + ")";
  }

  DetectorBinding binding_;
  AnnotationIndex annotations_;
  std::map<ExternalKey, ExternalEntry> external_;
};

inline std::vector<RawScore> score_patches(const Detector& detector, const std::vector<PatchRef>& patches,
                                           const std::vector<Raster>* pixels = nullptr, int level = 0) {
  std::vector<RawScore> out;
  out.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i)
    out.push_back(detector.score(patches[i], pixels ? &(*pixels)[i] : nullptr, level));
  return out;
}

// ---------------------------------------------------------------------------
// Rules

inline bool apply_threshold(CriterionKind criterion, double prob, const ThresholdTable& table) {
  const auto t = table.probability_threshold(criterion);
  if (!t) throw Error(ErrorCode::contract, std::string(to_string(criterion)) + " has no probability threshold");
  return prob > *t;
}

// Greedy suppression in descending probability; ties by (y, x, id). Boxes
// overlapping a kept box with IoU above the threshold are dropped.
inline std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return std::tie(a.bbox.y, a.bbox.x, a.detection_id) < std::tie(b.bbox.y, b.bbox.x, b.detection_id);
  });
  std::vector<Detection> kept;
  for (auto& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou(k.bbox, d.bbox) > iou_threshold; });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

// positive / (positive + negative) kept as an exact rational.
struct Ki67Index {
  std::int64_t positive = 0;
  std::int64_t total = 0;

  double percent() const { return 100.0 * static_cast<double>(positive) / static_cast<double>(total); }

  std::string to_string() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", percent());
    return buf;
  }

  // Compares ratios exactly by cross-multiplication.
  friend bool operator<(const Ki67Index& a, const Ki67Index& b) { return a.positive * b.total < b.positive * a.total; }
  friend bool operator==(const Ki67Index&, const Ki67Index&) = default;
};

// Empty when there are no nuclei (not applicable).
inline std::optional<Ki67Index> ki67_index(std::int64_t positive_count, std::int64_t negative_count) {
  if (positive_count < 0 || negative_count < 0) throw Error(ErrorCode::contract, "negative nuclei count");
  if (positive_count + negative_count == 0) return std::nullopt;
  return Ki67Index{positive_count, positive_count + negative_count};
}

enum class RegionType { tumor, brain, background };

inline std::string_view to_string(RegionType t) {
  switch (t) {
    case RegionType::tumor: return "tumor";
    case RegionType::brain: return "brain";
    case RegionType::background: return "background";
  }
  return "";
}

inline RegionType classify_region_type(std::int64_t nuclei_count, const ThresholdTable& table = {}) {
  if (nuclei_count < 0) throw Error(ErrorCode::contract, "negative nuclei count");
  if (nuclei_count > table.tumor_min_nuclei) return RegionType::tumor;
  if (nuclei_count >= table.brain_min_nuclei) return RegionType::brain;
  return RegionType::background;
}

enum class Confidence { High, Medium };

inline std::string_view to_string(Confidence c) { return c == Confidence::High ? "High" : "Medium"; }

// Medium between the detection cutoff and `high_from`, High from there up.
// Criteria whose cutoff already reaches `high_from` only produce High.
inline Confidence confidence_level(double prob, CriterionKind criterion, const ThresholdTable& table = {},
                                   double high_from = 0.90) {
  const auto t = table.probability_threshold(criterion);
  if (t && !(prob > *t)) throw Error(ErrorCode::contract, "probability below the detection threshold");
  if (!t && !(prob >= 0.0 && prob <= 1.0)) throw Error(ErrorCode::contract, "probability outside [0,1]");
  if (t && *t >= high_from) return Confidence::High;
  return prob >= high_from ? Confidence::High : Confidence::Medium;
}

// Single-channel Gaussian bump over a window, centered on `center` (level-0),
// sigma in level-0 pixels. `level` is the pyramid level the window is viewed at.
inline Raster render_gaussian_saliency(const Rect& window, Point center, double sigma, int level = 0) {
  const std::int64_t f = std::int64_t{1} << level;
  const int w = static_cast<int>(std::max<std::int64_t>(1, window.w / f));
  const int h = static_cast<int>(std::max<std::int64_t>(1, window.h / f));
  Raster out(w, h, 1);
  const double s = std::max(0.5, sigma / static_cast<double>(f));
  const double cx = static_cast<double>(center.x - window.x) / f;
  const double cy = static_cast<double>(center.y - window.y) / f;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
      out.px(x, y)[0] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return out;
}

}  // namespace meningrade

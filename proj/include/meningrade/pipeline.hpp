#pragma once

// Offline processing: tiler -> detectors, producing the detection cache and
// per-patch nuclei results that every later stage folds over.

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "meningrade/config.hpp"
#include "meningrade/core.hpp"
#include "meningrade/detectors.hpp"
#include "meningrade/raster.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written by index so the merge order never depends on scheduling. The
// exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto run = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

struct CaseData {
  CaseManifest manifest;  // pyramid paths absolute
  Config config;
  std::vector<Detection> detections;
  // Per foreground patch nuclei: Hypercellularity, SmallCell and BrainInvasion
  // on H&E base patches; Ki67Index on Ki-67 patches.
  std::map<CriterionKind, std::vector<NucleiResult>> nuclei;
};

inline std::string_view criterion_tag(CriterionKind k) {
  switch (k) {
    case CriterionKind::MitoticCount: return "mit";
    case CriterionKind::Ki67Index: return "ki67";
    case CriterionKind::Hypercellularity: return "hyp";
    case CriterionKind::Necrosis: return "nec";
    case CriterionKind::SmallCell: return "sc";
    case CriterionKind::ProminentNucleoli: return "pn";
    case CriterionKind::Sheeting: return "sh";
    case CriterionKind::BrainInvasion: return "bi";
    case CriterionKind::Subtype: return "sub";
  }
  return "";
}

inline std::string detection_id(const std::string& slide_id, CriterionKind k, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", n);
  return slide_id + "-" + std::string(criterion_tag(k)) + "-" + buf;
}

inline std::string rect_label(const Rect& r) {
  return "(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) + "," +
         std::to_string(r.h) + ")";
}

struct ProcessOptions {
  int workers = 1;
  // When set, oracle saliency rasters are written under <dir>/saliency/.
  std::optional<std::filesystem::path> saliency_dir;
};

namespace detail {

struct Detectors {
  std::map<CriterionKind, std::unique_ptr<Detector>> by_criterion;
  // Nuclei criteria grouped by identical source, so each source runs once.
  std::vector<std::pair<const Detector*, std::vector<CriterionKind>>> he_nuclei;

  const Detector& at(CriterionKind k) const { return *by_criterion.at(k); }
};

inline Detectors make_detectors(const std::vector<DetectorBinding>& bindings) {
  Detectors d;
  for (const auto& b : bindings) d.by_criterion[b.criterion] = std::make_unique<Detector>(b);
  for (auto k : {CriterionKind::Hypercellularity, CriterionKind::SmallCell, CriterionKind::BrainInvasion}) {
    const auto& b = d.at(k).binding();
    auto it = std::find_if(d.he_nuclei.begin(), d.he_nuclei.end(), [&](const auto& g) {
      return g.first->binding().kind == b.kind && g.first->binding().source_path == b.source_path;
    });
    if (it == d.he_nuclei.end()) {
      d.he_nuclei.push_back({&d.at(k), {k}});
    } else {
      it->second.push_back(k);
    }
  }
  return d;
}

struct PositiveScore {
  CriterionKind criterion;
  RawScore score;
  int level = 0;
};

struct PatchOutput {
  bool foreground = false;
  std::vector<PositiveScore> positives;
  std::vector<NucleiResult> nuclei;  // one per he_nuclei group, or one Ki-67 result
};

inline std::vector<Rect> nodes_or_bounds(const SlideMeta& meta) {
  return meta.nodes.empty() ? std::vector<Rect>{meta.bounds()} : meta.nodes;
}

inline void score_sub_windows(const Detector& det, const PatchRef& parent, const Raster& pixels, int level,
                              PatchFamily family, const ThresholdTable& table, std::vector<PositiveScore>& out) {
  const auto spec = window_spec(family);
  const std::int64_t f = std::int64_t{1} << level;
  for (const auto& sub : enumerate_windows(parent.rect, spec.window_px * f, spec.stride_px * f)) {
    const PatchRef ref{parent.slide_id, sub, family};
    std::optional<Raster> crop_px;
    if (det.needs_pixels())
      crop_px = crop(pixels, static_cast<int>((sub.x - parent.rect.x) / f), static_cast<int>((sub.y - parent.rect.y) / f),
                     spec.window_px, spec.window_px);
    auto score = det.score(ref, crop_px ? &*crop_px : nullptr, level);
    if (apply_threshold(det.criterion(), score.prob, table)) out.push_back({det.criterion(), std::move(score), level});
  }
}

template <typename Fn>
auto with_patch_context(const std::string& slide_id, const Rect& rect, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "slide " + slide_id + " patch " + rect_label(rect) + ": " + e.what());
  }
}

}  // namespace detail

// Runs every detector over every slide of the case. Output is identical for
// any worker count.
inline CaseData process_case(const Case& c, const std::vector<DetectorBinding>& bindings, const Config& cfg,
                             const ProcessOptions& opts = {}) {
  validate(cfg);
  const auto dets = detail::make_detectors(bindings);
  CaseData out;
  out.manifest = c.manifest;
  for (std::size_t i = 0; i < out.manifest.slides.size(); ++i)
    out.manifest.slides[i].pyramid_path = std::filesystem::absolute(c.slides[i].root()).lexically_normal().string();
  out.config = cfg;
  for (auto k : {CriterionKind::Hypercellularity, CriterionKind::SmallCell, CriterionKind::BrainInvasion,
                 CriterionKind::Ki67Index})
    out.nuclei[k];

  std::vector<detail::PositiveScore> positives;
  std::vector<std::pair<std::string, CriterionKind>> raw_order;

  for (const auto& slide : c.slides) {
    const auto& meta = slide.meta();
    const auto nodes = detail::nodes_or_bounds(meta);
    if (meta.stain == Stain::HE) {
      const auto base_spec = window_spec(PatchFamily::base_he);
      const int base_level = level_for_scale(meta, base_spec.scale_mpp);
      const auto base = enumerate_windows(meta, base_spec, nodes);
      std::vector<detail::PatchOutput> results(base.size());
      parallel_for(base.size(), opts.workers, [&](std::size_t i) {
        const PatchRef ref{meta.slide_id, base[i], PatchFamily::base_he};
        detail::with_patch_context(meta.slide_id, base[i], [&] {
          const auto pixels = read_region(slide, base[i], base_level);
          auto& r = results[i];
          if (is_background(pixels)) return;
          r.foreground = true;
          detail::score_sub_windows(dets.at(CriterionKind::MitoticCount), ref, pixels, base_level,
                                    PatchFamily::mitosis, cfg.thresholds, r.positives);
          detail::score_sub_windows(dets.at(CriterionKind::ProminentNucleoli), ref, pixels, base_level,
                                    PatchFamily::nucleoli, cfg.thresholds, r.positives);
          const auto& nec = dets.at(CriterionKind::Necrosis);
          auto score = nec.score(ref, &pixels, base_level);
          if (apply_threshold(CriterionKind::Necrosis, score.prob, cfg.thresholds))
            r.positives.push_back({CriterionKind::Necrosis, std::move(score), base_level});
          for (const auto& [det, kinds] : dets.he_nuclei) r.nuclei.push_back(det->count_nuclei(ref, &pixels, base_level));
        });
      });
      for (std::size_t i = 0; i < base.size(); ++i) {
        auto& r = results[i];
        if (!r.foreground) continue;
        for (auto& p : r.positives) positives.push_back(std::move(p));
        for (std::size_t g = 0; g < dets.he_nuclei.size(); ++g) {
          for (auto k : dets.he_nuclei[g].second) out.nuclei[k].push_back(r.nuclei[g]);
        }
      }

      const auto sh_spec = window_spec(PatchFamily::sheeting);
      const int sh_level = level_for_scale(meta, sh_spec.scale_mpp);
      const auto sh_windows = enumerate_windows(meta, sh_spec, nodes);
      std::vector<std::optional<detail::PositiveScore>> sh_results(sh_windows.size());
      const auto& sh_det = dets.at(CriterionKind::Sheeting);
      parallel_for(sh_windows.size(), opts.workers, [&](std::size_t i) {
        detail::with_patch_context(meta.slide_id, sh_windows[i], [&] {
          const PatchRef ref{meta.slide_id, sh_windows[i], PatchFamily::sheeting};
          const auto pixels = read_region(slide, sh_windows[i], sh_level);
          if (is_background(pixels)) return;
          const auto small = resize_patch(pixels, *sh_spec.resize_to);
          auto score = sh_det.score(ref, &small, sh_level);
          if (apply_threshold(CriterionKind::Sheeting, score.prob, cfg.thresholds))
            sh_results[i] = detail::PositiveScore{CriterionKind::Sheeting, std::move(score), sh_level};
        });
      });
      for (auto& r : sh_results)
        if (r) positives.push_back(std::move(*r));
    } else {
      const auto spec = window_spec(PatchFamily::ki67);
      const int level = level_for_scale(meta, spec.scale_mpp);
      const auto windows = enumerate_windows(meta, spec, nodes);
      std::vector<std::optional<NucleiResult>> results(windows.size());
      const auto& det = dets.at(CriterionKind::Ki67Index);
      parallel_for(windows.size(), opts.workers, [&](std::size_t i) {
        detail::with_patch_context(meta.slide_id, windows[i], [&] {
          const PatchRef ref{meta.slide_id, windows[i], PatchFamily::ki67};
          const auto pixels = read_region(slide, windows[i], level);
          if (is_background(pixels)) return;
          results[i] = det.count_nuclei(ref, &pixels, level);
        });
      });
      for (auto& r : results)
        if (r) out.nuclei[CriterionKind::Ki67Index].push_back(std::move(*r));
    }
  }

  // Detections in stream order, then NMS per (slide, criterion).
  std::map<std::pair<std::string, CriterionKind>, std::vector<Detection>> groups;
  std::map<std::pair<std::string, CriterionKind>, std::size_t> counters;
  std::map<std::string, int> tile_level;
  for (const auto& p : positives) {
    const auto key = std::pair{p.score.patch.slide_id, p.criterion};
    const auto& meta = c.manifest.slide(p.score.patch.slide_id);
    auto boxes = p.score.localizations;
    if (boxes.empty()) boxes.push_back(p.score.patch.rect);
    for (const auto& box : boxes) {
      Detection d;
      d.detection_id = detection_id(key.first, p.criterion, counters[key]++);
      d.slide_id = key.first;
      d.criterion = p.criterion;
      const auto x0 = std::max<std::int64_t>(0, box.x), y0 = std::max<std::int64_t>(0, box.y);
      const auto x1 = std::min(meta.width_px, box.right()), y1 = std::min(meta.height_px, box.bottom());
      d.bbox = {x0, y0, std::max<std::int64_t>(1, x1 - x0), std::max<std::int64_t>(1, y1 - y0)};
      d.tile = p.score.patch.rect;
      d.prob = p.score.prob;
      d.saliency_ref = p.score.saliency_ref;
      tile_level[d.detection_id] = p.level;
      groups[key].push_back(std::move(d));
    }
  }
  for (const auto& slide : c.manifest.slides) {
    for (auto k : {CriterionKind::MitoticCount, CriterionKind::Necrosis, CriterionKind::ProminentNucleoli,
                   CriterionKind::Sheeting}) {
      const auto it = groups.find({slide.slide_id, k});
      if (it == groups.end()) continue;
      auto kept = nms(std::move(it->second), cfg.nms_iou);
      const bool oracle = dets.at(k).binding().kind == DetectorKind::oracle_annotation;
      for (auto& d : kept) {
        if (oracle && opts.saliency_dir) {
          const auto rel = "saliency/" + d.detection_id + ".png";
          const double sigma = static_cast<double>(std::max(d.bbox.w, d.bbox.h)) / 6.0;
          write_png(*opts.saliency_dir / rel,
                    render_gaussian_saliency(d.tile, d.bbox.center(), sigma, tile_level[d.detection_id]));
          d.saliency_ref = rel;
        }
        out.detections.push_back(std::move(d));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence of the processing output

inline json nuclei_json(CriterionKind k, const NucleiResult& n) {
  json centroids = json::array();
  for (const auto& p : n.centroids) centroids.push_back(json::array({p.x, p.y}));
  std::string pol;
  for (auto p : n.polarity) pol.push_back(p == Polarity::positive ? '+' : '-');
  return json{{"criterion", to_string(k)}, {"slide_id", n.patch.slide_id}, {"rect", n.patch.rect},
              {"family", to_string(n.patch.family)}, {"count", n.count}, {"centroids", centroids},
              {"polarity", pol}};
}

inline std::pair<CriterionKind, NucleiResult> nuclei_from_json(const json& j) {
  NucleiResult n;
  const auto k = criterion_from_string(j.at("criterion").get<std::string>());
  n.patch.slide_id = j.at("slide_id").get<std::string>();
  n.patch.rect = j.at("rect").get<Rect>();
  n.patch.family = k == CriterionKind::Ki67Index ? PatchFamily::ki67 : PatchFamily::base_he;
  n.count = j.at("count").get<std::int64_t>();
  for (const auto& c : j.at("centroids")) n.centroids.push_back({c.at(0).get<std::int64_t>(), c.at(1).get<std::int64_t>()});
  for (char ch : j.at("polarity").get<std::string>()) n.polarity.push_back(ch == '+' ? Polarity::positive : Polarity::negative);
  if (n.count != static_cast<std::int64_t>(n.centroids.size()))
    throw Error(ErrorCode::corruption, "nuclei count does not match centroids");
  return {k, std::move(n)};
}

inline void write_case_data(const std::filesystem::path& dir, const CaseData& d) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "case.json", json(d.manifest).dump(2) + "\n");
  write_text_file(dir / "config.json", json(d.config).dump(2) + "\n");
  std::string det;
  for (const auto& x : d.detections) det += json(x).dump() + "\n";
  write_text_file(dir / "detections.jsonl", det);
  std::string nuc;
  for (const auto& [k, list] : d.nuclei)
    for (const auto& n : list) nuc += nuclei_json(k, n).dump() + "\n";
  write_text_file(dir / "nuclei.jsonl", nuc);
}

inline bool is_processed(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "case.json") && std::filesystem::exists(dir / "detections.jsonl") &&
         std::filesystem::exists(dir / "nuclei.jsonl");
}

inline CaseData load_case_data(const std::filesystem::path& dir) {
  if (!is_processed(dir)) throw Error(ErrorCode::precondition, "case at " + dir.string() + " has not been processed");
  CaseData d;
  d.manifest = parse_manifest(read_json_file(dir / "case.json"));
  if (std::filesystem::exists(dir / "config.json")) {
    try {
      d.config = read_json_file(dir / "config.json").get<Config>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::schema_violation, e.what());
    }
  }
  try {
    for (const auto& j : read_json_lines(dir / "detections.jsonl")) d.detections.push_back(j.get<Detection>());
    for (auto k : {CriterionKind::Hypercellularity, CriterionKind::SmallCell, CriterionKind::BrainInvasion,
                   CriterionKind::Ki67Index})
      d.nuclei[k];
    for (const auto& j : read_json_lines(dir / "nuclei.jsonl")) {
      auto [k, n] = nuclei_from_json(j);
      d.nuclei[k].push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
  return d;
}

}  // namespace meningrade

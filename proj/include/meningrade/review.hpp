#pragma once

// Folds the detection cache and a review state (statuses, overrides, manual
// additions) into criterion states, region samples, evidence and a grade.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "meningrade/aggregator.hpp"
#include "meningrade/config.hpp"
#include "meningrade/core.hpp"
#include "meningrade/grader.hpp"
#include "meningrade/pipeline.hpp"

namespace meningrade {

struct ReviewState {
  // Evidence id (detection id or patch evidence id) -> status.
  std::map<std::string, ReviewStatus> status;
  std::map<CriterionKind, OverrideValue> overrides;
  // User-added mitoses: prob 1, approved.
  std::vector<Detection> manual;

  friend bool operator==(const ReviewState&, const ReviewState&) = default;
};

inline json override_to_json(const OverrideValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, double>) {
          return x;
        } else {
          return std::string(to_string(x));
        }
      },
      v);
}

// Strings are statuses except on Subtype; numbers are Ki-67 percents.
inline OverrideValue override_from_json(CriterionKind k, const json& j) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw Error(ErrorCode::validation, "override value must be a string or a number");
  const auto s = j.get<std::string>();
  if (k == CriterionKind::Subtype) {
    const auto t = parse_subtype(s);
    if (!t) throw Error(ErrorCode::validation, "unknown subtype '" + s + "'");
    return *t;
  }
  const auto o = parse_override_status(s);
  if (!o) throw Error(ErrorCode::validation, "unknown override '" + s + "'");
  return *o;
}

inline void to_json(json& j, const ReviewState& s) {
  json status = json::object();
  for (const auto& [id, st] : s.status) status[id] = to_string(st);
  json overrides = json::object();
  for (const auto& [k, v] : s.overrides) overrides[std::string(to_string(k))] = override_to_json(v);
  j = json{{"status", status}, {"overrides", overrides}, {"manual", s.manual}};
}

inline void from_json(const json& j, ReviewState& s) {
  s = {};
  for (const auto& [id, st] : j.at("status").items()) s.status[id] = review_status_from_string(st.get<std::string>());
  for (const auto& [k, v] : j.at("overrides").items()) {
    const auto kind = criterion_from_string(k);
    s.overrides[kind] = override_from_json(kind, v);
  }
  s.manual = j.at("manual").get<std::vector<Detection>>();
}

inline void to_json(json& j, const RegionSample& s) {
  j = json{{"slide_id", s.slide_id},
           {"kind", to_string(s.kind)},
           {"rect", s.rect},
           {"cells", {{"row", s.window.row}, {"col", s.window.col}, {"rows", s.window.rows}, {"cols", s.window.cols}}},
           {"value", s.not_applicable ? json(nullptr) : json(s.value())},
           {"count", s.count},
           {"degenerate", s.degenerate},
           {"not_applicable", s.not_applicable},
           {"member_detections", s.member_detections}};
  if (s.ki67) j["ki67"] = {{"positive", s.ki67->positive}, {"total", s.ki67->total}, {"text", s.ki67->to_string()}};
}

inline bool is_effective(ReviewStatus s, bool count_uncertain = false) {
  return s == ReviewStatus::unreviewed || s == ReviewStatus::approved ||
         (count_uncertain && s == ReviewStatus::uncertain);
}

// Members of the region whose status still counts; manual additions are
// approved detections and count like any other.
inline std::int64_t effective_mitotic_count(const RegionSample& region, const std::vector<Detection>& detections,
                                            bool count_uncertain = false) {
  const std::set<std::string> members(region.member_detections.begin(), region.member_detections.end());
  std::int64_t n = 0;
  for (const auto& d : detections)
    if (members.count(d.detection_id) && is_effective(d.status, count_uncertain)) ++n;
  return n;
}

struct Analysis {
  std::vector<Detection> detections;  // cache plus manual additions, current statuses
  std::vector<RegionSample> regions;  // per slide: mitosis region + focal, Ki-67 region + focal
  std::map<CriterionKind, std::vector<EvidenceItem>> evidence;
  CriteriaSnapshot snapshot;
  GradeResult grade;

  bool has_evidence(const std::string& id) const {
    for (const auto& d : detections)
      if (d.detection_id == id) return true;
    for (const auto& [k, list] : evidence)
      for (const auto& e : list)
        if (e.evidence_id == id) return true;
    return false;
  }
};

inline std::int64_t hpf_cells(const Config& cfg) { return cfg.cells_per_hpf; }

inline std::vector<Detection> current_detections(const CaseData& data, const ReviewState& state) {
  std::vector<Detection> out = data.detections;
  out.insert(out.end(), state.manual.begin(), state.manual.end());
  for (auto& d : out) {
    const auto it = state.status.find(d.detection_id);
    if (it != state.status.end()) d.status = it->second;
  }
  return out;
}

// Cell grid of one criterion over one slide. Detection criteria bin effective
// detections; nuclei criteria bin nucleus centroids (Ki-67: positive ones).
inline CountGrid criterion_grid(const CaseData& data, const std::vector<Detection>& detections, CriterionKind k,
                                const SlideMeta& slide) {
  const auto cell = grid_cell_px(data.config, slide.mpp);
  switch (k) {
    case CriterionKind::MitoticCount:
    case CriterionKind::Necrosis:
    case CriterionKind::Sheeting:
    case CriterionKind::ProminentNucleoli: {
      const bool uncertain = k == CriterionKind::MitoticCount && data.config.count_uncertain_mitoses;
      return build_count_grid(detections, slide.slide_id, slide.bounds(), cell, [&](const Detection& d) {
        return d.criterion == k && is_effective(d.status, uncertain);
      });
    }
    case CriterionKind::Hypercellularity:
    case CriterionKind::SmallCell:
    case CriterionKind::BrainInvasion:
    case CriterionKind::Ki67Index: {
      std::vector<Point> pts;
      const auto it = data.nuclei.find(k);
      if (it != data.nuclei.end()) {
        for (const auto& n : it->second) {
          if (n.patch.slide_id != slide.slide_id) continue;
          for (std::size_t i = 0; i < n.centroids.size(); ++i) {
            if (k == CriterionKind::Ki67Index && (i >= n.polarity.size() || n.polarity[i] != Polarity::positive))
              continue;
            pts.push_back(n.centroids[i]);
          }
        }
      }
      return build_count_grid(pts, slide.slide_id, slide.bounds(), cell);
    }
    case CriterionKind::Subtype:
      break;
  }
  throw Error(ErrorCode::not_found, "no heatmap for " + std::string(to_string(k)));
}

namespace detail {

inline std::vector<PatchCount> patch_counts(const CaseData& data, CriterionKind k) {
  std::vector<PatchCount> out;
  const auto it = data.nuclei.find(k);
  if (it == data.nuclei.end()) return out;
  for (const auto& n : it->second) out.push_back({n.patch, n.count, std::nullopt});
  return out;
}

// present if any item still stands, unconfirmed if only uncertain ones are
// left, absent otherwise.
inline AiSuggestion presence_from(const std::vector<ReviewStatus>& statuses) {
  bool uncertain = false;
  for (auto s : statuses) {
    if (is_effective(s)) return AiSuggestion::present;
    uncertain = uncertain || s == ReviewStatus::uncertain;
  }
  return uncertain ? AiSuggestion::unconfirmed : AiSuggestion::absent;
}

inline bool all_reviewed(const std::vector<EvidenceItem>& items) {
  if (items.empty()) return false;
  return std::all_of(items.begin(), items.end(),
                     [](const EvidenceItem& e) { return e.status != ReviewStatus::unreviewed; });
}

inline std::vector<ReviewStatus> statuses_of(const std::vector<EvidenceItem>& items) {
  std::vector<ReviewStatus> out;
  for (const auto& e : items) out.push_back(e.status);
  return out;
}

}  // namespace detail

inline Analysis analyze(const CaseData& data, const ReviewState& state) {
  const auto& cfg = data.config;
  Analysis a;
  a.detections = current_detections(data, state);
  const EvidenceInputs base{&data.manifest, &cfg, {}, {}, {}, &state.status};
  const auto hpf = hpf_cells(cfg);

  // Mitoses: per H&E slide, the case count is the maximum over slides.
  std::optional<std::pair<RegionSample, RegionSample>> best_mitosis;
  for (const auto& slide : data.manifest.slides) {
    if (slide.stain != Stain::HE) continue;
    const auto g = criterion_grid(data, a.detections, CriterionKind::MitoticCount, slide);
    auto region = highest_region(g, hpf);
    auto focal = highest_focal_region(g, hpf);
    std::vector<Detection> mits;
    for (const auto& d : a.detections)
      if (d.criterion == CriterionKind::MitoticCount && is_effective(d.status, cfg.count_uncertain_mitoses))
        mits.push_back(d);
    region.member_detections = members_in(region, g, mits);
    focal.member_detections = members_in(focal, g, mits);
    if (!best_mitosis || region.count > best_mitosis->first.count) best_mitosis = {region, focal};
    a.regions.push_back(std::move(region));
    a.regions.push_back(std::move(focal));
  }
  {
    auto in = base;
    for (const auto& d : a.detections)
      if (d.criterion == CriterionKind::MitoticCount) in.detections.push_back(d);
    if (best_mitosis) {
      for (const auto& id : best_mitosis->first.member_detections) in.sampled_ids.insert(id);
      for (const auto& id : best_mitosis->second.member_detections) in.sampled_ids.insert(id);
    }
    a.evidence[CriterionKind::MitoticCount] = sample_evidence(CriterionKind::MitoticCount, in, 0);
    const auto count = best_mitosis ? best_mitosis->first.count : 0;
    a.snapshot.mitotic_count_10hpf = count;
    a.snapshot.mitosis.value = static_cast<double>(count);
    a.snapshot.mitosis.ai = count >= 4 ? AiSuggestion::present : AiSuggestion::absent;
    a.snapshot.mitosis.confirmed = detail::all_reviewed(a.evidence[CriterionKind::MitoticCount]);
  }

  // Presence criteria backed by detections.
  for (auto k : {CriterionKind::Necrosis, CriterionKind::Sheeting, CriterionKind::ProminentNucleoli}) {
    auto in = base;
    std::vector<ReviewStatus> statuses;
    for (const auto& d : a.detections) {
      if (d.criterion != k) continue;
      in.detections.push_back(d);
      statuses.push_back(d.status);
    }
    auto& ev = a.evidence[k] = sample_evidence(k, in, cfg.evidence_limit);
    auto& st = a.snapshot.state(k);
    st.ai = detail::presence_from(statuses);
    st.confirmed = detail::all_reviewed(ev);
  }

  // Patch-backed criteria.
  {
    auto in = base;
    in.patches = hypercellularity_hotspots(detail::patch_counts(data, CriterionKind::Hypercellularity), cfg.hotspot_k);
    std::erase_if(in.patches, [](const PatchCount& p) { return p.count <= 0; });
    const auto& ev = a.evidence[CriterionKind::Hypercellularity] =
        sample_evidence(CriterionKind::Hypercellularity, in, cfg.evidence_limit);
    auto& st = a.snapshot.state(CriterionKind::Hypercellularity);
    // Hotspots are suggestions, not findings: present only once approved.
    const auto sts = detail::statuses_of(ev);
    if (std::find(sts.begin(), sts.end(), ReviewStatus::approved) != sts.end()) {
      st.ai = AiSuggestion::present;
    } else if (std::any_of(sts.begin(), sts.end(),
                           [](ReviewStatus s) { return s == ReviewStatus::unreviewed || s == ReviewStatus::uncertain; })) {
      st.ai = AiSuggestion::unconfirmed;
    } else {
      st.ai = AiSuggestion::absent;
    }
    st.confirmed = detail::all_reviewed(ev);
  }
  {
    auto in = base;
    in.patches = recommend_small_cell(detail::patch_counts(data, CriterionKind::SmallCell), cfg.thresholds);
    const auto& ev = a.evidence[CriterionKind::SmallCell] = sample_evidence(CriterionKind::SmallCell, in, cfg.evidence_limit);
    auto& st = a.snapshot.state(CriterionKind::SmallCell);
    st.ai = detail::presence_from(detail::statuses_of(ev));
    st.confirmed = detail::all_reviewed(ev);
  }
  {
    auto in = base;
    in.patches = brain_boundary_patches(detail::patch_counts(data, CriterionKind::BrainInvasion), cfg.thresholds);
    const auto& ev = a.evidence[CriterionKind::BrainInvasion] =
        sample_evidence(CriterionKind::BrainInvasion, in, cfg.evidence_limit);
    auto& st = a.snapshot.brain_invasion;
    st.ai = detail::presence_from(detail::statuses_of(ev));
    st.confirmed = detail::all_reviewed(ev);
  }

  // Ki-67: best 10-HPF region over Ki-67 slides; supporting value only.
  {
    std::optional<std::pair<RegionSample, RegionSample>> best;
    for (const auto& slide : data.manifest.slides) {
      if (slide.stain != Stain::KI67) continue;
      const auto pos = criterion_grid(data, a.detections, CriterionKind::Ki67Index, slide);
      std::vector<Point> all;
      for (const auto& n : data.nuclei.at(CriterionKind::Ki67Index))
        if (n.patch.slide_id == slide.slide_id) all.insert(all.end(), n.centroids.begin(), n.centroids.end());
      const auto total = build_count_grid(all, slide.slide_id, slide.bounds(), pos.cell_px);
      auto region = best_ki67_window(pos, total, {{2 * hpf, 5 * hpf}, {5 * hpf, 2 * hpf}}, cfg.ki67_min_total,
                                     SampleKind::region_10hpf);
      auto focal = highest_ki67_region(pos, total, hpf, hpf, cfg.ki67_min_total, SampleKind::focal_1hpf);
      if (!region.not_applicable && (!best || best->first.not_applicable || *best->first.ki67 < *region.ki67))
        best = {region, focal};
      if (!best) best = {region, focal};
      a.regions.push_back(std::move(region));
      a.regions.push_back(std::move(focal));
    }
    auto in = base;
    if (best && !best->first.not_applicable) {
      for (const auto& n : data.nuclei.at(CriterionKind::Ki67Index)) {
        if (n.patch.slide_id != best->first.slide_id) continue;
        const auto c = n.patch.rect.center();
        const bool inside = best->first.rect.contains(c) || (!best->second.not_applicable && best->second.rect.contains(c));
        if (!inside) continue;
        PatchCount pc{n.patch, n.count, std::nullopt};
        if (n.count > 0) pc.value = Ki67Index{n.positive_count(), n.count}.percent();
        in.patches.push_back(pc);
      }
      std::stable_sort(in.patches.begin(), in.patches.end(), [](const PatchCount& x, const PatchCount& y) {
        const double vx = x.value.value_or(-1.0), vy = y.value.value_or(-1.0);
        if (vx != vy) return vx > vy;
        return row_major_less(x.patch.rect, y.patch.rect);
      });
    }
    const auto& ev = a.evidence[CriterionKind::Ki67Index] =
        sample_evidence(CriterionKind::Ki67Index, in, static_cast<int>(in.patches.size()));
    auto& st = a.snapshot.ki67;
    if (best && !best->first.not_applicable) {
      // No abnormality rule: a confirmed value shows as normal.
      st.ai = AiSuggestion::absent;
      st.value = best->first.ki67->percent();
    } else {
      st.ai = AiSuggestion::not_applicable;
    }
    st.confirmed = detail::all_reviewed(ev);
  }

  for (const auto& [k, v] : state.overrides) a.snapshot = apply_override(a.snapshot, k, v).first;
  a.grade = compute_grade(a.snapshot);
  return a;
}

inline json analysis_json(const Analysis& a) {
  json evidence = json::object();
  for (const auto& [k, list] : a.evidence) evidence[std::string(to_string(k))] = list;
  auto j = grade_json(a.grade, a.snapshot);
  j["regions"] = a.regions;
  j["evidence"] = evidence;
  return j;
}

}  // namespace meningrade

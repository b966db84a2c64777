#pragma once

// Tunable parameters of the pipeline and the grader. Defaults are the
// published detection cutoffs plus this project's own geometry choices.

#include <filesystem>

#include "meningrade/core.hpp"

namespace meningrade {

struct ThresholdTable {
  double mitosis = 0.78;
  double necrosis = 0.74;
  double prominent_nucleoli = 0.90;
  double sheeting = 0.52;
  int small_cell_min_nuclei = 125;
  int small_cell_top_k = 10;
  int tumor_min_nuclei = 55;   // tumor when count > this
  int brain_min_nuclei = 10;   // brain when count in [brain_min, tumor_min]

  // Detection cutoff for criteria decided by a classifier probability.
  std::optional<double> probability_threshold(CriterionKind k) const {
    switch (k) {
      case CriterionKind::MitoticCount: return mitosis;
      case CriterionKind::Necrosis: return necrosis;
      case CriterionKind::ProminentNucleoli: return prominent_nucleoli;
      case CriterionKind::Sheeting: return sheeting;
      default: return std::nullopt;
    }
  }
};

struct Config {
  ThresholdTable thresholds;
  double hpf_side_um = 500.0;
  int cells_per_hpf = 5;
  double nms_iou = 0.25;
  double high_confidence_from = 0.90;
  int ki67_min_total = 200;
  int evidence_limit = 10;
  int hotspot_k = 10;
  bool count_uncertain_mitoses = false;
  std::size_t snapshot_every = 20;

  double cell_um() const { return hpf_side_um / static_cast<double>(cells_per_hpf); }
};

inline void validate(const Config& c) {
  const auto& t = c.thresholds;
  for (double p : {t.mitosis, t.necrosis, t.prominent_nucleoli, t.sheeting, c.high_confidence_from}) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::validation, "probability thresholds must lie in (0,1)");
  }
  if (t.small_cell_min_nuclei < 0 || t.small_cell_top_k < 0 || t.tumor_min_nuclei < 0 || t.brain_min_nuclei < 0)
    throw Error(ErrorCode::validation, "integer thresholds must be >= 0");
  if (t.brain_min_nuclei > t.tumor_min_nuclei)
    throw Error(ErrorCode::validation, "brain range must end at or below the tumor cutoff");
  if (!(c.hpf_side_um > 0.0) || c.cells_per_hpf < 1)
    throw Error(ErrorCode::validation, "HPF geometry must be positive");
  if (!(c.nms_iou >= 0.0 && c.nms_iou <= 1.0)) throw Error(ErrorCode::validation, "nms_iou must lie in [0,1]");
  if (c.ki67_min_total < 0 || c.evidence_limit < 0 || c.hotspot_k < 0)
    throw Error(ErrorCode::validation, "counts must be >= 0");
}

inline void to_json(json& j, const Config& c) {
  const auto& t = c.thresholds;
  j = json{{"thresholds",
            {{"mitosis", t.mitosis},
             {"necrosis", t.necrosis},
             {"prominent_nucleoli", t.prominent_nucleoli},
             {"sheeting", t.sheeting},
             {"small_cell_min_nuclei", t.small_cell_min_nuclei},
             {"small_cell_top_k", t.small_cell_top_k},
             {"tumor_min_nuclei", t.tumor_min_nuclei},
             {"brain_range", {t.brain_min_nuclei, t.tumor_min_nuclei}}}},
           {"hpf_side_um", c.hpf_side_um},
           {"cells_per_hpf", c.cells_per_hpf},
           {"nms_iou", c.nms_iou},
           {"high_confidence_from", c.high_confidence_from},
           {"ki67_min_total", c.ki67_min_total},
           {"evidence_limit", c.evidence_limit},
           {"hotspot_k", c.hotspot_k},
           {"count_uncertain_mitoses", c.count_uncertain_mitoses},
           {"snapshot_every", c.snapshot_every}};
}

// Missing keys keep their defaults.
inline void from_json(const json& j, Config& c) {
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    auto& o = c.thresholds;
    o.mitosis = t.value("mitosis", o.mitosis);
    o.necrosis = t.value("necrosis", o.necrosis);
    o.prominent_nucleoli = t.value("prominent_nucleoli", o.prominent_nucleoli);
    o.sheeting = t.value("sheeting", o.sheeting);
    o.small_cell_min_nuclei = t.value("small_cell_min_nuclei", o.small_cell_min_nuclei);
    o.small_cell_top_k = t.value("small_cell_top_k", o.small_cell_top_k);
    o.tumor_min_nuclei = t.value("tumor_min_nuclei", o.tumor_min_nuclei);
    if (t.contains("brain_range")) {
      const auto& br = t.at("brain_range");
      o.brain_min_nuclei = br.at(0).get<int>();
      o.tumor_min_nuclei = br.at(1).get<int>();
    }
  }
  c.hpf_side_um = j.value("hpf_side_um", c.hpf_side_um);
  c.cells_per_hpf = j.value("cells_per_hpf", c.cells_per_hpf);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.high_confidence_from = j.value("high_confidence_from", c.high_confidence_from);
  c.ki67_min_total = j.value("ki67_min_total", c.ki67_min_total);
  c.evidence_limit = j.value("evidence_limit", c.evidence_limit);
  c.hotspot_k = j.value("hotspot_k", c.hotspot_k);
  c.count_uncertain_mitoses = j.value("count_uncertain_mitoses", c.count_uncertain_mitoses);
  c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
}

inline Config load_config(const std::filesystem::path& path) {
  Config c;
  try {
    c = read_json_file(path).get<Config>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
  validate(c);
  return c;
}

}  // namespace meningrade

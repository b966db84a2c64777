#pragma once

// The offline commands: process a case, write a report, evaluate detectors.

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "meningrade/aggregator.hpp"
#include "meningrade/config.hpp"
#include "meningrade/detectors.hpp"
#include "meningrade/eval.hpp"
#include "meningrade/pipeline.hpp"
#include "meningrade/review.hpp"
#include "meningrade/session.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

inline std::vector<CriterionKind> heatmap_criteria(Stain s) {
  if (s == Stain::KI67) return {CriterionKind::Ki67Index};
  return {CriterionKind::MitoticCount, CriterionKind::Hypercellularity, CriterionKind::Necrosis,
          CriterionKind::SmallCell, CriterionKind::ProminentNucleoli, CriterionKind::Sheeting,
          CriterionKind::BrainInvasion};
}

inline void write_heatmaps(const std::filesystem::path& out, const CaseData& data, const Analysis& a) {
  const auto dir = out / "heatmaps";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (const auto& slide : data.manifest.slides) {
    for (auto k : heatmap_criteria(slide.stain)) {
      const auto h = render_heatmap(criterion_grid(data, a.detections, k, slide), std::string(to_string(k)));
      const auto stem = slide.slide_id + "_" + std::string(to_string(k));
      write_png(dir / (stem + ".png"), h.raster);
      write_text_file(dir / (stem + ".json"), json(h.meta).dump(2) + "\n");
    }
  }
}

struct ProcessResult {
  CaseData data;
  Analysis analysis;
};

// tiler -> detectors -> aggregator -> grader. Re-running overwrites the
// outputs with identical bytes.
inline ProcessResult run_process(const std::filesystem::path& manifest_path, const std::filesystem::path& bindings_path,
                                 const Config& cfg, const std::filesystem::path& out, int workers = 1) {
  const auto c = open_case(manifest_path);
  const auto bindings = load_bindings(bindings_path);
  std::filesystem::create_directories(out);
  std::filesystem::remove_all(out / "saliency");
  std::filesystem::create_directories(out / "saliency");
  ProcessOptions opts;
  opts.workers = workers;
  opts.saliency_dir = out;
  ProcessResult r{process_case(c, bindings, cfg, opts), {}};
  write_case_data(out, r.data);
  r.analysis = analyze(r.data, ReviewState{});
  write_text_file(out / "analysis.json", analysis_json(r.analysis).dump(2) + "\n");
  write_text_file(out / "grade.json", grade_json(r.analysis.grade, r.analysis.snapshot).dump(2) + "\n");
  write_heatmaps(out, r.data, r.analysis);
  return r;
}

inline std::string criterion_line(const json& c) {
  std::ostringstream s;
  s << "  " << c.at("kind").get<std::string>() << ": " << c.at("status").get<std::string>();
  if (c.contains("value") && !c.at("value").is_null()) {
    if (c.at("value").is_number()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", c.at("value").get<double>());
      s << " (" << buf << ")";
    } else {
      s << " (" << c.at("value").get<std::string>() << ")";
    }
  }
  s << " [" << c.at("color").get<std::string>() << (c.at("confirmed").get<bool>() ? ", confirmed" : "") << "]";
  if (!c.at("override").is_null()) s << " override=" << c.at("override").dump();
  return s.str();
}

struct Report {
  json doc;
  std::string text;
};

inline Report build_report(const CaseData& data, const Analysis& a, const std::optional<std::string>& session_id) {
  Report r;
  auto g = grade_json(a.grade, a.snapshot);
  json evidence = json::object();
  for (const auto& [k, list] : a.evidence) {
    json ids = json::array();
    for (const auto& e : list)
      ids.push_back({{"evidence_id", e.evidence_id}, {"slide_id", e.slide_id}, {"zoom_rect", e.zoom_rect},
                     {"status", to_string(e.status)}});
    evidence[std::string(to_string(k))] = ids;
  }
  r.doc = json{{"case_id", data.manifest.case_id},
               {"session_id", session_id ? json(*session_id) : json(nullptr)},
               {"grade", g.at("grade")},
               {"main_contributing", g.at("main_contributing")},
               {"fired_rules", g.at("fired_rules")},
               {"criteria", g.at("criteria")},
               {"regions", a.regions},
               {"evidence_index", evidence}};
  std::ostringstream s;
  s << "case " << data.manifest.case_id;
  if (session_id) s << " (session " << *session_id << ")";
  s << "\nsuggested grade: WHO " << g.at("grade").get<std::string>() << "\n";
  s << "main contributing: "
    << (g.at("main_contributing").is_null() ? std::string("none") : g.at("main_contributing").get<std::string>())
    << "\n";
  s << "rules:\n";
  for (const auto& f : g.at("fired_rules"))
    s << "  " << f.at("id").get<std::string>() << ": " << f.at("text").get<std::string>() << "\n";
  s << "criteria:\n";
  for (const auto& c : g.at("criteria")) s << criterion_line(c) << "\n";
  s << "regions:\n";
  for (const auto& reg : a.regions) {
    s << "  " << reg.slide_id << " " << to_string(reg.kind) << " at (" << reg.rect.x << "," << reg.rect.y << ","
      << reg.rect.w << "," << reg.rect.h << ") ";
    if (reg.not_applicable) {
      s << "n/a";
    } else if (reg.ki67) {
      s << reg.ki67->to_string();
    } else {
      s << reg.count;
    }
    if (reg.degenerate) s << " (clipped)";
    s << "\n";
  }
  s << "evidence:\n";
  for (const auto& [k, list] : a.evidence) s << "  " << to_string(k) << ": " << list.size() << " item(s)\n";
  r.text = s.str();
  return r;
}

// Report of the processed case, or of a stored session on it.
inline Report run_report(const std::filesystem::path& case_dir, const std::optional<std::string>& session,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  auto data = std::make_shared<CaseData>(load_case_data(case_dir));
  Analysis a;
  std::optional<std::string> sid;
  if (session) {
    std::filesystem::path dir(*session);
    if (!std::filesystem::exists(dir / "session.json")) dir = case_dir / "sessions" / *session;
    if (!std::filesystem::exists(dir / "session.json"))
      throw Error(ErrorCode::not_found, "no session '" + *session + "'");
    auto s = Session::load(dir, data, data->config.snapshot_every);
    if (s->case_id() != data->manifest.case_id) throw Error(ErrorCode::validation, "session belongs to another case");
    a = s->state().analysis;
    sid = s->id();
  } else {
    a = analyze(*data, ReviewState{});
  }
  auto r = build_report(*data, a, sid);
  const auto dir = out_dir.value_or(case_dir);
  const std::string stem = sid ? "report-" + *sid : "report";
  write_text_file(dir / (stem + ".json"), r.doc.dump(2) + "\n");
  write_text_file(dir / (stem + ".txt"), r.text);
  return r;
}

}  // namespace meningrade

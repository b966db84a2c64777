#pragma once

// Shared domain types for the grading engine. Every geometric quantity is in
// level-0 pixel coordinates of the slide that owns it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace meningrade {

using json = nlohmann::json;

enum class ErrorCode {
  invalid_metadata,
  missing_file,
  schema_violation,
  tile_mismatch,
  out_of_range,
  unsupported,
  contract,
  missing_score,
  unreadable_source,
  validation,
  corruption,
  not_found,
  precondition,
  key_mismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_metadata: return "invalid_metadata";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::tile_mismatch: return "tile_mismatch";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::contract: return "contract";
    case ErrorCode::missing_score: return "missing_score";
    case ErrorCode::unreadable_source: return "unreadable_source";
    case ErrorCode::validation: return "validation";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::key_mismatch: return "key_mismatch";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Geometry

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Rect {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t w = 0;
  std::int64_t h = 0;

  std::int64_t right() const { return x + w; }
  std::int64_t bottom() const { return y + h; }
  std::int64_t area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0 && x >= 0 && y >= 0; }

  // Center rounded toward the origin; used for binning.
  Point center() const { return {x + w / 2, y + h / 2}; }

  bool contains(const Rect& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
  }
  bool contains(const Point& p) const {
    return p.x >= x && p.y >= y && p.x < right() && p.y < bottom();
  }
  bool intersects(const Rect& o) const {
    return x < o.right() && o.x < right() && y < o.bottom() && o.y < bottom();
  }

  friend bool operator==(const Rect&, const Rect&) = default;
  friend auto operator<=>(const Rect& a, const Rect& b) {
    return std::tie(a.y, a.x, a.h, a.w) <=> std::tie(b.y, b.x, b.h, b.w);
  }
};

inline std::int64_t intersection_area(const Rect& a, const Rect& b) {
  const auto ix = std::max<std::int64_t>(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const auto iy = std::max<std::int64_t>(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  return ix * iy;
}

inline double iou(const Rect& a, const Rect& b) {
  const auto inter = intersection_area(a, b);
  if (inter == 0) return 0.0;
  const auto uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Nearest integer, ties away from zero.
inline std::int64_t um_to_px(double length_um, double mpp) {
  if (!(mpp > 0.0)) throw Error(ErrorCode::invalid_metadata, "mpp must be positive");
  if (length_um < 0.0) throw Error(ErrorCode::contract, "negative length");
  return std::llround(length_um / mpp);
}

// ---------------------------------------------------------------------------
// Criteria

enum class CriterionKind {
  MitoticCount,
  Ki67Index,
  Hypercellularity,
  Necrosis,
  SmallCell,
  ProminentNucleoli,
  Sheeting,
  BrainInvasion,
  Subtype,
};

inline constexpr std::array<CriterionKind, 8> kAiCriteria = {
    CriterionKind::MitoticCount,      CriterionKind::Ki67Index, CriterionKind::Hypercellularity,
    CriterionKind::Necrosis,          CriterionKind::SmallCell, CriterionKind::ProminentNucleoli,
    CriterionKind::Sheeting,          CriterionKind::BrainInvasion,
};

inline constexpr std::array<CriterionKind, 9> kAllCriteria = {
    CriterionKind::MitoticCount,      CriterionKind::Ki67Index, CriterionKind::Hypercellularity,
    CriterionKind::Necrosis,          CriterionKind::SmallCell, CriterionKind::ProminentNucleoli,
    CriterionKind::Sheeting,          CriterionKind::BrainInvasion, CriterionKind::Subtype,
};

// The five histological features of the three-of-five rule.
inline constexpr std::array<CriterionKind, 5> kFeatureCriteria = {
    CriterionKind::Hypercellularity, CriterionKind::ProminentNucleoli, CriterionKind::Sheeting,
    CriterionKind::Necrosis,         CriterionKind::SmallCell,
};

inline std::string_view to_string(CriterionKind k) {
  switch (k) {
    case CriterionKind::MitoticCount: return "MitoticCount";
    case CriterionKind::Ki67Index: return "Ki67Index";
    case CriterionKind::Hypercellularity: return "Hypercellularity";
    case CriterionKind::Necrosis: return "Necrosis";
    case CriterionKind::SmallCell: return "SmallCell";
    case CriterionKind::ProminentNucleoli: return "ProminentNucleoli";
    case CriterionKind::Sheeting: return "Sheeting";
    case CriterionKind::BrainInvasion: return "BrainInvasion";
    case CriterionKind::Subtype: return "Subtype";
  }
  return "";
}

inline std::optional<CriterionKind> parse_criterion(std::string_view s) {
  for (auto k : kAllCriteria) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline CriterionKind criterion_from_string(std::string_view s) {
  if (auto k = parse_criterion(s)) return *k;
  throw Error(ErrorCode::validation, "unknown criterion '" + std::string(s) + "'");
}

inline bool is_feature(CriterionKind k) {
  return std::find(kFeatureCriteria.begin(), kFeatureCriteria.end(), k) != kFeatureCriteria.end();
}

// ---------------------------------------------------------------------------
// Slides and cases

enum class Stain { HE, KI67 };

inline std::string_view to_string(Stain s) { return s == Stain::HE ? "HE" : "KI67"; }

struct SlideMeta {
  std::string slide_id;
  Stain stain = Stain::HE;
  std::int64_t width_px = 0;
  std::int64_t height_px = 0;
  double mpp = 0.25;
  int levels = 1;
  std::string pyramid_path;
  std::vector<Rect> nodes;

  Rect bounds() const { return {0, 0, width_px, height_px}; }
};

struct Pairing {
  std::string he;
  std::optional<std::string> ki67;

  friend bool operator==(const Pairing&, const Pairing&) = default;
};

struct CaseManifest {
  std::string case_id;
  std::vector<SlideMeta> slides;
  std::vector<Pairing> pairings;

  const SlideMeta* find_slide(std::string_view id) const {
    for (const auto& s : slides) {
      if (s.slide_id == id) return &s;
    }
    return nullptr;
  }

  const SlideMeta& slide(std::string_view id) const {
    if (const auto* s = find_slide(id)) return *s;
    throw Error(ErrorCode::not_found, "unknown slide '" + std::string(id) + "'");
  }
};

// Maps an H&E level-0 point onto its paired Ki-67 slide by the ratio of
// resolutions; the two slides are assumed to be cut from the same position.
inline Point map_he_to_ki67(Point p, const SlideMeta& he, const SlideMeta& ki67) {
  const double f = he.mpp / ki67.mpp;
  return {std::llround(static_cast<double>(p.x) * f), std::llround(static_cast<double>(p.y) * f)};
}

inline void validate(const SlideMeta& s) {
  if (s.slide_id.empty()) throw Error(ErrorCode::schema_violation, "empty slide_id");
  if (!(s.mpp > 0.0)) throw Error(ErrorCode::invalid_metadata, s.slide_id + ": mpp must be positive");
  if (s.width_px < 1 || s.height_px < 1)
    throw Error(ErrorCode::invalid_metadata, s.slide_id + ": empty slide dimensions");
  if (s.levels < 1) throw Error(ErrorCode::invalid_metadata, s.slide_id + ": levels must be >= 1");
  for (const auto& n : s.nodes) {
    if (!n.valid() || !s.bounds().contains(n))
      throw Error(ErrorCode::invalid_metadata, s.slide_id + ": node rect outside slide bounds");
  }
}

inline void validate(const CaseManifest& m) {
  if (m.case_id.empty()) throw Error(ErrorCode::schema_violation, "empty case_id");
  std::set<std::string> ids;
  int he_count = 0;
  for (const auto& s : m.slides) {
    validate(s);
    if (!ids.insert(s.slide_id).second)
      throw Error(ErrorCode::schema_violation, "duplicate slide_id '" + s.slide_id + "'");
    if (s.stain == Stain::HE) ++he_count;
  }
  if (he_count == 0) throw Error(ErrorCode::validation, "case needs at least one HE slide");
  for (const auto& p : m.pairings) {
    const auto* he = m.find_slide(p.he);
    if (he == nullptr || he->stain != Stain::HE)
      throw Error(ErrorCode::validation, "pairing references unknown HE slide '" + p.he + "'");
    if (p.ki67) {
      const auto* k = m.find_slide(*p.ki67);
      if (k == nullptr || k->stain != Stain::KI67)
        throw Error(ErrorCode::validation, "pairing references unknown KI67 slide '" + *p.ki67 + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Detections

enum class ReviewStatus { unreviewed, approved, declined, uncertain };

inline std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::unreviewed: return "unreviewed";
    case ReviewStatus::approved: return "approved";
    case ReviewStatus::declined: return "declined";
    case ReviewStatus::uncertain: return "uncertain";
  }
  return "";
}

inline ReviewStatus review_status_from_string(std::string_view s) {
  if (s == "unreviewed") return ReviewStatus::unreviewed;
  if (s == "approved") return ReviewStatus::approved;
  if (s == "declined") return ReviewStatus::declined;
  if (s == "uncertain") return ReviewStatus::uncertain;
  throw Error(ErrorCode::validation, "unknown review status '" + std::string(s) + "'");
}

struct Detection {
  std::string detection_id;
  std::string slide_id;
  CriterionKind criterion = CriterionKind::MitoticCount;
  Rect bbox;  // localized finding (inner box)
  Rect tile;  // window the detector classified (context box)
  double prob = 0.0;
  std::optional<std::string> saliency_ref;
  ReviewStatus status = ReviewStatus::unreviewed;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(json& j, const Rect& r) { j = json{{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }
inline void from_json(const json& j, Rect& r) {
  r.x = j.at("x").get<std::int64_t>();
  r.y = j.at("y").get<std::int64_t>();
  r.w = j.at("w").get<std::int64_t>();
  r.h = j.at("h").get<std::int64_t>();
}

inline void to_json(json& j, const Point& p) { j = json{{"x", p.x}, {"y", p.y}}; }
inline void from_json(const json& j, Point& p) {
  p.x = j.at("x").get<std::int64_t>();
  p.y = j.at("y").get<std::int64_t>();
}

inline void to_json(json& j, const SlideMeta& s) {
  j = json{{"slide_id", s.slide_id}, {"stain", to_string(s.stain)}, {"width_px", s.width_px},
           {"height_px", s.height_px}, {"mpp", s.mpp}, {"levels", s.levels},
           {"pyramid_path", s.pyramid_path}, {"nodes", s.nodes}};
}

inline void from_json(const json& j, SlideMeta& s) {
  s.slide_id = j.at("slide_id").get<std::string>();
  const auto stain = j.at("stain").get<std::string>();
  if (stain == "HE") {
    s.stain = Stain::HE;
  } else if (stain == "KI67") {
    s.stain = Stain::KI67;
  } else {
    throw Error(ErrorCode::schema_violation, "unknown stain '" + stain + "'");
  }
  s.width_px = j.at("width_px").get<std::int64_t>();
  s.height_px = j.at("height_px").get<std::int64_t>();
  s.mpp = j.at("mpp").get<double>();
  s.levels = j.at("levels").get<int>();
  s.pyramid_path = j.at("pyramid_path").get<std::string>();
  s.nodes = j.at("nodes").get<std::vector<Rect>>();
}

inline void to_json(json& j, const CaseManifest& m) {
  json pairings = json::array();
  for (const auto& p : m.pairings) {
    pairings.push_back({{"he", p.he}, {"ki67", p.ki67 ? json(*p.ki67) : json(nullptr)}});
  }
  j = json{{"case_id", m.case_id}, {"slides", m.slides}, {"pairings", pairings}};
}

inline void from_json(const json& j, CaseManifest& m) {
  m.case_id = j.at("case_id").get<std::string>();
  m.slides = j.at("slides").get<std::vector<SlideMeta>>();
  m.pairings.clear();
  for (const auto& p : j.at("pairings")) {
    Pairing pr;
    pr.he = p.at("he").get<std::string>();
    const auto& k = p.at("ki67");
    if (!k.is_null()) pr.ki67 = k.get<std::string>();
    m.pairings.push_back(pr);
  }
}

inline void to_json(json& j, const Detection& d) {
  j = json{{"detection_id", d.detection_id},
           {"slide_id", d.slide_id},
           {"criterion", to_string(d.criterion)},
           {"bbox", d.bbox},
           {"tile", d.tile},
           {"prob", d.prob},
           {"saliency_ref", d.saliency_ref ? json(*d.saliency_ref) : json(nullptr)},
           {"status", to_string(d.status)}};
}

inline void from_json(const json& j, Detection& d) {
  d.detection_id = j.at("detection_id").get<std::string>();
  d.slide_id = j.at("slide_id").get<std::string>();
  d.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  d.bbox = j.at("bbox").get<Rect>();
  d.tile = j.contains("tile") ? j.at("tile").get<Rect>() : d.bbox;
  d.prob = j.at("prob").get<double>();
  if (j.contains("saliency_ref") && !j.at("saliency_ref").is_null())
    d.saliency_ref = j.at("saliency_ref").get<std::string>();
  d.status = j.contains("status") ? review_status_from_string(j.at("status").get<std::string>())
                                  : ReviewStatus::unreviewed;
}

// ---------------------------------------------------------------------------
// File helpers

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::unreadable_source, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline json read_json_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
  }
}

inline std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::schema_violation,
                  path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline CaseManifest parse_manifest(const json& j) {
  try {
    auto m = j.get<CaseManifest>();
    validate(m);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
}

}  // namespace meningrade

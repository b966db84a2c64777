#pragma once

// WHO 2007 meningioma grading as a pure rule engine over criterion states.
//
//   Grade III: >= 20 mitoses per 10 HPF, or frank anaplasia / papillary /
//              rhabdoid subtype.
//   Grade II:  4..19 mitoses, or >= 3 of the five histological features, or
//              brain invasion, or clear cell / chordoid subtype.
//   Grade I:   none of the above.
//
// Ki-67 is reported alongside but never changes the grade.

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "meningrade/core.hpp"

namespace meningrade {

enum class AiSuggestion { present, absent, unconfirmed, not_applicable };
enum class OverrideStatus { found, not_found, uncertain };
enum class EffectiveStatus { present, absent, uncertain, not_applicable };
enum class DisplayColor { red, green, orange, gray };
enum class Subtype { other, clear_cell, chordoid, papillary, rhabdoid, frank_anaplasia };
enum class Grade { I = 1, II = 2, III = 3 };

inline std::string_view to_string(AiSuggestion s) {
  switch (s) {
    case AiSuggestion::present: return "present";
    case AiSuggestion::absent: return "absent";
    case AiSuggestion::unconfirmed: return "unconfirmed";
    case AiSuggestion::not_applicable: return "not_applicable";
  }
  return "";
}

inline std::string_view to_string(OverrideStatus s) {
  switch (s) {
    case OverrideStatus::found: return "found";
    case OverrideStatus::not_found: return "not_found";
    case OverrideStatus::uncertain: return "uncertain";
  }
  return "";
}

inline std::optional<OverrideStatus> parse_override_status(std::string_view s) {
  if (s == "found") return OverrideStatus::found;
  if (s == "not_found") return OverrideStatus::not_found;
  if (s == "uncertain") return OverrideStatus::uncertain;
  return std::nullopt;
}

inline std::string_view to_string(EffectiveStatus s) {
  switch (s) {
    case EffectiveStatus::present: return "present";
    case EffectiveStatus::absent: return "absent";
    case EffectiveStatus::uncertain: return "uncertain";
    case EffectiveStatus::not_applicable: return "not_applicable";
  }
  return "";
}

inline std::string_view to_string(DisplayColor c) {
  switch (c) {
    case DisplayColor::red: return "red";
    case DisplayColor::green: return "green";
    case DisplayColor::orange: return "orange";
    case DisplayColor::gray: return "gray";
  }
  return "";
}

inline std::string_view to_string(Subtype s) {
  switch (s) {
    case Subtype::other: return "other";
    case Subtype::clear_cell: return "clear_cell";
    case Subtype::chordoid: return "chordoid";
    case Subtype::papillary: return "papillary";
    case Subtype::rhabdoid: return "rhabdoid";
    case Subtype::frank_anaplasia: return "frank_anaplasia";
  }
  return "";
}

inline std::optional<Subtype> parse_subtype(std::string_view s) {
  for (auto t : {Subtype::other, Subtype::clear_cell, Subtype::chordoid, Subtype::papillary, Subtype::rhabdoid,
                 Subtype::frank_anaplasia}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

inline std::string_view to_string(Grade g) {
  switch (g) {
    case Grade::I: return "I";
    case Grade::II: return "II";
    case Grade::III: return "III";
  }
  return "";
}

inline bool is_grade3_subtype(Subtype s) {
  return s == Subtype::frank_anaplasia || s == Subtype::papillary || s == Subtype::rhabdoid;
}
inline bool is_grade2_subtype(Subtype s) { return s == Subtype::clear_cell || s == Subtype::chordoid; }

// A pathologist's override: a status, a Ki-67 percent, or a subtype.
using OverrideValue = std::variant<OverrideStatus, double, Subtype>;

struct CriterionState {
  CriterionKind kind = CriterionKind::Necrosis;
  AiSuggestion ai = AiSuggestion::absent;
  std::optional<double> value;  // mitotic count or Ki-67 percent
  std::optional<OverrideValue> override_value;
  // Every evidence item of the criterion has been reviewed by a human.
  bool confirmed = false;

  friend bool operator==(const CriterionState&, const CriterionState&) = default;
};

inline EffectiveStatus effective_status(const CriterionState& s) {
  if (s.override_value) {
    if (const auto* o = std::get_if<OverrideStatus>(&*s.override_value)) {
      switch (*o) {
        case OverrideStatus::found: return EffectiveStatus::present;
        case OverrideStatus::not_found: return EffectiveStatus::absent;
        case OverrideStatus::uncertain: return EffectiveStatus::uncertain;
      }
    }
  }
  switch (s.ai) {
    case AiSuggestion::present: return EffectiveStatus::present;
    case AiSuggestion::absent: return EffectiveStatus::absent;
    case AiSuggestion::unconfirmed: return EffectiveStatus::uncertain;
    case AiSuggestion::not_applicable: return EffectiveStatus::not_applicable;
  }
  return EffectiveStatus::uncertain;
}

// red = confirmed present, green = confirmed absent, orange = unconfirmed or
// uncertain, gray = not applicable. An override is a confirmation.
inline DisplayColor display_color(const CriterionState& s) {
  if (s.override_value) {
    if (const auto* o = std::get_if<OverrideStatus>(&*s.override_value)) {
      switch (*o) {
        case OverrideStatus::found: return DisplayColor::red;
        case OverrideStatus::not_found: return DisplayColor::green;
        case OverrideStatus::uncertain: return DisplayColor::orange;
      }
    }
    if (const auto* t = std::get_if<Subtype>(&*s.override_value))
      return (is_grade2_subtype(*t) || is_grade3_subtype(*t)) ? DisplayColor::red : DisplayColor::green;
    // A confirmed Ki-67 percent; Ki-67 has no abnormality rule.
    if (std::holds_alternative<double>(*s.override_value)) return DisplayColor::green;
  }
  switch (s.ai) {
    case AiSuggestion::not_applicable: return DisplayColor::gray;
    case AiSuggestion::unconfirmed: return DisplayColor::orange;
    case AiSuggestion::present: return s.confirmed ? DisplayColor::red : DisplayColor::orange;
    case AiSuggestion::absent: return s.confirmed ? DisplayColor::green : DisplayColor::orange;
  }
  return DisplayColor::orange;
}

inline CriterionState blank_state(CriterionKind k) {
  CriterionState s;
  s.kind = k;
  return s;
}

struct CriteriaSnapshot {
  std::int64_t mitotic_count_10hpf = 0;
  CriterionState mitosis{CriterionKind::MitoticCount, AiSuggestion::absent, 0.0, std::nullopt, false};
  CriterionState ki67{CriterionKind::Ki67Index, AiSuggestion::not_applicable, std::nullopt, std::nullopt, false};
  std::map<CriterionKind, CriterionState> features{
      {CriterionKind::Hypercellularity, blank_state(CriterionKind::Hypercellularity)},
      {CriterionKind::ProminentNucleoli, blank_state(CriterionKind::ProminentNucleoli)},
      {CriterionKind::Sheeting, blank_state(CriterionKind::Sheeting)},
      {CriterionKind::Necrosis, blank_state(CriterionKind::Necrosis)},
      {CriterionKind::SmallCell, blank_state(CriterionKind::SmallCell)},
  };
  CriterionState brain_invasion = blank_state(CriterionKind::BrainInvasion);
  Subtype subtype = Subtype::other;
  bool subtype_set = false;

  CriterionState& state(CriterionKind k) {
    switch (k) {
      case CriterionKind::MitoticCount: return mitosis;
      case CriterionKind::Ki67Index: return ki67;
      case CriterionKind::BrainInvasion: return brain_invasion;
      default: break;
    }
    const auto it = features.find(k);
    if (it == features.end()) throw Error(ErrorCode::contract, "no state for " + std::string(to_string(k)));
    return it->second;
  }
  const CriterionState& state(CriterionKind k) const { return const_cast<CriteriaSnapshot*>(this)->state(k); }

  CriterionState subtype_state() const {
    CriterionState s{CriterionKind::Subtype, AiSuggestion::not_applicable, std::nullopt, std::nullopt, false};
    if (subtype_set) s.override_value = subtype;
    return s;
  }

  int features_present() const {
    int n = 0;
    for (const auto& [k, s] : features) n += effective_status(s) == EffectiveStatus::present ? 1 : 0;
    return n;
  }

  friend bool operator==(const CriteriaSnapshot&, const CriteriaSnapshot&) = default;
};

struct FiredRule {
  std::string id;
  std::string text;
  CriterionKind criterion;

  friend bool operator==(const FiredRule&, const FiredRule&) = default;
};

struct GradeResult {
  Grade grade = Grade::I;
  std::optional<CriterionKind> main_contributing;
  std::vector<FiredRule> fired_rules;

  friend bool operator==(const GradeResult&, const GradeResult&) = default;
};

// Rules are evaluated in precedence order (grade III before grade II; within
// a grade: mitoses, subtype, brain invasion, features). The first satisfied
// rule names the main contributing criterion.
inline GradeResult compute_grade(const CriteriaSnapshot& s) {
  GradeResult out;
  std::vector<std::pair<Grade, FiredRule>> fired;
  const auto n = s.mitotic_count_10hpf;
  if (n >= 20)
    fired.push_back({Grade::III, {"III.mitoses", std::to_string(n) + " mitoses per 10 HPF (>= 20)",
                                  CriterionKind::MitoticCount}});
  if (is_grade3_subtype(s.subtype))
    fired.push_back({Grade::III, {"III.subtype", std::string(to_string(s.subtype)) + " subtype",
                                  CriterionKind::Subtype}});
  if (n >= 4 && n <= 19)
    fired.push_back({Grade::II, {"II.mitoses", std::to_string(n) + " mitoses per 10 HPF (4 to 19)",
                                 CriterionKind::MitoticCount}});
  if (is_grade2_subtype(s.subtype))
    fired.push_back({Grade::II, {"II.subtype", std::string(to_string(s.subtype)) + " subtype",
                                 CriterionKind::Subtype}});
  if (effective_status(s.brain_invasion) == EffectiveStatus::present)
    fired.push_back({Grade::II, {"II.brain_invasion", "brain invasion observed", CriterionKind::BrainInvasion}});
  const int features = s.features_present();
  if (features >= 3) {
    // The arrow points at the first present feature in panel order.
    CriterionKind first = CriterionKind::Hypercellularity;
    for (auto k : kFeatureCriteria) {
      if (effective_status(s.features.at(k)) == EffectiveStatus::present) {
        first = k;
        break;
      }
    }
    fired.push_back({Grade::II, {"II.features", std::to_string(features) + " of 5 histological features present",
                                 first}});
  }
  if (fired.empty()) {
    out.grade = Grade::I;
    out.fired_rules.push_back({"I.none", "no grade II or III criterion met", CriterionKind::MitoticCount});
    return out;
  }
  out.grade = fired.front().first;
  out.main_contributing = fired.front().second.criterion;
  for (auto& [g, r] : fired) out.fired_rules.push_back(std::move(r));
  return out;
}

// Applies (or, with nullopt, clears) an override and regrades. The raw
// mitotic count is not overridable; it changes through evidence review.
inline std::pair<CriteriaSnapshot, GradeResult> apply_override(CriteriaSnapshot s, CriterionKind criterion,
                                                              const std::optional<OverrideValue>& value) {
  if (criterion == CriterionKind::MitoticCount)
    throw Error(ErrorCode::validation, "mitotic count changes through evidence actions, not overrides");
  if (criterion == CriterionKind::Subtype) {
    if (!value) {
      s.subtype = Subtype::other;
      s.subtype_set = false;
    } else if (const auto* t = std::get_if<Subtype>(&*value)) {
      s.subtype = *t;
      s.subtype_set = true;
    } else {
      throw Error(ErrorCode::validation, "subtype override needs a subtype value");
    }
    return {s, compute_grade(s)};
  }
  if (value) {
    if (std::holds_alternative<Subtype>(*value))
      throw Error(ErrorCode::validation, "subtype value on a non-subtype criterion");
    if (const auto* pct = std::get_if<double>(&*value)) {
      if (criterion != CriterionKind::Ki67Index)
        throw Error(ErrorCode::validation, "numeric override only applies to Ki67Index");
      if (!(*pct >= 0.0 && *pct <= 100.0)) throw Error(ErrorCode::validation, "Ki-67 override must be a percent");
    }
  }
  s.state(criterion).override_value = value;
  return {s, compute_grade(s)};
}

// ---------------------------------------------------------------------------
// JSON

inline json criterion_json(const CriterionState& s) {
  json j{{"kind", to_string(s.kind)},
         {"ai", to_string(s.ai)},
         {"status", to_string(effective_status(s))},
         {"color", to_string(display_color(s))},
         {"confirmed", s.confirmed}};
  if (s.value) j["value"] = *s.value;
  if (s.override_value && std::holds_alternative<double>(*s.override_value))
    j["value"] = std::get<double>(*s.override_value);
  if (s.override_value) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) {
            j["override"] = v;
          } else {
            j["override"] = to_string(v);
          }
        },
        *s.override_value);
  } else {
    j["override"] = nullptr;
  }
  return j;
}

inline json grade_json(const GradeResult& g, const CriteriaSnapshot& s) {
  json rules = json::array();
  for (const auto& r : g.fired_rules) rules.push_back({{"id", r.id}, {"text", r.text}});
  json criteria = json::array();
  auto mitosis = s.mitosis;
  mitosis.value = static_cast<double>(s.mitotic_count_10hpf);
  criteria.push_back(criterion_json(mitosis));
  criteria.push_back(criterion_json(s.ki67));
  for (auto k : kFeatureCriteria) criteria.push_back(criterion_json(s.features.at(k)));
  criteria.push_back(criterion_json(s.brain_invasion));
  auto sub = criterion_json(s.subtype_state());
  sub["value"] = to_string(s.subtype);
  criteria.push_back(sub);
  return json{{"grade", to_string(g.grade)},
              {"main_contributing", g.main_contributing ? json(to_string(*g.main_contributing)) : json(nullptr)},
              {"fired_rules", rules},
              {"criteria", criteria}};
}

}  // namespace meningrade

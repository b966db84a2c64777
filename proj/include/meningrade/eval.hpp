#pragma once

// Detector evaluation: precision/recall sweep with best-F1 selection, and the
// mean relative error of nuclei counting.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "meningrade/core.hpp"

namespace meningrade {

struct PrPoint {
  double threshold = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 1.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::vector<PrPoint> curve;  // ascending threshold
  double best_f1 = 0.0;
  double best_threshold = 0.0;
  std::optional<double> counting_error_percent;
  std::int64_t counted = 0;
  std::int64_t skipped_zero_truth = 0;
};

inline void to_json(json& j, const PrPoint& p) {
  j = json{{"threshold", p.threshold}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn},
           {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"curve", r.curve},
           {"best_f1", {{"value", r.best_f1}, {"threshold", r.best_threshold}}},
           {"counting_error_percent", r.counting_error_percent ? json(*r.counting_error_percent) : json(nullptr)},
           {"counted", r.counted},
           {"skipped_zero_truth", r.skipped_zero_truth}};
}

// Counts at one threshold; a sample is predicted positive when score > t.
inline PrPoint pr_point(const std::vector<std::pair<double, bool>>& samples, double t) {
  PrPoint p;
  p.threshold = t;
  for (const auto& [score, label] : samples) {
    const bool pred = score > t;
    if (pred && label) ++p.tp;
    if (pred && !label) ++p.fp;
    if (!pred && label) ++p.fn;
  }
  // No predictions: precision is taken as 1.
  p.precision = p.tp + p.fp == 0 ? 1.0 : static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
  p.recall = p.tp + p.fn == 0 ? 0.0 : static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fn);
  p.f1 = p.tp == 0 ? 0.0 : 2.0 * static_cast<double>(p.tp) / static_cast<double>(2 * p.tp + p.fp + p.fn);
  return p;
}

// Sweep over the unique score values, sorted and merged in one pass.
inline std::vector<PrPoint> pr_curve(std::vector<std::pair<double, bool>> samples) {
  std::vector<PrPoint> out;
  if (samples.empty()) return out;
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::int64_t positives = 0;
  for (const auto& s : samples) positives += s.second ? 1 : 0;
  const auto n = static_cast<std::int64_t>(samples.size());
  // Walking up: everything at index >= i scores above the current threshold.
  std::int64_t below_pos = 0, below_neg = 0;
  std::size_t i = 0;
  while (i < samples.size()) {
    const double t = samples[i].first;
    while (i < samples.size() && samples[i].first == t) {
      (samples[i].second ? below_pos : below_neg)++;
      ++i;
    }
    PrPoint p;
    p.threshold = t;
    p.tp = positives - below_pos;
    p.fp = (n - positives) - below_neg;
    p.fn = below_pos;
    p.precision = p.tp + p.fp == 0 ? 1.0 : static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
    p.recall = positives == 0 ? 0.0 : static_cast<double>(p.tp) / static_cast<double>(positives);
    p.f1 = p.tp == 0 ? 0.0 : 2.0 * static_cast<double>(p.tp) / static_cast<double>(2 * p.tp + p.fp + p.fn);
    out.push_back(p);
  }
  return out;
}

inline void require_same_keys(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a == b) return;
  std::vector<std::string> only_a, only_b;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_a));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_b));
  std::string msg = "prediction and truth keys differ";
  if (!only_a.empty()) msg += "; only in predictions: " + only_a.front() + (only_a.size() > 1 ? ", ..." : "");
  if (!only_b.empty()) msg += "; only in truth: " + only_b.front() + (only_b.size() > 1 ? ", ..." : "");
  throw Error(ErrorCode::key_mismatch, msg);
}

inline EvalReport evaluate_scores(const std::map<std::string, double>& scores, const std::map<std::string, bool>& truth) {
  std::set<std::string> ks, kt;
  for (const auto& [k, v] : scores) ks.insert(k);
  for (const auto& [k, v] : truth) kt.insert(k);
  require_same_keys(ks, kt);
  std::vector<std::pair<double, bool>> samples;
  for (const auto& [k, s] : scores) samples.push_back({s, truth.at(k)});
  EvalReport r;
  r.curve = pr_curve(std::move(samples));
  for (const auto& p : r.curve) {
    if (p.f1 > r.best_f1 || (&p == &r.curve.front())) {
      r.best_f1 = p.f1;
      r.best_threshold = p.threshold;
    }
  }
  return r;
}

// Mean |pred - truth| / truth over samples with truth > 0, in percent.
inline EvalReport evaluate_counts(const std::map<std::string, double>& pred, const std::map<std::string, double>& truth) {
  std::set<std::string> kp, kt;
  for (const auto& [k, v] : pred) kp.insert(k);
  for (const auto& [k, v] : truth) kt.insert(k);
  require_same_keys(kp, kt);
  EvalReport r;
  double sum = 0.0;
  for (const auto& [k, t] : truth) {
    if (t <= 0.0) {
      ++r.skipped_zero_truth;
      continue;
    }
    sum += std::abs(pred.at(k) - t) / t;
    ++r.counted;
  }
  if (r.counted > 0) r.counting_error_percent = 100.0 * sum / static_cast<double>(r.counted);
  return r;
}

// Key of one line: "key" if present, else slide_id|criterion|x,y,w,h.
inline std::string eval_key(const json& j) {
  if (j.contains("key")) return j.at("key").is_string() ? j.at("key").get<std::string>() : j.at("key").dump();
  if (!j.contains("slide_id") || !j.contains("rect"))
    throw Error(ErrorCode::schema_violation, "eval line needs a key or slide_id and rect");
  const auto r = j.at("rect").get<Rect>();
  return j.at("slide_id").get<std::string>() + "|" + j.value("criterion", std::string{}) + "|" + std::to_string(r.x) +
         "," + std::to_string(r.y) + "," + std::to_string(r.w) + "," + std::to_string(r.h);
}

// `field` lines from a JSON Lines file, keyed; duplicate keys are an error.
inline std::map<std::string, json> keyed_lines(const std::filesystem::path& path) {
  std::map<std::string, json> out;
  for (const auto& j : read_json_lines(path)) {
    auto k = eval_key(j);
    if (!out.emplace(k, j).second) throw Error(ErrorCode::key_mismatch, "duplicate key " + k + " in " + path.string());
  }
  return out;
}

// Score mode when prediction lines carry "score"; count mode when they carry "count".
inline EvalReport evaluate_files(const std::filesystem::path& pred_path, const std::filesystem::path& truth_path) {
  const auto pred = keyed_lines(pred_path);
  const auto truth = keyed_lines(truth_path);
  if (pred.empty()) throw Error(ErrorCode::validation, "no predictions");
  const bool counting = pred.begin()->second.contains("count");
  try {
    if (counting) {
      std::map<std::string, double> p, t;
      for (const auto& [k, j] : pred) p[k] = j.at("count").get<double>();
      for (const auto& [k, j] : truth) t[k] = j.at("count").get<double>();
      return evaluate_counts(p, t);
    }
    std::map<std::string, double> s;
    std::map<std::string, bool> t;
    for (const auto& [k, j] : pred) s[k] = j.at("score").get<double>();
    for (const auto& [k, j] : truth) {
      const auto& l = j.at("label");
      t[k] = l.is_boolean() ? l.get<bool>() : l.get<double>() != 0.0;
    }
    return evaluate_scores(s, t);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema_violation, e.what());
  }
}

}  // namespace meningrade

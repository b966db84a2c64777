#pragma once

// Brute-force oracles and the scripted scenarios shared by the unit tests and
// the acceptance runner.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "meningrade/commands.hpp"
#include "meningrade/eval.hpp"
#include "meningrade/session.hpp"
#include "meningrade/synth.hpp"
#include "support.hpp"

namespace testing_support {

using namespace meningrade;

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Oracles

inline std::int64_t naive_sum(const CountGrid& g, const CellWindow& w) {
  std::int64_t s = 0;
  for (std::int64_t r = w.row; r < w.row + w.rows; ++r)
    for (std::int64_t c = w.col; c < w.col + w.cols; ++c) s += g.at(r, c);
  return s;
}

struct BruteWindow {
  std::int64_t value = 0;
  CellWindow window;
  Rect rect;
};

// Exhaustive argmax; the canonical placement is the first one reaching the
// maximum in (shape order, row, column) order.
inline BruteWindow brute_best_window(const CountGrid& g, const std::vector<std::pair<std::int64_t, std::int64_t>>& shapes) {
  std::vector<BruteWindow> all;
  for (auto [h, w] : shapes) {
    const auto wh = std::min(h, g.rows), ww = std::min(w, g.cols);
    for (std::int64_t r = 0; r + wh <= g.rows; ++r)
      for (std::int64_t c = 0; c + ww <= g.cols; ++c) {
        const CellWindow win{r, c, wh, ww};
        all.push_back({naive_sum(g, win), win, {}});
      }
  }
  std::int64_t best = all.front().value;
  for (const auto& b : all) best = std::max(best, b.value);
  auto out = *std::find_if(all.begin(), all.end(), [&](const BruteWindow& b) { return b.value == best; });
  out.rect = {g.origin.x + out.window.col * g.cell_px, g.origin.y + out.window.row * g.cell_px,
              std::min(out.window.cols * g.cell_px, g.origin.right() - (g.origin.x + out.window.col * g.cell_px)),
              std::min(out.window.rows * g.cell_px, g.origin.bottom() - (g.origin.y + out.window.row * g.cell_px))};
  return out;
}

inline CountGrid random_grid(std::mt19937_64& rng, std::int64_t max_side = 64) {
  std::uniform_int_distribution<std::int64_t> side(1, max_side);
  const auto rows = side(rng), cols = side(rng);
  std::vector<std::vector<std::int64_t>> v(static_cast<std::size_t>(rows), std::vector<std::int64_t>(static_cast<std::size_t>(cols)));
  // sparse small counts so ties are common
  std::uniform_int_distribution<int> pick(0, 9);
  for (auto& row : v)
    for (auto& x : row) {
      const int p = pick(rng);
      x = p < 6 ? 0 : p - 5;
    }
  return CountGrid::from_rows(v, 400);
}

// Reference greedy suppression: repeatedly take the best remaining box.
inline std::vector<Detection> brute_nms(std::vector<Detection> pool, double thr) {
  auto better = [](const Detection& a, const Detection& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
    if (a.bbox.x != b.bbox.x) return a.bbox.x < b.bbox.x;
    return a.detection_id < b.detection_id;
  };
  std::vector<Detection> kept;
  while (!pool.empty()) {
    std::size_t bi = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
      if (better(pool[i], pool[bi])) bi = i;
    const auto best = pool[bi];
    kept.push_back(best);
    std::vector<Detection> rest;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i == bi) continue;
      // IoU from scratch
      const auto& a = best.bbox;
      const auto& b = pool[i].bbox;
      const auto ix = std::max<std::int64_t>(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
      const auto iy = std::max<std::int64_t>(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
      const double inter = static_cast<double>(ix * iy);
      const double v = inter == 0 ? 0.0 : inter / static_cast<double>(a.w * a.h + b.w * b.h - ix * iy);
      if (!(v > thr)) rest.push_back(pool[i]);
    }
    pool = std::move(rest);
  }
  return kept;
}

inline std::vector<Detection> random_detections(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<std::int64_t> pos(0, 300), size(10, 80);
  std::uniform_int_distribution<int> prob(0, 9);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    Detection d;
    d.detection_id = "d" + std::to_string(i);
    d.slide_id = "s";
    d.bbox = {pos(rng), pos(rng), size(rng), size(rng)};
    d.tile = d.bbox;
    d.prob = 0.5 + 0.05 * prob(rng);  // coarse, so ties happen
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grading truth table

struct GradeRow {
  std::string name;
  CriteriaSnapshot snapshot;
  Grade expected;
  std::string first_rule;
  std::optional<CriterionKind> main;
};

inline CriteriaSnapshot make_snapshot(std::int64_t mitoses, std::vector<CriterionKind> features = {},
                                      bool invasion = false, Subtype subtype = Subtype::other) {
  CriteriaSnapshot s;
  s.mitotic_count_10hpf = mitoses;
  s.mitosis.value = static_cast<double>(mitoses);
  s.mitosis.ai = mitoses >= 4 ? AiSuggestion::present : AiSuggestion::absent;
  for (auto k : features) s.state(k).ai = AiSuggestion::present;
  if (invasion) s.brain_invasion.ai = AiSuggestion::present;
  if (subtype != Subtype::other) {
    s.subtype = subtype;
    s.subtype_set = true;
  }
  return s;
}

inline std::vector<GradeRow> grading_truth_table() {
  using K = CriterionKind;
  const std::vector<K> two{K::Hypercellularity, K::Sheeting};
  const std::vector<K> three{K::Hypercellularity, K::Sheeting, K::Necrosis};
  const std::vector<K> five{K::Hypercellularity, K::ProminentNucleoli, K::Sheeting, K::Necrosis, K::SmallCell};
  std::vector<GradeRow> rows{
      {"nothing", make_snapshot(0), Grade::I, "I.none", std::nullopt},
      {"3 mitoses", make_snapshot(3), Grade::I, "I.none", std::nullopt},
      {"4 mitoses", make_snapshot(4), Grade::II, "II.mitoses", K::MitoticCount},
      {"19 mitoses", make_snapshot(19), Grade::II, "II.mitoses", K::MitoticCount},
      {"20 mitoses", make_snapshot(20), Grade::III, "III.mitoses", K::MitoticCount},
      {"57 mitoses", make_snapshot(57), Grade::III, "III.mitoses", K::MitoticCount},
      {"2 of 5 features", make_snapshot(0, two), Grade::I, "I.none", std::nullopt},
      {"3 of 5 features", make_snapshot(0, three), Grade::II, "II.features", K::Hypercellularity},
      {"5 of 5 features", make_snapshot(0, five), Grade::II, "II.features", K::Hypercellularity},
      {"brain invasion", make_snapshot(0, {}, true), Grade::II, "II.brain_invasion", K::BrainInvasion},
      {"clear cell", make_snapshot(0, {}, false, Subtype::clear_cell), Grade::II, "II.subtype", K::Subtype},
      {"chordoid", make_snapshot(0, {}, false, Subtype::chordoid), Grade::II, "II.subtype", K::Subtype},
      {"papillary", make_snapshot(0, {}, false, Subtype::papillary), Grade::III, "III.subtype", K::Subtype},
      {"rhabdoid", make_snapshot(0, {}, false, Subtype::rhabdoid), Grade::III, "III.subtype", K::Subtype},
      {"frank anaplasia", make_snapshot(0, {}, false, Subtype::frank_anaplasia), Grade::III, "III.subtype",
       K::Subtype},
      {"other subtype, 3 mitoses, 2 features", make_snapshot(3, two, false, Subtype::other), Grade::I, "I.none",
       std::nullopt},
      {"20 mitoses and papillary", make_snapshot(20, {}, false, Subtype::papillary), Grade::III, "III.mitoses",
       K::MitoticCount},
      {"3 mitoses and rhabdoid", make_snapshot(3, two, true, Subtype::rhabdoid), Grade::III, "III.subtype",
       K::Subtype},
      {"20 mitoses and clear cell", make_snapshot(20, {}, false, Subtype::clear_cell), Grade::III, "III.mitoses",
       K::MitoticCount},
      {"4 mitoses, invasion, 3 features", make_snapshot(4, three, true), Grade::II, "II.mitoses", K::MitoticCount},
      {"invasion and 3 features", make_snapshot(0, three, true), Grade::II, "II.brain_invasion", K::BrainInvasion},
      {"chordoid and invasion", make_snapshot(0, {}, true, Subtype::chordoid), Grade::II, "II.subtype", K::Subtype},
      {"features starting at sheeting", make_snapshot(0, {K::Sheeting, K::Necrosis, K::SmallCell}), Grade::II,
       "II.features", K::Sheeting},
  };
  // an unconfirmed third feature does not count
  auto s = make_snapshot(0, two);
  s.state(K::Necrosis).ai = AiSuggestion::unconfirmed;
  rows.push_back({"2 features and 1 unconfirmed", s, Grade::I, "I.none", std::nullopt});
  // not_found override on one of three
  s = make_snapshot(0, three);
  s.state(K::Necrosis).override_value = OverrideStatus::not_found;
  rows.push_back({"3 features, one overridden away", s, Grade::I, "I.none", std::nullopt});
  // found override completing three
  s = make_snapshot(0, two);
  s.state(K::SmallCell).override_value = OverrideStatus::found;
  rows.push_back({"2 features and a found override", s, Grade::II, "II.features", K::Hypercellularity});
  // invasion overridden uncertain
  s = make_snapshot(0, {}, true);
  s.brain_invasion.override_value = OverrideStatus::uncertain;
  rows.push_back({"invasion overridden uncertain", s, Grade::I, "I.none", std::nullopt});
  return rows;
}

inline Check check_grading_table() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = grading_truth_table();
  std::ostringstream bad;
  int ok = 0;
  for (const auto& r : rows) {
    const auto g = compute_grade(r.snapshot);
    if (g.grade == r.expected && g.fired_rules.front().id == r.first_rule && g.main_contributing == r.main) {
      ++ok;
    } else {
      bad << " [" << r.name << ": got " << to_string(g.grade) << " " << g.fired_rules.front().id << "]";
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << ok << "/" << rows.size() << " rows exact, " << secs << " s" << bad.str();
  return {"grading truth table", ok == static_cast<int>(rows.size()) && rows.size() >= 16 && secs < 1.0, d.str()};
}

// ---------------------------------------------------------------------------
// Thresholds

inline Check check_thresholds() {
  const ThresholdTable t;
  std::ostringstream bad;
  const std::vector<std::pair<CriterionKind, double>> cut{{CriterionKind::MitoticCount, 0.78},
                                                          {CriterionKind::Necrosis, 0.74},
                                                          {CriterionKind::ProminentNucleoli, 0.90},
                                                          {CriterionKind::Sheeting, 0.52}};
  for (auto [k, c] : cut) {
    if (apply_threshold(k, c, t)) bad << " " << to_string(k) << "@=cut";
    if (!apply_threshold(k, std::nextafter(c, 2.0), t)) bad << " " << to_string(k) << "@cut+ulp";
    if (apply_threshold(k, std::nextafter(c, -1.0), t)) bad << " " << to_string(k) << "@cut-ulp";
    if (apply_threshold(k, 0.0, t) || !apply_threshold(k, 1.0, t)) bad << " " << to_string(k) << "@ends";
  }
  auto patches = [](std::vector<std::int64_t> counts) {
    std::vector<PatchCount> out;
    for (std::size_t i = 0; i < counts.size(); ++i)
      out.push_back({{"s", {static_cast<std::int64_t>(i) * 512, 0, 512, 512}, PatchFamily::base_he}, counts[i], {}});
    return out;
  };
  const auto r1 = recommend_small_cell(patches({200, 150, 130, 120}), t);
  if (r1.size() != 3 || r1[0].count != 200 || r1[2].count != 130) bad << " small-cell example";
  if (!recommend_small_cell(patches({125, 125, 90}), t).empty()) bad << " small-cell 125";
  if (recommend_small_cell(patches(std::vector<std::int64_t>(15, 126)), t).size() != 10) bad << " small-cell top10";
  // top-10 is taken before the cutoff: 10 patches above 300 push the 126s out
  std::vector<std::int64_t> mixed(10, 300);
  mixed.insert(mixed.end(), 5, 126);
  if (recommend_small_cell(patches(mixed), t).size() != 10) bad << " small-cell order";
  const std::vector<std::pair<std::int64_t, RegionType>> types{
      {0, RegionType::background}, {9, RegionType::background}, {10, RegionType::brain}, {30, RegionType::brain},
      {55, RegionType::brain},     {56, RegionType::tumor},     {400, RegionType::tumor}};
  for (auto [n, want] : types)
    if (classify_region_type(n, t) != want) bad << " region-type " << n;
  const bool pass = bad.str().empty();
  return {"threshold exactness", pass,
          pass ? "strict cutoffs 0.78/0.74/0.90/0.52, small-cell top-10 >125, region >55 / [10,55]" : bad.str()};
}

// ---------------------------------------------------------------------------
// Sampling oracles

inline Check check_sampling(int grids = 200) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::int64_t> hpf(1, 6);
  int ok = 0;
  std::ostringstream bad;
  for (int i = 0; i < grids; ++i) {
    const auto g = random_grid(rng);
    const auto h = i % 2 == 0 ? std::int64_t{5} : hpf(rng);
    const auto focal = highest_focal_region(g, h);
    const auto region = highest_region(g, h);
    const auto bf = brute_best_window(g, {{h, h}});
    const auto br = brute_best_window(g, {{2 * h, 5 * h}, {5 * h, 2 * h}});
    const bool same = focal.count == bf.value && focal.window == bf.window && focal.rect == bf.rect &&
                      region.count == br.value && region.window == br.window && region.rect == br.rect;
    if (same) {
      ++ok;
    } else if (bad.str().size() < 200) {
      bad << " grid " << i << " (" << g.rows << "x" << g.cols << ", hpf " << h << ")";
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << ok << "/" << grids << " grids match brute force, " << secs << " s" << bad.str();
  return {"sampling oracle equivalence", ok == grids && secs < 10.0, d.str()};
}

inline Check check_integral(int windows = 1000) {
  std::mt19937_64 rng(99);
  int ok = 0;
  for (int i = 0; i < windows; ++i) {
    const auto g = random_grid(rng);
    const IntegralGrid ig(g);
    std::uniform_int_distribution<std::int64_t> r0(0, g.rows), c0(0, g.cols);
    const auto r = r0(rng), c = c0(rng);
    std::uniform_int_distribution<std::int64_t> rr(0, g.rows - r), cc(0, g.cols - c);
    const CellWindow w{r, c, rr(rng), cc(rng)};
    ok += ig.window_sum(w) == naive_sum(g, w) ? 1 : 0;
  }
  return {"integral-grid exactness", ok == windows,
          std::to_string(ok) + "/" + std::to_string(windows) + " windows equal naive sums"};
}

inline Check check_nms(int instances = 100) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> n(1, 60);
  int ok = 0;
  std::ostringstream bad;
  for (int i = 0; i < instances; ++i) {
    const auto dets = random_detections(rng, n(rng));
    const auto kept = nms(dets, 0.25);
    bool good = kept == brute_nms(dets, 0.25);
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = a + 1; b < kept.size(); ++b) good = good && iou(kept[a].bbox, kept[b].bbox) <= 0.25;
    for (int p = 0; p < 3; ++p) {
      auto shuffled = dets;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      good = good && nms(shuffled, 0.25) == kept;
    }
    if (good) {
      ++ok;
    } else {
      bad << " instance " << i;
    }
  }
  return {"NMS property", ok == instances,
          std::to_string(ok) + "/" + std::to_string(instances) +
              " instances: pairwise IoU <= 0.25, permutation invariant, equal to reference" + bad.str()};
}

inline Check check_ki67() {
  struct V {
    std::int64_t pos, neg;
    std::optional<std::pair<std::int64_t, std::int64_t>> ratio;  // reduced by hand: percent = 100 * a / b
  };
  const std::vector<V> vectors{{0, 0, std::nullopt}, {0, 10, std::pair{0, 1}},   {10, 0, std::pair{1, 1}},
                               {1, 3, std::pair{1, 4}}, {1, 2, std::pair{1, 3}},   {7, 93, std::pair{7, 100}},
                               {3, 997, std::pair{3, 1000}}, {250, 750, std::pair{1, 4}}, {1, 0, std::pair{1, 1}}};
  std::ostringstream bad;
  for (const auto& v : vectors) {
    std::optional<Ki67Index> r;
    try {
      r = ki67_index(v.pos, v.neg);
    } catch (const std::exception&) {
      bad << " (" << v.pos << "," << v.neg << ") threw";
      continue;
    }
    if (!v.ratio) {
      if (r) bad << " (0,0) not n/a";
      continue;
    }
    if (!r || r->positive != v.pos || r->total != v.pos + v.neg) {
      bad << " (" << v.pos << "," << v.neg << ") fields";
      continue;
    }
    // exact rational equality by cross-multiplication, then the double value
    const auto [a, b] = *v.ratio;
    if (r->positive * b != a * r->total) bad << " (" << v.pos << "," << v.neg << ") ratio";
    if (r->percent() != 100.0 * static_cast<double>(v.pos) / static_cast<double>(v.pos + v.neg))
      bad << " (" << v.pos << "," << v.neg << ") percent";
  }
  if (ki67_index(0, 5)->percent() != 0.0 || ki67_index(5, 0)->percent() != 100.0) bad << " edges";
  const bool pass = bad.str().empty();
  return {"Ki-67 formula", pass, pass ? std::to_string(vectors.size()) + " vectors exact, (0,0) not applicable" : bad.str()};
}

// ---------------------------------------------------------------------------
// End to end on synthetic slides

struct E2eRun {
  int k = 0;
  std::int64_t region = -1;
  std::int64_t focal = -1;
  Grade grade = Grade::I;
  bool deterministic = false;
  double max_process_s = 0.0;
  double synth_s = 0.0;
};

inline E2eRun run_e2e(int k, const fs::path& root, std::int64_t node = 8192) {
  E2eRun r;
  r.k = k;
  SynthParams p;
  p.seed = 1000 + static_cast<std::uint64_t>(k);
  p.case_id = "e2e-" + std::to_string(k);
  p.node_size = node;
  p.mitoses = k;
  auto t0 = std::chrono::steady_clock::now();
  const auto s = generate_case(p, root / "synth");
  r.synth_s = seconds_since(t0);
  std::vector<fs::path> outs{root / "w1", root / "w1-again", root / "w4"};
  std::vector<int> workers{1, 1, 4};
  for (std::size_t i = 0; i < outs.size(); ++i) {
    t0 = std::chrono::steady_clock::now();
    const auto res = run_process(s.manifest, s.bindings, Config{}, outs[i], workers[i]);
    r.max_process_s = std::max(r.max_process_s, seconds_since(t0));
    if (i == 0) {
      for (const auto& reg : res.analysis.regions) {
        if (reg.kind == SampleKind::region_10hpf) r.region = reg.count;
        if (reg.kind == SampleKind::focal_1hpf) r.focal = reg.count;
      }
      r.grade = res.analysis.grade.grade;
    }
  }
  r.deterministic = same_tree(outs[0], outs[1]) && same_tree(outs[0], outs[2]);
  return r;
}

inline Grade expected_grade_for(int k) { return k >= 20 ? Grade::III : k >= 4 ? Grade::II : Grade::I; }

inline Check check_e2e(const fs::path& root) {
  bool pass = true;
  std::ostringstream d;
  for (int k : {3, 4, 19, 20}) {
    const auto r = run_e2e(k, root / ("k" + std::to_string(k)));
    const bool ok = r.region == k && r.focal == k && r.grade == expected_grade_for(k) && r.deterministic &&
                    r.max_process_s < 60.0;
    pass = pass && ok;
    d << (d.str().empty() ? "" : "; ") << "k=" << k << " region " << r.region << " focal " << r.focal << " grade "
      << to_string(r.grade) << (r.deterministic ? " identical" : " DIFFERENT") << " max " << r.max_process_s << " s";
  }
  return {"end-to-end synthetic", pass, d.str()};
}

// ---------------------------------------------------------------------------
// Review dynamics

struct ReviewScript {
  std::vector<Grade> grades;      // before any action, then after each action
  std::vector<std::int64_t> counts;
  bool replay_identical = false;
  bool reload_identical = false;
  std::string error;
};

inline Action make_action(ActionKind k, json payload) {
  Action a;
  a.kind = k;
  a.payload = std::move(payload);
  a.actor = "tester";
  a.timestamp = "2026-01-01T00:00:00Z";
  return a;
}

// decline a mitosis, add one back by hand, decline that one, override necrosis
// found, clear the override.
inline ReviewScript run_review_script(const fs::path& case_dir) {
  ReviewScript out;
  try {
    SessionStore store(case_dir / "sessions");
    store.add_case(case_dir);
    const auto case_id = store.case_ids().front();
    auto& s = store.create_session(case_id);
    auto record = [&] {
      const auto st = s.state();
      out.grades.push_back(st.analysis.grade.grade);
      out.counts.push_back(st.analysis.snapshot.mitotic_count_10hpf);
    };
    record();
    const auto mits = s.state().analysis.evidence.at(CriterionKind::MitoticCount);
    if (mits.empty()) throw Error(ErrorCode::precondition, "no mitosis evidence");
    const auto target = mits.front();
    const auto c = target.zoom_rect.center();
    const std::vector<Action> script{
        make_action(ActionKind::evidence_action, {{"evidence_id", target.evidence_id}, {"action", "decline"}}),
        make_action(ActionKind::manual_add, {{"slide_id", target.slide_id}, {"x", c.x}, {"y", c.y}}),
        make_action(ActionKind::evidence_action, {{"evidence_id", "manual-1"}, {"action", "decline"}}),
        make_action(ActionKind::override, {{"criterion", "Necrosis"}, {"value", "found"}}),
        make_action(ActionKind::clear_override, {{"criterion", "Necrosis"}}),
    };
    for (const auto& a : script) {
      s.submit(a);
      record();
    }
    const auto live = state_json(case_id, s.state()).dump();
    const auto replayed = state_json(case_id, replay(s.data(), s.log())).dump();
    out.replay_identical = live == replayed;
    const auto loaded = Session::load(case_dir / "sessions" / s.id(), store.case_data(case_id), 2);
    out.reload_identical = state_json(case_id, loaded->state()).dump() == live;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

inline Check check_review(const fs::path& root) {
  const auto c = make_processed_case(root.filename().string(), review_case_params());
  const auto r = run_review_script(c.out_dir);
  const std::vector<Grade> want{Grade::II, Grade::I, Grade::II, Grade::I, Grade::II, Grade::I};
  const std::vector<std::int64_t> want_counts{4, 3, 4, 3, 3, 3};
  std::ostringstream d;
  d << "grades";
  for (auto g : r.grades) d << " " << to_string(g);
  d << ", counts";
  for (auto n : r.counts) d << " " << n;
  d << (r.replay_identical ? ", replay identical" : ", replay DIFFERS");
  d << (r.reload_identical ? ", reload identical" : ", reload DIFFERS");
  if (!r.error.empty()) d << ", error: " << r.error;
  return {"review dynamics", r.error.empty() && r.grades == want && r.counts == want_counts && r.replay_identical &&
                                 r.reload_identical,
          d.str()};
}

// ---------------------------------------------------------------------------
// Evaluation

// Positives 0.9 0.8 0.7 0.3, negatives 0.6 0.2 0.1. At t = 0.5: TP 3, FP 1, FN 1.
inline std::vector<std::pair<double, bool>> planted_scores() {
  return {{0.9, true}, {0.8, true}, {0.7, true}, {0.3, true}, {0.6, false}, {0.2, false}, {0.1, false}};
}

inline Check check_eval() {
  std::ostringstream bad;
  const auto samples = planted_scores();
  const auto p = pr_point(samples, 0.5);
  if (p.tp != 3 || p.fp != 1 || p.fn != 1 || p.precision != 0.75 || p.recall != 0.75 || p.f1 != 0.75)
    bad << " t=0.5 point";
  // hand-computed sweep: threshold -> (tp, fp, fn)
  const std::vector<std::tuple<double, int, int, int>> want{{0.1, 4, 2, 0}, {0.2, 4, 1, 0}, {0.3, 3, 1, 1},
                                                            {0.6, 3, 0, 1}, {0.7, 2, 0, 2}, {0.8, 1, 0, 3},
                                                            {0.9, 0, 0, 4}};
  std::map<std::string, double> scores;
  std::map<std::string, bool> truth;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    scores["k" + std::to_string(i)] = samples[i].first;
    truth["k" + std::to_string(i)] = samples[i].second;
  }
  const auto r = evaluate_scores(scores, truth);
  if (r.curve.size() != want.size()) {
    bad << " curve size " << r.curve.size();
  } else {
    for (std::size_t i = 0; i < want.size(); ++i) {
      const auto [t, tp, fp, fn] = want[i];
      const auto& q = r.curve[i];
      const double prec = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
      const double rec = static_cast<double>(tp) / 4.0;
      const double f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
      if (q.threshold != t || q.tp != tp || q.fp != fp || q.fn != fn || q.precision != prec || q.recall != rec ||
          q.f1 != f1)
        bad << " t=" << t;
    }
  }
  if (r.best_threshold != 0.2 || r.best_f1 != 8.0 / 9.0) bad << " best " << r.best_threshold;
  // random sets: sweep equals naive recount, recall non-increasing, best is argmax
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> sc(0, 20);
  std::bernoulli_distribution lab(0.4);
  for (int inst = 0; inst < 50; ++inst) {
    std::map<std::string, double> s2;
    std::map<std::string, bool> t2;
    std::vector<std::pair<double, bool>> raw;
    for (int i = 0; i < 40; ++i) {
      const double v = sc(rng) / 20.0;
      const bool l = lab(rng);
      s2["k" + std::to_string(i)] = v;
      t2["k" + std::to_string(i)] = l;
      raw.push_back({v, l});
    }
    const auto e = evaluate_scores(s2, t2);
    double best = -1.0, best_t = 0.0;
    for (std::size_t i = 0; i < e.curve.size(); ++i) {
      const auto naive = pr_point(raw, e.curve[i].threshold);
      if (naive.tp != e.curve[i].tp || naive.fp != e.curve[i].fp || naive.fn != e.curve[i].fn ||
          naive.f1 != e.curve[i].f1)
        bad << " naive#" << inst;
      if (i > 0 && e.curve[i].recall > e.curve[i - 1].recall) bad << " recall#" << inst;
      if (naive.f1 > best) {
        best = naive.f1;
        best_t = naive.threshold;
      }
    }
    if (e.best_f1 != best || e.best_threshold != best_t) bad << " argmax#" << inst;
  }
  const bool pass = bad.str().empty();
  return {"evaluation harness", pass,
          pass ? "TP3/FP1/FN1 gives P=R=F1=0.75, 7-point sweep exact, best F1 8/9 at 0.2, 50 random sweeps match"
               : bad.str()};
}

// ---------------------------------------------------------------------------
// Performance

struct PerfResult {
  double single_s = 0.0;
  double four_s = 0.0;
  bool identical = false;
  unsigned cores = 0;
};

// 16384^2 slide, one small tissue node, manifest without node hints so the
// whole slide is tiled.
inline PerfResult run_performance(const fs::path& root) {
  SynthParams p;
  p.seed = 77;
  p.case_id = "perf";
  p.node_size = 2560;
  p.slide_size = 16384;
  p.mitoses = 5;
  const auto s = generate_case(p, root / "synth");
  auto m = read_json_file(s.manifest);
  for (auto& slide : m.at("slides")) slide["nodes"] = json::array();
  const auto full = s.manifest.parent_path() / "manifest-full.json";
  write_text_file(full, m.dump(2) + "\n");
  PerfResult r;
  r.cores = std::thread::hardware_concurrency();
  auto t0 = std::chrono::steady_clock::now();
  run_process(full, s.bindings, Config{}, root / "w1", 1);
  r.single_s = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  run_process(full, s.bindings, Config{}, root / "w4", 4);
  r.four_s = seconds_since(t0);
  r.identical = same_tree(root / "w1", root / "w4");
  return r;
}

inline Check check_performance(const fs::path& root) {
  const auto r = run_performance(root);
  const double speedup = r.four_s > 0 ? r.single_s / r.four_s : 0.0;
  std::ostringstream d;
  d << "1 worker " << r.single_s << " s (limit 120), 4 workers " << r.four_s << " s, speedup " << speedup
    << " (need >= 2), outputs " << (r.identical ? "identical" : "DIFFERENT") << ", " << r.cores
    << " hardware thread(s)";
  return {"performance", r.single_s < 120.0 && speedup >= 2.0 && r.identical, d.str()};
}

}  // namespace testing_support

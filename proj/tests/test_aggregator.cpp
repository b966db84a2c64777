#include <gtest/gtest.h>

#include "scenarios.hpp"

using namespace meningrade;
using namespace testing_support;

namespace {

PatchCount patch(std::int64_t x, std::int64_t y, std::int64_t count, std::string slide = "s") {
  return {{std::move(slide), {x * 512, y * 512, 512, 512}, PatchFamily::base_he}, count, {}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Count grids and windows

TEST(CountGrid, BinsDetectionCentersAndSkipsDeclined) {
  std::vector<Detection> ds(4);
  ds[0].slide_id = ds[1].slide_id = ds[2].slide_id = "a";
  ds[3].slide_id = "b";
  ds[0].bbox = {0, 0, 10, 10};
  ds[1].bbox = {395, 0, 10, 10};  // center 400 -> second column
  ds[2].bbox = {0, 0, 10, 10};
  ds[2].status = ReviewStatus::declined;
  ds[3].bbox = {0, 0, 10, 10};
  const auto g = build_count_grid(ds, "a", {0, 0, 800, 400}, 400);
  ASSERT_EQ(g.rows, 1);
  ASSERT_EQ(g.cols, 2);
  EXPECT_EQ(g.at(0, 0), 1);
  EXPECT_EQ(g.at(0, 1), 1);
}

TEST(CountGrid, PartialCellsRoundUp) {
  const CountGrid g("s", 400, {0, 0, 1001, 399});
  EXPECT_EQ(g.rows, 1);
  EXPECT_EQ(g.cols, 3);
  EXPECT_EQ(g.window_rect({0, 2, 1, 1}), (Rect{800, 0, 201, 399}));
  EXPECT_THROW(CountGrid("s", 0, {0, 0, 10, 10}), Error);
}

TEST(Sampling, FocalExampleThreeByThree) {
  const auto g = CountGrid::from_rows({{1, 0, 2}, {0, 3, 0}, {4, 0, 0}});
  const auto s = best_count_window(g, {{2, 2}}, SampleKind::focal_1hpf);
  EXPECT_EQ(s.count, 7);
  EXPECT_EQ(s.window, (CellWindow{1, 0, 2, 2}));
  EXPECT_FALSE(s.degenerate);
}

TEST(Sampling, UniformGridPicksOriginInWideOrientation) {
  const auto g = CountGrid::from_rows(std::vector<std::vector<std::int64_t>>(20, std::vector<std::int64_t>(20, 1)));
  const auto s = highest_region(g, 2);
  EXPECT_EQ(s.count, 40);
  EXPECT_EQ(s.window, (CellWindow{0, 0, 4, 10}));
}

TEST(Sampling, TallOrientationWinsWhenStrictlyBetter) {
  std::vector<std::vector<std::int64_t>> v(10, std::vector<std::int64_t>(10, 0));
  for (int r = 0; r < 5; ++r) v[r][9] = 1;  // a vertical line of five
  const auto s = highest_region(CountGrid::from_rows(v), 1);
  EXPECT_EQ(s.count, 5);
  EXPECT_EQ(s.window.rows, 5);
  EXPECT_EQ(s.window.cols, 2);
}

TEST(Sampling, SmallGridIsClippedAndFlagged) {
  const auto g = CountGrid::from_rows({{1, 2}, {3, 4}});
  const auto s = highest_region(g, 5);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.count, 10);
  EXPECT_EQ(s.rect, (Rect{0, 0, 2, 2}));
}

TEST(Sampling, EmptyGrid) {
  const CountGrid g;
  const auto s = highest_focal_region(g, 5);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.count, 0);
}

TEST(Sampling, AllZeroGridPicksOrigin) {
  const auto g = CountGrid::from_rows(std::vector<std::vector<std::int64_t>>(12, std::vector<std::int64_t>(12, 0)));
  const auto s = highest_focal_region(g, 5);
  EXPECT_EQ(s.count, 0);
  EXPECT_EQ(s.window, (CellWindow{0, 0, 5, 5}));
}

TEST(Sampling, MatchesBruteForceOn200Grids) {
  const auto c = check_sampling(200);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Sampling, IntegralGridMatchesNaiveSums) {
  const auto c = check_integral(1000);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Sampling, IntegralGridEmptyAndFullWindows) {
  const auto g = CountGrid::from_rows({{1, 2, 3}, {4, 5, 6}});
  const IntegralGrid ig(g);
  EXPECT_EQ(ig.window_sum({0, 0, 2, 3}), 21);
  EXPECT_EQ(ig.window_sum({1, 1, 0, 2}), 0);
  EXPECT_EQ(ig.window_sum({1, 2, 1, 1}), 6);
}

TEST(Ki67Window, BestFractionAboveMinimumTotal) {
  const auto pos = CountGrid::from_rows({{5, 0, 1}, {0, 0, 1}});
  const auto tot = CountGrid::from_rows({{100, 50, 1}, {50, 50, 1}});
  const auto s = highest_ki67_region(pos, tot, 1, 1, 10);
  ASSERT_FALSE(s.not_applicable);
  EXPECT_EQ(s.ki67->positive, 5);
  EXPECT_EQ(s.ki67->total, 100);
  const auto none = highest_ki67_region(pos, tot, 1, 1, 1000);
  EXPECT_TRUE(none.not_applicable);
  EXPECT_FALSE(none.ki67.has_value());
}

TEST(Ki67Window, MatchesBruteForceRatio) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    auto tot = random_grid(rng, 20);
    for (auto& c : tot.cells) c *= 10;
    auto pos = tot;
    std::uniform_int_distribution<int> f(0, 10);
    for (auto& c : pos.cells) c = c * f(rng) / 10;
    const auto s = highest_ki67_region(pos, tot, 3, 3, 30);
    std::optional<Ki67Index> best;
    for (std::int64_t r = 0; r + std::min<std::int64_t>(3, tot.rows) <= tot.rows; ++r)
      for (std::int64_t c = 0; c + std::min<std::int64_t>(3, tot.cols) <= tot.cols; ++c) {
        const CellWindow w{r, c, std::min<std::int64_t>(3, tot.rows), std::min<std::int64_t>(3, tot.cols)};
        const auto n = naive_sum(tot, w);
        if (n < 30) continue;
        const Ki67Index v{naive_sum(pos, w), n};
        if (!best || v.positive * best->total > best->positive * v.total) best = v;
      }
    ASSERT_EQ(s.not_applicable, !best.has_value());
    if (best) {
      EXPECT_EQ(s.ki67->positive * best->total, best->positive * s.ki67->total);
    }
  }
}

// ---------------------------------------------------------------------------
// Heatmaps

TEST(Heatmap, LinearQuantization) {
  auto g = CountGrid::from_rows({{0, 1, 2}, {4, 0, 3}}, 400);
  g.slide_id = "s";
  const auto h = render_heatmap(g, "MitoticCount");
  EXPECT_EQ(h.meta.max_value, 4);
  EXPECT_EQ(h.meta.cell_px, 400);
  EXPECT_EQ(h.raster.width, 3);
  EXPECT_EQ(h.raster.height, 2);
  EXPECT_EQ(h.raster.px(0, 0)[0], 0);
  EXPECT_EQ(h.raster.px(1, 0)[0], 64);  // 63.75 rounds up
  EXPECT_EQ(h.raster.px(2, 0)[0], 128);
  EXPECT_EQ(h.raster.px(0, 1)[0], 255);
  EXPECT_EQ(h.raster.px(2, 1)[0], 191);
}

TEST(Heatmap, AllZeroIsBlack) {
  const auto h = render_heatmap(CountGrid::from_rows({{0, 0}}));
  EXPECT_EQ(h.meta.max_value, 0);
  EXPECT_EQ(h.raster.px(1, 0)[0], 0);
}

// ---------------------------------------------------------------------------
// Recommenders

TEST(Recommenders, SmallCellExample) {
  const auto r = recommend_small_cell({patch(0, 0, 200), patch(1, 0, 150), patch(2, 0, 130), patch(3, 0, 120)});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].count, 200);
  EXPECT_EQ(r[1].count, 150);
  EXPECT_EQ(r[2].count, 130);
}

TEST(Recommenders, SmallCellTopTenOfFifteen) {
  std::vector<PatchCount> ps;
  for (int i = 0; i < 15; ++i) ps.push_back(patch(i, 0, 126 + i));
  const auto r = recommend_small_cell(ps);
  ASSERT_EQ(r.size(), 10u);
  EXPECT_EQ(r.front().count, 140);
  EXPECT_EQ(r.back().count, 131);
}

TEST(Recommenders, SmallCellTiesBreakRowMajor) {
  const auto r = recommend_small_cell({patch(1, 1, 130), patch(0, 1, 130), patch(2, 0, 130)});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].patch.rect.y, 0);
  EXPECT_EQ(r[1].patch.rect.x, 0);
  EXPECT_EQ(r[2].patch.rect.x, 512);
}

TEST(Recommenders, BrainBoundaryNeedsNeighbouringBrain) {
  // tumor | brain | background, then an isolated tumor patch far away
  const std::vector<PatchCount> ps{patch(0, 0, 80), patch(1, 0, 30), patch(2, 0, 3), patch(6, 6, 90),
                                   patch(5, 5, 9)};
  const auto r = brain_boundary_patches(ps);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].patch.rect.x, 0);
}

TEST(Recommenders, BrainBoundaryDiagonal) {
  const auto r = brain_boundary_patches({patch(0, 0, 56), patch(1, 1, 10)});
  ASSERT_EQ(r.size(), 1u);
  const auto none = brain_boundary_patches({patch(0, 0, 56), patch(1, 1, 9), patch(0, 1, 56)});
  EXPECT_TRUE(none.empty());
}

TEST(Recommenders, HotspotsAreTopK) {
  std::vector<PatchCount> ps;
  for (int i = 0; i < 20; ++i) ps.push_back(patch(i, 0, i));
  const auto r = hypercellularity_hotspots(ps, 10);
  ASSERT_EQ(r.size(), 10u);
  EXPECT_EQ(r.front().count, 19);
  EXPECT_EQ(r.back().count, 10);
}

// ---------------------------------------------------------------------------
// Evidence

TEST(Evidence, MitosisMembersOrderedByProbability) {
  CaseManifest m;
  m.case_id = "c";
  SlideMeta s;
  s.slide_id = "s";
  s.width_px = s.height_px = 10000;
  m.slides = {s};
  Config cfg;
  EvidenceInputs in{&m, &cfg, {}, {"a", "b"}, {}, nullptr};
  for (auto [id, p] : std::vector<std::pair<std::string, double>>{{"a", 0.8}, {"b", 0.95}, {"c", 0.99}}) {
    Detection d;
    d.detection_id = id;
    d.slide_id = "s";
    d.prob = p;
    d.bbox = {100, 9980, 20, 20};
    d.tile = {0, 9760, 240, 240};
    in.detections.push_back(d);
  }
  const auto ev = sample_evidence(CriterionKind::MitoticCount, in, 10);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].evidence_id, "b");
  EXPECT_EQ(ev[0].confidence, Confidence::High);
  EXPECT_EQ(ev[1].confidence, Confidence::Medium);
  // HPF box clamped inside the slide
  EXPECT_EQ(ev[0].hpf_rect, (Rect{0, 8000, 2000, 2000}));
  EXPECT_EQ(ev[0].zoom_rect, (Rect{100, 9980, 20, 20}));
  EXPECT_EQ(ev[0].context_rect, (Rect{0, 9760, 240, 240}));
}

TEST(Evidence, PresenceCriteriaCappedAtN) {
  CaseManifest m;
  SlideMeta s;
  s.slide_id = "s";
  s.width_px = s.height_px = 5000;
  m.slides = {s};
  Config cfg;
  EvidenceInputs in{&m, &cfg, {}, {}, {}, nullptr};
  for (int i = 0; i < 15; ++i) {
    Detection d;
    d.detection_id = "n" + std::to_string(i);
    d.slide_id = "s";
    d.criterion = CriterionKind::Necrosis;
    d.prob = 0.75 + i * 0.01;
    d.bbox = d.tile = {i * 100, 0, 100, 100};
    in.detections.push_back(d);
  }
  const auto ev = sample_evidence(CriterionKind::Necrosis, in, 10);
  ASSERT_EQ(ev.size(), 10u);
  EXPECT_EQ(ev.front().evidence_id, "n14");
  EXPECT_EQ(ev.back().evidence_id, "n5");
}

TEST(Evidence, PatchEvidenceCarriesReviewStatus) {
  CaseManifest m;
  SlideMeta s;
  s.slide_id = "s";
  s.width_px = s.height_px = 5000;
  m.slides = {s};
  Config cfg;
  const auto p = patch(1, 2, 140);
  std::map<std::string, ReviewStatus> st{{patch_evidence_id(CriterionKind::SmallCell, p.patch), ReviewStatus::approved}};
  EvidenceInputs in{&m, &cfg, {}, {}, {p}, &st};
  const auto ev = sample_evidence(CriterionKind::SmallCell, in, 10);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].evidence_id, "s/SmallCell/patch/512_1024");
  EXPECT_EQ(ev[0].status, ReviewStatus::approved);
  EXPECT_EQ(ev[0].value, 140.0);
}

// ---------------------------------------------------------------------------
// Grader

TEST(Grader, TruthTable) {
  for (const auto& row : grading_truth_table()) {
    const auto g = compute_grade(row.snapshot);
    EXPECT_EQ(g.grade, row.expected) << row.name;
    EXPECT_EQ(g.fired_rules.front().id, row.first_rule) << row.name;
    EXPECT_EQ(g.main_contributing, row.main) << row.name;
  }
  EXPECT_GE(grading_truth_table().size(), 16u);
}

TEST(Grader, AllFiredRulesAreListed) {
  auto s = make_snapshot(25, {CriterionKind::Hypercellularity, CriterionKind::Sheeting, CriterionKind::Necrosis}, true,
                         Subtype::papillary);
  const auto g = compute_grade(s);
  std::vector<std::string> ids;
  for (const auto& r : g.fired_rules) ids.push_back(r.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"III.mitoses", "III.subtype", "II.brain_invasion", "II.features"}));
}

TEST(Grader, DisplayColors) {
  struct Row {
    AiSuggestion ai;
    bool confirmed;
    std::optional<OverrideValue> ov;
    DisplayColor want;
  };
  const std::vector<Row> rows{
      {AiSuggestion::present, true, std::nullopt, DisplayColor::red},
      {AiSuggestion::present, false, std::nullopt, DisplayColor::orange},
      {AiSuggestion::absent, true, std::nullopt, DisplayColor::green},
      {AiSuggestion::absent, false, std::nullopt, DisplayColor::orange},
      {AiSuggestion::unconfirmed, true, std::nullopt, DisplayColor::orange},
      {AiSuggestion::unconfirmed, false, std::nullopt, DisplayColor::orange},
      {AiSuggestion::not_applicable, false, std::nullopt, DisplayColor::gray},
      {AiSuggestion::not_applicable, true, std::nullopt, DisplayColor::gray},
      {AiSuggestion::absent, false, OverrideValue{OverrideStatus::found}, DisplayColor::red},
      {AiSuggestion::present, false, OverrideValue{OverrideStatus::not_found}, DisplayColor::green},
      {AiSuggestion::present, true, OverrideValue{OverrideStatus::uncertain}, DisplayColor::orange},
      {AiSuggestion::not_applicable, false, OverrideValue{12.5}, DisplayColor::green},
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CriterionState s{CriterionKind::Necrosis, rows[i].ai, std::nullopt, rows[i].ov, rows[i].confirmed};
    EXPECT_EQ(display_color(s), rows[i].want) << "row " << i;
  }
}

TEST(Grader, OverrideFlipsAndClears) {
  const auto base = make_snapshot(0, {CriterionKind::Hypercellularity, CriterionKind::Sheeting});
  EXPECT_EQ(compute_grade(base).grade, Grade::I);
  const auto [s1, g1] = apply_override(base, CriterionKind::Necrosis, OverrideStatus::found);
  EXPECT_EQ(g1.grade, Grade::II);
  EXPECT_EQ(g1.fired_rules.front().id, "II.features");
  const auto [s2, g2] = apply_override(s1, CriterionKind::Necrosis, std::nullopt);
  EXPECT_EQ(g2.grade, Grade::I);
  EXPECT_EQ(s2, base);
  const auto [s3, g3] = apply_override(base, CriterionKind::Subtype, Subtype::rhabdoid);
  EXPECT_EQ(g3.grade, Grade::III);
  const auto [s4, g4] = apply_override(s3, CriterionKind::Subtype, std::nullopt);
  EXPECT_EQ(g4.grade, Grade::I);
  const auto [s5, g5] = apply_override(base, CriterionKind::BrainInvasion, OverrideStatus::found);
  EXPECT_EQ(g5.main_contributing, CriterionKind::BrainInvasion);
}

TEST(Grader, OverrideValidation) {
  const auto base = make_snapshot(0);
  EXPECT_THROW(apply_override(base, CriterionKind::MitoticCount, OverrideStatus::found), Error);
  EXPECT_THROW(apply_override(base, CriterionKind::Necrosis, 5.0), Error);
  EXPECT_THROW(apply_override(base, CriterionKind::Ki67Index, 101.0), Error);
  EXPECT_THROW(apply_override(base, CriterionKind::Subtype, OverrideStatus::found), Error);
  EXPECT_THROW(apply_override(base, CriterionKind::Necrosis, Subtype::papillary), Error);
  EXPECT_NO_THROW(apply_override(base, CriterionKind::Ki67Index, 7.5));
}

TEST(Grader, EffectiveMitoticCount) {
  RegionSample r;
  std::vector<Detection> ds(4);
  for (int i = 0; i < 4; ++i) {
    ds[i].detection_id = "m" + std::to_string(i);
    r.member_detections.push_back(ds[i].detection_id);
  }
  EXPECT_EQ(effective_mitotic_count(r, ds), 4);
  ds[0].status = ReviewStatus::declined;
  EXPECT_EQ(effective_mitotic_count(r, ds), 3);
  ds[1].status = ReviewStatus::uncertain;
  EXPECT_EQ(effective_mitotic_count(r, ds), 2);
  EXPECT_EQ(effective_mitotic_count(r, ds, true), 3);

  // 19 detected plus 5 added by hand
  RegionSample big;
  std::vector<Detection> more(24);
  for (int i = 0; i < 24; ++i) {
    more[i].detection_id = i < 19 ? "m" + std::to_string(i) : "manual-" + std::to_string(i - 18);
    if (i >= 19) more[i].status = ReviewStatus::approved;
    big.member_detections.push_back(more[i].detection_id);
  }
  EXPECT_EQ(effective_mitotic_count(big, more), 24);
  EXPECT_EQ(compute_grade(make_snapshot(24)).grade, Grade::III);
}

TEST(Grader, JsonShape) {
  const auto s = make_snapshot(4);
  const auto j = grade_json(compute_grade(s), s);
  EXPECT_EQ(j.at("grade"), "II");
  EXPECT_EQ(j.at("main_contributing"), "MitoticCount");
  EXPECT_EQ(j.at("criteria").size(), 9u);
  EXPECT_EQ(j.at("criteria")[0].at("value"), 4.0);
}

#include "myo/windowing.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace myo;
using myo::testing::TempDir;

namespace {

Trial ramp_trial(int n) {
  Trial t;
  t.subject_id = 4;
  t.gesture = 6;
  t.trial_index = 2;
  t.samples.resize(n, 2);
  for (int i = 0; i < n; ++i) t.samples.row(i) << static_cast<float>(i), static_cast<float>(-i);
  return t;
}

DatasetManifest fake_manifest(int subjects, int trials = 6) {
  DatasetManifest m;
  for (int s = 1; s <= subjects; ++s) {
    m.subjects.push_back(s);
    for (int g = 0; g < kNumGestures; ++g)
      for (int k = 1; k <= trials; ++k) m.files[s][g].push_back("x");
  }
  return m;
}

}  // namespace

TEST(Segment, TwentyThousandSamplesGiveThirtyNineWindows) {
  const auto w = segment_trial(ramp_trial(20000), 1000, 500);
  ASSERT_EQ(w.size(), 39u);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(w[i].provenance.start_offset, static_cast<int>(500 * i));
    EXPECT_EQ(w[i].samples(0, 0), static_cast<float>(500 * i));
    EXPECT_EQ(w[i].samples.rows(), 1000);
    EXPECT_EQ(w[i].label.argmax(), 6);
    EXPECT_TRUE(w[i].label.is_hard());
    EXPECT_EQ(w[i].provenance.subject, 4);
  }
  EXPECT_EQ(w.back().provenance.start_offset, 19000);
}

TEST(Segment, ExactWindowLengthGivesOneWindow) {
  EXPECT_EQ(segment_trial(ramp_trial(1000), 1000, 500).size(), 1u);
}

TEST(Segment, ShortTrialThrows) {
  EXPECT_THROW(segment_trial(ramp_trial(999), 1000, 500), InsufficientSamples);
}

TEST(Segment, CountFormulaMatchesEnumeration) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> wlen(1, 60), stride(1, 40), extra(0, 200);
  for (int i = 0; i < 300; ++i) {
    const int W = wlen(rng), st = stride(rng), S = W + extra(rng);
    int brute = 0;
    for (int off = 0; off + W <= S; off += st) ++brute;
    EXPECT_EQ(window_count(S, W, st), brute) << S << " " << W << " " << st;
    EXPECT_EQ(static_cast<int>(segment_trial(ramp_trial(S), W, st).size()), brute);
  }
  EXPECT_EQ(window_count(10, 11, 1), 0);
}

TEST(Folds, EightSubjectsGiveEightFolds) {
  const auto folds = plan_folds(fake_manifest(8));
  ASSERT_EQ(folds.size(), 8u);
  EXPECT_EQ(folds[2].held_out_subject, 3);
  EXPECT_EQ(folds[2].source_subjects, (std::vector<int>{1, 2, 4, 5, 6, 7, 8}));
  std::set<int> held;
  for (const auto& f : folds) held.insert(f.held_out_subject);
  EXPECT_EQ(held.size(), 8u);
}

TEST(Folds, TwoSubjectsGiveTwoFoldsOfOneSource) {
  const auto folds = plan_folds(fake_manifest(2));
  ASSERT_EQ(folds.size(), 2u);
  EXPECT_EQ(folds[0].source_subjects, std::vector<int>{2});
  EXPECT_EQ(folds[1].source_subjects, std::vector<int>{1});
}

TEST(Folds, Errors) {
  EXPECT_THROW(plan_folds(fake_manifest(1)), FoldPlanError);
  EXPECT_THROW(plan_folds(fake_manifest(3, 5)), FoldPlanError);
}

TEST(Folds, RolesAreDisjointWithinEachProtocol) {
  for (const auto& fold : plan_folds(fake_manifest(8))) {
    for (Role a : kAllRoles)
      for (Role b : kAllRoles) {
        if (a == b || protocol_of(a) != protocol_of(b)) continue;
        std::set<std::pair<int, int>> pa, pb;
        for (const auto& r : fold.trial_refs(a)) pa.insert({r.subject, r.trial_index});
        for (const auto& r : fold.trial_refs(b)) pb.insert({r.subject, r.trial_index});
        for (const auto& p : pa) EXPECT_FALSE(pb.count(p));
      }
    for (Role r : {Role::ms_train, Role::ms_val, Role::ms_test})
      for (const auto& ref : fold.trial_refs(r)) EXPECT_NE(ref.subject, fold.held_out_subject);
    EXPECT_EQ(fold.adapt_test_trials, (std::vector<int>{3, 4, 5, 6}));
  }
}

TEST(Folds, OverlappingRolesAreLeakage) {
  FoldPlan f = plan_folds(fake_manifest(3))[0];
  f.ms_test_trials = {4, 6};
  EXPECT_THROW(check_fold_disjointness(f), LeakageError);
  FoldPlan g = plan_folds(fake_manifest(3))[0];
  g.source_subjects.push_back(g.held_out_subject);
  EXPECT_THROW(check_fold_disjointness(g), LeakageError);
}

TEST(Folds, JsonExportListsRoles) {
  const auto j = plan_folds(fake_manifest(3))[1].to_json();
  EXPECT_EQ(j["held_out"], 2);
  EXPECT_EQ(j["roles"]["adapt_calib"].size(), 10u);
  EXPECT_EQ(j["roles"]["ms_train"].size(), 2u * 10 * 4);
}

TEST(Materialize, WindowCountsMatchArithmetic) {
  TempDir dir("mat");
  generate_synthetic(SyntheticSpec{}, dir / "ds");
  const DatasetManifest m = load_dataset(dir / "ds" / "manifest.json");
  const FoldPlan fold = plan_folds(m)[0];
  EXPECT_EQ(materialize_split(fold, Role::ms_train, m).size(), 10920u);
  const auto calib = materialize_split(fold, Role::adapt_calib, m);
  EXPECT_EQ(calib.size(), 390u);
  for (const auto& w : calib) {
    EXPECT_EQ(w.provenance.subject, 1);
    EXPECT_EQ(w.provenance.trial_index, 1);
  }
  EXPECT_EQ(calib.size() + materialize_split(fold, Role::adapt_val, m).size(), 780u);
  EXPECT_EQ(materialize_split(fold, Role::adapt_test, m).size(), 4u * 390);
}

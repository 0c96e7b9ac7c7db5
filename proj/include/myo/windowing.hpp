#pragma once

#include "myo/dataset.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace myo {

/// 10-class target distribution. Hard labels are one-hot.
struct Label {
  std::array<double, kNumGestures> probs{};

  static Label hard(int gesture) {
    Label l;
    l.probs.at(static_cast<std::size_t>(gesture)) = 1.0;
    return l;
  }

  /// lambda·a + (1 − lambda)·b
  static Label mix(const Label& a, const Label& b, double lambda) {
    Label l;
    for (int k = 0; k < kNumGestures; ++k) l.probs[k] = lambda * a.probs[k] + (1.0 - lambda) * b.probs[k];
    return l;
  }

  int argmax() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }

  bool is_hard() const {
    int ones = 0;
    for (double p : probs) {
      if (p == 1.0) ++ones;
      else if (p != 0.0) return false;
    }
    return ones == 1;
  }

  double sum() const {
    double s = 0;
    for (double p : probs) s += p;
    return s;
  }
};

struct Provenance {
  int subject = 0;
  int gesture = 0;
  int trial_index = 0;
  int start_offset = 0;

  auto operator<=>(const Provenance&) const = default;
};

struct Window {
  Matrix<float> samples;  // T×C
  Label label;
  Provenance provenance;
  bool is_augmented = false;
};

struct WindowingParams {
  int window_len = 1000;  // 250 ms at 4 kHz
  int stride = 500;       // 125 ms at 4 kHz

  static WindowingParams for_rate(int sample_rate_hz) {
    return {sample_rate_hz / 4, sample_rate_hz / 8};
  }
};

/// floor((S − W)/stride) + 1 for S ≥ W, else 0.
constexpr int window_count(int n_samples, int window_len, int stride) {
  return n_samples < window_len ? 0 : (n_samples - window_len) / stride + 1;
}

/// Windows at offsets 0, stride, 2·stride, ...; the trailing partial window is dropped.
inline std::vector<Window> segment_trial(const Trial& trial, int window_len, int stride) {
  if (window_len < 1 || stride < 1) throw ConfigError("window_len and stride must be >= 1");
  if (trial.n_samples() < window_len)
    throw InsufficientSamples("trial has " + std::to_string(trial.n_samples()) +
                              " samples, window needs " + std::to_string(window_len));
  std::vector<Window> out;
  out.reserve(window_count(trial.n_samples(), window_len, stride));
  for (int off = 0; off + window_len <= trial.n_samples(); off += stride) {
    Window w;
    w.samples = trial.samples.middleRows(off, window_len);
    w.label = Label::hard(trial.gesture);
    w.provenance = {trial.subject_id, trial.gesture, trial.trial_index, off};
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LOSO fold plans

enum class Role { ms_train, ms_val, ms_test, adapt_calib, adapt_val, adapt_test };
enum class Protocol { multi_subject, adaptation };

inline constexpr std::array<Role, 6> kAllRoles = {Role::ms_train,    Role::ms_val,
                                                  Role::ms_test,     Role::adapt_calib,
                                                  Role::adapt_val,   Role::adapt_test};

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::ms_train: return "ms_train";
    case Role::ms_val: return "ms_val";
    case Role::ms_test: return "ms_test";
    case Role::adapt_calib: return "adapt_calib";
    case Role::adapt_val: return "adapt_val";
    case Role::adapt_test: return "adapt_test";
  }
  throw std::invalid_argument("unknown role");
}

inline Protocol protocol_of(Role r) {
  switch (r) {
    case Role::ms_train:
    case Role::ms_val:
    case Role::ms_test: return Protocol::multi_subject;
    case Role::adapt_calib:
    case Role::adapt_val:
    case Role::adapt_test: return Protocol::adaptation;
  }
  throw std::invalid_argument("unknown role");
}

struct TrialRef {
  int subject = 0;
  int gesture = 0;
  int trial_index = 0;
  auto operator<=>(const TrialRef&) const = default;
};

struct FoldPlan {
  int fold_index = 0;
  int held_out_subject = 0;
  std::vector<int> source_subjects;
  // Multi-subject protocol, chronological split over the source cohort.
  std::vector<int> ms_train_trials{1, 2, 3, 4};
  std::vector<int> ms_val_trials{5};
  std::vector<int> ms_test_trials{6};
  // Adaptation protocol on the held-out subject.
  std::vector<int> adapt_calib_trials{1};
  std::vector<int> adapt_val_trials{2};
  std::vector<int> adapt_test_trials{3, 4, 5, 6};

  const std::vector<int>& trials_for(Role r) const {
    switch (r) {
      case Role::ms_train: return ms_train_trials;
      case Role::ms_val: return ms_val_trials;
      case Role::ms_test: return ms_test_trials;
      case Role::adapt_calib: return adapt_calib_trials;
      case Role::adapt_val: return adapt_val_trials;
      case Role::adapt_test: return adapt_test_trials;
    }
    throw std::invalid_argument("unknown role");
  }

  std::vector<int> subjects_for(Role r) const {
    return protocol_of(r) == Protocol::multi_subject ? source_subjects
                                                     : std::vector<int>{held_out_subject};
  }

  std::vector<TrialRef> trial_refs(Role r) const {
    std::vector<TrialRef> refs;
    for (int s : subjects_for(r))
      for (int g = 0; g < kNumGestures; ++g)
        for (int k : trials_for(r)) refs.push_back({s, g, k});
    return refs;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["fold"] = fold_index;
    j["held_out"] = held_out_subject;
    j["source_subjects"] = source_subjects;
    nlohmann::json roles = nlohmann::json::object();
    for (Role r : kAllRoles) {
      nlohmann::json refs = nlohmann::json::array();
      for (const auto& t : trial_refs(r)) refs.push_back({t.subject, t.gesture, t.trial_index});
      roles[std::string(role_name(r))] = refs;
    }
    j["roles"] = roles;
    return j;
  }
};

/// Throws LeakageError if two roles of one protocol share a (subject, trial)
/// pair, or if the held-out subject appears in a multi-subject role.
inline void check_fold_disjointness(const FoldPlan& fold) {
  auto pairs = [&](Role r) {
    std::set<std::pair<int, int>> out;
    for (int s : fold.subjects_for(r))
      for (int k : fold.trials_for(r)) out.insert({s, k});
    return out;
  };
  for (std::size_t a = 0; a < kAllRoles.size(); ++a) {
    for (std::size_t b = a + 1; b < kAllRoles.size(); ++b) {
      if (protocol_of(kAllRoles[a]) != protocol_of(kAllRoles[b])) continue;
      const auto pa = pairs(kAllRoles[a]), pb = pairs(kAllRoles[b]);
      for (const auto& p : pa)
        if (pb.count(p))
          throw LeakageError(std::string(role_name(kAllRoles[a])) + " and " +
                             std::string(role_name(kAllRoles[b])) + " share subject " +
                             std::to_string(p.first) + " trial " + std::to_string(p.second));
    }
  }
  for (int s : fold.source_subjects)
    if (s == fold.held_out_subject) throw LeakageError("held-out subject listed as a source subject");
}

/// One fold per subject; fold k withholds the k-th subject in manifest order.
inline std::vector<FoldPlan> plan_folds(const DatasetManifest& manifest) {
  if (manifest.subjects.size() < 2)
    throw FoldPlanError("LOSO needs at least 2 subjects, manifest has " +
                        std::to_string(manifest.subjects.size()));
  for (int s : manifest.subjects)
    for (int g = 0; g < kNumGestures; ++g)
      for (int k = 1; k <= kTrialsPerGesture; ++k)
        if (!manifest.has_trial(s, g, k))
          throw FoldPlanError("missing trial " + std::to_string(k) + " for subject " +
                              std::to_string(s) + ", gesture " + std::string(kGestureNames[g]));
  std::vector<FoldPlan> folds;
  for (std::size_t i = 0; i < manifest.subjects.size(); ++i) {
    FoldPlan f;
    f.fold_index = static_cast<int>(i);
    f.held_out_subject = manifest.subjects[i];
    for (int s : manifest.subjects)
      if (s != f.held_out_subject) f.source_subjects.push_back(s);
    check_fold_disjointness(f);
    folds.push_back(std::move(f));
  }
  return folds;
}

/// All windows of the trials assigned to `role`, in (subject, gesture, trial,
/// offset) order.
inline std::vector<Window> materialize_split(const FoldPlan& fold, Role role,
                                             const DatasetManifest& manifest,
                                             const WindowingParams& wp = {}) {
  std::vector<Window> out;
  for (const auto& ref : fold.trial_refs(role)) {
    const Trial trial = manifest.load(ref.subject, ref.gesture, ref.trial_index);
    auto windows = segment_trial(trial, wp.window_len, wp.stride);
    std::move(windows.begin(), windows.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace myo

#pragma once

#include "myo/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace myo {

namespace fs = std::filesystem;

inline constexpr int kNumChannels = 2;
inline constexpr int kTrialsPerGesture = 6;
inline constexpr int kDefaultSampleRate = 4000;

/// One continuous recording: samples is S×C, time-major.
struct Trial {
  Matrix<float> samples;
  int subject_id = 0;
  int gesture = 0;
  int trial_index = 0;
  int sample_rate_hz = kDefaultSampleRate;

  int n_samples() const { return static_cast<int>(samples.rows()); }
  int n_channels() const { return static_cast<int>(samples.cols()); }
};

// ---------------------------------------------------------------------------
// Binary trial files: 32-byte header ("SEMG", version, S, C, rate as LE u32,
// 12 reserved zero bytes) followed by S×C LE float32, time-major.

namespace trial_io {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

inline std::string encode(const Trial& trial) {
  std::string buf;
  const auto S = static_cast<std::size_t>(trial.samples.rows());
  const auto C = static_cast<std::size_t>(trial.samples.cols());
  buf.reserve(kHeaderBytes + 4 * S * C);
  buf.append("SEMG");
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(S));
  put_u32(buf, static_cast<std::uint32_t>(C));
  put_u32(buf, static_cast<std::uint32_t>(trial.sample_rate_hz));
  buf.append(kHeaderBytes - buf.size(), '\0');
  for (std::size_t t = 0; t < S; ++t)
    for (std::size_t c = 0; c < C; ++c)
      put_u32(buf, std::bit_cast<std::uint32_t>(trial.samples(t, c)));
  return buf;
}

inline void write(const fs::path& path, const Trial& trial) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot open " + path.string() + " for writing");
  const std::string buf = encode(trial);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ManifestError("write failed for " + path.string());
}

/// Reads the raw header and payload. Identity fields are left to the caller.
inline Trial read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("trial file not found: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < kHeaderBytes || buf.compare(0, 4, "SEMG") != 0)
    throw TrialFormatError(path.string() + ": bad magic or truncated header");
  const std::uint32_t version = get_u32(p + 4);
  const std::uint32_t S = get_u32(p + 8);
  const std::uint32_t C = get_u32(p + 12);
  const std::uint32_t rate = get_u32(p + 16);
  if (version != kVersion)
    throw TrialFormatError(path.string() + ": unsupported version " + std::to_string(version));
  if (buf.size() != kHeaderBytes + 4ull * S * C)
    throw TrialFormatError(path.string() + ": payload size does not match header");
  Trial trial;
  trial.sample_rate_hz = static_cast<int>(rate);
  trial.samples.resize(S, C);
  const unsigned char* q = p + kHeaderBytes;
  for (std::uint32_t t = 0; t < S; ++t)
    for (std::uint32_t c = 0; c < C; ++c, q += 4)
      trial.samples(t, c) = std::bit_cast<float>(get_u32(q));
  return trial;
}

/// Two numeric columns, no header, one row per sample.
inline Trial read_csv(const fs::path& path, int sample_rate_hz) {
  std::ifstream in(path);
  if (!in) throw ManifestError("csv file not found: " + path.string());
  std::vector<float> values;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<double> cols;
    double v;
    while (fields >> v) cols.push_back(v);
    if (!fields.eof() || cols.size() != kNumChannels)
      throw TrialFormatError(path.string() + ": row " + std::to_string(row) +
                             " does not hold exactly two numeric columns");
    values.push_back(static_cast<float>(cols[0]));
    values.push_back(static_cast<float>(cols[1]));
  }
  Trial trial;
  trial.sample_rate_hz = sample_rate_hz;
  trial.samples = Eigen::Map<Matrix<float>>(values.data(),
                                            static_cast<Eigen::Index>(values.size() / 2), 2);
  return trial;
}

}  // namespace trial_io

// ---------------------------------------------------------------------------
// Manifest

struct DatasetManifest {
  fs::path root;  // directory the relative file paths resolve against
  std::vector<int> subjects;
  std::vector<std::string> gestures{kGestureNames.begin(), kGestureNames.end()};
  int trials_per_gesture = kTrialsPerGesture;
  int sample_rate_hz = kDefaultSampleRate;
  std::string provenance = "real";
  std::optional<std::uint64_t> seed;
  /// files[subject][gesture] -> one relative path per trial (trial k at k-1).
  std::map<int, std::map<int, std::vector<std::string>>> files;
  nlohmann::json extra;  // generator echo, free-form

  fs::path trial_path(int subject, int gesture, int trial_index) const {
    const auto s = files.find(subject);
    if (s == files.end()) throw ManifestError("subject " + std::to_string(subject) + " not in manifest");
    const auto g = s->second.find(gesture);
    if (g == s->second.end() || trial_index < 1 ||
        trial_index > static_cast<int>(g->second.size()))
      throw ManifestError("no file for (subject " + std::to_string(subject) + ", gesture " +
                          std::to_string(gesture) + ", trial " + std::to_string(trial_index) + ")");
    return root / g->second[trial_index - 1];
  }

  bool has_trial(int subject, int gesture, int trial_index) const {
    const auto s = files.find(subject);
    if (s == files.end()) return false;
    const auto g = s->second.find(gesture);
    return g != s->second.end() && trial_index >= 1 &&
           trial_index <= static_cast<int>(g->second.size());
  }

  std::size_t trial_count() const {
    std::size_t n = 0;
    for (const auto& [s, per_gesture] : files)
      for (const auto& [g, paths] : per_gesture) n += paths.size();
    return n;
  }

  /// Loads one trial and checks it against the manifest.
  Trial load(int subject, int gesture, int trial_index) const {
    const fs::path path = trial_path(subject, gesture, trial_index);
    Trial trial = trial_io::read(path);
    trial.subject_id = subject;
    trial.gesture = gesture;
    trial.trial_index = trial_index;
    const std::string who = "(subject " + std::to_string(subject) + ", gesture " +
                            std::string(kGestureNames[gesture]) + ", trial " +
                            std::to_string(trial_index) + ")";
    if (trial.n_channels() != kNumChannels)
      throw TrialFormatError(who + " has " + std::to_string(trial.n_channels()) +
                             " channels, expected 2");
    if (trial.sample_rate_hz != sample_rate_hz)
      throw TrialFormatError(who + " sample rate " + std::to_string(trial.sample_rate_hz) +
                             " != manifest " + std::to_string(sample_rate_hz));
    if (!trial.samples.allFinite()) throw TrialFormatError(who + " contains non-finite samples");
    return trial;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["provenance"] = provenance;
    j["sample_rate_hz"] = sample_rate_hz;
    j["subjects"] = subjects;
    j["gestures"] = gestures;
    j["trials_per_gesture"] = trials_per_gesture;
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [s, per_gesture] : files) {
      nlohmann::json js = nlohmann::json::object();
      for (const auto& [g, paths] : per_gesture) js[gestures.at(g)] = paths;
      f[std::to_string(s)] = js;
    }
    j["files"] = f;
    if (seed) j["seed"] = *seed;
    if (!extra.is_null()) j["generator"] = extra;
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j, const fs::path& root) {
    DatasetManifest m;
    m.root = root;
    try {
      if (j.at("version").get<int>() != 1) throw ManifestError("unsupported manifest version");
      m.provenance = j.at("provenance").get<std::string>();
      if (m.provenance != "real" && m.provenance != "synthetic")
        throw ManifestError("provenance must be \"real\" or \"synthetic\"");
      m.sample_rate_hz = j.at("sample_rate_hz").get<int>();
      m.subjects = j.at("subjects").get<std::vector<int>>();
      m.gestures = j.at("gestures").get<std::vector<std::string>>();
      m.trials_per_gesture = j.at("trials_per_gesture").get<int>();
      if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("generator")) m.extra = j.at("generator");
      if (m.gestures.size() != kNumGestures)
        throw ManifestError("manifest must list exactly 10 gestures");
      for (int g = 0; g < kNumGestures; ++g)
        if (m.gestures[g] != kGestureNames[g])
          throw ManifestError("gesture order must be HC,T,I,M,R,L,T-I,T-M,T-R,T-L; got '" +
                              m.gestures[g] + "' at position " + std::to_string(g));
      for (const auto& [subject_key, per_gesture] : j.at("files").items()) {
        const int s = std::stoi(subject_key);
        for (const auto& [gesture_key, paths] : per_gesture.items()) {
          const int g = gesture_index(gesture_key);
          if (g < 0) throw ManifestError("unknown gesture '" + gesture_key + "'");
          m.files[s][g] = paths.get<std::vector<std::string>>();
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(std::string("schema violation: ") + e.what());
    }
    for (int s : m.subjects)
      if (!m.files.count(s)) throw ManifestError("subject " + std::to_string(s) + " has no files");
    return m;
  }
};

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  out << m.to_json().dump(2) << '\n';
}

/// Parses the manifest and checks every declared trial (shape, rate, finite).
inline DatasetManifest load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ManifestError("manifest not found: " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m = DatasetManifest::from_json(j, manifest_path.parent_path());
  for (const auto& [s, per_gesture] : m.files)
    for (const auto& [g, paths] : per_gesture)
      for (int k = 1; k <= static_cast<int>(paths.size()); ++k) (void)m.load(s, g, k);
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic generator

inline constexpr int kEnvelopeKnots = 7;
/// Knot positions as fractions of the trial duration.
inline constexpr std::array<double, kEnvelopeKnots> kEnvelopeKnotTimes = {0.0,  0.03, 0.25, 0.5,
                                                                          0.75, 0.97, 1.0};

struct ClassSignature {
  std::array<double, kNumChannels> carrier_hz{};
  std::array<double, kNumChannels> level{};  // plateau amplitude, µV
  std::array<std::array<double, kEnvelopeKnots>, kNumChannels> envelope{};  // relative
};

struct DomainShift {
  std::vector<int> subjects;  // subjects the shift applies to
  std::array<double, kNumChannels> gain_skew{1.0, 1.0};
  bool channel_swap = false;
  double time_shift_s = 0.0;

  bool applies_to(int subject) const {
    return std::find(subjects.begin(), subjects.end(), subject) != subjects.end();
  }
};

inline std::array<ClassSignature, kNumGestures> default_class_signatures() {
  // Plateau levels sit on a factor-of-two grid so that per-channel RMS alone
  // separates the classes; carriers differ per class and channel.
  static constexpr std::array<std::array<double, 2>, kNumGestures> levels = {{
      {320, 320}, {40, 160}, {80, 40}, {160, 80}, {40, 40},
      {80, 160}, {160, 320}, {320, 80}, {160, 160}, {80, 320},
  }};
  std::array<ClassSignature, kNumGestures> out{};
  for (int g = 0; g < kNumGestures; ++g) {
    auto& sig = out[g];
    sig.carrier_hz = {55.0 + 22.0 * g, 260.0 - 19.0 * g};
    sig.level = levels[g];
    for (int c = 0; c < kNumChannels; ++c) {
      auto& env = sig.envelope[c];
      env = {0.3, 1.0, 1.0, 1.0, 1.0, 1.0, 0.3};
      for (int k = 2; k <= 4; ++k) env[k] = 1.0 + 0.12 * std::sin(1.7 * g + 0.9 * c + k);
    }
  }
  return out;
}

struct SyntheticSpec {
  int n_subjects = 8;
  std::uint64_t master_seed = 7;
  int sample_rate_hz = kDefaultSampleRate;
  double duration_s = 5.0;
  int trials_per_gesture = kTrialsPerGesture;
  std::array<ClassSignature, kNumGestures> classes = default_class_signatures();
  std::array<double, 2> subject_gain_range{0.85, 1.15};
  std::array<double, 2> noise_floor_range{4.0, 8.0};  // µV standard deviation
  double amplitude_jitter = 0.05;  // per-trial relative amplitude jitter
  double frequency_jitter = 0.02;  // per-trial relative carrier jitter
  DomainShift shift;

  int n_samples() const { return static_cast<int>(std::lround(duration_s * sample_rate_hz)); }

  void validate() const {
    if (n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
    if (sample_rate_hz <= 0 || duration_s <= 0) throw ConfigError("rate and duration must be > 0");
    if (trials_per_gesture < 1) throw ConfigError("trials_per_gesture must be >= 1");
    if (subject_gain_range[0] <= 0 || subject_gain_range[0] > subject_gain_range[1])
      throw ConfigError("subject gain range must satisfy 0 < lo <= hi");
    if (noise_floor_range[0] < 0 || noise_floor_range[0] > noise_floor_range[1])
      throw ConfigError("noise floor range must satisfy 0 <= lo <= hi");
    for (int a = 0; a < kNumGestures; ++a)
      for (int b = a + 1; b < kNumGestures; ++b)
        if (classes[a].carrier_hz == classes[b].carrier_hz &&
            classes[a].envelope == classes[b].envelope && classes[a].level == classes[b].level)
          throw ConfigError("classes " + std::string(kGestureNames[a]) + " and " +
                            std::string(kGestureNames[b]) + " share a signature");
  }
};

struct SubjectProfile {
  std::array<double, kNumChannels> gain{};
  double noise_floor = 0.0;
};

inline SubjectProfile subject_profile(const SyntheticSpec& spec, int subject) {
  Rng rng(derive_seed(spec.master_seed, {subject, -1}));
  std::uniform_real_distribution<double> gain(spec.subject_gain_range[0], spec.subject_gain_range[1]);
  std::uniform_real_distribution<double> noise(spec.noise_floor_range[0], spec.noise_floor_range[1]);
  SubjectProfile p;
  p.gain = {gain(rng), gain(rng)};
  p.noise_floor = noise(rng);
  return p;
}

inline double envelope_at(const std::array<double, kEnvelopeKnots>& env, double frac) {
  frac = std::clamp(frac, 0.0, 1.0);
  for (int k = 1; k < kEnvelopeKnots; ++k) {
    if (frac <= kEnvelopeKnotTimes[k]) {
      const double t0 = kEnvelopeKnotTimes[k - 1], t1 = kEnvelopeKnotTimes[k];
      const double w = (frac - t0) / (t1 - t0);
      return env[k - 1] + w * (env[k] - env[k - 1]);
    }
  }
  return env.back();
}

/// carrier × piecewise-linear envelope × subject gain + Gaussian noise floor.
inline Trial synthesize_trial(const SyntheticSpec& spec, int subject, int gesture, int trial_index) {
  const SubjectProfile profile = subject_profile(spec, subject);
  const ClassSignature& sig = spec.classes[gesture];
  const bool shifted = spec.shift.applies_to(subject);

  Rng rng(derive_seed(spec.master_seed, {subject, gesture, trial_index}));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::array<double, kNumChannels> freq{}, phase{}, amp{};
  for (int c = 0; c < kNumChannels; ++c) {
    freq[c] = sig.carrier_hz[c] * (1.0 + spec.frequency_jitter * unit(rng));
    phase[c] = phase_dist(rng);
    amp[c] = sig.level[c] * (1.0 + spec.amplitude_jitter * unit(rng));
  }
  std::normal_distribution<double> noise(0.0, 1.0);

  const int S = spec.n_samples();
  Trial trial;
  trial.subject_id = subject;
  trial.gesture = gesture;
  trial.trial_index = trial_index;
  trial.sample_rate_hz = spec.sample_rate_hz;
  trial.samples.resize(S, kNumChannels);
  const double time_shift = shifted ? spec.shift.time_shift_s : 0.0;
  for (int t = 0; t < S; ++t) {
    const double sec = static_cast<double>(t) / spec.sample_rate_hz;
    const double frac = (sec - time_shift) / spec.duration_s;
    for (int c = 0; c < kNumChannels; ++c) {
      // Under a channel swap, output channel c carries the other electrode.
      const int src = (shifted && spec.shift.channel_swap) ? 1 - c : c;
      double gain = profile.gain[src];
      if (shifted) gain *= spec.shift.gain_skew[c];
      const double clean = std::sin(2.0 * std::numbers::pi * freq[src] * sec + phase[src]) *
                           envelope_at(sig.envelope[src], frac) * amp[src] * gain;
      trial.samples(t, c) = static_cast<float>(clean + profile.noise_floor * noise(rng));
    }
  }
  return trial;
}

inline std::string synthetic_trial_relpath(int subject, int gesture, int trial_index) {
  return "s" + std::to_string(subject) + "/" + std::string(kGestureNames[gesture]) + "_t" +
         std::to_string(trial_index) + ".semg";
}

inline nlohmann::json synthetic_spec_json(const SyntheticSpec& spec) {
  nlohmann::json j;
  j["n_subjects"] = spec.n_subjects;
  j["master_seed"] = spec.master_seed;
  j["sample_rate_hz"] = spec.sample_rate_hz;
  j["duration_s"] = spec.duration_s;
  j["trials_per_gesture"] = spec.trials_per_gesture;
  j["subject_gain_range"] = spec.subject_gain_range;
  j["noise_floor_range"] = spec.noise_floor_range;
  j["amplitude_jitter"] = spec.amplitude_jitter;
  j["frequency_jitter"] = spec.frequency_jitter;
  nlohmann::json classes = nlohmann::json::object();
  for (int g = 0; g < kNumGestures; ++g) {
    classes[std::string(kGestureNames[g])] = {{"carrier_hz", spec.classes[g].carrier_hz},
                                              {"level", spec.classes[g].level},
                                              {"envelope", spec.classes[g].envelope}};
  }
  j["classes"] = classes;
  j["shift"] = {{"subjects", spec.shift.subjects},
                {"gain_skew", spec.shift.gain_skew},
                {"channel_swap", spec.shift.channel_swap},
                {"time_shift_s", spec.shift.time_shift_s}};
  nlohmann::json subjects = nlohmann::json::object();
  for (int s = 1; s <= spec.n_subjects; ++s) {
    const auto p = subject_profile(spec, s);
    subjects[std::to_string(s)] = {{"gain", p.gain}, {"noise_floor", p.noise_floor}};
  }
  j["subject_profiles"] = subjects;
  return j;
}

/// Writes n_subjects × 10 × trials_per_gesture trial files plus manifest.json.
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir))
    throw OutputDirError("output directory " + out_dir.string() + " is not empty");
  fs::create_directories(out_dir);

  DatasetManifest m;
  m.root = out_dir;
  m.provenance = "synthetic";
  m.seed = spec.master_seed;
  m.sample_rate_hz = spec.sample_rate_hz;
  m.trials_per_gesture = spec.trials_per_gesture;
  m.extra = synthetic_spec_json(spec);
  for (int s = 1; s <= spec.n_subjects; ++s) {
    m.subjects.push_back(s);
    fs::create_directories(out_dir / ("s" + std::to_string(s)));
    for (int g = 0; g < kNumGestures; ++g) {
      for (int k = 1; k <= spec.trials_per_gesture; ++k) {
        const std::string rel = synthetic_trial_relpath(s, g, k);
        trial_io::write(out_dir / rel, synthesize_trial(spec, s, g, k));
        m.files[s][g].push_back(rel);
      }
    }
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

/// Converts a CSV tree laid out as {root}/S{subject}/{gesture}_{trial}.csv
/// (gesture abbreviations as in kGestureNames) into binary trials + manifest.
inline DatasetManifest ingest_csv_tree(const fs::path& csv_root, const fs::path& out_dir,
                                       int sample_rate_hz) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir))
    throw OutputDirError("output directory " + out_dir.string() + " is not empty");
  if (!fs::is_directory(csv_root)) throw ManifestError("csv root not found: " + csv_root.string());
  DatasetManifest m;
  m.root = out_dir;
  m.provenance = "real";
  m.sample_rate_hz = sample_rate_hz;
  std::vector<fs::path> subject_dirs;
  for (const auto& e : fs::directory_iterator(csv_root))
    if (e.is_directory() && e.path().filename().string().starts_with("S"))
      subject_dirs.push_back(e.path());
  std::sort(subject_dirs.begin(), subject_dirs.end());
  fs::create_directories(out_dir);
  int max_trials = 0;
  for (const auto& dir : subject_dirs) {
    const int s = std::stoi(dir.filename().string().substr(1));
    m.subjects.push_back(s);
    fs::create_directories(out_dir / ("s" + std::to_string(s)));
    for (int g = 0; g < kNumGestures; ++g) {
      for (int k = 1;; ++k) {
        const fs::path csv = dir / (std::string(kGestureNames[g]) + "_" + std::to_string(k) + ".csv");
        if (!fs::exists(csv)) break;
        Trial trial = trial_io::read_csv(csv, sample_rate_hz);
        const std::string rel = synthetic_trial_relpath(s, g, k);
        trial_io::write(out_dir / rel, trial);
        m.files[s][g].push_back(rel);
        max_trials = std::max(max_trials, k);
      }
    }
  }
  std::sort(m.subjects.begin(), m.subjects.end());
  m.trials_per_gesture = max_trials;
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace myo

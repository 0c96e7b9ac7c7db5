#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace myo {

/// Dense row-major matrix. Biases and gains are stored as 1×n matrices so
/// every learnable array has the same type.
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

inline constexpr int kNumGestures = 10;

/// Gesture label order (row order of the per-class result tables).
inline constexpr std::array<std::string_view, kNumGestures> kGestureNames = {
    "HC", "T", "I", "M", "R", "L", "T-I", "T-M", "T-R", "T-L"};

inline int gesture_index(std::string_view name) {
  for (int g = 0; g < kNumGestures; ++g)
    if (kGestureNames[g] == name) return g;
  return -1;
}

// ---------------------------------------------------------------------------
// Errors. The category doubles as the CLI exit code.

enum class ErrorCategory : int { config = 1, data = 2, numerics = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define MYO_DEFINE_ERROR(Name, Category)                                   \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what)                                 \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
  };

MYO_DEFINE_ERROR(ConfigError, config)
MYO_DEFINE_ERROR(ManifestError, data)
MYO_DEFINE_ERROR(TrialFormatError, data)
MYO_DEFINE_ERROR(OutputDirError, data)
MYO_DEFINE_ERROR(InsufficientSamples, data)
MYO_DEFINE_ERROR(FoldPlanError, data)
MYO_DEFINE_ERROR(AugmentError, data)
MYO_DEFINE_ERROR(WarpError, data)
MYO_DEFINE_ERROR(EvalError, data)
MYO_DEFINE_ERROR(DegenerateError, data)
MYO_DEFINE_ERROR(LeakageError, data)
MYO_DEFINE_ERROR(NumericsError, numerics)

#undef MYO_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Seed derivation. Every random stream is a pure function of a master seed
// and a tuple of integers or a name, so streams are independent of the
// order in which they are created.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t base,
                                           std::initializer_list<std::int64_t> parts) noexcept {
  std::uint64_t h = splitmix64(base);
  for (auto p : parts) h = splitmix64(h ^ static_cast<std::uint64_t>(p));
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : name) h = (h ^ c) * 0x100000001B3ULL;
  return splitmix64(splitmix64(base) ^ h);
}

}  // namespace myo

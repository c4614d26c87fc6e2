#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tamkit {

enum class Errc {
  MalformedLine,
  DimMismatch,
  DuplicateWord,
  AllTokensOOV,
  DegenerateZero,
  EmptyPhi,
  NoPresentClasses,
  EmptyBatch,
  NonFiniteLoss,
  ShapeMismatch,
  MissingForwardCache,
  NonFiniteUpdate,
  LabelOutOfRange,
  EmptyMatrix,
  InvalidConfig,
  Io,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::DuplicateWord: return "DuplicateWord";
    case Errc::AllTokensOOV: return "AllTokensOOV";
    case Errc::DegenerateZero: return "DegenerateZero";
    case Errc::EmptyPhi: return "EmptyPhi";
    case Errc::NoPresentClasses: return "NoPresentClasses";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingForwardCache: return "MissingForwardCache";
    case Errc::NonFiniteUpdate: return "NonFiniteUpdate";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline bool& quiet_warnings() {
  static bool quiet = false;
  return quiet;
}

inline void log_warning(std::string_view msg) {
  if (!quiet_warnings()) std::cerr << "[tamkit] warning: " << msg << '\n';
}

/// Seeded generator. Conversions from raw 64-bit draws are done here rather than
/// through <random> distributions so sequences are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw = next();
    while (draw >= limit) draw = next();
    return static_cast<std::size_t>(draw % bound);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Picks `k` distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + below(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 engine_;
};

inline bool all_finite(const std::vector<double>& values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tamkit

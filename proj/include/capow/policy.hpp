#pragma once

// Policy files map a fused context score to a puzzle difficulty.
//
// Format: one `key: value` per line, `#` starts a comment. Keys:
//   policy_kind       linear | linear_shifted | error_range   (required)
//   score_range       lo, hi          default 0, 10
//   difficulty_range  lo, hi          default 0, 10 (10, 20 for linear_shifted)
//   epsilon           real >= 0       default 0.2 (error_range only)
//   weights           w1, w2, w3      default 1, 1, 1 (DAbR, TAM, Flow)
//   rng_seed          integer         optional
//   contexts          dabr, tam, flow default all

#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/error.hpp"
#include "capow/flow_ingest.hpp"
#include "capow/pow.hpp"

namespace capow {

enum class PolicyKind { linear, linear_shifted, error_range };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::linear: return "linear";
    case PolicyKind::linear_shifted: return "linear_shifted";
    case PolicyKind::error_range: return "error_range";
  }
  return "?";
}

struct PolicyConfig {
  PolicyKind policy_kind = PolicyKind::linear;
  double score_lo = 0.0;
  double score_hi = 10.0;
  unsigned d_lo = 0;
  unsigned d_hi = 10;
  double epsilon = 0.2;
  ModelWeights weights;
  std::optional<std::uint64_t> rng_seed;
  ContextSet contexts_enabled;

  bool operator==(const PolicyConfig&) const = default;
};

inline void validate(const PolicyConfig& p) {
  if (p.d_lo > p.d_hi) throw Error(ErrorKind::config, "difficulty_range lower bound exceeds upper bound");
  if (p.d_hi > kMaxDifficulty) throw Error(ErrorKind::config, "difficulty_range exceeds " + std::to_string(kMaxDifficulty));
  if (!(p.epsilon >= 0.0) || !std::isfinite(p.epsilon)) throw Error(ErrorKind::config, "epsilon must be non-negative");
  if (!(p.score_lo < p.score_hi)) throw Error(ErrorKind::config, "score_range must be increasing");
  if (p.weights.dabr < 0.0 || p.weights.tam < 0.0 || p.weights.flow < 0.0)
    throw Error(ErrorKind::config, "weights must be non-negative");
  if (!p.contexts_enabled.any()) throw Error(ErrorKind::config, "at least one context must be enabled");
}

/// Policy 1: scores [0,10] onto difficulties [0,10].
inline PolicyConfig linear_policy() { return {}; }

/// Policy 2: scores [0,10] onto difficulties [10,20].
inline PolicyConfig linear_shifted_policy() {
  PolicyConfig p;
  p.policy_kind = PolicyKind::linear_shifted;
  p.d_lo = 10;
  p.d_hi = 20;
  return p;
}

/// Policy 3: linear onto [0,10], then a uniform draw in [ceil(d - eps), ceil(d + eps)].
inline PolicyConfig error_range_policy(double epsilon = 0.2, std::uint64_t seed = 0) {
  PolicyConfig p;
  p.policy_kind = PolicyKind::error_range;
  p.epsilon = epsilon;
  p.rng_seed = seed;
  return p;
}

namespace detail {

inline std::vector<double> parse_number_list(std::string_view key, std::string_view value, std::size_t n) {
  std::vector<double> out;
  for (const auto& f : split_csv(value)) {
    const auto v = parse_double(f);
    if (!v) throw Error(ErrorKind::config, std::string(key) + ": '" + f + "' is not a number");
    out.push_back(*v);
  }
  if (out.size() != n)
    throw Error(ErrorKind::config, std::string(key) + " expects " + std::to_string(n) + " comma-separated values");
  return out;
}

inline unsigned to_difficulty(std::string_view key, double v) {
  if (v < 0.0 || v != std::floor(v)) throw Error(ErrorKind::config, std::string(key) + " must hold non-negative integers");
  if (v > kMaxDifficulty) throw Error(ErrorKind::config, std::string(key) + " exceeds " + std::to_string(kMaxDifficulty));
  return static_cast<unsigned>(v);
}

}  // namespace detail

inline PolicyConfig parse_policy(std::istream& in) {
  PolicyConfig p;
  bool have_kind = false;
  std::optional<std::pair<unsigned, unsigned>> d_range;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto colon = text.find(':');
    if (colon == std::string_view::npos)
      throw Error(ErrorKind::config, "line " + std::to_string(lineno) + ": expected 'key: value'");
    const std::string key(detail::trim(text.substr(0, colon)));
    const auto value = detail::trim(text.substr(colon + 1));

    if (key == "policy_kind") {
      const auto v = detail::lower(value);
      if (v == "linear") p.policy_kind = PolicyKind::linear;
      else if (v == "linear_shifted") p.policy_kind = PolicyKind::linear_shifted;
      else if (v == "error_range") p.policy_kind = PolicyKind::error_range;
      else throw Error(ErrorKind::config, "unknown policy_kind '" + std::string(value) + "'");
      have_kind = true;
    } else if (key == "score_range") {
      const auto v = detail::parse_number_list(key, value, 2);
      p.score_lo = v[0];
      p.score_hi = v[1];
    } else if (key == "difficulty_range") {
      const auto v = detail::parse_number_list(key, value, 2);
      d_range = {detail::to_difficulty(key, v[0]), detail::to_difficulty(key, v[1])};
    } else if (key == "epsilon") {
      p.epsilon = detail::parse_number_list(key, value, 1)[0];
    } else if (key == "weights") {
      const auto v = detail::parse_number_list(key, value, 3);
      p.weights = {v[0], v[1], v[2]};
    } else if (key == "rng_seed") {
      std::uint64_t seed = 0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
      if (ec != std::errc{} || ptr != value.data() + value.size())
        throw Error(ErrorKind::config, "rng_seed must be an unsigned integer");
      p.rng_seed = seed;
    } else if (key == "contexts") {
      ContextSet set{false, false, false};
      for (const auto& name : detail::split_csv(value)) {
        const auto n = detail::lower(name);
        if (n == "dabr") set.dabr = true;
        else if (n == "tam") set.tam = true;
        else if (n == "flow") set.flow = true;
        else throw Error(ErrorKind::config, "unknown context '" + name + "'");
      }
      p.contexts_enabled = set;
    } else {
      throw Error(ErrorKind::config, "unknown policy key '" + key + "'");
    }
  }
  if (!have_kind) throw Error(ErrorKind::config, "policy_kind is required");
  if (d_range) {
    p.d_lo = d_range->first;
    p.d_hi = d_range->second;
  } else if (p.policy_kind == PolicyKind::linear_shifted) {
    p.d_lo = 10;
    p.d_hi = 20;
  }
  validate(p);
  return p;
}

inline PolicyConfig parse_policy_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_policy(in);
}

inline PolicyConfig load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open policy file '" + path + "'");
  return parse_policy(in);
}

inline std::string format_policy(const PolicyConfig& p) {
  std::string out = fmt::format("policy_kind: {}\nscore_range: {}, {}\ndifficulty_range: {}, {}\nepsilon: {}\n"
                                "weights: {}, {}, {}\n",
                                to_string(p.policy_kind), p.score_lo, p.score_hi, p.d_lo, p.d_hi, p.epsilon,
                                p.weights.dabr, p.weights.tam, p.weights.flow);
  if (p.rng_seed) out += fmt::format("rng_seed: {}\n", *p.rng_seed);
  std::vector<std::string> names;
  if (p.contexts_enabled.dabr) names.emplace_back("dabr");
  if (p.contexts_enabled.tam) names.emplace_back("tam");
  if (p.contexts_enabled.flow) names.emplace_back("flow");
  out += fmt::format("contexts: {}\n", fmt::join(names, ", "));
  return out;
}

/// Difficulty before rounding or error-range sampling.
inline double linear_difficulty(const PolicyConfig& p, double phi) {
  const double unit = (phi - p.score_lo) / (p.score_hi - p.score_lo);
  return p.d_lo + unit * (static_cast<double>(p.d_hi) - p.d_lo);
}

/// Closed integer interval sampled by the error-range policy.
inline std::pair<long, long> error_range_bounds(double d_i, double epsilon) {
  return {static_cast<long>(std::ceil(d_i - epsilon)), static_cast<long>(std::ceil(d_i + epsilon))};
}

template <class Rng>
unsigned map_difficulty(const PolicyConfig& p, double phi, Rng& rng) {
  if (!(phi >= p.score_lo && phi <= p.score_hi)) {
    const double clamped = std::isnan(phi) ? p.score_lo : std::clamp(phi, p.score_lo, p.score_hi);
    spdlog::warn("context score {} outside [{}, {}], clamped to {}", phi, p.score_lo, p.score_hi, clamped);
    phi = clamped;
  }
  const double d_i = linear_difficulty(p, phi);
  long d = 0;
  if (p.policy_kind == PolicyKind::error_range) {
    const auto [lo, hi] = error_range_bounds(d_i, p.epsilon);
    d = std::uniform_int_distribution<long>(lo, hi)(rng);
  } else {
    d = static_cast<long>(std::floor(d_i + 0.5));
  }
  return static_cast<unsigned>(std::clamp<long>(d, 0, kMaxDifficulty));
}

/// Deterministic per-request generator: the same policy seed, key and
/// sequence number always give the same draw, independent of thread timing.
inline std::mt19937_64 request_rng(const PolicyConfig& p, std::string_view key, std::uint64_t sequence) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ull;
  }
  const std::uint64_t base = p.rng_seed.value_or(0);
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(sequence), static_cast<std::uint32_t>(sequence >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace capow

#pragma once

// Hash puzzle: find a nonce such that SHA-256(u || t || seed || nonce) has at
// least d leading zero bits. Fields are serialized as
//   len(u):u32be | u | t:u64be | seed(16B) | nonce:u64be
// and this layout is shared by prover and verifier.

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capow/error.hpp"

namespace capow {

inline constexpr unsigned kMaxDifficulty = 64;
inline constexpr std::uint32_t kDefaultExpiryMs = 30'000;

using Seed = std::array<std::uint8_t, 16>;
using Digest = std::array<std::uint8_t, 32>;

struct Challenge {
  std::string user_id;
  std::uint64_t issue_time_ms = 0;
  Seed seed{};
  unsigned difficulty = 0;
  std::uint32_t expiry_ms = kDefaultExpiryMs;

  bool expired_at(std::uint64_t now_ms) const noexcept {
    return now_ms >= issue_time_ms && now_ms - issue_time_ms >= expiry_ms;
  }
  bool operator==(const Challenge&) const = default;
};

struct Solution {
  Seed seed{};
  std::uint64_t nonce = 0;
  std::uint64_t attempts = 0;
};

namespace detail {

inline void put_be(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void write_be64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) *p++ = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace detail

inline std::vector<std::uint8_t> digest_input(const Challenge& c, std::uint64_t nonce) {
  std::vector<std::uint8_t> buf;
  buf.reserve(4 + c.user_id.size() + 8 + c.seed.size() + 8);
  detail::put_be(buf, c.user_id.size(), 4);
  buf.insert(buf.end(), c.user_id.begin(), c.user_id.end());
  detail::put_be(buf, c.issue_time_ms, 8);
  buf.insert(buf.end(), c.seed.begin(), c.seed.end());
  detail::put_be(buf, nonce, 8);
  return buf;
}

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest out{};
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw std::runtime_error("SHA-256 evaluation failed");
  return out;
}

inline unsigned leading_zero_bits(std::span<const std::uint8_t> digest) {
  unsigned bits = 0;
  for (auto byte : digest) {
    if (byte != 0) return bits + static_cast<unsigned>(std::countl_zero(byte));
    bits += 8;
  }
  return bits;
}

inline Digest puzzle_digest(const Challenge& c, std::uint64_t nonce) { return sha256(digest_input(c, nonce)); }

/// The verification predicate alone: one hash evaluation, no expiry or replay checks.
inline bool meets_difficulty(const Challenge& c, std::uint64_t nonce) {
  return leading_zero_bits(puzzle_digest(c, nonce)) >= c.difficulty;
}

/// Sequential nonce search from 0. `stop` is polled every few thousand
/// attempts; returns nullopt if it fires before a solution is found.
template <class StopFn>
std::optional<Solution> solve_until(const Challenge& c, StopFn&& stop) {
  auto buf = digest_input(c, 0);
  std::uint8_t* nonce_bytes = buf.data() + buf.size() - 8;
  for (std::uint64_t nonce = 0;; ++nonce) {
    if ((nonce & 0xFFF) == 0 && nonce != 0 && stop()) return std::nullopt;
    detail::write_be64(nonce_bytes, nonce);
    if (leading_zero_bits(sha256(buf)) >= c.difficulty) return Solution{c.seed, nonce, nonce + 1};
    if (nonce == UINT64_MAX) return std::nullopt;
  }
}

inline Solution solve(const Challenge& c) {
  return *solve_until(c, [] { return false; });
}

inline std::optional<Solution> solve_for(const Challenge& c, std::chrono::milliseconds budget) {
  const auto deadline = std::chrono::steady_clock::now() + budget;
  return solve_until(c, [&] { return std::chrono::steady_clock::now() >= deadline; });
}

// ---------------------------------------------------------------------------
// Seed sources

using SeedSource = std::function<Seed()>;

/// Fresh seeds from the OpenSSL CSPRNG.
inline SeedSource system_seed_source() {
  return [] {
    Seed s{};
    if (RAND_bytes(s.data(), static_cast<int>(s.size())) != 1) throw std::runtime_error("RAND_bytes failed");
    return s;
  };
}

/// Reproducible seeds for tests and simulations. Not for deployment.
inline SeedSource deterministic_seed_source(std::uint64_t seed) {
  auto engine = std::make_shared<std::mt19937_64>(seed);
  auto mtx = std::make_shared<std::mutex>();
  return [engine, mtx] {
    std::lock_guard lock(*mtx);
    Seed s{};
    for (std::size_t i = 0; i < s.size(); i += 8) {
      const auto word = (*engine)();
      for (std::size_t j = 0; j < 8; ++j) s[i + j] = static_cast<std::uint8_t>(word >> (8 * (7 - j)));
    }
    return s;
  };
}

// ---------------------------------------------------------------------------
// Verifier

enum class VerifyStatus { accept, expired, replay, wrong_solution };

inline const char* to_string(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::accept: return "accept";
    case VerifyStatus::expired: return "expired";
    case VerifyStatus::replay: return "replay";
    case VerifyStatus::wrong_solution: return "wrong-solution";
  }
  return "?";
}

struct SeedHash {
  std::size_t operator()(const Seed& s) const noexcept {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < 8; ++i) h = (h << 8) | s[i];
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

struct VerifyResult {
  VerifyStatus status = VerifyStatus::replay;
  std::optional<Challenge> challenge;  // the server-side record, when one was found
  std::uint64_t ticket = 0;

  bool accepted() const noexcept { return status == VerifyStatus::accept; }
};

/// Server-side table of outstanding challenges keyed by seed. A seed is
/// removed when a solution for it is accepted or when it expires, so each
/// seed admits at most one solution. Thread-safe.
class ChallengeTable {
 public:
  explicit ChallengeTable(SeedSource seeds = system_seed_source()) : seeds_(std::move(seeds)) {}

  /// Issues a challenge with a fresh seed. `ticket` is an opaque caller value
  /// returned on verification.
  Challenge issue(std::string user_id, unsigned difficulty, std::uint64_t now_ms,
                  std::uint32_t expiry_ms = kDefaultExpiryMs, std::uint64_t ticket = 0) {
    if (difficulty > kMaxDifficulty)
      throw Error(ErrorKind::config, "difficulty " + std::to_string(difficulty) + " exceeds " +
                                         std::to_string(kMaxDifficulty));
    Challenge c{std::move(user_id), now_ms, {}, difficulty, expiry_ms};
    std::lock_guard lock(mutex_);
    purge_locked(now_ms);
    do {
      c.seed = seeds_();
    } while (outstanding_.contains(c.seed));
    outstanding_.emplace(c.seed, Entry{c, ticket});
    return c;
  }

  /// Checks a nonce against the stored challenge for `seed`. Performs at most
  /// one hash evaluation, and exactly one whenever a live record exists.
  VerifyResult verify(const Seed& seed, std::uint64_t nonce, std::uint64_t now_ms) {
    Entry entry;
    {
      std::lock_guard lock(mutex_);
      const auto it = outstanding_.find(seed);
      if (it == outstanding_.end()) return {VerifyStatus::replay, std::nullopt, 0};
      if (it->second.challenge.expired_at(now_ms)) {
        VerifyResult r{VerifyStatus::expired, it->second.challenge, it->second.ticket};
        outstanding_.erase(it);
        return r;
      }
      entry = it->second;
    }
    hash_evaluations_.fetch_add(1, std::memory_order_relaxed);
    if (!meets_difficulty(entry.challenge, nonce)) return {VerifyStatus::wrong_solution, entry.challenge, entry.ticket};

    // Claim the seed; a concurrent duplicate that lost the race sees a replay.
    std::lock_guard lock(mutex_);
    if (outstanding_.erase(seed) == 0) return {VerifyStatus::replay, std::nullopt, 0};
    return {VerifyStatus::accept, entry.challenge, entry.ticket};
  }

  VerifyResult verify(const Challenge& c, std::uint64_t nonce, std::uint64_t now_ms) {
    return verify(c.seed, nonce, now_ms);
  }

  /// Drops records that expired at least one further expiry window before
  /// `now_ms`. Records expired more recently stay so a late solution is
  /// reported as expired rather than as a replay.
  std::size_t purge(std::uint64_t now_ms) {
    std::lock_guard lock(mutex_);
    return purge_locked(now_ms);
  }

  std::size_t outstanding() const {
    std::lock_guard lock(mutex_);
    return outstanding_.size();
  }

  std::uint64_t hash_evaluations() const noexcept { return hash_evaluations_.load(std::memory_order_relaxed); }

 private:
  struct Entry {
    Challenge challenge;
    std::uint64_t ticket = 0;
  };

  std::size_t purge_locked(std::uint64_t now_ms) {
    return std::erase_if(outstanding_, [&](const auto& kv) {
      const auto& c = kv.second.challenge;
      return now_ms >= c.issue_time_ms && now_ms - c.issue_time_ms >= 2ull * c.expiry_ms;
    });
  }

  SeedSource seeds_;
  mutable std::mutex mutex_;
  std::unordered_map<Seed, Entry, SeedHash> outstanding_;
  std::atomic<std::uint64_t> hash_evaluations_{0};
};

inline std::uint64_t unix_now_ms() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

}  // namespace capow

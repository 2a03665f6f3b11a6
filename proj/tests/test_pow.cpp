#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "capow/pow.hpp"
#include "oracles.hpp"

using namespace capow;

namespace {

// Frozen challenge shared by the golden-vector tests. The expected digest and
// nonces were cross-checked against an independent hashlib computation.
Challenge frozen(unsigned d) {
  Challenge c{"10.0.0.1", 1'700'000'000'000ull, {}, d, 30'000};
  for (std::uint8_t i = 0; i < 16; ++i) c.seed[i] = i;
  return c;
}

std::string hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

}  // namespace

TEST(Sha256, KnownVector) {
  const std::string abc = "abc";
  const auto d = sha256(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()));
  EXPECT_EQ(hex(d), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(DigestInput, ByteLayout) {
  const auto c = frozen(0);
  const auto in = digest_input(c, 0x0102030405060708ull);
  std::vector<std::uint8_t> want = {0, 0, 0, 8};
  for (char ch : std::string("10.0.0.1")) want.push_back(static_cast<std::uint8_t>(ch));
  const std::uint64_t t = 1'700'000'000'000ull;
  for (int i = 7; i >= 0; --i) want.push_back(static_cast<std::uint8_t>(t >> (8 * i)));
  for (std::uint8_t i = 0; i < 16; ++i) want.push_back(i);
  for (std::uint8_t i = 1; i <= 8; ++i) want.push_back(i);
  EXPECT_EQ(in, want);
  EXPECT_EQ(hex(puzzle_digest(c, 0)), "5dce729bd06d2f343ac0a73d60721ca2100a61b6e6439cef2ed46b82af4b6410");
}

TEST(LeadingZeroBits, Examples) {
  const std::vector<std::uint8_t> a{0x00, 0xFF, 0xFF}, b{0x80, 0x00}, c{0x01, 0x00}, z(32, 0);
  EXPECT_EQ(leading_zero_bits(a), 8u);
  EXPECT_EQ(leading_zero_bits(b), 0u);
  EXPECT_EQ(leading_zero_bits(c), 7u);
  EXPECT_EQ(leading_zero_bits(z), 256u);
}

TEST(LeadingZeroBits, MatchesBitLoop) {
  oracle::Gen g(41);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(g.integer(1, 8)));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(g.coin(0.4) ? 0 : g.integer(0, 255) >> g.integer(0, 7));
    EXPECT_EQ(leading_zero_bits(bytes), oracle::leading_zeros(bytes));
  }
}

TEST(IssueChallenge, FreshSeeds) {
  ChallengeTable table;
  const auto a = table.issue("u", 4, 1000);
  const auto b = table.issue("u", 4, 1000);
  EXPECT_NE(a.seed, b.seed);
  EXPECT_EQ(a.issue_time_ms, 1000u);
  EXPECT_EQ(a.expiry_ms, kDefaultExpiryMs);
  EXPECT_EQ(table.outstanding(), 2u);
}

TEST(IssueChallenge, DeterministicSourceGolden) {
  auto src = deterministic_seed_source(42);
  const Seed want = {0xc1, 0x51, 0xdf, 0x7d, 0x6e, 0xe5, 0xe2, 0xd6, 0xa3, 0x97, 0x8f, 0xb9, 0xb9, 0x25, 0x02, 0xa8};
  EXPECT_EQ(src(), want);
  ChallengeTable table(deterministic_seed_source(42));
  EXPECT_EQ(table.issue("u", 0, 0).seed, want);
}

TEST(IssueChallenge, DifficultyBound) {
  ChallengeTable table;
  EXPECT_THROW(table.issue("u", 65, 0), Error);
  EXPECT_NO_THROW(table.issue("u", 64, 0));
}

TEST(Solve, ZeroDifficulty) {
  const auto s = solve(frozen(0));
  EXPECT_EQ(s.nonce, 0u);
  EXPECT_EQ(s.attempts, 1u);
}

TEST(Solve, GoldenNonceAt12) {
  const auto s = solve(frozen(12));
  EXPECT_EQ(s.nonce, 391u);
  EXPECT_EQ(s.attempts, 392u);
  EXPECT_EQ(s.seed, frozen(12).seed);
}

TEST(Solve, MeanAttemptsAt8) {
  ChallengeTable table(deterministic_seed_source(8));
  double total = 0;
  for (int i = 0; i < 1000; ++i) total += static_cast<double>(solve(table.issue("u", 8, 0)).attempts);
  const double mean = total / 1000;
  EXPECT_GE(mean, 192.0);
  EXPECT_LE(mean, 320.0);
}

TEST(Solve, FirstNonceIsMinimal) {
  oracle::Gen g(42);
  auto src = deterministic_seed_source(5);
  for (int i = 0; i < 100; ++i) {
    Challenge c{g.token(), g.u64(), src(), static_cast<unsigned>(g.integer(0, 6)), 1000};
    const auto s = solve(c);
    ASSERT_TRUE(meets_difficulty(c, s.nonce));
    for (std::uint64_t n = 0; n < s.nonce; ++n) ASSERT_FALSE(meets_difficulty(c, n));
  }
}

TEST(Solve, BudgetedSolveGivesUp) {
  auto c = frozen(64);
  EXPECT_FALSE(solve_for(c, std::chrono::milliseconds(20)));
  c.difficulty = 4;
  EXPECT_TRUE(solve_for(c, std::chrono::milliseconds(1000)));
}

TEST(Verify, AcceptsSolution) {
  ChallengeTable table(deterministic_seed_source(1));
  const auto c = table.issue("10.0.0.1", 10, 5000, 30000, 77);
  const auto s = solve(c);
  const auto r = table.verify(c, s.nonce, 6000);
  EXPECT_EQ(r.status, VerifyStatus::accept);
  EXPECT_EQ(r.ticket, 77u);
  EXPECT_EQ(table.hash_evaluations(), 1u);
  EXPECT_EQ(table.outstanding(), 0u);
}

TEST(Verify, WrongNonceAt16FrozenVector) {
  ChallengeTable table([] { return frozen(16).seed; });
  const auto c = table.issue("10.0.0.1", 16, 1'700'000'000'000ull);
  ASSERT_EQ(c.seed, frozen(16).seed);
  EXPECT_EQ(table.verify(c, 235811, c.issue_time_ms + 1).status, VerifyStatus::wrong_solution);
  EXPECT_EQ(table.verify(c, 235810, c.issue_time_ms + 1).status, VerifyStatus::accept);
  EXPECT_EQ(table.hash_evaluations(), 2u);
}

TEST(Verify, ExpiredAndReplay) {
  ChallengeTable table(deterministic_seed_source(2));
  const auto c = table.issue("u", 2, 1000, 500);
  const auto s = solve(c);
  EXPECT_EQ(table.verify(c, s.nonce, 1500).status, VerifyStatus::expired);
  EXPECT_EQ(table.verify(c, s.nonce, 1501).status, VerifyStatus::replay);

  const auto d = table.issue("u", 2, 2000, 500);
  const auto sd = solve(d);
  EXPECT_EQ(table.verify(d, sd.nonce, 2499).status, VerifyStatus::accept);
  EXPECT_EQ(table.verify(d, sd.nonce, 2499).status, VerifyStatus::replay);
}

TEST(Verify, WrongSolutionKeepsChallengeOpen) {
  ChallengeTable table(deterministic_seed_source(3));
  const auto c = table.issue("u", 12, 0);
  const auto s = solve(c);
  EXPECT_EQ(table.verify(c, s.nonce + 1, 1).status, VerifyStatus::wrong_solution);
  EXPECT_EQ(table.verify(c, s.nonce, 1).status, VerifyStatus::accept);
}

TEST(Verify, LateSolutionReportsExpiredUntilPurged) {
  ChallengeTable table(deterministic_seed_source(4));
  const auto c = table.issue("u", 0, 0, 100);
  table.issue("v", 0, 150, 100);  // triggers a purge at 150; c is expired but kept
  EXPECT_EQ(table.verify(c, 0, 160).status, VerifyStatus::expired);
  const auto e = table.issue("w", 0, 200, 100);
  EXPECT_EQ(table.purge(400), 2u);  // both remaining records are past twice their expiry
  EXPECT_EQ(table.verify(e, 0, 400).status, VerifyStatus::replay);
}

TEST(Verify, ConcurrentDuplicateAcceptsOnce) {
  for (int round = 0; round < 50; ++round) {
    ChallengeTable table;
    const auto c = table.issue("u", 4, 0);
    const auto s = solve(c);
    std::atomic<int> accepted{0}, replayed{0};
    std::vector<std::thread> ts;
    for (int i = 0; i < 4; ++i)
      ts.emplace_back([&] {
        const auto r = table.verify(c.seed, s.nonce, 1);
        (r.accepted() ? accepted : replayed).fetch_add(1);
      });
    for (auto& t : ts) t.join();
    EXPECT_EQ(accepted.load(), 1);
    EXPECT_EQ(replayed.load(), 3);
  }
}

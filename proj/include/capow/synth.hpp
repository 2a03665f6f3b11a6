#pragma once

// Synthetic activity logs shaped like a labeled flow dataset: several days of
// training traffic (legitimate users on stable daily schedules plus labeled
// attack flows), one evaluation day that adds an unseen flooding host, and an
// IP-attribute feed listing the attacking hosts.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/error.hpp"

namespace capow::synth {

struct UserSchedule {
  std::string user_id;
  std::vector<ActivityInterval> windows;
};

struct SynthOptions {
  int train_days = 5;
  std::uint64_t seed = 7;
  double step_min = 2.0;
  std::size_t attack_rows_per_day = 150;
  std::size_t flood_rows = 300;
  std::string flooder = "198.51.100.77";
  std::vector<UserSchedule> users = {
      {"10.0.0.1", {{130, 140}, {160, 170}, {600, 670}, {720, 760}}},
      {"10.0.0.2", {{300, 360}, {900, 960}}},
      {"10.0.0.3", {{480, 540}}},
      {"10.0.0.4", {{1000, 1100}}},
  };
};

struct SynthFiles {
  std::vector<std::string> train_logs;
  std::string eval_log;
  std::string ip_feed;
};

inline const char* kSynthHeader = "user_id,timestamp,label,day,duration_ms,payload_bytes,ttl,protocol";

namespace detail {

struct FlowShape {
  double duration_mean, duration_sd, payload_mean, payload_sd, ttl_mean, ttl_sd, protocol;
};

inline constexpr FlowShape kLegitFlow{200, 10, 500, 40, 64, 1, 6};
inline constexpr FlowShape kAttackFlow{20, 4, 60000, 2500, 240, 4, 17};

inline void write_row(std::ostream& out, const std::string& user, double t, const char* label, int day,
                      const FlowShape& f, std::mt19937_64& rng) {
  auto g = [&](double m, double sd) { return std::max(0.0, std::normal_distribution<double>(m, sd)(rng)); };
  out << user << ',' << t << ',' << label << ',' << day << ',' << g(f.duration_mean, f.duration_sd) << ','
      << std::llround(g(f.payload_mean, f.payload_sd)) << ',' << std::llround(g(f.ttl_mean, f.ttl_sd)) << ','
      << f.protocol << '\n';
}

inline void write_schedule(std::ostream& out, const UserSchedule& u, int day, double step, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.4 * step, 0.4 * step);
  for (const auto& w : u.windows) {
    for (double t = w.start_min; t <= w.end_min; t += step) {
      const double at = std::clamp(t + jitter(rng), w.start_min, w.end_min);
      write_row(out, u.user_id, std::round(at * 100.0) / 100.0, "BENIGN", day, kLegitFlow, rng);
    }
  }
}

}  // namespace detail

inline SynthFiles generate(const std::filesystem::path& dir, const SynthOptions& opts = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "'");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> any_time(0.0, 1439.0);
  SynthFiles files;

  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + (dir / name).string() + "'");
    out << kSynthHeader << '\n';
    return out;
  };

  for (int day = 1; day <= opts.train_days; ++day) {
    const auto name = "day" + std::to_string(day) + ".csv";
    auto out = open(name);
    for (const auto& u : opts.users) detail::write_schedule(out, u, day, opts.step_min, rng);
    for (std::size_t i = 0; i < opts.attack_rows_per_day; ++i) {
      const auto attacker = "203.0.113." + std::to_string(10 + i % 10);
      detail::write_row(out, attacker, std::round(any_time(rng) * 100.0) / 100.0, "DDoS", day, detail::kAttackFlow,
                        rng);
    }
    files.train_logs.push_back((dir / name).string());
  }

  {
    const int day = opts.train_days + 1;
    const auto name = "day" + std::to_string(day) + ".csv";
    auto out = open(name);
    for (const auto& u : opts.users) detail::write_schedule(out, u, day, opts.step_min, rng);
    for (std::size_t i = 0; i < opts.flood_rows; ++i)
      detail::write_row(out, opts.flooder, std::round(any_time(rng) * 100.0) / 100.0, "DDoS", day,
                        detail::kAttackFlow, rng);
    files.eval_log = (dir / name).string();
  }

  {
    std::ofstream out(dir / "ip_feed.csv");
    if (!out) throw Error(ErrorKind::io, "cannot write IP feed");
    out << "ip,reports,days_listed\n";
    std::uniform_int_distribution<int> reports(5, 500), days(1, 365);
    for (int i = 0; i < 10; ++i) out << "203.0.113." << (10 + i) << ',' << reports(rng) << ',' << days(rng) << '\n';
    for (int i = 0; i < 10; ++i) out << "198.51.100." << (70 + i) << ',' << reports(rng) << ',' << days(rng) << '\n';
    files.ip_feed = (dir / "ip_feed.csv").string();
  }
  return files;
}

}  // namespace capow::synth

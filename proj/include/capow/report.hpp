#pragma once

// Per-request event logs, per-user report rows, solve-latency sweeps and
// static SVG plots.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/error.hpp"
#include "capow/flow_ingest.hpp"
#include "capow/gate.hpp"
#include "capow/policy.hpp"
#include "capow/pow.hpp"

namespace capow {

struct RequestEvent {
  std::string user_id;
  std::string role;
  std::size_t sequence = 0;
  std::string sent_as;  // user id on the wire; differs from user_id for spoofing adversaries
  double arrival_min = 0.0;
  bool scored = false;
  double alpha = 0.0, beta = 0.0, gamma = 0.0, phi = 0.0;
  std::string deciding_model;
  unsigned difficulty = 0;
  std::string status;
  std::string reason;
  std::uint64_t attempts = 0;
  double latency_ms = 0.0;
  double solve_ms = 0.0;
};

inline const char* kEventsHeader =
    "user_id,role,seq,sent_as,arrival_min,scored,alpha,beta,gamma,phi,deciding_model,difficulty,status,reason,"
    "attempts,latency_ms,solve_ms";

inline void write_events_csv(std::ostream& out, const std::vector<RequestEvent>& events) {
  out << kEventsHeader << '\n' << std::setprecision(17);
  for (const auto& e : events) {
    out << e.user_id << ',' << e.role << ',' << e.sequence << ',' << e.sent_as << ',' << e.arrival_min << ','
        << (e.scored ? 1 : 0) << ',' << e.alpha << ',' << e.beta << ',' << e.gamma << ',' << e.phi << ','
        << e.deciding_model << ',' << e.difficulty << ',' << e.status << ',' << e.reason << ',' << e.attempts << ','
        << e.latency_ms << ',' << e.solve_ms << '\n';
  }
}

inline std::vector<RequestEvent> read_events_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kEventsHeader)
    throw Error(ErrorKind::schema, "events file does not carry the expected header");
  std::vector<RequestEvent> events;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    auto num = [&](std::size_t i) {
      const auto v = detail::parse_double(f[i]);
      if (!v) throw Error(ErrorKind::schema, "events line " + std::to_string(lineno) + ": bad number in column " +
                                                 std::to_string(i + 1));
      return *v;
    };
    if (f.size() != 17) throw Error(ErrorKind::schema, "events line " + std::to_string(lineno) + ": wrong field count");
    RequestEvent e;
    e.user_id = f[0];
    e.role = f[1];
    e.sequence = static_cast<std::size_t>(num(2));
    e.sent_as = f[3];
    e.arrival_min = num(4);
    e.scored = num(5) != 0.0;
    e.alpha = num(6);
    e.beta = num(7);
    e.gamma = num(8);
    e.phi = num(9);
    e.deciding_model = f[10];
    e.difficulty = static_cast<unsigned>(num(11));
    e.status = f[12];
    e.reason = f[13];
    e.attempts = static_cast<std::uint64_t>(num(14));
    e.latency_ms = num(15);
    e.solve_ms = num(16);
    events.push_back(std::move(e));
  }
  return events;
}

struct ReportRow {
  std::string user_id;
  std::string role;
  std::size_t requests_sent = 0;
  std::size_t admitted = 0;
  std::size_t rejected = 0;
  std::size_t abandoned = 0;
  double median_latency_ms = 0.0;
  double mean_difficulty = 0.0;
  double mean_phi = 0.0;
  double mean_alpha = 0.0;
  double mean_beta = 0.0;
  double mean_gamma = 0.0;
  double elapsed_s = 0.0;
  double admitted_rate_per_s = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Aggregates events per user, in order of first appearance. `elapsed_s`
/// maps user ids to wall time spent; the admitted rate divides by the larger
/// of that and `nominal_duration_s`.
inline std::vector<ReportRow> summarize(const std::vector<RequestEvent>& events,
                                        const std::map<std::string, double>& elapsed_s = {},
                                        double nominal_duration_s = 0.0) {
  std::vector<ReportRow> rows;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::vector<double>> latencies;
  std::map<std::string, std::size_t> scored;
  for (const auto& e : events) {
    auto [it, fresh] = index.emplace(e.user_id, rows.size());
    if (fresh) rows.push_back(ReportRow{e.user_id, e.role});
    auto& r = rows[it->second];
    ++r.requests_sent;
    if (e.status == "admitted") {
      ++r.admitted;
      latencies[e.user_id].push_back(e.latency_ms);
    } else if (e.status == "abandoned") {
      ++r.abandoned;
    } else {
      ++r.rejected;
    }
    if (e.scored) {
      ++scored[e.user_id];
      r.mean_difficulty += e.difficulty;
      r.mean_phi += e.phi;
      r.mean_alpha += e.alpha;
      r.mean_beta += e.beta;
      r.mean_gamma += e.gamma;
    }
  }
  for (auto& r : rows) {
    const auto n = static_cast<double>(scored[r.user_id]);
    if (n > 0) {
      r.mean_difficulty /= n;
      r.mean_phi /= n;
      r.mean_alpha /= n;
      r.mean_beta /= n;
      r.mean_gamma /= n;
    }
    r.median_latency_ms = median(latencies[r.user_id]);
    const auto it = elapsed_s.find(r.user_id);
    r.elapsed_s = it == elapsed_s.end() ? 0.0 : it->second;
    const double window = std::max(r.elapsed_s, nominal_duration_s);
    r.admitted_rate_per_s = window > 0.0 ? static_cast<double>(r.admitted) / window : 0.0;
  }
  return rows;
}

inline const char* kReportHeader =
    "user_id,role,requests_sent,admitted,rejected,abandoned,median_latency_ms,mean_difficulty,mean_phi,mean_alpha,"
    "mean_beta,mean_gamma,elapsed_s,admitted_rate_per_s";

inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << kReportHeader << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.user_id << ',' << r.role << ',' << r.requests_sent << ',' << r.admitted << ',' << r.rejected << ','
        << r.abandoned << ',' << r.median_latency_ms << ',' << r.mean_difficulty << ',' << r.mean_phi << ','
        << r.mean_alpha << ',' << r.mean_beta << ',' << r.mean_gamma << ',' << r.elapsed_s << ','
        << r.admitted_rate_per_s << '\n';
  }
}

// ---------------------------------------------------------------------------
// Solve-latency sweeps

struct SweepPoint {
  unsigned difficulty = 0;
  std::vector<double> solve_ms;  // one per trial
  std::vector<std::uint64_t> attempts;
  double median_ms = 0.0;
  double median_attempts = 0.0;
};

/// Times `trials` solves per difficulty. Trial i uses the same challenge at
/// every difficulty, so per-trial work never decreases as d grows.
inline std::vector<SweepPoint> difficulty_sweep(const std::vector<unsigned>& difficulties, int trials,
                                                std::uint64_t seed) {
  auto seeds = deterministic_seed_source(seed);
  std::vector<Challenge> base;
  for (int i = 0; i < trials; ++i)
    base.push_back(Challenge{"sweep-" + std::to_string(i), static_cast<std::uint64_t>(i), seeds(), 0, kDefaultExpiryMs});
  std::vector<SweepPoint> out;
  for (unsigned d : difficulties) {
    SweepPoint p;
    p.difficulty = d;
    for (auto c : base) {
      c.difficulty = d;
      const auto t0 = std::chrono::steady_clock::now();
      const auto sol = solve(c);
      p.solve_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      p.attempts.push_back(sol.attempts);
    }
    p.median_ms = median(p.solve_ms);
    std::vector<double> a(p.attempts.begin(), p.attempts.end());
    p.median_attempts = median(a);
    out.push_back(std::move(p));
  }
  return out;
}

struct PolicyCurvePoint {
  std::string policy;
  double score = 0.0;
  double mean_difficulty = 0.0;
  double median_ms = 0.0;
};

/// Median solve latency per integer context score for each policy, built from
/// a difficulty sweep. Error-range policies draw a difficulty per trial.
inline std::vector<PolicyCurvePoint> policy_curves(const std::vector<std::pair<std::string, PolicyConfig>>& policies,
                                                   const std::vector<SweepPoint>& sweep) {
  std::map<unsigned, const SweepPoint*> by_d;
  for (const auto& p : sweep) by_d[p.difficulty] = &p;
  std::vector<PolicyCurvePoint> out;
  for (const auto& [name, policy] : policies) {
    for (int s = 0; s <= 10; ++s) {
      std::vector<double> samples;
      double dsum = 0.0;
      const auto trials = sweep.empty() ? 0 : sweep.front().solve_ms.size();
      for (std::size_t i = 0; i < trials; ++i) {
        auto rng = request_rng(policy, name + "/" + std::to_string(s), i);
        const auto d = map_difficulty(policy, static_cast<double>(s), rng);
        const auto it = by_d.find(d);
        if (it == by_d.end()) throw Error(ErrorKind::config, "sweep lacks difficulty " + std::to_string(d));
        samples.push_back(it->second->solve_ms[i]);
        dsum += d;
      }
      out.push_back({name, static_cast<double>(s), trials ? dsum / static_cast<double>(trials) : 0.0, median(samples)});
    }
  }
  return out;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& sweep) {
  out << "difficulty,trials,median_attempts,median_solve_ms,expected_attempts\n" << std::setprecision(10);
  for (const auto& p : sweep)
    out << p.difficulty << ',' << p.solve_ms.size() << ',' << p.median_attempts << ',' << p.median_ms << ','
        << std::ldexp(1.0, static_cast<int>(p.difficulty)) << '\n';
}

inline void write_policy_curves_csv(std::ostream& out, const std::vector<PolicyCurvePoint>& pts) {
  out << "policy,score,mean_difficulty,median_solve_ms\n" << std::setprecision(10);
  for (const auto& p : pts) out << p.policy << ',' << p.score << ',' << p.mean_difficulty << ',' << p.median_ms << '\n';
}

// ---------------------------------------------------------------------------
// SVG plots

namespace svg {

inline const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
  double width = 640, height = 400, left = 60, right = 20, top = 30, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline void open(std::ostream& out, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << f.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
      << "<line x1=\"" << f.left << "\" y1=\"" << f.py(f.y0) << "\" x2=\"" << f.width - f.right << "\" y2=\""
      << f.py(f.y0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << f.py(f.y0)
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << f.width / 2 << "\" y=\"" << f.height - 10 << "\" text-anchor=\"middle\">" << xlabel
      << "</text>\n"
      << "<text x=\"14\" y=\"" << f.height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << f.height / 2 << ")\">" << ylabel << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    out << "<text x=\"" << f.left - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3)
        << y << "</text>\n";
  }
}

/// Grouped bars of mean alpha/beta/gamma/phi per user.
inline void score_breakdown(std::ostream& out, const std::vector<ReportRow>& rows) {
  Frame f;
  f.x0 = 0;
  f.x1 = std::max<double>(1.0, static_cast<double>(rows.size()));
  f.y0 = 0;
  f.y1 = 10;
  open(out, f, "Context score breakdown per user", "user", "score");
  const char* names[] = {"DAbR", "TAM", "Flow", "Phi"};
  const double slot = (f.px(1) - f.px(0)) / 5.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double vals[] = {rows[i].mean_alpha, rows[i].mean_beta, rows[i].mean_gamma, rows[i].mean_phi};
    for (int k = 0; k < 4; ++k) {
      const double x = f.px(static_cast<double>(i)) + slot * (0.5 + k);
      out << "<rect x=\"" << x << "\" y=\"" << f.py(vals[k]) << "\" width=\"" << slot * 0.9 << "\" height=\""
          << f.py(0) - f.py(vals[k]) << "\" fill=\"" << kPalette[k] << "\"/>\n";
    }
    out << "<text x=\"" << f.px(i + 0.5) << "\" y=\"" << f.py(0) + 16 << "\" text-anchor=\"middle\">"
        << rows[i].user_id << "</text>\n";
  }
  for (int k = 0; k < 4; ++k)
    out << "<text x=\"" << f.width - 80 << "\" y=\"" << 40 + 16 * k << "\" fill=\"" << kPalette[k] << "\">" << names[k]
        << "</text>\n";
  out << "</svg>\n";
}

/// Median solve latency vs. context score, one line per policy.
inline void policy_latency(std::ostream& out, const std::vector<PolicyCurvePoint>& pts) {
  Frame f;
  f.x0 = 0;
  f.x1 = 10;
  f.y0 = 0;
  double ymax = 1e-3;
  for (const auto& p : pts) ymax = std::max(ymax, p.median_ms);
  f.y1 = ymax * 1.05;
  open(out, f, "Median solve latency per context score", "context score", "median latency (ms)");
  std::vector<std::string> order;
  for (const auto& p : pts)
    if (std::find(order.begin(), order.end(), p.policy) == order.end()) order.push_back(p.policy);
  for (std::size_t k = 0; k < order.size(); ++k) {
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[k % 6] << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts)
      if (p.policy == order[k]) out << f.px(p.score) << ',' << f.py(p.median_ms) << ' ';
    out << "\"/>\n<text x=\"" << f.left + 10 << "\" y=\"" << 40 + 16 * k << "\" fill=\"" << kPalette[k % 6] << "\">"
        << order[k] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace svg

}  // namespace capow

#pragma once

// Traffic replay: an in-process gate server on loopback plus one sequential
// client per simulated user, each replaying that user's rows from an
// evaluation log at a fixed send rate.
//
// Scenario files use the policy-file syntax plus `[user <id>]` sections:
//
//   train_logs: day1.csv, day2.csv     # or `models: <dir>` for pre-trained models
//   train_days: 1-5
//   eval_log: day6.csv
//   policy: policy2.txt
//   duration_s: 3
//   seed: 42
//
//   [user 10.0.0.1]
//   role: legitimate
//   rate: 20
//
// Relative paths resolve against the scenario file's directory.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "capow/gate.hpp"
#include "capow/model_io.hpp"
#include "capow/policy.hpp"
#include "capow/report.hpp"
#include "capow/train.hpp"

namespace capow {

enum class Role { legitimate, adversarial };
enum class Strategy { replay, spoof };

struct SimUser {
  std::string user_id;
  Role role = Role::legitimate;
  double rate_per_s = 1.0;
  Strategy strategy = Strategy::replay;
};

struct SimulationScenario {
  std::vector<std::string> train_logs;
  std::optional<DayWindow> train_days;
  std::optional<std::string> models_dir;
  std::optional<std::string> ip_feed;
  std::string eval_log;
  std::string policy_path;
  double duration_s = 0.0;
  std::uint64_t seed = 1;
  std::uint32_t solve_timeout_ms = 10'000;
  std::uint32_t expiry_ms = kDefaultExpiryMs;
  std::size_t queue_capacity = 1024;
  double gap_merge_min = 5.0;
  int aging_window_days = 7;
  std::vector<SimUser> users;
};

namespace detail {

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

template <class T>
T parse_scalar(const std::string& key, std::string_view value) {
  const auto v = parse_double(value);
  if (!v) throw Error(ErrorKind::config, "scenario key '" + key + "' needs a number");
  if constexpr (std::is_integral_v<T>) {
    if (*v < 0 || *v != std::floor(*v)) throw Error(ErrorKind::config, "scenario key '" + key + "' needs an integer");
  }
  return static_cast<T>(*v);
}

}  // namespace detail

inline SimulationScenario parse_scenario(std::istream& in, const std::filesystem::path& base_dir = ".") {
  SimulationScenario sc;
  SimUser* current = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto where = "scenario line " + std::to_string(lineno) + ": ";
    if (text.front() == '[') {
      if (text.back() != ']') throw Error(ErrorKind::config, where + "unterminated section");
      const auto inner = detail::trim(text.substr(1, text.size() - 2));
      if (inner.substr(0, 5) != "user ") throw Error(ErrorKind::config, where + "sections must be '[user <id>]'");
      sc.users.push_back(SimUser{std::string(detail::trim(inner.substr(5)))});
      current = &sc.users.back();
      continue;
    }
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw Error(ErrorKind::config, where + "expected 'key: value'");
    const std::string key(detail::trim(text.substr(0, colon)));
    const auto value = detail::trim(text.substr(colon + 1));
    if (current) {
      if (key == "role") {
        const auto v = detail::lower(value);
        if (v == "legitimate") current->role = Role::legitimate;
        else if (v == "adversarial") current->role = Role::adversarial;
        else throw Error(ErrorKind::config, where + "role must be legitimate or adversarial");
      } else if (key == "rate") {
        current->rate_per_s = detail::parse_scalar<double>(key, value);
      } else if (key == "strategy") {
        const auto v = detail::lower(value);
        if (v == "replay") current->strategy = Strategy::replay;
        else if (v == "spoof") current->strategy = Strategy::spoof;
        else throw Error(ErrorKind::config, where + "strategy must be replay or spoof");
      } else {
        throw Error(ErrorKind::config, where + "unknown user key '" + key + "'");
      }
      continue;
    }
    if (key == "train_logs") {
      for (const auto& p : detail::split_csv(value)) sc.train_logs.push_back(detail::resolve_path(base_dir, p));
    } else if (key == "train_days") {
      sc.train_days = parse_day_window(std::string(value));
    } else if (key == "models") {
      sc.models_dir = detail::resolve_path(base_dir, std::string(value));
    } else if (key == "ip_feed") {
      sc.ip_feed = detail::resolve_path(base_dir, std::string(value));
    } else if (key == "eval_log") {
      sc.eval_log = detail::resolve_path(base_dir, std::string(value));
    } else if (key == "policy") {
      sc.policy_path = detail::resolve_path(base_dir, std::string(value));
    } else if (key == "duration_s") {
      sc.duration_s = detail::parse_scalar<double>(key, value);
    } else if (key == "seed") {
      sc.seed = detail::parse_scalar<std::uint64_t>(key, value);
    } else if (key == "solve_timeout_ms") {
      sc.solve_timeout_ms = detail::parse_scalar<std::uint32_t>(key, value);
    } else if (key == "expiry_ms") {
      sc.expiry_ms = detail::parse_scalar<std::uint32_t>(key, value);
    } else if (key == "queue_capacity") {
      sc.queue_capacity = detail::parse_scalar<std::size_t>(key, value);
    } else if (key == "gap_merge_min") {
      sc.gap_merge_min = detail::parse_scalar<double>(key, value);
    } else if (key == "aging_window_days") {
      sc.aging_window_days = detail::parse_scalar<int>(key, value);
    } else {
      throw Error(ErrorKind::config, where + "unknown scenario key '" + key + "'");
    }
  }
  if (!(sc.duration_s > 0.0)) throw Error(ErrorKind::config, "scenario duration_s must be positive");
  if (sc.eval_log.empty()) throw Error(ErrorKind::config, "scenario needs eval_log");
  if (sc.policy_path.empty()) throw Error(ErrorKind::config, "scenario needs policy");
  if (sc.train_logs.empty() && !sc.models_dir) throw Error(ErrorKind::config, "scenario needs train_logs or models");
  if (sc.users.empty()) throw Error(ErrorKind::config, "scenario declares no [user] sections");
  for (const auto& u : sc.users)
    if (!(u.rate_per_s > 0.0)) throw Error(ErrorKind::config, "user '" + u.user_id + "' needs a positive rate");
  return sc;
}

inline SimulationScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open scenario '" + path + "'");
  return parse_scenario(in, std::filesystem::path(path).parent_path());
}

struct SimulationResult {
  std::vector<RequestEvent> events;
  std::vector<ReportRow> rows;
  std::map<std::string, double> elapsed_s;
  std::uint64_t queue_drained = 0;
};

/// Number of requests each user sends: rate * duration, at least one.
inline std::size_t planned_requests(const SimUser& u, double duration_s) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(u.rate_per_s * duration_s)));
}

inline std::shared_ptr<const ModelBundle> scenario_models(const SimulationScenario& sc) {
  if (sc.models_dir) return std::make_shared<const ModelBundle>(load_bundle(*sc.models_dir));
  TrainOptions opts;
  opts.logs = sc.train_logs;
  opts.days = sc.train_days;
  opts.ip_feed = sc.ip_feed;
  opts.gap_merge_min = sc.gap_merge_min;
  opts.aging_window_days = sc.aging_window_days;
  return std::make_shared<const ModelBundle>(train_from_logs(opts).bundle);
}

inline SimulationResult run_simulation(const SimulationScenario& sc, std::optional<PolicyConfig> policy_override = {},
                                       std::shared_ptr<const ModelBundle> models = nullptr) {
  if (!models) models = scenario_models(sc);
  const auto policy = policy_override ? *policy_override : load_policy(sc.policy_path);
  const auto eval = parse_activity_log(sc.eval_log);
  if (eval.flow_columns != models->flow_columns)
    throw Error(ErrorKind::schema, "evaluation log flow columns differ from the trained models");

  std::map<std::string, std::vector<const ActivityRecord*>> rows_by_user;
  for (const auto& r : eval.records) rows_by_user[r.user_id].push_back(&r);
  for (const auto& u : sc.users)
    if (!rows_by_user.contains(u.user_id))
      throw Error(ErrorKind::config, "roster user '" + u.user_id + "' has no rows in the evaluation log");

  std::vector<std::string> spoof_pool;
  if (models->tam)
    for (const auto& [user, _] : models->tam->intervals) spoof_pool.push_back(user);
  if (spoof_pool.empty())
    for (const auto& u : sc.users)
      if (u.role == Role::legitimate) spoof_pool.push_back(u.user_id);

  Gate gate(models, policy, GateConfig{sc.expiry_ms, sc.queue_capacity}, deterministic_seed_source(sc.seed));
  std::mutex decisions_mutex;
  std::map<Seed, ScoringDecision> decisions;
  gate.set_decision_sink([&](const ScoringDecision& d) {
    std::lock_guard lock(decisions_mutex);
    decisions.emplace(d.seed, d);
  });

  GateServer server(gate, net::Endpoint{"127.0.0.1", 0});
  server.start();
  const net::Endpoint endpoint{"127.0.0.1", server.port()};

  std::atomic<bool> draining{true};
  std::atomic<std::uint64_t> drained{0};
  std::thread drain([&] {
    while (draining)
      if (gate.queue().pop_for(std::chrono::milliseconds(50))) drained.fetch_add(1);
    while (gate.queue().try_pop()) drained.fetch_add(1);
  });

  struct UserRun {
    std::vector<RequestEvent> events;
    std::vector<std::optional<Seed>> seeds;
    double elapsed_s = 0.0;
  };
  std::vector<UserRun> runs(sc.users.size());
  std::vector<std::thread> clients;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t ui = 0; ui < sc.users.size(); ++ui) {
    clients.emplace_back([&, ui] {
      const auto& user = sc.users[ui];
      const auto& rows = rows_by_user.at(user.user_id);
      const auto n = planned_requests(user, sc.duration_s);
      std::seed_seq sseq{static_cast<std::uint32_t>(sc.seed), static_cast<std::uint32_t>(ui)};
      std::mt19937_64 rng(sseq);
      ClientOptions opts;
      opts.solve_timeout = std::chrono::milliseconds(sc.solve_timeout_ms);
      auto& run = runs[ui];
      for (std::size_t i = 0; i < n; ++i) {
        std::this_thread::sleep_until(start + std::chrono::duration<double>(static_cast<double>(i) / user.rate_per_s));
        const auto* row = rows[i % rows.size()];
        wire::RequestMsg req{user.user_id, row->timestamp_min, row->flow_features};
        if (user.strategy == Strategy::spoof && !spoof_pool.empty())
          req.user_id = spoof_pool[std::uniform_int_distribution<std::size_t>(0, spoof_pool.size() - 1)(rng)];
        const auto outcome = client_session(req, endpoint, opts);
        RequestEvent e;
        e.user_id = user.user_id;
        e.role = user.role == Role::legitimate ? "legitimate" : "adversarial";
        e.sequence = i;
        e.sent_as = req.user_id;
        e.arrival_min = req.arrival_min;
        e.difficulty = outcome.difficulty;
        e.status = to_string(outcome.status);
        e.reason = outcome.reject_reason ? wire::to_string(*outcome.reject_reason) : "";
        e.attempts = outcome.attempts;
        e.latency_ms = outcome.latency_ms;
        e.solve_ms = outcome.solve_ms;
        run.events.push_back(std::move(e));
        run.seeds.push_back(outcome.seed);
      }
      run.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });
  }
  for (auto& t : clients) t.join();
  server.stop();
  draining = false;
  drain.join();

  SimulationResult result;
  for (std::size_t ui = 0; ui < runs.size(); ++ui) {
    auto& run = runs[ui];
    for (std::size_t i = 0; i < run.events.size(); ++i) {
      auto& e = run.events[i];
      if (run.seeds[i]) {
        const auto it = decisions.find(*run.seeds[i]);
        if (it != decisions.end()) {
          const auto& cs = it->second.score;
          e.scored = true;
          e.alpha = cs.alpha;
          e.beta = cs.beta;
          e.gamma = cs.gamma;
          e.phi = cs.phi;
          e.deciding_model = to_string(cs.deciding_model);
          e.difficulty = it->second.difficulty;
        }
      }
      result.events.push_back(std::move(e));
    }
    result.elapsed_s[sc.users[ui].user_id] = run.elapsed_s;
  }
  result.rows = summarize(result.events, result.elapsed_s, sc.duration_s);
  result.queue_drained = drained.load();
  return result;
}

}  // namespace capow

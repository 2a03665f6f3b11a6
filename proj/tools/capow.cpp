// capow: train context models, score requests, run the gate server and
// solving clients, replay evaluation traffic, and build report tables.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data error (including
// partial training), 3 runtime failure.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "capow/capow.hpp"

namespace fs = std::filesystem;
using namespace capow;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

std::vector<double> parse_features(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : detail::split_csv(text)) {
    const auto v = detail::parse_double(f);
    if (!v) throw Error(ErrorKind::schema, "feature '" + f + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

PolicyConfig policy_or_default(const std::string& path) {
  if (!path.empty()) return load_policy(path);
  if (const char* env = std::getenv("CAPOW_POLICY"); env && *env) return load_policy(env);
  return linear_policy();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  return out;
}

void write_plots(const fs::path& dir, const std::vector<ReportRow>* rows, int trials, unsigned max_d,
                 std::uint64_t seed) {
  if (rows) {
    auto out = open_out(dir / "score_breakdown.svg");
    svg::score_breakdown(out, *rows);
  }
  std::vector<unsigned> ds;
  for (unsigned d = 0; d <= max_d; ++d) ds.push_back(d);
  spdlog::info("timing {} solves per difficulty for d in [0, {}]", trials, max_d);
  const auto sweep = difficulty_sweep(ds, trials, seed);
  {
    auto out = open_out(dir / "sweep.csv");
    write_sweep_csv(out, sweep);
  }
  const std::vector<std::pair<std::string, PolicyConfig>> policies = {
      {"policy1", linear_policy()}, {"policy2", linear_shifted_policy()}, {"policy3", error_range_policy(0.2, seed)}};
  std::vector<std::pair<std::string, PolicyConfig>> usable;
  for (const auto& p : policies)
    if (p.second.d_hi + (p.second.policy_kind == PolicyKind::error_range ? 1 : 0) <= max_d) usable.push_back(p);
  if (usable.size() != policies.size())
    spdlog::warn("sweep stops at d={}, omitting policies that need higher difficulties", max_d);
  const auto curves = policy_curves(usable, sweep);
  {
    auto out = open_out(dir / "policy_curves.csv");
    write_policy_curves_csv(out, curves);
  }
  auto out = open_out(dir / "policy_latency.svg");
  svg::policy_latency(out, curves);
}

int cmd_train(const std::vector<std::string>& logs, const std::string& days, const std::string& ip_feed,
              const std::string& out_dir, double gap, int aging, double tam_dmax, double dabr_dmax) {
  TrainOptions opts;
  opts.logs = logs;
  if (!days.empty()) opts.days = parse_day_window(days);
  if (!ip_feed.empty()) opts.ip_feed = ip_feed;
  opts.gap_merge_min = gap;
  opts.aging_window_days = aging;
  opts.tam_delta_max_min = tam_dmax;
  if (dabr_dmax > 0) opts.dabr_delta_max = dabr_dmax;
  const auto result = train_from_logs(opts);
  save_bundle(result.bundle, out_dir);
  const auto& b = result.bundle;
  std::cout << "records_used," << result.records_used << "\nrows_skipped," << result.rows_skipped
            << "\ndabr," << (b.dabr ? "trained" : "disabled") << "\ntam," << (b.tam ? "trained" : "disabled")
            << "\nflow," << (b.flow ? "trained" : "disabled") << '\n';
  for (const auto& w : b.warnings) spdlog::warn("{}", w);
  return result.partial ? kData : kOk;
}

int cmd_score(const std::string& models_dir, const std::string& policy_path, const std::string& row,
              std::string user, double arrival, const std::string& features, bool csv) {
  const auto models = load_bundle(models_dir);
  const auto policy = policy_or_default(policy_path);
  wire::RequestMsg req;
  if (!row.empty()) {
    const auto f = detail::split_csv(row);
    if (f.size() < 3) throw Error(ErrorKind::schema, "--row needs user_id,arrival,feature...");
    req.user_id = f[0];
    const auto t = detail::parse_double(f[1]);
    if (!t) throw Error(ErrorKind::schema, "arrival '" + f[1] + "' is not a number");
    req.arrival_min = *t;
    for (std::size_t i = 2; i < f.size(); ++i) {
      const auto v = detail::parse_double(f[i]);
      if (!v) throw Error(ErrorKind::schema, "feature '" + f[i] + "' is not a number");
      req.flow_features.push_back(*v);
    }
  } else {
    if (user.empty()) throw Error(ErrorKind::config, "give --row or --user/--arrival/--features");
    req.user_id = std::move(user);
    req.arrival_min = arrival;
    req.flow_features = parse_features(features);
  }
  if (req.flow_features.size() != models.flow_columns.size())
    throw Error(ErrorKind::schema, "request has " + std::to_string(req.flow_features.size()) +
                                       " flow features, models expect " + std::to_string(models.flow_columns.size()));
  const auto cs = Gate::score(models, policy, req);
  auto rng = request_rng(policy, Gate::request_key(req), 0);
  const auto d = map_difficulty(policy, cs.phi, rng);
  if (csv) {
    std::cout << "user_id,alpha,beta,gamma,phi,deciding_model,difficulty\n"
              << req.user_id << ',' << cs.alpha << ',' << cs.beta << ',' << cs.gamma << ',' << cs.phi << ','
              << to_string(cs.deciding_model) << ',' << d << '\n';
  } else {
    std::cout << "user      " << req.user_id << "\nalpha     " << cs.alpha << "\nbeta      " << cs.beta
              << "\ngamma     " << cs.gamma << "\nphi       " << cs.phi << "\ndecided   "
              << to_string(cs.deciding_model) << "\npolicy    " << to_string(policy.policy_kind)
              << "\ndifficulty " << d << '\n';
  }
  return kOk;
}

int cmd_serve(const std::string& models_dir, const std::string& listen, const std::string& policy_path,
              std::uint32_t expiry_ms, std::size_t capacity, double duration_s) {
  auto models = std::make_shared<const ModelBundle>(load_bundle(models_dir));
  Gate gate(models, policy_or_default(policy_path), GateConfig{expiry_ms, capacity});
  GateServer server(gate, net::parse_endpoint(listen));
  server.start();
  std::cout << "listening," << server.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(duration_s);
  while (!g_stop && (duration_s <= 0 || std::chrono::steady_clock::now() < until)) {
    // The queue stands in for the protected application: drain it.
    while (gate.queue().try_pop()) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::cout << "sessions," << server.sessions_served() << "\nadmitted," << gate.admitted() << std::endl;
  return kOk;
}

int cmd_solve(const std::string& server, const std::string& user, double arrival, const std::string& features,
              int count, std::uint32_t timeout_ms) {
  const auto ep = net::parse_endpoint(server);
  const wire::RequestMsg req{user, arrival, parse_features(features)};
  ClientOptions opts;
  opts.solve_timeout = std::chrono::milliseconds(timeout_ms);
  std::cout << "sequence,status,reason,difficulty,attempts,solve_ms,latency_ms,queue_position\n";
  bool any_transport = false;
  for (int i = 0; i < count; ++i) {
    const auto o = client_session(req, ep, opts);
    std::cout << i << ',' << to_string(o.status) << ','
              << (o.reject_reason ? wire::to_string(*o.reject_reason) : (o.status == SessionStatus::transport ? "transport" : ""))
              << ',' << o.difficulty << ',' << o.attempts << ',' << o.solve_ms << ',' << o.latency_ms << ','
              << o.queue_position << '\n';
    if (o.status == SessionStatus::transport) {
      spdlog::error("{}", o.detail);
      any_transport = true;
    }
  }
  return any_transport ? kRuntime : kOk;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir, bool plots, int trials,
                 unsigned max_d) {
  const auto sc = load_scenario(scenario_path);
  const auto result = run_simulation(sc);
  fs::create_directories(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "events.csv");
    write_events_csv(out, result.events);
  }
  {
    auto out = open_out(fs::path(out_dir) / "report.csv");
    write_report_csv(out, result.rows);
  }
  write_report_csv(std::cout, result.rows);
  if (plots) write_plots(out_dir, &result.rows, trials, max_d, sc.seed);
  return kOk;
}

int cmd_report(const std::string& events_path, const std::string& out_dir, double duration_s, bool sweep, bool plots,
               int trials, unsigned max_d, std::uint64_t seed) {
  if (events_path.empty() && !sweep) throw Error(ErrorKind::config, "give --events or --sweep");
  fs::create_directories(out_dir);
  std::optional<std::vector<ReportRow>> rows;
  if (!events_path.empty()) {
    std::ifstream in(events_path);
    if (!in) throw Error(ErrorKind::io, "cannot open '" + events_path + "'");
    rows = summarize(read_events_csv(in), {}, duration_s);
    auto out = open_out(fs::path(out_dir) / "report.csv");
    write_report_csv(out, *rows);
    write_report_csv(std::cout, *rows);
  }
  if (sweep) {
    write_plots(out_dir, rows ? &*rows : nullptr, trials, max_d, seed);
  } else if (plots && rows) {
    auto out = open_out(fs::path(out_dir) / "score_breakdown.svg");
    svg::score_breakdown(out, *rows);
  }
  return kOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const net::TransportError*>(&e)) return kRuntime;
  switch (e.kind()) {
    case ErrorKind::config: return kUsage;
    case ErrorKind::protocol: return kRuntime;
    default: return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("capow"));
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"Context-aware proof-of-work admission gate"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log scoring decisions and progress");

  // train
  auto* train = app.add_subcommand("train", "Train DAbR/TAM/Flow models from activity logs");
  std::vector<std::string> logs;
  std::string days, ip_feed, models_out;
  double gap = 5.0, tam_dmax = kDefaultTamDeltaMaxMin, dabr_dmax = 0.0;
  int aging = 7;
  train->add_option("--log", logs, "Activity log CSV (repeatable, in day order)")->required();
  train->add_option("--days", days, "Day window, e.g. 1-5");
  train->add_option("--ip-feed", ip_feed, "IP attribute feed CSV (enables DAbR)");
  train->add_option("--out", models_out, "Model output directory")->required();
  train->add_option("--gap-merge-min", gap, "Merge arrivals closer than this many minutes");
  train->add_option("--aging-window-days", aging, "Keep only the most recent N days of activity");
  train->add_option("--tam-delta-max", tam_dmax, "TAM normalizer in minutes");
  train->add_option("--dabr-delta-max", dabr_dmax, "DAbR normalizer (default: unit diagonal)");

  // score
  auto* score = app.add_subcommand("score", "Score one request against trained models");
  std::string models_dir, policy_path, row, user, features;
  double arrival = 0.0;
  bool csv = false;
  score->add_option("--models", models_dir, "Model directory")->required();
  score->add_option("--policy", policy_path, "Policy file (default: $CAPOW_POLICY or linear 0-10)");
  score->add_option("--row", row, "user_id,arrival_min,feature...");
  score->add_option("--user", user, "User id");
  score->add_option("--arrival", arrival, "Arrival time, minutes after midnight");
  score->add_option("--features", features, "Comma-separated raw flow features");
  score->add_flag("--csv", csv, "Print one CSV line");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the admission gate server");
  std::string listen = "127.0.0.1:7000";
  std::uint32_t expiry_ms = kDefaultExpiryMs;
  std::size_t capacity = 1024;
  double serve_for = 0.0;
  serve->add_option("--models", models_dir, "Model directory")->required();
  serve->add_option("--listen", listen, "host:port (port 0 picks a free port)");
  serve->add_option("--policy", policy_path, "Policy file (default: $CAPOW_POLICY or linear 0-10)");
  serve->add_option("--expiry-ms", expiry_ms, "Challenge lifetime");
  serve->add_option("--queue-capacity", capacity, "Server queue bound")->check(CLI::PositiveNumber);
  serve->add_option("--duration", serve_for, "Stop after this many seconds (default: until SIGINT)");

  // solve
  auto* solvecmd = app.add_subcommand("solve", "Send requests and solve the returned challenges");
  std::string server = "127.0.0.1:7000";
  int count = 1;
  std::uint32_t timeout_ms = 30'000;
  solvecmd->add_option("--server", server, "host:port");
  solvecmd->add_option("--user", user, "User id")->required();
  solvecmd->add_option("--arrival", arrival, "Arrival time, minutes after midnight");
  solvecmd->add_option("--features", features, "Comma-separated raw flow features")->required();
  solvecmd->add_option("--count", count, "Number of sequential sessions")->check(CLI::PositiveNumber);
  solvecmd->add_option("--timeout-ms", timeout_ms, "Give up solving after this long");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Replay evaluation traffic through a loopback gate");
  std::string scenario, out_dir = "capow-out";
  bool plots = false;
  int trials = 30;
  unsigned max_d = 20;
  simulate->add_option("scenario", scenario, "Scenario file")->required();
  simulate->add_option("--out", out_dir, "Output directory");
  simulate->add_flag("--plots", plots, "Also write SVG plots and the policy latency sweep");
  simulate->add_option("--trials", trials, "Solves per difficulty in the sweep")->check(CLI::PositiveNumber);
  simulate->add_option("--max-difficulty", max_d, "Largest difficulty in the sweep")->check(CLI::Range(0, 64));

  // report
  auto* report = app.add_subcommand("report", "Summarize an event log and/or time a difficulty sweep");
  std::string events;
  double duration_s = 0.0;
  bool sweep = false;
  std::uint64_t seed = 1;
  report->add_option("--events", events, "events.csv from simulate");
  report->add_option("--duration", duration_s, "Nominal send duration for admitted rates");
  report->add_option("--out", out_dir, "Output directory");
  report->add_flag("--sweep", sweep, "Time solves per difficulty and per policy");
  report->add_flag("--plots", plots, "Write SVG plots");
  report->add_option("--trials", trials, "Solves per difficulty")->check(CLI::PositiveNumber);
  report->add_option("--max-difficulty", max_d, "Largest difficulty in the sweep")->check(CLI::Range(0, 64));
  report->add_option("--seed", seed, "Challenge seed for the sweep");

  // synth
  auto* synthcmd = app.add_subcommand("synth", "Write synthetic training/evaluation logs and an IP feed");
  std::uint64_t synth_seed = 7;
  synthcmd->add_option("--out", out_dir, "Output directory")->required();
  synthcmd->add_option("--seed", synth_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (*train) return cmd_train(logs, days, ip_feed, models_out, gap, aging, tam_dmax, dabr_dmax);
    if (*score) return cmd_score(models_dir, policy_path, row, user, arrival, features, csv);
    if (*serve) return cmd_serve(models_dir, listen, policy_path, expiry_ms, capacity, serve_for);
    if (*solvecmd) return cmd_solve(server, user, arrival, features, count, timeout_ms);
    if (*simulate) return cmd_simulate(scenario, out_dir, plots, trials, max_d);
    if (*report) return cmd_report(events, out_dir, duration_s, sweep, plots, trials, max_d, seed);
    if (*synthcmd) {
      synth::SynthOptions opts;
      opts.seed = synth_seed;
      const auto files = synth::generate(out_dir, opts);
      for (const auto& f : files.train_logs) std::cout << "train," << f << '\n';
      std::cout << "eval," << files.eval_log << "\nip_feed," << files.ip_feed << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "capow: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "capow: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "capow: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

#pragma once

// The admission gate: score a request, issue a puzzle sized by policy, verify
// the returned nonce, and enqueue admitted requests. GateServer serves the gate
// over TCP with one session per connection; client_session is the matching
// prover side.

#include <spdlog/spdlog.h>

#include <atomic>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/flow_ingest.hpp"
#include "capow/model_io.hpp"
#include "capow/net.hpp"
#include "capow/policy.hpp"
#include "capow/pow.hpp"
#include "capow/protocol.hpp"

namespace capow {

/// Bounded FIFO of admitted request ids.
class ServerQueue {
 public:
  explicit ServerQueue(std::size_t capacity = 1024) : capacity_(capacity) {
    if (capacity_ == 0) throw Error(ErrorKind::config, "queue capacity must be positive");
  }

  /// Returns the 1-based position of the new entry, or nullopt when full.
  std::optional<std::uint32_t> push(std::uint64_t id) {
    std::lock_guard lock(mutex_);
    if (items_.size() >= capacity_) return std::nullopt;
    items_.push_back(id);
    cv_.notify_one();
    return static_cast<std::uint32_t>(items_.size());
  }

  std::optional<std::uint64_t> try_pop() {
    std::lock_guard lock(mutex_);
    if (items_.empty()) return std::nullopt;
    const auto id = items_.front();
    items_.pop_front();
    return id;
  }

  template <class Rep, class Period>
  std::optional<std::uint64_t> pop_for(std::chrono::duration<Rep, Period> wait) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_for(lock, wait, [&] { return !items_.empty(); })) return std::nullopt;
    const auto id = items_.front();
    items_.pop_front();
    return id;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }
  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::uint64_t> items_;
};

struct ScoringDecision {
  std::uint64_t request_id = 0;
  std::string user_id;
  double arrival_min = 0.0;
  ContextScore score;
  unsigned difficulty = 0;
  Seed seed{};
};

struct GateConfig {
  std::uint32_t expiry_ms = kDefaultExpiryMs;
  std::size_t queue_capacity = 1024;
};

class Gate {
 public:
  using ClockFn = std::function<std::uint64_t()>;
  using DecisionSink = std::function<void(const ScoringDecision&)>;

  Gate(std::shared_ptr<const ModelBundle> models, PolicyConfig policy, GateConfig config = {},
       SeedSource seeds = system_seed_source(), ClockFn clock = unix_now_ms)
      : models_(std::move(models)),
        policy_(std::make_shared<const PolicyConfig>(std::move(policy))),
        config_(config),
        table_(std::move(seeds)),
        queue_(config.queue_capacity),
        clock_(std::move(clock)) {
    validate(*policy_);
  }

  /// Whole-object swaps between requests; in-flight requests keep the old value.
  void set_policy(PolicyConfig policy) {
    validate(policy);
    std::lock_guard lock(swap_mutex_);
    policy_ = std::make_shared<const PolicyConfig>(std::move(policy));
  }
  void set_models(std::shared_ptr<const ModelBundle> models) {
    std::lock_guard lock(swap_mutex_);
    models_ = std::move(models);
  }
  void set_decision_sink(DecisionSink sink) {
    std::lock_guard lock(swap_mutex_);
    sink_ = std::make_shared<DecisionSink>(std::move(sink));
  }

  std::shared_ptr<const PolicyConfig> policy() const {
    std::lock_guard lock(swap_mutex_);
    return policy_;
  }
  std::shared_ptr<const ModelBundle> models() const {
    std::lock_guard lock(swap_mutex_);
    return models_;
  }

  /// Scores a request against the loaded models. Contexts that are disabled
  /// by policy or were never trained do not take part in the fusion.
  static ContextScore score(const ModelBundle& models, const PolicyConfig& policy, const wire::RequestMsg& req) {
    const ContextSet active{policy.contexts_enabled.dabr && models.dabr.has_value(),
                            policy.contexts_enabled.tam && models.tam.has_value(),
                            policy.contexts_enabled.flow && models.flow.has_value()};
    if (!active.any()) throw Error(ErrorKind::config, "no enabled context has a trained model");
    if (!std::isfinite(req.arrival_min) || req.arrival_min < 0.0 || req.arrival_min >= kMinutesPerDay)
      throw Error(ErrorKind::schema, "arrival time outside the day");
    for (double f : req.flow_features)
      if (!std::isfinite(f)) throw Error(ErrorKind::schema, "non-finite flow feature");
    const ActivityRecord record{req.user_id, req.arrival_min, 0, req.flow_features, Label::unlabeled};
    const auto ctx = extract_context(record, models.scaler, models.embedder);
    const double alpha = active.dabr ? score_dabr(*models.dabr, ctx.ip_attributes) : 0.0;
    const double beta = active.tam ? score_tam(*models.tam, ctx.user_id, ctx.arrival_min) : 0.0;
    const double gamma = active.flow ? score_flow(*models.flow, ctx.flow_vector) : 0.0;
    return fuse_scores(alpha, beta, gamma, policy.weights, active);
  }

  wire::Message handle_request(const wire::RequestMsg& req) {
    const auto models = this->models();
    const auto policy = this->policy();
    if (!models) return wire::RejectMsg{wire::RejectReason::unavailable};
    ContextScore cs;
    try {
      cs = score(*models, *policy, req);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) return wire::RejectMsg{wire::RejectReason::unavailable};
      spdlog::debug("rejecting request from '{}': {}", req.user_id, e.what());
      return wire::RejectMsg{wire::RejectReason::bad_request};
    }
    auto rng = request_rng(*policy, request_key(req), 0);
    const unsigned d = map_difficulty(*policy, cs.phi, rng);
    const auto id = next_id_.fetch_add(1) + 1;
    const auto challenge = table_.issue(req.user_id, d, clock_(), config_.expiry_ms, id);

    ScoringDecision decision{id, req.user_id, req.arrival_min, cs, d, challenge.seed};
    spdlog::info("score user={} alpha={:.3f} beta={:.3f} gamma={:.3f} phi={:.3f} by={} d={}", req.user_id, cs.alpha,
                 cs.beta, cs.gamma, cs.phi, to_string(cs.deciding_model), d);
    std::shared_ptr<DecisionSink> sink;
    {
      std::lock_guard lock(swap_mutex_);
      sink = sink_;
    }
    if (sink && *sink) (*sink)(decision);
    return wire::to_message(challenge);
  }

  /// Malformed bytes become REJECT(bad-request).
  wire::Message handle_request_bytes(std::span<const std::uint8_t> frame) {
    try {
      auto msg = wire::decode(frame);
      if (const auto* req = std::get_if<wire::RequestMsg>(&msg)) return handle_request(*req);
    } catch (const Error&) {
    }
    return wire::RejectMsg{wire::RejectReason::bad_request};
  }

  wire::Message handle_solution(const wire::SolutionMsg& sol) {
    const auto result = table_.verify(sol.seed, sol.nonce, clock_());
    switch (result.status) {
      case VerifyStatus::expired: return wire::RejectMsg{wire::RejectReason::expired};
      case VerifyStatus::replay: return wire::RejectMsg{wire::RejectReason::replay};
      case VerifyStatus::wrong_solution: return wire::RejectMsg{wire::RejectReason::wrong_solution};
      case VerifyStatus::accept: break;
    }
    const auto pos = queue_.push(result.ticket);
    if (!pos) return wire::RejectMsg{wire::RejectReason::overloaded};
    admitted_.fetch_add(1);
    return wire::AcceptMsg{*pos};
  }

  ServerQueue& queue() noexcept { return queue_; }
  ChallengeTable& challenges() noexcept { return table_; }
  const GateConfig& config() const noexcept { return config_; }
  std::uint64_t admitted() const noexcept { return admitted_.load(); }

  // Error-range draws are keyed by request content so they do not depend on
  // the order in which concurrent sessions reach the gate.
  static std::string request_key(const wire::RequestMsg& req) {
    std::string key = req.user_id;
    auto append = [&](double v) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) key.push_back(static_cast<char>(bits >> (8 * i)));
    };
    append(req.arrival_min);
    for (double f : req.flow_features) append(f);
    return key;
  }

 private:

  mutable std::mutex swap_mutex_;
  std::shared_ptr<const ModelBundle> models_;
  std::shared_ptr<const PolicyConfig> policy_;
  std::shared_ptr<DecisionSink> sink_;
  GateConfig config_;
  ChallengeTable table_;
  ServerQueue queue_;
  ClockFn clock_;
  std::atomic<std::uint64_t> next_id_{0};
  std::atomic<std::uint64_t> admitted_{0};
};

// ---------------------------------------------------------------------------
// Server

/// Serves a Gate over TCP. Each connection carries one REQUEST -> CHALLENGE
/// -> SOLUTION -> ACCEPT/REJECT session.
class GateServer {
 public:
  GateServer(Gate& gate, net::Endpoint listen) : gate_(gate), endpoint_(std::move(listen)) {}
  GateServer(const GateServer&) = delete;
  GateServer& operator=(const GateServer&) = delete;
  ~GateServer() { stop(); }

  void start() {
    listener_ = net::listen_tcp(endpoint_);
    port_ = net::local_port(listener_);
    stopping_ = false;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!acceptor_.joinable()) return;
    stopping_ = true;
    acceptor_.join();
    listener_.close();
    std::list<Session> sessions;
    {
      std::lock_guard lock(sessions_mutex_);
      sessions.swap(sessions_);
    }
    for (auto& s : sessions)
      if (s.thread.joinable()) s.thread.join();
  }

  std::uint16_t port() const noexcept { return port_; }
  std::uint64_t sessions_served() const noexcept { return served_.load(); }

 private:
  struct Session {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void accept_loop() {
    while (!stopping_) {
      if (!net::wait_readable(listener_.fd(), net::Clock::now() + std::chrono::milliseconds(100), &stopping_)) {
        reap();
        continue;
      }
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto done = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lock(sessions_mutex_);
      sessions_.push_back(Session{std::thread([this, fd, done] {
                                    run_session(net::Socket(fd));
                                    done->store(true);
                                  }),
                                  done});
    }
  }

  void reap() {
    std::lock_guard lock(sessions_mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void run_session(net::Socket sock) {
    served_.fetch_add(1);
    try {
      const auto request_deadline = net::Clock::now() + std::chrono::seconds(10);
      wire::Message first;
      try {
        first = net::read_message(sock, request_deadline, &stopping_);
      } catch (const net::TransportError&) {
        return;
      } catch (const Error&) {
        net::send_message(sock, wire::RejectMsg{wire::RejectReason::bad_request});
        return;
      }
      const auto* req = std::get_if<wire::RequestMsg>(&first);
      if (!req) {
        net::send_message(sock, wire::RejectMsg{wire::RejectReason::bad_request});
        return;
      }
      const auto reply = gate_.handle_request(*req);
      net::send_message(sock, reply);
      if (!std::holds_alternative<wire::ChallengeMsg>(reply)) return;

      const auto solve_deadline = net::Clock::now() + std::chrono::milliseconds(gate_.config().expiry_ms) +
                                  std::chrono::seconds(1);
      wire::Message second;
      try {
        second = net::read_message(sock, solve_deadline, &stopping_);
      } catch (const net::TransportError&) {
        return;  // client abandoned; the seed expires on its own
      } catch (const Error&) {
        net::send_message(sock, wire::RejectMsg{wire::RejectReason::bad_request});
        return;
      }
      const auto* sol = std::get_if<wire::SolutionMsg>(&second);
      if (!sol) {
        net::send_message(sock, wire::RejectMsg{wire::RejectReason::bad_request});
        return;
      }
      net::send_message(sock, gate_.handle_solution(*sol));
    } catch (const std::exception& e) {
      spdlog::debug("session ended: {}", e.what());
    }
  }

  Gate& gate_;
  net::Endpoint endpoint_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex sessions_mutex_;
  std::list<Session> sessions_;
  std::atomic<std::uint64_t> served_{0};
};

// ---------------------------------------------------------------------------
// Client

enum class SessionStatus { admitted, rejected, abandoned, transport };

inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::admitted: return "admitted";
    case SessionStatus::rejected: return "rejected";
    case SessionStatus::abandoned: return "abandoned";
    case SessionStatus::transport: return "transport";
  }
  return "?";
}

struct ClientOutcome {
  SessionStatus status = SessionStatus::transport;
  bool admitted = false;
  double latency_ms = 0.0;
  double solve_ms = 0.0;
  std::uint64_t attempts = 0;
  unsigned difficulty = 0;
  std::optional<Seed> seed;
  std::optional<wire::RejectReason> reject_reason;
  std::uint32_t queue_position = 0;
  std::string detail;
};

struct ClientOptions {
  std::chrono::milliseconds solve_timeout{30'000};
  std::chrono::milliseconds io_timeout{10'000};
};

/// One full admission round trip. Never throws for network or protocol
/// failures; those are reported in the outcome.
inline ClientOutcome client_session(const wire::RequestMsg& request, const net::Endpoint& server,
                                    const ClientOptions& opts = {}) {
  using namespace std::chrono;
  ClientOutcome out;
  const auto t0 = steady_clock::now();
  const auto elapsed_ms = [&] { return duration<double, std::milli>(steady_clock::now() - t0).count(); };
  try {
    auto sock = net::connect_tcp(server);
    net::send_message(sock, request);
    const auto reply = net::read_message(sock, net::Clock::now() + opts.io_timeout);
    if (const auto* rej = std::get_if<wire::RejectMsg>(&reply)) {
      out.status = SessionStatus::rejected;
      out.reject_reason = rej->reason;
      out.latency_ms = elapsed_ms();
      return out;
    }
    const auto* cm = std::get_if<wire::ChallengeMsg>(&reply);
    if (!cm) throw Error(ErrorKind::protocol, "expected CHALLENGE");
    const auto challenge = wire::to_challenge(*cm, request.user_id);
    out.difficulty = challenge.difficulty;
    out.seed = challenge.seed;

    const auto s0 = steady_clock::now();
    const auto solution = solve_for(challenge, opts.solve_timeout);
    out.solve_ms = duration<double, std::milli>(steady_clock::now() - s0).count();
    if (!solution) {
      out.status = SessionStatus::abandoned;
      out.latency_ms = elapsed_ms();
      out.detail = "solve timeout";
      return out;
    }
    out.attempts = solution->attempts;
    net::send_message(sock, wire::SolutionMsg{solution->seed, solution->nonce});
    const auto verdict = net::read_message(sock, net::Clock::now() + opts.io_timeout);
    out.latency_ms = elapsed_ms();
    if (const auto* acc = std::get_if<wire::AcceptMsg>(&verdict)) {
      out.status = SessionStatus::admitted;
      out.admitted = true;
      out.queue_position = acc->queue_position;
    } else if (const auto* rej = std::get_if<wire::RejectMsg>(&verdict)) {
      out.status = SessionStatus::rejected;
      out.reject_reason = rej->reason;
    } else {
      throw Error(ErrorKind::protocol, "expected ACCEPT or REJECT");
    }
  } catch (const std::exception& e) {
    out.status = SessionStatus::transport;
    out.admitted = false;
    out.latency_ms = elapsed_ms();
    out.detail = e.what();
  }
  return out;
}

}  // namespace capow

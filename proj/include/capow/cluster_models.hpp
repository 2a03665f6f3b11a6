#pragma once

// Context-aware base models and score fusion.
//
// Three scorers each produce a component score in [0, 10]:
//   DAbR  - IP attributes vs. the centroid of known-malicious IPs (alpha)
//   TAM   - arrival time vs. the user's historical activity intervals (beta)
//   Flow  - flow features vs. legitimate and malicious centroids (gamma)
// The fused context score is the largest weighted component.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "capow/error.hpp"
#include "capow/flow_ingest.hpp"

namespace capow {

inline constexpr double kMaxScore = 10.0;
inline constexpr double kDefaultTamDeltaMaxMin = 720.0;

enum class ModelKind { dabr = 0, tam = 1, flow = 2 };

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::dabr: return "DAbR";
    case ModelKind::tam: return "TAM";
    case ModelKind::flow: return "Flow";
  }
  return "?";
}

inline double euclid_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw Error(ErrorKind::dimension, "distance between " + std::to_string(p.size()) + "-dim and " +
                                          std::to_string(q.size()) + "-dim vectors");
  const double sq = std::transform_reduce(p.begin(), p.end(), q.begin(), 0.0, std::plus<>(), [](double a, double b) {
    const double d = b - a;
    return d * d;
  });
  return std::sqrt(sq);
}

/// Normalizes a raw deviation into [0, scale]: (min(delta, delta_max) / delta_max) * scale.
inline double context_score(double delta, double delta_max, int scale = 10) {
  if (!(delta_max > 0.0)) throw Error(ErrorKind::config, "delta_max must be positive");
  if (scale <= 0) throw Error(ErrorKind::config, "score scale must be positive");
  const double d = std::clamp(delta, 0.0, delta_max);
  return (d / delta_max) * scale;
}

namespace detail {

inline std::vector<double> mean_of(std::span<const std::vector<double>> points, const char* what) {
  if (points.empty()) throw Error(ErrorKind::empty_training_set, std::string("no ") + what + " training points");
  const auto dim = points.front().size();
  if (dim == 0) throw Error(ErrorKind::dimension, std::string(what) + " points have zero dimensions");
  std::vector<double> sum(dim, 0.0);
  for (const auto& p : points) {
    if (p.size() != dim) throw Error(ErrorKind::dimension, std::string("inconsistent ") + what + " point dimensions");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += p[i];
  }
  for (auto& v : sum) v /= static_cast<double>(points.size());
  return sum;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DAbR

struct CentroidModel {
  std::vector<double> centroid;
  double delta_max = 1.0;
  int scale_I = 10;

  bool operator==(const CentroidModel&) const = default;
};

/// Default DAbR delta_max: the diagonal of the n-dimensional unit hypercube.
inline double unit_diagonal(std::size_t n) { return std::sqrt(static_cast<double>(n)); }

inline CentroidModel train_dabr(std::span<const std::vector<double>> malicious_ip_attributes, double delta_max) {
  if (!(delta_max > 0.0)) throw Error(ErrorKind::config, "DAbR delta_max must be positive");
  return CentroidModel{detail::mean_of(malicious_ip_attributes, "malicious IP"), delta_max, 10};
}

/// Closeness to the malicious centroid: scale * max(0, 1 - d / delta_max).
inline double score_dabr(const CentroidModel& model, std::span<const double> ip_attributes) {
  if (!(model.delta_max > 0.0)) throw Error(ErrorKind::config, "DAbR delta_max must be positive");
  const double d = euclid_distance(ip_attributes, model.centroid);
  return model.scale_I * std::max(0.0, 1.0 - d / model.delta_max);
}

// ---------------------------------------------------------------------------
// TAM

struct ActivityInterval {
  double start_min = 0.0;
  double end_min = 0.0;

  bool contains(double t) const noexcept { return t >= start_min && t <= end_min; }
  bool operator==(const ActivityInterval&) const = default;
};

struct TemporalModel {
  // Sorted, non-overlapping closed intervals per user.
  std::map<std::string, std::vector<ActivityInterval>> intervals;
  double delta_max_min = kDefaultTamDeltaMaxMin;
  int aging_window_days = 7;
  double gap_merge_min = 5.0;

  bool operator==(const TemporalModel&) const = default;
};

/// Builds per-user activity intervals from arrivals on the most recent
/// `aging_window_days` log days; older days are aged out. Consecutive arrivals
/// at most `gap_merge_min` apart share one interval.
inline TemporalModel train_tam(std::span<const ActivityRecord> records, double gap_merge_min, int aging_window_days,
                               double delta_max_min = kDefaultTamDeltaMaxMin) {
  if (records.empty()) throw Error(ErrorKind::empty_training_set, "TAM needs at least one record");
  if (aging_window_days <= 0) throw Error(ErrorKind::config, "aging window must be at least one day");
  if (gap_merge_min < 0.0) throw Error(ErrorKind::config, "gap_merge_min must be non-negative");
  if (!(delta_max_min > 0.0)) throw Error(ErrorKind::config, "TAM delta_max must be positive");

  int newest = records.front().day_index;
  for (const auto& r : records) newest = std::max(newest, r.day_index);
  const int oldest_kept = newest - aging_window_days + 1;

  std::map<std::string, std::vector<double>> arrivals;
  for (const auto& r : records) {
    if (r.day_index < oldest_kept) continue;
    arrivals[r.user_id].push_back(r.timestamp_min);
  }

  TemporalModel model;
  model.delta_max_min = delta_max_min;
  model.aging_window_days = aging_window_days;
  model.gap_merge_min = gap_merge_min;
  for (auto& [user, times] : arrivals) {
    std::sort(times.begin(), times.end());
    auto& list = model.intervals[user];
    for (double t : times) {
      if (!list.empty() && t - list.back().end_min <= gap_merge_min)
        list.back().end_min = t;
      else
        list.push_back({t, t});
    }
  }
  return model;
}

/// Local temporal deviation of an arrival against a sorted interval list.
/// Zero inside an interval, the bracketing gap between two intervals, and
/// twice the distance to the nearest edge before the first or after the last.
inline double tam_local_deviation(std::span<const ActivityInterval> intervals, double arrival_min) {
  const auto next = std::lower_bound(intervals.begin(), intervals.end(), arrival_min,
                                     [](const ActivityInterval& iv, double t) { return iv.end_min < t; });
  if (next != intervals.end() && next->contains(arrival_min)) return 0.0;
  if (next == intervals.begin()) return 2.0 * (next->start_min - arrival_min);
  const auto prev = std::prev(next);
  if (next == intervals.end()) return 2.0 * (arrival_min - prev->end_min);
  return next->start_min - prev->end_min;
}

inline double score_tam(const TemporalModel& model, const std::string& user_id, double arrival_min) {
  const auto it = model.intervals.find(user_id);
  if (it == model.intervals.end() || it->second.empty()) return kMaxScore;
  const double t = std::clamp(arrival_min, 0.0, std::nextafter(kMinutesPerDay, 0.0));
  return context_score(tam_local_deviation(it->second, t), model.delta_max_min, 10);
}

// ---------------------------------------------------------------------------
// Flow

struct FlowModel {
  std::vector<double> legit_centroid;
  std::vector<double> malicious_centroid;

  std::size_t dimension() const noexcept { return legit_centroid.size(); }
  bool operator==(const FlowModel&) const = default;
};

inline FlowModel train_flow(std::span<const std::vector<double>> legit, std::span<const std::vector<double>> malicious) {
  FlowModel model{detail::mean_of(legit, "legitimate flow"), detail::mean_of(malicious, "malicious flow")};
  if (model.legit_centroid.size() != model.malicious_centroid.size())
    throw Error(ErrorKind::dimension, "legitimate and malicious flow vectors differ in dimension");
  if (euclid_distance(model.legit_centroid, model.malicious_centroid) == 0.0)
    throw Error(ErrorKind::degenerate_model, "legitimate and malicious flow centroids coincide");
  return model;
}

/// 10 * d_l / (d_l + d_m): 0 on the legitimate centroid, 10 on the malicious one.
inline double score_flow(const FlowModel& model, std::span<const double> flow_vector) {
  const double d_l = euclid_distance(flow_vector, model.legit_centroid);
  const double d_m = euclid_distance(flow_vector, model.malicious_centroid);
  const double total = d_l + d_m;
  if (total <= 0.0) throw Error(ErrorKind::degenerate_model, "flow centroids coincide");
  return std::clamp(kMaxScore * (d_l / total), 0.0, kMaxScore);
}

// ---------------------------------------------------------------------------
// Fusion

struct ModelWeights {
  double dabr = 1.0;
  double tam = 1.0;
  double flow = 1.0;

  double operator[](ModelKind k) const noexcept {
    return k == ModelKind::dabr ? dabr : k == ModelKind::tam ? tam : flow;
  }
  bool operator==(const ModelWeights&) const = default;
};

struct ContextSet {
  bool dabr = true;
  bool tam = true;
  bool flow = true;

  bool operator[](ModelKind k) const noexcept { return k == ModelKind::dabr ? dabr : k == ModelKind::tam ? tam : flow; }
  bool any() const noexcept { return dabr || tam || flow; }
  bool operator==(const ContextSet&) const = default;
};

struct ContextScore {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  ModelWeights weights;
  double phi = 0.0;
  ModelKind deciding_model = ModelKind::dabr;
};

/// phi = clamp(max(w1*alpha, w2*beta, w3*gamma), 0, 10) over the enabled
/// contexts; ties resolve to the earliest of DAbR, TAM, Flow.
inline ContextScore fuse_scores(double alpha, double beta, double gamma, const ModelWeights& weights,
                                const ContextSet& enabled = {}) {
  if (!enabled.any()) throw Error(ErrorKind::config, "no context enabled");
  if (weights.dabr < 0.0 || weights.tam < 0.0 || weights.flow < 0.0)
    throw Error(ErrorKind::config, "model weights must be non-negative");
  ContextScore out;
  out.alpha = std::clamp(alpha, 0.0, kMaxScore);
  out.beta = std::clamp(beta, 0.0, kMaxScore);
  out.gamma = std::clamp(gamma, 0.0, kMaxScore);
  out.weights = weights;
  const std::array<double, 3> weighted = {weights.dabr * out.alpha, weights.tam * out.beta, weights.flow * out.gamma};
  bool found = false;
  double best = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto kind = static_cast<ModelKind>(i);
    if (!enabled[kind]) continue;
    if (!found || weighted[static_cast<std::size_t>(i)] > best) {
      best = weighted[static_cast<std::size_t>(i)];
      out.deciding_model = kind;
      found = true;
    }
  }
  out.phi = std::clamp(best, 0.0, kMaxScore);
  return out;
}

}  // namespace capow

#pragma once

// Trains a full ModelBundle from activity logs.

#include <spdlog/spdlog.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/flow_ingest.hpp"
#include "capow/model_io.hpp"

namespace capow {

struct DayWindow {
  int first = 0;
  int last = 0;

  bool contains(int day) const noexcept { return day >= first && day <= last; }
};

/// Parses "a-b" or a single day "a".
inline DayWindow parse_day_window(const std::string& text) {
  const auto dash = text.find('-', 1);
  const auto a = detail::parse_double(text.substr(0, dash));
  const auto b = dash == std::string::npos ? a : detail::parse_double(text.substr(dash + 1));
  if (!a || !b || *a != std::floor(*a) || *b != std::floor(*b) || *a > *b)
    throw Error(ErrorKind::config, "day window '" + text + "' is not 'first-last'");
  return {static_cast<int>(*a), static_cast<int>(*b)};
}

struct TrainOptions {
  // Logs without a `day` column take their 1-based position in this list as day index.
  std::vector<std::string> logs;
  std::optional<DayWindow> days;
  std::optional<std::string> ip_feed;
  double gap_merge_min = 5.0;
  int aging_window_days = 7;
  double tam_delta_max_min = kDefaultTamDeltaMaxMin;
  std::optional<double> dabr_delta_max;
};

struct TrainResult {
  ModelBundle bundle;
  std::size_t records_used = 0;
  std::size_t rows_skipped = 0;
  // Set when a context that had its inputs available failed to train.
  bool partial = false;
};

inline TrainResult train_models(const std::vector<ActivityRecord>& window_records,
                                const std::vector<std::string>& flow_columns, const TrainOptions& opts,
                                const std::optional<IpEmbedder>& feed = std::nullopt) {
  if (window_records.empty()) throw Error(ErrorKind::empty_training_set, "no activity records inside the day window");
  TrainResult result;
  auto& b = result.bundle;
  b.flow_columns = flow_columns;
  b.scaler = fit_scaler(window_records);
  result.records_used = window_records.size();

  auto warn = [&](std::string msg, bool partial) {
    spdlog::warn("{}", msg);
    b.warnings.push_back(std::move(msg));
    result.partial = result.partial || partial;
  };

  if (feed) {
    b.embedder = *feed;
    std::vector<std::vector<double>> points;
    for (const auto& ip : feed->listed_ips()) points.push_back(feed->embed(ip));
    try {
      const double dmax = opts.dabr_delta_max.value_or(unit_diagonal(feed->dimension()));
      b.dabr = train_dabr(points, dmax);
    } catch (const Error& e) {
      warn(std::string("DAbR disabled: ") + e.what(), true);
    }
  } else {
    warn("DAbR disabled: no IP-attribute feed supplied", false);
  }

  std::vector<ActivityRecord> normal;
  for (const auto& r : window_records)
    if (r.label != Label::malicious) normal.push_back(r);
  try {
    b.tam = train_tam(normal, opts.gap_merge_min, opts.aging_window_days, opts.tam_delta_max_min);
  } catch (const Error& e) {
    warn(std::string("TAM disabled: ") + e.what(), true);
  }

  std::vector<std::vector<double>> legit, malicious;
  for (const auto& r : window_records) {
    if (r.label == Label::legitimate) legit.push_back(b.scaler.transform(r.flow_features));
    else if (r.label == Label::malicious) malicious.push_back(b.scaler.transform(r.flow_features));
  }
  try {
    b.flow = train_flow(legit, malicious);
  } catch (const Error& e) {
    warn(std::string("Flow disabled: ") + e.what(), true);
  }

  if (!b.dabr && !b.tam && !b.flow) throw Error(ErrorKind::empty_training_set, "no context model could be trained");
  return result;
}

inline TrainResult train_from_logs(const TrainOptions& opts) {
  if (opts.logs.empty()) throw Error(ErrorKind::config, "no training logs given");
  std::vector<ActivityRecord> records;
  std::vector<std::string> columns;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < opts.logs.size(); ++i) {
    auto log = parse_activity_log(opts.logs[i], {}, static_cast<int>(i + 1));
    if (i == 0) columns = log.flow_columns;
    else if (log.flow_columns != columns)
      throw Error(ErrorKind::schema, "log '" + opts.logs[i] + "' declares different flow columns");
    skipped += log.skipped;
    for (auto& r : log.records)
      if (!opts.days || opts.days->contains(r.day_index)) records.push_back(std::move(r));
  }
  std::optional<IpEmbedder> feed;
  if (opts.ip_feed) feed = IpEmbedder::from_feed(*opts.ip_feed);
  auto result = train_models(records, columns, opts, feed);
  result.rows_skipped = skipped;
  return result;
}

}  // namespace capow

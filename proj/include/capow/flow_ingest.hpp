#pragma once

// Activity-log parsing and request-context extraction.
//
// An activity log is a CSV file with a header row. Required columns are
// `user_id`, `timestamp` (minutes since midnight) and `label`; an optional
// `day` column carries the log-day index. Every other column is a numeric
// flow feature, in header order.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capow/error.hpp"

namespace capow {

inline constexpr double kMinutesPerDay = 1440.0;

enum class Label { legitimate, malicious, unlabeled };

inline const char* to_string(Label label) {
  switch (label) {
    case Label::legitimate: return "legitimate";
    case Label::malicious: return "malicious";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

struct ActivityRecord {
  std::string user_id;
  double timestamp_min = 0.0;
  int day_index = 0;
  std::vector<double> flow_features;
  Label label = Label::unlabeled;

  bool operator==(const ActivityRecord&) const = default;
};

struct RequestContext {
  std::string user_id;
  double arrival_min = 0.0;
  std::vector<double> ip_attributes;
  std::vector<double> flow_vector;
  ActivityRecord raw;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' ||
                        s.front() == '\n' || s.front() == '\xEF' || s.front() == '\xBB' ||
                        s.front() == '\xBF'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    const auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    out.emplace_back(trim(field));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace detail

/// Benign/legitimate/normal map to legitimate, empty/unlabeled/"-" to
/// unlabeled, and any other class name (e.g. "DDoS", "PortScan") to malicious.
inline Label parse_label(std::string_view text) {
  const auto s = detail::lower(detail::trim(text));
  if (s == "legitimate" || s == "benign" || s == "normal") return Label::legitimate;
  if (s.empty() || s == "unlabeled" || s == "-") return Label::unlabeled;
  return Label::malicious;
}

struct ParsedLog {
  std::vector<std::string> flow_columns;
  std::vector<ActivityRecord> records;
  std::size_t skipped = 0;
};

/// Parses an activity log from a stream. `schema` is the expected header; an
/// empty schema accepts whatever header the log declares. Rows with the wrong
/// field count, a non-numeric value or an out-of-day timestamp are skipped and
/// counted; more than half of the data rows being bad is a corrupt log.
inline ParsedLog parse_activity_log(std::istream& in, std::span<const std::string> schema = {},
                                    int default_day = 0) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::schema, "activity log has no header row");
  const auto header = detail::split_csv(line);

  if (!schema.empty()) {
    std::vector<std::string> expected;
    for (const auto& col : schema) expected.emplace_back(detail::trim(col));
    if (expected != header) throw Error(ErrorKind::schema, "header does not match declared schema: " + line);
  }

  std::optional<std::size_t> user_col, time_col, label_col, day_col;
  std::vector<std::size_t> flow_cols;
  ParsedLog log;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& name = header[i];
    if (name == "user_id") user_col = i;
    else if (name == "timestamp") time_col = i;
    else if (name == "label") label_col = i;
    else if (name == "day") day_col = i;
    else {
      flow_cols.push_back(i);
      log.flow_columns.push_back(name);
    }
  }
  if (!user_col) throw Error(ErrorKind::schema, "missing required column 'user_id'");
  if (!time_col) throw Error(ErrorKind::schema, "missing required column 'timestamp'");
  if (!label_col) throw Error(ErrorKind::schema, "missing required column 'label'");
  if (flow_cols.empty()) throw Error(ErrorKind::schema, "no numeric flow column declared");

  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++rows;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size() || fields[*user_col].empty()) {
      ++log.skipped;
      continue;
    }
    ActivityRecord rec;
    rec.user_id = fields[*user_col];
    const auto ts = detail::parse_double(fields[*time_col]);
    if (!ts || *ts < 0.0 || *ts >= kMinutesPerDay) {
      ++log.skipped;
      continue;
    }
    rec.timestamp_min = *ts;
    rec.day_index = default_day;
    if (day_col) {
      const auto day = detail::parse_double(fields[*day_col]);
      if (!day || *day != std::floor(*day)) {
        ++log.skipped;
        continue;
      }
      rec.day_index = static_cast<int>(*day);
    }
    rec.label = parse_label(fields[*label_col]);
    bool ok = true;
    rec.flow_features.reserve(flow_cols.size());
    for (auto col : flow_cols) {
      const auto v = detail::parse_double(fields[col]);
      if (!v) {
        ok = false;
        break;
      }
      rec.flow_features.push_back(*v);
    }
    if (!ok) {
      ++log.skipped;
      continue;
    }
    log.records.push_back(std::move(rec));
  }
  if (rows > 0 && log.skipped * 2 > rows)
    throw Error(ErrorKind::corrupt_log, std::to_string(log.skipped) + " of " + std::to_string(rows) +
                                            " rows are malformed");
  return log;
}

inline ParsedLog parse_activity_log(const std::string& path, std::span<const std::string> schema = {},
                                    int default_day = 0) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open activity log '" + path + "'");
  return parse_activity_log(in, schema, default_day);
}

/// Per-dimension min/max bounds for flow features.
class FeatureScaler {
 public:
  FeatureScaler() = default;
  FeatureScaler(std::vector<double> min, std::vector<double> max) : min_(std::move(min)), max_(std::move(max)) {
    if (min_.size() != max_.size()) throw Error(ErrorKind::dimension, "scaler min/max length differ");
    for (std::size_t i = 0; i < min_.size(); ++i) {
      if (!std::isfinite(min_[i]) || !std::isfinite(max_[i]) || min_[i] > max_[i])
        throw Error(ErrorKind::config, "scaler bounds invalid at dimension " + std::to_string(i));
    }
  }

  std::size_t dimension() const noexcept { return min_.size(); }
  const std::vector<double>& min() const noexcept { return min_; }
  const std::vector<double>& max() const noexcept { return max_; }

  /// Maps into [0,1], clamping out-of-range values. Constant dimensions map to 0.5.
  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != min_.size())
      throw Error(ErrorKind::schema, "feature vector has " + std::to_string(x.size()) + " dimensions, scaler expects " +
                                         std::to_string(min_.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double span = max_[i] - min_[i];
      if (span <= 0.0) {
        out[i] = 0.5;
        continue;
      }
      out[i] = std::clamp((x[i] - min_[i]) / span, 0.0, 1.0);
    }
    return out;
  }

  bool operator==(const FeatureScaler&) const = default;

 private:
  std::vector<double> min_;
  std::vector<double> max_;
};

inline FeatureScaler fit_scaler(std::span<const ActivityRecord> records) {
  if (records.empty()) throw Error(ErrorKind::empty_training_set, "cannot fit scaler on zero records");
  const auto dim = records.front().flow_features.size();
  std::vector<double> lo(records.front().flow_features), hi(records.front().flow_features);
  for (const auto& rec : records) {
    if (rec.flow_features.size() != dim) throw Error(ErrorKind::dimension, "inconsistent flow feature count");
    for (std::size_t i = 0; i < dim; ++i) {
      lo[i] = std::min(lo[i], rec.flow_features[i]);
      hi[i] = std::max(hi[i], rec.flow_features[i]);
    }
  }
  return FeatureScaler(std::move(lo), std::move(hi));
}

/// Parses a dotted-quad IPv4 address.
inline std::optional<std::array<std::uint8_t, 4>> parse_ipv4(std::string_view s) {
  std::array<std::uint8_t, 4> octets{};
  for (int i = 0; i < 4; ++i) {
    unsigned value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr == s.data() || value > 255 || ptr - s.data() > 3) return std::nullopt;
    octets[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value);
    s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
    if (i < 3) {
      if (s.empty() || s.front() != '.') return std::nullopt;
      s.remove_prefix(1);
    }
  }
  if (!s.empty()) return std::nullopt;
  return octets;
}

/// Maps a user id to its IP-attribute vector: four octets scaled by 1/255,
/// optionally followed by normalized attribute columns from an IP feed.
/// Non-IPv4 tokens use the bytes of their 32-bit FNV-1a hash as octets; IPs
/// absent from the feed get zero attributes.
class IpEmbedder {
 public:
  IpEmbedder() = default;

  static IpEmbedder octets() { return {}; }

  /// Reads an IP feed: header `ip[,attr...]`, one listed (malicious) IP per row.
  static IpEmbedder from_feed(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::schema, "IP feed has no header row");
    const auto header = detail::split_csv(line);
    if (header.empty() || header.front() != "ip") throw Error(ErrorKind::schema, "IP feed must start with an 'ip' column");
    IpEmbedder emb;
    emb.attribute_columns_.assign(header.begin() + 1, header.end());
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::size_t bad = 0, total = 0;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      ++total;
      auto fields = detail::split_csv(line);
      if (fields.size() != header.size()) {
        ++bad;
        continue;
      }
      std::vector<double> attrs;
      bool ok = true;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        const auto v = detail::parse_double(fields[i]);
        if (!v) {
          ok = false;
          break;
        }
        attrs.push_back(*v);
      }
      if (!ok) {
        ++bad;
        continue;
      }
      rows.emplace_back(std::move(fields[0]), std::move(attrs));
    }
    if (total > 0 && bad * 2 > total) throw Error(ErrorKind::corrupt_log, "IP feed is mostly malformed");
    const auto k = emb.attribute_columns_.size();
    emb.attr_min_.assign(k, 0.0);
    emb.attr_max_.assign(k, 0.0);
    for (std::size_t j = 0; j < k && !rows.empty(); ++j) {
      emb.attr_min_[j] = emb.attr_max_[j] = rows.front().second[j];
      for (const auto& r : rows) {
        emb.attr_min_[j] = std::min(emb.attr_min_[j], r.second[j]);
        emb.attr_max_[j] = std::max(emb.attr_max_[j], r.second[j]);
      }
    }
    for (auto& [ip, attrs] : rows) {
      emb.listed_.push_back(ip);
      emb.table_[ip] = std::move(attrs);
    }
    return emb;
  }

  static IpEmbedder from_feed(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open IP feed '" + path + "'");
    return from_feed(in);
  }

  /// Rebuilds an embedder from persisted state.
  static IpEmbedder from_parts(std::vector<std::string> columns, std::vector<double> attr_min,
                               std::vector<double> attr_max,
                               std::unordered_map<std::string, std::vector<double>> table) {
    IpEmbedder emb;
    emb.attribute_columns_ = std::move(columns);
    emb.attr_min_ = std::move(attr_min);
    emb.attr_max_ = std::move(attr_max);
    emb.table_ = std::move(table);
    for (const auto& [ip, _] : emb.table_) emb.listed_.push_back(ip);
    std::sort(emb.listed_.begin(), emb.listed_.end());
    return emb;
  }

  std::size_t dimension() const noexcept { return 4 + attribute_columns_.size(); }
  const std::vector<std::string>& attribute_columns() const noexcept { return attribute_columns_; }
  const std::vector<double>& attribute_min() const noexcept { return attr_min_; }
  const std::vector<double>& attribute_max() const noexcept { return attr_max_; }
  const std::unordered_map<std::string, std::vector<double>>& table() const noexcept { return table_; }

  /// IPs listed in the feed, in feed order.
  const std::vector<std::string>& listed_ips() const noexcept { return listed_; }

  std::vector<double> embed(std::string_view user_id) const {
    std::vector<double> out;
    out.reserve(dimension());
    std::array<std::uint8_t, 4> oct{};
    if (auto ip = parse_ipv4(user_id)) {
      oct = *ip;
    } else {
      std::uint32_t h = 2166136261u;
      for (unsigned char c : user_id) {
        h ^= c;
        h *= 16777619u;
      }
      oct = {static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
             static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h)};
    }
    for (auto o : oct) out.push_back(o / 255.0);
    const auto it = table_.find(std::string(user_id));
    for (std::size_t j = 0; j < attribute_columns_.size(); ++j) {
      if (it == table_.end()) {
        out.push_back(0.0);
        continue;
      }
      const double span = attr_max_[j] - attr_min_[j];
      out.push_back(span > 0.0 ? std::clamp((it->second[j] - attr_min_[j]) / span, 0.0, 1.0) : 0.5);
    }
    return out;
  }

 private:
  std::vector<std::string> attribute_columns_;
  std::vector<double> attr_min_;
  std::vector<double> attr_max_;
  std::unordered_map<std::string, std::vector<double>> table_;
  std::vector<std::string> listed_;
};

inline RequestContext extract_context(const ActivityRecord& record, const FeatureScaler& scaler,
                                      const IpEmbedder& ip_embedder = {}) {
  RequestContext ctx;
  ctx.user_id = record.user_id;
  ctx.arrival_min = record.timestamp_min;
  ctx.flow_vector = scaler.transform(record.flow_features);
  ctx.ip_attributes = ip_embedder.embed(record.user_id);
  ctx.raw = record;
  return ctx;
}

}  // namespace capow

#pragma once

// Versioned JSON persistence for trained models. Every document carries a
// `format` tag and a `schema_version`; loading checks both and re-validates
// the model invariants.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "capow/cluster_models.hpp"
#include "capow/error.hpp"
#include "capow/flow_ingest.hpp"
#include "json.hpp"

namespace capow {

inline constexpr int kModelSchemaVersion = 1;

using json = nlohmann::json;

namespace detail {

inline void check_header(const json& j, const char* format) {
  if (!j.is_object() || !j.contains("format") || j.at("format") != format)
    throw Error(ErrorKind::schema, std::string("expected a '") + format + "' document");
  if (!j.contains("schema_version") || j.at("schema_version") != kModelSchemaVersion)
    throw Error(ErrorKind::schema, std::string(format) + ": unsupported schema_version");
}

inline json header(const char* format) { return json{{"format", format}, {"schema_version", kModelSchemaVersion}}; }

inline std::vector<double> finite_vector(const json& j, const char* what) {
  auto v = j.get<std::vector<double>>();
  for (double x : v)
    if (!std::isfinite(x)) throw Error(ErrorKind::schema, std::string(what) + " holds a non-finite value");
  return v;
}

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string(what) + ": " + e.what());
  }
}

}  // namespace detail

inline json to_json(const FeatureScaler& s) {
  auto j = detail::header("capow.scaler");
  j["min"] = s.min();
  j["max"] = s.max();
  return j;
}

inline FeatureScaler scaler_from_json(const json& j) {
  detail::check_header(j, "capow.scaler");
  return detail::guarded("capow.scaler", [&] {
    return FeatureScaler(detail::finite_vector(j.at("min"), "min"), detail::finite_vector(j.at("max"), "max"));
  });
}

inline json to_json(const IpEmbedder& e) {
  json table = json::object();
  for (const auto& [ip, attrs] : e.table()) table[ip] = attrs;
  return json{{"attribute_columns", e.attribute_columns()},
              {"attribute_min", e.attribute_min()},
              {"attribute_max", e.attribute_max()},
              {"table", table}};
}

inline IpEmbedder embedder_from_json(const json& j) {
  return detail::guarded("ip_embedding", [&] {
    std::unordered_map<std::string, std::vector<double>> table;
    const auto cols = j.at("attribute_columns").get<std::vector<std::string>>();
    for (const auto& [ip, attrs] : j.at("table").items()) {
      auto v = detail::finite_vector(attrs, "ip attributes");
      if (v.size() != cols.size()) throw Error(ErrorKind::schema, "ip attribute row has wrong width");
      table.emplace(ip, std::move(v));
    }
    auto lo = detail::finite_vector(j.at("attribute_min"), "attribute_min");
    auto hi = detail::finite_vector(j.at("attribute_max"), "attribute_max");
    if (lo.size() != cols.size() || hi.size() != cols.size())
      throw Error(ErrorKind::schema, "ip attribute bounds have wrong width");
    return IpEmbedder::from_parts(cols, std::move(lo), std::move(hi), std::move(table));
  });
}

inline json to_json(const CentroidModel& m, const IpEmbedder& embedder) {
  auto j = detail::header("capow.dabr");
  j["centroid"] = m.centroid;
  j["delta_max"] = m.delta_max;
  j["scale"] = m.scale_I;
  j["ip_embedding"] = to_json(embedder);
  return j;
}

struct DabrDocument {
  CentroidModel model;
  IpEmbedder embedder;
};

inline DabrDocument dabr_from_json(const json& j) {
  detail::check_header(j, "capow.dabr");
  return detail::guarded("capow.dabr", [&] {
    DabrDocument doc;
    doc.model.centroid = detail::finite_vector(j.at("centroid"), "centroid");
    doc.model.delta_max = j.at("delta_max").get<double>();
    doc.model.scale_I = j.at("scale").get<int>();
    if (!(doc.model.delta_max > 0.0) || doc.model.scale_I <= 0 || doc.model.centroid.empty())
      throw Error(ErrorKind::schema, "capow.dabr: invalid model parameters");
    doc.embedder = embedder_from_json(j.at("ip_embedding"));
    if (doc.embedder.dimension() != doc.model.centroid.size())
      throw Error(ErrorKind::schema, "capow.dabr: centroid and embedding dimensions differ");
    return doc;
  });
}

inline json to_json(const TemporalModel& m) {
  auto j = detail::header("capow.tam");
  j["delta_max_min"] = m.delta_max_min;
  j["aging_window_days"] = m.aging_window_days;
  j["gap_merge_min"] = m.gap_merge_min;
  json users = json::object();
  for (const auto& [user, list] : m.intervals) {
    json arr = json::array();
    for (const auto& iv : list) arr.push_back({iv.start_min, iv.end_min});
    users[user] = std::move(arr);
  }
  j["intervals"] = std::move(users);
  return j;
}

inline TemporalModel tam_from_json(const json& j) {
  detail::check_header(j, "capow.tam");
  return detail::guarded("capow.tam", [&] {
    TemporalModel m;
    m.delta_max_min = j.at("delta_max_min").get<double>();
    m.aging_window_days = j.at("aging_window_days").get<int>();
    m.gap_merge_min = j.at("gap_merge_min").get<double>();
    if (!(m.delta_max_min > 0.0) || m.aging_window_days <= 0)
      throw Error(ErrorKind::schema, "capow.tam: invalid model parameters");
    for (const auto& [user, arr] : j.at("intervals").items()) {
      std::vector<ActivityInterval> list;
      for (const auto& pair : arr) {
        const auto v = detail::finite_vector(pair, "interval");
        if (v.size() != 2) throw Error(ErrorKind::schema, "interval must be [start, end]");
        const ActivityInterval iv{v[0], v[1]};
        const bool ordered = list.empty() || iv.start_min > list.back().end_min;
        if (iv.start_min > iv.end_min || iv.start_min < 0.0 || iv.end_min >= kMinutesPerDay || !ordered)
          throw Error(ErrorKind::schema, "intervals for '" + user + "' are not sorted and disjoint within a day");
        list.push_back(iv);
      }
      m.intervals.emplace(user, std::move(list));
    }
    return m;
  });
}

inline json to_json(const FlowModel& m) {
  auto j = detail::header("capow.flow");
  j["legit_centroid"] = m.legit_centroid;
  j["malicious_centroid"] = m.malicious_centroid;
  return j;
}

inline FlowModel flow_from_json(const json& j) {
  detail::check_header(j, "capow.flow");
  return detail::guarded("capow.flow", [&] {
    FlowModel m{detail::finite_vector(j.at("legit_centroid"), "legit_centroid"),
                detail::finite_vector(j.at("malicious_centroid"), "malicious_centroid")};
    if (m.legit_centroid.empty() || m.legit_centroid.size() != m.malicious_centroid.size())
      throw Error(ErrorKind::schema, "capow.flow: centroid dimensions invalid");
    if (euclid_distance(m.legit_centroid, m.malicious_centroid) == 0.0)
      throw Error(ErrorKind::degenerate_model, "capow.flow: centroids coincide");
    return m;
  });
}

// ---------------------------------------------------------------------------
// Model directory

/// Everything the gate needs to score a request.
struct ModelBundle {
  std::vector<std::string> flow_columns;
  FeatureScaler scaler;
  IpEmbedder embedder;
  std::optional<CentroidModel> dabr;
  std::optional<TemporalModel> tam;
  std::optional<FlowModel> flow;
  std::vector<std::string> warnings;

  ContextSet trained() const noexcept { return {dabr.has_value(), tam.has_value(), flow.has_value()}; }
};

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

inline json manifest_json(const ModelBundle& b) {
  auto j = detail::header("capow.manifest");
  j["flow_columns"] = b.flow_columns;
  j["contexts"] = {{"dabr", b.dabr.has_value()}, {"tam", b.tam.has_value()}, {"flow", b.flow.has_value()}};
  json files = {{"scaler", "scaler.json"}};
  if (b.dabr) files["dabr"] = "dabr.json";
  if (b.tam) files["tam"] = "tam.json";
  if (b.flow) files["flow"] = "flow.json";
  j["files"] = files;
  j["warnings"] = b.warnings;
  return j;
}

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
  write_json_file(dir / "scaler.json", to_json(b.scaler));
  if (b.dabr) write_json_file(dir / "dabr.json", to_json(*b.dabr, b.embedder));
  if (b.tam) write_json_file(dir / "tam.json", to_json(*b.tam));
  if (b.flow) write_json_file(dir / "flow.json", to_json(*b.flow));
  write_json_file(dir / "manifest.json", manifest_json(b));
}

inline ModelBundle load_bundle(const std::filesystem::path& dir) {
  const auto manifest = read_json_file(dir / "manifest.json");
  detail::check_header(manifest, "capow.manifest");
  ModelBundle b;
  detail::guarded("capow.manifest", [&] {
    b.flow_columns = manifest.at("flow_columns").get<std::vector<std::string>>();
    b.warnings = manifest.value("warnings", std::vector<std::string>{});
    const auto& ctx = manifest.at("contexts");
    const auto& files = manifest.at("files");
    b.scaler = scaler_from_json(read_json_file(dir / files.at("scaler").get<std::string>()));
    if (ctx.at("dabr").get<bool>()) {
      auto doc = dabr_from_json(read_json_file(dir / files.at("dabr").get<std::string>()));
      b.dabr = std::move(doc.model);
      b.embedder = std::move(doc.embedder);
    }
    if (ctx.at("tam").get<bool>()) b.tam = tam_from_json(read_json_file(dir / files.at("tam").get<std::string>()));
    if (ctx.at("flow").get<bool>()) b.flow = flow_from_json(read_json_file(dir / files.at("flow").get<std::string>()));
    return 0;
  });
  if (b.scaler.dimension() != b.flow_columns.size())
    throw Error(ErrorKind::schema, "scaler dimension does not match manifest flow columns");
  if (b.flow && b.flow->dimension() != b.flow_columns.size())
    throw Error(ErrorKind::schema, "flow model dimension does not match manifest flow columns");
  return b;
}

}  // namespace capow

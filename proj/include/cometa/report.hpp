#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cometa/error.hpp"
#include "cometa/protocol.hpp"

namespace cometa::report {

inline constexpr int kSchemaVersion = 1;

using protocol::Phase;
using protocol::PhaseMetrics;
using protocol::PhaseReport;

/// Mean of each phase's metrics across seeds; a phase is present only if
/// every seed reported it.
struct MethodSummary {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::array<std::optional<PhaseMetrics>, 4> mean;
};

/// One summary per method, in order of first appearance.
inline std::vector<MethodSummary> summarize(std::span<const PhaseReport> reports) {
  std::vector<MethodSummary> out;
  std::map<std::string, std::vector<const PhaseReport*>> by_method;
  for (const PhaseReport& r : reports) {
    if (!by_method.contains(r.method)) out.push_back({r.method, {}, {}});
    by_method[r.method].push_back(&r);
  }
  for (MethodSummary& s : out) {
    const auto& rs = by_method[s.method];
    for (const PhaseReport* r : rs) s.seeds.push_back(r->seed);
    for (std::size_t p = 0; p < 4; ++p) {
      PhaseMetrics sum;
      bool complete = true;
      for (const PhaseReport* r : rs) {
        if (!r->phases[p]) {
          complete = false;
          break;
        }
        sum.auc += r->phases[p]->auc;
        sum.logloss += r->phases[p]->logloss;
      }
      if (!complete) continue;
      const double n = static_cast<double>(rs.size());
      s.mean[p] = PhaseMetrics{sum.auc / n, sum.logloss / n};
    }
  }
  return out;
}

/// Methods whose mean AUC drops from one phase to the next.
inline std::vector<std::string> monotonicity_warnings(std::span<const MethodSummary> summaries) {
  std::vector<std::string> out;
  for (const MethodSummary& s : summaries) {
    for (std::size_t p = 0; p + 1 < 4; ++p) {
      if (s.mean[p] && s.mean[p + 1] && s.mean[p + 1]->auc < s.mean[p]->auc) {
        out.push_back(s.method + ": mean AUC decreases from " + protocol::phase_name(protocol::kPhases[p]) + " to " +
                      protocol::phase_name(protocol::kPhases[p + 1]));
      }
    }
  }
  return out;
}

namespace detail {

inline std::string fixed4(const std::optional<PhaseMetrics>& m, bool auc) {
  if (!m) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", auc ? m->auc : m->logloss);
  return buf;
}

inline std::string table(const std::vector<std::pair<std::string, std::array<std::optional<PhaseMetrics>, 4>>>& rows) {
  std::string out = "| Method |";
  for (Phase p : protocol::kPhases) {
    const std::string name = protocol::phase_name(p);
    out += " " + name + " AUC | " + name + " Logloss |";
  }
  out += "\n|---|";
  for (std::size_t k = 0; k < 8; ++k) out += "---:|";
  out += "\n";
  for (const auto& [method, phases] : rows) {
    out += "| " + method + " |";
    for (const auto& m : phases) out += " " + fixed4(m, true) + " | " + fixed4(m, false) + " |";
    out += "\n";
  }
  return out;
}

inline nlohmann::json phases_json(const std::array<std::optional<PhaseMetrics>, 4>& phases) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t p = 0; p < 4; ++p) {
    if (phases[p]) j[protocol::phase_name(protocol::kPhases[p])] = {{"auc", phases[p]->auc}, {"logloss", phases[p]->logloss}};
  }
  return j;
}

}  // namespace detail

/// Mean table, then one table per seed, then warnings.
inline std::string to_markdown(std::span<const PhaseReport> reports) {
  if (reports.empty()) throw Error("no reports to emit");
  const std::vector<MethodSummary> summaries = summarize(reports);
  std::vector<std::uint64_t> seeds;
  for (const PhaseReport& r : reports)
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);

  std::string out = "# New-item evaluation\n\n## Mean over " + std::to_string(seeds.size()) + " seed" +
                    (seeds.size() == 1 ? "" : "s") + "\n\n";
  std::vector<std::pair<std::string, std::array<std::optional<PhaseMetrics>, 4>>> rows;
  for (const MethodSummary& s : summaries) rows.emplace_back(s.method, s.mean);
  out += detail::table(rows);
  for (std::uint64_t seed : seeds) {
    out += "\n## Seed " + std::to_string(seed) + "\n\n";
    rows.clear();
    for (const PhaseReport& r : reports)
      if (r.seed == seed) rows.emplace_back(r.method, r.phases);
    out += detail::table(rows);
  }
  const std::vector<std::string> warnings = monotonicity_warnings(summaries);
  if (!warnings.empty()) {
    out += "\n## Warnings\n\n";
    for (const std::string& w : warnings) out += "- " + w + "\n";
  }
  return out;
}

inline nlohmann::json to_json(std::span<const PhaseReport> reports) {
  if (reports.empty()) throw Error("no reports to emit");
  const std::vector<MethodSummary> summaries = summarize(reports);
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  nlohmann::json phases = nlohmann::json::array();
  for (Phase p : protocol::kPhases) phases.push_back(protocol::phase_name(p));
  j["phases"] = phases;
  nlohmann::json methods = nlohmann::json::array();
  for (const MethodSummary& s : summaries) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const PhaseReport& r : reports) {
      if (r.method != s.method) continue;
      per_seed.push_back({{"seed", r.seed}, {"test_hash", r.test_hash}, {"phases", detail::phases_json(r.phases)}});
    }
    methods.push_back({{"method", s.method}, {"mean", detail::phases_json(s.mean)}, {"per_seed", per_seed}});
  }
  j["methods"] = methods;
  j["warnings"] = monotonicity_warnings(summaries);
  return j;
}

/// Inverse of to_json for the per-seed records (wall time is not stored).
inline std::vector<PhaseReport> from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw DataError("unsupported report schema version");
  std::vector<PhaseReport> out;
  for (const auto& m : j.at("methods")) {
    for (const auto& s : m.at("per_seed")) {
      PhaseReport r;
      r.method = m.at("method").get<std::string>();
      r.seed = s.at("seed").get<std::uint64_t>();
      r.test_hash = s.at("test_hash").get<std::uint64_t>();
      for (std::size_t p = 0; p < 4; ++p) {
        const char* name = protocol::phase_name(protocol::kPhases[p]);
        if (s.at("phases").contains(name)) {
          const auto& pm = s.at("phases").at(name);
          r.phases[p] = PhaseMetrics{pm.at("auc").get<double>(), pm.at("logloss").get<double>()};
        }
      }
      out.push_back(std::move(r));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const PhaseReport& a, const PhaseReport& b) { return a.seed < b.seed; });
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

/// Writes report.md and report.json into `dir`.
inline void emit(std::span<const PhaseReport> reports, const std::filesystem::path& dir) {
  write_text(dir / "report.md", to_markdown(reports));
  write_text(dir / "report.json", to_json(reports).dump(2) + "\n");
}

}  // namespace cometa::report

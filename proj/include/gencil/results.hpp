// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gencil/checkpoint.hpp"
#include "gencil/config.hpp"
#include "gencil/harness.hpp"

namespace gencil {

using Json = nlohmann::ordered_json;

inline constexpr int kResultsSchemaVersion = 1;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline Json audit_json(const AuditEntry& a) {
  Json j{{"session", a.session},
         {"encoder_expected", hex64(a.encoder_expected)},
         {"encoder_actual", hex64(a.encoder_actual)},
         {"decoder_checked", a.decoder_checked}};
  if (a.decoder_checked) {
    j["decoder_expected"] = hex64(a.decoder_expected);
    j["decoder_actual"] = hex64(a.decoder_actual);
  }
  j["ok"] = a.ok();
  return j;
}

inline Json method_json(const MethodResult& m, const Curriculum& c) {
  Json acc = Json::array(), correct = Json::array();
  for (const auto& row : m.matrix.acc) {
    Json a = Json::array(), k = Json::array();
    for (std::size_t j = 0; j < row.size(); ++j) {
      a.push_back(round2(100.0 * row[j]));
      k.push_back(std::llround(row[j] * double(c.tasks[j].test_refs.size())));
    }
    acc.push_back(a);
    correct.push_back(k);
  }
  Json seen = Json::array();
  for (double x : m.seen_overall_percent()) seen.push_back(round2(x));
  Json audit = Json::array();
  for (const auto& a : m.audit) audit.push_back(audit_json(a));
  Json ex = Json::array();
  for (const auto& [k, refs] : m.exemplars)
    for (std::size_t r : refs) ex.push_back(Json::array({k, r}));
  return Json{{"method", m.method},
              {"registry", m.registry},
              {"accuracy_matrix", acc},
              {"correct_counts", correct},
              {"seen_overall", seen},
              {"avg", round2(m.avg())},
              {"last", round2(m.last())},
              {"pd", round2(m.pd())},
              {"empty_generation", m.empty_generation},
              {"frozen_checksum_audit", audit},
              {"audit_ok", m.audit_ok()},
              {"exemplars", ex},
              {"steps_per_session", m.steps_per_session},
              {"wall_seconds", m.wall_seconds}};
}

}  // namespace detail

/// The results document. Every key holding wall-clock time starts with "wall".
inline Json results_json(const Config& cfg, const ExperimentResult& e, const CheckpointData& ck,
                         std::uint64_t checkpoint_checksum, const Dataset& train, double wall_total) {
  Json config = Json::object();
  for (const auto& [k, v] : config_items(cfg)) config[k] = v;
  Json curriculum = Json::array();
  for (std::size_t s = 0; s < e.curriculum.tasks.size(); ++s) {
    const auto& t = e.curriculum.tasks[s];
    std::vector<std::string> names;
    for (ClassId k : t.classes) names.push_back(train.class_names[std::size_t(k)]);
    curriculum.push_back(Json{{"session", s},
                              {"classes", t.classes},
                              {"class_names", names},
                              {"shots", t.shots ? Json(*t.shots) : Json(nullptr)},
                              {"train_examples", t.train_refs.size()},
                              {"test_examples", t.test_refs.size()}});
  }
  Json methods = Json::array();
  for (const auto& m : e.methods) methods.push_back(detail::method_json(m, e.curriculum));
  return Json{{"schema_version", kResultsSchemaVersion},
              {"seed", cfg.seed()},
              {"scheme", e.curriculum.scheme.str()},
              {"config", config},
              {"checkpoint_checksum", hex64(checkpoint_checksum)},
              {"pretrain",
               {{"encoder_accuracy", ck.report.encoder_accuracy},
                {"encoder_steps", ck.report.encoder_steps},
                {"caption_loss", ck.report.decoder.caption_loss},
                {"language_loss", ck.report.decoder.language_loss},
                {"language_decode_accuracy", ck.report.decoder.language_decode_accuracy}}},
              {"vocabulary", ck.pipeline.vocab.words()},
              {"curriculum", curriculum},
              {"methods", methods},
              {"wall_seconds_total", wall_total}};
}

/// Removes every "wall*" key recursively, leaving the deterministic part.
inline Json strip_wall_times(Json j) {
  if (j.is_object()) {
    Json out = Json::object();
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!it.key().starts_with("wall")) out[it.key()] = strip_wall_times(it.value());
    return out;
  }
  if (j.is_array()) {
    Json out = Json::array();
    for (auto& x : j) out.push_back(strip_wall_times(x));
    return out;
  }
  return j;
}

inline std::string fixed2(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << x;
  return os.str();
}

/// Whitespace-separated per-session seen-class accuracy, one column per method.
inline std::string sessions_table(const ExperimentResult& e) {
  std::ostringstream os;
  os << "# session seen_classes";
  for (const auto& m : e.methods) os << ' ' << m.method;
  os << '\n';
  std::size_t seen = 0;
  for (std::size_t s = 0; s < e.curriculum.tasks.size(); ++s) {
    seen += e.curriculum.tasks[s].classes.size();
    os << s << ' ' << seen;
    for (const auto& m : e.methods) os << ' ' << fixed2(m.seen_overall_percent()[s]);
    os << '\n';
  }
  return os.str();
}

/// Aligned per-method summary printed after a run.
inline std::string run_summary(const ExperimentResult& e) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "method";
  for (std::size_t s = 0; s < e.curriculum.tasks.size(); ++s) os << std::right << std::setw(8) << ("s" + std::to_string(s));
  os << std::setw(8) << "Avg" << std::setw(8) << "Last" << std::setw(8) << "PD" << std::setw(7) << "empty" << '\n';
  for (const auto& m : e.methods) {
    os << std::left << std::setw(14) << m.method << std::right;
    for (double x : m.seen_overall_percent()) os << std::setw(8) << fixed2(x);
    os << std::setw(8) << fixed2(m.avg()) << std::setw(8) << fixed2(m.last()) << std::setw(8) << fixed2(m.pd())
       << std::setw(7) << m.empty_generation << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Report over several results files

struct ReportCell {
  double avg = 0, last = 0, pd = 0;
};

struct Report {
  std::vector<std::string> schemes;  // column groups, first-seen order
  std::vector<std::string> rows;     // methods, first-seen order
  std::map<std::pair<std::string, std::string>, ReportCell> cells;  // (row, scheme)
};

inline Json parse_results_text(const std::string& text, const std::string& origin) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ReportError(origin + ": malformed JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version"))
    throw ReportError(origin + ": not a results file (no schema_version)");
  if (j["schema_version"] != kResultsSchemaVersion)
    throw ReportError(origin + ": schema version " + j["schema_version"].dump() + " is not supported (expected " +
                      std::to_string(kResultsSchemaVersion) + ")");
  return j;
}

inline Report build_report(const std::vector<std::pair<std::string, Json>>& files) {
  if (files.empty()) throw ReportError("report: no results files");
  Report r;
  for (const auto& [origin, j] : files) {
    try {
      const std::string scheme = j.at("scheme");
      if (std::find(r.schemes.begin(), r.schemes.end(), scheme) == r.schemes.end()) r.schemes.push_back(scheme);
      for (const auto& m : j.at("methods")) {
        std::string row = m.at("method");
        if (r.cells.contains({row, scheme})) row += " (" + origin + ")";
        if (std::find(r.rows.begin(), r.rows.end(), row) == r.rows.end()) r.rows.push_back(row);
        r.cells[{row, scheme}] = {m.at("avg").get<double>(), m.at("last").get<double>(), m.at("pd").get<double>()};
      }
    } catch (const Json::exception& e) {
      throw ReportError(origin + ": missing or mistyped field: " + e.what());
    }
  }
  return r;
}

inline std::string report_text(const Report& r) {
  std::size_t w = 6;
  for (const auto& row : r.rows) w = std::max(w, row.size());
  std::ostringstream os;
  os << std::left << std::setw(int(w)) << "" << std::right;
  for (const auto& s : r.schemes) os << " | " << std::setw(22) << s;
  os << '\n' << std::left << std::setw(int(w)) << "method" << std::right;
  for (std::size_t i = 0; i < r.schemes.size(); ++i)
    os << " | " << std::setw(6) << "Avg" << ' ' << std::setw(7) << "Last" << ' ' << std::setw(7) << "PD";
  os << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(int(w)) << row << std::right;
    for (const auto& s : r.schemes) {
      auto it = r.cells.find({row, s});
      if (it == r.cells.end()) {
        os << " | " << std::setw(6) << "-" << ' ' << std::setw(7) << "-" << ' ' << std::setw(7) << "-";
      } else {
        os << " | " << std::setw(6) << fixed2(it->second.avg) << ' ' << std::setw(7) << fixed2(it->second.last) << ' '
           << std::setw(7) << fixed2(it->second.pd);
      }
    }
    os << '\n';
  }
  return os.str();
}

inline std::string report_csv(const Report& r) {
  auto quote = [](const std::string& s) {
    std::string o = "\"";
    for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
    return o + "\"";
  };
  std::ostringstream os;
  os << "method";
  for (const auto& s : r.schemes) os << ',' << quote(s + " Avg") << ',' << quote(s + " Last") << ',' << quote(s + " PD");
  os << '\n';
  for (const auto& row : r.rows) {
    os << quote(row);
    for (const auto& s : r.schemes) {
      auto it = r.cells.find({row, s});
      if (it == r.cells.end())
        os << ",,,";
      else
        os << ',' << fixed2(it->second.avg) << ',' << fixed2(it->second.last) << ',' << fixed2(it->second.pd);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gencil

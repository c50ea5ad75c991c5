#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "concm/error.hpp"
#include "concm/geometry.hpp"
#include "concm/io.hpp"
#include "concm/matrix.hpp"

namespace concm {

/// argmax_j <z, delta_j>; ties go to the lowest column.
inline std::size_t ncm_classify(std::span<const double> z, const StructureMatrix& s) {
  require(z.size() == s.dim(), ErrorKind::ShapeError, "ncm_classify: dimension mismatch");
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t j = 0; j < s.num_classes(); ++j) {
    double score = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) score += z[i] * s.vectors(i, j);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

struct SessionRecord {
  int t = 0;
  double top1 = 0.0;
  std::optional<double> bacc, nacc, hm, ber, smr, sim_cls, sim_in;
};

struct RunReport {
  std::vector<SessionRecord> sessions;
  std::optional<double> ahm;
  double fa = 0.0;
  double pd = 0.0;
  double base_acc = 0.0;
};

inline double harmonic_mean(double bacc, double nacc) {
  return bacc + nacc > 0.0 ? 2.0 * bacc * nacc / (bacc + nacc) : 0.0;
}

inline double balanced_error_rate(double fnr, double fpr) { return (fnr + fpr) / 2.0; }

/// Rates in percent. "Base" (positive) means a class of the base session.
inline SessionRecord session_metrics(std::span<const int> preds, std::span<const int> labels,
                                     const std::set<int>& base_classes, int t = 0) {
  require(preds.size() == labels.size(), ErrorKind::ShapeError, "session_metrics: length mismatch");
  require(!labels.empty(), ErrorKind::UndefinedMetric, "session_metrics: no samples");
  std::size_t correct = 0, base_n = 0, base_ok = 0, novel_n = 0, novel_ok = 0;
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok = preds[i] == labels[i];
    correct += ok;
    const bool is_base = base_classes.count(labels[i]) > 0;
    const bool pred_base = base_classes.count(preds[i]) > 0;
    if (is_base) {
      ++base_n;
      base_ok += ok;
      pred_base ? ++tp : ++fn;
    } else {
      ++novel_n;
      novel_ok += ok;
      pred_base ? ++fp : ++tn;
    }
  }
  SessionRecord r;
  r.t = t;
  r.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
  if (base_n) r.bacc = 100.0 * static_cast<double>(base_ok) / static_cast<double>(base_n);
  if (novel_n) r.nacc = 100.0 * static_cast<double>(novel_ok) / static_cast<double>(novel_n);
  if (r.bacc && r.nacc) r.hm = harmonic_mean(*r.bacc, *r.nacc);
  if (base_n && novel_n) {
    const double fnr = 100.0 * static_cast<double>(fn) / static_cast<double>(tp + fn);
    const double fpr = 100.0 * static_cast<double>(fp) / static_cast<double>(fp + tn);
    r.ber = balanced_error_rate(fnr, fpr);
  }
  return r;
}

struct RunAggregates {
  std::optional<double> ahm;
  double fa = 0.0;
  double pd = 0.0;
};

/// AHM over incremental-session HMs, FA = last top-1, PD = base - FA.
inline RunAggregates run_metrics(std::span<const double> incremental_hm, double base_acc, double final_acc) {
  RunAggregates a;
  if (!incremental_hm.empty()) {
    double s = 0.0;
    for (double h : incremental_hm) s += h;
    a.ahm = s / static_cast<double>(incremental_hm.size());
  }
  a.fa = final_acc;
  a.pd = base_acc - final_acc;
  return a;
}

inline RunAggregates run_metrics(std::span<const SessionRecord> sessions, double base_acc) {
  require(!sessions.empty(), ErrorKind::UndefinedMetric, "run_metrics: no sessions");
  std::vector<double> hms;
  for (const auto& s : sessions)
    if (s.t >= 1 && s.hm) hms.push_back(*s.hm);
  return run_metrics(hms, base_acc, sessions.back().top1);
}

inline void finalize(RunReport& report) {
  require(!report.sessions.empty(), ErrorKind::UndefinedMetric, "report has no sessions");
  report.base_acc = report.sessions.front().top1;
  const auto agg = run_metrics(report.sessions, report.base_acc);
  report.ahm = agg.ahm;
  report.fa = agg.fa;
  report.pd = agg.pd;
}

struct SimilarityStats {
  double sim_cls = 0.0;  // mean cosine between distinct class-mean directions
  double sim_in = 0.0;   // mean cosine of samples to their class-mean direction
  std::size_t skipped_singletons = 0;
};

/// Rows of `z` are unit (or any nonzero) vectors. Singleton classes are
/// skipped and counted.
inline SimilarityStats similarity_stats(const Matrix& z, std::span<const int> labels) {
  require(z.rows() == labels.size(), ErrorKind::ShapeError, "similarity_stats: label count");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  SimilarityStats st;
  std::vector<Vector> dirs;
  double in_sum = 0.0;
  std::size_t in_n = 0;
  for (auto& [l, idx] : groups) {
    if (idx.size() < 2) {
      ++st.skipped_singletons;
      continue;
    }
    Vector m(z.cols(), 0.0);
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < z.cols(); ++j) m[j] += z(i, j);
    if (norm2(m) == 0.0) {
      ++st.skipped_singletons;
      continue;
    }
    m = normalized(m);
    for (std::size_t i : idx) in_sum += cosine(z.row(i), m), ++in_n;
    dirs.push_back(std::move(m));
  }
  require(dirs.size() >= 2, ErrorKind::UndefinedMetric, "similarity_stats needs two non-singleton classes");
  double cls_sum = 0.0;
  std::size_t cls_n = 0;
  for (std::size_t a = 0; a < dirs.size(); ++a)
    for (std::size_t b = a + 1; b < dirs.size(); ++b) cls_sum += dot(dirs[a], dirs[b]), ++cls_n;
  st.sim_cls = cls_sum / static_cast<double>(cls_n);
  st.sim_in = in_sum / static_cast<double>(in_n);
  return st;
}

// --- serialization ----------------------------------------------------------

namespace report_detail {

inline nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> read_opt(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorKind::ParseError, "report: missing field '" + std::string(key) + "' in " + where);
  if (j[key].is_null()) return std::nullopt;
  if (!j[key].is_number()) fail(ErrorKind::ParseError, "report: field '" + std::string(key) + "' in " + where + " is not a number");
  return j[key].get<double>();
}

inline double read_req(const nlohmann::json& j, const char* key, const std::string& where) {
  auto v = read_opt(j, key, where);
  if (!v) fail(ErrorKind::ParseError, "report: field '" + std::string(key) + "' in " + where + " is null");
  return *v;
}

}  // namespace report_detail

inline nlohmann::json to_json(const RunReport& r) {
  using report_detail::opt;
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& s : r.sessions) {
    nlohmann::json j;
    j["t"] = s.t;
    j["top1"] = s.top1;
    j["bacc"] = opt(s.bacc);
    j["nacc"] = opt(s.nacc);
    j["hm"] = opt(s.hm);
    j["ber"] = opt(s.ber);
    j["smr"] = opt(s.smr);
    j["sim_cls"] = opt(s.sim_cls);
    j["sim_in"] = opt(s.sim_in);
    sessions.push_back(std::move(j));
  }
  nlohmann::json out;
  out["sessions"] = std::move(sessions);
  out["ahm"] = opt(r.ahm);
  out["fa"] = r.fa;
  out["pd"] = r.pd;
  out["base_acc"] = r.base_acc;
  return out;
}

inline std::string format_report_json(const RunReport& r) { return to_json(r).dump(2) + "\n"; }

inline RunReport report_from_json(const nlohmann::json& j) {
  using namespace report_detail;
  require(j.is_object(), ErrorKind::ParseError, "report: top level is not an object");
  if (!j.contains("sessions") || !j["sessions"].is_array())
    fail(ErrorKind::ParseError, "report: missing field 'sessions'");
  RunReport r;
  std::size_t idx = 0;
  for (const auto& s : j["sessions"]) {
    const std::string where = "sessions[" + std::to_string(idx++) + "]";
    require(s.is_object(), ErrorKind::ParseError, "report: " + where + " is not an object");
    SessionRecord rec;
    rec.t = static_cast<int>(read_req(s, "t", where));
    rec.top1 = read_req(s, "top1", where);
    rec.bacc = read_opt(s, "bacc", where);
    rec.nacc = read_opt(s, "nacc", where);
    rec.hm = read_opt(s, "hm", where);
    rec.ber = read_opt(s, "ber", where);
    rec.smr = read_opt(s, "smr", where);
    rec.sim_cls = read_opt(s, "sim_cls", where);
    rec.sim_in = read_opt(s, "sim_in", where);
    r.sessions.push_back(rec);
  }
  r.ahm = read_opt(j, "ahm", "report");
  r.fa = read_req(j, "fa", "report");
  r.pd = read_req(j, "pd", "report");
  r.base_acc = read_req(j, "base_acc", "report");
  return r;
}

inline RunReport parse_report(std::string_view content, const std::string& what = "report") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = io::line_col(content, e.byte > 0 ? e.byte - 1 : 0);
    fail(ErrorKind::ParseError, what + ": line " + std::to_string(line) + " column " + std::to_string(col) +
                                    ": " + e.what());
  }
  return report_from_json(j);
}

inline RunReport load_report(const std::filesystem::path& path) {
  return parse_report(io::read_file(path), path.string());
}

inline std::string format_report_csv(const RunReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  std::string out = "t,top1,bacc,nacc,hm,ber,smr,sim_cls,sim_in\n";
  for (const auto& s : r.sessions) {
    out += std::to_string(s.t) + "," + io::format_double(s.top1) + "," + cell(s.bacc) + "," +
           cell(s.nacc) + "," + cell(s.hm) + "," + cell(s.ber) + "," + cell(s.smr) + "," +
           cell(s.sim_cls) + "," + cell(s.sim_in) + "\n";
  }
  return out;
}

/// Human-readable table: one row per session, then an AHM / FA / PD footer.
inline std::string format_report_table(const RunReport& r) {
  auto cell = [](const std::optional<double>& v, int prec) {
    char buf[32];
    if (!v) return std::string("      -");
    std::snprintf(buf, sizeof buf, "%7.*f", prec, *v);
    return std::string(buf);
  };
  std::string out = "session    top1    BAcc    NAcc      HM     BER     SMR\n";
  for (const auto& s : r.sessions) {
    char head[32];
    std::snprintf(head, sizeof head, "%7d %7.2f", s.t, s.top1);
    out += head;
    out += " " + cell(s.bacc, 2) + " " + cell(s.nacc, 2) + " " + cell(s.hm, 2) + " " +
           cell(s.ber, 2) + " " + cell(s.smr, 3) + "\n";
  }
  char foot[160];
  if (r.ahm)
    std::snprintf(foot, sizeof foot, "AHM %.2f  FA %.2f  PD %.2f  (base %.2f)\n", *r.ahm, r.fa, r.pd, r.base_acc);
  else
    std::snprintf(foot, sizeof foot, "AHM -  FA %.2f  PD %.2f  (base %.2f)\n", r.fa, r.pd, r.base_acc);
  out += foot;
  return out;
}

}  // namespace concm

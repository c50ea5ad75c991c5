#pragma once

// Base session and incremental sessions, plus the end-to-end run over a
// manifest of feature files.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "concm/attributes.hpp"
#include "concm/augment.hpp"
#include "concm/config.hpp"
#include "concm/error.hpp"
#include "concm/eval.hpp"
#include "concm/features.hpp"
#include "concm/geometry.hpp"
#include "concm/io.hpp"
#include "concm/log.hpp"
#include "concm/matrix.hpp"
#include "concm/mpc.hpp"
#include "concm/projector.hpp"
#include "concm/rng.hpp"

namespace concm {

/// concm: full method. rm: a fresh random optimal structure each session.
/// fs: one optimal structure allocated up front for all classes.
/// frozen: the projector keeps its initialization.
enum class Strategy { ConCM, RandomMatching, FixedStructure, Frozen };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::ConCM: return "concm";
    case Strategy::RandomMatching: return "rm";
    case Strategy::FixedStructure: return "fs";
    case Strategy::Frozen: return "frozen";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "concm") return Strategy::ConCM;
  if (s == "rm") return Strategy::RandomMatching;
  if (s == "fs") return Strategy::FixedStructure;
  if (s == "frozen") return Strategy::Frozen;
  fail(ErrorKind::InvalidConfig, "unknown strategy '" + s + "' (expected concm, rm, fs or frozen)");
}

struct NovelCalibration {
  int class_id = -1;
  Vector raw;
  Vector blended;
  bool covered = true;  // false: no pooled attribute, raw prototype kept
};

struct SessionDiagnostics {
  int t = 0;
  std::size_t num_classes = 0;
  double smr = 0.0;         // initial structure vs the target actually used
  double smr_random = 0.0;  // initial structure vs an unrelated random optimal structure
  bool rank_deficient = false;
  double optimality = 0.0;
  std::vector<NovelCalibration> calibration;
  std::vector<double> projector_loss;
  std::vector<double> mpc_loss;
};

struct SessionState {
  int t = -1;
  SessionConfig cfg;
  Strategy strategy = Strategy::ConCM;
  AttributePool pool;
  MpcParams mpc;
  PrototypeRepository repo;
  StructureMatrix structure;
  ProjectorParams projector;
  std::map<int, std::vector<Vector>> replay;
  std::vector<std::string> class_names;  // indexed by global class id
  std::set<int> base_ids;
  std::optional<StructureMatrix> fs_frame;
  SessionDiagnostics last;
  std::shared_ptr<int> head;  // newest session index of this run, shared by all copies

  std::size_t num_classes() const noexcept { return class_names.size(); }
};

namespace session_detail {

enum : std::uint64_t { kMpc = 11, kProjector, kAugment, kStructure, kRandomMatch, kFixed, kTrain, kSmrBaseline };

inline std::vector<int> id_range(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

/// Augmented samples of every stored class plus replayed exemplars.
inline FeatureSet training_data(const SessionState& s, std::size_t epoch) {
  FeatureSet data = sample_augmented(s.repo, {s.cfg.augment_base, s.cfg.augment_novel},
                                     derive_seed(s.cfg.seed, kAugment, static_cast<std::uint64_t>(s.t), epoch));
  for (const auto& [id, xs] : s.replay)
    for (const auto& x : xs) data.add(id, std::to_string(id), x);
  return data;
}

/// Pick the target structure for the session per strategy and record SMR.
inline void choose_structure(SessionState& s, const InitialStructure& init) {
  const auto t = static_cast<std::uint64_t>(s.t);
  const std::size_t n = init.num_classes(), d = s.cfg.d_g;
  switch (s.strategy) {
    case Strategy::ConCM:
    case Strategy::Frozen: {
      auto upd = theorem1_update(init, derive_seed(s.cfg.seed, kStructure, t));
      s.structure = std::move(upd.structure);
      s.last.rank_deficient = upd.rank_deficient;
      break;
    }
    case Strategy::RandomMatching:
      s.structure = random_optimal_structure(n, d, derive_seed(s.cfg.seed, kRandomMatch, t), init.class_ids);
      break;
    case Strategy::FixedStructure:
      s.structure = structure_prefix(*s.fs_frame, n);
      break;
  }
  const std::optional<std::size_t> frame =
      s.strategy == Strategy::FixedStructure ? std::optional<std::size_t>(s.fs_frame->num_classes()) : std::nullopt;
  s.last.optimality = check_geometric_optimality(s.structure, frame);
  s.last.smr = smr(init, s.structure);
  s.last.smr_random =
      smr(init, random_optimal_structure(n, d, derive_seed(s.cfg.seed, kSmrBaseline, t), init.class_ids));
  log::info("session " + std::to_string(s.t) + ": SMR " + std::to_string(s.last.smr) + " (random " +
            std::to_string(s.last.smr_random) + ")");
}

inline void train(SessionState& s, const std::set<int>& anchored) {
  if (s.strategy == Strategy::Frozen) return;
  const bool base = s.t == 0;
  ProjectorSchedule sched{base ? s.cfg.lr_base : s.cfg.lr_incremental,
                          base ? s.cfg.epochs_base : s.cfg.epochs_incremental,
                          s.cfg.warmup_epochs,
                          s.cfg.batch_size,
                          s.cfg.momentum,
                          derive_seed(s.cfg.seed, kTrain, static_cast<std::uint64_t>(s.t))};
  std::optional<std::size_t> frame;
  if (s.strategy == Strategy::FixedStructure) frame = s.fs_frame->num_classes();
  auto res = train_projector([&s](std::size_t epoch) { return training_data(s, epoch); }, s.structure,
                             s.projector, anchored, sched, ProjectorLossConfig{s.cfg.tau, true, true}, frame);
  s.projector = std::move(res.params);
  s.last.projector_loss = std::move(res.epoch_loss);
}

inline Matrix projected_columns(const ProjectorParams& p, const std::vector<Vector>& means, std::size_t offset,
                                std::size_t total) {
  Matrix m(p.output_dim(), total);
  for (std::size_t i = 0; i < means.size(); ++i) m.set_column(offset + i, project(p, means[i]));
  return m;
}

}  // namespace session_detail

inline SessionState run_base_session(const SessionConfig& cfg, Strategy strategy, const FeatureSet& base,
                                     const AttributeTable& table, const SemanticEmbeddings& semantic) {
  using namespace session_detail;
  validate(cfg);
  validate_labels(base, "base session");
  require(base.num_classes() == cfg.base_classes, ErrorKind::ProtocolViolation,
          "base session has " + std::to_string(base.num_classes()) + " classes, config expects " +
              std::to_string(cfg.base_classes));

  SessionState s;
  s.t = 0;
  s.cfg = cfg;
  s.strategy = strategy;
  s.head = std::make_shared<int>(0);
  s.last.t = 0;
  s.class_names = base.class_names_by_label();
  const auto ids = id_range(s.class_names.size());
  s.base_ids.insert(ids.begin(), ids.end());

  const SemanticKnowledge knowledge = build_knowledge(base, semantic, table);
  s.pool = knowledge.pool;
  MetaTrainConfig mcfg;
  mcfg.shots = cfg.shots;
  mcfg.episodes = cfg.mpc_episodes;
  mcfg.lr_max = cfg.mpc_lr;
  mcfg.momentum = cfg.mpc_momentum;
  mcfg.seed = derive_seed(cfg.seed, kMpc);
  auto meta = meta_train(base, knowledge, mcfg);
  s.mpc = std::move(meta.params);
  s.last.mpc_loss = std::move(meta.loss_trace);

  std::vector<Vector> means;
  for (auto& st : base_stats(base)) {
    means.push_back(st.mean);
    s.repo.add(std::move(st));
  }

  s.projector = ProjectorParams::init(base.dim(), cfg.d_hidden, cfg.d_g, derive_seed(cfg.seed, kProjector));
  if (strategy == Strategy::FixedStructure) {
    const std::size_t total = cfg.fs_total_classes ? cfg.fs_total_classes : cfg.total_classes();
    s.fs_frame = random_optimal_structure(total, cfg.d_g, derive_seed(cfg.seed, kFixed), id_range(total));
  }
  const InitialStructure init =
      initial_structure(std::nullopt, ids, projected_columns(s.projector, means, 0, ids.size()));
  choose_structure(s, init);
  s.last.num_classes = ids.size();
  train(s, {});  // base classes get no anchors
  return s;
}

inline SessionState run_incremental_session(const SessionState& prev, const FeatureSet& novel,
                                            const AttributeTable& table, const SemanticEmbeddings& semantic) {
  using namespace session_detail;
  require(prev.t >= 0 && prev.head != nullptr, ErrorKind::OrderError,
          "incremental session requires a completed base session");
  require(*prev.head == prev.t, ErrorKind::OrderError,
          "stale session state: session " + std::to_string(prev.t) + " was already followed by session " +
              std::to_string(*prev.head));
  const SessionConfig& cfg = prev.cfg;
  require(static_cast<std::size_t>(prev.t) < cfg.sessions, ErrorKind::ProtocolViolation,
          "all " + std::to_string(cfg.sessions) + " configured incremental sessions already ran");
  const int t = prev.t + 1;
  const std::string what = "session " + std::to_string(t);
  validate_labels(novel, what);
  require(novel.dim() == prev.repo[0].mean.size(), ErrorKind::SchemaError, what + ": feature dimension differs from base");
  const auto by_label = novel.indices_by_label();
  require(by_label.size() == cfg.ways, ErrorKind::ProtocolViolation,
          what + " has " + std::to_string(by_label.size()) + " classes, expected " + std::to_string(cfg.ways));
  for (const auto& [l, idx] : by_label)
    require(idx.size() == cfg.shots, ErrorKind::ProtocolViolation,
            what + ": class " + std::to_string(l) + " has " + std::to_string(idx.size()) + " shots, expected " +
                std::to_string(cfg.shots));
  const auto names = novel.class_names_by_label();
  for (const auto& n : names)
    for (const auto& old : prev.class_names)
      require(n != old, ErrorKind::ProtocolViolation, what + ": class '" + n + "' was seen in an earlier session");

  SessionState s = prev;
  s.t = t;
  s.last = SessionDiagnostics{};
  s.last.t = t;
  const std::size_t offset = s.class_names.size();
  std::vector<int> new_ids;
  for (std::size_t i = 0; i < names.size(); ++i) {
    new_ids.push_back(static_cast<int>(offset + i));
    s.class_names.push_back(names[i]);
  }
  const SemanticKnowledge knowledge = build_knowledge(s.pool, names, new_ids, semantic, table);
  const std::vector<ClassStats> base = s.repo.exact_entries();

  std::vector<Vector> blended;
  std::vector<std::vector<std::size_t>> shot_idx;
  for (const auto& [l, idx] : by_label) {
    const auto k = static_cast<std::size_t>(l);
    const int id = new_ids[k];
    ClassStats raw = stats_of(novel, idx, id, false);
    NovelCalibration cal{id, raw.mean, raw.mean, !knowledge.assoc.uncovered[k]};
    if (cal.covered) {
      Vector mask(s.pool.size());
      for (std::size_t a = 0; a < mask.size(); ++a) mask[a] = knowledge.assoc.r(a, k);
      const Vector completed = calibrate(raw.mean, knowledge.class_semantic.row(k), s.pool, mask, s.mpc);
      cal.blended = blend(raw.mean, completed, cfg.alpha);
    } else {
      log::warn(what + ": class '" + names[k] + "' shares no pooled attribute; keeping its raw prototype");
    }
    const Vector w = transfer_weights(cal.blended, base, cfg.gamma);
    s.repo.add(ClassStats{id, cal.blended, novel_covariance(raw.cov_diag, base, w, cfg.beta), false});
    blended.push_back(cal.blended);
    shot_idx.push_back(idx);
    s.last.calibration.push_back(std::move(cal));
  }

  const auto all_ids = id_range(s.class_names.size());
  const InitialStructure init = initial_structure(
      prev.structure, all_ids, projected_columns(s.projector, blended, offset, all_ids.size()));
  choose_structure(s, init);
  s.last.num_classes = all_ids.size();
  train(s, std::set<int>(new_ids.begin(), new_ids.end()));

  // Exemplars: all shots when they fit, else those closest to the raw mean.
  for (std::size_t k = 0; k < new_ids.size(); ++k) {
    const auto& idx = shot_idx[k];
    std::vector<std::size_t> keep = idx;
    if (idx.size() > cfg.replay) {
      const Vector& mean = s.last.calibration[k].raw;
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t i : idx) {
        double d2 = 0.0;
        auto x = novel.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - mean[j]) * (x[j] - mean[j]);
        dist.emplace_back(d2, i);
      }
      std::sort(dist.begin(), dist.end());
      keep.clear();
      for (std::size_t r = 0; r < cfg.replay; ++r) keep.push_back(dist[r].second);
    }
    if (keep.empty()) continue;
    auto& slot = s.replay[new_ids[k]];
    for (std::size_t i : keep) slot.emplace_back(novel.row(i).begin(), novel.row(i).end());
  }
  *s.head = t;
  return s;
}

/// Metrics on the test rows of every class seen so far. Test rows are
/// matched to classes by name; rows of future classes are ignored.
inline SessionRecord evaluate_session(const SessionState& s, const FeatureSet& test) {
  std::map<std::string, int> id_of;
  for (std::size_t i = 0; i < s.class_names.size(); ++i) id_of[s.class_names[i]] = static_cast<int>(i);
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto it = id_of.find(test.class_name(i));
    if (it == id_of.end()) continue;
    rows.push_back(i);
    labels.push_back(it->second);
  }
  require(!rows.empty(), ErrorKind::UndefinedMetric,
          "session " + std::to_string(s.t) + ": test set has no samples of seen classes");
  const Matrix z = project_rows(s.projector, test.rows(rows));
  std::vector<int> preds(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) preds[i] = s.structure.class_ids[ncm_classify(z.row(i), s.structure)];
  SessionRecord r = session_metrics(preds, labels, s.base_ids, s.t);
  r.smr = s.last.smr;
  try {
    const auto sim = similarity_stats(z, labels);
    r.sim_cls = sim.sim_cls;
    r.sim_in = sim.sim_in;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::UndefinedMetric) throw;
  }
  return r;
}

// --- manifest-driven runs ----------------------------------------------------

struct Manifest {
  std::filesystem::path base;
  std::vector<std::filesystem::path> sessions;
  std::filesystem::path attributes, semantic, test;
  std::optional<std::filesystem::path> truth;
};

/// Relative paths resolve against the manifest's directory.
inline Manifest parse_manifest(std::string_view content, const std::filesystem::path& dir,
                               const std::string& what = "manifest") {
  const auto j = config_detail::parse_json(content, what);
  require(j.is_object(), ErrorKind::SchemaError, what + ": top level must be an object");
  auto path_field = [&](const char* key) {
    require(j.contains(key), ErrorKind::SchemaError, what + ": missing field '" + std::string(key) + "'");
    require(j[key].is_string(), ErrorKind::SchemaError, what + ": field '" + std::string(key) + "' must be a path");
    std::filesystem::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : dir / p;
  };
  Manifest m;
  m.base = path_field("base");
  m.attributes = path_field("attributes");
  m.semantic = path_field("semantic");
  m.test = path_field("test");
  require(j.contains("sessions") && j["sessions"].is_array(), ErrorKind::SchemaError,
          what + ": missing field 'sessions'");
  for (const auto& p : j["sessions"]) {
    require(p.is_string(), ErrorKind::SchemaError, what + ": 'sessions' entries must be paths");
    std::filesystem::path sp = p.get<std::string>();
    m.sessions.push_back(sp.is_absolute() ? sp : dir / sp);
  }
  if (j.contains("truth")) m.truth = path_field("truth");
  for (auto& [k, v] : j.items())
    require(k == "base" || k == "sessions" || k == "attributes" || k == "semantic" || k == "test" || k == "truth",
            ErrorKind::SchemaError, what + ": unknown field '" + k + "'");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path), path.parent_path(), path.string());
}

struct RunInputs {
  FeatureSet base{0};
  std::vector<FeatureSet> sessions;
  AttributeTable table;
  SemanticEmbeddings semantic;
  FeatureSet test{0};
};

inline RunInputs load_inputs(const Manifest& m) {
  RunInputs in;
  in.base = load_features(m.base);
  for (const auto& p : m.sessions) in.sessions.push_back(load_features(p));
  in.table = load_attribute_table(m.attributes);
  in.semantic = load_semantic(m.semantic);
  in.test = load_features(m.test);
  return in;
}

struct RunResult {
  RunReport report;
  std::vector<SessionDiagnostics> diagnostics;
  SessionState final_state;
};

inline RunResult run_pipeline(const RunInputs& in, const SessionConfig& cfg, Strategy strategy) {
  validate(cfg);
  require(in.sessions.size() == cfg.sessions, ErrorKind::ProtocolViolation,
          "inputs hold " + std::to_string(in.sessions.size()) + " incremental sessions, config expects " +
              std::to_string(cfg.sessions));
  RunResult out;
  SessionState s = run_base_session(cfg, strategy, in.base, in.table, in.semantic);
  out.report.sessions.push_back(evaluate_session(s, in.test));
  out.diagnostics.push_back(s.last);
  for (const auto& novel : in.sessions) {
    s = run_incremental_session(s, novel, in.table, in.semantic);
    out.report.sessions.push_back(evaluate_session(s, in.test));
    out.diagnostics.push_back(s.last);
  }
  finalize(out.report);
  out.final_state = std::move(s);
  return out;
}

inline std::string format_diagnostics(const SessionDiagnostics& d) {
  nlohmann::ordered_json j;
  j["t"] = d.t;
  j["num_classes"] = d.num_classes;
  j["smr"] = d.smr;
  j["smr_random"] = d.smr_random;
  j["rank_deficient"] = d.rank_deficient;
  j["optimality_deviation"] = d.optimality;
  j["projector_epoch_loss"] = d.projector_loss;
  if (!d.mpc_loss.empty()) {
    j["mpc_loss_first"] = d.mpc_loss.front();
    j["mpc_loss_last"] = d.mpc_loss.back();
  }
  nlohmann::ordered_json cal = nlohmann::ordered_json::array();
  for (const auto& c : d.calibration) {
    nlohmann::ordered_json e;
    e["class_id"] = c.class_id;
    e["covered"] = c.covered;
    e["raw"] = c.raw;
    e["blended"] = c.blended;
    cal.push_back(std::move(e));
  }
  j["calibration"] = std::move(cal);
  return j.dump(2) + "\n";
}

}  // namespace concm

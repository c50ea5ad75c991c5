#pragma once

// Synthetic stand-in for frozen-backbone features. Every class mean is a sum
// of planted attribute vectors plus a small class-specific offset, and its
// diagonal covariance is the average of its attributes' variance profiles, so
// classes that share attributes also share shape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "concm/attributes.hpp"
#include "concm/config.hpp"
#include "concm/error.hpp"
#include "concm/features.hpp"
#include "concm/io.hpp"
#include "concm/matrix.hpp"
#include "concm/rng.hpp"

namespace concm {

struct ClassTruth {
  int id = -1;
  std::string name;
  int session = 0;
  Vector mean;
  Vector cov_diag;
  std::vector<std::string> attributes;
};

struct SyntheticBenchmark {
  GeneratorConfig cfg;
  FeatureSet base{0};
  std::vector<FeatureSet> sessions;  // local labels 0..ways-1
  FeatureSet test{0};                // global labels
  AttributeTable table;
  SemanticEmbeddings semantic;
  std::vector<ClassTruth> truth;     // indexed by global id
  Matrix attribute_vectors;          // pool x d_f
};

inline std::string synth_class_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03zu", id);
  return buf;
}

inline std::string synth_attribute_name(std::size_t a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "attr_%02zu", a);
  return buf;
}

namespace synth_detail {

enum : std::uint64_t { kAttr = 1, kProfile, kSemantic, kAssign, kResidual, kSamples, kTest, kClassSem };

}  // namespace synth_detail

inline SyntheticBenchmark synth_benchmark(const GeneratorConfig& cfg) {
  using namespace synth_detail;
  validate(cfg);
  const std::size_t d = cfg.d_f, pool = cfg.pool_attributes, per = cfg.attributes_per_class;
  const std::size_t total = cfg.total_classes();

  SyntheticBenchmark b;
  b.cfg = cfg;
  b.base = FeatureSet(d);
  b.test = FeatureSet(d);
  b.semantic = SemanticEmbeddings(cfg.d_s);

  Rng attr_rng(cfg.seed, kAttr);
  b.attribute_vectors = Matrix(pool, d);
  const double vs = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : b.attribute_vectors.data()) x = vs * attr_rng.normal();

  // Per-attribute variance profile, log-normal around within_class_std^2.
  Rng prof_rng(cfg.seed, kProfile);
  Matrix profile(pool, d);
  const double s2 = cfg.within_class_std * cfg.within_class_std;
  for (double& x : profile.data()) x = s2 * std::exp(0.5 * prof_rng.normal() - 0.125);

  Rng sem_rng(cfg.seed, kSemantic);
  std::vector<Vector> attr_sem(pool, Vector(cfg.d_s));
  for (std::size_t a = 0; a < pool; ++a) {
    for (double& x : attr_sem[a]) x = sem_rng.normal();
    attr_sem[a] = normalized(attr_sem[a]);
    b.semantic.set(synth_attribute_name(a), attr_sem[a]);
  }

  // Attribute sets: base classes jointly cover the pool; all sets distinct.
  Rng assign_rng(cfg.seed, kAssign);
  std::vector<std::vector<std::size_t>> sets(total);
  std::set<std::vector<std::size_t>> used;
  {
    std::vector<std::size_t> perm(pool);
    for (std::size_t i = 0; i < pool; ++i) perm[i] = i;
    assign_rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t i = 0; i < pool; ++i) sets[i % cfg.base_classes].push_back(perm[i]);
  }
  for (std::size_t c = 0; c < total; ++c) {
    const std::vector<std::size_t> fixed = sets[c];  // coverage share, at most `per` entries
    std::vector<std::size_t> s;
    for (int attempt = 0;; ++attempt) {
      require(attempt < 10000, ErrorKind::InvalidConfig, "could not draw distinct attribute sets");
      s = fixed;
      while (s.size() < per) {
        const std::size_t a = assign_rng.below(pool);
        if (std::find(s.begin(), s.end(), a) == s.end()) s.push_back(a);
      }
      std::sort(s.begin(), s.end());
      if (!used.count(s)) break;
    }
    used.insert(s);
    sets[c] = s;
  }

  Rng res_rng(cfg.seed, kResidual);
  Rng csem_rng(cfg.seed, kClassSem);
  b.truth.resize(total);
  for (std::size_t c = 0; c < total; ++c) {
    ClassTruth& tr = b.truth[c];
    tr.id = static_cast<int>(c);
    tr.name = synth_class_name(c);
    tr.session = c < cfg.base_classes ? 0 : static_cast<int>((c - cfg.base_classes) / cfg.ways + 1);
    tr.mean.assign(d, 0.0);
    tr.cov_diag.assign(d, 0.0);
    for (std::size_t a : sets[c]) {
      tr.attributes.push_back(synth_attribute_name(a));
      for (std::size_t j = 0; j < d; ++j) {
        tr.mean[j] += b.attribute_vectors(a, j);
        tr.cov_diag[j] += profile(a, j) / static_cast<double>(per);
      }
    }
    for (double& x : tr.mean) x += cfg.class_residual * vs * res_rng.normal();
    b.table.set(tr.name, tr.attributes);

    Vector sem(cfg.d_s, 0.0);
    for (std::size_t a : sets[c])
      for (std::size_t j = 0; j < cfg.d_s; ++j) sem[j] += attr_sem[a][j];
    const double ns = cfg.semantic_noise / std::sqrt(static_cast<double>(cfg.d_s));
    for (double& x : sem) x += ns * csem_rng.normal();
    b.semantic.set(tr.name, normalized(sem));
  }

  auto draw = [&](const ClassTruth& tr, std::size_t n, Rng& rng, FeatureSet& out, int label) {
    Vector x(d);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < d; ++j) x[j] = tr.mean[j] + std::sqrt(tr.cov_diag[j]) * rng.normal();
      out.add(label, tr.name, x);
    }
  };

  for (std::size_t t = 0; t < cfg.sessions; ++t) b.sessions.emplace_back(d);
  for (std::size_t c = 0; c < total; ++c) {
    const ClassTruth& tr = b.truth[c];
    Rng rng(derive_seed(cfg.seed, kSamples), c);
    if (tr.session == 0)
      draw(tr, cfg.base_train, rng, b.base, tr.id);
    else
      draw(tr, cfg.shots, rng, b.sessions[static_cast<std::size_t>(tr.session - 1)],
           static_cast<int>((c - cfg.base_classes) % cfg.ways));
  }
  for (std::size_t c = 0; c < total; ++c) {
    Rng rng(derive_seed(cfg.seed, kTest), c);
    draw(b.truth[c], cfg.test, rng, b.test, static_cast<int>(c));
  }
  return b;
}

// --- truth file ---------------------------------------------------------------

inline std::string format_truth(const std::vector<ClassTruth>& truth) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : truth) {
    nlohmann::ordered_json j;
    j["id"] = t.id;
    j["name"] = t.name;
    j["session"] = t.session;
    j["attributes"] = t.attributes;
    j["mean"] = t.mean;
    j["cov_diag"] = t.cov_diag;
    arr.push_back(std::move(j));
  }
  nlohmann::ordered_json root;
  root["classes"] = std::move(arr);
  return root.dump(1) + "\n";
}

inline std::vector<ClassTruth> parse_truth(std::string_view content, const std::string& what = "truth") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::ParseError, what + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  require(j.is_object() && j.contains("classes") && j["classes"].is_array(), ErrorKind::SchemaError,
          what + ": expected {\"classes\": [...]}");
  std::vector<ClassTruth> out;
  try {
    for (const auto& c : j["classes"]) {
      ClassTruth t;
      t.id = c.at("id").get<int>();
      t.name = c.at("name").get<std::string>();
      t.session = c.at("session").get<int>();
      t.attributes = c.at("attributes").get<std::vector<std::string>>();
      t.mean = c.at("mean").get<Vector>();
      t.cov_diag = c.at("cov_diag").get<Vector>();
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::SchemaError, what + ": " + e.what());
  }
  return out;
}

// --- on-disk layout -------------------------------------------------------------

/// Writes every dataset file plus manifest.json into `dir`; returns the
/// manifest path. Paths inside the manifest are relative to `dir`.
inline std::filesystem::path write_benchmark(const SyntheticBenchmark& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, dir.string() + ": cannot create directory: " + ec.message());
  nlohmann::ordered_json m;
  save_features(b.base, dir / "base.csv");
  m["base"] = "base.csv";
  m["sessions"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < b.sessions.size(); ++t) {
    const std::string name = "session_" + std::to_string(t + 1) + ".csv";
    save_features(b.sessions[t], dir / name);
    m["sessions"].push_back(name);
  }
  io::write_file(dir / "attributes.json", format_attribute_table(b.table));
  m["attributes"] = "attributes.json";
  io::write_file(dir / "semantic.csv", format_semantic(b.semantic));
  m["semantic"] = "semantic.csv";
  save_features(b.test, dir / "test.csv");
  m["test"] = "test.csv";
  io::write_file(dir / "truth.json", format_truth(b.truth));
  m["truth"] = "truth.json";
  const auto path = dir / "manifest.json";
  io::write_file(path, m.dump(2) + "\n");
  return path;
}

}  // namespace concm

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "concm/error.hpp"
#include "concm/io.hpp"

namespace concm {

struct SessionConfig {
  std::size_t ways = 5;          // N
  std::size_t shots = 5;         // K
  std::size_t sessions = 4;      // T
  std::size_t base_classes = 10; // N0

  double alpha = 0.6;  // calibration blend
  double beta = 0.6;   // covariance scale
  double gamma = 16.0; // transfer sharpness
  double tau = 0.07;

  double lr_base = 1e-2;
  double lr_incremental = 1e-2;
  std::size_t epochs_base = 50;
  std::size_t epochs_incremental = 20;
  std::size_t warmup_epochs = 2;
  std::size_t batch_size = 128;
  double momentum = 0.0;

  std::size_t mpc_episodes = 2000;
  double mpc_lr = 1.0;
  double mpc_momentum = 0.0;

  std::size_t augment_base = 100;
  std::size_t augment_novel = 50;
  std::size_t replay = 5;

  std::uint64_t seed = 0;
  std::size_t d_g = 64;
  std::size_t d_hidden = 128;
  std::size_t fs_total_classes = 0;  // 0 -> N0 + N*T

  std::size_t total_classes() const noexcept { return base_classes + ways * sessions; }
};

/// Throws InvalidConfig naming the first violated constraint.
inline void validate(const SessionConfig& c) {
  auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::InvalidConfig, msg); };
  need(c.base_classes >= 2, "base_classes must be >= 2");
  need(c.shots >= 1, "shots must be >= 1");
  need(c.ways >= 1 || c.sessions == 0, "ways must be >= 1");
  need(c.d_g > c.total_classes(),
       "d_g (" + std::to_string(c.d_g) + ") must exceed the total class count (" +
           std::to_string(c.total_classes()) + ")");
  need(c.alpha >= 0.0 && c.alpha <= 1.0, "alpha must lie in [0, 1]");
  need(c.beta > 0.0, "beta must be > 0");
  need(c.gamma >= 0.0, "gamma must be >= 0");
  need(c.tau > 0.0, "tau must be > 0");
  need(c.lr_base >= 0.0 && c.lr_incremental >= 0.0 && c.mpc_lr >= 0.0, "learning rates must be >= 0");
  need(c.momentum >= 0.0 && c.momentum < 1.0 && c.mpc_momentum >= 0.0 && c.mpc_momentum < 1.0,
       "momentum must lie in [0, 1)");
  need(c.batch_size >= 2, "batch_size must be >= 2");
  need(c.augment_base >= 2 && c.augment_novel >= 2, "augment counts must be >= 2");
  need(c.replay <= 5, "replay holds at most 5 exemplars per class");
  need(c.d_hidden >= 1, "d_hidden must be >= 1");
  if (c.fs_total_classes != 0) {
    need(c.fs_total_classes >= c.total_classes(), "fs_total_classes is smaller than the total class count");
    need(c.d_g > c.fs_total_classes, "d_g must exceed fs_total_classes");
  }
}

struct GeneratorConfig {
  std::size_t base_classes = 10;
  std::size_t ways = 5;
  std::size_t sessions = 4;
  std::size_t shots = 5;
  std::size_t base_train = 100;  // per base class
  std::size_t test = 40;         // per class
  std::size_t d_f = 64;
  std::size_t d_s = 16;
  std::size_t d_g = 64;          // checked against the class count
  std::size_t pool_attributes = 16;
  std::size_t attributes_per_class = 4;
  double within_class_std = 0.35;
  double class_residual = 0.5;   // scale of the per-class non-attribute offset
  double semantic_noise = 0.1;
  std::uint64_t seed = 0;

  std::size_t total_classes() const noexcept { return base_classes + ways * sessions; }
};

inline void validate(const GeneratorConfig& c) {
  auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::InvalidConfig, msg); };
  need(c.base_classes >= 2, "base_classes must be >= 2");
  need(c.shots >= 1, "shots must be >= 1");
  need(c.ways >= 1 || c.sessions == 0, "ways must be >= 1");
  need(c.d_g > c.total_classes(),
       "d_g (" + std::to_string(c.d_g) + ") must exceed the total class count (" +
           std::to_string(c.total_classes()) + ")");
  need(c.base_train >= c.shots + 1 && c.base_train >= 2, "base_train must exceed shots");
  need(c.test >= 1, "test must be >= 1");
  need(c.d_f >= 2 && c.d_s >= 1, "feature dimensions too small");
  need(c.attributes_per_class >= 1, "attributes_per_class must be >= 1");
  need(c.pool_attributes >= c.attributes_per_class, "pool_attributes < attributes_per_class");
  need(c.base_classes * c.attributes_per_class >= c.pool_attributes,
       "base classes cannot cover the attribute pool");
  need(c.within_class_std > 0.0, "within_class_std must be > 0");
  need(c.class_residual >= 0.0 && c.semantic_noise >= 0.0, "noise scales must be >= 0");
  // Distinct attribute sets per class: C(pool, per_class) >= total classes.
  double combos = 1.0;
  for (std::size_t i = 0; i < c.attributes_per_class; ++i)
    combos = combos * static_cast<double>(c.pool_attributes - i) / static_cast<double>(i + 1);
  need(combos >= static_cast<double>(c.total_classes()),
       "attribute pool too small for distinct attribute sets per class");
}

namespace config_detail {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string what) : j_(j), what_(std::move(what)) {
    require(j.is_object(), ErrorKind::SchemaError, what_ + ": top level must be an object");
  }

  void get(const char* key, std::size_t& out) {
    if (!take(key)) return;
    const auto& v = j_[key];
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorKind::SchemaError,
            what_ + ": '" + key + "' must be a nonnegative integer");
    out = v.get<std::size_t>();
  }
  void get(const char* key, std::uint64_t& out, int) {
    if (!take(key)) return;
    const auto& v = j_[key];
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorKind::SchemaError,
            what_ + ": '" + key + "' must be a nonnegative integer");
    out = v.get<std::uint64_t>();
  }
  void get(const char* key, double& out) {
    if (!take(key)) return;
    const auto& v = j_[key];
    require(v.is_number(), ErrorKind::SchemaError, what_ + ": '" + key + "' must be a number");
    out = v.get<double>();
  }

  void finish() const {
    for (auto& [k, v] : j_.items())
      require(seen_.count(k) > 0, ErrorKind::SchemaError, what_ + ": unknown field '" + k + "'");
  }

 private:
  bool take(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

inline nlohmann::json parse_json(std::string_view content, const std::string& what) {
  try {
    return nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = io::line_col(content, e.byte > 0 ? e.byte - 1 : 0);
    fail(ErrorKind::ParseError, what + ": line " + std::to_string(line) + " column " +
                                    std::to_string(col) + " (byte " + std::to_string(e.byte) + "): " + e.what());
  }
}

}  // namespace config_detail

/// Missing fields keep their defaults; unknown fields are rejected.
inline SessionConfig parse_session_config(std::string_view content, const std::string& what = "config") {
  const auto j = config_detail::parse_json(content, what);
  config_detail::Reader r(j, what);
  SessionConfig c;
  r.get("ways", c.ways);
  r.get("shots", c.shots);
  r.get("sessions", c.sessions);
  r.get("base_classes", c.base_classes);
  r.get("alpha", c.alpha);
  r.get("beta", c.beta);
  r.get("gamma", c.gamma);
  r.get("tau", c.tau);
  r.get("lr_base", c.lr_base);
  r.get("lr_incremental", c.lr_incremental);
  r.get("epochs_base", c.epochs_base);
  r.get("epochs_incremental", c.epochs_incremental);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("batch_size", c.batch_size);
  r.get("momentum", c.momentum);
  r.get("mpc_episodes", c.mpc_episodes);
  r.get("mpc_lr", c.mpc_lr);
  r.get("mpc_momentum", c.mpc_momentum);
  r.get("augment_base", c.augment_base);
  r.get("augment_novel", c.augment_novel);
  r.get("replay", c.replay);
  r.get("seed", c.seed, 0);
  r.get("d_g", c.d_g);
  r.get("d_hidden", c.d_hidden);
  r.get("fs_total_classes", c.fs_total_classes);
  r.finish();
  validate(c);
  return c;
}

inline SessionConfig load_session_config(const std::filesystem::path& path) {
  return parse_session_config(io::read_file(path), path.string());
}

inline std::string format_session_config(const SessionConfig& c) {
  nlohmann::ordered_json j;
  j["ways"] = c.ways;
  j["shots"] = c.shots;
  j["sessions"] = c.sessions;
  j["base_classes"] = c.base_classes;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["lr_base"] = c.lr_base;
  j["lr_incremental"] = c.lr_incremental;
  j["epochs_base"] = c.epochs_base;
  j["epochs_incremental"] = c.epochs_incremental;
  j["warmup_epochs"] = c.warmup_epochs;
  j["batch_size"] = c.batch_size;
  j["momentum"] = c.momentum;
  j["mpc_episodes"] = c.mpc_episodes;
  j["mpc_lr"] = c.mpc_lr;
  j["mpc_momentum"] = c.mpc_momentum;
  j["augment_base"] = c.augment_base;
  j["augment_novel"] = c.augment_novel;
  j["replay"] = c.replay;
  j["seed"] = c.seed;
  j["d_g"] = c.d_g;
  j["d_hidden"] = c.d_hidden;
  j["fs_total_classes"] = c.fs_total_classes;
  return j.dump(2) + "\n";
}

inline GeneratorConfig parse_generator_config(std::string_view content, const std::string& what = "generator config") {
  const auto j = config_detail::parse_json(content, what);
  config_detail::Reader r(j, what);
  GeneratorConfig c;
  r.get("base_classes", c.base_classes);
  r.get("ways", c.ways);
  r.get("sessions", c.sessions);
  r.get("shots", c.shots);
  r.get("base_train", c.base_train);
  r.get("test", c.test);
  r.get("d_f", c.d_f);
  r.get("d_s", c.d_s);
  r.get("d_g", c.d_g);
  r.get("pool_attributes", c.pool_attributes);
  r.get("attributes_per_class", c.attributes_per_class);
  r.get("within_class_std", c.within_class_std);
  r.get("class_residual", c.class_residual);
  r.get("semantic_noise", c.semantic_noise);
  r.get("seed", c.seed, 0);
  r.finish();
  validate(c);
  return c;
}

inline GeneratorConfig load_generator_config(const std::filesystem::path& path) {
  return parse_generator_config(io::read_file(path), path.string());
}

}  // namespace concm

#pragma once

// Class distribution memory (mean + diagonal covariance) and Gaussian
// prototype augmentation, with covariance transfer from base classes to
// few-shot classes.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/features.hpp"
#include "concm/matrix.hpp"
#include "concm/rng.hpp"

namespace concm {

struct ClassStats {
  int class_id = -1;
  Vector mean;
  Vector cov_diag;
  bool exact = false;  // base classes: estimated from the full base data
};

class PrototypeRepository {
 public:
  void add(ClassStats s) {
    require(find(s.class_id) == nullptr, ErrorKind::InvalidInput,
            "repository already holds class " + std::to_string(s.class_id));
    require(s.mean.size() == s.cov_diag.size(), ErrorKind::ShapeError, "stats length mismatch");
    require(entries_.empty() || entries_.front().mean.size() == s.mean.size(), ErrorKind::ShapeError,
            "stats dimension mismatch");
    entries_.push_back(std::move(s));
  }

  const ClassStats* find(int class_id) const {
    for (const auto& e : entries_)
      if (e.class_id == class_id) return &e;
    return nullptr;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const ClassStats& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<ClassStats>& entries() const noexcept { return entries_; }

  std::vector<ClassStats> exact_entries() const {
    std::vector<ClassStats> out;
    for (const auto& e : entries_)
      if (e.exact) out.push_back(e);
    return out;
  }

 private:
  std::vector<ClassStats> entries_;
};

/// Mean and population (1/n) variance of a set of rows.
inline ClassStats stats_of(const FeatureSet& fs, std::span<const std::size_t> idx, int class_id,
                           bool exact) {
  require(!idx.empty(), ErrorKind::InsufficientSamples, "no samples for class " + std::to_string(class_id));
  const std::size_t d = fs.dim();
  ClassStats s{class_id, Vector(d, 0.0), Vector(d, 0.0), exact};
  for (std::size_t i : idx) {
    auto x = fs.row(i);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[j];
  }
  const double n = static_cast<double>(idx.size());
  for (double& m : s.mean) m /= n;
  for (std::size_t i : idx) {
    auto x = fs.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = x[j] - s.mean[j];
      s.cov_diag[j] += dv * dv;
    }
  }
  for (double& v : s.cov_diag) v /= n;
  return s;
}

/// Exact statistics for every base class (class id = label).
inline std::vector<ClassStats> base_stats(const FeatureSet& base) {
  std::vector<ClassStats> out;
  for (const auto& [label, idx] : base.indices_by_label()) {
    require(idx.size() >= 2, ErrorKind::InsufficientSamples,
            "base class " + std::to_string(label) + " has fewer than 2 samples");
    out.push_back(stats_of(base, idx, label, true));
  }
  return out;
}

/// softmax_b(gamma * cos(base_b, proto)).
inline Vector transfer_weights(std::span<const double> proto, std::span<const ClassStats> base,
                               double gamma) {
  require(!base.empty(), ErrorKind::InvalidInput, "transfer_weights: no base classes");
  require(norm2(proto) > 0.0, ErrorKind::DegenerateInput, "transfer_weights: zero prototype");
  Vector logits(base.size());
  double mx = -INFINITY;
  for (std::size_t b = 0; b < base.size(); ++b) {
    require(norm2(base[b].mean) > 0.0, ErrorKind::DegenerateInput,
            "transfer_weights: zero base prototype " + std::to_string(base[b].class_id));
    logits[b] = gamma * cosine(base[b].mean, proto);
    mx = std::max(mx, logits[b]);
  }
  double s = 0.0;
  for (double& l : logits) s += (l = std::exp(l - mx));
  for (double& l : logits) l /= s;
  return logits;
}

/// beta * (own + sum_b w_b * base_b), elementwise on covariance diagonals.
inline Vector novel_covariance(std::span<const double> own, std::span<const ClassStats> base,
                               std::span<const double> weights, double beta) {
  require(beta > 0.0, ErrorKind::InvalidConfig, "covariance scale beta must be > 0");
  require(weights.size() == base.size(), ErrorKind::ShapeError, "novel_covariance: weight count");
  for (double v : own) require(v >= 0.0, ErrorKind::InvalidStats, "negative own variance");
  for (double w : weights) require(w >= 0.0, ErrorKind::InvalidStats, "negative transfer weight");
  Vector out(own.begin(), own.end());
  for (std::size_t b = 0; b < base.size(); ++b) {
    require(base[b].cov_diag.size() == out.size(), ErrorKind::ShapeError, "novel_covariance: dim");
    for (std::size_t j = 0; j < out.size(); ++j) {
      require(base[b].cov_diag[j] >= 0.0, ErrorKind::InvalidStats, "negative base variance");
      out[j] += weights[b] * base[b].cov_diag[j];
    }
  }
  for (double& v : out) v *= beta;
  return out;
}

struct AugmentCounts {
  std::size_t base = 100;
  std::size_t novel = 50;
};

/// Draw from N(mean, diag(cov)) for every repository class. Each class uses
/// its own stream derived from (seed, class id). Labels are class ids.
inline FeatureSet sample_augmented(const PrototypeRepository& repo, AugmentCounts counts,
                                   std::uint64_t seed) {
  require(counts.base >= 1 && counts.novel >= 1, ErrorKind::InvalidConfig, "augment counts must be >= 1");
  require(repo.size() > 0, ErrorKind::InvalidInput, "empty repository");
  const std::size_t d = repo[0].mean.size();
  FeatureSet out(d);
  Vector x(d);
  for (const auto& e : repo.entries()) {
    Rng rng(seed, static_cast<std::uint64_t>(e.class_id));
    Vector sd(d);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(e.cov_diag[j]);
    const std::size_t n = e.exact ? counts.base : counts.novel;
    const std::string name = std::to_string(e.class_id);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < d; ++j) x[j] = e.mean[j] + sd[j] * rng.normal();
      out.add(e.class_id, name, x);
    }
  }
  return out;
}

}  // namespace concm

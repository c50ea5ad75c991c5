#pragma once

// Projector g: unit-sphere features -> unit-sphere geometric space, trained to
// match the target structure with a matching (cross-entropy on structure
// inner products) plus a supervised contrastive loss in which novel classes'
// target vectors join the positive set as anchors.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/features.hpp"
#include "concm/geometry.hpp"
#include "concm/layers.hpp"
#include "concm/log.hpp"
#include "concm/matrix.hpp"
#include "concm/optim.hpp"
#include "concm/rng.hpp"
#include "concm/tape.hpp"

namespace concm {

struct ProjectorParams {
  Linear hidden;  // d_f -> d_hidden
  Linear out;     // d_hidden -> d_g

  std::size_t input_dim() const noexcept { return hidden.in(); }
  std::size_t output_dim() const noexcept { return out.out(); }

  static ProjectorParams init(std::size_t d_f, std::size_t d_hidden, std::size_t d_g,
                              std::uint64_t seed) {
    require(d_f >= 1 && d_hidden >= 1 && d_g >= 2, ErrorKind::InvalidConfig, "projector: bad dimensions");
    Rng rng(seed, 0x9E0ull);
    return {Linear::init(d_f, d_hidden, rng), Linear::init(d_hidden, d_g, rng)};
  }

  std::vector<Matrix*> tensors() { return {&hidden.weight, &hidden.bias, &out.weight, &out.bias}; }
  std::vector<Matrix> tensor_values() const { return {hidden.weight, hidden.bias, out.weight, out.bias}; }
  static ProjectorParams from_tensors(std::span<const Matrix> t) {
    require(t.size() == 4, ErrorKind::ShapeError, "projector: expected 4 tensors");
    return {{t[0], t[1]}, {t[2], t[3]}};
  }
  bool all_finite() const noexcept { return hidden.all_finite() && out.all_finite(); }
  friend bool operator==(const ProjectorParams& a, const ProjectorParams& b) {
    return a.tensor_values() == b.tensor_values();
  }
};

struct ProjectorVars {
  LinearVars hidden, out;
  static ProjectorVars from(std::span<const ad::Var> v) {
    require(v.size() == 4, ErrorKind::ShapeError, "projector: expected 4 vars");
    return {{v[0], v[1]}, {v[2], v[3]}};
  }
  std::vector<ad::Var> list() const { return {hidden.weight, hidden.bias, out.weight, out.bias}; }
};

inline ProjectorVars bind(ad::Tape& t, const ProjectorParams& p, bool trainable) {
  return {bind(t, p.hidden, trainable), bind(t, p.out, trainable)};
}

/// normalize(MLP(normalize(x))) row-wise.
inline ad::Var project(ad::Tape& t, const ProjectorVars& v, ad::Var x) {
  ad::Var h = ad::softplus(t, apply(t, v.hidden, ad::normalize_rows(t, x)));
  return ad::normalize_rows(t, apply(t, v.out, h));
}

/// Untaped batch projection (rows in, unit rows out).
inline Matrix project_rows(const ProjectorParams& p, const Matrix& x) {
  Matrix xn = x;
  for (std::size_t i = 0; i < xn.rows(); ++i) {
    auto r = xn.row(i);
    const double n = norm2(r);
    require(n > 0.0, ErrorKind::DegenerateInput, "project: zero input vector");
    for (double& v : r) v /= n;
  }
  Matrix z = apply(p.out, softplus(apply(p.hidden, xn)));
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    const double n = norm2(r);
    require(n > 0.0, ErrorKind::DegenerateInput, "project: zero projection");
    for (double& v : r) v /= n;
  }
  return z;
}

inline Vector project(const ProjectorParams& p, std::span<const double> x) {
  Matrix z = project_rows(p, Matrix::row_vector(x));
  return Vector(z.row(0).begin(), z.row(0).end());
}

/// Column index in `s` for every label; throws LabelOutOfRange otherwise.
inline std::vector<std::size_t> structure_columns(const StructureMatrix& s, std::span<const int> labels) {
  std::map<int, std::size_t> col;
  for (std::size_t i = 0; i < s.class_ids.size(); ++i) col[s.class_ids[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = col.find(l);
    if (it == col.end())
      fail(ErrorKind::LabelOutOfRange,
           "label " + std::to_string(l) + " has no target among " + std::to_string(s.num_classes()) +
               " structure columns");
    out.push_back(it->second);
  }
  return out;
}

/// Mean over rows of -log softmax_j(<z, delta_j>)[label].
inline ad::Var loss_match(ad::Tape& t, ad::Var z, std::span<const int> labels, const StructureMatrix& s) {
  const std::size_t b = t.value(z).rows();
  require(labels.size() == b && b > 0, ErrorKind::ShapeError, "loss_match: label count");
  const auto cols = structure_columns(s, labels);
  ad::Var logits = ad::matmul(t, z, t.constant(s.vectors));
  Matrix pick(b, s.num_classes());
  for (std::size_t i = 0; i < b; ++i) pick(i, cols[i]) = -1.0 / static_cast<double>(b);
  return ad::sum(t, ad::mul(t, ad::log_softmax_rows(t, logits), t.constant(std::move(pick))));
}

inline double loss_match(std::span<const double> z, int label, const StructureMatrix& s) {
  ad::Tape t;
  const int labels[] = {label};
  return t.value(loss_match(t, t.constant(Matrix::row_vector(z)), labels, s))(0, 0);
}

/// Supervised contrastive loss with temperature tau. The contrast set of
/// sample i is every other batch sample plus the target vectors of the
/// anchored classes present in the batch; positives are same-class samples
/// and, for anchored classes, the class's own target vector.
inline ad::Var loss_cont(ad::Tape& t, ad::Var z, std::span<const int> labels,
                         const StructureMatrix& s, const std::set<int>& anchored, double tau) {
  require(tau > 0.0, ErrorKind::InvalidConfig, "temperature must be > 0");
  const std::size_t b = t.value(z).rows();
  require(labels.size() == b && b > 0, ErrorKind::ShapeError, "loss_cont: label count");
  const auto cols = structure_columns(s, labels);

  std::vector<int> anchor_classes;
  std::vector<std::size_t> anchor_cols;
  {
    std::set<int> present;
    for (std::size_t i = 0; i < b; ++i)
      if (anchored.count(labels[i]) && present.insert(labels[i]).second) {
        anchor_classes.push_back(labels[i]);
        anchor_cols.push_back(cols[i]);
      }
  }
  const std::size_t m = b + anchor_classes.size();
  ad::Var candidates = z;
  if (!anchor_classes.empty()) {
    Matrix anchors(anchor_classes.size(), s.dim());
    for (std::size_t a = 0; a < anchor_cols.size(); ++a)
      for (std::size_t j = 0; j < s.dim(); ++j) anchors(a, j) = s.vectors(j, anchor_cols[a]);
    candidates = ad::concat_rows(t, z, t.constant(std::move(anchors)));
  }
  ad::Var sim = ad::scale(t, ad::matmul_nt(t, z, candidates), 1.0 / tau);

  Matrix contrast(b, m, 1.0);
  Matrix weights(b, m);
  for (std::size_t i = 0; i < b; ++i) {
    contrast(i, i) = 0.0;
    std::size_t npos = 0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) weights(i, j) = 1.0, ++npos;
    for (std::size_t a = 0; a < anchor_classes.size(); ++a)
      if (anchor_classes[a] == labels[i]) weights(i, b + a) = 1.0, ++npos;
    require(npos > 0, ErrorKind::DegenerateBatch,
            "sample " + std::to_string(i) + " (class " + std::to_string(labels[i]) +
                ") has an empty positive set");
    for (std::size_t j = 0; j < m; ++j)
      weights(i, j) *= -1.0 / (static_cast<double>(npos) * static_cast<double>(b));
  }
  ad::Var logp = ad::log_softmax_rows(t, sim, std::move(contrast));
  return ad::sum(t, ad::mul(t, logp, t.constant(std::move(weights))));
}

struct ProjectorLossConfig {
  double tau = 0.07;
  bool use_match = true;
  bool use_cont = true;
};

/// L_Match + L_Cont on a batch of raw features.
inline ad::Var projector_loss(ad::Tape& t, const ProjectorVars& v, const Matrix& x,
                              std::span<const int> labels, const StructureMatrix& s,
                              const std::set<int>& anchored, const ProjectorLossConfig& cfg) {
  ad::Var z = project(t, v, t.constant(x));
  std::optional<ad::Var> total;
  if (cfg.use_match) total = loss_match(t, z, labels, s);
  if (cfg.use_cont) {
    ad::Var c = loss_cont(t, z, labels, s, anchored, cfg.tau);
    total = total ? ad::add(t, *total, c) : c;
  }
  require(total.has_value(), ErrorKind::InvalidConfig, "projector loss has no terms");
  return *total;
}

struct ProjectorSchedule {
  double lr_max = 1e-2;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 2;
  std::size_t batch_size = 128;
  double momentum = 0.0;
  std::uint64_t seed = 0;
};

/// Class-balanced mini-batches: class visits cycle through a shuffled class
/// order and every visit contributes a pair of samples, so each class in a
/// batch has at least one same-class partner.
inline std::vector<std::vector<std::size_t>> balanced_batches(const FeatureSet& data,
                                                              std::size_t batch_size, Rng& rng) {
  require(batch_size >= 2, ErrorKind::InvalidConfig, "batch size must be >= 2");
  const auto by_label = data.indices_by_label();
  std::vector<std::vector<std::size_t>> pools;
  for (auto& [l, idx] : by_label) {
    require(idx.size() >= 2, ErrorKind::DegenerateBatch,
            "class " + std::to_string(l) + " has fewer than 2 training samples");
    pools.push_back(idx);
  }
  const std::size_t n_batches = (data.size() + batch_size - 1) / batch_size;
  const std::size_t pairs = batch_size / 2;
  std::vector<std::size_t> order(pools.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::vector<std::size_t>> out;
  std::size_t cursor = order.size();
  for (std::size_t bi = 0; bi < n_batches; ++bi) {
    std::vector<std::size_t> batch;
    for (std::size_t p = 0; p < pairs; ++p) {
      if (cursor >= order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const auto& pool = pools[order[cursor++]];
      const std::size_t a = rng.below(pool.size());
      std::size_t c = rng.below(pool.size() - 1);
      if (c >= a) ++c;
      batch.push_back(pool[a]);
      batch.push_back(pool[c]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

struct ProjectorTrainResult {
  ProjectorParams params;
  std::vector<double> epoch_loss;
};

/// Supplies the training set for an epoch (resampled augmentation).
using EpochData = std::function<FeatureSet(std::size_t epoch)>;

inline ProjectorTrainResult train_projector(const EpochData& data, const StructureMatrix& target,
                                            ProjectorParams init, const std::set<int>& anchored,
                                            const ProjectorSchedule& sched,
                                            const ProjectorLossConfig& loss_cfg = {},
                                            std::optional<std::size_t> frame_size = std::nullopt) {
  const double dev = check_geometric_optimality(target, frame_size);
  require(dev <= 1e-8, ErrorKind::InvalidInput,
          "projector target violates geometric optimality (deviation " + std::to_string(dev) + ")");
  require(target.dim() == init.output_dim(), ErrorKind::ShapeError, "projector output dim != structure dim");
  ProjectorTrainResult res{std::move(init), {}};
  if (sched.epochs == 0) return res;

  Rng rng(sched.seed, 0xBA7Cull);
  Sgd opt(sched.momentum);
  FeatureSet first = data(0);
  const std::size_t steps_per_epoch = (first.size() + sched.batch_size - 1) / sched.batch_size;
  CosineSchedule lr{sched.lr_max, sched.epochs * steps_per_epoch, sched.warmup_epochs * steps_per_epoch};
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    FeatureSet set = epoch == 0 ? std::move(first) : data(epoch);
    const auto batches = balanced_batches(set, sched.batch_size, rng);
    double total = 0.0;
    for (const auto& idx : batches) {
      Matrix x = set.rows(idx);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(set.label(i));
      ad::Tape t;
      ProjectorVars v = bind(t, res.params, true);
      ad::Var loss = projector_loss(t, v, x, labels, target, anchored, loss_cfg);
      const double value = t.value(loss)(0, 0);
      require(std::isfinite(value), ErrorKind::TrainingDiverged, "projector loss not finite");
      total += value;
      t.backward(loss);
      std::vector<Matrix> grads;
      for (ad::Var p : v.list()) grads.push_back(t.grad(p));
      opt.step(res.params.tensors(), grads, lr.at(std::min(step, lr.total_steps - 1)));
      ++step;
      require(res.params.all_finite(), ErrorKind::TrainingDiverged, "projector parameters diverged");
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches.size()));
    log::debug("projector epoch " + std::to_string(epoch) + " loss " + std::to_string(res.epoch_loss.back()));
  }
  return res;
}

inline ProjectorTrainResult train_projector(const FeatureSet& data, const StructureMatrix& target,
                                            ProjectorParams init, const std::set<int>& anchored,
                                            const ProjectorSchedule& sched,
                                            const ProjectorLossConfig& loss_cfg = {}) {
  return train_projector([&data](std::size_t) { return data; }, target, std::move(init), anchored,
                         sched, loss_cfg);
}

}  // namespace concm

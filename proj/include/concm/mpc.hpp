#pragma once

// Memory-aware prototype calibration: an encode-aggregate-decode network that
// completes a few-shot prototype with visual prototypes of the base-class
// attributes it is associated with, weighted by semantic + visual
// cross-attention.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "concm/attributes.hpp"
#include "concm/error.hpp"
#include "concm/features.hpp"
#include "concm/layers.hpp"
#include "concm/log.hpp"
#include "concm/matrix.hpp"
#include "concm/optim.hpp"
#include "concm/rng.hpp"
#include "concm/tape.hpp"

namespace concm {

enum class PrototypeSource { Raw, Calibrated, BaseExact };

struct Prototype {
  int class_id = -1;
  Vector mean;
  PrototypeSource source = PrototypeSource::Raw;
  std::size_t shot_count = 0;
};

struct MpcParams {
  Linear enc_hidden, enc_out;  // d_f -> d_f/2 -> d_f/2
  Linear dec_hidden, dec_out;  // d_f/2 -> d_f/2 -> d_f
  Matrix sem_attr, sem_class;  // d_s x d_attn
  Matrix vis_attr, vis_class;  // d_f x d_attn

  std::size_t feature_dim() const noexcept { return enc_hidden.in(); }
  std::size_t latent_dim() const noexcept { return enc_out.out(); }
  std::size_t semantic_dim() const noexcept { return sem_attr.rows(); }
  std::size_t attention_dim() const noexcept { return sem_attr.cols(); }

  static MpcParams init(std::size_t d_f, std::size_t d_s, std::size_t d_attn, std::uint64_t seed) {
    require(d_f >= 2 && d_s >= 1 && d_attn >= 1, ErrorKind::InvalidConfig, "mpc: bad dimensions");
    const std::size_t latent = d_f / 2;
    Rng rng(seed, 0x3BCull);
    MpcParams p;
    p.enc_hidden = Linear::init(d_f, latent, rng);
    p.enc_out = Linear::init(latent, latent, rng);
    p.dec_hidden = Linear::init(latent, latent, rng);
    p.dec_out = Linear::init(latent, d_f, rng);
    auto proj = [&rng](std::size_t in, std::size_t out) {
      Matrix m(in, out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& x : m.data()) x = rng.normal(0.0, sd);
      return m;
    };
    p.sem_attr = proj(d_s, d_attn);
    p.sem_class = proj(d_s, d_attn);
    p.vis_attr = proj(d_f, d_attn);
    p.vis_class = proj(d_f, d_attn);
    return p;
  }

  /// Fixed order used by the optimizer and gradient checks.
  std::vector<Matrix*> tensors() {
    return {&enc_hidden.weight, &enc_hidden.bias, &enc_out.weight, &enc_out.bias,
            &dec_hidden.weight, &dec_hidden.bias, &dec_out.weight, &dec_out.bias,
            &sem_attr,          &sem_class,       &vis_attr,       &vis_class};
  }
  std::vector<Matrix> tensor_values() const {
    auto self = *this;
    std::vector<Matrix> out;
    for (Matrix* m : self.tensors()) out.push_back(*m);
    return out;
  }
  static MpcParams from_tensors(std::span<const Matrix> t) {
    require(t.size() == 12, ErrorKind::ShapeError, "mpc: expected 12 tensors");
    return {{t[0], t[1]}, {t[2], t[3]}, {t[4], t[5]}, {t[6], t[7]}, t[8], t[9], t[10], t[11]};
  }

  bool all_finite() const {
    for (const Matrix& m : tensor_values())
      if (!m.all_finite()) return false;
    return true;
  }
};

/// Tape handles for MpcParams, same order as tensors().
struct MpcVars {
  LinearVars enc_hidden, enc_out, dec_hidden, dec_out;
  ad::Var sem_attr, sem_class, vis_attr, vis_class;

  static MpcVars from(std::span<const ad::Var> v) {
    require(v.size() == 12, ErrorKind::ShapeError, "mpc: expected 12 vars");
    return {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}, v[8], v[9], v[10], v[11]};
  }
};

inline MpcVars bind(ad::Tape& t, const MpcParams& p, bool trainable) {
  std::vector<ad::Var> v;
  for (const Matrix& m : p.tensor_values()) v.push_back(trainable ? t.parameter(m) : t.constant(m));
  return MpcVars::from(v);
}

namespace mpc_detail {

inline ad::Var encode(ad::Tape& t, const MpcVars& v, ad::Var x) {
  return apply(t, v.enc_out, ad::softplus(t, apply(t, v.enc_hidden, x)));
}

inline ad::Var decode(ad::Tape& t, const MpcVars& v, ad::Var x) {
  return apply(t, v.dec_out, ad::softplus(t, apply(t, v.dec_hidden, x)));
}

/// Unmasked relevance scores, B x N_a.
inline ad::Var scores(ad::Tape& t, const MpcVars& v, ad::Var protos, ad::Var class_sem,
                      ad::Var attr_sem, ad::Var attr_vis, std::size_t d_s, std::size_t d_f) {
  ad::Var sem = ad::matmul_nt(t, ad::matmul(t, class_sem, v.sem_class),
                              ad::matmul(t, attr_sem, v.sem_attr));
  ad::Var vis = ad::matmul_nt(t, ad::matmul(t, protos, v.vis_class),
                              ad::matmul(t, attr_vis, v.vis_attr));
  return ad::add(t, ad::scale(t, sem, 1.0 / (2.0 * std::sqrt(static_cast<double>(d_s)))),
                 ad::scale(t, vis, 1.0 / (2.0 * std::sqrt(static_cast<double>(d_f)))));
}

}  // namespace mpc_detail

/// Batched completion: rows of `protos` (B x d_f) with semantic rows
/// `class_sem` (B x d_s) and attribute mask (B x N_a). Returns B x d_f.
inline ad::Var mpc_forward(ad::Tape& t, const MpcVars& v, ad::Var protos, ad::Var class_sem,
                           const AttributePool& pool, const Matrix& mask) {
  const std::size_t d_f = t.value(protos).cols();
  const std::size_t d_s = t.value(class_sem).cols();
  require(pool.visual.cols() == d_f && pool.semantic.cols() == d_s, ErrorKind::ShapeError,
          "mpc_forward: pool dimensions differ from inputs");
  ad::Var attr_vis = t.constant(pool.visual);
  ad::Var attr_sem = t.constant(pool.semantic);
  ad::Var w = mpc_detail::scores(t, v, protos, class_sem, attr_sem, attr_vis, d_s, d_f);
  ad::Var attn = ad::softmax_rows(t, w, mask);
  ad::Var xi = ad::add(t, mpc_detail::encode(t, v, protos),
                       ad::matmul(t, attn, mpc_detail::encode(t, v, attr_vis)));
  return mpc_detail::decode(t, v, xi);
}

/// Masked relevance weights of every pooled attribute for one class. Masked
/// entries are exactly zero.
inline Vector relevance_weights(std::span<const double> proto, std::span<const double> class_sem,
                                const AttributePool& pool, std::span<const double> mask,
                                const MpcParams& params) {
  require(mask.size() == pool.size(), ErrorKind::ShapeError, "relevance_weights: mask length");
  bool any = false;
  for (double m : mask) any = any || m != 0.0;
  require(any, ErrorKind::AllMasked, "class has no associated pooled attribute");
  ad::Tape t;
  MpcVars v = bind(t, params, false);
  ad::Var w = mpc_detail::scores(t, v, t.constant(Matrix::row_vector(proto)),
                                 t.constant(Matrix::row_vector(class_sem)),
                                 t.constant(pool.semantic), t.constant(pool.visual),
                                 class_sem.size(), proto.size());
  Vector out(pool.size());
  for (std::size_t a = 0; a < pool.size(); ++a) out[a] = t.value(w)(0, a) * mask[a];
  return out;
}

/// Completed prototype for one class (throws AllMasked for uncovered classes).
inline Vector calibrate(std::span<const double> proto, std::span<const double> class_sem,
                        const AttributePool& pool, std::span<const double> mask,
                        const MpcParams& params) {
  require(mask.size() == pool.size(), ErrorKind::ShapeError, "calibrate: mask length");
  ad::Tape t;
  MpcVars v = bind(t, params, false);
  Matrix m = Matrix::row_vector(mask);
  ad::Var out = mpc_forward(t, v, t.constant(Matrix::row_vector(proto)),
                            t.constant(Matrix::row_vector(class_sem)), pool, m);
  const auto r = t.value(out).row(0);
  return Vector(r.begin(), r.end());
}

/// alpha * raw + (1 - alpha) * completed.
inline Vector blend(std::span<const double> raw, std::span<const double> completed, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::InvalidConfig,
          "calibration strength alpha must lie in [0, 1]");
  require(raw.size() == completed.size(), ErrorKind::ShapeError, "blend: length mismatch");
  Vector out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = alpha * raw[i] + (1.0 - alpha) * completed[i];
  return out;
}

/// One meta-training episode batch: biased prototypes and their exact targets.
struct MetaBatch {
  Matrix protos;     // B x d_f, K-shot means
  Matrix class_sem;  // B x d_s
  Matrix mask;       // B x N_a
  Matrix targets;    // B x d_f, full-data class means
};

/// Mean squared error between completed prototypes and targets.
inline ad::Var meta_loss(ad::Tape& t, const MpcVars& v, const MetaBatch& b,
                         const AttributePool& pool) {
  ad::Var pred = mpc_forward(t, v, t.constant(b.protos), t.constant(b.class_sem), pool, b.mask);
  ad::Var diff = ad::sub(t, pred, t.constant(b.targets));
  return ad::mean(t, ad::mul(t, diff, diff));
}

struct MetaTrainConfig {
  std::size_t shots = 5;
  std::size_t episodes = 2000;
  double lr_max = 1.0;
  double warmup_fraction = 0.05;
  double momentum = 0.0;
  std::size_t attention_dim = 0;  // 0 -> d_s
  std::uint64_t seed = 0;
};

struct MetaTrainResult {
  MpcParams params;
  std::vector<double> loss_trace;
};

/// Draws an episode: for every covered base class, a K-shot mean without
/// replacement, paired with the exact class mean.
class EpisodeSampler {
 public:
  EpisodeSampler(const FeatureSet& base, const SemanticKnowledge& knowledge, std::size_t shots)
      : base_(base), shots_(shots) {
    const auto by_label = base.indices_by_label();
    for (std::size_t k = 0; k < knowledge.class_names.size(); ++k) {
      const int id = knowledge.assoc.class_ids[k];
      auto it = by_label.find(id);
      require(it != by_label.end(), ErrorKind::MissingClass,
              "meta-training: no samples for base class " + std::to_string(id));
      require(it->second.size() > shots, ErrorKind::InsufficientSamples,
              "meta-training: class '" + knowledge.class_names[k] + "' has " +
                  std::to_string(it->second.size()) + " samples, need more than " +
                  std::to_string(shots));
      if (knowledge.assoc.uncovered[k]) continue;
      columns_.push_back(k);
      members_.push_back(it->second);
    }
    require(!columns_.empty(), ErrorKind::InvalidInput, "meta-training: no covered base classes");
    const std::size_t n = columns_.size(), d = base.dim();
    targets_ = Matrix(n, d);
    class_sem_ = Matrix(n, knowledge.class_semantic.cols());
    mask_ = Matrix(n, knowledge.pool.size());
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i : members_[r]) {
        auto x = base.row(i);
        for (std::size_t j = 0; j < d; ++j) targets_(r, j) += x[j];
      }
      for (double& x : targets_.row(r)) x /= static_cast<double>(members_[r].size());
      const std::size_t k = columns_[r];
      auto s = knowledge.class_semantic.row(k);
      std::copy(s.begin(), s.end(), class_sem_.row(r).begin());
      for (std::size_t a = 0; a < mask_.cols(); ++a) mask_(r, a) = knowledge.assoc.r(a, k);
    }
  }

  MetaBatch draw(Rng& rng) const {
    const std::size_t d = base_.dim();
    MetaBatch b{Matrix(columns_.size(), d), class_sem_, mask_, targets_};
    for (std::size_t r = 0; r < columns_.size(); ++r) {
      std::vector<std::size_t> pick = members_[r];
      // Partial Fisher-Yates: first `shots_` entries are the draw.
      for (std::size_t s = 0; s < shots_; ++s) {
        const std::size_t j = s + rng.below(pick.size() - s);
        std::swap(pick[s], pick[j]);
        auto x = base_.row(pick[s]);
        for (std::size_t c = 0; c < d; ++c) b.protos(r, c) += x[c];
      }
      for (double& x : b.protos.row(r)) x /= static_cast<double>(shots_);
    }
    return b;
  }

 private:
  const FeatureSet& base_;
  std::size_t shots_;
  std::vector<std::size_t> columns_;
  std::vector<std::vector<std::size_t>> members_;
  Matrix targets_, class_sem_, mask_;
};

/// One SGD step on a batch; returns the loss before the step.
inline double meta_step(MpcParams& params, Sgd& opt, const MetaBatch& batch,
                        const AttributePool& pool, double lr) {
  ad::Tape t;
  MpcVars v = bind(t, params, true);
  ad::Var loss = meta_loss(t, v, batch, pool);
  const double value = t.value(loss)(0, 0);
  require(std::isfinite(value), ErrorKind::TrainingDiverged, "mpc meta-training loss not finite");
  t.backward(loss);
  const auto vars = std::vector<ad::Var>{v.enc_hidden.weight, v.enc_hidden.bias, v.enc_out.weight,
                                         v.enc_out.bias,      v.dec_hidden.weight, v.dec_hidden.bias,
                                         v.dec_out.weight,    v.dec_out.bias,    v.sem_attr,
                                         v.sem_class,         v.vis_attr,        v.vis_class};
  std::vector<Matrix> grads;
  for (ad::Var x : vars) grads.push_back(t.grad(x));
  opt.step(params.tensors(), grads, lr);
  return value;
}

/// Episodic training of the calibration network on base classes.
inline MetaTrainResult meta_train(const FeatureSet& base, const SemanticKnowledge& knowledge,
                                  const MetaTrainConfig& cfg) {
  require(cfg.shots >= 1, ErrorKind::InvalidConfig, "meta-training shots must be >= 1");
  const std::size_t d_s = knowledge.class_semantic.cols();
  EpisodeSampler sampler(base, knowledge, cfg.shots);
  MetaTrainResult res{MpcParams::init(base.dim(), d_s, cfg.attention_dim ? cfg.attention_dim : d_s,
                                      cfg.seed),
                      {}};
  Sgd opt(cfg.momentum);
  CosineSchedule sched{cfg.lr_max, cfg.episodes,
                       static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(cfg.episodes))};
  Rng rng(cfg.seed, 0xE915ull);
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    const MetaBatch batch = sampler.draw(rng);
    res.loss_trace.push_back(meta_step(res.params, opt, batch, knowledge.pool, sched.at(e)));
    require(res.params.all_finite(), ErrorKind::TrainingDiverged, "mpc parameters diverged");
  }
  if (!res.loss_trace.empty())
    log::info("mpc meta-training: loss " + std::to_string(res.loss_trace.front()) + " -> " +
              std::to_string(res.loss_trace.back()));
  return res;
}

}  // namespace concm

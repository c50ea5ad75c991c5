#pragma once

// Minimal reverse-mode differentiation over matrix-valued nodes. Values are
// computed eagerly when an op is recorded; backward() walks the record in
// reverse. Only the primitive set needed by the calibration and projector
// networks is provided.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/matrix.hpp"

namespace concm::ad {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var parameter(Matrix value) { return push(std::move(value), true, {}); }

  /// Record a computed node. `fn` receives the node's accumulated adjoint and
  /// must route it to the parents via accumulate().
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || node(p).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Matrix& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  const Matrix& grad(Var v) const {
    require(backward_done_, ErrorKind::OrderError, "gradient requested before backward pass");
    const Node& n = node(v);
    require(n.requires_grad, ErrorKind::OrderError, "node does not track gradients");
    return n.grad;
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  /// Seed d(loss)/d(loss) = 1 and propagate. Loss must be 1x1.
  void backward(Var loss) {
    require(!backward_done_, ErrorKind::OrderError, "backward already run on this tape");
    const Node& ln = node(loss);
    require(ln.value.rows() == 1 && ln.value.cols() == 1, ErrorKind::ShapeError,
            "backward needs a scalar loss, got " + shape_str(ln.value));
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
    if (!ln.requires_grad) {
      backward_done_ = true;
      return;
    }
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    backward_done_ = true;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    require(!backward_done_, ErrorKind::OrderError, "cannot record after backward");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }
  Node& node(Var v) {
    require(v.id < nodes_.size(), ErrorKind::OrderError, "variable not recorded on this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.id < nodes_.size(), ErrorKind::OrderError, "variable not recorded on this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// --- primitive ops ----------------------------------------------------------

inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out = concm::matmul(t.value(a), t.value(b));
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
  });
}

/// a * b^T (row-wise inner products).
inline Var matmul_nt(Tape& t, Var a, Var b) {
  Matrix out = concm::matmul_nt(t.value(a), t.value(b));
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, concm::matmul(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, matmul_tn(g, tp.value(a)));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) + t.value(b);
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) - t.value(b);
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, g * -1.0);
  });
}

/// x (r x c) + bias (1 x c) broadcast over rows.
inline Var add_row(Tape& t, Var x, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(bias);
  require(bv.rows() == 1 && bv.cols() == xv.cols(), ErrorKind::ShapeError,
          "add_row: bias " + shape_str(bv) + " vs input " + shape_str(xv));
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv(0, j);
  }
  const Var ps[] = {x, bias};
  return t.record(std::move(out), ps, [x, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      tp.accumulate(bias, gb);
    }
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b](Tape& tp, const Matrix& g) {
    auto grad_for = [&](Var other) {
      Matrix r = g;
      const auto o = tp.value(other).data();
      for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] *= o[i];
      return r;
    };
    if (tp.requires_grad(a)) tp.accumulate(a, grad_for(b));
    if (tp.requires_grad(b)) tp.accumulate(b, grad_for(a));
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a) * s;
  const Var ps[] = {a};
  return t.record(std::move(out), ps,
                  [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

/// log(1 + e^x), computed stably.
inline Var softplus(Tape& t, Var a) {
  Matrix out = t.value(a);
  for (double& x : out.data()) x = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  const Var ps[] = {a};
  return t.record(std::move(out), ps, [a](Tape& tp, const Matrix& g) {
    Matrix r = g;
    const auto x = tp.value(a).data();
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double sig = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                     : std::exp(x[i]) / (1.0 + std::exp(x[i]));
      r.data()[i] *= sig;
    }
    tp.accumulate(a, r);
  });
}

/// Each row scaled to unit L2 norm. A zero row is an error.
inline Var normalize_rows(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out = av;
  Vector norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    norms[i] = norm2(av.row(i));
    require(norms[i] > 0.0 && std::isfinite(norms[i]), ErrorKind::DegenerateInput,
            "normalize_rows: zero or non-finite row " + std::to_string(i));
    for (double& x : out.row(i)) x /= norms[i];
  }
  const Var ps[] = {a};
  return t.record(std::move(out), ps, [a, norms = std::move(norms)](Tape& tp, const Matrix& g) {
    // y = x/|x|  =>  dx = (g - y (y.g)) / |x|; y recomputed from x.
    const Matrix& x = tp.value(a);
    Matrix r(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const auto xi = x.row(i);
      const auto gi = g.row(i);
      const double n = norms[i];
      double yg = 0.0;
      for (std::size_t j = 0; j < gi.size(); ++j) yg += (xi[j] / n) * gi[j];
      auto ri = r.row(i);
      for (std::size_t j = 0; j < gi.size(); ++j) ri[j] = (gi[j] - (xi[j] / n) * yg) / n;
    }
    tp.accumulate(a, r);
  });
}

namespace detail {

inline void check_mask(const Matrix& v, const Matrix* mask) {
  if (!mask) return;
  require_same_shape(v, *mask, "mask");
  for (std::size_t i = 0; i < mask->rows(); ++i) {
    bool any = false;
    for (double m : mask->row(i)) any = any || m != 0.0;
    require(any, ErrorKind::AllMasked, "softmax row " + std::to_string(i) + " fully masked");
  }
}

inline bool kept(const Matrix* mask, std::size_t i, std::size_t j) {
  return !mask || (*mask)(i, j) != 0.0;
}

}  // namespace detail

/// Row-wise softmax. With a mask, normalization runs only over entries whose
/// mask is nonzero and masked outputs are exactly zero.
inline Var softmax_rows(Tape& t, Var a, std::optional<Matrix> mask = std::nullopt) {
  const Matrix& av = t.value(a);
  const Matrix* mp = mask ? &*mask : nullptr;
  detail::check_mask(av, mp);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (detail::kept(mp, i, j)) mx = std::max(mx, av(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (detail::kept(mp, i, j)) s += (out(i, j) = std::exp(av(i, j) - mx));
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= s;
  }
  const Var ps[] = {a};
  Matrix y = out;
  return t.record(std::move(out), ps, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    // dx_j = y_j (g_j - sum_k y_k g_k); masked y_j = 0 so they get nothing.
    Matrix r(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) yg += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) r(i, j) = y(i, j) * (g(i, j) - yg);
    }
    tp.accumulate(a, r);
  });
}

/// Row-wise log-softmax; masked entries are excluded from the normalizer and
/// their outputs are set to zero (they carry no gradient).
inline Var log_softmax_rows(Tape& t, Var a, std::optional<Matrix> mask = std::nullopt) {
  const Matrix& av = t.value(a);
  const Matrix* mp = mask ? &*mask : nullptr;
  detail::check_mask(av, mp);
  Matrix out(av.rows(), av.cols());
  Matrix probs(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (detail::kept(mp, i, j)) mx = std::max(mx, av(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (detail::kept(mp, i, j)) s += std::exp(av(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < av.cols(); ++j) {
      if (!detail::kept(mp, i, j)) continue;
      out(i, j) = av(i, j) - lse;
      probs(i, j) = std::exp(out(i, j));
    }
  }
  const Var ps[] = {a};
  return t.record(std::move(out), ps,
                  [a, probs = std::move(probs), mask = std::move(mask)](Tape& tp, const Matrix& g) {
                    const Matrix* mp2 = mask ? &*mask : nullptr;
                    Matrix r(g.rows(), g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      double gs = 0.0;
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        if (detail::kept(mp2, i, j)) gs += g(i, j);
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        if (detail::kept(mp2, i, j)) r(i, j) = g(i, j) - probs(i, j) * gs;
                    }
                    tp.accumulate(a, r);
                  });
}

/// [a; b] stacked vertically.
inline Var concat_rows(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.cols() == bv.cols(), ErrorKind::ShapeError,
          "concat_rows: " + shape_str(av) + " / " + shape_str(bv));
  std::vector<double> data(av.storage());
  data.insert(data.end(), bv.storage().begin(), bv.storage().end());
  const std::size_t ra = av.rows();
  Matrix out(av.rows() + bv.rows(), av.cols(), std::move(data));
  const Var ps[] = {a, b};
  return t.record(std::move(out), ps, [a, b, ra](Tape& tp, const Matrix& g) {
    const std::size_t c = g.cols();
    if (tp.requires_grad(a)) {
      Matrix ga(ra, c, std::vector<double>(g.storage().begin(), g.storage().begin() + ra * c));
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Matrix gb(g.rows() - ra, c,
                std::vector<double>(g.storage().begin() + ra * c, g.storage().end()));
      tp.accumulate(b, gb);
    }
  });
}

/// Sum over each row -> r x 1.
inline Var row_sum(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (double x : av.row(i)) out(i, 0) += x;
  const Var ps[] = {a};
  return t.record(std::move(out), ps, [a](Tape& tp, const Matrix& g) {
    const Matrix& av2 = tp.value(a);
    Matrix r(av2.rows(), av2.cols());
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (double& x : r.row(i)) x = g(i, 0);
    tp.accumulate(a, r);
  });
}

/// Sum of all entries -> 1 x 1.
inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double x : t.value(a).data()) s += x;
  const Var ps[] = {a};
  return t.record(Matrix(1, 1, s), ps, [a](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(a);
    tp.accumulate(a, Matrix(av.rows(), av.cols(), g(0, 0)));
  });
}

/// Mean of all entries -> 1 x 1.
inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  require(n > 0, ErrorKind::ShapeError, "mean of empty matrix");
  return scale(t, sum(t, a), 1.0 / n);
}

}  // namespace concm::ad

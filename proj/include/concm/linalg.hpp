#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/matrix.hpp"

namespace concm {

/// Compact SVD m = W diag(sigma) V^T with W: d x n, V: n x n.
struct Svd {
  Matrix w;
  Vector sigma;  // descending, nonnegative
  Matrix v;
  int sweeps = 0;
};

struct SvdOptions {
  int max_sweeps = 60;
  /// Relative orthogonality threshold; <= 0 selects sqrt(d) * machine epsilon.
  double tolerance = 0.0;
};

namespace detail {

// Orthonormalize `cand` against rows [0, count) of `basis` (two passes of
// classical Gram-Schmidt). Returns the residual norm before normalization.
inline double orthogonalize_against(std::vector<Vector>& basis, std::size_t count, Vector& cand) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t k = 0; k < count; ++k) {
      const double c = dot(basis[k], cand);
      for (std::size_t i = 0; i < cand.size(); ++i) cand[i] -= c * basis[k][i];
    }
  }
  const double n = norm2(cand);
  if (n > 0.0)
    for (double& x : cand) x /= n;
  return n;
}

}  // namespace detail

/// One-sided (Hestenes) Jacobi SVD of a tall matrix. Singular vectors for
/// numerically zero singular values are completed to an orthonormal set, so
/// W^T W = I always holds. Each right singular vector has its first
/// nonzero component made positive.
inline Svd svd_compact(const Matrix& m, const SvdOptions& opts = {}) {
  const std::size_t d = m.rows(), n = m.cols();
  require(d >= n, ErrorKind::InvalidInput,
          "svd_compact requires rows >= cols, got " + shape_str(m));
  require(m.all_finite(), ErrorKind::InvalidInput, "svd_compact: non-finite entry");

  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double tol = opts.tolerance > 0.0 ? opts.tolerance : std::sqrt(static_cast<double>(d)) * eps;
  const double fro = frobenius_norm(m);
  const double negligible = (eps * fro) * (eps * fro);

  // Work on columns stored as contiguous rows.
  std::vector<Vector> cols(n, Vector(d));
  for (std::size_t j = 0; j < n; ++j) cols[j] = m.column(j);
  std::vector<Vector> vcols(n, Vector(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) vcols[j][j] = 1.0;

  int sweep = 0;
  bool rotated = n > 1;
  while (rotated) {
    if (sweep >= opts.max_sweeps)
      fail(ErrorKind::NoConvergence, "svd_compact: " + std::to_string(opts.max_sweeps) +
                                         " sweeps exceeded at tolerance " + std::to_string(tol));
    rotated = false;
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        Vector& up = cols[p];
        Vector& uq = cols[q];
        const double alpha = dot(up, up);
        const double beta = dot(uq, uq);
        const double gamma = dot(up, uq);
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < d; ++i) {
          const double a = up[i], b = uq[i];
          up[i] = c * a - s * b;
          uq[i] = s * a + c * b;
        }
        Vector& vp = vcols[p];
        Vector& vq = vcols[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double a = vp[i], b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
  }

  Vector norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(cols[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  const double smax = n ? norms[order[0]] : 0.0;
  const double rank_tol = smax * static_cast<double>(std::max(d, n)) * eps;

  Svd out;
  out.sweeps = sweep;
  out.sigma.resize(n);
  std::vector<Vector> wcols(n);
  std::vector<Vector> vsorted(n);
  std::size_t filled = 0;
  std::vector<std::size_t> deferred;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.sigma[k] = norms[j];
    vsorted[k] = vcols[j];
    if (norms[j] > rank_tol && norms[j] > 0.0) {
      wcols[k] = cols[j];
      for (double& x : wcols[k]) x /= norms[j];
    } else {
      deferred.push_back(k);
    }
  }
  // Complete the left basis for null directions.
  if (!deferred.empty()) {
    std::vector<Vector> basis;
    for (std::size_t k = 0; k < n; ++k)
      if (!wcols[k].empty()) basis.push_back(wcols[k]);
    filled = basis.size();
    for (std::size_t k : deferred) {
      // Axis with the largest residual; squared residuals sum to d - filled,
      // so the best one keeps at least sqrt((d - filled) / d).
      std::size_t axis = 0;
      double best = -1.0;
      for (std::size_t a = 0; a < d; ++a) {
        double r2 = 1.0;
        for (std::size_t b = 0; b < filled; ++b) r2 -= basis[b][a] * basis[b][a];
        if (r2 > best) best = r2, axis = a;
      }
      Vector cand(d, 0.0);
      cand[axis] = 1.0;
      const double res = detail::orthogonalize_against(basis, filled, cand);
      require(res > 0.0, ErrorKind::NoConvergence, "svd_compact: basis completion failed");
      basis.push_back(cand);
      ++filled;
      wcols[k] = cand;
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    for (double x : vsorted[k]) {
      if (std::abs(x) > 1e-12) {
        if (x < 0.0) {
          for (double& y : vsorted[k]) y = -y;
          for (double& y : wcols[k]) y = -y;
        }
        break;
      }
    }
  }
  out.w = Matrix::from_columns(wcols);
  out.v = Matrix::from_columns(vsorted);
  if (n == 0) {
    out.w = Matrix(d, 0);
    out.v = Matrix(0, 0);
  }
  return out;
}

/// Thin QR orthonormalization (modified Gram-Schmidt, two passes), with the
/// sign of each column fixed so that diag(R) > 0. Columns must be independent.
inline Matrix orthonormalize_columns(const Matrix& a) {
  const std::size_t d = a.rows(), n = a.cols();
  require(d >= n, ErrorKind::InvalidInput, "orthonormalize_columns needs rows >= cols");
  std::vector<Vector> q;
  q.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector c = a.column(j);
    const double orig = norm2(c);
    Vector col = c;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : q) {
        const double r = dot(b, col);
        for (std::size_t i = 0; i < d; ++i) col[i] -= r * b[i];
      }
    const double r = norm2(col);
    require(r > 1e-12 * std::max(orig, 1.0), ErrorKind::InvalidInput,
            "orthonormalize_columns: dependent columns");
    for (double& x : col) x /= r;
    q.push_back(std::move(col));
  }
  return Matrix::from_columns(q);
}

}  // namespace concm

#pragma once

// Target structures for the geometric space: simplex equiangular tight frames
// that are re-synthesized every session as the optimal frame closest to the
// current projected class means (orthogonal Procrustes via compact SVD).

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "concm/error.hpp"
#include "concm/linalg.hpp"
#include "concm/log.hpp"
#include "concm/matrix.hpp"
#include "concm/rng.hpp"

namespace concm {

/// d_g x N matrix whose column i is the unit target vector of class_ids[i].
struct StructureMatrix {
  Matrix vectors;
  std::vector<int> class_ids;

  std::size_t dim() const noexcept { return vectors.rows(); }
  std::size_t num_classes() const noexcept { return vectors.cols(); }
  Vector column(std::size_t i) const { return vectors.column(i); }
};

enum class ColumnOrigin { Historical, Novel };

/// Projected class means before re-synthesis. Historical columns are copies
/// of the previous session's targets.
struct InitialStructure {
  Matrix vectors;
  std::vector<int> class_ids;
  std::vector<ColumnOrigin> origin;

  std::size_t dim() const noexcept { return vectors.rows(); }
  std::size_t num_classes() const noexcept { return vectors.cols(); }
};

struct StructureUpdate {
  StructureMatrix structure;
  Matrix rotation;  // U_t, column-orthonormal d_g x N
  bool rank_deficient = false;
};

/// Assemble the initial structure. `class_ids` lists every class of the
/// session in order; `projected_means` holds one column per class (only the
/// columns of classes not covered by `prev` are read). Columns for classes
/// present in `prev` are copied from it bit-for-bit.
inline InitialStructure initial_structure(const std::optional<StructureMatrix>& prev,
                                          const std::vector<int>& class_ids,
                                          const Matrix& projected_means) {
  require(projected_means.cols() == class_ids.size(), ErrorKind::ShapeError,
          "initial_structure: " + std::to_string(class_ids.size()) + " classes but " +
              std::to_string(projected_means.cols()) + " embedded columns");
  const std::size_t d = projected_means.rows();
  InitialStructure out{Matrix(d, class_ids.size()), class_ids, {}};
  std::size_t old_count = 0;
  if (prev) {
    require(prev->dim() == d, ErrorKind::ShapeError, "initial_structure: dimension changed");
    old_count = prev->num_classes();
    require(old_count <= class_ids.size(), ErrorKind::MissingClass,
            "initial_structure: previous structure has more classes than the session");
    for (std::size_t i = 0; i < old_count; ++i) {
      require(prev->class_ids[i] == class_ids[i], ErrorKind::MissingClass,
              "initial_structure: class " + std::to_string(prev->class_ids[i]) +
                  " missing or out of order");
      out.vectors.set_column(i, prev->vectors.column(i));
      out.origin.push_back(ColumnOrigin::Historical);
    }
  }
  for (std::size_t i = old_count; i < class_ids.size(); ++i) {
    Vector c = projected_means.column(i);
    const double n = norm2(c);
    require(n > 0.0 && std::isfinite(n), ErrorKind::DegenerateEmbedding,
            "initial_structure: zero-norm projection for class " + std::to_string(class_ids[i]));
    for (double& x : c) x /= n;
    out.vectors.set_column(i, c);
    out.origin.push_back(ColumnOrigin::Novel);
  }
  return out;
}

/// Map a column-orthonormal U to sqrt(N/(N-1)) U (I - 11^T/N).
inline Matrix simplex_from_orthonormal(const Matrix& u) {
  const std::size_t n = u.cols();
  const double k = std::sqrt(static_cast<double>(n) / static_cast<double>(n - 1));
  return matmul(u, centering_matrix(n)) * k;
}

/// Optimal simplex structure closest (in summed column inner products) to the
/// initial structure.
inline StructureUpdate theorem1_update(const InitialStructure& init, std::uint64_t seed = 0) {
  const std::size_t n = init.num_classes(), d = init.dim();
  require(n >= 2, ErrorKind::InvalidInput, "structure update needs at least two classes");
  require(d > n, ErrorKind::DimensionTooSmall,
          "geometric dimension " + std::to_string(d) + " must exceed class count " +
              std::to_string(n));
  require(init.vectors.all_finite(), ErrorKind::InvalidInput, "initial structure not finite");

  Matrix centered = matmul(init.vectors, centering_matrix(n));
  Svd svd = svd_compact(centered);

  // Centering removes one direction, so full rank here means rank n - 1.
  const double smax = svd.sigma.front();
  const bool deficient = !(smax > 0.0) || svd.sigma[n - 2] <= 1e-9 * smax;
  if (deficient) {
    log::warn("structure update: centered initial structure has rank < " + std::to_string(n - 1) +
              "; perturbing with seeded 1e-10 noise");
    Rng rng(seed, 0x5EEDull);
    for (double& x : centered.data()) x += 1e-10 * rng.normal();
    svd = svd_compact(centered);
  }

  Matrix u = matmul_nt(svd.w, svd.v);
  StructureUpdate out;
  out.structure = {simplex_from_orthonormal(u), init.class_ids};
  out.rotation = std::move(u);
  out.rank_deficient = deficient;
  return out;
}

/// max_{i,j} |d_i.d_j - (N/(N-1) [i==j] - 1/(N-1))|. `frame_size` overrides N
/// when the columns are a prefix of a larger frame.
inline double check_geometric_optimality(const StructureMatrix& s,
                                         std::optional<std::size_t> frame_size = std::nullopt) {
  const std::size_t n = s.num_classes();
  const double frame = static_cast<double>(frame_size.value_or(n));
  const Matrix gram = matmul_tn(s.vectors, s.vectors);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double target =
          frame < 2.0 ? (i == j ? 1.0 : 0.0) : (i == j ? 1.0 : -1.0 / (frame - 1.0));
      worst = std::max(worst, std::abs(gram(i, j) - target));
    }
  }
  return worst;
}

/// Sum of column inner products tr(init^T target).
inline double matching_objective(const Matrix& init, const Matrix& target) {
  require_same_shape(init, target, "matching_objective");
  double s = 0.0;
  for (std::size_t i = 0; i < init.rows(); ++i)
    for (std::size_t j = 0; j < init.cols(); ++j) s += init(i, j) * target(i, j);
  return s;
}

/// Structure matching rate: mean cosine between corresponding columns.
inline double smr(const InitialStructure& init, const StructureMatrix& target) {
  require(init.vectors.same_shape(target.vectors), ErrorKind::ShapeError,
          "smr: " + shape_str(init.vectors) + " vs " + shape_str(target.vectors));
  require(init.class_ids == target.class_ids, ErrorKind::ShapeError, "smr: class order differs");
  const std::size_t n = init.num_classes();
  require(n > 0, ErrorKind::ShapeError, "smr: empty structure");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cosine(init.vectors.column(i), target.vectors.column(i));
  return s / static_cast<double>(n);
}

/// Haar-random orthonormal d x n frame (QR of a seeded Gaussian matrix).
inline Matrix random_orthonormal(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0x0A7Bull);
  Matrix g(d, n);
  for (double& x : g.data()) x = rng.normal();
  return orthonormalize_columns(g);
}

/// Optimal structure built from a random orthonormal frame, ignoring any
/// initial structure (the "random matching" baseline).
inline StructureMatrix random_optimal_structure(std::size_t n, std::size_t d, std::uint64_t seed,
                                                std::vector<int> class_ids = {}) {
  require(d > n, ErrorKind::DimensionTooSmall,
          "geometric dimension " + std::to_string(d) + " must exceed class count " +
              std::to_string(n));
  require(n >= 2, ErrorKind::InvalidInput, "random structure needs at least two classes");
  if (class_ids.empty())
    for (std::size_t i = 0; i < n; ++i) class_ids.push_back(static_cast<int>(i));
  return {simplex_from_orthonormal(random_orthonormal(d, n, seed)), std::move(class_ids)};
}

/// First `n` columns of a fixed frame allocated up front for `frame.num_classes()`
/// classes (the "fixed structure" baseline).
inline StructureMatrix structure_prefix(const StructureMatrix& frame, std::size_t n) {
  require(n <= frame.num_classes(), ErrorKind::InvalidConfig,
          "fixed structure holds " + std::to_string(frame.num_classes()) + " classes, need " +
              std::to_string(n));
  StructureMatrix out{Matrix(frame.dim(), n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    out.vectors.set_column(i, frame.vectors.column(i));
    out.class_ids.push_back(frame.class_ids[i]);
  }
  return out;
}

}  // namespace concm

#pragma once

#include "late/error.hpp"
#include "late/types.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace late {

/// Gaussian RBF exp(-||x - c||^2 / (2 h^2)). Accepts any pair of conformable
/// Eigen vector expressions.
template <typename DerivedX, typename DerivedC>
double gaussian_kernel(const Eigen::MatrixBase<DerivedX>& x,
                       const Eigen::MatrixBase<DerivedC>& c, double h) {
  if (x.size() != c.size()) {
    throw InputError("gaussian_kernel: dimension mismatch (" +
                     std::to_string(x.size()) + " vs " + std::to_string(c.size()) + ")");
  }
  if (!(h > 0.0)) {
    throw InputError("gaussian_kernel: bandwidth must be positive, got " + std::to_string(h));
  }
  const double d2 = (x.derived() - c.derived()).squaredNorm();
  return std::exp(-d2 / (2.0 * h * h));
}

/// Gaussian kernel centers plus a shared bandwidth; the linear-in-parameter
/// model class is spanned by one RBF per center row.
struct KernelBasis {
  Matrix centers;   // m x q_x, one center per row
  double bandwidth = 1.0;

  Index size() const { return centers.rows(); }
  Index dim() const { return centers.cols(); }

  void validate() const {
    if (centers.rows() < 1) throw InputError("KernelBasis: needs at least one center");
    if (!(bandwidth > 0.0)) {
      throw InputError("KernelBasis: bandwidth must be positive, got " +
                       std::to_string(bandwidth));
    }
    if (!centers.allFinite()) throw InputError("KernelBasis: non-finite center");
  }
};

/// Coefficients over a KernelBasis; predicts coefficients . phi(x).
struct FittedModel {
  KernelBasis basis;
  Vector coefficients;

  void validate() const {
    basis.validate();
    if (coefficients.size() != basis.size()) {
      throw InputError("FittedModel: coefficient length " +
                       std::to_string(coefficients.size()) + " != basis size " +
                       std::to_string(basis.size()));
    }
    if (!coefficients.allFinite()) throw InputError("FittedModel: non-finite coefficient");
  }
};

/// Draw m center rows from `samples`: without replacement when m <= n, with
/// replacement otherwise. Deterministic given the generator state.
inline Matrix select_centers(const Matrix& samples, Index m, std::mt19937_64& rng) {
  const Index n = samples.rows();
  if (n < 1) throw InputError("select_centers: empty sample set");
  if (m < 1) throw InputError("select_centers: m must be >= 1");

  Matrix centers(m, samples.cols());
  if (m <= n) {
    // Partial Fisher-Yates over row indices.
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index i = 0; i < m; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      centers.row(i) = samples.row(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (Index i = 0; i < m; ++i) centers.row(i) = samples.row(pick(rng));
  }
  return centers;
}

/// Squared Euclidean distances, entry (i, j) = ||points_i - centers_j||^2.
/// Computed per-pair so that identical rows give an exact zero.
inline Matrix pairwise_sq_dist(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols()) {
    throw InputError("pairwise_sq_dist: dimension mismatch (" +
                     std::to_string(points.cols()) + " vs " +
                     std::to_string(centers.cols()) + ")");
  }
  Matrix d2(points.rows(), centers.rows());
  for (Index j = 0; j < centers.rows(); ++j) {
    d2.col(j) = (points.rowwise() - centers.row(j)).rowwise().squaredNorm();
  }
  return d2;
}

/// Kernel values from precomputed squared distances.
inline Matrix kernel_from_sq_dist(const Matrix& d2, double h) {
  if (!(h > 0.0)) {
    throw InputError("kernel_from_sq_dist: bandwidth must be positive, got " +
                     std::to_string(h));
  }
  return (-d2 / (2.0 * h * h)).array().exp().matrix();
}

/// Design matrix with entry (i, j) = gaussian_kernel(points_i, centers_j, h).
inline Matrix design_matrix(const KernelBasis& basis, const Matrix& points) {
  basis.validate();
  if (points.cols() != basis.dim()) {
    throw InputError("design_matrix: point dimension " + std::to_string(points.cols()) +
                     " != basis dimension " + std::to_string(basis.dim()));
  }
  return kernel_from_sq_dist(pairwise_sq_dist(points, basis.centers), basis.bandwidth);
}

inline double predict(const FittedModel& model, const Vector& x) {
  if (x.size() != model.basis.dim()) {
    throw InputError("predict: covariate dimension " + std::to_string(x.size()) +
                     " != basis dimension " + std::to_string(model.basis.dim()));
  }
  double acc = 0.0;
  for (Index j = 0; j < model.basis.size(); ++j) {
    acc += model.coefficients[j] *
           gaussian_kernel(x.transpose(), model.basis.centers.row(j), model.basis.bandwidth);
  }
  return acc;
}

inline Vector predict(const FittedModel& model, const Matrix& points) {
  return design_matrix(model.basis, points) * model.coefficients;
}

/// Solve (M + lambda I) w = v by LU factorization. Retries once with a jitter
/// of 1e-10 tr(M)/m on the diagonal; failing the residual bound after that
/// raises SingularSystemError with the reciprocal condition estimate.
inline Vector solve_ridge_system(const Matrix& m_mat, const Vector& v, double lambda) {
  if (m_mat.rows() != m_mat.cols()) throw InputError("solve_ridge_system: matrix not square");
  if (v.size() != m_mat.rows()) throw InputError("solve_ridge_system: rhs not conformable");
  if (lambda < 0.0) throw InputError("solve_ridge_system: lambda must be >= 0");

  const Index m = m_mat.rows();
  const double tol = 1e-8 * (1.0 + v.norm());
  const double jitter = 1e-10 * m_mat.trace() / static_cast<double>(m);

  Matrix base = m_mat;
  base.diagonal().array() += lambda;

  double rcond = 0.0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Matrix system = base;
    if (attempt == 1) system.diagonal().array() += jitter;
    Eigen::PartialPivLU<Matrix> lu(system);
    Vector w = lu.solve(v);
    // Residual is always checked against the un-jittered system.
    if (w.allFinite() && (base * w - v).norm() <= tol) return w;
    rcond = lu.rcond();
  }
  throw SingularSystemError(
      "solve_ridge_system: factorization failed at lambda=" + std::to_string(lambda) +
          " (rcond=" + std::to_string(rcond) + ")",
      lambda, rcond);
}

/// True when the symmetric part of M + lambda I is positive definite, i.e.
/// the quadratic form it solves has a proper minimizer.
inline bool ridge_system_positive_definite(const Matrix& m_mat, double lambda) {
  Matrix sym = 0.5 * (m_mat + m_mat.transpose());
  sym.diagonal().array() += lambda;
  Eigen::LDLT<Matrix> ldlt(sym);
  return ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
}

/// Matrix-RHS variant; column j solves (M + lambda I) w_j = V_j.
inline Matrix solve_ridge_system(const Matrix& m_mat, const Matrix& v, double lambda) {
  if (m_mat.rows() != m_mat.cols()) throw InputError("solve_ridge_system: matrix not square");
  if (v.rows() != m_mat.rows()) throw InputError("solve_ridge_system: rhs not conformable");
  if (lambda < 0.0) throw InputError("solve_ridge_system: lambda must be >= 0");

  const Index m = m_mat.rows();
  const double tol = 1e-8 * (1.0 + v.norm());
  const double jitter = 1e-10 * m_mat.trace() / static_cast<double>(m);

  Matrix base = m_mat;
  base.diagonal().array() += lambda;

  double rcond = 0.0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Matrix system = base;
    if (attempt == 1) system.diagonal().array() += jitter;
    Eigen::PartialPivLU<Matrix> lu(system);
    Matrix w = lu.solve(v);
    if (w.allFinite() && (base * w - v).norm() <= tol) return w;
    rcond = lu.rcond();
  }
  throw SingularSystemError(
      "solve_ridge_system: factorization failed at lambda=" + std::to_string(lambda) +
          " (rcond=" + std::to_string(rcond) + ")",
      lambda, rcond);
}

}  // namespace late

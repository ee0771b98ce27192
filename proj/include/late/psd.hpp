#pragma once

#include "late/dataset.hpp"
#include "late/kernel.hpp"

#include <cmath>
#include <string>

namespace late {

/// Range restriction for the propensity-score difference: [-0.5, 0.5] in the
/// general two-regime design, [0, 0.5] when regime 0 assigns no one.
enum class PsdMode { general, one_experiment };

inline std::string to_string(PsdMode mode) {
  return mode == PsdMode::general ? "general" : "1e2rd";
}

inline PsdMode psd_mode_from_string(const std::string& s) {
  if (s == "general") return PsdMode::general;
  if (s == "1e2rd") return PsdMode::one_experiment;
  throw InputError("unknown PSD mode '" + s + "' (valid: general, 1e2rd)");
}

/// Constrained estimate of pi(X) = E[T|X]. plus_model holds the coefficients
/// of the pi+0.5 component (general) or of pi itself (one-experiment);
/// minus_model holds the -pi+0.5 component. All coefficients are >= 0.
struct PsdEstimate {
  PsdMode mode = PsdMode::general;
  FittedModel plus_model;
  FittedModel minus_model;
  double epsilon = 1e-12;

  const KernelBasis& basis() const { return plus_model.basis; }
};

namespace detail {

inline double psd_from_components(PsdMode mode, double plus_val, double minus_val,
                                  double epsilon) {
  if (mode == PsdMode::general) {
    const double denom = plus_val + minus_val;
    if (denom < epsilon) return 0.0;
    return plus_val / denom - 0.5;
  }
  const double denom = 2.0 * (plus_val + minus_val);
  if (denom < epsilon) return 0.0;
  return plus_val / denom;
}

}  // namespace detail

inline double predict_psd(const PsdEstimate& est, const Vector& x) {
  double plus_val = 0.0, minus_val = 0.0;
  const KernelBasis& basis = est.plus_model.basis;
  if (x.size() != basis.dim()) {
    throw InputError("predict_psd: covariate dimension " + std::to_string(x.size()) +
                     " != basis dimension " + std::to_string(basis.dim()));
  }
  for (Index j = 0; j < basis.size(); ++j) {
    const double k = gaussian_kernel(x.transpose(), basis.centers.row(j), basis.bandwidth);
    plus_val += est.plus_model.coefficients[j] * k;
    minus_val += est.minus_model.coefficients[j] * k;
  }
  return detail::psd_from_components(est.mode, plus_val, minus_val, est.epsilon);
}

/// Vectorized prediction from a precomputed design matrix (rows = points).
inline Vector predict_psd_from_design(const PsdEstimate& est, const Matrix& phi) {
  const Vector plus_vals = phi * est.plus_model.coefficients;
  const Vector minus_vals = phi * est.minus_model.coefficients;
  Vector out(phi.rows());
  for (Index i = 0; i < phi.rows(); ++i) {
    out[i] = detail::psd_from_components(est.mode, plus_vals[i], minus_vals[i], est.epsilon);
  }
  return out;
}

inline Vector predict_psd(const PsdEstimate& est, const Matrix& points) {
  return predict_psd_from_design(est, design_matrix(est.plus_model.basis, points));
}

/// Clamp |pi| away from zero before inversion. One-experiment mode floors the
/// value at `threshold`; general mode clamps the magnitude, keeping the sign
/// (sign(0) := +1).
inline double trim_psd(double value, double threshold, PsdMode mode) {
  if (!(threshold > 0.0 && threshold <= 0.5)) {
    throw InputError("trim_psd: threshold must lie in (0, 0.5], got " +
                     std::to_string(threshold));
  }
  if (mode == PsdMode::one_experiment) return std::max(value, threshold);
  const double sign = value < 0.0 ? -1.0 : 1.0;
  return sign * std::max(std::abs(value), threshold);
}

/// Core fit from precomputed design matrices (phi_t over treatment rows,
/// phi_u over outcome rows).
inline PsdEstimate fit_psd_with(const Matrix& phi_t, const Matrix& phi_u,
                                const CombinedDataset& treat, const CombinedDataset& outcome,
                                const KernelBasis& basis, double lambda, PsdMode mode) {
  const double n_t = static_cast<double>(treat.rows());
  const double n_u = static_cast<double>(outcome.rows());

  const Matrix weighted_phi_u = outcome.weight.asDiagonal() * phi_u;
  const Matrix gram = phi_u.transpose() * weighted_phi_u / n_u;
  const Vector m_t = phi_t.transpose() * (treat.weight.cwiseProduct(treat.value)) / n_t;
  const Vector m_u = weighted_phi_u.colwise().sum().transpose() / n_u;

  const Vector rhs_plus = mode == PsdMode::general ? Vector(m_t + 0.5 * m_u) : m_t;
  const Vector rhs_minus = -m_t + 0.5 * m_u;

  PsdEstimate est;
  est.mode = mode;
  est.plus_model = {basis, solve_ridge_system(gram, rhs_plus, lambda).cwiseMax(0.0)};
  est.minus_model = {basis, solve_ridge_system(gram, rhs_minus, lambda).cwiseMax(0.0)};

  const bool plus_zero = (est.plus_model.coefficients.array() == 0.0).all();
  const bool minus_zero = (est.minus_model.coefficients.array() == 0.0).all();
  // A fit carries no signal when the normalization denominator vanishes
  // everywhere, or (one-experiment) when the pi numerator clips to zero.
  if ((plus_zero && minus_zero) || (mode == PsdMode::one_experiment && plus_zero)) {
    throw DegenerateFitError("PSD fit degenerate: clipped coefficients all zero (mode " +
                             to_string(mode) + ", lambda=" + std::to_string(lambda) + ")");
  }
  return est;
}

inline PsdEstimate fit_psd(const CombinedDataset& treat, const CombinedDataset& outcome,
                           const KernelBasis& basis, double lambda, PsdMode mode) {
  basis.validate();
  return fit_psd_with(design_matrix(basis, treat.x), design_matrix(basis, outcome.x), treat,
                      outcome, basis, lambda, mode);
}

/// Appendix-style direct estimation of pi(X) + 0.5 / -pi(X) + 0.5 with the
/// [-0.5, 0.5] range restriction.
inline PsdEstimate fit_psd_general(const CombinedDataset& treat, const CombinedDataset& outcome,
                                   const KernelBasis& basis, double lambda) {
  return fit_psd(treat, outcome, basis, lambda, PsdMode::general);
}

/// One-experiment variant with the tightened [0, 0.5] restriction.
inline PsdEstimate fit_psd_1e2rd(const CombinedDataset& treat, const CombinedDataset& outcome,
                                 const KernelBasis& basis, double lambda) {
  return fit_psd(treat, outcome, basis, lambda, PsdMode::one_experiment);
}

}  // namespace late

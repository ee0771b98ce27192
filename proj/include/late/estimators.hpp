#pragma once

#include "late/dataset.hpp"
#include "late/kernel.hpp"
#include "late/psd.hpp"

#include <memory>
#include <utility>

namespace late {

/// Minimax least-squares fit: outer model f over basis_f, inner adversary g
/// over basis_g, both in closed form.
struct DlsFit {
  FittedModel f_model;
  FittedModel g_model;
  double lambda_f = 0.0;
  double lambda_g = 0.0;
};

enum class WeightMode { dwls, iwls };

/// Weighted least-squares fit; the weight is the pre-estimated PSD, used
/// directly (dwls) or inverted after trimming (iwls).
struct WeightedFit {
  FittedModel f_model;
  std::shared_ptr<const PsdEstimate> weight_source;
  WeightMode mode = WeightMode::dwls;
  double lambda_f = 0.0;
  double trim_threshold = 0.0;  // iwls only
};

/// Plug-in ratio estimator: kernel ridge fit of nu over the outcome side,
/// divided by the trimmed PSD at prediction time.
struct SepFit {
  FittedModel nu_model;
  PsdEstimate psd;
  double trim_threshold = 0.15;
  double lambda_nu = 0.0;
};

namespace detail {

/// Weighted second-moment matrix (1/n) Phi^T diag(w) Phi.
inline Matrix weighted_gram(const Matrix& phi, const Vector& w) {
  return phi.transpose() * (w.asDiagonal() * phi) / static_cast<double>(phi.rows());
}

/// Weighted first moment (1/n) Phi^T w.
inline Vector weighted_mean(const Matrix& phi, const Vector& w) {
  return phi.transpose() * w / static_cast<double>(phi.rows());
}

}  // namespace detail

/// DLS moments from precomputed design matrices: phi_t over treatment rows
/// (basis_f), psi_t/psi_u over treatment/outcome rows (basis_g).
inline DlsFit fit_dls_with(const Matrix& phi_t, const Matrix& psi_t, const Matrix& psi_u,
                           const CombinedDataset& treat, const CombinedDataset& outcome,
                           const KernelBasis& basis_f, const KernelBasis& basis_g,
                           double lambda_f, double lambda_g) {
  const Vector rt = treat.weight.cwiseProduct(treat.value);
  const Matrix a = phi_t.transpose() * (rt.asDiagonal() * psi_t) /
                   static_cast<double>(treat.rows());
  const Vector b = detail::weighted_mean(psi_u, outcome.weight.cwiseProduct(outcome.value));
  const Matrix c = detail::weighted_gram(psi_u, outcome.weight);

  // alpha solves {A (C + lambda_g I)^-1 A^T + lambda_f I} alpha = A (C + lambda_g I)^-1 b.
  const Matrix c_inv_at = solve_ridge_system(c, Matrix(a.transpose()), lambda_g);
  const Vector c_inv_b = solve_ridge_system(c, b, lambda_g);
  const Vector alpha = solve_ridge_system(Matrix(a * c_inv_at), Vector(a * c_inv_b), lambda_f);
  const Vector beta = solve_ridge_system(c, Vector(a.transpose() * alpha - b), lambda_g);

  return {{basis_f, alpha}, {basis_g, beta}, lambda_f, lambda_g};
}

inline DlsFit fit_dls(const CombinedDataset& treat, const CombinedDataset& outcome,
                      const KernelBasis& basis_f, const KernelBasis& basis_g, double lambda_f,
                      double lambda_g) {
  basis_f.validate();
  basis_g.validate();
  return fit_dls_with(design_matrix(basis_f, treat.x), design_matrix(basis_g, treat.x),
                      design_matrix(basis_g, outcome.x), treat, outcome, basis_f, basis_g,
                      lambda_f, lambda_g);
}

/// Normal-equation moments of the weighted least-squares family; w_t, w_u are
/// the per-row weights (the PSD for dwls, its trimmed inverse for iwls).
struct WeightedMoments {
  Matrix a_tilde;
  Vector b_tilde;
};

inline WeightedMoments weighted_ls_moments(const Matrix& phi_t, const Matrix& phi_u,
                                           const CombinedDataset& treat,
                                           const CombinedDataset& outcome, const Vector& w_t,
                                           const Vector& w_u) {
  return {detail::weighted_gram(phi_t,
                                treat.weight.cwiseProduct(treat.value).cwiseProduct(w_t)),
          detail::weighted_mean(phi_u,
                                outcome.weight.cwiseProduct(outcome.value).cwiseProduct(w_u))};
}

inline Vector weighted_ls_coefficients(const Matrix& phi_t, const Matrix& phi_u,
                                       const CombinedDataset& treat,
                                       const CombinedDataset& outcome, const Vector& w_t,
                                       const Vector& w_u, double lambda_f) {
  const WeightedMoments m = weighted_ls_moments(phi_t, phi_u, treat, outcome, w_t, w_u);
  return solve_ridge_system(m.a_tilde, m.b_tilde, lambda_f);
}

inline WeightedFit fit_dwls_with(const Matrix& phi_t, const Matrix& phi_u,
                                 const CombinedDataset& treat, const CombinedDataset& outcome,
                                 const Vector& pi_t, const Vector& pi_u,
                                 const KernelBasis& basis,
                                 std::shared_ptr<const PsdEstimate> psd, double lambda_f) {
  Vector alpha =
      weighted_ls_coefficients(phi_t, phi_u, treat, outcome, pi_t, pi_u, lambda_f);
  return {{basis, std::move(alpha)}, std::move(psd), WeightMode::dwls, lambda_f, 0.0};
}

/// DWLS: the estimated PSD enters as a direct multiplicative weight, untrimmed.
inline WeightedFit fit_dwls(const CombinedDataset& treat, const CombinedDataset& outcome,
                            const KernelBasis& basis, const PsdEstimate& psd, double lambda_f) {
  basis.validate();
  return fit_dwls_with(design_matrix(basis, treat.x), design_matrix(basis, outcome.x), treat,
                       outcome, predict_psd(psd, treat.x), predict_psd(psd, outcome.x), basis,
                       std::make_shared<PsdEstimate>(psd), lambda_f);
}

inline Vector inverse_trimmed(const Vector& pi, double trim, PsdMode mode) {
  Vector w(pi.size());
  for (Index i = 0; i < pi.size(); ++i) w[i] = 1.0 / trim_psd(pi[i], trim, mode);
  return w;
}

inline WeightedFit fit_iwls_with(const Matrix& phi_t, const Matrix& phi_u,
                                 const CombinedDataset& treat, const CombinedDataset& outcome,
                                 const Vector& pi_t, const Vector& pi_u,
                                 const KernelBasis& basis,
                                 std::shared_ptr<const PsdEstimate> psd, double trim,
                                 double lambda_f) {
  const PsdMode mode = psd->mode;
  Vector alpha = weighted_ls_coefficients(phi_t, phi_u, treat, outcome,
                                          inverse_trimmed(pi_t, trim, mode),
                                          inverse_trimmed(pi_u, trim, mode), lambda_f);
  return {{basis, std::move(alpha)}, std::move(psd), WeightMode::iwls, lambda_f, trim};
}

/// IWLS: weights by the inverse of the trimmed PSD.
inline WeightedFit fit_iwls(const CombinedDataset& treat, const CombinedDataset& outcome,
                            const KernelBasis& basis, const PsdEstimate& psd, double trim,
                            double lambda_f) {
  basis.validate();
  if (!(trim > 0.0)) throw InputError("fit_iwls: trim threshold must be positive");
  return fit_iwls_with(design_matrix(basis, treat.x), design_matrix(basis, outcome.x), treat,
                       outcome, predict_psd(psd, treat.x), predict_psd(psd, outcome.x), basis,
                       std::make_shared<PsdEstimate>(psd), trim, lambda_f);
}

inline SepFit fit_sep_with(const Matrix& phi_u, const CombinedDataset& outcome,
                           const KernelBasis& basis_nu, PsdEstimate psd, double lambda_nu,
                           double trim) {
  const Matrix gram = detail::weighted_gram(phi_u, outcome.weight);
  const Vector m = detail::weighted_mean(phi_u, outcome.weight.cwiseProduct(outcome.value));
  Vector alpha = solve_ridge_system(gram, m, lambda_nu);
  return {{basis_nu, std::move(alpha)}, std::move(psd), trim, lambda_nu};
}

/// Separate estimation: weighted kernel ridge for nu = E[U|X]; prediction
/// divides by the trimmed PSD.
inline SepFit fit_sep(const CombinedDataset& outcome, const KernelBasis& basis_nu,
                      const PsdEstimate& psd, double lambda_nu, double trim) {
  basis_nu.validate();
  if (!(trim > 0.0)) throw InputError("fit_sep: trim threshold must be positive");
  return fit_sep_with(design_matrix(basis_nu, outcome.x), outcome, basis_nu, psd, lambda_nu,
                      trim);
}

inline double predict(const DlsFit& fit, const Vector& x) { return predict(fit.f_model, x); }
inline Vector predict(const DlsFit& fit, const Matrix& points) {
  return predict(fit.f_model, points);
}

inline double predict(const WeightedFit& fit, const Vector& x) {
  return predict(fit.f_model, x);
}
inline Vector predict(const WeightedFit& fit, const Matrix& points) {
  return predict(fit.f_model, points);
}

inline double predict(const SepFit& fit, const Vector& x) {
  return predict(fit.nu_model, x) /
         trim_psd(predict_psd(fit.psd, x), fit.trim_threshold, fit.psd.mode);
}
inline Vector predict(const SepFit& fit, const Matrix& points) {
  const Vector nu = predict(fit.nu_model, points);
  const Vector pi = predict_psd(fit.psd, points);
  Vector out(points.rows());
  for (Index i = 0; i < points.rows(); ++i) {
    out[i] = nu[i] / trim_psd(pi[i], fit.trim_threshold, fit.psd.mode);
  }
  return out;
}

}  // namespace late

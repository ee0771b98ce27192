#pragma once

#include "late/dataset.hpp"
#include "late/estimators.hpp"
#include "late/kernel.hpp"
#include "late/psd.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <utility>
#include <vector>

namespace late {

struct SearchSpace {
  double h_min = 1.0;
  double h_max = 10.0;
  double lambda_min = 1e-5;
  double lambda_max = 1e5;
  int budget = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(h_min > 0.0 && h_max >= h_min)) throw InputError("SearchSpace: bad bandwidth range");
    if (!(lambda_min > 0.0 && lambda_max >= lambda_min)) {
      throw InputError("SearchSpace: bad lambda range");
    }
    if (budget < 1) throw InputError("SearchSpace: budget must be >= 1");
  }
};

struct Candidate {
  double bandwidth = 1.0;
  double lambda = 0.0;
};

struct SelectionResult {
  Candidate best{};
  double best_criterion = std::numeric_limits<double>::infinity();
  std::vector<std::pair<Candidate, double>> trace;  // draw order; failed fits record +inf
};

/// Seeded random search: bandwidth uniform, lambda log-uniform. `eval` maps a
/// Candidate to its validation criterion; fit failures (late::Error) score
/// +inf. Ties keep the first-drawn candidate.
template <typename Eval>
SelectionResult random_search(const SearchSpace& space, Eval&& eval) {
  space.validate();
  std::mt19937_64 rng(space.seed);
  std::uniform_real_distribution<double> draw_h(space.h_min, space.h_max);
  std::uniform_real_distribution<double> draw_loglam(std::log(space.lambda_min),
                                                     std::log(space.lambda_max));

  std::vector<Candidate> candidates(static_cast<std::size_t>(space.budget));
  for (auto& c : candidates) c = {draw_h(rng), std::exp(draw_loglam(rng))};

  SelectionResult result;
  result.trace.reserve(candidates.size());
  for (const auto& c : candidates) {
    double crit = std::numeric_limits<double>::infinity();
    try {
      crit = eval(c);
      if (!std::isfinite(crit)) crit = std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      // recorded as +inf
    }
    result.trace.emplace_back(c, crit);
    if (crit < result.best_criterion) {
      result.best_criterion = crit;
      result.best = c;
    }
  }
  if (!std::isfinite(result.best_criterion)) {
    throw ExhaustedSearchError("random_search: all " + std::to_string(space.budget) +
                               " candidates failed");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Validation criteria. The *_with forms take prediction vectors evaluated at
// the validation rows; the object forms evaluate the models themselves.
// ---------------------------------------------------------------------------

/// Empirical minimax objective J(f, g) without regularizers.
inline double criterion_dls_with(const Vector& f_t, const Vector& g_t, const Vector& g_u,
                                 const CombinedDataset& val_t, const CombinedDataset& val_u) {
  const double n_t = static_cast<double>(val_t.rows());
  const double n_u = static_cast<double>(val_u.rows());
  const double cross = (val_t.weight.cwiseProduct(val_t.value).cwiseProduct(f_t)).dot(g_t);
  const double linear = (val_u.weight.cwiseProduct(val_u.value)).dot(g_u);
  const double square = val_u.weight.dot(g_u.cwiseAbs2());
  return 2.0 * cross / n_t - 2.0 * linear / n_u - square / n_u;
}

inline double criterion_dls(const DlsFit& fit, const CombinedDataset& val_t,
                            const CombinedDataset& val_u) {
  return criterion_dls_with(predict(fit.f_model, val_t.x), predict(fit.g_model, val_t.x),
                            predict(fit.g_model, val_u.x), val_t, val_u);
}

/// Weighted least-squares objective up to its ignored constant; w holds the
/// per-row weight (the PSD for dwls, its trimmed inverse for iwls).
inline double criterion_weighted_with(const Vector& f_t, const Vector& f_u, const Vector& w_t,
                                      const Vector& w_u, const CombinedDataset& val_t,
                                      const CombinedDataset& val_u) {
  const double n_t = static_cast<double>(val_t.rows());
  const double n_u = static_cast<double>(val_u.rows());
  const double quad =
      (val_t.weight.cwiseProduct(val_t.value).cwiseProduct(w_t)).dot(f_t.cwiseAbs2());
  const double linear = (val_u.weight.cwiseProduct(val_u.value).cwiseProduct(w_u)).dot(f_u);
  return quad / n_t - 2.0 * linear / n_u;
}

inline double criterion_dwls(const WeightedFit& fit, const PsdEstimate& psd,
                             const CombinedDataset& val_t, const CombinedDataset& val_u) {
  Vector w_t = predict_psd(psd, val_t.x);
  Vector w_u = predict_psd(psd, val_u.x);
  if (fit.mode == WeightMode::iwls) {
    w_t = inverse_trimmed(w_t, fit.trim_threshold, psd.mode);
    w_u = inverse_trimmed(w_u, fit.trim_threshold, psd.mode);
  }
  return criterion_weighted_with(predict(fit.f_model, val_t.x), predict(fit.f_model, val_u.x),
                                 w_t, w_u, val_t, val_u);
}

/// Weighted squared error of the nu component on the outcome side.
inline double criterion_sep_numerator_with(const Vector& f_u, const CombinedDataset& val_u) {
  return val_u.weight.dot((val_u.value - f_u).cwiseAbs2()) /
         static_cast<double>(val_u.rows());
}

inline double criterion_sep_numerator(const FittedModel& nu_model,
                                      const CombinedDataset& val_u) {
  return criterion_sep_numerator_with(predict(nu_model, val_u.x), val_u);
}

/// The two component criteria of separate estimation; each component's
/// hyperparameters are selected independently.
inline std::pair<double, double> criterion_sep(const FittedModel& nu_model,
                                               double psd_objective,
                                               const CombinedDataset& val_u) {
  return {criterion_sep_numerator(nu_model, val_u), psd_objective};
}

/// Unregularized least-squares objective of the PSD estimator evaluated at
/// the normalized prediction pi_hat + 0.5.
inline double criterion_psd_with(const Vector& pi_t, const Vector& pi_u,
                                 const CombinedDataset& val_t, const CombinedDataset& val_u) {
  const double n_t = static_cast<double>(val_t.rows());
  const double n_u = static_cast<double>(val_u.rows());
  const Vector f_t = pi_t.array() + 0.5;
  const Vector f_u = pi_u.array() + 0.5;
  const double square = val_u.weight.dot(f_u.cwiseAbs2());
  const double cross = (val_t.weight.cwiseProduct(val_t.value)).dot(f_t);
  const double mean = val_u.weight.dot(f_u);
  return square / n_u - 2.0 * cross / n_t - mean / n_u;
}

inline double criterion_psd(const PsdEstimate& est, const CombinedDataset& val_t,
                            const CombinedDataset& val_u) {
  return criterion_psd_with(predict_psd(est, val_t.x), predict_psd(est, val_u.x), val_t, val_u);
}

// ---------------------------------------------------------------------------
// Tuned fits: random search specialized per estimator, reusing the squared
// distances across bandwidth candidates.
// ---------------------------------------------------------------------------

/// Train/validation pairs of combined datasets, as one bundle.
struct TuningData {
  const CombinedDataset& train_t;
  const CombinedDataset& train_u;
  const CombinedDataset& val_t;
  const CombinedDataset& val_u;
};

namespace detail {

/// Squared distances from every dataset's rows to one center set.
struct DistCache {
  Matrix train_t, train_u, val_t, val_u;

  DistCache(const TuningData& data, const Matrix& centers)
      : train_t(pairwise_sq_dist(data.train_t.x, centers)),
        train_u(pairwise_sq_dist(data.train_u.x, centers)),
        val_t(pairwise_sq_dist(data.val_t.x, centers)),
        val_u(pairwise_sq_dist(data.val_u.x, centers)) {}
};

}  // namespace detail

template <typename FitT>
struct Tuned {
  FitT fit;
  SelectionResult selection;
};

inline Tuned<PsdEstimate> tune_psd(const TuningData& data, const Matrix& centers,
                                   const SearchSpace& space, PsdMode mode) {
  const detail::DistCache d2(data, centers);
  auto result = random_search(space, [&](const Candidate& c) {
    const KernelBasis basis{centers, c.bandwidth};
    const PsdEstimate est = fit_psd_with(kernel_from_sq_dist(d2.train_t, c.bandwidth),
                                         kernel_from_sq_dist(d2.train_u, c.bandwidth),
                                         data.train_t, data.train_u, basis, c.lambda, mode);
    return criterion_psd_with(
        predict_psd_from_design(est, kernel_from_sq_dist(d2.val_t, c.bandwidth)),
        predict_psd_from_design(est, kernel_from_sq_dist(d2.val_u, c.bandwidth)), data.val_t,
        data.val_u);
  });
  const KernelBasis basis{centers, result.best.bandwidth};
  PsdEstimate est = fit_psd_with(kernel_from_sq_dist(d2.train_t, result.best.bandwidth),
                                 kernel_from_sq_dist(d2.train_u, result.best.bandwidth),
                                 data.train_t, data.train_u, basis, result.best.lambda, mode);
  return {std::move(est), std::move(result)};
}

/// Weighted estimators tune one (bandwidth, lambda) pair for the whole
/// plug-in pipeline: each candidate refits the PSD with it, re-evaluates the
/// weights, fits f, and scores the estimator's own validation objective.
inline Tuned<WeightedFit> tune_weighted(const TuningData& data, const Matrix& centers_psd,
                                        const Matrix& centers_f, const SearchSpace& space,
                                        PsdMode psd_mode, WeightMode mode, double trim) {
  const detail::DistCache d2_psd(data, centers_psd);
  const detail::DistCache d2_f(data, centers_f);

  struct Pipeline {
    WeightedFit fit;
    Vector w_val_t, w_val_u;
  };
  auto make_pipeline = [&](const Candidate& c) -> Pipeline {
    const KernelBasis basis_psd{centers_psd, c.bandwidth};
    auto psd = std::make_shared<const PsdEstimate>(
        fit_psd_with(kernel_from_sq_dist(d2_psd.train_t, c.bandwidth),
                     kernel_from_sq_dist(d2_psd.train_u, c.bandwidth), data.train_t,
                     data.train_u, basis_psd, c.lambda, psd_mode));

    Vector w_train_t =
        predict_psd_from_design(*psd, kernel_from_sq_dist(d2_psd.train_t, c.bandwidth));
    Vector w_train_u =
        predict_psd_from_design(*psd, kernel_from_sq_dist(d2_psd.train_u, c.bandwidth));
    Vector w_val_t =
        predict_psd_from_design(*psd, kernel_from_sq_dist(d2_psd.val_t, c.bandwidth));
    Vector w_val_u =
        predict_psd_from_design(*psd, kernel_from_sq_dist(d2_psd.val_u, c.bandwidth));

    const KernelBasis basis_f{centers_f, c.bandwidth};
    const Matrix phi_t = kernel_from_sq_dist(d2_f.train_t, c.bandwidth);
    const Matrix phi_u = kernel_from_sq_dist(d2_f.train_u, c.bandwidth);
    if (mode == WeightMode::iwls) {
      w_train_t = inverse_trimmed(w_train_t, trim, psd_mode);
      w_train_u = inverse_trimmed(w_train_u, trim, psd_mode);
      w_val_t = inverse_trimmed(w_val_t, trim, psd_mode);
      w_val_u = inverse_trimmed(w_val_u, trim, psd_mode);
    }

    // A candidate whose regularized quadratic is not positive definite has no
    // minimizer (the closed form is a saddle); it cannot win the search.
    const WeightedMoments m =
        weighted_ls_moments(phi_t, phi_u, data.train_t, data.train_u, w_train_t, w_train_u);
    if (!ridge_system_positive_definite(m.a_tilde, c.lambda)) {
      throw DegenerateFitError("weighted least-squares objective unbounded at h=" +
                               std::to_string(c.bandwidth) +
                               ", lambda=" + std::to_string(c.lambda));
    }
    Vector alpha = solve_ridge_system(m.a_tilde, m.b_tilde, c.lambda);
    WeightedFit fit{{basis_f, std::move(alpha)},
                    std::move(psd),
                    mode,
                    c.lambda,
                    mode == WeightMode::iwls ? trim : 0.0};
    return {std::move(fit), std::move(w_val_t), std::move(w_val_u)};
  };

  auto result = random_search(space, [&](const Candidate& c) {
    const Pipeline p = make_pipeline(c);
    const Vector f_t = kernel_from_sq_dist(d2_f.val_t, c.bandwidth) * p.fit.f_model.coefficients;
    const Vector f_u = kernel_from_sq_dist(d2_f.val_u, c.bandwidth) * p.fit.f_model.coefficients;
    return criterion_weighted_with(f_t, f_u, p.w_val_t, p.w_val_u, data.val_t, data.val_u);
  });
  Pipeline best = make_pipeline(result.best);
  return {std::move(best.fit), std::move(result)};
}

inline Tuned<SepFit> tune_sep(const TuningData& data, const Matrix& centers,
                              const SearchSpace& space, const PsdEstimate& psd, double trim) {
  const detail::DistCache d2(data, centers);
  auto result = random_search(space, [&](const Candidate& c) {
    const KernelBasis basis{centers, c.bandwidth};
    const SepFit fit = fit_sep_with(kernel_from_sq_dist(d2.train_u, c.bandwidth), data.train_u,
                                    basis, psd, c.lambda, trim);
    const Vector f_u = kernel_from_sq_dist(d2.val_u, c.bandwidth) * fit.nu_model.coefficients;
    return criterion_sep_numerator_with(f_u, data.val_u);
  });
  const KernelBasis basis{centers, result.best.bandwidth};
  SepFit fit = fit_sep_with(kernel_from_sq_dist(d2.train_u, result.best.bandwidth),
                            data.train_u, basis, psd, result.best.lambda, trim);
  return {std::move(fit), std::move(result)};
}

/// DLS search shares one bandwidth and one lambda across f and g; the two
/// bases keep their own centers.
inline Tuned<DlsFit> tune_dls(const TuningData& data, const Matrix& centers_f,
                              const Matrix& centers_g, const SearchSpace& space) {
  const detail::DistCache d2_f(data, centers_f);
  const detail::DistCache d2_g(data, centers_g);

  auto make_fit = [&](const Candidate& c) {
    const KernelBasis basis_f{centers_f, c.bandwidth};
    const KernelBasis basis_g{centers_g, c.bandwidth};
    return fit_dls_with(kernel_from_sq_dist(d2_f.train_t, c.bandwidth),
                        kernel_from_sq_dist(d2_g.train_t, c.bandwidth),
                        kernel_from_sq_dist(d2_g.train_u, c.bandwidth), data.train_t,
                        data.train_u, basis_f, basis_g, c.lambda, c.lambda);
  };

  auto result = random_search(space, [&](const Candidate& c) {
    const DlsFit fit = make_fit(c);
    const Vector f_t = kernel_from_sq_dist(d2_f.val_t, c.bandwidth) * fit.f_model.coefficients;
    const Vector g_t = kernel_from_sq_dist(d2_g.val_t, c.bandwidth) * fit.g_model.coefficients;
    const Vector g_u = kernel_from_sq_dist(d2_g.val_u, c.bandwidth) * fit.g_model.coefficients;
    return criterion_dls_with(f_t, g_t, g_u, data.val_t, data.val_u);
  });
  DlsFit fit = make_fit(result.best);
  return {std::move(fit), std::move(result)};
}

}  // namespace late

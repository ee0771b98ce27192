#pragma once

#include "late/dataset.hpp"
#include "late/error.hpp"
#include "late/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace late {

enum class EffectShape { constant, linear, logistic };

inline std::string to_string(EffectShape shape) {
  switch (shape) {
    case EffectShape::constant: return "constant";
    case EffectShape::linear: return "linear";
    case EffectShape::logistic: return "logistic";
  }
  return "?";
}

inline EffectShape shape_from_string(const std::string& s) {
  if (s == "constant") return EffectShape::constant;
  if (s == "linear") return EffectShape::linear;
  if (s == "logistic") return EffectShape::logistic;
  throw InputError("unknown shape '" + s + "' (valid: constant, linear, logistic)");
}

struct SyntheticConfig {
  EffectShape shape = EffectShape::linear;
  int q_x = 1;
  int n = 10000;       // per-dataset sample size
  double gamma = 0.0;  // controls the ratio of extreme PSD values
  std::uint64_t seed = 0;
  int test_n = 10000;

  void validate() const {
    if (q_x < 1) throw InputError("SyntheticConfig: q_x must be >= 1");
    if (n < 1) throw InputError("SyntheticConfig: n must be >= 1");
    if (test_n < 1) throw InputError("SyntheticConfig: test_n must be >= 1");
  }
};

/// One population member: covariates, potential treatments/outcomes, and the
/// regime-1 assignment. d1 >= d0 always (shared-uniform coupling).
struct PopulationDraw {
  Vector x;
  int d1 = 0;
  int d0 = 0;
  int z1 = 0;
  double y1 = 0.0;
  double y0 = 0.0;
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Equicorrelation covariance with unit diagonal and off-diagonal
/// -1/(q_x + 1). The negative correlation keeps var(1^T X) = 2 q / (q + 1)
/// bounded near one for every dimension, and the matrix positive definite
/// (smallest eigenvalue 2 / (q + 1)).
inline Matrix make_covariance(int q_x) {
  if (q_x < 1) throw InputError("make_covariance: q_x must be >= 1");
  Matrix sigma = Matrix::Constant(q_x, q_x, -0.875 / (q_x + 1));
  sigma.diagonal().setOnes();
  return sigma;
}

inline double prob_d1(const SyntheticConfig& cfg, double sum_x) {
  return sigmoid(cfg.gamma + 4.0 + sum_x);
}
inline double prob_d0(const SyntheticConfig& cfg, double sum_x) {
  return sigmoid(cfg.gamma + sum_x);
}
inline double prob_z1(double sum_x) { return sigmoid(1.0 + 0.2 * sum_x); }

/// Treatment-effect surface h(X, D1, D0) as a function of sum_x = 1^T x.
inline double effect(EffectShape shape, double sum_x, int d1, int d0) {
  switch (shape) {
    case EffectShape::constant: return 0.2 + 0.3 * d1 + 0.1 * d0;
    case EffectShape::linear: return (0.1 + 0.15 * d1 + 0.05 * d0) * sum_x;
    case EffectShape::logistic: return sigmoid((1.0 + 0.2 * d1 + 0.1 * d0) * sum_x);
  }
  return 0.0;
}

/// mu(x) = h(x, 1, 0), the complier treatment effect.
inline double true_late(const Vector& x, EffectShape shape) {
  return effect(shape, x.sum(), 1, 0);
}

/// pi(x) = E[T|X=x] = 0.5 P(Z1=1|x) (P(D1=1|x) - P(D0=1|x)) in this DGP
/// (regime 0 assigns no one).
inline double true_psd(const SyntheticConfig& cfg, const Vector& x) {
  const double s = x.sum();
  return 0.5 * prob_z1(s) * (prob_d1(cfg, s) - prob_d0(cfg, s));
}

/// Draws population members one at a time; owns the covariance factor.
class PopulationSampler {
 public:
  explicit PopulationSampler(const SyntheticConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    chol_ = Eigen::LLT<Matrix>(make_covariance(cfg.q_x)).matrixL();
  }

  PopulationDraw operator()(std::mt19937_64& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    PopulationDraw d;
    Vector z(cfg_.q_x);
    for (int j = 0; j < cfg_.q_x; ++j) z[j] = normal(rng);
    d.x = chol_ * z;
    const double s = d.x.sum();

    // A shared uniform couples the potential treatments; P(D1|X) >= P(D0|X)
    // makes d1 >= d0 surely.
    const double u = uniform(rng);
    d.d1 = u < prob_d1(cfg_, s) ? 1 : 0;
    d.d0 = u < prob_d0(cfg_, s) ? 1 : 0;
    d.z1 = uniform(rng) < prob_z1(s) ? 1 : 0;

    // Noise: var 0.5 each, cov 0.2.
    const double a = normal(rng);
    const double b = normal(rng);
    const double eps0 = kNoiseL11 * a;
    const double eps1 = kNoiseL21 * a + kNoiseL22 * b;

    const double y0_mean = sigmoid(s) + (0.2 * d.d1 + 0.1 * d.d0) * s;
    d.y0 = y0_mean + eps0;
    d.y1 = y0_mean + effect(cfg_.shape, s, d.d1, d.d0) + eps1;
    return d;
  }

 private:
  static constexpr double kNoiseVar = 0.5;
  static constexpr double kNoiseCov = 0.2;
  const double kNoiseL11 = std::sqrt(kNoiseVar);
  const double kNoiseL21 = kNoiseCov / std::sqrt(kNoiseVar);
  const double kNoiseL22 = std::sqrt(kNoiseVar - kNoiseCov * kNoiseCov / kNoiseVar);

  SyntheticConfig cfg_;
  Matrix chol_;
};

inline std::vector<PopulationDraw> sample_population(const SyntheticConfig& cfg,
                                                     std::mt19937_64& rng, int count) {
  const PopulationSampler sampler(cfg);
  std::vector<PopulationDraw> draws;
  draws.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) draws.push_back(sampler(rng));
  return draws;
}

/// Realized treatment under regime k: D = Z D1 + (1 - Z) D0 with Z == 0 in
/// regime 0.
inline int realized_treatment(const PopulationDraw& d, int regime) {
  const int z = regime == 1 ? d.z1 : 0;
  return z ? d.d1 : d.d0;
}

struct SyntheticBundle {
  SeparateDatasets train;
  SeparateDatasets validation;
  Matrix test_x;
  Vector test_mu;
};

namespace detail {

inline constexpr long kMaxRejectionAttempts = 10'000'000;

/// Accept covariates of draws with realized D^(k) = 1 until n are collected;
/// p_hat is the acceptance fraction.
inline std::pair<Matrix, double> rejection_treated(const PopulationSampler& sampler,
                                                   std::mt19937_64& rng, int regime, int n,
                                                   int q_x) {
  Matrix x(n, q_x);
  long attempts = 0;
  int accepted = 0;
  while (accepted < n) {
    if (attempts >= kMaxRejectionAttempts) {
      const double rate = static_cast<double>(accepted) / static_cast<double>(attempts);
      throw DegenerateDesignError(
          "rejection sampling for regime " + std::to_string(regime) + " accepted " +
              std::to_string(accepted) + "/" + std::to_string(attempts) + " draws",
          rate);
    }
    const PopulationDraw d = sampler(rng);
    ++attempts;
    if (realized_treatment(d, regime) == 1) {
      x.row(accepted) = d.x;
      ++accepted;
    }
  }
  return {std::move(x), static_cast<double>(n) / static_cast<double>(attempts)};
}

inline std::pair<Vector, Matrix> draw_outcomes(const PopulationSampler& sampler,
                                               std::mt19937_64& rng, int regime, int n,
                                               int q_x) {
  Vector y(n);
  Matrix x(n, q_x);
  for (int i = 0; i < n; ++i) {
    const PopulationDraw d = sampler(rng);
    const int treated = realized_treatment(d, regime);
    y[i] = treated ? d.y1 : d.y0;
    x.row(i) = d.x;
  }
  return {std::move(y), std::move(x)};
}

inline SeparateDatasets make_bundle(const PopulationSampler& sampler,
                                    const SyntheticConfig& cfg, int stream_base) {
  SeparateDatasets out;
  for (int k = 0; k < 2; ++k) {
    std::mt19937_64 rng_t(derive_seed(cfg.seed, stream_base + k));
    std::tie(out.treated_cov[k], out.p_d_hat[k]) =
        rejection_treated(sampler, rng_t, k, cfg.n, cfg.q_x);
    std::mt19937_64 rng_u(derive_seed(cfg.seed, stream_base + 2 + k));
    std::tie(out.outcome_y[k], out.outcome_x[k]) =
        draw_outcomes(sampler, rng_u, k, cfg.n, cfg.q_x);
  }
  return out;
}

}  // namespace detail

/// Generates training and validation bundles of the four separately observed
/// sample sets, plus a test set of covariates with the true LATE. Every
/// sample set draws from its own RNG stream derived from cfg.seed.
inline SyntheticBundle generate_separate_datasets(const SyntheticConfig& cfg) {
  cfg.validate();
  const PopulationSampler sampler(cfg);

  SyntheticBundle bundle;
  bundle.train = detail::make_bundle(sampler, cfg, 0);
  bundle.validation = detail::make_bundle(sampler, cfg, 4);

  std::mt19937_64 rng_test(derive_seed(cfg.seed, 8));
  bundle.test_x.resize(cfg.test_n, cfg.q_x);
  bundle.test_mu.resize(cfg.test_n);
  for (int i = 0; i < cfg.test_n; ++i) {
    const PopulationDraw d = sampler(rng_test);
    bundle.test_x.row(i) = d.x;
    bundle.test_mu[i] = true_late(d.x, cfg.shape);
  }
  return bundle;
}

}  // namespace late

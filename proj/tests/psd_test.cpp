#include "late/psd.hpp"

#include "late/dataset.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace late;

namespace {

PsdEstimate hand_estimate(PsdMode mode, const Vector& plus, const Vector& minus) {
  Matrix centers(plus.size(), 1);
  for (Index i = 0; i < plus.size(); ++i) centers(i, 0) = static_cast<double>(i);
  const KernelBasis basis{centers, 1.0};
  return PsdEstimate{mode, {basis, plus}, {basis, minus}, 1e-12};
}

SeparateDatasets symmetric_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SeparateDatasets data;
  for (int k = 0; k < 2; ++k) {
    data.treated_cov[k].resize(n, 1);
    data.outcome_x[k].resize(n, 1);
    data.outcome_y[k].resize(n);
    for (int i = 0; i < n; ++i) {
      data.treated_cov[k](i, 0) = normal(rng);
      data.outcome_x[k](i, 0) = normal(rng);
      data.outcome_y[k][i] = normal(rng);
    }
    data.p_d_hat[k] = 0.5;
  }
  return data;
}

}  // namespace

TEST_CASE("trim_psd clamps away from zero") {
  CHECK(trim_psd(0.02, 0.15, PsdMode::one_experiment) == 0.15);
  CHECK(trim_psd(0.3, 0.15, PsdMode::one_experiment) == 0.3);
  CHECK(trim_psd(-0.05, 0.15, PsdMode::general) == -0.15);
  CHECK(trim_psd(0.0, 0.15, PsdMode::general) == 0.15);  // sign(0) := +1

  // Idempotent and monotone in |value|.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  double prev_general = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double v = unif(rng);
    for (PsdMode mode : {PsdMode::general, PsdMode::one_experiment}) {
      const double once = trim_psd(v, 0.15, mode);
      CHECK(trim_psd(once, 0.15, mode) == once);
    }
  }
  for (double v = 0.0; v <= 0.5; v += 0.01) {
    const double t = trim_psd(v, 0.15, PsdMode::general);
    CHECK(std::abs(t) >= std::abs(prev_general) - 1e-15);
    prev_general = t;
  }

  CHECK_THROWS_AS(trim_psd(0.1, 0.0, PsdMode::general), InputError);
  CHECK_THROWS_AS(trim_psd(0.1, 0.6, PsdMode::general), InputError);
}

TEST_CASE("predict_psd closed-form special cases") {
  Vector ones = Vector::Ones(3);
  Vector x(1);
  x << 1.0;

  // Equal components give pi = 0 in general mode.
  const PsdEstimate sym = hand_estimate(PsdMode::general, ones, ones);
  CHECK(predict_psd(sym, x) == doctest::Approx(0.0).epsilon(1e-15));

  // Zero minus component pins the boundary 0.5.
  const PsdEstimate upper = hand_estimate(PsdMode::general, ones, Vector::Zero(3));
  CHECK(predict_psd(upper, x) == doctest::Approx(0.5).epsilon(1e-15));

  // Far-field denominator underflow returns the guarded value 0.
  Vector far(1);
  far << 1e6;
  CHECK(predict_psd(upper, far) == 0.0);
  const PsdEstimate one_exp = hand_estimate(PsdMode::one_experiment, ones, ones);
  CHECK(predict_psd(one_exp, far) == 0.0);
}

TEST_CASE("PSD predictions respect the range restriction") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vector plus(4), minus(4);
    for (int j = 0; j < 4; ++j) {
      plus[j] = unif(rng) < 0.3 ? 0.0 : unif(rng);
      minus[j] = unif(rng) < 0.3 ? 0.0 : unif(rng);
    }
    if (plus.isZero() && minus.isZero()) plus[0] = 0.5;
    for (PsdMode mode : {PsdMode::general, PsdMode::one_experiment}) {
      const PsdEstimate est = hand_estimate(mode, plus, minus);
      for (int k = 0; k < 40; ++k) {
        Vector x(1);
        x << 5.0 * normal(rng);
        const double pi = predict_psd(est, x);
        if (mode == PsdMode::general) {
          CHECK(pi >= -0.5);
          CHECK(pi <= 0.5);
        } else {
          CHECK(pi >= 0.0);
          CHECK(pi <= 0.5);
        }
      }
    }
  }
}

TEST_CASE("fitted coefficients are nonnegative and clipping is idempotent") {
  const support::DiscreteDgp dgp;
  const SeparateDatasets data = dgp.sample(2000, 77);
  const CombinedDataset t = combine_treatment(data);
  const CombinedDataset u = combine_outcome(data);
  const PsdEstimate est = fit_psd_general(t, u, dgp.basis(), 1e-4);
  CHECK((est.plus_model.coefficients.array() >= 0.0).all());
  CHECK((est.minus_model.coefficients.array() >= 0.0).all());
  CHECK(est.plus_model.coefficients.cwiseMax(0.0) == est.plus_model.coefficients);
}

TEST_CASE("symmetric regimes estimate pi near zero") {
  const SeparateDatasets data = symmetric_data(10000, 2024);
  const CombinedDataset t = combine_treatment(data);
  const CombinedDataset u = combine_outcome(data);
  Matrix centers(9, 1);
  for (int i = 0; i < 9; ++i) centers(i, 0) = -2.0 + 0.5 * i;
  const PsdEstimate est = fit_psd_general(t, u, KernelBasis{centers, 1.0}, 1e-3);
  for (double x = -2.0; x <= 2.0; x += 0.25) {
    Vector xv(1);
    xv << x;
    CHECK(std::abs(predict_psd(est, xv)) <= 0.05);
  }
}

TEST_CASE("discrete design recovers the exact PSD (general mode)") {
  const support::DiscreteDgp dgp;
  const SeparateDatasets data = dgp.sample(20000, 31);
  const PsdEstimate est =
      fit_psd_general(combine_treatment(data), combine_outcome(data), dgp.basis(), 1e-4);
  for (int site = 0; site < 2; ++site) {
    Vector x(1);
    x << dgp.x_value(site);
    CHECK(std::abs(predict_psd(est, x) - dgp.pi(site)) <= 0.03);
  }
}

TEST_CASE("one-experiment variant recovers a constant pi = 0.25") {
  support::DiscreteDgp dgp;
  dgp.d1[0] = 0.8;
  dgp.d1[1] = 0.7;
  dgp.d0[0] = 0.3;
  dgp.d0[1] = 0.2;
  REQUIRE(dgp.pi(0) == doctest::Approx(0.25));
  REQUIRE(dgp.pi(1) == doctest::Approx(0.25));

  const SeparateDatasets data = dgp.sample(20000, 57);
  const PsdEstimate est =
      fit_psd_1e2rd(combine_treatment(data), combine_outcome(data), dgp.basis(), 1e-4);
  for (int site = 0; site < 2; ++site) {
    Vector x(1);
    x << dgp.x_value(site);
    const double pi = predict_psd(est, x);
    CHECK(pi >= 0.0);
    CHECK(pi <= 0.5);
    CHECK(std::abs(pi - 0.25) <= 0.03);
  }
}

TEST_CASE("consistency improves with sample size on the discrete design") {
  const support::DiscreteDgp dgp;
  auto max_err = [&](int n, std::uint64_t seed) {
    const SeparateDatasets data = dgp.sample(n, seed);
    const PsdEstimate est =
        fit_psd_general(combine_treatment(data), combine_outcome(data), dgp.basis(), 1e-5);
    double err = 0.0;
    for (int site = 0; site < 2; ++site) {
      Vector x(1);
      x << dgp.x_value(site);
      err = std::max(err, std::abs(predict_psd(est, x) - dgp.pi(site)));
    }
    return err;
  };
  const double err_small = max_err(2000, 5);
  const double err_large = max_err(20000, 5);
  CHECK((err_large < err_small || err_large < 0.01));
}

TEST_CASE("regularization blowup exercises the degenerate-fit path") {
  // Regime-0 dominated treatment side: every entry of the pi target moment is
  // negative, so a huge lambda clips the numerator model to exactly zero.
  SeparateDatasets data = symmetric_data(200, 8);
  data.p_d_hat[1] = 0.01;
  data.p_d_hat[0] = 1.0;
  const CombinedDataset t = combine_treatment(data);
  const CombinedDataset u = combine_outcome(data);
  Matrix centers(3, 1);
  centers << -1.0, 0.0, 1.0;
  const KernelBasis basis{centers, 1.0};
  CHECK_THROWS_AS(fit_psd_1e2rd(t, u, basis, 1e12), DegenerateFitError);
}

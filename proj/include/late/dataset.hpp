#pragma once

#include "late/error.hpp"
#include "late/types.hpp"

#include <array>
#include <string>
#include <utility>

namespace late {

/// The four separately observed sample sets plus treatment-rate estimates.
/// Index k in {0, 1} is the assignment regime.
struct SeparateDatasets {
  std::array<Matrix, 2> treated_cov;   // n_d^(k) x q_x, X | D^(k)=1
  std::array<Vector, 2> outcome_y;     // n^(k) outcomes
  std::array<Matrix, 2> outcome_x;     // n^(k) x q_x covariates paired with outcome_y
  std::array<double, 2> p_d_hat{0.0, 0.0};

  Index dim() const { return treated_cov[1].cols(); }

  void validate() const {
    for (int k = 0; k < 2; ++k) {
      if (treated_cov[k].rows() < 1) {
        throw InputError("SeparateDatasets: treated covariate set for regime " +
                         std::to_string(k) + " is empty");
      }
      if (outcome_y[k].size() < 1) {
        throw InputError("SeparateDatasets: outcome set for regime " + std::to_string(k) +
                         " is empty");
      }
      if (outcome_x[k].rows() != outcome_y[k].size()) {
        throw InputError("SeparateDatasets: outcome covariates and outcomes disagree in "
                         "length for regime " + std::to_string(k));
      }
      if (!(p_d_hat[k] >= 0.0 && p_d_hat[k] <= 1.0)) {
        throw ValidationError("SeparateDatasets: p_d_hat for regime " + std::to_string(k) +
                              " must lie in [0,1], got " + std::to_string(p_d_hat[k]));
      }
    }
    const Index q = treated_cov[1].cols();
    if (treated_cov[0].cols() != q || outcome_x[0].cols() != q || outcome_x[1].cols() != q) {
      throw ValidationError("SeparateDatasets: covariate dimension differs across sample sets");
    }
  }
};

/// Signed, importance-weighted merge of the two regimes' samples. Treatment
/// side carries values t in {+1, -1}; outcome side carries signed outcomes u.
struct CombinedDataset {
  enum class Kind { treatment, outcome };

  Kind kind = Kind::treatment;
  Vector value;    // t_i or u_i
  Matrix x;        // n x q_x
  Vector weight;   // r_i >= 0

  Index rows() const { return value.size(); }
  Index dim() const { return x.cols(); }
};

/// Treatment-side combined dataset: row from regime k contributes
/// ((-1)^(1-k), x, p_d_hat^(k) (n_d^(1)+n_d^(0)) / (2 n_d^(k))).
/// Regime-1 block first, then regime-0.
inline CombinedDataset combine_treatment(const SeparateDatasets& data) {
  data.validate();
  const Index n1 = data.treated_cov[1].rows();
  const Index n0 = data.treated_cov[0].rows();
  const Index n_t = n1 + n0;

  CombinedDataset out;
  out.kind = CombinedDataset::Kind::treatment;
  out.value.resize(n_t);
  out.weight.resize(n_t);
  out.x.resize(n_t, data.dim());

  const double w1 = data.p_d_hat[1] * static_cast<double>(n_t) / (2.0 * static_cast<double>(n1));
  const double w0 = data.p_d_hat[0] * static_cast<double>(n_t) / (2.0 * static_cast<double>(n0));

  out.x.topRows(n1) = data.treated_cov[1];
  out.value.head(n1).setConstant(1.0);
  out.weight.head(n1).setConstant(w1);

  out.x.bottomRows(n0) = data.treated_cov[0];
  out.value.tail(n0).setConstant(-1.0);
  out.weight.tail(n0).setConstant(w0);
  return out;
}

/// Outcome-side combined dataset: row from regime k contributes
/// ((-1)^(1-k) y, x, (n^(1)+n^(0)) / (2 n^(k))). Regime-1 block first.
inline CombinedDataset combine_outcome(const SeparateDatasets& data) {
  data.validate();
  const Index n1 = data.outcome_y[1].size();
  const Index n0 = data.outcome_y[0].size();
  const Index n_u = n1 + n0;

  CombinedDataset out;
  out.kind = CombinedDataset::Kind::outcome;
  out.value.resize(n_u);
  out.weight.resize(n_u);
  out.x.resize(n_u, data.dim());

  const double w1 = static_cast<double>(n_u) / (2.0 * static_cast<double>(n1));
  const double w0 = static_cast<double>(n_u) / (2.0 * static_cast<double>(n0));

  out.x.topRows(n1) = data.outcome_x[1];
  out.value.head(n1) = data.outcome_y[1];
  out.weight.head(n1).setConstant(w1);

  out.x.bottomRows(n0) = data.outcome_x[0];
  out.value.tail(n0) = -data.outcome_y[0];
  out.weight.tail(n0).setConstant(w0);
  return out;
}

/// Sample-average moment (1/n) sum_i r_i value_i f(x_i); approximates E[T f(X)]
/// on the treatment side and E[U f(X)] on the outcome side.
template <typename F>
double weighted_moment(const CombinedDataset& ds, F&& f) {
  double acc = 0.0;
  for (Index i = 0; i < ds.rows(); ++i) {
    acc += ds.weight[i] * ds.value[i] * f(Vector(ds.x.row(i)));
  }
  return acc / static_cast<double>(ds.rows());
}

}  // namespace late

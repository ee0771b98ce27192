#pragma once

#include "late/dataset_io.hpp"
#include "late/json_util.hpp"
#include "late/model_selection.hpp"
#include "late/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace late {

inline double mse(const Vector& predictions, const Vector& truth) {
  if (predictions.size() != truth.size()) {
    throw InputError("mse: length mismatch (" + std::to_string(predictions.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  }
  if (predictions.size() < 1) throw InputError("mse: empty input");
  return (predictions - truth).squaredNorm() / static_cast<double>(predictions.size());
}

struct WilcoxonResult {
  double p_value = 1.0;
  bool undefined = false;  // all differences were zero
  double w_plus = 0.0;
  int n_effective = 0;
};

enum class WilcoxonMethod { automatic, exact, normal_approx };

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; ties get average ranks. Exact null distribution for
/// n_effective <= 25, normal approximation with tie and continuity
/// corrections above; `method` can force either branch.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           WilcoxonMethod method = WilcoxonMethod::automatic) {
  if (a.size() != b.size()) throw InputError("wilcoxon_signed_rank: length mismatch");

  std::vector<double> diff;
  diff.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  const int n = static_cast<int>(diff.size());
  if (n == 0) return {1.0, true, 0.0, 0};

  // Average ranks of |d|.
  std::vector<int> order(diff.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  std::vector<double> rank(diff.size());
  double tie_correction = 0.0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() &&
           std::abs(diff[order[hi + 1]]) == std::abs(diff[order[lo]])) {
      ++hi;
    }
    const double avg = (static_cast<double>(lo + 1) + static_cast<double>(hi + 1)) / 2.0;
    for (std::size_t k = lo; k <= hi; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(hi - lo + 1);
    tie_correction += t * t * t - t;
    lo = hi + 1;
  }

  double w_plus = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    if (diff[i] > 0.0) w_plus += rank[i];
  }

  WilcoxonResult result;
  result.w_plus = w_plus;
  result.n_effective = n;

  const bool use_exact =
      method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && n <= 25);
  if (use_exact) {
    // Exact distribution of the doubled rank sum (doubled ranks are integers
    // even with average ranks).
    const int max2 = n * (n + 1);
    std::vector<double> count(static_cast<std::size_t>(max2) + 1, 0.0);
    count[0] = 1.0;
    for (double r : rank) {
      const int r2 = static_cast<int>(std::llround(2.0 * r));
      for (int s = max2; s >= r2; --s) count[s] += count[s - r2];
    }
    const int w2 = static_cast<int>(std::llround(2.0 * w_plus));
    double le = 0.0, ge = 0.0, total = 0.0;
    for (int s = 0; s <= max2; ++s) {
      total += count[s];
      if (s <= w2) le += count[s];
      if (s >= w2) ge += count[s];
    }
    result.p_value = std::min(1.0, 2.0 * std::min(le, ge) / total);
  } else {
    const double dn = static_cast<double>(n);
    const double mean = dn * (dn + 1.0) / 4.0;
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_correction / 48.0;
    const double dev = std::abs(w_plus - mean);
    const double z = var > 0.0 ? std::max(0.0, dev - 0.5) / std::sqrt(var) : 0.0;
    result.p_value = std::erfc(z / std::sqrt(2.0));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

inline constexpr int kNumEstimators = 4;
inline const std::array<std::string, kNumEstimators> kEstimatorNames{"dwls", "iwls", "sep",
                                                                     "dls"};

struct BenchmarkGrid {
  std::vector<EffectShape> shapes{EffectShape::constant, EffectShape::linear,
                                  EffectShape::logistic};
  std::vector<int> dims{1, 5, 10};
  std::vector<int> sizes{10000, 50000};
  std::vector<double> gammas{0.0};
};

struct BenchmarkOptions {
  int trials = 100;
  int budget = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
  Index centers = 100;
  double trim = 0.15;
  int test_n = 10000;
  PsdMode psd_mode = PsdMode::one_experiment;  // the DGP assigns no one in regime 0
  std::string dump_pairs_path;                 // squared error vs true PSD, per test point
};

struct CellConfig {
  EffectShape shape = EffectShape::linear;
  int q_x = 1;
  int n = 10000;
  double gamma = 0.0;
};

struct CellResult {
  CellConfig config;
  Matrix per_trial_mse;   // trials x estimators, NaN marks a failed fit
  Matrix fit_seconds;     // trials x estimators (excl. shared PSD time)
  Vector psd_seconds;     // per trial
  Vector mean_mse;        // per estimator over non-failed trials
  Vector std_mse;         // sample std, 0 when fewer than two trials
  std::vector<int> failures;
  int best = 0;           // index of the minimum-mean estimator
  Vector wilcoxon_p;      // two-sided p vs best (1.0 for best itself)
};

struct BenchmarkReport {
  BenchmarkOptions options;
  std::vector<CellResult> cells;
};

namespace detail {

inline void finalize_cell(CellResult& cell) {
  const Index trials = cell.per_trial_mse.rows();
  cell.mean_mse.setZero(kNumEstimators);
  cell.std_mse.setZero(kNumEstimators);
  cell.failures.assign(kNumEstimators, 0);

  for (Index e = 0; e < kNumEstimators; ++e) {
    double sum = 0.0;
    int ct = 0;
    for (Index t = 0; t < trials; ++t) {
      const double v = cell.per_trial_mse(t, e);
      if (std::isnan(v)) continue;
      sum += v;
      ++ct;
    }
    cell.failures[static_cast<std::size_t>(e)] = static_cast<int>(trials) - ct;
    cell.mean_mse[e] = ct > 0 ? sum / ct : std::numeric_limits<double>::quiet_NaN();
    if (ct > 1) {
      double ss = 0.0;
      for (Index t = 0; t < trials; ++t) {
        const double v = cell.per_trial_mse(t, e);
        if (!std::isnan(v)) ss += (v - cell.mean_mse[e]) * (v - cell.mean_mse[e]);
      }
      cell.std_mse[e] = std::sqrt(ss / (ct - 1));
    }
  }

  cell.best = 0;
  for (int e = 1; e < kNumEstimators; ++e) {
    const double m = cell.mean_mse[e];
    if (std::isnan(cell.mean_mse[cell.best]) ||
        (!std::isnan(m) && m < cell.mean_mse[cell.best])) {
      cell.best = e;
    }
  }

  cell.wilcoxon_p.setConstant(kNumEstimators, 1.0);
  for (int e = 0; e < kNumEstimators; ++e) {
    if (e == cell.best) continue;
    std::vector<double> a, b;
    for (Index t = 0; t < trials; ++t) {
      const double x = cell.per_trial_mse(t, e);
      const double y = cell.per_trial_mse(t, cell.best);
      if (!std::isnan(x) && !std::isnan(y)) {
        a.push_back(x);
        b.push_back(y);
      }
    }
    cell.wilcoxon_p[e] = a.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : wilcoxon_signed_rank(a, b).p_value;
  }
}

struct PairRow {
  int cell = 0;
  int estimator = 0;
  double psd = 0.0;
  double sq_error = 0.0;
};

}  // namespace detail

/// Runs one benchmark trial: generate data, tune and fit every estimator with
/// its own criterion, and score the test MSE. Per-estimator failures are
/// reported in `errors`, not thrown.
struct TrialOutcome {
  std::array<double, kNumEstimators> mse_values;
  std::array<double, kNumEstimators> seconds;
  std::array<std::string, kNumEstimators> errors;
  double psd_seconds = 0.0;
  std::vector<detail::PairRow> pairs;  // filled only when pairs are requested
};

inline TrialOutcome run_trial(const CellConfig& cell, const BenchmarkOptions& options,
                              int cell_index, int trial) {
  TrialOutcome out;
  out.mse_values.fill(std::numeric_limits<double>::quiet_NaN());
  out.seconds.fill(0.0);

  SyntheticConfig cfg{cell.shape, cell.q_x, cell.n, cell.gamma,
                      options.seed + static_cast<std::uint64_t>(trial), options.test_n};

  using Clock = std::chrono::steady_clock;
  auto elapsed = [](Clock::time_point from) {
    return std::chrono::duration<double>(Clock::now() - from).count();
  };

  const SyntheticBundle bundle = generate_separate_datasets(cfg);
  const CombinedDataset train_t = combine_treatment(bundle.train);
  const CombinedDataset train_u = combine_outcome(bundle.train);
  const CombinedDataset val_t = combine_treatment(bundle.validation);
  const CombinedDataset val_u = combine_outcome(bundle.validation);
  const TuningData data{train_t, train_u, val_t, val_u};

  // Pooled treated covariates of both regimes serve as the center pool; each
  // model role draws its own centers.
  auto draw_centers = [&](int role) {
    std::mt19937_64 rng(derive_seed(options.seed, cell_index, trial, 100 + role));
    return select_centers(train_t.x, options.centers, rng);
  };
  auto make_space = [&](int role) {
    SearchSpace space;
    space.budget = options.budget;
    space.seed = derive_seed(options.seed, cell_index, trial, 200 + role);
    return space;
  };

  auto record_pairs = [&](int estimator, const Vector& pred) {
    if (options.dump_pairs_path.empty()) return;
    for (Index i = 0; i < bundle.test_x.rows(); ++i) {
      const double err = pred[i] - bundle.test_mu[i];
      out.pairs.push_back({cell_index, estimator,
                           true_psd(cfg, Vector(bundle.test_x.row(i))), err * err});
    }
  };

  auto run_one = [&](int index, auto&& body) {
    const auto start = Clock::now();
    try {
      body();
    } catch (const Error& e) {
      out.errors[static_cast<std::size_t>(index)] = e.what();
      out.mse_values[static_cast<std::size_t>(index)] =
          std::numeric_limits<double>::quiet_NaN();
    }
    out.seconds[static_cast<std::size_t>(index)] = elapsed(start);
  };

  // The weighted estimators tune one (h, lambda) for their whole pipeline,
  // refitting their own PSD per candidate.
  run_one(0, [&] {
    auto tuned = tune_weighted(data, draw_centers(0), draw_centers(1), make_space(0),
                               options.psd_mode, WeightMode::dwls, options.trim);
    const Vector pred = predict(tuned.fit, bundle.test_x);
    out.mse_values[0] = mse(pred, bundle.test_mu);
    record_pairs(0, pred);
  });
  run_one(1, [&] {
    auto tuned = tune_weighted(data, draw_centers(2), draw_centers(3), make_space(1),
                               options.psd_mode, WeightMode::iwls, options.trim);
    const Vector pred = predict(tuned.fit, bundle.test_x);
    out.mse_values[1] = mse(pred, bundle.test_mu);
    record_pairs(1, pred);
  });
  // Separate estimation selects each component on its own criterion; its PSD
  // carries its own tuned hyperparameters.
  run_one(2, [&] {
    const auto start_psd = Clock::now();
    auto tuned_psd = tune_psd(data, draw_centers(4), make_space(2), options.psd_mode);
    out.psd_seconds = elapsed(start_psd);
    auto tuned = tune_sep(data, draw_centers(5), make_space(3), tuned_psd.fit, options.trim);
    const Vector pred = predict(tuned.fit, bundle.test_x);
    out.mse_values[2] = mse(pred, bundle.test_mu);
    record_pairs(2, pred);
  });
  run_one(3, [&] {
    auto tuned = tune_dls(data, draw_centers(6), draw_centers(7), make_space(4));
    const Vector pred = predict(tuned.fit, bundle.test_x);
    out.mse_values[3] = mse(pred, bundle.test_mu);
    record_pairs(3, pred);
  });
  return out;
}

/// Full benchmark over the grid; trials run concurrently when jobs > 1, with
/// per-trial derived seeds so the report is identical either way.
inline BenchmarkReport run_benchmark(const BenchmarkGrid& grid,
                                     const BenchmarkOptions& options) {
  if (options.trials < 1) throw InputError("run_benchmark: trials must be >= 1");
  if (options.budget < 1) throw InputError("run_benchmark: budget must be >= 1");

  std::vector<CellConfig> cells;
  for (EffectShape shape : grid.shapes) {
    for (int q : grid.dims) {
      for (int n : grid.sizes) {
        for (double gamma : grid.gammas) cells.push_back({shape, q, n, gamma});
      }
    }
  }

  BenchmarkReport report;
  report.options = options;
  report.cells.resize(cells.size());

  std::vector<detail::PairRow> all_pairs;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    CellResult& cell = report.cells[ci];
    cell.config = cells[ci];
    cell.per_trial_mse.resize(options.trials, kNumEstimators);
    cell.fit_seconds.resize(options.trials, kNumEstimators);
    cell.psd_seconds.resize(options.trials);

    std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(options.trials));
    std::atomic<int> next{0};
    auto worker = [&] {
      while (true) {
        const int t = next.fetch_add(1);
        if (t >= options.trials) return;
        outcomes[static_cast<std::size_t>(t)] =
            run_trial(cells[ci], options, static_cast<int>(ci), t);
      }
    };
    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }

    for (int t = 0; t < options.trials; ++t) {
      const TrialOutcome& o = outcomes[static_cast<std::size_t>(t)];
      for (int e = 0; e < kNumEstimators; ++e) {
        cell.per_trial_mse(t, e) = o.mse_values[static_cast<std::size_t>(e)];
        cell.fit_seconds(t, e) = o.seconds[static_cast<std::size_t>(e)];
      }
      cell.psd_seconds[t] = o.psd_seconds;
      all_pairs.insert(all_pairs.end(), o.pairs.begin(), o.pairs.end());
    }
    detail::finalize_cell(cell);
  }

  if (!options.dump_pairs_path.empty()) {
    std::ofstream out(options.dump_pairs_path);
    if (!out) throw IoError("cannot open '" + options.dump_pairs_path + "' for writing");
    out << "shape,q_x,n,gamma,estimator,psd,sq_error\n";
    for (const auto& row : all_pairs) {
      const CellConfig& cc = cells[static_cast<std::size_t>(row.cell)];
      out << to_string(cc.shape) << "," << cc.q_x << "," << cc.n << ","
          << format_double(cc.gamma) << ","
          << kEstimatorNames[static_cast<std::size_t>(row.estimator)] << ","
          << format_double(row.psd) << "," << format_double(row.sq_error) << "\n";
    }
  }
  return report;
}

inline BenchmarkReport run_benchmark(const BenchmarkGrid& grid, int trials, int search_budget,
                                     std::uint64_t seed) {
  BenchmarkOptions options;
  options.trials = trials;
  options.budget = search_budget;
  options.seed = seed;
  return run_benchmark(grid, options);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const BenchmarkReport& report) {
  nlohmann::json j;
  j["options"] = {{"trials", report.options.trials},
                  {"budget", report.options.budget},
                  {"seed", report.options.seed},
                  {"jobs", report.options.jobs},
                  {"centers", report.options.centers},
                  {"trim", report.options.trim},
                  {"test_n", report.options.test_n},
                  {"psd_mode", to_string(report.options.psd_mode)}};
  j["estimators"] = kEstimatorNames;
  j["cells"] = nlohmann::json::array();
  for (const CellResult& cell : report.cells) {
    nlohmann::json c;
    c["shape"] = to_string(cell.config.shape);
    c["q_x"] = cell.config.q_x;
    c["n"] = cell.config.n;
    c["gamma"] = cell.config.gamma;
    c["per_trial_mse"] = detail::matrix_to_json(cell.per_trial_mse);
    c["fit_seconds"] = detail::matrix_to_json(cell.fit_seconds);
    c["psd_seconds"] = detail::vector_to_json(cell.psd_seconds);
    c["mean_mse"] = detail::vector_to_json(cell.mean_mse);
    c["std_mse"] = detail::vector_to_json(cell.std_mse);
    c["failures"] = cell.failures;
    c["best"] = kEstimatorNames[static_cast<std::size_t>(cell.best)];
    c["wilcoxon_p"] = detail::vector_to_json(cell.wilcoxon_p);
    j["cells"].push_back(std::move(c));
  }
  return j;
}

inline BenchmarkReport report_from_json(const nlohmann::json& j) {
  BenchmarkReport report;
  const auto& o = j.at("options");
  report.options.trials = o.at("trials").get<int>();
  report.options.budget = o.at("budget").get<int>();
  report.options.seed = o.at("seed").get<std::uint64_t>();
  report.options.jobs = o.at("jobs").get<int>();
  report.options.centers = o.at("centers").get<Index>();
  report.options.trim = o.at("trim").get<double>();
  report.options.test_n = o.at("test_n").get<int>();
  report.options.psd_mode = psd_mode_from_string(o.at("psd_mode").get<std::string>());
  for (const auto& c : j.at("cells")) {
    CellResult cell;
    cell.config.shape = shape_from_string(c.at("shape").get<std::string>());
    cell.config.q_x = c.at("q_x").get<int>();
    cell.config.n = c.at("n").get<int>();
    cell.config.gamma = c.at("gamma").get<double>();
    cell.per_trial_mse = detail::matrix_from_json(c.at("per_trial_mse"), kNumEstimators);
    cell.fit_seconds = detail::matrix_from_json(c.at("fit_seconds"), kNumEstimators);
    cell.psd_seconds = detail::vector_from_json(c.at("psd_seconds"));
    cell.mean_mse = detail::vector_from_json(c.at("mean_mse"));
    cell.std_mse = detail::vector_from_json(c.at("std_mse"));
    cell.failures = c.at("failures").get<std::vector<int>>();
    cell.wilcoxon_p = detail::vector_from_json(c.at("wilcoxon_p"));
    const std::string best = c.at("best").get<std::string>();
    for (int e = 0; e < kNumEstimators; ++e) {
      if (kEstimatorNames[static_cast<std::size_t>(e)] == best) cell.best = e;
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

enum class ReportFormat { csv, json, markdown };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown") return ReportFormat::markdown;
  throw InputError("unknown report format '" + s + "' (valid: csv, json, markdown)");
}

/// Renders "mean ± std", bolding the cell's best estimator.
inline std::string render_markdown(const BenchmarkReport& report) {
  std::string out;
  out += "| shape | n | q_x | gamma | ";
  for (const auto& name : kEstimatorNames) out += name + " | ";
  out += "\n|---|---|---|---|";
  for (int e = 0; e < kNumEstimators; ++e) out += "---|";
  out += "\n";
  for (const CellResult& cell : report.cells) {
    out += "| " + to_string(cell.config.shape) + " | " + std::to_string(cell.config.n) +
           " | " + std::to_string(cell.config.q_x) + " | " + format_double(cell.config.gamma) +
           " | ";
    for (int e = 0; e < kNumEstimators; ++e) {
      const bool bold = e == cell.best;
      std::string entry;
      if (std::isnan(cell.mean_mse[e])) {
        entry = "failed";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4g ± %.4g", cell.mean_mse[e], cell.std_mse[e]);
        entry = buf;
      }
      out += (bold ? "**" + entry + "**" : entry) + " | ";
    }
    out += "\n";
  }
  out += "\nMSE over " + std::to_string(report.options.trials) +
         " trials, raw units (no scaling applied). Bold marks the smallest mean per row.\n";
  return out;
}

inline void emit_report(const BenchmarkReport& report, ReportFormat format,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  switch (format) {
    case ReportFormat::csv: {
      out << "shape,q_x,n,gamma,trial,estimator,mse,fit_seconds\n";
      for (const CellResult& cell : report.cells) {
        for (Index t = 0; t < cell.per_trial_mse.rows(); ++t) {
          for (int e = 0; e < kNumEstimators; ++e) {
            out << to_string(cell.config.shape) << "," << cell.config.q_x << ","
                << cell.config.n << "," << format_double(cell.config.gamma) << "," << t << ","
                << kEstimatorNames[static_cast<std::size_t>(e)] << ",";
            const double v = cell.per_trial_mse(t, e);
            out << (std::isnan(v) ? "" : format_double(v)) << ","
                << format_double(cell.fit_seconds(t, e)) << "\n";
          }
        }
      }
      break;
    }
    case ReportFormat::json:
      out << report_to_json(report).dump(2) << "\n";
      break;
    case ReportFormat::markdown:
      out << render_markdown(report);
      break;
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace late

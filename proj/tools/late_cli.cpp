// Command-line front door: benchmark suites on the synthetic design, fits on
// CSV datasets, prediction from saved models, and bundle generation.

#include "late/dataset_io.hpp"
#include "late/evaluation.hpp"
#include "late/model_io.hpp"
#include "late/model_selection.hpp"
#include "late/synthetic.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace late;

std::optional<std::uint64_t> env_seed_override() {
  const char* raw = std::getenv("LATE_SEED");
  if (raw == nullptr) return std::nullopt;
  std::uint64_t value = 0;
  const std::string s(raw);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw CLI::ValidationError("LATE_SEED", "LATE_SEED must be a nonnegative integer, got '" +
                                                s + "'");
  }
  return value;
}

std::string default_report_path(const std::string& format) {
  if (format == "csv") return "benchmark_report.csv";
  if (format == "markdown") return "benchmark_report.md";
  return "benchmark_report.json";
}

/// Rows with even index train, odd rows validate.
SeparateDatasets split_rows(const SeparateDatasets& data, bool odd) {
  auto pick_matrix = [&](const Matrix& m) {
    const Index count = (m.rows() + (odd ? 0 : 1)) / 2;
    Matrix out(count, m.cols());
    Index r = 0;
    for (Index i = odd ? 1 : 0; i < m.rows(); i += 2) out.row(r++) = m.row(i);
    return out;
  };
  auto pick_vector = [&](const Vector& v) {
    const Index count = (v.size() + (odd ? 0 : 1)) / 2;
    Vector out(count);
    Index r = 0;
    for (Index i = odd ? 1 : 0; i < v.size(); i += 2) out[r++] = v[i];
    return out;
  };
  SeparateDatasets out;
  for (int k = 0; k < 2; ++k) {
    out.treated_cov[k] = pick_matrix(data.treated_cov[k]);
    out.outcome_x[k] = pick_matrix(data.outcome_x[k]);
    out.outcome_y[k] = pick_vector(data.outcome_y[k]);
    out.p_d_hat[k] = data.p_d_hat[k];
  }
  return out;
}

struct FitFlags {
  std::string estimator;
  std::string data_config;
  std::string out_path = "model.json";
  std::string design = "1e2rd";
  double trim = 0.15;
  int budget = 100;
  Index centers = 100;
  std::uint64_t seed = 0;
  double fixed_h = 0.0;
  double fixed_lambda = -1.0;
  bool has_fixed_h = false;
  bool has_fixed_lambda = false;
};

int cmd_fit(const FitFlags& flags) {
  const SeparateDatasets full = load_separate_datasets(flags.data_config);
  const SeparateDatasets train = split_rows(full, false);
  const SeparateDatasets validation = split_rows(full, true);
  validation.validate();  // a 1-row input set would leave this empty

  const CombinedDataset train_t = combine_treatment(train);
  const CombinedDataset train_u = combine_outcome(train);
  const CombinedDataset val_t = combine_treatment(validation);
  const CombinedDataset val_u = combine_outcome(validation);
  const TuningData data{train_t, train_u, val_t, val_u};
  const PsdMode pmode = psd_mode_from_string(flags.design);

  const bool fixed = flags.has_fixed_h && flags.has_fixed_lambda;
  auto draw_centers = [&](int role) {
    std::mt19937_64 rng(derive_seed(flags.seed, 100 + role));
    return select_centers(train_t.x, flags.centers, rng);
  };
  auto make_space = [&](int role) {
    SearchSpace space;
    space.budget = flags.budget;
    space.seed = derive_seed(flags.seed, 200 + role);
    return space;
  };
  auto fit_psd_for = [&]() {
    const Matrix centers = draw_centers(0);
    if (fixed) {
      return fit_psd(train_t, train_u, KernelBasis{centers, flags.fixed_h},
                     flags.fixed_lambda, pmode);
    }
    return tune_psd(data, centers, make_space(0), pmode).fit;
  };

  SerializedModel model;
  model.kind = flags.estimator;
  if (flags.estimator == "dwls" || flags.estimator == "iwls") {
    const WeightMode mode =
        flags.estimator == "dwls" ? WeightMode::dwls : WeightMode::iwls;
    if (fixed) {
      const PsdEstimate psd = fit_psd_for();
      const KernelBasis basis{draw_centers(1), flags.fixed_h};
      model.fit = mode == WeightMode::dwls
                      ? fit_dwls(train_t, train_u, basis, psd, flags.fixed_lambda)
                      : fit_iwls(train_t, train_u, basis, psd, flags.trim,
                                 flags.fixed_lambda);
    } else {
      model.fit = tune_weighted(data, draw_centers(0), draw_centers(1), make_space(1), pmode,
                                mode, flags.trim)
                      .fit;
    }
  } else if (flags.estimator == "sep") {
    const PsdEstimate psd = fit_psd_for();
    const Matrix centers = draw_centers(1);
    if (fixed) {
      model.fit = fit_sep(train_u, KernelBasis{centers, flags.fixed_h}, psd,
                          flags.fixed_lambda, flags.trim);
    } else {
      model.fit = tune_sep(data, centers, make_space(1), psd, flags.trim).fit;
    }
  } else {  // dls
    const Matrix centers_f = draw_centers(1);
    const Matrix centers_g = draw_centers(2);
    if (fixed) {
      model.fit = fit_dls(train_t, train_u, KernelBasis{centers_f, flags.fixed_h},
                          KernelBasis{centers_g, flags.fixed_h}, flags.fixed_lambda,
                          flags.fixed_lambda);
    } else {
      model.fit = tune_dls(data, centers_f, centers_g, make_space(1)).fit;
    }
  }

  save_model(model, flags.out_path);
  std::cout << "wrote model to " << flags.out_path << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& input_path,
                const std::string& out_path) {
  const SerializedModel model = load_model(model_path);
  const Matrix x = load_covariate_csv(input_path);
  if (x.rows() > 0 && x.cols() != model.dim()) {
    throw InputError("covariate dimension " + std::to_string(x.cols()) +
                     " does not match model dimension " + std::to_string(model.dim()));
  }
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << "mu_hat\n";
  if (x.rows() > 0) {
    const Vector pred = model.predict_many(x);
    for (Index i = 0; i < pred.size(); ++i) out << format_double(pred[i]) << "\n";
  }
  if (!out) throw IoError("write failed for '" + out_path + "'");
  std::cout << "wrote " << x.rows() << " predictions to " << out_path << "\n";
  return 0;
}

int cmd_generate(const SyntheticConfig& cfg, const std::string& out_dir) {
  const SyntheticBundle bundle = generate_separate_datasets(cfg);
  save_separate_datasets(bundle.train, out_dir);

  const std::filesystem::path base(out_dir);
  std::ofstream test_out(base / "test.csv");
  if (!test_out) throw IoError("cannot open test.csv under '" + out_dir + "' for writing");
  test_out << "mu";
  for (Index j = 0; j < bundle.test_x.cols(); ++j) test_out << ",x" << (j + 1);
  test_out << "\n";
  for (Index i = 0; i < bundle.test_x.rows(); ++i) {
    test_out << format_double(bundle.test_mu[i]);
    for (Index j = 0; j < bundle.test_x.cols(); ++j) {
      test_out << "," << format_double(bundle.test_x(i, j));
    }
    test_out << "\n";
  }
  std::cout << "wrote dataset bundle to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LATE estimation from separately observed two-regime samples"};
  app.set_help_flag("--help", "Print help and exit");  // --h is the bandwidth
  app.require_subcommand(1);

  const std::vector<std::string> shape_names{"constant", "linear", "logistic"};
  const std::vector<std::string> estimator_names{"dwls", "iwls", "sep", "dls"};

  auto positive = [](const std::string& label) {
    return CLI::Validator(
        [label](std::string& value) -> std::string {
          const double v = std::strtod(value.c_str(), nullptr);
          if (!(v > 0.0)) return label + " must be positive, got " + value;
          return {};
        },
        "POSITIVE");
  };

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Run the synthetic MSE benchmark grid");
  std::vector<std::string> shapes{"constant", "linear", "logistic"};
  std::vector<int> dims{1, 5, 10};
  std::vector<int> sizes{10000, 50000};
  std::vector<double> gammas{0.0};
  BenchmarkOptions bench_options;
  std::string bench_format = "json";
  std::string bench_out;
  bench->add_option("--shape", shapes, "Effect shapes")
      ->check(CLI::IsMember(shape_names))
      ->capture_default_str();
  bench->add_option("--qx", dims, "Covariate dimensions")->capture_default_str();
  bench->add_option("--n", sizes, "Per-dataset sample sizes")->capture_default_str();
  bench->add_option("--gamma", gammas, "PSD shift parameters")->capture_default_str();
  bench->add_option("--trials", bench_options.trials, "Trials per grid cell")
      ->capture_default_str();
  bench->add_option("--budget", bench_options.budget, "Hyperparameter search budget")
      ->capture_default_str();
  bench->add_option("--seed", bench_options.seed, "Base seed")->capture_default_str();
  bench->add_option("--jobs", bench_options.jobs, "Concurrent trials")->capture_default_str();
  bench->add_option("--centers", bench_options.centers, "Kernel centers per basis")
      ->capture_default_str();
  bench->add_option("--trim", bench_options.trim, "PSD trim threshold for SEP/IWLS")
      ->check(positive("--trim"))
      ->capture_default_str();
  bench->add_option("--test-n", bench_options.test_n, "Test points per trial")
      ->capture_default_str();
  bench->add_option("--dump-pairs", bench_options.dump_pairs_path,
                    "Write per-test-point (PSD, squared error) CSV to this path");
  bench->add_option("--format", bench_format, "Report format")
      ->check(CLI::IsMember({"csv", "json", "markdown"}))
      ->capture_default_str();
  bench->add_option("--out", bench_out, "Report path (default benchmark_report.<ext>)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit one estimator on a CSV dataset bundle");
  FitFlags fit_flags;
  fit->add_option("--estimator", fit_flags.estimator, "Estimator")
      ->check(CLI::IsMember(estimator_names))
      ->required();
  fit->add_option("--data", fit_flags.data_config, "Dataset config JSON")->required();
  fit->add_option("--out", fit_flags.out_path, "Model output path")->capture_default_str();
  fit->add_option("--design", fit_flags.design, "Assignment design for the PSD range")
      ->check(CLI::IsMember({"1e2rd", "general"}))
      ->capture_default_str();
  fit->add_option("--trim", fit_flags.trim, "PSD trim threshold (iwls/sep)")
      ->check(positive("--trim"))
      ->capture_default_str();
  fit->add_option("--budget", fit_flags.budget, "Search budget")->capture_default_str();
  fit->add_option("--centers", fit_flags.centers, "Kernel centers per basis")
      ->capture_default_str();
  fit->add_option("--seed", fit_flags.seed, "Seed")->capture_default_str();
  auto* opt_h = fit->add_option("--h", fit_flags.fixed_h, "Fixed bandwidth (skips tuning)");
  auto* opt_lambda =
      fit->add_option("--lambda", fit_flags.fixed_lambda, "Fixed regularization");
  opt_h->needs(opt_lambda);
  opt_lambda->needs(opt_h);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Predict LATE from a saved model");
  std::string model_path, input_path, predict_out = "predictions.csv";
  predict_cmd->add_option("--model", model_path, "Model JSON path")->required();
  predict_cmd->add_option("--input", input_path, "Covariate CSV path")->required();
  predict_cmd->add_option("--out", predict_out, "Predictions CSV path")
      ->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "Persist a synthetic dataset bundle");
  std::string gen_shape = "linear";
  SyntheticConfig gen_cfg;
  std::string gen_out_dir = "bundle";
  gen->add_option("--shape", gen_shape, "Effect shape")
      ->check(CLI::IsMember(shape_names))
      ->capture_default_str();
  gen->add_option("--qx", gen_cfg.q_x, "Covariate dimension")->capture_default_str();
  gen->add_option("--n", gen_cfg.n, "Per-dataset sample size")->capture_default_str();
  gen->add_option("--gamma", gen_cfg.gamma, "PSD shift parameter")->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed, "Seed")->capture_default_str();
  gen->add_option("--test-n", gen_cfg.test_n, "Test set size")->capture_default_str();
  gen->add_option("--out-dir", gen_out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);

    if (const auto seed = env_seed_override()) {
      bench_options.seed = *seed;
      fit_flags.seed = *seed;
      gen_cfg.seed = *seed;
    }

    if (bench->parsed()) {
      BenchmarkGrid grid;
      grid.shapes.clear();
      for (const auto& s : shapes) grid.shapes.push_back(shape_from_string(s));
      grid.dims = dims;
      grid.sizes = sizes;
      grid.gammas = gammas;
      if (bench_out.empty()) bench_out = default_report_path(bench_format);
      const BenchmarkReport report = run_benchmark(grid, bench_options);
      emit_report(report, report_format_from_string(bench_format), bench_out);
      std::cout << "wrote report to " << bench_out << "\n";
      return 0;
    }
    if (fit->parsed()) {
      fit_flags.has_fixed_h = opt_h->count() > 0;
      fit_flags.has_fixed_lambda = opt_lambda->count() > 0;
      return cmd_fit(fit_flags);
    }
    if (predict_cmd->parsed()) return cmd_predict(model_path, input_path, predict_out);
    if (gen->parsed()) {
      gen_cfg.shape = shape_from_string(gen_shape);
      return cmd_generate(gen_cfg, gen_out_dir);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  } catch (const late::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
}

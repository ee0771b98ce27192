#include "late/evaluation.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace late;

namespace {

/// Brute-force two-sided p by enumerating all 2^n sign assignments.
double wilcoxon_brute(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) diff.push_back(a[i] - b[i]);
  }
  const int n = static_cast<int>(diff.size());
  if (n == 0) return 1.0;

  std::vector<int> order(diff.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  std::vector<double> rank(diff.size());
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() &&
           std::abs(diff[order[hi + 1]]) == std::abs(diff[order[lo]])) {
      ++hi;
    }
    for (std::size_t k = lo; k <= hi; ++k) {
      rank[order[k]] = (static_cast<double>(lo + 1) + static_cast<double>(hi + 1)) / 2.0;
    }
    lo = hi + 1;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    if (diff[i] > 0.0) observed += rank[i];
  }

  const long total = 1L << n;
  long count_le = 0, count_ge = 0;
  for (long mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1L << i)) w += rank[static_cast<std::size_t>(i)];
    }
    if (w <= observed + 1e-12) ++count_le;
    if (w >= observed - 1e-12) ++count_ge;
  }
  return std::min(1.0,
                  2.0 * static_cast<double>(std::min(count_le, count_ge)) / total);
}

BenchmarkOptions tiny_options() {
  BenchmarkOptions options;
  options.trials = 2;
  options.budget = 3;
  options.seed = 11;
  options.centers = 15;
  options.test_n = 200;
  return options;
}

BenchmarkGrid tiny_grid() {
  BenchmarkGrid grid;
  grid.shapes = {EffectShape::linear};
  grid.dims = {1};
  grid.sizes = {300};
  grid.gammas = {0.0};
  return grid;
}

nlohmann::json strip_timing(nlohmann::json j) {
  for (auto& cell : j["cells"]) {
    cell.erase("fit_seconds");
    cell.erase("psd_seconds");
  }
  return j;
}

}  // namespace

TEST_CASE("mse basics") {
  Vector a(2), b(2);
  a << 1.0, 1.0;
  b << 0.0, 2.0;
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, b) == 1.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector p(50), t(50);
  for (int i = 0; i < 50; ++i) {
    p[i] = normal(rng);
    t[i] = normal(rng);
  }
  double naive = 0.0;
  for (int i = 0; i < 50; ++i) naive += (p[i] - t[i]) * (p[i] - t[i]);
  naive /= 50.0;
  CHECK(mse(p, t) == doctest::Approx(naive).epsilon(1e-12));

  Vector wrong(3);
  CHECK_THROWS_AS(mse(a, wrong), InputError);
}

TEST_CASE("wilcoxon undefined when all differences vanish") {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const auto r = wilcoxon_signed_rank(a, a);
  CHECK(r.undefined);
  CHECK(r.p_value == 1.0);
}

TEST_CASE("wilcoxon exact branch: five concordant pairs give 0.0625") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> b{0.5, 1.0, 2.0, 2.5, 3.0};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(wilcoxon_brute(a, b)).epsilon(1e-12));
}

TEST_CASE("wilcoxon exact branch agrees with brute enumeration") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> pick(-4, 4);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 4 + static_cast<int>(rng() % 7);
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      a[static_cast<std::size_t>(i)] = pick(rng);  // integer values force ties and zeros
      b[static_cast<std::size_t>(i)] = pick(rng);
    }
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.p_value == doctest::Approx(wilcoxon_brute(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon null instance is not significant") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(200), b(200);
  for (int i = 0; i < 200; ++i) {
    a[static_cast<std::size_t>(i)] = normal(rng);
    b[static_cast<std::size_t>(i)] = normal(rng);
  }
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.p_value > 0.01);
  CHECK(r.p_value <= 1.0);
}

TEST_CASE("wilcoxon exact and approximate branches agree near the cutoff") {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(25), b(25);
    for (int i = 0; i < 25; ++i) {
      a[static_cast<std::size_t>(i)] = normal(rng);
      b[static_cast<std::size_t>(i)] = normal(rng) + 0.3;
    }
    const double exact = wilcoxon_signed_rank(a, b, WilcoxonMethod::exact).p_value;
    const double approx = wilcoxon_signed_rank(a, b, WilcoxonMethod::normal_approx).p_value;
    CHECK(std::abs(exact - approx) < 0.02);
  }
}

TEST_CASE("benchmark: single trial has zero std and aggregates recompute") {
  BenchmarkOptions options = tiny_options();
  options.trials = 1;
  const BenchmarkReport report = run_benchmark(tiny_grid(), options);
  REQUIRE(report.cells.size() == 1);
  const CellResult& cell = report.cells[0];
  REQUIRE(cell.per_trial_mse.rows() == 1);
  for (int e = 0; e < kNumEstimators; ++e) {
    CHECK(cell.std_mse[e] == 0.0);
    CHECK(cell.mean_mse[e] == cell.per_trial_mse(0, e));
  }
}

TEST_CASE("benchmark reruns are identical and aggregates are pure") {
  const BenchmarkOptions options = tiny_options();
  const BenchmarkReport a = run_benchmark(tiny_grid(), options);
  const BenchmarkReport b = run_benchmark(tiny_grid(), options);
  CHECK(strip_timing(report_to_json(a)) == strip_timing(report_to_json(b)));

  // Concurrency does not change the numbers.
  BenchmarkOptions parallel = options;
  parallel.jobs = 2;
  const BenchmarkReport c = run_benchmark(tiny_grid(), parallel);
  auto ja = strip_timing(report_to_json(a));
  auto jc = strip_timing(report_to_json(c));
  ja["options"].erase("jobs");
  jc["options"].erase("jobs");
  CHECK(ja == jc);

  // Mean/std recompute from the per-trial matrix.
  const CellResult& cell = a.cells[0];
  for (int e = 0; e < kNumEstimators; ++e) {
    double sum = 0.0;
    for (Index t = 0; t < cell.per_trial_mse.rows(); ++t) sum += cell.per_trial_mse(t, e);
    CHECK(cell.mean_mse[e] ==
          doctest::Approx(sum / cell.per_trial_mse.rows()).epsilon(1e-12));
    CHECK(cell.wilcoxon_p[e] >= 0.0);
    CHECK(cell.wilcoxon_p[e] <= 1.0);
  }
}

TEST_CASE("report emission formats") {
  const auto dir = std::filesystem::temp_directory_path() / "late_report_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  SUBCASE("empty grid gives a header-only CSV") {
    BenchmarkReport empty;
    empty.options = tiny_options();
    const auto path = (dir / "empty.csv").string();
    emit_report(empty, ReportFormat::csv, path);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "shape,q_x,n,gamma,trial,estimator,mse,fit_seconds");
    CHECK_FALSE(std::getline(in, line));
  }

  SUBCASE("JSON round-trips to an equal report") {
    const BenchmarkReport report = run_benchmark(tiny_grid(), tiny_options());
    const auto path = (dir / "report.json").string();
    emit_report(report, ReportFormat::json, path);
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    const BenchmarkReport loaded = report_from_json(j);
    CHECK(report_to_json(loaded) == report_to_json(report));
  }

  SUBCASE("markdown bolds the best estimator per row") {
    BenchmarkReport report;
    report.options = tiny_options();
    CellResult cell;
    cell.config = {EffectShape::linear, 1, 300, 0.0};
    cell.per_trial_mse.resize(1, kNumEstimators);
    cell.per_trial_mse << 0.5, 0.2, 0.9, 0.4;  // iwls is best
    cell.fit_seconds = Matrix::Zero(1, kNumEstimators);
    cell.psd_seconds = Vector::Zero(1);
    detail::finalize_cell(cell);
    report.cells.push_back(cell);

    const std::string md = render_markdown(report);
    CHECK(md.find("**0.2") != std::string::npos);
    CHECK(md.find("**0.5") == std::string::npos);
  }

  std::filesystem::remove_all(dir);
}

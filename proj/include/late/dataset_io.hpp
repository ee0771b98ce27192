#pragma once

#include "late/dataset.hpp"
#include "late/error.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace late {

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view field, const std::string& file, std::size_t line) {
  double out = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError(file + ":" + std::to_string(line) + ": malformed number '" +
                     std::string(field) + "'");
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

/// Reads a CSV with a mandatory header, returning one row of doubles per line.
inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>> load_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  std::string raw;
  if (!std::getline(in, raw)) throw ParseError(path + ":1: missing header row");
  std::vector<std::string> header;
  for (auto f : split_csv_line(strip_cr(raw))) header.emplace_back(f);

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = strip_cr(raw);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_double(f, path, line_no));
    rows.push_back(std::move(row));
  }
  return {std::move(header), std::move(rows)};
}

inline void expect_covariate_header(const std::vector<std::string>& header,
                                    std::size_t offset, const std::string& path) {
  for (std::size_t j = offset; j < header.size(); ++j) {
    const std::string want = "x" + std::to_string(j - offset + 1);
    if (header[j] != want) {
      throw ParseError(path + ":1: expected header field '" + want + "', got '" +
                       header[j] + "'");
    }
  }
}

}  // namespace detail

/// Covariate-only CSV with header x1..xq. May be empty (header only).
inline Matrix load_covariate_csv(const std::string& path) {
  auto [header, rows] = detail::load_csv(path);
  if (header.empty() || header[0] != "x1") {
    throw ParseError(path + ":1: expected header starting with 'x1'");
  }
  detail::expect_covariate_header(header, 0, path);
  Matrix x(static_cast<Index>(rows.size()), static_cast<Index>(header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      x(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return x;
}

/// Outcome CSV with header y,x1..xq.
inline std::pair<Vector, Matrix> load_outcome_csv(const std::string& path) {
  auto [header, rows] = detail::load_csv(path);
  if (header.size() < 2 || header[0] != "y") {
    throw ParseError(path + ":1: expected header 'y,x1,...'");
  }
  detail::expect_covariate_header(header, 1, path);
  const Index q = static_cast<Index>(header.size()) - 1;
  Vector y(static_cast<Index>(rows.size()));
  Matrix x(static_cast<Index>(rows.size()), q);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    y[static_cast<Index>(i)] = rows[i][0];
    for (Index j = 0; j < q; ++j) {
      x(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j) + 1];
    }
  }
  return {std::move(y), std::move(x)};
}

inline void save_covariate_csv(const Matrix& x, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << "x" << (j + 1);
  out << "\n";
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      if (j) out << ",";
      out << format_double(x(i, j));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void save_outcome_csv(const Vector& y, const Matrix& x, const std::string& path) {
  if (y.size() != x.rows()) throw InputError("save_outcome_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "y";
  for (Index j = 0; j < x.cols(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (Index i = 0; i < x.rows(); ++i) {
    out << format_double(y[i]);
    for (Index j = 0; j < x.cols(); ++j) out << "," << format_double(x(i, j));
    out << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Loads the four sample files named by a JSON config. Relative paths in the
/// config resolve against the config file's directory.
inline SeparateDatasets load_separate_datasets(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open '" + config_path + "' for reading");

  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(config_path + ": invalid JSON: " + e.what());
  }

  const auto dir = std::filesystem::path(config_path).parent_path();
  auto resolve = [&](const std::string& key) -> std::string {
    if (!cfg.contains(key) || !cfg[key].is_string()) {
      throw ParseError(config_path + ": missing or non-string key '" + key + "'");
    }
    std::filesystem::path p = cfg[key].get<std::string>();
    if (p.is_relative()) p = dir / p;
    return p.string();
  };
  auto rate = [&](const std::string& key) -> double {
    if (!cfg.contains(key) || !cfg[key].is_number()) {
      throw ParseError(config_path + ": missing or non-numeric key '" + key + "'");
    }
    return cfg[key].get<double>();
  };

  const std::string paths[4] = {resolve("treated_cov_0"), resolve("treated_cov_1"),
                                resolve("outcomes_0"), resolve("outcomes_1")};

  SeparateDatasets data;
  data.treated_cov[0] = load_covariate_csv(paths[0]);
  data.treated_cov[1] = load_covariate_csv(paths[1]);
  std::tie(data.outcome_y[0], data.outcome_x[0]) = load_outcome_csv(paths[2]);
  std::tie(data.outcome_y[1], data.outcome_x[1]) = load_outcome_csv(paths[3]);
  data.p_d_hat[0] = rate("p_d_hat_0");
  data.p_d_hat[1] = rate("p_d_hat_1");

  // Cross-check dimensions, naming the offending pair of files.
  const Index q = data.treated_cov[1].cols();
  const Matrix* mats[4] = {&data.treated_cov[0], &data.treated_cov[1], &data.outcome_x[0],
                           &data.outcome_x[1]};
  for (int i = 0; i < 4; ++i) {
    if (mats[i]->cols() != q) {
      throw ValidationError("covariate dimension mismatch: '" + paths[1] + "' has " +
                            std::to_string(q) + " columns but '" + paths[i] + "' has " +
                            std::to_string(mats[i]->cols()));
    }
  }
  data.validate();
  return data;
}

/// Writes the four CSVs plus config JSON into `dir`; returns the config path.
inline std::string save_separate_datasets(const SeparateDatasets& data, const std::string& dir,
                                          const std::string& config_name = "config.json") {
  data.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  const std::filesystem::path base(dir);
  save_covariate_csv(data.treated_cov[0], (base / "treated_cov_0.csv").string());
  save_covariate_csv(data.treated_cov[1], (base / "treated_cov_1.csv").string());
  save_outcome_csv(data.outcome_y[0], data.outcome_x[0], (base / "outcomes_0.csv").string());
  save_outcome_csv(data.outcome_y[1], data.outcome_x[1], (base / "outcomes_1.csv").string());

  nlohmann::json cfg{
      {"treated_cov_0", "treated_cov_0.csv"}, {"treated_cov_1", "treated_cov_1.csv"},
      {"outcomes_0", "outcomes_0.csv"},       {"outcomes_1", "outcomes_1.csv"},
      {"p_d_hat_0", data.p_d_hat[0]},         {"p_d_hat_1", data.p_d_hat[1]}};

  const std::string config_path = (base / config_name).string();
  std::ofstream out(config_path);
  if (!out) throw IoError("cannot open '" + config_path + "' for writing");
  out << cfg.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + config_path + "'");
  return config_path;
}

}  // namespace late

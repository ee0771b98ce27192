#pragma once

#include "late/types.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace late::detail {

/// NaN serializes as null and round-trips back to NaN.
inline nlohmann::json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

inline double number_from(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(number_or_null(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Index cols_hint) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : cols_hint;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index c = 0; c < cols; ++c) m(i, c) = number_from(j.at(i).at(c));
  }
  return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(number_or_null(v[i]));
  return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = number_from(j.at(i));
  return v;
}

}  // namespace late::detail

#pragma once

#include "late/estimators.hpp"
#include "late/json_util.hpp"
#include "late/psd.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <variant>

namespace late {

namespace detail {

inline nlohmann::json fitted_model_to_json(const FittedModel& model) {
  nlohmann::json j;
  j["bandwidth"] = model.basis.bandwidth;
  j["centers"] = matrix_to_json(model.basis.centers);
  nlohmann::json coef = nlohmann::json::array();
  for (Index i = 0; i < model.coefficients.size(); ++i) coef.push_back(model.coefficients[i]);
  j["coefficients"] = std::move(coef);
  return j;
}

inline FittedModel fitted_model_from_json(const nlohmann::json& j) {
  FittedModel model;
  model.basis.bandwidth = j.at("bandwidth").get<double>();
  model.basis.centers = matrix_from_json(j.at("centers"), 0);
  model.coefficients = vector_from_json(j.at("coefficients"));
  model.validate();
  return model;
}

inline nlohmann::json psd_to_json(const PsdEstimate& psd) {
  nlohmann::json j;
  j["mode"] = to_string(psd.mode);
  j["epsilon"] = psd.epsilon;
  j["plus_model"] = fitted_model_to_json(psd.plus_model);
  j["minus_model"] = fitted_model_to_json(psd.minus_model);
  return j;
}

inline PsdEstimate psd_from_json(const nlohmann::json& j) {
  PsdEstimate psd;
  psd.mode = psd_mode_from_string(j.at("mode").get<std::string>());
  psd.epsilon = j.at("epsilon").get<double>();
  psd.plus_model = fitted_model_from_json(j.at("plus_model"));
  psd.minus_model = fitted_model_from_json(j.at("minus_model"));
  return psd;
}

}  // namespace detail

/// Any fitted estimator, as stored in a model file.
struct SerializedModel {
  std::string kind;  // dwls | iwls | sep | dls
  std::variant<WeightedFit, SepFit, DlsFit> fit;

  double predict_one(const Vector& x) const {
    return std::visit([&](const auto& f) { return predict(f, x); }, fit);
  }
  Vector predict_many(const Matrix& points) const {
    return std::visit([&](const auto& f) { return predict(f, points); }, fit);
  }
  Index dim() const {
    return std::visit(
        [](const auto& f) -> Index {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, SepFit>) return f.nu_model.basis.dim();
          else return f.f_model.basis.dim();
        },
        fit);
  }
};

inline void save_model(const SerializedModel& model, const std::string& path) {
  nlohmann::json j;
  j["kind"] = model.kind;
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, WeightedFit>) {
          j["f_model"] = detail::fitted_model_to_json(f.f_model);
          j["lambda_f"] = f.lambda_f;
          if (f.mode == WeightMode::iwls) j["trim"] = f.trim_threshold;
          if (f.weight_source) j["psd"] = detail::psd_to_json(*f.weight_source);
        } else if constexpr (std::is_same_v<T, SepFit>) {
          j["nu_model"] = detail::fitted_model_to_json(f.nu_model);
          j["lambda_nu"] = f.lambda_nu;
          j["trim"] = f.trim_threshold;
          j["psd"] = detail::psd_to_json(f.psd);
        } else {
          j["f_model"] = detail::fitted_model_to_json(f.f_model);
          j["g_model"] = detail::fitted_model_to_json(f.g_model);
          j["lambda_f"] = f.lambda_f;
          j["lambda_g"] = f.lambda_g;
        }
      },
      model.fit);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline SerializedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": invalid JSON: " + e.what());
  }

  SerializedModel model;
  model.kind = j.at("kind").get<std::string>();
  if (model.kind == "dwls" || model.kind == "iwls") {
    WeightedFit fit;
    fit.f_model = detail::fitted_model_from_json(j.at("f_model"));
    fit.mode = model.kind == "dwls" ? WeightMode::dwls : WeightMode::iwls;
    fit.lambda_f = j.value("lambda_f", 0.0);
    fit.trim_threshold = j.value("trim", 0.0);
    if (j.contains("psd")) {
      fit.weight_source = std::make_shared<PsdEstimate>(detail::psd_from_json(j.at("psd")));
    }
    model.fit = std::move(fit);
  } else if (model.kind == "sep") {
    SepFit fit;
    fit.nu_model = detail::fitted_model_from_json(j.at("nu_model"));
    fit.psd = detail::psd_from_json(j.at("psd"));
    fit.trim_threshold = j.at("trim").get<double>();
    fit.lambda_nu = j.value("lambda_nu", 0.0);
    model.fit = std::move(fit);
  } else if (model.kind == "dls") {
    DlsFit fit;
    fit.f_model = detail::fitted_model_from_json(j.at("f_model"));
    fit.g_model = detail::fitted_model_from_json(j.at("g_model"));
    fit.lambda_f = j.value("lambda_f", 0.0);
    fit.lambda_g = j.value("lambda_g", 0.0);
    model.fit = std::move(fit);
  } else {
    throw ParseError(path + ": unknown model kind '" + model.kind + "'");
  }
  return model;
}

}  // namespace late

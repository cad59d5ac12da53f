#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace ipf::metrics {

/// Quantile levels, in forecast order.
inline constexpr std::array<double, 7> kQuantiles = {0.10, 0.25, 0.45, 0.50,
                                                     0.55, 0.75, 0.90};
inline constexpr size_t kNumQuantiles = kQuantiles.size();
inline constexpr size_t kMedianIndex = 3;

/// Predictions at the seven levels of kQuantiles (EUR/MWh).
using QuantileForecast = std::array<double, kNumQuantiles>;

inline double pinball(double y, double yhat, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pinball: tau must be in (0,1)");
  return y >= yhat ? tau * (y - yhat) : (1.0 - tau) * (yhat - y);
}

/// Average quantile loss: mean of pinball over all samples and all levels.
inline double aql(std::span<const double> truths, std::span<const QuantileForecast> forecasts) {
  if (truths.size() != forecasts.size()) throw std::invalid_argument("aql: length mismatch");
  if (truths.empty()) throw std::invalid_argument("aql: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < truths.size(); ++i)
    for (size_t q = 0; q < kNumQuantiles; ++q)
      sum += pinball(truths[i], forecasts[i][q], kQuantiles[q]);
  return sum / (static_cast<double>(truths.size()) * static_cast<double>(kNumQuantiles));
}

/// Average quantile crossing rate, in percent: the share of adjacent level
/// pairs with strictly decreasing predictions.
inline double aqcr(std::span<const QuantileForecast> forecasts) {
  if (forecasts.empty()) throw std::invalid_argument("aqcr: empty input");
  size_t violations = 0;
  for (const QuantileForecast& f : forecasts)
    for (size_t q = 0; q + 1 < kNumQuantiles; ++q)
      if (f[q] > f[q + 1]) ++violations;
  return 100.0 * static_cast<double>(violations) /
         (static_cast<double>(forecasts.size()) * static_cast<double>(kNumQuantiles - 1));
}

inline double mae(std::span<const double> truths, std::span<const double> medians) {
  if (truths.size() != medians.size()) throw std::invalid_argument("mae: length mismatch");
  if (truths.empty()) throw std::invalid_argument("mae: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < truths.size(); ++i) sum += std::fabs(truths[i] - medians[i]);
  return sum / static_cast<double>(truths.size());
}

inline double rmse(std::span<const double> truths, std::span<const double> medians) {
  if (truths.size() != medians.size()) throw std::invalid_argument("rmse: length mismatch");
  if (truths.empty()) throw std::invalid_argument("rmse: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < truths.size(); ++i) {
    const double e = truths[i] - medians[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(truths.size()));
}

struct EvalReport {
  double aql = 0.0;
  double aqcr = 0.0;  // percent
  double mae = 0.0;
  double rmse = 0.0;
  size_t n = 0;
};

/// Probabilistic scores from the full forecast, pointwise scores from the
/// median quantile.
inline EvalReport evaluate(std::span<const double> truths,
                           std::span<const QuantileForecast> forecasts) {
  EvalReport r;
  r.n = truths.size();
  r.aql = aql(truths, forecasts);
  r.aqcr = aqcr(forecasts);
  std::vector<double> med(truths.size());
  for (size_t i = 0; i < truths.size(); ++i) med[i] = forecasts[i][kMedianIndex];
  r.mae = mae(truths, med);
  r.rmse = rmse(truths, med);
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  return nlohmann::ordered_json{
      {"aql", r.aql}, {"aqcr", r.aqcr}, {"mae", r.mae}, {"rmse", r.rmse}, {"n", r.n}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.aql = j.at("aql").get<double>();
  r.aqcr = j.at("aqcr").get<double>();
  r.mae = j.at("mae").get<double>();
  r.rmse = j.at("rmse").get<double>();
  r.n = j.at("n").get<size_t>();
  return r;
}

}  // namespace ipf::metrics

#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipf/autodiff.hpp"
#include "ipf/dataset.hpp"
#include "ipf/metrics.hpp"
#include "ipf/quantile_net.hpp"
#include "ipf/scaling.hpp"

namespace ipf::baselines {

/// Which current value a naive model persists as its point forecast.
enum class NaiveKind { price, id15, id60 };

inline std::string to_string(NaiveKind k) {
  switch (k) {
    case NaiveKind::price: return "price";
    case NaiveKind::id15: return "id15";
    case NaiveKind::id60: return "id60";
  }
  return "price";
}

inline NaiveKind naive_kind_from_string(std::string_view s) {
  if (s == "price") return NaiveKind::price;
  if (s == "id15") return NaiveKind::id15;
  if (s == "id60") return NaiveKind::id60;
  throw std::invalid_argument("unknown naive kind: " + std::string(s));
}

inline int naive_feature(NaiveKind k) {
  switch (k) {
    case NaiveKind::price: return data::kP;
    case NaiveKind::id15: return data::kPId15;
    case NaiveKind::id60: return data::kPId60;
  }
  return data::kP;
}

inline double naive_point(NaiveKind k, const data::WindowSet& ws, size_t sample) {
  return ws.current(sample, naive_feature(k));
}

/// Per-delivery-time residual percentiles at the quantile levels. Buckets
/// with no training residuals fall back to the pooled residuals.
struct ResidualBands {
  std::array<metrics::QuantileForecast, data::kPeriodsPerDay> offsets{};
  std::array<bool, data::kPeriodsPerDay> from_global{};
  size_t global_fallbacks = 0;
};

inline metrics::QuantileForecast residual_percentiles(std::vector<double> residuals) {
  std::sort(residuals.begin(), residuals.end());
  metrics::QuantileForecast q;
  for (size_t i = 0; i < metrics::kNumQuantiles; ++i)
    q[i] = scaling::percentile_sorted(residuals, metrics::kQuantiles[i]);
  return q;
}

inline ResidualBands calibrate_bands(NaiveKind kind, const data::WindowSet& ws,
                                     std::span<const size_t> train_samples) {
  if (train_samples.empty())
    throw std::invalid_argument("calibrate_bands: empty training data");
  std::array<std::vector<double>, data::kPeriodsPerDay> by_delivery;
  std::vector<double> pool;
  pool.reserve(train_samples.size());
  for (size_t i : train_samples) {
    const double r = ws.target_price(i) - naive_point(kind, ws, i);
    by_delivery[ws.samples[i].delivery].push_back(r);
    pool.push_back(r);
  }
  ResidualBands bands;
  const metrics::QuantileForecast global = residual_percentiles(pool);
  for (int d = 0; d < data::kPeriodsPerDay; ++d) {
    if (by_delivery[d].empty()) {
      bands.offsets[d] = global;
      bands.from_global[d] = true;
      ++bands.global_fallbacks;
    } else {
      bands.offsets[d] = residual_percentiles(std::move(by_delivery[d]));
    }
  }
  return bands;
}

/// Point forecast plus the delivery time's sorted residual offsets: always a
/// nondecreasing forecast vector.
inline metrics::QuantileForecast naive_forecast(NaiveKind kind, const ResidualBands& bands,
                                                const data::WindowSet& ws, size_t sample) {
  const double point = naive_point(kind, ws, sample);
  metrics::QuantileForecast f = bands.offsets[ws.samples[sample].delivery];
  for (double& x : f) x += point;
  return f;
}

inline metrics::EvalReport evaluate_naive(NaiveKind kind, const data::WindowSet& ws,
                                          std::span<const size_t> train_samples,
                                          std::span<const size_t> eval_samples) {
  const ResidualBands bands = calibrate_bands(kind, ws, train_samples);
  std::vector<double> truths;
  std::vector<metrics::QuantileForecast> forecasts;
  truths.reserve(eval_samples.size());
  forecasts.reserve(eval_samples.size());
  for (size_t i : eval_samples) {
    truths.push_back(ws.target_price(i));
    forecasts.push_back(naive_forecast(kind, bands, ws, i));
  }
  return metrics::evaluate(truths, forecasts);
}

/// Linear quantile regression on the latest (scaled) imbalance price: one
/// affine pair per quantile level, trained on pinball loss. 14 parameters.
class LqrModel : public train::QuantileNet {
 public:
  explicit LqrModel(uint64_t seed = 1, int horizon_min = 15)
      : seed_(seed), horizon_min_(horizon_min) {
    Rng rng(Rng::derive(seed, 0x6c7172ull));
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q) {
      a_[q] = params_.add(rng.uniform(-0.1, 0.1));
      b_[q] = params_.add(0.0);
    }
  }

  int horizon_min() const { return horizon_min_; }

  void fit_scaler(const data::FeatureFrame& frame, size_t begin, size_t end) {
    std::vector<double> prices(frame.cols[data::kP].begin() + begin,
                               frame.cols[data::kP].begin() + end);
    scaler_ = scaling::fit(std::move(prices));
    fitted_ = true;
  }
  void set_scaler(const scaling::RobustScalerParams& s) {
    scaler_ = s;
    fitted_ = true;
  }
  const scaling::RobustScalerParams& scaler() const { return scaler_; }

  std::array<ad::Value, metrics::kNumQuantiles> build_forward(ad::GraphBuilder& g,
                                                              const data::WindowSet& ws,
                                                              size_t sample) override {
    if (!fitted_) throw std::logic_error("lqr forward: scaler not fitted");
    const double x = scaling::transform(ws.current(sample, data::kP), scaler_);
    ad::Value xv = g.input(x);
    std::array<ad::Value, metrics::kNumQuantiles> out{};
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q)
      out[q] = g.param(a_[q]) * xv + g.param(b_[q]);
    return out;
  }

  double slope(size_t q) const { return params_.value(a_[q]); }
  double intercept(size_t q) const { return params_.value(b_[q]); }

  double transform_target(double y) const override { return scaling::transform(y, scaler_); }
  double inverse_transform(double y) const override {
    return scaling::inverse_transform(y, scaler_);
  }
  ad::ParamStore& params() override { return params_; }
  size_t param_count() const override { return params_.size(); }

  nlohmann::ordered_json checkpoint() const {
    nlohmann::ordered_json j;
    j["format"] = "ipf-checkpoint";
    j["version"] = 1;
    j["family"] = "lqr";
    j["config"] = {{"horizon_min", horizon_min_}, {"seed", seed_}};
    j["scaler"] = {{"center", scaler_.center}, {"scale", scaler_.scale}};
    j["params"] = std::vector<double>(params_.values().begin(), params_.values().end());
    return j;
  }

  static LqrModel from_checkpoint(const nlohmann::json& j) {
    if (j.at("family").get<std::string>() != "lqr")
      throw std::invalid_argument("checkpoint family is not lqr");
    LqrModel m(j.at("config").at("seed").get<uint64_t>(),
               j.at("config").at("horizon_min").get<int>());
    scaling::RobustScalerParams s;
    s.center = j.at("scaler").at("center").get<double>();
    s.scale = j.at("scaler").at("scale").get<double>();
    m.set_scaler(s);
    const auto vals = j.at("params").get<std::vector<double>>();
    if (vals.size() != m.params_.size())
      throw std::invalid_argument("checkpoint parameter count mismatch");
    for (size_t i = 0; i < vals.size(); ++i) m.params_.set_value(static_cast<int>(i), vals[i]);
    return m;
  }

 private:
  uint64_t seed_;
  int horizon_min_ = 15;
  ad::ParamStore params_;
  std::array<int, metrics::kNumQuantiles> a_{}, b_{};
  scaling::RobustScalerParams scaler_;
  bool fitted_ = false;
};

struct MlpConfig {
  int hidden = 8;
  int n_layers = 2;
  int lookback_min = 0;
  int horizon_min = 15;
  uint64_t seed = 1;
};

/// Dense net on the scaled lagged-price window with seven independent linear
/// heads. Nothing enforces quantile ordering, so its forecasts can cross.
class MlpModel : public train::QuantileNet {
 public:
  static MlpModel build(const MlpConfig& cfg) {
    if (cfg.hidden < 1 || cfg.n_layers < 1)
      throw std::invalid_argument("mlp config: hidden and n_layers must be >= 1");
    if (cfg.lookback_min < 0 || cfg.lookback_min % 15 != 0)
      throw std::invalid_argument("mlp config: lookback must be a multiple of 15");
    MlpModel m;
    m.cfg_ = cfg;
    m.n_lags_ = cfg.lookback_min / 15 + 1;
    Rng rng(Rng::derive(cfg.seed, 0x6d6c70ull));
    int in = m.n_lags_;
    for (int l = 0; l < cfg.n_layers; ++l) {
      m.layers_.push_back(ad::DenseLayer::create(m.params_, in, cfg.hidden, rng));
      in = cfg.hidden;
    }
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q)
      m.heads_[q] = ad::DenseLayer::create(m.params_, cfg.hidden, 1, rng);
    return m;
  }

  const MlpConfig& config() const { return cfg_; }

  void fit_scaler(const data::FeatureFrame& frame, size_t begin, size_t end) {
    std::vector<double> prices(frame.cols[data::kP].begin() + begin,
                               frame.cols[data::kP].begin() + end);
    scaler_ = scaling::fit(std::move(prices));
    fitted_ = true;
  }
  void set_scaler(const scaling::RobustScalerParams& s) {
    scaler_ = s;
    fitted_ = true;
  }
  const scaling::RobustScalerParams& scaler() const { return scaler_; }

  std::array<ad::Value, metrics::kNumQuantiles> build_forward(ad::GraphBuilder& g,
                                                              const data::WindowSet& ws,
                                                              size_t sample) override {
    if (!fitted_) throw std::logic_error("mlp forward: scaler not fitted");
    if (ws.n_lags != n_lags_)
      throw std::invalid_argument("mlp forward: window lag count mismatch");
    std::vector<double> lags(n_lags_);
    ws.lags(sample, data::kP, lags);
    std::vector<ad::Value> z;
    z.reserve(n_lags_);
    for (double v : lags) z.push_back(g.input(scaling::transform(v, scaler_)));
    for (const ad::DenseLayer& layer : layers_) {
      z = layer.apply(g, z);
      for (ad::Value& v : z) v = g.tape().tanh(v);
    }
    std::array<ad::Value, metrics::kNumQuantiles> out{};
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q) out[q] = heads_[q].apply(g, z)[0];
    return out;
  }

  double transform_target(double y) const override { return scaling::transform(y, scaler_); }
  double inverse_transform(double y) const override {
    return scaling::inverse_transform(y, scaler_);
  }
  ad::ParamStore& params() override { return params_; }
  size_t param_count() const override { return params_.size(); }

  nlohmann::ordered_json checkpoint() const {
    nlohmann::ordered_json j;
    j["format"] = "ipf-checkpoint";
    j["version"] = 1;
    j["family"] = "mlp";
    j["config"] = {{"hidden", cfg_.hidden},
                   {"n_layers", cfg_.n_layers},
                   {"lookback_min", cfg_.lookback_min},
                   {"horizon_min", cfg_.horizon_min},
                   {"seed", cfg_.seed}};
    j["scaler"] = {{"center", scaler_.center}, {"scale", scaler_.scale}};
    j["params"] = std::vector<double>(params_.values().begin(), params_.values().end());
    return j;
  }

  static MlpModel from_checkpoint(const nlohmann::json& j) {
    if (j.at("family").get<std::string>() != "mlp")
      throw std::invalid_argument("checkpoint family is not mlp");
    MlpConfig cfg;
    const auto& jc = j.at("config");
    cfg.hidden = jc.at("hidden").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.lookback_min = jc.at("lookback_min").get<int>();
    cfg.horizon_min = jc.at("horizon_min").get<int>();
    cfg.seed = jc.at("seed").get<uint64_t>();
    MlpModel m = build(cfg);
    scaling::RobustScalerParams s;
    s.center = j.at("scaler").at("center").get<double>();
    s.scale = j.at("scaler").at("scale").get<double>();
    m.set_scaler(s);
    const auto vals = j.at("params").get<std::vector<double>>();
    if (vals.size() != m.params_.size())
      throw std::invalid_argument("checkpoint parameter count mismatch");
    for (size_t i = 0; i < vals.size(); ++i) m.params_.set_value(static_cast<int>(i), vals[i]);
    return m;
  }

 private:
  MlpConfig cfg_;
  int n_lags_ = 1;
  ad::ParamStore params_;
  std::vector<ad::DenseLayer> layers_;
  std::array<ad::DenseLayer, metrics::kNumQuantiles> heads_{};
  scaling::RobustScalerParams scaler_;
  bool fitted_ = false;
};

}  // namespace ipf::baselines

#pragma once

#include <array>

#include "ipf/autodiff.hpp"
#include "ipf/dataset.hpp"
#include "ipf/metrics.hpp"

namespace ipf::train {

/// Anything trainable on the average quantile loss: builds the seven scaled
/// quantile outputs for one sample as a differentiable graph and maps
/// between raw and scaled price space.
class QuantileNet {
 public:
  virtual ~QuantileNet() = default;

  virtual std::array<ad::Value, metrics::kNumQuantiles> build_forward(
      ad::GraphBuilder& g, const data::WindowSet& ws, size_t sample) = 0;

  virtual double transform_target(double y_raw) const = 0;
  virtual double inverse_transform(double y_scaled) const = 0;
  virtual ad::ParamStore& params() = 0;
  virtual size_t param_count() const = 0;

  /// Forecast in price units for one sample (forward only).
  metrics::QuantileForecast predict(ad::GraphBuilder& g, const data::WindowSet& ws,
                                    size_t sample) {
    g.reset();
    const auto outs = build_forward(g, ws, sample);
    metrics::QuantileForecast f;
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q)
      f[q] = inverse_transform(outs[q].val());
    return f;
  }
};

}  // namespace ipf::train

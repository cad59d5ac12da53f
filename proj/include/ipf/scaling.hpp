#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipf/pricing.hpp"
#include "ipf/soft_ops.hpp"

namespace ipf::scaling {

/// Physical unit groups. Features and pricing constants sharing a unit are
/// scaled with one common scaler; dimensionless quantities pass through.
enum class Unit { price_eur_mwh, power_mw, energy_mwh, dimensionless };

struct RobustScalerParams {
  double center = 0.0;
  double scale = 1.0;
};

/// Percentile with linear interpolation between order statistics
/// (index p*(n-1); the common robust-scaling default). Input must be sorted.
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty data");
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, p);
}

/// Median / IQR over the given values (already the concatenation of all
/// member columns of one unit group). A zero IQR falls back to scale 1.
inline RobustScalerParams fit(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("robust scaler: empty training data");
  std::sort(values.begin(), values.end());
  RobustScalerParams p;
  p.center = percentile_sorted(values, 0.50);
  p.scale = percentile_sorted(values, 0.75) - percentile_sorted(values, 0.25);
  if (p.scale == 0.0) p.scale = 1.0;
  return p;
}

inline double transform(double x, const RobustScalerParams& p) {
  return (x - p.center) / p.scale;
}

inline double inverse_transform(double y, const RobustScalerParams& p) {
  return y * p.scale + p.center;
}

inline Unit constant_unit(std::string_view name) {
  if (name == "c0") return Unit::dimensionless;
  if (name == "c1" || name == "c2" || name == "c3" || name == "c10")
    return Unit::price_eur_mwh;
  if (name == "c4" || name == "c5" || name == "c6" || name == "c7" || name == "c8" ||
      name == "c9")
    return Unit::power_mw;
  throw std::invalid_argument("unknown pricing constant: " + std::string(name));
}

inline double constant_value(std::string_view name, const pricing::PricingConstants& c) {
  if (name == "c0") return c.c0;
  if (name == "c1") return c.c1;
  if (name == "c2") return c.c2;
  if (name == "c3") return c.c3;
  if (name == "c4") return c.c4;
  if (name == "c5") return c.c5;
  if (name == "c6") return c.c6;
  if (name == "c7") return c.c7;
  if (name == "c8") return c.c8;
  if (name == "c9") return c.c9;
  if (name == "c10") return c.c10;
  throw std::invalid_argument("unknown pricing constant: " + std::string(name));
}

/// Fitted scalers for the three physical unit groups. The dimensionless
/// group is the identity by definition.
struct GroupScalers {
  RobustScalerParams price, power, energy;
  bool fitted = false;

  const RobustScalerParams& for_unit(Unit u) const {
    static const RobustScalerParams identity{};
    switch (u) {
      case Unit::price_eur_mwh: return price;
      case Unit::power_mw: return power;
      case Unit::energy_mwh: return energy;
      case Unit::dimensionless: return identity;
    }
    return identity;
  }

  double transform(double x, Unit u) const { return scaling::transform(x, for_unit(u)); }
  double inverse(double y, Unit u) const { return scaling::inverse_transform(y, for_unit(u)); }

  /// A pricing constant mapped into the scaled space of its unit group.
  double scaled_constant(std::string_view name, const pricing::PricingConstants& c) const {
    return transform(constant_value(name, c), constant_unit(name));
  }
};

/// Scaled constant replicated across all h latent channels as constant
/// (non-parameter) graph nodes.
inline soft::Latent transform_constant(ad::GraphBuilder& g, std::string_view name,
                                       const pricing::PricingConstants& c,
                                       const GroupScalers& s, int h) {
  if (!s.fitted) throw std::logic_error("transform_constant: scalers not fitted");
  return soft::broadcast(g, s.scaled_constant(name, c), h);
}

}  // namespace ipf::scaling

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

namespace ipf::pricing {

/// Predefined settlement constants C0..C10.
///
/// C0 is a dimensionless ratio, C1-C3 and C10 are price offsets (EUR/MWh),
/// C4-C9 are power thresholds (MW). The system imbalance v is treated as an
/// average-power signal (MW-equivalent) so it lives on the same scale as the
/// thresholds.
struct PricingConstants {
  double c0 = 0.1;     // relative marked-price floor ratio
  double c1 = 5.0;     // ID15 marked-price floor (EUR/MWh)
  double c2 = 10.0;    // ID60 marked-price floor (EUR/MWh)
  double c3 = 15.0;    // DA marked-price floor (EUR/MWh)
  double c4 = 50.0;    // ramp half-width (MW)
  double c5 = 200.0;   // ID15 liquidity normalizer (MW)
  double c6 = 200.0;   // ID60 liquidity normalizer (MW)
  double c7 = 200.0;   // scarcity deadband threshold (MW)
  double c8 = 800.0;   // scarcity cap threshold (MW)
  double c9 = 1000.0;  // imbalance intersection point (MW)
  double c10 = 1000.0; // price intersection point (EUR/MWh)

  void validate() const {
    const double all[] = {c0, c1, c2, c3, c4, c5, c6, c7, c8, c9, c10};
    for (double c : all)
      if (!(c > 0.0) || !std::isfinite(c))
        throw std::invalid_argument("pricing constants must be strictly positive and finite");
    if (!(c7 < c8 && c8 < c9))
      throw std::invalid_argument("pricing constants require c7 < c8 < c9");
  }
};

/// Raw market signals for one 15-min settlement period.
struct MarketSnapshot {
  int64_t ts = 0;        // period start, epoch seconds, 15-min aligned
  double v = 0.0;        // system imbalance, signed, MW-equivalent
  double e_afrr_pos = 0.0, e_afrr_neg = 0.0;  // activated aFRR energy (MWh)
  double e_mfrr_pos = 0.0, e_mfrr_neg = 0.0;  // activated mFRR energy (MWh)
  double p_afrr_pos = 0.0, p_afrr_neg = 0.0;  // aFRR activation prices (EUR/MWh)
  double p_mfrr_pos = 0.0, p_mfrr_neg = 0.0;  // mFRR activation prices (EUR/MWh)
  double p_voaa_pos = 0.0, p_voaa_neg = 0.0;  // values of avoided activation (EUR/MWh)
  double p_id15 = 0.0, p_id60 = 0.0, p_da = 0.0;  // exchange price indices (EUR/MWh)
  double l_id15 = 0.0, l_id60 = 0.0;              // traded-volume liquidity (MW)
  std::optional<double> p_observed;               // observed imbalance price, if any

  void validate() const {
    const double vols[] = {e_afrr_pos, e_afrr_neg, e_mfrr_pos, e_mfrr_neg, l_id15, l_id60};
    for (double x : vols)
      if (!(x >= 0.0)) throw std::invalid_argument("volume/liquidity fields must be >= 0");
    const double all[] = {v,          e_afrr_pos, e_afrr_neg, e_mfrr_pos, e_mfrr_neg,
                          p_afrr_pos, p_afrr_neg, p_mfrr_pos, p_mfrr_neg, p_voaa_pos,
                          p_voaa_neg, p_id15,     p_id60,     p_da,       l_id15,
                          l_id60};
    for (double x : all)
      if (!std::isfinite(x)) throw std::invalid_argument("snapshot fields must be finite");
    if (ts % 900 != 0) throw std::invalid_argument("snapshot timestamp not 15-min aligned");
  }
};

struct LiquidityWeights {
  double w_id15 = 0.0, w_id60 = 0.0, w_da = 0.0;
};

/// All intermediates of one settlement evaluation.
struct PriceBreakdown {
  double p_bal = 0.0, p_mkt = 0.0, p_scar = 0.0, p_base = 0.0;
  std::optional<double> p_act_pos, p_act_neg;  // absent when nothing activated
  bool i_pos = false, i_neg = false;
  double w_id15 = 0.0, w_id60 = 0.0, w_da = 0.0;
  double ramp_value = 0.0;
  double p_final = 0.0;
};

inline bool activation_indicator(double e_afrr, double e_mfrr) {
  return e_afrr + e_mfrr > 0.0;
}

/// Activation-weighted balancing-energy price for one direction.
/// Callers must check the direction's indicator first.
inline double activation_price(double e_afrr, double p_afrr, double e_mfrr, double p_mfrr) {
  if (!(e_afrr + e_mfrr > 0.0))
    throw std::domain_error("activation_price: no activation in direction");
  return (e_afrr * p_afrr + e_mfrr * p_mfrr) / (e_afrr + e_mfrr);
}

/// Piecewise-linear saturation of v to [-1, 1] with half-width c4.
inline double ramp(double v, const PricingConstants& c) {
  if (v < -c.c4) return -1.0;
  if (v > c.c4) return 1.0;
  return v / c.c4;
}

/// Ramp-adjusted exchange index. floor_offset selects the ID15/ID60/DA
/// variant (c1, c2 or c3).
inline double marked_price(double p, double v, double floor_offset, const PricingConstants& c) {
  return p + ramp(v, c) * std::max(floor_offset, c.c0 * std::fabs(p));
}

inline LiquidityWeights liquidity_weights(double l_id15, double l_id60,
                                          const PricingConstants& c) {
  LiquidityWeights w;
  w.w_id15 = std::min(1.0, l_id15 / c.c5);
  w.w_id60 = std::min(1.0 - w.w_id15, l_id60 / c.c6);
  w.w_da = 1.0 - w.w_id15 - w.w_id60;  // by subtraction: exact simplex
  return w;
}

/// Balancing-energy component: one of six cases selected by the two
/// activation indicators and the sign of v (v = 0 takes the positive branch).
inline double balancing_component(const MarketSnapshot& s) {
  const bool i_pos = activation_indicator(s.e_afrr_pos, s.e_mfrr_pos);
  const bool i_neg = activation_indicator(s.e_afrr_neg, s.e_mfrr_neg);
  if (i_pos && i_neg) {
    if (s.v >= 0.0)
      return activation_price(s.e_afrr_pos, s.p_afrr_pos, s.e_mfrr_pos, s.p_mfrr_pos);
    return activation_price(s.e_afrr_neg, s.p_afrr_neg, s.e_mfrr_neg, s.p_mfrr_neg);
  }
  if (i_pos) return activation_price(s.e_afrr_pos, s.p_afrr_pos, s.e_mfrr_pos, s.p_mfrr_pos);
  if (i_neg) return activation_price(s.e_afrr_neg, s.p_afrr_neg, s.e_mfrr_neg, s.p_mfrr_neg);
  return s.v >= 0.0 ? s.p_voaa_pos : s.p_voaa_neg;
}

inline double market_component(const MarketSnapshot& s, const PricingConstants& c) {
  const LiquidityWeights w = liquidity_weights(s.l_id15, s.l_id60, c);
  return w.w_id15 * marked_price(s.p_id15, s.v, c.c1, c) +
         w.w_id60 * marked_price(s.p_id60, s.v, c.c2, c) +
         w.w_da * marked_price(s.p_da, s.v, c.c3, c);
}

/// Unramped exchange reference: the liquidity weights applied to the raw
/// indices.
inline double base_price(const MarketSnapshot& s, const PricingConstants& c) {
  const LiquidityWeights w = liquidity_weights(s.l_id15, s.l_id60, c);
  return w.w_id15 * s.p_id15 + w.w_id60 * s.p_id60 + w.w_da * s.p_da;
}

/// Signed, dead-banded, capped cubic adjustment of the base price in |v|.
/// Continuous at both thresholds. Cubes are spelled x*x*x (not pow) so the
/// batch path and the test oracle agree bitwise.
inline double scarcity_component(const MarketSnapshot& s, const PricingConstants& c) {
  const double pb = base_price(s, c);
  const double av = std::fabs(s.v);
  if (av <= c.c7) return pb;
  const double sgn = s.v >= 0.0 ? 1.0 : -1.0;
  if (av <= c.c8) {
    const double x = (av - c.c7) / (c.c9 - c.c7);
    return pb + sgn * c.c10 * (x * x * x);
  }
  const double x = (c.c8 - c.c7) / (c.c9 - c.c7);
  return pb + sgn * c.c10 * (x * x * x);
}

/// Full settlement: the extremum over the three components, min when v < 0
/// and max when v >= 0, with every intermediate exposed.
inline PriceBreakdown imbalance_price(const MarketSnapshot& s, const PricingConstants& c) {
  PriceBreakdown b;
  b.i_pos = activation_indicator(s.e_afrr_pos, s.e_mfrr_pos);
  b.i_neg = activation_indicator(s.e_afrr_neg, s.e_mfrr_neg);
  if (b.i_pos)
    b.p_act_pos = activation_price(s.e_afrr_pos, s.p_afrr_pos, s.e_mfrr_pos, s.p_mfrr_pos);
  if (b.i_neg)
    b.p_act_neg = activation_price(s.e_afrr_neg, s.p_afrr_neg, s.e_mfrr_neg, s.p_mfrr_neg);
  const LiquidityWeights w = liquidity_weights(s.l_id15, s.l_id60, c);
  b.w_id15 = w.w_id15;
  b.w_id60 = w.w_id60;
  b.w_da = w.w_da;
  b.ramp_value = ramp(s.v, c);
  b.p_bal = balancing_component(s);
  b.p_mkt = market_component(s, c);
  b.p_base = base_price(s, c);
  b.p_scar = scarcity_component(s, c);
  b.p_final = s.v < 0.0 ? std::min(std::min(b.p_bal, b.p_mkt), b.p_scar)
                        : std::max(std::max(b.p_bal, b.p_mkt), b.p_scar);
  return b;
}

}  // namespace ipf::pricing

#pragma once

#include <array>
#include <string_view>

#include "ipf/scaling.hpp"

namespace ipf::data {

inline constexpr int kStepSeconds = 900;
inline constexpr int kPeriodsPerDay = 96;

/// The 17 value columns of the data CSV, in header order after `ts`.
/// Column `p` is the imbalance price: the forecast target, and (lagged) a
/// model input like any other feature.
inline constexpr int kFeatureCount = 17;

enum Feature : int {
  kV = 0,
  kEAfrrPos,
  kEAfrrNeg,
  kEMfrrPos,
  kEMfrrNeg,
  kPAfrrPos,
  kPAfrrNeg,
  kPMfrrPos,
  kPMfrrNeg,
  kPVoaaPos,
  kPVoaaNeg,
  kPId15,
  kPId60,
  kPDa,
  kLId15,
  kLId60,
  kP,
};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "v",          "e_afrr_pos", "e_afrr_neg", "e_mfrr_pos", "e_mfrr_neg", "p_afrr_pos",
    "p_afrr_neg", "p_mfrr_pos", "p_mfrr_neg", "p_voaa_pos", "p_voaa_neg", "p_id15",
    "p_id60",     "p_da",       "l_id15",     "l_id60",     "p",
};

inline constexpr std::array<scaling::Unit, kFeatureCount> kFeatureUnits = {
    scaling::Unit::power_mw,       // v
    scaling::Unit::energy_mwh,     // e_afrr_pos
    scaling::Unit::energy_mwh,     // e_afrr_neg
    scaling::Unit::energy_mwh,     // e_mfrr_pos
    scaling::Unit::energy_mwh,     // e_mfrr_neg
    scaling::Unit::price_eur_mwh,  // p_afrr_pos
    scaling::Unit::price_eur_mwh,  // p_afrr_neg
    scaling::Unit::price_eur_mwh,  // p_mfrr_pos
    scaling::Unit::price_eur_mwh,  // p_mfrr_neg
    scaling::Unit::price_eur_mwh,  // p_voaa_pos
    scaling::Unit::price_eur_mwh,  // p_voaa_neg
    scaling::Unit::price_eur_mwh,  // p_id15
    scaling::Unit::price_eur_mwh,  // p_id60
    scaling::Unit::price_eur_mwh,  // p_da
    scaling::Unit::power_mw,       // l_id15
    scaling::Unit::power_mw,       // l_id60
    scaling::Unit::price_eur_mwh,  // p
};

/// Fields that must be nonnegative (volumes and liquidity).
inline constexpr bool is_nonnegative_feature(int f) {
  return f == kEAfrrPos || f == kEAfrrNeg || f == kEMfrrPos || f == kEMfrrNeg ||
         f == kLId15 || f == kLId60;
}

inline constexpr std::string_view kCsvHeader =
    "ts,v,e_afrr_pos,e_afrr_neg,e_mfrr_pos,e_mfrr_neg,p_afrr_pos,p_afrr_neg,"
    "p_mfrr_pos,p_mfrr_neg,p_voaa_pos,p_voaa_neg,p_id15,p_id60,p_da,l_id15,l_id60,p";

}  // namespace ipf::data

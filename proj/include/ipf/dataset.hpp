#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipf/pricing.hpp"
#include "ipf/rng.hpp"
#include "ipf/schema.hpp"
#include "ipf/util.hpp"

namespace ipf::data {

/// Time-indexed table with the 17 schema columns at 15-min resolution.
/// Timestamps are strictly increasing and gap-free after validation.
struct FeatureFrame {
  std::vector<int64_t> ts;
  std::array<std::vector<double>, kFeatureCount> cols;

  size_t rows() const { return ts.size(); }
  double at(int feature, size_t row) const { return cols[feature][row]; }
  std::span<const double> col(int feature) const { return cols[feature]; }

  pricing::MarketSnapshot snapshot(size_t row) const {
    pricing::MarketSnapshot s;
    s.ts = ts[row];
    s.v = cols[kV][row];
    s.e_afrr_pos = cols[kEAfrrPos][row];
    s.e_afrr_neg = cols[kEAfrrNeg][row];
    s.e_mfrr_pos = cols[kEMfrrPos][row];
    s.e_mfrr_neg = cols[kEMfrrNeg][row];
    s.p_afrr_pos = cols[kPAfrrPos][row];
    s.p_afrr_neg = cols[kPAfrrNeg][row];
    s.p_mfrr_pos = cols[kPMfrrPos][row];
    s.p_mfrr_neg = cols[kPMfrrNeg][row];
    s.p_voaa_pos = cols[kPVoaaPos][row];
    s.p_voaa_neg = cols[kPVoaaNeg][row];
    s.p_id15 = cols[kPId15][row];
    s.p_id60 = cols[kPId60][row];
    s.p_da = cols[kPDa][row];
    s.l_id15 = cols[kLId15][row];
    s.l_id60 = cols[kLId60][row];
    s.p_observed = cols[kP][row];
    return s;
  }

  void push_row(int64_t t, const std::array<double, kFeatureCount>& vals) {
    ts.push_back(t);
    for (int f = 0; f < kFeatureCount; ++f) cols[f].push_back(vals[f]);
  }
};

struct LoadOptions {
  bool strict = true;            // reject rows with non-finite cells (else drop them)
  bool forward_fill_gaps = false;  // fill 15-min gaps by repeating the last row
};

struct LoadReport {
  size_t rows_dropped = 0;
  size_t gaps_filled = 0;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline FeatureFrame load_csv(const std::string& path, const LoadOptions& opt = {},
                             LoadReport* report = nullptr) {
  const std::string content = read_file(path);
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    const auto got = split(line, ',');
    const auto want = split(kCsvHeader, ',');
    if (got.size() != want.size())
      throw SchemaError(path + ": header has " + std::to_string(got.size()) +
                        " columns, expected " + std::to_string(want.size()));
    for (size_t i = 0; i < want.size(); ++i)
      if (got[i] != want[i])
        throw SchemaError(path + ": missing or misplaced column '" + std::string(want[i]) +
                          "' (found '" + std::string(got[i]) + "')");
  }

  FeatureFrame frame;
  LoadReport rep;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != kFeatureCount + 1)
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(kFeatureCount + 1) + " cells, got " +
                        std::to_string(cells.size()));
    int64_t t;
    try {
      t = parse_iso8601(cells[0]);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (t % kStepSeconds != 0)
      throw SchemaError(path + ":" + std::to_string(line_no) +
                        ": timestamp not aligned to the 15-min grid");
    if (!frame.ts.empty()) {
      if (t == frame.ts.back())
        throw SchemaError(path + ":" + std::to_string(line_no) + ": duplicate timestamp");
      if (t < frame.ts.back())
        throw SchemaError(path + ":" + std::to_string(line_no) +
                          ": timestamps not increasing");
    }

    std::array<double, kFeatureCount> vals;
    bool finite = true;
    for (int f = 0; f < kFeatureCount; ++f) {
      double x;
      try {
        x = parse_double(cells[f + 1], std::string(kFeatureNames[f]).c_str());
      } catch (const std::invalid_argument& e) {
        throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!std::isfinite(x)) finite = false;
      vals[f] = x;
    }
    if (!finite) {
      if (opt.strict)
        throw SchemaError(path + ":" + std::to_string(line_no) + ": non-finite value");
      ++rep.rows_dropped;
      continue;
    }
    for (int f = 0; f < kFeatureCount; ++f) {
      if (is_nonnegative_feature(f) && vals[f] < 0.0)
        throw SchemaError(path + ":" + std::to_string(line_no) + ": column '" +
                          std::string(kFeatureNames[f]) + "' must be >= 0");
    }

    if (!frame.ts.empty() && t != frame.ts.back() + kStepSeconds) {
      if (!opt.forward_fill_gaps)
        throw SchemaError(path + ":" + std::to_string(line_no) + ": gap before " +
                          format_iso8601(t) + " (previous row " +
                          format_iso8601(frame.ts.back()) + ")");
      while (frame.ts.back() + kStepSeconds < t) {
        std::array<double, kFeatureCount> fill;
        for (int f = 0; f < kFeatureCount; ++f) fill[f] = frame.cols[f].back();
        frame.push_row(frame.ts.back() + kStepSeconds, fill);
        ++rep.gaps_filled;
      }
    }
    frame.push_row(t, vals);
  }
  if (report) *report = rep;
  return frame;
}

inline std::string to_csv(const FeatureFrame& frame) {
  std::string out;
  out.reserve(frame.rows() * 160 + 256);
  out += kCsvHeader;
  out += '\n';
  for (size_t r = 0; r < frame.rows(); ++r) {
    out += format_iso8601(frame.ts[r]);
    for (int f = 0; f < kFeatureCount; ++f) {
      out += ',';
      out += fmt_double(frame.cols[f][r]);
    }
    out += '\n';
  }
  return out;
}

inline void write_csv(const FeatureFrame& frame, const std::string& path) {
  write_file_atomic(path, to_csv(frame));
}

// ---- rolling windows ----

struct WindowSample {
  int32_t t = 0;        // current row: last input timestamp
  int32_t target = 0;   // row holding the target price
  int16_t delivery = 0; // quarter-hour-of-day index of the target period
};

/// Input/target index set for one (N, M) configuration. Lag values are read
/// from the frame on demand; inputs for sample i span rows [t-n_lags+1, t]
/// and the target is the price at row t + M/15.
struct WindowSet {
  const FeatureFrame* frame = nullptr;
  int n_lags = 1;
  int horizon_steps = 1;
  std::vector<WindowSample> samples;

  size_t size() const { return samples.size(); }

  /// Lag vector (oldest first) for one feature of one sample.
  void lags(size_t sample, int feature, std::span<double> out) const {
    const WindowSample& s = samples[sample];
    for (int l = 0; l < n_lags; ++l)
      out[l] = frame->cols[feature][s.t - (n_lags - 1) + l];
  }

  double target_price(size_t sample) const {
    return frame->cols[kP][samples[sample].target];
  }
  double current(size_t sample, int feature) const {
    return frame->cols[feature][samples[sample].t];
  }
  int64_t target_ts(size_t sample) const { return frame->ts[samples[sample].target]; }
};

/// Every valid sample of the frame: the count is rows - N/15 - M/15.
inline WindowSet make_windows(const FeatureFrame& frame, int lookback_min, int horizon_min) {
  if (lookback_min < 0 || lookback_min % 15 != 0)
    throw std::invalid_argument("lookback must be a nonnegative multiple of 15 minutes");
  if (horizon_min <= 0 || horizon_min % 15 != 0)
    throw std::invalid_argument("horizon must be a positive multiple of 15 minutes");
  WindowSet ws;
  ws.frame = &frame;
  ws.n_lags = lookback_min / 15 + 1;
  ws.horizon_steps = horizon_min / 15;
  const int64_t first_t = ws.n_lags - 1;
  const int64_t last_t = static_cast<int64_t>(frame.rows()) - 1 - ws.horizon_steps;
  for (int64_t t = first_t; t <= last_t; ++t) {
    WindowSample s;
    s.t = static_cast<int32_t>(t);
    s.target = static_cast<int32_t>(t + ws.horizon_steps);
    s.delivery = static_cast<int16_t>(frame.ts[s.target] / kStepSeconds % kPeriodsPerDay);
    ws.samples.push_back(s);
  }
  if (ws.samples.empty())
    std::cerr << "warning: frame of " << frame.rows() << " rows is too short for lookback "
              << lookback_min << " min + horizon " << horizon_min << " min\n";
  return ws;
}

// ---- expanding-window folds ----

struct Fold {
  int64_t train_begin = 0, val_begin = 0, test_begin = 0, test_end = 0;
};

/// Train/val/test boundaries for the three expanding-window folds.
struct FoldSpec {
  std::array<Fold, 3> folds;

  /// The real-data protocol: fold 1 trains on 2022-01-01..2024-09-01,
  /// validates and tests on the following 4-month blocks; folds 2-3 shift
  /// val/test forward 4 months each and extend training accordingly.
  static FoldSpec standard() {
    FoldSpec spec;
    const int64_t start = utc_timestamp(2022, 1, 1);
    const int64_t val1 = utc_timestamp(2024, 9, 1);
    for (int i = 0; i < 3; ++i) {
      Fold& f = spec.folds[i];
      f.train_begin = start;
      f.val_begin = add_months(val1, 4 * i);
      f.test_begin = add_months(f.val_begin, 4);
      f.test_end = add_months(f.test_begin, 4);
    }
    return spec;
  }

  /// Same shape rescaled onto an arbitrary frame: val/test blocks each take
  /// 1/12 of the covered span, as in the 48-month real protocol.
  static FoldSpec proportional(const FeatureFrame& frame) {
    if (frame.rows() < 24)
      throw std::invalid_argument("frame too short for proportional folds");
    FoldSpec spec;
    const int64_t begin = frame.ts.front();
    const int64_t end = frame.ts.back() + kStepSeconds;
    const int64_t span = end - begin;
    auto at = [&](int twelfths) {
      // snap to the 15-min grid
      int64_t t = begin + span * twelfths / 12;
      return t - (t - begin) % kStepSeconds;
    };
    for (int i = 0; i < 3; ++i) {
      Fold& f = spec.folds[i];
      f.train_begin = begin;
      f.val_begin = at(8 + i);
      f.test_begin = at(9 + i);
      f.test_end = at(10 + i);
    }
    return spec;
  }
};

/// Row ranges of one fold: [train_begin, train_end) etc. as frame indices.
struct Split {
  size_t train_begin = 0, train_end = 0;
  size_t val_end = 0, test_end = 0;
};

inline size_t row_at(const FeatureFrame& frame, int64_t ts) {
  return static_cast<size_t>(
      std::lower_bound(frame.ts.begin(), frame.ts.end(), ts) - frame.ts.begin());
}

/// Resolve the fold boundaries against a frame. The frame must cover every
/// fold's [train_begin, test_end) interval without gaps.
inline std::array<Split, 3> make_folds(const FeatureFrame& frame, const FoldSpec& spec) {
  std::array<Split, 3> out;
  for (int i = 0; i < 3; ++i) {
    const Fold& f = spec.folds[i];
    if (frame.ts.empty() || frame.ts.front() > f.train_begin ||
        frame.ts.back() + kStepSeconds < f.test_end)
      throw std::invalid_argument(
          "frame does not cover fold " + std::to_string(i + 1) + ": needs [" +
          format_iso8601(f.train_begin) + ", " + format_iso8601(f.test_end) +
          "), have [" + format_iso8601(frame.ts.empty() ? 0 : frame.ts.front()) + ", " +
          format_iso8601(frame.ts.empty() ? 0 : frame.ts.back() + kStepSeconds) + ")");
    Split s;
    s.train_begin = row_at(frame, f.train_begin);
    s.train_end = row_at(frame, f.val_begin);
    s.val_end = row_at(frame, f.test_begin);
    s.test_end = row_at(frame, f.test_end);
    if (s.train_end <= s.train_begin || s.val_end <= s.train_end || s.test_end <= s.val_end)
      throw std::invalid_argument("fold " + std::to_string(i + 1) + " has an empty period");
    out[i] = s;
  }
  return out;
}

/// Sample indices of a WindowSet assigned to the fold's periods by target
/// row. Window inputs may reach back before a period boundary; they never
/// reach past the target.
struct SplitIndices {
  std::vector<size_t> train, val, test;
};

inline SplitIndices split_windows(const WindowSet& ws, const Split& split) {
  SplitIndices out;
  for (size_t i = 0; i < ws.size(); ++i) {
    const size_t target = static_cast<size_t>(ws.samples[i].target);
    if (target < split.train_begin) continue;
    if (target < split.train_end)
      out.train.push_back(i);
    else if (target < split.val_end)
      out.val.push_back(i);
    else if (target < split.test_end)
      out.test.push_back(i);
  }
  return out;
}

// ---- synthetic market generator ----

/// Tunables of the synthetic market. Defaults give a mean-reverting system
/// imbalance with occasional spikes deep into the scarcity region, seasonal
/// exchange prices, sporadic activations, and rule-consistent targets.
struct SynthParams {
  int64_t start_ts = utc_timestamp(2022, 1, 1);
  double v_rho = 0.85;          // AR(1) coefficient of the imbalance
  double v_sigma = 120.0;       // innovation std dev (MW)
  double v_spike_prob = 0.01;   // chance of a spike innovation per period
  double v_spike_scale = 5.0;   // spike multiplier on v_sigma
  double da_level = 80.0;       // mean day-ahead price (EUR/MWh)
  double da_daily_amp = 25.0;   // daily seasonal amplitude
  double da_sigma = 10.0;       // day-ahead noise std dev
  double id15_sigma = 8.0;      // ID15 deviation from DA
  double id60_sigma = 5.0;      // ID60 deviation from DA
  double liq_mu = 4.6;          // lognormal location of liquidity (~100 MW median)
  double liq_sigma = 0.8;       // lognormal shape
  double act_slope = 0.20;      // MWh of activation per MW of imbalance
  double act_noise = 12.0;      // activation volume noise
  double mfrr_offset = 25.0;    // extra imbalance needed before mFRR activates
  double spread_afrr = 40.0;    // mean aFRR price spread over ID15
  double spread_mfrr = 80.0;    // mean mFRR price spread over ID15
  double spread_sigma = 12.0;
  double voaa_gap = 8.0;        // VoAA offset inside the activation spread
  pricing::PricingConstants constants;
};

/// Deterministic per seed. The target column p is produced row-by-row by the
/// exact settlement engine, so stored prices are rule-consistent with the
/// stored features by construction.
inline FeatureFrame generate_synthetic(int n_days, uint64_t seed, const SynthParams& params = {}) {
  if (n_days < 1) throw std::invalid_argument("generate_synthetic: n_days must be >= 1");
  params.constants.validate();
  Rng rng(Rng::derive(seed, 0x5eed));
  FeatureFrame frame;
  const size_t n = static_cast<size_t>(n_days) * kPeriodsPerDay;
  frame.ts.reserve(n);
  for (auto& c : frame.cols) c.reserve(n);

  double v = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int64_t ts = params.start_ts + static_cast<int64_t>(i) * kStepSeconds;
    const int quarter = static_cast<int>(ts / kStepSeconds % kPeriodsPerDay);
    const double day_phase = 2.0 * std::numbers::pi * quarter / kPeriodsPerDay;

    double innov = rng.normal(0.0, params.v_sigma);
    if (rng.uniform() < params.v_spike_prob) innov *= params.v_spike_scale;
    v = params.v_rho * v + innov;

    const double p_da =
        params.da_level + params.da_daily_amp * std::sin(day_phase - std::numbers::pi / 2) +
        rng.normal(0.0, params.da_sigma);
    const double p_id15 = p_da + rng.normal(0.0, params.id15_sigma);
    const double p_id60 = p_da + rng.normal(0.0, params.id60_sigma);
    const double l_id15 = rng.lognormal(params.liq_mu, params.liq_sigma);
    const double l_id60 = rng.lognormal(params.liq_mu, params.liq_sigma);

    // Activation volumes follow the imbalance direction; mFRR joins only on
    // larger excursions. The positive parts leave frequent no-activation
    // periods that exercise the VoAA settlement branches.
    const double e_afrr_pos =
        std::max(0.0, params.act_slope * v + rng.normal(0.0, params.act_noise));
    const double e_afrr_neg =
        std::max(0.0, params.act_slope * -v + rng.normal(0.0, params.act_noise));
    const double e_mfrr_pos = std::max(
        0.0, params.act_slope * (v - params.mfrr_offset) + rng.normal(0.0, params.act_noise));
    const double e_mfrr_neg = std::max(
        0.0, params.act_slope * (-v - params.mfrr_offset) + rng.normal(0.0, params.act_noise));

    const double sa = std::fabs(rng.normal(params.spread_afrr, params.spread_sigma));
    const double sm = std::fabs(rng.normal(params.spread_mfrr, params.spread_sigma));
    const double p_afrr_pos = p_id15 + sa;
    const double p_afrr_neg = p_id15 - sa;
    const double p_mfrr_pos = p_id15 + sm;
    const double p_mfrr_neg = p_id15 - sm;
    // Directional extremes of the offer ladder: the cheapest positive offer
    // sits just below the activated price, the dearest negative just above.
    const double p_voaa_pos = p_afrr_pos - params.voaa_gap;
    const double p_voaa_neg = p_afrr_neg + params.voaa_gap;

    std::array<double, kFeatureCount> vals{};
    vals[kV] = v;
    vals[kEAfrrPos] = e_afrr_pos;
    vals[kEAfrrNeg] = e_afrr_neg;
    vals[kEMfrrPos] = e_mfrr_pos;
    vals[kEMfrrNeg] = e_mfrr_neg;
    vals[kPAfrrPos] = p_afrr_pos;
    vals[kPAfrrNeg] = p_afrr_neg;
    vals[kPMfrrPos] = p_mfrr_pos;
    vals[kPMfrrNeg] = p_mfrr_neg;
    vals[kPVoaaPos] = p_voaa_pos;
    vals[kPVoaaNeg] = p_voaa_neg;
    vals[kPId15] = p_id15;
    vals[kPId60] = p_id60;
    vals[kPDa] = p_da;
    vals[kLId15] = l_id15;
    vals[kLId60] = l_id60;
    vals[kP] = 0.0;
    frame.push_row(ts, vals);

    const pricing::PriceBreakdown b =
        pricing::imbalance_price(frame.snapshot(frame.rows() - 1), params.constants);
    frame.cols[kP].back() = b.p_final;
  }
  return frame;
}

}  // namespace ipf::data

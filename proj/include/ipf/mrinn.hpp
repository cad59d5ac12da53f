#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipf/autodiff.hpp"
#include "ipf/dataset.hpp"
#include "ipf/metrics.hpp"
#include "ipf/pricing.hpp"
#include "ipf/quantile_net.hpp"
#include "ipf/scaling.hpp"
#include "ipf/schema.hpp"
#include "ipf/soft_ops.hpp"

namespace ipf::model {

enum class Ablation { none, drop_bal, drop_mkt, drop_scar };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::drop_bal: return "drop_bal";
    case Ablation::drop_mkt: return "drop_mkt";
    case Ablation::drop_scar: return "drop_scar";
  }
  return "none";
}

inline Ablation ablation_from_string(std::string_view s) {
  if (s == "none") return Ablation::none;
  if (s == "drop_bal") return Ablation::drop_bal;
  if (s == "drop_mkt") return Ablation::drop_mkt;
  if (s == "drop_scar") return Ablation::drop_scar;
  throw std::invalid_argument("unknown ablation tag: " + std::string(s));
}

struct MrinnConfig {
  int h = 8;              // latent dimension
  int n_layers = 2;       // trunk depth
  int lookback_min = 0;   // N, minutes of history (multiple of 15)
  int horizon_min = 15;   // M, minutes ahead (multiple of 15)
  Ablation ablation = Ablation::none;
  uint64_t seed = 1;

  void validate() const {
    if (h < 1) throw std::invalid_argument("mrinn config: h must be >= 1");
    if (n_layers < 0) throw std::invalid_argument("mrinn config: n_layers must be >= 0");
    if (lookback_min < 0 || lookback_min % 15 != 0)
      throw std::invalid_argument("mrinn config: lookback must be a multiple of 15");
    if (horizon_min <= 0 || horizon_min % 15 != 0)
      throw std::invalid_argument("mrinn config: horizon must be a positive multiple of 15");
  }
};

/// One entry per soft-op site of the latent pricing graph, filled during
/// graph assembly. Mirrors the hard operators of the settlement rulebook.
struct SoftOpAudit {
  int cond2 = 0;            // final extremum selection
  int cond6 = 0;            // balancing-energy case selection
  int cond3 = 0;            // ramp and scarcity selections
  int soft_max_floor = 0;   // marked-price floor sites
  int soft_min_weight = 0;  // liquidity-weight capping sites
  int safe_div = 0;         // activation-price divisions
  int smooth_abs = 0;
  int soft_sign = 0;
};

/// Market-rule-informed network: per-feature latent projections, a latent
/// reconstruction of the settlement rulebook from soft operator blocks, a
/// dense trunk, and the hierarchical (crossing-free) quantile head.
class MrinnModel : public train::QuantileNet {
 public:
  static MrinnModel build(const MrinnConfig& cfg,
                          const pricing::PricingConstants& constants = {}) {
    cfg.validate();
    constants.validate();
    MrinnModel m;
    m.cfg_ = cfg;
    m.constants_ = constants;
    m.n_lags_ = cfg.lookback_min / 15 + 1;
    m.features_ = features_for(cfg.ablation);
    m.slot_.fill(-1);
    for (size_t i = 0; i < m.features_.size(); ++i) m.slot_[m.features_[i]] = static_cast<int>(i);

    Rng rng(Rng::derive(cfg.seed, 0x6d72696e6eull));  // init stream
    const int h = cfg.h;
    for (size_t i = 0; i < m.features_.size(); ++i)
      m.proj_.push_back(ad::DenseLayer::create(m.params_, m.n_lags_, h, rng));
    if (cfg.ablation != Ablation::drop_bal)
      m.sel_bal6_ = ad::DenseLayer::create(m.params_, 3 * h, 6, rng);
    if (cfg.ablation != Ablation::drop_mkt)
      m.sel_ramp3_ = ad::DenseLayer::create(m.params_, h, 3, rng);
    if (cfg.ablation != Ablation::drop_scar)
      m.sel_scar3_ = ad::DenseLayer::create(m.params_, h, 3, rng);
    m.sel_final2_ = ad::DenseLayer::create(m.params_, h, 2, rng);
    for (int l = 0; l < cfg.n_layers; ++l)
      m.trunk_.push_back(ad::DenseLayer::create(m.params_, h, h, rng));
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q)
      m.heads_[q] = ad::DenseLayer::create(m.params_, h, 1, rng);
    return m;
  }

  /// Which schema features an ablation keeps. Dropping the balancing branch
  /// also drops its exclusive raw inputs (reserve volumes, activation prices
  /// and the avoided-activation values); the market and scarcity branches
  /// share all of their inputs with the rest of the graph.
  static std::vector<int> features_for(Ablation a) {
    std::vector<int> out;
    for (int f = 0; f < data::kFeatureCount; ++f) {
      if (a == Ablation::drop_bal && f >= data::kEAfrrPos && f <= data::kPVoaaNeg) continue;
      out.push_back(f);
    }
    return out;
  }

  const MrinnConfig& config() const { return cfg_; }
  const pricing::PricingConstants& constants() const { return constants_; }
  const std::vector<int>& features() const { return features_; }
  int n_lags() const { return n_lags_; }
  const scaling::GroupScalers& scalers() const { return scalers_; }
  const std::vector<ad::DenseLayer>& projections() const { return proj_; }
  const std::vector<ad::DenseLayer>& trunk() const { return trunk_; }
  const std::array<ad::DenseLayer, metrics::kNumQuantiles>& heads() const { return heads_; }

  /// Fit the unit-group scalers on rows [begin, end) of the frame: the
  /// training split only.
  void fit_scalers(const data::FeatureFrame& frame, size_t begin, size_t end) {
    if (end <= begin || end > frame.rows())
      throw std::invalid_argument("fit_scalers: empty or invalid training range");
    std::vector<double> price, power, energy;
    for (int f = 0; f < data::kFeatureCount; ++f) {
      std::vector<double>* dst = nullptr;
      switch (data::kFeatureUnits[f]) {
        case scaling::Unit::price_eur_mwh: dst = &price; break;
        case scaling::Unit::power_mw: dst = &power; break;
        case scaling::Unit::energy_mwh: dst = &energy; break;
        case scaling::Unit::dimensionless: break;
      }
      if (dst)
        dst->insert(dst->end(), frame.cols[f].begin() + begin, frame.cols[f].begin() + end);
    }
    scalers_.price = scaling::fit(std::move(price));
    scalers_.power = scaling::fit(std::move(power));
    scalers_.energy = scaling::fit(std::move(energy));
    scalers_.fitted = true;
  }

  void set_scalers(const scaling::GroupScalers& s) {
    scalers_ = s;
    scalers_.fitted = true;
  }

  // ---- graph construction ----

  /// One latent vector per used feature: the feature's scaled lag vector
  /// mapped by its own dense layer.
  std::vector<soft::Latent> project_features(
      ad::GraphBuilder& g, const std::vector<std::vector<double>>& scaled_lags) const {
    if (scaled_lags.size() != features_.size())
      throw std::invalid_argument("project_features: expected " +
                                  std::to_string(features_.size()) + " feature lag vectors");
    std::vector<soft::Latent> latents;
    latents.reserve(features_.size());
    for (size_t i = 0; i < features_.size(); ++i) {
      if (static_cast<int>(scaled_lags[i].size()) != n_lags_)
        throw std::invalid_argument("project_features: lag-count mismatch");
      std::vector<ad::Value> x;
      x.reserve(n_lags_);
      for (double v : scaled_lags[i]) x.push_back(g.input(v));
      latents.push_back(proj_[i].apply(g, x));
    }
    return latents;
  }

  /// Latent reconstruction of the settlement rules over the projected
  /// features, one soft-op site per hard operator, plus the lagged-price
  /// skip into the output.
  soft::Latent latent_price(ad::GraphBuilder& g, const std::vector<soft::Latent>& latents,
                            SoftOpAudit* audit = nullptr) const {
    if (!scalers_.fitted) throw std::logic_error("latent_price: scalers not fitted");
    const int h = cfg_.h;
    SoftOpAudit a;
    auto lat = [&](int feature) -> const soft::Latent& {
      const int s = slot_[feature];
      if (s < 0) throw std::logic_error("latent_price: feature dropped by ablation");
      return latents[s];
    };
    auto cvec = [&](const char* name) {
      return scaling::transform_constant(g, name, constants_, scalers_, h);
    };
    const soft::Latent one = soft::broadcast(g, 1.0, h);
    const pricing::PricingConstants& c = constants_;

    std::vector<soft::Latent> components;

    if (cfg_.ablation != Ablation::drop_bal) {
      const soft::Latent e_pos = soft::add(lat(data::kEAfrrPos), lat(data::kEMfrrPos));
      const soft::Latent e_neg = soft::add(lat(data::kEAfrrNeg), lat(data::kEMfrrNeg));
      // Activated energy is nonnegative in raw space; softplus keeps its
      // latent counterpart on that domain so the division denominator stays
      // away from the pole at -eps.
      const soft::Latent act_pos = soft::safe_div(
          soft::add(soft::mul(lat(data::kEAfrrPos), lat(data::kPAfrrPos)),
                    soft::mul(lat(data::kEMfrrPos), lat(data::kPMfrrPos))),
          soft::softplus(e_pos));
      const soft::Latent act_neg = soft::safe_div(
          soft::add(soft::mul(lat(data::kEAfrrNeg), lat(data::kPAfrrNeg)),
                    soft::mul(lat(data::kEMfrrNeg), lat(data::kPMfrrNeg))),
          soft::softplus(e_neg));
      a.safe_div += 2;
      const std::array<soft::Latent, 6> branches = {
          act_pos, act_neg, act_pos, act_neg, lat(data::kPVoaaPos), lat(data::kPVoaaNeg)};
      const std::array<soft::Latent, 3> conds = {e_pos, e_neg, lat(data::kV)};
      components.push_back(soft::soft_cond(branches, conds, *sel_bal6_, g));
      a.cond6 += 1;
    }

    // Liquidity weights feed both the market component and the scarcity
    // base price; either branch keeps them alive.
    soft::Latent w15, w60, wda;
    {
      w15 = soft::soft_min(one, soft::scale(lat(data::kLId15), 1.0 / c.c5));
      w60 = soft::soft_min(soft::sub(one, w15), soft::scale(lat(data::kLId60), 1.0 / c.c6));
      a.soft_min_weight += 2;
      wda = soft::sub(soft::sub(one, w15), w60);
    }

    if (cfg_.ablation != Ablation::drop_mkt) {
      const std::array<soft::Latent, 3> ramp_branches = {
          soft::broadcast(g, -1.0, h), soft::scale(lat(data::kV), 1.0 / c.c4),
          soft::broadcast(g, 1.0, h)};
      const std::array<soft::Latent, 1> ramp_cond = {lat(data::kV)};
      const soft::Latent rampv = soft::soft_cond(ramp_branches, ramp_cond, *sel_ramp3_, g);
      a.cond3 += 1;

      auto marked = [&](int price_feature, const char* floor_name) {
        const soft::Latent& p = lat(price_feature);
        const soft::Latent floor =
            soft::soft_max(cvec(floor_name), soft::scale(soft::smooth_abs(p), c.c0));
        a.soft_max_floor += 1;
        a.smooth_abs += 1;
        return soft::add(p, soft::mul(rampv, floor));
      };
      const soft::Latent m15 = marked(data::kPId15, "c1");
      const soft::Latent m60 = marked(data::kPId60, "c2");
      const soft::Latent mda = marked(data::kPDa, "c3");
      components.push_back(soft::add(
          soft::add(soft::mul(w15, m15), soft::mul(w60, m60)), soft::mul(wda, mda)));
    }

    if (cfg_.ablation != Ablation::drop_scar) {
      const soft::Latent base = soft::add(
          soft::add(soft::mul(w15, lat(data::kPId15)), soft::mul(w60, lat(data::kPId60))),
          soft::mul(wda, lat(data::kPDa)));
      const soft::Latent av = soft::smooth_abs(lat(data::kV));
      a.smooth_abs += 1;
      const soft::Latent sg = soft::soft_sign(lat(data::kV));
      a.soft_sign += 1;
      const soft::Latent c10v = cvec("c10");
      const soft::Latent x = soft::scale(soft::sub(av, cvec("c7")), 1.0 / (c.c9 - c.c7));
      const soft::Latent cube = soft::mul(soft::mul(x, x), x);
      const double sat = (c.c8 - c.c7) / (c.c9 - c.c7);
      const soft::Latent adj_mid = soft::mul(soft::mul(sg, c10v), cube);
      const soft::Latent adj_sat = soft::scale(soft::mul(sg, c10v), sat * sat * sat);
      const std::array<soft::Latent, 3> branches = {base, soft::add(base, adj_mid),
                                                    soft::add(base, adj_sat)};
      const std::array<soft::Latent, 1> conds = {lat(data::kV)};
      components.push_back(soft::soft_cond(branches, conds, *sel_scar3_, g));
      a.cond3 += 1;
    }

    soft::Latent lo = components[0];
    soft::Latent hi = components[0];
    for (size_t i = 1; i < components.size(); ++i) {
      lo = soft::soft_min(lo, components[i]);
      hi = soft::soft_max(hi, components[i]);
    }
    const std::array<soft::Latent, 2> extremum = {lo, hi};
    const std::array<soft::Latent, 1> final_cond = {lat(data::kV)};
    soft::Latent out = soft::soft_cond(extremum, final_cond, sel_final2_, g);
    a.cond2 += 1;

    // Lagged-price skip: the current price is a raw input outside the
    // rulebook; it joins the latent price additively.
    out = soft::add(out, lat(data::kP));

    if (audit) *audit = a;
    return out;
  }

  /// Trunk then hierarchical head: the median plus outward softplus
  /// increments, so the seven outputs are sorted for every input.
  std::array<ad::Value, metrics::kNumQuantiles> quantile_head(ad::GraphBuilder& g,
                                                              const soft::Latent& latent) const {
    std::vector<ad::Value> z(latent.begin(), latent.end());
    for (const ad::DenseLayer& layer : trunk_) {
      z = layer.apply(g, z);
      for (ad::Value& v : z) v = g.tape().tanh(v);
    }
    std::array<ad::Value, metrics::kNumQuantiles> head_raw{};
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q) head_raw[q] = heads_[q].apply(g, z)[0];

    std::array<ad::Value, metrics::kNumQuantiles> out{};
    // order: 0.10 0.25 0.45 0.50 0.55 0.75 0.90
    out[3] = head_raw[3];
    out[2] = out[3] - ad::softplus(head_raw[2]);
    out[1] = out[2] - ad::softplus(head_raw[1]);
    out[0] = out[1] - ad::softplus(head_raw[0]);
    out[4] = out[3] + ad::softplus(head_raw[4]);
    out[5] = out[4] + ad::softplus(head_raw[5]);
    out[6] = out[5] + ad::softplus(head_raw[6]);
    return out;
  }

  /// Full forward graph from pre-scaled lag vectors (one per used feature).
  std::array<ad::Value, metrics::kNumQuantiles> build_from_scaled(
      ad::GraphBuilder& g, const std::vector<std::vector<double>>& scaled_lags,
      SoftOpAudit* audit = nullptr) const {
    const std::vector<soft::Latent> latents = project_features(g, scaled_lags);
    const soft::Latent latent = latent_price(g, latents, audit);
    return quantile_head(g, latent);
  }

  // ---- QuantileNet interface ----

  std::array<ad::Value, metrics::kNumQuantiles> build_forward(ad::GraphBuilder& g,
                                                              const data::WindowSet& ws,
                                                              size_t sample) override {
    if (!scalers_.fitted) throw std::logic_error("mrinn forward: scalers not fitted");
    if (ws.n_lags != n_lags_)
      throw std::invalid_argument("mrinn forward: window lag count mismatch");
    std::vector<std::vector<double>> scaled(features_.size());
    std::vector<double> buf(n_lags_);
    for (size_t i = 0; i < features_.size(); ++i) {
      const int f = features_[i];
      ws.lags(sample, f, buf);
      scaled[i].resize(n_lags_);
      for (int l = 0; l < n_lags_; ++l)
        scaled[i][l] = scalers_.transform(buf[l], data::kFeatureUnits[f]);
    }
    return build_from_scaled(g, scaled);
  }

  double transform_target(double y_raw) const override {
    return scaling::transform(y_raw, scalers_.price);
  }
  double inverse_transform(double y_scaled) const override {
    return scaling::inverse_transform(y_scaled, scalers_.price);
  }
  ad::ParamStore& params() override { return params_; }
  const ad::ParamStore& params() const { return params_; }
  size_t param_count() const override { return params_.size(); }

  /// Site counts from a probe graph built on zeroed inputs.
  SoftOpAudit audit() const {
    if (!scalers_.fitted) {
      MrinnModel probe = *this;
      probe.scalers_ = scaling::GroupScalers{};
      probe.scalers_.fitted = true;
      return probe.audit();
    }
    ad::Tape tape;
    ad::ParamStore params_copy = params_;
    ad::GraphBuilder g(tape, params_copy);
    std::vector<std::vector<double>> zeros(features_.size(),
                                           std::vector<double>(n_lags_, 0.0));
    SoftOpAudit a;
    (void)build_from_scaled(g, zeros, &a);
    return a;
  }

  // ---- checkpoint ----

  nlohmann::ordered_json checkpoint() const {
    nlohmann::ordered_json j;
    j["format"] = "ipf-checkpoint";
    j["version"] = 1;
    j["family"] = "mrinn";
    j["config"] = {{"h", cfg_.h},
                   {"n_layers", cfg_.n_layers},
                   {"lookback_min", cfg_.lookback_min},
                   {"horizon_min", cfg_.horizon_min},
                   {"ablation", to_string(cfg_.ablation)},
                   {"seed", cfg_.seed}};
    j["constants"] = constants_json(constants_);
    j["scalers"] = scalers_json(scalers_);
    nlohmann::ordered_json feats = nlohmann::ordered_json::array();
    for (int f : features_) feats.push_back(std::string(data::kFeatureNames[f]));
    j["features"] = feats;
    j["params"] = std::vector<double>(params_.values().begin(), params_.values().end());
    return j;
  }

  static MrinnModel from_checkpoint(const nlohmann::json& j) {
    if (j.at("family").get<std::string>() != "mrinn")
      throw std::invalid_argument("checkpoint family is not mrinn");
    MrinnConfig cfg;
    const auto& jc = j.at("config");
    cfg.h = jc.at("h").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.lookback_min = jc.at("lookback_min").get<int>();
    cfg.horizon_min = jc.at("horizon_min").get<int>();
    cfg.ablation = ablation_from_string(jc.at("ablation").get<std::string>());
    cfg.seed = jc.at("seed").get<uint64_t>();
    MrinnModel m = build(cfg, constants_from_json(j.at("constants")));
    m.set_scalers(scalers_from_json(j.at("scalers")));
    const auto vals = j.at("params").get<std::vector<double>>();
    if (vals.size() != m.params_.size())
      throw std::invalid_argument("checkpoint parameter count mismatch");
    for (size_t i = 0; i < vals.size(); ++i) m.params_.set_value(static_cast<int>(i), vals[i]);
    return m;
  }

  static nlohmann::ordered_json constants_json(const pricing::PricingConstants& c) {
    return {{"c0", c.c0}, {"c1", c.c1}, {"c2", c.c2},  {"c3", c.c3},
            {"c4", c.c4}, {"c5", c.c5}, {"c6", c.c6},  {"c7", c.c7},
            {"c8", c.c8}, {"c9", c.c9}, {"c10", c.c10}};
  }
  static pricing::PricingConstants constants_from_json(const nlohmann::json& j) {
    pricing::PricingConstants c;
    c.c0 = j.at("c0");
    c.c1 = j.at("c1");
    c.c2 = j.at("c2");
    c.c3 = j.at("c3");
    c.c4 = j.at("c4");
    c.c5 = j.at("c5");
    c.c6 = j.at("c6");
    c.c7 = j.at("c7");
    c.c8 = j.at("c8");
    c.c9 = j.at("c9");
    c.c10 = j.at("c10");
    return c;
  }
  static nlohmann::ordered_json scalers_json(const scaling::GroupScalers& s) {
    auto one = [](const scaling::RobustScalerParams& p) {
      return nlohmann::ordered_json{{"center", p.center}, {"scale", p.scale}};
    };
    return {{"price", one(s.price)}, {"power", one(s.power)}, {"energy", one(s.energy)}};
  }
  static scaling::GroupScalers scalers_from_json(const nlohmann::json& j) {
    auto one = [&](const char* k) {
      scaling::RobustScalerParams p;
      p.center = j.at(k).at("center").get<double>();
      p.scale = j.at(k).at("scale").get<double>();
      return p;
    };
    scaling::GroupScalers s;
    s.price = one("price");
    s.power = one("power");
    s.energy = one("energy");
    s.fitted = true;
    return s;
  }

 private:
  MrinnConfig cfg_;
  pricing::PricingConstants constants_;
  int n_lags_ = 1;
  std::vector<int> features_;
  std::array<int, data::kFeatureCount> slot_{};
  ad::ParamStore params_;
  std::vector<ad::DenseLayer> proj_;
  std::optional<ad::DenseLayer> sel_bal6_, sel_ramp3_, sel_scar3_;
  ad::DenseLayer sel_final2_;
  std::vector<ad::DenseLayer> trunk_;
  std::array<ad::DenseLayer, metrics::kNumQuantiles> heads_;
  scaling::GroupScalers scalers_;
};

}  // namespace ipf::model

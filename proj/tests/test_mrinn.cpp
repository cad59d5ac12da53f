#include <catch2/catch_amalgamated.hpp>

#include "ipf/mrinn.hpp"
#include "test_support.hpp"

using namespace ipf;
using namespace ipf::model;
using Catch::Approx;

namespace {

MrinnModel identity_scaled(const MrinnConfig& cfg) {
  MrinnModel m = MrinnModel::build(cfg);
  m.set_scalers(scaling::GroupScalers{});  // identity scalers, marked fitted
  return m;
}

std::vector<std::vector<double>> random_scaled_input(const MrinnModel& m, Rng& rng,
                                                     double lo = -10, double hi = 10) {
  std::vector<std::vector<double>> lags(m.features().size());
  for (auto& l : lags) {
    l.resize(m.n_lags());
    for (double& x : l) x = rng.uniform(lo, hi);
  }
  return lags;
}

void randomize_params(ad::ParamStore& ps, Rng& rng, double scale = 1.0) {
  for (size_t i = 0; i < ps.size(); ++i)
    ps.set_value(static_cast<int>(i), rng.uniform(-scale, scale));
}

}  // namespace

TEST_CASE("config validation") {
  MrinnConfig cfg;
  cfg.lookback_min = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = MrinnConfig{};
  cfg.horizon_min = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ablation_from_string("drop_everything"), std::invalid_argument);
}

TEST_CASE("feature projection") {
  SECTION("17 latent vectors of length h for the full schema") {
    MrinnModel m = identity_scaled({.h = 8, .seed = 1});
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    Rng rng(2);
    const auto latents = m.project_features(g, random_scaled_input(m, rng));
    REQUIRE(latents.size() == 17);
    for (const auto& l : latents) CHECK(l.size() == 8);
  }
  SECTION("zero weights pass the bias as a constant vector") {
    MrinnModel m = identity_scaled({.h = 3, .seed = 1});
    const ad::DenseLayer& proj0 = m.projections()[0];
    for (int i = 0; i < proj0.in * proj0.out; ++i) m.params().set_value(proj0.w0 + i, 0.0);
    for (int o = 0; o < proj0.out; ++o) m.params().set_value(proj0.b0 + o, 2.5);
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    Rng rng(3);
    const auto latents = m.project_features(g, random_scaled_input(m, rng));
    for (int c = 0; c < 3; ++c) CHECK(latents[0][c].val() == Approx(2.5));
  }
  SECTION("lag-count mismatch rejected") {
    MrinnModel m = identity_scaled({.h = 2, .lookback_min = 60, .seed = 1});
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    std::vector<std::vector<double>> bad(m.features().size(), std::vector<double>(1, 0.0));
    CHECK_THROWS_AS(m.project_features(g, bad), std::invalid_argument);
  }
}

TEST_CASE("latent price graph") {
  SECTION("output has latent width and zeroed projections stay finite") {
    MrinnModel m = identity_scaled({.h = 8, .seed = 5});
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    const std::vector<std::vector<double>> zeros(m.features().size(),
                                                 std::vector<double>(1, 0.0));
    const auto latents = m.project_features(g, zeros);
    const soft::Latent h = m.latent_price(g, latents);
    REQUIRE(h.size() == 8);
    for (ad::Value v : h) CHECK(std::isfinite(v.val()));
  }
  SECTION("structural audit matches the rulebook site counts") {
    MrinnModel m = identity_scaled({.h = 4, .seed = 6});
    const SoftOpAudit a = m.audit();
    CHECK(a.cond2 == 1);
    CHECK(a.cond6 == 1);
    CHECK(a.cond3 == 2);
    CHECK(a.soft_max_floor == 3);
    CHECK(a.soft_min_weight == 2);
    CHECK(a.safe_div == 2);
    CHECK(a.smooth_abs >= 2);
    CHECK(a.soft_sign == 1);
  }
  SECTION("gradient check through the full graph at h = 2") {
    const data::FeatureFrame frame = data::generate_synthetic(5, 42);
    MrinnModel m = MrinnModel::build({.h = 2, .n_layers = 2, .seed = 7});
    m.fit_scalers(frame, 0, frame.rows());
    const data::WindowSet ws = data::make_windows(frame, 0, 15);
    Rng rng(8);
    std::array<double, 7> coef;
    for (double& c : coef) c = rng.uniform(-1, 1);
    const auto res = ad::grad_check(
        m.params(),
        [&](ad::GraphBuilder& g) {
          const auto outs = m.build_forward(g, ws, 3);
          ad::Value acc = outs[0] * coef[0];
          for (size_t q = 1; q < 7; ++q) acc = acc + outs[q] * coef[q];
          return acc;
        },
        1e-5, 1e-4);
    INFO("max rel err " << res.max_rel_err << " at param " << res.worst_param);
    CHECK(res.pass);
  }
}

TEST_CASE("hierarchical quantile head") {
  SECTION("zero head layers give the ln-2 ladder around the median") {
    MrinnModel m = identity_scaled({.h = 4, .n_layers = 1, .seed = 9});
    for (size_t q = 0; q < 7; ++q) {
      const ad::DenseLayer& head = m.heads()[q];
      for (int i = 0; i < head.in; ++i) m.params().set_value(head.w0 + i, 0.0);
      m.params().set_value(head.b0, q == metrics::kMedianIndex ? 5.0 : 0.0);
    }
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    soft::Latent latent = soft::broadcast(g, 0.3, 4);
    const auto out = m.quantile_head(g, latent);
    const double ln2 = std::log(2.0);
    const std::array<double, 7> expected = {5 - 3 * ln2, 5 - 2 * ln2, 5 - ln2, 5,
                                            5 + ln2,     5 + 2 * ln2, 5 + 3 * ln2};
    for (size_t q = 0; q < 7; ++q)
      CHECK(out[q].val() == Approx(expected[q]).margin(1e-12));
  }
  SECTION("sorted output for 10k random inputs and random weights") {
    MrinnConfig cfg{.h = 8, .n_layers = 2, .seed = 10};
    MrinnModel m = identity_scaled(cfg);
    Rng rng(11);
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    std::vector<metrics::QuantileForecast> forecasts;
    forecasts.reserve(10000);
    for (int i = 0; i < 10000; ++i) {
      if (i % 500 == 0) randomize_params(m.params(), rng);
      g.reset();
      const auto outs = m.build_from_scaled(g, random_scaled_input(m, rng));
      metrics::QuantileForecast f;
      for (size_t q = 0; q < 7; ++q) f[q] = outs[q].val();
      forecasts.push_back(f);
      for (size_t q = 0; q + 1 < 7; ++q) CHECK(f[q] <= f[q + 1]);
    }
    CHECK(metrics::aqcr(forecasts) == 0.0);
  }
}

TEST_CASE("forward pass") {
  const data::FeatureFrame frame = data::generate_synthetic(10, 13);
  const data::WindowSet ws = data::make_windows(frame, 0, 15);
  MrinnModel m = MrinnModel::build({.h = 8, .n_layers = 2, .seed = 14});

  SECTION("unfitted scalers rejected") {
    ad::Tape t;
    ad::GraphBuilder g(t, m.params());
    CHECK_THROWS_AS(m.build_forward(g, ws, 0), std::logic_error);
  }

  m.fit_scalers(frame, 0, 800);
  ad::Tape t;
  ad::GraphBuilder g(t, m.params());

  SECTION("deterministic and seven-valued") {
    const metrics::QuantileForecast a = m.predict(g, ws, 5);
    const metrics::QuantileForecast b = m.predict(g, ws, 5);
    CHECK(a == b);
    CHECK(a.size() == 7);
  }
  SECTION("ordering preserved under the inverse transform") {
    for (size_t i = 0; i < 50; ++i) {
      const metrics::QuantileForecast f = m.predict(g, ws, i);
      for (size_t q = 0; q + 1 < 7; ++q) CHECK(f[q] <= f[q + 1]);
    }
  }
}

TEST_CASE("finite loss and gradients on 1000 random scaled inputs") {
  MrinnModel m = identity_scaled({.h = 8, .n_layers = 2, .seed = 15});
  Rng rng(16);
  ad::Tape tape;
  ad::GraphBuilder g(tape, m.params());
  for (int i = 0; i < 1000; ++i) {
    g.reset();
    m.params().zero_grads();
    const auto outs = m.build_from_scaled(g, random_scaled_input(m, rng));
    const double y = rng.uniform(-10, 10);
    std::array<double, 7> seeds;
    double loss = 0.0;
    for (size_t q = 0; q < 7; ++q) {
      const double tau = metrics::kQuantiles[q];
      loss += metrics::pinball(y, outs[q].val(), tau);
      seeds[q] = (y >= outs[q].val() ? -tau : 1.0 - tau) / 7.0;
    }
    REQUIRE(std::isfinite(loss));
    tape.backward(outs, seeds);
    g.accumulate_grads();
    for (size_t p = 0; p < m.params().size(); ++p)
      REQUIRE(std::isfinite(m.params().grad(static_cast<int>(p))));
  }
}

TEST_CASE("parameter counts") {
  SECTION("smallest config lands in the expected band") {
    MrinnModel m = MrinnModel::build({.h = 8, .n_layers = 2, .seed = 1});
    CHECK(m.param_count() >= 500);
    CHECK(m.param_count() <= 5000);
  }
  SECTION("count grows with h") {
    const size_t small = MrinnModel::build({.h = 8, .seed = 1}).param_count();
    const size_t mid = MrinnModel::build({.h = 32, .seed = 1}).param_count();
    const size_t large = MrinnModel::build({.h = 128, .seed = 1}).param_count();
    CHECK(small < mid);
    CHECK(mid < large);
  }
  SECTION("count equals the sum over declared layers") {
    MrinnModel m = MrinnModel::build({.h = 8, .n_layers = 2, .seed = 1});
    size_t expected = 0;
    for (const auto& p : m.projections()) expected += p.param_count();
    expected += 3 * 8 * 6 + 6;  // 6-way selector
    expected += (8 * 3 + 3) * 2;  // two 3-way selectors
    expected += 8 * 2 + 2;        // final 2-way selector
    for (const auto& l : m.trunk()) expected += l.param_count();
    for (const auto& h : m.heads()) expected += h.param_count();
    CHECK(m.param_count() == expected);
  }
}

TEST_CASE("ablation") {
  const MrinnConfig base{.h = 8, .n_layers = 2, .seed = 21};

  SECTION("dropped branches disappear from the audit") {
    MrinnConfig cfg = base;
    cfg.ablation = Ablation::drop_scar;
    const SoftOpAudit a = identity_scaled(cfg).audit();
    CHECK(a.cond3 == 1);
    CHECK(a.soft_sign == 0);
    CHECK(a.cond6 == 1);  // balancing and market branches remain

    cfg.ablation = Ablation::drop_mkt;
    const SoftOpAudit b = identity_scaled(cfg).audit();
    CHECK(b.soft_max_floor == 0);
    CHECK(b.cond3 == 1);            // ramp selection gone, scarcity stays
    CHECK(b.soft_min_weight == 2);  // base price still needs the weights

    cfg.ablation = Ablation::drop_bal;
    const SoftOpAudit c = identity_scaled(cfg).audit();
    CHECK(c.cond6 == 0);
    CHECK(c.safe_div == 0);
  }
  SECTION("drop_bal removes the reserve-related features") {
    MrinnConfig cfg = base;
    cfg.ablation = Ablation::drop_bal;
    const MrinnModel m = MrinnModel::build(cfg);
    const auto& feats = m.features();
    CHECK(feats.size() == 7);
    for (int f : feats) {
      CHECK(f != data::kEAfrrPos);
      CHECK(f != data::kPVoaaNeg);
    }
    CHECK(std::find(feats.begin(), feats.end(), data::kV) != feats.end());
    CHECK(std::find(feats.begin(), feats.end(), data::kP) != feats.end());
  }
  SECTION("every ablation strictly reduces the parameter count") {
    const size_t full = MrinnModel::build(base).param_count();
    for (Ablation tag : {Ablation::drop_bal, Ablation::drop_mkt, Ablation::drop_scar}) {
      MrinnConfig cfg = base;
      cfg.ablation = tag;
      CHECK(MrinnModel::build(cfg).param_count() < full);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const data::FeatureFrame frame = data::generate_synthetic(10, 23);
  const data::WindowSet ws = data::make_windows(frame, 0, 15);
  MrinnModel m = MrinnModel::build({.h = 8, .n_layers = 2, .seed = 24});
  m.fit_scalers(frame, 0, 800);

  const nlohmann::ordered_json ck = m.checkpoint();
  CHECK(ck.at("format") == "ipf-checkpoint");
  CHECK(ck.at("version") == 1);

  MrinnModel loaded = MrinnModel::from_checkpoint(ck);
  ad::Tape t1, t2;
  ad::GraphBuilder g1(t1, m.params()), g2(t2, loaded.params());
  for (size_t i : {size_t{0}, size_t{17}, size_t{200}}) {
    const auto a = m.predict(g1, ws, i);
    const auto b = loaded.predict(g2, ws, i);
    CHECK(a == b);  // bit-identical forecasts
  }

  SECTION("corrupted parameter payload rejected") {
    nlohmann::json bad = ck;
    bad["params"] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_AS(MrinnModel::from_checkpoint(bad), std::invalid_argument);
  }
  SECTION("foreign family rejected") {
    nlohmann::json bad = ck;
    bad["family"] = "mlp";
    CHECK_THROWS_AS(MrinnModel::from_checkpoint(bad), std::invalid_argument);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include "ipf/rng.hpp"
#include "ipf/soft_ops.hpp"

using namespace ipf;
using namespace ipf::soft;
using ad::GraphBuilder;
using ad::ParamStore;
using ad::Tape;
using ad::Value;
using Catch::Approx;

namespace {
Latent lat(GraphBuilder& g, std::initializer_list<double> xs) {
  Latent out;
  for (double x : xs) out.push_back(g.input(x));
  return out;
}
std::vector<double> vals(const Latent& l) {
  std::vector<double> out;
  for (Value v : l) out.push_back(v.val());
  return out;
}
}  // namespace

TEST_CASE("soft max examples") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  CHECK(soft_max(g.input(0.0), g.input(0.0)).val() ==
        Approx(std::log(2.0)).margin(1e-12));
  CHECK(soft_max(g.input(10.0), g.input(0.0)).val() == Approx(10.0000454).margin(1e-6));
  CHECK(soft_max(g.input(40.0), g.input(0.0)).val() == Approx(40.0).margin(1e-12));
}

TEST_CASE("soft min examples") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  CHECK(soft_min(g.input(0.0), g.input(0.0)).val() ==
        Approx(-std::log(2.0)).margin(1e-12));
  CHECK(soft_min(g.input(3.0), g.input(5.0)).val() == Approx(2.873071).margin(1e-6));
  CHECK(soft_min(g.input(-10.0), g.input(10.0)).val() == Approx(-10.0).margin(1e-4));
}

TEST_CASE("bracketing bounds hold everywhere") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    const double a = rng.uniform(-500, 500), b = rng.uniform(-500, 500);
    const double smax = soft_max(g.input(a), g.input(b)).val();
    const double smin = soft_min(g.input(a), g.input(b)).val();
    const double hmax = std::max(a, b), hmin = std::min(a, b);
    CHECK(smax >= hmax);
    CHECK(smax <= hmax + std::log(2.0) + 1e-12);
    CHECK(smin <= hmin);
    CHECK(smin >= hmin - std::log(2.0) - 1e-12);
    if (std::fabs(a - b) >= 20.0) {
      CHECK(smax - hmax <= 1e-8);
      CHECK(hmin - smin <= 1e-8);
    }
    if (i % 100 == 0) g.reset();
  }
}

TEST_CASE("smooth abs") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  CHECK(smooth_abs(g.input(0.0)).val() == Approx(std::sqrt(1e-7)).margin(1e-12));
  CHECK(smooth_abs(g.input(3.0)).val() == Approx(3.0000000167).margin(1e-9));
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-100, 100);
    const double sa = smooth_abs(g.input(x)).val();
    CHECK(sa == Approx(smooth_abs(g.input(-x)).val()).margin(1e-12));  // even
    CHECK(sa > std::fabs(x));
    CHECK(sa - std::fabs(x) <= std::sqrt(1e-7) + 1e-15);
  }
}

TEST_CASE("soft sign") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  CHECK(soft_sign(g.input(0.0)).val() == 0.0);
  CHECK(soft_sign(g.input(20.0)).val() == Approx(1.0).margin(1e-12));
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const double x = rng.uniform(-50, 50);
    const double s = soft_sign(g.input(x)).val();
    CHECK(std::fabs(s) <= 1.0);
    CHECK(soft_sign(g.input(-x)).val() == Approx(-s).margin(1e-12));  // odd
  }
  // strictly interior wherever a double can resolve the gap (tanh rounds to
  // exactly +-1 beyond |x| ~ 19)
  for (int i = 0; i < 300; ++i) {
    const double x = rng.uniform(-18, 18);
    const double s = soft_sign(g.input(x)).val();
    CHECK(s > -1.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("safe div") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  CHECK(safe_div(g.input(1.0), g.input(0.0)).val() == Approx(1e7));
  CHECK(safe_div(g.input(6.0), g.input(3.0)).val() == Approx(1.9999999333).margin(1e-9));
  CHECK(safe_div(g.input(0.0), g.input(123.4)).val() == 0.0);
}

TEST_CASE("softmax") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  SECTION("uniform") {
    const Latent x = lat(g, {0.0, 0.0, 0.0});
    const auto w = softmax(x);
    for (Value wi : w) CHECK(wi.val() == Approx(1.0 / 3.0));
  }
  SECTION("stable under huge logits") {
    const Latent x = lat(g, {1000.0, 0.0});
    const auto w = softmax(x);
    CHECK(w[0].val() == Approx(1.0));
    CHECK(w[1].val() == Approx(0.0).margin(1e-300));
    CHECK(std::isfinite(w[0].val()));
  }
  SECTION("hand evaluation") {
    const Latent x = lat(g, {std::log(1.0), std::log(2.0), std::log(3.0)});
    const auto w = softmax(x);
    CHECK(w[0].val() == Approx(1.0 / 6.0));
    CHECK(w[1].val() == Approx(2.0 / 6.0));
    CHECK(w[2].val() == Approx(3.0 / 6.0));
  }
  SECTION("simplex for random logits") {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
      Latent x;
      // wide draws stay on [0, 1]; strict interior needs the spread a double
      // can resolve (a 37-mile logit lead rounds the winner to exactly 1)
      const bool wide = i % 2 == 0;
      const double span = wide ? 100.0 : 15.0;
      for (int k = 0; k < 5; ++k) x.push_back(g.input(rng.uniform(-span, span)));
      const auto w = softmax(x);
      double sum = 0.0;
      for (Value wi : w) {
        CHECK(wi.val() > 0.0);
        if (wide)
          CHECK(wi.val() <= 1.0);
        else
          CHECK(wi.val() < 1.0);
        sum += wi.val();
      }
      CHECK(sum == Approx(1.0).margin(1e-12));
    }
  }
  SECTION("empty input") {
    CHECK_THROWS_AS(softmax(std::vector<Value>{}), std::invalid_argument);
  }
}

TEST_CASE("soft cond") {
  Tape t;
  ParamStore ps;
  Rng rng(9);
  // selector over 2 branches conditioned on one 2-channel latent
  ad::DenseLayer selector = ad::DenseLayer::create(ps, 2, 2, rng);
  GraphBuilder g(t, ps);

  auto set_selector_bias = [&](double l0, double l1) {
    // zero weights: logits are the biases
    for (int i = 0; i < 4; ++i) ps.set_value(selector.w0 + i, 0.0);
    ps.set_value(selector.b0 + 0, l0);
    ps.set_value(selector.b0 + 1, l1);
  };

  SECTION("one-hot limit") {
    set_selector_bias(100.0, 0.0);
    const std::array<Latent, 2> branches = {lat(g, {1.0, 2.0}), lat(g, {-5.0, 7.0})};
    const std::array<Latent, 1> conds = {lat(g, {0.3, -0.4})};
    const Latent out = soft_cond(branches, conds, selector, g);
    CHECK(vals(out)[0] == Approx(1.0).margin(1e-12));
    CHECK(vals(out)[1] == Approx(2.0).margin(1e-12));
  }
  SECTION("uniform mix") {
    set_selector_bias(0.0, 0.0);
    const std::array<Latent, 2> branches = {lat(g, {1.0, 2.0}), lat(g, {3.0, 6.0})};
    const std::array<Latent, 1> conds = {lat(g, {0.0, 0.0})};
    const Latent out = soft_cond(branches, conds, selector, g);
    CHECK(vals(out)[0] == Approx(2.0));
    CHECK(vals(out)[1] == Approx(4.0));
  }
  SECTION("log-weight hand evaluation: (2A + B) / 3") {
    set_selector_bias(std::log(2.0), 0.0);
    const std::array<Latent, 2> branches = {lat(g, {3.0, 9.0}), lat(g, {6.0, 0.0})};
    const std::array<Latent, 1> conds = {lat(g, {1.0, 1.0})};
    const Latent out = soft_cond(branches, conds, selector, g);
    CHECK(vals(out)[0] == Approx((2.0 * 3.0 + 6.0) / 3.0));
    CHECK(vals(out)[1] == Approx(6.0));
  }
  SECTION("width mismatch throws") {
    const std::array<Latent, 2> branches = {lat(g, {1.0, 2.0}), lat(g, {3.0, 4.0})};
    const std::array<Latent, 1> bad_conds = {lat(g, {0.0, 0.0, 0.0})};
    CHECK_THROWS_AS(soft_cond(branches, bad_conds, selector, g), std::invalid_argument);
  }
}

TEST_CASE("latent wrappers check lengths") {
  Tape t;
  ParamStore ps;
  GraphBuilder g(t, ps);
  const Latent a = lat(g, {1.0, 2.0});
  const Latent b = lat(g, {1.0});
  CHECK_THROWS_AS(soft_max(a, b), std::invalid_argument);
  CHECK_THROWS_AS(soft_min(a, b), std::invalid_argument);
  CHECK_THROWS_AS(safe_div(a, b), std::invalid_argument);
}

TEST_CASE("every soft op passes a gradient check on random inputs") {
  Rng rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    ParamStore ps;
    const int a = ps.add(rng.uniform(-5, 5));
    const int b = ps.add(rng.uniform(-5, 5));
    // denominator draw stays clear of the -eps pole so central differences
    // sample a smooth neighborhood
    double den = rng.uniform(-5, 5);
    if (std::fabs(den) < 0.01) den = 0.01;
    const int d = ps.add(den);
    const std::vector<std::function<Value(GraphBuilder&)>> builders = {
        [&](GraphBuilder& g) { return soft_max(g.param(a), g.param(b)); },
        [&](GraphBuilder& g) { return soft_min(g.param(a), g.param(b)); },
        [&](GraphBuilder& g) { return smooth_abs(g.param(a)); },
        [&](GraphBuilder& g) { return soft_sign(g.param(a)); },
        [&](GraphBuilder& g) { return safe_div(g.param(a), g.param(d)); },
        [&](GraphBuilder& g) {
          const std::vector<Value> x = {g.param(a), g.param(b)};
          const auto w = softmax(x);
          return w[0] * g.constant(3.0) + w[1] * g.constant(-2.0);
        },
    };
    for (const auto& build : builders) {
      const auto res = ad::grad_check(ps, build, 1e-5, 1e-4);
      CHECK(res.pass);
    }
  }
}

TEST_CASE("soft cond weights stay on the simplex for random selector states") {
  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    ParamStore ps;
    ad::DenseLayer selector = ad::DenseLayer::create(ps, 3, 4, rng);
    Tape t;
    GraphBuilder g(t, ps);
    std::vector<Value> cond;
    for (int i = 0; i < 3; ++i) cond.push_back(g.input(rng.uniform(-20, 20)));
    const auto w = softmax(std::vector<Value>(selector.apply(g, cond)));
    double sum = 0.0;
    for (Value wi : w) {
      CHECK(wi.val() >= 0.0);
      CHECK(wi.val() <= 1.0);
      sum += wi.val();
    }
    CHECK(sum == Approx(1.0).margin(1e-12));
  }
}

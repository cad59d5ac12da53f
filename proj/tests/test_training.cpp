#include <catch2/catch_amalgamated.hpp>

#include "ipf/baselines.hpp"
#include "ipf/mrinn.hpp"
#include "ipf/training.hpp"

using namespace ipf;
using ipf::train::AdamConfig;
using ipf::train::AdamState;
using ipf::train::GridCell;
using ipf::train::GridResult;
using ipf::train::RunRecord;
using ipf::train::TrainConfig;
using ipf::train::adam_step;
using ipf::train::aggregate;
using ipf::train::grid_search;
using Catch::Approx;

TEST_CASE("adam step") {
  AdamConfig cfg;
  cfg.lr = 0.1;

  SECTION("hand-computed first step on f(w) = w^2") {
    std::vector<double> w = {1.0};
    const std::vector<double> grad = {2.0};  // f'(1)
    AdamState st;
    adam_step(w, grad, st, cfg);
    // mhat = 2, vhat = 4: w -= 0.1 * 2 / (2 + 1e-8)
    CHECK(w[0] == Approx(0.9).margin(1e-8));
  }
  SECTION("zero gradient leaves parameters unchanged") {
    std::vector<double> w = {1.5};
    AdamState st;
    adam_step(w, std::vector<double>{0.0}, st, cfg);
    CHECK(w[0] == 1.5);
  }
  SECTION("repeated steps drive w toward zero") {
    std::vector<double> w = {1.0};
    AdamState st;
    for (int i = 0; i < 200; ++i) {
      const std::vector<double> grad = {2.0 * w[0]};
      adam_step(w, grad, st, cfg);
    }
    CHECK(std::fabs(w[0]) < 1e-2);
  }
  SECTION("non-finite gradient aborts") {
    std::vector<double> w = {1.0};
    AdamState st;
    CHECK_THROWS_AS(adam_step(w, std::vector<double>{std::nan("")}, st, cfg),
                    std::domain_error);
  }
  SECTION("shape mismatch rejected") {
    std::vector<double> w = {1.0, 2.0};
    AdamState st;
    CHECK_THROWS_AS(adam_step(w, std::vector<double>{1.0}, st, cfg), std::invalid_argument);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.patience = 100;
  tc.max_epochs = 70;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

namespace {

struct Fixture {
  data::FeatureFrame frame;
  data::WindowSet ws;
  data::SplitIndices idx;

  explicit Fixture(int days = 40, uint64_t seed = 3) {
    frame = data::generate_synthetic(days, seed);
    ws = data::make_windows(frame, 0, 15);
    const auto splits = data::make_folds(frame, data::FoldSpec::proportional(frame));
    idx = data::split_windows(ws, splits[0]);
  }
};

TrainConfig quick_config(int epochs, uint64_t seed) {
  TrainConfig tc;
  tc.max_epochs = epochs;
  tc.patience = epochs;
  tc.batch_size = 256;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("training loop") {
  Fixture fx;

  SECTION("loss decreases and the best epoch is the validation argmin") {
    baselines::MlpModel mlp = baselines::MlpModel::build({.hidden = 8, .seed = 4});
    mlp.fit_scaler(fx.frame, 0, 2500);
    const RunRecord rec = train::train(mlp, fx.ws, fx.idx, quick_config(8, 4));
    REQUIRE(rec.best_epoch >= 0);
    CHECK(rec.train_curve[rec.best_epoch] < rec.train_curve[0]);
    const double best = rec.val_curve[rec.best_epoch];
    for (double v : rec.val_curve) CHECK(best <= v);
    CHECK(rec.test.n == fx.idx.test.size());
    CHECK(rec.param_count == mlp.param_count());
  }
  SECTION("identical seeds give identical records") {
    auto run_once = [&] {
      baselines::MlpModel mlp = baselines::MlpModel::build({.hidden = 4, .seed = 5});
      mlp.fit_scaler(fx.frame, 0, 2500);
      return train::train(mlp, fx.ws, fx.idx, quick_config(5, 5));
    };
    const RunRecord a = run_once();
    const RunRecord b = run_once();
    CHECK(a.train_curve == b.train_curve);
    CHECK(a.val_curve == b.val_curve);
    CHECK(a.best_params == b.best_params);
    CHECK(a.test.aql == b.test.aql);
  }
  SECTION("flat validation with patience 1 stops after epoch 2") {
    baselines::MlpModel mlp = baselines::MlpModel::build({.hidden = 4, .seed = 6});
    mlp.fit_scaler(fx.frame, 0, 2500);
    TrainConfig tc = quick_config(30, 6);
    tc.adam.lr = 0.0;  // no updates: validation never improves
    tc.patience = 1;
    const RunRecord rec = train::train(mlp, fx.ws, fx.idx, tc);
    CHECK(rec.val_curve.size() == 2);
    CHECK(rec.best_epoch == 0);
  }
  SECTION("empty splits rejected") {
    baselines::MlpModel mlp = baselines::MlpModel::build({.hidden = 4, .seed = 7});
    mlp.fit_scaler(fx.frame, 0, 2500);
    data::SplitIndices empty;
    CHECK_THROWS_AS(train::train(mlp, fx.ws, empty, quick_config(2, 7)), std::invalid_argument);
  }
}

TEST_CASE("no training signal reaches fitted statistics from held-out rows") {
  // canary: perturbing validation/test rows must not move anything fitted
  Fixture fx;
  const auto splits = data::make_folds(fx.frame, data::FoldSpec::proportional(fx.frame));
  const data::Split& split = splits[0];

  model::MrinnModel a = model::MrinnModel::build({.h = 4, .seed = 8});
  a.fit_scalers(fx.frame, split.train_begin, split.train_end);
  const auto bands_before =
      baselines::calibrate_bands(baselines::NaiveKind::price, fx.ws, fx.idx.train);

  data::FeatureFrame tampered = fx.frame;
  for (size_t r = split.train_end; r < tampered.rows(); ++r)
    for (int f = 0; f < data::kFeatureCount; ++f) tampered.cols[f][r] += 1e6;

  model::MrinnModel b = model::MrinnModel::build({.h = 4, .seed = 8});
  b.fit_scalers(tampered, split.train_begin, split.train_end);
  CHECK(a.scalers().price.center == b.scalers().price.center);
  CHECK(a.scalers().price.scale == b.scalers().price.scale);
  CHECK(a.scalers().power.center == b.scalers().power.center);
  CHECK(a.scalers().energy.scale == b.scalers().energy.scale);

  const data::WindowSet tampered_ws = data::make_windows(tampered, 0, 15);
  const auto bands_after =
      baselines::calibrate_bands(baselines::NaiveKind::price, tampered_ws, fx.idx.train);
  for (int d = 0; d < data::kPeriodsPerDay; ++d)
    CHECK(bands_before.offsets[d] == bands_after.offsets[d]);
}

namespace {

RunRecord canned_record(double val_aql, size_t params, double test_aql) {
  RunRecord r;
  r.val_curve = {val_aql + 1.0, val_aql};
  r.train_curve = {0.0, 0.0};
  r.best_epoch = 1;
  r.param_count = params;
  r.test.aql = test_aql;
  return r;
}

}  // namespace

TEST_CASE("grid search") {
  SECTION("nine cells run, selection by mean validation AQL") {
    std::vector<GridCell> cells;
    int launched = 0;
    for (int h : {8, 32, 128})
      for (int l : {2, 3, 4}) {
        GridCell c;
        c.key = "h" + std::to_string(h) + "-l" + std::to_string(l);
        const double val = std::fabs(h - 32) * 0.1 + l;  // h=32, l=2 wins
        c.replicas.push_back([val, &launched] {
          ++launched;
          return canned_record(val, 100, val);
        });
        cells.push_back(std::move(c));
      }
    const GridResult res = grid_search(std::move(cells));
    CHECK(launched == 9);
    CHECK(res.cells.size() == 9);
    CHECK(res.cells[res.best].key == "h32-l2");
  }
  SECTION("invalid combination skipped with its reason") {
    std::vector<GridCell> cells;
    GridCell good;
    good.key = "a";
    good.replicas.push_back([] { return canned_record(1.0, 10, 1.0); });
    GridCell bad;
    bad.key = "b";
    bad.validate = [] { return std::optional<std::string>("frame too short"); };
    bad.replicas.push_back([]() -> RunRecord { throw std::logic_error("must not run"); });
    cells.push_back(std::move(good));
    cells.push_back(std::move(bad));
    const GridResult res = grid_search(std::move(cells));
    CHECK(res.cells.size() == 1);
    REQUIRE(res.skipped.size() == 1);
    CHECK(res.skipped[0].first == "b");
    CHECK(res.skipped[0].second == "frame too short");
  }
  SECTION("all combinations invalid is an error") {
    std::vector<GridCell> cells;
    GridCell bad;
    bad.key = "x";
    bad.validate = [] { return std::optional<std::string>("nope"); };
    cells.push_back(std::move(bad));
    CHECK_THROWS_AS(grid_search(std::move(cells)), std::runtime_error);
  }
  SECTION("ties break by parameter count then key") {
    std::vector<GridCell> cells;
    for (const auto& [key, params] :
         std::vector<std::pair<std::string, size_t>>{{"big", 500}, {"small", 100}, {"also-small", 100}}) {
      GridCell c;
      c.key = key;
      const size_t p = params;
      c.replicas.push_back([p] { return canned_record(2.0, p, 2.0); });
      cells.push_back(std::move(c));
    }
    const GridResult res = grid_search(std::move(cells));
    CHECK(res.cells[res.best].key == "also-small");
  }
  SECTION("replica mean decides, and parallel execution matches serial") {
    auto make_cells = [] {
      std::vector<GridCell> cells;
      GridCell a;
      a.key = "a";  // replicas 1.0 and 3.0: mean 2.0
      a.replicas.push_back([] { return canned_record(1.0, 10, 1.0); });
      a.replicas.push_back([] { return canned_record(3.0, 10, 3.0); });
      GridCell b;
      b.key = "b";  // single replica 2.5
      b.replicas.push_back([] { return canned_record(2.5, 10, 2.5); });
      cells.push_back(std::move(a));
      cells.push_back(std::move(b));
      return cells;
    };
    const GridResult serial = grid_search(make_cells(), 1);
    const GridResult parallel = grid_search(make_cells(), 4);
    CHECK(serial.cells[serial.best].key == "a");
    CHECK(serial.cells[0].mean_val_aql == Approx(2.0));
    REQUIRE(parallel.cells.size() == serial.cells.size());
    for (size_t i = 0; i < serial.cells.size(); ++i) {
      CHECK(parallel.cells[i].key == serial.cells[i].key);
      CHECK(parallel.cells[i].mean_val_aql == serial.cells[i].mean_val_aql);
    }
    CHECK(parallel.cells[parallel.best].key == serial.cells[serial.best].key);
  }
}

TEST_CASE("aggregate") {
  SECTION("single record") {
    std::vector<RunRecord> recs = {canned_record(1.0, 10, 5.0)};
    const auto agg = aggregate(recs, [](const RunRecord&) { return std::string("g"); });
    CHECK(agg.at("g").n == 1);
    CHECK(agg.at("g").aql.mean == Approx(5.0));
    CHECK(agg.at("g").aql.stddev == 0.0);
  }
  SECTION("mean of two") {
    std::vector<RunRecord> recs = {canned_record(0, 1, 1.0), canned_record(0, 1, 3.0)};
    const auto agg = aggregate(recs, [](const RunRecord&) { return std::string("g"); });
    CHECK(agg.at("g").aql.mean == Approx(2.0));
    CHECK(agg.at("g").aql.stddev == Approx(1.0));
  }
  SECTION("5 seeds x 3 folds form 15-record groups") {
    std::vector<RunRecord> recs;
    for (int fold = 1; fold <= 3; ++fold)
      for (uint64_t seed = 1; seed <= 5; ++seed) {
        RunRecord r = canned_record(0, 1, 1.0);
        r.fold = fold;
        r.seed = seed;
        r.run_id = "cell";
        recs.push_back(r);
      }
    const auto agg = aggregate(recs, [](const RunRecord& r) { return r.run_id; });
    CHECK(agg.at("cell").n == 15);
  }
  SECTION("empty input rejected") {
    CHECK_THROWS_AS(aggregate({}, [](const RunRecord&) { return std::string(); }),
                    std::invalid_argument);
  }
}

TEST_CASE("parallel real trainings match serial results") {
  Fixture fx(30, 9);
  auto make_cells = [&] {
    std::vector<GridCell> cells;
    for (int h : {4, 8}) {
      GridCell c;
      c.key = "h" + std::to_string(h);
      for (uint64_t seed : {1ull, 2ull}) {
        c.replicas.push_back([&fx, h, seed] {
          baselines::MlpModel mlp = baselines::MlpModel::build(
              {.hidden = h, .n_layers = 2, .seed = seed});
          mlp.fit_scaler(fx.frame, 0, 1900);
          return train::train(mlp, fx.ws, fx.idx, quick_config(3, seed));
        });
      }
      cells.push_back(std::move(c));
    }
    return cells;
  };
  const GridResult serial = grid_search(make_cells(), 1);
  const GridResult parallel = grid_search(make_cells(), 4);
  REQUIRE(serial.cells.size() == parallel.cells.size());
  for (size_t i = 0; i < serial.cells.size(); ++i) {
    CHECK(serial.cells[i].mean_val_aql == parallel.cells[i].mean_val_aql);
    for (size_t r = 0; r < serial.cells[i].records.size(); ++r) {
      CHECK(serial.cells[i].records[r].val_curve == parallel.cells[i].records[r].val_curve);
      CHECK(serial.cells[i].records[r].best_params ==
            parallel.cells[i].records[r].best_params);
    }
  }
}

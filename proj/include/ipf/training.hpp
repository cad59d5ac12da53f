#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ipf/dataset.hpp"
#include "ipf/metrics.hpp"
#include "ipf/quantile_net.hpp"
#include "ipf/rng.hpp"

namespace ipf::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, int epoch, int batch)
      : std::runtime_error(msg), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

/// One Adam update with bias correction. Throws on a non-finite gradient.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state shape mismatch");
  for (double gr : grads)
    if (!std::isfinite(gr)) throw std::domain_error("adam_step: non-finite gradient");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

struct TrainConfig {
  int max_epochs = 70;
  int batch_size = 1024;
  AdamConfig adam;
  int patience = 10;
  bool shuffle = true;
  uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs)
      throw std::invalid_argument("train config: need 1 <= patience <= max_epochs");
  }
};

/// Everything recorded about one training run. Loss curves are in price
/// units; test metrics come from the best-validation checkpoint only.
struct RunRecord {
  std::string run_id;
  uint64_t seed = 0;
  int fold = 0;
  std::vector<double> train_curve;
  std::vector<double> val_curve;
  int best_epoch = -1;  // 0-based index into the curves
  metrics::EvalReport test;
  double wall_seconds = 0.0;  // reported separately from the JSON record
  size_t param_count = 0;
  std::vector<double> best_params;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["seed"] = seed;
    j["fold"] = fold;
    j["param_count"] = param_count;
    j["best_epoch"] = best_epoch;
    j["train_curve"] = train_curve;
    j["val_curve"] = val_curve;
    j["test"] = metrics::to_json(test);
    return j;
  }
};

/// AQL of a sample index set, in price units. Forward passes only.
inline double evaluate_aql(QuantileNet& net, const data::WindowSet& ws,
                           std::span<const size_t> samples, ad::GraphBuilder& g) {
  double sum = 0.0;
  for (size_t i : samples) {
    const metrics::QuantileForecast f = net.predict(g, ws, i);
    const double y = ws.target_price(i);
    for (size_t q = 0; q < metrics::kNumQuantiles; ++q)
      sum += metrics::pinball(y, f[q], metrics::kQuantiles[q]);
  }
  return sum / (static_cast<double>(samples.size()) *
                static_cast<double>(metrics::kNumQuantiles));
}

inline metrics::EvalReport evaluate_report(QuantileNet& net, const data::WindowSet& ws,
                                           std::span<const size_t> samples) {
  ad::Tape tape;
  ad::GraphBuilder g(tape, net.params());
  std::vector<double> truths;
  std::vector<metrics::QuantileForecast> forecasts;
  truths.reserve(samples.size());
  forecasts.reserve(samples.size());
  for (size_t i : samples) {
    truths.push_back(ws.target_price(i));
    forecasts.push_back(net.predict(g, ws, i));
  }
  return metrics::evaluate(truths, forecasts);
}

/// Mini-batch descent on the average quantile loss with per-epoch validation,
/// best-checkpoint selection, and early stopping. Deterministic per seed:
/// shuffling uses a per-epoch derived stream.
inline RunRecord train(QuantileNet& net, const data::WindowSet& ws,
                       const data::SplitIndices& idx, const TrainConfig& cfg) {
  cfg.validate();
  if (idx.train.empty()) throw std::invalid_argument("train: empty training split");
  if (idx.val.empty()) throw std::invalid_argument("train: empty validation split");

  RunRecord rec;
  rec.seed = cfg.seed;
  rec.param_count = net.param_count();

  ad::Tape tape;
  ad::GraphBuilder g(tape, net.params());
  std::vector<size_t> order(idx.train.begin(), idx.train.end());
  const size_t n_train = order.size();
  const double inv_q = 1.0 / static_cast<double>(metrics::kNumQuantiles);
  const double price_scale = net.inverse_transform(1.0) - net.inverse_transform(0.0);

  AdamState adam;
  double best_val = HUGE_VAL;
  std::vector<double> best_params(net.params().values().begin(), net.params().values().end());
  int best_epoch = -1;
  int since_best = 0;

  std::array<ad::Value, metrics::kNumQuantiles> outs;
  std::array<double, metrics::kNumQuantiles> seeds;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) {
      Rng rng(Rng::derive(cfg.seed, 0xe90c000 + static_cast<uint64_t>(epoch)));
      rng.shuffle(order);
    }
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < n_train; start += cfg.batch_size) {
      const size_t stop = std::min(n_train, start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      net.params().zero_grads();
      const int batch_no = static_cast<int>(start / cfg.batch_size);
      try {
        for (size_t k = start; k < stop; ++k) {
          const size_t i = order[k];
          g.reset();
          outs = net.build_forward(g, ws, i);
          const double y = net.transform_target(ws.target_price(i));
          for (size_t q = 0; q < metrics::kNumQuantiles; ++q) {
            const double tau = metrics::kQuantiles[q];
            const double yq = outs[q].val();
            epoch_loss += metrics::pinball(y, yq, tau) * inv_q;
            // d pinball / d yhat
            seeds[q] = (y >= yq ? -tau : 1.0 - tau) * inv_q * inv_b;
          }
          tape.backward(outs, seeds);
          g.accumulate_grads();
        }
        adam_step(net.params().values(), net.params().grads(), adam, cfg.adam);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged(std::string("training diverged: ") + e.what() + " (epoch " +
                                   std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batch_no) + ")",
                               epoch + 1, batch_no);
      }
      seen += stop - start;
    }
    rec.train_curve.push_back(epoch_loss / static_cast<double>(seen) * price_scale);

    const double val_aql = evaluate_aql(net, ws, idx.val, g);
    rec.val_curve.push_back(val_aql);
    if (val_aql < best_val) {
      best_val = val_aql;
      best_epoch = epoch;
      since_best = 0;
      std::copy(net.params().values().begin(), net.params().values().end(),
                best_params.begin());
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
    }
  }

  for (size_t i = 0; i < best_params.size(); ++i)
    net.params().set_value(static_cast<int>(i), best_params[i]);
  rec.best_epoch = best_epoch;
  rec.best_params = std::move(best_params);
  if (!idx.test.empty()) rec.test = evaluate_report(net, ws, idx.test);
  return rec;
}

/// Run fn(0..n-1) on up to `jobs` worker threads. Work items must be
/// mutually independent; the first exception wins and is rethrown after all
/// workers join.
inline void run_parallel(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::scoped_lock lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- grid search ----

/// One hyperparameter combination: a lexicographic key (also the final
/// tiebreaker), a validity check returning a skip reason, and one trainable
/// replica per (fold, seed) pair.
struct GridCell {
  std::string key;
  std::function<std::optional<std::string>()> validate;  // nullopt = valid
  std::vector<std::function<RunRecord()>> replicas;
};

struct CellRuns {
  std::string key;
  std::vector<RunRecord> records;
  double mean_val_aql = 0.0;  // best-epoch validation AQL averaged over replicas
  size_t param_count = 0;
};

struct GridResult {
  std::vector<CellRuns> cells;                               // completed, key order
  std::vector<std::pair<std::string, std::string>> skipped;  // key -> reason
  size_t best = 0;                                           // index into cells
};

inline double best_val_aql(const RunRecord& r) { return r.val_curve[r.best_epoch]; }

/// Train every valid combination (replicas may run on a worker pool), skip
/// invalid ones with their reason, and select the winner by mean validation
/// AQL; ties break toward fewer parameters, then the smaller key.
inline GridResult grid_search(std::vector<GridCell> cells, int jobs = 1) {
  if (cells.empty()) throw std::invalid_argument("grid_search: empty grid");
  std::sort(cells.begin(), cells.end(),
            [](const GridCell& a, const GridCell& b) { return a.key < b.key; });
  GridResult res;
  struct Job {
    size_t cell;
    size_t replica;
    const std::function<RunRecord()>* run;
  };
  std::vector<Job> jobs_list;
  std::vector<size_t> cell_index(cells.size(), SIZE_MAX);
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    if (auto reason = cells[ci].validate ? cells[ci].validate() : std::nullopt) {
      res.skipped.emplace_back(cells[ci].key, *reason);
      continue;
    }
    cell_index[ci] = res.cells.size();
    CellRuns runs;
    runs.key = cells[ci].key;
    runs.records.resize(cells[ci].replicas.size());
    res.cells.push_back(std::move(runs));
    for (size_t ri = 0; ri < cells[ci].replicas.size(); ++ri)
      jobs_list.push_back(Job{ci, ri, &cells[ci].replicas[ri]});
  }
  if (res.cells.empty()) throw std::runtime_error("grid_search: all combinations invalid");

  run_parallel(jobs_list.size(), jobs, [&](size_t j) {
    const Job& job = jobs_list[j];
    res.cells[cell_index[job.cell]].records[job.replica] = (*job.run)();
  });

  for (CellRuns& c : res.cells) {
    double sum = 0.0;
    for (const RunRecord& r : c.records) sum += best_val_aql(r);
    c.mean_val_aql = sum / static_cast<double>(c.records.size());
    c.param_count = c.records.front().param_count;
  }
  res.best = 0;
  for (size_t i = 1; i < res.cells.size(); ++i) {
    const CellRuns& cand = res.cells[i];
    const CellRuns& inc = res.cells[res.best];
    if (cand.mean_val_aql < inc.mean_val_aql ||
        (cand.mean_val_aql == inc.mean_val_aql &&
         (cand.param_count < inc.param_count ||
          (cand.param_count == inc.param_count && cand.key < inc.key))))
      res.best = i;
  }
  return res;
}

// ---- aggregation ----

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

struct AggRow {
  size_t n = 0;
  MetricStats aql, aqcr, mae, rmse;
};

inline MetricStats stats_of(std::span<const double> xs) {
  MetricStats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

/// Group records by a caller-supplied key and report mean/stddev of every
/// test metric per group.
inline std::map<std::string, AggRow> aggregate(
    std::span<const RunRecord> records,
    const std::function<std::string(const RunRecord&)>& key) {
  if (records.empty()) throw std::invalid_argument("aggregate: empty records");
  std::map<std::string, std::array<std::vector<double>, 4>> grouped;
  for (const RunRecord& r : records) {
    auto& g = grouped[key(r)];
    g[0].push_back(r.test.aql);
    g[1].push_back(r.test.aqcr);
    g[2].push_back(r.test.mae);
    g[3].push_back(r.test.rmse);
  }
  std::map<std::string, AggRow> out;
  for (auto& [k, g] : grouped) {
    AggRow row;
    row.n = g[0].size();
    row.aql = stats_of(g[0]);
    row.aqcr = stats_of(g[1]);
    row.mae = stats_of(g[2]);
    row.rmse = stats_of(g[3]);
    out[k] = row;
  }
  return out;
}

}  // namespace ipf::train

// ipf: imbalance-price forecasting toolkit.
//
// Subcommands: price (batch settlement), synth (synthetic market data),
// train / evaluate / baseline (models), ablate (component removal study),
// sweep (lookback x horizon scaling study).
//
// Exit codes: 0 success, 2 input/config error, 3 numerical failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ipf/baselines.hpp"
#include "ipf/dataset.hpp"
#include "ipf/metrics.hpp"
#include "ipf/mrinn.hpp"
#include "ipf/pricing.hpp"
#include "ipf/training.hpp"
#include "ipf/util.hpp"

namespace {

using nlohmann::ordered_json;
using namespace ipf;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  for (std::string_view piece : split(s, ','))
    if (!piece.empty()) out.push_back(static_cast<int>(parse_int(piece, what)));
  if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  for (std::string_view piece : split(s, ','))
    if (!piece.empty()) out.push_back(static_cast<uint64_t>(parse_int(piece, "seed")));
  if (out.empty()) throw std::invalid_argument("seeds: empty list");
  return out;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---- shared option blocks ----

struct DataOptions {
  std::string data_path;
  int synth_days = 0;
  uint64_t synth_seed = 1;
  double v_sigma = data::SynthParams{}.v_sigma;
  double v_rho = data::SynthParams{}.v_rho;
};

void add_data_options(CLI::App* cmd, DataOptions& opt) {
  auto* data = cmd->add_option("--data", opt.data_path, "input CSV (schema per README)")
                   ->check(CLI::ExistingFile);
  auto* days =
      cmd->add_option("--synth-days", opt.synth_days, "generate a synthetic frame instead");
  cmd->add_option("--synth-seed", opt.synth_seed, "synthetic generator seed")
      ->needs(days);
  cmd->add_option("--synth-v-sigma", opt.v_sigma, "synthetic imbalance volatility (MW)")
      ->needs(days);
  cmd->add_option("--synth-v-rho", opt.v_rho, "synthetic imbalance AR coefficient")
      ->needs(days);
  days->excludes(data);
  data->excludes(days);
}

data::FeatureFrame resolve_frame(const DataOptions& opt) {
  if (!opt.data_path.empty()) return data::load_csv(opt.data_path);
  if (opt.synth_days > 0) {
    data::SynthParams params;
    params.v_sigma = opt.v_sigma;
    params.v_rho = opt.v_rho;
    return data::generate_synthetic(opt.synth_days, opt.synth_seed, params);
  }
  throw std::invalid_argument("no data source: pass --data or --synth-days");
}

struct ProtocolOptions {
  std::string folds = "1";
  std::string fold_mode = "auto";  // auto | standard | proportional
  std::string seeds = "1";
};

void add_protocol_options(CLI::App* cmd, ProtocolOptions& opt) {
  cmd->add_option("--folds", opt.folds, "fold list, e.g. 1,2,3");
  cmd->add_option("--fold-mode", opt.fold_mode, "auto | standard | proportional")
      ->check(CLI::IsMember({"auto", "standard", "proportional"}));
  cmd->add_option("--seeds", opt.seeds, "seed list, e.g. 1,2,3,4,5");
}

std::array<data::Split, 3> resolve_folds(const data::FeatureFrame& frame,
                                         const std::string& mode) {
  if (mode == "standard") return data::make_folds(frame, data::FoldSpec::standard());
  if (mode == "proportional")
    return data::make_folds(frame, data::FoldSpec::proportional(frame));
  try {
    return data::make_folds(frame, data::FoldSpec::standard());
  } catch (const std::invalid_argument&) {
    return data::make_folds(frame, data::FoldSpec::proportional(frame));
  }
}

struct TrainOptions {
  int max_epochs = 70;
  int batch_size = 1024;
  double lr = 1e-3;
  int patience = 10;
  bool no_shuffle = false;
};

void add_train_options(CLI::App* cmd, TrainOptions& opt) {
  cmd->add_option("--max-epochs", opt.max_epochs, "training epoch cap");
  cmd->add_option("--batch-size", opt.batch_size, "minibatch size");
  cmd->add_option("--lr", opt.lr, "Adam learning rate");
  cmd->add_option("--patience", opt.patience, "early-stop patience (epochs)");
  cmd->add_flag("--no-shuffle", opt.no_shuffle, "disable per-epoch shuffling");
}

train::TrainConfig make_train_config(const TrainOptions& opt) {
  train::TrainConfig tc;
  tc.max_epochs = opt.max_epochs;
  tc.batch_size = opt.batch_size;
  tc.adam.lr = opt.lr;
  tc.patience = opt.patience;
  tc.shuffle = !opt.no_shuffle;
  return tc;
}

// ---- run execution ----

struct RunPlan {
  std::string family;  // mrinn | mlp | lqr
  int h = 8;
  int n_layers = 2;
  int lookback_min = 0;
  int horizon_min = 15;
  model::Ablation ablation = model::Ablation::none;
  int fold = 1;  // 1-based
  uint64_t seed = 1;

  std::string cell_key() const {
    std::ostringstream os;
    os << family;
    if (family != "lqr") os << "-h" << h << "-l" << n_layers;
    os << "-n" << lookback_min << "-m" << horizon_min;
    if (family == "mrinn" && ablation != model::Ablation::none)
      os << "-" << model::to_string(ablation);
    return os.str();
  }
  std::string run_id() const {
    std::ostringstream os;
    os << cell_key() << "-f" << fold << "-s" << seed;
    return os.str();
  }
};

/// Train one replica and (optionally) write its artifact directory:
/// checkpoint.json, run_record.json, eval.json and run.log (timing only, so
/// every other artifact is byte-stable per seed).
train::RunRecord execute_run(const data::FeatureFrame& frame,
                             const std::array<data::Split, 3>& splits, const RunPlan& plan,
                             const train::TrainConfig& tc_base, const std::string& out_root) {
  const data::Split& split = splits[plan.fold - 1];
  const data::WindowSet ws = data::make_windows(frame, plan.lookback_min, plan.horizon_min);
  const data::SplitIndices idx = data::split_windows(ws, split);
  if (idx.train.empty() || idx.val.empty() || idx.test.empty())
    throw std::invalid_argument(plan.run_id() + ": a fold period has no usable samples");

  train::TrainConfig tc = tc_base;
  tc.seed = plan.seed;

  std::unique_ptr<train::QuantileNet> net;
  ordered_json checkpoint;
  const auto t0 = std::chrono::steady_clock::now();
  train::RunRecord rec;
  if (plan.family == "mrinn") {
    model::MrinnConfig cfg;
    cfg.h = plan.h;
    cfg.n_layers = plan.n_layers;
    cfg.lookback_min = plan.lookback_min;
    cfg.horizon_min = plan.horizon_min;
    cfg.ablation = plan.ablation;
    cfg.seed = plan.seed;
    auto m = std::make_unique<model::MrinnModel>(model::MrinnModel::build(cfg));
    m->fit_scalers(frame, split.train_begin, split.train_end);
    rec = train::train(*m, ws, idx, tc);
    checkpoint = m->checkpoint();
  } else if (plan.family == "mlp") {
    baselines::MlpConfig cfg;
    cfg.hidden = plan.h;
    cfg.n_layers = plan.n_layers;
    cfg.lookback_min = plan.lookback_min;
    cfg.horizon_min = plan.horizon_min;
    cfg.seed = plan.seed;
    auto m = std::make_unique<baselines::MlpModel>(baselines::MlpModel::build(cfg));
    m->fit_scaler(frame, split.train_begin, split.train_end);
    rec = train::train(*m, ws, idx, tc);
    checkpoint = m->checkpoint();
  } else if (plan.family == "lqr") {
    auto m = std::make_unique<baselines::LqrModel>(plan.seed, plan.horizon_min);
    m->fit_scaler(frame, split.train_begin, split.train_end);
    rec = train::train(*m, ws, idx, tc);
    checkpoint = m->checkpoint();
  } else {
    throw std::invalid_argument("unknown model family: " + plan.family);
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.run_id = plan.run_id();
  rec.seed = plan.seed;
  rec.fold = plan.fold;

  if (!out_root.empty()) {
    const std::string dir = out_root + "/runs/" + rec.run_id;
    write_json(dir + "/checkpoint.json", checkpoint);
    write_json(dir + "/run_record.json", rec.to_json());
    write_json(dir + "/eval.json", metrics::to_json(rec.test));
    write_file_atomic(dir + "/run.log",
                      "wall_seconds=" + fmt_double(rec.wall_seconds) + "\n");
  }
  return rec;
}

/// Cheap feasibility check used to skip invalid grid combinations.
std::optional<std::string> plan_problem(const data::FeatureFrame& frame,
                                        const std::array<data::Split, 3>& splits,
                                        const RunPlan& plan) {
  if (plan.lookback_min < 0 || plan.lookback_min % 15 != 0)
    return "lookback not a multiple of 15";
  if (plan.horizon_min <= 0 || plan.horizon_min % 15 != 0)
    return "horizon not a positive multiple of 15";
  const int n_lags = plan.lookback_min / 15 + 1;
  const int steps = plan.horizon_min / 15;
  if (static_cast<size_t>(n_lags + steps) >= frame.rows()) return "frame too short";
  const data::Split& split = splits[plan.fold - 1];
  if (split.train_end <= split.train_begin + static_cast<size_t>(n_lags + steps))
    return "training period shorter than one window";
  return std::nullopt;
}

ordered_json manifest_entry(const RunPlan& plan, const train::RunRecord& rec) {
  ordered_json j;
  j["run_id"] = rec.run_id;
  j["family"] = plan.family;
  j["cell"] = plan.cell_key();
  j["fold"] = plan.fold;
  j["seed"] = plan.seed;
  j["lookback_min"] = plan.lookback_min;
  j["horizon_min"] = plan.horizon_min;
  if (plan.family == "mrinn") j["ablation"] = model::to_string(plan.ablation);
  j["param_count"] = rec.param_count;
  j["best_epoch"] = rec.best_epoch;
  j["val_aql"] = train::best_val_aql(rec);
  j["test"] = metrics::to_json(rec.test);
  return j;
}

void echo_config(CLI::App& app, const std::string& out_dir) {
  write_file_atomic(out_dir + "/config.txt", app.config_to_str(true, true));
}

/// Output directory resolution: explicit --out wins, otherwise
/// $IPF_OUT_ROOT/<command>.
std::string resolve_out(const std::string& out, const char* command) {
  if (!out.empty()) return out;
  if (const char* root = std::getenv("IPF_OUT_ROOT"))
    return std::string(root) + "/" + command;
  throw std::invalid_argument("no output directory: pass --out or set IPF_OUT_ROOT");
}

// ---- price ----

struct PriceArgs {
  std::string input, output, constants_file;
  std::vector<std::string> sets;
  bool lenient = false;
  bool fill_gaps = false;
};

pricing::PricingConstants load_constants(const std::string& file,
                                         const std::vector<std::string>& sets) {
  pricing::PricingConstants c;
  auto apply = [&](std::string_view key, double value) {
    if (key == "c0") c.c0 = value;
    else if (key == "c1") c.c1 = value;
    else if (key == "c2") c.c2 = value;
    else if (key == "c3") c.c3 = value;
    else if (key == "c4") c.c4 = value;
    else if (key == "c5") c.c5 = value;
    else if (key == "c6") c.c6 = value;
    else if (key == "c7") c.c7 = value;
    else if (key == "c8") c.c8 = value;
    else if (key == "c9") c.c9 = value;
    else if (key == "c10") c.c10 = value;
    else throw std::invalid_argument("unknown pricing constant: " + std::string(key));
  };
  if (!file.empty()) {
    std::istringstream in(read_file(file));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(file + ": expected key=value, got '" + line + "'");
      apply(line.substr(0, eq), parse_double(std::string_view(line).substr(eq + 1), "constant"));
    }
  }
  for (const std::string& s : sets) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    apply(std::string_view(s).substr(0, eq),
          parse_double(std::string_view(s).substr(eq + 1), "constant"));
  }
  c.validate();
  return c;
}

int cmd_price(const PriceArgs& args) {
  const pricing::PricingConstants constants = load_constants(args.constants_file, args.sets);
  data::LoadOptions opt;
  opt.strict = !args.lenient;
  opt.forward_fill_gaps = args.fill_gaps;
  data::LoadReport report;
  const data::FeatureFrame frame = data::load_csv(args.input, opt, &report);
  if (report.rows_dropped > 0)
    std::cerr << "warning: dropped " << report.rows_dropped << " rows with non-finite values\n";

  std::string out = "ts,p_bal,p_mkt,p_scar,p_base,w_id15,w_id60,w_da,ramp,p_final\n";
  for (size_t r = 0; r < frame.rows(); ++r) {
    const pricing::PriceBreakdown b =
        pricing::imbalance_price(frame.snapshot(r), constants);
    out += format_iso8601(frame.ts[r]);
    for (double x : {b.p_bal, b.p_mkt, b.p_scar, b.p_base, b.w_id15, b.w_id60, b.w_da,
                     b.ramp_value, b.p_final}) {
      out += ',';
      out += fmt_double(x);
    }
    out += '\n';
  }
  write_file_atomic(args.output, out);
  std::cout << "wrote " << frame.rows() << " breakdown rows to " << args.output << "\n";
  return kExitOk;
}

// ---- synth ----

struct SynthArgs {
  int days = 0;
  uint64_t seed = 1;
  std::string output;
  std::string start = "2022-01-01";
  double v_sigma = data::SynthParams{}.v_sigma;
  double v_rho = data::SynthParams{}.v_rho;
  double spike_prob = data::SynthParams{}.v_spike_prob;
};

int cmd_synth(const SynthArgs& args) {
  data::SynthParams params;
  params.start_ts = parse_iso8601(args.start + "T00:00:00Z");
  params.v_sigma = args.v_sigma;
  params.v_rho = args.v_rho;
  params.v_spike_prob = args.spike_prob;
  const data::FeatureFrame frame = data::generate_synthetic(args.days, args.seed, params);
  data::write_csv(frame, args.output);
  std::cout << "wrote " << frame.rows() << " rows to " << args.output << "\n";
  return kExitOk;
}

// ---- train ----

struct ModelArgs {
  std::string family = "mrinn";
  int h = 8;
  int n_layers = 2;
  int lookback = 0;
  int horizon = 15;
  std::string ablation = "none";
};

void add_model_options(CLI::App* cmd, ModelArgs& opt, bool with_ablation = true) {
  cmd->add_option("--family", opt.family, "mrinn | mlp | lqr")
      ->check(CLI::IsMember({"mrinn", "mlp", "lqr"}));
  cmd->add_option("--hidden", opt.h, "latent / hidden dimension");
  cmd->add_option("--n-layers", opt.n_layers, "trunk depth");
  cmd->add_option("--lookback", opt.lookback, "history window N in minutes");
  cmd->add_option("--horizon", opt.horizon, "forecast horizon M in minutes");
  if (with_ablation)
    cmd->add_option("--ablation", opt.ablation, "none | drop_bal | drop_mkt | drop_scar")
        ->check(CLI::IsMember({"none", "drop_bal", "drop_mkt", "drop_scar"}));
}

struct TrainArgs {
  DataOptions data;
  ProtocolOptions protocol;
  TrainOptions train;
  ModelArgs model;
  bool grid = false;
  std::string out;
  int jobs = 1;
};

std::vector<RunPlan> expand_plans(const RunPlan& base, const std::vector<int>& folds,
                                  const std::vector<uint64_t>& seeds) {
  std::vector<RunPlan> out;
  for (int fold : folds)
    for (uint64_t seed : seeds) {
      RunPlan p = base;
      p.fold = fold;
      p.seed = seed;
      out.push_back(p);
    }
  return out;
}

train::GridResult run_grid(const data::FeatureFrame& frame,
                           const std::array<data::Split, 3>& splits,
                           const std::vector<RunPlan>& cell_bases,
                           const std::vector<int>& folds, const std::vector<uint64_t>& seeds,
                           const train::TrainConfig& tc, const std::string& out_dir,
                           int jobs, std::vector<std::pair<RunPlan, size_t>>* plan_index) {
  std::vector<train::GridCell> cells;
  std::vector<std::vector<RunPlan>> cell_plans;
  for (const RunPlan& base : cell_bases) {
    train::GridCell cell;
    cell.key = base.cell_key();
    cell_plans.push_back(expand_plans(base, folds, seeds));
    const std::vector<RunPlan>& plans = cell_plans.back();
    cell.validate = [&frame, &splits, plans]() -> std::optional<std::string> {
      for (const RunPlan& p : plans)
        if (auto problem = plan_problem(frame, splits, p)) return problem;
      return std::nullopt;
    };
    for (const RunPlan& p : plans)
      cell.replicas.push_back([&frame, &splits, p, &tc, out_dir] {
        try {
          return execute_run(frame, splits, p, tc, out_dir);
        } catch (const train::TrainingDiverged& e) {
          throw train::TrainingDiverged(p.run_id() + ": " + e.what(), e.epoch, e.batch);
        }
      });
    cells.push_back(std::move(cell));
  }
  train::GridResult res = train::grid_search(std::move(cells), jobs);
  if (plan_index) {
    // map each completed record back to its plan, in cell-key order
    std::map<std::string, const std::vector<RunPlan>*> by_key;
    for (size_t i = 0; i < cell_bases.size(); ++i)
      by_key[cell_bases[i].cell_key()] = &cell_plans[i];
    for (size_t ci = 0; ci < res.cells.size(); ++ci) {
      const auto* plans = by_key.at(res.cells[ci].key);
      for (size_t ri = 0; ri < plans->size(); ++ri)
        plan_index->emplace_back((*plans)[ri], ci);
    }
  }
  return res;
}

void write_grid_outputs(const train::GridResult& res,
                        const std::vector<std::pair<RunPlan, size_t>>& plan_index,
                        const std::string& out_dir) {
  ordered_json manifest;
  manifest["runs"] = ordered_json::array();
  size_t cursor = 0;
  for (size_t ci = 0; ci < res.cells.size(); ++ci) {
    for (size_t ri = 0; ri < res.cells[ci].records.size(); ++ri, ++cursor)
      manifest["runs"].push_back(
          manifest_entry(plan_index[cursor].first, res.cells[ci].records[ri]));
  }
  manifest["skipped"] = ordered_json::array();
  for (const auto& [key, reason] : res.skipped)
    manifest["skipped"].push_back({{"cell", key}, {"reason", reason}});
  manifest["best_cell"] = res.cells[res.best].key;
  write_json(out_dir + "/manifest.json", manifest);

  std::vector<train::RunRecord> all;
  for (const auto& c : res.cells)
    for (const auto& r : c.records) all.push_back(r);
  std::map<std::string, std::string> run_to_cell;
  for (size_t cursor2 = 0, ci = 0; ci < res.cells.size(); ++ci)
    for (size_t ri = 0; ri < res.cells[ci].records.size(); ++ri, ++cursor2)
      run_to_cell[res.cells[ci].records[ri].run_id] = res.cells[ci].key;
  const auto agg = train::aggregate(
      all, [&](const train::RunRecord& r) { return run_to_cell.at(r.run_id); });
  ordered_json summary;
  for (const auto& [key, row] : agg) {
    summary[key] = {
        {"n_runs", row.n},
        {"aql", {{"mean", row.aql.mean}, {"stddev", row.aql.stddev}}},
        {"aqcr", {{"mean", row.aqcr.mean}, {"stddev", row.aqcr.stddev}}},
        {"mae", {{"mean", row.mae.mean}, {"stddev", row.mae.stddev}}},
        {"rmse", {{"mean", row.rmse.mean}, {"stddev", row.rmse.stddev}}},
    };
  }
  summary["best_cell"] = res.cells[res.best].key;
  write_json(out_dir + "/summary.json", summary);
}

int cmd_train(CLI::App& app, const TrainArgs& args) {
  const data::FeatureFrame frame = resolve_frame(args.data);
  const auto splits = resolve_folds(frame, args.protocol.fold_mode);
  const std::vector<int> folds = parse_int_list(args.protocol.folds, "folds");
  for (int f : folds)
    if (f < 1 || f > 3) throw std::invalid_argument("folds must be within 1..3");
  const std::vector<uint64_t> seeds = parse_seed_list(args.protocol.seeds);
  const train::TrainConfig tc = make_train_config(args.train);
  tc.validate();
  const std::string out = resolve_out(args.out, "train");
  echo_config(app, out);

  RunPlan base;
  base.family = args.model.family;
  base.h = args.model.h;
  base.n_layers = args.model.n_layers;
  base.lookback_min = args.model.lookback;
  base.horizon_min = args.model.horizon;
  base.ablation = model::ablation_from_string(args.model.ablation);

  std::vector<RunPlan> cell_bases;
  if (args.grid && args.model.family != "lqr") {
    for (int h : {8, 32, 128})
      for (int l : {2, 3, 4}) {
        RunPlan p = base;
        p.h = h;
        p.n_layers = l;
        cell_bases.push_back(p);
      }
  } else {
    cell_bases.push_back(base);
  }

  std::vector<std::pair<RunPlan, size_t>> plan_index;
  const train::GridResult res = run_grid(frame, splits, cell_bases, folds, seeds, tc,
                                         out, args.jobs, &plan_index);
  write_grid_outputs(res, plan_index, out);

  for (const auto& cell : res.cells)
    std::cout << "cell " << cell.key << ": mean val AQL " << cell.mean_val_aql << " ("
              << cell.records.size() << " runs)\n";
  for (const auto& [key, reason] : res.skipped)
    std::cout << "skipped " << key << ": " << reason << "\n";
  const train::CellRuns& best = res.cells[res.best];
  std::cout << "best cell: " << best.key << " (val AQL " << best.mean_val_aql << ")\n";
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string checkpoint;
  std::string data_path;
  std::string output;
};

int cmd_evaluate(const EvaluateArgs& args) {
  const nlohmann::json ck = nlohmann::json::parse(read_file(args.checkpoint));
  const std::string family = ck.at("family").get<std::string>();
  const data::FeatureFrame frame = data::load_csv(args.data_path);

  std::unique_ptr<train::QuantileNet> net;
  int lookback = 0, horizon = 15;
  if (family == "mrinn") {
    auto m = std::make_unique<model::MrinnModel>(model::MrinnModel::from_checkpoint(ck));
    lookback = m->config().lookback_min;
    horizon = m->config().horizon_min;
    net = std::move(m);
  } else if (family == "mlp") {
    auto m = std::make_unique<baselines::MlpModel>(baselines::MlpModel::from_checkpoint(ck));
    lookback = m->config().lookback_min;
    horizon = m->config().horizon_min;
    net = std::move(m);
  } else if (family == "lqr") {
    auto m = std::make_unique<baselines::LqrModel>(baselines::LqrModel::from_checkpoint(ck));
    horizon = m->horizon_min();
    net = std::move(m);
  } else {
    throw std::invalid_argument("unknown checkpoint family: " + family);
  }

  const data::WindowSet ws = data::make_windows(frame, lookback, horizon);
  if (ws.size() == 0) throw std::invalid_argument("no usable samples in " + args.data_path);
  std::vector<size_t> all(ws.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const metrics::EvalReport report = train::evaluate_report(*net, ws, all);
  const ordered_json j = metrics::to_json(report);
  if (!args.output.empty()) write_json(args.output, j);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- baseline ----

struct BaselineArgs {
  DataOptions data;
  ProtocolOptions protocol;
  TrainOptions train;
  std::string kinds = "price,id15,id60,lqr,mlp";
  int h = 8;
  int n_layers = 2;
  int lookback = 0;
  int horizon = 15;
  std::string out;
  int jobs = 1;
};

int cmd_baseline(CLI::App& app, const BaselineArgs& args) {
  const data::FeatureFrame frame = resolve_frame(args.data);
  const auto splits = resolve_folds(frame, args.protocol.fold_mode);
  const std::vector<int> folds = parse_int_list(args.protocol.folds, "folds");
  for (int f : folds)
    if (f < 1 || f > 3) throw std::invalid_argument("folds must be within 1..3");
  const std::vector<uint64_t> seeds = parse_seed_list(args.protocol.seeds);
  const train::TrainConfig tc = make_train_config(args.train);
  const std::string out = resolve_out(args.out, "baseline");
  echo_config(app, out);

  std::vector<std::string> kinds;
  for (std::string_view piece : split(args.kinds, ','))
    if (!piece.empty()) kinds.emplace_back(piece);

  ordered_json summary;
  for (const std::string& kind : kinds) {
    metrics::EvalReport report;
    if (kind == "price" || kind == "id15" || kind == "id60") {
      // naive persistence with delivery-time residual bands; mean over folds
      std::vector<double> aqls, aqcrs, maes, rmses;
      size_t n = 0;
      for (int fold : folds) {
        const data::WindowSet ws = data::make_windows(frame, args.lookback, args.horizon);
        const data::SplitIndices idx = data::split_windows(ws, splits[fold - 1]);
        const metrics::EvalReport r = baselines::evaluate_naive(
            baselines::naive_kind_from_string(kind), ws, idx.train, idx.test);
        aqls.push_back(r.aql);
        aqcrs.push_back(r.aqcr);
        maes.push_back(r.mae);
        rmses.push_back(r.rmse);
        n += r.n;
      }
      report.aql = train::stats_of(aqls).mean;
      report.aqcr = train::stats_of(aqcrs).mean;
      report.mae = train::stats_of(maes).mean;
      report.rmse = train::stats_of(rmses).mean;
      report.n = n;
    } else if (kind == "lqr" || kind == "mlp") {
      RunPlan base;
      base.family = kind;
      base.h = args.h;
      base.n_layers = args.n_layers;
      base.lookback_min = args.lookback;
      base.horizon_min = args.horizon;
      const train::GridResult res =
          run_grid(frame, splits, {base}, folds, seeds, tc, out, args.jobs, nullptr);
      const train::CellRuns& cell = res.cells[0];
      std::vector<double> aqls, aqcrs, maes, rmses;
      size_t n = 0;
      for (const train::RunRecord& r : cell.records) {
        aqls.push_back(r.test.aql);
        aqcrs.push_back(r.test.aqcr);
        maes.push_back(r.test.mae);
        rmses.push_back(r.test.rmse);
        n += r.test.n;
      }
      report.aql = train::stats_of(aqls).mean;
      report.aqcr = train::stats_of(aqcrs).mean;
      report.mae = train::stats_of(maes).mean;
      report.rmse = train::stats_of(rmses).mean;
      report.n = n;
    } else {
      throw std::invalid_argument("unknown baseline kind: " + kind);
    }
    write_json(out + "/baseline_" + kind + ".json", metrics::to_json(report));
    summary[kind] = metrics::to_json(report);
    std::cout << "baseline " << kind << ": aql " << report.aql << ", aqcr " << report.aqcr
              << ", mae " << report.mae << ", rmse " << report.rmse << "\n";
  }
  write_json(out + "/summary.json", summary);
  return kExitOk;
}

// ---- ablate ----

struct AblateArgs {
  DataOptions data;
  ProtocolOptions protocol;
  TrainOptions train;
  int h = 8;
  int n_layers = 2;
  int lookback = 0;
  int horizon = 15;
  std::string out;
  int jobs = 1;
};

int cmd_ablate(CLI::App& app, const AblateArgs& args) {
  const data::FeatureFrame frame = resolve_frame(args.data);
  const auto splits = resolve_folds(frame, args.protocol.fold_mode);
  const std::vector<int> folds = parse_int_list(args.protocol.folds, "folds");
  const std::vector<uint64_t> seeds = parse_seed_list(args.protocol.seeds);
  const train::TrainConfig tc = make_train_config(args.train);
  const std::string out = resolve_out(args.out, "ablate");
  echo_config(app, out);

  const std::array<model::Ablation, 4> tags = {
      model::Ablation::none, model::Ablation::drop_bal, model::Ablation::drop_mkt,
      model::Ablation::drop_scar};
  std::vector<RunPlan> cell_bases;
  for (model::Ablation tag : tags) {
    RunPlan p;
    p.family = "mrinn";
    p.h = args.h;
    p.n_layers = args.n_layers;
    p.lookback_min = args.lookback;
    p.horizon_min = args.horizon;
    p.ablation = tag;
    cell_bases.push_back(p);
  }
  std::vector<std::pair<RunPlan, size_t>> plan_index;
  const train::GridResult res = run_grid(frame, splits, cell_bases, folds, seeds, tc,
                                         out, args.jobs, &plan_index);
  write_grid_outputs(res, plan_index, out);

  // Table rows in fixed order, ranked by mean test AQL.
  struct Row {
    std::string label;
    double aql, aqcr, mae, rmse;
    int rank = 0;
  };
  std::vector<Row> rows;
  for (size_t ti = 0; ti < tags.size(); ++ti) {
    const model::Ablation tag = tags[ti];
    const std::string key = cell_bases[ti].cell_key();
    const auto it = std::find_if(res.cells.begin(), res.cells.end(),
                                 [&](const train::CellRuns& c) { return c.key == key; });
    if (it == res.cells.end()) continue;
    std::vector<double> aqls, aqcrs, maes, rmses;
    for (const train::RunRecord& r : it->records) {
      aqls.push_back(r.test.aql);
      aqcrs.push_back(r.test.aqcr);
      maes.push_back(r.test.mae);
      rmses.push_back(r.test.rmse);
    }
    rows.push_back(Row{tag == model::Ablation::none ? "all" : model::to_string(tag),
                       train::stats_of(aqls).mean, train::stats_of(aqcrs).mean,
                       train::stats_of(maes).mean, train::stats_of(rmses).mean});
  }
  std::vector<size_t> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return rows[a].aql < rows[b].aql; });
  for (size_t r = 0; r < order.size(); ++r) rows[order[r]].rank = static_cast<int>(r) + 1;

  std::string csv = "ablation,aql,aqcr,mae,rmse,rank\n";
  for (const Row& row : rows) {
    csv += row.label + "," + fmt_double(row.aql) + "," + fmt_double(row.aqcr) + "," +
           fmt_double(row.mae) + "," + fmt_double(row.rmse) + "," +
           std::to_string(row.rank) + "\n";
    std::cout << "ablation " << row.label << ": aql " << row.aql << " rank " << row.rank
              << "\n";
  }
  write_file_atomic(out + "/ablate.csv", csv);
  return kExitOk;
}

// ---- sweep ----

struct SweepArgs {
  DataOptions data;
  ProtocolOptions protocol;
  TrainOptions train;
  int h = 8;
  int n_layers = 2;
  std::string n_list = "0,60,180,1440";
  std::string m_list = "15,30,45,60,120,180,360,540,720,1080,1440";
  bool dry_run = false;
  std::string out;
  int jobs = 1;
};

int cmd_sweep(CLI::App& app, const SweepArgs& args) {
  const std::vector<int> n_list = parse_int_list(args.n_list, "n-list");
  const std::vector<int> m_list = parse_int_list(args.m_list, "m-list");
  const std::string out = resolve_out(args.out, "sweep");
  echo_config(app, out);

  if (args.dry_run) {
    ordered_json manifest;
    manifest["planned"] = ordered_json::array();
    for (int n : n_list)
      for (int m : m_list)
        manifest["planned"].push_back({{"lookback_min", n}, {"horizon_min", m}});
    write_json(out + "/manifest.json", manifest);
    std::cout << "planned " << n_list.size() * m_list.size() << " sweep cells ("
              << n_list.size() << " lookbacks x " << m_list.size() << " horizons)\n";
    return kExitOk;
  }

  const data::FeatureFrame frame = resolve_frame(args.data);
  const auto splits = resolve_folds(frame, args.protocol.fold_mode);
  const std::vector<int> folds = parse_int_list(args.protocol.folds, "folds");
  const std::vector<uint64_t> seeds = parse_seed_list(args.protocol.seeds);
  const train::TrainConfig tc = make_train_config(args.train);

  std::vector<RunPlan> cell_bases;
  for (int n : n_list)
    for (int m : m_list) {
      RunPlan p;
      p.family = "mrinn";
      p.h = args.h;
      p.n_layers = args.n_layers;
      p.lookback_min = n;
      p.horizon_min = m;
      cell_bases.push_back(p);
    }
  std::vector<std::pair<RunPlan, size_t>> plan_index;
  const train::GridResult res = run_grid(frame, splits, cell_bases, folds, seeds, tc,
                                         out, args.jobs, &plan_index);
  write_grid_outputs(res, plan_index, out);

  // Long-format table; the seconds column is wall-clock and therefore the
  // one knowingly non-reproducible output column.
  std::string csv = "n,m,aql,mae,rmse,seconds\n";
  for (const RunPlan& base : cell_bases) {
    const std::string key = base.cell_key();
    const auto it = std::find_if(res.cells.begin(), res.cells.end(),
                                 [&](const train::CellRuns& c) { return c.key == key; });
    if (it == res.cells.end()) continue;
    std::vector<double> aqls, maes, rmses;
    double seconds = 0.0;
    for (const train::RunRecord& r : it->records) {
      aqls.push_back(r.test.aql);
      maes.push_back(r.test.mae);
      rmses.push_back(r.test.rmse);
      seconds += r.wall_seconds;
    }
    csv += std::to_string(base.lookback_min) + "," + std::to_string(base.horizon_min) + "," +
           fmt_double(train::stats_of(aqls).mean) + "," + fmt_double(train::stats_of(maes).mean) +
           "," + fmt_double(train::stats_of(rmses).mean) + "," +
           fmt_double(seconds / static_cast<double>(it->records.size())) + "\n";
  }
  write_file_atomic(out + "/sweep.csv", csv);
  std::cout << "swept " << res.cells.size() << " cells (" << res.skipped.size()
            << " skipped) -> " << out << "/sweep.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imbalance-price forecasting toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file (sections via dotted keys)");
  app.allow_config_extras(false);

  PriceArgs price_args;
  auto* price = app.add_subcommand("price", "batch settlement: per-row price breakdown CSV");
  price->add_option("--input", price_args.input, "input data CSV")
      ->required()
      ->check(CLI::ExistingFile);
  price->add_option("--output", price_args.output, "breakdown CSV to write")->required();
  price->add_option("--constants", price_args.constants_file,
                    "key=value file overriding c0..c10")
      ->check(CLI::ExistingFile);
  price->add_option("--set", price_args.sets, "override one constant, e.g. --set c4=60");
  price->add_flag("--lenient", price_args.lenient, "drop rows with non-finite values");
  price->add_flag("--fill-gaps", price_args.fill_gaps, "forward-fill 15-min gaps");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic market CSV");
  synth->add_option("--days", synth_args.days, "number of days (96 rows each)")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--output", synth_args.output, "CSV to write")->required();
  synth->add_option("--start", synth_args.start, "first day, YYYY-MM-DD");
  synth->add_option("--v-sigma", synth_args.v_sigma, "imbalance innovation volatility (MW)");
  synth->add_option("--v-rho", synth_args.v_rho, "imbalance AR(1) coefficient");
  synth->add_option("--spike-prob", synth_args.spike_prob, "imbalance spike probability");

  TrainArgs train_args;
  auto* traincmd = app.add_subcommand("train", "train a forecaster (single config or grid)");
  add_data_options(traincmd, train_args.data);
  add_protocol_options(traincmd, train_args.protocol);
  add_train_options(traincmd, train_args.train);
  add_model_options(traincmd, train_args.model);
  traincmd->add_flag("--grid", train_args.grid, "search the family's h x n_layers grid");
  traincmd->add_option("--out", train_args.out, "output directory (default $IPF_OUT_ROOT/train)");
  traincmd->add_option("--jobs", train_args.jobs, "parallel runs")->check(CLI::PositiveNumber);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a CSV");
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "checkpoint.json path")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--data", eval_args.data_path, "data CSV")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--output", eval_args.output, "eval report JSON to write");

  BaselineArgs baseline_args;
  auto* baseline = app.add_subcommand("baseline", "run reference forecasters");
  add_data_options(baseline, baseline_args.data);
  add_protocol_options(baseline, baseline_args.protocol);
  add_train_options(baseline, baseline_args.train);
  baseline->add_option("--kinds", baseline_args.kinds, "subset of price,id15,id60,lqr,mlp");
  baseline->add_option("--hidden", baseline_args.h, "MLP hidden width");
  baseline->add_option("--n-layers", baseline_args.n_layers, "MLP depth");
  baseline->add_option("--lookback", baseline_args.lookback, "history window N in minutes");
  baseline->add_option("--horizon", baseline_args.horizon, "forecast horizon M in minutes");
  baseline->add_option("--out", baseline_args.out, "output directory (default $IPF_OUT_ROOT/baseline)");
  baseline->add_option("--jobs", baseline_args.jobs, "parallel runs")
      ->check(CLI::PositiveNumber);

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "component-removal study (4 model variants)");
  add_data_options(ablate, ablate_args.data);
  add_protocol_options(ablate, ablate_args.protocol);
  add_train_options(ablate, ablate_args.train);
  ablate->add_option("--hidden", ablate_args.h, "latent dimension");
  ablate->add_option("--n-layers", ablate_args.n_layers, "trunk depth");
  ablate->add_option("--lookback", ablate_args.lookback, "history window N in minutes");
  ablate->add_option("--horizon", ablate_args.horizon, "forecast horizon M in minutes");
  ablate->add_option("--out", ablate_args.out, "output directory (default $IPF_OUT_ROOT/ablate)");
  ablate->add_option("--jobs", ablate_args.jobs, "parallel runs")->check(CLI::PositiveNumber);

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "(N, M) scaling study -> long-format CSV");
  add_data_options(sweep, sweep_args.data);
  add_protocol_options(sweep, sweep_args.protocol);
  add_train_options(sweep, sweep_args.train);
  sweep->add_option("--hidden", sweep_args.h, "latent dimension");
  sweep->add_option("--n-layers", sweep_args.n_layers, "trunk depth");
  sweep->add_option("--n-list", sweep_args.n_list, "lookback list (minutes)");
  sweep->add_option("--m-list", sweep_args.m_list, "horizon list (minutes)");
  sweep->add_flag("--dry-run", sweep_args.dry_run, "emit the planned grid without training");
  sweep->add_option("--out", sweep_args.out, "output directory (default $IPF_OUT_ROOT/sweep)");
  sweep->add_option("--jobs", sweep_args.jobs, "parallel runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*price) return cmd_price(price_args);
    if (*synth) return cmd_synth(synth_args);
    if (*traincmd) return cmd_train(app, train_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*baseline) return cmd_baseline(app, baseline_args);
    if (*ablate) return cmd_ablate(app, ablate_args);
    if (*sweep) return cmd_sweep(app, sweep_args);
  } catch (const train::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

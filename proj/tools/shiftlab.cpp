// shiftlab command-line driver.
//
// Exit codes: 0 success, 1 validation error (bad flags, files or configs),
// 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shiftlab/compositional.hpp"
#include "shiftlab/dataset.hpp"
#include "shiftlab/divergence.hpp"
#include "shiftlab/error.hpp"
#include "shiftlab/harness.hpp"
#include "shiftlab/io.hpp"
#include "shiftlab/mlp.hpp"
#include "shiftlab/parallel.hpp"
#include "shiftlab/plan.hpp"
#include "shiftlab/radiation.hpp"
#include "shiftlab/report.hpp"
#include "shiftlab/stats.hpp"
#include "shiftlab/synthetic.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;
using namespace shiftlab;

namespace {

struct Common {
  std::string data;
  std::string manifest;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out = "shiftlab-out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--data", c.data, "data CSV");
  cmd->add_option("--manifest", c.manifest, "manifest JSON");
  cmd->add_option("--config", c.config, "TOML experiment plan");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

std::optional<ExperimentPlan> plan_if_given(const Common& c, PlanCheck check = PlanCheck::SyntaxOnly) {
  if (c.config.empty()) return std::nullopt;
  ExperimentPlan plan = load_plan(c.config, check);
  if (c.workers) plan.workers = *c.workers;
  return plan;
}

ClimateDataset load_data(const Common& c, const std::optional<ExperimentPlan>& plan) {
  std::string data = c.data, manifest = c.manifest;
  if (plan) {
    if (data.empty()) data = plan->data_path;
    if (manifest.empty()) manifest = plan->manifest_path;
  }
  if (data.empty() || manifest.empty()) {
    throw ValidationError("--data and --manifest are required (directly or through the config's [data] table)");
  }
  return load_dataset(data, manifest);
}

std::set<std::string> log_columns_of(const Common& c, const std::optional<ExperimentPlan>& plan) {
  if (plan) return plan->log_columns;
  if (c.manifest.empty()) return {};
  const Manifest m = load_manifest(c.manifest);
  return {m.log_columns.begin(), m.log_columns.end()};
}

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

void write_json(const Common& c, const std::string& name, const std::string& text) {
  const std::string path = out_path(c, name);
  write_text_file(path, text);
  std::cout << "wrote " << path << "\n";
}

const RegionSpec& pick_region(const ExperimentPlan& plan, const std::string& name) {
  if (name.empty()) return plan.regions.front();
  for (const auto& r : plan.regions) {
    if (r.name == name) return r;
  }
  throw ValidationError("no region named '" + name + "' in the plan");
}

ExperimentPlan require_plan(const std::optional<ExperimentPlan>& plan, const char* cmd) {
  if (!plan) throw ValidationError(std::string(cmd) + " needs --config");
  return *plan;
}

// Feature matrices of two sample sets under the chosen normalisation.
// "train": statistics of the reference set only; "full": statistics of every
// sample in the region.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> normalised_pair(const ClimateDataset& ds, const IndexSet& ref,
                                                            const IndexSet& other, const IndexSet& region_rows,
                                                            const std::string& mode,
                                                            const std::set<std::string>& log_columns) {
  const Normalizer norm = fit_normalizer(ds, mode == "train" ? ref : region_rows, log_columns);
  return {norm.transform_features(take_rows(ds.features(), ref)),
          norm.transform_features(take_rows(ds.features(), other))};
}

IndexSet all_rows(const Partition& p) {
  IndexSet rows;
  for (const auto& g : p.groups) rows.insert(rows.end(), g.samples.begin(), g.samples.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  std::string kind = "covariate";
  double shift = 1.0;
  double trend = 0.0;
  int years = 2;
  int cells = 6;
  int input_dim = 4;
  int days_per_month = 2;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  const std::uint64_t seed = c.seed.value_or(0);
  ClimateDataset ds = [&] {
    if (a.kind == "covariate") {
      CovariateShiftSpec spec;
      spec.shift = a.shift;
      spec.trend = a.trend;
      spec.n_years = a.years;
      spec.n_cells = a.cells;
      spec.input_dim = a.input_dim;
      spec.seed = seed;
      return generate_covariate_shift(spec);
    }
    if (a.kind == "radiation") {
      RadiationSyntheticSpec spec;
      spec.n_years = a.years;
      spec.days_per_month = a.days_per_month;
      spec.seed = seed;
      return generate_radiation(spec);
    }
    throw ValidationError("--kind must be covariate or radiation");
  }();
  const std::string data = out_path(c, "data.csv");
  const std::string manifest = out_path(c, "manifest.json");
  write_dataset(ds, data, manifest);
  std::cout << "wrote " << data << " (" << ds.num_samples() << " samples)\nwrote " << manifest << "\n";
  return 0;
}

// ------------------------------------------------------------------ ingest

int cmd_ingest(const Common& c) {
  const auto plan = plan_if_given(c);
  const ClimateDataset ds = load_data(c, plan);
  Json j = {{"samples", ds.num_samples()},
            {"times", ds.times().size()},
            {"cells", ds.cells().size()},
            {"features", ds.feature_names()},
            {"targets", ds.target_names()},
            {"layout", ds.layout() == Layout::Dense ? "dense" : "sparse"},
            {"content_hash", ds.content_hash()}};
  std::cout << j.dump(2) << "\n";
  write_json(c, "ingest.json", j.dump(2) + "\n");
  return 0;
}

// --------------------------------------------------------------- partition

int cmd_partition(const Common& c, const std::string& region_name) {
  const auto plan = plan_if_given(c);
  const ClimateDataset ds = load_data(c, plan);
  ExperimentPlan p = plan.value_or(ExperimentPlan{});
  Json regions = Json::array();
  for (const auto& r : p.regions) {
    if (!region_name.empty() && r.name != region_name) continue;
    const Partition part = partition(ds, p.partition_for(r));
    Json groups = Json::array();
    for (const auto& g : part.groups) {
      std::set<long> times;
      for (auto s : g.samples) times.insert(ds.time_of(s).index);
      Json entry = {{"key", g.key}, {"samples", g.samples.size()}, {"timesteps", times.size()}};
      if (!g.samples.empty()) {
        const Split sp = split_by_time(ds, g.samples, p.split);
        entry["train"] = sp.train.size();
        entry["val"] = sp.val.size();
        entry["test"] = sp.test.size();
      }
      groups.push_back(entry);
    }
    regions.push_back({{"region", r.name},
                       {"cells", select_cells(ds, p.partition_for(r)).size()},
                       {"groups", groups},
                       {"empty_groups", part.empty_groups()}});
  }
  Json j = {{"regions", regions}};
  std::cout << j.dump(2) << "\n";
  write_json(c, "partition.json", j.dump(2) + "\n");
  return 0;
}

// ------------------------------------------------------------------- shift

struct DivergenceArgs {
  std::string estimator = "ed";
  std::optional<std::int64_t> pair_budget;
  std::string norm_mode;
  std::string region;
  int k = 5;
  int pca = 2;
};

StatisticOptions statistic_options(const DivergenceArgs& a, std::int64_t budget) {
  StatisticOptions o;
  o.pair_budget = budget;
  o.k = a.k;
  o.pca_components = a.pca;
  return o;
}

int cmd_shift(const Common& c, const DivergenceArgs& a) {
  const auto plan = plan_if_given(c);
  const ClimateDataset ds = load_data(c, plan);
  const ExperimentPlan p = plan.value_or(ExperimentPlan{});
  const auto logs = log_columns_of(c, plan);
  const Estimator est = parse_estimator(a.estimator);
  std::int64_t budget = 0;
  if (a.pair_budget) {
    budget = *a.pair_budget;
  } else if (plan && p.divergence.pair_budget > 0) {
    budget = static_cast<std::int64_t>(p.divergence.pair_budget);
  } else if (est != Estimator::KL) {
    throw ValidationError("shift needs an explicit --pair-budget (or divergence.pair_budget in the config)");
  }
  const std::uint64_t seed = c.seed.value_or(p.divergence.seed);
  const Statistic stat = make_statistic(est, statistic_options(a, std::max<std::int64_t>(budget, 1)));

  Json regions = Json::array();
  for (const auto& r : p.regions) {
    if (!a.region.empty() && r.name != a.region) continue;
    const Partition part = partition(ds, p.partition_for(r));
    const IndexSet rows = all_rows(part);
    std::vector<const Group*> gs;
    for (const auto& g : part.groups) {
      if (!g.samples.empty()) gs.push_back(&g);
    }
    const std::size_t k = gs.size();
    std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) pairs.emplace_back(i, j);
    }
    parallel_for(pairs.size(), p.workers, [&](std::size_t q) {
      const auto [i, j] = pairs[q];
      const auto [x, y] = normalised_pair(ds, gs[i]->samples, gs[j]->samples, rows, a.norm_mode, logs);
      m[i][j] = stat(x, y, child_seed(seed, i * k + j));
    });
    std::ostringstream tsv;
    tsv << "reference\tgroup\tvalue\n";
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < k; ++i) {
      keys.push_back(gs[i]->key);
      for (std::size_t j = 0; j < k; ++j) tsv << gs[i]->key << '\t' << gs[j]->key << '\t' << format_double(m[i][j]) << '\n';
    }
    write_text_file(out_path(c, "plotdata/shift_" + r.name + ".tsv"), tsv.str());
    regions.push_back({{"region", r.name}, {"groups", keys}, {"matrix", m}, {"empty_groups", part.empty_groups()}});
  }
  Json j = {{"estimator", std::string(to_string(est))},
            {"pair_budget", budget},
            {"seed", seed},
            {"norm_mode", a.norm_mode},
            {"regions", regions}};
  write_json(c, "shift.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- permtest

struct PermArgs {
  DivergenceArgs div;
  std::string group_a, group_b;
  std::optional<int> B;
};

int cmd_permtest(const Common& c, const PermArgs& a) {
  const auto plan = plan_if_given(c);
  const ClimateDataset ds = load_data(c, plan);
  const ExperimentPlan p = plan.value_or(ExperimentPlan{});
  const auto logs = log_columns_of(c, plan);
  const Estimator est = parse_estimator(a.div.estimator);
  const int B = a.B.value_or(est == Estimator::KL ? 500 : 1000);
  const std::int64_t budget = a.div.pair_budget.value_or(kPermutationPairBudget);
  const RegionSpec& region = pick_region(p, a.div.region);
  const Partition part = partition(ds, p.partition_for(region));
  const IndexSet rows = all_rows(part);
  const Group& ga = part.at(a.group_a);
  const Group& gb = part.at(a.group_b);
  if (ga.samples.empty() || gb.samples.empty()) throw ValidationError("permtest: a group is empty");
  const auto [x, y] = normalised_pair(ds, ga.samples, gb.samples, rows, a.div.norm_mode, logs);
  const std::uint64_t seed = c.seed.value_or(0);
  const auto res = permutation_test(x, y, make_statistic(est, statistic_options(a.div, budget)), B, seed,
                                    std::string(to_string(est)), p.workers);
  std::cout << "observed " << format_double(res.observed) << "  p " << format_double(res.p_value) << "\n";
  Json j = Json::parse(permutation_json(res));
  j["region"] = region.name;
  j["group_a"] = a.group_a;
  j["group_b"] = a.group_b;
  j["norm_mode"] = a.div.norm_mode;
  j["pair_budget"] = budget;
  write_json(c, "permtest.json", j.dump(2) + "\n");
  return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(const Common& c, const std::string& model_id, const std::string& group, const std::string& region_name) {
  const auto plan = require_plan(plan_if_given(c), "train");
  const ClimateDataset ds = load_data(c, plan);
  const ModelSpec* spec = nullptr;
  for (const auto& m : plan.models) {
    if (m.id == model_id || (model_id.empty() && spec == nullptr)) spec = &m;
  }
  if (!spec) throw ValidationError("no model '" + model_id + "' in the plan");
  const RegionSpec& region = pick_region(plan, region_name);
  const Partition part = partition(ds, plan.partition_for(region));
  const Group& g = group.empty() ? part.groups.front() : part.at(group);
  const Split sp = split_by_time(ds, g.samples, plan.split);
  if (sp.train.empty() || sp.val.empty()) throw ValidationError("train: empty train or val split");
  const std::uint64_t seed = c.seed.value_or(plan.seeds.front());

  Json j = {{"model", spec->id}, {"kind", std::string(to_string(spec->kind))}, {"region", region.name},
            {"group", g.key},    {"seed", seed}};
  const FittedModel fm = fit_model(ds, *spec, sp.train, sp.val, plan.log_columns, seed);
  if (!sp.test.empty()) {
    const Eigen::MatrixXd pred = fm.predict(take_rows(ds.features(), sp.test));
    const Eigen::MatrixXd truth = take_rows(ds.targets(), sp.test);
    j["test_rmse"] = rmse(pred, truth);
    j["test_mae"] = mae(pred, truth);
  }
  j["normalizer_hash"] = fm.normalizer.hash();
  if (spec->kind != ModelKind::Physical) j["record"] = Json::parse(train_record_json(fm.record));

  if (fm.params) write_json(c, "params.json", fm.params->to_json());
  if (fm.mlp) {
    const std::string path = out_path(c, "model.mlp");
    save_checkpoint(*fm.mlp, path);
    std::cout << "wrote " << path << "\n";
  }
  if (fm.compositional) {
    const std::string path = out_path(c, "model.comp");
    save_compositional(*fm.compositional, path);
    std::cout << "wrote " << path << "\n";
  }
  write_json(c, "train.json", j.dump(2) + "\n");
  return 0;
}

// ------------------------------------------------------------------- sweep

int cmd_sweep(const Common& c) {
  auto plan = require_plan(plan_if_given(c), "sweep");
  const ClimateDataset ds = load_data(c, plan);
  ProxyStudySpec spec = proxy_spec_from(plan);
  if (c.seed) spec.seed = *c.seed;
  const ProxyStudyResult res = proxy_study(ds, spec);
  std::ostringstream tsv;
  tsv << "ood_rmse_a\tood_rmse_b\tid_rmse_a\tid_rmse_b\tkept\n";
  for (const auto& a : res.architectures) {
    tsv << format_double(a.ood_rmse_a) << '\t' << format_double(a.ood_rmse_b) << '\t' << format_double(a.id_rmse_a)
        << '\t' << format_double(a.id_rmse_b) << '\t' << (a.kept ? 1 : 0) << '\n';
  }
  write_text_file(out_path(c, "plotdata/sweep.tsv"), tsv.str());
  std::cout << "survivors " << res.survivors << "  pearson r " << format_double(res.correlation.pearson_r)
            << "  p " << format_double(res.correlation.pearson_p) << "\n";
  write_json(c, "sweep.json", proxy_study_json(res));
  return 0;
}

// --------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::string params;
  std::string group;
  std::string region;
  std::optional<int> max_iter;
  std::optional<double> tol;
};

int cmd_calibrate(const Common& c, const CalibrateArgs& a) {
  const auto plan = plan_if_given(c);
  const ClimateDataset ds = load_data(c, plan);
  IndexSet rows;
  if (!a.group.empty()) {
    const ExperimentPlan p = plan.value_or(ExperimentPlan{});
    const Partition part = partition(ds, p.partition_for(pick_region(p, a.region)));
    rows = split_by_time(ds, part.at(a.group).samples, p.split).train;
  } else {
    rows.resize(ds.num_samples());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }
  if (rows.empty()) throw ValidationError("calibrate: no training rows");
  const PhysicalParams p0 =
      a.params.empty() ? PhysicalParams::defaults() : PhysicalParams::from_json(read_text_file(a.params));
  CalibrationOptions opt;
  if (a.max_iter) opt.max_iter = *a.max_iter;
  if (a.tol) opt.tol = *a.tol;
  const auto res = calibrate(radiation_inputs(ds, rows), radiation_targets(ds, rows), p0, opt);
  std::cout << "objective " << format_double(res.initial_objective) << " -> " << format_double(res.final_objective)
            << (res.converged ? "  (converged)" : "  (not converged)") << "\n";
  write_json(c, "params.json", res.params.to_json());
  write_json(c, "calibration.json", calibration_json(res));
  return 0;
}

// ------------------------------------------------------------------ matrix

void emit_report(const Common& c, const std::vector<RobustnessRecord>& records, const std::vector<Grouping>& groupings,
                 const ReportCounts* extra, const std::string& loss) {
  ReportBundle b = build_report(records, groupings);
  if (extra) {
    b.counts.trained_cells = extra->trained_cells;
    b.counts.cached_cells = extra->cached_cells;
  }
  b.loss = loss;
  write_json(c, "report.json", report_json(b));
  for (const auto& f : write_plotdata(b.regressions, out_path(c, "plotdata"))) std::cout << "wrote " << f << "\n";
  for (const auto& [g, why] : b.skipped) std::cerr << "note: no " << g << " regression: " << why << "\n";
}

const std::vector<Grouping> kAllGroupings = {Grouping::Model, Grouping::Region, Grouping::TrainGroup,
                                              Grouping::VariableGroup};

int cmd_matrix(const Common& c, const std::string& cache, bool no_cache) {
  auto plan = require_plan(plan_if_given(c, PlanCheck::Full), "matrix");
  if (c.seed) plan.seeds = {*c.seed};
  const ClimateDataset ds = load_data(c, plan);
  MatrixOptions opt;
  if (!no_cache) opt.cache_dir = cache.empty() ? out_path(c, "cache") : cache;
  const MatrixResult res = run_matrix(ds, plan, opt);
  write_records_csv(res.records, out_path(c, "records.csv"));
  std::cout << "wrote " << out_path(c, "records.csv") << " (" << res.records.size() << " records, "
            << res.trained_cells << " trained, " << res.cached_cells << " cached, " << res.failed_cells
            << " failed)\n";
  ReportCounts extra;
  extra.trained_cells = res.trained_cells;
  extra.cached_cells = res.cached_cells;
  std::vector<Grouping> gs = kAllGroupings;
  if (plan.variable_groups.empty()) gs.pop_back();
  emit_report(c, res.records, gs, &extra, std::string(to_string(plan.error_loss)));
  return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const Common& c, std::string records, const std::vector<std::string>& groupings) {
  if (records.empty()) records = (fs::path(c.out) / "records.csv").string();
  const auto recs = read_records_csv(records);
  std::vector<Grouping> gs;
  for (const auto& g : groupings) gs.push_back(parse_grouping(g));
  if (gs.empty()) gs = kAllGroupings;
  emit_report(c, recs, gs, nullptr, "");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shiftlab: distribution-shift quantification and emulator robustness"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthArgs sa;
  add_common(synth, common);
  synth->add_option("--kind", sa.kind, "covariate | radiation")->capture_default_str();
  synth->add_option("--shift", sa.shift, "seasonal mean offset per step (covariate)")->capture_default_str();
  synth->add_option("--trend", sa.trend, "mean offset per year (covariate)")->capture_default_str();
  synth->add_option("--years", sa.years)->capture_default_str();
  synth->add_option("--cells", sa.cells, "grid cells (covariate)")->capture_default_str();
  synth->add_option("--input-dim", sa.input_dim, "features (covariate)")->capture_default_str();
  synth->add_option("--days-per-month", sa.days_per_month, "(radiation)")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "load and validate a dataset");
  add_common(ingest, common);

  auto* part = app.add_subcommand("partition", "list partition groups and splits");
  add_common(part, common);
  std::string part_region;
  part->add_option("--region", part_region);

  auto* shift = app.add_subcommand("shift", "divergence between every pair of groups");
  add_common(shift, common);
  DivergenceArgs da;
  shift->add_option("--estimator", da.estimator, "ed | mmd | kl")->capture_default_str();
  shift->add_option("--pair-budget", da.pair_budget);
  shift->add_option("--norm-mode", da.norm_mode, "train (reference statistics) | full (region statistics)")
      ->required()
      ->check(CLI::IsMember({"train", "full"}));
  shift->add_option("--region", da.region);
  shift->add_option("--k", da.k, "kNN-KL neighbours")->capture_default_str();
  shift->add_option("--pca", da.pca, "kNN-KL principal components, 0 disables")->capture_default_str();

  auto* perm = app.add_subcommand("permtest", "two-sample permutation test between two groups");
  add_common(perm, common);
  PermArgs pa;
  perm->add_option("--group-a", pa.group_a)->required();
  perm->add_option("--group-b", pa.group_b)->required();
  perm->add_option("--B", pa.B, "permutations (default 1000, 500 for kl)");
  perm->add_option("--estimator", pa.div.estimator)->capture_default_str();
  perm->add_option("--pair-budget", pa.div.pair_budget);
  perm->add_option("--norm-mode", pa.div.norm_mode)->required()->check(CLI::IsMember({"train", "full"}));
  perm->add_option("--region", pa.div.region);
  perm->add_option("--k", pa.div.k)->capture_default_str();
  perm->add_option("--pca", pa.div.pca)->capture_default_str();

  auto* trn = app.add_subcommand("train", "train one model of the plan on one group");
  add_common(trn, common);
  std::string model_id, group, region;
  trn->add_option("--model", model_id, "model id (default: first)");
  trn->add_option("--group", group, "group key (default: first)");
  trn->add_option("--region", region);

  auto* sweep = app.add_subcommand("sweep", "proxy study over random architectures");
  add_common(sweep, common);

  auto* cal = app.add_subcommand("calibrate", "fit the physical radiation model");
  add_common(cal, common);
  CalibrateArgs ca;
  cal->add_option("--params", ca.params, "starting parameter JSON (default: built-in initials)");
  cal->add_option("--group", ca.group, "calibrate on this group's training split (needs --config)");
  cal->add_option("--region", ca.region);
  cal->add_option("--max-iter", ca.max_iter);
  cal->add_option("--tol", ca.tol);

  auto* matrix = app.add_subcommand("matrix", "train-on-one, test-on-all robustness matrix");
  add_common(matrix, common);
  std::string cache;
  bool no_cache = false;
  matrix->add_option("--cache", cache, "cell cache directory (default: <out>/cache)");
  matrix->add_flag("--no-cache", no_cache);

  auto* report = app.add_subcommand("report", "regressions and plot data from records.csv");
  add_common(report, common);
  std::string records;
  std::vector<std::string> groupings;
  report->add_option("--records", records, "records CSV (default: <out>/records.csv)");
  report->add_option("--grouping", groupings, "model | region | train_group | variable_group");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(common, sa);
    if (*ingest) return cmd_ingest(common);
    if (*part) return cmd_partition(common, part_region);
    if (*shift) return cmd_shift(common, da);
    if (*perm) return cmd_permtest(common, pa);
    if (*trn) return cmd_train(common, model_id, group, region);
    if (*sweep) return cmd_sweep(common);
    if (*cal) return cmd_calibrate(common, ca);
    if (*matrix) return cmd_matrix(common, cache, no_cache);
    if (*report) return cmd_report(common, records, groupings);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

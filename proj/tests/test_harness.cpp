#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "shiftlab/error.hpp"
#include "shiftlab/harness.hpp"
#include "shiftlab/random.hpp"
#include "shiftlab/report.hpp"
#include "shiftlab/synthetic.hpp"

using namespace shiftlab;

namespace {

ClimateDataset covariate(double shift, std::uint64_t seed = 0) {
  CovariateShiftSpec s;
  s.shift = shift;
  s.seed = seed;
  return generate_covariate_shift(s);
}

ModelSpec small_mlp(const std::string& id = "mlp") {
  ModelSpec m;
  m.id = id;
  m.kind = ModelKind::Mlp;
  m.mlp.hidden_layers = 1;
  m.mlp.width = 16;
  m.mlp.activation = Activation::Tanh;
  m.mlp.learning_rate = 1e-2;
  m.train.max_epochs = 40;
  m.train.batch_size = 64;
  m.train.loss = {LossKind::MSE};
  return m;
}

ExperimentPlan seasonal_plan(std::vector<std::uint64_t> seeds = {0, 1, 2}) {
  ExperimentPlan p;
  p.temporal = PartitionSpec::Temporal::Seasonal;
  p.models = {small_mlp()};
  p.seeds = std::move(seeds);
  p.divergence.pair_budget = 1 << 20;
  return p;
}

std::string temp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("shiftlab_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

RobustnessRecord record(const std::string& train, const std::string& test, std::uint64_t seed, double ed,
                        double e_r) {
  RobustnessRecord r;
  r.region = "global";
  r.model = "m";
  r.train_group = train;
  r.test_group = test;
  r.seed = seed;
  r.energy_distance = ed;
  r.loss_id = 1.0;
  r.loss_ood = e_r;
  r.e_r = e_r;
  return r;
}

}  // namespace

TEST_CASE("relative error") {
  CHECK(relative_error(2.0, 1.0) == 2.0);
  CHECK(relative_error(0.5, 2.0) == 0.25);
  CHECK(relative_error(3.0, 3.0) == 1.0);
  CHECK_THROWS_AS(relative_error(1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(relative_error(std::nan(""), 1.0), ValidationError);

  Eigen::MatrixXd p(2, 1), t(2, 1);
  p << 1, 3;
  t << 0, 0;
  CHECK(error_loss(ErrorLoss::MAE, p, t) == 2.0);
  CHECK(error_loss(ErrorLoss::RMSE, p, t) == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("robustness matrix identity, hygiene and determinism") {
  const auto ds = covariate(1.0);
  ExperimentPlan plan = seasonal_plan();
  const auto res = run_matrix(ds, plan);
  REQUIRE(res.records.size() == 4 * 4 * 3);
  CHECK(res.failed_cells == 0);
  CHECK(res.trained_cells == 12);

  const Partition part = partition(ds, plan.partition_for(plan.regions[0]));
  for (const auto& r : res.records) {
    CHECK_FALSE(r.failed());
    if (!r.ood()) {
      CHECK(r.e_r == 1.0);
      CHECK(r.energy_distance == 0.0);
    } else {
      CHECK(r.energy_distance > 0.0);
    }
    // the model was trained with statistics from its own training split only
    const Split s = split_by_time(ds, part.at(r.train_group).samples, plan.split);
    CHECK(r.normalizer_hash == fit_normalizer(ds, s.train, plan.log_columns).hash());
  }
  std::set<std::string> hashes;
  for (const auto& r : res.records) hashes.insert(r.normalizer_hash);
  CHECK(hashes.size() == 4);

  SUBCASE("worker count does not change the records") {
    plan.workers = 4;
    CHECK(run_matrix(ds, plan).records == res.records);
  }
  SUBCASE("a second run is served from the cache") {
    const std::string dir = temp_dir("cache");
    const auto first = run_matrix(ds, plan, {dir});
    CHECK(first.trained_cells == 12);
    CHECK(first.records == res.records);
    const auto second = run_matrix(ds, plan, {dir});
    CHECK(second.trained_cells == 0);
    CHECK(second.cached_cells == 12);
    CHECK(second.records == first.records);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("variable-group breakdown") {
  const auto ds = covariate(0.5);
  ExperimentPlan plan = seasonal_plan({0});
  plan.variable_groups["all_targets"] = {ds.target_names()[0]};
  const auto res = run_matrix(ds, plan);
  for (const auto& r : res.records) {
    REQUIRE(r.variable_groups.size() == 1);
    // one group holding every target reproduces the total
    CHECK(r.variable_groups[0].e_r == doctest::Approx(r.e_r).epsilon(1e-12));
  }
  plan.variable_groups["bad"] = {"missing"};
  CHECK_THROWS_AS(run_matrix(ds, plan), ValidationError);
}

TEST_CASE("matrix validation") {
  const auto ds = covariate(0.5);
  ExperimentPlan plan = seasonal_plan({0});
  plan.regions = {RegionSpec{"nowhere", LatitudeBand{89.0, 90.0}}};
  CHECK_THROWS_AS(run_matrix(ds, plan), ValidationError);
  plan = seasonal_plan({0, 0});
  CHECK_THROWS_AS(run_matrix(ds, plan), ValidationError);
  plan = seasonal_plan({0});
  plan.divergence.pair_budget = 0;
  CHECK_THROWS_AS(run_matrix(ds, plan), ValidationError);
  plan = seasonal_plan({0});
  plan.models[0].kind = ModelKind::Physical;
  // covariate data has no radiation targets: cells fail, records carry the reason
  const auto res = run_matrix(ds, plan);
  CHECK(res.failed_cells == 4);
  for (const auto& r : res.records) CHECK(r.failed());
}

TEST_CASE("property: synthetic shift is monotone in season distance and magnitude") {
  double prev_shift_ed = 0.0;
  for (double shift : {0.25, 0.5, 1.0, 2.0}) {
    const auto ds = covariate(shift, 3);
    const Partition part = partition(ds, PartitionSpec{PartitionSpec::Temporal::Seasonal, {}, {}});
    const auto norm = fit_normalizer(ds, part.at("DJF").samples, {});
    const Eigen::MatrixXd djf = norm.transform_features(take_rows(ds.features(), part.at("DJF").samples));
    double prev = 0.0;
    for (const char* g : {"MAM", "JJA", "SON"}) {
      const Eigen::MatrixXd other = norm.transform_features(take_rows(ds.features(), part.at(g).samples));
      const double ed = energy_distance(djf, other, 1LL << 40).value;
      CHECK(ed > prev);
      prev = ed;
    }
    CHECK(prev > prev_shift_ed);
    prev_shift_ed = prev;
  }
}

TEST_CASE("planted shift degrades the monolithic model") {
  const auto ds = covariate(1.5);
  ExperimentPlan plan = seasonal_plan();
  plan.workers = 4;
  const auto res = run_matrix(ds, plan);
  const auto regs = aggregate_and_regress(res.records, Grouping::Model);
  REQUIRE(regs.size() == 1);
  CHECK(regs[0].n == 12);
  CHECK(regs[0].slope > 0.0);
  CHECK(regs[0].pearson_r > 0.0);
}

TEST_CASE("shift regression") {
  SUBCASE("constant relative error gives a zero slope") {
    std::vector<RobustnessRecord> rs;
    for (int i = 0; i < 6; ++i) rs.push_back(record("a", "b" + std::to_string(i), 0, 0.1 * (i + 1), 1.0));
    const auto regs = aggregate_and_regress(rs, Grouping::Model);
    CHECK(regs[0].slope == 0.0);
    CHECK(std::isnan(regs[0].pearson_r));
  }
  SUBCASE("planted slope is recovered") {
    Rng rng(42);
    std::vector<RobustnessRecord> rs;
    for (int i = 0; i < 100; ++i) {
      const double ed = rng.uniform(0.0, 2.0);
      for (std::uint64_t s = 0; s < 3; ++s) {
        rs.push_back(record("t" + std::to_string(i), "u", s, ed, std::exp(0.3 * ed + 0.05 * rng.normal())));
      }
    }
    const auto regs = aggregate_and_regress(rs, Grouping::Model);
    REQUIRE(regs.size() == 1);
    CHECK(regs[0].n == 100);
    CHECK(std::abs(regs[0].slope - 0.3) < 0.05);
    CHECK(regs[0].pearson_p < 0.01);
    for (const auto& p : regs[0].points) {
      CHECK(p.n_seeds == 3);
      CHECK(p.min_log_er <= p.mean_log_er);
      CHECK(p.mean_log_er <= p.max_log_er);
    }
    // the diagonal is excluded by default; failed records are skipped
    rs.push_back(record("t0", "t0", 0, 0.0, 1.0));
    auto failed = record("t1", "zzz", 0, 9.0, 50.0);
    failed.failure = "train: boom";
    rs.push_back(failed);
    CHECK(aggregate_and_regress(rs, Grouping::Model)[0].n == 100);
    CHECK(aggregate_and_regress(rs, Grouping::Model, true)[0].n == 101);
  }
  SUBCASE("too few points") {
    std::vector<RobustnessRecord> rs{record("a", "b", 0, 0.1, 1.2), record("a", "c", 0, 0.2, 1.3)};
    CHECK_THROWS_AS(aggregate_and_regress(rs, Grouping::Model), ValidationError);
    CHECK_THROWS_AS(aggregate_and_regress({}, Grouping::Model), ValidationError);
  }
  CHECK(parse_grouping(to_string(Grouping::TrainGroup)) == Grouping::TrainGroup);
  CHECK_THROWS_AS(parse_grouping("weather"), ValidationError);
}

TEST_CASE("proxy study plumbing") {
  const auto ds = covariate(1.0, 5);
  ProxyStudySpec spec;
  ProxySplit s{"a", PartitionSpec{PartitionSpec::Temporal::Seasonal, {}, {}}, "DJF", "JJA"};
  spec.a = s;
  spec.b = s;
  spec.b.name = "b";
  spec.n_architectures = 10;
  spec.space.hidden_layers = {1, 2};
  spec.space.width_min = 8;
  spec.space.width_max = 32;
  spec.train.max_epochs = 8;
  spec.train.batch_size = 64;
  spec.train.loss = {LossKind::MSE};
  spec.workers = 4;
  const auto r = proxy_study(ds, spec);
  CHECK(r.architectures.size() == 10);
  CHECK(r.correlation.pearson_r == 1.0);
  CHECK(r.correlation.spearman_rho == 1.0);

  std::vector<std::pair<double, double>> tr;
  for (const auto& a : r.architectures) {
    tr.emplace_back(a.train_rmse_a, a.train_rmse_b);
    CHECK(a.seed_a == a.seed_b);
    CHECK(a.ood_rmse_a == a.ood_rmse_b);
  }
  const auto keep = quality_filter(tr, 90.0);
  for (std::size_t k = 0; k < r.architectures.size(); ++k) {
    CHECK(r.architectures[k].kept == (std::find(keep.begin(), keep.end(), k) != keep.end()));
  }
  CHECK(r.survivors == keep.size());
  CHECK(r.ratio_a.median == r.ratio_b.median);

  spec.shared_seeds = false;
  const auto u = proxy_study(ds, spec);
  CHECK(u.architectures[0].seed_a != u.architectures[0].seed_b);

  spec.n_architectures = 2;
  CHECK_THROWS_AS(proxy_study(ds, spec), ValidationError);
  spec.n_architectures = 5;
  spec.a.train_group = "nope";
  CHECK_THROWS_AS(proxy_study(ds, spec), ValidationError);
}

TEST_CASE("fitted radiation models respect non-negative shortwave") {
  RadiationSyntheticSpec rs;
  rs.days_per_month = 1;
  rs.hours_per_day = 6;
  const auto ds = generate_radiation(rs);
  IndexSet all(ds.num_samples());
  std::iota(all.begin(), all.end(), 0);
  const Split s = split_by_time(ds, all, {0.2, 0.0});
  ModelSpec m;
  m.id = "phys";
  m.kind = ModelKind::Physical;
  m.calibration.max_iter = 20;
  const auto fm = fit_model(ds, m, s.train, s.val, {}, 0);
  REQUIRE(fm.params.has_value());
  const Eigen::MatrixXd pred = fm.predict(take_rows(ds.features(), all));
  CHECK(pred.col(static_cast<Eigen::Index>(ds.target_index("NETSW"))).minCoeff() >= 0.0);
  CHECK(fm.normalizer.hash() == fit_normalizer(ds, s.train, {}).hash());
}

TEST_CASE("records CSV round trip") {
  std::vector<RobustnessRecord> rs{record("DJF", "JJA", 3, 0.123456789012345678, 1.7),
                                   record("DJF", "DJF", 3, 0.0, 1.0)};
  rs[0].variable_groups = {{"sw", 0.5, 0.25, 2.0}, {"lw", 1.0 / 3.0, 0.1, 10.0 / 3.0}};
  rs[1].variable_groups = {{"sw", 1.0, 1.0, 1.0}, {"lw", 2.0, 2.0, 1.0}};
  rs[0].normalizer_hash = "abc123";
  auto failed = record("MAM", "SON", 4, 0.5, 0.0);
  failed.failure = "train: non-finite, really";
  failed.variable_groups = {};
  std::stringstream ss;
  write_records_csv(rs, ss);
  const auto back = read_records_csv(ss);
  CHECK(back == rs);

  std::stringstream fs;
  write_records_csv({failed}, fs);
  const auto fb = read_records_csv(fs);
  REQUIRE(fb.size() == 1);
  CHECK(fb[0].failure == "train: non-finite; really");

  const auto counts = count_records(rs);
  CHECK(counts.records == 2);
  CHECK(counts.ood == 1);
  CHECK(counts.failed == 0);
}

TEST_CASE("plan parsing") {
  const std::string toml = R"(
workers = 2
seeds = [0, 1]
error_loss = "rmse"

[data]
path = "data.csv"
manifest = "manifest.json"
log_columns = ["precip"]

[partition]
temporal = "years"
intervals = [{name = "early", first = 2000, last = 2004}, {name = "late", first = 2005, last = 2009}]

[[regions]]
name = "tropics"
lat_min = -20.0
lat_max = 20.0

[split]
val_fraction = 0.1
test_fraction = 0.2

[divergence]
estimator = "ed"
pair_budget = 100000

[[models]]
id = "net"
kind = "mlp"
hidden_layers = 3
width = 32
activation = "gelu"
loss = "huber"
huber_delta = 0.5
schedule = "step"

[variable_groups]
fluxes = ["a", "b"]
)";
  const auto p = parse_plan(toml, "/base");
  CHECK(p.workers == 2);
  CHECK(p.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(p.error_loss == ErrorLoss::RMSE);
  CHECK(p.data_path == "/base/data.csv");
  CHECK(p.log_columns.count("precip") == 1);
  CHECK(p.temporal == PartitionSpec::Temporal::YearIntervals);
  REQUIRE(p.intervals.size() == 2);
  CHECK(p.intervals[1].first == 2005);
  REQUIRE(p.regions.size() == 1);
  CHECK(std::get<LatitudeBand>(p.regions[0].spatial).lat_max == 20.0);
  CHECK(p.divergence.pair_budget == 100000);
  REQUIRE(p.models.size() == 1);
  CHECK(p.models[0].mlp.activation == Activation::GELU);
  CHECK(p.models[0].train.loss.kind == LossKind::Huber);
  CHECK(p.models[0].train.schedule.kind == LrSchedule::Kind::Step);
  CHECK(p.variable_groups.at("fluxes").size() == 2);

  auto err = [](const std::string& text) {
    try {
      parse_plan(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err("seeds = [").find("TOML") != std::string::npos);
  CHECK(err("bogus = 1").find("bogus") != std::string::npos);
  CHECK(err("[[models]]\nid = \"x\"\nkind = \"mlp\"\n[divergence]\npair_budget = 10\n").find("loss") !=
        std::string::npos);
  CHECK(err("[[models]]\nid = \"x\"\nkind = \"mlp\"\nloss = \"mse\"\n").find("pair_budget") != std::string::npos);
  CHECK_FALSE(err("[[models]]\nid = \"x\"\nkind = \"mlp\"\nloss = \"mse\"\n[divergence]\npair_budget = 10\n")
                  .size() > 0);
  // lenient mode skips completeness checks
  CHECK_NOTHROW(parse_plan("seeds = [1]", "", PlanCheck::SyntaxOnly));
  CHECK_THROWS_AS(parse_plan("seeds = [1]"), ValidationError);
}

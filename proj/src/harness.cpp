#include "shiftlab/harness.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "shiftlab/compositional.hpp"
#include "shiftlab/divergence.hpp"
#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"
#include "shiftlab/parallel.hpp"
#include "shiftlab/random.hpp"
#include "shiftlab/synthetic.hpp"

namespace shiftlab {

using Json = nlohmann::json;

double relative_error(double loss_ood, double loss_id) {
  if (!(loss_id > 0.0)) throw ValidationError("relative error needs a positive in-distribution loss");
  if (!std::isfinite(loss_ood) || loss_ood < 0.0) throw ValidationError("relative error needs a finite OOD loss");
  return loss_ood / loss_id;
}

double error_loss(ErrorLoss kind, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0) {
    throw ValidationError("error loss: prediction and target shapes differ");
  }
  return kind == ErrorLoss::MAE ? mae(pred, target) : rmse(pred, target);
}

// -------------------------------------------------------------- fitted model

namespace {

struct RadiationColumns {
  std::array<Eigen::Index, kRadiationFeatureCount> feature{};
  Eigen::Index netsw = 0, flwds = 0;
};

RadiationColumns radiation_columns(const ClimateDataset& ds, const std::set<std::string>& log_columns,
                                   std::string_view model) {
  if (ds.output_dim() != 2) {
    throw ValidationError(std::string(model) + " model needs exactly the targets NETSW and FLWDS");
  }
  RadiationColumns rc;
  for (int f = 0; f < kRadiationFeatureCount; ++f) {
    rc.feature[static_cast<std::size_t>(f)] = static_cast<Eigen::Index>(ds.feature_index(kRadiationFeatureNames[f]));
  }
  rc.netsw = static_cast<Eigen::Index>(ds.target_index("NETSW"));
  rc.flwds = static_cast<Eigen::Index>(ds.target_index("FLWDS"));
  if (log_columns.count("NETSW") || log_columns.count("FLWDS")) {
    throw ValidationError(std::string(model) + " model needs untransformed NETSW and FLWDS");
  }
  return rc;
}

Eigen::MatrixXd to_radiation_order(const Eigen::MatrixXd& m, const RadiationColumns& rc) {
  Eigen::MatrixXd out(m.rows(), kRadiationFeatureCount);
  for (int f = 0; f < kRadiationFeatureCount; ++f) out.col(f) = m.col(rc.feature[static_cast<std::size_t>(f)]);
  return out;
}

PhysicalParams starting_params(const ModelSpec& spec) {
  if (spec.params_path) return PhysicalParams::from_json(read_text_file(*spec.params_path));
  return PhysicalParams::defaults();
}

}  // namespace

CalibrationResult calibrate_on(const ClimateDataset& ds, const ModelSpec& spec,
                               std::span<const std::size_t> train_rows) {
  const auto rc = radiation_columns(ds, {}, to_string(spec.kind));
  const Eigen::MatrixXd y = take_rows(ds.targets(), train_rows);
  Eigen::MatrixXd targets(y.rows(), 2);
  targets << y.col(rc.netsw), y.col(rc.flwds);
  return calibrate(to_radiation_order(take_rows(ds.features(), train_rows), rc), targets, starting_params(spec),
                   spec.calibration);
}

FittedModel fit_model(const ClimateDataset& ds, const ModelSpec& spec, std::span<const std::size_t> train_rows,
                      std::span<const std::size_t> val_rows, const std::set<std::string>& log_columns,
                      std::uint64_t seed, const PhysicalParams* calibrated) {
  if (train_rows.empty()) throw ValidationError("model '" + spec.id + "': empty training split");
  FittedModel out;
  out.normalizer = fit_normalizer(ds, train_rows, log_columns);
  const Normalizer norm = out.normalizer;
  const Eigen::MatrixXd x_train = take_rows(ds.features(), train_rows);
  const Eigen::MatrixXd y_train = take_rows(ds.targets(), train_rows);
  const Eigen::MatrixXd x_val = take_rows(ds.features(), val_rows);
  const Eigen::MatrixXd y_val = take_rows(ds.targets(), val_rows);
  TrainConfig tcfg = spec.train;
  tcfg.seed = seed;

  switch (spec.kind) {
    case ModelKind::Mlp: {
      MlpConfig cfg = spec.mlp;
      cfg.input_dim = static_cast<int>(ds.input_dim());
      cfg.output_dim = static_cast<int>(ds.output_dim());
      auto res = train(norm.transform_features(x_train), norm.transform_targets(y_train),
                       norm.transform_features(x_val), norm.transform_targets(y_val), cfg, tcfg);
      out.record = res.record;
      out.mlp = std::make_shared<const MlpModel>(std::move(res.model));
      out.predict = [model = out.mlp, norm](const Eigen::MatrixXd& x) {
        return norm.inverse_targets(forward(*model, norm.transform_features(x)));
      };
      return out;
    }
    case ModelKind::Physical: {
      const auto rc = radiation_columns(ds, log_columns, "physical");
      const PhysicalParams params = calibrated ? *calibrated : calibrate_on(ds, spec, train_rows).params;
      out.record.seed = seed;
      out.params = params;
      out.predict = [coef = params.core(), rc](const Eigen::MatrixXd& x) {
        const Eigen::MatrixXd y = forward(to_radiation_order(x, rc), coef);
        Eigen::MatrixXd res(x.rows(), 2);
        res.col(rc.netsw) = y.col(0);
        res.col(rc.flwds) = y.col(1);
        return res;
      };
      return out;
    }
    case ModelKind::Compositional: {
      const auto rc = radiation_columns(ds, log_columns, "compositional");
      const PhysicalParams params = calibrated ? *calibrated : calibrate_on(ds, spec, train_rows).params;
      const auto& sw = norm.target_stats()[static_cast<std::size_t>(rc.netsw)];
      const auto& lw = norm.target_stats()[static_cast<std::size_t>(rc.flwds)];
      const FrozenGate g = FrozenGate::from_params(params, sw.mean, sw.std);

      auto batch = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
        const Eigen::MatrixXd ty = norm.transform_targets(y);
        Eigen::MatrixXd t(y.rows(), 2);
        t << ty.col(rc.netsw), ty.col(rc.flwds);
        return make_batch(to_radiation_order(x, rc), to_radiation_order(norm.transform_features(x), rc), t, g);
      };
      auto res = train_compositional(batch(x_train, y_train), batch(x_val, y_val), g, spec.mlp, tcfg);
      out.record = res.record;
      out.params = params;
      out.compositional = std::make_shared<const CompositionalModel>(std::move(res.model));
      out.predict = [model = out.compositional, norm, rc, sw, lw](const Eigen::MatrixXd& x) {
        const auto b = make_batch(to_radiation_order(x, rc), to_radiation_order(norm.transform_features(x), rc),
                                  Eigen::MatrixXd(), model->frozen_gate());
        const Eigen::MatrixXd y = model->predict(b);
        Eigen::MatrixXd res(x.rows(), 2);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          res(i, rc.netsw) = netsw_from_standardised(y(i, 0), model->frozen_gate().c_night, sw.std);
          res(i, rc.flwds) = y(i, 1) * lw.std + lw.mean;
        }
        return res;
      };
      return out;
    }
  }
  throw ValidationError("unknown model kind");
}

// ------------------------------------------------------------------- matrix

namespace {

struct RegionGroups {
  const RegionSpec* region = nullptr;
  std::vector<std::string> keys;
  std::vector<Split> splits;
};

struct CellResult {
  std::vector<double> loss;                  // per test group
  std::vector<std::vector<double>> vg_loss;  // per test group, per variable group
  std::string normalizer_hash;
  std::string failure;
};

std::string partition_canonical(const ExperimentPlan& plan, const RegionSpec& r) {
  std::ostringstream os;
  os << "temporal=" << static_cast<int>(plan.temporal) << ";intervals=";
  for (const auto& iv : plan.intervals) os << iv.name << ':' << iv.first << '-' << iv.last << ',';
  os << ";region=" << r.name << ';';
  if (const auto* b = std::get_if<LatitudeBand>(&r.spatial)) {
    os << "band=" << format_double(b->lat_min) << ':' << format_double(b->lat_max);
  } else if (const auto* c = std::get_if<CellSet>(&r.spatial)) {
    os << "cells=";
    for (int id : c->ids) os << id << ',';
  }
  os << ";val=" << format_double(plan.split.val_fraction) << ";test=" << format_double(plan.split.test_fraction)
     << ";log=";
  for (const auto& l : plan.log_columns) os << l << ',';
  return os.str();
}

std::vector<std::vector<Eigen::Index>> variable_group_columns(const ClimateDataset& ds, const ExperimentPlan& plan) {
  std::vector<std::vector<Eigen::Index>> cols;
  for (const auto& [name, targets] : plan.variable_groups) {
    std::vector<Eigen::Index> c;
    for (const auto& t : targets) c.push_back(static_cast<Eigen::Index>(ds.target_index(t)));
    if (c.empty()) throw ValidationError("variable group '" + name + "' is empty");
    cols.push_back(std::move(c));
  }
  return cols;
}

Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

Json cell_to_json(const CellResult& c) {
  return {{"loss", c.loss}, {"vg_loss", c.vg_loss}, {"normalizer_hash", c.normalizer_hash}, {"failure", c.failure}};
}

std::optional<CellResult> cell_from_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const Json j = Json::parse(in);
    CellResult c;
    c.loss = j.at("loss").get<std::vector<double>>();
    c.vg_loss = j.at("vg_loss").get<std::vector<std::vector<double>>>();
    c.normalizer_hash = j.at("normalizer_hash").get<std::string>();
    c.failure = j.at("failure").get<std::string>();
    return c;
  } catch (const Json::exception&) {
    return std::nullopt;  // unreadable entry: recompute
  }
}

}  // namespace

MatrixResult run_matrix(const ClimateDataset& ds, const ExperimentPlan& plan, const MatrixOptions& options) {
  plan.validate();
  const std::string data_hash = ds.content_hash();
  const auto vg_cols = variable_group_columns(ds, plan);
  std::vector<std::string> vg_names;
  for (const auto& [name, _] : plan.variable_groups) vg_names.push_back(name);

  std::vector<RegionGroups> regions;
  for (const auto& r : plan.regions) {
    const Partition part = partition(ds, plan.partition_for(r));
    const auto empty = part.empty_groups();
    if (!empty.empty()) {
      throw ValidationError("region '" + r.name + "': empty groups: " + join(empty, ", "));
    }
    RegionGroups rg;
    rg.region = &r;
    for (const auto& g : part.groups) {
      Split s = split_by_time(ds, g.samples, plan.split);
      if (s.train.empty() || s.val.empty() || s.test.empty()) {
        throw ValidationError("region '" + r.name + "', group '" + g.key + "': a split is empty");
      }
      rg.keys.push_back(g.key);
      rg.splits.push_back(std::move(s));
    }
    regions.push_back(std::move(rg));
  }

  struct CellId {
    std::size_t region, model, seed, group;
  };
  std::vector<CellId> cells;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    for (std::size_t m = 0; m < plan.models.size(); ++m) {
      for (std::size_t s = 0; s < plan.seeds.size(); ++s) {
        for (std::size_t g = 0; g < regions[r].keys.size(); ++g) cells.push_back({r, m, s, g});
      }
    }
  }
  if (options.cache_dir) std::filesystem::create_directories(*options.cache_dir);

  // Calibration does not depend on the seed: once per (region, model, group).
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> cal_index;
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> cal_jobs;
  for (const auto& c : cells) {
    if (plan.models[c.model].kind == ModelKind::Mlp) continue;
    const auto key = std::make_tuple(c.region, c.model, c.group);
    if (cal_index.emplace(key, cal_jobs.size()).second) cal_jobs.push_back(key);
  }
  std::vector<std::optional<PhysicalParams>> calibrations(cal_jobs.size());
  std::vector<std::string> cal_failures(cal_jobs.size());

  std::vector<CellResult> results(cells.size());
  std::vector<std::mutex> cal_mutex(std::max<std::size_t>(1, cal_jobs.size()));
  std::atomic<std::size_t> trained{0}, cached{0};
  parallel_for(cells.size(), plan.workers, [&](std::size_t c) {
    const CellId id = cells[c];
    const RegionGroups& rg = regions[id.region];
    const ModelSpec& spec = plan.models[id.model];
    const std::uint64_t seed = plan.seeds[id.seed];
    std::string cache_path;
    if (options.cache_dir) {
      std::ostringstream key;
      key << "cell|" << data_hash << '|' << partition_canonical(plan, *rg.region) << '|' << rg.keys[id.group] << '|'
          << spec.canonical() << '|' << seed << '|' << to_string(plan.error_loss) << '|';
      for (const auto& [name, t] : plan.variable_groups) key << name << '=' << join(t, ",") << ';';
      cache_path = (std::filesystem::path(*options.cache_dir) / (sha256_hex(key.str()) + ".json")).string();
      if (auto hit = cell_from_cache(cache_path)) {
        results[c] = std::move(*hit);
        ++cached;
        return;
      }
    }
    CellResult res;
    const Split& sp = rg.splits[id.group];
    try {
      const PhysicalParams* cal = nullptr;
      if (spec.kind != ModelKind::Mlp) {
        const std::size_t job = cal_index.at({id.region, id.model, id.group});
        {
          std::lock_guard<std::mutex> lock(cal_mutex[job % cal_mutex.size()]);
          if (!calibrations[job] && cal_failures[job].empty()) {
            try {
              calibrations[job] = calibrate_on(ds, spec, sp.train).params;
            } catch (const std::exception& e) {
              cal_failures[job] = std::string("calibration: ") + e.what();
            }
          }
        }
        if (!cal_failures[job].empty()) throw RuntimeFailure(cal_failures[job]);
        cal = &*calibrations[job];
      }
      const FittedModel fm = fit_model(ds, spec, sp.train, sp.val, plan.log_columns, seed, cal);
      res.normalizer_hash = fm.normalizer.hash();
      for (std::size_t j = 0; j < rg.keys.size(); ++j) {
        const auto& test = rg.splits[j].test;
        const Eigen::MatrixXd pred = fm.predict(take_rows(ds.features(), test));
        const Eigen::MatrixXd truth = take_rows(ds.targets(), test);
        res.loss.push_back(error_loss(plan.error_loss, pred, truth));
        std::vector<double> vl;
        for (const auto& cols : vg_cols) {
          vl.push_back(error_loss(plan.error_loss, pick_columns(pred, cols), pick_columns(truth, cols)));
        }
        res.vg_loss.push_back(std::move(vl));
      }
    } catch (const std::exception& e) {
      res = CellResult{};
      res.failure = e.what();
    }
    ++trained;
    if (options.cache_dir) write_text_file(cache_path, cell_to_json(res).dump() + "\n");
    results[c] = std::move(res);
  });

  // Test-split ED between groups, normalised by the training group.
  std::vector<std::vector<std::vector<double>>> ed(regions.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& rg = regions[r];
    const std::size_t k = rg.keys.size();
    ed[r].assign(k, std::vector<double>(k, 0.0));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (i != j) pairs.emplace_back(i, j);
      }
    }
    std::vector<Normalizer> norms(k);
    parallel_for(k, plan.workers,
                 [&](std::size_t i) { norms[i] = fit_normalizer(ds, rg.splits[i].train, plan.log_columns); });
    parallel_for(pairs.size(), plan.workers, [&](std::size_t p) {
      const auto [i, j] = pairs[p];
      const Eigen::MatrixXd a = norms[i].transform_features(take_rows(ds.features(), rg.splits[i].test));
      const Eigen::MatrixXd b = norms[i].transform_features(take_rows(ds.features(), rg.splits[j].test));
      const std::uint64_t s = child_seed(child_seed(plan.divergence.seed, r), i * k + j);
      ed[r][i][j] = energy_distance(a, b, static_cast<std::int64_t>(plan.divergence.pair_budget), s).value;
    });
  }

  MatrixResult out;
  out.trained_cells = trained;
  out.cached_cells = cached;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, std::size_t> index;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    index[{cells[c].region, cells[c].model, cells[c].seed, cells[c].group}] = c;
    if (!results[c].failure.empty()) ++out.failed_cells;
  }
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& rg = regions[r];
    for (std::size_t m = 0; m < plan.models.size(); ++m) {
      for (std::size_t s = 0; s < plan.seeds.size(); ++s) {
        for (std::size_t i = 0; i < rg.keys.size(); ++i) {
          const CellResult& tr = results[index.at({r, m, s, i})];
          for (std::size_t j = 0; j < rg.keys.size(); ++j) {
            const CellResult& ref = results[index.at({r, m, s, j})];
            RobustnessRecord rec;
            rec.region = rg.region->name;
            rec.train_group = rg.keys[i];
            rec.test_group = rg.keys[j];
            rec.model = plan.models[m].id;
            rec.seed = plan.seeds[s];
            rec.energy_distance = ed[r][i][j];
            rec.normalizer_hash = tr.normalizer_hash;
            if (!tr.failure.empty()) {
              rec.failure = "train: " + tr.failure;
            } else if (!ref.failure.empty()) {
              rec.failure = "reference: " + ref.failure;
            } else {
              rec.loss_ood = tr.loss[j];
              rec.loss_id = ref.loss[j];
              try {
                rec.e_r = relative_error(rec.loss_ood, rec.loss_id);
                for (std::size_t v = 0; v < vg_names.size(); ++v) {
                  const double lo = tr.vg_loss[j][v], li = ref.vg_loss[j][v];
                  rec.variable_groups.push_back({vg_names[v], lo, li, relative_error(lo, li)});
                }
              } catch (const std::exception& e) {
                rec.failure = std::string("relative error: ") + e.what();
                rec.variable_groups.clear();
              }
            }
            out.records.push_back(std::move(rec));
          }
        }
      }
    }
  }
  return out;
}

// --------------------------------------------------------------- regression

std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::Region: return "region";
    case Grouping::VariableGroup: return "variable_group";
    case Grouping::TrainGroup: return "train_group";
    case Grouping::Model: return "model";
  }
  return "?";
}

Grouping parse_grouping(std::string_view name) {
  if (name == "region") return Grouping::Region;
  if (name == "variable_group") return Grouping::VariableGroup;
  if (name == "train_group") return Grouping::TrainGroup;
  if (name == "model") return Grouping::Model;
  throw ValidationError("unknown grouping '" + std::string(name) + "'");
}

std::vector<ShiftRegression> aggregate_and_regress(const std::vector<RobustnessRecord>& records, Grouping grouping,
                                                   bool include_diagonal) {
  using PointKey = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  struct Acc {
    double ed = 0.0, sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
  };
  std::map<PointKey, Acc> acc;
  auto add = [&](const RobustnessRecord& r, const std::string& vg, double e_r) {
    const double l = std::log(e_r);
    if (!std::isfinite(l)) return;
    Acc& a = acc[{r.region, r.model, r.train_group, r.test_group, vg}];
    a.ed = r.energy_distance;
    a.sum += l;
    a.lo = std::min(a.lo, l);
    a.hi = std::max(a.hi, l);
    ++a.n;
  };
  for (const auto& r : records) {
    if (r.failed() || (!include_diagonal && !r.ood())) continue;
    if (grouping == Grouping::VariableGroup) {
      for (const auto& v : r.variable_groups) add(r, v.group, v.e_r);
    } else {
      add(r, "", r.e_r);
    }
  }

  std::map<std::string, std::vector<ShiftPoint>> by_key;
  for (const auto& [k, a] : acc) {
    ShiftPoint p;
    std::tie(p.region, p.model, p.train_group, p.test_group, p.variable_group) = k;
    p.energy_distance = a.ed;
    p.mean_log_er = a.sum / static_cast<double>(a.n);
    p.min_log_er = a.lo;
    p.max_log_er = a.hi;
    p.n_seeds = a.n;
    std::string key;
    switch (grouping) {
      case Grouping::Region: key = p.region; break;
      case Grouping::VariableGroup: key = p.variable_group; break;
      case Grouping::TrainGroup: key = p.region + "/" + p.train_group; break;
      case Grouping::Model: key = p.model; break;
    }
    by_key[key].push_back(std::move(p));
  }
  if (by_key.empty()) throw ValidationError("no usable records to regress");

  std::vector<ShiftRegression> out;
  for (auto& [key, pts] : by_key) {
    if (pts.size() < 3) {
      throw ValidationError("insufficient records for " + std::string(to_string(grouping)) + " '" + key +
                            "': need at least 3 (train, test) pairs, have " + std::to_string(pts.size()));
    }
    std::vector<double> x, y;
    for (const auto& p : pts) {
      x.push_back(p.energy_distance);
      y.push_back(p.mean_log_er);
    }
    ShiftRegression reg;
    reg.grouping = grouping;
    reg.key = key;
    reg.n = pts.size();
    const bool constant_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
    if (constant_y) {
      if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
        throw ValidationError("regression undefined for constant ED in '" + key + "'");
      }
      reg.slope = 0.0;
      reg.intercept = y.front();
      reg.pearson_r = reg.pearson_p = reg.spearman_rho = reg.spearman_p = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto c = correlate(x, y);
      reg.slope = c.ols_slope;
      reg.intercept = c.ols_intercept;
      reg.pearson_r = c.pearson_r;
      reg.pearson_p = c.pearson_p;
      reg.spearman_rho = c.spearman_rho;
      reg.spearman_p = c.spearman_p;
    }
    reg.points = std::move(pts);
    out.push_back(std::move(reg));
  }
  return out;
}

// -------------------------------------------------------------- proxy study

namespace {

struct ProxyRows {
  Split id;
  IndexSet ood;
};

ProxyRows proxy_rows(const ClimateDataset& ds, const ProxySplit& s, const SplitSpec& id_split) {
  const Partition part = partition(ds, s.partition);
  const Group& tr = part.at(s.train_group);
  const Group& te = part.at(s.test_group);
  if (tr.samples.empty() || te.samples.empty()) {
    throw ValidationError("proxy split '" + s.name + "': empty train or test group");
  }
  ProxyRows rows{split_by_time(ds, tr.samples, id_split), te.samples};
  if (rows.id.train.empty() || rows.id.val.empty() || rows.id.test.empty()) {
    throw ValidationError("proxy split '" + s.name + "': a split of the training group is empty");
  }
  return rows;
}

RatioSummary summarise(const std::vector<double>& v) {
  RatioSummary s;
  s.q1 = percentile(v, 25.0);
  s.median = percentile(v, 50.0);
  s.q3 = percentile(v, 75.0);
  s.iqr = s.q3 - s.q1;
  return s;
}

}  // namespace

ProxyStudyResult proxy_study(const ClimateDataset& ds, const ProxyStudySpec& spec) {
  if (spec.n_architectures < 3) throw ValidationError("proxy study needs at least 3 architectures");
  spec.space.validate();
  spec.train.validate();
  const ProxyRows ra = proxy_rows(ds, spec.a, spec.id_split);
  const ProxyRows rb = proxy_rows(ds, spec.b, spec.id_split);

  ProxyStudyResult out;
  out.architectures.resize(static_cast<std::size_t>(spec.n_architectures));
  const Eigen::MatrixXd& X = ds.features();
  const Eigen::MatrixXd& Y = ds.targets();
  parallel_for(out.architectures.size(), spec.workers, [&](std::size_t k) {
    ArchitectureResult& ar = out.architectures[k];
    ar.config = sample_hyperparams(spec.space, child_seed(spec.seed, 3 * k), static_cast<int>(ds.input_dim()),
                                   static_cast<int>(ds.output_dim()));
    ar.seed_a = child_seed(spec.seed, 3 * k + 1);
    ar.seed_b = spec.shared_seeds ? ar.seed_a : child_seed(spec.seed, 3 * k + 2);
    ModelSpec ms;
    ms.id = "arch" + std::to_string(k);
    ms.kind = ModelKind::Mlp;
    ms.mlp = ar.config;
    ms.train = spec.train;
    auto run = [&](const ProxyRows& rows, std::uint64_t seed, double& train_rmse, double& ood, double& id) {
      const FittedModel fm = fit_model(ds, ms, rows.id.train, rows.id.val, spec.log_columns, seed);
      train_rmse = fm.record.final_train_rmse;
      ood = rmse(fm.predict(take_rows(X, rows.ood)), take_rows(Y, rows.ood));
      id = rmse(fm.predict(take_rows(X, rows.id.test)), take_rows(Y, rows.id.test));
    };
    run(ra, ar.seed_a, ar.train_rmse_a, ar.ood_rmse_a, ar.id_rmse_a);
    run(rb, ar.seed_b, ar.train_rmse_b, ar.ood_rmse_b, ar.id_rmse_b);
  });

  std::vector<std::pair<double, double>> train_rmse;
  for (const auto& a : out.architectures) train_rmse.emplace_back(a.train_rmse_a, a.train_rmse_b);
  for (std::size_t k : quality_filter(train_rmse, spec.filter_percentile)) out.architectures[k].kept = true;

  std::vector<double> ood_a, ood_b, ratio_a, ratio_b;
  for (const auto& a : out.architectures) {
    if (!a.kept) continue;
    ood_a.push_back(a.ood_rmse_a);
    ood_b.push_back(a.ood_rmse_b);
    ratio_a.push_back(a.ood_rmse_a / a.id_rmse_a);
    ratio_b.push_back(a.ood_rmse_b / a.id_rmse_b);
  }
  out.survivors = ood_a.size();
  if (out.survivors < 3) {
    throw ValidationError("proxy study: fewer than 3 architectures survived the quality filter");
  }
  out.correlation = correlate(ood_a, ood_b);
  out.ratio_a = summarise(ratio_a);
  out.ratio_b = summarise(ratio_b);
  return out;
}

ProxyStudySpec proxy_spec_from(const ExperimentPlan& plan) {
  if (!plan.sweep) throw ValidationError("plan has no [sweep] section");
  const SweepSettings& sw = *plan.sweep;
  ProxyStudySpec spec;
  spec.a = sw.a;
  spec.b = sw.b;
  spec.n_architectures = sw.n_architectures;
  spec.train = sw.train;
  spec.seed = sw.seed;
  spec.shared_seeds = sw.shared_seeds;
  spec.filter_percentile = sw.filter_percentile;
  spec.log_columns = plan.log_columns;
  spec.id_split = sw.id_split;
  spec.workers = plan.workers;
  return spec;
}

}  // namespace shiftlab

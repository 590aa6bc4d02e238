#include "shiftlab/plan.hpp"

#include <filesystem>
#include <sstream>

#include <toml.hpp>

#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"

namespace shiftlab {

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Physical: return "physical";
    case ModelKind::Compositional: return "compositional";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "physical") return ModelKind::Physical;
  if (name == "compositional") return ModelKind::Compositional;
  throw ValidationError("unknown model kind '" + std::string(name) + "'");
}

std::string_view to_string(ErrorLoss l) { return l == ErrorLoss::MAE ? "mae" : "rmse"; }

ErrorLoss parse_error_loss(std::string_view name) {
  if (name == "mae") return ErrorLoss::MAE;
  if (name == "rmse") return ErrorLoss::RMSE;
  throw ValidationError("unknown error loss '" + std::string(name) + "' (expected mae or rmse)");
}

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  const auto& m = mlp;
  const auto& t = train;
  os << "kind=" << to_string(kind) << ";layers=" << m.hidden_layers << ";width=" << m.width
     << ";act=" << to_string(m.activation) << ";dropout=" << format_double(m.dropout)
     << ";wd=" << format_double(m.weight_decay) << ";lr=" << format_double(m.learning_rate)
     << ";loss=" << to_string(t.loss.kind) << ";delta=" << format_double(t.loss.huber_delta)
     << ";opt=" << to_string(t.optimizer) << ";batch=" << (t.batch_size ? std::to_string(*t.batch_size) : "full")
     << ";epochs=" << t.max_epochs << ";patience=" << t.early_stop.patience
     << ";min_delta=" << format_double(t.early_stop.min_delta)
     << ";schedule=" << (t.schedule.kind == LrSchedule::Kind::Step ? "step" : "none")
     << ";step=" << t.schedule.step_size << ";gamma=" << format_double(t.schedule.gamma)
     << ";cal_tol=" << format_double(calibration.tol) << ";cal_iter=" << calibration.max_iter << ";stages=";
  for (Stage s : calibration.stages) os << to_string(s) << ',';
  if (params_path) os << ";params=" << sha256_hex(read_text_file(*params_path));
  return os.str();
}

PartitionSpec ExperimentPlan::partition_for(const RegionSpec& region) const {
  PartitionSpec p;
  p.temporal = temporal;
  p.intervals = intervals;
  p.spatial = region.spatial;
  return p;
}

void ExperimentPlan::validate() const {
  if (models.empty()) throw ValidationError("plan: no models");
  if (seeds.empty()) throw ValidationError("plan: no seeds");
  std::set<std::uint64_t> s(seeds.begin(), seeds.end());
  if (s.size() != seeds.size()) throw ValidationError("plan: seeds must be distinct");
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (m.id.empty()) throw ValidationError("plan: model without id");
    if (!ids.insert(m.id).second) throw ValidationError("plan: duplicate model id '" + m.id + "'");
    m.train.validate();
    m.mlp.validate();
  }
  std::set<std::string> rnames;
  for (const auto& r : regions) {
    if (!rnames.insert(r.name).second) throw ValidationError("plan: duplicate region '" + r.name + "'");
  }
  if (regions.empty()) throw ValidationError("plan: no regions");
  if (divergence.pair_budget == 0) throw ValidationError("plan: divergence.pair_budget must be set");
  if (temporal == PartitionSpec::Temporal::YearIntervals && intervals.empty()) {
    throw ValidationError("plan: year-interval partition without intervals");
  }
  if (!(split.test_fraction > 0.0)) throw ValidationError("plan: split.test_fraction must be positive");
  if (workers < 1) throw ValidationError("plan: workers must be >= 1");
}

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ValidationError("plan: " + where + ": " + what);
}

template <typename T>
std::optional<T> opt(const toml::table& t, std::string_view key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = n->value<double>()) return *v;  // integers convert too
  } else if constexpr (std::is_same_v<T, bool>) {
    if (n->is_boolean()) return n->value<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (n->is_integer()) return static_cast<T>(*n->value<std::int64_t>());
  } else {
    if (auto v = n->value<T>()) return *v;
  }
  bad(where, "field '" + std::string(key) + "' has the wrong type");
}

template <typename T>
T req(const toml::table& t, std::string_view key, const std::string& where) {
  auto v = opt<T>(t, key, where);
  if (!v) bad(where, "missing required field '" + std::string(key) + "'");
  return *v;
}

const toml::table* subtable(const toml::table& t, std::string_view key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) bad(where, "'" + std::string(key) + "' must be a table");
  return n->as_table();
}

const toml::array* subarray(const toml::table& t, std::string_view key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_array()) bad(where, "'" + std::string(key) + "' must be an array");
  return n->as_array();
}

void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (const auto& [k, v] : t) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k.str() == a;
    if (!ok) bad(where, "unknown field '" + std::string(k.str()) + "'");
  }
}

std::vector<std::string> string_list(const toml::array& a, const std::string& where) {
  std::vector<std::string> out;
  for (const auto& n : a) {
    auto v = n.value<std::string>();
    if (!v) bad(where, "expected a list of strings");
    out.push_back(*v);
  }
  return out;
}

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).string();
}

ModelSpec parse_model(const toml::table& t, const std::string& base, std::size_t index) {
  const std::string where = "models[" + std::to_string(index) + "]";
  check_keys(t,
             {"id", "kind", "hidden_layers", "width", "activation", "dropout", "weight_decay", "learning_rate",
              "loss", "huber_delta", "optimizer", "batch_size", "max_epochs", "patience", "min_delta", "schedule",
              "step_size", "gamma", "calibration_tol", "calibration_max_iter", "calibration_stages", "params"},
             where);
  ModelSpec m;
  m.id = req<std::string>(t, "id", where);
  m.kind = parse_model_kind(req<std::string>(t, "kind", where));
  auto& c = m.mlp;
  c.hidden_layers = opt<int>(t, "hidden_layers", where).value_or(c.hidden_layers);
  c.width = opt<int>(t, "width", where).value_or(c.width);
  if (auto a = opt<std::string>(t, "activation", where)) c.activation = parse_activation(*a);
  c.dropout = opt<double>(t, "dropout", where).value_or(c.dropout);
  c.weight_decay = opt<double>(t, "weight_decay", where).value_or(c.weight_decay);
  c.learning_rate = opt<double>(t, "learning_rate", where).value_or(c.learning_rate);
  auto& tr = m.train;
  if (m.kind != ModelKind::Physical) {
    tr.loss.kind = parse_loss(req<std::string>(t, "loss", where));
  } else if (auto l = opt<std::string>(t, "loss", where)) {
    tr.loss.kind = parse_loss(*l);
  }
  tr.loss.huber_delta = opt<double>(t, "huber_delta", where).value_or(tr.loss.huber_delta);
  if (auto o = opt<std::string>(t, "optimizer", where)) tr.optimizer = parse_optimizer(*o);
  if (auto b = opt<int>(t, "batch_size", where)) tr.batch_size = *b;
  tr.max_epochs = opt<int>(t, "max_epochs", where).value_or(tr.max_epochs);
  tr.early_stop.patience = opt<int>(t, "patience", where).value_or(tr.early_stop.patience);
  tr.early_stop.min_delta = opt<double>(t, "min_delta", where).value_or(tr.early_stop.min_delta);
  const std::string sched = opt<std::string>(t, "schedule", where).value_or("none");
  if (sched == "step") {
    tr.schedule.kind = LrSchedule::Kind::Step;
  } else if (sched != "none") {
    bad(where, "schedule must be \"none\" or \"step\"");
  }
  tr.schedule.step_size = opt<int>(t, "step_size", where).value_or(tr.schedule.step_size);
  tr.schedule.gamma = opt<double>(t, "gamma", where).value_or(tr.schedule.gamma);
  m.calibration.tol = opt<double>(t, "calibration_tol", where).value_or(m.calibration.tol);
  m.calibration.max_iter = opt<int>(t, "calibration_max_iter", where).value_or(m.calibration.max_iter);
  if (const auto* st = subarray(t, "calibration_stages", where)) {
    m.calibration.stages.clear();
    for (const auto& s : string_list(*st, where)) m.calibration.stages.push_back(parse_stage(s));
  }
  if (auto p = opt<std::string>(t, "params", where)) m.params_path = resolve(*p, base);
  return m;
}

RegionSpec parse_region(const toml::table& t, std::size_t index) {
  const std::string where = "regions[" + std::to_string(index) + "]";
  check_keys(t, {"name", "lat_min", "lat_max", "cells"}, where);
  RegionSpec r;
  r.name = req<std::string>(t, "name", where);
  const auto lo = opt<double>(t, "lat_min", where);
  const auto hi = opt<double>(t, "lat_max", where);
  const auto* cells = subarray(t, "cells", where);
  if ((lo || hi) && cells) bad(where, "give either a latitude band or a cell list, not both");
  if (lo || hi) {
    r.spatial = LatitudeBand{lo.value_or(-90.0), hi.value_or(90.0)};
  } else if (cells) {
    CellSet cs;
    for (const auto& n : *cells) {
      auto v = n.value<std::int64_t>();
      if (!v) bad(where, "cells must be integers");
      cs.ids.push_back(static_cast<int>(*v));
    }
    r.spatial = cs;
  }
  return r;
}

PartitionSpec::Temporal parse_temporal(const std::string& temporal, const std::string& where) {
  if (temporal == "none") return PartitionSpec::Temporal::None;
  if (temporal == "seasonal") return PartitionSpec::Temporal::Seasonal;
  if (temporal == "years") return PartitionSpec::Temporal::YearIntervals;
  bad(where, "temporal must be none, seasonal or years");
}

std::vector<YearInterval> parse_intervals(const toml::array& iv, const std::string& where) {
  std::vector<YearInterval> out;
  for (const auto& n : iv) {
    if (!n.is_table()) bad(where, "intervals must be tables");
    const auto& t = *n.as_table();
    check_keys(t, {"name", "first", "last"}, where + ".intervals");
    out.push_back({req<std::string>(t, "name", where + ".intervals"), req<int>(t, "first", where + ".intervals"),
                   req<int>(t, "last", where + ".intervals")});
  }
  return out;
}

ProxySplit parse_sweep_split(const toml::table& t, std::size_t index) {
  const std::string where = "sweep.splits[" + std::to_string(index) + "]";
  check_keys(t, {"name", "temporal", "intervals", "train_group", "test_group", "lat_min", "lat_max"}, where);
  ProxySplit s;
  s.name = opt<std::string>(t, "name", where).value_or(index == 0 ? "a" : "b");
  s.partition.temporal = parse_temporal(req<std::string>(t, "temporal", where), where);
  if (const auto* iv = subarray(t, "intervals", where)) s.partition.intervals = parse_intervals(*iv, where);
  s.train_group = req<std::string>(t, "train_group", where);
  s.test_group = req<std::string>(t, "test_group", where);
  const auto lo = opt<double>(t, "lat_min", where);
  const auto hi = opt<double>(t, "lat_max", where);
  if (lo || hi) s.partition.spatial = LatitudeBand{lo.value_or(-90.0), hi.value_or(90.0)};
  if (s.train_group == s.test_group) bad(where, "train_group and test_group must differ");
  return s;
}

SweepSettings parse_sweep(const toml::table& t) {
  const std::string where = "sweep";
  check_keys(t,
             {"n_architectures", "seed", "shared_seeds", "filter_percentile", "loss", "huber_delta", "optimizer",
              "batch_size", "max_epochs", "patience", "min_delta", "id_val_fraction", "id_test_fraction", "splits"},
             where);
  SweepSettings sw;
  sw.n_architectures = opt<int>(t, "n_architectures", where).value_or(sw.n_architectures);
  sw.seed = static_cast<std::uint64_t>(opt<std::int64_t>(t, "seed", where).value_or(0));
  sw.shared_seeds = opt<bool>(t, "shared_seeds", where).value_or(sw.shared_seeds);
  sw.filter_percentile = opt<double>(t, "filter_percentile", where).value_or(sw.filter_percentile);
  sw.train.loss.kind = parse_loss(req<std::string>(t, "loss", where));
  sw.train.loss.huber_delta = opt<double>(t, "huber_delta", where).value_or(sw.train.loss.huber_delta);
  if (auto o = opt<std::string>(t, "optimizer", where)) sw.train.optimizer = parse_optimizer(*o);
  if (auto b = opt<int>(t, "batch_size", where)) sw.train.batch_size = *b;
  sw.train.max_epochs = opt<int>(t, "max_epochs", where).value_or(sw.train.max_epochs);
  sw.train.early_stop.patience = opt<int>(t, "patience", where).value_or(sw.train.early_stop.patience);
  sw.train.early_stop.min_delta = opt<double>(t, "min_delta", where).value_or(sw.train.early_stop.min_delta);
  sw.id_split.val_fraction = opt<double>(t, "id_val_fraction", where).value_or(sw.id_split.val_fraction);
  sw.id_split.test_fraction = opt<double>(t, "id_test_fraction", where).value_or(sw.id_split.test_fraction);
  const auto* sp = subarray(t, "splits", where);
  if (!sp || sp->size() != 2) bad(where, "exactly two [[sweep.splits]] are required");
  std::size_t i = 0;
  for (const auto& n : *sp) {
    if (!n.is_table()) bad(where, "splits must be tables");
    (i == 0 ? sw.a : sw.b) = parse_sweep_split(*n.as_table(), i);
    ++i;
  }
  sw.train.validate();
  return sw;
}

}  // namespace

ExperimentPlan parse_plan(std::string_view toml_text, const std::string& base_dir, PlanCheck check) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "plan is not valid TOML: " << e.description() << " (line " << e.source().begin.line << ")";
    throw ValidationError(os.str());
  }
  check_keys(root,
             {"data", "partition", "regions", "split", "models", "seeds", "error_loss", "divergence",
              "variable_groups", "workers", "sweep"},
             "top level");
  ExperimentPlan plan;
  if (const auto* d = subtable(root, "data", "data")) {
    check_keys(*d, {"path", "manifest", "log_columns"}, "data");
    plan.data_path = resolve(opt<std::string>(*d, "path", "data").value_or(""), base_dir);
    plan.manifest_path = resolve(opt<std::string>(*d, "manifest", "data").value_or(""), base_dir);
    if (const auto* lc = subarray(*d, "log_columns", "data")) {
      for (auto& s : string_list(*lc, "data")) plan.log_columns.insert(s);
    }
  }
  if (const auto* p = subtable(root, "partition", "partition")) {
    check_keys(*p, {"temporal", "intervals"}, "partition");
    plan.temporal = parse_temporal(opt<std::string>(*p, "temporal", "partition").value_or("seasonal"), "partition");
    if (const auto* iv = subarray(*p, "intervals", "partition")) plan.intervals = parse_intervals(*iv, "partition");
  }
  if (const auto* rs = subarray(root, "regions", "regions")) {
    plan.regions.clear();
    std::size_t i = 0;
    for (const auto& n : *rs) {
      if (!n.is_table()) bad("regions", "entries must be tables");
      plan.regions.push_back(parse_region(*n.as_table(), i++));
    }
  }
  if (const auto* s = subtable(root, "split", "split")) {
    check_keys(*s, {"val_fraction", "test_fraction"}, "split");
    plan.split.val_fraction = opt<double>(*s, "val_fraction", "split").value_or(plan.split.val_fraction);
    plan.split.test_fraction = opt<double>(*s, "test_fraction", "split").value_or(plan.split.test_fraction);
  }
  if (const auto* ms = subarray(root, "models", "models")) {
    std::size_t i = 0;
    for (const auto& n : *ms) {
      if (!n.is_table()) bad("models", "entries must be tables");
      plan.models.push_back(parse_model(*n.as_table(), base_dir, i++));
    }
  }
  if (const auto* sd = subarray(root, "seeds", "seeds")) {
    plan.seeds.clear();
    for (const auto& n : *sd) {
      auto v = n.value<std::int64_t>();
      if (!v || *v < 0) bad("seeds", "seeds must be non-negative integers");
      plan.seeds.push_back(static_cast<std::uint64_t>(*v));
    }
  }
  if (auto el = opt<std::string>(root, "error_loss", "top level")) plan.error_loss = parse_error_loss(*el);
  if (auto w = opt<std::int64_t>(root, "workers", "top level")) {
    if (*w < 1) bad("top level", "workers must be >= 1");
    plan.workers = static_cast<std::size_t>(*w);
  }
  if (const auto* dv = subtable(root, "divergence", "divergence")) {
    check_keys(*dv, {"estimator", "pair_budget", "seed"}, "divergence");
    plan.divergence.estimator = parse_estimator(opt<std::string>(*dv, "estimator", "divergence").value_or("ed"));
    const auto pb = req<std::int64_t>(*dv, "pair_budget", "divergence");
    if (pb < 1) bad("divergence", "pair_budget must be positive");
    plan.divergence.pair_budget = static_cast<std::size_t>(pb);
    plan.divergence.seed = static_cast<std::uint64_t>(opt<std::int64_t>(*dv, "seed", "divergence").value_or(0));
  }
  if (const auto* vg = subtable(root, "variable_groups", "variable_groups")) {
    for (const auto& [k, v] : *vg) {
      if (!v.is_array()) bad("variable_groups", "each group must be a list of target names");
      plan.variable_groups[std::string(k.str())] = string_list(*v.as_array(), "variable_groups");
    }
  }
  if (const auto* sw = subtable(root, "sweep", "sweep")) plan.sweep = parse_sweep(*sw);
  if (check == PlanCheck::Full) plan.validate();
  return plan;
}

ExperimentPlan load_plan(const std::string& path, PlanCheck check) {
  const auto base = std::filesystem::path(path).parent_path().string();
  return parse_plan(read_text_file(path), base, check);
}

}  // namespace shiftlab

#include "shiftlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"

namespace shiftlab {

using Json = nlohmann::json;

namespace {

const std::vector<std::string> kBaseColumns = {"region",  "train_group", "test_group",      "model",
                                               "seed",    "loss_ood",    "loss_id",         "e_r",
                                               "energy_distance", "normalizer_hash", "failure"};

std::string sanitise(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

double parse_double(const std::string& field, std::size_t line, const std::string& column) {
  if (field.empty()) throw ValidationError("records line " + std::to_string(line) + ": empty " + column);
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size()) {
    throw ValidationError("records line " + std::to_string(line) + ": bad number '" + field + "' in " + column);
  }
  return v;
}

// JSON has no NaN/Inf; non-finite values become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json regression_to_json(const ShiftRegression& r) {
  Json pts = Json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"region", p.region},
                   {"model", p.model},
                   {"train_group", p.train_group},
                   {"test_group", p.test_group},
                   {"variable_group", p.variable_group},
                   {"energy_distance", num(p.energy_distance)},
                   {"mean_log_er", num(p.mean_log_er)},
                   {"min_log_er", num(p.min_log_er)},
                   {"max_log_er", num(p.max_log_er)},
                   {"n_seeds", p.n_seeds}});
  }
  return {{"grouping", std::string(to_string(r.grouping))},
          {"key", r.key},
          {"n", r.n},
          {"slope", num(r.slope)},
          {"intercept", num(r.intercept)},
          {"pearson_r", num(r.pearson_r)},
          {"pearson_p", num(r.pearson_p)},
          {"spearman_rho", num(r.spearman_rho)},
          {"spearman_p", num(r.spearman_p)},
          {"points", pts}};
}

std::string file_key(std::string s) {
  for (char& c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return s.empty() ? "all" : s;
}

}  // namespace

// ------------------------------------------------------------------ records

void write_records_csv(const std::vector<RobustnessRecord>& records, std::ostream& out) {
  std::vector<std::string> groups;
  for (const auto& r : records) {
    for (const auto& v : r.variable_groups) {
      if (std::find(groups.begin(), groups.end(), v.group) == groups.end()) groups.push_back(v.group);
    }
  }
  std::vector<std::string> header = kBaseColumns;
  for (const auto& g : groups) {
    if (g.find(',') != std::string::npos) throw ValidationError("variable group name contains a comma: " + g);
    header.push_back("vg." + g + ".loss_ood");
    header.push_back("vg." + g + ".loss_id");
    header.push_back("vg." + g + ".e_r");
  }
  out << join(header, ",") << '\n';
  for (const auto& r : records) {
    out << sanitise(r.region) << ',' << sanitise(r.train_group) << ',' << sanitise(r.test_group) << ','
        << sanitise(r.model) << ',' << r.seed << ',' << format_double(r.loss_ood) << ','
        << format_double(r.loss_id) << ',' << format_double(r.e_r) << ',' << format_double(r.energy_distance)
        << ',' << r.normalizer_hash << ',' << sanitise(r.failure);
    for (const auto& g : groups) {
      const auto it = std::find_if(r.variable_groups.begin(), r.variable_groups.end(),
                                   [&](const VariableGroupError& v) { return v.group == g; });
      if (it == r.variable_groups.end()) {
        out << ",,,";
      } else {
        out << ',' << format_double(it->loss_ood) << ',' << format_double(it->loss_id) << ','
            << format_double(it->e_r);
      }
    }
    out << '\n';
  }
}

void write_records_csv(const std::vector<RobustnessRecord>& records, const std::string& path) {
  std::ostringstream os;
  write_records_csv(records, os);
  write_text_file(path, os.str());
}

std::vector<RobustnessRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("records file is empty");
  const auto header = split_csv_line(line);
  if (header.size() < kBaseColumns.size() ||
      !std::equal(kBaseColumns.begin(), kBaseColumns.end(), header.begin())) {
    throw ValidationError("records header must start with " + join(kBaseColumns, ","));
  }
  const std::size_t extra = header.size() - kBaseColumns.size();
  if (extra % 3 != 0) throw ValidationError("records header: variable-group columns come in threes");
  std::vector<std::string> groups;
  for (std::size_t g = 0; g < extra / 3; ++g) {
    const std::string& col = header[kBaseColumns.size() + 3 * g];
    const std::string suffix = ".loss_ood";
    if (col.rfind("vg.", 0) != 0 || col.size() <= 3 + suffix.size() ||
        col.compare(col.size() - suffix.size(), suffix.size(), suffix) != 0) {
      throw ValidationError("records header: unexpected column '" + col + "'");
    }
    const std::string name = col.substr(3, col.size() - 3 - suffix.size());
    if (header[kBaseColumns.size() + 3 * g + 1] != "vg." + name + ".loss_id" ||
        header[kBaseColumns.size() + 3 * g + 2] != "vg." + name + ".e_r") {
      throw ValidationError("records header: incomplete columns for variable group '" + name + "'");
    }
    groups.push_back(name);
  }

  std::vector<RobustnessRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ValidationError("records line " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    RobustnessRecord r;
    r.region = f[0];
    r.train_group = f[1];
    r.test_group = f[2];
    r.model = f[3];
    try {
      std::size_t pos = 0;
      r.seed = std::stoull(f[4], &pos);
      if (pos != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("records line " + std::to_string(lineno) + ": bad seed '" + f[4] + "'");
    }
    r.loss_ood = parse_double(f[5], lineno, "loss_ood");
    r.loss_id = parse_double(f[6], lineno, "loss_id");
    r.e_r = parse_double(f[7], lineno, "e_r");
    r.energy_distance = parse_double(f[8], lineno, "energy_distance");
    r.normalizer_hash = f[9];
    r.failure = f[10];
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::size_t c = kBaseColumns.size() + 3 * g;
      if (f[c].empty() && f[c + 1].empty() && f[c + 2].empty()) continue;
      r.variable_groups.push_back({groups[g], parse_double(f[c], lineno, header[c]),
                                   parse_double(f[c + 1], lineno, header[c + 1]),
                                   parse_double(f[c + 2], lineno, header[c + 2])});
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RobustnessRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open records file: " + path);
  return read_records_csv(in);
}

// ------------------------------------------------------------------- report

ReportCounts count_records(const std::vector<RobustnessRecord>& records) {
  ReportCounts c;
  c.records = records.size();
  for (const auto& r : records) {
    if (r.failed()) ++c.failed;
    if (r.ood()) ++c.ood;
  }
  return c;
}

ReportBundle build_report(const std::vector<RobustnessRecord>& records, const std::vector<Grouping>& groupings) {
  ReportBundle b;
  b.counts = count_records(records);
  for (Grouping g : groupings) {
    try {
      auto regs = aggregate_and_regress(records, g);
      for (auto& r : regs) b.regressions.push_back(std::move(r));
    } catch (const ValidationError& e) {
      b.skipped.emplace_back(std::string(to_string(g)), e.what());
    }
  }
  return b;
}

std::string report_json(const ReportBundle& bundle) {
  Json regs = Json::array();
  for (const auto& r : bundle.regressions) regs.push_back(regression_to_json(r));
  Json skipped = Json::array();
  for (const auto& [g, why] : bundle.skipped) skipped.push_back({{"grouping", g}, {"reason", why}});
  Json j = {{"counts",
             {{"records", bundle.counts.records},
              {"failed", bundle.counts.failed},
              {"ood", bundle.counts.ood},
              {"trained_cells", bundle.counts.trained_cells},
              {"cached_cells", bundle.counts.cached_cells}}},
            {"regressions", regs},
            {"skipped", skipped}};
  if (!bundle.loss.empty()) j["error_loss"] = bundle.loss;
  return j.dump(2) + "\n";
}

std::vector<std::string> write_plotdata(const std::vector<ShiftRegression>& regressions, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (const auto& r : regressions) {
    std::ostringstream os;
    os << "ed\tmean_log_er\tmin_log_er\tmax_log_er\tn_seeds\tregion\tmodel\ttrain\ttest\tvariable_group\n";
    for (const auto& p : r.points) {
      os << format_double(p.energy_distance) << '\t' << format_double(p.mean_log_er) << '\t'
         << format_double(p.min_log_er) << '\t' << format_double(p.max_log_er) << '\t' << p.n_seeds << '\t'
         << p.region << '\t' << p.model << '\t' << p.train_group << '\t' << p.test_group << '\t'
         << p.variable_group << '\n';
    }
    const std::string path =
        (std::filesystem::path(dir) / (std::string(to_string(r.grouping)) + "_" + file_key(r.key) + ".tsv")).string();
    write_text_file(path, os.str());
    files.push_back(path);
  }
  return files;
}

// ------------------------------------------------------------ other results

std::string permutation_json(const PermutationTestResult& r) {
  Json j = {{"statistic_kind", r.statistic_kind},
            {"observed", num(r.observed)},
            {"p_value", num(r.p_value)},
            {"B", r.B},
            {"seed", r.seed},
            {"null_samples", r.null_samples}};
  return j.dump(2) + "\n";
}

std::string correlation_json(const CorrelationReport& r) {
  Json j = {{"pearson_r", num(r.pearson_r)},       {"pearson_p", num(r.pearson_p)},
            {"spearman_rho", num(r.spearman_rho)}, {"spearman_p", num(r.spearman_p)},
            {"ols_slope", num(r.ols_slope)},       {"ols_intercept", num(r.ols_intercept)},
            {"n", r.n}};
  return j.dump(2) + "\n";
}

std::string calibration_json(const CalibrationResult& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", std::string(to_string(s.stage))},
                      {"objective", s.objective},
                      {"iterations", s.iterations},
                      {"accepted", s.accepted},
                      {"hit_max_iter", s.hit_max_iter}});
  }
  Json j = {{"initial_objective", num(r.initial_objective)},
            {"final_objective", num(r.final_objective)},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"stages", stages},
            {"params", Json::parse(r.params.to_json())}};
  return j.dump(2) + "\n";
}

std::string proxy_study_json(const ProxyStudyResult& r) {
  Json archs = Json::array();
  for (const auto& a : r.architectures) {
    archs.push_back({{"hidden_layers", a.config.hidden_layers},
                     {"width", a.config.width},
                     {"activation", std::string(to_string(a.config.activation))},
                     {"dropout", a.config.dropout},
                     {"weight_decay", a.config.weight_decay},
                     {"learning_rate", a.config.learning_rate},
                     {"seed_a", a.seed_a},
                     {"seed_b", a.seed_b},
                     {"train_rmse_a", num(a.train_rmse_a)},
                     {"train_rmse_b", num(a.train_rmse_b)},
                     {"ood_rmse_a", num(a.ood_rmse_a)},
                     {"ood_rmse_b", num(a.ood_rmse_b)},
                     {"id_rmse_a", num(a.id_rmse_a)},
                     {"id_rmse_b", num(a.id_rmse_b)},
                     {"kept", a.kept}});
  }
  auto ratio = [](const RatioSummary& s) {
    return Json{{"q1", num(s.q1)}, {"median", num(s.median)}, {"q3", num(s.q3)}, {"iqr", num(s.iqr)}};
  };
  Json j = {{"survivors", r.survivors},
            {"correlation", Json::parse(correlation_json(r.correlation))},
            {"ood_id_ratio_a", ratio(r.ratio_a)},
            {"ood_id_ratio_b", ratio(r.ratio_b)},
            {"architectures", archs}};
  return j.dump(2) + "\n";
}

std::string train_record_json(const TrainRecord& r) {
  Json j = {{"seed", r.seed},
            {"epochs_run", r.epochs_run},
            {"best_epoch", r.best_epoch},
            {"stopped_early", r.stopped_early},
            {"restored_best", r.restored_best},
            {"final_train_rmse", num(r.final_train_rmse)},
            {"train_loss", r.train_loss},
            {"val_loss", r.val_loss},
            {"learning_rate", r.learning_rate},
            {"config",
             {{"hidden_layers", r.config.hidden_layers},
              {"width", r.config.width},
              {"activation", std::string(to_string(r.config.activation))},
              {"dropout", r.config.dropout},
              {"weight_decay", r.config.weight_decay},
              {"learning_rate", r.config.learning_rate},
              {"input_dim", r.config.input_dim},
              {"output_dim", r.config.output_dim}}}};
  return j.dump(2) + "\n";
}

}  // namespace shiftlab

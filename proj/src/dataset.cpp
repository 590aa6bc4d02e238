#include "shiftlab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"

namespace shiftlab {

namespace {

using Json = nlohmann::json;

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw ValidationError(std::string("duplicate ") + what + " name '" + n + "'");
    }
  }
}

double parse_number(const std::string& field, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    // from_chars rejects "nan"/"inf" spellings on some libstdc++ builds
    std::string lower = field;
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    if (lower == "nan" || lower == "-nan" || lower == "inf" || lower == "-inf" || lower == "+inf") {
      throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                            "': non-finite value '" + field + "'");
    }
    throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                          "': cannot parse '" + field + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                          "': non-finite value '" + field + "'");
  }
  return value;
}

double cos_lat(double lat_deg) {
  if (std::abs(lat_deg) >= 90.0) return 0.0;
  return std::max(0.0, std::cos(lat_deg * std::numbers::pi / 180.0));
}

}  // namespace

Season season_of(int month) {
  switch (month) {
    case 12: case 1: case 2: return Season::DJF;
    case 3: case 4: case 5: return Season::MAM;
    case 6: case 7: case 8: return Season::JJA;
    case 9: case 10: case 11: return Season::SON;
    default:
      throw ValidationError("month out of range 1..12: " + std::to_string(month));
  }
}

std::string_view to_string(Season season) {
  switch (season) {
    case Season::DJF: return "DJF";
    case Season::MAM: return "MAM";
    case Season::JJA: return "JJA";
    case Season::SON: return "SON";
  }
  return "?";
}

// ------------------------------------------------------------------ manifest

Manifest parse_manifest(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Manifest m;
  try {
    m.features = j.at("features").get<std::vector<std::string>>();
    m.targets = j.at("targets").get<std::vector<std::string>>();
    m.log_columns = j.value("log_columns", std::vector<std::string>{});
    const std::string layout = j.value("layout", std::string("dense"));
    if (layout == "dense") {
      m.layout = Layout::Dense;
    } else if (layout == "sparse") {
      m.layout = Layout::Sparse;
    } else {
      throw ValidationError("manifest layout must be \"dense\" or \"sparse\", got \"" + layout + "\"");
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  check_unique(m.features, "feature");
  check_unique(m.targets, "target");
  for (const auto& lc : m.log_columns) {
    if (std::find(m.features.begin(), m.features.end(), lc) == m.features.end() &&
        std::find(m.targets.begin(), m.targets.end(), lc) == m.targets.end()) {
      throw ValidationError("log column '" + lc + "' is neither a feature nor a target");
    }
  }
  return m;
}

Manifest load_manifest(const std::string& path) { return parse_manifest(read_text_file(path)); }

void write_manifest(const Manifest& manifest, const std::string& path) {
  Json j;
  j["features"] = manifest.features;
  j["targets"] = manifest.targets;
  j["log_columns"] = manifest.log_columns;
  j["layout"] = manifest.layout == Layout::Dense ? "dense" : "sparse";
  write_text_file(path, j.dump(2) + "\n");
}

// ------------------------------------------------------------------- dataset

ClimateDataset::ClimateDataset(std::vector<TimeStep> times, std::vector<GridCell> cells,
                               std::vector<SampleKey> keys, Matrix features,
                               std::vector<std::string> feature_names, Matrix targets,
                               std::vector<std::string> target_names, Layout layout)
    : times_(std::move(times)),
      cells_(std::move(cells)),
      keys_(std::move(keys)),
      features_(std::move(features)),
      feature_names_(std::move(feature_names)),
      targets_(std::move(targets)),
      target_names_(std::move(target_names)),
      layout_(layout) {
  check_unique(feature_names_, "feature");
  check_unique(target_names_, "target");
  {
    std::vector<std::string> all = feature_names_;
    all.insert(all.end(), target_names_.begin(), target_names_.end());
    check_unique(all, "column");
  }
  const auto n = static_cast<Eigen::Index>(keys_.size());
  if (features_.rows() != n || targets_.rows() != n) {
    throw ValidationError("feature/target row count does not match sample count");
  }
  if (features_.cols() != static_cast<Eigen::Index>(feature_names_.size()) ||
      targets_.cols() != static_cast<Eigen::Index>(target_names_.size())) {
    throw ValidationError("column count does not match column names");
  }
  if (!features_.allFinite() || !targets_.allFinite()) {
    throw ValidationError("dataset contains non-finite values");
  }
  std::set<int> ids;
  for (const auto& c : cells_) {
    if (!(c.lat >= -90.0 && c.lat <= 90.0)) {
      throw ValidationError("cell " + std::to_string(c.id) + ": latitude out of [-90, 90]");
    }
    if (!(c.lon >= -180.0 && c.lon < 360.0)) {
      throw ValidationError("cell " + std::to_string(c.id) + ": longitude out of [-180, 360)");
    }
    if (!ids.insert(c.id).second) {
      throw ValidationError("duplicate cell id " + std::to_string(c.id));
    }
  }
  for (const auto& t : times_) {
    if (t.month < 1 || t.month > 12) {
      throw ValidationError("time " + std::to_string(t.index) + ": month out of range");
    }
  }
  std::vector<char> seen(times_.size() * cells_.size(), 0);
  for (const auto& k : keys_) {
    if (k.time >= times_.size() || k.cell >= cells_.size()) {
      throw ValidationError("sample key out of range");
    }
    char& s = seen[k.time * cells_.size() + k.cell];
    if (s) throw ValidationError("duplicate (time, cell) pair");
    s = 1;
  }
  if (layout_ == Layout::Dense && keys_.size() != times_.size() * cells_.size()) {
    throw ValidationError("dense layout requires |times| x |cells| = " +
                          std::to_string(times_.size() * cells_.size()) + " samples, found " +
                          std::to_string(keys_.size()));
  }
}

std::size_t ClimateDataset::feature_index(std::string_view name) const {
  auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
  if (it == feature_names_.end()) throw ValidationError("unknown feature '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - feature_names_.begin());
}

std::size_t ClimateDataset::target_index(std::string_view name) const {
  auto it = std::find(target_names_.begin(), target_names_.end(), name);
  if (it == target_names_.end()) throw ValidationError("unknown target '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - target_names_.begin());
}

bool ClimateDataset::has_feature(std::string_view name) const {
  return std::find(feature_names_.begin(), feature_names_.end(), name) != feature_names_.end();
}

bool ClimateDataset::has_target(std::string_view name) const {
  return std::find(target_names_.begin(), target_names_.end(), name) != target_names_.end();
}

std::string ClimateDataset::content_hash() const {
  std::string bytes;
  auto put = [&bytes](const void* p, std::size_t n) {
    bytes.append(static_cast<const char*>(p), n);
  };
  for (const auto& t : times_) {
    put(&t.index, sizeof t.index);
    put(&t.month, sizeof t.month);
    const int y = t.year.value_or(-1);
    put(&y, sizeof y);
  }
  for (const auto& c : cells_) {
    put(&c.id, sizeof c.id);
    put(&c.lat, sizeof c.lat);
    put(&c.lon, sizeof c.lon);
  }
  for (const auto& k : keys_) {
    put(&k.time, sizeof k.time);
    put(&k.cell, sizeof k.cell);
  }
  for (const auto& n : feature_names_) bytes += "f:" + n + ";";
  for (const auto& n : target_names_) bytes += "t:" + n + ";";
  put(features_.data(), sizeof(double) * static_cast<std::size_t>(features_.size()));
  put(targets_.data(), sizeof(double) * static_cast<std::size_t>(targets_.size()));
  return sha256_hex(bytes);
}

ClimateDataset parse_dataset(std::istream& csv, const Manifest& manifest) {
  std::string line;
  if (!std::getline(csv, line)) throw ValidationError("data file is empty");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) {
      throw ValidationError("duplicate column '" + header[i] + "' in header");
    }
  }
  std::vector<std::string> missing;
  for (const char* req : {"time", "month", "lat", "lon"}) {
    if (!col.count(req)) missing.emplace_back(req);
  }
  for (const auto& n : manifest.features) {
    if (!col.count(n)) missing.push_back(n);
  }
  for (const auto& n : manifest.targets) {
    if (!col.count(n)) missing.push_back(n);
  }
  if (!missing.empty()) {
    throw ValidationError("manifest declares columns missing from data file: " + join(missing, ", "));
  }
  const bool has_year = col.count("year") > 0;

  struct Row {
    long time;
    int month;
    std::optional<int> year;
    double lat, lon;
    std::size_t line_no;
  };
  std::vector<Row> rows;
  std::vector<double> fvals, tvals;
  const std::size_t nf = manifest.features.size(), nt = manifest.targets.size();

  std::size_t row_no = 0;
  while (std::getline(csv, line)) {
    if (line.empty() || line == "\r") continue;
    ++row_no;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError("row " + std::to_string(row_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
    }
    auto num = [&](const std::string& name) { return parse_number(fields[col.at(name)], row_no, name); };
    Row r;
    const double t = num("time");
    const double m = num("month");
    if (t != std::floor(t)) throw ValidationError("row " + std::to_string(row_no) + ": time must be an integer");
    if (m != std::floor(m) || m < 1 || m > 12) {
      throw ValidationError("row " + std::to_string(row_no) + ", column 'month': must be an integer in 1..12");
    }
    r.time = static_cast<long>(t);
    r.month = static_cast<int>(m);
    if (has_year) r.year = static_cast<int>(num("year"));
    r.lat = num("lat");
    r.lon = num("lon");
    r.line_no = row_no;
    for (const auto& n : manifest.features) fvals.push_back(num(n));
    for (const auto& n : manifest.targets) tvals.push_back(num(n));
    rows.push_back(r);
  }
  if (rows.empty()) throw ValidationError("data file has no rows");

  std::map<long, TimeStep> time_map;
  std::map<std::pair<double, double>, std::size_t> cell_pos;
  std::vector<GridCell> cells;
  for (const auto& r : rows) {
    auto [it, inserted] = time_map.emplace(r.time, TimeStep{r.time, r.month, r.year});
    if (!inserted && (it->second.month != r.month || it->second.year != r.year)) {
      throw ValidationError("row " + std::to_string(r.line_no) + ": time " + std::to_string(r.time) +
                            " has inconsistent month/year labels");
    }
    if (cell_pos.emplace(std::make_pair(r.lat, r.lon), cells.size()).second) {
      cells.push_back(GridCell{static_cast<int>(cells.size()), r.lat, r.lon});
    }
  }
  std::vector<TimeStep> times;
  std::map<long, std::size_t> time_pos;
  for (const auto& [idx, ts] : time_map) {
    time_pos[idx] = times.size();
    times.push_back(ts);
  }

  std::vector<ClimateDataset::SampleKey> keys;
  keys.reserve(rows.size());
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (const auto& r : rows) {
    ClimateDataset::SampleKey k{time_pos.at(r.time), cell_pos.at({r.lat, r.lon})};
    auto [it, inserted] = seen.emplace(std::make_pair(k.time, k.cell), r.line_no);
    if (!inserted) {
      throw ValidationError("row " + std::to_string(r.line_no) + ": duplicate (time, cell) pair, first seen in row " +
                            std::to_string(it->second));
    }
    keys.push_back(k);
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix features(n, static_cast<Eigen::Index>(nf));
  Matrix targets(n, static_cast<Eigen::Index>(nt));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < nf; ++j) features(i, static_cast<Eigen::Index>(j)) = fvals[static_cast<std::size_t>(i) * nf + j];
    for (std::size_t j = 0; j < nt; ++j) targets(i, static_cast<Eigen::Index>(j)) = tvals[static_cast<std::size_t>(i) * nt + j];
  }
  return ClimateDataset(std::move(times), std::move(cells), std::move(keys), std::move(features),
                        manifest.features, std::move(targets), manifest.targets, manifest.layout);
}

ClimateDataset load_dataset(const std::string& data_path, const std::string& manifest_path) {
  const Manifest manifest = load_manifest(manifest_path);
  std::ifstream in(data_path);
  if (!in) throw ValidationError("cannot open data file: " + data_path);
  return parse_dataset(in, manifest);
}

void write_dataset(const ClimateDataset& ds, const std::string& data_path,
                   const std::string& manifest_path, const std::vector<std::string>& log_columns) {
  const bool has_year = !ds.times().empty() && ds.times().front().year.has_value();
  std::ostringstream out;
  out << "time,month" << (has_year ? ",year" : "") << ",lat,lon";
  for (const auto& n : ds.feature_names()) out << ',' << n;
  for (const auto& n : ds.target_names()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < ds.num_samples(); ++i) {
    const auto& t = ds.time_of(i);
    const auto& c = ds.cell_of(i);
    out << t.index << ',' << t.month;
    if (has_year) out << ',' << t.year.value_or(0);
    out << ',' << format_double(c.lat) << ',' << format_double(c.lon);
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < ds.features().cols(); ++j) out << ',' << format_double(ds.features()(r, j));
    for (Eigen::Index j = 0; j < ds.targets().cols(); ++j) out << ',' << format_double(ds.targets()(r, j));
    out << '\n';
  }
  write_text_file(data_path, out.str());
  write_manifest(Manifest{ds.feature_names(), ds.target_names(), log_columns, ds.layout()}, manifest_path);
}

// ----------------------------------------------------------------- partition

const Group& Partition::at(std::string_view key) const {
  for (const auto& g : groups) {
    if (g.key == key) return g;
  }
  throw ValidationError("unknown group '" + std::string(key) + "'");
}

std::vector<std::string> Partition::keys() const {
  std::vector<std::string> out;
  for (const auto& g : groups) out.push_back(g.key);
  return out;
}

std::vector<std::string> Partition::empty_groups() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (g.samples.empty()) out.push_back(g.key);
  }
  return out;
}

IndexSet select_cells(const ClimateDataset& ds, const PartitionSpec& spec) {
  IndexSet selected;
  const auto& cells = ds.cells();
  if (std::holds_alternative<std::monostate>(spec.spatial)) {
    for (std::size_t i = 0; i < cells.size(); ++i) selected.push_back(i);
  } else if (const auto* band = std::get_if<LatitudeBand>(&spec.spatial)) {
    if (!(band->lat_min <= band->lat_max)) throw ValidationError("latitude band has lat_min > lat_max");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].lat >= band->lat_min && cells[i].lat <= band->lat_max) selected.push_back(i);
    }
  } else {
    const auto& ids = std::get<CellSet>(spec.spatial).ids;
    const std::set<int> wanted(ids.begin(), ids.end());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (wanted.count(cells[i].id)) selected.push_back(i);
    }
  }
  if (selected.empty()) throw ValidationError("partition spec selects zero grid cells");
  return selected;
}

Partition partition(const ClimateDataset& ds, const PartitionSpec& spec) {
  const IndexSet cells = select_cells(ds, spec);
  std::vector<char> cell_on(ds.cells().size(), 0);
  for (auto c : cells) cell_on[c] = 1;

  Partition out;
  std::vector<int> group_of_time(ds.times().size(), -1);
  switch (spec.temporal) {
    case PartitionSpec::Temporal::None:
      out.groups.push_back({"all", {}});
      std::fill(group_of_time.begin(), group_of_time.end(), 0);
      break;
    case PartitionSpec::Temporal::Seasonal:
      for (Season s : {Season::DJF, Season::MAM, Season::JJA, Season::SON}) {
        out.groups.push_back({std::string(to_string(s)), {}});
      }
      for (std::size_t t = 0; t < ds.times().size(); ++t) {
        group_of_time[t] = static_cast<int>(season_of(ds.times()[t].month));
      }
      break;
    case PartitionSpec::Temporal::YearIntervals: {
      if (spec.intervals.empty()) throw ValidationError("year-interval rule has no intervals");
      std::set<std::string> names;
      for (std::size_t a = 0; a < spec.intervals.size(); ++a) {
        const auto& ia = spec.intervals[a];
        if (ia.first > ia.last) throw ValidationError("year interval '" + ia.name + "' has first > last");
        if (!names.insert(ia.name).second) throw ValidationError("duplicate interval name '" + ia.name + "'");
        for (std::size_t b = 0; b < a; ++b) {
          const auto& ib = spec.intervals[b];
          if (ia.first <= ib.last && ib.first <= ia.last) {
            throw ValidationError("year intervals '" + ib.name + "' and '" + ia.name + "' overlap");
          }
        }
        out.groups.push_back({ia.name, {}});
      }
      for (std::size_t t = 0; t < ds.times().size(); ++t) {
        const auto& year = ds.times()[t].year;
        if (!year) throw ValidationError("year-interval partition requires a 'year' column");
        for (std::size_t a = 0; a < spec.intervals.size(); ++a) {
          if (*year >= spec.intervals[a].first && *year <= spec.intervals[a].last) {
            group_of_time[t] = static_cast<int>(a);
          }
        }
      }
      break;
    }
  }
  for (std::size_t i = 0; i < ds.num_samples(); ++i) {
    const auto& k = ds.keys()[i];
    if (!cell_on[k.cell]) continue;
    const int g = group_of_time[k.time];
    if (g >= 0) out.groups[static_cast<std::size_t>(g)].samples.push_back(i);
  }
  return out;
}

// ------------------------------------------------------------ area weighting

std::vector<double> area_weights(std::span<const GridCell> cells) {
  if (cells.empty()) throw ValidationError("area weights need at least one cell");
  std::vector<double> w(cells.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    w[i] = cos_lat(cells[i].lat);
    total += w[i];
  }
  if (total <= 0.0) throw ValidationError("area weights sum to zero (all cells polar)");
  for (auto& x : w) x /= total;
  return w;
}

double area_weighted_mean(std::span<const double> values, std::span<const GridCell> cells) {
  if (values.size() != cells.size()) throw ValidationError("area_weighted_mean: one value per cell required");
  const auto w = area_weights(cells);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) acc += w[i] * values[i];
  return acc;
}

Matrix area_weighted_series(const ClimateDataset& ds, const Matrix& values,
                            std::span<const std::size_t> samples) {
  if (values.rows() != static_cast<Eigen::Index>(ds.num_samples())) {
    throw ValidationError("area_weighted_series: values must have one row per sample");
  }
  std::map<long, std::vector<std::size_t>> by_time;
  for (auto s : samples) by_time[ds.time_of(s).index].push_back(s);
  Matrix out(static_cast<Eigen::Index>(by_time.size()), values.cols());
  Eigen::Index row = 0;
  for (const auto& [t, members] : by_time) {
    std::vector<GridCell> cells;
    cells.reserve(members.size());
    for (auto s : members) cells.push_back(ds.cell_of(s));
    const auto w = area_weights(cells);
    out.row(row).setZero();
    for (std::size_t i = 0; i < members.size(); ++i) {
      out.row(row) += w[i] * values.row(static_cast<Eigen::Index>(members[i]));
    }
    ++row;
  }
  return out;
}

// --------------------------------------------------------------------- split

Split split_by_time(const ClimateDataset& ds, std::span<const std::size_t> samples, const SplitSpec& spec) {
  if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0 || spec.test_fraction < 0.0 ||
      spec.test_fraction >= 1.0) {
    throw ValidationError("split fractions must lie in [0, 1)");
  }
  std::vector<long> times;
  for (auto s : samples) times.push_back(ds.time_of(s).index);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const std::size_t nt = times.size();
  if (nt == 0) throw ValidationError("cannot split an empty group");

  auto count = [](double frac, std::size_t n) -> std::size_t {
    if (frac <= 0.0) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
  };
  const std::size_t n_test = count(spec.test_fraction, nt);
  if (n_test >= nt) throw ValidationError("group has too few timesteps for a test split");
  const std::size_t n_rest = nt - n_test;
  const std::size_t n_val = count(spec.val_fraction, n_rest);
  if (n_val >= n_rest) throw ValidationError("group has too few timesteps for a validation split");
  const long val_start = times[n_rest - n_val];
  const long test_start = n_test ? times[n_rest] : std::numeric_limits<long>::max();

  Split out;
  for (auto s : samples) {
    const long t = ds.time_of(s).index;
    if (t >= test_start) {
      out.test.push_back(s);
    } else if (n_val && t >= val_start) {
      out.val.push_back(s);
    } else {
      out.train.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------- normaliser

Normalizer::Normalizer(std::vector<ColumnStats> features, std::vector<ColumnStats> targets, double eps)
    : features_(std::move(features)), targets_(std::move(targets)), eps_(eps) {}

namespace {

Matrix apply_forward(const Matrix& raw, const std::vector<ColumnStats>& stats, double eps) {
  if (raw.cols() != static_cast<Eigen::Index>(stats.size())) {
    throw ValidationError("normaliser: column count mismatch");
  }
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const auto& s = stats[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      double x = raw(i, j);
      if (s.log) {
        if (!(x + eps > 0.0)) throw ValidationError("negative value in log column '" + s.name + "' after offset");
        x = std::log(x + eps);
      }
      out(i, j) = (x - s.mean) / s.std;
    }
  }
  return out;
}

Matrix apply_inverse(const Matrix& z, const std::vector<ColumnStats>& stats, double eps) {
  if (z.cols() != static_cast<Eigen::Index>(stats.size())) {
    throw ValidationError("normaliser: column count mismatch");
  }
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const auto& s = stats[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double x = z(i, j) * s.std + s.mean;
      out(i, j) = s.log ? std::exp(x) - eps : x;
    }
  }
  return out;
}

std::vector<ColumnStats> fit_columns(const Matrix& m, const std::vector<std::string>& names,
                                     std::span<const std::size_t> idx,
                                     const std::set<std::string>& log_columns, double eps) {
  std::vector<ColumnStats> out;
  const double n = static_cast<double>(idx.size());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    ColumnStats s;
    s.name = names[static_cast<std::size_t>(j)];
    s.log = log_columns.count(s.name) > 0;
    std::vector<double> v;
    v.reserve(idx.size());
    for (auto i : idx) {
      double x = m(static_cast<Eigen::Index>(i), j);
      if (s.log) {
        if (!(x + eps > 0.0)) throw ValidationError("negative value in log column '" + s.name + "' after offset");
        x = std::log(x + eps);
      }
      v.push_back(x);
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) throw ValidationError("constant column '" + s.name + "' cannot be standardised");
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / n);
    out.push_back(s);
  }
  return out;
}

}  // namespace

Matrix Normalizer::transform_features(const Matrix& raw) const { return apply_forward(raw, features_, eps_); }
Matrix Normalizer::inverse_features(const Matrix& z) const { return apply_inverse(z, features_, eps_); }
Matrix Normalizer::transform_targets(const Matrix& raw) const { return apply_forward(raw, targets_, eps_); }
Matrix Normalizer::inverse_targets(const Matrix& z) const { return apply_inverse(z, targets_, eps_); }

std::string Normalizer::hash() const {
  std::string bytes;
  auto put_stats = [&bytes](const std::vector<ColumnStats>& v, char tag) {
    for (const auto& s : v) {
      bytes += tag;
      bytes += s.name;
      bytes.append(reinterpret_cast<const char*>(&s.mean), sizeof s.mean);
      bytes.append(reinterpret_cast<const char*>(&s.std), sizeof s.std);
      bytes += s.log ? '1' : '0';
    }
  };
  put_stats(features_, 'f');
  put_stats(targets_, 't');
  bytes.append(reinterpret_cast<const char*>(&eps_), sizeof eps_);
  return sha256_hex(bytes);
}

Normalizer fit_normalizer(const ClimateDataset& ds, std::span<const std::size_t> train_idx,
                          const std::set<std::string>& log_columns, double eps) {
  if (train_idx.empty()) throw ValidationError("fit_normalizer: empty training index set");
  if (!log_columns.empty() && !(eps > 0.0)) throw ValidationError("fit_normalizer: epsilon must be positive");
  for (const auto& lc : log_columns) {
    if (!ds.has_feature(lc) && !ds.has_target(lc)) throw ValidationError("unknown log column '" + lc + "'");
  }
  for (auto i : train_idx) {
    if (i >= ds.num_samples()) throw ValidationError("fit_normalizer: sample index out of range");
  }
  return Normalizer(fit_columns(ds.features(), ds.feature_names(), train_idx, log_columns, eps),
                    fit_columns(ds.targets(), ds.target_names(), train_idx, log_columns, eps), eps);
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace shiftlab

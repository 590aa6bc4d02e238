#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace shiftlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexSet = std::vector<std::size_t>;

enum class Season { DJF, MAM, JJA, SON };

/// Meteorological season of a calendar month (1..12).
Season season_of(int month);
std::string_view to_string(Season season);

struct GridCell {
  int id = 0;
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 360)
};

struct TimeStep {
  long index = 0;
  int month = 1;
  std::optional<int> year;
};

enum class Layout { Dense, Sparse };

struct Manifest {
  std::vector<std::string> features;
  std::vector<std::string> targets;
  std::vector<std::string> log_columns;
  Layout layout = Layout::Dense;
};

Manifest load_manifest(const std::string& path);
Manifest parse_manifest(std::string_view json_text);
void write_manifest(const Manifest& manifest, const std::string& path);

/// Immutable table of samples on a (time, grid-cell) lattice.
///
/// Samples are stored in a fixed order; each sample maps to exactly one
/// (time position, cell position) pair. The constructor validates every
/// invariant and throws ValidationError on violation.
class ClimateDataset {
 public:
  struct SampleKey {
    std::size_t time = 0;  // position in times()
    std::size_t cell = 0;  // position in cells()
  };

  ClimateDataset(std::vector<TimeStep> times, std::vector<GridCell> cells,
                 std::vector<SampleKey> keys, Matrix features,
                 std::vector<std::string> feature_names, Matrix targets,
                 std::vector<std::string> target_names, Layout layout = Layout::Dense);

  std::size_t num_samples() const { return keys_.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features_.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(targets_.cols()); }

  const std::vector<TimeStep>& times() const { return times_; }
  const std::vector<GridCell>& cells() const { return cells_; }
  const std::vector<SampleKey>& keys() const { return keys_; }
  const Matrix& features() const { return features_; }
  const Matrix& targets() const { return targets_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& target_names() const { return target_names_; }
  Layout layout() const { return layout_; }

  const TimeStep& time_of(std::size_t sample) const { return times_[keys_[sample].time]; }
  const GridCell& cell_of(std::size_t sample) const { return cells_[keys_[sample].cell]; }

  /// Column position by name; throws ValidationError for unknown names.
  std::size_t feature_index(std::string_view name) const;
  std::size_t target_index(std::string_view name) const;
  bool has_feature(std::string_view name) const;
  bool has_target(std::string_view name) const;

  /// SHA-256 over geometry, names and values; stable across runs.
  std::string content_hash() const;

 private:
  std::vector<TimeStep> times_;
  std::vector<GridCell> cells_;
  std::vector<SampleKey> keys_;
  Matrix features_;
  std::vector<std::string> feature_names_;
  Matrix targets_;
  std::vector<std::string> target_names_;
  Layout layout_;
};

/// Reads the CSV data file (header row; `time`, `month`, `lat`, `lon`
/// required, optional `year`) and its JSON manifest.
ClimateDataset load_dataset(const std::string& data_path, const std::string& manifest_path);
ClimateDataset parse_dataset(std::istream& csv, const Manifest& manifest);
void write_dataset(const ClimateDataset& ds, const std::string& data_path,
                   const std::string& manifest_path,
                   const std::vector<std::string>& log_columns = {});

// ---------------------------------------------------------------- partition

struct YearInterval {
  std::string name;
  int first = 0;  // inclusive
  int last = 0;   // inclusive
};

struct LatitudeBand {
  double lat_min = -90.0;
  double lat_max = 90.0;
};

struct CellSet {
  std::vector<int> ids;
};

struct PartitionSpec {
  enum class Temporal { None, Seasonal, YearIntervals };

  Temporal temporal = Temporal::None;
  std::vector<YearInterval> intervals;
  std::variant<std::monostate, LatitudeBand, CellSet> spatial;
};

struct Group {
  std::string key;
  IndexSet samples;
};

struct Partition {
  std::vector<Group> groups;

  const Group& at(std::string_view key) const;
  std::vector<std::string> keys() const;
  std::vector<std::string> empty_groups() const;
};

/// Positions (into ds.cells()) selected by the spatial rule.
IndexSet select_cells(const ClimateDataset& ds, const PartitionSpec& spec);

/// Disjoint groups covering the restriction of ds given by `spec`.
/// Empty groups are kept and listed by Partition::empty_groups().
Partition partition(const ClimateDataset& ds, const PartitionSpec& spec);

// ---------------------------------------------------------- area weighting

/// cos(latitude) weights normalised to sum to one.
std::vector<double> area_weights(std::span<const GridCell> cells);

double area_weighted_mean(std::span<const double> values, std::span<const GridCell> cells);

/// One area-weighted mean vector per timestep present in `samples`, in time
/// order. `values` holds one row per dataset sample.
Matrix area_weighted_series(const ClimateDataset& ds, const Matrix& values,
                            std::span<const std::size_t> samples);

// ------------------------------------------------------------------- split

struct SplitSpec {
  double val_fraction = 0.10;
  double test_fraction = 0.0;
};

struct Split {
  IndexSet train;
  IndexSet val;
  IndexSet test;
};

/// Time-contiguous split of a group: the final `test_fraction` of its
/// timesteps form the test split; the final `val_fraction` of the remaining
/// (training) timesteps form the validation split.
Split split_by_time(const ClimateDataset& ds, std::span<const std::size_t> samples,
                    const SplitSpec& spec = {});

// -------------------------------------------------------------- normaliser

struct ColumnStats {
  std::string name;
  double mean = 0.0;
  double std = 1.0;
  bool log = false;
};

/// Frozen per-column statistics. Log columns are mapped to log(x + eps)
/// before standardisation.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<ColumnStats> features, std::vector<ColumnStats> targets, double eps);

  Matrix transform_features(const Matrix& raw) const;
  Matrix inverse_features(const Matrix& normalised) const;
  Matrix transform_targets(const Matrix& raw) const;
  Matrix inverse_targets(const Matrix& normalised) const;

  const std::vector<ColumnStats>& feature_stats() const { return features_; }
  const std::vector<ColumnStats>& target_stats() const { return targets_; }
  double epsilon() const { return eps_; }

  /// Hex digest of the statistics; equal digests mean bit-identical stats.
  std::string hash() const;

 private:
  std::vector<ColumnStats> features_;
  std::vector<ColumnStats> targets_;
  double eps_ = 1e-8;
};

Normalizer fit_normalizer(const ClimateDataset& ds, std::span<const std::size_t> train_idx,
                          const std::set<std::string>& log_columns, double eps = 1e-8);

/// Rows of `m` listed in `idx`, in order.
Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx);

}  // namespace shiftlab

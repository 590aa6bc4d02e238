#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/compositional.hpp"
#include "shiftlab/dataset.hpp"
#include "shiftlab/mlp.hpp"
#include "shiftlab/plan.hpp"
#include "shiftlab/stats.hpp"

namespace shiftlab {

/// loss_ood / loss_id; throws ValidationError unless loss_id > 0.
double relative_error(double loss_ood, double loss_id);

double error_loss(ErrorLoss kind, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

// -------------------------------------------------------------- fitted model

/// A trained model: maps raw dataset-order features to raw targets.
struct FittedModel {
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> predict;
  Normalizer normalizer;  // fitted on the training rows only
  TrainRecord record;
  // The underlying model, for checkpointing; set according to the kind.
  std::shared_ptr<const MlpModel> mlp;
  std::shared_ptr<const CompositionalModel> compositional;
  std::optional<PhysicalParams> params;
};

/// Physical calibration on `train_rows` as used by the physical and
/// compositional models.
CalibrationResult calibrate_on(const ClimateDataset& ds, const ModelSpec& spec, std::span<const std::size_t> train_rows);

/// Trains `spec` on `train_rows`, validating on `val_rows`. Physical and
/// compositional models reuse `calibrated` when given instead of calibrating.
FittedModel fit_model(const ClimateDataset& ds, const ModelSpec& spec, std::span<const std::size_t> train_rows,
                      std::span<const std::size_t> val_rows, const std::set<std::string>& log_columns,
                      std::uint64_t seed, const PhysicalParams* calibrated = nullptr);

// ------------------------------------------------------------------- matrix

struct VariableGroupError {
  std::string group;
  double loss_ood = 0.0;
  double loss_id = 0.0;
  double e_r = 0.0;

  bool operator==(const VariableGroupError&) const = default;
};

struct RobustnessRecord {
  std::string region;
  std::string train_group;
  std::string test_group;
  std::string model;
  std::uint64_t seed = 0;
  double loss_ood = 0.0;
  double loss_id = 0.0;
  double e_r = 0.0;
  double energy_distance = 0.0;
  std::vector<VariableGroupError> variable_groups;
  std::string normalizer_hash;  // of the normaliser the evaluated model was trained with
  std::string failure;          // empty on success

  bool failed() const { return !failure.empty(); }
  bool ood() const { return train_group != test_group; }
  bool operator==(const RobustnessRecord&) const = default;
};

struct MatrixOptions {
  std::optional<std::string> cache_dir;  // no caching when unset
};

struct MatrixResult {
  std::vector<RobustnessRecord> records;
  std::size_t trained_cells = 0;  // (region, group, model, seed) trainings performed
  std::size_t cached_cells = 0;   // served from the cache
  std::size_t failed_cells = 0;
};

/// Train on every group, test on every group, for each region, model and seed.
/// Output order is deterministic and independent of the worker count.
MatrixResult run_matrix(const ClimateDataset& ds, const ExperimentPlan& plan, const MatrixOptions& options = {});

// --------------------------------------------------------------- regression

enum class Grouping { Region, VariableGroup, TrainGroup, Model };
std::string_view to_string(Grouping g);
Grouping parse_grouping(std::string_view name);

/// One (train, test) pair with log e_r summarised over seeds.
struct ShiftPoint {
  std::string region, model, train_group, test_group, variable_group;
  double energy_distance = 0.0;
  double mean_log_er = 0.0;
  double min_log_er = 0.0;
  double max_log_er = 0.0;
  std::size_t n_seeds = 0;
};

struct ShiftRegression {
  Grouping grouping = Grouping::Model;
  std::string key;
  std::size_t n = 0;
  double slope = 0.0;
  double intercept = 0.0;
  // NaN when E[log e_r] is constant across the points
  double pearson_r = 0.0, pearson_p = 0.0, spearman_rho = 0.0, spearman_p = 0.0;
  std::vector<ShiftPoint> points;
};

/// Seed-averaged log e_r per (train, test) pair regressed on ED, one
/// regression per grouping key. Failed records are skipped.
std::vector<ShiftRegression> aggregate_and_regress(const std::vector<RobustnessRecord>& records, Grouping grouping,
                                                   bool include_diagonal = false);

// -------------------------------------------------------------- proxy study

struct ProxyStudySpec {
  ProxySplit a, b;
  int n_architectures = 50;
  SearchSpace space;
  TrainConfig train;  // loss must be stated by the caller
  std::uint64_t seed = 0;
  bool shared_seeds = true;  // same training seed under both splits
  double filter_percentile = 90.0;
  std::set<std::string> log_columns;
  SplitSpec id_split{0.10, 0.10};  // held-out ID test fraction of the training group
  std::size_t workers = 1;
};

struct ArchitectureResult {
  MlpConfig config;
  std::uint64_t seed_a = 0, seed_b = 0;
  double train_rmse_a = 0.0, train_rmse_b = 0.0;
  double ood_rmse_a = 0.0, ood_rmse_b = 0.0;
  double id_rmse_a = 0.0, id_rmse_b = 0.0;
  bool kept = false;
};

struct RatioSummary {
  double q1 = 0.0, median = 0.0, q3 = 0.0, iqr = 0.0;
};

struct ProxyStudyResult {
  std::vector<ArchitectureResult> architectures;
  std::size_t survivors = 0;
  CorrelationReport correlation;  // over survivors: OOD RMSE under a vs under b
  RatioSummary ratio_a, ratio_b;   // OOD/ID RMSE ratio per split, survivors
};

ProxyStudyResult proxy_study(const ClimateDataset& ds, const ProxyStudySpec& spec);

/// Study spec from a plan's [sweep] section.
ProxyStudySpec proxy_spec_from(const ExperimentPlan& plan);

}  // namespace shiftlab

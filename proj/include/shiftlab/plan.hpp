#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "shiftlab/dataset.hpp"
#include "shiftlab/divergence.hpp"
#include "shiftlab/mlp.hpp"
#include "shiftlab/radiation.hpp"

namespace shiftlab {

enum class ModelKind { Mlp, Physical, Compositional };
std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

struct ModelSpec {
  std::string id;
  ModelKind kind = ModelKind::Mlp;
  MlpConfig mlp;  // monolithic network, or the template shared by the experts
  TrainConfig train;
  CalibrationOptions calibration;
  std::optional<std::string> params_path;  // starting PhysicalParams JSON

  /// Canonical text of every field that affects training; feeds the cache key.
  std::string canonical() const;
};

struct RegionSpec {
  std::string name = "global";
  std::variant<std::monostate, LatitudeBand, CellSet> spatial;
};

enum class ErrorLoss { MAE, RMSE };
std::string_view to_string(ErrorLoss l);
ErrorLoss parse_error_loss(std::string_view name);

struct DivergenceSettings {
  Estimator estimator = Estimator::ED;
  std::size_t pair_budget = 0;
  std::uint64_t seed = 0;
};

/// Train on one group, evaluate OOD on another, under one partition rule.
struct ProxySplit {
  std::string name;
  PartitionSpec partition;
  std::string train_group;
  std::string test_group;
};

struct SweepSettings {
  ProxySplit a, b;
  int n_architectures = 50;
  std::uint64_t seed = 0;
  bool shared_seeds = true;
  double filter_percentile = 90.0;
  TrainConfig train;
  SplitSpec id_split{0.10, 0.10};
};

struct ExperimentPlan {
  std::string data_path;
  std::string manifest_path;
  std::set<std::string> log_columns;
  PartitionSpec::Temporal temporal = PartitionSpec::Temporal::Seasonal;
  std::vector<YearInterval> intervals;
  std::vector<RegionSpec> regions{RegionSpec{}};
  SplitSpec split{0.10, 0.20};
  std::vector<ModelSpec> models;
  std::vector<std::uint64_t> seeds{0};
  ErrorLoss error_loss = ErrorLoss::MAE;
  DivergenceSettings divergence;
  std::map<std::string, std::vector<std::string>> variable_groups;  // group name -> target names
  std::size_t workers = 1;
  std::optional<SweepSettings> sweep;

  PartitionSpec partition_for(const RegionSpec& region) const;
  void validate() const;
};

enum class PlanCheck { Full, SyntaxOnly };

/// Parses the TOML plan. Relative data paths resolve against `base_dir`.
/// PlanCheck::SyntaxOnly skips the completeness checks of validate(), for
/// commands that read only part of the plan.
ExperimentPlan parse_plan(std::string_view toml_text, const std::string& base_dir = "",
                          PlanCheck check = PlanCheck::Full);
ExperimentPlan load_plan(const std::string& path, PlanCheck check = PlanCheck::Full);

}  // namespace shiftlab

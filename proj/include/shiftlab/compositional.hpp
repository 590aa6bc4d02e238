#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/mlp.hpp"
#include "shiftlab/radiation.hpp"

namespace shiftlab {

/// Gate coefficients frozen after calibration, plus the standardised value
/// of zero net shortwave under the training normaliser.
struct FrozenGate {
  double w_qn = 0.0, w_rh = 0.0, w_sun = 0.0, tau = 0.0, s = 1.0;
  double c_night = 0.0;

  /// c_night = -mean / std of the training NETSW column.
  static FrozenGate from_params(const PhysicalParams& params, double netsw_mean, double netsw_std);

  CoreCoefficients coefficients() const;

  /// Raw IEEE-754 bytes of every field, for immutability checks.
  std::string bytes() const;

  std::string to_json() const;
  static FrozenGate from_json(std::string_view text);

  bool operator==(const FrozenGate&) const = default;
};

struct GateOutputs {
  Eigen::VectorXd alpha;  // cloud weight, (0, 1)
  Eigen::VectorXd day;    // 1 if COSZRS > 0 else 0
};

/// `raw_inputs` are unnormalised, in RadiationFeature column order.
GateOutputs gate(const Eigen::MatrixXd& raw_inputs, const FrozenGate& g);

enum class Expert : int { SwClear = 0, SwCloud, LwClear, LwCloud };
inline constexpr std::array<std::string_view, 4> kExpertNames = {"sw_clear", "sw_cloud", "lw_clear", "lw_cloud"};

/// Input columns (RadiationFeature positions) read by each expert.
const std::vector<int>& expert_features(Expert e);

/// Standardised (NETSW, FLWDS) from expert outputs [n x 4] in Expert order.
Eigen::MatrixXd combine(const Eigen::MatrixXd& expert_outputs, const Eigen::VectorXd& alpha,
                        const Eigen::VectorXd& day, double c_night);

/// Standardised inputs and targets for the compositional model, with the
/// gate evaluated once on the raw inputs.
struct CompositionalBatch {
  Eigen::MatrixXd features;  // standardised, RadiationFeature column order
  GateOutputs gate;
  Eigen::MatrixXd targets;   // standardised (NETSW, FLWDS); may be empty for prediction
};

/// Standardised NETSW back to W/m^2, anchored so that c_night maps to
/// exactly zero.
inline double netsw_from_standardised(double y, double c_night, double netsw_std) {
  return (y - c_night) * netsw_std;
}

CompositionalBatch make_batch(const Eigen::MatrixXd& raw_inputs, const Eigen::MatrixXd& std_features,
                              const Eigen::MatrixXd& std_targets, const FrozenGate& g);

class CompositionalModel {
 public:
  CompositionalModel() = default;
  /// Experts share `expert_cfg` apart from their input width (and a scalar output).
  CompositionalModel(const FrozenGate& gate, const MlpConfig& expert_cfg, std::uint64_t init_seed);
  CompositionalModel(const FrozenGate& gate, std::array<MlpModel, 4> experts);

  const FrozenGate& frozen_gate() const { return gate_; }
  const std::array<MlpModel, 4>& experts() const { return experts_; }
  std::array<MlpModel, 4>& experts() { return experts_; }
  const MlpModel& expert(Expert e) const { return experts_[static_cast<std::size_t>(e)]; }

  /// [n x 4] expert outputs, eval mode.
  Eigen::MatrixXd expert_outputs(const Eigen::MatrixXd& std_features) const;
  /// Standardised (NETSW, FLWDS).
  Eigen::MatrixXd predict(const CompositionalBatch& batch) const;

  std::size_t parameter_count() const;
  bool operator==(const CompositionalModel& other) const;

 private:
  FrozenGate gate_;
  std::array<MlpModel, 4> experts_;
};

/// Columns of `m` listed in `cols`, in order.
Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<int>& cols);

struct CompositionalTrainResult {
  CompositionalModel model;
  TrainRecord record;
};

/// Trains all four experts jointly on the loss of the combined prediction.
/// The gate and c_night are constants throughout.
CompositionalTrainResult train_compositional(const CompositionalBatch& train, const CompositionalBatch& val,
                                             const FrozenGate& gate, const MlpConfig& expert_cfg,
                                             const TrainConfig& train_cfg);

inline constexpr std::string_view kCompositionalMagic = "SHIFTLAB-COMP-v1";

void save_compositional(const CompositionalModel& model, std::ostream& out);
CompositionalModel load_compositional(std::istream& in);
void save_compositional(const CompositionalModel& model, const std::string& path);
CompositionalModel load_compositional(const std::string& path);

}  // namespace shiftlab

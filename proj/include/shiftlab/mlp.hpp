#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace shiftlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { ReLU, GELU, Tanh };
enum class LossKind { MSE, Huber };
enum class OptimizerKind { Adam, AdamW };

std::string_view to_string(Activation a);
std::string_view to_string(LossKind k);
std::string_view to_string(OptimizerKind k);
Activation parse_activation(std::string_view name);
LossKind parse_loss(std::string_view name);
OptimizerKind parse_optimizer(std::string_view name);

struct MlpConfig {
  int hidden_layers = 2;
  int width = 64;
  Activation activation = Activation::ReLU;
  double dropout = 0.0;
  double weight_decay = 0.0;
  double learning_rate = 1e-3;
  int input_dim = 1;
  int output_dim = 1;

  void validate() const;
  bool operator==(const MlpConfig&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Fully connected network: `hidden_layers` layers of `width` units with a
/// shared activation, then a linear output layer.
class MlpModel {
 public:
  MlpModel() = default;

  /// Fan-in-scaled uniform initialisation: bound sqrt(6 / fan_in) for
  /// ReLU/GELU hidden layers, Xavier bound sqrt(6 / (fan_in + fan_out)) for
  /// Tanh hidden layers and for the output layer. Biases start at zero.
  MlpModel(const MlpConfig& config, std::uint64_t init_seed);

  MlpModel(const MlpConfig& config, std::vector<DenseLayer> layers);

  const MlpConfig& config() const { return config_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t parameter_count() const;
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);
  bool operator==(const MlpModel& other) const;

 private:
  MlpConfig config_;
  std::vector<DenseLayer> layers_;
};

/// Per-layer activations kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;       // input to each layer (after dropout)
  std::vector<Matrix> preactivations;  // hidden layers only
  std::vector<Matrix> masks;        // dropout masks (scaled), empty when unused
};

/// Predictions [n x output_dim]. In train mode, inverted dropout follows each
/// hidden activation with masks drawn from `seed`; eval mode is deterministic.
Matrix forward(const MlpModel& model, const Matrix& X, bool train_mode = false, std::uint64_t seed = 0,
               ForwardCache* cache = nullptr);

using Gradients = std::vector<DenseLayer>;

/// Parameter gradients given dLoss/dOutput for the batch in `cache`.
Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& output_grad);

Matrix activate(Activation a, const Matrix& z);
Matrix activation_derivative(Activation a, const Matrix& z);

struct LossSpec {
  LossKind kind = LossKind::MSE;
  double huber_delta = 1.0;
};

/// Mean over every element of the batch.
double loss(const LossSpec& spec, const Matrix& pred, const Matrix& target);
Matrix loss_gradient(const LossSpec& spec, const Matrix& pred, const Matrix& target);

/// Adam (weight decay coupled as an L2 gradient term) or AdamW (decoupled
/// decay theta <- theta (1 - lr wd) before the Adam step).
class AdamOptimizer {
 public:
  AdamOptimizer(OptimizerKind kind, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(MlpModel& model, const Gradients& grads, double lr);
  int steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double weight_decay_, beta1_, beta2_, epsilon_;
  int t_ = 0;
  std::vector<DenseLayer> m_, v_;
};

struct LrSchedule {
  enum class Kind { None, Step };
  Kind kind = Kind::None;
  int step_size = 3;
  double gamma = 0.05;

  /// Learning rate during 1-based `epoch`: base * gamma^floor((epoch-1)/step).
  double at(double base, int epoch) const;
};

struct EarlyStopping {
  int patience = 20;
  double min_delta = 1e-7;
};

/// Tracks the best validation loss; improvement means beating the best by
/// more than min_delta.
class EarlyStopper {
 public:
  explicit EarlyStopper(EarlyStopping cfg);

  /// Feeds one epoch's validation loss; returns true on improvement.
  bool update(double val_loss);
  bool should_stop() const { return stale_ >= cfg_.patience; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }

 private:
  EarlyStopping cfg_;
  double best_;
  int best_epoch_ = 0;
  int epoch_ = 0;
  int stale_ = 0;
};

struct TrainConfig {
  LossSpec loss;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<int> batch_size;  // nullopt: full batch
  int max_epochs = 300;
  EarlyStopping early_stop;
  LrSchedule schedule;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainRecord {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> learning_rate;
  int best_epoch = 0;
  int epochs_run = 0;
  bool stopped_early = false;
  bool restored_best = false;
  double final_train_rmse = 0.0;
  MlpConfig config;
  std::uint64_t seed = 0;

  bool operator==(const TrainRecord&) const = default;
};

/// Callbacks driving one training run; shared by the plain MLP and the
/// compositional model.
struct EpochHooks {
  std::function<double(int epoch, double lr)> run_epoch;  // returns mean train loss
  std::function<double()> validation_loss;
  std::function<void()> save_best;
  std::function<void()> restore_best;
};

/// Epoch loop with schedule, early stopping and best-checkpoint restore.
/// Throws RuntimeFailure naming the epoch when a loss turns non-finite.
TrainRecord run_training_loop(const TrainConfig& cfg, double base_lr, const EpochHooks& hooks);

struct TrainResult {
  MlpModel model;
  TrainRecord record;
};

TrainResult train(const Matrix& x_train, const Matrix& y_train, const Matrix& x_val, const Matrix& y_val,
                  const MlpConfig& mlp_cfg, const TrainConfig& train_cfg);

double rmse(const Matrix& pred, const Matrix& target);
double mae(const Matrix& pred, const Matrix& target);

// Seeds derived from TrainConfig::seed.
std::uint64_t init_seed_for(std::uint64_t seed);
std::uint64_t shuffle_seed_for(std::uint64_t seed, int epoch);
std::uint64_t dropout_seed_for(std::uint64_t seed, int epoch, std::size_t batch);

// ------------------------------------------------------------ random search

struct SearchSpace {
  std::vector<int> hidden_layers{2, 3, 4, 5, 6};
  int width_min = 64;
  int width_max = 1024;
  double dropout_min = 0.0;
  double dropout_max = 0.25;
  double weight_decay_min = 1e-5;
  double weight_decay_max = 1e-2;
  double lr_min = 5e-4;
  double lr_max = 1e-2;
  std::vector<Activation> activations{Activation::ReLU, Activation::GELU, Activation::Tanh};

  void validate() const;
};

MlpConfig sample_hyperparams(const SearchSpace& space, std::uint64_t seed, int input_dim = 1, int output_dim = 1);

/// Keeps architectures whose training RMSE is at most the `pct` percentile in
/// both splits; each entry is (rmse split A, rmse split B).
std::vector<std::size_t> quality_filter(std::span<const std::pair<double, double>> train_rmse, double pct = 90.0);

// --------------------------------------------------------------- checkpoint

inline constexpr std::string_view kMlpMagic = "SHIFTLAB-MLP-v1";

void save_checkpoint(const MlpModel& model, std::ostream& out);
MlpModel load_checkpoint(std::istream& in);
void save_checkpoint(const MlpModel& model, const std::string& path);
MlpModel load_checkpoint(const std::string& path);

}  // namespace shiftlab

#include "shiftlab/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "shiftlab/dataset.hpp"
#include "shiftlab/error.hpp"
#include "shiftlab/random.hpp"
#include "shiftlab/stats.hpp"

namespace shiftlab {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::GELU: return "gelu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

std::string_view to_string(LossKind k) { return k == LossKind::MSE ? "mse" : "huber"; }
std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "adamw"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu" || name == "ReLU") return Activation::ReLU;
  if (name == "gelu" || name == "GELU") return Activation::GELU;
  if (name == "tanh" || name == "Tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

LossKind parse_loss(std::string_view name) {
  if (name == "mse" || name == "MSE") return LossKind::MSE;
  if (name == "huber" || name == "Huber") return LossKind::Huber;
  throw ValidationError("unknown loss '" + std::string(name) + "'");
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam" || name == "Adam") return OptimizerKind::Adam;
  if (name == "adamw" || name == "AdamW") return OptimizerKind::AdamW;
  throw ValidationError("unknown optimizer '" + std::string(name) + "'");
}

void MlpConfig::validate() const {
  if (hidden_layers < 0) throw ValidationError("hidden_layers must be >= 0");
  if (hidden_layers > 0 && width < 1) throw ValidationError("width must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (input_dim < 1 || output_dim < 1) throw ValidationError("input_dim and output_dim must be >= 1");
}

// -------------------------------------------------------------------- model

MlpModel::MlpModel(const MlpConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  int fan_in = config_.input_dim;
  for (int l = 0; l <= config_.hidden_layers; ++l) {
    const bool output = l == config_.hidden_layers;
    const int fan_out = output ? config_.output_dim : config_.width;
    double bound;
    if (!output && config_.activation != Activation::Tanh) {
      bound = std::sqrt(6.0 / fan_in);
    } else {
      bound = std::sqrt(6.0 / (fan_in + fan_out));
    }
    DenseLayer layer;
    layer.weight.resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    layer.bias = Vector::Zero(fan_out);
    layers_.push_back(std::move(layer));
    fan_in = fan_out;
  }
}

MlpModel::MlpModel(const MlpConfig& config, std::vector<DenseLayer> layers)
    : config_(config), layers_(std::move(layers)) {
  config_.validate();
  if (layers_.size() != static_cast<std::size_t>(config_.hidden_layers + 1)) {
    throw ValidationError("layer count does not match config");
  }
  Eigen::Index fan_in = config_.input_dim;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const bool output = l + 1 == layers_.size();
    const Eigen::Index fan_out = output ? config_.output_dim : config_.width;
    if (layers_[l].weight.rows() != fan_out || layers_[l].weight.cols() != fan_in ||
        layers_[l].bias.size() != fan_out) {
      throw ValidationError("layer " + std::to_string(l) + " has the wrong shape");
    }
    if (!layers_[l].weight.allFinite() || !layers_[l].bias.allFinite()) {
      throw ValidationError("layer " + std::to_string(l) + " has non-finite parameters");
    }
    fan_in = fan_out;
  }
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector MlpModel::flat_parameters() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat(k++) = l.weight(r, c);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat(k++) = l.bias(r);
  }
  return flat;
}

void MlpModel::set_flat_parameters(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw ValidationError("flat parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(k++);
  }
}

bool MlpModel::operator==(const MlpModel& other) const {
  if (!(config_ == other.config_) || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight != other.layers_[l].weight || layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

// -------------------------------------------------------------- activations

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

}  // namespace

Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::GELU: return z.unaryExpr([](double x) { return gelu(x); });
    case Activation::Tanh: return z.array().tanh().matrix();
  }
  return z;
}

Matrix activation_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::ReLU: return z.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::GELU: return z.unaryExpr([](double x) { return gelu_derivative(x); });
    case Activation::Tanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (1.0 - t * t).matrix();
    }
  }
  return z;
}

// ---------------------------------------------------------- forward/backward

Matrix forward(const MlpModel& model, const Matrix& X, bool train_mode, std::uint64_t seed, ForwardCache* cache) {
  const auto& cfg = model.config();
  if (X.cols() != cfg.input_dim) {
    throw ValidationError("forward: input has " + std::to_string(X.cols()) + " columns, model expects " +
                          std::to_string(cfg.input_dim));
  }
  if (cache) {
    cache->inputs.clear();
    cache->preactivations.clear();
    cache->masks.clear();
  }
  const bool drop = train_mode && cfg.dropout > 0.0;
  Rng rng(seed);
  const double keep = 1.0 - cfg.dropout;

  Matrix a = X;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Matrix z = a * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    Matrix h = activate(cfg.activation, z);
    if (drop) {
      Matrix mask(h.rows(), h.cols());
      for (Eigen::Index c = 0; c < mask.cols(); ++c) {
        for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
      }
      h = h.cwiseProduct(mask);
      if (cache) cache->masks.push_back(std::move(mask));
    }
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->preactivations.push_back(std::move(z));
    }
    a = std::move(h);
  }
  Matrix out = a * layers.back().weight.transpose();
  out.rowwise() += layers.back().bias.transpose();
  if (cache) cache->inputs.push_back(std::move(a));
  return out;
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& output_grad) {
  const auto& layers = model.layers();
  if (cache.inputs.size() != layers.size()) throw ValidationError("backward: cache does not match model");
  Gradients grads(layers.size());
  Matrix delta = output_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weight = delta.transpose() * cache.inputs[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * layers[l].weight;
    if (!cache.masks.empty()) upstream = upstream.cwiseProduct(cache.masks[l - 1]);
    delta = upstream.cwiseProduct(activation_derivative(model.config().activation, cache.preactivations[l - 1]));
  }
  return grads;
}

// ------------------------------------------------------------------- losses

double loss(const LossSpec& spec, const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("loss: shape mismatch");
  if (pred.size() == 0) throw ValidationError("loss: empty batch");
  const Eigen::ArrayXXd r = (pred - target).array();
  if (spec.kind == LossKind::MSE) return r.square().mean();
  const double d = spec.huber_delta;
  return r.unaryExpr([d](double x) {
            const double a = std::abs(x);
            return a <= d ? 0.5 * x * x : d * (a - 0.5 * d);
          })
      .mean();
}

Matrix loss_gradient(const LossSpec& spec, const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("loss: shape mismatch");
  const double n = static_cast<double>(pred.size());
  const Matrix r = pred - target;
  if (spec.kind == LossKind::MSE) return (2.0 / n) * r;
  const double d = spec.huber_delta;
  return r.unaryExpr([d, n](double x) { return std::clamp(x, -d, d) / n; });
}

double rmse(const Matrix& pred, const Matrix& target) {
  return std::sqrt(loss(LossSpec{LossKind::MSE}, pred, target));
}

double mae(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ValidationError("mae: shape mismatch");
  return (pred - target).cwiseAbs().mean();
}

// ---------------------------------------------------------------- optimizer

AdamOptimizer::AdamOptimizer(OptimizerKind kind, double weight_decay, double beta1, double beta2, double epsilon)
    : kind_(kind), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void AdamOptimizer::step(MlpModel& model, const Gradients& grads, double lr) {
  auto& layers = model.layers();
  if (grads.size() != layers.size()) throw ValidationError("optimizer: gradient/model mismatch");
  if (m_.empty()) {
    for (const auto& l : layers) {
      m_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
      v_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  auto update = [&](auto& theta, const auto& g_raw, auto& m, auto& v) {
    using M = std::decay_t<decltype(theta)>;
    M g = g_raw;
    if (kind_ == OptimizerKind::Adam && weight_decay_ > 0.0) g += weight_decay_ * theta;
    if (kind_ == OptimizerKind::AdamW && weight_decay_ > 0.0) theta *= (1.0 - lr * weight_decay_);
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
    update(layers[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
  }
}

// ---------------------------------------------------------- schedule/stopping

double LrSchedule::at(double base, int epoch) const {
  if (kind == Kind::None) return base;
  return base * std::pow(gamma, (epoch - 1) / step_size);
}

EarlyStopper::EarlyStopper(EarlyStopping cfg) : cfg_(cfg), best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopper::update(double val_loss) {
  ++epoch_;
  if (val_loss < best_ - cfg_.min_delta) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (early_stop.patience < 1) throw ValidationError("patience must be >= 1");
  if (!(early_stop.min_delta >= 0.0)) throw ValidationError("min_delta must be >= 0");
  if (schedule.kind == LrSchedule::Kind::Step) {
    if (schedule.step_size < 1) throw ValidationError("step_size must be >= 1");
    if (!(schedule.gamma > 0.0 && schedule.gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
  }
  if (batch_size && *batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (loss.kind == LossKind::Huber && !(loss.huber_delta > 0.0)) throw ValidationError("huber delta must be > 0");
}

TrainRecord run_training_loop(const TrainConfig& cfg, double base_lr, const EpochHooks& hooks) {
  cfg.validate();
  TrainRecord rec;
  rec.seed = cfg.seed;
  EarlyStopper stopper(cfg.early_stop);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cfg.schedule.at(base_lr, epoch);
    const double tl = hooks.run_epoch(epoch, lr);
    if (!std::isfinite(tl)) throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch));
    const double vl = hooks.validation_loss();
    if (!std::isfinite(vl)) throw RuntimeFailure("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.train_loss.push_back(tl);
    rec.val_loss.push_back(vl);
    rec.learning_rate.push_back(lr);
    rec.epochs_run = epoch;
    if (stopper.update(vl)) hooks.save_best();
    if (stopper.should_stop()) {
      rec.stopped_early = true;
      break;
    }
  }
  hooks.restore_best();
  rec.best_epoch = stopper.best_epoch();
  rec.restored_best = true;
  return rec;
}

std::uint64_t init_seed_for(std::uint64_t seed) { return child_seed(seed, 0x1A11); }
std::uint64_t shuffle_seed_for(std::uint64_t seed, int epoch) {
  return child_seed(child_seed(seed, 0x5AFF), static_cast<std::uint64_t>(epoch));
}
std::uint64_t dropout_seed_for(std::uint64_t seed, int epoch, std::size_t batch) {
  return child_seed(child_seed(child_seed(seed, 0xD209), static_cast<std::uint64_t>(epoch)), batch);
}

TrainResult train(const Matrix& x_train, const Matrix& y_train, const Matrix& x_val, const Matrix& y_val,
                  const MlpConfig& mlp_cfg, const TrainConfig& train_cfg) {
  mlp_cfg.validate();
  train_cfg.validate();
  if (x_train.rows() == 0 || x_val.rows() == 0) throw ValidationError("train: empty train or validation split");
  if (x_train.rows() != y_train.rows() || x_val.rows() != y_val.rows()) {
    throw ValidationError("train: feature/target row mismatch");
  }
  if (y_train.cols() != mlp_cfg.output_dim || y_val.cols() != mlp_cfg.output_dim) {
    throw ValidationError("train: target columns do not match output_dim");
  }

  TrainResult result{MlpModel(mlp_cfg, init_seed_for(train_cfg.seed)), {}};
  MlpModel& model = result.model;
  MlpModel best = model;
  AdamOptimizer opt(train_cfg.optimizer, mlp_cfg.weight_decay);
  const auto n = static_cast<std::size_t>(x_train.rows());
  const std::size_t batch = train_cfg.batch_size ? static_cast<std::size_t>(*train_cfg.batch_size) : n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  EpochHooks hooks;
  hooks.run_epoch = [&](int epoch, double lr) {
    if (batch < n) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(shuffle_seed_for(train_cfg.seed, epoch));
      rng.shuffle(order);
    }
    double weighted = 0.0;
    ForwardCache cache;
    std::size_t b = 0;
    for (std::size_t start = 0; start < n; start += batch, ++b) {
      const std::size_t len = std::min(batch, n - start);
      Matrix xb, yb;
      if (batch >= n) {
        xb = x_train;
        yb = y_train;
      } else {
        const std::span<const std::size_t> idx(order.data() + start, len);
        xb = take_rows(x_train, idx);
        yb = take_rows(y_train, idx);
      }
      const Matrix pred = forward(model, xb, true, dropout_seed_for(train_cfg.seed, epoch, b), &cache);
      const double l = loss(train_cfg.loss, pred, yb);
      if (!std::isfinite(l)) throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch));
      opt.step(model, backward(model, cache, loss_gradient(train_cfg.loss, pred, yb)), lr);
      weighted += l * static_cast<double>(len);
    }
    return weighted / static_cast<double>(n);
  };
  hooks.validation_loss = [&] { return loss(train_cfg.loss, forward(model, x_val), y_val); };
  hooks.save_best = [&] { best = model; };
  hooks.restore_best = [&] { model = best; };

  result.record = run_training_loop(train_cfg, mlp_cfg.learning_rate, hooks);
  result.record.config = mlp_cfg;
  result.record.final_train_rmse = rmse(forward(model, x_train), y_train);
  return result;
}

// ------------------------------------------------------------ random search

void SearchSpace::validate() const {
  if (hidden_layers.empty() || activations.empty()) throw ValidationError("search space is empty");
  if (width_min < 1 || width_min > width_max) throw ValidationError("search space: invalid width range");
  if (!(dropout_min >= 0.0 && dropout_min <= dropout_max && dropout_max < 1.0)) {
    throw ValidationError("search space: invalid dropout range");
  }
  if (!(weight_decay_min > 0.0 && weight_decay_min <= weight_decay_max)) {
    throw ValidationError("search space: invalid weight decay range");
  }
  if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ValidationError("search space: invalid learning rate range");
}

MlpConfig sample_hyperparams(const SearchSpace& space, std::uint64_t seed, int input_dim, int output_dim) {
  space.validate();
  Rng rng(seed);
  MlpConfig cfg;
  cfg.input_dim = input_dim;
  cfg.output_dim = output_dim;
  cfg.hidden_layers = space.hidden_layers[rng.below(space.hidden_layers.size())];
  const double w = rng.log_uniform(space.width_min, space.width_max);
  cfg.width = std::clamp(static_cast<int>(std::lround(w)), space.width_min, space.width_max);
  cfg.dropout = rng.uniform(space.dropout_min, space.dropout_max);
  cfg.weight_decay = rng.log_uniform(space.weight_decay_min, space.weight_decay_max);
  cfg.learning_rate = rng.log_uniform(space.lr_min, space.lr_max);
  cfg.activation = space.activations[rng.below(space.activations.size())];
  return cfg;
}

std::vector<std::size_t> quality_filter(std::span<const std::pair<double, double>> train_rmse, double pct) {
  if (!(pct > 0.0 && pct < 100.0)) throw ValidationError("quality filter percentile must lie in (0, 100)");
  if (train_rmse.size() < 2) throw ValidationError("quality filter needs at least two records");
  std::vector<double> a, b;
  for (const auto& [ra, rb] : train_rmse) {
    a.push_back(ra);
    b.push_back(rb);
  }
  const double ta = percentile(a, pct);
  const double tb = percentile(b, pct);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < train_rmse.size(); ++i) {
    if (a[i] <= ta && b[i] <= tb) keep.push_back(i);
  }
  return keep;
}

}  // namespace shiftlab

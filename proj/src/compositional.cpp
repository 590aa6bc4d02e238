#include "shiftlab/compositional.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "shiftlab/dataset.hpp"
#include "shiftlab/error.hpp"
#include "shiftlab/io.hpp"
#include "shiftlab/random.hpp"

namespace shiftlab {

namespace {

using Json = nlohmann::json;

const std::array<std::vector<int>, 4> kExpertFeatures = {
    std::vector<int>{kSOLIN, kCOSZRS, kRH, kICEFRAC, kLANDFRAC, kOCNFRAC, kASDIR, kASDIF, kPS},
    std::vector<int>{kSOLIN, kCOSZRS, kRH, kICEFRAC, kLANDFRAC, kOCNFRAC, kASDIR, kASDIF, kPS, kQn},
    std::vector<int>{kRH, kT, kLWUP, kPS},
    std::vector<int>{kRH, kT, kLWUP, kPS, kQn},
};

MlpConfig expert_config(const MlpConfig& base, Expert e) {
  MlpConfig c = base;
  c.input_dim = static_cast<int>(kExpertFeatures[static_cast<std::size_t>(e)].size());
  c.output_dim = 1;
  return c;
}

void check_batch(const CompositionalBatch& b, bool need_targets) {
  const auto n = b.features.rows();
  if (b.features.cols() != kRadiationFeatureCount) throw ValidationError("compositional features need 12 columns");
  if (b.gate.alpha.size() != n || b.gate.day.size() != n) throw ValidationError("gate outputs do not match batch");
  if (need_targets && (b.targets.rows() != n || b.targets.cols() != 2)) {
    throw ValidationError("compositional targets must be [n x 2]");
  }
}

}  // namespace

// ---------------------------------------------------------------------- gate

FrozenGate FrozenGate::from_params(const PhysicalParams& params, double netsw_mean, double netsw_std) {
  if (!(netsw_std > 0.0)) throw ValidationError("NETSW training std must be positive");
  const auto c = params.core();
  FrozenGate g;
  g.w_qn = c.w_qn;
  g.w_rh = c.w_rh;
  g.w_sun = c.w_sun;
  g.tau = c.tau;
  g.s = c.s;
  g.c_night = -netsw_mean / netsw_std;
  return g;
}

CoreCoefficients FrozenGate::coefficients() const {
  CoreCoefficients c{};
  c.w_qn = w_qn;
  c.w_rh = w_rh;
  c.w_sun = w_sun;
  c.tau = tau;
  c.s = s;
  return c;
}

std::string FrozenGate::bytes() const {
  const double fields[] = {w_qn, w_rh, w_sun, tau, s, c_night};
  std::string out(sizeof(fields), '\0');
  std::memcpy(out.data(), fields, sizeof(fields));
  return out;
}

std::string FrozenGate::to_json() const {
  Json j = {{"w_qn", w_qn}, {"w_rh", w_rh}, {"w_sun", w_sun}, {"tau", tau}, {"s", s}, {"c_night", c_night}};
  return j.dump();
}

FrozenGate FrozenGate::from_json(std::string_view text) {
  try {
    const Json j = Json::parse(text);
    FrozenGate g;
    g.w_qn = j.at("w_qn").get<double>();
    g.w_rh = j.at("w_rh").get<double>();
    g.w_sun = j.at("w_sun").get<double>();
    g.tau = j.at("tau").get<double>();
    g.s = j.at("s").get<double>();
    g.c_night = j.at("c_night").get<double>();
    return g;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("gate JSON: ") + e.what());
  }
}

GateOutputs gate(const Eigen::MatrixXd& raw_inputs, const FrozenGate& g) {
  if (raw_inputs.cols() != kRadiationFeatureCount) throw ValidationError("gate expects 12 input columns");
  const CoreCoefficients c = g.coefficients();
  GateOutputs out;
  out.alpha.resize(raw_inputs.rows());
  out.day.resize(raw_inputs.rows());
  for (Eigen::Index i = 0; i < raw_inputs.rows(); ++i) {
    const auto in = RadiationInputs<double>::from_row(raw_inputs.row(i));
    out.alpha(i) = cloud_weight(in, c).w;
    out.day(i) = in.COSZRS > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

const std::vector<int>& expert_features(Expert e) { return kExpertFeatures[static_cast<std::size_t>(e)]; }

Eigen::MatrixXd combine(const Eigen::MatrixXd& f, const Eigen::VectorXd& alpha, const Eigen::VectorXd& day,
                        double c_night) {
  if (f.cols() != 4 || alpha.size() != f.rows() || day.size() != f.rows()) {
    throw ValidationError("combine: expert outputs must be [n x 4] matching alpha and day");
  }
  Eigen::MatrixXd out(f.rows(), 2);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const double a = alpha(i);
    out(i, 0) = day(i) != 0.0 ? (1.0 - a) * f(i, 0) + a * f(i, 1) : c_night;
    out(i, 1) = (1.0 - a) * f(i, 2) + a * f(i, 3);
  }
  return out;
}

CompositionalBatch make_batch(const Eigen::MatrixXd& raw_inputs, const Eigen::MatrixXd& std_features,
                              const Eigen::MatrixXd& std_targets, const FrozenGate& g) {
  if (raw_inputs.rows() != std_features.rows()) throw ValidationError("raw and standardised rows differ");
  CompositionalBatch b{std_features, gate(raw_inputs, g), std_targets};
  check_batch(b, std_targets.size() > 0);
  return b;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<int>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

// --------------------------------------------------------------------- model

CompositionalModel::CompositionalModel(const FrozenGate& gate, const MlpConfig& expert_cfg, std::uint64_t init_seed)
    : gate_(gate) {
  for (int e = 0; e < 4; ++e) {
    experts_[static_cast<std::size_t>(e)] =
        MlpModel(expert_config(expert_cfg, static_cast<Expert>(e)), child_seed(init_seed, static_cast<std::uint64_t>(e)));
  }
}

CompositionalModel::CompositionalModel(const FrozenGate& gate, std::array<MlpModel, 4> experts)
    : gate_(gate), experts_(std::move(experts)) {
  for (int e = 0; e < 4; ++e) {
    const auto& c = experts_[static_cast<std::size_t>(e)].config();
    if (c.input_dim != static_cast<int>(kExpertFeatures[static_cast<std::size_t>(e)].size()) || c.output_dim != 1) {
      throw ValidationError(std::string("expert ") + std::string(kExpertNames[static_cast<std::size_t>(e)]) +
                            " has the wrong input or output width");
    }
  }
}

Eigen::MatrixXd CompositionalModel::expert_outputs(const Eigen::MatrixXd& std_features) const {
  if (std_features.cols() != kRadiationFeatureCount) throw ValidationError("compositional features need 12 columns");
  Eigen::MatrixXd out(std_features.rows(), 4);
  for (std::size_t e = 0; e < 4; ++e) {
    out.col(static_cast<Eigen::Index>(e)) = forward(experts_[e], select_columns(std_features, kExpertFeatures[e]));
  }
  return out;
}

Eigen::MatrixXd CompositionalModel::predict(const CompositionalBatch& batch) const {
  check_batch(batch, false);
  return combine(expert_outputs(batch.features), batch.gate.alpha, batch.gate.day, gate_.c_night);
}

std::size_t CompositionalModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : experts_) n += e.parameter_count();
  return n;
}

bool CompositionalModel::operator==(const CompositionalModel& other) const {
  return gate_.bytes() == other.gate_.bytes() && experts_ == other.experts_;
}

// ------------------------------------------------------------------ training

CompositionalTrainResult train_compositional(const CompositionalBatch& train, const CompositionalBatch& val,
                                             const FrozenGate& gate, const MlpConfig& expert_cfg,
                                             const TrainConfig& train_cfg) {
  train_cfg.validate();
  expert_config(expert_cfg, Expert::SwClear).validate();
  check_batch(train, true);
  check_batch(val, true);
  if (train.features.rows() == 0 || val.features.rows() == 0) {
    throw ValidationError("train_compositional: empty train or validation split");
  }

  CompositionalTrainResult result{CompositionalModel(gate, expert_cfg, init_seed_for(train_cfg.seed)), {}};
  auto& experts = result.model.experts();
  auto best = experts;
  std::array<AdamOptimizer, 4> opt = {
      AdamOptimizer(train_cfg.optimizer, expert_cfg.weight_decay), AdamOptimizer(train_cfg.optimizer, expert_cfg.weight_decay),
      AdamOptimizer(train_cfg.optimizer, expert_cfg.weight_decay), AdamOptimizer(train_cfg.optimizer, expert_cfg.weight_decay)};
  std::array<Eigen::MatrixXd, 4> inputs;
  for (std::size_t e = 0; e < 4; ++e) inputs[e] = select_columns(train.features, kExpertFeatures[e]);

  const auto n = static_cast<std::size_t>(train.features.rows());
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
    std::array<ForwardCache, 4> cache;
    std::size_t b = 0;
    for (std::size_t start = 0; start < n; start += batch, ++b) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const bool full = batch >= n;
      const Eigen::VectorXd alpha = full ? train.gate.alpha : take_rows(train.gate.alpha, idx).col(0).eval();
      const Eigen::VectorXd day = full ? train.gate.day : take_rows(train.gate.day, idx).col(0).eval();
      const Eigen::MatrixXd yb = full ? train.targets : take_rows(train.targets, idx);
      Eigen::MatrixXd f(static_cast<Eigen::Index>(len), 4);
      const std::uint64_t dseed = dropout_seed_for(train_cfg.seed, epoch, b);
      for (std::size_t e = 0; e < 4; ++e) {
        const Eigen::MatrixXd xb = full ? inputs[e] : take_rows(inputs[e], idx);
        f.col(static_cast<Eigen::Index>(e)) = forward(experts[e], xb, true, child_seed(dseed, e), &cache[e]);
      }
      const Eigen::MatrixXd pred = combine(f, alpha, day, gate.c_night);
      const double l = loss(train_cfg.loss, pred, yb);
      if (!std::isfinite(l)) throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch));
      const Eigen::MatrixXd g = loss_gradient(train_cfg.loss, pred, yb);
      const Eigen::ArrayXd a = alpha.array();
      const Eigen::ArrayXd d = day.array();
      const std::array<Eigen::MatrixXd, 4> upstream = {
          Eigen::MatrixXd((g.col(0).array() * d * (1.0 - a)).matrix()),
          Eigen::MatrixXd((g.col(0).array() * d * a).matrix()),
          Eigen::MatrixXd((g.col(1).array() * (1.0 - a)).matrix()),
          Eigen::MatrixXd((g.col(1).array() * a).matrix()),
      };
      for (std::size_t e = 0; e < 4; ++e) opt[e].step(experts[e], backward(experts[e], cache[e], upstream[e]), lr);
      weighted += l * static_cast<double>(len);
    }
    return weighted / static_cast<double>(n);
  };
  hooks.validation_loss = [&] { return loss(train_cfg.loss, result.model.predict(val), val.targets); };
  hooks.save_best = [&] { best = experts; };
  hooks.restore_best = [&] { experts = best; };

  result.record = run_training_loop(train_cfg, expert_cfg.learning_rate, hooks);
  result.record.config = expert_cfg;
  result.record.final_train_rmse = rmse(result.model.predict(train), train.targets);
  return result;
}

// ---------------------------------------------------------------- checkpoint

void save_compositional(const CompositionalModel& model, std::ostream& out) {
  out << kCompositionalMagic << '\n' << "gate " << model.frozen_gate().to_json() << '\n';
  for (std::size_t e = 0; e < 4; ++e) {
    out << "expert " << kExpertNames[e] << '\n';
    save_checkpoint(model.experts()[e], out);
  }
  out << "end\n";
}

CompositionalModel load_compositional(std::istream& in) {
  std::string tok;
  if (!(in >> tok) || tok != kCompositionalMagic) {
    throw ValidationError("compositional checkpoint: missing SHIFTLAB-COMP-v1 header");
  }
  std::string gate_json;
  if (!(in >> tok) || tok != "gate" || !(in >> gate_json)) throw ValidationError("compositional checkpoint: no gate");
  const FrozenGate g = FrozenGate::from_json(gate_json);
  std::array<MlpModel, 4> experts;
  for (std::size_t e = 0; e < 4; ++e) {
    std::string name;
    if (!(in >> tok >> name) || tok != "expert" || name != kExpertNames[e]) {
      throw ValidationError("compositional checkpoint: expected expert " + std::string(kExpertNames[e]));
    }
    experts[e] = load_checkpoint(in);
  }
  if (!(in >> tok) || tok != "end") throw ValidationError("compositional checkpoint: missing end marker");
  return CompositionalModel(g, std::move(experts));
}

void save_compositional(const CompositionalModel& model, const std::string& path) {
  std::ostringstream os;
  save_compositional(model, os);
  write_text_file(path, os.str());
}

CompositionalModel load_compositional(const std::string& path) {
  std::istringstream is(read_text_file(path));
  return load_compositional(is);
}

}  // namespace shiftlab

#include <cmath>
#include <sstream>

#include "shiftlab/io.hpp"
#include "shiftlab/radiation.hpp"

namespace shiftlab {

double calibration_objective(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             const CoreCoefficients& c, const Eigen::Vector2d& std) {
  if (inputs.rows() == 0) throw ValidationError("calibration batch is empty");
  if (inputs.cols() != kRadiationFeatureCount) throw ValidationError("calibration inputs need 12 columns");
  if (targets.rows() != inputs.rows() || targets.cols() != 2) {
    throw ValidationError("calibration targets must be [n x 2] matching the inputs");
  }
  double sw = 0.0, lw = 0.0;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const auto o = forward(RadiationInputs<double>::from_row(inputs.row(i)), c);
    const double e0 = (o.netsw - targets(i, 0)) / std(0);
    const double e1 = (o.flwds - targets(i, 1)) / std(1);
    sw += e0 * e0;
    lw += e1 * e1;
  }
  const double n = static_cast<double>(inputs.rows());
  return sw / n + lw / n;
}

namespace {

class StageProblem {
 public:
  StageProblem(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Eigen::Vector2d& std,
               PhysicalParams& params, std::vector<std::size_t> free)
      : inputs_(inputs), targets_(targets), std_(std), params_(params), free_(std::move(free)) {
    const auto& e = params_.entries();
    lo_.resize(n());
    hi_.resize(n());
    scale_.resize(n());
    for (std::size_t k = 0; k < free_.size(); ++k) {
      const auto& p = e[free_[k]];
      lo_(k) = p.lo;
      hi_(k) = p.hi;
      scale_(k) = std::max({std::abs(p.value), 1e-3 * (p.hi - p.lo), 1e-8});
    }
  }

  Eigen::Index n() const { return static_cast<Eigen::Index>(free_.size()); }

  Eigen::VectorXd theta() const {
    Eigen::VectorXd t(n());
    for (Eigen::Index k = 0; k < n(); ++k) t(k) = params_.entries()[free_[k]].value;
    return t;
  }

  double value(const Eigen::VectorXd& theta) {
    apply(theta);
    const double f = calibration_objective(inputs_, targets_, params_.core(), std_);
    if (std::isnan(f)) {
      std::ostringstream os;
      os << "calibration objective is NaN at parameters {";
      for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = params_.entries()[i];
        os << (i ? ", " : "") << p.name << "=" << format_double(p.value);
      }
      os << "}";
      throw RuntimeFailure(os.str());
    }
    return f;
  }

  // Gradient in scaled coordinates x = theta / scale.
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) {
    Eigen::VectorXd g(n());
    Eigen::VectorXd probe = theta;
    for (Eigen::Index k = 0; k < n(); ++k) {
      const double h = 1e-6 * scale_(k);
      const double up = std::min(theta(k) + h, hi_(k));
      const double dn = std::max(theta(k) - h, lo_(k));
      if (up == dn) {
        g(k) = 0.0;
        continue;
      }
      probe(k) = up;
      const double fu = value(probe);
      probe(k) = dn;
      const double fd = value(probe);
      probe(k) = theta(k);
      g(k) = (fu - fd) / (up - dn) * scale_(k);
    }
    apply(theta);
    return g;
  }

  Eigen::VectorXd project(const Eigen::VectorXd& theta) const { return theta.cwiseMax(lo_).cwiseMin(hi_); }

  void apply(const Eigen::VectorXd& theta) {
    for (Eigen::Index k = 0; k < n(); ++k) params_.set_unchecked(free_[k], theta(k));
  }

  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }
  const Eigen::VectorXd& scale() const { return scale_; }

 private:
  const Eigen::MatrixXd& inputs_;
  const Eigen::MatrixXd& targets_;
  Eigen::Vector2d std_;
  PhysicalParams& params_;
  std::vector<std::size_t> free_;
  Eigen::VectorXd lo_, hi_, scale_;
};

void run_stage(StageProblem& prob, const CalibrationOptions& opt, double& f, StageTrace& trace) {
  const Eigen::Index n = prob.n();
  trace.objective.push_back(f);
  if (n == 0 || f == 0.0) return;

  Eigen::VectorXd theta = prob.theta();
  Eigen::VectorXd g = prob.gradient(theta);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool identity = true;
  const Eigen::VectorXd& scale = prob.scale();

  while (true) {
    if (trace.iterations >= opt.max_iter) {
      trace.hit_max_iter = true;
      break;
    }
    ++trace.iterations;

    // Variables pinned at a bound with the gradient pushing outward.
    std::vector<bool> pinned(static_cast<std::size_t>(n), false);
    for (Eigen::Index k = 0; k < n; ++k) {
      pinned[static_cast<std::size_t>(k)] =
          (theta(k) <= prob.lo()(k) && g(k) > 0.0) || (theta(k) >= prob.hi()(k) && g(k) < 0.0);
    }
    Eigen::VectorXd gf = g;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (pinned[static_cast<std::size_t>(k)]) gf(k) = 0.0;
    }
    if (gf.lpNorm<Eigen::Infinity>() < 1e-14) break;

    auto direction = [&]() {
      Eigen::VectorXd d = -(H * gf);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (pinned[static_cast<std::size_t>(k)]) d(k) = 0.0;
      }
      if (identity) d *= 0.1 / d.lpNorm<Eigen::Infinity>();
      return d;
    };
    Eigen::VectorXd d = direction();
    if (d.dot(gf) >= 0.0) {
      H.setIdentity();
      identity = true;
      d = direction();
    }

    bool accepted = false;
    Eigen::VectorXd theta_new, step_x;
    double f_new = f;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double t = 1.0;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        theta_new = prob.project(theta + t * d.cwiseProduct(scale));
        step_x = (theta_new - theta).cwiseQuotient(scale);
        if (step_x.lpNorm<Eigen::Infinity>() == 0.0) break;
        f_new = prob.value(theta_new);
        if (f_new < f && f_new <= f + 1e-4 * g.dot(step_x)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (identity) break;
        H.setIdentity();
        identity = true;
        d = direction();
      }
    }
    if (!accepted) {
      prob.apply(theta);
      break;
    }

    const Eigen::VectorXd g_new = prob.gradient(theta_new);
    const Eigen::VectorXd y = g_new - g;
    const double sy = step_x.dot(y);
    if (sy > 1e-12 * step_x.norm() * y.norm()) {
      if (identity) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * step_x * y.transpose()) * H * (I - rho * y * step_x.transpose()) +
          rho * step_x * step_x.transpose();
      identity = false;
    }

    const double delta = f - f_new;
    theta = theta_new;
    g = g_new;
    f = f_new;
    ++trace.accepted;
    trace.objective.push_back(f);
    if (delta < opt.tol || f == 0.0) break;
  }
  prob.apply(theta);
}

}  // namespace

CalibrationResult calibrate(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const PhysicalParams& p0,
                            const CalibrationOptions& options) {
  if (inputs.rows() == 0) throw ValidationError("calibration batch is empty");
  if (options.max_iter < 0) throw ValidationError("max_iter must be non-negative");
  if (!(options.tol >= 0.0)) throw ValidationError("tol must be non-negative");
  if (options.stages.empty()) throw ValidationError("calibration needs at least one stage");
  p0.validate();

  Eigen::Vector2d mean = targets.colwise().mean().transpose();
  Eigen::Vector2d std;
  for (int c = 0; c < 2; ++c) {
    std(c) = std::sqrt((targets.col(c).array() - mean(c)).square().mean());
    if (!(std(c) > 0.0)) {
      throw ValidationError(std::string("calibration target ") + std::string(kRadiationTargetNames[c]) +
                            " is constant in the training batch");
    }
  }

  CalibrationResult out;
  out.params = p0;
  double f = calibration_objective(inputs, targets, out.params.core(), std);
  if (std::isnan(f)) throw RuntimeFailure("calibration objective is NaN at the starting parameters");
  out.initial_objective = f;

  bool improved = false;
  for (Stage stage : options.stages) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < out.params.size(); ++i) {
      const auto& e = out.params.entries()[i];
      if (e.active && (stage == Stage::Joint || e.stage == stage)) free.push_back(i);
    }
    StageTrace trace;
    trace.stage = stage;
    StageProblem prob(inputs, targets, std, out.params, std::move(free));
    run_stage(prob, options, f, trace);
    improved = improved || trace.accepted > 0;
    out.iterations += trace.iterations;
    out.stages.push_back(std::move(trace));
  }
  out.final_objective = f;
  out.converged = improved && !out.stages.back().hit_max_iter;
  out.params.validate();
  return out;
}

}  // namespace shiftlab

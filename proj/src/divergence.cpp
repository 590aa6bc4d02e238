#include "shiftlab/divergence.hpp"

namespace shiftlab {

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::ED: return "ED";
    case Estimator::MMD2: return "MMD2";
    case Estimator::KL: return "KL";
  }
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  if (name == "ED" || name == "ed" || name == "energy") return Estimator::ED;
  if (name == "MMD2" || name == "MMD" || name == "mmd" || name == "mmd2") return Estimator::MMD2;
  if (name == "KL" || name == "kl") return Estimator::KL;
  throw ValidationError("unknown divergence estimator '" + std::string(name) + "'");
}

Eigen::MatrixXd jitter(const Eigen::MatrixXd& X, std::uint64_t seed, double relative) {
  const double scale = X.size() ? X.cwiseAbs().maxCoeff() : 0.0;
  const double a = relative * (scale > 0.0 ? scale : 1.0);
  Rng rng(seed);
  Eigen::MatrixXd out = X;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += rng.uniform(-a, a);
  }
  return out;
}

}  // namespace shiftlab

#pragma once

// Two-sample distances: energy distance, RBF-kernel MMD^2 and the kNN
// estimator of KL divergence, plus the PCA reduction used before kNN-KL.
//
// Sample sets are Eigen matrices with one sample per row. Every estimator is
// a pure function of (inputs, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/error.hpp"
#include "shiftlab/random.hpp"

namespace shiftlab {

enum class Estimator { ED, MMD2, KL };

std::string_view to_string(Estimator e);
Estimator parse_estimator(std::string_view name);

struct DivergenceEstimate {
  double value = 0.0;
  Estimator estimator = Estimator::ED;
  std::int64_t pair_budget = 0;
  std::uint64_t seed = 0;
  std::optional<double> bandwidth;
  std::optional<int> k;
  bool exact = false;  // all-pairs plug-in path was used
};

inline constexpr std::int64_t kObservedPairBudget = 500'000;
inline constexpr std::int64_t kPermutationPairBudget = 200'000;
inline constexpr std::size_t kBandwidthSubsample = 5'000;

namespace detail {

template <typename Scalar>
using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
inline Scalar squared_distance(const Scalar* a, const Scalar* b, Eigen::Index d) {
  Scalar acc(0);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Scalar diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}

template <typename Derived>
void check_sample_set(const Eigen::MatrixBase<Derived>& x, const char* what) {
  if (x.rows() < 1) throw ValidationError(std::string(what) + ": empty sample set");
  if (!x.allFinite()) throw ValidationError(std::string(what) + ": non-finite entries");
}

// Lexicographic order on (rows, values); used to evaluate symmetric
// statistics in a canonical argument order so f(X, Y) == f(Y, X) bit for bit.
template <typename Scalar>
bool canonical_less(const RowMajor<Scalar>& a, const RowMajor<Scalar>& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

// Mean of kernel(|x_i - x_j|^2) over all ordered pairs including i == j.
template <typename Scalar, typename Kernel>
double within_mean_exact(const RowMajor<Scalar>& x, Kernel kernel) {
  const Eigen::Index n = x.rows(), d = x.cols();
  double off = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar* xi = x.data() + i * d;
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      row += static_cast<double>(kernel(squared_distance(xi, x.data() + j * d, d)));
    }
    off += row;
  }
  const double diag = static_cast<double>(n) * static_cast<double>(kernel(Scalar(0)));
  return (2.0 * off + diag) / (static_cast<double>(n) * static_cast<double>(n));
}

template <typename Scalar, typename Kernel>
double cross_mean_exact(const RowMajor<Scalar>& x, const RowMajor<Scalar>& y, Kernel kernel) {
  const Eigen::Index n = x.rows(), m = y.rows(), d = x.cols();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar* xi = x.data() + i * d;
    double row = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      row += static_cast<double>(kernel(squared_distance(xi, y.data() + j * d, d)));
    }
    acc += row;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(m));
}

// Monte-Carlo mean over `budget` index pairs with i != j.
template <typename Scalar, typename Kernel>
double within_mean_mc(const RowMajor<Scalar>& x, std::int64_t budget, Rng& rng, Kernel kernel) {
  const auto n = static_cast<std::uint64_t>(x.rows());
  const Eigen::Index d = x.cols();
  double acc = 0.0;
  for (std::int64_t b = 0; b < budget; ++b) {
    const std::uint64_t i = rng.below(n);
    std::uint64_t j = rng.below(n - 1);
    if (j >= i) ++j;
    acc += static_cast<double>(kernel(squared_distance(x.data() + i * d, x.data() + j * d, d)));
  }
  return acc / static_cast<double>(budget);
}

template <typename Scalar, typename Kernel>
double cross_mean_mc(const RowMajor<Scalar>& x, const RowMajor<Scalar>& y, std::int64_t budget, Rng& rng,
                     Kernel kernel) {
  const auto n = static_cast<std::uint64_t>(x.rows());
  const auto m = static_cast<std::uint64_t>(y.rows());
  const Eigen::Index d = x.cols();
  double acc = 0.0;
  for (std::int64_t b = 0; b < budget; ++b) {
    const std::uint64_t i = rng.below(n);
    const std::uint64_t j = rng.below(m);
    acc += static_cast<double>(kernel(squared_distance(x.data() + i * d, y.data() + j * d, d)));
  }
  return acc / static_cast<double>(budget);
}

inline bool budget_covers_all_pairs(std::int64_t budget, Eigen::Index n, Eigen::Index m) {
  const auto nn = static_cast<std::int64_t>(n), mm = static_cast<std::int64_t>(m);
  const std::int64_t need = std::max({nn * mm, nn * (nn - 1) / 2, mm * (mm - 1) / 2});
  return budget >= need;
}

// Generic two-sample statistic  w_x + w_y - 2 c  (MMD form) or
// 2 c - w_x - w_y (energy form), with the shared pair-sampling contract.
template <typename DX, typename DY, typename Kernel>
double two_sample_statistic(const Eigen::MatrixBase<DX>& X, const Eigen::MatrixBase<DY>& Y, std::int64_t budget,
                            std::uint64_t seed, Kernel kernel, bool energy_form, bool& exact) {
  using Scalar = typename DX::Scalar;
  check_sample_set(X, "X");
  check_sample_set(Y, "Y");
  if (X.cols() != Y.cols()) throw ValidationError("sample sets differ in dimension");
  if (budget < 1) throw ValidationError("pair budget must be at least 1");
  RowMajor<Scalar> a = X.template cast<Scalar>();
  RowMajor<Scalar> b = Y.template cast<Scalar>();
  if (canonical_less(b, a)) std::swap(a, b);

  double wx, wy, cross;
  exact = budget_covers_all_pairs(budget, a.rows(), b.rows());
  if (exact) {
    wx = within_mean_exact<Scalar>(a, kernel);
    wy = within_mean_exact<Scalar>(b, kernel);
    cross = cross_mean_exact<Scalar>(a, b, kernel);
  } else {
    if (a.rows() < 2 || b.rows() < 2) throw ValidationError("Monte-Carlo path needs at least two samples per set");
    Rng rx(child_seed(seed, 1)), ry(child_seed(seed, 2)), rc(child_seed(seed, 0));
    wx = within_mean_mc<Scalar>(a, budget, rx, kernel);
    wy = within_mean_mc<Scalar>(b, budget, ry, kernel);
    cross = cross_mean_mc<Scalar>(a, b, budget, rc, kernel);
  }
  return energy_form ? 2.0 * cross - wx - wy : wx + wy - 2.0 * cross;
}

}  // namespace detail

/// Energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|.
///
/// Each expectation is a Monte-Carlo mean over `pair_budget` uniformly drawn
/// index pairs (distinct indices within a set). When the budget covers every
/// distinct pair of every term, the exact all-pairs plug-in (V-statistic)
/// estimate is returned instead; it is non-negative.
template <typename DX, typename DY>
DivergenceEstimate energy_distance(const Eigen::MatrixBase<DX>& X, const Eigen::MatrixBase<DY>& Y,
                                   std::int64_t pair_budget = kObservedPairBudget, std::uint64_t seed = 0) {
  using Scalar = typename DX::Scalar;
  DivergenceEstimate out;
  out.estimator = Estimator::ED;
  out.pair_budget = pair_budget;
  out.seed = seed;
  out.value = detail::two_sample_statistic(
      X, Y, pair_budget, seed, [](Scalar sq) { return std::sqrt(sq); }, true, out.exact);
  return out;
}

/// MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 bandwidth^2)); same pair contract
/// as energy_distance.
template <typename DX, typename DY>
DivergenceEstimate mmd_rbf(const Eigen::MatrixBase<DX>& X, const Eigen::MatrixBase<DY>& Y, double bandwidth,
                           std::int64_t pair_budget = kObservedPairBudget, std::uint64_t seed = 0) {
  using Scalar = typename DX::Scalar;
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ValidationError("MMD bandwidth must be positive");
  const Scalar scale = Scalar(1) / (Scalar(2) * Scalar(bandwidth) * Scalar(bandwidth));
  DivergenceEstimate out;
  out.estimator = Estimator::MMD2;
  out.pair_budget = pair_budget;
  out.seed = seed;
  out.bandwidth = bandwidth;
  out.value = detail::two_sample_statistic(
      X, Y, pair_budget, seed, [scale](Scalar sq) { return std::exp(-sq * scale); }, false, out.exact);
  return out;
}

/// Median of pairwise Euclidean distances over min(subsample, n) points drawn
/// without replacement.
template <typename Derived>
double median_heuristic_bandwidth(const Eigen::MatrixBase<Derived>& X, std::size_t subsample = kBandwidthSubsample,
                                  std::uint64_t seed = 0) {
  using Scalar = typename Derived::Scalar;
  detail::check_sample_set(X, "X");
  const auto n = static_cast<std::size_t>(X.rows());
  if (n < 2) throw ValidationError("median heuristic needs at least two points");
  if (subsample < 2) throw ValidationError("median heuristic subsample must be at least 2");
  const std::size_t s = std::min(subsample, n);
  std::vector<std::size_t> idx;
  if (s == n) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  } else {
    Rng rng(seed);
    idx = rng.sample_without_replacement(n, s);
  }
  detail::RowMajor<Scalar> pts(static_cast<Eigen::Index>(s), X.cols());
  for (std::size_t i = 0; i < s; ++i) pts.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
  const Eigen::Index d = pts.cols();
  std::vector<double> dist;
  dist.reserve(s * (s - 1) / 2);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = i + 1; j < s; ++j) {
      dist.push_back(static_cast<double>(std::sqrt(detail::squared_distance(
          pts.data() + static_cast<Eigen::Index>(i) * d, pts.data() + static_cast<Eigen::Index>(j) * d, d))));
    }
  }
  const std::size_t m = dist.size();
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double median = *mid;
  if (m % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), mid);
    median = 0.5 * (lower + median);
  }
  if (!(median > 0.0)) throw ValidationError("median pairwise distance is zero; bandwidth must be positive");
  return median;
}

// ------------------------------------------------------------------------ PCA

template <typename Scalar = double>
struct PcaModel {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> components;  // d x q, orthonormal columns
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> explained_variance_ratio;  // q, non-increasing
  int q = 2;
};

/// Top-q eigenvectors of the sample covariance. Each component is signed so
/// its largest-magnitude entry is positive.
template <typename Derived>
PcaModel<typename Derived::Scalar> pca_fit(const Eigen::MatrixBase<Derived>& X, int q = 2) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  detail::check_sample_set(X, "X");
  if (q < 1 || q > X.cols()) throw ValidationError("PCA: q must lie in [1, d]");
  if (X.rows() <= q) throw ValidationError("PCA: need more samples than components");

  PcaModel<Scalar> model;
  model.q = q;
  model.mean = X.colwise().mean().transpose();
  const Mat centered = X.rowwise() - model.mean.transpose();
  const Mat cov = (centered.transpose() * centered) / Scalar(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw RuntimeFailure("PCA: eigen-decomposition failed");

  const Eigen::Index d = X.cols();
  const auto& values = eig.eigenvalues();  // ascending
  const Scalar total = values.cwiseMax(Scalar(0)).sum();
  const Scalar top = values(d - 1);
  if (!(top > Scalar(0))) throw ValidationError("PCA: covariance is zero");
  const Scalar rank_tol = top * Scalar(d) * std::numeric_limits<Scalar>::epsilon() * Scalar(16);
  if (values(d - q) <= rank_tol) throw ValidationError("PCA: q exceeds the rank of the covariance");

  model.components.resize(d, q);
  model.explained_variance_ratio.resize(q);
  for (int c = 0; c < q; ++c) {
    auto v = eig.eigenvectors().col(d - 1 - c).eval();
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < Scalar(0)) v = -v;
    model.components.col(c) = v;
    model.explained_variance_ratio(c) = std::max(Scalar(0), values(d - 1 - c)) / total;
  }
  return model;
}

template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pca_project(const PcaModel<Scalar>& model,
                                                                   const Eigen::MatrixBase<Derived>& X) {
  if (X.cols() != model.mean.size()) throw ValidationError("PCA: dimension mismatch");
  return (X.template cast<Scalar>().rowwise() - model.mean.transpose()) * model.components;
}

// --------------------------------------------------------------------- kNN-KL

namespace detail {

// Distance from `p` to its k-th nearest row of `pts`, skipping row `skip`.
template <typename Scalar>
double kth_neighbour_distance(const Scalar* p, const RowMajor<Scalar>& pts, int k, Eigen::Index skip,
                              std::vector<Scalar>& scratch) {
  const Eigen::Index n = pts.rows(), d = pts.cols();
  scratch.clear();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == skip) continue;
    scratch.push_back(squared_distance(p, pts.data() + j * d, d));
  }
  auto kth = scratch.begin() + (k - 1);
  std::nth_element(scratch.begin(), kth, scratch.end());
  return std::sqrt(static_cast<double>(*kth));
}

}  // namespace detail

/// kNN estimate of D_KL(F_X || F_Y):
///   (d/n) sum_i log(nu_k(x_i) / rho_k(x_i)) + log(m / (n - 1)).
/// Asymmetric; zero neighbour distances are rejected as duplicate points.
template <typename DX, typename DY>
DivergenceEstimate knn_kl(const Eigen::MatrixBase<DX>& X, const Eigen::MatrixBase<DY>& Y, int k = 5) {
  using Scalar = typename DX::Scalar;
  detail::check_sample_set(X, "X");
  detail::check_sample_set(Y, "Y");
  if (X.cols() != Y.cols()) throw ValidationError("sample sets differ in dimension");
  if (k < 1) throw ValidationError("kNN-KL: k must be at least 1");
  const Eigen::Index n = X.rows(), m = Y.rows();
  if (n <= k) throw ValidationError("kNN-KL: need n > k");
  if (m < k) throw ValidationError("kNN-KL: need m >= k");
  const detail::RowMajor<Scalar> x = X;
  const detail::RowMajor<Scalar> y = Y.template cast<Scalar>();
  const Eigen::Index d = x.cols();

  std::vector<Scalar> scratch;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar* xi = x.data() + i * d;
    const double rho = detail::kth_neighbour_distance(xi, x, k, i, scratch);
    const double nu = detail::kth_neighbour_distance(xi, y, k, -1, scratch);
    if (!(rho > 0.0) || !(nu > 0.0)) {
      throw ValidationError("kNN-KL: duplicate points give a zero neighbour distance");
    }
    acc += std::log(nu / rho);
  }
  DivergenceEstimate out;
  out.estimator = Estimator::KL;
  out.k = k;
  out.exact = true;
  out.value = static_cast<double>(d) / static_cast<double>(n) * acc +
              std::log(static_cast<double>(m) / static_cast<double>(n - 1));
  return out;
}

/// Adds uniform noise in [-a, a], a = relative * max|x|, to break ties before
/// knn_kl. Opt-in; the estimator itself never perturbs its inputs.
Eigen::MatrixXd jitter(const Eigen::MatrixXd& X, std::uint64_t seed, double relative = 1e-9);

}  // namespace shiftlab

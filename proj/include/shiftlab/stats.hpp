#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/divergence.hpp"

namespace shiftlab {

/// A two-sample statistic d(A, B; seed). Larger values mean more different.
using Statistic = std::function<double(const Eigen::MatrixXd&, const Eigen::MatrixXd&, std::uint64_t)>;

struct StatisticOptions {
  std::int64_t pair_budget = kPermutationPairBudget;
  std::optional<double> bandwidth;  // MMD; median heuristic on the first argument when unset
  int k = 5;                        // KL
  int pca_components = 2;           // KL; 0 disables the PCA reduction
};

/// Builds the statistic for an estimator. KL reports D_KL(F_B || F_A) after
/// a PCA fitted on A (the reference).
Statistic make_statistic(Estimator estimator, const StatisticOptions& options);

struct PermutationTestResult {
  double observed = 0.0;
  std::vector<double> null_samples;
  double p_value = 1.0;
  int B = 0;
  std::uint64_t seed = 0;
  std::string statistic_kind;
};

/// Permutation test of H0: F_X = F_Y. The observed statistic uses the full
/// sets; each permutation pools X and Y and draws two disjoint halves of size
/// s = min(n_X, n_Y) without replacement.
/// p = (#{b : d_b >= d} + 1) / (B + 1).
PermutationTestResult permutation_test(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                       const Statistic& statistic, int B, std::uint64_t seed,
                                       std::string statistic_kind = "custom", std::size_t workers = 1);

struct CorrelationResult {
  double coefficient = 0.0;
  double p_two_tailed = 1.0;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

struct CorrelationReport {
  double pearson_r = 0.0;
  double pearson_p = 1.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
  double ols_slope = 0.0;
  double ols_intercept = 0.0;
  std::size_t n = 0;
};

CorrelationResult pearson(std::span<const double> x, std::span<const double> y);
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);
LineFit ols_fit(std::span<const double> x, std::span<const double> y);
CorrelationReport correlate(std::span<const double> x, std::span<const double> y);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> v);

/// Regularised incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student-t with `dof` degrees of freedom.
double student_t_two_tailed(double t, double dof);

/// Linear-interpolation percentile between order statistics, p in [0, 100].
double percentile(std::span<const double> values, double p);

/// Kolmogorov-Smirnov distance between the empirical CDF of `u` and U(0,1).
double ks_distance_uniform(std::span<const double> u);

}  // namespace shiftlab

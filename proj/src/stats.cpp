#include "shiftlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "shiftlab/error.hpp"
#include "shiftlab/parallel.hpp"

namespace shiftlab {

Statistic make_statistic(Estimator estimator, const StatisticOptions& options) {
  switch (estimator) {
    case Estimator::ED:
      return [budget = options.pair_budget](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::uint64_t seed) {
        return energy_distance(a, b, budget, seed).value;
      };
    case Estimator::MMD2:
      return [options](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::uint64_t seed) {
        const double bw = options.bandwidth ? *options.bandwidth
                                            : median_heuristic_bandwidth(a, kBandwidthSubsample, seed);
        return mmd_rbf(a, b, bw, options.pair_budget, seed).value;
      };
    case Estimator::KL:
      return [options](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::uint64_t) {
        if (options.pca_components > 0 && options.pca_components < a.cols()) {
          const auto pca = pca_fit(a, options.pca_components);
          return knn_kl(pca_project(pca, b), pca_project(pca, a), options.k).value;
        }
        return knn_kl(b, a, options.k).value;
      };
  }
  throw ValidationError("unknown estimator");
}

PermutationTestResult permutation_test(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                       const Statistic& statistic, int B, std::uint64_t seed,
                                       std::string statistic_kind, std::size_t workers) {
  if (B < 1) throw ValidationError("permutation test needs B >= 1");
  if (X.cols() != Y.cols()) throw ValidationError("sample sets differ in dimension");
  const auto nx = static_cast<std::size_t>(X.rows());
  const auto ny = static_cast<std::size_t>(Y.rows());
  const std::size_t s = std::min(nx, ny);
  if (s < 1) throw ValidationError("permutation test needs non-empty sample sets");
  Eigen::MatrixXd pool(static_cast<Eigen::Index>(nx + ny), X.cols());
  pool << X, Y;
  if (static_cast<std::size_t>(pool.rows()) < 2 * s) throw ValidationError("pool smaller than 2s");

  PermutationTestResult out;
  out.B = B;
  out.seed = seed;
  out.statistic_kind = std::move(statistic_kind);
  out.observed = statistic(X, Y, child_seed(seed, ~std::uint64_t{0}));
  out.null_samples.assign(static_cast<std::size_t>(B), 0.0);

  parallel_for(static_cast<std::size_t>(B), workers, [&](std::size_t b) {
    Rng rng(child_seed(seed, 2 * b));
    const auto pick = rng.sample_without_replacement(static_cast<std::size_t>(pool.rows()), 2 * s);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(s), pool.cols());
    Eigen::MatrixXd c(static_cast<Eigen::Index>(s), pool.cols());
    for (std::size_t i = 0; i < s; ++i) {
      a.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(pick[i]));
      c.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(pick[s + i]));
    }
    try {
      out.null_samples[b] = statistic(a, c, child_seed(seed, 2 * b + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("permutation " + std::to_string(b) + ": " + e.what());
    } catch (const std::exception& e) {
      throw RuntimeFailure("permutation " + std::to_string(b) + ": " + e.what());
    }
  });

  std::size_t exceed = 0;
  for (double d : out.null_samples) {
    if (d >= out.observed) ++exceed;
  }
  out.p_value = static_cast<double>(exceed + 1) / static_cast<double>(B + 1);
  return out;
}

// --------------------------------------------------------------- t and beta

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw RuntimeFailure("incomplete beta continued fraction did not converge");
}

void check_pair(std::span<const double> x, std::span<const double> y, std::size_t min_n) {
  if (x.size() != y.size()) throw ValidationError("vectors differ in length");
  if (x.size() < min_n) throw ValidationError("need at least " + std::to_string(min_n) + " observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("non-finite observation");
  }
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (x < 0.0 || x > 1.0) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double dof) {
  if (!(dof > 0.0)) throw ValidationError("Student-t needs positive degrees of freedom");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

// ------------------------------------------------------------- correlations

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  if (is_constant(x) || is_constant(y)) throw ValidationError("correlation undefined for a constant vector");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  CorrelationResult out;
  out.coefficient = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double r2 = out.coefficient * out.coefficient;
  if (r2 >= 1.0) {
    out.p_two_tailed = 0.0;
  } else {
    const double t = out.coefficient * std::sqrt((n - 2.0) / (1.0 - r2));
    out.p_two_tailed = student_t_two_tailed(t, n - 2.0);
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  if (is_constant(x) || is_constant(y)) throw ValidationError("correlation undefined for a constant vector");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

LineFit ols_fit(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2);
  if (is_constant(x)) throw ValidationError("OLS undefined for constant x");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

CorrelationReport correlate(std::span<const double> x, std::span<const double> y) {
  CorrelationReport rep;
  rep.n = x.size();
  const auto p = pearson(x, y);
  const auto s = spearman(x, y);
  const auto fit = ols_fit(x, y);
  rep.pearson_r = p.coefficient;
  rep.pearson_p = p.p_two_tailed;
  rep.spearman_rho = s.coefficient;
  rep.spearman_p = s.p_two_tailed;
  rep.ols_slope = fit.slope;
  rep.ols_intercept = fit.intercept;
  return rep;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double ks_distance_uniform(std::span<const double> u) {
  if (u.empty()) throw ValidationError("KS distance of an empty sample");
  std::vector<double> v(u.begin(), u.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = std::clamp(v[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace shiftlab

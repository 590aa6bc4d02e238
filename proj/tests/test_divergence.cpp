#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "shiftlab/divergence.hpp"
#include "shiftlab/error.hpp"
#include "shiftlab/random.hpp"

using namespace shiftlab;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(int n, int d, double mean, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = mean + rng.normal();
  }
  return m;
}

// Straightforward double loops over every ordered pair.
double dist(const MatrixXd& a, int i, const MatrixXd& b, int j) {
  double s = 0.0;
  for (int k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
  return std::sqrt(s);
}

double brute_pair_mean(const MatrixXd& a, const MatrixXd& b, double (*kernel)(double, double), double h) {
  long double acc = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < b.rows(); ++j) acc += kernel(dist(a, i, b, j), h);
  }
  return static_cast<double>(acc / (static_cast<long double>(a.rows()) * b.rows()));
}

double k_abs(double r, double) { return r; }
double k_rbf(double r, double h) { return std::exp(-r * r / (2.0 * h * h)); }

double brute_ed(const MatrixXd& x, const MatrixXd& y) {
  return 2.0 * brute_pair_mean(x, y, k_abs, 0) - brute_pair_mean(x, x, k_abs, 0) - brute_pair_mean(y, y, k_abs, 0);
}

double brute_mmd(const MatrixXd& x, const MatrixXd& y, double h) {
  return brute_pair_mean(x, x, k_rbf, h) + brute_pair_mean(y, y, k_rbf, h) - 2.0 * brute_pair_mean(x, y, k_rbf, h);
}

// 1-D ED with O(n) memory and a plain loop; used for the large-n reference.
double brute_ed_1d(const std::vector<double>& x, const std::vector<double>& y) {
  auto mean_abs = [](const std::vector<double>& a, const std::vector<double>& b) {
    long double acc = 0.0;
    for (double u : a) {
      double row = 0.0;
      for (double v : b) row += std::abs(u - v);
      acc += row;
    }
    return static_cast<double>(acc / (static_cast<long double>(a.size()) * b.size()));
  };
  return 2.0 * mean_abs(x, y) - mean_abs(x, x) - mean_abs(y, y);
}

constexpr std::int64_t kAllPairs = std::int64_t{1} << 40;

}  // namespace

TEST_CASE("energy distance: point masses and identity") {
  MatrixXd x = MatrixXd::Zero(10, 2), y(10, 2);
  y.col(0).setConstant(3.0);
  y.col(1).setConstant(4.0);
  const auto e = energy_distance(x, y, kAllPairs);
  CHECK(e.exact);
  CHECK(e.value == 10.0);
  CHECK(energy_distance(y, y, kAllPairs).value == 0.0);
  // Monte Carlo with distinct within-set indices is also exact for point masses.
  CHECK(energy_distance(x, y, 50, 3).value == 10.0);
}

TEST_CASE("energy distance: exact path matches brute force, n = 5000") {
  const MatrixXd x = gaussian(5000, 1, 0.0, 1), y = gaussian(5000, 1, 1.0, 2);
  const auto e = energy_distance(x, y, kAllPairs);
  REQUIRE(e.exact);
  std::vector<double> xs(x.data(), x.data() + x.size()), ys(y.data(), y.data() + y.size());
  CHECK(std::abs(e.value - brute_ed_1d(xs, ys)) < 1e-12);

  // Large-n value from the same oracle.
  const MatrixXd xl = gaussian(50000, 1, 0.0, 3), yl = gaussian(50000, 1, 1.0, 4);
  std::vector<double> xls(xl.data(), xl.data() + xl.size()), yls(yl.data(), yl.data() + yl.size());
  const double population = brute_ed_1d(xls, yls);
  CHECK(std::abs(e.value - population) < 0.05 * population);
}

TEST_CASE("MMD: closed forms and brute force") {
  MatrixXd x = MatrixXd::Zero(8, 3);
  CHECK(mmd_rbf(x, x, 1.0, kAllPairs).value == 0.0);
  MatrixXd y = MatrixXd::Zero(8, 3);
  y(0, 0) = 0.0;
  y.col(0).setConstant(2.0);  // distance r = 2
  const double h = 1.5;
  CHECK(mmd_rbf(x, y, h, kAllPairs).value == doctest::Approx(2.0 - 2.0 * std::exp(-4.0 / (2 * h * h))).epsilon(1e-14));
  CHECK_THROWS_AS(mmd_rbf(x, y, 0.0, kAllPairs), ValidationError);
  CHECK_THROWS_AS(mmd_rbf(x, y, -1.0, kAllPairs), ValidationError);

  const MatrixXd a = gaussian(5000, 1, 0.0, 5), b = gaussian(5000, 1, 1.0, 6);
  const auto m = mmd_rbf(a, b, 1.0, kAllPairs);
  CHECK(std::abs(m.value - brute_mmd(a, b, 1.0)) < 1e-12);
}

TEST_CASE("exact-path oracles on random instances") {
  Rng rng(99);
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 20 + static_cast<int>(rng.below(280)), m = 20 + static_cast<int>(rng.below(280));
    const int d = 1 + static_cast<int>(rng.below(5));
    const MatrixXd x = gaussian(n, d, 0.0, 1000 + inst), y = gaussian(m, d, 0.3, 2000 + inst);
    const double h = 0.5 + rng.uniform();
    CHECK(std::abs(energy_distance(x, y, kAllPairs).value - brute_ed(x, y)) < 1e-12);
    CHECK(std::abs(mmd_rbf(x, y, h, kAllPairs).value - brute_mmd(x, y, h)) < 1e-12);
  }
}

TEST_CASE("properties: symmetry, non-negativity, determinism, scale") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const MatrixXd x = gaussian(60, 3, 0.0, 10 + t), y = gaussian(45, 3, rng.uniform(0, 1), 20 + t);
    const double ed = energy_distance(x, y, kAllPairs).value;
    CHECK(ed == energy_distance(y, x, kAllPairs).value);
    CHECK(ed >= -1e-10);
    CHECK(mmd_rbf(x, y, 1.0, kAllPairs).value >= -1e-10);
    CHECK(mmd_rbf(x, y, 1.0, kAllPairs).value == mmd_rbf(y, x, 1.0, kAllPairs).value);
    const double c = 0.5 + 3.0 * rng.uniform();
    const MatrixXd cx = c * x, cy = c * y;
    CHECK(energy_distance(cx, cy, kAllPairs).value == doctest::Approx(c * ed).epsilon(1e-12));
    // Monte-Carlo path: deterministic and symmetric under matched seeds.
    const auto a = energy_distance(x, y, 500, 42).value;
    CHECK(a == energy_distance(x, y, 500, 42).value);
    CHECK(a == energy_distance(y, x, 500, 42).value);
    CHECK_FALSE(energy_distance(x, y, 500, 42).exact);
  }
}

TEST_CASE("Monte-Carlo estimate approaches the exact value") {
  const MatrixXd x = gaussian(400, 2, 0.0, 1), y = gaussian(400, 2, 0.5, 2);
  const double exact = energy_distance(x, y, kAllPairs).value;
  const double mc = energy_distance(x, y, 200000, 7).value;
  CHECK(std::abs(mc - exact) < 0.02);
}

TEST_CASE("errors: empty sets and dimension mismatch") {
  const MatrixXd x = gaussian(5, 2, 0, 1), y = gaussian(5, 3, 0, 2), e(0, 2);
  CHECK_THROWS_AS(energy_distance(x, y, 10), ValidationError);
  CHECK_THROWS_AS(energy_distance(x, e, 10), ValidationError);
  CHECK_THROWS_AS(energy_distance(x, x, 0), ValidationError);
  CHECK_THROWS_AS(mmd_rbf(x, y, 1.0, 10), ValidationError);
}

TEST_CASE("median heuristic bandwidth") {
  MatrixXd two(2, 1);
  two << 0, 1;
  CHECK(median_heuristic_bandwidth(two) == 1.0);
  MatrixXd three(3, 1);
  three << 0, 1, 2;
  CHECK(median_heuristic_bandwidth(three) == 1.0);
  MatrixXd same = MatrixXd::Ones(4, 2);
  CHECK_THROWS_AS(median_heuristic_bandwidth(same), ValidationError);

  const MatrixXd g = gaussian(5000, 4, 0.0, 8);
  std::vector<double> all;
  all.reserve(5000ull * 4999 / 2);
  for (int i = 0; i < g.rows(); ++i) {
    for (int j = i + 1; j < g.rows(); ++j) all.push_back(dist(g, i, g, j));
  }
  std::sort(all.begin(), all.end());
  const std::size_t m = all.size();
  const double med = m % 2 ? all[m / 2] : 0.5 * (all[m / 2 - 1] + all[m / 2]);
  CHECK(std::abs(median_heuristic_bandwidth(g, 5000, 1) - med) < 1e-12);

  // Subsampling is deterministic per seed.
  const MatrixXd big = gaussian(800, 2, 0.0, 9);
  CHECK(median_heuristic_bandwidth(big, 100, 3) == median_heuristic_bandwidth(big, 100, 3));
}

TEST_CASE("PCA") {
  SUBCASE("points on the line y = x") {
    MatrixXd x(50, 2);
    for (int i = 0; i < 50; ++i) x(i, 0) = x(i, 1) = i * 0.1 - 2.0;
    const auto p = pca_fit(x, 1);
    CHECK(p.components(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(p.components(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(p.explained_variance_ratio(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(pca_fit(x, 2), ValidationError);  // rank 1
  }
  SUBCASE("isotropic Gaussian") {
    const MatrixXd x = gaussian(10000, 2, 0.0, 4);
    const auto p = pca_fit(x, 2);
    CHECK(std::abs(p.explained_variance_ratio(0) - 0.5) < 0.05);
    CHECK(std::abs(p.explained_variance_ratio(1) - 0.5) < 0.05);
    CHECK(p.explained_variance_ratio(0) >= p.explained_variance_ratio(1));
    // Oracle: eigenvalues of the sample covariance computed directly.
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const MatrixXd c = x.rowwise() - mu;
    const Eigen::Matrix2d cov = c.transpose() * c / double(x.rows() - 1);
    const double tr = cov.trace(), det = cov.determinant();
    const double l1 = 0.5 * (tr + std::sqrt(tr * tr - 4 * det));
    CHECK(p.explained_variance_ratio(0) == doctest::Approx(l1 / tr).epsilon(1e-10));
  }
  SUBCASE("orthonormal components, sign convention, centering") {
    const MatrixXd x = gaussian(300, 5, 1.0, 6) * Eigen::MatrixXd::Random(5, 5);
    const auto p = pca_fit(x, 3);
    const MatrixXd gram = p.components.transpose() * p.components;
    CHECK((gram - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
    for (int c = 0; c < 3; ++c) {
      Eigen::Index arg;
      p.components.col(c).cwiseAbs().maxCoeff(&arg);
      CHECK(p.components(arg, c) > 0);
      if (c > 0) CHECK(p.explained_variance_ratio(c) <= p.explained_variance_ratio(c - 1));
      CHECK(p.explained_variance_ratio(c) >= 0.0);
      CHECK(p.explained_variance_ratio(c) <= 1.0);
    }
    const MatrixXd mean_row = p.mean.transpose();
    CHECK(pca_project(p, mean_row).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("kNN-KL against closed-form Gaussian KL") {
  const MatrixXd x = gaussian(2000, 2, 0.0, 1), y = gaussian(2000, 2, 0.0, 2);
  CHECK(std::abs(knn_kl(x, y, 5).value) < 0.1);

  MatrixXd shifted = gaussian(2000, 2, 0.0, 3);
  shifted.col(0).array() += 1.0;
  const double fwd = knn_kl(x, shifted, 5).value;
  const double bwd = knn_kl(shifted, x, 5).value;
  CHECK(std::abs(fwd - 0.5) < 0.1);
  CHECK(std::abs(bwd - 0.5) < 0.1);
  CHECK(fwd != bwd);

  MatrixXd dup = MatrixXd::Zero(10, 2);
  CHECK_THROWS_AS(knn_kl(dup, x, 3), ValidationError);
  CHECK_NOTHROW(knn_kl(jitter(dup, 1, 1e-3) + MatrixXd::Constant(10, 2, 1.0), x, 3));
  CHECK_THROWS_AS(knn_kl(x.topRows(5), y, 5), ValidationError);
}

TEST_CASE("property: kNN-KL error shrinks as n grows") {
  const std::vector<int> sizes = {500, 1000, 2000, 4000};
  std::vector<double> err;
  for (int n : sizes) {
    double mean = 0.0;
    for (int s = 0; s < 20; ++s) {
      const MatrixXd x = gaussian(n, 2, 0.0, 100 + s);
      MatrixXd y = gaussian(n, 2, 0.0, 200 + s);
      y.col(0).array() += 1.0;
      mean += knn_kl(x, y, 5).value / 20.0;
    }
    err.push_back(std::abs(mean - 0.5));
  }
  CHECK(err.back() < err.front());
  for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] <= err[i - 1] + 0.005);
}

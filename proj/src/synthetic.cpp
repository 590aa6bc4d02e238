#include "shiftlab/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "shiftlab/error.hpp"
#include "shiftlab/random.hpp"

namespace shiftlab {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kSolarConstant = 1361.0;

std::vector<ClimateDataset::SampleKey> dense_keys(std::size_t n_times, std::size_t n_cells) {
  std::vector<ClimateDataset::SampleKey> keys;
  keys.reserve(n_times * n_cells);
  for (std::size_t t = 0; t < n_times; ++t) {
    for (std::size_t c = 0; c < n_cells; ++c) keys.push_back({t, c});
  }
  return keys;
}

}  // namespace

void CovariateShiftSpec::validate() const {
  if (n_cells < 1) throw ValidationError("synthetic: n_cells must be >= 1");
  if (n_years < 1) throw ValidationError("synthetic: n_years must be >= 1");
  if (steps_per_month < 1) throw ValidationError("synthetic: steps_per_month must be >= 1");
  if (input_dim < 1) throw ValidationError("synthetic: input_dim must be >= 1");
  if (!std::isfinite(shift) || !std::isfinite(trend)) throw ValidationError("synthetic: shift must be finite");
  if (!(noise >= 0.0)) throw ValidationError("synthetic: noise must be non-negative");
}

double planted_map(const Eigen::Ref<const Eigen::VectorXd>& x) {
  double y = 0.25 * x(0) * x(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y += std::sin(x(i) + static_cast<double>(i)) / static_cast<double>(i + 1);
  }
  return y;
}

ClimateDataset generate_covariate_shift(const CovariateShiftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto d = static_cast<Eigen::Index>(spec.input_dim);

  std::vector<GridCell> cells;
  for (int c = 0; c < spec.n_cells; ++c) {
    const double lat = spec.n_cells == 1 ? 0.0 : -60.0 + 120.0 * c / (spec.n_cells - 1);
    cells.push_back({c, lat, 10.0 * c});
  }
  std::vector<TimeStep> times;
  for (int y = 0; y < spec.n_years; ++y) {
    for (int m = 1; m <= 12; ++m) {
      for (int s = 0; s < spec.steps_per_month; ++s) {
        times.push_back({static_cast<long>(times.size()), m, spec.first_year + y});
      }
    }
  }
  auto keys = dense_keys(times.size(), cells.size());
  const auto n = static_cast<Eigen::Index>(keys.size());
  const Eigen::VectorXd direction = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));

  Eigen::MatrixXd X(n, d), Y(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = times[keys[static_cast<std::size_t>(i)].time];
    const double step = kSeasonSteps[static_cast<int>(season_of(t.month))];
    Eigen::VectorXd x(d);
    for (Eigen::Index j = 0; j < d; ++j) x(j) = rng.normal();
    x += spec.shift * step * direction;
    x(0) += spec.trend * static_cast<double>(*t.year - spec.first_year);
    X.row(i) = x.transpose();
    Y(i, 0) = planted_map(x) + spec.noise * rng.normal();
  }
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  return ClimateDataset(std::move(times), std::move(cells), std::move(keys), std::move(X), std::move(names),
                        std::move(Y), {"y"});
}

void RadiationSyntheticSpec::validate() const {
  if (latitudes.empty()) throw ValidationError("synthetic: no latitudes");
  for (double lat : latitudes) {
    if (!(lat > -90.0 && lat < 90.0)) throw ValidationError("synthetic: latitudes must lie in (-90, 90)");
  }
  if (lons_per_lat < 1 || n_years < 1 || days_per_month < 1 || hours_per_day < 1) {
    throw ValidationError("synthetic: grid and calendar counts must be >= 1");
  }
  if (!(netsw_noise >= 0.0) || !(flwds_noise >= 0.0)) throw ValidationError("synthetic: noise must be >= 0");
  truth.validate();
}

ClimateDataset generate_radiation(const RadiationSyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const CoreCoefficients coef = spec.truth.core();

  std::vector<GridCell> cells;
  std::vector<double> land;
  for (double lat : spec.latitudes) {
    for (int k = 0; k < spec.lons_per_lat; ++k) {
      cells.push_back({static_cast<int>(cells.size()), lat, 360.0 * k / spec.lons_per_lat});
      land.push_back(rng.uniform(0.0, 0.6));
    }
  }
  struct Clock {
    double doy;
    double hour;  // local solar hour
  };
  std::vector<TimeStep> times;
  std::vector<Clock> clock;
  for (int y = 0; y < spec.n_years; ++y) {
    for (int m = 1; m <= 12; ++m) {
      for (int dd = 0; dd < spec.days_per_month; ++dd) {
        for (int h = 0; h < spec.hours_per_day; ++h) {
          times.push_back({static_cast<long>(times.size()), m, spec.first_year + y});
          const double doy = 30.44 * (m - 1) + 30.44 * (dd + 0.5) / spec.days_per_month;
          clock.push_back({doy, 24.0 * (h + 0.5) / spec.hours_per_day});
        }
      }
    }
  }
  auto keys = dense_keys(times.size(), cells.size());
  const auto n = static_cast<Eigen::Index>(keys.size());
  Eigen::MatrixXd X(n, kRadiationFeatureCount), Y(n, 2);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto key = keys[static_cast<std::size_t>(i)];
    const auto& cell = cells[key.cell];
    const Clock& ck = clock[key.time];
    const double phi = cell.lat * kDeg;
    const double annual = std::cos(2.0 * std::numbers::pi * (ck.doy + 10.0) / 365.0);
    const double decl = -23.44 * kDeg * annual;
    const double hour_angle = (ck.hour + cell.lon / 15.0 - 12.0) * 15.0 * kDeg;
    const double cosz = std::sin(phi) * std::sin(decl) + std::cos(phi) * std::cos(decl) * std::cos(hour_angle);
    const double mu0 = std::max(0.0, cosz);
    // +1 in local summer, -1 in local winter
    const double summer = -annual * (cell.lat >= 0.0 ? 1.0 : -1.0) * std::abs(std::sin(phi));

    RadiationInputs<double> in;
    in.COSZRS = cosz;
    in.SOLIN = kSolarConstant * mu0;
    in.T = 300.0 - 45.0 * std::sin(phi) * std::sin(phi) + 14.0 * summer + 4.0 * mu0 + 1.5 * rng.normal();
    in.RH = std::clamp(0.7 - 0.2 * std::sin(phi) * std::sin(phi) + 0.1 * summer + 0.1 * rng.normal(), 0.02, 1.0);
    const double cloud_prob = std::clamp(0.25 + 0.5 * in.RH, 0.0, 1.0);
    in.qn = rng.bernoulli(cloud_prob) ? 2e-4 * std::exp(0.8 * rng.normal()) : 0.0;
    in.ICEFRAC = std::clamp((std::abs(cell.lat) - 55.0 - 10.0 * summer) / 30.0, 0.0, 1.0);
    in.LANDFRAC = land[key.cell] * (1.0 - in.ICEFRAC);
    in.OCNFRAC = std::max(0.0, 1.0 - in.ICEFRAC - in.LANDFRAC);
    in.PS = 101325.0 - 8000.0 * in.LANDFRAC + 400.0 * rng.normal();
    in.ASDIR = std::clamp(0.06 * in.OCNFRAC + 0.2 * in.LANDFRAC + 0.65 * in.ICEFRAC + 0.05 * (1.0 - mu0) +
                              0.01 * rng.normal(),
                          0.0, 1.0);
    in.ASDIF = std::clamp(in.ASDIR + 0.02 + 0.01 * rng.normal(), 0.0, 1.0);
    const double ts = in.T + 1.0 + 1.5 * rng.normal();
    in.LWUP = kStefanBoltzmann * ts * ts * ts * ts;

    const auto out = forward(in, coef);
    X.row(i) << in.T, in.RH, in.qn, in.PS, in.SOLIN, in.COSZRS, in.ASDIF, in.ASDIR, in.LWUP, in.ICEFRAC,
        in.LANDFRAC, in.OCNFRAC;
    Y(i, 0) = mu0 > 0.0 ? std::max(0.0, out.netsw + spec.netsw_noise * rng.normal()) : 0.0;
    Y(i, 1) = std::max(0.0, out.flwds + spec.flwds_noise * rng.normal());
  }
  std::vector<std::string> fnames(kRadiationFeatureNames.begin(), kRadiationFeatureNames.end());
  std::vector<std::string> tnames(kRadiationTargetNames.begin(), kRadiationTargetNames.end());
  return ClimateDataset(std::move(times), std::move(cells), std::move(keys), std::move(X), std::move(fnames),
                        std::move(Y), std::move(tnames));
}

Eigen::MatrixXd radiation_inputs(const ClimateDataset& ds, std::span<const std::size_t> rows) {
  std::array<std::size_t, kRadiationFeatureCount> col{};
  for (int f = 0; f < kRadiationFeatureCount; ++f) col[static_cast<std::size_t>(f)] = ds.feature_index(kRadiationFeatureNames[f]);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), kRadiationFeatureCount);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int f = 0; f < kRadiationFeatureCount; ++f) {
      out(static_cast<Eigen::Index>(r), f) =
          ds.features()(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(col[static_cast<std::size_t>(f)]));
    }
  }
  return out;
}

Eigen::MatrixXd radiation_targets(const ClimateDataset& ds, std::span<const std::size_t> rows) {
  const auto sw = static_cast<Eigen::Index>(ds.target_index(kRadiationTargetNames[0]));
  const auto lw = static_cast<Eigen::Index>(ds.target_index(kRadiationTargetNames[1]));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out(static_cast<Eigen::Index>(r), 0) = ds.targets()(static_cast<Eigen::Index>(rows[r]), sw);
    out(static_cast<Eigen::Index>(r), 1) = ds.targets()(static_cast<Eigen::Index>(rows[r]), lw);
  }
  return out;
}

}  // namespace shiftlab

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/dataset.hpp"
#include "shiftlab/radiation.hpp"

namespace shiftlab {

/// Gaussian features whose mean moves with the season (and optionally with
/// the year) while the feature -> target map stays fixed.
struct CovariateShiftSpec {
  int n_cells = 6;
  int n_years = 2;
  int first_year = 2000;
  int steps_per_month = 4;
  int input_dim = 4;
  double shift = 1.0;        // mean offset per seasonal step, along (1,..,1)/sqrt(d)
  double trend = 0.0;        // mean offset per year, along the first axis
  double noise = 0.05;       // target noise std
  std::uint64_t seed = 0;

  void validate() const;
};

/// Seasonal offset multipliers for DJF, MAM, JJA, SON.
inline constexpr double kSeasonSteps[4] = {0.0, 1.0, 2.0, 3.0};

/// The fixed nonlinear map applied to one feature vector.
double planted_map(const Eigen::Ref<const Eigen::VectorXd>& x);

ClimateDataset generate_covariate_shift(const CovariateShiftSpec& spec);

/// Radiation-like samples over a latitude/longitude grid and a diurnal and
/// annual cycle; targets come from the physical forward model plus noise.
struct RadiationSyntheticSpec {
  std::vector<double> latitudes{-70.0, -45.0, -20.0, 0.0, 20.0, 45.0, 70.0};
  int lons_per_lat = 2;
  int n_years = 1;
  int first_year = 2000;
  int days_per_month = 2;
  int hours_per_day = 8;
  double netsw_noise = 2.0;  // W/m^2, daytime only
  double flwds_noise = 2.0;  // W/m^2
  PhysicalParams truth = PhysicalParams::defaults();
  std::uint64_t seed = 0;

  void validate() const;
};

ClimateDataset generate_radiation(const RadiationSyntheticSpec& spec);

/// Features of `ds` rearranged into the 12-column radiation order.
Eigen::MatrixXd radiation_inputs(const ClimateDataset& ds, std::span<const std::size_t> rows);
/// Targets (NETSW, FLWDS) of `ds` for `rows`.
Eigen::MatrixXd radiation_targets(const ClimateDataset& ds, std::span<const std::size_t> rows);

}  // namespace shiftlab

#pragma once

// Piecewise clear-sky / cloudy-sky surface radiation model.
//
// Inputs are the 12 near-surface radiation features; outputs are net
// shortwave (NETSW) and downward longwave (FLWDS) surface fluxes in W/m^2.
// RH is a fraction in [0, 1]. Pressure enters as log(PS / 1e5 Pa).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "shiftlab/error.hpp"

namespace shiftlab {

inline constexpr double kStefanBoltzmann = 5.670374419e-8;  // W m^-2 K^-4
inline constexpr double kReferencePressure = 1.0e5;         // Pa

/// Column order of a radiation input matrix.
enum RadiationFeature : int {
  kT = 0,
  kRH,
  kQn,
  kPS,
  kSOLIN,
  kCOSZRS,
  kASDIF,
  kASDIR,
  kLWUP,
  kICEFRAC,
  kLANDFRAC,
  kOCNFRAC,
  kRadiationFeatureCount
};

inline constexpr std::array<std::string_view, kRadiationFeatureCount> kRadiationFeatureNames = {
    "T", "RH", "qn", "PS", "SOLIN", "COSZRS", "ASDIF", "ASDIR", "LWUP", "ICEFRAC", "LANDFRAC", "OCNFRAC"};
inline constexpr std::array<std::string_view, 2> kRadiationTargetNames = {"NETSW", "FLWDS"};

template <typename Scalar = double>
struct RadiationInputs {
  Scalar T{288};         // near-surface air temperature, K
  Scalar RH{0.5};        // relative humidity, fraction
  Scalar qn{0};          // cloud liquid + ice mixing ratio, kg/kg
  Scalar PS{1.0e5};      // surface pressure, Pa
  Scalar SOLIN{0};       // solar insolation, W/m^2
  Scalar COSZRS{0};      // cosine solar zenith angle, may be negative
  Scalar ASDIF{0.1};     // diffuse shortwave albedo
  Scalar ASDIR{0.1};     // direct shortwave albedo
  Scalar LWUP{390};      // surface upward longwave flux, W/m^2
  Scalar ICEFRAC{0};
  Scalar LANDFRAC{0};
  Scalar OCNFRAC{1};

  template <typename Row>
  static RadiationInputs from_row(const Row& r) {
    RadiationInputs in;
    in.T = r(kT);
    in.RH = r(kRH);
    in.qn = r(kQn);
    in.PS = r(kPS);
    in.SOLIN = r(kSOLIN);
    in.COSZRS = r(kCOSZRS);
    in.ASDIF = r(kASDIF);
    in.ASDIR = r(kASDIR);
    in.LWUP = r(kLWUP);
    in.ICEFRAC = r(kICEFRAC);
    in.LANDFRAC = r(kLANDFRAC);
    in.OCNFRAC = r(kOCNFRAC);
    return in;
  }
};

template <typename Scalar = double>
struct RadiationOutputs {
  Scalar netsw{0};
  Scalar flwds{0};
};

// ------------------------------------------------------------ parameters

enum class Stage { Clear, Cloudy, Joint };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);

struct PhysicalParam {
  std::string name;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  Stage stage = Stage::Joint;
  bool active = true;

  bool operator==(const PhysicalParam&) const = default;
};

/// The coefficients the forward model reads, unpacked for speed.
struct CoreCoefficients {
  // regime
  double w_qn, w_rh, w_sun, tau, s;
  // shortwave clear
  double gamma, k0, k1, k2;
  // shortwave cloudy
  double m0, m1, m2, p;
  // albedo
  double a0, a1, a2, a3, a4, a5;
  // longwave clear / cloudy emissivity
  double b0, b1, b2, c0, c1, c2;
};

/// Named bounded coefficient registry. Entries that the forward equations do
/// not use are kept with active = false.
class PhysicalParams {
 public:
  PhysicalParams() = default;
  explicit PhysicalParams(std::vector<PhysicalParam> entries);

  /// Initial values and default bounds for every registered coefficient.
  static PhysicalParams defaults();

  const std::vector<PhysicalParam>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t index_of(std::string_view name) const;
  double value(std::string_view name) const { return entries_[index_of(name)].value; }
  const PhysicalParam& at(std::string_view name) const { return entries_[index_of(name)]; }

  /// Sets a value; throws ValidationError when outside [lo, hi].
  void set(std::string_view name, double v);
  void set_bounds(std::string_view name, double lo, double hi);
  /// Writes v without the bounds check; used by the optimiser's projection.
  void set_unchecked(std::size_t index, double v) { entries_[index].value = v; }

  void validate() const;
  CoreCoefficients core() const;

  std::string to_json() const;
  static PhysicalParams from_json(std::string_view text);

  bool operator==(const PhysicalParams&) const = default;

 private:
  std::vector<PhysicalParam> entries_;
  std::array<std::size_t, 25> core_index_{};
  void index_core();
};

// --------------------------------------------------------------- forward

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar clamp01(Scalar x) {
  return std::clamp(x, Scalar(0), Scalar(1));
}

// Transmittance, constrained to (0, 1].
template <typename Scalar>
Scalar transmittance(Scalar optical_depth) {
  return std::clamp(std::exp(-optical_depth), std::numeric_limits<Scalar>::min(), Scalar(1));
}

template <typename Scalar>
Scalar log_pressure(Scalar ps) {
  if (!(ps > Scalar(0))) throw ValidationError("surface pressure must be positive");
  return std::log(ps / Scalar(kReferencePressure));
}

}  // namespace detail

template <typename Scalar>
struct CloudWeight {
  Scalar z;  // cloud proxy
  Scalar w;  // sigmoid(s (z - tau)), in (0, 1)
};

template <typename Scalar>
CloudWeight<Scalar> cloud_weight(const RadiationInputs<Scalar>& in, const CoreCoefficients& c) {
  const Scalar mu0 = std::max(Scalar(0), in.COSZRS);
  const Scalar z = c.w_qn * in.qn + c.w_rh * in.RH + c.w_sun * (Scalar(1) - mu0);
  return {z, detail::sigmoid(c.s * (z - c.tau))};
}

/// Shortwave fluxes of each regime; blended by the cloud weight.
template <typename Scalar>
struct ShortwaveTerms {
  Scalar clear, cloud;
};

template <typename Scalar>
ShortwaveTerms<Scalar> netsw_terms(const RadiationInputs<Scalar>& in, const CoreCoefficients& c) {
  const Scalar mu0 = std::max(Scalar(0), in.COSZRS);
  const Scalar lp = detail::log_pressure(in.PS);
  const Scalar geometry = in.SOLIN * std::pow(mu0, Scalar(c.gamma));
  const Scalar t_clear = detail::transmittance(c.k0 + c.k1 * in.RH + c.k2 * lp);
  const Scalar t_cloud =
      detail::transmittance(c.m0 + c.m1 * std::pow(std::max(Scalar(0), in.qn), Scalar(c.p)) + c.m2 * in.RH);
  const Scalar a_surf = detail::clamp01(c.a0 + c.a1 * in.ICEFRAC + c.a2 * in.LANDFRAC + c.a3 * in.OCNFRAC);
  const Scalar a_cloud = detail::clamp01(a_surf + c.a4 * in.ASDIR + c.a5 * in.ASDIF);
  return {geometry * t_clear * (Scalar(1) - a_surf), geometry * t_cloud * (Scalar(1) - a_cloud)};
}

template <typename Scalar>
Scalar netsw_forward(const RadiationInputs<Scalar>& in, const CoreCoefficients& c) {
  const Scalar w = cloud_weight(in, c).w;
  const auto sw = netsw_terms(in, c);
  return std::max(Scalar(0), (Scalar(1) - w) * sw.clear + w * sw.cloud);
}

template <typename Scalar>
Scalar surface_temperature_proxy(Scalar lwup) {
  if (!(lwup > Scalar(0))) throw ValidationError("LWUP must be positive");
  return std::pow(lwup / Scalar(kStefanBoltzmann), Scalar(0.25));
}

template <typename Scalar>
Scalar flwds_forward(const RadiationInputs<Scalar>& in, const CoreCoefficients& c) {
  const Scalar w = cloud_weight(in, c).w;
  const Scalar ts = surface_temperature_proxy(in.LWUP);
  const Scalar lp = detail::log_pressure(in.PS);
  const Scalar e_clear = detail::clamp01(Scalar(1) - std::exp(-(c.b0 + c.b1 * in.RH + c.b2 * lp)));
  const Scalar e_cloud = detail::clamp01(Scalar(1) - std::exp(-(c.c0 + c.c1 * in.RH + c.c2 * in.qn)));
  const Scalar sb_ts4 = Scalar(kStefanBoltzmann) * ts * ts * ts * ts;
  const Scalar sb_t4 = Scalar(kStefanBoltzmann) * in.T * in.T * in.T * in.T;
  const Scalar clear = e_clear * sb_ts4 + (Scalar(1) - e_clear) * sb_t4;
  const Scalar cloud = e_cloud * sb_ts4;
  return std::max(Scalar(0), (Scalar(1) - w) * clear + w * cloud);
}

template <typename Scalar>
RadiationOutputs<Scalar> forward(const RadiationInputs<Scalar>& in, const CoreCoefficients& c) {
  return {netsw_forward(in, c), flwds_forward(in, c)};
}

/// Batch forward: rows of `inputs` in RadiationFeature column order; returns
/// [n x 2] with columns (NETSW, FLWDS).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 2> forward(const Eigen::MatrixBase<Derived>& inputs,
                                                                   const CoreCoefficients& c) {
  using Scalar = typename Derived::Scalar;
  if (inputs.cols() != kRadiationFeatureCount) {
    throw ValidationError("radiation forward expects 12 input columns");
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 2> out(inputs.rows(), 2);
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const auto in = RadiationInputs<Scalar>::from_row(inputs.row(i));
    const auto o = forward(in, c);
    out(i, 0) = o.netsw;
    out(i, 1) = o.flwds;
  }
  return out;
}

inline Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, const PhysicalParams& p) {
  return forward(inputs, p.core());
}

// ------------------------------------------------------------ calibration

struct CalibrationOptions {
  std::vector<Stage> stages{Stage::Clear, Stage::Cloudy, Stage::Joint};
  double tol = 1e-10;   // stop when |delta objective| < tol
  int max_iter = 2000;  // per stage
};

struct StageTrace {
  Stage stage = Stage::Joint;
  std::vector<double> objective;  // objective after each accepted step, starting value first
  int iterations = 0;
  int accepted = 0;
  bool hit_max_iter = false;
};

struct CalibrationResult {
  PhysicalParams params;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::vector<StageTrace> stages;
  int iterations = 0;
  bool converged = false;
};

/// MSE(NETSW) + MSE(FLWDS) on targets standardised by the per-target `std`.
double calibration_objective(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             const CoreCoefficients& c, const Eigen::Vector2d& std);

/// Staged bounded fit. In each stage only the active parameters tagged with
/// that stage move (the joint stage frees every active parameter). Each stage
/// runs projected BFGS with central finite-difference gradients; accepted
/// steps strictly decrease the objective and iterates are clamped to bounds.
CalibrationResult calibrate(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const PhysicalParams& p0,
                            const CalibrationOptions& options = {});

}  // namespace shiftlab

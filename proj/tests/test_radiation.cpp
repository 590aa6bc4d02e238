#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shiftlab/error.hpp"
#include "shiftlab/radiation.hpp"
#include "shiftlab/random.hpp"
#include "shiftlab/synthetic.hpp"

using namespace shiftlab;

namespace {

constexpr double kSigma = 5.670374419e-8;

RadiationInputs<double> random_inputs(Rng& rng) {
  RadiationInputs<double> in;
  in.T = rng.uniform(200.0, 320.0);
  in.RH = rng.uniform(0.0, 1.0);
  in.qn = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 2e-3);
  in.PS = rng.uniform(5e4, 1.05e5);
  in.SOLIN = rng.uniform(0.0, 1400.0);
  in.COSZRS = rng.uniform(-1.0, 1.0);
  in.ASDIF = rng.uniform(0.0, 1.0);
  in.ASDIR = rng.uniform(0.0, 1.0);
  in.LWUP = rng.uniform(100.0, 600.0);
  const double ice = rng.uniform(), land = rng.uniform() * (1 - ice);
  in.ICEFRAC = ice;
  in.LANDFRAC = land;
  in.OCNFRAC = 1 - ice - land;
  return in;
}

// Straight-line transcription of the parameterisation, written without the
// library helpers.
struct Oracle {
  double netsw, flwds;
};

double clamp01(double x) { return x < 0 ? 0 : (x > 1 ? 1 : x); }

Oracle oracle(const RadiationInputs<double>& in, const PhysicalParams& p) {
  auto v = [&](const char* n) { return p.value(n); };
  const double mu0 = in.COSZRS > 0 ? in.COSZRS : 0.0;
  const double z = v("w_qn") * in.qn + v("w_rh") * in.RH + v("w_sun") * (1 - mu0);
  const double w = 1.0 / (1.0 + std::exp(-v("s") * (z - v("tau"))));
  const double lp = std::log(in.PS / 1e5);
  // transmittance capped at 1 when a low pressure makes the optical depth negative
  const double t_clear = std::min(1.0, std::exp(-v("k0") - v("k1") * in.RH - v("k2") * lp));
  const double t_cloud = std::min(1.0, std::exp(-v("m0") - v("m1") * std::pow(in.qn, v("p")) - v("m2") * in.RH));
  const double a_surf = clamp01(v("a0") + v("a1") * in.ICEFRAC + v("a2") * in.LANDFRAC + v("a3") * in.OCNFRAC);
  const double a_cloud = clamp01(a_surf + v("a4") * in.ASDIR + v("a5") * in.ASDIF);
  const double g = in.SOLIN * std::pow(mu0, v("gamma"));
  double sw = (1 - w) * g * t_clear * (1 - a_surf) + w * g * t_cloud * (1 - a_cloud);
  if (sw < 0) sw = 0;
  const double ts = std::pow(in.LWUP / kSigma, 0.25);
  const double e_clear = clamp01(1 - std::exp(-v("b0") - v("b1") * in.RH - v("b2") * lp));
  const double e_cloud = clamp01(1 - std::exp(-v("c0") - v("c1") * in.RH - v("c2") * in.qn));
  const double lw_clear = e_clear * kSigma * std::pow(ts, 4) + (1 - e_clear) * kSigma * std::pow(in.T, 4);
  const double lw_cloud = e_cloud * kSigma * std::pow(ts, 4);
  double lw = (1 - w) * lw_clear + w * lw_cloud;
  if (lw < 0) lw = 0;
  return {sw, lw};
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

struct SynthBatch {
  Eigen::MatrixXd x, y;
};

SynthBatch batch_from(const PhysicalParams& truth, int n, std::uint64_t seed) {
  Rng rng(seed);
  SynthBatch b{Eigen::MatrixXd(n, kRadiationFeatureCount), Eigen::MatrixXd(n, 2)};
  const auto c = truth.core();
  for (int i = 0; i < n; ++i) {
    const auto in = random_inputs(rng);
    const double row[] = {in.T,     in.RH,    in.qn,   in.PS,      in.SOLIN,    in.COSZRS,
                          in.ASDIF, in.ASDIR, in.LWUP, in.ICEFRAC, in.LANDFRAC, in.OCNFRAC};
    for (int j = 0; j < kRadiationFeatureCount; ++j) b.x(i, j) = row[j];
    const auto o = forward(in, c);
    b.y(i, 0) = o.netsw;
    b.y(i, 1) = o.flwds;
  }
  return b;
}

}  // namespace

TEST_CASE("cloud weight") {
  const auto p = PhysicalParams::defaults();
  const auto c = p.core();
  RadiationInputs<double> in;
  in.qn = 0;
  in.RH = 0;
  in.COSZRS = 1;
  const auto cw = cloud_weight(in, c);
  CHECK(cw.z == 0.0);
  CHECK(cw.w == doctest::Approx(1.0 / (1.0 + std::exp(7.5))).epsilon(1e-14));
  CHECK(cw.w == doctest::Approx(5.5e-4).epsilon(0.01));

  // z = tau exactly: RH only, chosen so that w_rh * RH == tau
  auto q = c;
  q.w_rh = 1.0;
  in.RH = q.tau;
  CHECK(cloud_weight(in, q).w == 0.5);

  // sharper gate pushes w towards 1 when z > tau
  in.RH = q.tau + 0.1;
  double prev = 0.0;
  for (double s : {1.0, 5.0, 20.0, 80.0, 100.0}) {
    q.s = s;
    const double w = cloud_weight(in, q).w;
    CHECK(w > prev);
    prev = w;
  }
  CHECK(prev > 0.9999);
}

TEST_CASE("net shortwave examples") {
  const auto c = PhysicalParams::defaults().core();
  RadiationInputs<double> in;
  in.SOLIN = 1000;
  in.COSZRS = -0.3;
  in.qn = 1e-3;
  CHECK(netsw_forward(in, c) == 0.0);
  in.COSZRS = 0.0;
  CHECK(netsw_forward(in, c) == 0.0);
  in.COSZRS = 0.7;
  in.SOLIN = 0.0;
  CHECK(netsw_forward(in, c) == 0.0);

  // w = 0, gamma = 1, T_clear = 0.8, albedo 0.25, SOLIN 1000, mu0 0.5 -> 300
  CoreCoefficients k = c;
  k.w_qn = k.w_rh = k.w_sun = 0.0;
  k.tau = 5.0;
  k.s = 100.0;  // w = sigmoid(-500), below double resolution of 1
  k.gamma = 1.0;
  k.k0 = -std::log(0.8);
  k.k1 = k.k2 = 0.0;
  k.a0 = 0.25;
  k.a1 = k.a2 = k.a3 = 0.0;
  RadiationInputs<double> e;
  e.SOLIN = 1000;
  e.COSZRS = 0.5;
  e.PS = 1e5;
  CHECK(netsw_forward(e, k) == doctest::Approx(300.0).epsilon(1e-12));

  CHECK_THROWS_AS(netsw_forward(RadiationInputs<double>{.PS = 0.0}, c), ValidationError);
}

TEST_CASE("downward longwave examples") {
  CHECK(surface_temperature_proxy(kSigma * std::pow(288.0, 4)) == doctest::Approx(288.0).epsilon(1e-15));
  CHECK_THROWS_AS(surface_temperature_proxy(0.0), ValidationError);

  auto c = PhysicalParams::defaults().core();
  RadiationInputs<double> in;
  in.LWUP = 400;
  in.T = 270;
  // blackbody cloud with w = 1
  CoreCoefficients k = c;
  k.c0 = 50;
  k.w_sun = 0;
  k.w_rh = 0;
  k.w_qn = 0;
  k.tau = 0;
  k.s = 100;
  in.COSZRS = 1;
  in.qn = 0;
  in.RH = 0;
  k.w_rh = 10;
  in.RH = 1.0;  // z = 10, w = sigmoid(1000) == 1
  CHECK(flwds_forward(in, k) == doctest::Approx(400.0).epsilon(1e-12));

  // transparent clear sky, w = 0
  CoreCoefficients t = c;
  t.b0 = t.b1 = t.b2 = 0.0;
  t.w_qn = t.w_rh = t.w_sun = 0.0;
  t.tau = 5;
  t.s = 100;
  CHECK(flwds_forward(in, t) == doctest::Approx(kSigma * std::pow(270.0, 4)).epsilon(1e-12));
  in.LWUP = -1;
  CHECK_THROWS_AS(flwds_forward(in, c), ValidationError);
}

TEST_CASE("batch forward") {
  const auto p = PhysicalParams::defaults();
  Eigen::MatrixXd x(1, kRadiationFeatureCount);
  x << 280, 0.6, 1e-4, 1e5, 0, -0.2, 0.1, 0.1, 380, 0, 0, 1;
  const auto y = forward(x, p);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) > 0.0);
  CHECK_THROWS_AS(forward(Eigen::MatrixXd(1, 3), p), ValidationError);
}

TEST_CASE("property: forward matches the straight-line transcription") {
  Rng rng(2024);
  auto params = PhysicalParams::defaults();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    // random parameters inside the bounds
    auto q = params;
    for (const auto& e : params.entries()) {
      if (!e.active) continue;
      const double span = std::min(e.hi - e.lo, 4.0 * std::max(1.0, std::abs(e.value)));
      q.set(e.name, std::clamp(e.value + rng.uniform(-0.5, 0.5) * span * 0.2, e.lo, e.hi));
    }
    const auto c = q.core();
    for (int i = 0; i < 500; ++i) {
      const auto in = random_inputs(rng);
      const auto o = forward(in, c);
      const auto r = oracle(in, q);
      worst = std::max({worst, rel_diff(o.netsw, r.netsw), rel_diff(o.flwds, r.flwds)});
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("property: outputs finite and non-negative, night shortwave exactly zero") {
  Rng rng(7);
  const auto c = PhysicalParams::defaults().core();
  bool ok = true;
  bool night_zero = true;
  bool gate_open = true;
  for (int i = 0; i < 1000000; ++i) {
    const auto in = random_inputs(rng);
    const auto o = forward(in, c);
    if (!(std::isfinite(o.netsw) && std::isfinite(o.flwds) && o.netsw >= 0 && o.flwds >= 0)) ok = false;
    if (in.COSZRS <= 0 && o.netsw != 0.0) night_zero = false;
    const double w = cloud_weight(in, c).w;
    if (!(w > 0.0 && w < 1.0)) gate_open = false;
  }
  CHECK(ok);
  CHECK(night_zero);
  CHECK(gate_open);

  // night stays zero under arbitrary parameter settings
  Rng prng(8);
  const auto base = PhysicalParams::defaults();
  auto p = base;
  for (int t = 0; t < 200; ++t) {
    for (const auto& e : base.entries()) p.set(e.name, prng.uniform(e.lo, e.hi));
    auto in = random_inputs(prng);
    in.COSZRS = -prng.uniform();
    CHECK(netsw_forward(in, p.core()) == 0.0);
  }
}

TEST_CASE("property: monotonicity") {
  Rng rng(3);
  const auto c = PhysicalParams::defaults().core();
  for (int t = 0; t < 1000; ++t) {
    auto in = random_inputs(rng);
    in.COSZRS = rng.uniform(0.1, 1.0);
    in.ICEFRAC = 0;
    in.LANDFRAC = 0;
    in.OCNFRAC = 1;
    // albedo a0 + a3 up to the clamp
    auto lo = c, hi = c;
    lo.a0 = 0.1;
    hi.a0 = 0.3;
    CHECK(netsw_forward(in, hi) <= netsw_forward(in, lo));
    // cloud emissivity via c0
    auto e1 = c, e2 = c;
    e2.c0 = c.c0 + 0.5;
    CHECK(flwds_forward(in, e2) >= flwds_forward(in, e1));
  }
  // extreme z drives the gate to its limits
  RadiationInputs<double> in;
  in.COSZRS = 1;
  in.RH = 0;
  in.qn = 0;
  auto k = c;
  k.s = 100;
  CHECK(cloud_weight(in, k).w < 1e-30);
  in.qn = 1.0;
  CHECK(cloud_weight(in, k).w == 1.0);
}

TEST_CASE("parameter registry") {
  auto p = PhysicalParams::defaults();
  CHECK(p.value("tau") == 0.75);
  CHECK(p.value("s") == 10.0);
  CHECK_THROWS_AS(p.set("tau", 99.0), ValidationError);
  CHECK_THROWS_AS(p.value("nope"), ValidationError);
  p.set("gamma", 1.7);
  const auto back = PhysicalParams::from_json(p.to_json());
  CHECK(back == p);
  CHECK_THROWS_AS(PhysicalParams::from_json("{\"x\": 1}"), ValidationError);
  CHECK_THROWS_AS(PhysicalParams::from_json(
                      R"([{"name":"tau","value":9,"lo":0,"hi":5,"stage":"joint","active":true}])"),
                  ValidationError);
  CHECK(parse_stage(to_string(Stage::Cloudy)) == Stage::Cloudy);
}

TEST_CASE("calibration from the true parameters accepts no step") {
  const auto truth = PhysicalParams::defaults();
  const auto b = batch_from(truth, 400, 1);
  const auto r = calibrate(b.x, b.y, truth);
  CHECK(r.initial_objective < 1e-20);
  CHECK(r.final_objective < 1e-20);
  for (const auto& s : r.stages) CHECK(s.accepted == 0);
  CHECK_FALSE(r.converged);
  CHECK(r.params == truth);
}

TEST_CASE("calibration recovers perturbed parameters") {
  const auto truth = PhysicalParams::defaults();
  const auto b = batch_from(truth, 600, 2);
  Rng rng(5);
  auto p0 = truth;
  for (const auto& e : truth.entries()) {
    if (!e.active) continue;
    p0.set(e.name, std::clamp(e.value * (rng.uniform() < 0.5 ? 0.9 : 1.1), e.lo, e.hi));
  }
  const auto r = calibrate(b.x, b.y, p0);
  CHECK(r.final_objective < 1e-4);
  CHECK(r.final_objective <= r.initial_objective);
  for (const auto& e : r.params.entries()) {
    CHECK(e.value >= e.lo);
    CHECK(e.value <= e.hi);
  }
  for (const auto& s : r.stages) {
    for (std::size_t i = 1; i < s.objective.size(); ++i) CHECK(s.objective[i] <= s.objective[i - 1]);
  }
}

TEST_CASE("calibration clamps to a bound when the optimum lies outside") {
  auto truth = PhysicalParams::defaults();
  auto p0 = truth;
  // data generated with an albedo offset the bounds forbid
  truth.set_bounds("a0", 0.0, 1.0);
  truth.set("a0", 0.30);
  const auto b = batch_from(truth, 400, 3);
  p0.set_bounds("a0", 0.0, 0.2);
  p0.set("a0", 0.14);
  // pin the other albedo terms so nothing can compensate for the clamp
  for (const char* n : {"a1", "a2", "a3"}) p0.set_bounds(n, p0.value(n), p0.value(n));
  CalibrationOptions opt;
  opt.stages = {Stage::Clear};
  const auto r = calibrate(b.x, b.y, p0, opt);
  CHECK(r.params.value("a0") == 0.2);
  for (const auto& e : r.params.entries()) {
    CHECK(e.value >= e.lo);
    CHECK(e.value <= e.hi);
  }
}

TEST_CASE("calibration input errors") {
  const auto p = PhysicalParams::defaults();
  CHECK_THROWS_AS(calibrate(Eigen::MatrixXd(0, 12), Eigen::MatrixXd(0, 2), p), ValidationError);
  Eigen::MatrixXd x = batch_from(p, 10, 1).x;
  Eigen::MatrixXd y = Eigen::MatrixXd::Ones(10, 2);
  CHECK_THROWS_AS(calibrate(x, y, p), ValidationError);
}

TEST_CASE("synthetic radiation data obeys the physics contract") {
  RadiationSyntheticSpec spec;
  spec.days_per_month = 1;
  spec.hours_per_day = 6;
  const auto ds = generate_radiation(spec);
  const auto& t = ds.targets();
  CHECK(t.col(ds.target_index("NETSW")).minCoeff() >= 0.0);
  CHECK(t.col(ds.target_index("FLWDS")).minCoeff() >= 0.0);
}

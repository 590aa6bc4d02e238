#include "shiftlab/radiation.hpp"

#include <set>

#include <json.hpp>

namespace shiftlab {

namespace {

using Json = nlohmann::json;

constexpr std::array<std::string_view, 25> kCoreNames = {
    "w_qn", "w_rh", "w_sun", "tau", "s",                  //
    "gamma", "k0", "k1", "k2",                            //
    "m0", "m1", "m2", "p",                                //
    "a0", "a1", "a2", "a3", "a4", "a5",                   //
    "b0", "b1", "b2", "c0", "c1", "c2"};

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Clear: return "clear";
    case Stage::Cloudy: return "cloudy";
    case Stage::Joint: return "joint";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "clear") return Stage::Clear;
  if (name == "cloudy") return Stage::Cloudy;
  if (name == "joint") return Stage::Joint;
  throw ValidationError("unknown calibration stage '" + std::string(name) + "'");
}

PhysicalParams::PhysicalParams(std::vector<PhysicalParam> entries) : entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (!seen.insert(e.name).second) throw ValidationError("duplicate parameter '" + e.name + "'");
  }
  index_core();
  validate();
}

void PhysicalParams::index_core() {
  for (std::size_t c = 0; c < kCoreNames.size(); ++c) {
    const std::size_t i = index_of(kCoreNames[c]);
    if (!entries_[i].active) {
      throw ValidationError("parameter '" + entries_[i].name + "' drives the forward model and must be active");
    }
    core_index_[c] = i;
  }
}

PhysicalParams PhysicalParams::defaults() {
  using S = Stage;
  std::vector<PhysicalParam> e = {
      // regime gate
      {"w_qn", 8.0, 0.0, 100.0, S::Joint, true},
      {"w_rh", 1.4, 0.0, 10.0, S::Joint, true},
      {"w_sun", 0.6, 0.0, 10.0, S::Joint, true},
      {"tau", 0.75, 0.0, 5.0, S::Joint, true},
      {"s", 10.0, 0.1, 100.0, S::Joint, true},
      // shortwave clear
      {"gamma", 1.0, 0.1, 3.0, S::Clear, true},
      {"k0", 0.12, 0.0, 50.0, S::Clear, true},
      {"k1", 0.20, 0.0, 50.0, S::Clear, true},
      {"k2", 0.08, 0.0, 50.0, S::Clear, true},
      // shortwave cloudy
      {"m0", 0.22, 0.0, 50.0, S::Cloudy, true},
      {"m1", 6.0, 0.0, 50.0, S::Cloudy, true},
      {"m2", 0.70, 0.0, 50.0, S::Cloudy, true},
      {"p", 0.6, 0.1, 3.0, S::Cloudy, true},
      // albedo
      {"a0", 0.14, 0.0, 1.0, S::Clear, true},
      {"a1", 0.36, 0.0, 1.0, S::Clear, true},
      {"a2", 0.06, 0.0, 1.0, S::Clear, true},
      {"a3", 0.03, 0.0, 1.0, S::Clear, true},
      {"a4", 0.02, 0.0, 1.0, S::Cloudy, true},
      {"a5", 0.02, 0.0, 1.0, S::Cloudy, true},
      // longwave emissivity
      {"b0", 0.20, 0.0, 50.0, S::Clear, true},
      {"b1", 0.90, 0.0, 50.0, S::Clear, true},
      {"b2", 0.08, 0.0, 50.0, S::Clear, true},
      {"c0", 0.35, 0.0, 50.0, S::Cloudy, true},
      {"c1", 1.2, 0.0, 50.0, S::Cloudy, true},
      {"c2", 4.5, 0.0, 50.0, S::Cloudy, true},
      // registered, not used by the forward equations
      {"c_sun", 0.18, 0.0, 1.0, S::Joint, false},
      {"k3", 0.15, 0.0, 50.0, S::Clear, false},
      {"m3", 0.65, 0.0, 50.0, S::Cloudy, false},
      {"p2", 1.2, 0.1, 3.0, S::Cloudy, false},
      {"a_low_sun", 0.08, 0.0, 1.0, S::Clear, false},
      {"a_cloud", 0.07, 0.0, 1.0, S::Cloudy, false},
      {"b3_lw", 0.7, 0.0, 50.0, S::Cloudy, false},
      {"delta_T", -1.0, -20.0, 20.0, S::Clear, false},
      {"t_rh", 2.0, -50.0, 50.0, S::Joint, false},
      {"t_qn", -15.0, -100.0, 100.0, S::Joint, false},
      {"Gamma", 8.0, 0.0, 20.0, S::Clear, false},
      {"t_rh_c", 1.2, -50.0, 50.0, S::Joint, false},
      {"t_qn_c", 20.0, -100.0, 100.0, S::Joint, false},
  };
  return PhysicalParams(std::move(e));
}

std::size_t PhysicalParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ValidationError("unknown parameter '" + std::string(name) + "'");
}

void PhysicalParams::set(std::string_view name, double v) {
  auto& e = entries_[index_of(name)];
  if (!std::isfinite(v) || v < e.lo || v > e.hi) {
    throw ValidationError("parameter '" + e.name + "' value " + std::to_string(v) + " outside [" +
                          std::to_string(e.lo) + ", " + std::to_string(e.hi) + "]");
  }
  e.value = v;
}

void PhysicalParams::set_bounds(std::string_view name, double lo, double hi) {
  auto& e = entries_[index_of(name)];
  if (!(lo <= hi)) throw ValidationError("parameter '" + e.name + "' has lo > hi");
  e.lo = lo;
  e.hi = hi;
  e.value = std::clamp(e.value, lo, hi);
}

void PhysicalParams::validate() const {
  for (const auto& e : entries_) {
    if (!std::isfinite(e.value) || !std::isfinite(e.lo) || !std::isfinite(e.hi)) {
      throw ValidationError("parameter '" + e.name + "' is not finite");
    }
    if (e.lo > e.hi) throw ValidationError("parameter '" + e.name + "' has lo > hi");
    if (e.value < e.lo || e.value > e.hi) {
      throw ValidationError("parameter '" + e.name + "' value " + std::to_string(e.value) + " outside [" +
                            std::to_string(e.lo) + ", " + std::to_string(e.hi) + "]");
    }
  }
}

CoreCoefficients PhysicalParams::core() const {
  if (entries_.empty()) throw ValidationError("empty parameter registry");
  std::array<double, 25> v{};
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = entries_[core_index_[c]].value;
  return CoreCoefficients{v[0],  v[1],  v[2],  v[3],  v[4],  v[5],  v[6],  v[7],  v[8],
                          v[9],  v[10], v[11], v[12], v[13], v[14], v[15], v[16], v[17],
                          v[18], v[19], v[20], v[21], v[22], v[23], v[24]};
}

std::string PhysicalParams::to_json() const {
  Json arr = Json::array();
  for (const auto& e : entries_) {
    arr.push_back({{"name", e.name},
                   {"value", e.value},
                   {"lo", e.lo},
                   {"hi", e.hi},
                   {"stage", std::string(to_string(e.stage))},
                   {"active", e.active}});
  }
  return arr.dump(2) + "\n";
}

PhysicalParams PhysicalParams::from_json(std::string_view text) {
  Json arr;
  try {
    arr = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("parameter file is not valid JSON: ") + e.what());
  }
  if (!arr.is_array()) throw ValidationError("parameter file must hold a JSON array");
  std::vector<PhysicalParam> entries;
  try {
    for (const auto& j : arr) {
      PhysicalParam p;
      p.name = j.at("name").get<std::string>();
      p.value = j.at("value").get<double>();
      p.lo = j.at("lo").get<double>();
      p.hi = j.at("hi").get<double>();
      p.stage = parse_stage(j.at("stage").get<std::string>());
      p.active = j.at("active").get<bool>();
      entries.push_back(std::move(p));
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("parameter file: ") + e.what());
  }
  return PhysicalParams(std::move(entries));
}

}  // namespace shiftlab

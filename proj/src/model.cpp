#include "deepmide/model.hpp"

namespace deepmide {

const std::array<const char*, StatParams::kCount>& StatParams::names() {
  static const std::array<const char*, kCount> n = {"ell_same",  "ell_cross", "sigma_eps",
                                                    "ell_eps",   "sigma_eta", "ell_eta"};
  return n;
}

std::array<double, StatParams::kCount> StatParams::to_array() const {
  return {ell_same, ell_cross, sigma_eps, ell_eps, sigma_eta, ell_eta};
}

StatParams StatParams::from_array(const std::array<double, kCount>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5]};
}

void StatParams::validate() const {
  const auto a = to_array();
  for (std::size_t k = 0; k < kCount; ++k) {
    if (!(a[k] > 0.0) || !std::isfinite(a[k])) {
      throw ConfigError(std::string("parameter ") + names()[k] + " must be positive and finite");
    }
  }
}

StatParams FittedModel::omega() const {
  std::array<double, StatParams::kCount> v{};
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = softplus(omega_raw[k]);
  return StatParams::from_array(v);
}

void FittedModel::set_omega(const StatParams& p) {
  p.validate();
  const auto v = p.to_array();
  for (std::size_t k = 0; k < v.size(); ++k) omega_raw[k] = inverse_softplus(v[k]);
}

}  // namespace deepmide

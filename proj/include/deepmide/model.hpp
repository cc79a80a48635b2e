#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/kernel.hpp"
#include "deepmide/preprocess.hpp"

namespace deepmide {

// Statistical parameter set: kernel length-scales and the two noise
// covariance functions.
struct StatParams {
  double ell_same = 10.0;
  double ell_cross = 10.0;
  double sigma_eps = 0.1;
  double ell_eps = 10.0;
  double sigma_eta = 0.5;
  double ell_eta = 10.0;

  static constexpr std::size_t kCount = 6;
  static const std::array<const char*, kCount>& names();

  std::array<double, kCount> to_array() const;
  static StatParams from_array(const std::array<double, kCount>& a);

  kernel::KernelParams kernel() const { return {ell_same, ell_cross}; }
  kernel::NoiseCovParams noise() const { return {sigma_eps, ell_eps, sigma_eta, ell_eta}; }
  void validate() const;
};

inline double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }
inline double inverse_softplus(double v) { return v > 30.0 ? v : std::log(std::expm1(v)); }
inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

struct ModelStructure {
  SiteSet sites;
  HeightLevels heights;
  std::int64_t step_seconds = 600;
  // Length of the kernel epoch in steps (see kernel::kernel_step_index).
  std::int64_t kernel_epoch = 6;
  bool normalize_propagator = false;

  std::vector<Vec2> coords() const { return sites.coords(); }
  std::size_t n_sites() const { return sites.size(); }
  std::size_t n_heights() const { return heights.size(); }
  std::size_t dim() const { return sites.size() * heights.size(); }
};

struct TrainLogRow {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
};

struct FittedModel {
  ModelStructure structure;
  extractor::NetworkParams network;
  extractor::ChannelStats map_stats;
  // Unconstrained statistical parameters; the model uses softplus of each.
  std::array<double, StatParams::kCount> omega_raw{};
  preprocess::BoxCoxParam box_cox;
  preprocess::DiurnalModel diurnal;
  Vec init_variance;  // diagonal of the initial filter covariance
  std::vector<TrainLogRow> log;

  StatParams omega() const;
  void set_omega(const StatParams& p);
};

}  // namespace deepmide

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/kernel.hpp"
#include "deepmide/model.hpp"

namespace deepmide::train {

// One filtering pass over a residual subsequence. Row 0 initializes the
// belief; rows 1.. are predicted and updated, and rows after `burn_in`
// contribute to the negative log-likelihood.
struct LikelihoodInput {
  std::span<const Vec2> sites;
  std::size_t n_heights = 1;
  const ObservationPanel* residuals = nullptr;
  const kernel::AdvectionSet* theta = nullptr;  // one row per residual row
  Vec init_variance;
  std::int64_t kernel_epoch = 6;
  bool normalize = false;
  std::size_t burn_in = 0;
};

struct LikelihoodGradient {
  double nll = 0.0;
  std::size_t observations = 0;  // scored observation count
  std::array<double, StatParams::kCount> omega_bar{};  // d nll / d (natural parameter)
  kernel::AdvectionSet theta_bar;
};

// Innovation-form negative log-likelihood and its exact reverse-mode
// derivatives with respect to the statistical parameters and every theta_t.
LikelihoodGradient kf_gradients(const LikelihoodInput& input, const StatParams& omega,
                                bool want_gradient = true);

struct TrainingConfig {
  std::size_t subsequence = 72;
  std::size_t batch = 4;
  double lr_phi = 1e-3;
  double lr_omega = 1e-2;
  double momentum = 0.9;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::size_t plateau = 3;
  double lr_decay = 0.5;
  std::size_t burn_in = 6;
  double clip_norm = 0.0;  // max norm of the per-batch network gradient, 0 = off
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
  std::size_t online_window = 1008;  // 7 days at 10-min steps
  std::size_t online_iterations = 50;
  bool online_refit_box_cox = true;
  bool online_refit_diurnal = true;
  double box_cox_offset = 0.0;
  std::size_t threads = 1;

  void validate() const;
};

struct ModelConfig {
  StatParams omega_init;
  std::int64_t kernel_epoch = 6;
  bool normalize_propagator = false;
  extractor::ExtractorConfig extractor;
};

// Called after every epoch with the log row; returning false stops training.
using EpochCallback = std::function<bool(const TrainLogRow&)>;

// Joint fit of the network and statistical parameters on the raw panel.
// When `fixed_theta` is given the network is bypassed and only the
// statistical parameters are fitted against those advection vectors
// (one row per panel row).
FittedModel offline_fit(const ObservationPanel& raw_panel, const SiteSet& sites,
                        const HeightLevels& heights, const extractor::MapStream& maps,
                        const ModelConfig& model_config, const TrainingConfig& config,
                        const kernel::AdvectionSet* fixed_theta = nullptr,
                        const EpochCallback& on_epoch = {});

// Re-optimizes the statistical parameters on a recent raw window with the
// network frozen. Box-Cox and diurnal trends are re-fitted on the window
// first when the config asks for it.
FittedModel online_update(const FittedModel& model, const ObservationPanel& raw_window,
                          const extractor::MapStream& maps, const TrainingConfig& config,
                          const kernel::AdvectionSet* fixed_theta = nullptr);

// Composite negative log-likelihood of one raw-residual subsequence as a
// function of the network parameters, with its gradient. Used by gradient
// checks; `residuals` rows must all be covered by `maps`.
struct CompositeGradient {
  double nll = 0.0;
  std::array<double, StatParams::kCount> omega_bar{};
  std::vector<double> phi_bar;
};
CompositeGradient composite_gradient(const FittedModel& model, const ObservationPanel& residuals,
                                     const extractor::MapStream& maps, std::size_t burn_in);

// FNV-1a over the network parameter bytes.
std::uint64_t checksum(const extractor::NetworkParams& params);

}  // namespace deepmide::train

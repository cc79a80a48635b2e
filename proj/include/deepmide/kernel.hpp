#pragma once

#include <span>
#include <vector>

#include "deepmide/domain.hpp"

namespace deepmide::kernel {

// Diffusion length-scales (km): one for p == q, one for p != q.
struct KernelParams {
  double ell_same = 10.0;
  double ell_cross = 10.0;
};

struct NoiseCovParams {
  double sigma_eps = 0.1;
  double ell_eps = 10.0;
  double sigma_eta = 0.5;
  double ell_eta = 10.0;
};

// Advection vectors (km per step) for every time step and height.
class AdvectionSet {
 public:
  AdvectionSet() = default;
  AdvectionSet(std::size_t n_times, std::size_t n_heights);

  std::size_t n_times() const { return n_times_; }
  std::size_t n_heights() const { return n_heights_; }
  Vec2& at(std::size_t t, std::size_t p) { return theta_[t * n_heights_ + p]; }
  const Vec2& at(std::size_t t, std::size_t p) const { return theta_[t * n_heights_ + p]; }
  std::span<const Vec2> step(std::size_t t) const {
    return {theta_.data() + t * n_heights_, n_heights_};
  }
  // Lambda_t^p = ||theta_t^p||.
  double norm(std::size_t t, std::size_t p) const { return at(t, p).norm(); }

 private:
  std::size_t n_times_ = 0;
  std::size_t n_heights_ = 0;
  std::vector<Vec2> theta_;
};

// Step index entering the kernel's explicit time multipliers. It counts steps
// since the start of the current kernel epoch of `epoch_steps` steps, with
// epochs aligned to the Unix epoch so every pass over the same timestamps
// sees the same index.
std::int64_t kernel_step_index(UnixSeconds time, std::int64_t step_seconds, std::int64_t epoch_steps);

// exp(-||s - x - theta_p * t + theta_q * (t + 1)||^2 / ell^2), with
// ell = ell_same when p == q and ell_cross otherwise.
double eval_kernel(std::size_t p, std::size_t q, const Vec2& s, const Vec2& x, double t,
                   const Vec2& theta_p, const Vec2& theta_q, const KernelParams& params);

// nP x nP propagator in latent (height-major) order. With `normalize`, each
// row is divided by max(row sum, 1).
Mat build_propagator(double t, std::span<const Vec2> theta, std::span<const Vec2> sites,
                     const KernelParams& params, bool normalize);

// Reverse-mode companion of build_propagator: given the adjoint of the
// returned matrix, accumulates into theta_bar (one 2-vector per height) and
// the two length-scale adjoints.
void propagator_backward(double t, std::span<const Vec2> theta, std::span<const Vec2> sites,
                         const KernelParams& params, bool normalize, const Mat& k_bar,
                         std::span<Vec2> theta_bar, double& ell_same_bar, double& ell_cross_bar);

enum class NoiseKind { epsilon, eta };

// sigma^2 exp(-d^2 / (2 ell^2)) between sites at the same height, replicated
// over height blocks; zero across heights.
Mat squared_exponential_cov(double sigma, double ell, std::span<const Vec2> sites,
                            std::size_t n_heights);
Mat build_noise_cov(NoiseKind kind, const NoiseCovParams& params, std::span<const Vec2> sites,
                    std::size_t n_heights);

// <cov_bar, d cov / d sigma> and <cov_bar, d cov / d ell>.
void squared_exponential_backward(double sigma, double ell, std::span<const Vec2> sites,
                                  std::size_t n_heights, const Mat& cov_bar, double& sigma_bar,
                                  double& ell_bar);

struct SpectralRadius {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Power iteration to a relative change of 1e-8, at most 10k iterations.
SpectralRadius spectral_radius(const Mat& k);

}  // namespace deepmide::kernel

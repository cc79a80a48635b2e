#include "deepmide/kernel.hpp"

#include <cmath>

namespace deepmide::kernel {

AdvectionSet::AdvectionSet(std::size_t n_times, std::size_t n_heights)
    : n_times_(n_times), n_heights_(n_heights), theta_(n_times * n_heights, Vec2::Zero()) {}

std::int64_t kernel_step_index(UnixSeconds time, std::int64_t step_seconds, std::int64_t epoch_steps) {
  if (epoch_steps <= 0) return 0;
  std::int64_t step = time / step_seconds;
  if (time < 0 && time % step_seconds != 0) --step;
  const std::int64_t k = step % epoch_steps;
  return k < 0 ? k + epoch_steps : k;
}

namespace {

inline Vec2 displacement(const Vec2& s, const Vec2& x, double t, const Vec2& theta_p,
                         const Vec2& theta_q) {
  return s - x - theta_p * t + theta_q * (t + 1.0);
}

inline double length_scale(std::size_t p, std::size_t q, const KernelParams& params) {
  return p == q ? params.ell_same : params.ell_cross;
}

Mat raw_propagator(double t, std::span<const Vec2> theta, std::span<const Vec2> sites,
                   const KernelParams& params) {
  const auto n = sites.size();
  const auto P = theta.size();
  Mat k(static_cast<Eigen::Index>(n * P), static_cast<Eigen::Index>(n * P));
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < P; ++q) {
      const double ell = length_scale(p, q, params);
      const double inv_ell2 = 1.0 / (ell * ell);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const Vec2 d = displacement(sites[i], sites[j], t, theta[p], theta[q]);
          k(static_cast<Eigen::Index>(p * n + i), static_cast<Eigen::Index>(q * n + j)) =
              std::exp(-d.squaredNorm() * inv_ell2);
        }
      }
    }
  }
  return k;
}

}  // namespace

double eval_kernel(std::size_t p, std::size_t q, const Vec2& s, const Vec2& x, double t,
                   const Vec2& theta_p, const Vec2& theta_q, const KernelParams& params) {
  const double ell = length_scale(p, q, params);
  return std::exp(-displacement(s, x, t, theta_p, theta_q).squaredNorm() / (ell * ell));
}

Mat build_propagator(double t, std::span<const Vec2> theta, std::span<const Vec2> sites,
                     const KernelParams& params, bool normalize) {
  Mat k = raw_propagator(t, theta, sites, params);
  if (normalize) {
    for (Eigen::Index r = 0; r < k.rows(); ++r) {
      const double s = k.row(r).sum();
      if (s > 1.0) k.row(r) /= s;
    }
  }
  return k;
}

void propagator_backward(double t, std::span<const Vec2> theta, std::span<const Vec2> sites,
                         const KernelParams& params, bool normalize, const Mat& k_bar,
                         std::span<Vec2> theta_bar, double& ell_same_bar, double& ell_cross_bar) {
  const auto n = sites.size();
  const auto P = theta.size();
  const Mat raw = raw_propagator(t, theta, sites, params);

  Mat raw_bar = k_bar;
  if (normalize) {
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      const double s = raw.row(r).sum();
      if (s > 1.0) {
        const double dot = k_bar.row(r).dot(raw.row(r));
        raw_bar.row(r) = k_bar.row(r) / s;
        raw_bar.row(r).array() -= dot / (s * s);
      }
    }
  }

  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < P; ++q) {
      const double ell = length_scale(p, q, params);
      const double inv_ell2 = 1.0 / (ell * ell);
      double ell_bar = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const auto a = static_cast<Eigen::Index>(p * n + i);
          const auto b = static_cast<Eigen::Index>(q * n + j);
          const double r = raw(a, b);
          const double rb = raw_bar(a, b);
          if (rb == 0.0 || r == 0.0) continue;
          const Vec2 d = displacement(sites[i], sites[j], t, theta[p], theta[q]);
          const Vec2 d_bar = (-2.0 * r * rb * inv_ell2) * d;
          theta_bar[p] -= t * d_bar;
          theta_bar[q] += (t + 1.0) * d_bar;
          ell_bar += rb * r * 2.0 * d.squaredNorm() * inv_ell2 / ell;
        }
      }
      (p == q ? ell_same_bar : ell_cross_bar) += ell_bar;
    }
  }
}

Mat squared_exponential_cov(double sigma, double ell, std::span<const Vec2> sites,
                            std::size_t n_heights) {
  const auto n = sites.size();
  Mat block(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d2 = (sites[i] - sites[j]).squaredNorm();
      block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          sigma * sigma * std::exp(-0.5 * d2 / (ell * ell));
    }
  }
  const auto dim = static_cast<Eigen::Index>(n * n_heights);
  Mat cov = Mat::Zero(dim, dim);
  for (std::size_t p = 0; p < n_heights; ++p) {
    const auto o = static_cast<Eigen::Index>(p * n);
    cov.block(o, o, block.rows(), block.cols()) = block;
  }
  return cov;
}

Mat build_noise_cov(NoiseKind kind, const NoiseCovParams& params, std::span<const Vec2> sites,
                    std::size_t n_heights) {
  if (kind == NoiseKind::epsilon) {
    return squared_exponential_cov(params.sigma_eps, params.ell_eps, sites, n_heights);
  }
  return squared_exponential_cov(params.sigma_eta, params.ell_eta, sites, n_heights);
}

void squared_exponential_backward(double sigma, double ell, std::span<const Vec2> sites,
                                  std::size_t n_heights, const Mat& cov_bar, double& sigma_bar,
                                  double& ell_bar) {
  const auto n = sites.size();
  for (std::size_t p = 0; p < n_heights; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d2 = (sites[i] - sites[j]).squaredNorm();
        const double e = std::exp(-0.5 * d2 / (ell * ell));
        const double cb = cov_bar(static_cast<Eigen::Index>(p * n + i), static_cast<Eigen::Index>(p * n + j));
        sigma_bar += cb * 2.0 * sigma * e;
        ell_bar += cb * sigma * sigma * e * d2 / (ell * ell * ell);
      }
    }
  }
}

SpectralRadius spectral_radius(const Mat& k) {
  SpectralRadius out;
  const auto n = k.rows();
  if (n == 0) {
    out.converged = true;
    return out;
  }
  Vec x = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  double prev = -1.0;
  double prev_two_step = -1.0;
  for (int it = 1; it <= 10000; ++it) {
    Vec y = k * x;
    const double ny = y.norm();
    out.iterations = it;
    if (ny == 0.0) {
      out.value = 0.0;
      out.converged = true;
      return out;
    }
    // Two-step ratio tolerates a dominant pair of equal modulus.
    Vec z = k * (y / ny);
    const double nz = z.norm();
    const double two_step = std::sqrt(ny * nz);
    out.value = two_step;
    if (std::abs(ny - prev) <= 1e-8 * ny || std::abs(two_step - prev_two_step) <= 1e-8 * two_step) {
      if (it > 1) {
        out.converged = true;
        out.value = std::abs(ny - prev) <= 1e-8 * ny ? ny : two_step;
        return out;
      }
    }
    prev = ny;
    prev_two_step = two_step;
    x = nz > 0.0 ? Vec(z / nz) : Vec(y / ny);
  }
  return out;
}

}  // namespace deepmide::kernel

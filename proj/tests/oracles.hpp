// Test-only oracles, kept independent of the implementation paths they check:
// ray quadrature for line integrals, direct-window SSIM, brute-force Gaussian
// sums, and central-difference helpers.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/rng.hpp"

namespace oracles {

using gsct::Mat2;
using gsct::Mat3;
using gsct::Vec2;
using gsct::Vec3;
using gsct::Vec4;

// Midpoint quadrature of rho * exp(-0.5 (x-p)^T A (x-p)) along the ray
// o + t d, step sigma_min/20, span +-6 sigma around the closest point.
inline double integrate_gaussian_along_ray(const Vec3& origin, const Vec3& dir, const Vec3& p,
                                           const Mat3& sigma, double rho) {
  const Mat3 A = sigma.inverse();
  const double beta = dir.dot(A * dir);
  const Vec3 w = origin - p;
  const double t_star = -w.dot(A * dir) / beta;
  const double sigma_ray = 1.0 / std::sqrt(beta);
  Eigen::SelfAdjointEigenSolver<Mat3> eig;
  eig.computeDirect(sigma);
  const double sigma_min = std::sqrt(eig.eigenvalues().minCoeff());
  const double step = sigma_min / 20.0;
  const double t0 = t_star - 6.0 * sigma_ray;
  const double t1 = t_star + 6.0 * sigma_ray;
  const long n = static_cast<long>(std::ceil((t1 - t0) / step));
  const double dt = (t1 - t0) / static_cast<double>(n);
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    const Vec3 x = origin + (t0 + (static_cast<double>(i) + 0.5) * dt) * dir - p;
    acc += std::exp(-0.5 * x.dot(A * x));
  }
  return rho * acc * dt;
}

// Direct evaluation of the summed 3D Gaussians at one point, no truncation.
inline double field_value(const gsct::GaussianCloud& cloud, const Vec3& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const gsct::ActivatedSplat act = gsct::activate(cloud, i);
    const Mat3 sigma = gsct::covariance(act.scales, act.unit_quat);
    const Vec3 d = x - act.position;
    acc += act.density * std::exp(-0.5 * d.dot(sigma.inverse() * d));
  }
  return acc;
}

// Plain textbook windowed SSIM mean over valid window positions, 11x11 (11^3)
// Gaussian product window, sigma 1.5, C1 = 1e-4, C2 = 9e-4.
inline std::vector<double> ssim_window_1d() {
  std::vector<double> w(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 5) * (i - 5) / 2.25);
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& x : w) x /= sum;
  return w;
}

inline double naive_ssim2d_mean(const gsct::Image& a, const gsct::Image& b) {
  const std::vector<double> w1 = ssim_window_1d();
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  long count = 0;
  for (int cv = 5; cv <= b.n_v - 6; ++cv) {
    for (int cu = 5; cu <= b.n_u - 6; ++cu) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int dv = -5; dv <= 5; ++dv) {
        for (int du = -5; du <= 5; ++du) {
          const double wgt = w1[static_cast<std::size_t>(du + 5)] *
                             w1[static_cast<std::size_t>(dv + 5)];
          const double x = a.at(cu + du, cv + dv);
          const double y = b.at(cu + du, cv + dv);
          mx += wgt * x;
          my += wgt * y;
          mxx += wgt * x * x;
          myy += wgt * y * y;
          mxy += wgt * x * y;
        }
      }
      const double sx = mxx - mx * mx;
      const double sy = myy - my * my;
      const double sxy = mxy - mx * my;
      total += (2 * mx * my + c1) * (2 * sxy + c2) /
               ((mx * mx + my * my + c1) * (sx + sy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

inline double naive_ssim3d_mean(const gsct::Volume& a, const gsct::Volume& b) {
  const std::vector<double> w1 = ssim_window_1d();
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  long count = 0;
  for (int cz = 5; cz <= b.dims[2] - 6; ++cz) {
    for (int cy = 5; cy <= b.dims[1] - 6; ++cy) {
      for (int cx = 5; cx <= b.dims[0] - 6; ++cx) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int dz = -5; dz <= 5; ++dz) {
          for (int dy = -5; dy <= 5; ++dy) {
            for (int dx = -5; dx <= 5; ++dx) {
              const double wgt = w1[static_cast<std::size_t>(dx + 5)] *
                                 w1[static_cast<std::size_t>(dy + 5)] *
                                 w1[static_cast<std::size_t>(dz + 5)];
              const double x = a.at(cx + dx, cy + dy, cz + dz);
              const double y = b.at(cx + dx, cy + dy, cz + dz);
              mx += wgt * x;
              my += wgt * y;
              mxx += wgt * x * x;
              myy += wgt * y * y;
              mxy += wgt * x * y;
            }
          }
        }
        const double sx = mxx - mx * mx;
        const double sy = myy - my * my;
        const double sxy = mxy - mx * my;
        total += (2 * mx * my + c1) * (2 * sxy + c2) /
                 ((mx * mx + my * my + c1) * (sx + sy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

// Max |a - b| relative to the peak magnitude of b.
inline double max_error_relative_to_peak(const std::vector<double>& a,
                                         const std::vector<double>& b) {
  double peak = 0.0;
  for (const double x : b) peak = std::max(peak, std::abs(x));
  if (peak == 0.0) peak = 1.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst / peak;
}

// Central-difference check of one scalar parameter against its analytic
// gradient; returns the relative mismatch (0 when both are negligible).
inline double fd_relative_error(double* param, double analytic,
                                const std::function<double()>& loss, double step = 0.0) {
  const double h = step > 0.0 ? step : std::max(std::abs(*param) * 1e-5, 1e-7);
  const double original = *param;
  *param = original + h;
  const double f_plus = loss();
  *param = original - h;
  const double f_minus = loss();
  *param = original;
  const double fd = (f_plus - f_minus) / (2.0 * h);
  if (std::abs(fd) <= 1e-6 && std::abs(analytic) <= 1e-6) return 0.0;
  return std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-9});
}

// Random anisotropic test cloud shared by the oracle and gradient suites.
inline gsct::GaussianCloud random_cloud(std::uint64_t seed, int count, double pos_range = 5.0,
                                        double scale_lo = 0.5, double scale_hi = 2.5) {
  gsct::Rng rng(seed);
  gsct::GaussianCloud cloud;
  for (int i = 0; i < count; ++i) {
    const Vec3 pos(rng.uniform(-pos_range, pos_range), rng.uniform(-pos_range, pos_range),
                   rng.uniform(-pos_range, pos_range));
    const Vec3 ls(std::log(rng.uniform(scale_lo, scale_hi)),
                  std::log(rng.uniform(scale_lo, scale_hi)),
                  std::log(rng.uniform(scale_lo, scale_hi)));
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    if (q.norm() == 0.0) q = Vec4(1, 0, 0, 0);
    q.normalize();
    cloud.push_back(pos, ls, q, rng.uniform(0.2, 1.5));
  }
  return cloud;
}

}  // namespace oracles

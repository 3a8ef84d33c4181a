#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <unordered_map>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/optim.hpp"
#include "gsct/parallel.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"
#include "gsct/voxelizer.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// Classical reconstruction for cold starts
// ---------------------------------------------------------------------------

namespace detail {

inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> w_len(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= w_len;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Spectrum of the band-limited Ram-Lak kernel, padded for linear convolution:
// h[0] = 1/(4 d^2), h[n] = -1/(pi n d)^2 for odd n, 0 for even n.
inline std::vector<double> ramp_spectrum(int n_u, double d, std::size_t padded) {
  std::vector<std::complex<double>> h(padded, 0.0);
  h[0] = 1.0 / (4.0 * d * d);
  for (int n = 1; n < n_u; ++n) {
    if (n % 2 == 0) continue;
    const double value = -1.0 / (M_PI * M_PI * n * n * d * d);
    h[static_cast<std::size_t>(n)] = value;
    h[padded - static_cast<std::size_t>(n)] = value;
  }
  fft_radix2(h, false);
  std::vector<double> spectrum(padded);
  for (std::size_t i = 0; i < padded; ++i) spectrum[i] = h[i].real();
  return spectrum;
}

// Bilinear detector sample; zero outside the pixel-center rectangle.
inline double sample_detector(const Image& img, double pu, double pv) {
  if (pu < 0.0 || pv < 0.0 || pu > img.n_u - 1 || pv > img.n_v - 1) return 0.0;
  const int u0 = std::min(static_cast<int>(pu), img.n_u - 2 >= 0 ? img.n_u - 2 : 0);
  const int v0 = std::min(static_cast<int>(pv), img.n_v - 2 >= 0 ? img.n_v - 2 : 0);
  const int u1 = std::min(u0 + 1, img.n_u - 1);
  const int v1 = std::min(v0 + 1, img.n_v - 1);
  const double tu = pu - u0, tv = pv - v0;
  return img.at(u0, v0) * (1 - tu) * (1 - tv) + img.at(u1, v0) * tu * (1 - tv) +
         img.at(u0, v1) * (1 - tu) * tv + img.at(u1, v1) * tu * tv;
}

}  // namespace detail

inline Volume backproject_cone(const ProjectionSet& projections, const GridSpec& grid);

// Parallel-beam filtered backprojection: frequency-domain Ram-Lak filter along
// detector rows, then backprojection with bilinear detector sampling, clamped
// at zero. Assumes views spread over a half rotation. Cone-beam inputs are
// routed to backproject_cone.
inline Volume fbp_parallel(const ProjectionSet& projections, const GridSpec& grid) {
  projections.validate();
  if (projections.geometry.mode == BeamMode::cone) return backproject_cone(projections, grid);
  const ScanGeometry& geom = projections.geometry;
  const std::size_t n_views = projections.images.size();
  Volume out = Volume::zeros(grid.dims, grid.spacing, grid.origin);
  if (n_views == 0) return out;

  const std::size_t padded = detail::next_pow2(static_cast<std::size_t>(2 * geom.n_u));
  const std::vector<double> spectrum = detail::ramp_spectrum(geom.n_u, geom.s_u, padded);

  // Filter every row of every view.
  std::vector<Image> filtered(n_views);
  for (std::size_t view = 0; view < n_views; ++view) {
    filtered[view] = Image::zeros(geom.n_u, geom.n_v);
  }
  parallel_for(0, static_cast<std::int64_t>(n_views) * geom.n_v, [&](std::int64_t job) {
    const std::size_t view = static_cast<std::size_t>(job / geom.n_v);
    const int v = static_cast<int>(job % geom.n_v);
    std::vector<std::complex<double>> row(padded, 0.0);
    for (int u = 0; u < geom.n_u; ++u) row[static_cast<std::size_t>(u)] = projections.images[view].at(u, v);
    detail::fft_radix2(row, false);
    for (std::size_t i = 0; i < padded; ++i) row[i] *= spectrum[i];
    detail::fft_radix2(row, true);
    for (int u = 0; u < geom.n_u; ++u) {
      filtered[view].at(u, v) = row[static_cast<std::size_t>(u)].real() * geom.s_u;
    }
  }, 1);

  // Backproject.
  std::vector<double> cos_t(n_views), sin_t(n_views);
  for (std::size_t view = 0; view < n_views; ++view) {
    cos_t[view] = std::cos(geom.angles[view]);
    sin_t[view] = std::sin(geom.angles[view]);
  }
  const double d_theta = M_PI / static_cast<double>(n_views);
  const double cu = 0.5 * (geom.n_u - 1);
  const double cv = 0.5 * (geom.n_v - 1);
  parallel_for(0, grid.dims[2], [&](std::int64_t iz) {
    for (int iy = 0; iy < grid.dims[1]; ++iy) {
      for (int ix = 0; ix < grid.dims[0]; ++ix) {
        const Vec3 x = grid.origin + grid.spacing * Vec3(ix, iy, iz);
        double acc = 0.0;
        for (std::size_t view = 0; view < n_views; ++view) {
          // u axis is (-sin, cos, 0), v axis is z
          const double pu = (-sin_t[view] * x[0] + cos_t[view] * x[1]) / geom.s_u + cu;
          const double pv = x[2] / geom.s_v + cv;
          acc += detail::sample_detector(filtered[view], pu, pv);
        }
        out.values[static_cast<std::size_t>(out.index(ix, iy, static_cast<int>(iz)))] =
            std::max(acc * d_theta, 0.0);
      }
    }
  });
  return out;
}

// Unfiltered cone-beam backprojection with the classical distance weighting,
// clamped at zero and normalized to max 1. Quality is only good enough for
// initialization.
inline Volume backproject_cone(const ProjectionSet& projections, const GridSpec& grid) {
  projections.validate();
  check(projections.geometry.mode == BeamMode::cone, "backproject_cone: cone geometry required");
  const ScanGeometry& geom = projections.geometry;
  const std::size_t n_views = projections.images.size();
  Volume out = Volume::zeros(grid.dims, grid.spacing, grid.origin);
  if (n_views == 0) return out;

  std::vector<ViewFrame> frames(n_views);
  for (std::size_t view = 0; view < n_views; ++view) frames[view] = view_frame(geom, view);
  const double cu = 0.5 * (geom.n_u - 1);
  const double cv = 0.5 * (geom.n_v - 1);
  parallel_for(0, grid.dims[2], [&](std::int64_t iz) {
    for (int iy = 0; iy < grid.dims[1]; ++iy) {
      for (int ix = 0; ix < grid.dims[0]; ++ix) {
        const Vec3 x = grid.origin + grid.spacing * Vec3(ix, iy, iz);
        double acc = 0.0;
        for (std::size_t view = 0; view < n_views; ++view) {
          const ViewFrame& frame = frames[view];
          const Vec3 rel = x - frame.source;
          const double tz = rel.dot(frame.d);
          if (tz <= 0.0) continue;
          const double pu = frame.focal * rel.dot(frame.u) / (tz * geom.s_u) + cu;
          const double pv = frame.focal * rel.dot(frame.v) / (tz * geom.s_v) + cv;
          const double weight = geom.source_to_origin / tz;
          acc += weight * weight * detail::sample_detector(projections.images[view], pu, pv);
        }
        out.values[static_cast<std::size_t>(out.index(ix, iy, static_cast<int>(iz)))] =
            std::max(acc, 0.0);
      }
    }
  });
  const double peak = out.max_value();
  if (peak > 0.0) {
    for (double& x : out.values) x /= peak;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Foreground masking and position sampling
// ---------------------------------------------------------------------------

// Boolean grid of voxels strictly above fraction * max(volume). An all-zero
// volume yields an empty mask with a warning.
inline std::vector<std::uint8_t> foreground_mask(const Volume& vol, double fraction) {
  check(fraction >= 0.0 && fraction < 1.0, "foreground_mask: fraction must be in [0, 1)");
  std::vector<std::uint8_t> mask(vol.values.size(), 0);
  const double peak = vol.max_value();
  if (peak <= 0.0) {
    std::fprintf(stderr, "gsct: warning: foreground_mask of an all-zero volume is empty\n");
    return mask;
  }
  const double threshold = fraction * peak;
  for (std::size_t i = 0; i < vol.values.size(); ++i) mask[i] = vol.values[i] > threshold;
  return mask;
}

enum class SampleMode { intensity, gradient };

namespace detail {

// Central-difference gradient magnitude with replicated borders (so the
// gradient across the boundary is zero).
inline double gradient_magnitude(const Volume& vol, int x, int y, int z) {
  const auto v = [&](int ix, int iy, int iz) {
    return vol.at(std::clamp(ix, 0, vol.dims[0] - 1), std::clamp(iy, 0, vol.dims[1] - 1),
                  std::clamp(iz, 0, vol.dims[2] - 1));
  };
  const double gx = 0.5 * (v(x + 1, y, z) - v(x - 1, y, z));
  const double gy = 0.5 * (v(x, y + 1, z) - v(x, y - 1, z));
  const double gz = 0.5 * (v(x, y, z + 1) - v(x, y, z - 1));
  return std::sqrt(gx * gx + gy * gy + gz * gz);
}

}  // namespace detail

// Draws n world positions with probability proportional to the masked
// intensity or gradient magnitude: without replacement when n fits inside the
// mask, with replacement otherwise. Every position gets sub-voxel jitter
// U(-0.5, 0.5) * spacing.
inline std::vector<Vec3> sample_positions(const Volume& vol,
                                          const std::vector<std::uint8_t>& mask, std::size_t n,
                                          SampleMode mode, Rng& rng) {
  check(mask.size() == vol.values.size(), "sample_positions: mask size mismatch");
  check(n >= 1, "sample_positions: n must be at least 1");
  std::vector<std::int64_t> candidates;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) candidates.push_back(static_cast<std::int64_t>(i));
  }
  check(!candidates.empty(), "sample_positions: empty mask");

  const auto voxel_of = [&](std::int64_t flat) {
    const int x = static_cast<int>(flat % vol.dims[0]);
    const int y = static_cast<int>((flat / vol.dims[0]) % vol.dims[1]);
    const int z = static_cast<int>(flat / (static_cast<std::int64_t>(vol.dims[0]) * vol.dims[1]));
    return std::array<int, 3>{x, y, z};
  };
  std::vector<double> weights(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto [x, y, z] = voxel_of(candidates[c]);
    weights[c] = mode == SampleMode::intensity ? std::max(vol.at(x, y, z), 0.0)
                                               : detail::gradient_magnitude(vol, x, y, z);
  }

  std::vector<std::int64_t> chosen;
  chosen.reserve(n);
  if (n <= candidates.size()) {
    // Weighted sampling without replacement via exponential keys: the n
    // smallest -log(u)/w are a weighted sample.
    std::vector<std::pair<double, std::int64_t>> keys(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double u = 1.0 - rng.uniform();  // (0, 1]
      const double key = weights[c] > 0.0 ? -std::log(u) / weights[c]
                                          : std::numeric_limits<double>::infinity();
      keys[c] = {key, candidates[c]};
    }
    std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n - 1), keys.end());
    keys.resize(n);
    std::sort(keys.begin(), keys.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [key, flat] : keys) chosen.push_back(flat);
  } else {
    std::vector<double> cdf(weights.size());
    double total = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      total += weights[c];
      cdf[c] = total;
    }
    check(total > 0.0, "sample_positions: all weights are zero");
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rng.uniform() * total;
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
      const std::size_t c = std::min(static_cast<std::size_t>(it - cdf.begin()),
                                     candidates.size() - 1);
      chosen.push_back(candidates[c]);
    }
  }

  std::vector<Vec3> positions;
  positions.reserve(n);
  for (const std::int64_t flat : chosen) {
    const auto [x, y, z] = voxel_of(flat);
    const Vec3 jitter(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    positions.push_back(vol.voxel_center(x, y, z) + jitter * vol.spacing);
  }
  return positions;
}

// ---------------------------------------------------------------------------
// Cloud construction
// ---------------------------------------------------------------------------

namespace detail {

// 1-nearest-neighbor distances through a uniform grid; falls back to a long
// scan only when neighboring cells are empty.
inline std::vector<double> nearest_neighbor_distances(const std::vector<Vec3>& points) {
  const std::size_t n = points.size();
  std::vector<double> dist(n, 0.0);
  if (n < 2) return dist;
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diag = (hi - lo).norm();
  const double cell = std::max(diag / std::cbrt(static_cast<double>(n)), 1e-12);
  const auto cell_of = [&](const Vec3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>((p[0] - lo[0]) / cell),
                                       static_cast<std::int64_t>((p[1] - lo[1]) / cell),
                                       static_cast<std::int64_t>((p[2] - lo[2]) / cell)};
  };
  const auto hash_of = [](const std::array<std::int64_t, 3>& c) {
    return static_cast<std::uint64_t>(c[0]) * 73856093u ^
           static_cast<std::uint64_t>(c[1]) * 19349663u ^
           static_cast<std::uint64_t>(c[2]) * 83492791u;
  };
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> buckets;
  buckets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    buckets[hash_of(cell_of(points[i]))].push_back(static_cast<std::int32_t>(i));
  }
  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t si) {
    const std::size_t i = static_cast<std::size_t>(si);
    const auto center = cell_of(points[i]);
    double best = std::numeric_limits<double>::infinity();
    for (int radius = 1; radius < 1 << 20; radius *= 2) {
      for (std::int64_t dz = -radius; dz <= radius; ++dz) {
        for (std::int64_t dy = -radius; dy <= radius; ++dy) {
          for (std::int64_t dx = -radius; dx <= radius; ++dx) {
            const auto it = buckets.find(hash_of({center[0] + dx, center[1] + dy, center[2] + dz}));
            if (it == buckets.end()) continue;
            for (const std::int32_t j : it->second) {
              if (static_cast<std::size_t>(j) == i) continue;
              best = std::min(best, (points[static_cast<std::size_t>(j)] - points[i]).norm());
            }
          }
        }
      }
      // Unscanned cells hold points farther than (radius - 1) * cell away.
      if (best <= (radius - 1) * cell || radius * cell > diag) break;
    }
    dist[i] = std::isfinite(best) ? best : diag;
  }, 64);
  return dist;
}

}  // namespace detail

// Builds a cloud from sampled positions: density k * trilinear volume value,
// identity rotation, isotropic scale equal to the 1-NN distance clamped to
// [voxel spacing, 10% of the position extent].
inline GaussianCloud init_cloud(const Volume& vol, const std::vector<Vec3>& positions,
                                double density_scale) {
  check(density_scale > 0.0, "init_cloud: density scale must be positive");
  check(!positions.empty(), "init_cloud: no positions");
  GaussianCloud cloud;
  cloud.reserve(positions.size());

  std::vector<double> nn;
  if (positions.size() >= 2) {
    nn = detail::nearest_neighbor_distances(positions);
  } else {
    std::fprintf(stderr,
                 "gsct: warning: single-position init, falling back to 2x voxel spacing\n");
    nn.assign(1, 2.0 * vol.spacing);
  }

  Vec3 lo = positions[0], hi = positions[0];
  for (const Vec3& p : positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = 0.5 * (hi - lo).norm();
  const double scale_lo = vol.spacing;
  const double scale_hi = std::max(0.1 * extent, scale_lo);

  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double scale = std::clamp(nn[i], scale_lo, scale_hi);
    const double density = density_scale * std::max(vol.sample_trilinear(positions[i]), 0.0);
    cloud.push_back(positions[i], Vec3::Constant(std::log(scale)), Vec4(1, 0, 0, 0), density);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class InitStrategy { fdk_intensity, fdk_gradient, prior_direct, prior_rapid_fit };

struct InitConfig {
  InitStrategy strategy = InitStrategy::fdk_gradient;
  std::size_t n_gaussians = 2000;
  double density_scale = 0.15;        // k
  double foreground_threshold = 0.05; // fraction of the max value
  int rapid_fit_iterations = 50;
  std::uint64_t seed = 0;

  void validate() const {
    check(n_gaussians >= 1, "InitConfig: n_gaussians must be at least 1");
    check(density_scale > 0.0 && density_scale <= 1.0, "InitConfig: k must be in (0, 1]");
    check(foreground_threshold >= 0.0 && foreground_threshold < 1.0,
          "InitConfig: foreground threshold must be in [0, 1)");
    check(rapid_fit_iterations >= 0, "InitConfig: rapid fit iterations must be >= 0");
  }
};

// Cold start: classical reconstruction, foreground mask, weighted sampling,
// nearest-neighbor scales.
inline GaussianCloud init_from_projections(const ProjectionSet& projections,
                                           const GridSpec& grid, const InitConfig& config) {
  config.validate();
  check(config.strategy == InitStrategy::fdk_intensity ||
            config.strategy == InitStrategy::fdk_gradient,
        "init_from_projections: prior strategies need init_from_prior");
  const Volume recon = fbp_parallel(projections, grid);
  const std::vector<std::uint8_t> mask = foreground_mask(recon, config.foreground_threshold);
  Rng rng(config.seed);
  const SampleMode mode = config.strategy == InitStrategy::fdk_intensity
                              ? SampleMode::intensity
                              : SampleMode::gradient;
  const std::vector<Vec3> positions =
      sample_positions(recon, mask, config.n_gaussians, mode, rng);
  return init_cloud(recon, positions, config.density_scale);
}

// Warm start from a prior volume (normalized to max 1): gradient-mode sampling
// on the prior, then an optional rapid volume fit. With zero fit iterations
// this is the "prior applied directly" comparison strategy.
inline GaussianCloud init_from_prior(const Volume& prior, const InitConfig& config,
                                     const TrainConfig& fit_config,
                                     const TrainOptions& fit_options = {}) {
  config.validate();
  prior.validate();
  const double peak = prior.max_value();
  check(peak > 0.0 && peak <= 1.0 + 1e-6, "init_from_prior: prior must be normalized to max 1");

  const std::vector<std::uint8_t> mask = foreground_mask(prior, config.foreground_threshold);
  Rng rng(config.seed);
  const std::vector<Vec3> positions =
      sample_positions(prior, mask, config.n_gaussians, SampleMode::gradient, rng);
  GaussianCloud cloud = init_cloud(prior, positions, config.density_scale);
  const int fit_iterations = config.strategy == InitStrategy::prior_direct
                                 ? 0
                                 : config.rapid_fit_iterations;
  if (fit_iterations > 0) {
    TrainConfig rapid = fit_config;
    rapid.iterations = fit_iterations;
    rapid.seed = config.seed;
    cloud = train_volume_fit(cloud, prior, rapid, fit_options).cloud;
  }
  return cloud;
}

}  // namespace gsct

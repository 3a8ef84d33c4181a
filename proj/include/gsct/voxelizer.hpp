#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/parallel.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// Grid regions
// ---------------------------------------------------------------------------

// Dense grid description without values; regions are axis-aligned windows of a
// parent grid.
struct GridSpec {
  std::array<int, 3> dims{0, 0, 0};
  double spacing = 1.0;
  Vec3 origin = Vec3::Zero();  // world center of voxel (0,0,0)

  static GridSpec centered(std::array<int, 3> dims, double spacing) {
    GridSpec spec;
    spec.dims = dims;
    spec.spacing = spacing;
    spec.origin = Vec3(-0.5 * spacing * (dims[0] - 1), -0.5 * spacing * (dims[1] - 1),
                       -0.5 * spacing * (dims[2] - 1));
    return spec;
  }

  static GridSpec of(const Volume& vol) { return GridSpec{vol.dims, vol.spacing, vol.origin}; }

  std::int64_t count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
};

struct GridRegion {
  std::array<int, 3> offset{0, 0, 0};  // voxel index of the region corner in the parent
  std::array<int, 3> dims{0, 0, 0};
  double spacing = 1.0;
  Vec3 origin = Vec3::Zero();  // world center of region voxel (0,0,0)

  static GridRegion covering(const GridSpec& parent) {
    return GridRegion{{0, 0, 0}, parent.dims, parent.spacing, parent.origin};
  }

  static GridRegion of_parent(const GridSpec& parent, std::array<int, 3> offset,
                              std::array<int, 3> dims) {
    for (int a = 0; a < 3; ++a) {
      check(dims[a] >= 1, "GridRegion: dims must be at least 1");
      check(offset[a] >= 0 && offset[a] + dims[a] <= parent.dims[a],
            "GridRegion: region outside parent grid");
    }
    GridRegion region;
    region.offset = offset;
    region.dims = dims;
    region.spacing = parent.spacing;
    region.origin = parent.origin + parent.spacing * Vec3(offset[0], offset[1], offset[2]);
    return region;
  }

  std::int64_t count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
};

// Uniformly random axis-aligned region of the requested size, fully inside
// the parent. Requests larger than the parent clamp to the parent with a
// warning.
inline GridRegion sample_subvolume(const GridSpec& parent, std::array<int, 3> sub_dims,
                                   Rng& rng) {
  std::array<int, 3> dims = sub_dims;
  for (int a = 0; a < 3; ++a) {
    if (dims[a] > parent.dims[a]) {
      std::fprintf(stderr,
                   "gsct: warning: sub-volume dim %d (%d) exceeds parent (%d); clamping\n", a,
                   dims[a], parent.dims[a]);
      dims[a] = parent.dims[a];
    }
    check(dims[a] >= 1, "sample_subvolume: dims must be at least 1");
  }
  std::array<int, 3> offset{};
  for (int a = 0; a < 3; ++a) {
    offset[a] = static_cast<int>(rng.uniform_int(parent.dims[a] - dims[a] + 1));
  }
  return GridRegion::of_parent(parent, offset, dims);
}

// ---------------------------------------------------------------------------
// Forward voxelization
// ---------------------------------------------------------------------------

struct VoxelSettings {
  double tau_cut = 1e-4;   // against the activated density
  double sigma_cap = 3.0;  // cap per-axis extents at sigma_cap * sqrt(lambda_max)
};

namespace detail {

struct VoxelSplat {
  Vec3 position = Vec3::Zero();
  Mat3 sigma_inv = Mat3::Identity();
  double density = 0.0;
  int lo[3] = {0, 0, 0};
  int hi[3] = {-1, -1, -1};  // inclusive, in region voxel indices
  bool skip = true;
};

// Per-axis half-extent min(sqrt(2 ln(rho/tau)) * sigma_axis, sigma_cap *
// sigma_max), mirroring the detector-plane bounding in 3D.
inline VoxelSplat prepare_voxel_splat(const ActivatedSplat& act, const Mat3& sigma,
                                      const GridRegion& region, const VoxelSettings& settings) {
  VoxelSplat vs;
  vs.position = act.position;
  vs.density = act.density;
  if (!(act.density > settings.tau_cut)) return vs;
  const double det = sigma.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) return vs;
  vs.sigma_inv = sigma.inverse();

  Eigen::SelfAdjointEigenSolver<Mat3> eig;
  eig.computeDirect(sigma);
  const double lam_max = eig.eigenvalues().maxCoeff();
  const double cap = settings.sigma_cap * std::sqrt(std::max(lam_max, 0.0));
  const double r = std::sqrt(2.0 * std::log(act.density / settings.tau_cut));

  bool overlap = true;
  for (int a = 0; a < 3; ++a) {
    const double h = std::min(r * std::sqrt(std::max(sigma(a, a), 0.0)), cap);
    const double g = (act.position[a] - region.origin[a]) / region.spacing;
    vs.lo[a] = std::max(0, static_cast<int>(std::ceil(g - h / region.spacing)));
    vs.hi[a] = std::min(region.dims[a] - 1, static_cast<int>(std::floor(g + h / region.spacing)));
    overlap = overlap && vs.lo[a] <= vs.hi[a];
  }
  vs.skip = !overlap;
  return vs;
}

inline std::vector<VoxelSplat> prepare_voxel_splats(const GaussianCloud& cloud,
                                                    const GridRegion& region,
                                                    const VoxelSettings& settings) {
  std::vector<VoxelSplat> splats(cloud.size());
  parallel_for(0, static_cast<std::int64_t>(cloud.size()), [&](std::int64_t i) {
    const ActivatedSplat act = activate(cloud, static_cast<std::size_t>(i));
    const Mat3 sigma = covariance(act.scales, act.unit_quat);
    splats[static_cast<std::size_t>(i)] = prepare_voxel_splat(act, sigma, region, settings);
  }, 32);
  return splats;
}

}  // namespace detail

// Sums every splat's 3D Gaussian at the voxel centers inside its bounding
// box. Work is parallel over z slices; each voxel accumulates splats in
// ascending index order.
inline Volume voxelize(const GaussianCloud& cloud, const GridRegion& region,
                       const VoxelSettings& settings = {}, RenderStats* stats = nullptr) {
  cloud.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<detail::VoxelSplat> splats =
      detail::prepare_voxel_splats(cloud, region, settings);
  Volume out = Volume::zeros(region.dims, region.spacing, region.origin);

  std::vector<std::int64_t> slice_evals(static_cast<std::size_t>(region.dims[2]), 0);
  parallel_for(0, region.dims[2], [&](std::int64_t iz) {
    const int z = static_cast<int>(iz);
    std::int64_t evals = 0;
    for (const auto& vs : splats) {
      if (vs.skip || z < vs.lo[2] || z > vs.hi[2]) continue;
      const Mat3& A = vs.sigma_inv;
      const double dz = region.origin[2] + region.spacing * z - vs.position[2];
      for (int y = vs.lo[1]; y <= vs.hi[1]; ++y) {
        const double dy = region.origin[1] + region.spacing * y - vs.position[1];
        for (int x = vs.lo[0]; x <= vs.hi[0]; ++x) {
          const double dx = region.origin[0] + region.spacing * x - vs.position[0];
          const double q = A(0, 0) * dx * dx + A(1, 1) * dy * dy + A(2, 2) * dz * dz +
                           2.0 * (A(0, 1) * dx * dy + A(0, 2) * dx * dz + A(1, 2) * dy * dz);
          out.at(x, y, z) += vs.density * std::exp(-0.5 * q);
        }
        evals += vs.hi[0] - vs.lo[0] + 1;
      }
    }
    slice_evals[static_cast<std::size_t>(iz)] = evals;
  });

  if (stats) {
    for (const auto& vs : splats) stats->culled += vs.skip;
    for (std::int64_t e : slice_evals) stats->pixel_pairs += e;
    stats->forward_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

// Full-grid voxelization, the export path. A single region covers the grid;
// the only allocation beyond the output is the O(M) splat precomputation.
inline Volume voxelize_full(const GaussianCloud& cloud, const GridSpec& grid,
                            const VoxelSettings& settings = {}, RenderStats* stats = nullptr) {
  return voxelize(cloud, GridRegion::covering(grid), settings, stats);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Exact analytic gradients of voxelize; per-Gaussian accumulation over the
// splat's own voxels, 3D positional-gradient magnitude in pos_grad_norm.
inline ParamGradients voxelize_backward(const GaussianCloud& cloud, const GridRegion& region,
                                        const Volume& grad_volume,
                                        const VoxelSettings& settings = {},
                                        RenderStats* stats = nullptr) {
  check(grad_volume.dims == region.dims, "voxelize_backward: grad dims must match region");
  const auto t0 = std::chrono::steady_clock::now();
  ParamGradients grads;
  grads.resize(cloud.size());

  parallel_for(0, static_cast<std::int64_t>(cloud.size()), [&](std::int64_t si) {
    const std::size_t i = static_cast<std::size_t>(si);
    const ActivatedSplat act = activate(cloud, i);
    const Mat3 sigma = covariance(act.scales, act.unit_quat);
    const detail::VoxelSplat vs = detail::prepare_voxel_splat(act, sigma, region, settings);
    if (vs.skip) return;
    grads.visible[i] = 1;

    const Mat3& A = vs.sigma_inv;
    double g_rho = 0.0;
    Vec3 g_pos = Vec3::Zero();
    Mat3 g_A = Mat3::Zero();
    for (int z = vs.lo[2]; z <= vs.hi[2]; ++z) {
      for (int y = vs.lo[1]; y <= vs.hi[1]; ++y) {
        for (int x = vs.lo[0]; x <= vs.hi[0]; ++x) {
          const double w = grad_volume.at(x, y, z);
          if (w == 0.0) continue;
          const Vec3 delta = region.origin + region.spacing * Vec3(x, y, z) - vs.position;
          const Vec3 a_delta = A * delta;
          const double expo = std::exp(-0.5 * delta.dot(a_delta));
          g_rho += expo * w;
          const double ge = vs.density * expo * w;
          g_pos += ge * a_delta;
          g_A -= 0.5 * ge * (delta * delta.transpose());
        }
      }
    }
    const Mat3 g_sigma = -A * g_A * A;
    grads.positions[i] = g_pos;
    grads.raw_densities[i] = cloud.raw_densities[i] >= 0.0 ? g_rho : 0.0;
    grads.pos_grad_norm[i] = g_pos.norm();
    detail::covariance_backward(act.scales, act.unit_quat, cloud.rotations[i], g_sigma,
                                grads.log_scales[i], grads.rotations[i]);
  }, 16);

  if (stats) {
    stats->backward_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return grads;
}

}  // namespace gsct

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"
#include "gsct/voxelizer.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// Synthetic clouds
// ---------------------------------------------------------------------------

// Deterministic cloud for benchmarks: positions uniform in a centered cube,
// uniform isotropic scale and zero rotation by default. anisotropy > 1
// stretches the first axis and gives each splat a random orientation.
struct SyntheticCloudConfig {
  std::int64_t count = 1000;
  double half_extent = 0.8;  // positions uniform in [-half_extent, half_extent]^3
  double scale = 0.04;       // isotropic standard deviation, world units
  double anisotropy = 1.0;   // major/minor axis ratio
  double density = 1.0;
  std::uint64_t seed = 0;
};

inline GaussianCloud synthetic_cloud(const SyntheticCloudConfig& config) {
  Rng rng(config.seed);
  GaussianCloud cloud;
  cloud.reserve(static_cast<std::size_t>(config.count));
  for (std::int64_t i = 0; i < config.count; ++i) {
    const Vec3 pos(rng.uniform(-config.half_extent, config.half_extent),
                   rng.uniform(-config.half_extent, config.half_extent),
                   rng.uniform(-config.half_extent, config.half_extent));
    Vec3 log_scale = Vec3::Constant(std::log(config.scale));
    Vec4 quat(1, 0, 0, 0);
    if (config.anisotropy > 1.0) {
      log_scale[0] += std::log(config.anisotropy);
      quat = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      if (quat.norm() == 0.0) quat = Vec4(1, 0, 0, 0);
      quat.normalize();
    }
    cloud.push_back(pos, log_scale, quat, config.density);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Scaling sweeps
// ---------------------------------------------------------------------------

enum class SweepTarget { rasterize, voxelize };

struct SweepConfig {
  SweepTarget target = SweepTarget::rasterize;
  std::vector<int> sides;               // detector (n x n) or volume (n^3) side lengths
  std::vector<std::int64_t> counts;     // Gaussian counts
  int repeats = 5;                      // measured repeats; one warmup run is discarded
  double scale = 0.04;                  // world-space splat sigma (scene spans [-1, 1])
  std::uint64_t seed = 0;
  RasterSettings raster{};
  VoxelSettings voxel{};
};

// size = total pixels or voxels; work_pairs counts splat-tile pairs for the
// rasterizer and splat-voxel evaluations for the voxelizer (exact, repeatable
// numbers; timings are medians).
struct BenchRow {
  std::string target;
  std::int64_t size = 0;
  std::int64_t count = 0;
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  std::int64_t work_pairs = 0;
};

namespace detail {

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

inline std::vector<BenchRow> sweep(const SweepConfig& config) {
  check(!config.sides.empty() && !config.counts.empty(), "sweep: empty grid");
  check(config.repeats >= 1, "sweep: need at least one repeat");
  std::vector<BenchRow> rows;
  for (const std::int64_t count : config.counts) {
    SyntheticCloudConfig cloud_config;
    cloud_config.count = count;
    cloud_config.scale = config.scale;
    cloud_config.seed = config.seed;
    const GaussianCloud cloud = synthetic_cloud(cloud_config);
    for (const int side : config.sides) {
      BenchRow row;
      row.count = count;
      if (config.target == SweepTarget::rasterize) {
        row.target = "rasterize";
        row.size = static_cast<std::int64_t>(side) * side;
        ScanGeometry geom;
        geom.mode = BeamMode::parallel;
        geom.n_u = geom.n_v = side;
        geom.s_u = geom.s_v = 2.0 / side;  // detector covers [-1, 1]
        geom.angles = {0.0};
        Image grad = Image::zeros(side, side);
        for (double& x : grad.values) x = 1.0;
        std::vector<double> fwd, bwd;
        for (int rep = 0; rep <= config.repeats; ++rep) {
          RenderStats stats;
          rasterize_view(cloud, geom, 0, config.raster, &stats);
          rasterize_backward(cloud, geom, 0, grad, config.raster, &stats);
          if (rep == 0) {
            row.work_pairs = stats.tile_pairs;
            continue;  // warmup
          }
          fwd.push_back(stats.forward_ms);
          bwd.push_back(stats.backward_ms);
        }
        row.forward_ms = detail::median(fwd);
        row.backward_ms = detail::median(bwd);
      } else {
        row.target = "voxelize";
        row.size = static_cast<std::int64_t>(side) * side * side;
        const GridSpec grid = GridSpec::centered({side, side, side}, 2.0 / side);
        Volume grad = Volume::zeros(grid.dims, grid.spacing, grid.origin);
        for (double& x : grad.values) x = 1.0;
        std::vector<double> fwd, bwd;
        for (int rep = 0; rep <= config.repeats; ++rep) {
          RenderStats stats;
          voxelize_full(cloud, grid, config.voxel, &stats);
          voxelize_backward(cloud, GridRegion::covering(grid), grad, config.voxel, &stats);
          if (rep == 0) {
            row.work_pairs = stats.pixel_pairs;
            continue;
          }
          fwd.push_back(stats.forward_ms);
          bwd.push_back(stats.backward_ms);
        }
        row.forward_ms = detail::median(fwd);
        row.backward_ms = detail::median(bwd);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string bench_csv_header() {
  return "target,size,count,forward_ms,backward_ms,work_pairs";
}

inline std::string bench_csv_row(const BenchRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%.6f,%.6f,%lld", row.target.c_str(),
                static_cast<long long>(row.size), static_cast<long long>(row.count),
                row.forward_ms, row.backward_ms, static_cast<long long>(row.work_pairs));
  return buf;
}

// ---------------------------------------------------------------------------
// Power-law fitting
// ---------------------------------------------------------------------------

struct PowerLawFit {
  double exponent = 0.0;
  double r2 = 1.0;
};

// Least squares on log-log; sizes must span at least a factor of 4.
inline PowerLawFit fit_power_law(const std::vector<double>& sizes,
                                 const std::vector<double>& values) {
  check(sizes.size() == values.size(), "fit_power_law: size mismatch");
  check(sizes.size() >= 3, "fit_power_law: need at least 3 rows");
  double lo = sizes[0], hi = sizes[0];
  for (const double s : sizes) {
    check(s > 0.0, "fit_power_law: sizes must be positive");
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  check(hi >= 4.0 * lo, "fit_power_law: degenerate spread, sizes must span at least 4x");
  const std::size_t n = sizes.size();
  double sx = 0, sy = 0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    check(values[i] > 0.0, "fit_power_law: values must be positive");
    lx[i] = std::log(sizes[i]);
    ly[i] = std::log(values[i]);
    sx += lx[i];
    sy += ly[i];
  }
  const double mean_x = sx / static_cast<double>(n);
  const double mean_y = sy / static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mean_x) * (lx[i] - mean_x);
    sxy += (lx[i] - mean_x) * (ly[i] - mean_y);
    syy += (ly[i] - mean_y) * (ly[i] - mean_y);
  }
  PowerLawFit fit;
  fit.exponent = sxy / sxx;
  if (syy > 0.0) {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pred = mean_y + fit.exponent * (lx[i] - mean_x);
      ss_res += (ly[i] - pred) * (ly[i] - pred);
    }
    fit.r2 = 1.0 - ss_res / syy;
  } else {
    fit.r2 = 1.0;  // constant data is fit exactly by a zero exponent
  }
  return fit;
}

// Splat-tile pair count of one view under the given bounding mode; used to
// compare rectangular density-aware bounding against circumscribed squares.
inline std::int64_t tile_pair_count(const GaussianCloud& cloud, const ScanGeometry& geometry,
                                    std::size_t angle_index, const RasterSettings& settings) {
  const ViewFrame frame = view_frame(geometry, angle_index);
  const std::vector<Splat2D> splats = project_cloud(cloud, frame, geometry, settings);
  return bin_tiles(splats, geometry.n_u, geometry.n_v, settings.tile_size).pair_count();
}

}  // namespace gsct

#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/losses.hpp"
#include "gsct/metrics.hpp"
#include "gsct/parallel.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"
#include "gsct/voxelizer.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// One "iteration" is an epoch over all views for reconstruction, or one
// voxelize-and-step for volume fitting. Position learning rates are relative
// to the scene extent and decay log-linearly over the horizon (in view-steps).
struct TrainConfig {
  int iterations = 300;
  double lr_position = 2e-4;        // x scene extent at step 0
  double lr_position_final = 1e-6;  // x scene extent at the horizon
  std::int64_t lr_decay_horizon = 0;  // view-steps; 0 = iterations * n_views
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_density = 1e-2;
  int densify_interval = 5;   // iterations between adaptive-control passes
  int densify_start = 2;      // first iteration (1-based) eligible
  int densify_stop = 0;       // last eligible iteration; 0 = 60% of iterations
  double grad_threshold = 5e-5;       // mean per-step positional-gradient magnitude
  double prune_density = 5e-4;        // fraction of the max activated density
  double split_scale_fraction = 0.01; // of scene extent; larger splats split, smaller clone
  std::size_t max_gaussians = 100000;
  LossWeights weights;
  std::array<int, 3> tv_subvolume{32, 32, 32};
  std::uint64_t seed = 0;
  int eval_interval = 1;  // iterations between PSNR/SSIM3D evaluations

  void validate() const {
    check(iterations >= 1, "TrainConfig: iterations must be at least 1");
    check(lr_position > 0.0 && lr_position_final > 0.0 && lr_scale >= 0.0 &&
              lr_rotation >= 0.0 && lr_density >= 0.0,
          "TrainConfig: learning rates must be positive");
    check(grad_threshold >= 0.0 && prune_density >= 0.0 && split_scale_fraction >= 0.0,
          "TrainConfig: thresholds must be non-negative");
    check(densify_interval >= 1, "TrainConfig: densify interval must be at least 1");
    check(max_gaussians >= 1, "TrainConfig: max_gaussians must be at least 1");
    weights.validate();
  }

  int densify_stop_effective() const {
    return densify_stop > 0 ? densify_stop : (iterations * 6) / 10;
  }
};

struct LearningRates {
  double position = 1e-4;
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double density = 1e-2;
};

// Log-linear decay from base to final over [0, horizon], clamped at final.
inline double lr_schedule(double base, double final_lr, std::int64_t step,
                          std::int64_t horizon) {
  check(base > 0.0 && final_lr > 0.0, "lr_schedule: rates must be positive");
  if (step <= 0) return base;
  if (horizon <= 0 || step >= horizon) return final_lr;
  return base * std::pow(final_lr / base, static_cast<double>(step) /
                                              static_cast<double>(horizon));
}

// ---------------------------------------------------------------------------
// Optimizer state
// ---------------------------------------------------------------------------

// Adam moments plus the densification accumulators. All arrays track the cloud
// size through clone/split/prune in lockstep.
struct OptimState {
  std::vector<Vec3> m_pos, v_pos;
  std::vector<Vec3> m_ls, v_ls;
  std::vector<Vec4> m_rot, v_rot;
  std::vector<double> m_dens, v_dens;
  std::int64_t step = 0;
  std::vector<double> accum_grad_norm;  // summed positional-gradient magnitudes
  std::vector<Vec3> accum_grad_dir;     // summed 3D positional gradients (clone nudge)
  std::vector<std::int64_t> accum_count;
  Rng rng{0};
  double scene_extent = 1.0;
  double norm_factor = 1.0;  // target normalization applied by the trainer
  std::int64_t skipped_updates = 0;

  void init(std::size_t n, std::uint64_t seed) {
    m_pos.assign(n, Vec3::Zero());
    v_pos.assign(n, Vec3::Zero());
    m_ls.assign(n, Vec3::Zero());
    v_ls.assign(n, Vec3::Zero());
    m_rot.assign(n, Vec4::Zero());
    v_rot.assign(n, Vec4::Zero());
    m_dens.assign(n, 0.0);
    v_dens.assign(n, 0.0);
    accum_grad_norm.assign(n, 0.0);
    accum_grad_dir.assign(n, Vec3::Zero());
    accum_count.assign(n, 0);
    step = 0;
    skipped_updates = 0;
    rng = Rng(seed);
  }

  void check_lockstep(std::size_t n) const {
    check(m_pos.size() == n && v_pos.size() == n && m_ls.size() == n && v_ls.size() == n &&
              m_rot.size() == n && v_rot.size() == n && m_dens.size() == n &&
              v_dens.size() == n && accum_grad_norm.size() == n && accum_grad_dir.size() == n &&
              accum_count.size() == n,
          "OptimState: arrays out of lockstep with the cloud");
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

inline void adam_update(double& param, double& m, double& v, double grad, double lr,
                        double bias1, double bias2) {
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad * grad;
  param -= lr * (m / bias1) / (std::sqrt(v / bias2) + kAdamEps);
}

}  // namespace detail

// One Adam step over all parameter classes (beta1 0.9, beta2 0.999,
// eps 1e-15). Splats with any non-finite gradient are skipped and counted.
// Raw densities are re-projected to >= 0 afterwards.
inline void adam_step(GaussianCloud& cloud, OptimState& state, const ParamGradients& grads,
                      const LearningRates& lrs) {
  const std::size_t n = cloud.size();
  check(grads.positions.size() == n, "adam_step: gradients out of lockstep with the cloud");
  state.check_lockstep(n);
  state.step += 1;
  const double bias1 = 1.0 - std::pow(detail::kAdamBeta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(detail::kAdamBeta2, static_cast<double>(state.step));

  std::vector<std::uint8_t> skipped(n, 0);
  parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t si) {
    const std::size_t i = static_cast<std::size_t>(si);
    const bool ok = detail::finite(grads.positions[i]) && detail::finite(grads.log_scales[i]) &&
                    detail::finite(grads.rotations[i]) && std::isfinite(grads.raw_densities[i]);
    if (!ok) {
      skipped[i] = 1;
      return;
    }
    for (int a = 0; a < 3; ++a) {
      detail::adam_update(cloud.positions[i][a], state.m_pos[i][a], state.v_pos[i][a],
                          grads.positions[i][a], lrs.position, bias1, bias2);
      detail::adam_update(cloud.log_scales[i][a], state.m_ls[i][a], state.v_ls[i][a],
                          grads.log_scales[i][a], lrs.log_scale, bias1, bias2);
    }
    for (int a = 0; a < 4; ++a) {
      detail::adam_update(cloud.rotations[i][a], state.m_rot[i][a], state.v_rot[i][a],
                          grads.rotations[i][a], lrs.rotation, bias1, bias2);
    }
    detail::adam_update(cloud.raw_densities[i], state.m_dens[i], state.v_dens[i],
                        grads.raw_densities[i], lrs.density, bias1, bias2);
    if (cloud.raw_densities[i] < 0.0) cloud.raw_densities[i] = 0.0;
  }, 64);
  for (std::uint8_t s : skipped) state.skipped_updates += s;
}

// ---------------------------------------------------------------------------
// Adaptive control
// ---------------------------------------------------------------------------

struct AdaptiveReport {
  std::size_t pruned = 0;
  std::size_t cloned = 0;
  std::size_t split = 0;
};

// Prunes weak splats, then clones or splits high-gradient ones: a splat whose
// mean accumulated positional gradient exceeds grad_threshold is cloned (copy
// nudged along the descent direction) when its largest scale is below
// split_scale_fraction * extent, otherwise split into two children with scales
// divided by 1.6 and positions sampled from the parent. New splats start with
// zero Adam moments; accumulators are reset. The max_gaussians cap is enforced
// by skipping further densification.
inline AdaptiveReport adaptive_control(GaussianCloud& cloud, OptimState& state,
                                       const TrainConfig& config) {
  const std::size_t n = cloud.size();
  state.check_lockstep(n);
  AdaptiveReport report;

  std::vector<ActivatedSplat> act(n);
  double max_density = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    act[i] = activate(cloud, i);
    max_density = std::max(max_density, act[i].density);
  }
  const double prune_below = config.prune_density * max_density;

  enum class Op : std::uint8_t { keep, prune, clone, split };
  std::vector<Op> ops(n, Op::keep);
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (act[i].density < prune_below) {
      ops[i] = Op::prune;
      ++report.pruned;
    } else {
      ++survivors;
    }
  }
  std::int64_t budget = static_cast<std::int64_t>(config.max_gaussians) -
                        static_cast<std::int64_t>(survivors);
  for (std::size_t i = 0; i < n && budget > 0; ++i) {
    if (ops[i] != Op::keep || state.accum_count[i] == 0) continue;
    const double mean_grad = state.accum_grad_norm[i] / static_cast<double>(state.accum_count[i]);
    if (mean_grad <= config.grad_threshold) continue;
    const double max_scale = act[i].scales.maxCoeff();
    if (max_scale < config.split_scale_fraction * state.scene_extent) {
      ops[i] = Op::clone;
      ++report.cloned;
    } else {
      ops[i] = Op::split;
      ++report.split;
    }
    --budget;  // both operations add one net splat
  }

  GaussianCloud next;
  OptimState next_state = state;  // keeps rng, step, extent, norm factor
  const auto reserve = n + report.cloned + report.split;
  next.reserve(reserve);
  next_state.m_pos.clear(); next_state.v_pos.clear();
  next_state.m_ls.clear(); next_state.v_ls.clear();
  next_state.m_rot.clear(); next_state.v_rot.clear();
  next_state.m_dens.clear(); next_state.v_dens.clear();

  const auto copy_row = [&](std::size_t i) {
    next.push_back(cloud.positions[i], cloud.log_scales[i], cloud.rotations[i],
                   cloud.raw_densities[i]);
    next_state.m_pos.push_back(state.m_pos[i]);
    next_state.v_pos.push_back(state.v_pos[i]);
    next_state.m_ls.push_back(state.m_ls[i]);
    next_state.v_ls.push_back(state.v_ls[i]);
    next_state.m_rot.push_back(state.m_rot[i]);
    next_state.v_rot.push_back(state.v_rot[i]);
    next_state.m_dens.push_back(state.m_dens[i]);
    next_state.v_dens.push_back(state.v_dens[i]);
  };
  const auto fresh_row = [&](const Vec3& pos, const Vec3& log_scale, const Vec4& rot,
                             double raw_density) {
    next.push_back(pos, log_scale, rot, raw_density);
    next_state.m_pos.push_back(Vec3::Zero());
    next_state.v_pos.push_back(Vec3::Zero());
    next_state.m_ls.push_back(Vec3::Zero());
    next_state.v_ls.push_back(Vec3::Zero());
    next_state.m_rot.push_back(Vec4::Zero());
    next_state.v_rot.push_back(Vec4::Zero());
    next_state.m_dens.push_back(0.0);
    next_state.v_dens.push_back(0.0);
  };

  for (std::size_t i = 0; i < n; ++i) {
    switch (ops[i]) {
      case Op::prune:
        break;
      case Op::keep:
        copy_row(i);
        break;
      case Op::clone: {
        copy_row(i);
        Vec3 pos = cloud.positions[i];
        const Vec3 dir_sum = state.accum_grad_dir[i];
        const double norm = dir_sum.norm();
        if (norm > 0.0) {
          const double nudge = 0.5 * act[i].scales.mean();
          pos -= (dir_sum / norm) * nudge;
        }
        fresh_row(pos, cloud.log_scales[i], cloud.rotations[i], cloud.raw_densities[i]);
        break;
      }
      case Op::split: {
        const Mat3 rot = rotation_matrix(act[i].unit_quat);
        const Vec3 child_log_scale =
            cloud.log_scales[i] - Vec3::Constant(std::log(1.6));
        for (int child = 0; child < 2; ++child) {
          const Vec3 z(state.rng.normal(), state.rng.normal(), state.rng.normal());
          const Vec3 pos = cloud.positions[i] + rot * act[i].scales.cwiseProduct(z);
          fresh_row(pos, child_log_scale, cloud.rotations[i], cloud.raw_densities[i]);
        }
        break;
      }
    }
  }

  const std::size_t n_next = next.size();
  next_state.accum_grad_norm.assign(n_next, 0.0);
  next_state.accum_grad_dir.assign(n_next, Vec3::Zero());
  next_state.accum_count.assign(n_next, 0);
  cloud = std::move(next);
  state = std::move(next_state);
  return report;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainHooks {
  // Called after every logged iteration with the normalized-space model.
  std::function<void(int iteration, const GaussianCloud&, const OptimState&, const MetricLog&)>
      on_iteration;
};

struct TrainOptions {
  const Volume* eval_gt = nullptr;  // ground truth (physical units) for PSNR/SSIM3D logging
  GridSpec grid{};                  // reconstruction grid; dims 0 = derived from the geometry
  bool deterministic = false;       // zero the wall-time column for byte-stable logs
  RasterSettings raster{};
  VoxelSettings voxel{};
  SsimPath ssim_path = SsimPath::streaming;
  TrainHooks hooks{};
  // Resuming: state/log snapshots from a checkpoint plus the iteration to
  // continue from. The cloud passed to the trainer must be the checkpointed
  // one (normalized-space raw densities are restored from norm_factor).
  const OptimState* resume_state = nullptr;
  const MetricLog* resume_log = nullptr;
  int start_iteration = 0;
};

struct TrainResult {
  GaussianCloud cloud;  // physical units (densities rescaled by the norm factor)
  OptimState state;     // normalized-space optimizer state
  MetricLog log;
  double norm_factor = 1.0;
  bool diverged = false;
};

namespace detail {

inline GridSpec default_recon_grid(const ScanGeometry& geometry) {
  const int side = std::min(geometry.n_u, geometry.n_v);
  const double spacing = geometry.n_u * geometry.s_u / (std::sqrt(2.0) * side);
  return GridSpec::centered({side, side, side}, spacing);
}

inline void accumulate_control_stats(OptimState& state, const ParamGradients& grads) {
  for (std::size_t i = 0; i < grads.visible.size(); ++i) {
    if (!grads.visible[i]) continue;
    state.accum_grad_norm[i] += grads.pos_grad_norm[i];
    state.accum_grad_dir[i] += grads.positions[i];
    state.accum_count[i] += 1;
  }
}

inline bool densify_due(int iteration_1based, const TrainConfig& config) {
  return iteration_1based >= config.densify_start &&
         iteration_1based <= config.densify_stop_effective() &&
         iteration_1based % config.densify_interval == 0;
}

inline Volume crop(const Volume& vol, const GridRegion& region) {
  Volume out = Volume::zeros(region.dims, region.spacing, region.origin);
  for (int z = 0; z < region.dims[2]; ++z) {
    for (int y = 0; y < region.dims[1]; ++y) {
      const double* src =
          vol.values.data() + vol.index(region.offset[0], region.offset[1] + y,
                                        region.offset[2] + z);
      double* dst = out.values.data() + out.index(0, y, z);
      std::copy(src, src + region.dims[0], dst);
    }
  }
  return out;
}

}  // namespace detail

// Projection-driven reconstruction. Targets are normalized to max 1 at
// ingestion (densities are rescaled to match and scaled back on return), one
// iteration sweeps all views in a freshly shuffled order, and a 32^3
// sub-volume is voxelized per view-step for the TV term. Divergence restores
// the last finished iteration and stops.
inline TrainResult train_reconstruction(const GaussianCloud& initial_cloud,
                                        const ProjectionSet& projections,
                                        const TrainConfig& config,
                                        const TrainOptions& options = {}) {
  config.validate();
  projections.validate();
  check(!projections.images.empty(), "train_reconstruction: no projections");
  initial_cloud.validate();
  check(!initial_cloud.empty(), "train_reconstruction: empty cloud");
  check(initial_cloud.size() <= config.max_gaussians,
        "train_reconstruction: initial cloud exceeds max_gaussians");

  const ScanGeometry& geometry = projections.geometry;
  const std::size_t n_views = projections.images.size();
  const double norm = projections.max_value();
  check(norm > 0.0 && std::isfinite(norm), "train_reconstruction: projections must be positive");

  std::vector<Image> targets = projections.images;
  for (Image& img : targets) {
    for (double& x : img.values) x /= norm;
  }

  TrainResult result;
  result.norm_factor = norm;
  GaussianCloud cloud = initial_cloud;
  OptimState state;
  if (options.resume_state) {
    state = *options.resume_state;
    state.check_lockstep(cloud.size());
    if (options.resume_log) result.log = *options.resume_log;
  } else {
    for (double& d : cloud.raw_densities) d /= norm;
    state.init(cloud.size(), config.seed);
    state.scene_extent = std::max(scene_extent(cloud), 1e-9);
    state.norm_factor = norm;
  }

  const GridSpec grid =
      options.grid.dims[0] > 0 ? options.grid : detail::default_recon_grid(geometry);
  const std::int64_t horizon = config.lr_decay_horizon > 0
                                   ? config.lr_decay_horizon
                                   : static_cast<std::int64_t>(config.iterations) *
                                         static_cast<std::int64_t>(n_views);

  std::vector<std::size_t> view_order(n_views);
  for (std::size_t v = 0; v < n_views; ++v) view_order[v] = v;

  GaussianCloud last_good_cloud = cloud;
  OptimState last_good_state = state;

  for (int epoch = options.start_iteration; epoch < config.iterations; ++epoch) {
    const auto epoch_t0 = std::chrono::steady_clock::now();
    // reshuffle from the identity so the order is a function of the rng state
    // alone (resumed runs replay the same schedule)
    for (std::size_t v = 0; v < n_views; ++v) view_order[v] = v;
    state.rng.shuffle(view_order);
    double sum_l1 = 0.0, sum_ssim = 0.0, sum_tv = 0.0, sum_total = 0.0;
    bool diverged = false;

    for (const std::size_t view : view_order) {
      const GridRegion region = sample_subvolume(grid, config.tv_subvolume, state.rng);
      const Image rendered = rasterize_view(cloud, geometry, view, options.raster);
      Volume subvolume;
      if (config.weights.alpha_tv > 0.0) {
        subvolume = voxelize(cloud, region, options.voxel);
      } else {
        subvolume = Volume::zeros(region.dims, region.spacing, region.origin);
      }
      const ReconLoss loss =
          total_loss_recon(rendered, targets[view], subvolume, config.weights);
      if (!std::isfinite(loss.total)) {
        diverged = true;
        break;
      }
      sum_l1 += loss.l1;
      sum_ssim += loss.ssim;
      sum_tv += loss.tv;
      sum_total += loss.total;

      ParamGradients grads =
          rasterize_backward(cloud, geometry, view, loss.grad_image, options.raster);
      detail::accumulate_control_stats(state, grads);
      if (config.weights.alpha_tv > 0.0) {
        const ParamGradients tv_grads =
            voxelize_backward(cloud, region, loss.grad_subvolume, options.voxel);
        grads.add(tv_grads);
      }
      LearningRates lrs;
      lrs.position = lr_schedule(config.lr_position * state.scene_extent,
                                 config.lr_position_final * state.scene_extent, state.step,
                                 horizon);
      lrs.log_scale = config.lr_scale;
      lrs.rotation = config.lr_rotation;
      lrs.density = config.lr_density;
      adam_step(cloud, state, grads, lrs);
    }

    if (diverged) {
      cloud = std::move(last_good_cloud);
      state = std::move(last_good_state);
      result.diverged = true;
      break;
    }

    MetricRow row;
    row.iteration = epoch + 1;
    row.l1 = sum_l1 / static_cast<double>(n_views);
    row.ssim = sum_ssim / static_cast<double>(n_views);
    row.tv = sum_tv / static_cast<double>(n_views);
    row.total = sum_total / static_cast<double>(n_views);
    row.num_gaussians = static_cast<std::int64_t>(cloud.size());
    if (options.eval_gt &&
        ((epoch + 1) % config.eval_interval == 0 || epoch + 1 == config.iterations)) {
      Volume recon = voxelize_full(cloud, GridSpec::of(*options.eval_gt), options.voxel);
      for (double& x : recon.values) x *= norm;
      const double range = options.eval_gt->max_value();
      row.psnr = psnr(recon, *options.eval_gt, range > 0.0 ? range : 1.0);
      row.ssim3d = ssim3d_score(recon, *options.eval_gt);
    }
    row.wall_ms =
        options.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                        epoch_t0)
                  .count();
    result.log.push_back(row);
    // Densify before the hook so a checkpoint taken here resumes identically.
    if (detail::densify_due(epoch + 1, config)) {
      adaptive_control(cloud, state, config);
    }
    if (options.hooks.on_iteration) {
      options.hooks.on_iteration(epoch + 1, cloud, state, result.log);
    }
    last_good_cloud = cloud;
    last_good_state = state;
  }

  for (double& d : cloud.raw_densities) d *= norm;
  result.cloud = std::move(cloud);
  result.state = std::move(state);
  return result;
}

// Volume-driven fitting. The target is normalized to max 1 internally; each
// iteration voxelizes the full grid when it has at most 64^3 voxels, otherwise
// a random 64^3 region, and steps on L1 + alpha_ssim * SSIM3D.
inline TrainResult train_volume_fit(const GaussianCloud& initial_cloud, const Volume& target,
                                    const TrainConfig& config, const TrainOptions& options = {}) {
  config.validate();
  target.validate();
  initial_cloud.validate();
  check(!initial_cloud.empty(), "train_volume_fit: empty cloud");
  check(initial_cloud.size() <= config.max_gaussians,
        "train_volume_fit: initial cloud exceeds max_gaussians");
  const double norm = target.max_value();
  check(norm > 0.0 && std::isfinite(norm), "train_volume_fit: target must be positive");

  Volume target_n = target;
  for (double& x : target_n.values) x /= norm;

  TrainResult result;
  result.norm_factor = norm;
  GaussianCloud cloud = initial_cloud;
  OptimState state;
  if (options.resume_state) {
    state = *options.resume_state;
    state.check_lockstep(cloud.size());
    if (options.resume_log) result.log = *options.resume_log;
  } else {
    for (double& d : cloud.raw_densities) d /= norm;
    state.init(cloud.size(), config.seed);
    state.scene_extent = std::max(scene_extent(cloud), 1e-9);
    state.norm_factor = norm;
  }

  const GridSpec grid = GridSpec::of(target);
  const std::array<int, 3> chunk_dims{std::min(grid.dims[0], 64), std::min(grid.dims[1], 64),
                                      std::min(grid.dims[2], 64)};
  const bool full_grid = grid.count() <= 64ll * 64 * 64;
  const std::int64_t horizon =
      config.lr_decay_horizon > 0 ? config.lr_decay_horizon : config.iterations;

  GaussianCloud last_good_cloud = cloud;
  OptimState last_good_state = state;

  for (int iter = options.start_iteration; iter < config.iterations; ++iter) {
    const auto iter_t0 = std::chrono::steady_clock::now();
    const GridRegion region = full_grid ? GridRegion::covering(grid)
                                        : sample_subvolume(grid, chunk_dims, state.rng);
    const Volume rendered = voxelize(cloud, region, options.voxel);
    const Volume target_sub = full_grid ? target_n : detail::crop(target_n, region);
    const FitLoss loss =
        total_loss_fit(rendered, target_sub, config.weights.alpha_ssim, options.ssim_path);
    if (!std::isfinite(loss.total)) {
      cloud = std::move(last_good_cloud);
      state = std::move(last_good_state);
      result.diverged = true;
      break;
    }

    ParamGradients grads = voxelize_backward(cloud, region, loss.grad, options.voxel);
    // express positional-gradient magnitudes per voxel step, the 3D analogue
    // of the rasterizer's pixel units, so grad_threshold means the same thing
    for (double& mag : grads.pos_grad_norm) mag *= grid.spacing;
    detail::accumulate_control_stats(state, grads);
    LearningRates lrs;
    lrs.position = lr_schedule(config.lr_position * state.scene_extent,
                               config.lr_position_final * state.scene_extent, state.step,
                               horizon);
    lrs.log_scale = config.lr_scale;
    lrs.rotation = config.lr_rotation;
    lrs.density = config.lr_density;
    adam_step(cloud, state, grads, lrs);

    MetricRow row;
    row.iteration = iter + 1;
    row.l1 = loss.l1;
    row.ssim = loss.ssim;
    row.total = loss.total;
    row.num_gaussians = static_cast<std::int64_t>(cloud.size());
    if ((iter + 1) % config.eval_interval == 0 || iter + 1 == config.iterations) {
      const Volume recon = voxelize_full(cloud, grid, options.voxel);
      row.psnr = psnr(recon, target_n, 1.0);
      row.ssim3d = ssim3d_score(recon, target_n);
    }
    row.wall_ms =
        options.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                        iter_t0)
                  .count();
    result.log.push_back(row);
    if (detail::densify_due(iter + 1, config)) {
      adaptive_control(cloud, state, config);
    }
    if (options.hooks.on_iteration) {
      options.hooks.on_iteration(iter + 1, cloud, state, result.log);
    }
    last_good_cloud = cloud;
    last_good_state = state;
  }

  for (double& d : cloud.raw_densities) d *= norm;
  result.cloud = std::move(cloud);
  result.state = std::move(state);
  return result;
}

}  // namespace gsct

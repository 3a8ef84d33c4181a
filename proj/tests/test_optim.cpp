#include <catch2/catch_amalgamated.hpp>

#include "gsct/init.hpp"
#include "gsct/optim.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"
#include "gsct/synthetic.hpp"
#include "oracles.hpp"

using namespace gsct;

TEST_CASE("lr_schedule is a clamped geometric interpolation") {
  CHECK(lr_schedule(1e-2, 1e-4, 0, 100) == 1e-2);
  CHECK(lr_schedule(1e-2, 1e-4, 100, 100) == 1e-4);
  CHECK(lr_schedule(1e-2, 1e-4, 50, 100) == Catch::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(1e-2, 1e-4, 250, 100) == 1e-4);  // clamped past the horizon
  CHECK_THROWS_AS(lr_schedule(0.0, 1e-4, 0, 100), contract_error);
}

namespace {

ParamGradients zero_grads(std::size_t n) {
  ParamGradients g;
  g.resize(n);
  return g;
}

}  // namespace

TEST_CASE("adam_step with zero gradients leaves the cloud unchanged") {
  GaussianCloud cloud = oracles::random_cloud(70, 5);
  const GaussianCloud before = cloud;
  OptimState state;
  state.init(cloud.size(), 0);
  adam_step(cloud, state, zero_grads(cloud.size()), LearningRates{});
  CHECK(state.step == 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(cloud.positions[i] == before.positions[i]);
    CHECK(cloud.log_scales[i] == before.log_scales[i]);
    CHECK(cloud.rotations[i] == before.rotations[i]);
    CHECK(cloud.raw_densities[i] == before.raw_densities[i]);
  }
}

TEST_CASE("adam_step follows the hand-computed recurrence") {
  // Single scalar parameter with constant gradient 1 and lr 0.1, three steps.
  // Oracle: direct evaluation of the Adam recurrence, written independently.
  double param_oracle = 0.5;
  double m = 0.0, v = 0.0;
  const double lr = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
  std::vector<double> expected;
  for (int t = 1; t <= 3; ++t) {
    m = beta1 * m + (1 - beta1) * 1.0;
    v = beta2 * v + (1 - beta2) * 1.0;
    const double mhat = m / (1 - std::pow(beta1, t));
    const double vhat = v / (1 - std::pow(beta2, t));
    param_oracle -= lr * mhat / (std::sqrt(vhat) + eps);
    expected.push_back(param_oracle);
  }

  GaussianCloud cloud;
  cloud.push_back(Vec3::Zero(), Vec3::Zero(), Vec4(1, 0, 0, 0), 0.5);
  OptimState state;
  state.init(1, 0);
  ParamGradients grads = zero_grads(1);
  grads.raw_densities[0] = 1.0;
  LearningRates lrs;
  lrs.density = lr;
  lrs.position = lrs.log_scale = lrs.rotation = 0.0;
  for (int t = 0; t < 3; ++t) {
    adam_step(cloud, state, grads, lrs);
    CHECK(cloud.raw_densities[0] ==
          Catch::Approx(expected[static_cast<std::size_t>(t)]).epsilon(1e-14));
  }
}

TEST_CASE("adam_step re-projects drifting densities to zero") {
  GaussianCloud cloud;
  cloud.push_back(Vec3::Zero(), Vec3::Zero(), Vec4(1, 0, 0, 0), 0.001);
  OptimState state;
  state.init(1, 0);
  ParamGradients grads = zero_grads(1);
  grads.raw_densities[0] = 1.0;  // pushes the density down
  LearningRates lrs;
  lrs.density = 0.1;
  adam_step(cloud, state, grads, lrs);
  CHECK(cloud.raw_densities[0] == 0.0);
}

TEST_CASE("adam_step skips splats with non-finite gradients") {
  GaussianCloud cloud = oracles::random_cloud(71, 3);
  const GaussianCloud before = cloud;
  OptimState state;
  state.init(cloud.size(), 0);
  ParamGradients grads = zero_grads(cloud.size());
  grads.positions[1][0] = std::nan("");
  grads.positions[0][0] = 1.0;
  adam_step(cloud, state, grads, LearningRates{});
  CHECK(state.skipped_updates == 1);
  CHECK(cloud.positions[1] == before.positions[1]);
  CHECK(cloud.positions[0] != before.positions[0]);
}

namespace {

TrainConfig quiet_config() {
  TrainConfig config;
  config.densify_start = 1 << 20;  // adaptive control off
  return config;
}

}  // namespace

TEST_CASE("adaptive_control leaves a calm cloud alone") {
  GaussianCloud cloud = oracles::random_cloud(72, 6);
  OptimState state;
  state.init(cloud.size(), 0);
  state.scene_extent = scene_extent(cloud);
  TrainConfig config;
  const AdaptiveReport report = adaptive_control(cloud, state, config);
  CHECK(report.pruned == 0);
  CHECK(report.cloned == 0);
  CHECK(report.split == 0);
  CHECK(cloud.size() == 6);
}

TEST_CASE("adaptive_control prunes zero-density splats without changing renders") {
  GaussianCloud cloud = oracles::random_cloud(73, 5);
  cloud.raw_densities[2] = 0.0;
  OptimState state;
  state.init(cloud.size(), 0);
  state.scene_extent = scene_extent(cloud);

  const ScanGeometry geom = [] {
    ScanGeometry g;
    g.mode = BeamMode::parallel;
    g.n_u = g.n_v = 32;
    g.s_u = g.s_v = 0.7;
    g.angles = {0.4};
    return g;
  }();
  const Image before = rasterize_view(cloud, geom, 0);

  TrainConfig config;
  const AdaptiveReport report = adaptive_control(cloud, state, config);
  CHECK(report.pruned == 1);
  CHECK(cloud.size() == 4);
  state.check_lockstep(cloud.size());

  const Image after = rasterize_view(cloud, geom, 0);
  for (std::size_t i = 0; i < before.values.size(); ++i) {
    CHECK(after.values[i] == before.values[i]);  // zero-density splats render nothing
  }
}

TEST_CASE("adaptive_control splits oversized high-gradient splats") {
  GaussianCloud cloud = oracles::random_cloud(74, 4);
  OptimState state;
  state.init(cloud.size(), 0);
  state.scene_extent = scene_extent(cloud);
  // splat 1: large scale, high accumulated gradient
  cloud.log_scales[1] = Vec3::Constant(std::log(0.5 * state.scene_extent));
  state.accum_grad_norm[1] = 1.0;
  state.accum_count[1] = 1;
  TrainConfig config;
  config.grad_threshold = 1e-3;
  config.split_scale_fraction = 0.01;

  const Vec3 parent_log_scale = cloud.log_scales[1];
  const double parent_density = cloud.raw_densities[1];
  const AdaptiveReport report = adaptive_control(cloud, state, config);
  CHECK(report.split == 1);
  CHECK(report.cloned == 0);
  CHECK(cloud.size() == 5);  // net +1
  state.check_lockstep(cloud.size());
  // children are spliced where the parent was, with scales shrunk by 1.6
  const Vec3 expected_child = parent_log_scale - Vec3::Constant(std::log(1.6));
  CHECK(cloud.log_scales[1].isApprox(expected_child));
  CHECK(cloud.log_scales[2].isApprox(expected_child));
  CHECK(cloud.raw_densities[1] == parent_density);
  CHECK(cloud.raw_densities[2] == parent_density);
  // fresh Adam moments for the children
  CHECK(state.m_pos[1] == Vec3::Zero());
  CHECK(state.v_dens[2] == 0.0);
  // accumulators are reset
  for (const double a : state.accum_grad_norm) CHECK(a == 0.0);
}

TEST_CASE("adaptive_control clones small high-gradient splats with a nudge") {
  GaussianCloud cloud = oracles::random_cloud(75, 3);
  OptimState state;
  state.init(cloud.size(), 0);
  state.scene_extent = 100.0;  // everything counts as small
  state.accum_grad_norm[0] = 1.0;
  state.accum_grad_dir[0] = Vec3(1, 0, 0);
  state.accum_count[0] = 1;
  TrainConfig config;
  config.grad_threshold = 1e-3;

  const Vec3 parent_pos = cloud.positions[0];
  const AdaptiveReport report = adaptive_control(cloud, state, config);
  CHECK(report.cloned == 1);
  CHECK(cloud.size() == 4);
  // the copy follows its parent, nudged along the descent direction (-x here)
  CHECK(cloud.positions[1][0] < parent_pos[0]);
  CHECK(cloud.positions[1][1] == Catch::Approx(parent_pos[1]));
}

TEST_CASE("adaptive_control never exceeds the gaussian cap") {
  GaussianCloud cloud = oracles::random_cloud(76, 10);
  OptimState state;
  state.init(cloud.size(), 0);
  state.scene_extent = 100.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    state.accum_grad_norm[i] = 1.0;
    state.accum_count[i] = 1;
  }
  TrainConfig config;
  config.grad_threshold = 1e-6;
  config.max_gaussians = 12;  // room for only two additions
  const AdaptiveReport report = adaptive_control(cloud, state, config);
  CHECK(cloud.size() <= 12);
  CHECK(report.cloned + report.split == 2);
}

TEST_CASE("reconstruction recovers a perturbed self-consistent cloud") {
  // Projections rendered from a known cloud; optimization starts from a
  // perturbed copy and must drive the projection L1 below 1e-3.
  const int n_views = 12;
  GaussianCloud truth;
  Rng rng(77);
  for (int i = 0; i < 20; ++i) {
    truth.push_back(Vec3(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6)),
                    Vec3::Constant(std::log(rng.uniform(1.2, 2.5))), Vec4(1, 0, 0, 0),
                    rng.uniform(0.4, 1.0));
  }
  ScanGeometry geom;
  geom.mode = BeamMode::parallel;
  geom.n_u = geom.n_v = 48;
  geom.s_u = geom.s_v = 0.55;
  geom.angles = default_angles(n_views, BeamMode::parallel);
  ProjectionSet projections;
  projections.geometry = geom;
  for (int view = 0; view < n_views; ++view) {
    projections.images.push_back(
        rasterize_view(truth, geom, static_cast<std::size_t>(view)));
  }

  GaussianCloud start = truth;
  for (std::size_t i = 0; i < start.size(); ++i) {
    start.positions[i] += Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                               rng.uniform(-0.4, 0.4));
    start.log_scales[i] += Vec3::Constant(rng.uniform(-0.15, 0.15));
    start.raw_densities[i] *= rng.uniform(0.7, 1.3);
  }

  TrainConfig config = quiet_config();
  config.iterations = 200;
  config.weights.alpha_tv = 0.0;  // pure projection consistency
  config.weights.alpha_ssim = 0.25;
  config.seed = 5;
  // fine-convergence regime: Adam's scale-free steps plateau at the constant
  // learning rate, so park the non-decayed classes low for a tight fit
  config.lr_scale = 1e-3;
  config.lr_density = 2e-3;
  config.lr_rotation = 2e-4;
  TrainOptions options;
  options.deterministic = true;
  const TrainResult result = train_reconstruction(start, projections, config, options);
  REQUIRE_FALSE(result.diverged);
  REQUIRE(result.log.size() == 200);
  CHECK(result.log.back().l1 < 1e-3);
}

TEST_CASE("reconstruction loss trend is non-increasing on a phantom") {
  PhantomConfig pc;
  pc.dims = {32, 32, 32};
  pc.seed = 3;
  const Volume phantom = make_phantom(pc);
  const ScanGeometry geom = default_geometry(phantom, 16, BeamMode::parallel, 64, 64);
  const ProjectionSet projections = raymarch_project(phantom, geom);

  InitConfig ic;
  ic.strategy = InitStrategy::fdk_gradient;
  ic.n_gaussians = 300;
  ic.seed = 1;
  const GaussianCloud init = init_from_projections(projections, GridSpec::of(phantom), ic);

  TrainConfig config;
  config.iterations = 60;
  config.seed = 2;
  config.eval_interval = 1 << 20;  // loss trend only, no eval needed
  TrainOptions options;
  options.grid = GridSpec::of(phantom);
  options.deterministic = true;
  const TrainResult result = train_reconstruction(init, projections, config, options);
  REQUIRE_FALSE(result.diverged);
  REQUIRE(result.log.size() == 60);
  const auto window_mean = [&](std::size_t lo, std::size_t hi) {
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += result.log[i].total;
    return acc / static_cast<double>(hi - lo);
  };
  CHECK(window_mean(45, 60) <= window_mean(0, 15));
}

TEST_CASE("volume fit is stable at an exact fixed point") {
  // A dominant unit-density splat pins the volume max to exactly 1.0, so the
  // trainer's normalization is exact and the L1 gradient is exactly zero.
  // SSIM is disabled: Adam is scale-free, so even ulp-level SSIM gradients
  // would produce lr-sized steps.
  GaussianCloud cloud;
  cloud.push_back(Vec3::Zero(), Vec3::Constant(std::log(1.2)), Vec4(1, 0, 0, 0), 1.0);
  cloud.push_back(Vec3(6, 6, 6), Vec3::Constant(std::log(0.9)), Vec4(1, 0, 0, 0), 0.5);
  cloud.push_back(Vec3(-6, 5, -4), Vec3::Constant(std::log(0.8)), Vec4(1, 0, 0, 0), 0.4);
  const GridSpec grid = GridSpec::centered({17, 17, 17}, 1.0);
  const Volume target = voxelize_full(cloud, grid);
  REQUIRE(target.max_value() == 1.0);

  TrainConfig config = quiet_config();
  config.iterations = 50;
  config.weights.alpha_ssim = 0.0;
  config.eval_interval = 1 << 20;
  const GaussianCloud before = cloud;
  const TrainResult result = train_volume_fit(cloud, target, config);
  CHECK(result.log.back().total == 0.0);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK((result.cloud.positions[i] - before.positions[i]).norm() < 1e-4);
    CHECK((result.cloud.log_scales[i] - before.log_scales[i]).norm() < 1e-4);
    CHECK((result.cloud.rotations[i] - before.rotations[i]).norm() < 1e-4);
    CHECK(std::abs(result.cloud.raw_densities[i] - before.raw_densities[i]) < 1e-4);
  }
}

TEST_CASE("volume fit improves the phantom representation") {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  pc.seed = 9;
  const Volume phantom = make_phantom(pc);

  const std::vector<std::uint8_t> mask = foreground_mask(phantom, 0.05);
  Rng rng(10);
  const std::vector<Vec3> positions = sample_positions(phantom, mask, 250, SampleMode::gradient,
                                                       rng);
  const GaussianCloud init = init_cloud(phantom, positions, 0.15);

  TrainConfig config;
  config.iterations = 60;
  config.seed = 4;
  config.eval_interval = 30;
  // mean-loss gradients at 24^3 are ~4x the desk-scale calibration of
  // grad_threshold; raise it so densification stays selective
  config.grad_threshold = 3e-4;
  const TrainResult result = train_volume_fit(init, phantom, config);
  REQUIRE_FALSE(result.diverged);
  CHECK(result.log.back().total < result.log.front().total);
  CHECK(result.log.back().ssim3d > 0.5);
}

TEST_CASE("training state arrays stay in lockstep through adaptive control") {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  pc.seed = 12;
  const Volume phantom = make_phantom(pc);
  const ScanGeometry geom = default_geometry(phantom, 8, BeamMode::parallel, 48, 48);
  const ProjectionSet projections = raymarch_project(phantom, geom);
  InitConfig ic;
  ic.n_gaussians = 120;
  ic.seed = 3;
  const GaussianCloud init = init_from_projections(projections, GridSpec::of(phantom), ic);

  TrainConfig config;
  config.iterations = 12;
  config.densify_interval = 3;
  config.densify_start = 2;
  config.densify_stop = 12;
  config.grad_threshold = 0.0;  // force densification traffic
  config.max_gaussians = 400;
  config.eval_interval = 1 << 20;
  TrainOptions options;
  options.grid = GridSpec::of(phantom);
  std::size_t hook_checks = 0;
  options.hooks.on_iteration = [&](int, const GaussianCloud& cloud, const OptimState& state,
                                   const MetricLog&) {
    state.check_lockstep(cloud.size());
    ++hook_checks;
  };
  const TrainResult result = train_reconstruction(init, projections, config, options);
  CHECK(hook_checks == 12);
  CHECK(result.cloud.size() <= 400);
  CHECK(result.cloud.size() > 120);  // densification actually happened
}

TEST_CASE("identical seeds give identical metric logs") {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  pc.seed = 15;
  const Volume phantom = make_phantom(pc);
  const ScanGeometry geom = default_geometry(phantom, 6, BeamMode::parallel, 48, 48);
  const ProjectionSet projections = raymarch_project(phantom, geom);
  InitConfig ic;
  ic.n_gaussians = 100;
  ic.seed = 3;
  const GaussianCloud init = init_from_projections(projections, GridSpec::of(phantom), ic);

  TrainConfig config;
  config.iterations = 8;
  config.seed = 42;
  config.eval_interval = 4;
  TrainOptions options;
  options.grid = GridSpec::of(phantom);
  options.eval_gt = &phantom;
  options.deterministic = true;
  const TrainResult a = train_reconstruction(init, projections, config, options);
  const TrainResult b = train_reconstruction(init, projections, config, options);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(metric_csv_row(a.log[i]) == metric_csv_row(b.log[i]));
  }
  for (std::size_t i = 0; i < a.cloud.size(); ++i) {
    CHECK(a.cloud.positions[i] == b.cloud.positions[i]);
    CHECK(a.cloud.raw_densities[i] == b.cloud.raw_densities[i]);
  }
}

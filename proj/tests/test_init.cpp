#include <catch2/catch_amalgamated.hpp>

#include "gsct/init.hpp"
#include "gsct/metrics.hpp"
#include "gsct/rng.hpp"
#include "gsct/synthetic.hpp"
#include "oracles.hpp"

using namespace gsct;

TEST_CASE("fbp of empty projection data is a zero volume") {
  ScanGeometry geom;
  geom.mode = BeamMode::parallel;
  geom.n_u = geom.n_v = 32;
  geom.s_u = geom.s_v = 1.0;
  geom.angles = default_angles(20, BeamMode::parallel);
  ProjectionSet projections;
  projections.geometry = geom;
  for (std::size_t v = 0; v < geom.angles.size(); ++v) {
    projections.images.push_back(Image::zeros(32, 32));
  }
  const Volume recon = fbp_parallel(projections, GridSpec::centered({16, 16, 16}, 1.0));
  for (const double x : recon.values) CHECK(x == 0.0);
}

TEST_CASE("fbp reconstructs a dense-view disk phantom above 30 dB") {
  const Volume disk = make_disk_phantom({64, 64, 64}, 1.0, 0.55);
  const ScanGeometry geom = default_geometry(disk, 180, BeamMode::parallel, 128, 128);
  const ProjectionSet projections = raymarch_project(disk, geom);
  const Volume recon = fbp_parallel(projections, GridSpec::of(disk));
  const double db = psnr(recon, disk, 1.0);
  INFO("fbp psnr " << db);
  CHECK(db >= 30.0);
}

TEST_CASE("single-view backprojection does not crash") {
  const Volume disk = make_disk_phantom({16, 16, 16}, 1.0, 0.5);
  const ScanGeometry geom = default_geometry(disk, 1, BeamMode::parallel, 32, 32);
  const ProjectionSet projections = raymarch_project(disk, geom);
  const Volume recon = fbp_parallel(projections, GridSpec::of(disk));
  for (const double x : recon.values) CHECK(std::isfinite(x));
}

TEST_CASE("cone-beam backprojection basics") {
  ScanGeometry geom;
  geom.mode = BeamMode::cone;
  geom.n_u = geom.n_v = 32;
  geom.s_u = geom.s_v = 1.5;
  geom.angles = default_angles(24, BeamMode::cone);
  geom.source_to_origin = 80.0;
  geom.origin_to_detector = 40.0;

  SECTION("zero data gives a zero volume") {
    ProjectionSet projections;
    projections.geometry = geom;
    for (std::size_t v = 0; v < geom.angles.size(); ++v) {
      projections.images.push_back(Image::zeros(32, 32));
    }
    const Volume recon = backproject_cone(projections, GridSpec::centered({16, 16, 16}, 1.0));
    for (const double x : recon.values) CHECK(x == 0.0);
  }

  SECTION("constant projections give a finite, normalized blob") {
    ProjectionSet projections;
    projections.geometry = geom;
    for (std::size_t v = 0; v < geom.angles.size(); ++v) {
      Image img = Image::zeros(32, 32);
      for (double& x : img.values) x = 1.0;
      projections.images.push_back(img);
    }
    const Volume recon = backproject_cone(projections, GridSpec::centered({16, 16, 16}, 1.0));
    CHECK(recon.max_value() == Catch::Approx(1.0));
    for (const double x : recon.values) {
      CHECK(std::isfinite(x));
      CHECK(x >= 0.0);
    }
  }
}

TEST_CASE("cone backprojection approaches the parallel result as the cone narrows") {
  // Large blob in a tight domain; correlation tolerates the low-frequency
  // bias of the unfiltered backprojection.
  PhantomConfig pc;
  pc.dims = {32, 32, 32};
  pc.seed = 2;
  pc.n_ellipsoids = 3;
  pc.shell_fraction = 0.0;
  const Volume phantom = make_phantom(pc);

  ScanGeometry cone = default_geometry(phantom, 36, BeamMode::cone, 64, 64,
                                       /*source_to_origin=*/2000.0,
                                       /*origin_to_detector=*/50.0);
  const ProjectionSet projections = raymarch_project(phantom, cone);
  const Volume bp = backproject_cone(projections, GridSpec::of(phantom));

  ScanGeometry par = default_geometry(phantom, 36, BeamMode::parallel, 64, 64);
  // half-rotation views for the filtered reference
  const ProjectionSet par_proj = raymarch_project(phantom, par);
  const Volume fbp = fbp_parallel(par_proj, GridSpec::of(phantom));

  // Pearson correlation
  const auto mean_of = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (const double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  const double mean_bp = mean_of(bp.values);
  const double mean_fbp = mean_of(fbp.values);
  double num = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < bp.values.size(); ++i) {
    const double a = bp.values[i] - mean_bp;
    const double b = fbp.values[i] - mean_fbp;
    num += a * b;
    var_a += a * a;
    var_b += b * b;
  }
  const double correlation = num / std::sqrt(var_a * var_b);
  INFO("correlation " << correlation);
  CHECK(correlation >= 0.9);
}

TEST_CASE("foreground_mask thresholds against the volume max") {
  Volume vol = Volume::centered({4, 4, 4}, 1.0);
  Rng rng(5);
  for (double& x : vol.values) x = rng.uniform(0.0, 1.0);
  vol.values[7] = 0.0;
  vol.values[13] = 2.0;  // the max

  SECTION("fraction 0 selects all strictly positive voxels") {
    const std::vector<std::uint8_t> mask = foreground_mask(vol, 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      CHECK(static_cast<bool>(mask[i]) == (vol.values[i] > 0.0));
    }
  }

  SECTION("fraction just under 1 keeps only the max voxel") {
    const std::vector<std::uint8_t> mask = foreground_mask(vol, 0.999);
    std::size_t count = 0;
    for (const std::uint8_t m : mask) count += m;
    CHECK(count == 1);
    CHECK(mask[13] == 1);
  }

  SECTION("all-zero volume yields an empty mask") {
    Volume zero = Volume::centered({4, 4, 4}, 1.0);
    const std::vector<std::uint8_t> mask = foreground_mask(zero, 0.1);
    for (const std::uint8_t m : mask) CHECK(m == 0);
  }

  SECTION("disk mask volume is close to the true disk volume") {
    const Volume disk = make_disk_phantom({48, 48, 48}, 1.0, 0.6);
    const std::vector<std::uint8_t> mask = foreground_mask(disk, 0.05);
    std::size_t count = 0;
    for (const std::uint8_t m : mask) count += m;
    const double radius = 0.6 * 0.5 * 48;
    const double expected = 4.0 / 3.0 * M_PI * radius * radius * radius;
    CHECK(std::abs(static_cast<double>(count) - expected) / expected < 0.05);
  }
}

TEST_CASE("sample_positions") {
  SECTION("a single masked voxel is always chosen, up to jitter") {
    Volume vol = Volume::centered({8, 8, 8}, 1.0);
    vol.at(2, 3, 4) = 1.0;
    std::vector<std::uint8_t> mask(vol.values.size(), 0);
    mask[static_cast<std::size_t>(vol.index(2, 3, 4))] = 1;
    Rng rng(6);
    const std::vector<Vec3> positions = sample_positions(vol, mask, 1, SampleMode::intensity,
                                                         rng);
    REQUIRE(positions.size() == 1);
    const Vec3 center = vol.voxel_center(2, 3, 4);
    CHECK((positions[0] - center).cwiseAbs().maxCoeff() <= 0.5 * vol.spacing);
  }

  SECTION("uniform intensities sample uniformly over the mask") {
    Volume vol = Volume::centered({10, 10, 10}, 1.0);
    for (double& x : vol.values) x = 1.0;
    std::vector<std::uint8_t> mask(vol.values.size(), 1);
    Rng rng(7);
    std::vector<long> counts(vol.values.size(), 0);
    const int rounds = 100;  // 100 * 1000 = 1e5 draws with replacement
    for (int round = 0; round < rounds; ++round) {
      const std::vector<Vec3> positions =
          sample_positions(vol, mask, 1001, SampleMode::intensity, rng);
      for (const Vec3& p : positions) {
        const Vec3 g = (p - vol.origin) / vol.spacing;
        const int ix = static_cast<int>(std::lround(g[0]));
        const int iy = static_cast<int>(std::lround(g[1]));
        const int iz = static_cast<int>(std::lround(g[2]));
        ++counts[static_cast<std::size_t>(vol.index(ix, iy, iz))];
      }
    }
    double chi2 = 0.0;
    const double expected = 100.0 * 1001.0 / 1000.0;
    for (const long c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // dof 999; 99.9% quantile is ~1144, allow margin
    CHECK(chi2 < 1200.0);
  }

  SECTION("gradient mode concentrates samples at the step edge") {
    Volume vol = Volume::centered({32, 32, 32}, 1.0);
    for (int z = 0; z < 32; ++z) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 16; x < 32; ++x) vol.at(x, y, z) = 1.0;
      }
    }
    const std::vector<std::uint8_t> mask = foreground_mask(vol, 0.05);
    Rng rng(8);
    const std::vector<Vec3> positions = sample_positions(vol, mask, 500, SampleMode::gradient,
                                                         rng);
    std::size_t near_edge = 0;
    const double edge_x = vol.origin[0] + vol.spacing * 15.5;  // between voxels 15 and 16
    for (const Vec3& p : positions) {
      if (std::abs(p[0] - edge_x) <= 2.0 * vol.spacing) ++near_edge;
    }
    CHECK(static_cast<double>(near_edge) / positions.size() >= 0.9);
  }

  SECTION("an empty mask is a contract error") {
    Volume vol = Volume::centered({4, 4, 4}, 1.0);
    std::vector<std::uint8_t> mask(vol.values.size(), 0);
    Rng rng(9);
    CHECK_THROWS_AS(sample_positions(vol, mask, 4, SampleMode::intensity, rng),
                    contract_error);
  }
}

TEST_CASE("init_cloud assigns nearest-neighbor scales and scaled densities") {
  Volume vol = Volume::centered({16, 16, 16}, 1.0);
  for (double& x : vol.values) x = 1.0;

  SECTION("two positions get each other's distances") {
    const std::vector<Vec3> positions = {Vec3(0, 0, 0), Vec3(3, 0, 0)};
    const GaussianCloud cloud = init_cloud(vol, positions, 0.15);
    REQUIRE(cloud.size() == 2);
    // nn distance 3 > 10% of extent (1.5): clamp keeps max(0.1 * 1.5, spacing)
    const double expected = std::max(0.1 * 1.5, 1.0);
    CHECK(std::exp(cloud.log_scales[0][0]) == Catch::Approx(expected));
    CHECK(cloud.rotations[0] == Vec4(1, 0, 0, 0));
    CHECK(cloud.raw_densities[0] == Catch::Approx(0.15));  // k * volume value
  }

  SECTION("unclamped distances are exact 1-NN") {
    const std::vector<Vec3> positions = {Vec3(0, 0, 0), Vec3(1.2, 0, 0), Vec3(30, 0, 0),
                                         Vec3(30, 1.7, 0)};
    const GaussianCloud cloud = init_cloud(vol, positions, 0.15);
    CHECK(std::exp(cloud.log_scales[0][0]) == Catch::Approx(1.2));
    CHECK(std::exp(cloud.log_scales[1][0]) == Catch::Approx(1.2));
    CHECK(std::exp(cloud.log_scales[2][0]) == Catch::Approx(1.7));
    CHECK(std::exp(cloud.log_scales[3][0]) == Catch::Approx(1.7));
  }

  SECTION("coincident positions clamp to the voxel-spacing floor") {
    const std::vector<Vec3> positions = {Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(4, 1, 1)};
    const GaussianCloud cloud = init_cloud(vol, positions, 0.15);
    CHECK(std::exp(cloud.log_scales[0][0]) == Catch::Approx(vol.spacing));
  }

  SECTION("a single position falls back to twice the voxel spacing") {
    const GaussianCloud cloud = init_cloud(vol, {Vec3(0, 0, 0)}, 0.15);
    CHECK(std::exp(cloud.log_scales[0][0]) == Catch::Approx(2.0 * vol.spacing));
  }
}

TEST_CASE("every strategy produces a valid, seeded-deterministic cloud") {
  PhantomConfig pc;
  pc.dims = {28, 28, 28};
  pc.seed = 4;
  const Volume phantom = make_phantom(pc);
  const ScanGeometry geom = default_geometry(phantom, 12, BeamMode::parallel, 56, 56);
  const ProjectionSet projections = raymarch_project(phantom, geom);

  TrainConfig fit_config;
  fit_config.eval_interval = 1 << 20;

  const auto check_valid = [&](const GaussianCloud& cloud, std::size_t expected) {
    REQUIRE(cloud.size() == expected);
    cloud.validate();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const ActivatedSplat act = activate(cloud, i);
      CHECK(act.density >= 0.0);
      CHECK(act.scales.minCoeff() > 0.0);
      CHECK(std::abs(act.unit_quat.norm() - 1.0) < 1e-6);
    }
  };

  for (const InitStrategy strategy :
       {InitStrategy::fdk_intensity, InitStrategy::fdk_gradient}) {
    InitConfig ic;
    ic.strategy = strategy;
    ic.n_gaussians = 150;
    ic.seed = 11;
    const GaussianCloud a = init_from_projections(projections, GridSpec::of(phantom), ic);
    const GaussianCloud b = init_from_projections(projections, GridSpec::of(phantom), ic);
    check_valid(a, 150);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.positions[i] == b.positions[i]);  // seeded determinism
    }
  }

  for (const InitStrategy strategy :
       {InitStrategy::prior_direct, InitStrategy::prior_rapid_fit}) {
    InitConfig ic;
    ic.strategy = strategy;
    ic.n_gaussians = 150;
    ic.rapid_fit_iterations = 10;
    ic.seed = 12;
    const GaussianCloud a = init_from_prior(phantom, ic, fit_config);
    check_valid(a, strategy == InitStrategy::prior_direct ? 150 : a.size());
  }
}

TEST_CASE("prior_direct equals a zero-iteration rapid fit") {
  PhantomConfig pc;
  pc.dims = {24, 24, 24};
  pc.seed = 6;
  const Volume phantom = make_phantom(pc);
  TrainConfig fit_config;

  InitConfig direct;
  direct.strategy = InitStrategy::prior_direct;
  direct.n_gaussians = 100;
  direct.seed = 3;
  InitConfig zero_fit;
  zero_fit.strategy = InitStrategy::prior_rapid_fit;
  zero_fit.n_gaussians = 100;
  zero_fit.rapid_fit_iterations = 0;
  zero_fit.seed = 3;

  const GaussianCloud a = init_from_prior(phantom, direct, fit_config);
  const GaussianCloud b = init_from_prior(phantom, zero_fit, fit_config);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.positions[i] == b.positions[i]);
    CHECK(a.log_scales[i] == b.log_scales[i]);
    CHECK(a.raw_densities[i] == b.raw_densities[i]);
  }
}

TEST_CASE("the rapid fit improves the initialization") {
  PhantomConfig pc;
  pc.dims = {28, 28, 28};
  pc.seed = 8;
  const Volume phantom = make_phantom(pc);
  TrainConfig fit_config;
  fit_config.eval_interval = 1 << 20;

  InitConfig ic;
  ic.n_gaussians = 300;
  ic.seed = 5;
  ic.strategy = InitStrategy::prior_direct;
  const GaussianCloud before = init_from_prior(phantom, ic, fit_config);
  ic.strategy = InitStrategy::prior_rapid_fit;
  ic.rapid_fit_iterations = 50;
  const GaussianCloud after = init_from_prior(phantom, ic, fit_config);

  const GridSpec grid = GridSpec::of(phantom);
  const double ssim_before = ssim3d_score(voxelize_full(before, grid), phantom);
  const double ssim_after = ssim3d_score(voxelize_full(after, grid), phantom);
  INFO("ssim before " << ssim_before << " after " << ssim_after);
  CHECK(ssim_after >= ssim_before);
}

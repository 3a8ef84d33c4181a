// gsct - Gaussian-splatting CT toolkit command line.
//
// Subcommands: phantom, project, init, reconstruct, fit-volume, voxelize,
// compress, decompress, metrics, bench. Every run writes a resolved config
// and a metric CSV next to its outputs. Exit codes: 0 success, 2 usage or
// config errors, 1 runtime failures.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsct/bench.hpp"
#include "gsct/config.hpp"
#include "gsct/gsct.hpp"

namespace fs = std::filesystem;
using namespace gsct;

namespace {

void require_exists(const std::string& path) {
  if (!fs::exists(path)) throw contract_error("no such file: " + path);
}

RunConfig load_base_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  require_exists(config_path);
  return load_run_config(config_path);
}

void apply_runtime(const RunConfig& config) {
  set_thread_count(config.threads);
}

RasterSettings raster_settings(const RunConfig& config) {
  RasterSettings rs;
  rs.tau_cut = config.raster.tau_cut;
  rs.sigma_cap = config.raster.sigma_cap;
  rs.tile_size = config.raster.tile_size;
  rs.dilate = config.raster.dilation;
  return rs;
}

// Sidecar outputs required of every run: the fully resolved configuration and
// a metric CSV (header-only for commands that do not train).
void write_run_sidecars(const std::string& stem, const RunConfig& config,
                        const MetricLog& log = {}) {
  write_run_config(stem + ".config.json", config);
  write_metric_csv(stem + ".metrics.csv", log);
}

std::array<int, 3> dims_from_flag(const std::vector<int>& dims, const char* what) {
  if (dims.size() == 1) return {dims[0], dims[0], dims[0]};
  if (dims.size() == 3) return {dims[0], dims[1], dims[2]};
  throw contract_error(std::string(what) + " expects 1 or 3 integers");
}

GaussianCloud load_cloud_any(const std::string& path) {
  require_exists(path);
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 4 && bytes[0] == 'F' && bytes[1] == 'G' && bytes[2] == 'S' &&
      bytes[3] == 'C') {
    return decompress_model(bytes, path);
  }
  Checkpoint ckpt = read_checkpoint(path);
  GaussianCloud cloud = std::move(ckpt.cloud);
  if (ckpt.has_state && ckpt.state.norm_factor != 1.0) {
    for (double& d : cloud.raw_densities) d *= ckpt.state.norm_factor;
  }
  return cloud;
}

void save_cloud_checkpoint(const std::string& path, const GaussianCloud& cloud,
                           const RunConfig& config) {
  Checkpoint ckpt;
  ckpt.cloud = cloud;
  ckpt.has_state = false;
  ckpt.config_json = run_config_to_json(config).dump();
  write_checkpoint(path, ckpt);
}

ScanGeometry geometry_for_volume(const RunConfig& config, const Volume& vol) {
  const BeamMode mode =
      config.geometry.mode == "cone" ? BeamMode::cone : BeamMode::parallel;
  ScanGeometry geom =
      default_geometry(vol, static_cast<std::size_t>(config.geometry.views), mode,
                       config.geometry.detector[0], config.geometry.detector[1],
                       config.geometry.source_to_origin, config.geometry.origin_to_detector);
  if (config.geometry.pixel_spacing[0] > 0.0) geom.s_u = config.geometry.pixel_spacing[0];
  if (config.geometry.pixel_spacing[1] > 0.0) geom.s_v = config.geometry.pixel_spacing[1];
  return geom;
}

GridSpec grid_for(const RunConfig& config, const ScanGeometry& geom, const Volume* gt) {
  if (config.grid.dims[0] > 0) {
    const double spacing =
        config.grid.spacing > 0.0
            ? config.grid.spacing
            : geom.n_u * geom.s_u / (std::sqrt(2.0) * config.grid.dims[0]);
    return GridSpec::centered(config.grid.dims, spacing);
  }
  if (gt) return GridSpec::of(*gt);
  return detail::default_recon_grid(geom);
}

InitConfig init_config_from(const RunConfig& config) {
  InitConfig ic;
  if (config.init.strategy == "fdk-intensity") {
    ic.strategy = InitStrategy::fdk_intensity;
  } else if (config.init.strategy == "fdk-gradient") {
    ic.strategy = InitStrategy::fdk_gradient;
  } else if (config.init.strategy == "prior-direct") {
    ic.strategy = InitStrategy::prior_direct;
  } else if (config.init.strategy == "prior-rapid-fit") {
    ic.strategy = InitStrategy::prior_rapid_fit;
  } else {
    throw contract_error("unknown init strategy: " + config.init.strategy);
  }
  ic.n_gaussians = static_cast<std::size_t>(config.init.splats);
  ic.density_scale = config.init.density_scale;
  ic.foreground_threshold = config.init.foreground_threshold;
  ic.rapid_fit_iterations = config.init.rapid_fit_iterations;
  ic.seed = config.seed;
  return ic;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_phantom(const RunConfig& config, const std::string& out) {
  apply_runtime(config);
  PhantomConfig pc;
  pc.dims = config.phantom.dims;
  pc.seed = config.seed;
  pc.n_ellipsoids = config.phantom.ellipsoids;
  pc.shell_fraction = config.phantom.shell_fraction;
  pc.supersample = config.phantom.supersample;
  pc.jitter = config.phantom.jitter;
  pc.jitter_seed = config.phantom.jitter_seed;
  const Volume vol = make_phantom(pc);
  write_volume(out, vol);
  write_run_sidecars(out, config);
  std::printf("phantom: %dx%dx%d seed %llu -> %s\n", pc.dims[0], pc.dims[1], pc.dims[2],
              static_cast<unsigned long long>(pc.seed), out.c_str());
  return 0;
}

int cmd_project(const RunConfig& config, const std::string& volume_path,
                const std::string& cloud_path, const std::string& out) {
  apply_runtime(config);
  check(volume_path.empty() != cloud_path.empty(),
        "project: give exactly one of --volume or --cloud");
  ProjectionSet projections;
  if (!volume_path.empty()) {
    require_exists(volume_path);
    const Volume vol = read_volume(volume_path);
    projections = raymarch_project(vol, geometry_for_volume(config, vol));
  } else {
    const GaussianCloud cloud = load_cloud_any(cloud_path);
    Volume extent_probe;  // detector sized from the cloud's bounding sphere
    const double extent = scene_extent(cloud);
    extent_probe.dims = {2, 2, 2};
    extent_probe.spacing = std::max(extent, 1e-6);
    extent_probe.origin = Vec3::Constant(-0.5 * extent_probe.spacing);
    ScanGeometry geom = geometry_for_volume(config, extent_probe);
    projections.geometry = geom;
    const RasterSettings rs = raster_settings(config);
    for (std::size_t view = 0; view < geom.angles.size(); ++view) {
      projections.images.push_back(rasterize_view(cloud, geom, view, rs));
    }
  }
  write_projections(out, projections);
  write_run_sidecars(out, config);
  std::printf("project: %zu views of %dx%d -> %s\n", projections.images.size(),
              projections.geometry.n_u, projections.geometry.n_v, out.c_str());
  return 0;
}

int cmd_init(const RunConfig& config, const std::string& projections_path,
             const std::string& prior_path, const std::string& out) {
  apply_runtime(config);
  const InitConfig ic = init_config_from(config);
  GaussianCloud cloud;
  if (ic.strategy == InitStrategy::fdk_intensity || ic.strategy == InitStrategy::fdk_gradient) {
    check(!projections_path.empty(), "init: this strategy needs --projections");
    require_exists(projections_path);
    const ProjectionSet projections = read_projections(projections_path);
    const GridSpec grid = grid_for(config, projections.geometry, nullptr);
    cloud = init_from_projections(projections, grid, ic);
  } else {
    check(!prior_path.empty(), "init: this strategy needs --prior");
    require_exists(prior_path);
    Volume prior = read_volume(prior_path);
    const double peak = prior.max_value();
    check(peak > 0.0, "init: prior volume is empty");
    for (double& x : prior.values) x /= peak;
    TrainConfig fit_config = config.train;
    TrainOptions fit_options;
    fit_options.deterministic = config.deterministic;
    cloud = init_from_prior(prior, ic, fit_config, fit_options);
    for (double& d : cloud.raw_densities) d *= peak;
  }
  save_cloud_checkpoint(out, cloud, config);
  write_run_sidecars(out, config);
  std::printf("init: strategy %s, %zu splats -> %s\n", config.init.strategy.c_str(),
              cloud.size(), out.c_str());
  return 0;
}

int cmd_reconstruct(RunConfig config, const std::string& projections_path,
                    const std::string& prior_path, const std::string& init_cloud_path,
                    const std::string& gt_path, const std::string& resume_path,
                    int checkpoint_interval, const std::string& out_dir) {
  apply_runtime(config);
  require_exists(projections_path);
  const ProjectionSet projections = read_projections(projections_path);

  Volume gt;
  const Volume* gt_ptr = nullptr;
  if (!gt_path.empty()) {
    require_exists(gt_path);
    gt = read_volume(gt_path);
    gt_ptr = &gt;
  }
  const GridSpec grid = grid_for(config, projections.geometry, gt_ptr);

  fs::create_directories(out_dir);
  const std::string stem = (fs::path(out_dir) / "reconstruct").string();
  const std::string resolved_config = run_config_to_json(config).dump();

  TrainOptions options;
  options.eval_gt = gt_ptr;
  options.grid = grid;
  options.deterministic = config.deterministic;
  options.raster = raster_settings(config);
  if (checkpoint_interval > 0) {
    options.hooks.on_iteration = [&](int iteration, const GaussianCloud& cloud,
                                     const OptimState& state, const MetricLog& log) {
      if (iteration % checkpoint_interval != 0) return;
      Checkpoint ckpt;
      ckpt.cloud = cloud;
      ckpt.state = state;
      ckpt.has_state = true;
      ckpt.iteration = iteration;
      ckpt.config_json = resolved_config;
      ckpt.log = log;
      write_checkpoint((fs::path(out_dir) / "checkpoint.ckpt").string(), ckpt);
    };
  }

  GaussianCloud cloud;
  Checkpoint resume;
  if (!resume_path.empty()) {
    require_exists(resume_path);
    resume = read_checkpoint(resume_path);
    check(resume.has_state, "resume: checkpoint holds no optimizer state");
    if (resume.config_json != resolved_config) {
      throw contract_error(
          "resume: checkpoint was written under a different configuration.\n  checkpoint: " +
          resume.config_json + "\n  current:    " + resolved_config);
    }
    cloud = resume.cloud;
    options.resume_state = &resume.state;
    options.resume_log = &resume.log;
    options.start_iteration = resume.iteration;
  } else if (!init_cloud_path.empty()) {
    cloud = load_cloud_any(init_cloud_path);
  } else {
    const InitConfig ic = init_config_from(config);
    if (ic.strategy == InitStrategy::prior_direct ||
        ic.strategy == InitStrategy::prior_rapid_fit) {
      check(!prior_path.empty(), "reconstruct: prior strategies need --prior");
      require_exists(prior_path);
      Volume prior = read_volume(prior_path);
      const double peak = prior.max_value();
      check(peak > 0.0, "reconstruct: prior volume is empty");
      for (double& x : prior.values) x /= peak;
      TrainOptions fit_options;
      fit_options.deterministic = config.deterministic;
      cloud = init_from_prior(prior, ic, config.train, fit_options);
      for (double& d : cloud.raw_densities) d *= peak;
    } else {
      cloud = init_from_projections(projections, grid, ic);
    }
  }

  TrainConfig train = config.train;
  train.seed = config.seed;
  const TrainResult result = train_reconstruction(cloud, projections, train, options);

  const Volume volume = voxelize_full(result.cloud, grid);
  write_volume((fs::path(out_dir) / "volume.vol").string(), volume);
  save_cloud_checkpoint((fs::path(out_dir) / "cloud.ckpt").string(), result.cloud, config);
  write_run_sidecars(stem, config, result.log);
  if (result.diverged) {
    std::fprintf(stderr, "gsct: reconstruction diverged; last good state was kept\n");
    return 1;
  }
  if (!result.log.empty()) {
    const MetricRow& last = result.log.back();
    std::printf("reconstruct: %lld iterations, M=%lld, psnr=%.3f, ssim3d=%.4f -> %s\n",
                static_cast<long long>(last.iteration),
                static_cast<long long>(last.num_gaussians), last.psnr, last.ssim3d,
                out_dir.c_str());
  }
  return 0;
}

int cmd_fit_volume(RunConfig config, const std::string& volume_path,
                   const std::string& out_dir) {
  apply_runtime(config);
  require_exists(volume_path);
  const Volume target = read_volume(volume_path);

  const InitConfig ic = init_config_from(config);
  const std::vector<std::uint8_t> mask =
      foreground_mask(target, config.init.foreground_threshold);
  Rng rng(config.seed);
  const std::vector<Vec3> positions =
      sample_positions(target, mask, ic.n_gaussians, SampleMode::gradient, rng);
  GaussianCloud cloud = init_cloud(target, positions, ic.density_scale);

  TrainConfig train = config.train;
  train.seed = config.seed;
  TrainOptions options;
  options.deterministic = config.deterministic;
  const TrainResult result = train_volume_fit(cloud, target, train, options);

  fs::create_directories(out_dir);
  const Volume fitted = voxelize_full(result.cloud, GridSpec::of(target));
  write_volume((fs::path(out_dir) / "volume.vol").string(), fitted);
  save_cloud_checkpoint((fs::path(out_dir) / "cloud.ckpt").string(), result.cloud, config);
  write_run_sidecars((fs::path(out_dir) / "fit").string(), config, result.log);
  if (result.diverged) {
    std::fprintf(stderr, "gsct: volume fit diverged; last good state was kept\n");
    return 1;
  }
  if (!result.log.empty()) {
    std::printf("fit-volume: %lld iterations, M=%lld, ssim3d=%.4f -> %s\n",
                static_cast<long long>(result.log.back().iteration),
                static_cast<long long>(result.log.back().num_gaussians),
                result.log.back().ssim3d, out_dir.c_str());
  }
  return 0;
}

int cmd_voxelize(const RunConfig& config, const std::string& cloud_path,
                 const std::vector<int>& dims_flag, double spacing, const std::string& out) {
  apply_runtime(config);
  const GaussianCloud cloud = load_cloud_any(cloud_path);
  const std::array<int, 3> dims =
      dims_flag.empty() ? config.grid.dims : dims_from_flag(dims_flag, "--dims");
  check(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "voxelize: --dims required");
  double sp = spacing > 0.0 ? spacing : config.grid.spacing;
  if (sp <= 0.0) {
    const double extent = std::max(scene_extent(cloud), 1e-6);
    sp = 2.2 * extent / dims[0];
  }
  const Volume vol = voxelize_full(cloud, GridSpec::centered(dims, sp));
  write_volume(out, vol);
  write_run_sidecars(out, config);
  std::printf("voxelize: %zu splats onto %dx%dx%d (spacing %.6g) -> %s\n", cloud.size(),
              dims[0], dims[1], dims[2], sp, out.c_str());
  return 0;
}

int cmd_compress(const RunConfig& config, const std::string& cloud_path,
                 const std::string& out) {
  apply_runtime(config);
  const GaussianCloud cloud = load_cloud_any(cloud_path);
  CompressStats stats;
  write_compressed_model(out, cloud, &stats);
  write_run_sidecars(out, config);
  std::printf("compress: %zu splats, %zu bytes (%zu saturated) -> %s\n", cloud.size(),
              static_cast<std::size_t>(16 + 22 * cloud.size()), stats.saturated, out.c_str());
  return 0;
}

int cmd_decompress(const RunConfig& config, const std::string& model_path,
                   const std::string& out) {
  apply_runtime(config);
  require_exists(model_path);
  const GaussianCloud cloud = read_compressed_model(model_path);
  save_cloud_checkpoint(out, cloud, config);
  write_run_sidecars(out, config);
  std::printf("decompress: %zu splats -> %s\n", cloud.size(), out.c_str());
  return 0;
}

int cmd_metrics(const RunConfig& config, const std::string& pred_path,
                const std::string& target_path, const std::string& out) {
  apply_runtime(config);
  require_exists(pred_path);
  require_exists(target_path);
  const Volume pred = read_volume(pred_path);
  const Volume target = read_volume(target_path);
  const double range = target.max_value() > 0.0 ? target.max_value() : 1.0;
  MetricRow row;
  row.iteration = 0;
  row.num_gaussians = 0;
  row.psnr = psnr(pred, target, range);
  row.ssim3d = ssim3d_score(pred, target);
  std::printf("metrics: psnr=%.4f dB ssim3d=%.6f\n", row.psnr, row.ssim3d);
  if (!out.empty()) {
    write_metric_csv(out, {row});
    write_run_config(out + ".config.json", config);
  }
  return 0;
}

int cmd_bench(const RunConfig& config, const std::string& target,
              const std::vector<int>& sides, const std::vector<std::int64_t>& counts,
              int repeats, const std::string& out) {
  apply_runtime(config);
  SweepConfig sweep_config;
  sweep_config.sides = sides;
  sweep_config.counts = counts;
  sweep_config.repeats = repeats;
  sweep_config.seed = config.seed;
  sweep_config.raster = raster_settings(config);

  std::vector<BenchRow> rows;
  const auto run_target = [&](SweepTarget t) {
    sweep_config.target = t;
    const std::vector<BenchRow> part = sweep(sweep_config);
    rows.insert(rows.end(), part.begin(), part.end());
  };
  if (target == "rasterize") {
    run_target(SweepTarget::rasterize);
  } else if (target == "voxelize") {
    run_target(SweepTarget::voxelize);
  } else if (target == "both") {
    run_target(SweepTarget::rasterize);
    run_target(SweepTarget::voxelize);
  } else {
    throw contract_error("bench: --target must be rasterize, voxelize, or both");
  }

  std::string csv = bench_csv_header() + '\n';
  for (const BenchRow& row : rows) csv += bench_csv_row(row) + '\n';
  detail::write_text_file(out, csv);
  write_run_config(out + ".config.json", config);

  // Report the forward-time power law per (target, count) group when the
  // sweep spans enough sizes.
  for (const std::int64_t count : counts) {
    for (const char* name : {"rasterize", "voxelize"}) {
      std::vector<double> xs, ys;
      for (const BenchRow& row : rows) {
        if (row.count == count && row.target == name) {
          xs.push_back(static_cast<double>(row.size));
          ys.push_back(row.forward_ms);
        }
      }
      if (xs.size() >= 3) {
        const PowerLawFit fit = fit_power_law(xs, ys);
        std::printf("bench: %s N_G=%lld forward power law: exponent %.3f (r^2 %.4f)\n", name,
                    static_cast<long long>(count), fit.exponent, fit.r2);
      }
    }
  }
  std::printf("bench: %zu rows -> %s\n", rows.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-splatting CT toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, volume_path, cloud_path, projections_path, prior_path;
  std::string init_cloud_path, gt_path, resume_path, model_path, pred_path, target_path;
  std::string bench_target = "rasterize";
  std::vector<int> dims_flag, detector_flag, sides{128, 256, 512};
  std::vector<std::int64_t> counts{20000};
  double spacing = 0.0;
  int checkpoint_interval = 0, repeats = 5;
  std::int64_t seed = -1;
  int iters = -1, views = -1, threads = -1;
  std::int64_t splats = -1;
  bool deterministic = false;
  std::string mode_flag, strategy_flag;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration (flags override)");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--threads", threads, "worker thread cap (0 = hardware)");
    cmd->add_flag("--deterministic", deterministic,
                  "byte-stable outputs (zeroes timing columns)");
  };

  CLI::App* phantom = app.add_subcommand("phantom", "generate a procedural phantom volume");
  add_common(phantom);
  phantom->add_option("--dims", dims_flag, "volume dims (1 or 3 ints)");
  phantom->add_option("--out", out, "output volume path")->required();

  CLI::App* project = app.add_subcommand("project", "render projections from a volume or cloud");
  add_common(project);
  project->add_option("--volume", volume_path, "input volume (ray-marched line integrals)");
  project->add_option("--cloud", cloud_path, "input cloud (splat rasterizer)");
  project->add_option("--views", views, "number of views");
  project->add_option("--mode", mode_flag, "parallel or cone");
  project->add_option("--detector", detector_flag, "detector pixels (1 or 2 ints)");
  project->add_option("--out", out, "output projections path")->required();

  CLI::App* init_cmd = app.add_subcommand("init", "initialize a Gaussian cloud");
  add_common(init_cmd);
  init_cmd->add_option("--projections", projections_path, "projection stack (fdk strategies)");
  init_cmd->add_option("--prior", prior_path, "prior volume (prior strategies)");
  init_cmd->add_option("--strategy", strategy_flag,
                       "fdk-intensity | fdk-gradient | prior-direct | prior-rapid-fit");
  init_cmd->add_option("--splats", splats, "number of Gaussians");
  init_cmd->add_option("--out", out, "output checkpoint path")->required();

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "sparse-view reconstruction");
  add_common(reconstruct);
  reconstruct->add_option("--projections", projections_path, "measured projections")->required();
  reconstruct->add_option("--init", strategy_flag, "init strategy");
  reconstruct->add_option("--init-cloud", init_cloud_path, "start from an existing cloud");
  reconstruct->add_option("--prior", prior_path, "prior volume for warm starts");
  reconstruct->add_option("--gt", gt_path, "ground-truth volume for metric logging");
  reconstruct->add_option("--resume", resume_path, "resume from a training checkpoint");
  reconstruct->add_option("--iters", iters, "training iterations (epochs over all views)");
  reconstruct->add_option("--splats", splats, "number of Gaussians at init");
  reconstruct->add_option("--grid-dims", dims_flag, "reconstruction grid dims (1 or 3 ints)");
  reconstruct->add_option("--grid-spacing", spacing, "reconstruction grid spacing");
  reconstruct->add_option("--checkpoint-interval", checkpoint_interval,
                          "write checkpoint.ckpt every N iterations");
  reconstruct->add_option("--out", out, "output directory")->required();

  CLI::App* fit = app.add_subcommand("fit-volume", "fit Gaussians directly to a volume");
  add_common(fit);
  fit->add_option("--volume", volume_path, "target volume")->required();
  fit->add_option("--iters", iters, "fit iterations");
  fit->add_option("--splats", splats, "number of Gaussians at init");
  fit->add_option("--out", out, "output directory")->required();

  CLI::App* voxelize_cmd = app.add_subcommand("voxelize", "evaluate a cloud on a dense grid");
  add_common(voxelize_cmd);
  voxelize_cmd->add_option("--cloud", cloud_path, "input cloud")->required();
  voxelize_cmd->add_option("--dims", dims_flag, "grid dims (1 or 3 ints)");
  voxelize_cmd->add_option("--spacing", spacing, "grid spacing");
  voxelize_cmd->add_option("--out", out, "output volume path")->required();

  CLI::App* compress = app.add_subcommand("compress", "write the 22-byte-per-splat model");
  add_common(compress);
  compress->add_option("--cloud", cloud_path, "input cloud checkpoint")->required();
  compress->add_option("--out", out, "output .fgsc path")->required();

  CLI::App* decompress = app.add_subcommand("decompress", "expand a compressed model");
  add_common(decompress);
  decompress->add_option("--model", model_path, "input .fgsc path")->required();
  decompress->add_option("--out", out, "output checkpoint path")->required();

  CLI::App* metrics_cmd = app.add_subcommand("metrics", "PSNR / 3D SSIM between volumes");
  add_common(metrics_cmd);
  metrics_cmd->add_option("--pred", pred_path, "predicted volume")->required();
  metrics_cmd->add_option("--target", target_path, "reference volume")->required();
  metrics_cmd->add_option("--out", out, "optional metric CSV path");

  CLI::App* bench = app.add_subcommand("bench", "kernel scaling sweeps");
  add_common(bench);
  bench->add_option("--target", bench_target, "rasterize | voxelize | both");
  bench->add_option("--sides", sides, "detector/volume side lengths");
  bench->add_option("--counts", counts, "Gaussian counts");
  bench->add_option("--repeats", repeats, "measured repeats per cell");
  bench->add_option("--out", out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config = load_base_config(config_path);
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
    if (threads >= 0) config.threads = threads;
    if (deterministic) config.deterministic = true;
    if (iters > 0) config.train.iterations = iters;
    if (splats > 0) config.init.splats = static_cast<std::uint64_t>(splats);
    if (views > 0) config.geometry.views = views;
    if (!mode_flag.empty()) {
      check(mode_flag == "parallel" || mode_flag == "cone",
            "--mode must be parallel or cone");
      config.geometry.mode = mode_flag;
    }
    if (!strategy_flag.empty()) config.init.strategy = strategy_flag;
    if (!detector_flag.empty()) {
      if (detector_flag.size() == 1) {
        config.geometry.detector = {detector_flag[0], detector_flag[0]};
      } else if (detector_flag.size() == 2) {
        config.geometry.detector = {detector_flag[0], detector_flag[1]};
      } else {
        throw contract_error("--detector expects 1 or 2 integers");
      }
    }
    if (phantom->parsed()) {
      if (!dims_flag.empty()) config.phantom.dims = dims_from_flag(dims_flag, "--dims");
      return cmd_phantom(config, out);
    }
    if (project->parsed()) return cmd_project(config, volume_path, cloud_path, out);
    if (init_cmd->parsed()) return cmd_init(config, projections_path, prior_path, out);
    if (reconstruct->parsed()) {
      if (!dims_flag.empty()) config.grid.dims = dims_from_flag(dims_flag, "--grid-dims");
      if (spacing > 0.0) config.grid.spacing = spacing;
      return cmd_reconstruct(config, projections_path, prior_path, init_cloud_path, gt_path,
                             resume_path, checkpoint_interval, out);
    }
    if (fit->parsed()) return cmd_fit_volume(config, volume_path, out);
    if (voxelize_cmd->parsed()) return cmd_voxelize(config, cloud_path, dims_flag, spacing, out);
    if (compress->parsed()) return cmd_compress(config, cloud_path, out);
    if (decompress->parsed()) return cmd_decompress(config, model_path, out);
    if (metrics_cmd->parsed()) return cmd_metrics(config, pred_path, target_path, out);
    if (bench->parsed()) return cmd_bench(config, bench_target, sides, counts, repeats, out);
    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const parse_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const contract_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const gsct::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

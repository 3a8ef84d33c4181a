#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "gsct/common.hpp"
#include "gsct/init.hpp"
#include "gsct/io.hpp"
#include "gsct/optim.hpp"

namespace gsct {

// Structured run configuration behind the CLI. Files may be partial; every
// field (given or defaulted) is echoed back into the resolved config written
// next to each run's outputs. Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 0;  // 0 = hardware concurrency

  struct Geometry {
    std::string mode = "parallel";
    int views = 50;
    std::array<int, 2> detector{128, 128};
    std::array<double, 2> pixel_spacing{0.0, 0.0};  // 0 = derived from the volume
    double source_to_origin = 0.0;                  // 0 = derived (cone mode)
    double origin_to_detector = 0.0;
  } geometry;

  struct Phantom {
    std::array<int, 3> dims{64, 64, 64};
    int ellipsoids = 7;
    double shell_fraction = 0.45;
    int supersample = 2;
    double jitter = 0.0;
    std::uint64_t jitter_seed = 1;
  } phantom;

  struct Init {
    std::string strategy = "fdk-gradient";
    std::uint64_t splats = 2000;
    double density_scale = 0.15;
    double foreground_threshold = 0.05;
    int rapid_fit_iterations = 50;
  } init;

  TrainConfig train;

  struct Grid {
    std::array<int, 3> dims{0, 0, 0};  // 0 = derived
    double spacing = 0.0;
  } grid;

  struct Raster {
    double tau_cut = 1e-4;
    double sigma_cap = 3.0;
    int tile_size = 16;
    bool dilation = true;
  } raster;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  check(j.is_object(), "config: '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw contract_error("config: unknown key '" + where + item.key() + "'");
    }
  }
}

template <class T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T, std::size_t N>
void maybe_get_array(const nlohmann::json& j, const char* key, std::array<T, N>& out,
                     const std::string& where) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  check(a.is_array() && a.size() == N,
        "config: '" + where + key + "' must be an array of " + std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) out[i] = a.at(i).get<T>();
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  j["geometry"] = {{"mode", c.geometry.mode},
                   {"views", c.geometry.views},
                   {"detector", c.geometry.detector},
                   {"pixel_spacing", c.geometry.pixel_spacing},
                   {"source_to_origin", c.geometry.source_to_origin},
                   {"origin_to_detector", c.geometry.origin_to_detector}};
  j["phantom"] = {{"dims", c.phantom.dims},
                  {"ellipsoids", c.phantom.ellipsoids},
                  {"shell_fraction", c.phantom.shell_fraction},
                  {"supersample", c.phantom.supersample},
                  {"jitter", c.phantom.jitter},
                  {"jitter_seed", c.phantom.jitter_seed}};
  j["init"] = {{"strategy", c.init.strategy},
               {"splats", c.init.splats},
               {"density_scale", c.init.density_scale},
               {"foreground_threshold", c.init.foreground_threshold},
               {"rapid_fit_iterations", c.init.rapid_fit_iterations}};
  j["train"] = {{"iterations", c.train.iterations},
                {"lr_position", c.train.lr_position},
                {"lr_position_final", c.train.lr_position_final},
                {"lr_decay_horizon", c.train.lr_decay_horizon},
                {"lr_scale", c.train.lr_scale},
                {"lr_rotation", c.train.lr_rotation},
                {"lr_density", c.train.lr_density},
                {"densify_interval", c.train.densify_interval},
                {"densify_start", c.train.densify_start},
                {"densify_stop", c.train.densify_stop},
                {"grad_threshold", c.train.grad_threshold},
                {"prune_density", c.train.prune_density},
                {"split_scale_fraction", c.train.split_scale_fraction},
                {"max_gaussians", c.train.max_gaussians},
                {"tv_subvolume", c.train.tv_subvolume},
                {"eval_interval", c.train.eval_interval},
                {"loss", {{"alpha_ssim", c.train.weights.alpha_ssim},
                          {"alpha_tv", c.train.weights.alpha_tv}}}};
  j["grid"] = {{"dims", c.grid.dims}, {"spacing", c.grid.spacing}};
  j["raster"] = {{"tau_cut", c.raster.tau_cut},
                 {"sigma_cap", c.raster.sigma_cap},
                 {"tile_size", c.raster.tile_size},
                 {"dilation", c.raster.dilation}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown_keys(
      j, {"seed", "deterministic", "threads", "geometry", "phantom", "init", "train", "grid",
          "raster"},
      "");
  detail::maybe_get(j, "seed", c.seed);
  detail::maybe_get(j, "deterministic", c.deterministic);
  detail::maybe_get(j, "threads", c.threads);
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    detail::reject_unknown_keys(g,
                                {"mode", "views", "detector", "pixel_spacing",
                                 "source_to_origin", "origin_to_detector"},
                                "geometry.");
    detail::maybe_get(g, "mode", c.geometry.mode);
    detail::maybe_get(g, "views", c.geometry.views);
    detail::maybe_get_array(g, "detector", c.geometry.detector, "geometry.");
    detail::maybe_get_array(g, "pixel_spacing", c.geometry.pixel_spacing, "geometry.");
    detail::maybe_get(g, "source_to_origin", c.geometry.source_to_origin);
    detail::maybe_get(g, "origin_to_detector", c.geometry.origin_to_detector);
    check(c.geometry.mode == "parallel" || c.geometry.mode == "cone",
          "config: geometry.mode must be 'parallel' or 'cone'");
  }
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    detail::reject_unknown_keys(
        p, {"dims", "ellipsoids", "shell_fraction", "supersample", "jitter", "jitter_seed"},
        "phantom.");
    detail::maybe_get_array(p, "dims", c.phantom.dims, "phantom.");
    detail::maybe_get(p, "ellipsoids", c.phantom.ellipsoids);
    detail::maybe_get(p, "shell_fraction", c.phantom.shell_fraction);
    detail::maybe_get(p, "supersample", c.phantom.supersample);
    detail::maybe_get(p, "jitter", c.phantom.jitter);
    detail::maybe_get(p, "jitter_seed", c.phantom.jitter_seed);
  }
  if (j.contains("init")) {
    const auto& i = j.at("init");
    detail::reject_unknown_keys(i,
                                {"strategy", "splats", "density_scale", "foreground_threshold",
                                 "rapid_fit_iterations"},
                                "init.");
    detail::maybe_get(i, "strategy", c.init.strategy);
    detail::maybe_get(i, "splats", c.init.splats);
    detail::maybe_get(i, "density_scale", c.init.density_scale);
    detail::maybe_get(i, "foreground_threshold", c.init.foreground_threshold);
    detail::maybe_get(i, "rapid_fit_iterations", c.init.rapid_fit_iterations);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(
        t, {"iterations", "lr_position", "lr_position_final", "lr_decay_horizon", "lr_scale",
            "lr_rotation", "lr_density", "densify_interval", "densify_start", "densify_stop",
            "grad_threshold", "prune_density", "split_scale_fraction", "max_gaussians",
            "tv_subvolume", "eval_interval", "loss"},
        "train.");
    detail::maybe_get(t, "iterations", c.train.iterations);
    detail::maybe_get(t, "lr_position", c.train.lr_position);
    detail::maybe_get(t, "lr_position_final", c.train.lr_position_final);
    detail::maybe_get(t, "lr_decay_horizon", c.train.lr_decay_horizon);
    detail::maybe_get(t, "lr_scale", c.train.lr_scale);
    detail::maybe_get(t, "lr_rotation", c.train.lr_rotation);
    detail::maybe_get(t, "lr_density", c.train.lr_density);
    detail::maybe_get(t, "densify_interval", c.train.densify_interval);
    detail::maybe_get(t, "densify_start", c.train.densify_start);
    detail::maybe_get(t, "densify_stop", c.train.densify_stop);
    detail::maybe_get(t, "grad_threshold", c.train.grad_threshold);
    detail::maybe_get(t, "prune_density", c.train.prune_density);
    detail::maybe_get(t, "split_scale_fraction", c.train.split_scale_fraction);
    detail::maybe_get(t, "max_gaussians", c.train.max_gaussians);
    detail::maybe_get_array(t, "tv_subvolume", c.train.tv_subvolume, "train.");
    detail::maybe_get(t, "eval_interval", c.train.eval_interval);
    if (t.contains("loss")) {
      const auto& w = t.at("loss");
      detail::reject_unknown_keys(w, {"alpha_ssim", "alpha_tv"}, "train.loss.");
      detail::maybe_get(w, "alpha_ssim", c.train.weights.alpha_ssim);
      detail::maybe_get(w, "alpha_tv", c.train.weights.alpha_tv);
    }
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::reject_unknown_keys(g, {"dims", "spacing"}, "grid.");
    detail::maybe_get_array(g, "dims", c.grid.dims, "grid.");
    detail::maybe_get(g, "spacing", c.grid.spacing);
  }
  if (j.contains("raster")) {
    const auto& r = j.at("raster");
    detail::reject_unknown_keys(r, {"tau_cut", "sigma_cap", "tile_size", "dilation"}, "raster.");
    detail::maybe_get(r, "tau_cut", c.raster.tau_cut);
    detail::maybe_get(r, "sigma_cap", c.raster.sigma_cap);
    detail::maybe_get(r, "tile_size", c.raster.tile_size);
    detail::maybe_get(r, "dilation", c.raster.dilation);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": " + e.what(), 0);
  }
  return run_config_from_json(j);
}

inline void write_run_config(const std::string& path, const RunConfig& config) {
  detail::write_text_file(path, run_config_to_json(config).dump(2) + "\n");
}

}  // namespace gsct

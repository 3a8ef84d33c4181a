#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gsct/common.hpp"
#include "gsct/core.hpp"
#include "gsct/losses.hpp"
#include "gsct/parallel.hpp"

namespace gsct {

// Peak signal-to-noise ratio in dB for the given data range. Identical inputs
// would be +inf; reported capped at the 99.0 dB sentinel.
inline double psnr(const std::vector<double>& pred, const std::vector<double>& target,
                   double data_range) {
  check(pred.size() == target.size(), "psnr: shape mismatch");
  check(!pred.empty(), "psnr: empty input");
  check(data_range > 0.0, "psnr: data range must be positive");
  const std::int64_t n = static_cast<std::int64_t>(pred.size());
  const double mse = parallel_reduce_sum<double>(n, [&](std::int64_t lo, std::int64_t hi) {
    double sum = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) {
      const double d = pred[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)];
      sum += d * d;
    }
    return sum;
  }) / static_cast<double>(n);
  if (mse == 0.0) return 99.0;
  return std::min(10.0 * std::log10(data_range * data_range / mse), 99.0);
}

inline double psnr(const Volume& pred, const Volume& target, double data_range) {
  check(pred.dims == target.dims, "psnr: volume shape mismatch");
  return psnr(pred.values, target.values, data_range);
}

inline double psnr(const Image& pred, const Image& target, double data_range) {
  check(pred.n_u == target.n_u && pred.n_v == target.n_v, "psnr: image shape mismatch");
  return psnr(pred.values, target.values, data_range);
}

// 3D SSIM score in [-1, 1]; 1 for identical volumes.
inline double ssim3d_score(const Volume& pred, const Volume& target) {
  return 1.0 - ssim3d(pred, target).loss;
}

// Fraction of iterations a warm-started run needs to match the cold run's best
// metric value: (first 1-based index n with warm[n-1] >= cold_max) / N * 100.
// Never reached reports 100% with reached = false.
struct TauIterResult {
  double percent = 100.0;
  bool reached = false;
};

inline TauIterResult tau_iter(const std::vector<double>& warm_curve, double cold_max,
                              std::size_t n_iter) {
  check(!warm_curve.empty(), "tau_iter: empty curve");
  check(warm_curve.size() == n_iter, "tau_iter: curve length must equal N_iter");
  for (std::size_t i = 0; i < warm_curve.size(); ++i) {
    if (warm_curve[i] >= cold_max) {
      return {static_cast<double>(i + 1) / static_cast<double>(n_iter) * 100.0, true};
    }
  }
  return {100.0, false};
}

// SSIM divided by the best SSIM across a configuration sweep. A value of 0.99
// is the usual saturation threshold when reporting sweeps.
inline double ssim_rel(double ssim, double ssim_max) {
  check(ssim_max > 0.0, "ssim_rel: ssim_max must be positive");
  return ssim / ssim_max;
}

// ---------------------------------------------------------------------------
// Metric log
// ---------------------------------------------------------------------------

// One row per training iteration (epoch for reconstruction). psnr/ssim3d are
// NaN when no ground truth was supplied or the row was not evaluated.
struct MetricRow {
  std::int64_t iteration = 0;
  double l1 = 0.0;
  double ssim = 0.0;
  double tv = 0.0;
  double total = 0.0;
  std::int64_t num_gaussians = 0;
  double psnr = std::nan("");
  double ssim3d = std::nan("");
  double wall_ms = 0.0;
};

using MetricLog = std::vector<MetricRow>;

namespace detail {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace detail

inline std::string metric_csv_header() {
  return "iteration,l1,ssim,tv,total,num_gaussians,psnr,ssim3d,wall_ms";
}

inline std::string metric_csv_row(const MetricRow& row) {
  std::string out = std::to_string(row.iteration);
  out += ',' + detail::format_double(row.l1);
  out += ',' + detail::format_double(row.ssim);
  out += ',' + detail::format_double(row.tv);
  out += ',' + detail::format_double(row.total);
  out += ',' + std::to_string(row.num_gaussians);
  out += ',' + detail::format_double(row.psnr);
  out += ',' + detail::format_double(row.ssim3d);
  out += ',' + detail::format_double(row.wall_ms);
  return out;
}

inline void write_metric_csv(const std::string& path, const MetricLog& log) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("write_metric_csv: cannot open " + path);
  std::string text = metric_csv_header() + '\n';
  for (const MetricRow& row : log) text += metric_csv_row(row) + '\n';
  const std::size_t written = std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  if (written != text.size()) throw io_error("write_metric_csv: short write to " + path);
}

}  // namespace gsct

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/parallel.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// View geometry
// ---------------------------------------------------------------------------

// World-space frame of one detector view. u, v are the detector axes, d the
// ray direction (for cone mode: the central ray, source toward detector).
struct ViewFrame {
  Vec3 u = Vec3::UnitY();
  Vec3 v = Vec3::UnitZ();
  Vec3 d = Vec3::UnitX();
  Vec3 detector_center = Vec3::Zero();
  Vec3 source = Vec3::Zero();  // cone mode only
  double focal = 0.0;          // source-to-detector distance (cone)
  bool cone = false;
};

inline ViewFrame view_frame(const ScanGeometry& geometry, std::size_t angle_index) {
  check(angle_index < geometry.angles.size(), "view_frame: angle index out of range");
  const double theta = geometry.angles[angle_index];
  ViewFrame frame;
  frame.d = Vec3(std::cos(theta), std::sin(theta), 0.0);
  frame.u = Vec3(-std::sin(theta), std::cos(theta), 0.0);
  frame.v = Vec3::UnitZ();
  frame.cone = geometry.mode == BeamMode::cone;
  if (frame.cone) {
    frame.source = -geometry.source_to_origin * frame.d;
    frame.detector_center = geometry.origin_to_detector * frame.d;
    frame.focal = geometry.source_to_origin + geometry.origin_to_detector;
  }
  return frame;
}

// World position of a detector pixel center. Pixel (0,0) is a corner; the
// detector is centered on detector_center.
inline Vec3 pixel_center_world(const ViewFrame& frame, const ScanGeometry& geometry, double u,
                               double v) {
  const double cu = 0.5 * (geometry.n_u - 1);
  const double cv = 0.5 * (geometry.n_v - 1);
  return frame.detector_center + (u - cu) * geometry.s_u * frame.u +
         (v - cv) * geometry.s_v * frame.v;
}

// ---------------------------------------------------------------------------
// Rasterizer settings and statistics
// ---------------------------------------------------------------------------

enum class BoundingMode {
  rect_density_aware,   // per-axis extent shrunk by the density cutoff
  square_circumscribed  // square of half-extent sigma_cap * sqrt(lambda_max)
};

struct RasterSettings {
  double tau_cut = 1e-4;   // cull/bound threshold in normalized projection units
  double sigma_cap = 3.0;  // cap extents at sigma_cap standard deviations
  int tile_size = 16;
  bool dilate = true;          // anti-alias dilation of cov2d
  double dilation_px2 = 0.3;   // added to the cov2d diagonal, pixel^2
  BoundingMode bounding = BoundingMode::rect_density_aware;
};

struct RenderStats {
  std::int64_t culled = 0;
  std::int64_t degenerate = 0;
  std::int64_t tile_pairs = 0;
  std::int64_t pixel_pairs = 0;  // splat-pixel (or splat-voxel) evaluations
  double forward_ms = 0.0;
  double backward_ms = 0.0;
};

// ---------------------------------------------------------------------------
// Splat bounding
// ---------------------------------------------------------------------------

struct PixelRect {
  int u_min = 0, u_max = -1, v_min = 0, v_max = -1;
  bool empty() const { return u_max < u_min || v_max < v_min; }
};

inline double max_eigenvalue_2x2(const Mat2& m) {
  const double half_trace = 0.5 * (m(0, 0) + m(1, 1));
  const double half_gap = 0.5 * (m(0, 0) - m(1, 1));
  return half_trace + std::sqrt(half_gap * half_gap + m(0, 1) * m(1, 0));
}

// Pixel rectangle a splat can touch. Per detector axis k the half-extent is
// min(sqrt(2 ln(g_peak/tau_cut)) * sqrt(cov_kk), sigma_cap * sqrt(lambda_max)).
// Returns false when the splat is culled: peak below the cutoff, or the
// clipped rectangle is empty.
inline bool splat_bbox(double g_peak, const Mat2& cov2d, const Vec2& mean2d, double tau_cut,
                       int n_u, int n_v, PixelRect& rect, double sigma_cap = 3.0,
                       BoundingMode mode = BoundingMode::rect_density_aware) {
  if (!(g_peak > tau_cut)) return false;
  const double cap = sigma_cap * std::sqrt(std::max(max_eigenvalue_2x2(cov2d), 0.0));
  double hu = cap, hv = cap;
  if (mode == BoundingMode::rect_density_aware) {
    const double r = std::sqrt(2.0 * std::log(g_peak / tau_cut));
    hu = std::min(r * std::sqrt(std::max(cov2d(0, 0), 0.0)), cap);
    hv = std::min(r * std::sqrt(std::max(cov2d(1, 1), 0.0)), cap);
  }
  rect.u_min = std::max(0, static_cast<int>(std::ceil(mean2d[0] - hu)));
  rect.u_max = std::min(n_u - 1, static_cast<int>(std::floor(mean2d[0] + hu)));
  rect.v_min = std::max(0, static_cast<int>(std::ceil(mean2d[1] - hv)));
  rect.v_max = std::min(n_v - 1, static_cast<int>(std::floor(mean2d[1] + hv)));
  return !rect.empty();
}

// ---------------------------------------------------------------------------
// Analytic projection of one Gaussian
// ---------------------------------------------------------------------------

namespace detail {

// Everything the backward pass reuses from the forward projection.
struct SplatProjection {
  Splat2D splat;
  Mat3 sigma = Mat3::Identity();
  Mat3 sigma_inv = Mat3::Identity();
  Vec3 ad = Vec3::Zero();  // sigma_inv * d_ray
  double beta = 1.0;       // d_ray . sigma_inv . d_ray
  double mu = 0.0;         // line-integral factor sqrt(2 pi / beta)
  double k = 1.0;          // dilation amplitude compensation
  Mat2 cov_px = Mat2::Identity();  // detector covariance before dilation
  double density = 0.0;
  Vec3 d_ray = Vec3::UnitX();
  // cone-only
  Vec3 t_cam = Vec3::Zero();
  Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
  double dist = 0.0;
};

inline SplatProjection project_full(const ViewFrame& frame, const ScanGeometry& geometry,
                                    const Vec3& position, const Mat3& cov3d, double density,
                                    const RasterSettings& settings) {
  SplatProjection p;
  p.sigma = cov3d;
  p.density = density;
  Splat2D& s = p.splat;

  const double det3 = cov3d.determinant();
  if (!(det3 > 0.0) || !std::isfinite(det3)) {
    s.degenerate = true;
    return p;
  }
  p.sigma_inv = cov3d.inverse();

  const double cu = 0.5 * (geometry.n_u - 1);
  const double cv = 0.5 * (geometry.n_v - 1);

  if (!frame.cone) {
    p.d_ray = frame.d;
    const Vec3 rel = position - frame.detector_center;
    s.mean2d = Vec2(rel.dot(frame.u) / geometry.s_u + cu, rel.dot(frame.v) / geometry.s_v + cv);
    const Vec3 mu_col = frame.u / geometry.s_u;
    const Vec3 mv_col = frame.v / geometry.s_v;
    p.cov_px(0, 0) = mu_col.dot(cov3d * mu_col);
    p.cov_px(0, 1) = p.cov_px(1, 0) = mu_col.dot(cov3d * mv_col);
    p.cov_px(1, 1) = mv_col.dot(cov3d * mv_col);
  } else {
    const Vec3 rel = position - frame.source;
    p.dist = rel.norm();
    p.t_cam = Vec3(rel.dot(frame.u), rel.dot(frame.v), rel.dot(frame.d));
    const double tz = p.t_cam[2];
    if (!(tz > 1e-9 * frame.focal)) {  // at or behind the source
      s.degenerate = true;
      return p;
    }
    p.d_ray = rel / p.dist;
    const double f = frame.focal;
    s.mean2d = Vec2(f * p.t_cam[0] / (tz * geometry.s_u) + cu,
                    f * p.t_cam[1] / (tz * geometry.s_v) + cv);
    p.jac(0, 0) = f / (geometry.s_u * tz);
    p.jac(0, 2) = -f * p.t_cam[0] / (geometry.s_u * tz * tz);
    p.jac(1, 1) = f / (geometry.s_v * tz);
    p.jac(1, 2) = -f * p.t_cam[1] / (geometry.s_v * tz * tz);
    Mat3 rot;  // world -> camera, rows u, v, d
    rot.row(0) = frame.u.transpose();
    rot.row(1) = frame.v.transpose();
    rot.row(2) = frame.d.transpose();
    const Eigen::Matrix<double, 2, 3> T = p.jac * rot;
    p.cov_px = T * cov3d * T.transpose();
  }

  p.ad = p.sigma_inv * p.d_ray;
  p.beta = p.d_ray.dot(p.ad);
  if (!(p.beta > 0.0) || !std::isfinite(p.beta)) {
    s.degenerate = true;
    return p;
  }
  p.mu = std::sqrt(2.0 * M_PI / p.beta);

  Mat2 cov_render = p.cov_px;
  if (settings.dilate) {
    cov_render(0, 0) += settings.dilation_px2;
    cov_render(1, 1) += settings.dilation_px2;
    const double det_raw = std::max(p.cov_px.determinant(), 0.0);
    p.k = std::sqrt(det_raw / cov_render.determinant());
  }

  const double det2 = cov_render.determinant();
  const double lam_max = max_eigenvalue_2x2(cov_render);
  const double lam_min = det2 / std::max(lam_max, std::numeric_limits<double>::min());
  if (!(det2 > 0.0) || !(lam_max / lam_min < 1e12) || !std::isfinite(det2)) {
    s.degenerate = true;
    return p;
  }

  s.cov2d = cov_render;
  s.conic << cov_render(1, 1) / det2, -cov_render(0, 1) / det2, -cov_render(1, 0) / det2,
      cov_render(0, 0) / det2;
  s.amplitude = p.mu * density * p.k;

  PixelRect rect;
  if (splat_bbox(s.amplitude, s.cov2d, s.mean2d, settings.tau_cut, geometry.n_u, geometry.n_v,
                 rect, settings.sigma_cap, settings.bounding)) {
    s.u_min = rect.u_min;
    s.u_max = rect.u_max;
    s.v_min = rect.v_min;
    s.v_max = rect.v_max;
    s.culled = false;
  } else {
    s.culled = true;
  }
  return p;
}

}  // namespace detail

// Projects one 3D Gaussian to its detector-plane splat. Parallel mode is the
// exact marginal of the world covariance in the (u, v) detector frame with the
// conditional-variance line-integral factor; cone mode uses the perspective
// Jacobian at the mean and the per-splat central ray.
inline Splat2D project_gaussian(const ViewFrame& frame, const ScanGeometry& geometry,
                                const Vec3& position, const Mat3& cov3d, double density,
                                const RasterSettings& settings = {}) {
  return detail::project_full(frame, geometry, position, cov3d, density, settings).splat;
}

// ---------------------------------------------------------------------------
// Tile binning
// ---------------------------------------------------------------------------

struct TileBins {
  int tile_size = 16;
  int tiles_u = 0, tiles_v = 0;
  std::vector<std::vector<std::int32_t>> bins;  // splat indices, ascending

  std::int64_t pair_count() const {
    std::int64_t n = 0;
    for (const auto& bin : bins) n += static_cast<std::int64_t>(bin.size());
    return n;
  }
};

inline TileBins bin_tiles(const std::vector<Splat2D>& splats, int n_u, int n_v, int tile_size) {
  check(tile_size >= 1, "bin_tiles: tile size must be at least 1");
  TileBins bins;
  bins.tile_size = tile_size;
  bins.tiles_u = (n_u + tile_size - 1) / tile_size;
  bins.tiles_v = (n_v + tile_size - 1) / tile_size;
  bins.bins.resize(static_cast<std::size_t>(bins.tiles_u) * bins.tiles_v);
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Splat2D& s = splats[i];
    if (!s.visible()) continue;
    const int t_u0 = s.u_min / tile_size, t_u1 = s.u_max / tile_size;
    const int t_v0 = s.v_min / tile_size, t_v1 = s.v_max / tile_size;
    for (int tv = t_v0; tv <= t_v1; ++tv) {
      for (int tu = t_u0; tu <= t_u1; ++tu) {
        bins.bins[static_cast<std::size_t>(tv) * bins.tiles_u + tu].push_back(
            static_cast<std::int32_t>(i));
      }
    }
  }
  return bins;
}

// ---------------------------------------------------------------------------
// Forward rasterization
// ---------------------------------------------------------------------------

inline std::vector<Splat2D> project_cloud(const GaussianCloud& cloud, const ViewFrame& frame,
                                          const ScanGeometry& geometry,
                                          const RasterSettings& settings) {
  std::vector<Splat2D> splats(cloud.size());
  parallel_for(0, static_cast<std::int64_t>(cloud.size()), [&](std::int64_t i) {
    const ActivatedSplat act = activate(cloud, static_cast<std::size_t>(i));
    const Mat3 sigma = covariance(act.scales, act.unit_quat);
    splats[static_cast<std::size_t>(i)] =
        project_gaussian(frame, geometry, act.position, sigma, act.density, settings);
  }, 16);
  return splats;
}

// Sum of 2D splats over every pixel center inside their bounding rectangles.
// Pixels accumulate splats in ascending index order, so results are
// reproducible for a fixed cloud order regardless of thread count.
inline Image rasterize_view(const GaussianCloud& cloud, const ScanGeometry& geometry,
                            std::size_t angle_index, const RasterSettings& settings = {},
                            RenderStats* stats = nullptr) {
  geometry.validate();
  cloud.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ViewFrame frame = view_frame(geometry, angle_index);
  const std::vector<Splat2D> splats = project_cloud(cloud, frame, geometry, settings);
  const TileBins bins = bin_tiles(splats, geometry.n_u, geometry.n_v, settings.tile_size);

  Image img = Image::zeros(geometry.n_u, geometry.n_v);
  const std::int64_t n_tiles = static_cast<std::int64_t>(bins.bins.size());
  std::vector<std::int64_t> tile_evals(static_cast<std::size_t>(n_tiles), 0);
  parallel_for(0, n_tiles, [&](std::int64_t t) {
    const auto& bin = bins.bins[static_cast<std::size_t>(t)];
    if (bin.empty()) return;
    const int tu = static_cast<int>(t % bins.tiles_u);
    const int tv = static_cast<int>(t / bins.tiles_u);
    const int px_u0 = tu * settings.tile_size;
    const int px_u1 = std::min(geometry.n_u - 1, px_u0 + settings.tile_size - 1);
    const int px_v0 = tv * settings.tile_size;
    const int px_v1 = std::min(geometry.n_v - 1, px_v0 + settings.tile_size - 1);
    std::int64_t evals = 0;
    for (const std::int32_t idx : bin) {
      const Splat2D& s = splats[static_cast<std::size_t>(idx)];
      const int u0 = std::max(px_u0, s.u_min), u1 = std::min(px_u1, s.u_max);
      const int v0 = std::max(px_v0, s.v_min), v1 = std::min(px_v1, s.v_max);
      const double a = s.conic(0, 0), b = s.conic(0, 1), c = s.conic(1, 1);
      for (int v = v0; v <= v1; ++v) {
        const double dv = v - s.mean2d[1];
        for (int u = u0; u <= u1; ++u) {
          const double du = u - s.mean2d[0];
          const double e = -0.5 * (a * du * du + c * dv * dv) - b * du * dv;
          img.at(u, v) += s.amplitude * std::exp(e);
        }
        evals += (u1 - u0 + 1);
      }
    }
    tile_evals[static_cast<std::size_t>(t)] = evals;
  });

  if (stats) {
    for (const Splat2D& s : splats) {
      stats->culled += s.culled && !s.degenerate;
      stats->degenerate += s.degenerate;
    }
    stats->tile_pairs += bins.pair_count();
    for (std::int64_t e : tile_evals) stats->pixel_pairs += e;
    stats->forward_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return img;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Exact analytic gradients of rasterize_view with respect to all four raw
// parameter classes, accumulated per Gaussian over its own bounding-box pixels
// so no two workers share an output slot. Culled and degenerate splats get
// zero gradients. pos_grad_norm carries |dL/d mean2d| per splat for adaptive
// control.
inline ParamGradients rasterize_backward(const GaussianCloud& cloud,
                                         const ScanGeometry& geometry, std::size_t angle_index,
                                         const Image& grad_image,
                                         const RasterSettings& settings = {},
                                         RenderStats* stats = nullptr) {
  check(grad_image.n_u == geometry.n_u && grad_image.n_v == geometry.n_v,
        "rasterize_backward: grad image dims must match detector");
  const auto t0 = std::chrono::steady_clock::now();
  const ViewFrame frame = view_frame(geometry, angle_index);
  ParamGradients grads;
  grads.resize(cloud.size());

  Mat3 cam_rot;  // world -> camera, rows u, v, d
  cam_rot.row(0) = frame.u.transpose();
  cam_rot.row(1) = frame.v.transpose();
  cam_rot.row(2) = frame.d.transpose();

  parallel_for(0, static_cast<std::int64_t>(cloud.size()), [&](std::int64_t si) {
    const std::size_t i = static_cast<std::size_t>(si);
    const ActivatedSplat act = activate(cloud, i);
    const Mat3 sigma = covariance(act.scales, act.unit_quat);
    const detail::SplatProjection p =
        detail::project_full(frame, geometry, act.position, sigma, act.density, settings);
    const Splat2D& s = p.splat;
    if (!s.visible()) return;
    grads.visible[i] = 1;

    // Accumulate pixel-level gradients over the splat's own rectangle.
    double g_amp = 0.0;
    Vec2 g_mean = Vec2::Zero();
    Mat2 g_conic = Mat2::Zero();
    const double a = s.conic(0, 0), b = s.conic(0, 1), c = s.conic(1, 1);
    for (int v = s.v_min; v <= s.v_max; ++v) {
      const double dv = v - s.mean2d[1];
      for (int u = s.u_min; u <= s.u_max; ++u) {
        const double du = u - s.mean2d[0];
        const double e = -0.5 * (a * du * du + c * dv * dv) - b * du * dv;
        const double w = grad_image.at(u, v);
        if (w == 0.0) continue;
        const double expo = std::exp(e);
        g_amp += expo * w;
        const double ge = s.amplitude * expo * w;
        g_mean[0] += ge * (a * du + b * dv);
        g_mean[1] += ge * (b * du + c * dv);
        g_conic(0, 0) += ge * (-0.5 * du * du);
        g_conic(0, 1) += ge * (-0.5 * du * dv);
        g_conic(1, 0) += ge * (-0.5 * dv * du);
        g_conic(1, 1) += ge * (-0.5 * dv * dv);
      }
    }

    // amplitude = mu * density * k
    const double g_mu = act.density * p.k * g_amp;
    const double g_rho = p.mu * p.k * g_amp;
    const double g_k = p.mu * act.density * g_amp;

    // conic -> rendered covariance -> raw detector covariance
    Mat2 g_cov_px = -s.conic * g_conic * s.conic;
    if (settings.dilate) {
      const double det_raw = p.cov_px.determinant();
      if (det_raw > 0.0) {
        g_cov_px += g_k * (p.k / 2.0) * (p.cov_px.inverse() - s.conic);
      }
    }

    // mu -> beta -> Sigma (and the ray direction, cone mode)
    const double g_beta = -g_mu * p.mu / (2.0 * p.beta);
    Mat3 g_sigma = -g_beta * (p.ad * p.ad.transpose());
    Vec3 g_pos = Vec3::Zero();

    if (!frame.cone) {
      const Vec3 mu_col = frame.u / geometry.s_u;
      const Vec3 mv_col = frame.v / geometry.s_v;
      Eigen::Matrix<double, 3, 2> m_cols;
      m_cols.col(0) = mu_col;
      m_cols.col(1) = mv_col;
      g_sigma += m_cols * g_cov_px * m_cols.transpose();
      g_pos = g_mean[0] * mu_col + g_mean[1] * mv_col;
    } else {
      const Eigen::Matrix<double, 2, 3> T = p.jac * cam_rot;
      g_sigma += T.transpose() * g_cov_px * T;
      const Eigen::Matrix<double, 2, 3> g_T = (g_cov_px + g_cov_px.transpose()) * T * sigma;
      const Eigen::Matrix<double, 2, 3> g_J = g_T * cam_rot.transpose();

      const double f = frame.focal, tz = p.t_cam[2];
      const double su = geometry.s_u, sv = geometry.s_v;
      Vec3 g_t = p.jac.transpose() * g_mean;
      g_t[0] += g_J(0, 2) * (-f / (su * tz * tz));
      g_t[1] += g_J(1, 2) * (-f / (sv * tz * tz));
      g_t[2] += g_J(0, 0) * (-f / (su * tz * tz)) +
                g_J(0, 2) * (2.0 * f * p.t_cam[0] / (su * tz * tz * tz)) +
                g_J(1, 1) * (-f / (sv * tz * tz)) +
                g_J(1, 2) * (2.0 * f * p.t_cam[1] / (sv * tz * tz * tz));
      g_pos = cam_rot.transpose() * g_t;

      const Vec3 g_dray = 2.0 * g_beta * p.ad;
      g_pos += (g_dray - p.d_ray * p.d_ray.dot(g_dray)) / p.dist;
    }

    grads.positions[i] = g_pos;
    grads.raw_densities[i] = cloud.raw_densities[i] >= 0.0 ? g_rho : 0.0;
    grads.pos_grad_norm[i] = g_mean.norm();
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

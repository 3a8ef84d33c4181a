#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/parallel.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"

namespace gsct {

// ---------------------------------------------------------------------------
// Procedural phantoms
// ---------------------------------------------------------------------------

// Seeded ellipsoid phantom: a soft containing body plus randomly oriented
// solid ellipsoids and thin shells (the shells make it edge-rich). Voxels are
// supersampled so edges carry partial-volume values; the result is normalized
// to max 1.
struct PhantomConfig {
  std::array<int, 3> dims{64, 64, 64};
  double spacing = 1.0;
  std::uint64_t seed = 0;
  int n_ellipsoids = 7;
  double shell_fraction = 0.45;  // fraction of ellipsoids rendered as shells
  int supersample = 2;           // sub-samples per voxel axis
  double jitter = 0.0;           // relative perturbation of every parameter
  std::uint64_t jitter_seed = 1;
};

namespace detail {

struct PhantomEllipsoid {
  Vec3 center;
  Vec3 semi_axes;
  Mat3 rot;  // world -> ellipsoid frame
  double amplitude;
  bool shell;
  double shell_thickness;  // fraction of the normalized radius
};

inline std::vector<PhantomEllipsoid> phantom_parts(const PhantomConfig& config) {
  Rng rng(config.seed);
  Rng jitter_rng(config.jitter_seed);
  const double half = 0.5 * config.spacing *
                      std::min({config.dims[0], config.dims[1], config.dims[2]});
  const auto jittered = [&](double x, double scale) {
    return config.jitter > 0.0 ? x + jitter_rng.normal() * config.jitter * scale : x;
  };

  std::vector<PhantomEllipsoid> parts;
  parts.reserve(static_cast<std::size_t>(config.n_ellipsoids) + 1);
  // Containing body.
  {
    PhantomEllipsoid body;
    body.center = Vec3::Zero();
    body.semi_axes = Vec3(0.82 * half, 0.78 * half, 0.85 * half);
    body.rot = Mat3::Identity();
    body.amplitude = 0.25;
    body.shell = false;
    body.shell_thickness = 0.0;
    parts.push_back(body);
  }
  for (int e = 0; e < config.n_ellipsoids; ++e) {
    PhantomEllipsoid part;
    for (int a = 0; a < 3; ++a) {
      part.center[a] = jittered(rng.uniform(-0.45, 0.45) * half, 0.05 * half);
      part.semi_axes[a] = std::max(jittered(rng.uniform(0.10, 0.32) * half, 0.03 * half),
                                   0.04 * half);
    }
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    part.rot = rotation_matrix(q).transpose();
    part.amplitude = jittered(rng.uniform(0.35, 1.0), 0.05);
    part.shell = rng.uniform() < config.shell_fraction;
    part.shell_thickness = rng.uniform(0.08, 0.2);
    parts.push_back(part);
  }
  return parts;
}

inline double phantom_value(const std::vector<PhantomEllipsoid>& parts, const Vec3& point) {
  double value = 0.0;
  for (const PhantomEllipsoid& part : parts) {
    const Vec3 local = part.rot * (point - part.center);
    const double q = (local.cwiseQuotient(part.semi_axes)).norm();
    if (part.shell) {
      if (q <= 1.0 && q >= 1.0 - part.shell_thickness) value += part.amplitude;
    } else if (q <= 1.0) {
      value += part.amplitude;
    }
  }
  return value;
}

}  // namespace detail

inline Volume make_phantom(const PhantomConfig& config) {
  check(config.supersample >= 1, "make_phantom: supersample must be at least 1");
  const std::vector<detail::PhantomEllipsoid> parts = detail::phantom_parts(config);
  Volume vol = Volume::centered(config.dims, config.spacing);
  const int ss = config.supersample;
  const double inv_count = 1.0 / static_cast<double>(ss * ss * ss);
  parallel_for(0, config.dims[2], [&](std::int64_t iz) {
    for (int iy = 0; iy < config.dims[1]; ++iy) {
      for (int ix = 0; ix < config.dims[0]; ++ix) {
        const Vec3 base = vol.voxel_center(ix, iy, static_cast<int>(iz));
        double acc = 0.0;
        for (int sz = 0; sz < ss; ++sz) {
          for (int sy = 0; sy < ss; ++sy) {
            for (int sx = 0; sx < ss; ++sx) {
              const Vec3 offset =
                  config.spacing * Vec3((sx + 0.5) / ss - 0.5, (sy + 0.5) / ss - 0.5,
                                        (sz + 0.5) / ss - 0.5);
              acc += detail::phantom_value(parts, base + offset);
            }
          }
        }
        vol.values[static_cast<std::size_t>(vol.index(ix, iy, static_cast<int>(iz)))] =
            acc * inv_count;
      }
    }
  });
  const double peak = vol.max_value();
  if (peak > 0.0) {
    for (double& x : vol.values) x /= peak;
  }
  return vol;
}

// A centered uniform disk (cylinder cut to a ball in z), used by classical
// reconstruction sanity checks.
inline Volume make_disk_phantom(std::array<int, 3> dims, double spacing, double radius_fraction,
                                int supersample = 3) {
  Volume vol = Volume::centered(dims, spacing);
  const double radius = radius_fraction * 0.5 * spacing * std::min({dims[0], dims[1], dims[2]});
  const int ss = supersample;
  const double inv_count = 1.0 / static_cast<double>(ss * ss * ss);
  parallel_for(0, dims[2], [&](std::int64_t iz) {
    for (int iy = 0; iy < dims[1]; ++iy) {
      for (int ix = 0; ix < dims[0]; ++ix) {
        const Vec3 base = vol.voxel_center(ix, iy, static_cast<int>(iz));
        double acc = 0.0;
        for (int sz = 0; sz < ss; ++sz) {
          for (int sy = 0; sy < ss; ++sy) {
            for (int sx = 0; sx < ss; ++sx) {
              const Vec3 p = base + spacing * Vec3((sx + 0.5) / ss - 0.5, (sy + 0.5) / ss - 0.5,
                                                   (sz + 0.5) / ss - 0.5);
              acc += p.norm() <= radius ? 1.0 : 0.0;
            }
          }
        }
        vol.values[static_cast<std::size_t>(vol.index(ix, iy, static_cast<int>(iz)))] =
            acc * inv_count;
      }
    }
  });
  return vol;
}

// ---------------------------------------------------------------------------
// Ray-marched volume projector
// ---------------------------------------------------------------------------

// Dense line integrals of a voxel volume: trilinear samples at spacing/2 steps
// along each pixel's ray. This is the synthetic ground-truth generator and is
// deliberately independent of the splat rasterizer.
inline ProjectionSet raymarch_project(const Volume& vol, const ScanGeometry& geometry) {
  vol.validate();
  geometry.validate();
  ProjectionSet out;
  out.geometry = geometry;
  out.images.resize(geometry.angles.size());

  const Vec3 box_lo = vol.origin - Vec3::Constant(0.5 * vol.spacing);
  const Vec3 box_hi = vol.origin + vol.spacing * Vec3(vol.dims[0] - 1, vol.dims[1] - 1,
                                                      vol.dims[2] - 1) +
                      Vec3::Constant(0.5 * vol.spacing);
  const double step = 0.5 * vol.spacing;

  for (std::size_t view = 0; view < geometry.angles.size(); ++view) {
    const ViewFrame frame = view_frame(geometry, view);
    Image img = Image::zeros(geometry.n_u, geometry.n_v);
    parallel_for(0, static_cast<std::int64_t>(geometry.n_u) * geometry.n_v, [&](std::int64_t px) {
      const int u = static_cast<int>(px % geometry.n_u);
      const int v = static_cast<int>(px / geometry.n_u);
      const Vec3 pixel = pixel_center_world(frame, geometry, u, v);
      Vec3 origin, dir;
      if (frame.cone) {
        origin = frame.source;
        dir = (pixel - frame.source).normalized();
      } else {
        origin = pixel;
        dir = frame.d;
      }
      double t0 = -std::numeric_limits<double>::infinity();
      double t1 = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-300) {
          if (origin[a] < box_lo[a] || origin[a] > box_hi[a]) {
            t0 = 1.0;
            t1 = 0.0;
            break;
          }
          continue;
        }
        double ta = (box_lo[a] - origin[a]) / dir[a];
        double tb = (box_hi[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      double value = 0.0;
      if (t1 > t0) {
        const std::int64_t n_steps =
            std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((t1 - t0) / step)));
        const double dt = (t1 - t0) / static_cast<double>(n_steps);
        for (std::int64_t i = 0; i < n_steps; ++i) {
          const double t = t0 + (static_cast<double>(i) + 0.5) * dt;
          value += vol.sample_trilinear(origin + t * dir);
        }
        value *= dt;
      }
      img.values[static_cast<std::size_t>(px)] = value;
    }, 8);
    out.images[view] = std::move(img);
  }
  return out;
}

// Uniformly spaced view angles over a half rotation (parallel) or full
// rotation (cone).
inline std::vector<double> default_angles(std::size_t n_views, BeamMode mode) {
  const double span = mode == BeamMode::parallel ? M_PI : 2.0 * M_PI;
  std::vector<double> angles(n_views);
  for (std::size_t i = 0; i < n_views; ++i) {
    angles[i] = span * static_cast<double>(i) / static_cast<double>(n_views);
  }
  return angles;
}

// Detector sized to cover the volume from every direction with a small margin.
inline ScanGeometry default_geometry(const Volume& vol, std::size_t n_views, BeamMode mode,
                                     int n_u, int n_v, double source_to_origin = 0.0,
                                     double origin_to_detector = 0.0) {
  ScanGeometry geom;
  geom.mode = mode;
  geom.n_u = n_u;
  geom.n_v = n_v;
  geom.angles = default_angles(n_views, mode);
  const double width_xy =
      std::hypot(vol.dims[0] * vol.spacing, vol.dims[1] * vol.spacing) * 1.05;
  const double height = vol.dims[2] * vol.spacing * 1.05;
  if (mode == BeamMode::cone) {
    const double radius = 0.5 * std::hypot(width_xy, height);
    geom.source_to_origin = source_to_origin > 0.0 ? source_to_origin : 4.0 * radius;
    geom.origin_to_detector =
        origin_to_detector > 0.0 ? origin_to_detector : 2.0 * radius;
    const double mag =
        (geom.source_to_origin + geom.origin_to_detector) / geom.source_to_origin;
    geom.s_u = mag * width_xy / n_u;
    geom.s_v = mag * height / n_v;
  } else {
    geom.s_u = width_xy / n_u;
    geom.s_v = height / n_v;
  }
  return geom;
}

}  // namespace gsct

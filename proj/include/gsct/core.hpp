#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gsct/common.hpp"

namespace gsct {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Gaussian cloud
// ---------------------------------------------------------------------------

// Learnable model state. Raw storage is unconstrained; activation maps it to
// valid splat parameters: exp for scales, normalization for rotations, clamp
// at zero for densities. Densities are attenuation amplitude per unit length,
// positions share the length unit of Volume spacing.
struct GaussianCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> log_scales;
  std::vector<Vec4> rotations;  // quaternion (w, x, y, z), renormalized on activation
  std::vector<double> raw_densities;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void reserve(std::size_t n) {
    positions.reserve(n);
    log_scales.reserve(n);
    rotations.reserve(n);
    raw_densities.reserve(n);
  }

  void push_back(const Vec3& position, const Vec3& log_scale, const Vec4& rotation,
                 double raw_density) {
    positions.push_back(position);
    log_scales.push_back(log_scale);
    rotations.push_back(rotation);
    raw_densities.push_back(raw_density);
  }

  void validate() const {
    const std::size_t n = positions.size();
    check(log_scales.size() == n && rotations.size() == n && raw_densities.size() == n,
          "GaussianCloud: parameter arrays out of lockstep");
  }
};

struct ActivatedSplat {
  Vec3 position;
  Vec3 scales;     // strictly positive, world units
  Vec4 unit_quat;  // unit norm
  double density;  // >= 0
};

namespace detail {

inline bool finite(const Vec3& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

inline bool finite(const Vec4& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]) && std::isfinite(v[3]);
}

}  // namespace detail

inline ActivatedSplat activate(const GaussianCloud& cloud, std::size_t i) {
  check(i < cloud.size(), "activate: splat index out of range");
  const Vec3& p = cloud.positions[i];
  const Vec3& ls = cloud.log_scales[i];
  const Vec4& q = cloud.rotations[i];
  const double rho = cloud.raw_densities[i];
  if (!detail::finite(p) || !detail::finite(ls) || !detail::finite(q) || !std::isfinite(rho)) {
    throw contract_error("activate: non-finite parameter in splat " + std::to_string(i));
  }
  const double norm = q.norm();
  check(norm > 0.0, "activate: zero quaternion in splat " + std::to_string(i));
  ActivatedSplat out;
  out.position = p;
  out.scales = ls.array().exp();
  out.unit_quat = q / norm;
  out.density = std::max(rho, 0.0);
  return out;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 rotation_matrix(const Vec4& q) {
  const double r = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - r * z), 2 * (x * z + r * y),
      2 * (x * y + r * z), 1 - 2 * (x * x + z * z), 2 * (y * z - r * x),
      2 * (x * z - r * y), 2 * (y * z + r * x), 1 - 2 * (x * x + y * y);
  return R;
}

// Sigma = R diag(s^2) R^T. Positive definite for any unit quaternion and
// positive scales.
inline Mat3 covariance(const Vec3& scales, const Vec4& unit_quat) {
  const Mat3 R = rotation_matrix(unit_quat);
  const Mat3 N = R * scales.asDiagonal();
  return N * N.transpose();
}

// Radius of the bounding sphere of the positions: half the diagonal of their
// axis-aligned bounding box. Used to normalize learning rates and split
// thresholds.
inline double scene_extent(const GaussianCloud& cloud) {
  if (cloud.empty()) throw contract_error("scene_extent: empty model");
  Vec3 lo = cloud.positions[0];
  Vec3 hi = cloud.positions[0];
  for (const Vec3& p : cloud.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return 0.5 * (hi - lo).norm();
}

// Per-splat gradients with respect to the raw (stored) parameters. Produced by
// the rasterizer and voxelizer backward passes; pos_grad_norm accumulates the
// positional-gradient magnitude used by adaptive control (detector-plane 2D
// for rasterization, world-space 3D for voxelization).
struct ParamGradients {
  std::vector<Vec3> positions;
  std::vector<Vec3> log_scales;
  std::vector<Vec4> rotations;
  std::vector<double> raw_densities;
  std::vector<double> pos_grad_norm;
  std::vector<std::uint8_t> visible;

  void resize(std::size_t n) {
    positions.assign(n, Vec3::Zero());
    log_scales.assign(n, Vec3::Zero());
    rotations.assign(n, Vec4::Zero());
    raw_densities.assign(n, 0.0);
    pos_grad_norm.assign(n, 0.0);
    visible.assign(n, 0);
  }

  void add(const ParamGradients& other) {
    check(other.positions.size() == positions.size(), "ParamGradients::add: size mismatch");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      positions[i] += other.positions[i];
      log_scales[i] += other.log_scales[i];
      rotations[i] += other.rotations[i];
      raw_densities[i] += other.raw_densities[i];
      pos_grad_norm[i] += other.pos_grad_norm[i];
      visible[i] |= other.visible[i];
    }
  }
};

namespace detail {

// dL/d(log_scales, raw rotation) from dL/dSigma, with Sigma = R diag(s^2) R^T
// and the quaternion normalization folded in. grad_sigma treats all nine
// entries as independent.
inline void covariance_backward(const Vec3& scales, const Vec4& unit_quat, const Vec4& raw_quat,
                                const Mat3& grad_sigma, Vec3& grad_log_scales,
                                Vec4& grad_raw_quat) {
  const Mat3 rot = rotation_matrix(unit_quat);
  const Mat3 n_mat = rot * scales.asDiagonal();
  const Mat3 grad_n = (grad_sigma + grad_sigma.transpose()) * n_mat;
  const Mat3 rt_gn = rot.transpose() * grad_n;
  const Vec3 grad_scales(rt_gn(0, 0), rt_gn(1, 1), rt_gn(2, 2));
  grad_log_scales = scales.cwiseProduct(grad_scales);

  const Mat3 grad_rot = grad_n * scales.asDiagonal();
  const double r = unit_quat[0], x = unit_quat[1], y = unit_quat[2], z = unit_quat[3];
  Mat3 d_r, d_x, d_y, d_z;
  d_r << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d_x << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * r, 2 * z, 2 * r, -4 * x;
  d_y << -4 * y, 2 * x, 2 * r, 2 * x, 0, 2 * z, -2 * r, 2 * z, -4 * y;
  d_z << -4 * z, -2 * r, 2 * x, 2 * r, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  const Vec4 grad_unit(grad_rot.cwiseProduct(d_r).sum(), grad_rot.cwiseProduct(d_x).sum(),
                       grad_rot.cwiseProduct(d_y).sum(), grad_rot.cwiseProduct(d_z).sum());
  const double norm = raw_quat.norm();
  grad_raw_quat = (grad_unit - unit_quat * unit_quat.dot(grad_unit)) / norm;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Acquisition geometry and image containers
// ---------------------------------------------------------------------------

enum class BeamMode { parallel, cone };

// Rotation is about the world z axis; angles are in radians. Cone distances
// are ignored in parallel mode.
struct ScanGeometry {
  BeamMode mode = BeamMode::parallel;
  int n_u = 0, n_v = 0;              // detector pixels
  double s_u = 1.0, s_v = 1.0;       // pixel spacing, world units
  std::vector<double> angles;
  double source_to_origin = 0.0;     // cone mode only
  double origin_to_detector = 0.0;   // cone mode only

  std::size_t n_views() const { return angles.size(); }

  void validate() const {
    check(n_u >= 1 && n_v >= 1, "ScanGeometry: detector must be at least 1x1");
    check(s_u > 0.0 && s_v > 0.0, "ScanGeometry: pixel spacing must be positive");
    for (double a : angles) check(std::isfinite(a), "ScanGeometry: non-finite angle");
    if (mode == BeamMode::cone) {
      check(source_to_origin > 0.0 && origin_to_detector > 0.0,
            "ScanGeometry: cone distances must be positive");
    }
  }
};

struct Image {
  int n_u = 0, n_v = 0;
  std::vector<double> values;  // u fastest

  static Image zeros(int n_u, int n_v) {
    Image img;
    img.n_u = n_u;
    img.n_v = n_v;
    img.values.assign(static_cast<std::size_t>(n_u) * n_v, 0.0);
    return img;
  }

  std::int64_t count() const { return static_cast<std::int64_t>(n_u) * n_v; }
  double& at(int u, int v) { return values[static_cast<std::size_t>(v) * n_u + u]; }
  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * n_u + u]; }

  double max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : values) m = std::max(m, x);
    return values.empty() ? 0.0 : m;
  }
};

struct ProjectionSet {
  ScanGeometry geometry;
  std::vector<Image> images;  // one per angle

  void validate() const {
    geometry.validate();
    check(images.size() == geometry.angles.size(),
          "ProjectionSet: image count must equal angle count");
    for (const Image& img : images) {
      check(img.n_u == geometry.n_u && img.n_v == geometry.n_v,
            "ProjectionSet: image dims must match detector");
    }
  }

  double max_value() const {
    double m = 0.0;
    for (const Image& img : images) m = std::max(m, img.max_value());
    return m;
  }
};

// ---------------------------------------------------------------------------
// Dense volume
// ---------------------------------------------------------------------------

// Isotropic scalar grid; origin is the world coordinate of the center of
// voxel (0,0,0), values are stored x fastest, then y, then z.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  double spacing = 1.0;
  Vec3 origin = Vec3::Zero();
  std::vector<double> values;

  static Volume zeros(std::array<int, 3> dims, double spacing, const Vec3& origin) {
    Volume vol;
    vol.dims = dims;
    vol.spacing = spacing;
    vol.origin = origin;
    vol.values.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0.0);
    return vol;
  }

  // Grid centered on the world origin.
  static Volume centered(std::array<int, 3> dims, double spacing) {
    const Vec3 origin(-0.5 * spacing * (dims[0] - 1), -0.5 * spacing * (dims[1] - 1),
                      -0.5 * spacing * (dims[2] - 1));
    return zeros(dims, spacing, origin);
  }

  std::int64_t count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  std::int64_t index(int ix, int iy, int iz) const {
    return (static_cast<std::int64_t>(iz) * dims[1] + iy) * dims[0] + ix;
  }

  double& at(int ix, int iy, int iz) { return values[static_cast<std::size_t>(index(ix, iy, iz))]; }
  double at(int ix, int iy, int iz) const {
    return values[static_cast<std::size_t>(index(ix, iy, iz))];
  }

  Vec3 voxel_center(int ix, int iy, int iz) const {
    return origin + spacing * Vec3(ix, iy, iz);
  }

  double max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : values) m = std::max(m, x);
    return values.empty() ? 0.0 : m;
  }

  // Trilinear sample at a world position, clamped at the grid border.
  double sample_trilinear(const Vec3& world) const {
    const Vec3 g = (world - origin) / spacing;
    double fx = std::clamp(g[0], 0.0, static_cast<double>(dims[0] - 1));
    double fy = std::clamp(g[1], 0.0, static_cast<double>(dims[1] - 1));
    double fz = std::clamp(g[2], 0.0, static_cast<double>(dims[2] - 1));
    const int x0 = std::min(static_cast<int>(fx), dims[0] - 2 >= 0 ? dims[0] - 2 : 0);
    const int y0 = std::min(static_cast<int>(fy), dims[1] - 2 >= 0 ? dims[1] - 2 : 0);
    const int z0 = std::min(static_cast<int>(fz), dims[2] - 2 >= 0 ? dims[2] - 2 : 0);
    const int x1 = std::min(x0 + 1, dims[0] - 1);
    const int y1 = std::min(y0 + 1, dims[1] - 1);
    const int z1 = std::min(z0 + 1, dims[2] - 1);
    const double tx = fx - x0, ty = fy - y0, tz = fz - z0;
    const double c00 = at(x0, y0, z0) * (1 - tx) + at(x1, y0, z0) * tx;
    const double c10 = at(x0, y1, z0) * (1 - tx) + at(x1, y1, z0) * tx;
    const double c01 = at(x0, y0, z1) * (1 - tx) + at(x1, y0, z1) * tx;
    const double c11 = at(x0, y1, z1) * (1 - tx) + at(x1, y1, z1) * tx;
    const double c0 = c00 * (1 - ty) + c10 * ty;
    const double c1 = c01 * (1 - ty) + c11 * ty;
    return c0 * (1 - tz) + c1 * tz;
  }

  void validate() const {
    check(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, "Volume: dims must be at least 1");
    check(spacing > 0.0, "Volume: spacing must be positive");
    check(static_cast<std::int64_t>(values.size()) == count(),
          "Volume: value count does not match dims");
    for (double x : values) check(std::isfinite(x), "Volume: non-finite value");
  }
};

// ---------------------------------------------------------------------------
// Projected splat
// ---------------------------------------------------------------------------

// Per-view 2D footprint of a 3D Gaussian. mean2d is in pixel coordinates
// (pixel centers at integer positions), cov2d is the detector-space covariance
// in pixel^2 after the anti-alias dilation when enabled, conic its inverse.
// amplitude folds the line-integral factor, density, and the dilation
// compensation. The bbox is the inclusive pixel rectangle the splat touches.
struct Splat2D {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Mat2 conic = Mat2::Identity();
  double amplitude = 0.0;
  int u_min = 0, u_max = -1, v_min = 0, v_max = -1;
  bool culled = true;
  bool degenerate = false;

  bool visible() const { return !culled && !degenerate; }
};

}  // namespace gsct

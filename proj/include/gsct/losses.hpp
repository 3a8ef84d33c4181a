#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gsct/core.hpp"
#include "gsct/parallel.hpp"

namespace gsct {

struct LossWeights {
  double alpha_ssim = 0.25;
  double alpha_tv = 0.05;

  void validate() const {
    check(std::isfinite(alpha_ssim) && alpha_ssim >= 0.0, "LossWeights: alpha_ssim invalid");
    check(std::isfinite(alpha_tv) && alpha_tv >= 0.0, "LossWeights: alpha_tv invalid");
  }
};

// ---------------------------------------------------------------------------
// L1
// ---------------------------------------------------------------------------

// Mean absolute difference; grad = sign(pred - target) / N with sign(0) = 0.
inline double l1(const std::vector<double>& pred, const std::vector<double>& target,
                 std::vector<double>& grad) {
  check(pred.size() == target.size(), "l1: shape mismatch");
  check(!pred.empty(), "l1: empty input");
  const std::int64_t n = static_cast<std::int64_t>(pred.size());
  grad.assign(pred.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double value = parallel_reduce_sum<double>(n, [&](std::int64_t lo, std::int64_t hi) {
    double sum = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) {
      const double d = pred[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)];
      sum += std::abs(d);
      grad[static_cast<std::size_t>(i)] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return sum;
  });
  return value * inv_n;
}

struct L1ImageResult {
  double value = 0.0;
  Image grad;
};

inline L1ImageResult l1(const Image& pred, const Image& target) {
  check(pred.n_u == target.n_u && pred.n_v == target.n_v, "l1: image shape mismatch");
  L1ImageResult out;
  out.grad.n_u = pred.n_u;
  out.grad.n_v = pred.n_v;
  out.value = l1(pred.values, target.values, out.grad.values);
  return out;
}

struct L1VolumeResult {
  double value = 0.0;
  Volume grad;
};

inline L1VolumeResult l1(const Volume& pred, const Volume& target) {
  check(pred.dims == target.dims, "l1: volume shape mismatch");
  L1VolumeResult out;
  out.grad.dims = pred.dims;
  out.grad.spacing = pred.spacing;
  out.grad.origin = pred.origin;
  out.value = l1(pred.values, target.values, out.grad.values);
  return out;
}

// ---------------------------------------------------------------------------
// SSIM building blocks
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kSsimWindow = 11;
constexpr int kSsimRadius = 5;
constexpr double kSsimC1 = 0.01 * 0.01;  // (0.01 L)^2, L = 1
constexpr double kSsimC2 = 0.03 * 0.03;

// Normalized 1D Gaussian window, sigma = 1.5. The separable product equals the
// usual 11x11 (11^3) window.
inline const std::array<double, kSsimWindow>& ssim_kernel() {
  static const std::array<double, kSsimWindow> kernel = [] {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimRadius;
      w[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (1.5 * 1.5));
      sum += w[static_cast<std::size_t>(i)];
    }
    for (double& x : w) x /= sum;
    return w;
  }();
  return kernel;
}

// Valid windowed pass along the fastest axis: rows of length nx become rows of
// length nx - 10.
inline void ssim_pass_x(const double* in, int nx, std::int64_t rows, double* out) {
  const auto& w = ssim_kernel();
  const int nxo = nx - (kSsimWindow - 1);
  parallel_for(0, rows, [&](std::int64_t r) {
    const double* src = in + r * nx;
    double* dst = out + r * nxo;
    for (int c = 0; c < nxo; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += w[static_cast<std::size_t>(k)] * src[c + k];
      dst[c] = acc;
    }
  }, 8);
}

// Valid pass along the middle axis of one (nx, ny) slice.
inline void ssim_pass_y(const double* in, int nx, int ny, double* out) {
  const auto& w = ssim_kernel();
  const int nyo = ny - (kSsimWindow - 1);
  parallel_for(0, nyo, [&](std::int64_t c) {
    double* dst = out + c * nx;
    for (int x = 0; x < nx; ++x) dst[x] = 0.0;
    for (int k = 0; k < kSsimWindow; ++k) {
      const double wk = w[static_cast<std::size_t>(k)];
      const double* src = in + (c + k) * static_cast<std::int64_t>(nx);
      for (int x = 0; x < nx; ++x) dst[x] += wk * src[x];
    }
  }, 8);
}

// Adjoint of ssim_pass_y: g has ny_in - 10 rows, out has ny_in rows. Source
// rows are accumulated in ascending order.
inline void ssim_adj_y(const double* g, int nx, int ny_out, double* out) {
  const auto& w = ssim_kernel();
  const int nyo = ny_out - (kSsimWindow - 1);
  parallel_for(0, ny_out, [&](std::int64_t y) {
    double* dst = out + y * nx;
    for (int x = 0; x < nx; ++x) dst[x] = 0.0;
    const int c_lo = std::max(0, static_cast<int>(y) - (kSsimWindow - 1));
    const int c_hi = std::min(nyo - 1, static_cast<int>(y));
    for (int c = c_lo; c <= c_hi; ++c) {
      const double wk = w[static_cast<std::size_t>(static_cast<int>(y) - c)];
      const double* src = g + c * static_cast<std::int64_t>(nx);
      for (int x = 0; x < nx; ++x) dst[x] += wk * src[x];
    }
  }, 8);
}

// Adjoint of ssim_pass_x: rows of length nx_out - 10 become rows of length
// nx_out.
inline void ssim_adj_x(const double* g, int nx_out, std::int64_t rows, double* out) {
  const auto& w = ssim_kernel();
  const int nxo = nx_out - (kSsimWindow - 1);
  parallel_for(0, rows, [&](std::int64_t r) {
    const double* src = g + r * nxo;
    double* dst = out + r * nx_out;
    for (int x = 0; x < nx_out; ++x) {
      double acc = 0.0;
      const int c_lo = std::max(0, x - (kSsimWindow - 1));
      const int c_hi = std::min(nxo - 1, x);
      for (int c = c_lo; c <= c_hi; ++c) acc += w[static_cast<std::size_t>(x - c)] * src[c];
      dst[x] = acc;
    }
  }, 8);
}

// Per-window SSIM value and the three gradient coefficients, from the five
// filtered moments. The gradient of 1 - mean(SSIM) w.r.t. pred pixel p is
// -1/N * sum over windows of w_offset * (cA + cB * pred_p + cC * target_p).
struct SsimPoint {
  double s;
  double ca, cb, cc;
};

inline SsimPoint ssim_point(double mx, double my, double mxx, double myy, double mxy) {
  const double sx = mxx - mx * mx;
  const double sy = myy - my * my;
  const double sxy = mxy - mx * my;
  const double a1 = 2.0 * mx * my + kSsimC1;
  const double a2 = 2.0 * sxy + kSsimC2;
  const double b1 = mx * mx + my * my + kSsimC1;
  const double b2 = sx + sy + kSsimC2;
  const double inv_b1b2 = 1.0 / (b1 * b2);
  const double s = a1 * a2 * inv_b1b2;
  const double ds_dmx = 2.0 * my * a2 * inv_b1b2 - 2.0 * mx * s / b1;
  const double ds_dsx = -s / b2;
  const double ds_dsxy = 2.0 * a1 * inv_b1b2;
  SsimPoint out;
  out.s = s;
  out.ca = ds_dmx - 2.0 * ds_dsx * mx - ds_dsxy * my;
  out.cb = 2.0 * ds_dsx;
  out.cc = ds_dsxy;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 2D SSIM
// ---------------------------------------------------------------------------

struct Ssim2dResult {
  double loss = 0.0;  // 1 - mean SSIM over valid window positions
  Image grad;         // w.r.t. pred
};

// Windowed SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 1e-4,
// C2 = 9e-4 for a unit data range. Window centers stay fully inside the image
// (valid-region averaging, no padding).
inline Ssim2dResult ssim2d(const Image& pred, const Image& target) {
  check(pred.n_u == target.n_u && pred.n_v == target.n_v, "ssim2d: shape mismatch");
  check(pred.n_u >= detail::kSsimWindow && pred.n_v >= detail::kSsimWindow,
        "ssim2d: image smaller than the 11x11 window");
  const int nu = pred.n_u, nv = pred.n_v;
  const int nuo = nu - (detail::kSsimWindow - 1);
  const int nvo = nv - (detail::kSsimWindow - 1);
  const std::size_t n_in = static_cast<std::size_t>(nu) * nv;
  const std::size_t n_mid = static_cast<std::size_t>(nuo) * nv;
  const std::size_t n_out = static_cast<std::size_t>(nuo) * nvo;

  // Five filtered moment maps: x, y, x^2, y^2, xy.
  std::vector<double> raw(n_in), mid(n_mid);
  std::array<std::vector<double>, 5> moments;
  for (int m = 0; m < 5; ++m) {
    const double* px = pred.values.data();
    const double* py = target.values.data();
    for (std::size_t i = 0; i < n_in; ++i) {
      switch (m) {
        case 0: raw[i] = px[i]; break;
        case 1: raw[i] = py[i]; break;
        case 2: raw[i] = px[i] * px[i]; break;
        case 3: raw[i] = py[i] * py[i]; break;
        default: raw[i] = px[i] * py[i]; break;
      }
    }
    detail::ssim_pass_x(raw.data(), nu, nv, mid.data());
    moments[static_cast<std::size_t>(m)].resize(n_out);
    detail::ssim_pass_y(mid.data(), nuo, nv, moments[static_cast<std::size_t>(m)].data());
  }

  std::vector<double> ca(n_out), cb(n_out), cc(n_out);
  double ssim_sum = 0.0;
  for (std::size_t i = 0; i < n_out; ++i) {
    const detail::SsimPoint pt = detail::ssim_point(moments[0][i], moments[1][i], moments[2][i],
                                                    moments[3][i], moments[4][i]);
    ssim_sum += pt.s;
    ca[i] = pt.ca;
    cb[i] = pt.cb;
    cc[i] = pt.cc;
  }
  const double inv_n = 1.0 / static_cast<double>(n_out);

  Ssim2dResult out;
  out.loss = 1.0 - ssim_sum * inv_n;
  out.grad = Image::zeros(nu, nv);
  std::vector<double> adj_mid(static_cast<std::size_t>(nuo) * nv);
  std::vector<double> adj_full(n_in);
  const std::array<const std::vector<double>*, 3> coefs = {&ca, &cb, &cc};
  for (int c = 0; c < 3; ++c) {
    detail::ssim_adj_y(coefs[static_cast<std::size_t>(c)]->data(), nuo, nv, adj_mid.data());
    detail::ssim_adj_x(adj_mid.data(), nu, nv, adj_full.data());
    for (std::size_t i = 0; i < n_in; ++i) {
      const double factor = c == 0 ? 1.0 : (c == 1 ? pred.values[i] : target.values[i]);
      out.grad.values[i] -= inv_n * adj_full[i] * factor;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 3D SSIM
// ---------------------------------------------------------------------------

enum class SsimPath {
  streaming,    // depth dimension streamed through ring buffers
  materialized  // full intermediate volumes (reference path)
};

struct Ssim3dResult {
  double loss = 0.0;
  Volume grad;
};

namespace detail {

// Shared slice-level machinery so the streaming and materialized paths perform
// identical arithmetic in identical order (their results are bit-equal).
struct Ssim3dWorkspace {
  int nx, ny, nz, nxo, nyo, nzo;
  std::size_t slice_in, slice_mid, slice_out;

  explicit Ssim3dWorkspace(const Volume& vol) {
    nx = vol.dims[0];
    ny = vol.dims[1];
    nz = vol.dims[2];
    nxo = nx - (kSsimWindow - 1);
    nyo = ny - (kSsimWindow - 1);
    nzo = nz - (kSsimWindow - 1);
    slice_in = static_cast<std::size_t>(nx) * ny;
    slice_mid = static_cast<std::size_t>(nxo) * ny;
    slice_out = static_cast<std::size_t>(nxo) * nyo;
  }

  // xy-filters the five moment maps of input slice z into out[5].
  void filter_slice(const Volume& pred, const Volume& target, int z,
                    std::array<std::vector<double>, 5>& out, std::vector<double>& raw,
                    std::vector<double>& mid) const {
    const double* px = pred.values.data() + static_cast<std::size_t>(z) * slice_in;
    const double* py = target.values.data() + static_cast<std::size_t>(z) * slice_in;
    for (int m = 0; m < 5; ++m) {
      for (std::size_t i = 0; i < slice_in; ++i) {
        switch (m) {
          case 0: raw[i] = px[i]; break;
          case 1: raw[i] = py[i]; break;
          case 2: raw[i] = px[i] * px[i]; break;
          case 3: raw[i] = py[i] * py[i]; break;
          default: raw[i] = px[i] * py[i]; break;
        }
      }
      ssim_pass_x(raw.data(), nx, ny, mid.data());
      ssim_pass_y(mid.data(), nxo, ny, out[static_cast<std::size_t>(m)].data());
    }
  }

  // z-convolves the ring of filtered slices (k ascending) and emits the SSIM
  // slice sum plus the three coefficient slices for window-center slice zc.
  double coef_slice(const std::array<std::vector<std::vector<double>>, 5>& ring, int zc,
                    std::array<std::vector<double>, 3>& coef) const {
    const auto& w = ssim_kernel();
    std::array<double, 5> m{};
    double sum = 0.0;
    for (std::size_t i = 0; i < slice_out; ++i) {
      for (int mi = 0; mi < 5; ++mi) {
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) {
          acc += w[static_cast<std::size_t>(k)] *
                 ring[static_cast<std::size_t>(mi)][static_cast<std::size_t>((zc + k) %
                                                                             kSsimWindow)][i];
        }
        m[static_cast<std::size_t>(mi)] = acc;
      }
      const SsimPoint pt = ssim_point(m[0], m[1], m[2], m[3], m[4]);
      sum += pt.s;
      coef[0][i] = pt.ca;
      coef[1][i] = pt.cb;
      coef[2][i] = pt.cc;
    }
    return sum;
  }

  // Finishes one z-adjoint slice: y/x adjoints of the three pending channels,
  // combined with the per-voxel pred/target factors into the gradient slice.
  void finalize_slice(const std::array<std::vector<double>, 3>& pending, int z,
                      const Volume& pred, const Volume& target, double inv_n, Volume& grad,
                      std::vector<double>& adj_mid, std::vector<double>& adj_full) const {
    double* dst = grad.values.data() + static_cast<std::size_t>(z) * slice_in;
    const double* px = pred.values.data() + static_cast<std::size_t>(z) * slice_in;
    const double* py = target.values.data() + static_cast<std::size_t>(z) * slice_in;
    for (int c = 0; c < 3; ++c) {
      ssim_adj_y(pending[static_cast<std::size_t>(c)].data(), nxo, ny, adj_mid.data());
      ssim_adj_x(adj_mid.data(), nx, ny, adj_full.data());
      for (std::size_t i = 0; i < slice_in; ++i) {
        const double factor = c == 0 ? 1.0 : (c == 1 ? px[i] : py[i]);
        dst[i] -= inv_n * adj_full[i] * factor;
      }
    }
  }
};

}  // namespace detail

// 3D SSIM with an 11^3 Gaussian window, same constants as 2D. The streaming
// path keeps only ring buffers of window-depth slices (working memory
// O(window * slice)); the materialized path is the straightforward full-volume
// reference. Both produce bit-identical results.
inline Ssim3dResult ssim3d(const Volume& pred, const Volume& target,
                           SsimPath path = SsimPath::streaming) {
  check(pred.dims == target.dims, "ssim3d: shape mismatch");
  check(pred.dims[0] >= detail::kSsimWindow && pred.dims[1] >= detail::kSsimWindow &&
            pred.dims[2] >= detail::kSsimWindow,
        "ssim3d: volume smaller than the 11^3 window");
  const detail::Ssim3dWorkspace ws(pred);
  const double inv_n =
      1.0 / (static_cast<double>(ws.nxo) * static_cast<double>(ws.nyo) * ws.nzo);

  Ssim3dResult out;
  out.grad = Volume::zeros(pred.dims, pred.spacing, pred.origin);

  std::vector<double> raw(ws.slice_in), mid(ws.slice_mid);
  std::vector<double> adj_mid(static_cast<std::size_t>(ws.nxo) * ws.ny);
  std::vector<double> adj_full(ws.slice_in);
  double ssim_sum = 0.0;
  const auto& w = detail::ssim_kernel();

  if (path == SsimPath::streaming) {
    // Ring of xy-filtered moment slices, and a ring of pending z-adjoint
    // slices (three coefficient channels each).
    std::array<std::vector<std::vector<double>>, 5> ring;
    for (auto& r : ring) {
      r.assign(detail::kSsimWindow, std::vector<double>(ws.slice_out, 0.0));
    }
    std::vector<std::array<std::vector<double>, 3>> pending(detail::kSsimWindow);
    for (auto& p : pending) {
      for (auto& ch : p) ch.assign(ws.slice_out, 0.0);
    }
    std::array<std::vector<double>, 3> coef;
    for (auto& c : coef) c.resize(ws.slice_out);

    for (int zi = 0; zi < ws.nz; ++zi) {
      std::array<std::vector<double>, 5> filtered;
      for (int m = 0; m < 5; ++m) {
        filtered[static_cast<std::size_t>(m)] =
            std::move(ring[static_cast<std::size_t>(m)][static_cast<std::size_t>(
                zi % detail::kSsimWindow)]);
      }
      ws.filter_slice(pred, target, zi, filtered, raw, mid);
      for (int m = 0; m < 5; ++m) {
        ring[static_cast<std::size_t>(m)][static_cast<std::size_t>(zi % detail::kSsimWindow)] =
            std::move(filtered[static_cast<std::size_t>(m)]);
      }
      if (zi < detail::kSsimWindow - 1) continue;
      const int zc = zi - (detail::kSsimWindow - 1);
      ssim_sum += ws.coef_slice(ring, zc, coef);
      // Scatter this coefficient slice into the pending z-adjoint slices.
      for (int dz = 0; dz < detail::kSsimWindow; ++dz) {
        const int z = zc + dz;
        if (z >= ws.nz) break;
        auto& slot = pending[static_cast<std::size_t>(z % detail::kSsimWindow)];
        const double wk = w[static_cast<std::size_t>(dz)];
        for (int c = 0; c < 3; ++c) {
          double* dst = slot[static_cast<std::size_t>(c)].data();
          const double* src = coef[static_cast<std::size_t>(c)].data();
          for (std::size_t i = 0; i < ws.slice_out; ++i) dst[i] += wk * src[i];
        }
      }
      // Slice zc has now received every coefficient slice that touches it.
      auto& done = pending[static_cast<std::size_t>(zc % detail::kSsimWindow)];
      ws.finalize_slice(done, zc, pred, target, inv_n, out.grad, adj_mid, adj_full);
      for (auto& ch : done) std::fill(ch.begin(), ch.end(), 0.0);
    }
    for (int z = ws.nzo; z < ws.nz; ++z) {
      auto& done = pending[static_cast<std::size_t>(z % detail::kSsimWindow)];
      ws.finalize_slice(done, z, pred, target, inv_n, out.grad, adj_mid, adj_full);
      for (auto& ch : done) std::fill(ch.begin(), ch.end(), 0.0);
    }
  } else {
    // Materialized reference: full xy-filtered moment volumes, then the same
    // per-slice z convolution and adjoint in the same order.
    std::array<std::vector<std::vector<double>>, 5> filtered;
    for (auto& f : filtered) {
      f.assign(static_cast<std::size_t>(ws.nz), std::vector<double>(ws.slice_out));
    }
    {
      std::array<std::vector<double>, 5> tmp;
      for (int zi = 0; zi < ws.nz; ++zi) {
        for (int m = 0; m < 5; ++m) {
          tmp[static_cast<std::size_t>(m)] =
              std::move(filtered[static_cast<std::size_t>(m)][static_cast<std::size_t>(zi)]);
          tmp[static_cast<std::size_t>(m)].resize(ws.slice_out);
        }
        ws.filter_slice(pred, target, zi, tmp, raw, mid);
        for (int m = 0; m < 5; ++m) {
          filtered[static_cast<std::size_t>(m)][static_cast<std::size_t>(zi)] =
              std::move(tmp[static_cast<std::size_t>(m)]);
        }
      }
    }
    std::vector<std::array<std::vector<double>, 3>> coefs(static_cast<std::size_t>(ws.nzo));
    for (int zc = 0; zc < ws.nzo; ++zc) {
      auto& coef = coefs[static_cast<std::size_t>(zc)];
      for (auto& c : coef) c.resize(ws.slice_out);
      std::array<double, 5> m{};
      double sum = 0.0;
      for (std::size_t i = 0; i < ws.slice_out; ++i) {
        for (int mi = 0; mi < 5; ++mi) {
          double acc = 0.0;
          for (int k = 0; k < detail::kSsimWindow; ++k) {
            acc += w[static_cast<std::size_t>(k)] *
                   filtered[static_cast<std::size_t>(mi)][static_cast<std::size_t>(zc + k)][i];
          }
          m[static_cast<std::size_t>(mi)] = acc;
        }
        const detail::SsimPoint pt = detail::ssim_point(m[0], m[1], m[2], m[3], m[4]);
        sum += pt.s;
        coef[0][i] = pt.ca;
        coef[1][i] = pt.cb;
        coef[2][i] = pt.cc;
      }
      ssim_sum += sum;
    }
    std::array<std::vector<double>, 3> pending;
    for (auto& p : pending) p.assign(ws.slice_out, 0.0);
    for (int z = 0; z < ws.nz; ++z) {
      for (auto& p : pending) std::fill(p.begin(), p.end(), 0.0);
      const int zc_lo = std::max(0, z - (detail::kSsimWindow - 1));
      const int zc_hi = std::min(ws.nzo - 1, z);
      for (int zc = zc_lo; zc <= zc_hi; ++zc) {
        const double wk = w[static_cast<std::size_t>(z - zc)];
        for (int c = 0; c < 3; ++c) {
          double* dst = pending[static_cast<std::size_t>(c)].data();
          const double* src = coefs[static_cast<std::size_t>(zc)][static_cast<std::size_t>(c)]
                                  .data();
          for (std::size_t i = 0; i < ws.slice_out; ++i) dst[i] += wk * src[i];
        }
      }
      ws.finalize_slice(pending, z, pred, target, inv_n, out.grad, adj_mid, adj_full);
    }
  }

  out.loss = 1.0 - ssim_sum * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// 3D total variation
// ---------------------------------------------------------------------------

struct Tv3dResult {
  double value = 0.0;
  Volume grad;
};

// Isotropic TV over forward differences: mean over interior voxels of
// sqrt(dx^2 + dy^2 + dz^2 + eps^2), eps = 1e-8. Differences are taken on the
// stored values (per voxel step, not per world unit).
inline Tv3dResult tv3d(const Volume& vol) {
  check(vol.dims[0] >= 2 && vol.dims[1] >= 2 && vol.dims[2] >= 2,
        "tv3d: dims must be at least 2 in every axis");
  constexpr double kEps = 1e-8;
  const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
  const int mx = nx - 1, my = ny - 1, mz = nz - 1;
  const std::int64_t n_int = static_cast<std::int64_t>(mx) * my * mz;
  const double inv_n = 1.0 / static_cast<double>(n_int);

  // First pass: magnitudes (stored as reciprocals for the gather below).
  std::vector<double> inv_mag(static_cast<std::size_t>(n_int));
  const auto interior_index = [&](int x, int y, int z) {
    return (static_cast<std::int64_t>(z) * my + y) * mx + x;
  };
  const double value = parallel_reduce_sum<double>(mz, [&](std::int64_t z_lo, std::int64_t z_hi) {
    double sum = 0.0;
    for (std::int64_t z = z_lo; z < z_hi; ++z) {
      for (int y = 0; y < my; ++y) {
        for (int x = 0; x < mx; ++x) {
          const double c = vol.at(x, y, static_cast<int>(z));
          const double dx = vol.at(x + 1, y, static_cast<int>(z)) - c;
          const double dy = vol.at(x, y + 1, static_cast<int>(z)) - c;
          const double dz = vol.at(x, y, static_cast<int>(z) + 1) - c;
          const double g = std::sqrt(dx * dx + dy * dy + dz * dz + kEps * kEps);
          sum += g;
          inv_mag[static_cast<std::size_t>(interior_index(x, y, static_cast<int>(z)))] = 1.0 / g;
        }
      }
    }
    return sum;
  }, 1);

  // Second pass: pure gather, each voxel collects the terms it appears in.
  Tv3dResult out;
  out.value = value * inv_n;
  out.grad = Volume::zeros(vol.dims, vol.spacing, vol.origin);
  parallel_for(0, nz, [&](std::int64_t zi) {
    const int z = static_cast<int>(zi);
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        double acc = 0.0;
        const double c = vol.at(x, y, z);
        if (x < mx && y < my && z < mz) {  // own term: -(dx + dy + dz) / g
          const double dx = vol.at(x + 1, y, z) - c;
          const double dy = vol.at(x, y + 1, z) - c;
          const double dz = vol.at(x, y, z + 1) - c;
          acc -= (dx + dy + dz) * inv_mag[static_cast<std::size_t>(interior_index(x, y, z))];
        }
        if (x > 0 && x - 1 < mx && y < my && z < mz) {  // dx of the left neighbor
          acc += (c - vol.at(x - 1, y, z)) *
                 inv_mag[static_cast<std::size_t>(interior_index(x - 1, y, z))];
        }
        if (y > 0 && x < mx && y - 1 < my && z < mz) {  // dy of the front neighbor
          acc += (c - vol.at(x, y - 1, z)) *
                 inv_mag[static_cast<std::size_t>(interior_index(x, y - 1, z))];
        }
        if (z > 0 && x < mx && y < my && z - 1 < mz) {  // dz of the lower neighbor
          acc += (c - vol.at(x, y, z - 1)) *
                 inv_mag[static_cast<std::size_t>(interior_index(x, y, z - 1))];
        }
        out.grad.at(x, y, z) = acc * inv_n;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Composite objectives
// ---------------------------------------------------------------------------

// Reconstruction loss: L1 + alpha_ssim * SSIM2D on the rendered vs measured
// projection, plus alpha_tv * TV3D on the sampled sub-volume. Gradients are
// routed to the image and the sub-volume separately.
struct ReconLoss {
  double total = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;  // SSIM loss component (1 - mean SSIM)
  double tv = 0.0;
  Image grad_image;
  Volume grad_subvolume;
};

inline ReconLoss total_loss_recon(const Image& rendered, const Image& measured,
                                  const Volume& subvolume, const LossWeights& weights) {
  weights.validate();
  ReconLoss out;
  L1ImageResult l1_part = l1(rendered, measured);
  out.l1 = l1_part.value;
  out.grad_image = std::move(l1_part.grad);
  if (weights.alpha_ssim > 0.0) {
    Ssim2dResult ssim_part = ssim2d(rendered, measured);
    out.ssim = ssim_part.loss;
    for (std::size_t i = 0; i < out.grad_image.values.size(); ++i) {
      out.grad_image.values[i] += weights.alpha_ssim * ssim_part.grad.values[i];
    }
  }
  if (weights.alpha_tv > 0.0) {
    Tv3dResult tv_part = tv3d(subvolume);
    out.tv = tv_part.value;
    out.grad_subvolume = std::move(tv_part.grad);
    for (double& g : out.grad_subvolume.values) g *= weights.alpha_tv;
  } else {
    out.grad_subvolume = Volume::zeros(subvolume.dims, subvolume.spacing, subvolume.origin);
  }
  out.total = out.l1 + weights.alpha_ssim * out.ssim + weights.alpha_tv * out.tv;
  return out;
}

// Volume-fitting loss: L1 + alpha_ssim * SSIM3D between the voxelized model
// and the target volume.
struct FitLoss {
  double total = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  Volume grad;
};

inline FitLoss total_loss_fit(const Volume& rendered, const Volume& target, double alpha_ssim,
                              SsimPath path = SsimPath::streaming) {
  check(std::isfinite(alpha_ssim) && alpha_ssim >= 0.0, "total_loss_fit: alpha_ssim invalid");
  FitLoss out;
  L1VolumeResult l1_part = l1(rendered, target);
  out.l1 = l1_part.value;
  out.grad = std::move(l1_part.grad);
  if (alpha_ssim > 0.0) {
    Ssim3dResult ssim_part = ssim3d(rendered, target, path);
    out.ssim = ssim_part.loss;
    for (std::size_t i = 0; i < out.grad.values.size(); ++i) {
      out.grad.values[i] += alpha_ssim * ssim_part.grad.values[i];
    }
  }
  out.total = out.l1 + alpha_ssim * out.ssim;
  return out;
}

}  // namespace gsct

#include "ttoreg/kernels.hpp"

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <vector>

namespace ttoreg::kernels {

namespace {

// Interpolation weights along one axis. `gate` is 1 when the coordinate
// was inside [0, n-1] and 0 when it was clamped (or not a number).
template <typename T>
struct AxisSample {
  int i0;
  int i1;
  T w0;
  T w1;
  T gate;
};

template <typename T>
inline AxisSample<T> axis_sample(T coord, int n) {
  if (n == 1) return {0, 0, T(1), T(0), T(0)};
  const T hi = T(n - 1);
  T gate = T(1);
  if (!(coord >= T(0))) {
    coord = T(0);
    gate = T(0);
  } else if (coord > hi) {
    coord = hi;
    gate = T(0);
  }
  int i0 = static_cast<int>(std::floor(coord));
  if (i0 > n - 2) i0 = n - 2;
  const T f = coord - T(i0);
  return {i0, i0 + 1, T(1) - f, f, gate};
}

struct Corners {
  std::size_t c000, c100, c010, c110, c001, c101, c011, c111;
};

template <typename T>
inline Corners corners(const Dims& d, const AxisSample<T>& ax, const AxisSample<T>& ay, const AxisSample<T>& az) {
  const std::size_t sx = 1, sy = static_cast<std::size_t>(d.nx), sz = sy * static_cast<std::size_t>(d.ny);
  const std::size_t x0 = ax.i0 * sx, x1 = ax.i1 * sx;
  const std::size_t y0 = ay.i0 * sy, y1 = ay.i1 * sy;
  const std::size_t z0 = az.i0 * sz, z1 = az.i1 * sz;
  return {x0 + y0 + z0, x1 + y0 + z0, x0 + y1 + z0, x1 + y1 + z0,
          x0 + y0 + z1, x1 + y0 + z1, x0 + y1 + z1, x1 + y1 + z1};
}

template <typename T>
inline T interpolate(const T* s, const Corners& k, const AxisSample<T>& ax, const AxisSample<T>& ay,
                     const AxisSample<T>& az) {
  // (1-f)*a + f*b keeps integer positions exact.
  const T v00 = ax.w0 * s[k.c000] + ax.w1 * s[k.c100];
  const T v10 = ax.w0 * s[k.c010] + ax.w1 * s[k.c110];
  const T v01 = ax.w0 * s[k.c001] + ax.w1 * s[k.c101];
  const T v11 = ax.w0 * s[k.c011] + ax.w1 * s[k.c111];
  const T v0 = ay.w0 * v00 + ay.w1 * v10;
  const T v1 = ay.w0 * v01 + ay.w1 * v11;
  return az.w0 * v0 + az.w1 * v1;
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

}  // namespace

template <typename T>
void warp_forward(const Tensor<T>& src, const Tensor<T>& disp, Tensor<T>& out) {
  const Dims& d = src.dims();
  assert(disp.dims() == d && disp.channels() == 3);
  if (!(out.dims() == d) || out.channels() != src.channels()) out = Tensor<T>(src.channels(), d);
  const T* ux = disp.channel(0).data();
  const T* uy = disp.channel(1).data();
  const T* uz = disp.channel(2).data();
  std::size_t p = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++p) {
        const auto ax = axis_sample<T>(T(x) + ux[p], d.nx);
        const auto ay = axis_sample<T>(T(y) + uy[p], d.ny);
        const auto az = axis_sample<T>(T(z) + uz[p], d.nz);
        const Corners k = corners(d, ax, ay, az);
        for (int c = 0; c < src.channels(); ++c) {
          out.channel(c)[p] = interpolate(src.channel(c).data(), k, ax, ay, az);
        }
      }
    }
  }
}

template <typename T>
void warp_backward(const Tensor<T>& src, const Tensor<T>& disp, const Tensor<T>& grad_out, Tensor<T>* grad_src,
                   Tensor<T>* grad_disp) {
  const Dims& d = src.dims();
  const T* ux = disp.channel(0).data();
  const T* uy = disp.channel(1).data();
  const T* uz = disp.channel(2).data();
  std::size_t p = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++p) {
        const auto ax = axis_sample<T>(T(x) + ux[p], d.nx);
        const auto ay = axis_sample<T>(T(y) + uy[p], d.ny);
        const auto az = axis_sample<T>(T(z) + uz[p], d.nz);
        const Corners k = corners(d, ax, ay, az);
        T gx = 0, gy = 0, gz = 0;
        for (int c = 0; c < src.channels(); ++c) {
          const T g = grad_out.channel(c)[p];
          if (g == T(0)) continue;
          if (grad_src != nullptr) {
            T* gs = grad_src->channel(c).data();
            gs[k.c000] += g * ax.w0 * ay.w0 * az.w0;
            gs[k.c100] += g * ax.w1 * ay.w0 * az.w0;
            gs[k.c010] += g * ax.w0 * ay.w1 * az.w0;
            gs[k.c110] += g * ax.w1 * ay.w1 * az.w0;
            gs[k.c001] += g * ax.w0 * ay.w0 * az.w1;
            gs[k.c101] += g * ax.w1 * ay.w0 * az.w1;
            gs[k.c011] += g * ax.w0 * ay.w1 * az.w1;
            gs[k.c111] += g * ax.w1 * ay.w1 * az.w1;
          }
          if (grad_disp != nullptr) {
            const T* s = src.channel(c).data();
            const T s000 = s[k.c000], s100 = s[k.c100], s010 = s[k.c010], s110 = s[k.c110];
            const T s001 = s[k.c001], s101 = s[k.c101], s011 = s[k.c011], s111 = s[k.c111];
            const T dx = az.w0 * (ay.w0 * (s100 - s000) + ay.w1 * (s110 - s010)) +
                         az.w1 * (ay.w0 * (s101 - s001) + ay.w1 * (s111 - s011));
            const T dy = az.w0 * (ax.w0 * (s010 - s000) + ax.w1 * (s110 - s100)) +
                         az.w1 * (ax.w0 * (s011 - s001) + ax.w1 * (s111 - s101));
            const T dz = ay.w0 * (ax.w0 * (s001 - s000) + ax.w1 * (s101 - s100)) +
                         ay.w1 * (ax.w0 * (s011 - s010) + ax.w1 * (s111 - s110));
            gx += g * dx;
            gy += g * dy;
            gz += g * dz;
          }
        }
        if (grad_disp != nullptr) {
          grad_disp->channel(0)[p] += ax.gate * gx;
          grad_disp->channel(1)[p] += ay.gate * gy;
          grad_disp->channel(2)[p] += az.gate * gz;
        }
      }
    }
  }
}

template <typename T>
void compose_forward(const Tensor<T>& u1, const Tensor<T>& u2, Tensor<T>& out) {
  Tensor<T> sampled;
  warp_forward(u1, u2, sampled);
  Tensor<T> result(3, u2.dims());
  for (std::size_t i = 0; i < result.size(); ++i) result.data()[i] = u2.data()[i] + sampled.data()[i];
  out = std::move(result);
}

template <typename T>
void compose_backward(const Tensor<T>& u1, const Tensor<T>& u2, const Tensor<T>& grad_out, Tensor<T>* grad_u1,
                      Tensor<T>* grad_u2) {
  if (grad_u2 != nullptr) {
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_u2->data()[i] += grad_out.data()[i];
  }
  warp_backward(u1, u2, grad_out, grad_u1, grad_u2);
}

// -- regularizer --------------------------------------------------------------

namespace {

// Number of forward differences along `axis`.
inline std::size_t difference_count(const Dims& d, int axis) {
  if (d[axis] < 2) return 0;
  return d.voxels() / static_cast<std::size_t>(d[axis]) * static_cast<std::size_t>(d[axis] - 1);
}

inline std::size_t axis_stride(const Dims& d, int axis) {
  if (axis == 0) return 1;
  if (axis == 1) return static_cast<std::size_t>(d.nx);
  return static_cast<std::size_t>(d.nx) * static_cast<std::size_t>(d.ny);
}

// Calls fn(p, q) for every forward-difference pair q = p + e_axis.
template <typename Fn>
void for_each_difference(const Dims& d, int axis, Fn&& fn) {
  const std::size_t step = axis_stride(d, axis);
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const int coord = axis == 0 ? x : (axis == 1 ? y : z);
        if (coord + 1 >= d[axis]) continue;
        const std::size_t p = d.index(x, y, z);
        fn(p, p + step);
      }
    }
  }
}

}  // namespace

template <typename T>
double smoothness_forward(const Tensor<T>& u) {
  const Dims& d = u.dims();
  double total = 0.0;
  for (int c = 0; c < u.channels(); ++c) {
    const T* v = u.channel(c).data();
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t n = difference_count(d, axis);
      if (n == 0) continue;
      double sum = 0.0;
      for_each_difference(d, axis, [&](std::size_t p, std::size_t q) {
        const double diff = static_cast<double>(v[q]) - static_cast<double>(v[p]);
        sum += diff * diff;
      });
      total += sum / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(u.channels());
}

template <typename T>
void smoothness_backward(const Tensor<T>& u, double scale, Tensor<T>& grad_u) {
  const Dims& d = u.dims();
  for (int c = 0; c < u.channels(); ++c) {
    const T* v = u.channel(c).data();
    T* g = grad_u.channel(c).data();
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t n = difference_count(d, axis);
      if (n == 0) continue;
      const double k = scale * 2.0 / (static_cast<double>(n) * u.channels());
      for_each_difference(d, axis, [&](std::size_t p, std::size_t q) {
        const T delta = static_cast<T>(k * (static_cast<double>(v[q]) - static_cast<double>(v[p])));
        g[q] += delta;
        g[p] -= delta;
      });
    }
  }
}

// -- similarity ---------------------------------------------------------------

template <typename T>
double mse_forward(std::span<const T> a, std::span<const T> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += diff * diff;
  }
  return sum / static_cast<double>(a.size());
}

template <typename T>
void mse_backward(std::span<const T> a, std::span<const T> b, double scale, std::span<T> grad_b) {
  const double k = 2.0 * scale / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    grad_b[i] += static_cast<T>(k * (static_cast<double>(b[i]) - static_cast<double>(a[i])));
  }
}

namespace {

constexpr double kVarianceFloor = 1e-6;

// Clamped box sum of half-width r along one axis.
void box_axis(const std::vector<double>& in, const Dims& d, int axis, int r, std::vector<double>& out) {
  out.assign(in.size(), 0.0);
  const std::size_t step = axis_stride(d, axis);
  const int n = d[axis];
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const int coord = axis == 0 ? x : (axis == 1 ? y : z);
        const std::size_t p = d.index(x, y, z);
        const std::size_t line = p - static_cast<std::size_t>(coord) * step;
        double sum = 0.0;
        for (int o = -r; o <= r; ++o) {
          const int q = std::clamp(coord + o, 0, n - 1);
          sum += in[line + static_cast<std::size_t>(q) * step];
        }
        out[p] = sum;
      }
    }
  }
}

// Adjoint of box_axis.
void box_axis_adjoint(const std::vector<double>& in, const Dims& d, int axis, int r, std::vector<double>& out) {
  out.assign(in.size(), 0.0);
  const std::size_t step = axis_stride(d, axis);
  const int n = d[axis];
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const int coord = axis == 0 ? x : (axis == 1 ? y : z);
        const std::size_t p = d.index(x, y, z);
        const std::size_t line = p - static_cast<std::size_t>(coord) * step;
        for (int o = -r; o <= r; ++o) {
          const int q = std::clamp(coord + o, 0, n - 1);
          out[line + static_cast<std::size_t>(q) * step] += in[p];
        }
      }
    }
  }
}

std::vector<double> box3(std::vector<double> v, const Dims& d, int r) {
  std::vector<double> tmp;
  for (int axis = 0; axis < 3; ++axis) {
    box_axis(v, d, axis, r, tmp);
    v.swap(tmp);
  }
  return v;
}

std::vector<double> box3_adjoint(std::vector<double> v, const Dims& d, int r) {
  std::vector<double> tmp;
  for (int axis = 2; axis >= 0; --axis) {
    box_axis_adjoint(v, d, axis, r, tmp);
    v.swap(tmp);
  }
  return v;
}

struct LocalStats {
  std::vector<double> mean_a, mean_b, var_a, var_b, cross;  // var/cross are window sums
  double n = 0;
};

template <typename T>
LocalStats local_stats(const Tensor<T>& a, const Tensor<T>& b, int window) {
  const Dims& d = a.dims();
  const int r = window / 2;
  const std::size_t size = a.voxels();
  std::vector<double> va(size), vb(size), aa(size), bb(size), ab(size);
  for (std::size_t i = 0; i < size; ++i) {
    va[i] = a.data()[i];
    vb[i] = b.data()[i];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  LocalStats s;
  s.n = static_cast<double>(window) * window * window;
  auto sa = box3(std::move(va), d, r);
  auto sb = box3(std::move(vb), d, r);
  auto saa = box3(std::move(aa), d, r);
  auto sbb = box3(std::move(bb), d, r);
  auto sab = box3(std::move(ab), d, r);
  s.mean_a.resize(size);
  s.mean_b.resize(size);
  s.var_a.resize(size);
  s.var_b.resize(size);
  s.cross.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    s.mean_a[i] = sa[i] / s.n;
    s.mean_b[i] = sb[i] / s.n;
    s.var_a[i] = saa[i] - sa[i] * s.mean_a[i];
    s.var_b[i] = sbb[i] - sb[i] * s.mean_b[i];
    s.cross[i] = sab[i] - sa[i] * s.mean_b[i];
  }
  return s;
}

inline bool degenerate(const LocalStats& s, std::size_t i) {
  return s.var_a[i] / s.n < kVarianceFloor || s.var_b[i] / s.n < kVarianceFloor;
}

}  // namespace

template <typename T>
double ncc_forward(const Tensor<T>& a, const Tensor<T>& b, int window) {
  const LocalStats s = local_stats(a, b, window);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.voxels(); ++i) {
    if (degenerate(s, i)) continue;
    sum += s.cross[i] / std::sqrt(s.var_a[i] * s.var_b[i]);
  }
  return -sum / static_cast<double>(a.voxels());
}

template <typename T>
void ncc_backward(const Tensor<T>& a, const Tensor<T>& b, int window, double scale, Tensor<T>& grad_b) {
  const Dims& d = a.dims();
  const int r = window / 2;
  const std::size_t size = a.voxels();
  const LocalStats s = local_stats(a, b, window);
  std::vector<double> ka(size, 0.0), kb(size, 0.0), kc(size, 0.0);
  for (std::size_t i = 0; i < size; ++i) {
    if (degenerate(s, i)) continue;
    const double inv = 1.0 / std::sqrt(s.var_a[i] * s.var_b[i]);
    const double cc = s.cross[i] * inv;
    ka[i] = inv;
    kb[i] = cc / s.var_b[i];
    kc[i] = -s.mean_a[i] * ka[i] + s.mean_b[i] * kb[i];
  }
  const auto sum_a = box3_adjoint(std::move(ka), d, r);
  const auto sum_b = box3_adjoint(std::move(kb), d, r);
  const auto sum_c = box3_adjoint(std::move(kc), d, r);
  const double k = -scale / static_cast<double>(size);
  for (std::size_t q = 0; q < size; ++q) {
    const double dq = static_cast<double>(a.data()[q]) * sum_a[q] - static_cast<double>(b.data()[q]) * sum_b[q] +
                      sum_c[q];
    grad_b.data()[q] += static_cast<T>(k * dq);
  }
}

// -- convolution --------------------------------------------------------------

namespace {

inline Dims strided_dims(const Dims& d, int stride) {
  return {(d.nx + stride - 1) / stride, (d.ny + stride - 1) / stride, (d.nz + stride - 1) / stride};
}

// Valid output range [lo, hi) along one axis for kernel tap k, i.e. the
// outputs o with 0 <= o * stride + k - 1 < n.
inline void tap_range(int k, int stride, int n, int n_out, int& lo, int& hi) {
  lo = 0;
  while (lo < n_out && lo * stride + k - 1 < 0) ++lo;
  hi = n_out;
  while (hi > lo && (hi - 1) * stride + k - 1 >= n) --hi;
}

// Columns for output planes [z0, z1): shape (in_channels * 27) x
// (nx * ny * (z1 - z0)), row-major.
template <typename T>
void im2col(const Tensor<T>& in, int stride, const Dims& od, int z0, int z1, T* col) {
  const Dims& id = in.dims();
  const std::size_t plane = static_cast<std::size_t>(od.nx) * od.ny;
  const std::size_t n = plane * static_cast<std::size_t>(z1 - z0);
  std::size_t row = 0;
  for (int ci = 0; ci < in.channels(); ++ci) {
    const T* src = in.channel(ci).data();
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, ++row) {
          int xlo, xhi;
          tap_range(kx, stride, id.nx, od.nx, xlo, xhi);
          T* dst = col + row * n;
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz * stride + kz - 1;
            for (int oy = 0; oy < od.ny; ++oy) {
              const int iy = oy * stride + ky - 1;
              T* line = dst + (oz - z0) * plane + static_cast<std::size_t>(oy) * od.nx;
              if (iz < 0 || iz >= id.nz || iy < 0 || iy >= id.ny) {
                std::fill(line, line + od.nx, T(0));
                continue;
              }
              const T* sline = src + id.index(0, iy, iz) + (kx - 1);
              std::fill(line, line + xlo, T(0));
              if (stride == 1) {
                std::copy(sline + xlo, sline + xhi, line + xlo);
              } else {
                for (int ox = xlo; ox < xhi; ++ox) line[ox] = sline[ox * stride];
              }
              std::fill(line + xhi, line + od.nx, T(0));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int stride, const Dims& od, int z0, int z1, Tensor<T>& grad_in) {
  const Dims& id = grad_in.dims();
  const std::size_t plane = static_cast<std::size_t>(od.nx) * od.ny;
  const std::size_t n = plane * static_cast<std::size_t>(z1 - z0);
  std::size_t row = 0;
  for (int ci = 0; ci < grad_in.channels(); ++ci) {
    T* dst = grad_in.channel(ci).data();
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, ++row) {
          int xlo, xhi;
          tap_range(kx, stride, id.nx, od.nx, xlo, xhi);
          const T* src = col + row * n;
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz * stride + kz - 1;
            if (iz < 0 || iz >= id.nz) continue;
            for (int oy = 0; oy < od.ny; ++oy) {
              const int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= id.ny) continue;
              const T* line = src + (oz - z0) * plane + static_cast<std::size_t>(oy) * od.nx;
              T* dline = dst + id.index(0, iy, iz) + (kx - 1);
              if (stride == 1) {
                for (int ox = xlo; ox < xhi; ++ox) dline[ox] += line[ox];
              } else {
                for (int ox = xlo; ox < xhi; ++ox) dline[ox * stride] += line[ox];
              }
            }
          }
        }
      }
    }
  }
}

// Output planes per chunk, sized so one column block stays cache-resident.
inline int planes_per_chunk(const Dims& od, std::size_t rows) {
  constexpr std::size_t kTargetBytes = std::size_t{1} << 20;
  const std::size_t per_plane = rows * static_cast<std::size_t>(od.nx) * od.ny * sizeof(float);
  return static_cast<int>(std::clamp<std::size_t>(kTargetBytes / std::max<std::size_t>(per_plane, 1), 1,
                                                  static_cast<std::size_t>(od.nz)));
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& in, std::span<const T> weights, std::span<const T> bias, int out_channels,
                    int stride, Tensor<T>& out) {
  const Dims od = strided_dims(in.dims(), stride);
  const Eigen::Index k = static_cast<Eigen::Index>(in.channels()) * 27;
  const Eigen::Index n = static_cast<Eigen::Index>(od.voxels());
  const Eigen::Index plane = static_cast<Eigen::Index>(od.nx) * od.ny;
  assert(weights.size() == static_cast<std::size_t>(out_channels * k));
  if (!(out.dims() == od) || out.channels() != out_channels) out = Tensor<T>(out_channels, od);
  Eigen::Map<const RowMatrix<T>> w(weights.data(), out_channels, k);
  Eigen::Map<RowMatrix<T>> o(out.data(), out_channels, n);
  const int step = planes_per_chunk(od, static_cast<std::size_t>(k));
  auto& col = scratch<T>(0);
  for (int z0 = 0; z0 < od.nz; z0 += step) {
    const int z1 = std::min(od.nz, z0 + step);
    const Eigen::Index cols = plane * (z1 - z0);
    col.resize(static_cast<std::size_t>(k * cols));
    im2col(in, stride, od, z0, z1, col.data());
    Eigen::Map<const RowMatrix<T>> c(col.data(), k, cols);
    o.middleCols(plane * z0, cols).noalias() = w * c;
  }
  for (int oc = 0; oc < out_channels; ++oc) o.row(oc).array() += bias[oc];
}

template <typename T>
void conv3d_backward(const Tensor<T>& in, std::span<const T> weights, int stride, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weights, std::span<T> grad_bias) {
  const Dims od = grad_out.dims();
  const int out_channels = grad_out.channels();
  const Eigen::Index k = static_cast<Eigen::Index>(in.channels()) * 27;
  const Eigen::Index n = static_cast<Eigen::Index>(od.voxels());
  const Eigen::Index plane = static_cast<Eigen::Index>(od.nx) * od.ny;
  Eigen::Map<const RowMatrix<T>> go(grad_out.data(), out_channels, n);
  Eigen::Map<const RowMatrix<T>> w(weights.data(), out_channels, k);
  Eigen::Map<RowMatrix<T>> gw(grad_weights.data(), out_channels, k);
  // Plain loop: Eigen's vectorized sum peels according to the runtime
  // alignment of each row, which would make the rounding depend on where the
  // allocator placed the buffer.
  for (int oc = 0; oc < out_channels; ++oc) {
    const T* row = grad_out.data() + static_cast<std::size_t>(oc) * static_cast<std::size_t>(n);
    T sum = T(0);
    for (Eigen::Index i = 0; i < n; ++i) sum += row[i];
    grad_bias[oc] += sum;
  }
  const int step = planes_per_chunk(od, static_cast<std::size_t>(k));
  auto& col = scratch<T>(0);
  auto& dcol = scratch<T>(1);
  for (int z0 = 0; z0 < od.nz; z0 += step) {
    const int z1 = std::min(od.nz, z0 + step);
    const Eigen::Index cols = plane * (z1 - z0);
    col.resize(static_cast<std::size_t>(k * cols));
    im2col(in, stride, od, z0, z1, col.data());
    Eigen::Map<const RowMatrix<T>> c(col.data(), k, cols);
    const auto g = go.middleCols(plane * z0, cols);
    gw.noalias() += g * c.transpose();
    if (grad_in != nullptr) {
      dcol.resize(static_cast<std::size_t>(k * cols));
      Eigen::Map<RowMatrix<T>> dc(dcol.data(), k, cols);
      dc.noalias() = w.transpose() * g;
      col2im(dcol.data(), stride, od, z0, z1, *grad_in);
    }
  }
}

template <typename T>
void leaky_relu_forward(Tensor<T>& x, T slope) {
  for (T& v : x.values()) v = v > T(0) ? v : slope * v;
}

template <typename T>
void leaky_relu_backward(const Tensor<T>& y, T slope, Tensor<T>& grad) {
  const T* yv = y.data();
  T* g = grad.data();
  for (std::size_t i = 0; i < grad.size(); ++i) g[i] = yv[i] > T(0) ? g[i] : slope * g[i];
}

// -- upsampling ---------------------------------------------------------------

namespace {

// Source sample for output index o of a x2 upsampling over n inputs.
template <typename T>
inline void upsample_tap(int o, int n, int& i0, int& i1, T& w0, T& w1) {
  // Half-voxel alignment: s = o / 2 - 0.25.
  const int base = (o % 2 == 0) ? o / 2 - 1 : o / 2;
  const T f = (o % 2 == 0) ? T(0.75) : T(0.25);
  i0 = std::clamp(base, 0, n - 1);
  i1 = std::clamp(base + 1, 0, n - 1);
  w0 = T(1) - f;
  w1 = f;
}

template <typename T>
Tensor<T> upsample_axis(const Tensor<T>& in, int axis) {
  const Dims& id = in.dims();
  Dims od = id;
  if (axis == 0) od.nx *= 2;
  if (axis == 1) od.ny *= 2;
  if (axis == 2) od.nz *= 2;
  Tensor<T> out(in.channels(), od);
  for (int c = 0; c < in.channels(); ++c) {
    const T* s = in.channel(c).data();
    T* t = out.channel(c).data();
    for (int z = 0; z < od.nz; ++z) {
      for (int y = 0; y < od.ny; ++y) {
        for (int x = 0; x < od.nx; ++x) {
          const int o = axis == 0 ? x : (axis == 1 ? y : z);
          int i0, i1;
          T w0, w1;
          upsample_tap<T>(o, id[axis], i0, i1, w0, w1);
          int a[3] = {x, y, z};
          a[axis] = i0;
          const T v0 = s[id.index(a[0], a[1], a[2])];
          a[axis] = i1;
          const T v1 = s[id.index(a[0], a[1], a[2])];
          t[od.index(x, y, z)] = w0 * v0 + w1 * v1;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_axis_adjoint(const Tensor<T>& grad_out, int axis) {
  const Dims& od = grad_out.dims();
  Dims id = od;
  if (axis == 0) id.nx /= 2;
  if (axis == 1) id.ny /= 2;
  if (axis == 2) id.nz /= 2;
  Tensor<T> grad_in(grad_out.channels(), id);
  for (int c = 0; c < grad_out.channels(); ++c) {
    const T* g = grad_out.channel(c).data();
    T* t = grad_in.channel(c).data();
    for (int z = 0; z < od.nz; ++z) {
      for (int y = 0; y < od.ny; ++y) {
        for (int x = 0; x < od.nx; ++x) {
          const int o = axis == 0 ? x : (axis == 1 ? y : z);
          int i0, i1;
          T w0, w1;
          upsample_tap<T>(o, id[axis], i0, i1, w0, w1);
          const T gv = g[od.index(x, y, z)];
          int a[3] = {x, y, z};
          a[axis] = i0;
          t[id.index(a[0], a[1], a[2])] += w0 * gv;
          a[axis] = i1;
          t[id.index(a[0], a[1], a[2])] += w1 * gv;
        }
      }
    }
  }
  return grad_in;
}

}  // namespace

template <typename T>
void upsample2_forward(const Tensor<T>& in, Tensor<T>& out) {
  out = upsample_axis(upsample_axis(upsample_axis(in, 0), 1), 2);
}

template <typename T>
void upsample2_backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  const Tensor<T> g = upsample_axis_adjoint(upsample_axis_adjoint(upsample_axis_adjoint(grad_out, 2), 1), 0);
  for (std::size_t i = 0; i < g.size(); ++i) grad_in.data()[i] += g.data()[i];
}

#define TTOREG_INSTANTIATE(T)                                                                                    \
  template void warp_forward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                \
  template void warp_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*); \
  template void compose_forward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                             \
  template void compose_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,           \
                                    Tensor<T>*);                                                                 \
  template double smoothness_forward<T>(const Tensor<T>&);                                                       \
  template void smoothness_backward<T>(const Tensor<T>&, double, Tensor<T>&);                                    \
  template double mse_forward<T>(std::span<const T>, std::span<const T>);                                        \
  template void mse_backward<T>(std::span<const T>, std::span<const T>, double, std::span<T>);                   \
  template double ncc_forward<T>(const Tensor<T>&, const Tensor<T>&, int);                                       \
  template void ncc_backward<T>(const Tensor<T>&, const Tensor<T>&, int, double, Tensor<T>&);                    \
  template void conv3d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, int,            \
                                  Tensor<T>&);                                                                   \
  template void conv3d_backward<T>(const Tensor<T>&, std::span<const T>, int, const Tensor<T>&, Tensor<T>*,      \
                                   std::span<T>, std::span<T>);                                                  \
  template void leaky_relu_forward<T>(Tensor<T>&, T);                                                            \
  template void leaky_relu_backward<T>(const Tensor<T>&, T, Tensor<T>&);                                         \
  template void upsample2_forward<T>(const Tensor<T>&, Tensor<T>&);                                              \
  template void upsample2_backward<T>(const Tensor<T>&, Tensor<T>&);

TTOREG_INSTANTIATE(float)
TTOREG_INSTANTIATE(double)

#undef TTOREG_INSTANTIATE

}  // namespace ttoreg::kernels

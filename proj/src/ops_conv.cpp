#include <algorithm>
#include <cstddef>

#include "conv_kernels.hpp"
#include "voxcast/ops.hpp"

namespace voxcast::ops {

namespace {

using Index = std::ptrdiff_t;

struct Volume {
  Index n, c, x, y, z;
};

Volume volume_of(const Shape& s, const char* what) {
  if (s.size() != 5) fail(ErrorKind::ShapeMismatch, std::string(what) + ": expected [N,C,X,Y,Z], got " + shape_string(s));
  return {Index(s[0]), Index(s[1]), Index(s[2]), Index(s[3]), Index(s[4])};
}

// Range [lo, hi) of output positions o with 0 <= o*s + k - p < in.
struct Range {
  Index lo, hi;
};

Range valid_outputs(Index in, Index out, Index k, Index s, Index p) {
  // o*s >= p - k  and  o*s <= in - 1 + p - k
  Index lo = 0;
  if (p - k > 0) lo = (p - k + s - 1) / s;
  const Index top = in - 1 + p - k;
  if (top < 0) return {0, 0};
  const Index hi = std::min(out, top / s + 1);
  return {lo, std::max(lo, hi)};
}

// y[n,co,o] += sum_{ci,k} w[co,ci,k] x[n,ci,o*s+k-p]; y already holds bias.
// Output channels are processed in blocks of CB so each input row load feeds
// CB accumulators.
template <int CB, typename T>
void correlate_block(const T* x, Volume in, const T* w, Index k, Index s, Index p, T* y, Volume out, Index n, Index co0,
                     const std::vector<Range>& zr) {
  const Index k3 = k * k * k;
  for (Index ox = 0; ox < out.x; ++ox)
    for (Index oy = 0; oy < out.y; ++oy) {
      T* yrow[CB];
      for (int b = 0; b < CB; ++b) yrow[b] = y + (((n * out.c + co0 + b) * out.x + ox) * out.y + oy) * out.z;
      for (Index ci = 0; ci < in.c; ++ci) {
        for (Index kx = 0; kx < k; ++kx) {
          const Index ix = ox * s + kx - p;
          if (ix < 0 || ix >= in.x) continue;
          for (Index ky = 0; ky < k; ++ky) {
            const Index iy = oy * s + ky - p;
            if (iy < 0 || iy >= in.y) continue;
            const T* xrow = x + (((n * in.c + ci) * in.x + ix) * in.y + iy) * in.z;
            const Index wofs = ci * k3 + (kx * k + ky) * k;
            for (Index kz = 0; kz < k; ++kz) {
              T wv[CB];
              for (int b = 0; b < CB; ++b) wv[b] = w[(co0 + b) * in.c * k3 + wofs + kz];
              const Index off = kz - p;
              const auto [lo, hi] = zr[kz];
              if (s == 1) {
                const T* src = xrow + off;
                if constexpr (CB == 4) {
                  T* y0 = yrow[0];
                  T* y1 = yrow[1];
                  T* y2 = yrow[2];
                  T* y3 = yrow[3];
#pragma omp simd
                  for (Index oz = lo; oz < hi; ++oz) {
                    const T xv = src[oz];
                    y0[oz] += wv[0] * xv;
                    y1[oz] += wv[1] * xv;
                    y2[oz] += wv[2] * xv;
                    y3[oz] += wv[3] * xv;
                  }
                } else {
                  for (int b = 0; b < CB; ++b) {
                    T* yr = yrow[b];
                    const T wb = wv[b];
#pragma omp simd
                    for (Index oz = lo; oz < hi; ++oz) yr[oz] += wb * src[oz];
                  }
                }
              } else {
                for (int b = 0; b < CB; ++b)
                  for (Index oz = lo; oz < hi; ++oz) yrow[b][oz] += wv[b] * xrow[oz * s + off];
              }
            }
          }
        }
      }
    }
}

template <typename T>
void correlate(const T* x, Volume in, const T* w, Index k, Index s, Index p, T* y, Volume out) {
  std::vector<Range> zr(static_cast<std::size_t>(k));
  for (Index kz = 0; kz < k; ++kz) zr[kz] = valid_outputs(in.z, out.z, kz, s, p);
  for (Index n = 0; n < out.n; ++n) {
    Index co = 0;
    for (; co + 4 <= out.c; co += 4) correlate_block<4>(x, in, w, k, s, p, y, out, n, co, zr);
    for (; co < out.c; ++co) correlate_block<1>(x, in, w, k, s, p, y, out, n, co, zr);
  }
}

// gx[n,ci,i] = sum_{co,k: i = o*s+k-p} w[co,ci,k] gy[n,co,o]; overwrites gx.
template <typename T>
void correlate_adjoint(const T* gy, Volume out, const T* w, Index k, Index s, Index p, T* gx, Volume in) {
  const Index k3 = k * k * k;
  std::fill(gx, gx + in.n * in.c * in.x * in.y * in.z, T(0));
  if (s == 1) {
    // Gather form: o = i + p - k, four input channels per pass.
    for (Index n = 0; n < in.n; ++n)
      for (Index ci0 = 0; ci0 < in.c; ci0 += 4) {
        const Index cb = std::min<Index>(4, in.c - ci0);
        for (Index ix = 0; ix < in.x; ++ix)
          for (Index iy = 0; iy < in.y; ++iy) {
            T* gxrow[4];
            for (Index b = 0; b < cb; ++b) gxrow[b] = gx + (((n * in.c + ci0 + b) * in.x + ix) * in.y + iy) * in.z;
            for (Index co = 0; co < out.c; ++co) {
              for (Index kx = 0; kx < k; ++kx) {
                const Index ox = ix + p - kx;
                if (ox < 0 || ox >= out.x) continue;
                for (Index ky = 0; ky < k; ++ky) {
                  const Index oy = iy + p - ky;
                  if (oy < 0 || oy >= out.y) continue;
                  const T* gyrow = gy + (((n * out.c + co) * out.x + ox) * out.y + oy) * out.z;
                  const Index wofs = (co * in.c + ci0) * k3 + (kx * k + ky) * k;
                  for (Index kz = 0; kz < k; ++kz) {
                    const Index off = p - kz;
                    const Index lo = std::max<Index>(0, -off);
                    const Index hi = std::min<Index>(in.z, out.z - off);
                    const T* src = gyrow + off;
                    if (cb == 4) {
                      const T w0 = w[wofs + kz], w1 = w[wofs + k3 + kz], w2 = w[wofs + 2 * k3 + kz], w3 = w[wofs + 3 * k3 + kz];
                      T* g0 = gxrow[0];
                      T* g1 = gxrow[1];
                      T* g2 = gxrow[2];
                      T* g3 = gxrow[3];
#pragma omp simd
                      for (Index iz = lo; iz < hi; ++iz) {
                        const T v = src[iz];
                        g0[iz] += w0 * v;
                        g1[iz] += w1 * v;
                        g2[iz] += w2 * v;
                        g3[iz] += w3 * v;
                      }
                    } else {
                      for (Index b = 0; b < cb; ++b) {
                        const T wv = w[wofs + b * k3 + kz];
                        T* g = gxrow[b];
#pragma omp simd
                        for (Index iz = lo; iz < hi; ++iz) g[iz] += wv * src[iz];
                      }
                    }
                  }
                }
              }
            }
          }
      }
    return;
  }

  std::vector<Range> zr(static_cast<std::size_t>(k));
  for (Index kz = 0; kz < k; ++kz) zr[kz] = valid_outputs(in.z, out.z, kz, s, p);
  for (Index n = 0; n < out.n; ++n)
    for (Index co = 0; co < out.c; ++co)
      for (Index ox = 0; ox < out.x; ++ox)
        for (Index oy = 0; oy < out.y; ++oy) {
          const T* gyrow = gy + (((n * out.c + co) * out.x + ox) * out.y + oy) * out.z;
          for (Index ci = 0; ci < in.c; ++ci) {
            const T* wc = w + (co * in.c + ci) * k3;
            for (Index kx = 0; kx < k; ++kx) {
              const Index ix = ox * s + kx - p;
              if (ix < 0 || ix >= in.x) continue;
              for (Index ky = 0; ky < k; ++ky) {
                const Index iy = oy * s + ky - p;
                if (iy < 0 || iy >= in.y) continue;
                T* gxrow = gx + (((n * in.c + ci) * in.x + ix) * in.y + iy) * in.z;
                const T* wk = wc + (kx * k + ky) * k;
                for (Index kz = 0; kz < k; ++kz) {
                  const T wv = wk[kz];
                  const Index off = kz - p;
                  const auto [lo, hi] = zr[kz];
                  for (Index oz = lo; oz < hi; ++oz) gxrow[oz * s + off] += wv * gyrow[oz];
                }
              }
            }
          }
        }
}

// gw[co,ci,k] += sum_{n,o} gy[n,co,o] x[n,ci,o*s+k-p]. Partial sums are
// kept per z lane and reduced once per (co, ci, kx, ky).
template <typename T>
void correlate_weight_grad(const T* x, Volume in, const T* gy, Volume out, Index k, Index s, Index p, T* gw) {
  const Index k3 = k * k * k;
  std::vector<Range> zr(static_cast<std::size_t>(k));
  for (Index kz = 0; kz < k; ++kz) zr[kz] = valid_outputs(in.z, out.z, kz, s, p);
  std::vector<Range> xr(static_cast<std::size_t>(k)), yr(static_cast<std::size_t>(k));
  for (Index kk = 0; kk < k; ++kk) {
    xr[kk] = valid_outputs(in.x, out.x, kk, s, p);
    yr[kk] = valid_outputs(in.y, out.y, kk, s, p);
  }
  std::vector<T> lanes(static_cast<std::size_t>(k * out.z));

  for (Index n = 0; n < out.n; ++n)
    for (Index co = 0; co < out.c; ++co)
      for (Index ci = 0; ci < in.c; ++ci) {
        T* gwc = gw + (co * in.c + ci) * k3;
        for (Index kx = 0; kx < k; ++kx)
          for (Index ky = 0; ky < k; ++ky) {
            std::fill(lanes.begin(), lanes.end(), T(0));
            for (Index ox = xr[kx].lo; ox < xr[kx].hi; ++ox) {
              const Index ix = ox * s + kx - p;
              for (Index oy = yr[ky].lo; oy < yr[ky].hi; ++oy) {
                const Index iy = oy * s + ky - p;
                const T* gyrow = gy + (((n * out.c + co) * out.x + ox) * out.y + oy) * out.z;
                const T* xrow = x + (((n * in.c + ci) * in.x + ix) * in.y + iy) * in.z;
                for (Index kz = 0; kz < k; ++kz) {
                  const Index off = kz - p;
                  const auto [lo, hi] = zr[kz];
                  T* lane = lanes.data() + kz * out.z;
                  if (s == 1) {
                    const T* src = xrow + off;
#pragma omp simd
                    for (Index oz = lo; oz < hi; ++oz) lane[oz] += gyrow[oz] * src[oz];
                  } else {
                    for (Index oz = lo; oz < hi; ++oz) lane[oz] += gyrow[oz] * xrow[oz * s + off];
                  }
                }
              }
            }
            T* gwk = gwc + (kx * k + ky) * k;
            for (Index kz = 0; kz < k; ++kz) {
              const T* lane = lanes.data() + kz * out.z;
              T acc = 0;
              for (Index oz = 0; oz < out.z; ++oz) acc += lane[oz];
              gwk[kz] += acc;
            }
          }
      }
}


// Stride-1 geometries are served by the blocked kernels; other strides use
// the direct loops above.
bool fast_geometry(Index k, Index s, Index p) { return s == 1 && p <= k - 1; }

// dst[n] += valid_correlate(pad(src[n], lo), w) with w laid out [dst.c][src.c][k^3].
template <typename T>
void padded_correlate(const T* src, Volume sv, Index lo, const T* w, Index k, T* dst, Volume dv) {
  using namespace kernels;
  const Index ozp = round_up<T>(dv.z);
  const Padded pin{sv.c, dv.x + k - 1, dv.y + k - 1, ozp + k - 1};
  std::vector<T> xp(std::size_t(pin.size())), rows(std::size_t(dv.c * dv.x * dv.y * ozp));
  const Index sstride = sv.c * sv.x * sv.y * sv.z, dstride = dv.c * dv.x * dv.y * dv.z;
  for (Index n = 0; n < dv.n; ++n) {
    pack(src + n * sstride, sv.c, sv.x, sv.y, sv.z, lo, pin, xp.data());
    correlate_valid(xp.data(), pin, w, dv.c, k, rows.data(), dv.x, dv.y, ozp);
    T* out = dst + n * dstride;
    for (Index r = 0; r < dv.c * dv.x * dv.y; ++r) {
      const T* from = rows.data() + r * ozp;
      T* to = out + r * dv.z;
#pragma omp simd
      for (Index z = 0; z < dv.z; ++z) to[z] += from[z];
    }
  }
}

// gw[a.c][src.c][k^3] += sum_{n,o} a[n][o] pad(src[n], lo)[o + k].
template <typename T>
bool padded_weight_grad(const T* a, Volume av, const T* src, Volume sv, Index lo, Index k, T* gw) {
  using namespace kernels;
  if (k > kMaxWeightGradKernel) return false;
  const Index ozp = round_up<T>(av.z);
  const Padded arows{av.c, av.x, av.y, ozp};
  const Padded pin{sv.c, av.x + k - 1, av.y + k - 1, ozp + k - 1};
  std::vector<T> ap(std::size_t(arows.size())), bp(std::size_t(pin.size()));
  const Index astride = av.c * av.x * av.y * av.z, sstride = sv.c * sv.x * sv.y * sv.z;
  for (Index n = 0; n < av.n; ++n) {
    pack(a + n * astride, av.c, av.x, av.y, av.z, 0, arows, ap.data());
    pack(src + n * sstride, sv.c, sv.x, sv.y, sv.z, lo, pin, bp.data());
    weight_grad_valid(ap.data(), av.c, av.x, av.y, ozp, bp.data(), pin, k, gw);
  }
  return true;
}

template <typename T>
void fill_bias(T* y, Volume out, const T* b) {
  const Index spatial = out.x * out.y * out.z;
  for (Index n = 0; n < out.n; ++n)
    for (Index c = 0; c < out.c; ++c) std::fill_n(y + (n * out.c + c) * spatial, spatial, b[c]);
}

template <typename T>
void accumulate_bias_grad(const T* gy, Volume out, std::span<T> gb) {
  const Index spatial = out.x * out.y * out.z;
  for (Index n = 0; n < out.n; ++n)
    for (Index c = 0; c < out.c; ++c) {
      const T* row = gy + (n * out.c + c) * spatial;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (Index i = 0; i < spatial; ++i) acc += row[i];
      gb[static_cast<std::size_t>(c)] += acc;
    }
}

void check_weight(const Shape& w, std::size_t c0, std::size_t c1, const ConvGeometry& g, const char* what) {
  const Shape expected{c0, c1, g.kernel, g.kernel, g.kernel};
  if (w != expected)
    fail(ErrorKind::ShapeMismatch, std::string(what) + " weight " + shape_string(w) + ", expected " + shape_string(expected));
}

void check_geometry(const ConvGeometry& g) {
  if (g.kernel < 1 || g.stride < 1) fail(ErrorKind::ShapeMismatch, "kernel and stride must be >= 1");
}

}  // namespace

std::size_t conv_out_dim(std::size_t in, const ConvGeometry& g) {
  check_geometry(g);
  const std::size_t padded = in + 2 * g.padding;
  if (padded < g.kernel)
    fail(ErrorKind::ShapeMismatch, "kernel " + std::to_string(g.kernel) + " does not fit padded extent " + std::to_string(padded));
  return (padded - g.kernel) / g.stride + 1;
}

std::size_t tconv_out_dim(std::size_t in, const ConvGeometry& g) {
  check_geometry(g);
  const std::size_t grown = (in - 1) * g.stride + g.kernel;
  if (grown <= 2 * g.padding) fail(ErrorKind::ShapeMismatch, "transpose convolution output would be empty");
  return grown - 2 * g.padding;
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g) {
  const Volume in = volume_of(x.shape(), "conv3d input");
  require_rank(weight, 5, "conv3d weight");
  const auto co = weight.dim(0);
  check_weight(weight.shape(), co, std::size_t(in.c), g, "conv3d");
  require_shape(bias, {co}, "conv3d bias");
  const Shape out_shape{std::size_t(in.n), co, conv_out_dim(std::size_t(in.x), g), conv_out_dim(std::size_t(in.y), g),
                        conv_out_dim(std::size_t(in.z), g)};
  Tensor<T> y(out_shape, Uninitialized{});
  const Volume out = volume_of(out_shape, "conv3d output");
  fill_bias(y.ptr(), out, bias.ptr());
  const Index k = Index(g.kernel), s = Index(g.stride), p = Index(g.padding);
  if (fast_geometry(k, s, p))
    padded_correlate(x.ptr(), in, p, weight.ptr(), k, y.ptr(), out);
  else
    correlate(x.ptr(), in, weight.ptr(), k, s, p, y.ptr(), out);
  return y;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, const ConvGeometry& g,
                     NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias) {
  const Volume in = volume_of(x.shape(), "conv3d input");
  const Volume out = volume_of(grad_out.shape(), "conv3d grad_out");
  check_weight(weight.shape(), std::size_t(out.c), std::size_t(in.c), g, "conv3d");
  if (std::size_t(out.x) != conv_out_dim(std::size_t(in.x), g) || std::size_t(out.y) != conv_out_dim(std::size_t(in.y), g) ||
      std::size_t(out.z) != conv_out_dim(std::size_t(in.z), g) || out.n != in.n)
    fail(ErrorKind::ShapeMismatch, "conv3d grad_out shape " + shape_string(grad_out.shape()));
  const Index k = Index(g.kernel), s = Index(g.stride), p = Index(g.padding);
  if (!grad_weight.empty()) {
    require(grad_weight.size() == weight.size(), ErrorKind::ShapeMismatch, "conv3d weight gradient size");
    if (!fast_geometry(k, s, p) || !padded_weight_grad(grad_out.ptr(), out, x.ptr(), in, p, k, grad_weight.data()))
      correlate_weight_grad(x.ptr(), in, grad_out.ptr(), out, k, s, p, grad_weight.data());
  }
  if (!grad_bias.empty()) {
    require(grad_bias.size() == std::size_t(out.c), ErrorKind::ShapeMismatch, "conv3d bias gradient size");
    accumulate_bias_grad(grad_out.ptr(), out, grad_bias);
  }
  if (grad_in != nullptr) {
    *grad_in = Tensor<T>(x.shape());
    if (fast_geometry(k, s, p)) {
      const auto flipped = kernels::flip_transpose(weight.ptr(), out.c, in.c, k);
      padded_correlate(grad_out.ptr(), out, k - 1 - p, flipped.data(), k, grad_in->ptr(), in);
    } else {
      correlate_adjoint(grad_out.ptr(), out, weight.ptr(), k, s, p, grad_in->ptr(), in);
    }
  }
}

template <typename T>
Tensor<T> tconv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g) {
  const Volume in = volume_of(x.shape(), "tconv3d input");
  require_rank(weight, 5, "tconv3d weight");
  const auto co = weight.dim(1);
  check_weight(weight.shape(), std::size_t(in.c), co, g, "tconv3d");
  require_shape(bias, {co}, "tconv3d bias");
  const Shape out_shape{std::size_t(in.n), co, tconv_out_dim(std::size_t(in.x), g), tconv_out_dim(std::size_t(in.y), g),
                        tconv_out_dim(std::size_t(in.z), g)};
  Tensor<T> y(out_shape, Uninitialized{});
  const Volume out = volume_of(out_shape, "tconv3d output");
  const Index k = Index(g.kernel), s = Index(g.stride), p = Index(g.padding);
  if (fast_geometry(k, s, p)) {
    fill_bias(y.ptr(), out, bias.ptr());
    const auto flipped = kernels::flip_transpose(weight.ptr(), in.c, out.c, k);
    padded_correlate(x.ptr(), in, k - 1 - p, flipped.data(), k, y.ptr(), out);
    return y;
  }
  correlate_adjoint(x.ptr(), in, weight.ptr(), k, s, p, y.ptr(), out);
  const Index spatial = out.x * out.y * out.z;
  for (Index n = 0; n < out.n; ++n)
    for (Index c = 0; c < out.c; ++c) {
      T* row = y.ptr() + (n * out.c + c) * spatial;
      const T b = bias[std::size_t(c)];
      for (Index i = 0; i < spatial; ++i) row[i] += b;
    }
  return y;
}

template <typename T>
void tconv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, const ConvGeometry& g,
                      NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias) {
  const Volume in = volume_of(x.shape(), "tconv3d input");
  const Volume out = volume_of(grad_out.shape(), "tconv3d grad_out");
  check_weight(weight.shape(), std::size_t(in.c), std::size_t(out.c), g, "tconv3d");
  if (std::size_t(out.x) != tconv_out_dim(std::size_t(in.x), g) || std::size_t(out.y) != tconv_out_dim(std::size_t(in.y), g) ||
      std::size_t(out.z) != tconv_out_dim(std::size_t(in.z), g) || out.n != in.n)
    fail(ErrorKind::ShapeMismatch, "tconv3d grad_out shape " + shape_string(grad_out.shape()));
  const Index k = Index(g.kernel), s = Index(g.stride), p = Index(g.padding);
  // Roles swap relative to conv3d: grad_out plays the conv input, x the conv output.
  if (!grad_weight.empty()) {
    require(grad_weight.size() == weight.size(), ErrorKind::ShapeMismatch, "tconv3d weight gradient size");
    if (!fast_geometry(k, s, p) || !padded_weight_grad(x.ptr(), in, grad_out.ptr(), out, p, k, grad_weight.data()))
      correlate_weight_grad(grad_out.ptr(), out, x.ptr(), in, k, s, p, grad_weight.data());
  }
  if (!grad_bias.empty()) {
    require(grad_bias.size() == std::size_t(out.c), ErrorKind::ShapeMismatch, "tconv3d bias gradient size");
    accumulate_bias_grad(grad_out.ptr(), out, grad_bias);
  }
  if (grad_in != nullptr) {
    *grad_in = Tensor<T>(x.shape());
    if (fast_geometry(k, s, p))
      padded_correlate(grad_out.ptr(), out, p, weight.ptr(), k, grad_in->ptr(), in);
    else
      correlate(grad_out.ptr(), out, weight.ptr(), k, s, p, grad_in->ptr(), in);
  }
}

#define VOXCAST_INSTANTIATE(T)                                                                                        \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);      \
  template void conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, NoDeduce<Tensor<T>>*, \
                                std::span<NoDeduce<T>>, std::span<NoDeduce<T>>);                                                            \
  template Tensor<T> tconv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);     \
  template void tconv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,           \
                                 NoDeduce<Tensor<T>>*, std::span<NoDeduce<T>>, std::span<NoDeduce<T>>);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast::ops

#pragma once

// Register-blocked stride-1 "valid" correlation kernels used by the conv and
// transpose-conv fast paths. Inputs are pre-padded so the inner loops carry no
// bounds checks; every z row is rounded up to a whole number of vectors.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace voxcast::ops::kernels {

using Index = std::ptrdiff_t;

template <typename T>
struct Simd {
  static constexpr Index width = Index(64 / sizeof(T));
  typedef T vec __attribute__((vector_size(64)));

  static vec load(const T* p) {
    vec v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, vec v) { std::memcpy(p, &v, sizeof v); }
  static T sum(vec v) {
    T acc = 0;
    for (Index i = 0; i < width; ++i) acc += v[i];
    return acc;
  }
};

template <typename T>
Index round_up(Index n) {
  const Index w = Simd<T>::width;
  return (n + w - 1) / w * w;
}

// Padded per-sample layout [C][PX][PY][PZ].
struct Padded {
  Index c, x, y, z;
  Index size() const { return c * x * y * z; }
};

// dst = zeros, then src[C][X][Y][Z] copied to offset (lo, lo, lo).
template <typename T>
void pack(const T* src, Index c, Index x, Index y, Index z, Index lo, Padded d, T* dst) {
  std::fill(dst, dst + d.size(), T(0));
  for (Index ci = 0; ci < c; ++ci)
    for (Index ix = 0; ix < x; ++ix)
      for (Index iy = 0; iy < y; ++iy)
        std::memcpy(dst + ((ci * d.x + ix + lo) * d.y + iy + lo) * d.z + lo, src + ((ci * x + ix) * y + iy) * z,
                    std::size_t(z) * sizeof(T));
}

// w' [B][A][k^3] = w [A][B][k^3] with every kernel axis reversed.
template <typename T>
std::vector<T> flip_transpose(const T* w, Index a, Index b, Index k) {
  const Index k3 = k * k * k;
  std::vector<T> out(std::size_t(a * b * k3));
  for (Index i = 0; i < a; ++i)
    for (Index j = 0; j < b; ++j)
      for (Index t = 0; t < k3; ++t) out[std::size_t((j * a + i) * k3 + (k3 - 1 - t))] = w[(i * b + j) * k3 + t];
  return out;
}

template <int CB, int ZC, typename T>
void correlate_rows(const T* xp, Padded in, const T* w, Index k, Index co0, Index ox, Index oy, Index z0, T* y, Index ox_n,
                    Index oy_n, Index ozp) {
  using S = Simd<T>;
  using vec = typename S::vec;
  constexpr Index W = S::width;
  const Index k3 = k * k * k;
  const Index wstride = in.c * k3;
  vec acc[CB][ZC];
  for (int b = 0; b < CB; ++b)
    for (int j = 0; j < ZC; ++j) acc[b][j] = vec{};
  for (Index ci = 0; ci < in.c; ++ci)
    for (Index kx = 0; kx < k; ++kx)
      for (Index ky = 0; ky < k; ++ky) {
        const T* xr = xp + ((ci * in.x + ox + kx) * in.y + oy + ky) * in.z + z0;
        const T* wr = w + co0 * wstride + ci * k3 + (kx * k + ky) * k;
        for (Index kz = 0; kz < k; ++kz) {
          vec xv[ZC];
          for (int j = 0; j < ZC; ++j) xv[j] = S::load(xr + kz + j * W);
          for (int b = 0; b < CB; ++b) {
            const T wv = wr[b * wstride + kz];
            for (int j = 0; j < ZC; ++j) acc[b][j] += wv * xv[j];
          }
        }
      }
  for (int b = 0; b < CB; ++b)
    for (int j = 0; j < ZC; ++j) S::store(y + (((co0 + b) * ox_n + ox) * oy_n + oy) * ozp + z0 + j * W, acc[b][j]);
}

template <int CB, typename T>
void correlate_cols(const T* xp, Padded in, const T* w, Index k, Index co0, Index ox, Index oy, T* y, Index ox_n, Index oy_n,
                    Index ozp) {
  constexpr Index W = Simd<T>::width;
  const Index nv = ozp / W;
  Index j = 0;
  for (; j + 4 <= nv; j += 4) correlate_rows<CB, 4>(xp, in, w, k, co0, ox, oy, j * W, y, ox_n, oy_n, ozp);
  switch (nv - j) {
    case 3: correlate_rows<CB, 3>(xp, in, w, k, co0, ox, oy, j * W, y, ox_n, oy_n, ozp); break;
    case 2: correlate_rows<CB, 2>(xp, in, w, k, co0, ox, oy, j * W, y, ox_n, oy_n, ozp); break;
    case 1: correlate_rows<CB, 1>(xp, in, w, k, co0, ox, oy, j * W, y, ox_n, oy_n, ozp); break;
    default: break;
  }
}

// y[co][ox][oy][0..ozp) = sum_{ci,k} w[co][ci][k] xp[ci][o + k]; overwrites y.
// The padded input must satisfy in.x = ox_n + k - 1, in.y = oy_n + k - 1,
// in.z = ozp + k - 1 with ozp a multiple of the vector width.
template <typename T>
void correlate_valid(const T* xp, Padded in, const T* w, Index co_n, Index k, T* y, Index ox_n, Index oy_n, Index ozp) {
  for (Index co = 0; co < co_n; co += 4) {
    const Index cb = std::min<Index>(4, co_n - co);
    for (Index ox = 0; ox < ox_n; ++ox)
      for (Index oy = 0; oy < oy_n; ++oy) switch (cb) {
          case 4: correlate_cols<4>(xp, in, w, k, co, ox, oy, y, ox_n, oy_n, ozp); break;
          case 3: correlate_cols<3>(xp, in, w, k, co, ox, oy, y, ox_n, oy_n, ozp); break;
          case 2: correlate_cols<2>(xp, in, w, k, co, ox, oy, y, ox_n, oy_n, ozp); break;
          default: correlate_cols<1>(xp, in, w, k, co, ox, oy, y, ox_n, oy_n, ozp); break;
        }
  }
}

template <int CB, int K, typename T>
void weight_grad_block(const T* a, Index a0, Index ox_n, Index oy_n, Index ozp, const T* bp, Padded bin, Index cb_n, Index bi,
                       Index kx, Index ky, T* gw) {
  using S = Simd<T>;
  using vec = typename S::vec;
  constexpr Index W = S::width;
  constexpr Index k3 = Index(K) * K * K;
  vec acc[CB][K];
  for (int b = 0; b < CB; ++b)
    for (int t = 0; t < K; ++t) acc[b][t] = vec{};
  const Index nv = ozp / W;
  for (Index ox = 0; ox < ox_n; ++ox)
    for (Index oy = 0; oy < oy_n; ++oy) {
      const T* br = bp + ((bi * bin.x + ox + kx) * bin.y + oy + ky) * bin.z;
      const T* ar[CB];
      for (int b = 0; b < CB; ++b) ar[b] = a + (((a0 + b) * ox_n + ox) * oy_n + oy) * ozp;
      for (Index j = 0; j < nv; ++j) {
        vec av[CB];
        for (int b = 0; b < CB; ++b) av[b] = S::load(ar[b] + j * W);
        for (int t = 0; t < K; ++t) {
          const vec bv = S::load(br + j * W + t);
          for (int b = 0; b < CB; ++b) acc[b][t] += av[b] * bv;
        }
      }
    }
  for (int b = 0; b < CB; ++b) {
    T* g = gw + ((a0 + b) * cb_n + bi) * k3 + (kx * K + ky) * K;
    for (int t = 0; t < K; ++t) g[t] += S::sum(acc[b][t]);
  }
}

template <int K, typename T>
void weight_grad_k(const T* a, Index a_n, Index ox_n, Index oy_n, Index ozp, const T* bp, Padded bin, T* gw) {
  for (Index a0 = 0; a0 < a_n; a0 += 4) {
    const Index cb = std::min<Index>(4, a_n - a0);
    for (Index bi = 0; bi < bin.c; ++bi)
      for (Index kx = 0; kx < K; ++kx)
        for (Index ky = 0; ky < K; ++ky) switch (cb) {
            case 4: weight_grad_block<4, K>(a, a0, ox_n, oy_n, ozp, bp, bin, bin.c, bi, kx, ky, gw); break;
            case 3: weight_grad_block<3, K>(a, a0, ox_n, oy_n, ozp, bp, bin, bin.c, bi, kx, ky, gw); break;
            case 2: weight_grad_block<2, K>(a, a0, ox_n, oy_n, ozp, bp, bin, bin.c, bi, kx, ky, gw); break;
            default: weight_grad_block<1, K>(a, a0, ox_n, oy_n, ozp, bp, bin, bin.c, bi, kx, ky, gw); break;
          }
  }
}

constexpr Index kMaxWeightGradKernel = 5;

// gw[ai][bi][k] += sum_o a[ai][o] bp[bi][o + k]. Rows of `a` must be zero
// beyond the valid extent. Returns false when k is not supported.
template <typename T>
bool weight_grad_valid(const T* a, Index a_n, Index ox_n, Index oy_n, Index ozp, const T* bp, Padded bin, Index k, T* gw) {
  switch (k) {
    case 1: weight_grad_k<1>(a, a_n, ox_n, oy_n, ozp, bp, bin, gw); return true;
    case 2: weight_grad_k<2>(a, a_n, ox_n, oy_n, ozp, bp, bin, gw); return true;
    case 3: weight_grad_k<3>(a, a_n, ox_n, oy_n, ozp, bp, bin, gw); return true;
    case 4: weight_grad_k<4>(a, a_n, ox_n, oy_n, ozp, bp, bin, gw); return true;
    case 5: weight_grad_k<5>(a, a_n, ox_n, oy_n, ozp, bp, bin, gw); return true;
    default: return false;
  }
}

}  // namespace voxcast::ops::kernels

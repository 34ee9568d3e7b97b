#include <algorithm>
#include <cmath>
#include <limits>

#include "voxcast/ops.hpp"

namespace voxcast::ops {

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope) {
  if (!(slope > T(0) && slope < T(1))) fail(ErrorKind::ConfigError, "leaky slope must lie in (0,1)");
  Tensor<T> y(x.shape(), Uninitialized{});
  const T* in = x.ptr();
  T* out = y.ptr();
  const std::size_t n = x.size();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const T v = in[i];
    out[i] = std::max(v, T(0)) + slope * std::min(v, T(0));
  }
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& out, const Tensor<T>& grad_out, T slope) {
  require_shape(grad_out, out.shape(), "leaky_relu grad_out");
  Tensor<T> gx(out.shape(), Uninitialized{});
  const T* y = out.ptr();
  const T* gy = grad_out.ptr();
  T* g = gx.ptr();
  const std::size_t n = out.size();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const T scale = y[i] > T(0) ? T(1) : slope;
    g[i] = scale * gy[i];
  }
  return gx;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  // Saturated values are pulled back inside the open interval.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  Tensor<T> y(x.shape(), Uninitialized{});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    T s;
    if (v >= T(0)) {
      s = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T(1) + e);
    }
    y[i] = std::clamp(s, lo, hi);
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out) {
  require_shape(grad_out, out.shape(), "sigmoid grad_out");
  Tensor<T> gx(out.shape(), Uninitialized{});
  for (std::size_t i = 0; i < out.size(); ++i) gx[i] = grad_out[i] * out[i] * (T(1) - out[i]);
  return gx;
}

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x, const PoolGeometry& g) {
  require_rank(x, 5, "maxpool3d input");
  if (g.window < 1 || g.stride < 1) fail(ErrorKind::ShapeMismatch, "pool window and stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
  if (X < g.window || Y < g.window || Z < g.window)
    fail(ErrorKind::ShapeMismatch, "pool window larger than input " + shape_string(x.shape()));
  const std::size_t OX = (X - g.window) / g.stride + 1, OY = (Y - g.window) / g.stride + 1, OZ = (Z - g.window) / g.stride + 1;
  PoolResult<T> r{Tensor<T>({N, C, OX, OY, OZ}), std::vector<std::uint32_t>(N * C * OX * OY * OZ)};
  if (x.size() > std::numeric_limits<std::uint32_t>::max()) fail(ErrorKind::ShapeMismatch, "pool input too large");
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * X * Y * Z;
    for (std::size_t ox = 0; ox < OX; ++ox)
      for (std::size_t oy = 0; oy < OY; ++oy)
        for (std::size_t oz = 0; oz < OZ; ++oz, ++o) {
          std::size_t best = base + ((ox * g.stride) * Y + oy * g.stride) * Z + oz * g.stride;
          T best_v = x[best];
          for (std::size_t dx = 0; dx < g.window; ++dx)
            for (std::size_t dy = 0; dy < g.window; ++dy)
              for (std::size_t dz = 0; dz < g.window; ++dz) {
                const std::size_t i = base + ((ox * g.stride + dx) * Y + oy * g.stride + dy) * Z + oz * g.stride + dz;
                if (x[i] > best_v) {  // strict: first occurrence wins ties
                  best_v = x[i];
                  best = i;
                }
              }
          r.out[o] = best_v;
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax, const Tensor<T>& grad_out) {
  require(argmax.size() == grad_out.size(), ErrorKind::ShapeMismatch, "maxpool3d argmax/grad_out size");
  Tensor<T> gx(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gx[argmax[o]] += grad_out[o];
  return gx;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "dense input");
  require_rank(weight, 2, "dense weight");
  const std::size_t N = x.dim(0), D = x.dim(1), K = weight.dim(1);
  require_shape(weight, {D, K}, "dense weight");
  require_shape(bias, {K}, "dense bias");
  Tensor<T> y({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    T* yrow = y.ptr() + n * K;
    std::copy(bias.ptr(), bias.ptr() + K, yrow);
    for (std::size_t d = 0; d < D; ++d) {
      const T xv = x[n * D + d];
      const T* wrow = weight.ptr() + d * K;
      for (std::size_t k = 0; k < K; ++k) yrow[k] += xv * wrow[k];
    }
  }
  return y;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, NoDeduce<Tensor<T>>* grad_in,
                    std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias) {
  require_rank(x, 2, "dense input");
  const std::size_t N = x.dim(0), D = x.dim(1), K = weight.dim(1);
  require_shape(weight, {D, K}, "dense weight");
  require_shape(grad_out, {N, K}, "dense grad_out");
  if (!grad_weight.empty()) {
    require(grad_weight.size() == D * K, ErrorKind::ShapeMismatch, "dense weight gradient size");
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) {
        const T xv = x[n * D + d];
        T* gw = grad_weight.data() + d * K;
        const T* gy = grad_out.ptr() + n * K;
        for (std::size_t k = 0; k < K; ++k) gw[k] += xv * gy[k];
      }
  }
  if (!grad_bias.empty()) {
    require(grad_bias.size() == K, ErrorKind::ShapeMismatch, "dense bias gradient size");
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k) grad_bias[k] += grad_out[n * K + k];
  }
  if (grad_in != nullptr) {
    *grad_in = Tensor<T>(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) {
        const T* wrow = weight.ptr() + d * K;
        const T* gy = grad_out.ptr() + n * K;
        T acc = 0;
        for (std::size_t k = 0; k < K; ++k) acc += wrow[k] * gy[k];
        (*grad_in)[n * D + d] = acc;
      }
  }
}

namespace {

struct ChannelLayout {
  std::size_t n, c, spatial;
};

template <typename T>
ChannelLayout channel_layout(const Tensor<T>& x) {
  if (x.rank() < 2) fail(ErrorKind::ShapeMismatch, "batchnorm expects [N,C,...]");
  std::size_t spatial = 1;
  for (std::size_t a = 2; a < x.rank(); ++a) spatial *= x.dim(a);
  return {x.dim(0), x.dim(1), spatial};
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, const BatchNormOptions& opt, bool training, BatchNormCache<T>* cache) {
  const auto [N, C, S] = channel_layout(x);
  require_shape(gamma, {C}, "batchnorm gamma");
  require_shape(beta, {C}, "batchnorm beta");
  require_shape(running_mean, {C}, "batchnorm running mean");
  require_shape(running_var, {C}, "batchnorm running variance");
  if (training && N < 2) fail(ErrorKind::DegenerateBatch, "batch normalization needs N >= 2 in training mode");

  Tensor<T> y(x.shape(), Uninitialized{});
  Tensor<T> xhat;
  if (cache != nullptr) xhat = Tensor<T>(x.shape(), Uninitialized{});
  std::vector<double> inv_std(C);
  const double count = static_cast<double>(N * S);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (std::size_t n = 0; n < N; ++n) {
        const T* row = x.ptr() + (n * C + c) * S;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < S; ++i) acc += row[i];
        mean += acc;
      }
      mean /= count;
      for (std::size_t n = 0; n < N; ++n) {
        const T* row = x.ptr() + (n * C + c) * S;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < S; ++i) {
          const double d = row[i] - mean;
          acc += d * d;
        }
        var += acc;
      }
      var /= count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mean);
      running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + opt.epsilon);
    inv_std[c] = is;
    const T m = static_cast<T>(mean), s = static_cast<T>(is), g = gamma[c], b = beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * S;
      const T* row = x.ptr() + off;
      T* out = y.ptr() + off;
      if (cache != nullptr) {
        T* xh = xhat.ptr() + off;
#pragma omp simd
        for (std::size_t i = 0; i < S; ++i) {
          const T h = (row[i] - m) * s;
          xh[i] = h;
          out[i] = g * h + b;
        }
      } else {
#pragma omp simd
        for (std::size_t i = 0; i < S; ++i) out[i] = g * ((row[i] - m) * s) + b;
      }
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return y;
}

template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_out,
                        NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_gamma, std::span<NoDeduce<T>> grad_beta) {
  const Tensor<T>& xhat = cache.normalized;
  require_shape(grad_out, xhat.shape(), "batchnorm grad_out");
  const auto [N, C, S] = channel_layout(xhat);
  const double count = static_cast<double>(N * S);
  if (grad_in != nullptr) *grad_in = Tensor<T>(xhat.shape(), Uninitialized{});
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * S;
      const T* g = grad_out.ptr() + off;
      const T* h = xhat.ptr() + off;
      double a = 0.0, b = 0.0;
#pragma omp simd reduction(+ : a, b)
      for (std::size_t i = 0; i < S; ++i) {
        a += g[i];
        b += static_cast<double>(g[i]) * h[i];
      }
      sum_g += a;
      sum_gx += b;
    }
    if (!grad_gamma.empty()) grad_gamma[c] += static_cast<T>(sum_gx);
    if (!grad_beta.empty()) grad_beta[c] += static_cast<T>(sum_g);
    if (grad_in == nullptr) continue;
    const double scale = gamma[c] * cache.inv_std[c];
    const double shift = cache.training ? sum_g / count : 0.0;
    const double slope = cache.training ? sum_gx / count : 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * S;
      const T* g = grad_out.ptr() + off;
      const T* h = xhat.ptr() + off;
      T* out = grad_in->ptr() + off;
#pragma omp simd
      for (std::size_t i = 0; i < S; ++i) out[i] = static_cast<T>(scale * (g[i] - shift - h[i] * slope));
    }
  }
}

namespace {

template <typename T>
void check_scores(const Tensor<T>& scores, const Tensor<T>& labels) {
  require_rank(scores, 2, "cross_entropy scores");
  require_shape(labels, scores.shape(), "cross_entropy labels");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!(scores[i] > T(0) && scores[i] < T(1)))
      fail(ErrorKind::InvalidScore, "score " + std::to_string(static_cast<double>(scores[i])) + " outside (0,1)");
}

double clamp_score(double v, double eps) { return std::clamp(v, eps, 1.0 - eps); }

}  // namespace

template <typename T>
double cross_entropy(const Tensor<T>& scores, const Tensor<T>& labels, const CrossEntropyOptions& opt) {
  check_scores(scores, labels);
  const std::size_t B = scores.dim(0), M = scores.dim(1);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double row_sum = 1.0;
    if (opt.normalize) {
      row_sum = 0.0;
      for (std::size_t j = 0; j < M; ++j) row_sum += clamp_score(scores[i * M + j], opt.epsilon);
    }
    for (std::size_t j = 0; j < M; ++j) {
      const double y = labels[i * M + j];
      if (y == 0.0) continue;
      loss -= y * std::log(clamp_score(scores[i * M + j], opt.epsilon) / row_sum);
    }
  }
  return opt.reduction == Reduction::Mean ? loss / static_cast<double>(B) : loss;
}

template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& scores, const Tensor<T>& labels, const CrossEntropyOptions& opt,
                                 double seed) {
  check_scores(scores, labels);
  const std::size_t B = scores.dim(0), M = scores.dim(1);
  if (opt.reduction == Reduction::Mean) seed /= static_cast<double>(B);
  Tensor<T> g(scores.shape());
  for (std::size_t i = 0; i < B; ++i) {
    double row_sum = 0.0, label_mass = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      row_sum += clamp_score(scores[i * M + j], opt.epsilon);
      label_mass += labels[i * M + j];
    }
    for (std::size_t j = 0; j < M; ++j) {
      double d = -static_cast<double>(labels[i * M + j]) / clamp_score(scores[i * M + j], opt.epsilon);
      if (opt.normalize) d += label_mass / row_sum;
      g[i * M + j] = static_cast<T>(seed * d);
    }
  }
  return g;
}

template <typename T>
double l2_loss(const Tensor<T>& pred, const Tensor<T>& target, Reduction reduction) {
  require_shape(target, pred.shape(), "l2_loss target");
  if (pred.rank() < 1) fail(ErrorKind::ShapeMismatch, "l2_loss expects a batch axis");
  const std::size_t B = pred.dim(0), per = pred.size() / B;
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double ss = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      ss += d * d;
    }
    loss += std::sqrt(ss);
  }
  return reduction == Reduction::Mean ? loss / static_cast<double>(B) : loss;
}

template <typename T>
Tensor<T> l2_loss_backward(const Tensor<T>& pred, const Tensor<T>& target, Reduction reduction, double seed) {
  require_shape(target, pred.shape(), "l2_loss target");
  const std::size_t B = pred.dim(0), per = pred.size() / B;
  if (reduction == Reduction::Mean) seed /= static_cast<double>(B);
  Tensor<T> g(pred.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double ss = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      ss += d * d;
    }
    if (ss == 0.0) continue;  // subgradient 0 at the kink
    const double scale = seed / std::sqrt(ss);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
  }
  return g;
}

#define VOXCAST_INSTANTIATE(T)                                                                                           \
  template Tensor<T> leaky_relu_forward(const Tensor<T>&, T);                                                            \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                                         \
  template Tensor<T> sigmoid_forward(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                               \
  template PoolResult<T> maxpool3d_forward(const Tensor<T>&, const PoolGeometry&);                                       \
  template Tensor<T> maxpool3d_backward(const Shape&, std::span<const std::uint32_t>, const Tensor<T>&);                  \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                \
  template void dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NoDeduce<Tensor<T>>*, std::span<NoDeduce<T>>,           \
                               std::span<NoDeduce<T>>);                                                                            \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,     \
                                       const BatchNormOptions&, bool, BatchNormCache<T>*);                               \
  template void batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&, const Tensor<T>&, NoDeduce<Tensor<T>>*,             \
                                   std::span<NoDeduce<T>>, std::span<NoDeduce<T>>);                                                          \
  template double cross_entropy(const Tensor<T>&, const Tensor<T>&, const CrossEntropyOptions&);                         \
  template Tensor<T> cross_entropy_backward(const Tensor<T>&, const Tensor<T>&, const CrossEntropyOptions&, double);     \
  template double l2_loss(const Tensor<T>&, const Tensor<T>&, Reduction);                                                \
  template Tensor<T> l2_loss_backward(const Tensor<T>&, const Tensor<T>&, Reduction, double);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast::ops

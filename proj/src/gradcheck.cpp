#include "voxcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "voxcast/ops.hpp"
#include "voxcast/rng.hpp"

namespace voxcast {

double finite_diff_check(const ScalarFn& f, const Tensor<double>& point, double h) {
  Tensor<double> analytic(point.shape());
  f(point, &analytic);
  Tensor<double> x = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x, nullptr);
    x[i] = saved - h;
    const double fm = f(x, nullptr);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

namespace {

using T64 = Tensor<double>;

T64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T64 t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinked activations.
T64 random_nonzero(Shape shape, Rng& rng) {
  T64 t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + std::size_t(rng.below(hi - lo + 1)); }

std::string shape_detail(const char* what, const Shape& s) { return std::string(what) + " " + shape_string(s); }

// Projection of a tensor-valued map to a scalar: f(x) = <g(x), r>.
double project(const T64& out, const T64& r) { return dot(out, r); }

struct Tracker {
  LayerCheck result;
  double sign = 1.0;

  void add(double err, const std::string& detail) {
    ++result.trials;
    if (err >= result.worst_error || result.detail.empty()) {
      result.worst_error = std::max(result.worst_error, err);
      result.detail = detail;
    }
  }
};

void check_conv(Tracker& t, Rng& rng, double h, bool transpose) {
  const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
  ops::ConvGeometry g;
  g.kernel = pick(rng, 1, 3);
  g.stride = pick(rng, 1, 2);
  g.padding = pick(rng, 0, g.kernel - 1);
  Shape xs{n, ci};
  for (int a = 0; a < 3; ++a) xs.push_back(transpose ? pick(rng, 2, 4) : pick(rng, g.kernel + 1, g.kernel + 4));
  if (transpose) {
    // tconv output must stay positive after removing 2p cells.
    for (std::size_t a = 2; a < 5; ++a)
      while ((xs[a] - 1) * g.stride + g.kernel <= 2 * g.padding) ++xs[a];
  }
  const Shape ws = transpose ? Shape{ci, co, g.kernel, g.kernel, g.kernel} : Shape{co, ci, g.kernel, g.kernel, g.kernel};
  T64 x = random_tensor(xs, rng), w = random_tensor(ws, rng), b = random_tensor({co}, rng);
  auto fwd = [&](const T64& xx, const T64& ww, const T64& bb) {
    return transpose ? ops::tconv3d_forward(xx, ww, bb, g) : ops::conv3d_forward(xx, ww, bb, g);
  };
  const T64 r = random_tensor(fwd(x, w, b).shape(), rng);
  auto bwd = [&](const T64& xx, const T64& ww, T64* gx, std::span<double> gw, std::span<double> gb) {
    if (transpose)
      ops::tconv3d_backward(xx, ww, r, g, gx, gw, gb);
    else
      ops::conv3d_backward(xx, ww, r, g, gx, gw, gb);
  };
  const std::string geo = shape_detail("x", xs) + " k=" + std::to_string(g.kernel) + " s=" + std::to_string(g.stride) +
                          " p=" + std::to_string(g.padding);

  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              if (grad) {
                bwd(xx, w, grad, {}, {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(fwd(xx, w, b), r);
            },
            x, h),
        geo + " d/dx");
  t.add(finite_diff_check(
            [&](const T64& ww, T64* grad) {
              if (grad) {
                grad->fill(0.0);
                bwd(x, ww, nullptr, grad->data(), {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(fwd(x, ww, b), r);
            },
            w, h),
        geo + " d/dw");
  t.add(finite_diff_check(
            [&](const T64& bb, T64* grad) {
              if (grad) {
                grad->fill(0.0);
                bwd(x, w, nullptr, {}, grad->data());
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(fwd(x, w, bb), r);
            },
            b, h),
        geo + " d/db");
}

void check_leaky(Tracker& t, Rng& rng, double h) {
  const Shape s{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5), pick(rng, 2, 5)};
  const double slope = rng.uniform(0.005, 0.3);
  const T64 x = random_nonzero(s, rng), r = random_tensor(s, rng);
  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              const T64 y = ops::leaky_relu_forward(xx, slope);
              if (grad) {
                *grad = ops::leaky_relu_backward(y, r, slope);
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(y, r);
            },
            x, h),
        shape_detail("x", s) + " slope=" + std::to_string(slope));
}

void check_sigmoid(Tracker& t, Rng& rng, double h) {
  const Shape s{pick(rng, 1, 4), pick(rng, 1, 12)};
  const T64 x = random_tensor(s, rng, -4.0, 4.0), r = random_tensor(s, rng);
  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              const T64 y = ops::sigmoid_forward(xx);
              if (grad) {
                *grad = ops::sigmoid_backward(y, r);
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(y, r);
            },
            x, h),
        shape_detail("x", s));
}

void check_maxpool(Tracker& t, Rng& rng, double h) {
  ops::PoolGeometry g;
  g.window = pick(rng, 1, 3);
  g.stride = pick(rng, 1, g.window);
  const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, g.window, 6), pick(rng, g.window, 6), pick(rng, g.window, 6)};
  const T64 x = random_tensor(s, rng);
  const T64 r = random_tensor(ops::maxpool3d_forward(x, g).out.shape(), rng);
  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              auto res = ops::maxpool3d_forward(xx, g);
              if (grad) {
                *grad = ops::maxpool3d_backward(xx.shape(), res.argmax, r);
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(res.out, r);
            },
            x, h),
        shape_detail("x", s) + " window=" + std::to_string(g.window) + " stride=" + std::to_string(g.stride));
}

void check_dense(Tracker& t, Rng& rng, double h) {
  const std::size_t n = pick(rng, 1, 4), d = pick(rng, 1, 10), k = pick(rng, 1, 9);
  const T64 x = random_tensor({n, d}, rng), w = random_tensor({d, k}, rng), b = random_tensor({k}, rng);
  const T64 r = random_tensor({n, k}, rng);
  const std::string geo = shape_detail("x", x.shape()) + " k=" + std::to_string(k);
  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              if (grad) {
                ops::dense_backward(xx, w, r, grad, {}, {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(ops::dense_forward(xx, w, b), r);
            },
            x, h),
        geo + " d/dx");
  t.add(finite_diff_check(
            [&](const T64& ww, T64* grad) {
              if (grad) {
                grad->fill(0.0);
                ops::dense_backward(x, ww, r, nullptr, grad->data(), {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(ops::dense_forward(x, ww, b), r);
            },
            w, h),
        geo + " d/dw");
  t.add(finite_diff_check(
            [&](const T64& bb, T64* grad) {
              if (grad) {
                grad->fill(0.0);
                ops::dense_backward(x, w, r, nullptr, {}, grad->data());
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(ops::dense_forward(x, w, bb), r);
            },
            b, h),
        geo + " d/db");
}

void check_batchnorm(Tracker& t, Rng& rng, double h) {
  const std::size_t c = pick(rng, 1, 3);
  const Shape s{pick(rng, 2, 4), c, pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 4)};
  const bool training = rng.uniform() < 0.75;
  const T64 x = random_tensor(s, rng), r = random_tensor(s, rng);
  const T64 gamma = random_tensor({c}, rng, 0.5, 1.5), beta = random_tensor({c}, rng);
  const T64 rm = random_tensor({c}, rng, -0.2, 0.2), rv = random_tensor({c}, rng, 0.5, 1.5);
  ops::BatchNormOptions opt;
  auto fwd = [&](const T64& xx, const T64& gg, const T64& bb, ops::BatchNormCache<double>* cache) {
    T64 m = rm, v = rv;  // running statistics must not leak between evaluations
    return ops::batchnorm_forward(xx, gg, bb, m, v, opt, training, cache);
  };
  const std::string geo = shape_detail("x", s) + (training ? " train" : " eval");
  t.add(finite_diff_check(
            [&](const T64& xx, T64* grad) {
              ops::BatchNormCache<double> cache;
              const T64 y = fwd(xx, gamma, beta, &cache);
              if (grad) {
                ops::batchnorm_backward(cache, gamma, r, grad, {}, {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(y, r);
            },
            x, h),
        geo + " d/dx");
  t.add(finite_diff_check(
            [&](const T64& gg, T64* grad) {
              ops::BatchNormCache<double> cache;
              const T64 y = fwd(x, gg, beta, &cache);
              if (grad) {
                grad->fill(0.0);
                ops::batchnorm_backward(cache, gg, r, nullptr, grad->data(), {});
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(y, r);
            },
            gamma, h),
        geo + " d/dgamma");
  t.add(finite_diff_check(
            [&](const T64& bb, T64* grad) {
              ops::BatchNormCache<double> cache;
              const T64 y = fwd(x, gamma, bb, &cache);
              if (grad) {
                grad->fill(0.0);
                ops::batchnorm_backward(cache, gamma, r, nullptr, {}, grad->data());
                for (auto& v : grad->data()) v *= t.sign;
              }
              return project(y, r);
            },
            beta, h),
        geo + " d/dbeta");
}

void check_cross_entropy(Tracker& t, Rng& rng, double h) {
  const std::size_t b = pick(rng, 1, 4), m = 9;
  const T64 scores = random_tensor({b, m}, rng, 0.05, 0.95);
  T64 labels({b, m});
  for (std::size_t i = 0; i < b; ++i) labels[i * m + rng.below(m)] = 1.0;
  ops::CrossEntropyOptions opt;
  opt.normalize = rng.uniform() < 0.5;
  t.add(finite_diff_check(
            [&](const T64& s, T64* grad) {
              if (grad) {
                *grad = ops::cross_entropy_backward(s, labels, opt);
                for (auto& v : grad->data()) v *= t.sign;
              }
              return ops::cross_entropy(s, labels, opt);
            },
            scores, h),
        shape_detail("scores", scores.shape()) + (opt.normalize ? " normalized" : " independent"));
}

void check_l2(Tracker& t, Rng& rng, double h) {
  const Shape s{pick(rng, 1, 3), 1, pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
  const T64 pred = random_tensor(s, rng), target = random_tensor(s, rng);
  const auto red = rng.uniform() < 0.5 ? ops::Reduction::Sum : ops::Reduction::Mean;
  t.add(finite_diff_check(
            [&](const T64& p, T64* grad) {
              if (grad) {
                *grad = ops::l2_loss_backward(p, target, red);
                for (auto& v : grad->data()) v *= t.sign;
              }
              return ops::l2_loss(p, target, red);
            },
            pred, h),
        shape_detail("pred", s) + (red == ops::Reduction::Sum ? " sum" : " mean"));
}

}  // namespace

std::vector<std::string> gradient_suite_layers() {
  return {"conv3d", "tconv3d", "leaky_relu", "batchnorm", "maxpool3d", "dense", "sigmoid", "cross_entropy", "l2_loss"};
}

std::vector<LayerCheck> run_gradient_suite(const SuiteOptions& opt) {
  std::vector<LayerCheck> out;
  std::uint64_t code = 0;
  for (const auto& name : gradient_suite_layers()) {
    Rng rng(derive_seed(opt.seed, {code++}));
    Tracker t;
    t.result.layer = name;
    t.sign = name == opt.inject_fault ? -1.0 : 1.0;
    for (std::size_t k = 0; k < opt.trials; ++k) {
      if (name == "conv3d")
        check_conv(t, rng, opt.step, false);
      else if (name == "tconv3d")
        check_conv(t, rng, opt.step, true);
      else if (name == "leaky_relu")
        check_leaky(t, rng, opt.step);
      else if (name == "batchnorm")
        check_batchnorm(t, rng, opt.step);
      else if (name == "maxpool3d")
        check_maxpool(t, rng, opt.step);
      else if (name == "dense")
        check_dense(t, rng, opt.step);
      else if (name == "sigmoid")
        check_sigmoid(t, rng, opt.step);
      else if (name == "cross_entropy")
        check_cross_entropy(t, rng, opt.step);
      else
        check_l2(t, rng, opt.step);
    }
    t.result.passed = t.result.worst_error < opt.tolerance;
    out.push_back(std::move(t.result));
  }
  return out;
}

AdjointResult run_adjoint_suite(std::size_t cases, std::uint64_t seed, double tolerance) {
  AdjointResult res;
  for (std::size_t c = 0; c < cases; ++c) {
    Rng rng(derive_seed(seed, {0xad1, c}));
    ops::ConvGeometry g;
    g.kernel = pick(rng, 1, 4);
    g.stride = pick(rng, 1, 3);
    // Padding at most (k-1)/2 keeps every input extent positive.
    g.padding = pick(rng, 0, (g.kernel - 1) / 2);
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    // Input extents the conv covers exactly, so tconv maps back to the same shape.
    Shape xs{n, ci};
    for (int a = 0; a < 3; ++a) xs.push_back((pick(rng, 1, 4) - 1) * g.stride + g.kernel - 2 * g.padding);
    const T64 x = random_tensor(xs, rng);
    const T64 w = random_tensor({co, ci, g.kernel, g.kernel, g.kernel}, rng);
    const T64 zero_co({co}), zero_ci({ci});
    const T64 ax = ops::conv3d_forward(x, w, zero_co, g);
    const T64 y = random_tensor(ax.shape(), rng);
    const T64 aty = ops::tconv3d_forward(y, w, zero_ci, g);
    if (aty.shape() != x.shape()) fail(ErrorKind::ShapeMismatch, "adjoint suite produced mismatched shapes");
    const double lhs = dot(ax, y), rhs = dot(x, aty);
    res.worst_error = std::max(res.worst_error, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++res.cases;
  }
  res.passed = res.worst_error < tolerance;
  return res;
}

}  // namespace voxcast

#pragma once

// Finite-difference verification of the reverse-mode kernels.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxcast/tensor.hpp"

namespace voxcast {

// Scalar function of one tensor. When `grad` is non-null it receives the
// reverse-mode gradient.
using ScalarFn = std::function<double(const Tensor<double>& x, Tensor<double>* grad)>;

// Worst |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every
// coordinate, with central differences of step h.
double finite_diff_check(const ScalarFn& f, const Tensor<double>& point, double h = 1e-6);

struct LayerCheck {
  std::string layer;
  std::string detail;  // geometry/shape of the worst trial
  double worst_error = 0.0;
  std::size_t trials = 0;
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 10;  // random shapes per layer
  double tolerance = 1e-4;
  double step = 1e-5;
  // Test fixture: negate the analytic gradient of this layer to prove the
  // suite catches sign errors. Empty = pristine.
  std::string inject_fault;
};

// Layers covered: conv3d, tconv3d, leaky_relu, batchnorm, maxpool3d, dense,
// sigmoid, cross_entropy, l2_loss.
std::vector<std::string> gradient_suite_layers();
std::vector<LayerCheck> run_gradient_suite(const SuiteOptions& opt = {});

struct AdjointResult {
  std::size_t cases = 0;
  double worst_error = 0.0;  // |<Ax,y> - <x,A'y>| / max(1, |<Ax,y>|)
  bool passed = false;
};

// <conv3d(x), y> against <x, tconv3d(y)> over random geometries.
AdjointResult run_adjoint_suite(std::size_t cases = 100, std::uint64_t seed = 1, double tolerance = 1e-10);

}  // namespace voxcast

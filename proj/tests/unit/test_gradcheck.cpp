#include <doctest.h>

#include <algorithm>

#include "voxcast/gradcheck.hpp"

using namespace voxcast;

TEST_CASE("gradient suite covers every layer and passes") {
  const auto layers = gradient_suite_layers();
  CHECK(layers.size() == 9);
  SuiteOptions opt;
  opt.trials = 3;
  const auto res = run_gradient_suite(opt);
  REQUIRE(res.size() == layers.size());
  for (const auto& c : res) {
    CHECK_MESSAGE(c.passed, c.layer, " worst ", c.worst_error);
    CHECK(c.worst_error < 1e-4);
    CHECK(c.trials >= 3);
  }
}

TEST_CASE("an injected sign error is caught") {
  for (const std::string layer : {"conv3d", "batchnorm", "cross_entropy"}) {
    SuiteOptions opt;
    opt.trials = 2;
    opt.inject_fault = layer;
    const auto res = run_gradient_suite(opt);
    for (const auto& c : res) CHECK(c.passed == (c.layer != layer));
  }
}

TEST_CASE("conv3d and tconv3d are adjoint") {
  const auto r = run_adjoint_suite(30, 4);
  CHECK(r.cases == 30);
  CHECK(r.passed);
  CHECK(r.worst_error < 1e-10);
}

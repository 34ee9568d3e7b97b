#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "voxcast/checkpoint.hpp"
#include "voxcast/nets.hpp"

using namespace voxcast;
using oracle::random_tensor;

namespace {

ClassifierConfig tiny_classifier() {
  auto c = ClassifierConfig::reduced();
  c.input_dims = {32, 32, 32};
  return c;
}

Tensor<double> random_grids(std::size_t n, std::array<std::size_t, 3> d, Rng& rng) {
  Tensor<double> t({n, 1, d[0], d[1], d[2]});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
  return t;
}

std::vector<std::uint8_t> classifier_bytes(Classifier<double>& c) {
  Checkpoint k;
  k.tensors = capture(c.params());
  return checkpoint_bytes(k);
}

}  // namespace

TEST_CASE("classifier emits nine scores inside (0,1)") {
  Rng rng(1);
  Classifier<double> clf(tiny_classifier(), 3);
  const auto s = clf.forward(random_grids(3, {32, 32, 32}, rng), nn::Mode::Train);
  REQUIRE(s.shape() == Shape{3, 9});
  for (double v : s.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const auto p = predict_classes(s);
  CHECK(p.size() == 3);
}

TEST_CASE("predict_class breaks ties toward the lowest index") {
  const std::array<double, 4> row{0.2, 0.7, 0.7, 0.1};
  CHECK(predict_class(row) == 1);
}

TEST_CASE("simulator geometry") {
  SimulatorConfig full;
  CHECK(full.encoded_dims() == std::array<std::size_t, 3>{6, 6, 22});
  CHECK(full.encoder_channels.back() == 512);
  CHECK(full.output_dims() == kGridDims);
  CHECK(full.decoder_blocks.size() == 6);
  CHECK(full.n_inputs == 4);

  Rng rng(2);
  Simulator<float> sim(SimulatorConfig::reduced(), 9);
  const auto g = random_grids(2, kGridDims, rng).cast<float>();
  CHECK(sim.encode(0, g, nn::Mode::Eval).shape() == Shape{2, 8, 6, 6, 22});
  std::vector<Tensor<float>> hist(4, g);
  const auto out = sim.forward(hist, nn::Mode::Train);
  CHECK(out.shape() == Shape{2, 1, 32, 32, 64});
  for (float v : out.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  hist.pop_back();
  CHECK_THROWS_AS(sim.forward(hist, nn::Mode::Eval), Error);
}

TEST_CASE("tied encoders share one parameter set") {
  auto cfg = SimulatorConfig::reduced();
  const auto untied = Simulator<float>(cfg, 1).params().size();
  cfg.tied_encoders = true;
  Simulator<float> tied(cfg, 1);
  CHECK(tied.params().size() < untied);
}

TEST_CASE("networks are deterministic in their seed") {
  Rng rng(5);
  const auto x = random_grids(2, {32, 32, 32}, rng);
  Classifier<double> a(tiny_classifier(), 7), b(tiny_classifier(), 7), c(tiny_classifier(), 8);
  CHECK(a.forward(x, nn::Mode::Train) == b.forward(x, nn::Mode::Train));
  CHECK(!(a.forward(x, nn::Mode::Eval) == c.forward(x, nn::Mode::Eval)));
}

TEST_CASE("composite loss") {
  Rng rng(11);
  Classifier<double> clf(tiny_classifier(), 4);
  const auto target = random_grids(2, {32, 32, 32}, rng);
  auto pred = random_tensor(target.shape(), rng, 0.05, 0.95);
  const std::array<std::size_t, 2> cls{5, 7};
  const auto labels = one_hot<double>(cls);
  const auto before = classifier_bytes(clf);
  Tensor<double>* no_grad = nullptr;

  SUBCASE("alpha 0 is exactly the L2 term") {
    Tensor<double> g;
    const auto v = composite_loss(pred, target, clf, labels, 0.0, &g);
    CHECK(v.total == ops::l2_loss(pred, target));
    CHECK(g == ops::l2_loss_backward(pred, target));
  }
  SUBCASE("alpha 0.1 combines the two module-level losses") {
    const auto v = composite_loss(pred, target, clf, labels, 0.1, no_grad);
    const double l2 = ops::l2_loss(pred, target);
    const double ce = ops::cross_entropy(clf.forward(pred, nn::Mode::Eval), labels);
    clf.clear_cache();
    CHECK(v.l2_term == doctest::Approx(l2).epsilon(1e-14));
    CHECK(v.ce_term == doctest::Approx(ce).epsilon(1e-14));
    CHECK(v.total == doctest::Approx(l2 + 0.1 * ce).epsilon(1e-14));
  }
  SUBCASE("gradient matches a directional finite difference") {
    Tensor<double> g;
    composite_loss(pred, target, clf, labels, 0.1, &g);
    // sparse direction: fewer pooling and leaky kinks crossed by the stencil
    Tensor<double> d(pred.shape());
    for (int i = 0; i < 64; ++i) d[rng.below(d.size())] = rng.uniform(-1, 1);
    const double h = 1e-6;
    auto shifted = [&](double s) {
      Tensor<double> p = pred;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += s * d[i];
      return composite_loss(p, target, clf, labels, 0.1, no_grad).total;
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    CHECK(dot(g, d) == doctest::Approx(numeric).epsilon(1e-5));
  }
  SUBCASE("classifier parameters and gradients stay untouched") {
    Tensor<double> g;
    composite_loss(pred, target, clf, labels, 0.1, &g);
    CHECK(classifier_bytes(clf) == before);
    for (const auto& p : clf.params())
      for (double v : p.tensor->grad()) CHECK(v == 0.0);
  }
  SUBCASE("negative alpha is rejected") {
    CHECK_THROWS_AS(composite_loss(pred, target, clf, labels, -0.1, no_grad), Error);
  }
}

TEST_CASE("classifier config validation") {
  auto c = ClassifierConfig::reduced();
  c.channels.pop_back();
  CHECK_THROWS_AS(c.validate(), Error);
  auto s = SimulatorConfig::reduced();
  s.decoder_blocks.pop_back();
  CHECK_THROWS_AS(s.validate(), Error);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "voxcast/train.hpp"

using namespace voxcast;
namespace fs = std::filesystem;

namespace {

GridStore tiny_store(std::size_t augment, PlaceholderType t = PlaceholderType::C) {
  DatasetManifest m;
  m.augment_count = augment;
  m.types = {t};
  return gen_dataset(m, 21);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("voxcast_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("Adam follows the scripted oracle on a quadratic for 100 steps") {
  Rng rng(3);
  const std::size_t n = 17;
  std::vector<double> a(n), c(n), ref(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = rng.uniform(0.5, 4), c[i] = rng.uniform(-2, 2), ref[i] = rng.uniform(-3, 3);
  Tensor<double> p({n}, std::span<const double>(ref)), g({n});
  AdamState<double> state;
  state.options = {0.01, 0.9, 0.999, 1e-8};
  oracle::ScriptedAdam oracle_adam{0.01, 0.9, 0.999, 1e-8, {}, {}};
  double worst = 0;
  for (int step = 0; step < 100; ++step) {
    std::vector<double> gv(n);
    for (std::size_t i = 0; i < n; ++i) gv[i] = a[i] * (ref[i] - c[i]);
    for (std::size_t i = 0; i < n; ++i) g[i] = a[i] * (p[i] - c[i]);
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&g};
    adam_step<double>(ps, gs, state);
    oracle_adam.step(ref, gv);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(p[i] - ref[i]));
  }
  CHECK(worst < 1e-10);
  CHECK(state.step == 100);

  SUBCASE("optimizer block round-trip") {
    const auto block = state.to_block({"w"});
    const auto back = AdamState<double>::from_block(block);
    CHECK(back.step == state.step);
    CHECK(back.m[0] == state.m[0]);
    CHECK(back.v[0] == state.v[0]);
    CHECK(back.options.lr == 0.01);
  }
  SUBCASE("shape mismatch") {
    Tensor<double> wrong({n + 1});
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&wrong};
    CHECK_THROWS_AS(adam_step<double>(ps, gs, state), Error);
  }
}

TEST_CASE("row split is disjoint, exhaustive and puts row 3 in test") {
  const auto store = tiny_store(2);
  const auto [train, test] = split_rows(store);
  CHECK(train.size() + test.size() == store.size());
  CHECK(test.size() * 4 == store.size());
  for (const auto& r : test.records) CHECK(r.row == 3);
  for (const auto& r : train.records) CHECK(r.row != 3);
  GridStore untagged = store;
  untagged.records[0].row = 0;
  CHECK_THROWS_AS(split_rows(untagged), Error);
}

TEST_CASE("windows are legal, balanced and reproducible") {
  const auto store = tiny_store(2);
  const auto w = make_windows(store, 30, 4);
  CHECK(w.size() == 5 * 30);
  std::array<int, 5> per{};
  for (const auto& s : w) {
    CHECK_NOTHROW(validate_window(store, s));
    CHECK(s.target_label == s.window + 4);
    ++per[std::size_t(s.window)];
  }
  for (int c : per) CHECK(c == 30);
  const auto again = make_windows(store, 30, 4);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(again[i].inputs == w[i].inputs);
    CHECK(again[i].target == w[i].target);
  }

  SUBCASE("illegal windows are rejected") {
    auto bad = w[0];
    std::swap(bad.inputs[0], bad.inputs[1]);
    CHECK_THROWS_AS(validate_window(store, bad), Error);
  }
  SUBCASE("missing triplets") {
    GridStore partial;
    for (const auto& r : store.records)
      if (r.class_index() != 6) partial.records.push_back(r);
    CHECK_THROWS_AS(make_windows(partial, 5, 1), Error);
  }
}

TEST_CASE("metric rows and labels") {
  CHECK(std::string(kMetricHeader) == "epoch, step, loss, l2_term, ce_term, lr");
  CHECK(format_metric_row({2, 17, 1.5, 1.25, 2.5, 0.001}) == "2, 17, 1.5, 1.25, 2.5, 0.001");
  CHECK(arch_label(0.0) == "arch-1");
  CHECK(arch_label(0.1) == "arch-2");
  TrainPlan p;
  CHECK(p.epochs == 20);
  p.batch = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("classifier and simulator runs: determinism, logs and frozen classifier") {
  const auto store = tiny_store(2);
  const auto [train, test] = split_rows(store);
  TrainPlan plan;
  plan.epochs = 2;
  plan.batch = 16;
  plan.seed = 9;
  plan.label = "classifier";
  const auto dir1 = scratch("run1"), dir2 = scratch("run2");
  plan.out_dir = dir1;
  const auto r1 = train_classifier<float>(train, test, PlaceholderType::C, ClassifierConfig::reduced(), plan);
  plan.out_dir = dir2;
  const auto r2 = train_classifier<float>(train, test, PlaceholderType::C, ClassifierConfig::reduced(), plan);
  CHECK(r1.epochs.size() == 2);
  CHECK(checkpoint_bytes(r1.checkpoint) == checkpoint_bytes(r2.checkpoint));
  CHECK(slurp(dir1 / "classifier_C_metrics.log") == slurp(dir2 / "classifier_C_metrics.log"));
  CHECK(fs::exists(dir1 / "classifier_C.vfck"));
  CHECK(fs::exists(dir1 / "classifier_C_run.manifest"));
  CHECK(r1.checkpoint.kind == ModelKind::Classifier);
  CHECK(r1.checkpoint.meta.count("test_mean_f") == 1);

  const std::size_t steps_per_epoch = (train.size() + plan.batch - 1) / plan.batch;
  CHECK(r1.steps.size() == 2 * steps_per_epoch);
  for (std::size_t i = 0; i < r1.steps.size(); ++i) CHECK(r1.steps[i].step == i + 1);

  CHECK_THROWS_AS(train_classifier<float>(train, test, PlaceholderType::A, ClassifierConfig::reduced(), plan), Error);

  const auto clf_before = checkpoint_bytes(r1.checkpoint);
  const auto windows = make_windows(train, 2, 5);
  TrainPlan sp;
  sp.epochs = 1;
  sp.batch = 4;
  sp.seed = 3;
  for (double alpha : {0.0, 0.1}) {
    sp.alpha = alpha;
    sp.out_dir = dir1;
    const auto s1 = train_simulator<float>(train, windows, r1.checkpoint, SimulatorConfig::reduced(), sp);
    sp.out_dir = dir2;
    const auto s2 = train_simulator<float>(train, windows, r1.checkpoint, SimulatorConfig::reduced(), sp);
    CHECK(checkpoint_bytes(s1.checkpoint) == checkpoint_bytes(s2.checkpoint));
    CHECK(s1.checkpoint.meta.at("label") == arch_label(alpha));
    CHECK(checkpoint_bytes(r1.checkpoint) == clf_before);
    if (alpha == 0.0)
      for (const auto& row : s1.steps) CHECK(row.loss == row.l2_term);
    const auto log = dir1 / ("simulator_C_" + arch_label(alpha) + "_metrics.log");
    CHECK(slurp(log) == slurp(dir2 / log.filename()));
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

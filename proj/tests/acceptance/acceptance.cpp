// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "voxcast/checkpoint.hpp"
#include "voxcast/eval.hpp"
#include "voxcast/gradcheck.hpp"
#include "voxcast/runtime.hpp"
#include "voxcast/train.hpp"

using namespace voxcast;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Desk-scale protocol for the learning criteria (6, 7).
constexpr std::size_t kAugment = 16;
constexpr std::uint64_t kDataSeed = 7;
constexpr std::uint64_t kClassifierSeed = 3;
constexpr std::uint64_t kSimulatorSeed = 5;
constexpr std::size_t kSimPerWindow = 100;
constexpr std::size_t kSimTestPerWindow = 40;
constexpr std::size_t kSimEpochs = 20;
constexpr double kSimLr = 1e-2;

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void note(const char* fmt, auto... args) {
  std::printf("    ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  const auto res = run_gradient_suite();
  const double secs = seconds_since(t0);
  bool ok = res.size() == 9;
  double worst = 0;
  for (const auto& c : res) {
    note("%-14s worst rel err %.3e over %zu checks", c.layer.c_str(), c.worst_error, c.trials);
    ok = ok && c.passed && c.worst_error < 1e-4;
    worst = std::max(worst, c.worst_error);
  }
  ok = ok && secs < 120.0;
  report(1, ok, fmt("gradient suite, %zu layers, worst %.3e < 1e-4, %.1f s < 120 s", res.size(), worst, secs));
}

void criterion_adjoint() {
  const auto r = run_adjoint_suite(100, 1, 1e-10);
  report(2, r.passed && r.cases == 100 && r.worst_error < 1e-10,
         fmt("conv3d/tconv3d adjoint over %zu geometries, worst %.3e < 1e-10", r.cases, r.worst_error));
}

void criterion_shapes() {
  Rng rng(1);
  Tensor<float> grid({1, 1, 32, 32, 64});
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = rng.uniform() < 0.1 ? 1.0f : 0.0f;
  bool ok = true;

  Simulator<float> sim(SimulatorConfig{}, 1);
  const auto enc = sim.encode(0, grid, nn::Mode::Eval);
  ok = ok && enc.shape() == Shape{1, 512, 6, 6, 22};
  std::vector<Tensor<float>> hist(4, grid);
  const auto out = sim.forward(hist, nn::Mode::Eval);
  ok = ok && out.shape() == Shape{1, 1, 32, 32, 64};
  sim.clear_cache();

  Classifier<float> clf(ClassifierConfig{}, 1);
  const auto scores = clf.forward(grid, nn::Mode::Eval);
  ok = ok && scores.shape() == Shape{1, 9};
  for (float v : scores.data()) ok = ok && v > 0.0f && v < 1.0f;

  report(3, ok, fmt("encoder %s, simulator %s, classifier %s", shape_string(enc.shape()).c_str(),
                    shape_string(out.shape()).c_str(), shape_string(scores.shape()).c_str()));
}

void criterion_oracles() {
  Rng rng(44);
  double conv_worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = trial == 0 ? 3 : 1 + rng.below(4), s = trial == 0 ? 1 : 1 + rng.below(3);
    const std::size_t p = trial == 0 ? 0 : rng.below((k + 1) / 2);
    const std::size_t c = trial == 0 ? 1 : 1 + rng.below(3), o = trial == 0 ? 1 : 1 + rng.below(3);
    const std::size_t X = trial == 0 ? 5 : k + rng.below(5), Y = trial == 0 ? 5 : k + rng.below(5),
                      Z = trial == 0 ? 5 : k + rng.below(6);
    const auto x = oracle::random_tensor({1, c, X, Y, Z}, rng);
    const auto w = oracle::random_tensor({o, c, k, k, k}, rng);
    const auto b = oracle::random_tensor({o}, rng);
    const auto y = ops::conv3d_forward(x, w, b, {k, s, p});
    const auto ref = oracle::conv3d(x, w, b, k, s, p);
    if (y.shape() != ref.shape()) conv_worst = INFINITY;
    else
      for (std::size_t i = 0; i < y.size(); ++i)
        conv_worst = std::max(conv_worst, std::abs(y[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  }

  const std::size_t n = 23;
  std::vector<double> a(n), target(n), ref(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = rng.uniform(0.5, 4), target[i] = rng.uniform(-2, 2), ref[i] = rng.uniform(-3, 3);
  Tensor<double> param({n}, std::span<const double>(ref)), grad({n});
  AdamState<double> state;
  oracle::ScriptedAdam scripted{1e-3, 0.9, 0.999, 1e-8, {}, {}};
  double adam_worst = 0;
  for (int step = 0; step < 100; ++step) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = a[i] * (ref[i] - target[i]), grad[i] = a[i] * (param[i] - target[i]);
    Tensor<double>* ps[] = {&param};
    const Tensor<double>* gs[] = {&grad};
    adam_step<double>(ps, gs, state);
    scripted.step(ref, g);
    for (std::size_t i = 0; i < n; ++i) adam_worst = std::max(adam_worst, std::abs(param[i] - ref[i]));
  }

  double prf_worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix m;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0, count = 30 + rng.below(400); i < count; ++i) {
      const std::size_t t = rng.below(9), y = rng.uniform() < 0.5 ? t : rng.below(9);
      m.add(t, y);
      pairs.emplace_back(t, y);
    }
    const auto got = prf(m);
    const auto want = oracle::recount(pairs);
    for (std::size_t c = 0; c < 9; ++c)
      prf_worst = std::max({prf_worst, std::abs(got.precision[c] - want.p[c]), std::abs(got.recall[c] - want.r[c]),
                            std::abs(got.f_score[c] - want.f[c])});
  }
  report(4, conv_worst <= 1e-12 && adam_worst <= 1e-10 && prf_worst <= 1e-12,
         fmt("conv3d vs six-loop sum %.2e <= 1e-12; Adam vs scripted, 100 steps %.2e <= 1e-10; prf vs recount on 20 "
             "matrices %.2e",
             conv_worst, adam_worst, prf_worst));
}

void criterion_protocol() {
  const auto t0 = Clock::now();
  const DatasetManifest m;
  bool ok = m.augment_count == 100 && m.base_clouds_per_type() == 108;
  std::string detail;
  for (auto t : kAllTypes) {
    const auto store = gen_dataset_type(m, t, 1);
    const auto counts = store.class_counts(t);
    const auto [train, test] = split_rows(store);
    const auto wtr = make_windows(train, 20000 / kWindowCount, 2);
    const auto wte = make_windows(test, 5000 / kWindowCount, 3);
    std::array<std::size_t, kWindowCount> per{};
    for (const auto& w : wtr) ++per[std::size_t(w.window)];
    bool type_ok = store.size() == 10800 && train.size() == 8100 && test.size() == 2700 && wtr.size() == 20000 &&
                   wte.size() == 5000;
    for (auto c : counts) type_ok = type_ok && c == 1200;
    for (auto c : per) type_ok = type_ok && c == 4000;
    for (std::size_t i = 0; i < wtr.size(); i += 97) validate_window(train, wtr[i]);
    note("%c: %zu grids, %zu/%zu split, %zu/%zu windows over %d windows", type_letter(t), store.size(), train.size(),
         test.size(), wtr.size(), wte.size(), kWindowCount);
    ok = ok && type_ok;
  }
  report(5, ok, fmt("10800 grids per type, 1200 per class, 8100/2700, 5 windows, 20000/5000 samples (%.0f s)",
                    seconds_since(t0)));
}

struct TypeOutcome {
  double classifier_f = 0;
  double arch1 = 0, arch2 = 0;
  bool frozen_bytes = true;
};

TypeOutcome run_type(PlaceholderType t) {
  TypeOutcome out;
  DatasetManifest m;
  m.augment_count = kAugment;
  m.types = {t};
  const auto store = gen_dataset_type(m, t, kDataSeed);
  const auto [train, test] = split_rows(store);

  auto t0 = Clock::now();
  TrainPlan cp;
  cp.epochs = 20;
  cp.batch = 64;
  cp.seed = kClassifierSeed;
  cp.label = "classifier";
  const auto clf = train_classifier<float>(train, test, t, ClassifierConfig::reduced(), cp).checkpoint;
  const auto ev = eval_classifier(clf, test);
  out.classifier_f = ev.report.mean_all;
  note("%c classifier: mean F %.4f, accuracy %.4f, epoch %u (%.0f s)", type_letter(t), ev.report.mean_all,
       ev.report.accuracy, clf.epoch, seconds_since(t0));

  const auto before = checkpoint_bytes(clf);
  const auto wtr = make_windows(train, kSimPerWindow, 11);
  const auto wte = make_windows(test, kSimTestPerWindow, 12);
  for (double alpha : {0.0, 0.1}) {
    t0 = Clock::now();
    TrainPlan sp;
    sp.epochs = kSimEpochs;
    sp.batch = 16;
    sp.seed = kSimulatorSeed;
    sp.alpha = alpha;
    sp.adam.lr = kSimLr;
    const auto sim = train_simulator<float>(train, wtr, clf, SimulatorConfig::reduced(), sp).checkpoint;
    const double f = eval_simulation(sim, clf, test, wte).report.mean_late;
    (alpha == 0.0 ? out.arch1 : out.arch2) = f;
    note("%c %s: mean F V-IX %.4f (%.0f s)", type_letter(t), arch_label(alpha).c_str(), f, seconds_since(t0));
  }
  out.frozen_bytes = checkpoint_bytes(clf) == before;
  return out;
}

void criteria_learning() {
  bool cls_ok = true, floor_ok = true, frozen_ok = true;
  int wins = 0;
  std::string cls_detail, sim_detail;
  for (auto t : kAllTypes) {
    const auto r = run_type(t);
    const double need = default_shape(t) == DepositShape::Ellipse ? 0.90 : 0.75;
    cls_ok = cls_ok && r.classifier_f >= need;
    cls_detail += fmt(" %c %.3f>=%.2f", type_letter(t), r.classifier_f, need);
    wins += r.arch2 - r.arch1 >= 0.10;
    floor_ok = floor_ok && r.arch2 >= 0.60;
    sim_detail += fmt(" %c %.3f/%.3f", type_letter(t), r.arch1, r.arch2);
    frozen_ok = frozen_ok && r.frozen_bytes;
  }
  report(6, cls_ok, "classifier mean F after 20 epochs:" + cls_detail);
  report(7, wins >= 4 && floor_ok,
         fmt("arch-2 beats arch-1 by >= 0.10 on %d/5 types (need 4), arch-2 >= 0.60 for all: %s; arch-1/arch-2:", wins,
             floor_ok ? "yes" : "no") +
             sim_detail);
  // The no-gradient half of the frozen contract is checked directly below.
  if (!frozen_ok) report(9, false, "classifier checkpoint changed during simulator training");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  DatasetManifest m;
  m.augment_count = 2;
  m.types = {PlaceholderType::D};
  const auto store = gen_dataset_type(m, PlaceholderType::D, 31);
  const auto [train, test] = split_rows(store);
  const auto wtr = make_windows(train, 3, 1), wte = make_windows(test, 2, 2);
  const auto root = fs::temp_directory_path() / "voxcast_acceptance";
  fs::remove_all(root);

  std::vector<std::vector<std::uint8_t>> clf_bytes, sim_bytes;
  std::vector<std::string> reports, logs;
  for (int run = 0; run < 2; ++run) {
    TrainPlan cp;
    cp.epochs = 2;
    cp.batch = 16;
    cp.seed = 8;
    cp.out_dir = root / std::to_string(run);
    const auto clf = train_classifier<float>(train, test, PlaceholderType::D, ClassifierConfig::reduced(), cp);
    TrainPlan sp;
    sp.epochs = 1;
    sp.batch = 4;
    sp.seed = 8;
    sp.alpha = 0.1;
    sp.out_dir = cp.out_dir;
    const auto sim = train_simulator<float>(train, wtr, clf.checkpoint, SimulatorConfig::reduced(), sp);
    clf_bytes.push_back(checkpoint_bytes(clf.checkpoint));
    sim_bytes.push_back(checkpoint_bytes(sim.checkpoint));
    reports.push_back(render_csv({eval_classifier(clf.checkpoint, test).report,
                                  eval_simulation(sim.checkpoint, clf.checkpoint, test, wte).report}));
    logs.push_back(slurp(*cp.out_dir / "classifier_D_metrics.log") +
                   slurp(*cp.out_dir / "simulator_D_arch-2_metrics.log") + slurp(*cp.out_dir / "classifier_D.vfck") +
                   slurp(*cp.out_dir / "simulator_D_arch-2.vfck"));
  }
  fs::remove_all(root);
  report(8, clf_bytes[0] == clf_bytes[1] && sim_bytes[0] == sim_bytes[1] && reports[0] == reports[1] && logs[0] == logs[1],
         fmt("two seeded runs: classifier %zu B, simulator %zu B, report %zu B, logs and files byte-identical",
             clf_bytes[0].size(), sim_bytes[0].size(), reports[0].size()));
}

void criterion_frozen() {
  DatasetManifest m;
  m.augment_count = 2;
  m.types = {PlaceholderType::B};
  const auto store = gen_dataset_type(m, PlaceholderType::B, 5);
  const auto [train, test] = split_rows(store);
  TrainPlan cp;
  cp.epochs = 1;
  cp.batch = 32;
  const auto ckpt = train_classifier<float>(train, test, PlaceholderType::B, ClassifierConfig::reduced(), cp).checkpoint;
  const auto before = checkpoint_bytes(ckpt);

  TrainPlan sp;
  sp.epochs = 1;
  sp.batch = 4;
  sp.alpha = 0.1;
  train_simulator<float>(train, make_windows(train, 2, 4), ckpt, SimulatorConfig::reduced(), sp);
  const bool bytes_same = checkpoint_bytes(ckpt) == before;

  // Backpropagate the composite loss through the loaded classifier and
  // inspect every parameter gradient.
  auto frozen = load_classifier<float>(ckpt);
  Rng rng(3);
  Tensor<float> pred({2, 1, 32, 32, 64}), target({2, 1, 32, 32, 64});
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = float(rng.uniform(0.05, 0.95)), target[i] = rng.uniform() < 0.1;
  const std::array<std::size_t, 2> cls{4, 8};
  Tensor<float> g;
  composite_loss(pred, target, frozen, one_hot<float>(cls), 0.1, &g);
  std::size_t nonzero = 0, total = 0;
  for (const auto& p : frozen.params())
    for (float v : p.tensor->grad()) nonzero += v != 0.0f, ++total;
  bool input_grad = false;
  for (float v : g.data()) input_grad = input_grad || v != 0.0f;
  Checkpoint after = ckpt;
  after.tensors = capture(frozen.params());
  report(9, bytes_same && nonzero == 0 && input_grad && checkpoint_bytes(after) == before,
         fmt("classifier bytes identical before/after simulator training; %zu nonzero of %zu parameter-gradient "
             "entries after composite backward",
             nonzero, total));
}

}  // namespace

int main() {
  tune_allocator();
  const auto t0 = Clock::now();
  criterion_gradients();
  criterion_adjoint();
  criterion_shapes();
  criterion_oracles();
  criterion_protocol();
  criteria_learning();
  criterion_determinism();
  criterion_frozen();
  std::printf("%d criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}

#include "voxcast/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "voxcast/rng.hpp"

namespace voxcast {

namespace {

std::string type_key(PlaceholderType t) { return std::string(1, type_letter(t)); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

template <typename T>
OptimizerBlock AdamState<T>::to_block(const std::vector<std::string>& names) const {
  OptimizerBlock b;
  b.step = step;
  b.lr = options.lr;
  b.beta1 = options.beta1;
  b.beta2 = options.beta2;
  b.epsilon = options.epsilon;
  require(m.empty() || names.size() == m.size(), ErrorKind::ShapeMismatch, "optimizer state and parameter names differ");
  for (std::size_t i = 0; i < m.size(); ++i) {
    b.first_moment.push_back(NamedTensor::from(names[i], m[i]));
    b.second_moment.push_back(NamedTensor::from(names[i], v[i]));
  }
  return b;
}

template <typename T>
AdamState<T> AdamState<T>::from_block(const OptimizerBlock& b) {
  AdamState s;
  s.step = b.step;
  s.options = {b.lr, b.beta1, b.beta2, b.epsilon};
  require(b.first_moment.size() == b.second_moment.size(), ErrorKind::FormatError, "optimizer moment counts differ");
  for (std::size_t i = 0; i < b.first_moment.size(); ++i) {
    s.m.push_back(b.first_moment[i].to_tensor<T>());
    s.v.push_back(b.second_moment[i].to_tensor<T>());
  }
  return s;
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state) {
  require(params.size() == grads.size(), ErrorKind::ShapeMismatch, "adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorKind::ShapeMismatch,
          "adam_step: optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(*grads[i], params[i]->shape(), "adam_step gradient");
    require_shape(state.m[i], params[i]->shape(), "adam_step first moment");
    require_shape(state.v[i], params[i]->shape(), "adam_step second moment");
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      const double gk = g[k];
      const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * gk;
      const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - o.lr * (mk / bc1) / (std::sqrt(vk / bc2) + o.epsilon));
    }
  }
}

template <typename T>
void adam_step(const std::vector<nn::ParamRef<T>>& params, AdamState<T>& state) {
  std::vector<Tensor<T>*> ps;
  std::vector<Tensor<T>> grads;
  std::vector<const Tensor<T>*> gs;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    ps.push_back(p.tensor.get());
    const auto g = p.tensor->ensure_grad();
    grads.emplace_back(p.tensor->shape(), std::span<const T>(g.data(), g.size()));
  }
  for (const auto& g : grads) gs.push_back(&g);
  adam_step<T>(ps, gs, state);
}

std::pair<GridStore, GridStore> split_rows(const GridStore& store, int test_row) {
  GridStore train, test;
  train.meta = test.meta = store.meta;
  for (const auto& r : store.records) {
    if (r.row == 0)
      fail(ErrorKind::MissingRowTag, "grid of circuit " + std::to_string(r.circuit) + " has no row tag");
    (r.row == test_row ? test : train).records.push_back(r);
  }
  train.meta["split"] = "train";
  test.meta["split"] = "test";
  return {std::move(train), std::move(test)};
}

std::vector<WindowSample> make_windows(const GridStore& store, std::size_t per_window, std::uint64_t seed) {
  std::vector<WindowSample> out;
  const auto types = store.types();
  if (types.empty()) fail(ErrorKind::InsufficientTriplets, "store holds no grids");
  for (auto t : types) {
    std::vector<std::vector<std::size_t>> by_class(kNumClasses);
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& r = store.records[i];
      if (r.type() == t && r.class_index() >= 0 && r.class_index() < int(kNumClasses))
        by_class[std::size_t(r.class_index())].push_back(i);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (by_class[c].empty())
        fail(ErrorKind::InsufficientTriplets, "type " + type_key(t) + " has no grids of class " + std::to_string(c));
    for (int w = 0; w < kWindowCount; ++w) {
      Rng rng(derive_seed(seed, {0x77d0, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(w)}));
      for (std::size_t n = 0; n < per_window; ++n) {
        WindowSample s;
        s.window = w;
        s.type = t;
        for (int k = 0; k < kWindowLength; ++k) {
          const auto& pool = by_class[std::size_t(w + k)];
          const std::size_t pick = pool[rng.below(pool.size())];
          if (k < kWindowLength - 1)
            s.inputs[std::size_t(k)] = pick;
          else
            s.target = pick;
        }
        s.target_label = w + kWindowLength - 1;
        out.push_back(s);
      }
    }
  }
  return out;
}

void validate_window(const GridStore& store, const WindowSample& w) {
  auto check = [&](std::size_t idx, int expect_class) {
    require(idx < store.size(), ErrorKind::ConfigError, "window index outside the store");
    const auto& r = store.records[idx];
    require(r.type() == w.type, ErrorKind::ConfigError, "window mixes placeholder types");
    require(r.class_index() == expect_class, ErrorKind::ConfigError, "window triplets are not consecutive");
  };
  for (int k = 0; k < kWindowLength - 1; ++k) check(w.inputs[std::size_t(k)], w.window + k);
  check(w.target, w.window + kWindowLength - 1);
  require(w.target_label == w.window + kWindowLength - 1, ErrorKind::ConfigError, "window target label mismatch");
}

void TrainPlan::validate() const {
  require(epochs >= 1, ErrorKind::ConfigError, "epochs must be >= 1");
  require(batch >= 1, ErrorKind::ConfigError, "batch must be >= 1");
  require(alpha >= 0.0, ErrorKind::ConfigError, "alpha must be >= 0");
  require(adam.lr > 0.0, ErrorKind::ConfigError, "learning rate must be positive");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, ErrorKind::ConfigError,
          "Adam betas must lie in [0, 1)");
  require(eval_batch >= 1, ErrorKind::ConfigError, "eval batch must be >= 1");
}

std::string format_metric_row(const MetricRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu, %zu, %.9g, %.9g, %.9g, %.9g", r.epoch, r.step, r.loss, r.l2_term, r.ce_term, r.lr);
  return buf;
}

std::string arch_label(double alpha) { return alpha == 0.0 ? "arch-1" : "arch-2"; }

template <typename T>
Tensor<T> batch_grids(const GridStore& store, std::span<const std::size_t> indices) {
  std::vector<const OccupancyGrid*> grids;
  grids.reserve(indices.size());
  for (auto i : indices) grids.push_back(&store.records.at(i).grid);
  return grids_to_tensor<T>(grids);
}

namespace {

// Batch boundaries over n items; a trailing batch of one joins its
// predecessor because batch normalization needs two samples.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) out.emplace_back(s, std::min(n, s + batch));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

class RunFiles {
 public:
  RunFiles(const TrainPlan& plan, std::string stem) : stem_(std::move(stem)) {
    if (!plan.out_dir) return;
    dir_ = *plan.out_dir;
    std::filesystem::create_directories(dir_);
    log_.open(dir_ / (stem_ + "_metrics.log"), std::ios::trunc);
    if (!log_) fail(ErrorKind::IoError, "cannot write metric log in " + dir_.string());
    log_ << kMetricHeader << '\n';
  }

  bool active() const { return !dir_.empty(); }

  void row(const MetricRow& r) {
    if (log_.is_open()) log_ << format_metric_row(r) << '\n';
  }

  void manifest(const std::map<std::string, std::string>& kv) {
    if (active()) write_key_values(dir_ / (stem_ + "_run.manifest"), kv);
  }

  void checkpoint(const Checkpoint& c, const std::string& suffix) {
    if (active()) save_checkpoint(dir_ / (stem_ + suffix + ".vfck"), c);
  }

 private:
  std::string stem_;
  std::filesystem::path dir_;
  std::ofstream log_;
};

std::map<std::string, std::string> plan_kv(const TrainPlan& p) {
  return {
      {"plan.epochs", std::to_string(p.epochs)},
      {"plan.batch", std::to_string(p.batch)},
      {"plan.seed", std::to_string(p.seed)},
      {"plan.alpha", fmt(p.alpha)},
      {"plan.checkpoint_every", std::to_string(p.checkpoint_every)},
      {"plan.lr", fmt(p.adam.lr)},
      {"plan.beta1", fmt(p.adam.beta1)},
      {"plan.beta2", fmt(p.adam.beta2)},
      {"plan.epsilon", fmt(p.adam.epsilon)},
      {"plan.mean_gradient", p.mean_gradient ? "1" : "0"},
      {"plan.ce_normalize", p.ce.normalize ? "1" : "0"},
      {"plan.select_best", p.select_best ? "1" : "0"},
      {"plan.label", p.label},
  };
}

template <typename T>
std::vector<std::string> trainable_names(const std::vector<nn::ParamRef<T>>& params) {
  std::vector<std::string> names;
  for (const auto& p : params)
    if (p.trainable) names.push_back(p.name);
  return names;
}

template <typename T, typename Model>
Checkpoint snapshot(Model& model, ModelKind kind, PlaceholderType type, std::map<std::string, std::string> config,
                    const AdamState<T>& adam, const TrainPlan& plan, std::size_t epoch) {
  Checkpoint c;
  c.kind = kind;
  c.type = type;
  c.config = std::move(config);
  const auto params = model.params();
  c.tensors = capture(params);
  c.optimizer = adam.to_block(trainable_names(params));
  c.seed = plan.seed;
  c.epoch = static_cast<std::uint32_t>(epoch);
  c.meta = plan_kv(plan);
  c.meta["label"] = plan.label;
  return c;
}

}  // namespace

template <typename T>
TrainResult train_classifier(const GridStore& train, const GridStore& test, PlaceholderType type,
                             const ClassifierConfig& config, const TrainPlan& plan, const ProgressFn& progress) {
  plan.validate();
  if (train.empty()) fail(ErrorKind::EmptyStore, "classifier training store is empty");
  for (const auto* store : {&train, &test})
    for (const auto& r : store->records) {
      if (r.type() != type)
        fail(ErrorKind::TypeMismatch, "grid of type " + type_key(r.type()) + " in a type " + type_key(type) + " run");
      require(r.class_index() >= 0 && r.class_index() < int(kNumClasses), ErrorKind::MetadataParse,
              "unlabeled grid in training data");
    }

  Classifier<T> model(config, derive_seed(plan.seed, {0xc1f, static_cast<std::uint64_t>(type)}));
  const auto params = model.params();
  AdamState<T> adam;
  adam.options = plan.adam;
  RunFiles files(plan, "classifier_" + type_key(type));
  auto manifest = plan_kv(plan);
  for (const auto& [k, v] : encode_config(config)) manifest["model." + k] = v;
  manifest["type"] = type_key(type);
  manifest["train_count"] = std::to_string(train.size());
  manifest["test_count"] = std::to_string(test.size());
  files.manifest(manifest);

  TrainResult res;
  std::optional<double> best_f;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    Rng rng(derive_seed(plan.seed, {0x5f1e, static_cast<std::uint64_t>(type), epoch}));
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (auto [lo, hi] : batch_ranges(order.size(), plan.batch)) {
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<std::size_t> cls;
      for (auto i : idx) cls.push_back(std::size_t(train.records[i].class_index()));
      const Tensor<T> labels = one_hot<T>(cls);
      const Tensor<T> scores = model.forward(batch_grids<T>(train, idx), nn::Mode::Train);
      ops::CrossEntropyOptions ce = plan.ce;
      ce.reduction = ops::Reduction::Sum;
      const double loss = ops::cross_entropy(scores, labels, ce);
      const double scale = plan.mean_gradient ? 1.0 / double(idx.size()) : 1.0;
      const Tensor<T> grad = ops::cross_entropy_backward(scores, labels, ce, scale);
      nn::zero_grads(params);
      model.backward(grad, {false, true});
      model.clear_cache();
      adam_step(params, adam);
      epoch_loss += loss;
      MetricRow row{epoch, ++step, loss, 0.0, loss, plan.adam.lr};
      files.row(row);
      res.steps.push_back(row);
    }
    EpochSummary summary{epoch, epoch_loss / double(train.size()), std::nullopt};

    Checkpoint snap = snapshot(model, ModelKind::Classifier, type, encode_config(config), adam, plan, epoch);
    if (!test.empty()) {
      EvalOptions eo;
      eo.batch = plan.eval_batch;
      const auto ev = eval_classifier(model, type, test, eo);
      summary.test_mean_f = ev.report.mean_all;
      snap.meta["test_mean_f"] = fmt(ev.report.mean_all);
    }
    if (plan.checkpoint_every && epoch % plan.checkpoint_every == 0) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_e%03zu", epoch);
      files.checkpoint(snap, suffix);
    }
    const bool better = summary.test_mean_f && (!best_f || *summary.test_mean_f > *best_f);
    if (epoch == 1 || !plan.select_best || test.empty() || better) {
      if (summary.test_mean_f) best_f = summary.test_mean_f;
      res.checkpoint = snap;
      res.selected_epoch = epoch;
    }
    if (epoch == plan.epochs) res.last = std::move(snap);
    res.epochs.push_back(summary);
    if (progress) progress(summary);
  }
  res.checkpoint.meta["selected_epoch"] = std::to_string(res.selected_epoch);
  res.last.meta["selected_epoch"] = std::to_string(plan.epochs);
  files.checkpoint(res.checkpoint, "");
  files.checkpoint(res.last, "_last");
  return res;
}

template <typename T>
TrainResult train_simulator(const GridStore& store, const std::vector<WindowSample>& windows, const Checkpoint& classifier,
                            const SimulatorConfig& config, const TrainPlan& plan, const ProgressFn& progress,
                            const WindowSet& monitor) {
  plan.validate();
  if (windows.empty()) fail(ErrorKind::EmptyStore, "no window samples to train on");
  if (classifier.kind != ModelKind::Classifier) fail(ErrorKind::FormatError, "frozen model is not a classifier");
  const PlaceholderType type = classifier.type;
  for (const auto& w : windows) {
    if (w.type != type)
      fail(ErrorKind::TypeMismatch, "window of type " + type_key(w.type) + " with a type " + type_key(type) + " classifier");
    validate_window(store, w);
  }

  Classifier<T> frozen = load_classifier<T>(classifier);
  SimulatorConfig cfg = config;
  cfg.alpha = plan.alpha;
  Simulator<T> sim(cfg, derive_seed(plan.seed, {0x51f, static_cast<std::uint64_t>(type)}));
  const auto params = sim.params();
  AdamState<T> adam;
  adam.options = plan.adam;
  const std::string label = plan.label.empty() ? arch_label(plan.alpha) : plan.label;
  TrainPlan run_plan = plan;
  run_plan.label = label;
  RunFiles files(run_plan, "simulator_" + type_key(type) + "_" + label);
  auto manifest = plan_kv(run_plan);
  for (const auto& [k, v] : encode_config(cfg)) manifest["model." + k] = v;
  manifest["type"] = type_key(type);
  manifest["window_count"] = std::to_string(windows.size());
  manifest["classifier_epoch"] = std::to_string(classifier.epoch);
  files.manifest(manifest);

  TrainResult res;
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  std::vector<std::size_t> idx;
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    Rng rng(derive_seed(plan.seed, {0x5f15, static_cast<std::uint64_t>(type), epoch}));
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (auto [lo, hi] : batch_ranges(order.size(), plan.batch)) {
      const std::size_t b = hi - lo;
      std::vector<Tensor<T>> history;
      idx.resize(b);
      for (std::size_t slot = 0; slot < 4; ++slot) {
        for (std::size_t i = 0; i < b; ++i) idx[i] = windows[order[lo + i]].inputs[slot];
        history.push_back(batch_grids<T>(store, idx));
      }
      std::vector<std::size_t> cls(b);
      for (std::size_t i = 0; i < b; ++i) {
        idx[i] = windows[order[lo + i]].target;
        cls[i] = std::size_t(windows[order[lo + i]].target_label);
      }
      const Tensor<T> target = batch_grids<T>(store, idx);
      const Tensor<T> labels = one_hot<T>(cls);
      const Tensor<T> pred = sim.forward(history, nn::Mode::Train);
      Tensor<T> grad;
      const auto v = composite_loss(pred, target, frozen, labels, plan.alpha, &grad, ops::Reduction::Sum, plan.ce);
      if (plan.mean_gradient) {
        const T s = T(1) / static_cast<T>(b);
        for (auto& g : grad.data()) g *= s;
      }
      nn::zero_grads(params);
      sim.backward(grad);
      sim.clear_cache();
      adam_step(params, adam);
      epoch_loss += v.total;
      MetricRow row{epoch, ++step, v.total, v.l2_term, v.ce_term, plan.adam.lr};
      files.row(row);
      res.steps.push_back(row);
    }
    EpochSummary summary{epoch, epoch_loss / double(windows.size()), std::nullopt};
    Checkpoint snap = snapshot(sim, ModelKind::Simulator, type, encode_config(cfg), adam, run_plan, epoch);
    snap.meta["classifier_epoch"] = std::to_string(classifier.epoch);
    if (monitor.store && monitor.windows && !monitor.windows->empty()) {
      EvalOptions eo;
      eo.batch = plan.eval_batch;
      const auto ev = eval_simulation(sim, frozen, type, *monitor.store, *monitor.windows, eo);
      summary.test_mean_f = ev.report.mean_late;
      snap.meta["test_mean_f"] = fmt(ev.report.mean_late);
    }
    if (plan.checkpoint_every && epoch % plan.checkpoint_every == 0) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_e%03zu", epoch);
      files.checkpoint(snap, suffix);
    }
    if (epoch == plan.epochs) {
      res.checkpoint = snap;
      res.last = std::move(snap);
      res.selected_epoch = epoch;
    }
    res.epochs.push_back(summary);
    if (progress) progress(summary);
  }
  files.checkpoint(res.checkpoint, "");
  return res;
}

#define VOXCAST_INSTANTIATE(T)                                                                                    \
  template struct AdamState<T>;                                                                                   \
  template void adam_step(std::span<Tensor<T>* const>, std::span<const Tensor<T>* const>, AdamState<T>&);         \
  template void adam_step(const std::vector<nn::ParamRef<T>>&, AdamState<T>&);                                    \
  template Tensor<T> batch_grids(const GridStore&, std::span<const std::size_t>);                                 \
  template TrainResult train_classifier<T>(const GridStore&, const GridStore&, PlaceholderType,                   \
                                           const ClassifierConfig&, const TrainPlan&, const ProgressFn&);          \
  template TrainResult train_simulator<T>(const GridStore&, const std::vector<WindowSample>&, const Checkpoint&, \
                                          const SimulatorConfig&, const TrainPlan&, const ProgressFn&,          \
                                          const WindowSet&);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast

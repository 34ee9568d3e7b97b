#include "voxcast/eval.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "voxcast/train.hpp"

namespace voxcast {

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  require(truth < kNumClasses && predicted < kNumClasses, ErrorKind::ConfigError, "class index out of range");
  ++counts[truth][predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (const auto& row : counts)
    for (auto v : row) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  return std::accumulate(counts[c].begin(), counts[c].end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (const auto& row : counts) s += row[c];
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) diag += counts[c][c];
  return static_cast<double>(diag) / static_cast<double>(n);
}

MetricReport prf(const ConfusionMatrix& m, std::vector<std::size_t> classes) {
  if (classes.empty()) {
    classes.resize(kNumClasses);
    std::iota(classes.begin(), classes.end(), std::size_t{0});
  }
  MetricReport r;
  r.classes = classes;
  double sum_f = 0.0, sum_late = 0.0;
  std::size_t n_late = 0;
  for (auto c : classes) {
    require(c < kNumClasses, ErrorKind::ConfigError, "class index out of range");
    const auto tp = static_cast<double>(m.counts[c][c]);
    const auto col = m.column_sum(c), row = m.row_sum(c);
    const double p = col == 0 ? 0.0 : tp / static_cast<double>(col);
    const double rc = row == 0 ? 0.0 : tp / static_cast<double>(row);
    const double f = p + rc == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc);
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f_score.push_back(f);
    sum_f += f;
    if (c >= kFirstLateClass) {
      sum_late += f;
      ++n_late;
    }
  }
  r.mean_all = sum_f / static_cast<double>(classes.size());
  r.mean_late = n_late == 0 ? 0.0 : sum_late / static_cast<double>(n_late);
  r.accuracy = m.accuracy();
  return r;
}

namespace {

std::string type_key(PlaceholderType t) { return std::string(1, type_letter(t)); }

std::vector<std::size_t> late_classes() {
  std::vector<std::size_t> c;
  for (std::size_t k = kFirstLateClass; k < kNumClasses; ++k) c.push_back(k);
  return c;
}

bool is_f32(const Checkpoint& c) { return !c.tensors.empty() && c.tensors.front().dtype == DType::F32; }

}  // namespace

template <typename T>
EvalResult eval_classifier(Classifier<T>& model, PlaceholderType type, const GridStore& test, const EvalOptions& opt) {
  require(opt.batch >= 1, ErrorKind::ConfigError, "eval batch must be >= 1");
  EvalResult res;
  std::vector<std::size_t> idx;
  auto flush = [&] {
    if (idx.empty()) return;
    const Tensor<T> scores = model.forward(batch_grids<T>(test, idx), nn::Mode::Eval);
    const auto pred = predict_classes(scores);
    for (std::size_t i = 0; i < idx.size(); ++i)
      res.confusion.add(static_cast<std::size_t>(test.records[idx[i]].class_index()), pred[i]);
    idx.clear();
  };
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = test.records[i];
    if (r.type() != type)
      fail(ErrorKind::TypeMismatch, "store grid of type " + type_key(r.type()) + " given to a type " + type_key(type) + " model");
    require(r.class_index() >= 0 && r.class_index() < int(kNumClasses), ErrorKind::MetadataParse, "unlabeled grid in test store");
    idx.push_back(i);
    if (idx.size() == opt.batch) flush();
  }
  flush();
  model.clear_cache();
  res.report = prf(res.confusion);
  res.report.type = type_key(type);
  res.report.label = "classifier";
  return res;
}

EvalResult eval_classifier(const Checkpoint& ckpt, const GridStore& test, const EvalOptions& opt) {
  if (is_f32(ckpt)) {
    auto model = load_classifier<float>(ckpt);
    return eval_classifier(model, ckpt.type, test, opt);
  }
  auto model = load_classifier<double>(ckpt);
  return eval_classifier(model, ckpt.type, test, opt);
}

template <typename T>
EvalResult eval_simulation(Simulator<T>& sim, Classifier<T>& clf, PlaceholderType type, const GridStore& store,
                           const std::vector<WindowSample>& windows, const EvalOptions& opt) {
  require(opt.batch >= 1, ErrorKind::ConfigError, "eval batch must be >= 1");
  EvalResult res;
  std::vector<const WindowSample*> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    std::vector<Tensor<T>> history;
    std::vector<std::size_t> idx(pending.size());
    for (std::size_t slot = 0; slot < 4; ++slot) {
      for (std::size_t i = 0; i < pending.size(); ++i) idx[i] = pending[i]->inputs[slot];
      history.push_back(batch_grids<T>(store, idx));
    }
    Tensor<T> out = sim.forward(history, nn::Mode::Eval);
    if (opt.binarize)
      for (auto& v : out.data()) v = v >= T(0.5) ? T(1) : T(0);
    const auto pred = predict_classes(clf.forward(out, nn::Mode::Eval));
    for (std::size_t i = 0; i < pending.size(); ++i)
      res.confusion.add(static_cast<std::size_t>(pending[i]->target_label), pred[i]);
    pending.clear();
  };
  for (const auto& w : windows) {
    if (w.type != type)
      fail(ErrorKind::TypeMismatch, "window of type " + type_key(w.type) + " given to type " + type_key(type) + " models");
    require(w.target_label >= int(kFirstLateClass) && w.target_label < int(kNumClasses), ErrorKind::ConfigError,
            "window target outside classes V-IX");
    pending.push_back(&w);
    if (pending.size() == opt.batch) flush();
  }
  flush();
  sim.clear_cache();
  clf.clear_cache();
  res.report = prf(res.confusion, late_classes());
  res.report.type = type_key(type);
  return res;
}

EvalResult eval_simulation(const Checkpoint& sim, const Checkpoint& clf, const GridStore& store,
                           const std::vector<WindowSample>& windows, const EvalOptions& opt) {
  if (sim.type != clf.type)
    fail(ErrorKind::TypeMismatch, "simulator type " + type_key(sim.type) + " vs classifier type " + type_key(clf.type));
  auto label = [&] {
    auto it = sim.meta.find("label");
    return it == sim.meta.end() ? std::string("simulator") : it->second;
  };
  EvalResult res;
  if (is_f32(sim)) {
    auto s = load_simulator<float>(sim);
    auto c = load_classifier<float>(clf);
    res = eval_simulation(s, c, sim.type, store, windows, opt);
  } else {
    auto s = load_simulator<double>(sim);
    auto c = load_classifier<double>(clf);
    res = eval_simulation(s, c, sim.type, store, windows, opt);
  }
  res.report.label = label();
  return res;
}

std::string roman(std::size_t c) {
  static const char* kNames[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX"};
  require(c < kNumClasses, ErrorKind::ConfigError, "class index out of range");
  return kNames[c];
}

namespace {

std::string fmt_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void append(std::string& out, const char* fmt, const char* s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, s);
  out += buf;
}

void append_value(std::string& out, std::optional<double> v, int width) {
  char buf[64];
  if (v)
    std::snprintf(buf, sizeof buf, "%*.4f", width, *v);
  else
    std::snprintf(buf, sizeof buf, "%*s", width, "-");
  out += buf;
}

}  // namespace

std::string render_table(const std::vector<MetricReport>& reports) {
  std::string out;
  append(out, "%-5s", "Type");
  append(out, "%-14s", "Run");
  append(out, "%-10s", "Metric");
  for (std::size_t c = 0; c < kNumClasses; ++c) append(out, "%8s", roman(c).c_str());
  append(out, "%11s", "Mean V-IX");
  append(out, "%8s", "Mean");
  append(out, "%10s", "Accuracy");
  out += '\n';
  for (const auto& r : reports) {
    const std::vector<double>* rows[] = {&r.precision, &r.recall, &r.f_score};
    const char* names[] = {"precision", "recall", "f_score"};
    for (int m = 0; m < 3; ++m) {
      append(out, "%-5s", r.type.empty() ? "-" : r.type.c_str());
      append(out, "%-14s", r.label.empty() ? "-" : r.label.c_str());
      append(out, "%-10s", names[m]);
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::optional<double> v;
        for (std::size_t k = 0; k < r.classes.size(); ++k)
          if (r.classes[k] == c) v = (*rows[m])[k];
        append_value(out, v, 8);
      }
      const bool f_row = m == 2;
      append_value(out, f_row ? std::optional<double>(r.mean_late) : std::nullopt, 11);
      append_value(out, f_row ? std::optional<double>(r.mean_all) : std::nullopt, 8);
      append_value(out, f_row ? std::optional<double>(r.accuracy) : std::nullopt, 10);
      out += '\n';
    }
  }
  return out;
}

std::string render_csv(const std::vector<MetricReport>& reports) {
  std::string out = "type,label,metric,class,value\n";
  for (const auto& r : reports) {
    const std::string head = r.type + "," + r.label + ",";
    const std::vector<double>* rows[] = {&r.precision, &r.recall, &r.f_score};
    const char* names[] = {"precision", "recall", "f_score"};
    for (int m = 0; m < 3; ++m)
      for (std::size_t k = 0; k < r.classes.size(); ++k)
        out += head + names[m] + "," + roman(r.classes[k]) + "," + fmt_exact((*rows[m])[k]) + "\n";
    out += head + "f_score,mean_v_ix," + fmt_exact(r.mean_late) + "\n";
    out += head + "f_score,mean," + fmt_exact(r.mean_all) + "\n";
    out += head + "accuracy,all," + fmt_exact(r.accuracy) + "\n";
  }
  return out;
}

std::vector<MetricReport> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "type,label,metric,class,value")
    fail(ErrorKind::FormatError, "report csv lacks its header");
  std::vector<MetricReport> out;
  std::map<std::pair<std::string, std::string>, std::size_t> where;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 5) fail(ErrorKind::FormatError, "report csv row needs 5 fields: " + line);
    double value = 0;
    auto res = std::from_chars(f[4].data(), f[4].data() + f[4].size(), value);
    if (res.ec != std::errc{} || res.ptr != f[4].data() + f[4].size()) fail(ErrorKind::FormatError, "bad value: " + line);
    const auto key = std::make_pair(f[0], f[1]);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, out.size()).first;
      out.emplace_back();
      out.back().type = f[0];
      out.back().label = f[1];
    }
    MetricReport& r = out[it->second];
    if (f[2] == "accuracy") {
      r.accuracy = value;
      continue;
    }
    if (f[3] == "mean_v_ix") {
      r.mean_late = value;
      continue;
    }
    if (f[3] == "mean") {
      r.mean_all = value;
      continue;
    }
    std::size_t cls = kNumClasses;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (roman(c) == f[3]) cls = c;
    if (cls == kNumClasses) fail(ErrorKind::FormatError, "unknown class column: " + f[3]);
    std::vector<double>* target = f[2] == "precision" ? &r.precision
                                  : f[2] == "recall"  ? &r.recall
                                  : f[2] == "f_score" ? &r.f_score
                                                      : nullptr;
    if (!target) fail(ErrorKind::FormatError, "unknown metric: " + f[2]);
    if (f[2] == "precision") r.classes.push_back(cls);
    target->push_back(value);
  }
  return out;
}

template EvalResult eval_classifier(Classifier<float>&, PlaceholderType, const GridStore&, const EvalOptions&);
template EvalResult eval_classifier(Classifier<double>&, PlaceholderType, const GridStore&, const EvalOptions&);
template EvalResult eval_simulation(Simulator<float>&, Classifier<float>&, PlaceholderType, const GridStore&,
                                    const std::vector<WindowSample>&, const EvalOptions&);
template EvalResult eval_simulation(Simulator<double>&, Classifier<double>&, PlaceholderType, const GridStore&,
                                    const std::vector<WindowSample>&, const EvalOptions&);

}  // namespace voxcast

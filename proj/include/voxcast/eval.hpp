#pragma once

// Precision / recall / F-score over the nine quantity classes, for the
// classifier on real grids and for classified simulator outputs.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxcast/checkpoint.hpp"
#include "voxcast/nets.hpp"
#include "voxcast/synth.hpp"

namespace voxcast {

struct WindowSample;

// Rows are the true class, columns the prediction.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t column_sum(std::size_t c) const;
  double accuracy() const;  // 0 when empty
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// First class of the V-IX range (0-based).
inline constexpr std::size_t kFirstLateClass = 4;

struct MetricReport {
  std::string type;   // placeholder letter, or empty
  std::string label;  // e.g. "classifier", "arch-1", "arch-2"
  std::vector<std::size_t> classes;  // evaluated classes, ascending
  std::vector<double> precision, recall, f_score;  // parallel to `classes`
  double mean_late = 0.0;  // unweighted F mean over classes V-IX present in `classes`
  double mean_all = 0.0;   // unweighted F mean over `classes`
  double accuracy = 0.0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// Empty columns give precision 0, empty rows recall 0, and F = 0 when
// P + R = 0. `classes` defaults to all nine.
MetricReport prf(const ConfusionMatrix& m, std::vector<std::size_t> classes = {});

struct EvalOptions {
  std::size_t batch = 32;
  // Threshold simulator outputs at 0.5 before classification.
  bool binarize = false;
};

struct EvalResult {
  ConfusionMatrix confusion;
  MetricReport report;
};

// Inference-mode scores, argmax, confusion, prf. Grids of other types than
// the model's are a TypeMismatch.
template <typename T>
EvalResult eval_classifier(Classifier<T>& model, PlaceholderType type, const GridStore& test, const EvalOptions& opt = {});
EvalResult eval_classifier(const Checkpoint& ckpt, const GridStore& test, const EvalOptions& opt = {});

// Simulates every window's target from its four inputs, classifies the
// continuous output and scores it against the target class. Only classes
// V-IX appear. TypeMismatch when the checkpoints or store disagree.
template <typename T>
EvalResult eval_simulation(Simulator<T>& sim, Classifier<T>& clf, PlaceholderType type, const GridStore& store,
                           const std::vector<WindowSample>& windows, const EvalOptions& opt = {});
EvalResult eval_simulation(const Checkpoint& sim, const Checkpoint& clf, const GridStore& store,
                           const std::vector<WindowSample>& windows, const EvalOptions& opt = {});

// Fixed-width table, one row group per report.
std::string render_table(const std::vector<MetricReport>& reports);
// "type,label,metric,class,value" with class = I..IX, mean_v_ix, mean or
// accuracy; values printed with round-trip precision.
std::string render_csv(const std::vector<MetricReport>& reports);
std::vector<MetricReport> parse_csv(const std::string& text);  // FormatError

std::string roman(std::size_t class_index);  // 0 -> "I"

}  // namespace voxcast

#pragma once

// Adam, train/test construction and the two training loops.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voxcast/checkpoint.hpp"
#include "voxcast/eval.hpp"
#include "voxcast/nets.hpp"
#include "voxcast/synth.hpp"

namespace voxcast {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;  // one per parameter, allocated on first step

  OptimizerBlock to_block(const std::vector<std::string>& names) const;
  static AdamState from_block(const OptimizerBlock& b);
};

// One bias-corrected Adam update of params[i] with grads[i]. Moments are
// zero-initialized on the first call. ShapeMismatch.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state);
// Same, over the trainable slots of a model, reading each slot's gradient.
template <typename T>
void adam_step(const std::vector<nn::ParamRef<T>>& params, AdamState<T>& state);

// Test = rows equal to test_row, train = the rest. MissingRowTag for row 0.
std::pair<GridStore, GridStore> split_rows(const GridStore& store, int test_row = 3);

// Four input grids from triplets t..t+3 and the target from t+4, as
// indices into the store the windows were drawn from.
struct WindowSample {
  std::array<std::size_t, 4> inputs{};
  std::size_t target = 0;
  int window = 0;        // 0..4, first triplet of the window
  int target_label = 0;  // class of the target triplet
  PlaceholderType type = PlaceholderType::A;
};

inline constexpr int kWindowCount = 5;
inline constexpr int kWindowLength = 5;

// Windows (1..5) .. (5..9); `per_window` samples each, every grid drawn
// uniformly with replacement from its triplet. Stores holding several types
// get windows for each type. InsufficientTriplets.
std::vector<WindowSample> make_windows(const GridStore& store, std::size_t per_window, std::uint64_t seed);
// Strictly consecutive classes, single type; throws ConfigError otherwise.
void validate_window(const GridStore& store, const WindowSample& w);

struct TrainPlan {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::size_t checkpoint_every = 0;  // epochs between checkpoint files; 0 = none
  AdamOptions adam{};
  // Scale the batch-sum gradient by 1/B before the optimizer.
  bool mean_gradient = true;
  ops::CrossEntropyOptions ce{};
  // Classifier: keep the epoch with the best test mean F-score instead of the last.
  bool select_best = true;
  std::size_t eval_batch = 32;
  std::optional<std::filesystem::path> out_dir;  // checkpoints and logs
  std::string label;                             // run label recorded in checkpoints

  void validate() const;  // ConfigError
};

struct MetricRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, 1-based
  double loss = 0.0;
  double l2_term = 0.0;
  double ce_term = 0.0;
  double lr = 0.0;
};

std::string format_metric_row(const MetricRow& r);
inline constexpr const char* kMetricHeader = "epoch, step, loss, l2_term, ce_term, lr";

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // per sample
  std::optional<double> test_mean_f;
};

struct TrainResult {
  Checkpoint checkpoint;  // selected (best or last)
  Checkpoint last;
  std::vector<MetricRow> steps;
  std::vector<EpochSummary> epochs;
  std::size_t selected_epoch = 0;
};

using ProgressFn = std::function<void(const EpochSummary&)>;

// One classifier for one placeholder type. `test` may be empty, in which
// case the last epoch is kept. EmptyStore, TypeMismatch.
template <typename T = float>
TrainResult train_classifier(const GridStore& train, const GridStore& test, PlaceholderType type,
                             const ClassifierConfig& config, const TrainPlan& plan, const ProgressFn& progress = {});

// Held-out windows scored after every epoch (classes V-IX mean F).
struct WindowSet {
  const GridStore* store = nullptr;
  const std::vector<WindowSample>* windows = nullptr;
};

// Simulator trained against a frozen classifier. The classifier checkpoint
// is only read; the last epoch is kept. TypeMismatch, EmptyStore.
template <typename T = float>
TrainResult train_simulator(const GridStore& store, const std::vector<WindowSample>& windows, const Checkpoint& classifier,
                            const SimulatorConfig& config, const TrainPlan& plan, const ProgressFn& progress = {},
                            const WindowSet& monitor = {});

// "arch-1" for alpha == 0, "arch-2" otherwise.
std::string arch_label(double alpha);

// Grid batch [B, 1, X, Y, Z] for the given record indices.
template <typename T>
Tensor<T> batch_grids(const GridStore& store, std::span<const std::size_t> indices);

}  // namespace voxcast

#pragma once

// The quantity classifier and the multi-input hourglass simulator.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "voxcast/nn.hpp"
#include "voxcast/ops.hpp"

namespace voxcast {

inline constexpr std::size_t kNumClasses = 9;
inline constexpr std::array<std::size_t, 3> kGridDims{32, 32, 64};

struct ClassifierConfig {
  std::size_t num_classes = kNumClasses;
  std::array<std::size_t, 3> input_dims = kGridDims;
  // One entry per conv block; each block is conv(3, pad 1) -> leaky -> bn -> pool(2).
  std::vector<std::size_t> channels{16, 32, 64, 128, 256};
  std::size_t fc_hidden = 128;
  double leaky_slope = 0.01;
  ops::BatchNormOptions batchnorm{};

  void validate() const;
  static ClassifierConfig reduced();  // small channel plan for desk-scale runs
};

struct EncoderBlock {
  std::size_t kernel;
  std::size_t padding;
  bool pool;
};

struct DecoderBlock {
  std::size_t kernel;
  std::size_t stride;
};

struct SimulatorConfig {
  std::size_t n_inputs = 4;
  std::array<std::size_t, 3> input_dims = kGridDims;
  std::vector<std::size_t> encoder_channels{32, 64, 128, 256, 512};
  std::vector<EncoderBlock> encoder_blocks{{3, 0, false}, {3, 0, false}, {3, 1, true}, {5, 0, false}, {5, 0, false}};
  std::vector<std::size_t> decoder_channels{256, 128, 64, 32, 16, 1};
  std::vector<DecoderBlock> decoder_blocks{{5, 1}, {5, 1}, {2, 2}, {3, 1}, {3, 1}, {1, 1}};
  double alpha = 0.1;
  bool tied_encoders = false;
  // Initial shift of the last normalization layer; the untrained output
  // level is sigmoid(output_shift).
  double output_shift = -3.0;
  double leaky_slope = 0.01;
  ops::BatchNormOptions batchnorm{};

  void validate() const;
  std::array<std::size_t, 3> encoded_dims() const;
  std::array<std::size_t, 3> output_dims() const;
  static SimulatorConfig reduced();
};

// Argmax over one score row; ties go to the lowest index.
std::size_t predict_class(std::span<const double> scores);

template <typename T>
std::vector<std::size_t> predict_classes(const Tensor<T>& scores);

template <typename T>
class Classifier {
 public:
  Classifier(ClassifierConfig config, std::uint64_t seed);

  // [B, 1, X, Y, Z] -> [B, M] scores in (0, 1).
  Tensor<T> forward(const Tensor<T>& grids, nn::Mode mode);
  // Gradient w.r.t. the input grids; parameter gradients accumulate unless
  // opt.param_grads is false.
  Tensor<T> backward(const Tensor<T>& grad_scores, const nn::BackwardOptions& opt = {});

  std::vector<nn::ParamRef<T>> params();
  const ClassifierConfig& config() const { return config_; }
  void clear_cache() { net_.clear_cache(); }

 private:
  ClassifierConfig config_;
  nn::Sequential<T> net_;
};

template <typename T>
class Simulator {
 public:
  Simulator(SimulatorConfig config, std::uint64_t seed);

  // history: n_inputs tensors of shape [B, 1, X, Y, Z] -> [B, 1, X, Y, Z] in (0, 1).
  Tensor<T> forward(std::span<const Tensor<T>> history, nn::Mode mode);
  // Encoder output of one branch, for shape inspection.
  Tensor<T> encode(std::size_t branch, const Tensor<T>& grid, nn::Mode mode);
  void backward(const Tensor<T>& grad_out);

  std::vector<nn::ParamRef<T>> params();
  const SimulatorConfig& config() const { return config_; }
  void clear_cache();

 private:
  SimulatorConfig config_;
  std::vector<nn::Sequential<T>> encoders_;
  nn::Sequential<T> decoder_;
};

struct CompositeLossValue {
  double total = 0.0;
  double l2_term = 0.0;
  double ce_term = 0.0;
};

// l2_loss(pred, target) + alpha * cross_entropy(classifier(pred), labels).
// The classifier runs in inference mode and its parameter gradients are
// never touched. Returns the loss values and writes d loss / d pred.
template <typename T>
CompositeLossValue composite_loss(const Tensor<T>& pred, const Tensor<T>& target, Classifier<T>& frozen,
                                  const Tensor<T>& labels, double alpha, Tensor<T>* grad_pred,
                                  ops::Reduction reduction = ops::Reduction::Sum,
                                  const ops::CrossEntropyOptions& ce = {});

// Batch of one-hot rows.
template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> classes, std::size_t num_classes = kNumClasses);

extern template class Classifier<float>;
extern template class Classifier<double>;
extern template class Simulator<float>;
extern template class Simulator<double>;

}  // namespace voxcast

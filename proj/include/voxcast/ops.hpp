#pragma once

// Forward and backward kernels for every layer the two networks use.
//
// Volumes are laid out [N, C, X, Y, Z] row-major (Z fastest). Backward
// routines accumulate (+=) into parameter-gradient spans and overwrite the
// input gradient; pass an empty span or a null tensor pointer to skip a term.

#include <cstddef>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "voxcast/tensor.hpp"

namespace voxcast::ops {

template <typename T>
using NoDeduce = std::type_identity_t<T>;

// Cubic kernel, isotropic stride and padding.
struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_out_dim(std::size_t in, const ConvGeometry& g);
std::size_t tconv_out_dim(std::size_t in, const ConvGeometry& g);

// conv3d: weight [Co, Ci, k, k, k], bias [Co].
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g);

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, const ConvGeometry& g,
                     NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias);

// tconv3d: weight [Ci, Co, k, k, k] (same array a conv3d mapping Co -> Ci
// would use), bias [Co]. Forward is the data-gradient of that conv3d.
template <typename T>
Tensor<T> tconv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g);

template <typename T>
void tconv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, const ConvGeometry& g,
                      NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias);

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, T slope);
// `out` is the forward output; its sign equals the input's sign for slope > 0.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& out, const Tensor<T>& grad_out, T slope);

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out);

struct PoolGeometry {
  std::size_t window = 2;
  std::size_t stride = 2;
};

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;  // flat input offset per output cell
};

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x, const PoolGeometry& g);
template <typename T>
Tensor<T> maxpool3d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax, const Tensor<T>& grad_out);

// dense: x [N, D], weight [D, K], bias [K]; y = x W + b.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, NoDeduce<Tensor<T>>* grad_in,
                    std::span<NoDeduce<T>> grad_weight, std::span<NoDeduce<T>> grad_bias);

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// Per-channel statistics over the batch and every spatial axis.
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;         // x-hat
  std::vector<double> inv_std;  // per channel
  bool training = false;
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, const BatchNormOptions& opt, bool training, BatchNormCache<T>* cache);

template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_out,
                        NoDeduce<Tensor<T>>* grad_in, std::span<NoDeduce<T>> grad_gamma, std::span<NoDeduce<T>> grad_beta);

enum class Reduction { Sum, Mean };

struct CrossEntropyOptions {
  // Divide each score row by its sum before the log (categorical
  // cross-entropy over unnormalized sigmoid scores).
  bool normalize = true;
  Reduction reduction = Reduction::Sum;
  double epsilon = 1e-7;
};

// -sum_i sum_j y_ij log(v_ij). Scores must lie strictly inside (0, 1).
template <typename T>
double cross_entropy(const Tensor<T>& scores, const Tensor<T>& labels, const CrossEntropyOptions& opt = {});
// d loss / d scores scaled by `seed`. The clamp is treated as identity
// for the gradient.
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& scores, const Tensor<T>& labels, const CrossEntropyOptions& opt = {},
                                 double seed = 1.0);

// sum over the batch of ||pred_i - target_i||_2 on flattened samples.
template <typename T>
double l2_loss(const Tensor<T>& pred, const Tensor<T>& target, Reduction reduction = Reduction::Sum);
template <typename T>
Tensor<T> l2_loss_backward(const Tensor<T>& pred, const Tensor<T>& target, Reduction reduction = Reduction::Sum,
                           double seed = 1.0);

}  // namespace voxcast::ops

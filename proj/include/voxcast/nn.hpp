#pragma once

// Layer objects with cached forward state, composed into the networks.

#include <memory>
#include <string>
#include <vector>

#include "voxcast/ops.hpp"
#include "voxcast/rng.hpp"
#include "voxcast/tensor.hpp"

namespace voxcast::nn {

enum class Mode { Train, Eval };

struct BackwardOptions {
  bool input_grad = true;
  bool param_grads = true;
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// A named slot a model exposes to the optimizer and to checkpoints.
// Buffers (running statistics) are saved but never optimized.
template <typename T>
struct ParamRef {
  std::string name;
  TensorPtr<T> tensor;
  bool trainable = true;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) = 0;
  virtual void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) { (void)prefix, (void)out; }
  virtual std::string kind() const = 0;
  // Release cached activations.
  virtual void clear_cache() {}
};

template <typename T>
class Conv3d final : public Layer<T> {
 public:
  Conv3d(std::size_t in_ch, std::size_t out_ch, ops::ConvGeometry g);
  Conv3d(TensorPtr<T> weight, TensorPtr<T> bias, ops::ConvGeometry g);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::string kind() const override { return "conv3d"; }
  void clear_cache() override { input_ = {}; }
  void init(Rng& rng);

  std::unique_ptr<Conv3d> shared_copy() const { return std::make_unique<Conv3d>(weight_, bias_, geom_); }

 private:
  TensorPtr<T> weight_, bias_;
  ops::ConvGeometry geom_;
  Tensor<T> input_;
};

template <typename T>
class TConv3d final : public Layer<T> {
 public:
  TConv3d(std::size_t in_ch, std::size_t out_ch, ops::ConvGeometry g);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::string kind() const override { return "tconv3d"; }
  void clear_cache() override { input_ = {}; }
  void init(Rng& rng);

 private:
  TensorPtr<T> weight_, bias_;
  ops::ConvGeometry geom_;
  Tensor<T> input_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(T slope = T(0.01)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  std::string kind() const override { return "leaky_relu"; }
  void clear_cache() override { output_ = {}; }

 private:
  T slope_;
  Tensor<T> output_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  std::string kind() const override { return "sigmoid"; }
  void clear_cache() override { output_ = {}; }

 private:
  Tensor<T> output_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  BatchNorm(std::size_t channels, ops::BatchNormOptions opt = {});
  // New layer aliasing this layer's parameters and running statistics.
  std::unique_ptr<BatchNorm> shared_copy() const;
  void set_shift(T v) { beta_->fill(v); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::string kind() const override { return "batchnorm"; }
  void clear_cache() override { cache_ = {}; }

 private:
  TensorPtr<T> gamma_, beta_, running_mean_, running_var_;
  ops::BatchNormOptions opt_;
  ops::BatchNormCache<T> cache_;
};

template <typename T>
class MaxPool3d final : public Layer<T> {
 public:
  explicit MaxPool3d(ops::PoolGeometry g = {}) : geom_(g) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  std::string kind() const override { return "maxpool3d"; }
  void clear_cache() override { argmax_ = {}; }

 private:
  ops::PoolGeometry geom_;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::string kind() const override { return "dense"; }
  void clear_cache() override { input_ = {}; }
  void init(Rng& rng);

 private:
  TensorPtr<T> weight_, bias_;
  Tensor<T> input_;
};

// [N, ...] -> [N, prod(...)]
template <typename T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const BackwardOptions& opt) override;
  std::string kind() const override { return "flatten"; }

 private:
  Shape input_shape_;
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(Tensor<T> x, Mode mode);
  Tensor<T> backward(Tensor<T> grad_out, const BackwardOptions& opt);
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);
  void clear_cache();

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Drops duplicates (shared parameters appear once, first name wins).
template <typename T>
std::vector<ParamRef<T>> unique_params(std::vector<ParamRef<T>> refs);

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& params);

}  // namespace voxcast::nn

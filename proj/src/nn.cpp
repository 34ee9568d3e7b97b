#include "voxcast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace voxcast::nn {

namespace {

template <typename T>
TensorPtr<T> make_param(Shape shape) {
  auto t = std::make_shared<Tensor<T>>(std::move(shape));
  t->ensure_grad();
  return t;
}

// Fan-in scaled uniform (He-style bound for leaky activations).
template <typename T>
void init_uniform(Tensor<T>& w, double fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
std::span<T> grad_span(Tensor<T>& t, bool wanted) {
  return wanted ? t.ensure_grad() : std::span<T>{};
}

}  // namespace

template <typename T>
Conv3d<T>::Conv3d(std::size_t in_ch, std::size_t out_ch, ops::ConvGeometry g)
    : weight_(make_param<T>({out_ch, in_ch, g.kernel, g.kernel, g.kernel})), bias_(make_param<T>({out_ch})), geom_(g) {}

template <typename T>
Conv3d<T>::Conv3d(TensorPtr<T> weight, TensorPtr<T> bias, ops::ConvGeometry g)
    : weight_(std::move(weight)), bias_(std::move(bias)), geom_(g) {}

template <typename T>
void Conv3d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(weight_->dim(1) * geom_.kernel * geom_.kernel * geom_.kernel);
  init_uniform(*weight_, fan_in, rng);
  bias_->fill(T(0));
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return ops::conv3d_forward(x, *weight_, *bias_, geom_);
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& grad_out, const BackwardOptions& opt) {
  Tensor<T> grad_in;
  ops::conv3d_backward(input_, *weight_, grad_out, geom_, opt.input_grad ? &grad_in : nullptr,
                       grad_span(*weight_, opt.param_grads), grad_span(*bias_, opt.param_grads));
  return grad_in;
}

template <typename T>
void Conv3d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", weight_, true});
  out.push_back({prefix + "bias", bias_, true});
}

template <typename T>
TConv3d<T>::TConv3d(std::size_t in_ch, std::size_t out_ch, ops::ConvGeometry g)
    : weight_(make_param<T>({in_ch, out_ch, g.kernel, g.kernel, g.kernel})), bias_(make_param<T>({out_ch})), geom_(g) {}

template <typename T>
void TConv3d<T>::init(Rng& rng) {
  // Each output cell sees about in_ch * (k / stride)^3 inputs.
  const double taps = static_cast<double>(geom_.kernel) / static_cast<double>(geom_.stride);
  const double fan_in = std::max(1.0, static_cast<double>(weight_->dim(0)) * taps * taps * taps);
  init_uniform(*weight_, fan_in, rng);
  bias_->fill(T(0));
}

template <typename T>
Tensor<T> TConv3d<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return ops::tconv3d_forward(x, *weight_, *bias_, geom_);
}

template <typename T>
Tensor<T> TConv3d<T>::backward(const Tensor<T>& grad_out, const BackwardOptions& opt) {
  Tensor<T> grad_in;
  ops::tconv3d_backward(input_, *weight_, grad_out, geom_, opt.input_grad ? &grad_in : nullptr,
                        grad_span(*weight_, opt.param_grads), grad_span(*bias_, opt.param_grads));
  return grad_in;
}

template <typename T>
void TConv3d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", weight_, true});
  out.push_back({prefix + "bias", bias_, true});
}

template <typename T>
Tensor<T> LeakyRelu<T>::forward(const Tensor<T>& x, Mode) {
  output_ = ops::leaky_relu_forward(x, slope_);
  return output_;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(const Tensor<T>& grad_out, const BackwardOptions&) {
  return ops::leaky_relu_backward(output_, grad_out, slope_);
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x, Mode) {
  output_ = ops::sigmoid_forward(x);
  return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out, const BackwardOptions&) {
  return ops::sigmoid_backward(output_, grad_out);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, ops::BatchNormOptions opt)
    : gamma_(make_param<T>({channels})),
      beta_(make_param<T>({channels})),
      running_mean_(std::make_shared<Tensor<T>>(Shape{channels}, T(0))),
      running_var_(std::make_shared<Tensor<T>>(Shape{channels}, T(1))),
      opt_(opt) {
  gamma_->fill(T(1));
}

template <typename T>
std::unique_ptr<BatchNorm<T>> BatchNorm<T>::shared_copy() const {
  auto copy = std::make_unique<BatchNorm<T>>(gamma_->size(), opt_);
  copy->gamma_ = gamma_;
  copy->beta_ = beta_;
  copy->running_mean_ = running_mean_;
  copy->running_var_ = running_var_;
  return copy;
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  return ops::batchnorm_forward(x, *gamma_, *beta_, *running_mean_, *running_var_, opt_, mode == Mode::Train, &cache_);
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out, const BackwardOptions& opt) {
  Tensor<T> grad_in;
  ops::batchnorm_backward(cache_, *gamma_, grad_out, opt.input_grad ? &grad_in : nullptr, grad_span(*gamma_, opt.param_grads),
                          grad_span(*beta_, opt.param_grads));
  return grad_in;
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "gamma", gamma_, true});
  out.push_back({prefix + "beta", beta_, true});
  out.push_back({prefix + "running_mean", running_mean_, false});
  out.push_back({prefix + "running_var", running_var_, false});
}

template <typename T>
Tensor<T> MaxPool3d<T>::forward(const Tensor<T>& x, Mode) {
  input_shape_ = x.shape();
  auto r = ops::maxpool3d_forward(x, geom_);
  argmax_ = std::move(r.argmax);
  return std::move(r.out);
}

template <typename T>
Tensor<T> MaxPool3d<T>::backward(const Tensor<T>& grad_out, const BackwardOptions&) {
  return ops::maxpool3d_backward(input_shape_, argmax_, grad_out);
}

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : weight_(make_param<T>({in_features, out_features})), bias_(make_param<T>({out_features})) {}

template <typename T>
void Dense<T>::init(Rng& rng) {
  init_uniform(*weight_, static_cast<double>(weight_->dim(0)), rng);
  bias_->fill(T(0));
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode) {
  input_ = x;
  return ops::dense_forward(x, *weight_, *bias_);
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_out, const BackwardOptions& opt) {
  Tensor<T> grad_in;
  ops::dense_backward(input_, *weight_, grad_out, opt.input_grad ? &grad_in : nullptr,
                      grad_span(*weight_, opt.param_grads), grad_span(*bias_, opt.param_grads));
  return grad_in;
}

template <typename T>
void Dense<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", weight_, true});
  out.push_back({prefix + "bias", bias_, true});
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Mode) {
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out, const BackwardOptions&) {
  return grad_out.reshaped(input_shape_);
}

template <typename T>
Tensor<T> Sequential<T>::forward(Tensor<T> x, Mode mode) {
  for (auto& layer : layers_) x = layer->forward(x, mode);
  return x;
}

template <typename T>
Tensor<T> Sequential<T>::backward(Tensor<T> grad, const BackwardOptions& opt) {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    // The first layer's input gradient is only needed when the caller asks.
    BackwardOptions layer_opt = opt;
    if (i > 0) layer_opt.input_grad = true;
    grad = layers_[i]->backward(grad, layer_opt);
    if (i > 0 && grad.empty()) fail(ErrorKind::ShapeMismatch, "layer returned an empty input gradient");
  }
  return grad;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect(prefix + std::to_string(i) + "." + layers_[i]->kind() + ".", out);
}

template <typename T>
void Sequential<T>::clear_cache() {
  for (auto& layer : layers_) layer->clear_cache();
}

template <typename T>
std::vector<ParamRef<T>> unique_params(std::vector<ParamRef<T>> refs) {
  std::set<const Tensor<T>*> seen;
  std::vector<ParamRef<T>> out;
  for (auto& r : refs)
    if (seen.insert(r.tensor.get()).second) out.push_back(std::move(r));
  return out;
}

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& params) {
  for (const auto& p : params)
    if (p.trainable) p.tensor->zero_grad();
}

#define VOXCAST_INSTANTIATE(T)                                                   \
  template class Conv3d<T>;                                                      \
  template class TConv3d<T>;                                                     \
  template class LeakyRelu<T>;                                                   \
  template class Sigmoid<T>;                                                     \
  template class BatchNorm<T>;                                                   \
  template class MaxPool3d<T>;                                                   \
  template class Dense<T>;                                                       \
  template class Flatten<T>;                                                     \
  template class Sequential<T>;                                                  \
  template std::vector<ParamRef<T>> unique_params(std::vector<ParamRef<T>>);     \
  template void zero_grads(const std::vector<ParamRef<T>>&);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast::nn

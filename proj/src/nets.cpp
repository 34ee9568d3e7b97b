#include "voxcast/nets.hpp"

#include <algorithm>

namespace voxcast {

void ClassifierConfig::validate() const {
  require(num_classes == kNumClasses, ErrorKind::ConfigError, "classifier must have 9 classes");
  require(channels.size() == 5, ErrorKind::ConfigError, "classifier must have exactly 5 conv blocks");
  require(fc_hidden >= 1, ErrorKind::ConfigError, "fc_hidden must be positive");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, ErrorKind::ConfigError, "leaky slope must lie in (0,1)");
  for (auto c : channels) require(c >= 1, ErrorKind::ConfigError, "channel counts must be positive");
  for (auto d : input_dims)
    require(d >= 32 && d % 32 == 0, ErrorKind::ConfigError, "classifier input dims must be multiples of 32");
}

ClassifierConfig ClassifierConfig::reduced() {
  ClassifierConfig c;
  c.channels = {4, 8, 16, 16, 16};
  c.fc_hidden = 32;
  return c;
}

void SimulatorConfig::validate() const {
  require(n_inputs >= 1, ErrorKind::ConfigError, "simulator needs at least one input grid");
  require(encoder_blocks.size() == 5 && encoder_channels.size() == 5, ErrorKind::ConfigError,
          "simulator encoder must have exactly 5 blocks");
  require(decoder_blocks.size() == 6 && decoder_channels.size() == 6, ErrorKind::ConfigError,
          "simulator decoder must have exactly 6 blocks");
  require(decoder_channels.back() == 1, ErrorKind::ConfigError, "simulator decoder must end with one channel");
  require(alpha >= 0.0, ErrorKind::ConfigError, "alpha must be non-negative");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, ErrorKind::ConfigError, "leaky slope must lie in (0,1)");
  if (output_dims() != input_dims) fail(ErrorKind::ConfigError, "decoder does not restore the input resolution");
}

std::array<std::size_t, 3> SimulatorConfig::encoded_dims() const {
  auto dims = input_dims;
  for (const auto& b : encoder_blocks) {
    for (auto& d : dims) {
      d = ops::conv_out_dim(d, {b.kernel, 1, b.padding});
      if (b.pool) {
        require(d >= 2, ErrorKind::ConfigError, "pooling on an extent below 2");
        d = (d - 2) / 2 + 1;
      }
    }
  }
  return dims;
}

std::array<std::size_t, 3> SimulatorConfig::output_dims() const {
  auto dims = encoded_dims();
  for (const auto& b : decoder_blocks)
    for (auto& d : dims) d = ops::tconv_out_dim(d, {b.kernel, b.stride, 0});
  return dims;
}

SimulatorConfig SimulatorConfig::reduced() {
  SimulatorConfig c;
  c.encoder_channels = {2, 4, 4, 8, 8};
  c.decoder_channels = {8, 4, 4, 2, 2, 1};
  return c;
}

std::size_t predict_class(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return best;
}

template <typename T>
std::vector<std::size_t> predict_classes(const Tensor<T>& scores) {
  require_rank(scores, 2, "predict_classes");
  const std::size_t B = scores.dim(0), M = scores.dim(1);
  std::vector<std::size_t> out(B);
  std::vector<double> row(M);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < M; ++j) row[j] = scores[i * M + j];
    out[i] = predict_class(row);
  }
  return out;
}

template <typename T>
Classifier<T>::Classifier(ClassifierConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, {0xc1a55}));
  const T slope = static_cast<T>(config_.leaky_slope);
  std::size_t in_ch = 1;
  auto dims = config_.input_dims;
  for (auto out_ch : config_.channels) {
    net_.template add<nn::Conv3d<T>>(in_ch, out_ch, ops::ConvGeometry{3, 1, 1}).init(rng);
    net_.template add<nn::LeakyRelu<T>>(slope);
    net_.template add<nn::BatchNorm<T>>(out_ch, config_.batchnorm);
    net_.template add<nn::MaxPool3d<T>>(ops::PoolGeometry{2, 2});
    for (auto& d : dims) d /= 2;
    in_ch = out_ch;
  }
  const std::size_t flat = in_ch * dims[0] * dims[1] * dims[2];
  net_.template add<nn::Flatten<T>>();
  net_.template add<nn::Dense<T>>(flat, config_.fc_hidden).init(rng);
  net_.template add<nn::LeakyRelu<T>>(slope);
  net_.template add<nn::Dense<T>>(config_.fc_hidden, config_.num_classes).init(rng);
  net_.template add<nn::Sigmoid<T>>();
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& grids, nn::Mode mode) {
  const auto& d = config_.input_dims;
  if (grids.rank() != 5 || grids.dim(1) != 1 || grids.dim(2) != d[0] || grids.dim(3) != d[1] || grids.dim(4) != d[2])
    fail(ErrorKind::ShapeMismatch, "classifier input " + shape_string(grids.shape()) + ", expected (B,1," +
                                       std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")");
  return net_.forward(grids, mode);
}

template <typename T>
Tensor<T> Classifier<T>::backward(const Tensor<T>& grad_scores, const nn::BackwardOptions& opt) {
  return net_.backward(grad_scores, opt);
}

template <typename T>
std::vector<nn::ParamRef<T>> Classifier<T>::params() {
  std::vector<nn::ParamRef<T>> out;
  net_.collect("net.", out);
  return out;
}

namespace {

template <typename T>
nn::Sequential<T> build_encoder(const SimulatorConfig& c, nn::Sequential<T>* share_from, Rng& rng) {
  nn::Sequential<T> enc;
  const T slope = static_cast<T>(c.leaky_slope);
  std::size_t in_ch = 1;
  std::size_t layer = 0;
  for (std::size_t b = 0; b < c.encoder_blocks.size(); ++b) {
    const auto& blk = c.encoder_blocks[b];
    const auto out_ch = c.encoder_channels[b];
    const ops::ConvGeometry g{blk.kernel, 1, blk.padding};
    if (share_from) {
      enc.add_layer(dynamic_cast<nn::Conv3d<T>&>(share_from->at(layer)).shared_copy());
      enc.template add<nn::LeakyRelu<T>>(slope);
      enc.add_layer(dynamic_cast<nn::BatchNorm<T>&>(share_from->at(layer + 2)).shared_copy());
    } else {
      enc.template add<nn::Conv3d<T>>(in_ch, out_ch, g).init(rng);
      enc.template add<nn::LeakyRelu<T>>(slope);
      enc.template add<nn::BatchNorm<T>>(out_ch, c.batchnorm);
    }
    layer += 3;
    if (blk.pool) {
      enc.template add<nn::MaxPool3d<T>>(ops::PoolGeometry{2, 2});
      ++layer;
    }
    in_ch = out_ch;
  }
  return enc;
}

}  // namespace

template <typename T>
Simulator<T>::Simulator(SimulatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, {0x51a0}));
  for (std::size_t i = 0; i < config_.n_inputs; ++i) {
    nn::Sequential<T>* share = (config_.tied_encoders && i > 0) ? &encoders_.front() : nullptr;
    encoders_.push_back(build_encoder<T>(config_, share, rng));
  }
  const T slope = static_cast<T>(config_.leaky_slope);
  std::size_t in_ch = config_.encoder_channels.back();
  for (std::size_t b = 0; b < config_.decoder_blocks.size(); ++b) {
    const auto& blk = config_.decoder_blocks[b];
    const auto out_ch = config_.decoder_channels[b];
    decoder_.template add<nn::TConv3d<T>>(in_ch, out_ch, ops::ConvGeometry{blk.kernel, blk.stride, 0}).init(rng);
    decoder_.template add<nn::LeakyRelu<T>>(slope);
    auto& bn = decoder_.template add<nn::BatchNorm<T>>(out_ch, config_.batchnorm);
    if (b + 1 == config_.decoder_blocks.size()) bn.set_shift(static_cast<T>(config_.output_shift));
    in_ch = out_ch;
  }
  decoder_.template add<nn::Sigmoid<T>>();
}

template <typename T>
Tensor<T> Simulator<T>::encode(std::size_t branch, const Tensor<T>& grid, nn::Mode mode) {
  const auto& d = config_.input_dims;
  if (grid.rank() != 5 || grid.dim(1) != 1 || grid.dim(2) != d[0] || grid.dim(3) != d[1] || grid.dim(4) != d[2])
    fail(ErrorKind::ShapeMismatch, "simulator input " + shape_string(grid.shape()));
  return encoders_.at(branch).forward(grid, mode);
}

template <typename T>
Tensor<T> Simulator<T>::forward(std::span<const Tensor<T>> history, nn::Mode mode) {
  if (history.size() != config_.n_inputs)
    fail(ErrorKind::WrongHistoryLength,
         "expected " + std::to_string(config_.n_inputs) + " history grids, got " + std::to_string(history.size()));
  for (const auto& h : history)
    if (h.shape() != history.front().shape()) fail(ErrorKind::ShapeMismatch, "history grids differ in shape");

  std::vector<Tensor<T>> codes;
  codes.reserve(history.size());
  for (std::size_t i = 0; i < history.size(); ++i) codes.push_back(encode(i, history[i], mode));

  // Sorting the branch values per cell makes the mean independent of input order.
  Tensor<T> mean(codes.front().shape());
  std::vector<T> vals(codes.size());
  const T inv_n = T(1) / static_cast<T>(codes.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (std::size_t b = 0; b < codes.size(); ++b) vals[b] = codes[b][i];
    std::sort(vals.begin(), vals.end());
    T s = 0;
    for (auto v : vals) s += v;
    mean[i] = s * inv_n;
  }
  return decoder_.forward(std::move(mean), mode);
}

template <typename T>
void Simulator<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = decoder_.backward(grad_out, {true, true});
  const T inv_n = T(1) / static_cast<T>(encoders_.size());
  for (auto& v : g.data()) v *= inv_n;
  for (auto& enc : encoders_) enc.backward(g, {false, true});
}

template <typename T>
std::vector<nn::ParamRef<T>> Simulator<T>::params() {
  std::vector<nn::ParamRef<T>> out;
  for (std::size_t i = 0; i < encoders_.size(); ++i) encoders_[i].collect("encoder" + std::to_string(i) + ".", out);
  decoder_.collect("decoder.", out);
  return nn::unique_params(std::move(out));
}

template <typename T>
void Simulator<T>::clear_cache() {
  for (auto& e : encoders_) e.clear_cache();
  decoder_.clear_cache();
}

template <typename T>
CompositeLossValue composite_loss(const Tensor<T>& pred, const Tensor<T>& target, Classifier<T>& frozen,
                                  const Tensor<T>& labels, double alpha, Tensor<T>* grad_pred, ops::Reduction reduction,
                                  const ops::CrossEntropyOptions& ce) {
  require_shape(target, pred.shape(), "composite_loss target");
  require(alpha >= 0.0, ErrorKind::ConfigError, "alpha must be non-negative");
  ops::CrossEntropyOptions ce_opt = ce;
  ce_opt.reduction = reduction;

  CompositeLossValue v;
  v.l2_term = ops::l2_loss(pred, target, reduction);
  const Tensor<T> scores = frozen.forward(pred, nn::Mode::Eval);
  v.ce_term = ops::cross_entropy(scores, labels, ce_opt);
  v.total = alpha == 0.0 ? v.l2_term : v.l2_term + alpha * v.ce_term;

  if (grad_pred != nullptr) {
    *grad_pred = ops::l2_loss_backward(pred, target, reduction);
    if (alpha != 0.0) {
      const Tensor<T> gs = ops::cross_entropy_backward(scores, labels, ce_opt, alpha);
      const Tensor<T> gin = frozen.backward(gs, {true, false});
      for (std::size_t i = 0; i < gin.size(); ++i) (*grad_pred)[i] += gin[i];
    }
  }
  frozen.clear_cache();
  return v;
}

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> classes, std::size_t num_classes) {
  Tensor<T> t({classes.size(), num_classes});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    require(classes[i] < num_classes, ErrorKind::ConfigError, "class index out of range");
    t[i * num_classes + classes[i]] = T(1);
  }
  return t;
}

template class Classifier<float>;
template class Classifier<double>;
template class Simulator<float>;
template class Simulator<double>;

#define VOXCAST_INSTANTIATE(T)                                                                                     \
  template std::vector<std::size_t> predict_classes(const Tensor<T>&);                                             \
  template CompositeLossValue composite_loss(const Tensor<T>&, const Tensor<T>&, Classifier<T>&, const Tensor<T>&, \
                                             double, Tensor<T>*, ops::Reduction, const ops::CrossEntropyOptions&); \
  template Tensor<T> one_hot(std::span<const std::size_t>, std::size_t);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast

#include "voxcast/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "voxcast/binio.hpp"

namespace voxcast {

namespace {

constexpr std::string_view kMagic = "VFCK";

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorKind::ConfigError, "bad number for " + key + ": " + s);
  return v;
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorKind::ConfigError, "bad integer for " + key + ": " + s);
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename Range>
std::string join_sizes(const Range& r) {
  std::string out;
  for (auto v : r) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_size(part, key));
  return out;
}

const std::string& get(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  require(it != kv.end(), ErrorKind::ConfigError, "checkpoint config lacks '" + key + "'");
  return it->second;
}

std::array<std::size_t, 3> parse_dims(const std::string& s, const std::string& key) {
  const auto v = parse_sizes(s, key);
  require(v.size() == 3, ErrorKind::ConfigError, key + " needs three values");
  return {v[0], v[1], v[2]};
}

void put_map(std::ostream& out, const std::map<std::string, std::string>& kv) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    binio::put_string(out, k);
    binio::put_string(out, v);
  }
}

std::map<std::string, std::string> get_map(std::istream& in) {
  const auto n = binio::get<std::uint32_t>(in);
  if (n > (1u << 20)) fail(ErrorKind::FormatError, "checkpoint map too large");
  std::map<std::string, std::string> kv;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = binio::get_string(in);
    kv[k] = binio::get_string(in);
  }
  return kv;
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

void put_tensor(std::ostream& out, const NamedTensor& t) {
  binio::put_string(out, t.name);
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  binio::put<std::uint8_t>(out, t.trainable ? 1 : 0);
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto d : t.shape) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
}

NamedTensor get_tensor(std::istream& in) {
  NamedTensor t;
  t.name = binio::get_string(in);
  const auto dt = binio::get<std::uint8_t>(in);
  if (dt != 1 && dt != 2) fail(ErrorKind::FormatError, "unknown tensor dtype in checkpoint");
  t.dtype = static_cast<DType>(dt);
  t.trainable = binio::get<std::uint8_t>(in) != 0;
  const auto rank = binio::get<std::uint8_t>(in);
  std::size_t n = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    t.shape.push_back(binio::get<std::uint32_t>(in));
    n *= t.shape.back();
  }
  if (n > (std::size_t{1} << 32)) fail(ErrorKind::FormatError, "tensor too large in checkpoint");
  t.bytes.resize(n * dtype_size(t.dtype));
  in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  binio::check_stream(in, "tensor data");
  return t;
}

void put_tensors(std::ostream& out, const std::vector<NamedTensor>& ts) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) put_tensor(out, t);
}

std::vector<NamedTensor> get_tensors(std::istream& in) {
  const auto n = binio::get<std::uint32_t>(in);
  if (n > (1u << 20)) fail(ErrorKind::FormatError, "too many tensors in checkpoint");
  std::vector<NamedTensor> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_tensor(in));
  return out;
}

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Classifier ? "classifier" : "simulator"; }

template <typename T>
NamedTensor NamedTensor::from(std::string name, const Tensor<T>& t, bool trainable) {
  NamedTensor n;
  n.name = std::move(name);
  n.dtype = dtype_of<T>();
  n.trainable = trainable;
  n.shape = t.shape();
  n.bytes.resize(t.size() * sizeof(T));
  if (!t.empty()) std::memcpy(n.bytes.data(), t.ptr(), n.bytes.size());
  return n;
}

template <typename T>
Tensor<T> NamedTensor::to_tensor() const {
  Tensor<T> t(shape);
  const std::size_t n = t.size();
  if (dtype == dtype_of<T>()) {
    std::memcpy(t.ptr(), bytes.data(), n * sizeof(T));
  } else if (dtype == DType::F32) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, bytes.data() + i * 4, 4);
      t[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, bytes.data() + i * 8, 8);
      t[i] = static_cast<T>(v);
    }
  }
  return t;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  binio::put_magic(out, kMagic);
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(c.kind));
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(c.type));
  put_map(out, c.config);
  put_map(out, c.meta);
  put_tensors(out, c.tensors);
  binio::put<std::uint64_t>(out, c.optimizer.step);
  binio::put<double>(out, c.optimizer.lr);
  binio::put<double>(out, c.optimizer.beta1);
  binio::put<double>(out, c.optimizer.beta2);
  binio::put<double>(out, c.optimizer.epsilon);
  put_tensors(out, c.optimizer.first_moment);
  put_tensors(out, c.optimizer.second_moment);
  binio::put<std::uint64_t>(out, c.seed);
  binio::put<std::uint32_t>(out, c.epoch);
  if (!out) fail(ErrorKind::IoError, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  binio::expect_magic(in, kMagic);
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) fail(ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto kind = binio::get<std::uint8_t>(in);
  if (kind != 1 && kind != 2) fail(ErrorKind::FormatError, "unknown model kind in checkpoint");
  c.kind = static_cast<ModelKind>(kind);
  const auto type = binio::get<std::uint8_t>(in);
  if (type >= kAllTypes.size()) fail(ErrorKind::FormatError, "unknown placeholder type in checkpoint");
  c.type = static_cast<PlaceholderType>(type);
  c.config = get_map(in);
  c.meta = get_map(in);
  c.tensors = get_tensors(in);
  c.optimizer.step = binio::get<std::uint64_t>(in);
  c.optimizer.lr = binio::get<double>(in);
  c.optimizer.beta1 = binio::get<double>(in);
  c.optimizer.beta2 = binio::get<double>(in);
  c.optimizer.epsilon = binio::get<double>(in);
  c.optimizer.first_moment = get_tensors(in);
  c.optimizer.second_moment = get_tensors(in);
  c.seed = binio::get<std::uint64_t>(in);
  c.epoch = binio::get<std::uint32_t>(in);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingCheckpoint, "no checkpoint at " + path.string());
  return read_checkpoint(in);
}

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ckpt);
  const std::string s = std::move(out).str();
  return {s.begin(), s.end()};
}

std::map<std::string, std::string> encode_config(const ClassifierConfig& c) {
  return {
      {"num_classes", std::to_string(c.num_classes)},
      {"input_dims", join_sizes(c.input_dims)},
      {"channels", join_sizes(c.channels)},
      {"fc_hidden", std::to_string(c.fc_hidden)},
      {"leaky_slope", fmt_double(c.leaky_slope)},
      {"bn.momentum", fmt_double(c.batchnorm.momentum)},
      {"bn.epsilon", fmt_double(c.batchnorm.epsilon)},
  };
}

std::map<std::string, std::string> encode_config(const SimulatorConfig& c) {
  std::string enc, dec;
  for (const auto& b : c.encoder_blocks) {
    if (!enc.empty()) enc += ';';
    enc += std::to_string(b.kernel) + "/" + std::to_string(b.padding) + "/" + (b.pool ? "1" : "0");
  }
  for (const auto& b : c.decoder_blocks) {
    if (!dec.empty()) dec += ';';
    dec += std::to_string(b.kernel) + "/" + std::to_string(b.stride);
  }
  return {
      {"n_inputs", std::to_string(c.n_inputs)},
      {"input_dims", join_sizes(c.input_dims)},
      {"encoder_channels", join_sizes(c.encoder_channels)},
      {"encoder_blocks", enc},
      {"decoder_channels", join_sizes(c.decoder_channels)},
      {"decoder_blocks", dec},
      {"alpha", fmt_double(c.alpha)},
      {"tied_encoders", c.tied_encoders ? "1" : "0"},
      {"output_shift", fmt_double(c.output_shift)},
      {"leaky_slope", fmt_double(c.leaky_slope)},
      {"bn.momentum", fmt_double(c.batchnorm.momentum)},
      {"bn.epsilon", fmt_double(c.batchnorm.epsilon)},
  };
}

ClassifierConfig decode_classifier_config(const std::map<std::string, std::string>& kv) {
  ClassifierConfig c;
  c.num_classes = parse_size(get(kv, "num_classes"), "num_classes");
  c.input_dims = parse_dims(get(kv, "input_dims"), "input_dims");
  c.channels = parse_sizes(get(kv, "channels"), "channels");
  c.fc_hidden = parse_size(get(kv, "fc_hidden"), "fc_hidden");
  c.leaky_slope = parse_double(get(kv, "leaky_slope"), "leaky_slope");
  c.batchnorm.momentum = parse_double(get(kv, "bn.momentum"), "bn.momentum");
  c.batchnorm.epsilon = parse_double(get(kv, "bn.epsilon"), "bn.epsilon");
  c.validate();
  return c;
}

SimulatorConfig decode_simulator_config(const std::map<std::string, std::string>& kv) {
  SimulatorConfig c;
  c.n_inputs = parse_size(get(kv, "n_inputs"), "n_inputs");
  c.input_dims = parse_dims(get(kv, "input_dims"), "input_dims");
  c.encoder_channels = parse_sizes(get(kv, "encoder_channels"), "encoder_channels");
  c.decoder_channels = parse_sizes(get(kv, "decoder_channels"), "decoder_channels");
  c.encoder_blocks.clear();
  for (const auto& part : split(get(kv, "encoder_blocks"), ';')) {
    const auto f = split(part, '/');
    require(f.size() == 3, ErrorKind::ConfigError, "bad encoder block " + part);
    c.encoder_blocks.push_back({parse_size(f[0], "encoder_blocks"), parse_size(f[1], "encoder_blocks"), f[2] == "1"});
  }
  c.decoder_blocks.clear();
  for (const auto& part : split(get(kv, "decoder_blocks"), ';')) {
    const auto f = split(part, '/');
    require(f.size() == 2, ErrorKind::ConfigError, "bad decoder block " + part);
    c.decoder_blocks.push_back({parse_size(f[0], "decoder_blocks"), parse_size(f[1], "decoder_blocks")});
  }
  c.alpha = parse_double(get(kv, "alpha"), "alpha");
  c.tied_encoders = get(kv, "tied_encoders") == "1";
  c.output_shift = parse_double(get(kv, "output_shift"), "output_shift");
  c.leaky_slope = parse_double(get(kv, "leaky_slope"), "leaky_slope");
  c.batchnorm.momentum = parse_double(get(kv, "bn.momentum"), "bn.momentum");
  c.batchnorm.epsilon = parse_double(get(kv, "bn.epsilon"), "bn.epsilon");
  c.validate();
  return c;
}

template <typename T>
std::vector<NamedTensor> capture(const std::vector<nn::ParamRef<T>>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(NamedTensor::from(p.name, *p.tensor, p.trainable));
  return out;
}

template <typename T>
void restore(const std::vector<nn::ParamRef<T>>& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) fail(ErrorKind::FormatError, "checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor->shape())
      fail(ErrorKind::ShapeMismatch, "parameter " + p.name + ": checkpoint " + shape_string(it->second->shape) + ", model " +
                                         shape_string(p.tensor->shape()));
    const Tensor<T> v = it->second->template to_tensor<T>();
    std::copy(v.data().begin(), v.data().end(), p.tensor->data().begin());
  }
}

template <typename T>
Classifier<T> load_classifier(const Checkpoint& ckpt) {
  if (ckpt.kind != ModelKind::Classifier) fail(ErrorKind::FormatError, "checkpoint holds a " + to_string(ckpt.kind));
  Classifier<T> model(decode_classifier_config(ckpt.config), ckpt.seed);
  restore(model.params(), ckpt.tensors);
  return model;
}

template <typename T>
Simulator<T> load_simulator(const Checkpoint& ckpt) {
  if (ckpt.kind != ModelKind::Simulator) fail(ErrorKind::FormatError, "checkpoint holds a " + to_string(ckpt.kind));
  Simulator<T> model(decode_simulator_config(ckpt.config), ckpt.seed);
  restore(model.params(), ckpt.tensors);
  return model;
}

#define VOXCAST_INSTANTIATE(T)                                                                            \
  template NamedTensor NamedTensor::from(std::string, const Tensor<T>&, bool);                            \
  template Tensor<T> NamedTensor::to_tensor() const;                                                      \
  template std::vector<NamedTensor> capture(const std::vector<nn::ParamRef<T>>&);                         \
  template void restore(const std::vector<nn::ParamRef<T>>&, const std::vector<NamedTensor>&);            \
  template Classifier<T> load_classifier(const Checkpoint&);                                              \
  template Simulator<T> load_simulator(const Checkpoint&);

VOXCAST_INSTANTIATE(float)
VOXCAST_INSTANTIATE(double)
#undef VOXCAST_INSTANTIATE

}  // namespace voxcast

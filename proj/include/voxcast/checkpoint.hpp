#pragma once

// Model checkpoints: configuration, named parameter tensors, optimizer state
// and training counters in one little-endian file.
//
// Layout: "VFCK", u32 version, u8 kind, u8 placeholder type, config and meta
// blocks (u32 count of string pairs), u32 tensor count + tensors, Adam block
// (u64 step, 4 x f64 hyperparameters, u32 count + moment tensors per
// parameter), u64 seed, u32 epoch. A tensor is name, u8 dtype (1 = f32,
// 2 = f64), u8 trainable, u8 rank, u32 dims, raw values.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "voxcast/nets.hpp"
#include "voxcast/voxel.hpp"

namespace voxcast {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint8_t { Classifier = 1, Simulator = 2 };
enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

std::string to_string(ModelKind kind);

struct NamedTensor {
  std::string name;
  DType dtype = DType::F64;
  bool trainable = true;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  template <typename T>
  static NamedTensor from(std::string name, const Tensor<T>& t, bool trainable = true);
  // Converts to T when the stored dtype differs.
  template <typename T>
  Tensor<T> to_tensor() const;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct OptimizerBlock {
  std::uint64_t step = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::vector<NamedTensor> first_moment;   // parallel to the trainable parameters
  std::vector<NamedTensor> second_moment;

  friend bool operator==(const OptimizerBlock&, const OptimizerBlock&) = default;
};

struct Checkpoint {
  ModelKind kind = ModelKind::Classifier;
  PlaceholderType type = PlaceholderType::A;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> meta;  // run label, scores, origin
  std::vector<NamedTensor> tensors;
  OptimizerBlock optimizer;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;

  const NamedTensor* find(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);  // FormatError
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);  // MissingCheckpoint
std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt);

std::map<std::string, std::string> encode_config(const ClassifierConfig& c);
std::map<std::string, std::string> encode_config(const SimulatorConfig& c);
ClassifierConfig decode_classifier_config(const std::map<std::string, std::string>& kv);  // ConfigError
SimulatorConfig decode_simulator_config(const std::map<std::string, std::string>& kv);

template <typename T>
std::vector<NamedTensor> capture(const std::vector<nn::ParamRef<T>>& params);
// Copies stored values into the model's slots, matched by name. FormatError
// on a missing name, ShapeMismatch on a shape difference.
template <typename T>
void restore(const std::vector<nn::ParamRef<T>>& params, const std::vector<NamedTensor>& tensors);

// Fresh model with the checkpoint's configuration and parameters. Kind
// mismatch is a FormatError.
template <typename T>
Classifier<T> load_classifier(const Checkpoint& ckpt);
template <typename T>
Simulator<T> load_simulator(const Checkpoint& ckpt);

}  // namespace voxcast

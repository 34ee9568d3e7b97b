#pragma once

// Synthetic glue-deposit scans, the labeled grid store, and the importer for
// real scans laid out on disk.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxcast/voxel.hpp"

namespace voxcast {

enum class DepositShape : std::uint8_t { Ellipse, Dot };

// A and B are the elongated footprints; C, D and E are dots.
DepositShape default_shape(PlaceholderType t) noexcept;

// Relative glue volume of a quantity class; 1.0 for class 0, strictly
// decreasing with the class index.
double class_volume_scale(int class_index);

struct DepositSpec {
  PlaceholderType type = PlaceholderType::A;
  DepositShape shape = DepositShape::Ellipse;
  int class_index = 0;
  double volume_scale = 1.0;
  double noise_amplitude = 0.05;  // per-point height noise, fraction of height
  std::uint64_t seed = 0;

  static DepositSpec make(PlaceholderType t, int class_index, std::uint64_t seed, double noise_amplitude = 0.05);
};

// Laser-line scan of one deposit on a flat substrate, sampled on the stage
// grid inside the type's grid bounds. Deterministic in spec.seed.
PointCloud gen_deposit(const DepositSpec& spec);

struct DatasetManifest {
  int circuits = 27;
  int triplets = 9;
  int placeholders_per_type = 4;  // one per row
  int rows = 4;
  std::size_t augment_count = 100;
  int test_row = 3;
  double keep_ratio = 0.8;
  double noise_amplitude = 0.05;
  std::vector<PlaceholderType> types{kAllTypes.begin(), kAllTypes.end()};

  void validate() const;  // ConfigError
  int circuits_per_triplet() const { return circuits / triplets; }
  std::size_t base_clouds_per_type() const { return std::size_t(circuits) * std::size_t(placeholders_per_type); }
  std::size_t grids_per_type() const { return base_clouds_per_type() * augment_count; }
};

// Circuits are numbered from 1; three consecutive circuits share a class.
int circuit_class(int circuit, int circuits_per_triplet = 3);

struct GridRecord {
  OccupancyGrid grid;  // carries class label and placeholder type
  int circuit = 0;
  int row = 0;  // 1-based; 0 = untagged
  int augment = 0;

  int class_index() const { return grid.class_label.value_or(-1); }
  PlaceholderType type() const { return grid.placeholder_type.value_or(PlaceholderType::A); }
};

struct GridStore {
  std::vector<GridRecord> records;
  // Provenance and counts, written to the store manifest.
  std::map<std::string, std::string> meta;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::vector<PlaceholderType> types() const;
  GridStore only(PlaceholderType t) const;
  // Per-class counts for one type.
  std::vector<std::size_t> class_counts(PlaceholderType t) const;
};

// Orders records by (type, circuit, row, augment).
void sort_store(GridStore& store);

GridStore gen_dataset(const DatasetManifest& manifest, std::uint64_t seed);
GridStore gen_dataset_type(const DatasetManifest& manifest, PlaceholderType t, std::uint64_t seed);

// Directory of grid files <T>/q<class>_c<circuit>_r<row>_a<aug>.vfog plus
// manifest.txt (key=value lines).
void save_store(const std::filesystem::path& dir, const GridStore& store);
GridStore load_store(const std::filesystem::path& dir, const std::vector<PlaceholderType>& types = {});

struct ImportOptions {
  std::size_t augment_count = 100;
  double keep_ratio = 0.8;
  std::vector<PlaceholderType> types{kAllTypes.begin(), kAllTypes.end()};
  int circuits = 27;
  int rows = 4;
};

// Real scans laid out as <root>/<T>/c<circuit>_r<row>.{xyz,txt,vfpc}, one
// cloud per circuit and row (the row's placeholder). Every circuit/row pair
// must be present for each requested type. MissingFile, MetadataParse.
GridStore import_real(const std::filesystem::path& root, const ImportOptions& opt, std::uint64_t seed);

// Reads key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);

}  // namespace voxcast

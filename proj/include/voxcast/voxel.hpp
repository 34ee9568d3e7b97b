#pragma once

// Point clouds in the scan frame and their binary occupancy grids.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxcast/tensor.hpp"

namespace voxcast {

enum class PlaceholderType : std::uint8_t { A = 0, B, C, D, E };

inline constexpr std::array<PlaceholderType, 5> kAllTypes{PlaceholderType::A, PlaceholderType::B, PlaceholderType::C,
                                                         PlaceholderType::D, PlaceholderType::E};

char type_letter(PlaceholderType t) noexcept;
// Accepts "A".."E" (case-insensitive); ConfigError otherwise.
PlaceholderType parse_type(std::string_view s);
// "all" or a comma list such as "A,C".
std::vector<PlaceholderType> parse_types(std::string_view s);

struct Point {
  double x = 0, y = 0, z = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;  // micrometres
  std::string frame_id = "scan";
};

struct Bounds {
  std::array<double, 3> min{0, 0, 0};
  std::array<double, 3> max{1, 1, 1};
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

struct GridSpec {
  std::array<std::size_t, 3> resolution{32, 32, 64};
  Bounds bounds;

  void validate() const;  // InvalidGridSpec
  std::size_t cell_count() const { return resolution[0] * resolution[1] * resolution[2]; }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Scan-frame box for one placeholder type: the full 1200 x 2100 um scan area
// and a height range sized to that type's deposits. z is stored ascending.
// The substrate plane z = 0 lies inside the grid.
GridSpec default_grid_spec(PlaceholderType t);

// Binary volume, one bit per cell, x fastest then y then z.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  explicit OccupancyGrid(GridSpec spec);

  const GridSpec& spec() const noexcept { return spec_; }
  std::size_t cell_count() const noexcept { return spec_.cell_count(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return i + spec_.resolution[0] * (j + spec_.resolution[1] * k);
  }
  bool get(std::size_t i, std::size_t j, std::size_t k) const noexcept { return test(index(i, j, k)); }
  void set(std::size_t i, std::size_t j, std::size_t k, bool v = true) noexcept { assign(index(i, j, k), v); }
  bool test(std::size_t flat) const noexcept { return (bits_[flat >> 6] >> (flat & 63)) & 1u; }
  void assign(std::size_t flat, bool v) noexcept {
    const std::uint64_t m = std::uint64_t{1} << (flat & 63);
    if (v)
      bits_[flat >> 6] |= m;
    else
      bits_[flat >> 6] &= ~m;
  }

  std::optional<int> class_label;
  std::optional<PlaceholderType> placeholder_type;

  const std::vector<std::uint64_t>& words() const noexcept { return bits_; }
  std::vector<std::uint64_t>& words() noexcept { return bits_; }

  // Writes the cells as 0/1 into a [X][Y][Z] block (z fastest), the layout
  // the networks consume.
  template <typename T>
  void to_volume(T* out) const;
  // Inverse of to_volume; values >= threshold become 1.
  template <typename T>
  static OccupancyGrid from_volume(const T* in, GridSpec spec, double threshold = 0.5);

  friend bool operator==(const OccupancyGrid& a, const OccupancyGrid& b) {
    return a.spec_ == b.spec_ && a.bits_ == b.bits_ && a.class_label == b.class_label &&
           a.placeholder_type == b.placeholder_type;
  }

 private:
  GridSpec spec_;
  std::vector<std::uint64_t> bits_;
};

// Cell (i,j,k) is set iff some point lies in its half-open box; points on a
// max face land in the last cell. EmptyCloud, PointOutOfBounds.
OccupancyGrid voxelize(const PointCloud& cloud, const GridSpec& spec);

// `count` independent uniform subsamples without replacement, each of
// ceil(keep_ratio * n) points in their original order. DegenerateCloud.
std::vector<PointCloud> augment(const PointCloud& cloud, std::size_t count, double keep_ratio, std::uint64_t seed);

std::size_t occupancy_count(const OccupancyGrid& grid);

// Text clouds: one "x y z" per line, '#' starts a comment.
PointCloud read_cloud_text(std::istream& in);
void write_cloud_text(std::ostream& out, const PointCloud& cloud);
// Binary clouds: "VFPC", u32 count, 3 x f64 per point.
PointCloud read_cloud_binary(std::istream& in);
void write_cloud_binary(std::ostream& out, const PointCloud& cloud);
// Picks the format from the leading magic. MissingFile, FormatError.
PointCloud load_cloud(const std::filesystem::path& path);

// Grid files: "VFOG", u16 x 3 resolution, 6 x f64 bounds, i8 label (-1 when
// unlabeled), u8 type code (255 when untyped), cells as LSB-first packed bits.
void write_grid(std::ostream& out, const OccupancyGrid& grid);
OccupancyGrid read_grid(std::istream& in);
void save_grid(const std::filesystem::path& path, const OccupancyGrid& grid);
OccupancyGrid load_grid(const std::filesystem::path& path);

// [B, 1, X, Y, Z] batch from grids with identical resolution.
template <typename T>
Tensor<T> grids_to_tensor(const std::vector<const OccupancyGrid*>& grids);

}  // namespace voxcast

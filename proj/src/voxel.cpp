#include "voxcast/voxel.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "voxcast/binio.hpp"
#include "voxcast/rng.hpp"

namespace voxcast {

char type_letter(PlaceholderType t) noexcept { return static_cast<char>('A' + static_cast<int>(t)); }

PlaceholderType parse_type(std::string_view s) {
  if (s.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (c >= 'A' && c <= 'E') return static_cast<PlaceholderType>(c - 'A');
  }
  fail(ErrorKind::ConfigError, "unknown placeholder type '" + std::string(s) + "'");
}

std::vector<PlaceholderType> parse_types(std::string_view s) {
  if (s == "all" || s == "ALL") return {kAllTypes.begin(), kAllTypes.end()};
  std::vector<PlaceholderType> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    const auto t = parse_type(item);
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  std::sort(out.begin(), out.end());
  return out;
}

void GridSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (resolution[a] < 1) fail(ErrorKind::InvalidGridSpec, "resolution must be >= 1 on every axis");
    if (resolution[a] > 65535) fail(ErrorKind::InvalidGridSpec, "resolution exceeds 65535");
    if (!std::isfinite(bounds.min[a]) || !std::isfinite(bounds.max[a]) || !(bounds.max[a] > bounds.min[a]))
      fail(ErrorKind::InvalidGridSpec, "bounds max must exceed min on every axis");
  }
}

GridSpec default_grid_spec(PlaceholderType t) {
  // Height step per type; the substrate plane z = 0 sits at the centre of
  // layer 5 so it occupies a single layer.
  static constexpr double kStep[] = {2.3, 2.0, 1.85, 1.6, 1.7};
  const double dz = kStep[static_cast<int>(t)];
  GridSpec g;
  g.bounds.min = {0.0, 0.0, -5.5 * dz};
  g.bounds.max = {1200.0, 2100.0, 58.5 * dz};
  return g;
}

OccupancyGrid::OccupancyGrid(GridSpec spec) : spec_(spec) {
  spec_.validate();
  bits_.assign((spec_.cell_count() + 63) / 64, 0);
}

template <typename T>
void OccupancyGrid::to_volume(T* out) const {
  const auto [nx, ny, nz] = spec_.resolution;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      T* row = out + (i * ny + j) * nz;
      for (std::size_t k = 0; k < nz; ++k) row[k] = test(index(i, j, k)) ? T(1) : T(0);
    }
}

template <typename T>
OccupancyGrid OccupancyGrid::from_volume(const T* in, GridSpec spec, double threshold) {
  OccupancyGrid g(spec);
  const auto [nx, ny, nz] = spec.resolution;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      const T* row = in + (i * ny + j) * nz;
      for (std::size_t k = 0; k < nz; ++k)
        if (static_cast<double>(row[k]) >= threshold) g.set(i, j, k);
    }
  return g;
}

namespace {

std::size_t cell_of(double v, double lo, double hi, std::size_t n) {
  const double u = (v - lo) / (hi - lo) * static_cast<double>(n);
  const auto c = static_cast<std::size_t>(std::floor(u));
  return std::min(c, n - 1);
}

}  // namespace

OccupancyGrid voxelize(const PointCloud& cloud, const GridSpec& spec) {
  if (cloud.points.empty()) fail(ErrorKind::EmptyCloud, "cannot voxelize an empty cloud");
  OccupancyGrid grid(spec);
  const auto& b = spec.bounds;
  for (std::size_t p = 0; p < cloud.points.size(); ++p) {
    const Point& pt = cloud.points[p];
    const double c[3] = {pt.x, pt.y, pt.z};
    for (std::size_t a = 0; a < 3; ++a)
      if (!std::isfinite(c[a]) || c[a] < b.min[a] || c[a] > b.max[a]) {
        std::ostringstream os;
        os << "point " << p << " (" << pt.x << ", " << pt.y << ", " << pt.z << ") lies outside the grid bounds";
        fail(ErrorKind::PointOutOfBounds, os.str());
      }
    grid.set(cell_of(pt.x, b.min[0], b.max[0], spec.resolution[0]), cell_of(pt.y, b.min[1], b.max[1], spec.resolution[1]),
             cell_of(pt.z, b.min[2], b.max[2], spec.resolution[2]));
  }
  return grid;
}

std::vector<PointCloud> augment(const PointCloud& cloud, std::size_t count, double keep_ratio, std::uint64_t seed) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::ConfigError, "keep_ratio must lie in (0, 1]");
  const std::size_t n = cloud.points.size();
  if (n < 2) fail(ErrorKind::DegenerateCloud, "augmentation needs at least two points");
  const auto keep = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(n) - 1e-9));
  if (keep == 0) fail(ErrorKind::DegenerateCloud, "subsample would be empty");

  std::vector<PointCloud> out(count);
  std::vector<std::uint32_t> order(n);
  std::vector<char> chosen(n);
  for (std::size_t c = 0; c < count; ++c) {
    Rng rng(derive_seed(seed, {c}));
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
    for (std::size_t i = 0; i < keep; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
    std::fill(chosen.begin(), chosen.end(), 0);
    for (std::size_t i = 0; i < keep; ++i) chosen[order[i]] = 1;
    auto& pts = out[c].points;
    pts.reserve(keep);
    for (std::size_t i = 0; i < n; ++i)
      if (chosen[i]) pts.push_back(cloud.points[i]);
    out[c].frame_id = cloud.frame_id;
  }
  return out;
}

std::size_t occupancy_count(const OccupancyGrid& grid) {
  std::size_t n = 0;
  for (auto w : grid.words()) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

PointCloud read_cloud_text(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Point p;
    std::string extra;
    if (!(ls >> p.x >> p.y >> p.z) || (ls >> extra))
      fail(ErrorKind::FormatError, "line " + std::to_string(lineno) + ": expected three numbers");
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      fail(ErrorKind::FormatError, "line " + std::to_string(lineno) + ": non-finite coordinate");
    cloud.points.push_back(p);
  }
  return cloud;
}

void write_cloud_text(std::ostream& out, const PointCloud& cloud) {
  out << "# frame " << cloud.frame_id << "\n";
  char buf[128];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out << buf;
  }
}

PointCloud read_cloud_binary(std::istream& in) {
  binio::expect_magic(in, "VFPC");
  const auto n = binio::get<std::uint32_t>(in);
  PointCloud cloud;
  cloud.points.resize(n);
  for (auto& p : cloud.points) {
    p.x = binio::get<double>(in);
    p.y = binio::get<double>(in);
    p.z = binio::get<double>(in);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      fail(ErrorKind::FormatError, "non-finite coordinate in binary cloud");
  }
  return cloud;
}

void write_cloud_binary(std::ostream& out, const PointCloud& cloud) {
  binio::put_magic(out, "VFPC");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.points.size()));
  for (const auto& p : cloud.points) {
    binio::put(out, p.x);
    binio::put(out, p.y);
    binio::put(out, p.z);
  }
}

PointCloud load_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::string_view(magic, 4) == "VFPC";
  in.clear();
  in.seekg(0);
  PointCloud cloud = binary ? read_cloud_binary(in) : read_cloud_text(in);
  cloud.frame_id = path.filename().string();
  return cloud;
}

void write_grid(std::ostream& out, const OccupancyGrid& grid) {
  const auto& s = grid.spec();
  binio::put_magic(out, "VFOG");
  for (auto r : s.resolution) binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(r));
  for (auto v : s.bounds.min) binio::put(out, v);
  for (auto v : s.bounds.max) binio::put(out, v);
  binio::put<std::int8_t>(out, static_cast<std::int8_t>(grid.class_label.value_or(-1)));
  binio::put<std::uint8_t>(out, grid.placeholder_type ? static_cast<std::uint8_t>(*grid.placeholder_type) : std::uint8_t{255});
  std::vector<std::uint8_t> bytes((grid.cell_count() + 7) / 8, 0);
  for (std::size_t i = 0; i < grid.cell_count(); ++i)
    if (grid.test(i)) bytes[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  binio::put_span<std::uint8_t>(out, bytes);
}

OccupancyGrid read_grid(std::istream& in) {
  binio::expect_magic(in, "VFOG");
  GridSpec s;
  for (auto& r : s.resolution) r = binio::get<std::uint16_t>(in);
  for (auto& v : s.bounds.min) v = binio::get<double>(in);
  for (auto& v : s.bounds.max) v = binio::get<double>(in);
  const auto label = binio::get<std::int8_t>(in);
  const auto code = binio::get<std::uint8_t>(in);
  OccupancyGrid g(s);
  if (label >= 0) {
    if (label >= 9) fail(ErrorKind::FormatError, "class label out of range");
    g.class_label = label;
  }
  if (code != 255) {
    if (code > 4) fail(ErrorKind::FormatError, "unknown placeholder type code");
    g.placeholder_type = static_cast<PlaceholderType>(code);
  }
  std::vector<std::uint8_t> bytes((g.cell_count() + 7) / 8);
  binio::get_span<std::uint8_t>(in, bytes);
  for (std::size_t i = 0; i < g.cell_count(); ++i)
    if ((bytes[i >> 3] >> (i & 7)) & 1u) g.assign(i, true);
  return g;
}

void save_grid(const std::filesystem::path& path, const OccupancyGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  write_grid(out, grid);
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

OccupancyGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  return read_grid(in);
}

template <typename T>
Tensor<T> grids_to_tensor(const std::vector<const OccupancyGrid*>& grids) {
  require(!grids.empty(), ErrorKind::ShapeMismatch, "empty grid batch");
  const auto res = grids.front()->spec().resolution;
  Tensor<T> t({grids.size(), 1, res[0], res[1], res[2]}, Uninitialized{});
  const std::size_t cells = res[0] * res[1] * res[2];
  for (std::size_t b = 0; b < grids.size(); ++b) {
    require(grids[b]->spec().resolution == res, ErrorKind::ShapeMismatch, "grids in a batch must share resolution");
    grids[b]->to_volume(t.ptr() + b * cells);
  }
  return t;
}

template void OccupancyGrid::to_volume(float*) const;
template void OccupancyGrid::to_volume(double*) const;
template OccupancyGrid OccupancyGrid::from_volume(const float*, GridSpec, double);
template OccupancyGrid OccupancyGrid::from_volume(const double*, GridSpec, double);
template Tensor<float> grids_to_tensor(const std::vector<const OccupancyGrid*>&);
template Tensor<double> grids_to_tensor(const std::vector<const OccupancyGrid*>&);

}  // namespace voxcast

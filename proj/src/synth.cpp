#include "voxcast/synth.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>

#include "voxcast/rng.hpp"

namespace voxcast {

namespace fs = std::filesystem;

namespace {

struct Nominal {
  double a, b, h;  // class-0 semi-axes and height, micrometres
};

constexpr std::array<Nominal, 5> kNominal{{
    {380.0, 760.0, 100.0},
    {320.0, 640.0, 88.0},
    {380.0, 380.0, 80.0},
    {330.0, 330.0, 68.0},
    {350.0, 350.0, 74.0},
}};

constexpr double kStageStep = 20.0;
constexpr double kSuperEllipse = 2.4;
constexpr double kVolumeJitter = 0.01;
constexpr double kCenterJitter = 10.0;
constexpr double kLateralJitter = 2.0;
constexpr double kSubstrateNoise = 0.25;
constexpr double kDropout = 0.03;

double clamped_normal(Rng& rng, double sd, double limit) { return std::clamp(rng.normal() * sd, -limit * sd, limit * sd); }

std::string type_key(PlaceholderType t) { return std::string(1, type_letter(t)); }

}  // namespace

DepositShape default_shape(PlaceholderType t) noexcept {
  return t == PlaceholderType::A || t == PlaceholderType::B ? DepositShape::Ellipse : DepositShape::Dot;
}

double class_volume_scale(int class_index) {
  require(class_index >= 0 && class_index < 9, ErrorKind::ConfigError, "class index must lie in [0, 9)");
  return 1.0 - 0.075 * class_index;
}

DepositSpec DepositSpec::make(PlaceholderType t, int class_index, std::uint64_t seed, double noise_amplitude) {
  DepositSpec s;
  s.type = t;
  s.shape = default_shape(t);
  s.class_index = class_index;
  s.volume_scale = class_volume_scale(class_index);
  s.noise_amplitude = noise_amplitude;
  s.seed = seed;
  return s;
}

PointCloud gen_deposit(const DepositSpec& spec) {
  require(spec.volume_scale > 0.0, ErrorKind::ConfigError, "volume scale must be positive");
  require(spec.noise_amplitude >= 0.0, ErrorKind::ConfigError, "noise amplitude must be non-negative");
  Rng rng(spec.seed);
  const GridSpec grid = default_grid_spec(spec.type);
  const auto& lo = grid.bounds.min;
  const auto& hi = grid.bounds.max;
  const Nominal nom = kNominal[static_cast<int>(spec.type)];

  const double volume = spec.volume_scale * (1.0 + clamped_normal(rng, kVolumeJitter, 3.0));
  const double s = std::cbrt(volume);
  const double a = nom.a * s, b = nom.b * s, h = nom.h * s;
  const double cx = 0.5 * (lo[0] + hi[0]) + clamped_normal(rng, kCenterJitter, 3.0);
  const double cy = 0.5 * (lo[1] + hi[1]) + clamped_normal(rng, kCenterJitter, 3.0);
  const double noise = spec.noise_amplitude * h;
  // Spherical cap through the rim of radius a with apex height h.
  const double rho = (a * a + h * h) / (2.0 * h);

  auto height = [&](double x, double y) -> double {
    const double dx = x - cx, dy = y - cy;
    if (spec.shape == DepositShape::Ellipse) {
      const double e = std::pow(std::pow(std::abs(dx) / a, kSuperEllipse) + std::pow(std::abs(dy) / b, kSuperEllipse),
                                1.0 / kSuperEllipse);
      return e < 1.0 ? h * std::sqrt(1.0 - e * e) : 0.0;
    }
    const double d2 = dx * dx + dy * dy;
    return d2 < a * a ? std::sqrt(rho * rho - d2) - (rho - h) : 0.0;
  };

  PointCloud cloud;
  cloud.frame_id = "synthetic";
  const auto nx = static_cast<int>(std::floor((hi[0] - lo[0]) / kStageStep));
  const auto ny = static_cast<int>(std::floor((hi[1] - lo[1]) / kStageStep));
  cloud.points.reserve(std::size_t(nx) * std::size_t(ny));
  const double zlo = lo[2] + 1e-6, zhi = hi[2];
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const bool dropped = rng.uniform() < kDropout;
      const double x = std::clamp(lo[0] + kStageStep * (i + 0.5) + clamped_normal(rng, kLateralJitter, 3.0), lo[0], hi[0]);
      const double y = std::clamp(lo[1] + kStageStep * (j + 0.5) + clamped_normal(rng, kLateralJitter, 3.0), lo[1], hi[1]);
      const double surface = height(x, y);
      const double z = surface > 0.0 ? surface + rng.uniform(-noise, noise) : rng.normal() * kSubstrateNoise;
      if (dropped) continue;
      cloud.points.push_back({x, y, std::clamp(z, zlo, zhi)});
    }
  return cloud;
}

void DatasetManifest::validate() const {
  require(circuits >= 1 && triplets >= 1 && circuits % triplets == 0, ErrorKind::ConfigError,
          "circuits must be a positive multiple of triplets");
  require(triplets == 9, ErrorKind::ConfigError, "the quantity classifier expects 9 triplets");
  require(rows >= 1 && placeholders_per_type == rows, ErrorKind::ConfigError, "one placeholder per row is required");
  require(test_row >= 1 && test_row <= rows, ErrorKind::ConfigError, "test_row must name an existing row");
  require(augment_count >= 1, ErrorKind::ConfigError, "augment_count must be >= 1");
  require(keep_ratio > 0.0 && keep_ratio <= 1.0, ErrorKind::ConfigError, "keep_ratio must lie in (0, 1]");
  require(!types.empty(), ErrorKind::ConfigError, "no placeholder types selected");
}

int circuit_class(int circuit, int circuits_per_triplet) { return (circuit - 1) / circuits_per_triplet; }

std::vector<PlaceholderType> GridStore::types() const {
  std::set<PlaceholderType> s;
  for (const auto& r : records) s.insert(r.type());
  return {s.begin(), s.end()};
}

GridStore GridStore::only(PlaceholderType t) const {
  GridStore out;
  out.meta = meta;
  for (const auto& r : records)
    if (r.type() == t) out.records.push_back(r);
  return out;
}

std::vector<std::size_t> GridStore::class_counts(PlaceholderType t) const {
  std::vector<std::size_t> counts(9, 0);
  for (const auto& r : records)
    if (r.type() == t && r.class_index() >= 0 && r.class_index() < 9) ++counts[std::size_t(r.class_index())];
  return counts;
}

void sort_store(GridStore& store) {
  std::stable_sort(store.records.begin(), store.records.end(), [](const GridRecord& x, const GridRecord& y) {
    return std::tuple(x.type(), x.circuit, x.row, x.augment) < std::tuple(y.type(), y.circuit, y.row, y.augment);
  });
}

namespace {

void record_counts(GridStore& store) {
  for (auto t : store.types()) {
    const auto counts = store.class_counts(t);
    std::size_t total = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      store.meta["count." + type_key(t) + ".class" + std::to_string(c)] = std::to_string(counts[c]);
      total += counts[c];
    }
    store.meta["count." + type_key(t)] = std::to_string(total);
  }
  store.meta["count"] = std::to_string(store.size());
}

void append_augmented(GridStore& store, const PointCloud& base, PlaceholderType t, int circuit, int row, int cls,
                      std::size_t count, double keep_ratio, std::uint64_t seed) {
  const GridSpec spec = default_grid_spec(t);
  const auto clouds = augment(base, count, keep_ratio, seed);
  for (std::size_t a = 0; a < clouds.size(); ++a) {
    GridRecord r;
    r.grid = voxelize(clouds[a], spec);
    r.grid.class_label = cls;
    r.grid.placeholder_type = t;
    r.circuit = circuit;
    r.row = row;
    r.augment = static_cast<int>(a);
    store.records.push_back(std::move(r));
  }
}

}  // namespace

GridStore gen_dataset_type(const DatasetManifest& m, PlaceholderType t, std::uint64_t seed) {
  m.validate();
  GridStore store;
  store.records.reserve(m.grids_per_type());
  const auto tcode = static_cast<std::uint64_t>(t);
  for (int c = 1; c <= m.circuits; ++c) {
    const int cls = circuit_class(c, m.circuits_per_triplet());
    for (int p = 1; p <= m.placeholders_per_type; ++p) {
      const auto deposit_seed = derive_seed(seed, {std::uint64_t(c), tcode, std::uint64_t(p)});
      const PointCloud base = gen_deposit(DepositSpec::make(t, cls, deposit_seed, m.noise_amplitude));
      append_augmented(store, base, t, c, p, cls, m.augment_count, m.keep_ratio, mix64(deposit_seed));
    }
  }
  return store;
}

GridStore gen_dataset(const DatasetManifest& m, std::uint64_t seed) {
  m.validate();
  GridStore store;
  for (auto t : m.types) {
    GridStore part = gen_dataset_type(m, t, seed);
    store.records.insert(store.records.end(), std::make_move_iterator(part.records.begin()),
                         std::make_move_iterator(part.records.end()));
  }
  sort_store(store);
  std::string types;
  for (auto t : m.types) types += (types.empty() ? "" : ",") + type_key(t);
  store.meta = {{"format", "voxcast-store-1"},
                {"source", "synthetic"},
                {"seed", std::to_string(seed)},
                {"circuits", std::to_string(m.circuits)},
                {"triplets", std::to_string(m.triplets)},
                {"placeholders_per_type", std::to_string(m.placeholders_per_type)},
                {"rows", std::to_string(m.rows)},
                {"augment_count", std::to_string(m.augment_count)},
                {"keep_ratio", std::to_string(m.keep_ratio)},
                {"noise_amplitude", std::to_string(m.noise_amplitude)},
                {"test_row", std::to_string(m.test_row)},
                {"split_rule", "row " + std::to_string(m.test_row) + " -> test"},
                {"types", types}};
  record_counts(store);
  return store;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      fail(ErrorKind::ConfigError, path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(const fs::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

namespace {

std::string record_name(const GridRecord& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "q%d_c%02d_r%d_a%03d.vfog", r.class_index(), r.circuit, r.row, r.augment);
  return buf;
}

}  // namespace

void save_store(const fs::path& dir, const GridStore& store) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& r : store.records) {
    const fs::path sub = dir / type_key(r.type());
    fs::create_directories(sub, ec);
    if (ec) fail(ErrorKind::IoError, "cannot create " + sub.string());
    save_grid(sub / record_name(r), r.grid);
  }
  write_key_values(dir / "manifest.txt", store.meta);
}

GridStore load_store(const fs::path& dir, const std::vector<PlaceholderType>& types) {
  if (!fs::is_directory(dir)) fail(ErrorKind::MissingFile, "dataset store " + dir.string() + " does not exist");
  GridStore store;
  if (fs::exists(dir / "manifest.txt")) store.meta = read_key_values(dir / "manifest.txt");
  static const std::regex name_re(R"(q(\d)_c(\d+)_r(\d+)_a(\d+)\.vfog)");
  for (auto t : kAllTypes) {
    if (!types.empty() && std::find(types.begin(), types.end(), t) == types.end()) continue;
    const fs::path sub = dir / type_key(t);
    if (!fs::is_directory(sub)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sub))
      if (e.is_regular_file() && e.path().extension() == ".vfog") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::smatch m;
      const std::string name = f.filename().string();
      if (!std::regex_match(name, m, name_re)) fail(ErrorKind::MetadataParse, "unrecognised grid file name " + name);
      GridRecord r;
      r.grid = load_grid(f);
      r.circuit = std::stoi(m[2]);
      r.row = std::stoi(m[3]);
      r.augment = std::stoi(m[4]);
      if (r.grid.class_label.value_or(-1) != std::stoi(m[1]) || r.grid.placeholder_type != t)
        fail(ErrorKind::MetadataParse, "grid header disagrees with file name " + f.string());
      store.records.push_back(std::move(r));
    }
  }
  sort_store(store);
  return store;
}

GridStore import_real(const fs::path& root, const ImportOptions& opt, std::uint64_t seed) {
  if (!fs::is_directory(root)) fail(ErrorKind::MissingFile, "import root " + root.string() + " does not exist");
  require(opt.circuits >= 9 && opt.circuits % 9 == 0, ErrorKind::ConfigError, "circuit count must be a multiple of 9");
  static const std::regex name_re(R"(c(\d+)_r(\d+)\.(xyz|txt|vfpc))");
  const int per_triplet = opt.circuits / 9;
  GridStore store;
  bool any = false;
  for (auto t : opt.types) {
    const fs::path sub = root / type_key(t);
    if (!fs::is_directory(sub)) fail(ErrorKind::MissingFile, "missing type directory " + sub.string());
    std::map<std::pair<int, int>, fs::path> found;
    for (const auto& e : fs::directory_iterator(sub)) {
      if (!e.is_regular_file()) continue;
      const std::string name = e.path().filename().string();
      if (!name.empty() && name[0] == '.') continue;
      std::smatch m;
      if (!std::regex_match(name, m, name_re)) fail(ErrorKind::MetadataParse, "cannot parse scan file name " + name);
      const int c = std::stoi(m[1]), r = std::stoi(m[2]);
      if (c < 1 || c > opt.circuits || r < 1 || r > opt.rows)
        fail(ErrorKind::MetadataParse, "circuit or row out of range in " + name);
      if (!found.emplace(std::pair(c, r), e.path()).second)
        fail(ErrorKind::MetadataParse, "duplicate scan for circuit " + std::to_string(c) + " row " + std::to_string(r));
      any = true;
    }
    for (int c = 1; c <= opt.circuits; ++c)
      for (int r = 1; r <= opt.rows; ++r) {
        auto it = found.find({c, r});
        if (it == found.end())
          fail(ErrorKind::MissingFile, "type " + type_key(t) + ": missing scan for circuit " + std::to_string(c) + " row " +
                                           std::to_string(r));
        const PointCloud cloud = load_cloud(it->second);
        const auto s = derive_seed(seed, {std::uint64_t(c), static_cast<std::uint64_t>(t), std::uint64_t(r)});
        append_augmented(store, cloud, t, c, r, circuit_class(c, per_triplet), opt.augment_count, opt.keep_ratio, s);
      }
  }
  if (!any) fail(ErrorKind::MissingFile, "no scan files under " + root.string());
  sort_store(store);
  store.meta = {{"format", "voxcast-store-1"},
                {"source", "import:" + root.string()},
                {"seed", std::to_string(seed)},
                {"circuits", std::to_string(opt.circuits)},
                {"rows", std::to_string(opt.rows)},
                {"augment_count", std::to_string(opt.augment_count)},
                {"keep_ratio", std::to_string(opt.keep_ratio)}};
  record_counts(store);
  return store;
}

}  // namespace voxcast

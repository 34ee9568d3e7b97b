#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "voxcast/synth.hpp"

using namespace voxcast;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("voxcast_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t median(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("shape assignment and class volume order") {
  CHECK(default_shape(PlaceholderType::A) == DepositShape::Ellipse);
  CHECK(default_shape(PlaceholderType::B) == DepositShape::Ellipse);
  for (auto t : {PlaceholderType::C, PlaceholderType::D, PlaceholderType::E})
    CHECK(default_shape(t) == DepositShape::Dot);
  CHECK(class_volume_scale(0) == 1.0);
  for (int c = 1; c < 9; ++c) CHECK(class_volume_scale(c) < class_volume_scale(c - 1));
}

TEST_CASE("gen_deposit is deterministic per seed") {
  const auto s = DepositSpec::make(PlaceholderType::C, 3, 77);
  const auto a = gen_deposit(s), b = gen_deposit(s);
  CHECK(a.points == b.points);
  CHECK(gen_deposit(DepositSpec::make(PlaceholderType::C, 3, 78)).points != a.points);
}

TEST_CASE("class I holds more glue than class IX for the same seed") {
  for (auto t : kAllTypes) {
    const auto spec = default_grid_spec(t);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto g0 = voxelize(gen_deposit(DepositSpec::make(t, 0, seed)), spec);
      const auto g8 = voxelize(gen_deposit(DepositSpec::make(t, 8, seed)), spec);
      CHECK(occupancy_count(g0) > occupancy_count(g8));
    }
  }
}

TEST_CASE("median occupancy strictly decreases across the nine classes") {
  for (auto t : kAllTypes) {
    const auto spec = default_grid_spec(t);
    std::size_t prev = SIZE_MAX;
    for (int c = 0; c < 9; ++c) {
      std::vector<std::size_t> counts;
      for (std::uint64_t s = 0; s < 50; ++s)
        counts.push_back(occupancy_count(voxelize(gen_deposit(DepositSpec::make(t, c, 1000 + s)), spec)));
      const auto m = median(counts);
      CHECK_MESSAGE(m < prev, "type ", type_letter(t), " class ", c);
      prev = m;
    }
  }
}

TEST_CASE("circuits map to triplet classes") {
  CHECK(circuit_class(1) == 0);
  CHECK(circuit_class(3) == 0);
  CHECK(circuit_class(4) == 1);
  CHECK(circuit_class(27) == 8);
}

TEST_CASE("manifest arithmetic and validation") {
  DatasetManifest m;
  CHECK(m.base_clouds_per_type() == 108);
  CHECK(m.grids_per_type() == 10800);
  CHECK(m.circuits_per_triplet() == 3);
  m.circuits = 26;
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("small synthetic store keeps the dataset invariants") {
  DatasetManifest m;
  m.augment_count = 3;
  m.types = {PlaceholderType::B, PlaceholderType::E};
  const auto store = gen_dataset(m, 5);
  CHECK(store.size() == 2 * 108 * 3);
  std::size_t row3 = 0;
  for (const auto& r : store.records) {
    CHECK(r.class_index() >= 0);
    CHECK(r.class_index() < 9);
    CHECK(r.row >= 1);
    CHECK(r.row <= 4);
    CHECK(r.class_index() == circuit_class(r.circuit));
    CHECK(r.grid.placeholder_type.has_value());
    row3 += r.row == 3;
  }
  CHECK(row3 * 4 == store.size());
  for (auto t : m.types)
    for (auto c : store.class_counts(t)) CHECK(c == 12 * 3);

  SUBCASE("generation is deterministic and per-type streams are independent") {
    const auto again = gen_dataset(m, 5);
    REQUIRE(again.size() == store.size());
    for (std::size_t i = 0; i < store.size(); ++i) CHECK(again.records[i].grid == store.records[i].grid);
    const auto only_e = gen_dataset_type(m, PlaceholderType::E, 5);
    const auto e = store.only(PlaceholderType::E);
    REQUIRE(only_e.size() == e.size());
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(only_e.records[i].grid == e.records[i].grid);
  }

  SUBCASE("store directory round-trip") {
    const auto dir = scratch("store");
    save_store(dir, store);
    CHECK(fs::exists(dir / "manifest.txt"));
    const auto back = load_store(dir);
    REQUIRE(back.size() == store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      CHECK(back.records[i].grid == store.records[i].grid);
      CHECK(back.records[i].circuit == store.records[i].circuit);
      CHECK(back.records[i].row == store.records[i].row);
      CHECK(back.records[i].augment == store.records[i].augment);
    }
    CHECK(load_store(dir, {PlaceholderType::E}).size() == store.only(PlaceholderType::E).size());
    fs::remove_all(dir);
  }
}

TEST_CASE("real-scan importer") {
  const auto root = scratch("import");
  ImportOptions opt;
  opt.augment_count = 2;
  opt.types = {PlaceholderType::A};

  SUBCASE("empty tree") {
    try {
      import_real(root, opt, 1);
      FAIL("expected MissingFile");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingFile);
    }
  }

  fs::create_directories(root / "A");
  for (int c = 1; c <= 27; ++c)
    for (int r = 1; r <= 4; ++r) {
      std::ofstream out(root / "A" / ("c" + std::to_string(c) + "_r" + std::to_string(r) + ".xyz"));
      write_cloud_text(out, gen_deposit(DepositSpec::make(PlaceholderType::A, circuit_class(c), c * 10 + r)));
    }

  SUBCASE("complete tree") {
    const auto store = import_real(root, opt, 1);
    CHECK(store.size() == 108 * 2);
    std::set<std::pair<int, int>> seen;
    for (const auto& r : store.records) seen.insert({r.circuit, r.row});
    CHECK(seen.size() == 108);
  }
  SUBCASE("missing placeholder") {
    fs::remove(root / "A" / "c5_r2.xyz");
    try {
      import_real(root, opt, 1);
      FAIL("expected MissingFile");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingFile);
    }
  }
  SUBCASE("malformed name") {
    std::ofstream(root / "A" / "circuit5.xyz") << "1 2 3\n";
    try {
      import_real(root, opt, 1);
      FAIL("expected MetadataParse");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MetadataParse);
    }
  }
  fs::remove_all(root);
}

TEST_CASE("key=value files") {
  const auto dir = scratch("kv");
  std::ofstream(dir / "a.txt") << "# comment\nalpha = 0.1\n\nseed=4 # trailing\n";
  const auto kv = read_key_values(dir / "a.txt");
  CHECK(kv.at("alpha") == "0.1");
  CHECK(kv.at("seed") == "4");
  write_key_values(dir / "b.txt", kv);
  CHECK(read_key_values(dir / "b.txt") == kv);
  fs::remove_all(dir);
}

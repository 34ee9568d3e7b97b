#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxcast/rng.hpp"
#include "voxcast/voxel.hpp"

using namespace voxcast;

namespace {

GridSpec small_spec() {
  GridSpec s;
  s.resolution = {4, 5, 6};
  s.bounds.min = {0, -10, 2};
  s.bounds.max = {8, 10, 14};
  return s;
}

PointCloud random_cloud(const GridSpec& s, std::size_t n, Rng& rng) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(s.bounds.min[0], s.bounds.max[0]), rng.uniform(s.bounds.min[1], s.bounds.max[1]),
                        rng.uniform(s.bounds.min[2], s.bounds.max[2])});
  return c;
}

}  // namespace

TEST_CASE("voxelize matches a per-cell brute-force box test") {
  Rng rng(17);
  const auto spec = small_spec();
  for (int trial = 0; trial < 10; ++trial) {
    const auto cloud = random_cloud(spec, 1 + rng.below(40), rng);
    const auto g = voxelize(cloud, spec);
    std::size_t occupied = 0;
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = 0; i < 4; ++i) {
          const double x0 = 2.0 * i, y0 = -10 + 4.0 * j, z0 = 2 + 2.0 * k;
          const bool want = std::any_of(cloud.points.begin(), cloud.points.end(), [&](const Point& p) {
            return p.x >= x0 && p.x < x0 + 2 && p.y >= y0 && p.y < y0 + 4 && p.z >= z0 && p.z < z0 + 2;
          });
          CHECK(g.get(i, j, k) == want);
          occupied += want;
        }
    CHECK(occupancy_count(g) == occupied);
  }
}

TEST_CASE("voxelize edge cases") {
  const auto spec = small_spec();
  PointCloud c;
  c.points = {{8, 10, 14}, {0, -10, 2}};
  const auto g = voxelize(c, spec);
  CHECK(g.get(3, 4, 5));
  CHECK(g.get(0, 0, 0));
  CHECK(occupancy_count(g) == 2);

  CHECK_THROWS_AS(voxelize(PointCloud{}, spec), Error);
  PointCloud out;
  out.points = {{8.01, 0, 3}};
  try {
    voxelize(out, spec);
    FAIL("expected PointOutOfBounds");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PointOutOfBounds);
  }
  GridSpec bad = spec;
  bad.bounds.max[1] = bad.bounds.min[1];
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("default grid specs cover the scan area at 32x32x64 with the substrate inside") {
  for (auto t : kAllTypes) {
    const auto s = default_grid_spec(t);
    CHECK(s.resolution == std::array<std::size_t, 3>{32, 32, 64});
    CHECK(s.cell_count() == 65536);
    CHECK(s.bounds.min[2] < 0.0);
    CHECK(s.bounds.max[2] > 0.0);
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("augment keeps ceil(r n) points in their original order") {
  Rng rng(23);
  PointCloud c = random_cloud(small_spec(), 101, rng);
  const auto subs = augment(c, 7, 0.8, 99);
  REQUIRE(subs.size() == 7);
  for (const auto& s : subs) {
    CHECK(s.points.size() == 81);
    std::size_t pos = 0;
    for (const auto& p : s.points) {
      while (pos < c.points.size() && !(c.points[pos] == p)) ++pos;
      REQUIRE(pos < c.points.size());
      ++pos;
    }
  }
  CHECK(subs[0].points != subs[1].points);
  const auto again = augment(c, 7, 0.8, 99);
  for (std::size_t i = 0; i < 7; ++i) CHECK(again[i].points == subs[i].points);

  PointCloud one;
  one.points = {{1, 1, 1}};
  CHECK_THROWS_AS(augment(one, 2, 0.8, 1), Error);
}

TEST_CASE("cloud text and binary formats round-trip") {
  Rng rng(31);
  const auto c = random_cloud(small_spec(), 25, rng);
  std::stringstream text;
  write_cloud_text(text, c);
  const auto t = read_cloud_text(text);
  REQUIRE(t.points.size() == c.points.size());
  for (std::size_t i = 0; i < c.points.size(); ++i) CHECK(t.points[i] == c.points[i]);

  std::stringstream bin;
  write_cloud_binary(bin, c);
  CHECK(read_cloud_binary(bin).points == c.points);

  std::stringstream commented("# header\n1 2 3\n\n4 5 6 # trailing\n");
  const auto cc = read_cloud_text(commented);
  REQUIRE(cc.points.size() == 2);
  CHECK(cc.points[1] == Point{4, 5, 6});
}

TEST_CASE("grid files round-trip with label and type") {
  Rng rng(37);
  const auto spec = small_spec();
  auto g = voxelize(random_cloud(spec, 30, rng), spec);
  g.class_label = 6;
  g.placeholder_type = PlaceholderType::D;
  std::stringstream ss;
  write_grid(ss, g);
  CHECK(ss.str().substr(0, 4) == "VFOG");
  CHECK(read_grid(ss) == g);

  const auto dir = std::filesystem::temp_directory_path() / "voxcast_unit_grid";
  std::filesystem::create_directories(dir);
  save_grid(dir / "g.vfog", g);
  CHECK(load_grid(dir / "g.vfog") == g);
  CHECK_THROWS_AS(load_cloud(dir / "absent.xyz"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("volume layout round-trips through from_volume") {
  Rng rng(41);
  const auto spec = small_spec();
  const auto g = voxelize(random_cloud(spec, 40, rng), spec);
  std::vector<float> v(g.cell_count());
  g.to_volume(v.data());
  // z fastest in the network layout
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 6; ++k) CHECK((v[(i * 5 + j) * 6 + k] == 1.0f) == g.get(i, j, k));
  CHECK(OccupancyGrid::from_volume(v.data(), spec) == g);
  const auto batch = grids_to_tensor<float>({&g, &g});
  CHECK(batch.shape() == Shape{2, 1, 4, 5, 6});
}

TEST_CASE("type selectors") {
  CHECK(parse_type("c") == PlaceholderType::C);
  CHECK(parse_types("all").size() == 5);
  CHECK(parse_types("A,E") == std::vector<PlaceholderType>{PlaceholderType::A, PlaceholderType::E});
  CHECK_THROWS_AS(parse_type("F"), Error);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "pcd/metrics.hpp"
#include "pcd/point_cloud.hpp"
#include "pcd/rng.hpp"
#include "pcd/scene_synth.hpp"
#include "pcd/xyz_io.hpp"

using namespace pcd;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pcd_test_" + name);
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0),
                        rng.uniform_in(-3.0, 3.0)});
  }
  return c;
}

}  // namespace

TEST_CASE("replicate_scan identity and copy layout") {
  PointCloud one;
  one.points = {{1, 2, 3}};
  CHECK(replicate_scan(one, 1) == one);

  PointCloud two;
  two.points = {{0, 0, 0}, {1, 1, 1}};
  const PointCloud r = replicate_scan(two, 3);
  REQUIRE(r.size() == 6);
  for (std::size_t copy = 0; copy < 3; ++copy) {
    CHECK(r[2 * copy] == two[0]);
    CHECK(r[2 * copy + 1] == two[1]);
  }

  CHECK_THROWS_AS(replicate_scan(two, 0), std::invalid_argument);
}

TEST_CASE("replicate_scan count law across K") {
  const PointCloud c = random_cloud(17, 5);
  for (std::size_t k = 1; k <= 64; ++k) {
    CHECK(replicate_scan(c, k).size() == k * c.size());
  }
}

TEST_CASE("voxelize floor convention and set semantics") {
  PointCloud a;
  a.points = {{0.1, 0.1, 0.1}};
  const VoxelGrid g1 = voxelize(a, 0.5);
  REQUIRE(g1.occupied.size() == 1);
  CHECK(g1.occupied.count({0, 0, 0}) == 1);

  PointCloud b;
  b.points = {{-0.1, 0.0, 0.0}};
  const VoxelGrid g2 = voxelize(b, 0.5);
  CHECK(g2.occupied.count({-1, 0, 0}) == 1);

  PointCloud c;
  c.points = {{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}};
  CHECK(voxelize(c, 0.5).occupied.size() == 1);

  CHECK_THROWS_AS(voxelize(a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(voxelize(a, -1.0), std::invalid_argument);
}

TEST_CASE("voxelize is order-invariant") {
  PointCloud c = random_cloud(64, 11);
  const VoxelGrid before = voxelize(c, 0.3);
  std::mt19937 shuffler(77);
  std::shuffle(c.points.begin(), c.points.end(), shuffler);
  const VoxelGrid after = voxelize(c, 0.3);
  CHECK(before.occupied == after.occupied);
}

TEST_CASE("synth_scene is deterministic and subsamples the ground truth") {
  SceneRecipe recipe;
  recipe.ground_points = 512;
  recipe.sparse_points = 64;
  const ScenePair s1 = synth_scene(recipe, 7);
  const ScenePair s2 = synth_scene(recipe, 7);
  CHECK(s1.sparse == s2.sparse);
  CHECK(s1.ground_truth == s2.ground_truth);

  REQUIRE(s1.ground_truth.size() == 512);
  REQUIRE(s1.sparse.size() == 64);
  for (const Vec3& p : s1.sparse.points) {
    const bool found = std::find(s1.ground_truth.points.begin(), s1.ground_truth.points.end(),
                                 p) != s1.ground_truth.points.end();
    CHECK(found);
  }
}

TEST_CASE("synth_scene two-clusters family leaves a completion gap") {
  SceneRecipe recipe;
  recipe.family = "two-clusters";
  recipe.ground_points = 200;
  recipe.sparse_points = 20;
  const ScenePair s = synth_scene(recipe, 3);
  CHECK(chamfer(s.sparse, s.ground_truth) > 0.0);
}

TEST_CASE("synth_scene rejects impossible subsample sizes") {
  SceneRecipe recipe;
  recipe.ground_points = 10;
  recipe.sparse_points = 11;
  CHECK_THROWS_AS(synth_scene(recipe, 1), std::invalid_argument);
}

TEST_CASE("xyz load parses points and comments") {
  const auto path = temp_file("basic.xyz");
  {
    std::ofstream out(path);
    out << "# header comment\n0 0 0\n1 2 3\n";
  }
  const PointCloud c = load_xyz(path);
  REQUIRE(c.size() == 2);
  CHECK(c[1] == Vec3{1, 2, 3});
  std::filesystem::remove(path);
}

TEST_CASE("xyz round trip is exact") {
  const PointCloud c = random_cloud(100, 123);
  const auto path = temp_file("roundtrip.xyz");
  save_xyz(c, path);
  const PointCloud back = load_xyz(path);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(std::abs(back[i].x - c[i].x) <= 1e-12);
    CHECK(std::abs(back[i].y - c[i].y) <= 1e-12);
    CHECK(std::abs(back[i].z - c[i].z) <= 1e-12);
  }
  std::filesystem::remove(path);
}

TEST_CASE("xyz malformed line reports its line number") {
  const auto path = temp_file("bad.xyz");
  {
    std::ofstream out(path);
    out << "a b c\n";
  }
  CHECK_THROWS_WITH_AS(load_xyz(path), doctest::Contains("line 1"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("xyz empty file is an empty cloud") {
  const auto path = temp_file("empty.xyz");
  { std::ofstream out(path); }
  CHECK(load_xyz(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("validate_finite rejects NaN coordinates") {
  PointCloud c;
  c.points = {{0, 0, std::numeric_limits<double>::quiet_NaN()}};
  CHECK_THROWS_AS(validate_finite(c, "test"), std::invalid_argument);
}

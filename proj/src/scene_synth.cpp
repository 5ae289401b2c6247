#include "pcd/scene_synth.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "pcd/rng.hpp"

namespace pcd {
namespace {

Vec3 jitter(Rng& rng, double amp) {
  return {amp * rng.normal(), amp * rng.normal(), amp * rng.normal()};
}

// Point on the surface of an axis-aligned box (faces sampled by area).
Vec3 box_surface_point(Rng& rng, const Vec3& center, const Vec3& half) {
  const double ax = half.y * half.z;
  const double ay = half.x * half.z;
  const double az = half.x * half.y;
  const double pick = rng.uniform() * (ax + ay + az);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  double u = rng.uniform_in(-1.0, 1.0);
  double v = rng.uniform_in(-1.0, 1.0);
  if (pick < ax) {
    return {center.x + sign * half.x, center.y + u * half.y, center.z + v * half.z};
  }
  if (pick < ax + ay) {
    return {center.x + u * half.x, center.y + sign * half.y, center.z + v * half.z};
  }
  return {center.x + u * half.x, center.y + v * half.y, center.z + sign * half.z};
}

PointCloud make_ground_boxes(const SceneRecipe& r, Rng& rng) {
  PointCloud gt;
  gt.points.reserve(r.ground_points);
  const std::size_t n_boxes = 2 + rng.below(3);  // 2..4 clusters
  struct Box {
    Vec3 center;
    Vec3 half;
  };
  std::vector<Box> boxes(n_boxes);
  for (Box& b : boxes) {
    const double hx = rng.uniform_in(0.1, 0.3) * r.extent;
    const double hy = rng.uniform_in(0.1, 0.3) * r.extent;
    const double hz = rng.uniform_in(0.1, 0.35) * r.extent;
    b.half = {hx, hy, hz};
    b.center = {rng.uniform_in(-0.6, 0.6) * r.extent, rng.uniform_in(-0.6, 0.6) * r.extent, hz};
  }
  const std::size_t n_ground = (r.ground_points * 3) / 5;
  for (std::size_t i = 0; i < r.ground_points; ++i) {
    Vec3 p;
    if (i < n_ground) {
      p = {rng.uniform_in(-1.0, 1.0) * r.extent, rng.uniform_in(-1.0, 1.0) * r.extent, 0.0};
    } else {
      const Box& b = boxes[(i - n_ground) % n_boxes];
      p = box_surface_point(rng, b.center, b.half);
    }
    gt.points.push_back(p + jitter(rng, r.noise));
  }
  return gt;
}

PointCloud make_two_clusters(const SceneRecipe& r, Rng& rng) {
  PointCloud gt;
  gt.points.reserve(r.ground_points);
  const Vec3 c0 = {-0.5 * r.extent, 0.0, 0.25 * r.extent};
  const Vec3 c1 = {0.5 * r.extent, 0.0, 0.25 * r.extent};
  const double spread = 0.2 * r.extent;
  for (std::size_t i = 0; i < r.ground_points; ++i) {
    const Vec3& c = (i % 2 == 0) ? c0 : c1;
    gt.points.push_back(c + jitter(rng, spread) + jitter(rng, r.noise));
  }
  return gt;
}

}  // namespace

ScenePair synth_scene(const SceneRecipe& recipe, std::uint64_t seed) {
  if (recipe.sparse_points > recipe.ground_points) {
    throw std::invalid_argument("synth_scene: sparse_points exceeds ground_points");
  }
  if (recipe.ground_points == 0) {
    throw std::invalid_argument("synth_scene: ground_points must be >= 1");
  }
  Rng rng(mix_seed(seed, 0xC0FFEE));
  PointCloud gt;
  if (recipe.family == "ground-boxes") {
    gt = make_ground_boxes(recipe, rng);
  } else if (recipe.family == "two-clusters") {
    gt = make_two_clusters(recipe, rng);
  } else {
    throw std::invalid_argument("synth_scene: unknown recipe family '" + recipe.family + "'");
  }

  // Sparse scan: N distinct indices of the ground truth, kept in original order.
  Rng pick(mix_seed(seed, 0x5CA7));
  std::vector<std::size_t> idx(gt.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < recipe.sparse_points; ++i) {
    const std::size_t j = i + pick.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(recipe.sparse_points);
  std::sort(idx.begin(), idx.end());

  ScenePair scene;
  scene.ground_truth = std::move(gt);
  scene.sparse.points.reserve(recipe.sparse_points);
  for (std::size_t i : idx) {
    scene.sparse.points.push_back(scene.ground_truth[i]);
  }
  scene.scene_id = recipe.family + "-" + std::to_string(seed);
  return scene;
}

std::vector<ScenePair> synth_dataset(const SceneRecipe& recipe, std::size_t n,
                                     std::uint64_t seed) {
  std::vector<ScenePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(synth_scene(recipe, mix_seed(seed, i)));
  }
  return out;
}

}  // namespace pcd

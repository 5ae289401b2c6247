#pragma once

#include <cstdint>
#include <string>

#include "pcd/point_cloud.hpp"

namespace pcd {

// Recipe for a synthetic scene: a planar ground patch plus a few axis-aligned
// object clusters, or two free-standing blobs. Small enough that a tiny
// conditional network can learn to complete it.
struct SceneRecipe {
  std::string family = "ground-boxes";  // "ground-boxes" | "two-clusters"
  std::size_t ground_points = 512;      // M, dense ground-truth count
  std::size_t sparse_points = 64;       // N, sparse scan count (N <= M)
  double noise = 0.02;                  // surface jitter, meters
  double extent = 2.0;                  // half-size of the scene footprint, meters
};

// Deterministic for a fixed (recipe, seed). The sparse scan is a seeded random
// subsample of the ground truth, kept in ground-truth order.
ScenePair synth_scene(const SceneRecipe& recipe, std::uint64_t seed);

// Convenience: n scenes from consecutive sub-seeds of `seed`.
std::vector<ScenePair> synth_dataset(const SceneRecipe& recipe, std::size_t n,
                                     std::uint64_t seed);

}  // namespace pcd

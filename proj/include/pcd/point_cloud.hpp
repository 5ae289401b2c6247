#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

namespace pcd {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline double squared_norm(const Vec3& v) { return dot(v, v); }

inline double squared_distance(const Vec3& a, const Vec3& b) { return squared_norm(a - b); }

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

// Ordered collection of 3D points in meters. Order is meaningful: point-wise
// operations (noising, replication) rely on it.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
  Vec3& operator[](std::size_t i) { return points[i]; }
  bool operator==(const PointCloud& o) const { return points == o.points; }
};

// One synthetic scene: a sparse scan and the dense ground truth it came from.
struct ScenePair {
  PointCloud sparse;
  PointCloud ground_truth;
  std::string scene_id;
};

struct CellIndex {
  int i = 0;
  int j = 0;
  int k = 0;
  bool operator==(const CellIndex& o) const { return i == o.i && j == o.j && k == o.k; }
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint64_t v : {static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.i)),
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.j)),
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.k))}) {
      h ^= v;
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Occupancy grid anchored at the world origin, floor binning.
struct VoxelGrid {
  double resolution = 0.0;
  std::unordered_set<CellIndex, CellIndexHash> occupied;
};

CellIndex cell_of(const Vec3& p, double resolution);

// K consecutive copies of the input sequence, copy-major order.
PointCloud replicate_scan(const PointCloud& scan, std::size_t k);

VoxelGrid voxelize(const PointCloud& cloud, double resolution);

// Throws std::invalid_argument if any coordinate is non-finite.
void validate_finite(const PointCloud& cloud, const char* what);

}  // namespace pcd

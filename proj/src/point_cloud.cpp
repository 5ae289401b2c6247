#include "pcd/point_cloud.hpp"

#include <stdexcept>
#include <string>

namespace pcd {

CellIndex cell_of(const Vec3& p, double resolution) {
  return {static_cast<int>(std::floor(p.x / resolution)),
          static_cast<int>(std::floor(p.y / resolution)),
          static_cast<int>(std::floor(p.z / resolution))};
}

PointCloud replicate_scan(const PointCloud& scan, std::size_t k) {
  if (k == 0) {
    throw std::invalid_argument("replicate_scan: K must be >= 1");
  }
  PointCloud out;
  out.points.reserve(scan.size() * k);
  for (std::size_t copy = 0; copy < k; ++copy) {
    out.points.insert(out.points.end(), scan.points.begin(), scan.points.end());
  }
  return out;
}

VoxelGrid voxelize(const PointCloud& cloud, double resolution) {
  if (!(resolution > 0.0)) {
    throw std::invalid_argument("voxelize: resolution must be > 0");
  }
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.occupied.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    grid.occupied.insert(cell_of(p, resolution));
  }
  return grid;
}

void validate_finite(const PointCloud& cloud, const char* what) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!is_finite(cloud[i])) {
      throw std::invalid_argument(std::string(what) + ": non-finite coordinate at point " +
                                  std::to_string(i));
    }
  }
}

}  // namespace pcd

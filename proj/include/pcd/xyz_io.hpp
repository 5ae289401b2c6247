#pragma once

#include <filesystem>

#include "pcd/point_cloud.hpp"

namespace pcd {

// ASCII XYZ: one point per line, three whitespace-separated decimal fields.
// Lines starting with '#' are comments. Empty file is a valid empty cloud.
PointCloud load_xyz(const std::filesystem::path& path);

// Writes with enough digits that load_xyz(save_xyz(c)) round-trips exactly.
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace pcd

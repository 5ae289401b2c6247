#include "pcd/xyz_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pcd {

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_xyz: cannot open '" + path.string() + "'");
  }
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream fields(line);
    Vec3 p;
    std::string extra;
    if (!(fields >> p.x >> p.y >> p.z) || (fields >> extra)) {
      throw std::runtime_error("load_xyz: malformed line " + std::to_string(line_no) + " in '" +
                               path.string() + "'");
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_xyz: cannot open '" + path.string() + "' for writing");
  }
  char buf[96];
  for (const Vec3& p : cloud.points) {
    // %.17g round-trips IEEE doubles exactly.
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out << buf;
  }
  if (!out) {
    throw std::runtime_error("save_xyz: write failed on '" + path.string() + "'");
  }
}

}  // namespace pcd

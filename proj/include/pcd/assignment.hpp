#pragma once

#include <cstddef>
#include <vector>

namespace pcd {

// Exact minimum-cost assignment on an n x n cost matrix (row-major), O(n^3)
// shortest augmenting paths with potentials. Returns col index assigned to
// each row.
std::vector<std::size_t> min_cost_assignment(const std::vector<double>& cost, std::size_t n);

}  // namespace pcd

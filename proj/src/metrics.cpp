#include "pcd/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "pcd/assignment.hpp"
#include "pcd/rng.hpp"

namespace pcd {
namespace {

double min_squared_dist_brute(const Vec3& q, const PointCloud& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& p : cloud.points) {
    best = std::min(best, squared_distance(q, p));
  }
  return best;
}

// Uniform-grid index over a target cloud for exact nearest-neighbor queries.
// Cells at Chebyshev ring k from the query cell hold points at distance
// >= (k-1)*cell, so the ring expansion below never terminates early.
class NnGrid {
 public:
  explicit NnGrid(const PointCloud& cloud) : cloud_(cloud) {
    Vec3 lo = cloud.points.front();
    Vec3 hi = lo;
    for (const Vec3& p : cloud.points) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    const double span = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    cell_ = span > 0.0 ? span / std::cbrt(static_cast<double>(cloud.size())) : 1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      buckets_[cell_of(cloud[i], cell_)].push_back(i);
    }
    min_cell_ = cell_of(lo, cell_);
    max_cell_ = cell_of(hi, cell_);
  }

  double min_squared_dist(const Vec3& q) const {
    const CellIndex c = cell_of(q, cell_);
    const int kmax = std::max({std::abs(c.i - min_cell_.i), std::abs(c.i - max_cell_.i),
                               std::abs(c.j - min_cell_.j), std::abs(c.j - max_cell_.j),
                               std::abs(c.k - min_cell_.k), std::abs(c.k - max_cell_.k)});
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kmax; ++k) {
      if (std::isfinite(best)) {
        const double reach = (static_cast<double>(k) - 1.0) * cell_;
        if (reach > 0.0 && reach * reach >= best) {
          break;
        }
      }
      scan_ring(q, c, k, best);
    }
    return best;
  }

 private:
  void scan_cell(const Vec3& q, const CellIndex& c, double& best) const {
    auto it = buckets_.find(c);
    if (it == buckets_.end()) {
      return;
    }
    for (std::size_t i : it->second) {
      best = std::min(best, squared_distance(q, cloud_[i]));
    }
  }

  void scan_ring(const Vec3& q, const CellIndex& center, int k, double& best) const {
    if (k == 0) {
      scan_cell(q, center, best);
      return;
    }
    for (int di = -k; di <= k; ++di) {
      for (int dj = -k; dj <= k; ++dj) {
        if (std::abs(di) == k || std::abs(dj) == k) {
          for (int dk = -k; dk <= k; ++dk) {
            scan_cell(q, {center.i + di, center.j + dj, center.k + dk}, best);
          }
        } else {
          scan_cell(q, {center.i + di, center.j + dj, center.k - k}, best);
          scan_cell(q, {center.i + di, center.j + dj, center.k + k}, best);
        }
      }
    }
  }

  const PointCloud& cloud_;
  double cell_ = 1.0;
  CellIndex min_cell_, max_cell_;
  std::unordered_map<CellIndex, std::vector<std::size_t>, CellIndexHash> buckets_;
};

double directed_mean_nn(const PointCloud& from, const PointCloud& to, NnBackend backend) {
  const bool use_grid =
      backend == NnBackend::grid ||
      (backend == NnBackend::automatic && from.size() * to.size() > 4'000'000);
  double sum = 0.0;
  if (use_grid) {
    NnGrid grid(to);
    for (const Vec3& q : from.points) {
      sum += std::sqrt(grid.min_squared_dist(q));
    }
  } else {
    for (const Vec3& q : from.points) {
      sum += std::sqrt(min_squared_dist_brute(q, to));
    }
  }
  return sum / static_cast<double>(from.size());
}

bool lex_less(const PointCloud& a, const PointCloud& b) {
  return std::lexicographical_compare(
      a.points.begin(), a.points.end(), b.points.begin(), b.points.end(),
      [](const Vec3& u, const Vec3& v) {
        if (u.x != v.x) return u.x < v.x;
        if (u.y != v.y) return u.y < v.y;
        return u.z < v.z;
      });
}

PointCloud subsample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  if (cloud.size() <= n) {
    return cloud;
  }
  Rng rng(seed);
  std::vector<std::size_t> idx(cloud.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i : idx) {
    out.points.push_back(cloud[i]);
  }
  return out;
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b, NnBackend backend) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("chamfer: clouds must be nonempty");
  }
  return directed_mean_nn(a, b, backend) + directed_mean_nn(b, a, backend);
}

double emd(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("emd: clouds must have equal sizes");
  }
  if (a.empty()) {
    throw std::invalid_argument("emd: clouds must be nonempty");
  }
  // Canonical operand order makes emd(a, b) and emd(b, a) run the identical
  // computation.
  const PointCloud& rows = lex_less(b, a) ? b : a;
  const PointCloud& cols = lex_less(b, a) ? a : b;
  const std::size_t n = rows.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cost[i * n + j] = std::sqrt(squared_distance(rows[i], cols[j]));
    }
  }
  const std::vector<std::size_t> match = min_cost_assignment(cost, n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += cost[i * n + match[i]];
  }
  return sum / static_cast<double>(n);
}

Histogram2D Histogram2D::build(const PointCloud& cloud, int bins, double extent) {
  if (bins < 1) {
    throw std::invalid_argument("Histogram2D: bins_per_axis must be >= 1");
  }
  if (!(extent > 0.0)) {
    throw std::invalid_argument("Histogram2D: extent must be > 0");
  }
  Histogram2D h;
  h.bins = bins;
  h.extent = extent;
  h.counts.assign(static_cast<std::size_t>(bins) * bins, 0);
  const double scale = static_cast<double>(bins) / (2.0 * extent);
  for (const Vec3& p : cloud.points) {
    if (p.x < -extent || p.x > extent || p.y < -extent || p.y > extent) {
      continue;
    }
    int ix = static_cast<int>(std::floor((p.x + extent) * scale));
    int iy = static_cast<int>(std::floor((p.y + extent) * scale));
    ix = std::min(ix, bins - 1);  // inclusive upper edge
    iy = std::min(iy, bins - 1);
    ++h.counts[static_cast<std::size_t>(ix) * bins + iy];
    ++h.total;
  }
  return h;
}

std::vector<double> Histogram2D::pmf() const {
  if (total == 0) {
    throw std::runtime_error("Histogram2D: degenerate histogram, no point inside extent");
  }
  std::vector<double> p(counts.size());
  const double inv = 1.0 / static_cast<double>(total);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    p[i] = static_cast<double>(counts[i]) * inv;
  }
  return p;
}

double jsd_pmf(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("jsd_pmf: PMF size mismatch");
  }
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) {
      kl_p += p[i] * std::log2(p[i] / m);
    }
    if (q[i] > 0.0) {
      kl_q += q[i] * std::log2(q[i] / m);
    }
  }
  return 0.5 * kl_p + 0.5 * kl_q;
}

double jsd(const PointCloud& a, const PointCloud& b, int bins_per_axis, double extent) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("jsd: clouds must be nonempty");
  }
  const Histogram2D ha = Histogram2D::build(a, bins_per_axis, extent);
  const Histogram2D hb = Histogram2D::build(b, bins_per_axis, extent);
  return jsd_pmf(ha.pmf(), hb.pmf());
}

double bev_extent(const PointCloud& a, const PointCloud& b) {
  double extent = 0.0;
  for (const PointCloud* c : {&a, &b}) {
    for (const Vec3& p : c->points) {
      extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    }
  }
  return extent > 0.0 ? extent : 1.0;
}

double voxel_iou(const PointCloud& a, const PointCloud& b, double resolution) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("voxel_iou: clouds must be nonempty");
  }
  const VoxelGrid ga = voxelize(a, resolution);
  const VoxelGrid gb = voxelize(b, resolution);
  std::size_t inter = 0;
  for (const CellIndex& c : ga.occupied) {
    inter += gb.occupied.count(c);
  }
  const std::size_t uni = ga.occupied.size() + gb.occupied.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricReport evaluate(const PointCloud& completed, const PointCloud& gt, const EvalConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  MetricReport report;
  report.cd = chamfer(completed, gt);

  const double extent = cfg.jsd_extent > 0.0 ? cfg.jsd_extent : bev_extent(completed, gt);
  report.jsd = jsd(completed, gt, cfg.jsd_bins, extent);

  const std::size_t n = std::min({completed.size(), gt.size(), cfg.emd_cap});
  // Same sub-seed on both sides so identical clouds keep emd == 0 after capping.
  const std::uint64_t sub_seed = mix_seed(cfg.seed, 0xE3D);
  report.emd = emd(subsample(completed, n, sub_seed), subsample(gt, n, sub_seed));

  for (double res : cfg.iou_resolutions) {
    report.iou[res] = voxel_iou(completed, gt, res);
  }
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pcd

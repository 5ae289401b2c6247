#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "pcd/point_cloud.hpp"

namespace pcd {

enum class NnBackend { automatic, brute_force, grid };

// Symmetric mean nearest-neighbor distance, unsquared Euclidean, in meters.
double chamfer(const PointCloud& a, const PointCloud& b,
               NnBackend backend = NnBackend::automatic);

// Exact earth mover's distance between equal-size clouds: minimum over
// bijections of the mean pairwise distance.
double emd(const PointCloud& a, const PointCloud& b);

// 2D occupancy histogram over the (x, y) plane, [-extent, extent] per axis.
struct Histogram2D {
  int bins = 0;
  double extent = 0.0;
  std::vector<std::uint64_t> counts;  // bins * bins, row-major in (ix, iy)
  std::uint64_t total = 0;

  static Histogram2D build(const PointCloud& cloud, int bins, double extent);
  // Probability mass function; throws if no point landed inside the extent.
  std::vector<double> pmf() const;
};

// Jensen-Shannon divergence between two PMFs, base-2 logarithm, in [0, 1].
double jsd_pmf(const std::vector<double>& p, const std::vector<double>& q);

// JSD between bird's-eye-view occupancy histograms of the two clouds.
double jsd(const PointCloud& a, const PointCloud& b, int bins_per_axis, double extent);

// Smallest symmetric xy window containing both clouds; 1.0 when both sit at
// the origin.
double bev_extent(const PointCloud& a, const PointCloud& b);

double voxel_iou(const PointCloud& a, const PointCloud& b, double resolution);

struct EvalConfig {
  int jsd_bins = 64;
  double jsd_extent = 0.0;  // <= 0: use the scene bounding radius in (x, y)
  std::vector<double> iou_resolutions = {0.5, 0.2, 0.1};
  std::size_t emd_cap = 256;  // both clouds subsampled to min(|a|, |b|, cap)
  std::uint64_t seed = 0;     // drives the EMD subsample
};

struct MetricReport {
  double cd = 0.0;
  double jsd = 0.0;
  double emd = 0.0;
  std::map<double, double> iou;  // resolution -> IoU
  double wall_time_seconds = 0.0;
};

// Full metric sweep of a completion against ground truth. Deterministic for a
// fixed cfg.seed, wall time excepted.
MetricReport evaluate(const PointCloud& completed, const PointCloud& gt, const EvalConfig& cfg);

}  // namespace pcd

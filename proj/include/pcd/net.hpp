#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcd/point_cloud.hpp"

namespace pcd {

// Per-point MLP that maps a noisy point plus scan conditioning and a timestep
// embedding to a 3D noise estimate. Small on purpose: every gradient path is
// cheap enough to verify against finite differences.
struct NetArch {
  int context_width = 7;
  int time_embed_width = 16;
  std::vector<int> hidden = {64, 64};
  int output_width = 3;

  int input_width() const { return 3 + 3 + context_width + time_embed_width; }
  std::size_t param_count() const;
  bool operator==(const NetArch&) const = default;
};

struct NetParams {
  NetArch arch;
  std::vector<double> w;
};

// Conditioning derived from the sparse scan: 7 summary features (mean,
// covariance diagonal, log1p of the point count) plus a sorted copy of the
// scan used for per-query nearest-point offsets. Sorting makes the embedding
// independent of the scan's point order, bit for bit.
struct ContextEmbedding {
  std::array<double, 7> summary{};
  PointCloud scan;
};

ContextEmbedding encode_context(const PointCloud& p);

// Offset from q to its nearest scan point (ties broken toward the
// lexicographically smallest point).
Vec3 nearest_offset(const Vec3& q, const PointCloud& sorted_scan);

// Sinusoidal features of u = t/T: sin/cos pairs at geometric frequencies
// pi * 2^j, j = 0..width/2-1.
std::vector<double> time_embedding(int t, int T, int width);

NetParams init_params(const NetArch& arch, std::uint64_t seed);

std::vector<Vec3> eps_forward(const NetParams& params, const PointCloud& g_t, int t, int T,
                              const ContextEmbedding& ctx);

struct EpsGrads {
  std::vector<double> param_grad;   // same layout as NetParams::w
  std::vector<Vec3> input_grad;     // d<upstream, output>/d(point coordinates)
};

// Exact reverse-mode gradients of the scalar <upstream, eps_forward(...)>.
// The input gradient includes the nearest-offset path (offset = nn - q, so it
// contributes with a negative sign); the nearest neighbor itself is treated
// as locally constant.
EpsGrads eps_backward(const NetParams& params, const PointCloud& g_t, int t, int T,
                      const ContextEmbedding& ctx, const std::vector<Vec3>& upstream);

std::vector<double> sgd_step(const std::vector<double>& params, const std::vector<double>& grad,
                             double lr);

double lr_schedule(double lr0, double gamma, std::uint64_t k);

void save_checkpoint(const std::string& path, const NetParams& params);
NetParams load_checkpoint(const std::string& path);

}  // namespace pcd

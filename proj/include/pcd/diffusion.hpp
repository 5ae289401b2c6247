#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcd/point_cloud.hpp"
#include "pcd/rng.hpp"

namespace pcd {

// Variance schedule over timesteps 1..T. alpha_bar_at(0) == 1 by convention,
// which makes the final denoising jump to step 0 well defined.
class NoiseSchedule {
 public:
  NoiseSchedule(int T, std::vector<double> betas);

  int T() const { return T_; }
  double beta_at(int t) const;
  double alpha_at(int t) const;
  double alpha_bar_at(int t) const;  // accepts t = 0, returns 1
  double sigma_at(int t) const;
  // Standard deviation of the forward marginal at t: sqrt(1 - alpha_bar[t]).
  double s_at(int t) const;

 private:
  void check_step(int t, int lo) const;

  int T_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule build_schedule(int T, const std::string& kind);

struct NoisySample {
  PointCloud cloud;
  int t = 0;
  std::vector<Vec3> eps;
};

enum class SamplerVariant { ddpm, local_consistent };

SamplerVariant variant_from_string(const std::string& name);
std::string to_string(SamplerVariant variant);

// Per-point forward step: out = g0 + sqrt(1 - alpha_bar[t]) * eps. The clean
// signal is left unscaled.
NoisySample noise_point_cloud(const PointCloud& g0, int t, const std::vector<Vec3>& eps,
                              const NoiseSchedule& sched);

// Start of the reverse chain: p_star + lambda * s_T * eps_T with fresh normal
// draws. lambda = 1 reproduces noise_point_cloud at t = T bit for bit.
NoisySample init_noisy(const PointCloud& p_star, const NoiseSchedule& sched, double lambda,
                       std::uint64_t seed);

// One denoising move from t_hi to t_lo using a single eps prediction.
// ddpm applies the classic posterior-mean update with coefficients at t_hi;
// local_consistent moves along the forward marginal, so with the true eps and
// deterministic = true it inverts the forward step exactly.
PointCloud reverse_jump(const PointCloud& cloud, const std::vector<Vec3>& eps_pred, int t_hi,
                        int t_lo, const NoiseSchedule& sched, SamplerVariant variant,
                        bool deterministic, Rng& rng);

PointCloud reverse_step(const NoisySample& gt, const std::vector<Vec3>& eps_pred,
                        const NoiseSchedule& sched, SamplerVariant variant, bool deterministic,
                        Rng& rng);

// Conditioned noise predictor: (noisy cloud, t) -> per-point eps estimate.
using EpsFn = std::function<std::vector<Vec3>(const PointCloud&, int)>;

struct SampleConfig {
  int K = 8;
  std::vector<int> steps;  // ascending, last entry must equal sched.T()
  double lambda = 1.0;
  SamplerVariant variant = SamplerVariant::local_consistent;
  bool deterministic = false;
};

// n uniform strides ending at T: round(T * (i+1) / n) for i = 0..n-1.
std::vector<int> uniform_steps(int T, int n);

// Replicates p by K, draws the lambda-scaled start, then walks the strided
// reverse chain down to step 0. One model call per entry of cfg.steps.
PointCloud sample(const EpsFn& model, const PointCloud& p, const SampleConfig& cfg,
                  const NoiseSchedule& sched, std::uint64_t seed);

}  // namespace pcd

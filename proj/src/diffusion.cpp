#include "pcd/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace pcd {

NoiseSchedule::NoiseSchedule(int T, std::vector<double> betas) : T_(T), betas_(std::move(betas)) {
  if (T_ < 1) {
    throw std::invalid_argument("NoiseSchedule: T must be >= 1");
  }
  if (betas_.size() != static_cast<std::size_t>(T_) + 1) {
    throw std::invalid_argument("NoiseSchedule: need one beta per step in 1..T");
  }
  alphas_.assign(T_ + 1, 0.0);
  alpha_bars_.assign(T_ + 1, 1.0);
  for (int t = 1; t <= T_; ++t) {
    const double b = betas_[t];
    if (!(b > 0.0) || !(b < 1.0)) {
      throw std::invalid_argument("NoiseSchedule: beta must lie in (0,1)");
    }
    alphas_[t] = 1.0 - b;
    alpha_bars_[t] = alpha_bars_[t - 1] * alphas_[t];
  }
}

void NoiseSchedule::check_step(int t, int lo) const {
  if (t < lo || t > T_) {
    throw std::invalid_argument("NoiseSchedule: step " + std::to_string(t) + " outside [" +
                                std::to_string(lo) + "," + std::to_string(T_) + "]");
  }
}

double NoiseSchedule::beta_at(int t) const {
  check_step(t, 1);
  return betas_[t];
}

double NoiseSchedule::alpha_at(int t) const {
  check_step(t, 1);
  return alphas_[t];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  check_step(t, 0);
  return alpha_bars_[t];
}

double NoiseSchedule::sigma_at(int t) const { return std::sqrt(beta_at(t)); }

double NoiseSchedule::s_at(int t) const { return std::sqrt(1.0 - alpha_bar_at(t)); }

NoiseSchedule build_schedule(int T, const std::string& kind) {
  if (T < 1) {
    throw std::invalid_argument("build_schedule: T must be >= 1");
  }
  if (kind != "linear") {
    throw std::invalid_argument("build_schedule: unknown schedule kind '" + kind + "'");
  }
  const double beta_lo = 1e-4;
  const double beta_hi = 2e-2;
  std::vector<double> betas(T + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    betas[t] = T == 1 ? beta_lo
                      : beta_lo + (beta_hi - beta_lo) * static_cast<double>(t - 1) /
                                      static_cast<double>(T - 1);
  }
  return NoiseSchedule(T, std::move(betas));
}

SamplerVariant variant_from_string(const std::string& name) {
  if (name == "ddpm") {
    return SamplerVariant::ddpm;
  }
  if (name == "local-consistent") {
    return SamplerVariant::local_consistent;
  }
  throw std::invalid_argument("unknown sampler variant '" + name + "'");
}

std::string to_string(SamplerVariant variant) {
  return variant == SamplerVariant::ddpm ? "ddpm" : "local-consistent";
}

NoisySample noise_point_cloud(const PointCloud& g0, int t, const std::vector<Vec3>& eps,
                              const NoiseSchedule& sched) {
  if (eps.size() != g0.size()) {
    throw std::invalid_argument("noise_point_cloud: eps count must match cloud count");
  }
  if (t < 1 || t > sched.T()) {
    throw std::invalid_argument("noise_point_cloud: t outside [1,T]");
  }
  const double s = sched.s_at(t);
  NoisySample out;
  out.t = t;
  out.eps = eps;
  out.cloud.points.reserve(g0.size());
  for (std::size_t i = 0; i < g0.size(); ++i) {
    out.cloud.points.push_back(g0[i] + eps[i] * s);
  }
  return out;
}

NoisySample init_noisy(const PointCloud& p_star, const NoiseSchedule& sched, double lambda,
                       std::uint64_t seed) {
  if (!(lambda >= 1.0)) {
    throw std::invalid_argument("init_noisy: lambda must be >= 1");
  }
  Rng rng(seed);
  std::vector<Vec3> eps;
  eps.reserve(p_star.size());
  for (std::size_t i = 0; i < p_star.size(); ++i) {
    eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  const double scale = lambda * sched.s_at(sched.T());
  NoisySample out;
  out.t = sched.T();
  out.eps = std::move(eps);
  out.cloud.points.reserve(p_star.size());
  for (std::size_t i = 0; i < p_star.size(); ++i) {
    out.cloud.points.push_back(p_star[i] + out.eps[i] * scale);
  }
  return out;
}

PointCloud reverse_jump(const PointCloud& cloud, const std::vector<Vec3>& eps_pred, int t_hi,
                        int t_lo, const NoiseSchedule& sched, SamplerVariant variant,
                        bool deterministic, Rng& rng) {
  if (eps_pred.size() != cloud.size()) {
    throw std::invalid_argument("reverse_jump: eps count must match cloud count");
  }
  if (t_hi < 1 || t_hi > sched.T()) {
    throw std::invalid_argument("reverse_jump: source step outside [1,T]");
  }
  if (t_lo < 0 || t_lo >= t_hi) {
    throw std::invalid_argument("reverse_jump: target step must lie in [0, t_hi)");
  }
  PointCloud out;
  out.points.reserve(cloud.size());
  if (variant == SamplerVariant::ddpm) {
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t_hi));
    const double one_minus_alpha = 1.0 - sched.alpha_at(t_hi);
    const double eps_coeff = one_minus_alpha == 0.0 ? 0.0 : one_minus_alpha / sched.s_at(t_hi);
    const bool add_noise = !deterministic && t_hi > 1;
    const double sigma = add_noise ? sched.sigma_at(t_hi) : 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      Vec3 p = (cloud[i] - eps_pred[i] * eps_coeff) * inv_sqrt_alpha;
      if (add_noise) {
        p += Vec3{rng.normal(), rng.normal(), rng.normal()} * sigma;
      }
      out.points.push_back(p);
    }
  } else {
    const double shift = sched.s_at(t_hi) - sched.s_at(t_lo);
    const bool add_noise = !deterministic && t_lo > 0;
    const double noise_std =
        add_noise ? std::sqrt(sched.alpha_bar_at(t_lo) - sched.alpha_bar_at(t_hi)) : 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      Vec3 p = cloud[i] - eps_pred[i] * shift;
      if (add_noise) {
        p += Vec3{rng.normal(), rng.normal(), rng.normal()} * noise_std;
      }
      out.points.push_back(p);
    }
  }
  return out;
}

PointCloud reverse_step(const NoisySample& gt, const std::vector<Vec3>& eps_pred,
                        const NoiseSchedule& sched, SamplerVariant variant, bool deterministic,
                        Rng& rng) {
  if (gt.t < 1) {
    throw std::invalid_argument("reverse_step: t must be >= 1");
  }
  return reverse_jump(gt.cloud, eps_pred, gt.t, gt.t - 1, sched, variant, deterministic, rng);
}

std::vector<int> uniform_steps(int T, int n) {
  if (T < 1 || n < 1 || n > T) {
    throw std::invalid_argument("uniform_steps: need 1 <= n <= T");
  }
  std::vector<int> steps(n);
  for (int i = 0; i < n; ++i) {
    steps[i] = static_cast<int>(
        std::llround(static_cast<double>(T) * static_cast<double>(i + 1) / static_cast<double>(n)));
  }
  return steps;
}

PointCloud sample(const EpsFn& model, const PointCloud& p, const SampleConfig& cfg,
                  const NoiseSchedule& sched, std::uint64_t seed) {
  if (p.empty()) {
    throw std::invalid_argument("sample: conditioning cloud must be nonempty");
  }
  if (cfg.K < 1) {
    throw std::invalid_argument("sample: K must be >= 1");
  }
  if (cfg.steps.empty()) {
    throw std::invalid_argument("sample: steps must be nonempty");
  }
  for (std::size_t i = 0; i + 1 < cfg.steps.size(); ++i) {
    if (cfg.steps[i] >= cfg.steps[i + 1]) {
      throw std::invalid_argument("sample: steps must be strictly ascending");
    }
  }
  if (cfg.steps.front() < 1 || cfg.steps.back() != sched.T()) {
    throw std::invalid_argument("sample: steps must lie in [1,T] and end at T");
  }

  const PointCloud p_star = replicate_scan(p, cfg.K);
  NoisySample state = init_noisy(p_star, sched, cfg.lambda, mix_seed(seed, 1));
  Rng step_rng(mix_seed(seed, 2));
  PointCloud cloud = std::move(state.cloud);
  for (std::size_t i = cfg.steps.size(); i-- > 0;) {
    const int t_hi = cfg.steps[i];
    const int t_lo = i > 0 ? cfg.steps[i - 1] : 0;
    const std::vector<Vec3> eps_hat = model(cloud, t_hi);
    cloud = reverse_jump(cloud, eps_hat, t_hi, t_lo, sched, cfg.variant, cfg.deterministic,
                         step_rng);
  }
  return cloud;
}

}  // namespace pcd

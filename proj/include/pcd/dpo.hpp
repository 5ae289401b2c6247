#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcd/diffusion.hpp"
#include "pcd/distill.hpp"
#include "pcd/net.hpp"
#include "pcd/point_cloud.hpp"
#include "pcd/scene_synth.hpp"

namespace pcd {

enum class DpoWeighting { constant };

struct DpoConfig {
  double beta = 0.1;
  DpoWeighting weighting = DpoWeighting::constant;
};

// Signal-to-noise ratio of the forward marginal at t.
double snr(const NoiseSchedule& sched, int t);

double timestep_weight(const NoiseSchedule& sched, int t, DpoWeighting weighting);

// One pregenerated, fixed preference example for off-policy fine-tuning.
struct FixedPair {
  std::string id;
  PointCloud sparse;
  PointCloud winner;
  PointCloud loser;
  double winner_score = 0.0;
  double loser_score = 0.0;
  PreferenceMetric metric = PreferenceMetric::cd;
};

struct DpoLoss {
  double loss = 0.0;
  double inner = 0.0;
  std::vector<double> grad;  // d loss / d eta parameters
};

// Pairwise preference loss on noise-prediction errors:
//   inner = -beta * T * w(t) * [(|e_w - eta(x_w)|^2 - |e_w - ref(x_w)|^2)
//                             - (|e_l - eta(x_l)|^2 - |e_l - ref(x_l)|^2)]
//   loss  = -log sigmoid(inner)
// Squared norms sum over all points of a cloud. The reference network is
// frozen; the exact gradient flows only through the eta evaluations.
DpoLoss diffusion_dpo_loss(const NetParams& eta, const NetParams& ref, const FixedPair& pair,
                           int t, const std::vector<Vec3>& eps_w, const std::vector<Vec3>& eps_l,
                           const NoiseSchedule& sched, const DpoConfig& cfg);

struct FixedPairConfig {
  int n_pairs = 0;
  int K = 8;
  double lambda_alt = 1.5;
  std::vector<int> steps;  // sampling strides; empty means 8 uniform strides
  SamplerVariant variant = SamplerVariant::local_consistent;
  PreferenceMetric metric = PreferenceMetric::cd;
  std::uint64_t seed = 0;
};

// Samples two completions per scene from the given generator (shared base
// draws, lambda 1 vs lambda_alt), scores them against ground truth, and keeps
// the ranked pair. Off-policy by construction: the pairs never change once
// made.
std::vector<FixedPair> make_fixed_pairs(const std::vector<ScenePair>& scenes,
                                        const NetParams& generator, const NoiseSchedule& sched,
                                        const FixedPairConfig& cfg);

void save_fixed_pairs(const std::string& dir, const std::vector<FixedPair>& pairs);
std::vector<FixedPair> load_fixed_pairs(const std::string& dir);

struct DpoFinetuneConfig {
  DpoConfig dpo;
  int iterations = 0;
  double lr0 = 1e-5;
  double gamma = 0.999;
  std::uint64_t seed = 0;
};

struct DpoFinetuneLog {
  std::vector<double> losses;
};

// Cycles the fixed pairs, one loss evaluation and one SGD step per iteration,
// with the starting parameters as the frozen reference.
NetParams dpo_finetune(const NetParams& ref, const std::vector<FixedPair>& pairs,
                       const NoiseSchedule& sched, const DpoFinetuneConfig& cfg,
                       DpoFinetuneLog* log = nullptr);

}  // namespace pcd

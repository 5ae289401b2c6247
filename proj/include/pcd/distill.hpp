#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcd/diffusion.hpp"
#include "pcd/net.hpp"
#include "pcd/point_cloud.hpp"
#include "pcd/scene_synth.hpp"

namespace pcd {

enum class PreferenceMetric { cd, jsd };

PreferenceMetric metric_from_string(const std::string& name);
std::string to_string(PreferenceMetric metric);

double score_completion(const PointCloud& completed, const PointCloud& gt,
                        PreferenceMetric metric);

struct TrainConfig {
  double lambda_alt = 1.1;
  double omega = 1.0;
  int K = 8;
  std::vector<int> student_steps;  // empty means single-step at T
  PreferenceMetric metric = PreferenceMetric::cd;
  double lr0 = 1e-5;
  double gamma = 0.999;
  int iterations = 0;
  std::uint64_t seed = 0;
  SamplerVariant variant = SamplerVariant::local_consistent;
  bool random_steps = false;  // redraw 1..8 uniform strides per iteration
};

void validate_train_config(const TrainConfig& cfg, int T);

// One recorded denoising move: output = cloud_scale * input - eps_scale * eps.
// The tape is what lets gradients flow from a generated cloud back into the
// generator parameters.
struct StepRecord {
  PointCloud input;
  int t = 0;
  double cloud_scale = 1.0;
  double eps_scale = 0.0;
};

struct Rollout {
  std::vector<StepRecord> steps;
};

struct StudentSample {
  PointCloud g0;
  Rollout tape;
  std::uint64_t generation = 0;
};

struct PreferencePair {
  PointCloud winner;
  PointCloud loser;
  double winner_score = 0.0;
  double loser_score = 0.0;
  double lambda_default = 1.0;
  double lambda_alt = 1.1;
  PreferenceMetric metric = PreferenceMetric::cd;
  bool degenerate = false;
  bool winner_is_default = true;  // true when the lambda = 1 half won
  Rollout winner_tape;
  Rollout loser_tape;
  std::uint64_t generation = 0;
};

struct TrainState {
  NetParams student;
  NetParams ta_w;
  NetParams ta_l;
  NetParams teacher;  // frozen
  int iteration = 0;
  std::uint64_t student_generation = 0;
};

TrainState make_train_state(const NetParams& teacher);

// Deterministic generator pass: replicate the scan K times, add the
// lambda-scaled start noise, then walk the strided reverse chain while
// recording each move for later backprop. Steps must be ascending and end
// at sched.T().
StudentSample rollout_student(const NetParams& student, const ScenePair& scene,
                              const ContextEmbedding& ctx, const NoiseSchedule& sched,
                              const std::vector<int>& steps, int K, double lambda,
                              SamplerVariant variant, std::uint64_t seed);

// Gradient of <upstream, generated cloud> with respect to the generator
// parameters, walking the rollout tape in reverse.
std::vector<double> student_pullback(const NetParams& student, const ContextEmbedding& ctx, int T,
                                     const Rollout& tape, const std::vector<Vec3>& upstream);

// Two completions from the same base noise draws, scaled by lambda 1 and
// cfg.lambda_alt, scored against ground truth; lower score wins. Ties go to
// the lambda = 1 half and mark the pair degenerate.
PreferencePair make_preference_pair(const TrainState& state, const ScenePair& scene,
                                    const TrainConfig& cfg, const NoiseSchedule& sched,
                                    std::uint64_t seed);

struct StudentGrad {
  std::vector<double> grad;
  bool skipped = false;
};

// Preference-aligned distillation gradient. Noises both pair halves with the
// shared eps draw, forms the teacher-minus-assistant residuals (treated as
// constants), and pulls each residual back through its half's generator tape:
// grad = (1/omega) * (loser_term - winner_term). Throws logic_error when the
// pair was generated by an older student.
StudentGrad distillation_dpo_grad(const TrainState& state, const PreferencePair& pair,
                                  const ScenePair& scene, int t, const std::vector<Vec3>& eps,
                                  const NoiseSchedule& sched, double omega);

struct TaUpdate {
  NetParams params;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One SGD step on the squared noise-prediction error, evaluated on a cloud
// the student generated.
TaUpdate ta_update_at(const NetParams& ta, const PointCloud& sample_g0, const ScenePair& scene,
                      const NoiseSchedule& sched, double lr, int t, const std::vector<Vec3>& eps);
TaUpdate ta_update(const NetParams& ta, const PointCloud& sample_g0, const ScenePair& scene,
                   const NoiseSchedule& sched, double lr, std::uint64_t seed);

struct ScoreDistillState {
  NetParams student;
  NetParams ta;
  NetParams teacher;  // frozen
  int iteration = 0;
  std::uint64_t student_generation = 0;
};

ScoreDistillState make_score_distill_state(const NetParams& teacher);

// Plain distillation signal: single assistant, no preference weighting.
std::vector<double> score_distill_grad(const ScoreDistillState& state, const StudentSample& sample,
                                       const ScenePair& scene, int t, const std::vector<Vec3>& eps,
                                       const NoiseSchedule& sched);

struct IterationLog {
  int iteration = 0;
  double lr = 0.0;
  double winner_score = 0.0;
  double loser_score = 0.0;
  double grad_norm_student = 0.0;
  double grad_norm_ta_w = 0.0;
  double grad_norm_ta_l = 0.0;
  bool degenerate = false;
};

struct EvalPoint {
  int iteration = 0;
  double mean_cd = 0.0;
};

struct TrainingLog {
  std::vector<IterationLog> iterations;
  std::vector<EvalPoint> evals;
};

struct EvalHook {
  std::vector<ScenePair> heldout;
  std::vector<int> steps;  // sampling strides for evaluation
  int K = 8;
  double lambda = 1.0;
  SamplerVariant variant = SamplerVariant::local_consistent;
  int every = 0;  // 0 records only the first and last iteration
  std::uint64_t seed = 0;
};

// Mean held-out chamfer distance of deterministic samples drawn with the
// given parameters.
double eval_student_cd(const NetParams& params, const std::vector<ScenePair>& heldout,
                       const std::vector<int>& steps, int K, double lambda,
                       SamplerVariant variant, const NoiseSchedule& sched, std::uint64_t seed);

// One alternating update: build a fresh on-policy pair, compute the student
// gradient against the current assistants, advance both assistants on their
// respective halves, then advance the student.
IterationLog train_iteration(TrainState& state, const ScenePair& scene, const TrainConfig& cfg,
                             const NoiseSchedule& sched);

struct TrainResult {
  TrainState state;
  TrainingLog log;
};

TrainResult train(const std::vector<ScenePair>& dataset, const NetParams& teacher,
                  const NoiseSchedule& sched, const TrainConfig& cfg,
                  const EvalHook* hook = nullptr);

struct ScoreDistillResult {
  ScoreDistillState state;
  TrainingLog log;
};

IterationLog train_score_distill_iteration(ScoreDistillState& state, const ScenePair& scene,
                                           const TrainConfig& cfg, const NoiseSchedule& sched);

ScoreDistillResult train_score_distill(const std::vector<ScenePair>& dataset,
                                       const NetParams& teacher, const NoiseSchedule& sched,
                                       const TrainConfig& cfg, const EvalHook* hook = nullptr);

// Gradient of the standard noise-prediction loss on a clean cloud; shared by
// teacher pretraining and the preference-free baselines.
struct DiffusionLossGrad {
  std::vector<double> grad;
  double loss = 0.0;
};

DiffusionLossGrad diffusion_loss_grad(const NetParams& params, const PointCloud& g0,
                                      const ContextEmbedding& ctx, const NoiseSchedule& sched,
                                      int t, const std::vector<Vec3>& eps);

struct PretrainConfig {
  int iterations = 2000;
  double lr0 = 1e-4;
  double gamma = 0.9995;
  std::uint64_t seed = 0;
};

NetParams pretrain_teacher(const std::vector<ScenePair>& dataset, const NetArch& arch,
                           const NoiseSchedule& sched, const PretrainConfig& cfg);

double l2_norm(const std::vector<double>& v);

}  // namespace pcd

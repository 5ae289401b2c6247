#include "pcd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "pcd/metrics.hpp"
#include "pcd/rng.hpp"

namespace pcd {
namespace {

std::vector<Vec3> draw_normals(Rng& rng, std::size_t n) {
  std::vector<Vec3> eps;
  eps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  return eps;
}

std::vector<int> effective_steps(const TrainConfig& cfg, int T, std::uint64_t seed) {
  if (cfg.random_steps) {
    Rng rng(mix_seed(seed, 7));
    const int max_nfe = std::min(8, T);
    const int nfe = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_nfe)));
    return uniform_steps(T, nfe);
  }
  if (cfg.student_steps.empty()) {
    return {T};
  }
  return cfg.student_steps;
}

void check_steps(const std::vector<int>& steps, int T, const char* who) {
  if (steps.empty()) {
    throw std::invalid_argument(std::string(who) + ": steps must be nonempty");
  }
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    if (steps[i] >= steps[i + 1]) {
      throw std::invalid_argument(std::string(who) + ": steps must be strictly ascending");
    }
  }
  if (steps.front() < 1 || steps.back() != T) {
    throw std::invalid_argument(std::string(who) + ": steps must lie in [1,T] and end at T");
  }
}

}  // namespace

PreferenceMetric metric_from_string(const std::string& name) {
  if (name == "cd") {
    return PreferenceMetric::cd;
  }
  if (name == "jsd") {
    return PreferenceMetric::jsd;
  }
  throw std::invalid_argument("unknown preference metric '" + name + "'");
}

std::string to_string(PreferenceMetric metric) {
  return metric == PreferenceMetric::cd ? "cd" : "jsd";
}

double score_completion(const PointCloud& completed, const PointCloud& gt,
                        PreferenceMetric metric) {
  if (metric == PreferenceMetric::cd) {
    return chamfer(completed, gt);
  }
  return jsd(completed, gt, 64, bev_extent(completed, gt));
}

void validate_train_config(const TrainConfig& cfg, int T) {
  if (!(cfg.lambda_alt > 1.0)) {
    throw std::invalid_argument("train config: lambda_alt must be > 1");
  }
  if (!(cfg.omega > 0.0)) {
    throw std::invalid_argument("train config: omega must be > 0");
  }
  if (cfg.K < 1) {
    throw std::invalid_argument("train config: K must be >= 1");
  }
  if (!(cfg.lr0 > 0.0)) {
    throw std::invalid_argument("train config: lr0 must be > 0");
  }
  if (!(cfg.gamma > 0.0) || cfg.gamma > 1.0) {
    throw std::invalid_argument("train config: gamma must lie in (0,1]");
  }
  if (cfg.iterations < 0) {
    throw std::invalid_argument("train config: iterations must be >= 0");
  }
  if (!cfg.student_steps.empty()) {
    check_steps(cfg.student_steps, T, "train config");
  }
}

TrainState make_train_state(const NetParams& teacher) {
  TrainState state;
  state.student = teacher;
  state.ta_w = teacher;
  state.ta_l = teacher;
  state.teacher = teacher;
  return state;
}

ScoreDistillState make_score_distill_state(const NetParams& teacher) {
  ScoreDistillState state;
  state.student = teacher;
  state.ta = teacher;
  state.teacher = teacher;
  return state;
}

StudentSample rollout_student(const NetParams& student, const ScenePair& scene,
                              const ContextEmbedding& ctx, const NoiseSchedule& sched,
                              const std::vector<int>& steps, int K, double lambda,
                              SamplerVariant variant, std::uint64_t seed) {
  check_steps(steps, sched.T(), "rollout_student");
  if (K < 1) {
    throw std::invalid_argument("rollout_student: K must be >= 1");
  }
  const PointCloud p_star = replicate_scan(scene.sparse, static_cast<std::size_t>(K));
  NoisySample init = init_noisy(p_star, sched, lambda, seed);

  StudentSample out;
  out.tape.steps.reserve(steps.size());
  PointCloud cloud = std::move(init.cloud);
  Rng unused(0);
  for (std::size_t i = steps.size(); i-- > 0;) {
    const int t_hi = steps[i];
    const int t_lo = i > 0 ? steps[i - 1] : 0;
    const std::vector<Vec3> eps_hat = eps_forward(student, cloud, t_hi, sched.T(), ctx);

    StepRecord rec;
    rec.input = cloud;
    rec.t = t_hi;
    if (variant == SamplerVariant::ddpm) {
      rec.cloud_scale = 1.0 / std::sqrt(sched.alpha_at(t_hi));
      rec.eps_scale = rec.cloud_scale * (1.0 - sched.alpha_at(t_hi)) / sched.s_at(t_hi);
    } else {
      rec.cloud_scale = 1.0;
      rec.eps_scale = sched.s_at(t_hi) - sched.s_at(t_lo);
    }
    out.tape.steps.push_back(std::move(rec));

    cloud = reverse_jump(cloud, eps_hat, t_hi, t_lo, sched, variant, true, unused);
  }
  out.g0 = std::move(cloud);
  return out;
}

std::vector<double> student_pullback(const NetParams& student, const ContextEmbedding& ctx, int T,
                                     const Rollout& tape, const std::vector<Vec3>& upstream) {
  std::vector<double> pgrad(student.arch.param_count(), 0.0);
  if (tape.steps.empty()) {
    return pgrad;
  }
  if (upstream.size() != tape.steps.front().input.size()) {
    throw std::invalid_argument("student_pullback: upstream count must match cloud count");
  }
  std::vector<Vec3> v = upstream;
  for (std::size_t j = tape.steps.size(); j-- > 0;) {
    const StepRecord& rec = tape.steps[j];
    const EpsGrads g = eps_backward(student, rec.input, rec.t, T, ctx, v);
    for (std::size_t i = 0; i < pgrad.size(); ++i) {
      pgrad[i] -= rec.eps_scale * g.param_grad[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = v[i] * rec.cloud_scale - g.input_grad[i] * rec.eps_scale;
    }
  }
  return pgrad;
}

PreferencePair make_preference_pair(const TrainState& state, const ScenePair& scene,
                                    const TrainConfig& cfg, const NoiseSchedule& sched,
                                    std::uint64_t seed) {
  const ContextEmbedding ctx = encode_context(scene.sparse);
  const std::vector<int> steps = effective_steps(cfg, sched.T(), seed);
  const std::uint64_t init_seed = mix_seed(seed, 1);

  StudentSample sample_def = rollout_student(state.student, scene, ctx, sched, steps, cfg.K, 1.0,
                                             cfg.variant, init_seed);
  StudentSample sample_alt = rollout_student(state.student, scene, ctx, sched, steps, cfg.K,
                                             cfg.lambda_alt, cfg.variant, init_seed);

  const double score_def = score_completion(sample_def.g0, scene.ground_truth, cfg.metric);
  const double score_alt = score_completion(sample_alt.g0, scene.ground_truth, cfg.metric);

  PreferencePair pair;
  pair.lambda_default = 1.0;
  pair.lambda_alt = cfg.lambda_alt;
  pair.metric = cfg.metric;
  pair.generation = state.student_generation;
  pair.degenerate =
      std::abs(score_def - score_alt) <= 1e-12 || sample_def.g0 == sample_alt.g0;
  pair.winner_is_default = score_def <= score_alt;
  if (pair.winner_is_default) {
    pair.winner = std::move(sample_def.g0);
    pair.winner_tape = std::move(sample_def.tape);
    pair.winner_score = score_def;
    pair.loser = std::move(sample_alt.g0);
    pair.loser_tape = std::move(sample_alt.tape);
    pair.loser_score = score_alt;
  } else {
    pair.winner = std::move(sample_alt.g0);
    pair.winner_tape = std::move(sample_alt.tape);
    pair.winner_score = score_alt;
    pair.loser = std::move(sample_def.g0);
    pair.loser_tape = std::move(sample_def.tape);
    pair.loser_score = score_def;
  }
  return pair;
}

StudentGrad distillation_dpo_grad(const TrainState& state, const PreferencePair& pair,
                                  const ScenePair& scene, int t, const std::vector<Vec3>& eps,
                                  const NoiseSchedule& sched, double omega) {
  if (pair.generation != state.student_generation) {
    throw std::logic_error("distillation_dpo_grad: preference pair is stale, regenerate it with "
                           "the current student");
  }
  if (!(omega > 0.0)) {
    throw std::invalid_argument("distillation_dpo_grad: omega must be > 0");
  }
  if (t < 1 || t > sched.T()) {
    throw std::invalid_argument("distillation_dpo_grad: t outside [1,T]");
  }
  if (eps.size() != pair.winner.size() || eps.size() != pair.loser.size()) {
    throw std::invalid_argument("distillation_dpo_grad: eps count must match pair clouds");
  }

  StudentGrad out;
  out.grad.assign(state.student.arch.param_count(), 0.0);
  if (pair.degenerate) {
    out.skipped = true;
    return out;
  }

  const ContextEmbedding ctx = encode_context(scene.sparse);
  const int T = sched.T();
  const PointCloud noisy_w = noise_point_cloud(pair.winner, t, eps, sched).cloud;
  const PointCloud noisy_l = noise_point_cloud(pair.loser, t, eps, sched).cloud;

  // Residuals are constants for the student update: only the generator path
  // below carries gradient.
  const std::vector<Vec3> teacher_w = eps_forward(state.teacher, noisy_w, t, T, ctx);
  const std::vector<Vec3> ta_w_pred = eps_forward(state.ta_w, noisy_w, t, T, ctx);
  const std::vector<Vec3> teacher_l = eps_forward(state.teacher, noisy_l, t, T, ctx);
  const std::vector<Vec3> ta_l_pred = eps_forward(state.ta_l, noisy_l, t, T, ctx);
  std::vector<Vec3> d_w(eps.size()), d_l(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    d_w[i] = teacher_w[i] - ta_w_pred[i];
    d_l[i] = teacher_l[i] - ta_l_pred[i];
  }

  const std::vector<double> g_l = student_pullback(state.student, ctx, T, pair.loser_tape, d_l);
  const std::vector<double> g_w = student_pullback(state.student, ctx, T, pair.winner_tape, d_w);
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    out.grad[i] = (g_l[i] - g_w[i]) / omega;
  }
  return out;
}

DiffusionLossGrad diffusion_loss_grad(const NetParams& params, const PointCloud& g0,
                                      const ContextEmbedding& ctx, const NoiseSchedule& sched,
                                      int t, const std::vector<Vec3>& eps) {
  const NoisySample noisy = noise_point_cloud(g0, t, eps, sched);
  const std::vector<Vec3> pred = eps_forward(params, noisy.cloud, t, sched.T(), ctx);
  DiffusionLossGrad out;
  std::vector<Vec3> upstream(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 r = pred[i] - eps[i];
    out.loss += squared_norm(r);
    upstream[i] = r * 2.0;
  }
  out.grad = eps_backward(params, noisy.cloud, t, sched.T(), ctx, upstream).param_grad;
  return out;
}

TaUpdate ta_update_at(const NetParams& ta, const PointCloud& sample_g0, const ScenePair& scene,
                      const NoiseSchedule& sched, double lr, int t,
                      const std::vector<Vec3>& eps) {
  const ContextEmbedding ctx = encode_context(scene.sparse);
  const DiffusionLossGrad dg = diffusion_loss_grad(ta, sample_g0, ctx, sched, t, eps);
  TaUpdate out;
  out.loss = dg.loss;
  out.grad_norm = l2_norm(dg.grad);
  out.params.arch = ta.arch;
  out.params.w = sgd_step(ta.w, dg.grad, lr);
  return out;
}

TaUpdate ta_update(const NetParams& ta, const PointCloud& sample_g0, const ScenePair& scene,
                   const NoiseSchedule& sched, double lr, std::uint64_t seed) {
  Rng rng(seed);
  const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T())));
  const std::vector<Vec3> eps = draw_normals(rng, sample_g0.size());
  return ta_update_at(ta, sample_g0, scene, sched, lr, t, eps);
}

std::vector<double> score_distill_grad(const ScoreDistillState& state, const StudentSample& sample,
                                       const ScenePair& scene, int t, const std::vector<Vec3>& eps,
                                       const NoiseSchedule& sched) {
  if (sample.generation != state.student_generation) {
    throw std::logic_error("score_distill_grad: sample is stale, regenerate it with the current "
                           "student");
  }
  if (t < 1 || t > sched.T()) {
    throw std::invalid_argument("score_distill_grad: t outside [1,T]");
  }
  if (eps.size() != sample.g0.size()) {
    throw std::invalid_argument("score_distill_grad: eps count must match sample cloud");
  }
  const ContextEmbedding ctx = encode_context(scene.sparse);
  const int T = sched.T();
  const PointCloud noisy = noise_point_cloud(sample.g0, t, eps, sched).cloud;
  const std::vector<Vec3> teacher_pred = eps_forward(state.teacher, noisy, t, T, ctx);
  const std::vector<Vec3> ta_pred = eps_forward(state.ta, noisy, t, T, ctx);
  std::vector<Vec3> d(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    d[i] = teacher_pred[i] - ta_pred[i];
  }
  return student_pullback(state.student, ctx, T, sample.tape, d);
}

IterationLog train_iteration(TrainState& state, const ScenePair& scene, const TrainConfig& cfg,
                             const NoiseSchedule& sched) {
  validate_train_config(cfg, sched.T());
  const std::uint64_t it_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(state.iteration));
  const double lr = lr_schedule(cfg.lr0, cfg.gamma, static_cast<std::uint64_t>(state.iteration));

  PreferencePair pair = make_preference_pair(state, scene, cfg, sched, mix_seed(it_seed, 1));

  Rng grad_rng(mix_seed(it_seed, 2));
  const int t = 1 + static_cast<int>(grad_rng.below(static_cast<std::uint64_t>(sched.T())));
  const std::vector<Vec3> eps = draw_normals(grad_rng, pair.winner.size());
  const StudentGrad sg = distillation_dpo_grad(state, pair, scene, t, eps, sched, cfg.omega);

  const TaUpdate uw = ta_update(state.ta_w, pair.winner, scene, sched, lr, mix_seed(it_seed, 3));
  const TaUpdate ul = ta_update(state.ta_l, pair.loser, scene, sched, lr, mix_seed(it_seed, 4));
  state.ta_w = uw.params;
  state.ta_l = ul.params;
  if (!sg.skipped) {
    state.student.w = sgd_step(state.student.w, sg.grad, lr);
  }

  IterationLog log;
  log.iteration = state.iteration;
  log.lr = lr;
  log.winner_score = pair.winner_score;
  log.loser_score = pair.loser_score;
  log.grad_norm_student = l2_norm(sg.grad);
  log.grad_norm_ta_w = uw.grad_norm;
  log.grad_norm_ta_l = ul.grad_norm;
  log.degenerate = pair.degenerate;

  state.iteration += 1;
  state.student_generation += 1;
  return log;
}

double eval_student_cd(const NetParams& params, const std::vector<ScenePair>& heldout,
                       const std::vector<int>& steps, int K, double lambda,
                       SamplerVariant variant, const NoiseSchedule& sched, std::uint64_t seed) {
  if (heldout.empty()) {
    throw std::invalid_argument("eval_student_cd: held-out set must be nonempty");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const ScenePair& scene = heldout[i];
    const ContextEmbedding ctx = encode_context(scene.sparse);
    const EpsFn fn = [&](const PointCloud& cloud, int t) {
      return eps_forward(params, cloud, t, sched.T(), ctx);
    };
    SampleConfig sc;
    sc.K = K;
    sc.steps = steps;
    sc.lambda = lambda;
    sc.variant = variant;
    sc.deterministic = true;
    const PointCloud completed = sample(fn, scene.sparse, sc, sched, mix_seed(seed, i));
    sum += chamfer(completed, scene.ground_truth);
  }
  return sum / static_cast<double>(heldout.size());
}

namespace {

void record_eval(TrainingLog& log, const NetParams& student, const NoiseSchedule& sched,
                 const EvalHook* hook, int iteration) {
  if (hook == nullptr || hook->heldout.empty()) {
    return;
  }
  EvalPoint pt;
  pt.iteration = iteration;
  pt.mean_cd = eval_student_cd(student, hook->heldout, hook->steps, hook->K, hook->lambda,
                               hook->variant, sched, hook->seed);
  log.evals.push_back(pt);
}

}  // namespace

TrainResult train(const std::vector<ScenePair>& dataset, const NetParams& teacher,
                  const NoiseSchedule& sched, const TrainConfig& cfg, const EvalHook* hook) {
  if (dataset.empty()) {
    throw std::invalid_argument("train: dataset must be nonempty");
  }
  validate_train_config(cfg, sched.T());
  TrainResult res;
  res.state = make_train_state(teacher);
  record_eval(res.log, res.state.student, sched, hook, 0);
  for (int k = 0; k < cfg.iterations; ++k) {
    const ScenePair& scene = dataset[static_cast<std::size_t>(k) % dataset.size()];
    res.log.iterations.push_back(train_iteration(res.state, scene, cfg, sched));
    if (hook != nullptr && hook->every > 0 && (k + 1) % hook->every == 0 &&
        k + 1 != cfg.iterations) {
      record_eval(res.log, res.state.student, sched, hook, k + 1);
    }
  }
  if (cfg.iterations > 0) {
    record_eval(res.log, res.state.student, sched, hook, cfg.iterations);
  }
  return res;
}

IterationLog train_score_distill_iteration(ScoreDistillState& state, const ScenePair& scene,
                                           const TrainConfig& cfg, const NoiseSchedule& sched) {
  const std::uint64_t it_seed =
      mix_seed(mix_seed(cfg.seed, 0x5D), static_cast<std::uint64_t>(state.iteration));
  const double lr = lr_schedule(cfg.lr0, cfg.gamma, static_cast<std::uint64_t>(state.iteration));

  const ContextEmbedding ctx = encode_context(scene.sparse);
  const std::vector<int> steps = effective_steps(cfg, sched.T(), it_seed);
  StudentSample sample = rollout_student(state.student, scene, ctx, sched, steps, cfg.K, 1.0,
                                         cfg.variant, mix_seed(it_seed, 1));
  sample.generation = state.student_generation;
  const double score = score_completion(sample.g0, scene.ground_truth, cfg.metric);

  Rng grad_rng(mix_seed(it_seed, 2));
  const int t = 1 + static_cast<int>(grad_rng.below(static_cast<std::uint64_t>(sched.T())));
  const std::vector<Vec3> eps = draw_normals(grad_rng, sample.g0.size());
  const std::vector<double> grad = score_distill_grad(state, sample, scene, t, eps, sched);

  const TaUpdate ut = ta_update(state.ta, sample.g0, scene, sched, lr, mix_seed(it_seed, 3));
  state.ta = ut.params;
  state.student.w = sgd_step(state.student.w, grad, lr);

  IterationLog log;
  log.iteration = state.iteration;
  log.lr = lr;
  log.winner_score = score;
  log.loser_score = score;
  log.grad_norm_student = l2_norm(grad);
  log.grad_norm_ta_w = ut.grad_norm;
  log.grad_norm_ta_l = 0.0;
  log.degenerate = false;

  state.iteration += 1;
  state.student_generation += 1;
  return log;
}

ScoreDistillResult train_score_distill(const std::vector<ScenePair>& dataset,
                                       const NetParams& teacher, const NoiseSchedule& sched,
                                       const TrainConfig& cfg, const EvalHook* hook) {
  if (dataset.empty()) {
    throw std::invalid_argument("train_score_distill: dataset must be nonempty");
  }
  ScoreDistillResult res;
  res.state = make_score_distill_state(teacher);
  record_eval(res.log, res.state.student, sched, hook, 0);
  for (int k = 0; k < cfg.iterations; ++k) {
    const ScenePair& scene = dataset[static_cast<std::size_t>(k) % dataset.size()];
    res.log.iterations.push_back(train_score_distill_iteration(res.state, scene, cfg, sched));
    if (hook != nullptr && hook->every > 0 && (k + 1) % hook->every == 0 &&
        k + 1 != cfg.iterations) {
      record_eval(res.log, res.state.student, sched, hook, k + 1);
    }
  }
  if (cfg.iterations > 0) {
    record_eval(res.log, res.state.student, sched, hook, cfg.iterations);
  }
  return res;
}

NetParams pretrain_teacher(const std::vector<ScenePair>& dataset, const NetArch& arch,
                           const NoiseSchedule& sched, const PretrainConfig& cfg) {
  if (dataset.empty()) {
    throw std::invalid_argument("pretrain_teacher: dataset must be nonempty");
  }
  NetParams params = init_params(arch, mix_seed(cfg.seed, 0x7EAC));
  std::vector<ContextEmbedding> contexts;
  contexts.reserve(dataset.size());
  for (const ScenePair& scene : dataset) {
    contexts.push_back(encode_context(scene.sparse));
  }
  for (int k = 0; k < cfg.iterations; ++k) {
    const std::size_t idx = static_cast<std::size_t>(k) % dataset.size();
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x7EA0), static_cast<std::uint64_t>(k)));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T())));
    const std::vector<Vec3> eps = draw_normals(rng, dataset[idx].ground_truth.size());
    const DiffusionLossGrad dg =
        diffusion_loss_grad(params, dataset[idx].ground_truth, contexts[idx], sched, t, eps);
    params.w = sgd_step(params.w, dg.grad, lr_schedule(cfg.lr0, cfg.gamma,
                                                       static_cast<std::uint64_t>(k)));
  }
  return params;
}

double l2_norm(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) {
    sum += x * x;
  }
  return std::sqrt(sum);
}

}  // namespace pcd

#include "pcd/dpo.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pcd/rng.hpp"
#include "pcd/xyz_io.hpp"

namespace pcd {
namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double x) {
  if (x >= 0.0) {
    return std::log1p(std::exp(-x));
  }
  return -x + std::log1p(std::exp(x));
}

// Squared prediction error summed over all points, plus its upstream for
// backprop: d/d(pred) = 2 (pred - eps).
double prediction_error(const std::vector<Vec3>& eps, const std::vector<Vec3>& pred,
                        std::vector<Vec3>& upstream) {
  double sum = 0.0;
  upstream.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 r = pred[i] - eps[i];
    sum += squared_norm(r);
    upstream[i] = r * 2.0;
  }
  return sum;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

}  // namespace

double snr(const NoiseSchedule& sched, int t) {
  const double ab = sched.alpha_bar_at(t);
  return ab / (1.0 - ab);
}

double timestep_weight(const NoiseSchedule& sched, int t, DpoWeighting weighting) {
  (void)snr(sched, t);  // validates t and keeps the SNR hook in one place
  switch (weighting) {
    case DpoWeighting::constant:
      return 1.0;
  }
  throw std::invalid_argument("timestep_weight: unknown weighting rule");
}

DpoLoss diffusion_dpo_loss(const NetParams& eta, const NetParams& ref, const FixedPair& pair,
                           int t, const std::vector<Vec3>& eps_w, const std::vector<Vec3>& eps_l,
                           const NoiseSchedule& sched, const DpoConfig& cfg) {
  if (!(cfg.beta > 0.0)) {
    throw std::invalid_argument("diffusion_dpo_loss: beta must be > 0");
  }
  if (eps_w.size() != pair.winner.size() || eps_l.size() != pair.loser.size()) {
    throw std::invalid_argument("diffusion_dpo_loss: eps counts must match pair clouds");
  }
  const ContextEmbedding ctx = encode_context(pair.sparse);
  const int T = sched.T();
  const PointCloud x_w = noise_point_cloud(pair.winner, t, eps_w, sched).cloud;
  const PointCloud x_l = noise_point_cloud(pair.loser, t, eps_l, sched).cloud;

  std::vector<Vec3> up_w, up_l, unused;
  const double err_eta_w = prediction_error(eps_w, eps_forward(eta, x_w, t, T, ctx), up_w);
  const double err_ref_w = prediction_error(eps_w, eps_forward(ref, x_w, t, T, ctx), unused);
  const double err_eta_l = prediction_error(eps_l, eps_forward(eta, x_l, t, T, ctx), up_l);
  const double err_ref_l = prediction_error(eps_l, eps_forward(ref, x_l, t, T, ctx), unused);

  const double scale = -cfg.beta * static_cast<double>(T) * timestep_weight(sched, t, cfg.weighting);
  const double diff_w = err_eta_w - err_ref_w;
  const double diff_l = err_eta_l - err_ref_l;

  DpoLoss out;
  out.inner = scale * (diff_w - diff_l);
  out.loss = neg_log_sigmoid(out.inner);

  const std::vector<double> g_w = eps_backward(eta, x_w, t, T, ctx, up_w).param_grad;
  const std::vector<double> g_l = eps_backward(eta, x_l, t, T, ctx, up_l).param_grad;
  const double dl_dinner = stable_sigmoid(out.inner) - 1.0;
  out.grad.resize(g_w.size());
  for (std::size_t i = 0; i < g_w.size(); ++i) {
    out.grad[i] = dl_dinner * scale * (g_w[i] - g_l[i]);
  }
  return out;
}

std::vector<FixedPair> make_fixed_pairs(const std::vector<ScenePair>& scenes,
                                        const NetParams& generator, const NoiseSchedule& sched,
                                        const FixedPairConfig& cfg) {
  if (scenes.empty()) {
    throw std::invalid_argument("make_fixed_pairs: scenes must be nonempty");
  }
  if (cfg.n_pairs < 1) {
    throw std::invalid_argument("make_fixed_pairs: n_pairs must be >= 1");
  }
  if (!(cfg.lambda_alt >= 1.0)) {
    throw std::invalid_argument("make_fixed_pairs: lambda_alt must be >= 1");
  }
  const std::vector<int> steps =
      cfg.steps.empty() ? uniform_steps(sched.T(), std::min(8, sched.T())) : cfg.steps;

  std::vector<FixedPair> pairs;
  pairs.reserve(cfg.n_pairs);
  for (int i = 0; i < cfg.n_pairs; ++i) {
    const ScenePair& scene = scenes[static_cast<std::size_t>(i) % scenes.size()];
    const ContextEmbedding ctx = encode_context(scene.sparse);
    const EpsFn fn = [&](const PointCloud& cloud, int t) {
      return eps_forward(generator, cloud, t, sched.T(), ctx);
    };
    SampleConfig sc;
    sc.K = cfg.K;
    sc.steps = steps;
    sc.variant = cfg.variant;
    const std::uint64_t pair_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
    sc.lambda = 1.0;
    PointCloud a = sample(fn, scene.sparse, sc, sched, pair_seed);
    sc.lambda = cfg.lambda_alt;
    PointCloud b = sample(fn, scene.sparse, sc, sched, pair_seed);
    const double score_a = score_completion(a, scene.ground_truth, cfg.metric);
    const double score_b = score_completion(b, scene.ground_truth, cfg.metric);

    FixedPair pair;
    char id[32];
    std::snprintf(id, sizeof(id), "pair_%04d", i);
    pair.id = id;
    pair.sparse = scene.sparse;
    pair.metric = cfg.metric;
    if (score_a <= score_b) {
      pair.winner = std::move(a);
      pair.winner_score = score_a;
      pair.loser = std::move(b);
      pair.loser_score = score_b;
    } else {
      pair.winner = std::move(b);
      pair.winner_score = score_b;
      pair.loser = std::move(a);
      pair.loser_score = score_a;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_fixed_pairs(const std::string& dir, const std::vector<FixedPair>& pairs) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) {
    throw std::runtime_error("save_fixed_pairs: cannot write manifest in '" + dir + "'");
  }
  manifest << "pair_id,sparse_file,winner_file,loser_file,winner_score,loser_score,metric\n";
  for (const FixedPair& pair : pairs) {
    const std::string sparse_file = pair.id + "_sparse.xyz";
    const std::string winner_file = pair.id + "_winner.xyz";
    const std::string loser_file = pair.id + "_loser.xyz";
    save_xyz(pair.sparse, fs::path(dir) / sparse_file);
    save_xyz(pair.winner, fs::path(dir) / winner_file);
    save_xyz(pair.loser, fs::path(dir) / loser_file);
    manifest << pair.id << ',' << sparse_file << ',' << winner_file << ',' << loser_file << ','
             << format_real(pair.winner_score) << ',' << format_real(pair.loser_score) << ','
             << to_string(pair.metric) << '\n';
  }
  if (!manifest) {
    throw std::runtime_error("save_fixed_pairs: manifest write failed in '" + dir + "'");
  }
}

std::vector<FixedPair> load_fixed_pairs(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) {
    throw std::runtime_error("load_fixed_pairs: cannot open '" + manifest_path.string() + "'");
  }
  std::string line;
  if (!std::getline(manifest, line)) {
    throw std::runtime_error("load_fixed_pairs: empty manifest '" + manifest_path.string() + "'");
  }
  std::vector<FixedPair> pairs;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const std::vector<std::string> fields = split_csv_row(line);
    if (fields.size() != 7) {
      throw std::runtime_error("load_fixed_pairs: malformed manifest row at line " +
                               std::to_string(line_no));
    }
    FixedPair pair;
    pair.id = fields[0];
    pair.sparse = load_xyz((fs::path(dir) / fields[1]).string());
    pair.winner = load_xyz((fs::path(dir) / fields[2]).string());
    pair.loser = load_xyz((fs::path(dir) / fields[3]).string());
    try {
      pair.winner_score = std::stod(fields[4]);
      pair.loser_score = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw std::runtime_error("load_fixed_pairs: bad score at line " + std::to_string(line_no));
    }
    pair.metric = metric_from_string(fields[6]);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

NetParams dpo_finetune(const NetParams& ref, const std::vector<FixedPair>& pairs,
                       const NoiseSchedule& sched, const DpoFinetuneConfig& cfg,
                       DpoFinetuneLog* log) {
  if (pairs.empty()) {
    throw std::invalid_argument("dpo_finetune: pairs must be nonempty");
  }
  if (cfg.iterations < 0) {
    throw std::invalid_argument("dpo_finetune: iterations must be >= 0");
  }
  if (!(cfg.lr0 > 0.0)) {
    throw std::invalid_argument("dpo_finetune: lr0 must be > 0");
  }
  if (!(cfg.gamma > 0.0) || cfg.gamma > 1.0) {
    throw std::invalid_argument("dpo_finetune: gamma must lie in (0,1]");
  }
  NetParams eta = ref;
  for (int k = 0; k < cfg.iterations; ++k) {
    const FixedPair& pair = pairs[static_cast<std::size_t>(k) % pairs.size()];
    Rng rng(mix_seed(mix_seed(cfg.seed, 0xD70), static_cast<std::uint64_t>(k)));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T())));
    std::vector<Vec3> eps_w;
    eps_w.reserve(pair.winner.size());
    for (std::size_t i = 0; i < pair.winner.size(); ++i) {
      eps_w.push_back({rng.normal(), rng.normal(), rng.normal()});
    }
    std::vector<Vec3> eps_l;
    eps_l.reserve(pair.loser.size());
    for (std::size_t i = 0; i < pair.loser.size(); ++i) {
      eps_l.push_back({rng.normal(), rng.normal(), rng.normal()});
    }
    const DpoLoss res = diffusion_dpo_loss(eta, ref, pair, t, eps_w, eps_l, sched, cfg.dpo);
    eta.w = sgd_step(eta.w, res.grad, lr_schedule(cfg.lr0, cfg.gamma,
                                                  static_cast<std::uint64_t>(k)));
    if (log != nullptr) {
      log->losses.push_back(res.loss);
    }
  }
  return eta;
}

}  // namespace pcd

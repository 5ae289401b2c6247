#include "pcd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pcd/rng.hpp"
#include "pcd/theory.hpp"
#include "pcd/xyz_io.hpp"

namespace fs = std::filesystem;

namespace pcd {
namespace {

constexpr const char* kCodeVersion = "1.0.0";

const std::vector<std::string> kModes = {
    "train-teacher", "distill-dpo",  "score-distill", "dpo-finetune",   "eval",
    "theory-check",  "ablate-lambda", "ablate-nfe",   "ablate-metric", "ablate-strategy"};

std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  const std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(value);
  while (std::getline(in, part, ',')) {
    const std::string t = trim(part);
    if (!t.empty()) {
      parts.push_back(t);
    }
  }
  return parts;
}

std::string fmt_g12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_time(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_res(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open '" + path + "'");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_text(buffer.str(), path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.raw_text_ = text;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') {
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw std::runtime_error("config: malformed section header at " + origin + ":" +
                                 std::to_string(line_no));
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: expected 'key = value' at " + origin + ":" +
                               std::to_string(line_no));
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw std::runtime_error("config: empty key at " + origin + ":" + std::to_string(line_no));
    }
    const std::string full = section.empty() ? key : section + "." + key;
    cfg.values_[full] = trim(t.substr(eq + 1));
  }
  return cfg;
}

void KvConfig::fail(const std::string& key, const std::string& what) const {
  throw std::invalid_argument("config: field '" + key + "' " + what + " (" + origin_ + ")");
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvConfig::require_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) {
    fail(key, "is required");
  }
  return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t KvConfig::require_int(const std::string& key) const {
  const std::string v = require_string(key);
  try {
    std::size_t pos = 0;
    const std::int64_t n = std::stoll(v, &pos);
    if (pos != v.size()) {
      fail(key, "must be an integer, got '" + v + "'");
    }
    return n;
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  fail(key, "must be an integer, got '" + v + "'");
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? require_int(key) : fallback;
}

std::uint64_t KvConfig::require_u64(const std::string& key) const {
  const std::string v = require_string(key);
  try {
    std::size_t pos = 0;
    const std::uint64_t n = std::stoull(v, &pos);
    if (pos != v.size()) {
      fail(key, "must be a non-negative integer, got '" + v + "'");
    }
    return n;
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  fail(key, "must be a non-negative integer, got '" + v + "'");
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) {
    return fallback;
  }
  const std::string v = require_string(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) {
      fail(key, "must be a real number, got '" + v + "'");
    }
    return d;
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  fail(key, "must be a real number, got '" + v + "'");
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) {
    return fallback;
  }
  const std::string v = require_string(key);
  if (v == "true" || v == "1" || v == "yes") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    return false;
  }
  fail(key, "must be a boolean, got '" + v + "'");
}

std::vector<int> KvConfig::get_int_list(const std::string& key,
                                        const std::vector<int>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    return fallback;
  }
  std::vector<int> out;
  for (const std::string& part : split_list(it->second)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(part, &pos));
      if (pos != part.size()) {
        fail(key, "must be a comma-separated integer list");
      }
    } catch (const std::invalid_argument&) {
      fail(key, "must be a comma-separated integer list");
    } catch (const std::out_of_range&) {
      fail(key, "must be a comma-separated integer list");
    }
  }
  return out;
}

std::vector<double> KvConfig::get_double_list(const std::string& key,
                                              const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    return fallback;
  }
  std::vector<double> out;
  for (const std::string& part : split_list(it->second)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(part, &pos));
      if (pos != part.size()) {
        fail(key, "must be a comma-separated real list");
      }
    } catch (const std::invalid_argument&) {
      fail(key, "must be a comma-separated real list");
    } catch (const std::out_of_range&) {
      fail(key, "must be a comma-separated real list");
    }
  }
  return out;
}

ExperimentConfig parse_experiment_config(const KvConfig& kv) {
  ExperimentConfig cfg;
  cfg.raw_text = kv.raw_text();
  cfg.mode = kv.require_string("experiment.mode");
  if (std::find(kModes.begin(), kModes.end(), cfg.mode) == kModes.end()) {
    throw std::invalid_argument("config: field 'experiment.mode' has unknown value '" + cfg.mode +
                                "'");
  }
  cfg.seed = kv.require_u64("experiment.seed");
  cfg.out_dir = kv.get_string("experiment.output", "run-" + hash_hex(fnv1a64(cfg.raw_text)));

  cfg.recipe.family = kv.get_string("scene.family", "ground-boxes");
  cfg.recipe.ground_points = static_cast<std::size_t>(kv.get_int("scene.ground_points", 512));
  cfg.recipe.sparse_points = static_cast<std::size_t>(kv.get_int("scene.sparse_points", 64));
  cfg.recipe.noise = kv.get_double("scene.noise", 0.02);
  cfg.recipe.extent = kv.get_double("scene.extent", 2.0);
  cfg.train_scenes = static_cast<int>(kv.get_int("scene.train_scenes", 8));
  cfg.heldout_scenes = static_cast<int>(kv.get_int("scene.heldout_scenes", 4));
  if (cfg.recipe.ground_points == 0) {
    throw std::invalid_argument("config: field 'scene.ground_points' must be >= 1");
  }
  if (cfg.recipe.sparse_points == 0 || cfg.recipe.sparse_points > cfg.recipe.ground_points) {
    throw std::invalid_argument(
        "config: field 'scene.sparse_points' must lie in [1, ground_points]");
  }
  if (!(cfg.recipe.noise >= 0.0)) {
    throw std::invalid_argument("config: field 'scene.noise' must be >= 0");
  }
  if (!(cfg.recipe.extent > 0.0)) {
    throw std::invalid_argument("config: field 'scene.extent' must be > 0");
  }
  if (cfg.train_scenes < 1 || cfg.heldout_scenes < 1) {
    throw std::invalid_argument("config: fields 'scene.train_scenes' and 'scene.heldout_scenes' "
                                "must be >= 1");
  }

  cfg.T = static_cast<int>(kv.get_int("schedule.T", 50));
  cfg.schedule_kind = kv.get_string("schedule.kind", "linear");
  if (cfg.T < 1) {
    throw std::invalid_argument("config: field 'schedule.T' must be >= 1");
  }

  cfg.train.lambda_alt = kv.get_double("train.lambda_alt", 1.1);
  cfg.train.omega = kv.get_double("train.omega", 1.0);
  cfg.train.K = static_cast<int>(kv.get_int("train.K", 8));
  cfg.train.student_steps = kv.get_int_list("train.student_steps", {});
  cfg.train.metric = metric_from_string(kv.get_string("train.metric", "cd"));
  cfg.train.lr0 = kv.get_double("train.lr0", 1e-5);
  cfg.train.gamma = kv.get_double("train.gamma", 0.999);
  cfg.train.iterations = static_cast<int>(kv.get_int("train.iterations", 0));
  cfg.train.seed = cfg.seed;
  cfg.train.variant = variant_from_string(kv.get_string("train.variant", "local-consistent"));
  cfg.train.random_steps = kv.get_bool("train.random_steps", false);
  cfg.eval_every = static_cast<int>(kv.get_int("train.eval_every", 0));

  cfg.teacher.iterations = static_cast<int>(kv.get_int("teacher.iterations", 2000));
  cfg.teacher.lr0 = kv.get_double("teacher.lr0", 1e-4);
  cfg.teacher.gamma = kv.get_double("teacher.gamma", 0.9995);
  cfg.teacher.seed = mix_seed(cfg.seed, 0x7E);
  cfg.teacher_checkpoint = kv.get_string("teacher.checkpoint", "");

  cfg.eval.jsd_bins = static_cast<int>(kv.get_int("eval.jsd_bins", 64));
  cfg.eval.jsd_extent = kv.get_double("eval.jsd_extent", 0.0);
  cfg.eval.emd_cap = static_cast<std::size_t>(kv.get_int("eval.emd_cap", 256));
  cfg.eval.iou_resolutions = kv.get_double_list("eval.iou_resolutions", {0.5, 0.2, 0.1});
  cfg.eval.seed = mix_seed(cfg.seed, 0xE7A1);
  cfg.eval_nfe = static_cast<int>(kv.get_int("eval.nfe", 8));
  cfg.eval_checkpoint = kv.get_string("eval.checkpoint", "");
  cfg.eval_dataset = kv.get_string("eval.dataset", "");
  if (cfg.eval.jsd_bins < 1) {
    throw std::invalid_argument("config: field 'eval.jsd_bins' must be >= 1");
  }
  if (cfg.eval.emd_cap < 1) {
    throw std::invalid_argument("config: field 'eval.emd_cap' must be >= 1");
  }
  for (double res : cfg.eval.iou_resolutions) {
    if (!(res > 0.0)) {
      throw std::invalid_argument("config: field 'eval.iou_resolutions' must be > 0");
    }
  }
  if (cfg.eval_nfe < 1 || cfg.eval_nfe > cfg.T) {
    throw std::invalid_argument("config: field 'eval.nfe' must lie in [1, T]");
  }

  cfg.dpo.dpo.beta = kv.get_double("dpo.beta", 0.1);
  cfg.dpo.iterations = static_cast<int>(kv.get_int("dpo.iterations", 200));
  cfg.dpo.lr0 = kv.get_double("dpo.lr0", 1e-5);
  cfg.dpo.gamma = kv.get_double("dpo.gamma", 0.999);
  cfg.dpo.seed = cfg.seed;
  cfg.dpo_pairs = static_cast<int>(kv.get_int("dpo.pairs", 100));
  cfg.dpo_lambda_alt = kv.get_double("dpo.lambda_alt", 1.5);
  if (!(cfg.dpo.dpo.beta > 0.0)) {
    throw std::invalid_argument("config: field 'dpo.beta' must be > 0");
  }
  if (cfg.dpo_pairs < 1) {
    throw std::invalid_argument("config: field 'dpo.pairs' must be >= 1");
  }
  if (!(cfg.dpo_lambda_alt >= 1.0)) {
    throw std::invalid_argument("config: field 'dpo.lambda_alt' must be >= 1");
  }

  const bool trains_student =
      cfg.mode == "distill-dpo" || cfg.mode == "score-distill" || cfg.mode == "dpo-finetune" ||
      cfg.mode == "ablate-lambda" || cfg.mode == "ablate-nfe" || cfg.mode == "ablate-metric" ||
      cfg.mode == "ablate-strategy";
  if (trains_student) {
    validate_train_config(cfg.train, cfg.T);
  }
  if (cfg.mode == "eval") {
    if (cfg.eval_checkpoint.empty()) {
      throw std::invalid_argument("config: field 'eval.checkpoint' is required for mode eval");
    }
    if (cfg.eval_dataset.empty()) {
      throw std::invalid_argument("config: field 'eval.dataset' is required for mode eval");
    }
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(KvConfig::parse_file(path));
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  fs::path out(cfg.out_dir);
  if (out.is_absolute()) {
    return out.string();
  }
  const char* root = std::getenv("PCDISTILL_OUTPUT_ROOT");
  return ((root != nullptr && *root != '\0' ? fs::path(root) : fs::path(".")) / out).string();
}

void save_dataset(const std::string& dir, const std::vector<ScenePair>& scenes) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "scene_%03zu", i);
    save_xyz(scenes[i].sparse, fs::path(dir) / (std::string(prefix) + "_sparse.xyz"));
    save_xyz(scenes[i].ground_truth, fs::path(dir) / (std::string(prefix) + "_gt.xyz"));
  }
}

std::vector<ScenePair> load_dataset(const std::string& dir) {
  std::vector<ScenePair> scenes;
  for (std::size_t i = 0;; ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "scene_%03zu", i);
    const fs::path sparse_path = fs::path(dir) / (std::string(prefix) + "_sparse.xyz");
    const fs::path gt_path = fs::path(dir) / (std::string(prefix) + "_gt.xyz");
    if (!fs::exists(sparse_path) || !fs::exists(gt_path)) {
      break;
    }
    ScenePair scene;
    scene.sparse = load_xyz(sparse_path.string());
    scene.ground_truth = load_xyz(gt_path.string());
    scene.scene_id = prefix;
    scenes.push_back(std::move(scene));
  }
  if (scenes.empty()) {
    throw std::runtime_error("load_dataset: no scene files found in '" + dir + "'");
  }
  return scenes;
}

std::vector<std::string> results_header(const std::vector<double>& iou_resolutions) {
  std::vector<std::string> cols = {"config_hash", "mode",   "model", "nfe", "lambda",
                                   "metric",      "scenes", "cd",    "jsd", "emd"};
  for (double res : iou_resolutions) {
    cols.push_back("iou_" + fmt_res(res));
  }
  cols.push_back("sample_seconds");
  cols.push_back("metric_seconds");
  return cols;
}

void write_results_csv(const std::string& path, const std::vector<double>& iou_resolutions,
                       const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_results_csv: cannot open '" + path + "'");
  }
  const std::vector<std::string> cols = results_header(iou_resolutions);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << cols[i] << (i + 1 < cols.size() ? ',' : '\n');
  }
  for (const ResultRow& row : rows) {
    out << row.config_hash << ',' << row.mode << ',' << row.model << ',' << row.nfe << ','
        << fmt_g12(row.lambda) << ',' << row.metric << ',' << row.scenes << ',' << fmt_g12(row.cd)
        << ',' << fmt_g12(row.jsd) << ',' << fmt_g12(row.emd);
    for (double v : row.iou) {
      out << ',' << fmt_g12(v);
    }
    out << ',' << fmt_time(row.sample_seconds) << ',' << fmt_time(row.metric_seconds) << '\n';
  }
  if (!out) {
    throw std::runtime_error("write_results_csv: write failed for '" + path + "'");
  }
}

namespace {

void write_schema_file(const std::string& path, const std::vector<double>& iou_resolutions) {
  std::ofstream out(path);
  out << "results.csv columns, in order:\n";
  out << "  config_hash    FNV-1a 64 hash of the config file text (hex)\n";
  out << "  mode           experiment mode that produced the row\n";
  out << "  model          which network was evaluated\n";
  out << "  nfe            denoising steps used at sampling time\n";
  out << "  lambda         start-noise scale the model was trained against (1 for teachers)\n";
  out << "  metric         preference metric used during training (none for teachers)\n";
  out << "  scenes         number of held-out scenes aggregated into the row\n";
  out << "  cd             mean chamfer distance\n";
  out << "  jsd            mean Jensen-Shannon divergence (base 2, BEV histogram)\n";
  out << "  emd            mean earth mover's distance (capped optimal assignment)\n";
  for (double res : iou_resolutions) {
    out << "  iou_" << fmt_res(res) << "        mean voxel IoU at resolution " << fmt_res(res)
        << "\n";
  }
  out << "  sample_seconds wall time spent sampling (non-deterministic)\n";
  out << "  metric_seconds wall time spent computing metrics (non-deterministic)\n";
}

void write_training_log(const std::string& path, const TrainingLog& log) {
  std::ofstream out(path);
  out << "iteration,lr,winner_score,loser_score,grad_norm_student,grad_norm_ta_w,grad_norm_ta_l,"
         "degenerate\n";
  for (const IterationLog& it : log.iterations) {
    out << it.iteration << ',' << fmt_g12(it.lr) << ',' << fmt_g12(it.winner_score) << ','
        << fmt_g12(it.loser_score) << ',' << fmt_g12(it.grad_norm_student) << ','
        << fmt_g12(it.grad_norm_ta_w) << ',' << fmt_g12(it.grad_norm_ta_l) << ','
        << (it.degenerate ? 1 : 0) << '\n';
  }
}

void write_heldout_log(const std::string& path, const TrainingLog& log) {
  if (log.evals.empty()) {
    return;
  }
  std::ofstream out(path);
  out << "iteration,mean_cd\n";
  for (const EvalPoint& pt : log.evals) {
    out << pt.iteration << ',' << fmt_g12(pt.mean_cd) << '\n';
  }
}

void write_manifest(const std::string& path, const ExperimentConfig& cfg,
                    const std::string& hash) {
  std::ofstream out(path);
  out << "config_hash=" << hash << '\n';
  out << "seed=" << cfg.seed << '\n';
  out << "sampler_variant=" << to_string(cfg.train.variant) << '\n';
  out << "code_version=" << kCodeVersion << '\n';
  out << "mode=" << cfg.mode << '\n';
}

struct RowTimes {
  double sample_seconds = 0.0;
  double metric_seconds = 0.0;
};

ResultRow evaluate_model_row(const ExperimentConfig& cfg, const std::string& hash,
                             const std::string& model, const NetParams& params,
                             const std::vector<ScenePair>& heldout, int nfe, double lambda_col,
                             const std::string& metric_col, const NoiseSchedule& sched) {
  ResultRow row;
  row.config_hash = hash;
  row.mode = cfg.mode;
  row.model = model;
  row.nfe = nfe;
  row.lambda = lambda_col;
  row.metric = metric_col;
  row.scenes = static_cast<int>(heldout.size());

  const std::vector<int> steps = uniform_steps(sched.T(), nfe);
  double cd = 0.0, jsd_sum = 0.0, emd_sum = 0.0;
  std::map<double, double> iou_sum;
  RowTimes times;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const ScenePair& scene = heldout[i];
    const ContextEmbedding ctx = encode_context(scene.sparse);
    const EpsFn fn = [&](const PointCloud& cloud, int t) {
      return eps_forward(params, cloud, t, sched.T(), ctx);
    };
    SampleConfig sc;
    sc.K = cfg.train.K;
    sc.steps = steps;
    sc.lambda = 1.0;
    sc.variant = cfg.train.variant;
    const std::uint64_t sample_seed =
        mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(nfe)), i);
    const auto t0 = std::chrono::steady_clock::now();
    const PointCloud completed = sample(fn, scene.sparse, sc, sched, sample_seed);
    times.sample_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const MetricReport report = evaluate(completed, scene.ground_truth, cfg.eval);
    times.metric_seconds += report.wall_time_seconds;
    cd += report.cd;
    jsd_sum += report.jsd;
    emd_sum += report.emd;
    for (const auto& [res, v] : report.iou) {
      iou_sum[res] += v;
    }
  }
  const double n = static_cast<double>(heldout.size());
  row.cd = cd / n;
  row.jsd = jsd_sum / n;
  row.emd = emd_sum / n;
  for (double res : cfg.eval.iou_resolutions) {
    row.iou.push_back(iou_sum.at(res) / n);
  }
  row.sample_seconds = times.sample_seconds;
  row.metric_seconds = times.metric_seconds;
  return row;
}

NetParams obtain_teacher(const ExperimentConfig& cfg, const std::vector<ScenePair>& train_set,
                         const NoiseSchedule& sched) {
  if (!cfg.teacher_checkpoint.empty()) {
    return load_checkpoint(cfg.teacher_checkpoint);
  }
  return pretrain_teacher(train_set, NetArch{}, sched, cfg.teacher);
}

EvalHook make_hook(const ExperimentConfig& cfg, const std::vector<ScenePair>& heldout,
                   const NoiseSchedule& sched) {
  EvalHook hook;
  hook.heldout = heldout;
  hook.steps = uniform_steps(sched.T(), std::min(8, sched.T()));
  hook.K = cfg.train.K;
  hook.lambda = 1.0;
  hook.variant = cfg.train.variant;
  hook.every = cfg.eval_every;
  hook.seed = mix_seed(cfg.seed, 0xE0A);
  return hook;
}

int run_theory_check(const ExperimentConfig& cfg, const fs::path& out_dir,
                     const std::string& hash) {
  Rng rng(mix_seed(cfg.seed, 0x7E0));
  bool all_ok = true;
  std::ofstream summary(out_dir / "theory_summary.csv");
  summary << "problem,sweep_ok,gibbs_max_err\n";
  const std::vector<std::vector<double>> grid = simplex_grid(3, 0.01);
  for (int p = 0; p < 50; ++p) {
    DiscretePreferenceProblem problem;
    problem.p_theta.resize(3);
    double sum = 0.0;
    for (double& v : problem.p_theta) {
      v = 0.1 + rng.uniform();
      sum += v;
    }
    for (double& v : problem.p_theta) {
      v /= sum;
    }
    problem.r = {rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)};
    problem.omega = rng.uniform_in(0.25, 4.0);

    const std::vector<double> p_star = closed_form_optimum(problem);
    const double opt_val = objective(problem, p_star);
    bool sweep_ok = true;
    double gibbs_err = 0.0;
    for (const std::vector<double>& q : grid) {
      const double val = objective(problem, q);
      if (!(opt_val <= val + 1e-12)) {
        sweep_ok = false;
      }
      gibbs_err = std::max(gibbs_err, std::abs((val - opt_val) - kl_divergence(q, p_star)));
    }
    const bool ok = sweep_ok && gibbs_err <= 1e-10;
    all_ok = all_ok && ok;
    summary << p << ',' << (sweep_ok ? 1 : 0) << ',' << fmt_g12(gibbs_err) << '\n';
  }

  DiscretePreferenceProblem worked;
  worked.p_theta = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  worked.r = {1.0, 0.0, 0.0};
  worked.omega = 1.0;
  const std::vector<double> closed = closed_form_optimum(worked);
  const double e = std::exp(1.0);
  const std::vector<double> expected = {e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)};
  const std::vector<double> brute = brute_force_optimum(worked, 0.01);
  double worked_err = 0.0;
  double brute_err = 0.0;
  for (int i = 0; i < 3; ++i) {
    worked_err = std::max(worked_err, std::abs(closed[i] - expected[i]));
    brute_err = std::max(brute_err, std::abs(closed[i] - brute[i]));
  }
  const bool worked_ok = worked_err <= 1e-6 && brute_err <= 0.01 + 1e-12;
  all_ok = all_ok && worked_ok;

  std::cout << (all_ok ? "PASS" : "FAIL") << " theory-check: 50 random sweeps + worked example"
            << " (worked_err=" << fmt_g12(worked_err) << ", brute_err=" << fmt_g12(brute_err)
            << ")\n";
  write_results_csv((out_dir / "results.csv").string(), cfg.eval.iou_resolutions, {});
  write_schema_file((out_dir / "results_schema.txt").string(), cfg.eval.iou_resolutions);
  write_manifest((out_dir / "manifest.txt").string(), cfg, hash);
  return all_ok ? 0 : 1;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  const fs::path out_dir(resolve_output_dir(cfg));
  fs::create_directories(out_dir);
  const std::string hash = hash_hex(fnv1a64(cfg.raw_text));
  const NoiseSchedule sched = build_schedule(cfg.T, cfg.schedule_kind);

  if (cfg.mode == "theory-check") {
    return run_theory_check(cfg, out_dir, hash);
  }

  std::vector<ResultRow> rows;
  if (cfg.mode == "eval") {
    const NetParams params = load_checkpoint(cfg.eval_checkpoint);
    const std::vector<ScenePair> dataset = load_dataset(cfg.eval_dataset);
    rows.push_back(evaluate_model_row(cfg, hash, "checkpoint", params, dataset, cfg.eval_nfe, 1.0,
                                      "none", sched));
    write_results_csv((out_dir / "results.csv").string(), cfg.eval.iou_resolutions, rows);
    write_schema_file((out_dir / "results_schema.txt").string(), cfg.eval.iou_resolutions);
    write_manifest((out_dir / "manifest.txt").string(), cfg, hash);
    return 0;
  }

  const std::vector<ScenePair> train_set =
      synth_dataset(cfg.recipe, cfg.train_scenes, mix_seed(cfg.seed, 0x7A11));
  const std::vector<ScenePair> heldout =
      synth_dataset(cfg.recipe, cfg.heldout_scenes, mix_seed(cfg.seed, 0x4E1D));
  save_dataset((out_dir / "heldout").string(), heldout);

  const NetParams teacher = obtain_teacher(cfg, train_set, sched);
  save_checkpoint((out_dir / "teacher.ckpt").string(), teacher);

  if (cfg.mode == "train-teacher") {
    rows.push_back(evaluate_model_row(cfg, hash, "teacher", teacher, heldout, cfg.eval_nfe, 1.0,
                                      "none", sched));
  } else if (cfg.mode == "distill-dpo") {
    const EvalHook hook = make_hook(cfg, heldout, sched);
    const TrainResult res = train(train_set, teacher, sched, cfg.train, &hook);
    save_checkpoint((out_dir / "student.ckpt").string(), res.state.student);
    save_checkpoint((out_dir / "ta_w.ckpt").string(), res.state.ta_w);
    save_checkpoint((out_dir / "ta_l.ckpt").string(), res.state.ta_l);
    write_training_log((out_dir / "training_log.csv").string(), res.log);
    write_heldout_log((out_dir / "heldout_log.csv").string(), res.log);
    rows.push_back(evaluate_model_row(cfg, hash, "teacher", teacher, heldout, cfg.eval_nfe, 1.0,
                                      "none", sched));
    rows.push_back(evaluate_model_row(cfg, hash, "student", res.state.student, heldout,
                                      cfg.eval_nfe, cfg.train.lambda_alt,
                                      to_string(cfg.train.metric), sched));
  } else if (cfg.mode == "score-distill") {
    const EvalHook hook = make_hook(cfg, heldout, sched);
    const ScoreDistillResult res = train_score_distill(train_set, teacher, sched, cfg.train,
                                                       &hook);
    save_checkpoint((out_dir / "student_sd.ckpt").string(), res.state.student);
    save_checkpoint((out_dir / "ta.ckpt").string(), res.state.ta);
    write_training_log((out_dir / "training_log.csv").string(), res.log);
    write_heldout_log((out_dir / "heldout_log.csv").string(), res.log);
    rows.push_back(evaluate_model_row(cfg, hash, "teacher", teacher, heldout, cfg.eval_nfe, 1.0,
                                      "none", sched));
    rows.push_back(evaluate_model_row(cfg, hash, "student-sd", res.state.student, heldout,
                                      cfg.eval_nfe, 1.0, to_string(cfg.train.metric), sched));
  } else if (cfg.mode == "dpo-finetune") {
    FixedPairConfig pair_cfg;
    pair_cfg.n_pairs = cfg.dpo_pairs;
    pair_cfg.K = cfg.train.K;
    pair_cfg.lambda_alt = cfg.dpo_lambda_alt;
    pair_cfg.variant = cfg.train.variant;
    pair_cfg.metric = cfg.train.metric;
    pair_cfg.seed = mix_seed(cfg.seed, 0xF1);
    const std::vector<FixedPair> pairs = make_fixed_pairs(train_set, teacher, sched, pair_cfg);
    save_fixed_pairs((out_dir / "pairs").string(), pairs);
    const NetParams teacher_dpo = dpo_finetune(teacher, pairs, sched, cfg.dpo);
    save_checkpoint((out_dir / "teacher_dpo.ckpt").string(), teacher_dpo);

    const EvalHook hook = make_hook(cfg, heldout, sched);
    const TrainResult res = train(train_set, teacher_dpo, sched, cfg.train, &hook);
    save_checkpoint((out_dir / "student.ckpt").string(), res.state.student);
    write_training_log((out_dir / "training_log.csv").string(), res.log);
    write_heldout_log((out_dir / "heldout_log.csv").string(), res.log);
    rows.push_back(evaluate_model_row(cfg, hash, "teacher", teacher, heldout, cfg.eval_nfe, 1.0,
                                      "none", sched));
    rows.push_back(evaluate_model_row(cfg, hash, "teacher-dpo", teacher_dpo, heldout,
                                      cfg.eval_nfe, 1.0, to_string(cfg.train.metric), sched));
    rows.push_back(evaluate_model_row(cfg, hash, "student", res.state.student, heldout,
                                      cfg.eval_nfe, cfg.train.lambda_alt,
                                      to_string(cfg.train.metric), sched));
  } else if (cfg.mode == "ablate-lambda") {
    for (double lam : {1.05, 1.1, 1.2, 1.5, 2.0}) {
      TrainConfig tc = cfg.train;
      tc.lambda_alt = lam;
      const TrainResult res = train(train_set, teacher, sched, tc, nullptr);
      const std::string label = "lambda_" + fmt_res(lam);
      save_checkpoint((out_dir / ("student_" + label + ".ckpt")).string(), res.state.student);
      write_training_log((out_dir / ("training_log_" + label + ".csv")).string(), res.log);
      rows.push_back(evaluate_model_row(cfg, hash, "student", res.state.student, heldout,
                                        cfg.eval_nfe, lam, to_string(tc.metric), sched));
    }
  } else if (cfg.mode == "ablate-nfe") {
    const EvalHook hook = make_hook(cfg, heldout, sched);
    const TrainResult res = train(train_set, teacher, sched, cfg.train, &hook);
    save_checkpoint((out_dir / "student.ckpt").string(), res.state.student);
    write_training_log((out_dir / "training_log.csv").string(), res.log);
    write_heldout_log((out_dir / "heldout_log.csv").string(), res.log);
    for (int nfe : {1, 2, 4, 8}) {
      rows.push_back(evaluate_model_row(cfg, hash, "student", res.state.student, heldout,
                                        std::min(nfe, cfg.T), cfg.train.lambda_alt,
                                        to_string(cfg.train.metric), sched));
    }
  } else if (cfg.mode == "ablate-metric") {
    for (const char* name : {"cd", "jsd"}) {
      TrainConfig tc = cfg.train;
      tc.metric = metric_from_string(name);
      const TrainResult res = train(train_set, teacher, sched, tc, nullptr);
      const std::string label = std::string("metric_") + name;
      save_checkpoint((out_dir / ("student_" + label + ".ckpt")).string(), res.state.student);
      write_training_log((out_dir / ("training_log_" + label + ".csv")).string(), res.log);
      rows.push_back(evaluate_model_row(cfg, hash, "student", res.state.student, heldout,
                                        cfg.eval_nfe, tc.lambda_alt, name, sched));
    }
  } else if (cfg.mode == "ablate-strategy") {
    for (const bool random : {false, true}) {
      TrainConfig tc = cfg.train;
      tc.random_steps = random;
      if (!random) {
        tc.student_steps.clear();
      }
      const TrainResult res = train(train_set, teacher, sched, tc, nullptr);
      const std::string label = random ? "strategy_random" : "strategy_single";
      save_checkpoint((out_dir / ("student_" + label + ".ckpt")).string(), res.state.student);
      write_training_log((out_dir / ("training_log_" + label + ".csv")).string(), res.log);
      rows.push_back(evaluate_model_row(cfg, hash,
                                        random ? "student-random" : "student-single",
                                        res.state.student, heldout, cfg.eval_nfe, tc.lambda_alt,
                                        to_string(tc.metric), sched));
    }
  } else {
    throw std::logic_error("run_experiment: unhandled mode '" + cfg.mode + "'");
  }

  write_results_csv((out_dir / "results.csv").string(), cfg.eval.iou_resolutions, rows);
  write_schema_file((out_dir / "results_schema.txt").string(), cfg.eval.iou_resolutions);
  write_manifest((out_dir / "manifest.txt").string(), cfg, hash);
  return 0;
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("compare: cannot open '" + path + "'");
  }
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    std::string field;
    std::istringstream row(line);
    while (std::getline(row, field, ',')) {
      fields.push_back(field);
    }
    if (first) {
      table.header = fields;
      first = false;
    } else {
      table.rows.push_back(fields);
    }
  }
  if (table.header.empty()) {
    throw std::runtime_error("compare: '" + path + "' has no header row");
  }
  return table;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  return static_cast<std::size_t>(it - t.header.begin());
}

std::string row_key(const CsvTable& t, const std::vector<std::string>& row) {
  std::string key;
  for (const char* col : {"mode", "model", "nfe", "lambda", "metric"}) {
    const std::size_t idx = column_index(t, col);
    key += (idx < row.size() ? row[idx] : "");
    key += '|';
  }
  return key;
}

}  // namespace

CompareResult compare_reports(const std::string& path_a, const std::string& path_b) {
  const CsvTable a = read_csv(path_a);
  const CsvTable b = read_csv(path_b);

  const std::set<std::string> cols_a(a.header.begin(), a.header.end());
  const std::set<std::string> cols_b(b.header.begin(), b.header.end());
  if (cols_a != cols_b) {
    std::string msg = "compare: schema mismatch;";
    for (const std::string& c : cols_a) {
      if (!cols_b.count(c)) {
        msg += " missing in b: " + c + ";";
      }
    }
    for (const std::string& c : cols_b) {
      if (!cols_a.count(c)) {
        msg += " missing in a: " + c + ";";
      }
    }
    throw std::runtime_error(msg);
  }

  std::vector<std::string> metric_cols;
  for (const std::string& c : a.header) {
    if (c == "cd" || c == "jsd" || c == "emd" || c.rfind("iou_", 0) == 0) {
      metric_cols.push_back(c);
    }
  }

  std::map<std::string, const std::vector<std::string>*> b_by_key;
  for (const auto& row : b.rows) {
    b_by_key[row_key(b, row)] = &row;
  }

  CompareResult result;
  std::set<std::string> matched;
  for (const auto& row : a.rows) {
    const std::string key = row_key(a, row);
    const auto it = b_by_key.find(key);
    if (it == b_by_key.end()) {
      result.unmatched_a.push_back(key);
      continue;
    }
    matched.insert(key);
    for (const std::string& col : metric_cols) {
      const std::size_t ia = column_index(a, col);
      const std::size_t ib = column_index(b, col);
      RowDelta d;
      d.key = key;
      d.column = col;
      d.a = std::stod(row[ia]);
      d.b = std::stod((*it->second)[ib]);
      d.delta = d.b - d.a;
      d.pct = d.a != 0.0 ? 100.0 * d.delta / d.a : std::numeric_limits<double>::quiet_NaN();
      result.deltas.push_back(d);
    }
  }
  for (const auto& row : b.rows) {
    const std::string key = row_key(b, row);
    if (!matched.count(key)) {
      result.unmatched_b.push_back(key);
    }
  }
  return result;
}

}  // namespace pcd

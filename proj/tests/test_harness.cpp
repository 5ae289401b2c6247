#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pcd/harness.hpp"

using namespace pcd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("pcd_harness_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Blank the trailing wall-time fields of every data row so reruns compare
// equal byte for byte.
std::string strip_time_columns(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out << line << '\n';
      header = false;
      continue;
    }
    std::size_t cut = line.rfind(',');
    if (cut != std::string::npos) {
      cut = line.rfind(',', cut - 1);
    }
    out << (cut == std::string::npos ? line : line.substr(0, cut)) << '\n';
  }
  return out.str();
}

}  // namespace

TEST_CASE("KvConfig parses sections, comments, and typed values") {
  const std::string text =
      "# top comment\n"
      "[experiment]\n"
      "mode = distill-dpo\n"
      "seed = 7\n"
      "; alt comment style\n"
      "[train]\n"
      "lambda_alt = 1.25\n"
      "iterations = 40\n"
      "random_steps = true\n"
      "steps = 10, 20, 50\n"
      "weights = 0.5, 0.25\n"
      "iterations = 41\n";
  const KvConfig kv = KvConfig::parse_text(text, "inline");

  CHECK(kv.has("experiment.mode"));
  CHECK_FALSE(kv.has("experiment.missing"));
  CHECK(kv.require_string("experiment.mode") == "distill-dpo");
  CHECK(kv.require_u64("experiment.seed") == 7);
  CHECK(kv.get_double("train.lambda_alt", 0.0) == 1.25);
  CHECK(kv.get_int("train.iterations", 0) == 41);  // later key wins
  CHECK(kv.get_bool("train.random_steps", false));
  CHECK(kv.get_bool("train.nope", true));
  CHECK(kv.get_int_list("train.steps", {}) == std::vector<int>{10, 20, 50});
  CHECK(kv.get_double_list("train.weights", {}) == std::vector<double>{0.5, 0.25});
  CHECK(kv.get_string("train.nope", "dflt") == "dflt");
}

TEST_CASE("KvConfig rejects malformed input with located errors") {
  CHECK_THROWS_WITH_AS(KvConfig::parse_text("[s]\nno_equals_here\n", "cfg"),
                       doctest::Contains("cfg"), std::runtime_error);
  CHECK_THROWS_AS(KvConfig::parse_text("[broken\nx = 1\n", "cfg"), std::runtime_error);
  CHECK_THROWS_AS(KvConfig::parse_text("[s]\n= 3\n", "cfg"), std::runtime_error);

  // Keys before any section header are legal and stored without a prefix.
  const KvConfig bare = KvConfig::parse_text("alone = 7\n", "cfg");
  CHECK(bare.get_int("alone", 0) == 7);

  const KvConfig kv = KvConfig::parse_text("[a]\nx = notanumber\nflag = maybe\n", "cfg");
  CHECK_THROWS_WITH_AS(kv.get_int("a.x", 0), doctest::Contains("a.x"), std::invalid_argument);
  CHECK_THROWS_AS(kv.get_double("a.x", 0.0), std::invalid_argument);
  CHECK_THROWS_AS(kv.get_bool("a.flag", false), std::invalid_argument);
  CHECK_THROWS_WITH_AS(kv.require_string("a.gone"), doctest::Contains("a.gone"),
                       std::invalid_argument);
}

TEST_CASE("parse_experiment_config fills defaults and validates") {
  const KvConfig kv = KvConfig::parse_text(
      "[experiment]\nmode = distill-dpo\nseed = 3\n", "inline");
  const ExperimentConfig cfg = parse_experiment_config(kv);
  CHECK(cfg.mode == "distill-dpo");
  CHECK(cfg.seed == 3);
  CHECK(cfg.recipe.family == "ground-boxes");
  CHECK(cfg.recipe.ground_points == 512);
  CHECK(cfg.recipe.sparse_points == 64);
  CHECK(cfg.train_scenes == 8);
  CHECK(cfg.heldout_scenes == 4);
  CHECK(cfg.T == 50);
  CHECK(cfg.train.lambda_alt == 1.1);
  CHECK(cfg.train.omega == 1.0);
  CHECK(cfg.train.K == 8);
  CHECK(cfg.train.metric == PreferenceMetric::cd);
  CHECK(cfg.train.seed == 3);
  CHECK(cfg.eval.iou_resolutions == std::vector<double>{0.5, 0.2, 0.1});
  CHECK(cfg.eval_nfe == 8);
  CHECK(cfg.dpo.dpo.beta == 0.1);
  CHECK_FALSE(cfg.out_dir.empty());

  CHECK_THROWS_WITH_AS(
      parse_experiment_config(KvConfig::parse_text("[experiment]\nmode = distill-dpo\n", "x")),
      doctest::Contains("experiment.seed"), std::invalid_argument);
  CHECK_THROWS_AS(
      parse_experiment_config(
          KvConfig::parse_text("[experiment]\nmode = warp\nseed = 1\n", "x")),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          KvConfig::parse_text("[experiment]\nmode = eval\nseed = 1\n", "x")),
      doctest::Contains("eval.checkpoint"), std::invalid_argument);
  CHECK_THROWS_AS(
      parse_experiment_config(KvConfig::parse_text(
          "[experiment]\nmode = distill-dpo\nseed = 1\n[train]\nlambda_alt = 1.0\n", "x")),
      std::invalid_argument);
}

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hash_hex(0xcbf29ce484222325ULL) == "cbf29ce484222325");
  CHECK(hash_hex(1) == "0000000000000001");
}

TEST_CASE("resolve_output_dir honors the environment root") {
  ExperimentConfig cfg;
  cfg.out_dir = "/abs/path/run";
  CHECK(resolve_output_dir(cfg) == "/abs/path/run");

  cfg.out_dir = "rel-run";
  setenv("PCDISTILL_OUTPUT_ROOT", "/tmp/pcd_root", 1);
  CHECK(resolve_output_dir(cfg) == "/tmp/pcd_root/rel-run");
  unsetenv("PCDISTILL_OUTPUT_ROOT");
}

TEST_CASE("dataset round trip") {
  SceneRecipe recipe;
  recipe.ground_points = 24;
  recipe.sparse_points = 5;
  const std::vector<ScenePair> scenes = synth_dataset(recipe, 3, 51);
  const fs::path dir = fresh_dir("dataset");
  save_dataset(dir.string(), scenes);
  const std::vector<ScenePair> loaded = load_dataset(dir.string());
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(loaded[i].sparse.size() == scenes[i].sparse.size());
    REQUIRE(loaded[i].ground_truth.size() == scenes[i].ground_truth.size());
    for (std::size_t j = 0; j < scenes[i].ground_truth.size(); ++j) {
      CHECK(squared_distance(loaded[i].ground_truth[j], scenes[i].ground_truth[j]) < 1e-22);
    }
  }
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_dataset((fs::temp_directory_path() / "pcd_gone").string()),
                  std::runtime_error);
}

TEST_CASE("results csv header and compare") {
  const std::vector<double> res = {0.5, 0.2, 0.1};
  const std::vector<std::string> header = results_header(res);
  REQUIRE(header.size() == 15);
  CHECK(header[0] == "config_hash");
  CHECK(header[7] == "cd");
  CHECK(header[10] == "iou_0.5");
  CHECK(header[12] == "iou_0.1");
  CHECK(header[13] == "sample_seconds");

  ResultRow row;
  row.config_hash = "deadbeefdeadbeef";
  row.mode = "distill-dpo";
  row.model = "student";
  row.nfe = 8;
  row.lambda = 1.1;
  row.metric = "cd";
  row.scenes = 4;
  row.cd = 0.434;
  row.jsd = 0.1;
  row.emd = 0.5;
  row.iou = {0.9, 0.8, 0.7};
  row.sample_seconds = 1.5;
  row.metric_seconds = 0.25;

  const fs::path dir = fresh_dir("results");
  const fs::path a_path = dir / "a.csv";
  const fs::path b_path = dir / "b.csv";
  write_results_csv(a_path.string(), res, {row});

  ResultRow improved = row;
  improved.cd = 0.354;
  ResultRow extra = row;
  extra.model = "teacher";
  write_results_csv(b_path.string(), res, {improved, extra});

  const CompareResult cmp = compare_reports(a_path.string(), b_path.string());
  REQUIRE(cmp.unmatched_b.size() == 1);
  CHECK(cmp.unmatched_a.empty());
  bool saw_cd = false;
  for (const RowDelta& d : cmp.deltas) {
    if (d.column == "cd") {
      saw_cd = true;
      CHECK(d.a == 0.434);
      CHECK(d.b == 0.354);
      CHECK(d.delta == doctest::Approx(-0.08).epsilon(1e-12));
      CHECK(d.pct == doctest::Approx(-18.43317972350231).epsilon(1e-12));
    }
    CHECK(d.column != "sample_seconds");
    CHECK(d.column != "metric_seconds");
  }
  CHECK(saw_cd);

  const CompareResult self = compare_reports(a_path.string(), a_path.string());
  for (const RowDelta& d : self.deltas) {
    CHECK(d.delta == 0.0);
  }

  const fs::path odd = dir / "odd.csv";
  std::ofstream(odd) << "config_hash,mode,model,nfe,lambda,metric,scenes,cd\nx,m,s,1,1,cd,1,0.5\n";
  CHECK_THROWS_WITH_AS(compare_reports(a_path.string(), odd.string()),
                       doctest::Contains("schema"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("zero-division percentage is marked not-a-number") {
  const fs::path dir = fresh_dir("pct");
  const std::vector<double> res = {0.5};
  ResultRow row;
  row.config_hash = "x";
  row.mode = "m";
  row.model = "s";
  row.nfe = 1;
  row.metric = "cd";
  row.scenes = 1;
  row.cd = 0.0;
  row.iou = {1.0};
  const fs::path a_path = dir / "a.csv";
  write_results_csv(a_path.string(), res, {row});
  ResultRow other = row;
  other.cd = 0.25;
  const fs::path b_path = dir / "b.csv";
  write_results_csv(b_path.string(), res, {other});
  const CompareResult cmp = compare_reports(a_path.string(), b_path.string());
  bool saw = false;
  for (const RowDelta& d : cmp.deltas) {
    if (d.column == "cd") {
      saw = true;
      CHECK(std::isnan(d.pct));
      CHECK(d.delta == 0.25);
    }
  }
  CHECK(saw);
  fs::remove_all(dir);
}

TEST_CASE("theory-check mode writes its summary and passes") {
  const fs::path root = fresh_dir("theory_mode");
  setenv("PCDISTILL_OUTPUT_ROOT", root.string().c_str(), 1);
  const KvConfig kv = KvConfig::parse_text(
      "[experiment]\nmode = theory-check\nseed = 11\noutput = tc\n", "inline");
  const ExperimentConfig cfg = parse_experiment_config(kv);
  CHECK(run_experiment(cfg) == 0);
  CHECK(fs::exists(root / "tc" / "theory_summary.csv"));
  CHECK(fs::exists(root / "tc" / "results.csv"));
  CHECK(fs::exists(root / "tc" / "manifest.txt"));
  unsetenv("PCDISTILL_OUTPUT_ROOT");
  fs::remove_all(root);
}

TEST_CASE("distill-dpo mode produces a deterministic report") {
  const std::string cfg_text =
      "[experiment]\n"
      "mode = distill-dpo\n"
      "seed = 9\n"
      "output = run\n"
      "[scene]\n"
      "ground_points = 40\n"
      "sparse_points = 8\n"
      "train_scenes = 1\n"
      "heldout_scenes = 1\n"
      "[schedule]\n"
      "T = 8\n"
      "[teacher]\n"
      "iterations = 20\n"
      "[train]\n"
      "iterations = 2\n"
      "K = 2\n"
      "[eval]\n"
      "nfe = 4\n"
      "emd_cap = 32\n";

  const fs::path root_a = fresh_dir("dpo_mode_a");
  const fs::path root_b = fresh_dir("dpo_mode_b");
  setenv("PCDISTILL_OUTPUT_ROOT", root_a.string().c_str(), 1);

  const ExperimentConfig cfg_a = parse_experiment_config(KvConfig::parse_text(cfg_text, "a"));
  REQUIRE(run_experiment(cfg_a) == 0);

  const fs::path dir_a = root_a / "run";
  CHECK(fs::exists(dir_a / "results.csv"));
  CHECK(fs::exists(dir_a / "results_schema.txt"));
  CHECK(fs::exists(dir_a / "training_log.csv"));
  CHECK(fs::exists(dir_a / "teacher.ckpt"));
  CHECK(fs::exists(dir_a / "student.ckpt"));
  CHECK(fs::exists(dir_a / "manifest.txt"));
  CHECK(fs::exists(dir_a / "heldout"));

  const std::string results_a = slurp(dir_a / "results.csv");
  CHECK(results_a.find("teacher") != std::string::npos);
  CHECK(results_a.find("student") != std::string::npos);

  const std::string log_a = slurp(dir_a / "training_log.csv");
  CHECK(log_a.find("iteration,lr,winner_score,loser_score") == 0);
  // header + 2 iterations
  CHECK(std::count(log_a.begin(), log_a.end(), '\n') == 3);

  setenv("PCDISTILL_OUTPUT_ROOT", root_b.string().c_str(), 1);
  const ExperimentConfig cfg_b = parse_experiment_config(KvConfig::parse_text(cfg_text, "b"));
  REQUIRE(run_experiment(cfg_b) == 0);

  const std::string results_b = slurp(root_b / "run" / "results.csv");
  CHECK(strip_time_columns(results_a) == strip_time_columns(results_b));
  CHECK(slurp(dir_a / "training_log.csv") == slurp(root_b / "run" / "training_log.csv"));

  unsetenv("PCDISTILL_OUTPUT_ROOT");
  fs::remove_all(root_a);
  fs::remove_all(root_b);
}

TEST_CASE("ablate-nfe emits one row per budget") {
  const std::string cfg_text =
      "[experiment]\n"
      "mode = ablate-nfe\n"
      "seed = 13\n"
      "output = nfe\n"
      "[scene]\n"
      "ground_points = 40\n"
      "sparse_points = 8\n"
      "train_scenes = 1\n"
      "heldout_scenes = 1\n"
      "[schedule]\n"
      "T = 8\n"
      "[teacher]\n"
      "iterations = 10\n"
      "[train]\n"
      "iterations = 1\n"
      "K = 2\n"
      "[eval]\n"
      "emd_cap = 32\n";
  const fs::path root = fresh_dir("nfe_mode");
  setenv("PCDISTILL_OUTPUT_ROOT", root.string().c_str(), 1);
  const ExperimentConfig cfg = parse_experiment_config(KvConfig::parse_text(cfg_text, "x"));
  REQUIRE(run_experiment(cfg) == 0);

  const std::string results = slurp(root / "nfe" / "results.csv");
  std::istringstream in(results);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      rows.push_back(line);
    }
  }
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].find(",1,") != std::string::npos);
  CHECK(rows[3].find(",8,") != std::string::npos);
  unsetenv("PCDISTILL_OUTPUT_ROOT");
  fs::remove_all(root);
}

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcd/distill.hpp"
#include "pcd/dpo.hpp"
#include "pcd/metrics.hpp"
#include "pcd/scene_synth.hpp"

namespace pcd {

// Flat sectioned key/value config. Keys are addressed as "section.key";
// values keep their raw text until a typed getter parses them.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& key) const;
  std::string require_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::int64_t require_int(const std::string& key) const;
  std::uint64_t require_u64(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  const std::string& raw_text() const { return raw_text_; }

 private:
  std::map<std::string, std::string> values_;
  std::string raw_text_;
  std::string origin_;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

struct ExperimentConfig {
  std::string mode;
  std::uint64_t seed = 0;
  std::string out_dir;  // resolved under the output root

  SceneRecipe recipe;
  int train_scenes = 8;
  int heldout_scenes = 4;

  int T = 50;
  std::string schedule_kind = "linear";

  TrainConfig train;
  int eval_every = 0;

  PretrainConfig teacher;
  std::string teacher_checkpoint;  // empty: pretrain from scratch

  EvalConfig eval;
  int eval_nfe = 8;
  std::string eval_checkpoint;  // mode=eval only
  std::string eval_dataset;     // mode=eval only

  DpoFinetuneConfig dpo;
  int dpo_pairs = 100;
  double dpo_lambda_alt = 1.5;

  std::string raw_text;  // hashed into every result row
};

ExperimentConfig parse_experiment_config(const KvConfig& kv);
ExperimentConfig load_experiment_config(const std::string& path);

std::uint64_t fnv1a64(const std::string& data);
std::string hash_hex(std::uint64_t h);

// Output root: the PCDISTILL_OUTPUT_ROOT environment variable when set,
// otherwise the current directory.
std::string resolve_output_dir(const ExperimentConfig& cfg);

// Executes the configured mode, writing results.csv, results_schema.txt,
// training_log.csv (for training modes), checkpoints, and a manifest under
// the resolved output directory. Returns 0 on success.
int run_experiment(const ExperimentConfig& cfg);

void save_dataset(const std::string& dir, const std::vector<ScenePair>& scenes);
std::vector<ScenePair> load_dataset(const std::string& dir);

struct ResultRow {
  std::string config_hash;
  std::string mode;
  std::string model;
  int nfe = 0;
  double lambda = 1.0;
  std::string metric = "none";
  int scenes = 0;
  double cd = 0.0;
  double jsd = 0.0;
  double emd = 0.0;
  std::vector<double> iou;  // one per configured resolution, in config order
  double sample_seconds = 0.0;
  double metric_seconds = 0.0;
};

std::vector<std::string> results_header(const std::vector<double>& iou_resolutions);
void write_results_csv(const std::string& path, const std::vector<double>& iou_resolutions,
                       const std::vector<ResultRow>& rows);

struct RowDelta {
  std::string key;     // mode/model/nfe/lambda/metric of the matched rows
  std::string column;  // metric column name
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;
  double pct = 0.0;  // NaN when a == 0
};

struct CompareResult {
  std::vector<RowDelta> deltas;
  std::vector<std::string> unmatched_a;
  std::vector<std::string> unmatched_b;
};

// Aligns rows of two results files by (mode, model, nfe, lambda, metric) and
// reports absolute and percentage deltas per metric column. Throws when the
// schemas disagree, listing the missing columns.
CompareResult compare_reports(const std::string& path_a, const std::string& path_b);

}  // namespace pcd

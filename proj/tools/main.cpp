#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcd/diffusion.hpp"
#include "pcd/harness.hpp"
#include "pcd/metrics.hpp"
#include "pcd/net.hpp"
#include "pcd/rng.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  const pcd::ExperimentConfig cfg = pcd::load_experiment_config(config_path);
  const int status = pcd::run_experiment(cfg);
  std::cout << "run: mode=" << cfg.mode << " output=" << pcd::resolve_output_dir(cfg)
            << " status=" << status << "\n";
  return status;
}

int cmd_compare(const std::string& path_a, const std::string& path_b) {
  const pcd::CompareResult result = pcd::compare_reports(path_a, path_b);
  std::printf("%-44s %-10s %14s %14s %14s %10s\n", "row", "column", "a", "b", "delta", "pct");
  for (const pcd::RowDelta& d : result.deltas) {
    if (std::isnan(d.pct)) {
      std::printf("%-44s %-10s %14.6g %14.6g %14.6g %10s\n", d.key.c_str(), d.column.c_str(), d.a,
                  d.b, d.delta, "n/a");
    } else {
      std::printf("%-44s %-10s %14.6g %14.6g %14.6g %9.3f%%\n", d.key.c_str(), d.column.c_str(),
                  d.a, d.b, d.delta, d.pct);
    }
  }
  for (const std::string& key : result.unmatched_a) {
    std::printf("only in %s: %s\n", path_a.c_str(), key.c_str());
  }
  for (const std::string& key : result.unmatched_b) {
    std::printf("only in %s: %s\n", path_b.c_str(), key.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  int nfe = 8;
  std::uint64_t seed = 0;
  int K = 8;
  int T = 50;
  std::string schedule = "linear";
  std::string variant = "local-consistent";
};

int cmd_eval(const EvalArgs& args) {
  const pcd::NetParams params = pcd::load_checkpoint(args.checkpoint);
  const std::vector<pcd::ScenePair> scenes = pcd::load_dataset(args.dataset);
  const pcd::NoiseSchedule sched = pcd::build_schedule(args.T, args.schedule);
  if (args.nfe < 1 || args.nfe > args.T) {
    throw std::invalid_argument("eval: --nfe must lie in [1, T]");
  }

  pcd::SampleConfig sc;
  sc.K = args.K;
  sc.steps = pcd::uniform_steps(args.T, args.nfe);
  sc.lambda = 1.0;
  sc.variant = pcd::variant_from_string(args.variant);

  pcd::EvalConfig eval_cfg;
  eval_cfg.seed = pcd::mix_seed(args.seed, 0xE7A1);

  double cd = 0.0, jsd_sum = 0.0, emd_sum = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const pcd::ContextEmbedding ctx = pcd::encode_context(scenes[i].sparse);
    const pcd::EpsFn fn = [&](const pcd::PointCloud& cloud, int t) {
      return pcd::eps_forward(params, cloud, t, args.T, ctx);
    };
    const std::uint64_t sample_seed =
        pcd::mix_seed(pcd::mix_seed(args.seed, static_cast<std::uint64_t>(args.nfe)), i);
    const pcd::PointCloud completed = pcd::sample(fn, scenes[i].sparse, sc, sched, sample_seed);
    const pcd::MetricReport report = pcd::evaluate(completed, scenes[i].ground_truth, eval_cfg);
    std::printf("%s: cd=%.6g jsd=%.6g emd=%.6g\n", scenes[i].scene_id.c_str(), report.cd,
                report.jsd, report.emd);
    cd += report.cd;
    jsd_sum += report.jsd;
    emd_sum += report.emd;
  }
  const double n = static_cast<double>(scenes.size());
  std::printf("mean: cd=%.6g jsd=%.6g emd=%.6g over %zu scenes\n", cd / n, jsd_sum / n,
              emd_sum / n, scenes.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud completion distillation lab"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Path to config file")->required();

  std::string compare_a, compare_b;
  CLI::App* compare = app.add_subcommand("compare", "Diff two results.csv reports");
  compare->add_option("a", compare_a, "First results.csv")->required();
  compare->add_option("b", compare_b, "Second results.csv")->required();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  eval->add_option("checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval->add_option("dataset", eval_args.dataset, "Dataset directory")->required();
  eval->add_option("--nfe", eval_args.nfe, "Denoising steps at sampling time");
  eval->add_option("--seed", eval_args.seed, "Sampling seed");
  eval->add_option("--K", eval_args.K, "Completion points per sparse point");
  eval->add_option("--T", eval_args.T, "Schedule length");
  eval->add_option("--schedule", eval_args.schedule, "Schedule kind");
  eval->add_option("--variant", eval_args.variant, "Sampler variant");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path);
    }
    if (compare->parsed()) {
      return cmd_compare(compare_a, compare_b);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_args);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

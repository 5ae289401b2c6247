#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "pcd/dpo.hpp"
#include "pcd/metrics.hpp"
#include "pcd/rng.hpp"

using namespace pcd;
namespace fs = std::filesystem;

namespace {

NetArch tiny_arch() {
  NetArch arch;
  arch.hidden = {8, 8};
  return arch;
}

std::vector<Vec3> draw_eps(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> eps;
  for (std::size_t i = 0; i < n; ++i) {
    eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  return eps;
}

FixedPair synth_pair(std::uint64_t seed) {
  SceneRecipe recipe;
  recipe.ground_points = 32;
  recipe.sparse_points = 6;
  const ScenePair scene = synth_scene(recipe, seed);
  Rng rng(mix_seed(seed, 99));
  FixedPair pair;
  pair.id = "pair_test";
  pair.sparse = scene.sparse;
  pair.winner = scene.ground_truth;
  pair.loser = scene.ground_truth;
  for (Vec3& p : pair.loser.points) {
    p += Vec3{0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()};
  }
  pair.winner_score = 0.0;
  pair.loser_score = chamfer(pair.loser, pair.winner);
  return pair;
}

}  // namespace

TEST_CASE("snr follows the closed form of the schedule") {
  const NoiseSchedule half(1, {0.0, 0.5});  // alpha_bar_1 = 0.5
  CHECK(snr(half, 1) == doctest::Approx(1.0).epsilon(1e-15));
  const NoiseSchedule quarter(1, {0.0, 0.75});  // alpha_bar_1 = 0.25
  CHECK(snr(quarter, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const NoiseSchedule lin = build_schedule(50, "linear");
  for (int t = 2; t <= 50; ++t) {
    CHECK(snr(lin, t) < snr(lin, t - 1));
  }
  CHECK_THROWS_AS(snr(lin, 51), std::invalid_argument);
}

TEST_CASE("constant weighting ignores the timestep") {
  const NoiseSchedule lin = build_schedule(50, "linear");
  CHECK(timestep_weight(lin, 1, DpoWeighting::constant) == 1.0);
  CHECK(timestep_weight(lin, 50, DpoWeighting::constant) == 1.0);
}

TEST_CASE("diffusion_dpo_loss at the reference point") {
  const NoiseSchedule sched = build_schedule(10, "linear");
  const FixedPair pair = synth_pair(1);
  const NetParams ref = init_params(tiny_arch(), 2);
  const std::vector<Vec3> eps_w = draw_eps(pair.winner.size(), 3);
  const std::vector<Vec3> eps_l = draw_eps(pair.loser.size(), 4);
  DpoConfig cfg;
  cfg.beta = 0.1;

  const DpoLoss at_ref = diffusion_dpo_loss(ref, ref, pair, 5, eps_w, eps_l, sched, cfg);
  CHECK(at_ref.inner == 0.0);
  CHECK(at_ref.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("diffusion_dpo_loss scaling and symmetry") {
  const NoiseSchedule sched = build_schedule(10, "linear");
  const FixedPair pair = synth_pair(5);
  const NetParams ref = init_params(tiny_arch(), 6);
  const NetParams eta = init_params(tiny_arch(), 7);
  const std::vector<Vec3> eps_w = draw_eps(pair.winner.size(), 8);
  const std::vector<Vec3> eps_l = draw_eps(pair.loser.size(), 9);

  DpoConfig cfg;
  cfg.beta = 0.1;
  const DpoLoss base = diffusion_dpo_loss(eta, ref, pair, 4, eps_w, eps_l, sched, cfg);
  CHECK(base.loss > 0.0);
  CHECK(std::isfinite(base.loss));

  SUBCASE("doubling beta doubles the inner margin") {
    DpoConfig twice = cfg;
    twice.beta = 0.2;
    const DpoLoss b2 = diffusion_dpo_loss(eta, ref, pair, 4, eps_w, eps_l, sched, twice);
    CHECK(b2.inner == doctest::Approx(2.0 * base.inner).epsilon(1e-13));
  }

  SUBCASE("swapping winner and loser negates the margin") {
    FixedPair swapped = pair;
    std::swap(swapped.winner, swapped.loser);
    std::swap(swapped.winner_score, swapped.loser_score);
    const DpoLoss neg = diffusion_dpo_loss(eta, ref, swapped, 4, eps_l, eps_w, sched, cfg);
    CHECK(neg.inner == doctest::Approx(-base.inner).epsilon(1e-12));
    // -log sigmoid(x) - (-log sigmoid(-x)) = -x
    CHECK(neg.loss - base.loss == doctest::Approx(base.inner).epsilon(1e-10));
  }

  SUBCASE("loss stays finite for extreme margins") {
    DpoConfig huge = cfg;
    huge.beta = 1e6;
    const DpoLoss h = diffusion_dpo_loss(eta, ref, pair, 4, eps_w, eps_l, sched, huge);
    CHECK(std::isfinite(h.loss));
    CHECK(h.loss >= 0.0);
  }
}

TEST_CASE("diffusion_dpo_loss gradient matches finite differences") {
  const NoiseSchedule sched = build_schedule(10, "linear");
  const FixedPair pair = synth_pair(10);
  const NetParams ref = init_params(tiny_arch(), 11);
  NetParams eta = init_params(tiny_arch(), 12);
  const std::vector<Vec3> eps_w = draw_eps(pair.winner.size(), 13);
  const std::vector<Vec3> eps_l = draw_eps(pair.loser.size(), 14);
  DpoConfig cfg;
  cfg.beta = 0.05;

  const DpoLoss base = diffusion_dpo_loss(eta, ref, pair, 3, eps_w, eps_l, sched, cfg);
  const double h = 1e-6;
  for (std::size_t i = 0; i < eta.w.size(); i += 13) {
    NetParams plus = eta;
    plus.w[i] += h;
    NetParams minus = eta;
    minus.w[i] -= h;
    const double lp = diffusion_dpo_loss(plus, ref, pair, 3, eps_w, eps_l, sched, cfg).loss;
    const double lm = diffusion_dpo_loss(minus, ref, pair, 3, eps_w, eps_l, sched, cfg).loss;
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(base.grad[i]), 1e-4});
    CHECK(std::abs(fd - base.grad[i]) / denom < 1e-4);
  }
}

TEST_CASE("make_fixed_pairs ranks halves and is deterministic") {
  SceneRecipe recipe;
  recipe.ground_points = 32;
  recipe.sparse_points = 6;
  const std::vector<ScenePair> scenes = synth_dataset(recipe, 3, 21);
  const NoiseSchedule sched = build_schedule(10, "linear");
  const NetParams gen = init_params(tiny_arch(), 22);

  FixedPairConfig cfg;
  cfg.n_pairs = 3;
  cfg.K = 2;
  cfg.lambda_alt = 1.5;
  cfg.seed = 23;

  const std::vector<FixedPair> pairs = make_fixed_pairs(scenes, gen, sched, cfg);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].id == "pair_0000");
  CHECK(pairs[2].id == "pair_0002");
  for (const FixedPair& p : pairs) {
    CHECK(p.winner_score <= p.loser_score);
    CHECK(p.winner.size() == p.loser.size());
    CHECK(p.sparse.size() == 6);
  }

  const std::vector<FixedPair> again = make_fixed_pairs(scenes, gen, sched, cfg);
  CHECK(again[1].winner == pairs[1].winner);
  CHECK(again[1].loser == pairs[1].loser);
}

TEST_CASE("fixed pairs round-trip through disk") {
  SceneRecipe recipe;
  recipe.ground_points = 32;
  recipe.sparse_points = 6;
  const std::vector<ScenePair> scenes = synth_dataset(recipe, 2, 31);
  const NoiseSchedule sched = build_schedule(10, "linear");
  const NetParams gen = init_params(tiny_arch(), 32);

  FixedPairConfig cfg;
  cfg.n_pairs = 2;
  cfg.K = 2;
  cfg.seed = 33;
  const std::vector<FixedPair> pairs = make_fixed_pairs(scenes, gen, sched, cfg);

  const fs::path dir = fs::temp_directory_path() / "pcd_test_pairs";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_fixed_pairs(dir.string(), pairs);
  const std::vector<FixedPair> loaded = load_fixed_pairs(dir.string());
  REQUIRE(loaded.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(loaded[i].id == pairs[i].id);
    CHECK(loaded[i].metric == pairs[i].metric);
    CHECK(loaded[i].winner_score == doctest::Approx(pairs[i].winner_score).epsilon(1e-14));
    REQUIRE(loaded[i].winner.size() == pairs[i].winner.size());
    for (std::size_t j = 0; j < pairs[i].winner.size(); ++j) {
      CHECK(squared_distance(loaded[i].winner[j], pairs[i].winner[j]) < 1e-22);
      CHECK(squared_distance(loaded[i].loser[j], pairs[i].loser[j]) < 1e-22);
      }
  }
  fs::remove_all(dir);

  CHECK_THROWS_AS(load_fixed_pairs((fs::temp_directory_path() / "pcd_no_such_dir").string()),
                  std::runtime_error);
}

TEST_CASE("dpo_finetune starts at log 2 and is a no-op for zero iterations") {
  SceneRecipe recipe;
  recipe.ground_points = 32;
  recipe.sparse_points = 6;
  const std::vector<ScenePair> scenes = synth_dataset(recipe, 2, 41);
  const NoiseSchedule sched = build_schedule(10, "linear");
  const NetParams ref = init_params(tiny_arch(), 42);

  FixedPairConfig pc;
  pc.n_pairs = 2;
  pc.K = 2;
  pc.seed = 43;
  const std::vector<FixedPair> pairs = make_fixed_pairs(scenes, ref, sched, pc);

  DpoFinetuneConfig none;
  none.iterations = 0;
  const NetParams unchanged = dpo_finetune(ref, pairs, sched, none);
  CHECK(unchanged.w == ref.w);

  DpoFinetuneConfig cfg;
  cfg.iterations = 5;
  cfg.lr0 = 1e-5;
  cfg.seed = 44;
  DpoFinetuneLog log;
  const NetParams tuned = dpo_finetune(ref, pairs, sched, cfg, &log);
  REQUIRE(log.losses.size() == 5);
  CHECK(log.losses[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(tuned.w != ref.w);
  for (double loss : log.losses) {
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
  }

  DpoFinetuneLog log2;
  const NetParams tuned2 = dpo_finetune(ref, pairs, sched, cfg, &log2);
  CHECK(tuned2.w == tuned.w);
  CHECK(log2.losses == log.losses);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pcd/diffusion.hpp"
#include "pcd/point_cloud.hpp"
#include "pcd/rng.hpp"

using namespace pcd;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  return c;
}

std::vector<Vec3> random_eps(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> eps;
  for (std::size_t i = 0; i < n; ++i) {
    eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  }
  return eps;
}

}  // namespace

TEST_CASE("build_schedule basics and golden product") {
  const NoiseSchedule one = build_schedule(1, "linear");
  CHECK(one.alpha_bar_at(1) == one.alpha_at(1));
  CHECK(one.alpha_at(1) == 1.0 - 1e-4);

  const NoiseSchedule sched = build_schedule(50, "linear");
  for (int t = 2; t <= 50; ++t) {
    CHECK(sched.alpha_bar_at(t) < sched.alpha_bar_at(t - 1));
  }
  CHECK(sched.alpha_bar_at(0) == 1.0);
  CHECK(sched.alpha_bar_at(50) == doctest::Approx(0.60295159732971504).epsilon(1e-13));
  CHECK(sched.beta_at(1) == 1e-4);
  CHECK(sched.beta_at(50) == doctest::Approx(2e-2).epsilon(1e-14));
  CHECK(sched.sigma_at(7) == std::sqrt(sched.beta_at(7)));

  CHECK_THROWS_AS(build_schedule(50, "cosine"), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(0, "linear"), std::invalid_argument);
  CHECK_THROWS_AS(sched.alpha_bar_at(51), std::invalid_argument);
}

TEST_CASE("noise_point_cloud leaves the signal unscaled") {
  const PointCloud g0 = random_cloud(5, 1);
  const NoiseSchedule sched = build_schedule(10, "linear");

  const std::vector<Vec3> zero(g0.size(), Vec3{});
  CHECK(noise_point_cloud(g0, 4, zero, sched).cloud == g0);

  const NoiseSchedule quarter(1, {0.0, 0.25});
  PointCloud p;
  p.points = {{1, 2, 3}};
  const NoisySample shifted = noise_point_cloud(p, 1, {{1, 0, 0}}, quarter);
  CHECK(shifted.cloud[0].x == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(shifted.cloud[0].y == 2.0);
  CHECK(shifted.cloud[0].z == 3.0);

  CHECK_THROWS_AS(noise_point_cloud(g0, 4, std::vector<Vec3>(2), sched), std::invalid_argument);
  CHECK_THROWS_AS(noise_point_cloud(g0, 0, zero, sched), std::invalid_argument);
  CHECK_THROWS_AS(noise_point_cloud(g0, 11, zero, sched), std::invalid_argument);
}

TEST_CASE("init_noisy: lambda floor, bit-match at lambda 1, shared draws") {
  const PointCloud p = random_cloud(8, 2);
  const NoiseSchedule sched = build_schedule(20, "linear");

  const NoisySample a = init_noisy(p, sched, 1.0, 42);
  const NoisySample manual = noise_point_cloud(p, sched.T(), a.eps, sched);
  CHECK(a.cloud == manual.cloud);
  CHECK(a.t == sched.T());

  const NoisySample b = init_noisy(p, sched, 1.2, 42);
  REQUIRE(b.eps.size() == a.eps.size());
  const double s = sched.s_at(sched.T());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(b.eps[i] == a.eps[i]);
    const double off_a = a.cloud[i].x - p[i].x;
    const double off_b = b.cloud[i].x - p[i].x;
    CHECK(off_b == doctest::Approx(1.2 * off_a).epsilon(1e-13));
    CHECK(std::abs(off_a - s * a.eps[i].x) <= 1e-15 * std::max(1.0, std::abs(off_a)));
  }

  CHECK_THROWS_AS(init_noisy(p, sched, 0.9, 42), std::invalid_argument);
}

TEST_CASE("reverse_step ddpm plug-in values") {
  const NoiseSchedule sched = build_schedule(10, "linear");
  NoisySample gt;
  gt.cloud = random_cloud(4, 3);
  gt.t = 5;
  gt.eps.assign(4, Vec3{});

  Rng rng(0);
  const std::vector<Vec3> zero(4, Vec3{});
  const PointCloud out = reverse_step(gt, zero, sched, SamplerVariant::ddpm, true, rng);
  const double inv = 1.0 / std::sqrt(sched.alpha_at(5));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(out[i].x == gt.cloud[i].x * inv);
    CHECK(out[i].y == gt.cloud[i].y * inv);
    CHECK(out[i].z == gt.cloud[i].z * inv);
  }

  // beta so small that alpha rounds to exactly 1: the step is the identity.
  const NoiseSchedule flat(1, {0.0, 1e-300});
  NoisySample g1;
  g1.cloud = random_cloud(3, 4);
  g1.t = 1;
  const PointCloud id = reverse_step(g1, std::vector<Vec3>(3, Vec3{}), flat,
                                     SamplerVariant::ddpm, true, rng);
  CHECK(id == g1.cloud);

  NoisySample bad = g1;
  bad.t = 0;
  CHECK_THROWS_AS(reverse_step(bad, std::vector<Vec3>(3, Vec3{}), flat, SamplerVariant::ddpm,
                               true, rng),
                  std::invalid_argument);
}

TEST_CASE("local-consistent deterministic jump inverts the forward step") {
  const NoiseSchedule sched = build_schedule(50, "linear");
  const PointCloud g0 = random_cloud(32, 5);
  const std::vector<Vec3> eps = random_eps(32, 6);
  Rng rng(0);
  for (int t : {1, 7, 25, 50}) {
    const NoisySample noisy = noise_point_cloud(g0, t, eps, sched);
    const PointCloud back =
        reverse_jump(noisy.cloud, eps, t, 0, sched, SamplerVariant::local_consistent, true, rng);
    for (std::size_t i = 0; i < g0.size(); ++i) {
      CHECK(std::abs(back[i].x - g0[i].x) <= 1e-10);
      CHECK(std::abs(back[i].y - g0[i].y) <= 1e-10);
      CHECK(std::abs(back[i].z - g0[i].z) <= 1e-10);
    }
  }
}

TEST_CASE("forward marginal variance tracks the schedule") {
  const NoiseSchedule sched = build_schedule(50, "linear");
  const std::size_t n = 10000;
  const PointCloud g0 = random_cloud(n, 7);
  const std::vector<Vec3> eps = random_eps(n, 8);
  for (int t : {10, 50}) {
    const NoisySample noisy = noise_point_cloud(g0, t, eps, sched);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      var += squared_norm(noisy.cloud[i] - g0[i]);
    }
    var /= static_cast<double>(3 * n);
    const double expected = 1.0 - sched.alpha_bar_at(t);
    CHECK(std::abs(var - expected) <= 0.05 * expected);
  }
}

TEST_CASE("uniform_steps strides end at T") {
  CHECK(uniform_steps(50, 8) == std::vector<int>{6, 13, 19, 25, 31, 38, 44, 50});
  CHECK(uniform_steps(50, 1) == std::vector<int>{50});
  CHECK(uniform_steps(1, 1) == std::vector<int>{1});
  CHECK_THROWS_AS(uniform_steps(4, 5), std::invalid_argument);
  CHECK_THROWS_AS(uniform_steps(4, 0), std::invalid_argument);
}

TEST_CASE("sample replicates, strides, and is seed-deterministic") {
  const NoiseSchedule sched = build_schedule(20, "linear");
  const PointCloud p = random_cloud(6, 9);
  const EpsFn model = [](const PointCloud& cloud, int) {
    std::vector<Vec3> eps(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      eps[i] = cloud[i] * 0.05;
    }
    return eps;
  };

  SampleConfig cfg;
  cfg.K = 3;
  cfg.steps = {20};
  const PointCloud single = sample(model, p, cfg, sched, 11);
  CHECK(single.size() == 18);
  CHECK(sample(model, p, cfg, sched, 11) == single);

  cfg.steps = uniform_steps(20, 8);
  const PointCloud multi = sample(model, p, cfg, sched, 11);
  CHECK(multi.size() == 18);

  cfg.steps = {5, 10};
  CHECK_THROWS_AS(sample(model, p, cfg, sched, 11), std::invalid_argument);
  cfg.steps = {10, 5, 20};
  CHECK_THROWS_AS(sample(model, p, cfg, sched, 11), std::invalid_argument);
  cfg.steps.clear();
  CHECK_THROWS_AS(sample(model, p, cfg, sched, 11), std::invalid_argument);
}

TEST_CASE("variant names round-trip") {
  CHECK(variant_from_string("ddpm") == SamplerVariant::ddpm);
  CHECK(variant_from_string("local-consistent") == SamplerVariant::local_consistent);
  CHECK(to_string(SamplerVariant::ddpm) == "ddpm");
  CHECK(to_string(SamplerVariant::local_consistent) == "local-consistent");
  CHECK_THROWS_AS(variant_from_string("euler"), std::invalid_argument);
}

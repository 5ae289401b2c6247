#include "pcd/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace pcd {
namespace {

void check_pmf(const std::vector<double>& q, std::size_t n, const char* who) {
  if (q.size() != n) {
    throw std::invalid_argument(std::string(who) + ": PMF length mismatch");
  }
  double sum = 0.0;
  for (double v : q) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string(who) + ": PMF entries must be finite and >= 0");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(who) + ": PMF must sum to 1");
  }
}

}  // namespace

void validate_problem(const DiscretePreferenceProblem& problem) {
  if (problem.p_theta.empty()) {
    throw std::invalid_argument("theory: p_theta must be nonempty");
  }
  if (problem.r.size() != problem.p_theta.size()) {
    throw std::invalid_argument("theory: r length must match p_theta");
  }
  double sum = 0.0;
  for (double v : problem.p_theta) {
    if (!(v > 0.0)) {
      throw std::invalid_argument("theory: p_theta entries must be > 0");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("theory: p_theta must sum to 1");
  }
  for (double v : problem.r) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("theory: rewards must be finite");
    }
  }
  if (!std::isfinite(problem.omega) || problem.omega < 0.0) {
    throw std::invalid_argument("theory: omega must be finite and >= 0");
  }
}

double objective(const DiscretePreferenceProblem& problem, const std::vector<double>& q) {
  validate_problem(problem);
  check_pmf(q, problem.p_theta.size(), "objective");
  double kl = 0.0;
  double reward = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) {
      kl += q[i] * std::log(q[i] / problem.p_theta[i]);
    }
    reward += q[i] * problem.r[i];
  }
  return kl - problem.omega * reward;
}

std::vector<double> closed_form_optimum(const DiscretePreferenceProblem& problem) {
  validate_problem(problem);
  double m = -std::numeric_limits<double>::infinity();
  for (double ri : problem.r) {
    m = std::max(m, problem.omega * ri);
  }
  std::vector<double> w(problem.p_theta.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = problem.p_theta[i] * std::exp(problem.omega * problem.r[i] - m);
    z += w[i];
  }
  for (double& v : w) {
    v /= z;
  }
  return w;
}

double log_partition(const DiscretePreferenceProblem& problem) {
  validate_problem(problem);
  double m = -std::numeric_limits<double>::infinity();
  for (double ri : problem.r) {
    m = std::max(m, problem.omega * ri);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < problem.p_theta.size(); ++i) {
    z += problem.p_theta[i] * std::exp(problem.omega * problem.r[i] - m);
  }
  return m + std::log(z);
}

double kl_divergence(const std::vector<double>& q, const std::vector<double>& p) {
  if (q.size() != p.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) {
      if (!(p[i] > 0.0)) {
        throw std::invalid_argument("kl_divergence: q's support must lie inside p's support");
      }
      kl += q[i] * std::log(q[i] / p[i]);
    }
  }
  return kl;
}

std::vector<std::vector<double>> simplex_grid(int n, double grid_step) {
  if (n < 1 || n > 4) {
    throw std::invalid_argument("simplex_grid: n must lie in [1,4]");
  }
  if (!(grid_step > 0.0) || grid_step > 0.1) {
    throw std::invalid_argument("simplex_grid: grid_step must lie in (0, 0.1]");
  }
  const long long m = std::llround(1.0 / grid_step);
  if (m < 1 || std::abs(1.0 / grid_step - static_cast<double>(m)) > 1e-6) {
    throw std::invalid_argument("simplex_grid: grid_step must evenly divide 1");
  }
  std::vector<std::vector<double>> grid;
  std::vector<long long> counts(n, 0);
  const double inv_m = 1.0 / static_cast<double>(m);

  // Depth-first enumeration of all n-part compositions of m.
  std::vector<double> q(n);
  auto emit = [&]() {
    for (int i = 0; i < n; ++i) {
      q[i] = static_cast<double>(counts[i]) * inv_m;
    }
    grid.push_back(q);
  };
  std::function<void(int, long long)> rec = [&](int idx, long long remaining) {
    if (idx == n - 1) {
      counts[idx] = remaining;
      emit();
      return;
    }
    for (long long k = 0; k <= remaining; ++k) {
      counts[idx] = k;
      rec(idx + 1, remaining - k);
    }
  };
  rec(0, m);
  return grid;
}

std::vector<double> brute_force_optimum(const DiscretePreferenceProblem& problem,
                                        double grid_step) {
  validate_problem(problem);
  const int n = static_cast<int>(problem.p_theta.size());
  if (n > 4) {
    throw std::invalid_argument("brute_force_optimum: n must be <= 4");
  }
  const std::vector<std::vector<double>> grid = simplex_grid(n, grid_step);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = objective(problem, grid[i]);
    if (v < best) {
      best = v;
      best_idx = i;
    }
  }
  return grid[best_idx];
}

}  // namespace pcd

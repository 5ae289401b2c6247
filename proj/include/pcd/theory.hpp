#pragma once

#include <vector>

namespace pcd {

// Discrete stand-in for the preference-tilted optimization: minimize
// KL(q || p_theta) - omega * E_q[r] over the probability simplex. Small
// enough that the closed-form minimizer can be checked against an
// exhaustive grid sweep.
struct DiscretePreferenceProblem {
  std::vector<double> p_theta;
  std::vector<double> r;
  double omega = 1.0;
};

void validate_problem(const DiscretePreferenceProblem& problem);

// Sum_i q_i log(q_i / p_theta_i) - omega * Sum_i q_i r_i, natural log,
// 0 log 0 = 0.
double objective(const DiscretePreferenceProblem& problem, const std::vector<double>& q);

// p*_i = p_theta_i exp(omega r_i) / Z, computed with max-subtraction so large
// omega * r never overflows.
std::vector<double> closed_form_optimum(const DiscretePreferenceProblem& problem);

// log Z = log Sum_i p_theta_i exp(omega r_i), same max-subtraction. The
// minimum objective value is exactly -log Z.
double log_partition(const DiscretePreferenceProblem& problem);

// KL(q || p), natural log, for PMFs with p_i > 0 wherever q_i > 0.
double kl_divergence(const std::vector<double>& q, const std::vector<double>& p);

// All PMFs on n states whose entries are multiples of grid_step.
std::vector<std::vector<double>> simplex_grid(int n, double grid_step);

// Argmin of the objective over simplex_grid(n, grid_step). Restricted to
// n <= 4 to keep the sweep exhaustive and fast.
std::vector<double> brute_force_optimum(const DiscretePreferenceProblem& problem,
                                        double grid_step);

}  // namespace pcd

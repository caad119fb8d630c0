#pragma once

// Exact solvers over a small tabular MDP: value iteration, direct policy
// evaluation, and brute-force policy enumeration. These are the ground truth
// against which Q-learning results are checked.

#include <array>
#include <optional>
#include <vector>

#include "booster/core_types.hpp"

namespace booster {

struct TabularMdp {
  int n_states = 0;
  int terminal = -1;  // index of the absorbing terminal state, or -1 if none
  // P[s][a] is a distribution over successor states; R[s][a] the expected
  // one-step reward; feasible[s][a] the action mask.
  std::vector<std::array<std::vector<double>, kNumActions>> P;
  std::vector<std::array<double, kNumActions>> R;
  std::vector<std::array<bool, kNumActions>> feasible;
  // Start-state weights used for policy scoring (sums to 1; 0 on terminal).
  std::vector<double> start_dist;

  void resize(int n);
  // Throws std::invalid_argument if any feasible row is not a probability
  // distribution (within 1e-12), a state has no feasible action, or the
  // start distribution is inconsistent.
  void validate() const;
};

struct Solution {
  std::vector<double> v;                                // optimal value per state
  std::vector<std::array<double, kNumActions>> q;       // NaN where infeasible
  std::vector<Action> policy;                           // greedy, ties -> NoBooster
  int iterations = 0;
  double residual = 0.0;                                // sup-norm Bellman error at v
};

// Iterates the Bellman operator until the sup-norm change is at most
// tol*(1-gamma)/gamma, which bounds the true error of v by tol.
Solution value_iteration(const TabularMdp& mdp, double gamma, double tol);

// Stationary policy as a per-state booster probability (0/1 = deterministic).
using StationaryPolicy = std::vector<double>;

StationaryPolicy deterministic_policy(const std::vector<Action>& actions);

// Solves (I - gamma*P_pi) V = R_pi directly. Throws std::domain_error if the
// policy puts mass on an infeasible action.
std::vector<double> policy_evaluation_exact(const TabularMdp& mdp,
                                            const StationaryPolicy& booster_prob,
                                            double gamma);

double start_weighted_value(const TabularMdp& mdp, const std::vector<double>& v);

struct BruteForceResult {
  std::vector<Action> policy;
  std::vector<double> v;
  double start_value = 0.0;
};

// Enumerates every feasible deterministic policy and returns the maximizer of
// the start-weighted value. Throws std::length_error when more than
// max_policies policies would be needed.
BruteForceResult brute_force_best_policy(const TabularMdp& mdp, double gamma,
                                         std::uint64_t max_policies = 1ull << 24);

}  // namespace booster

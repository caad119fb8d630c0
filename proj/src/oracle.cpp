#include "booster/oracle.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace booster {

void TabularMdp::resize(int n) {
  n_states = n;
  P.assign(n, {});
  R.assign(n, {0.0, 0.0});
  feasible.assign(n, {true, true});
  for (auto& row : P)
    for (auto& dist : row) dist.assign(n, 0.0);
  start_dist.assign(n, 0.0);
}

void TabularMdp::validate() const {
  if (n_states <= 0) throw std::invalid_argument("TabularMdp: empty");
  for (int s = 0; s < n_states; ++s) {
    bool any = false;
    for (int a = 0; a < kNumActions; ++a) {
      if (!feasible[s][a]) continue;
      any = true;
      double sum = 0.0;
      for (int t = 0; t < n_states; ++t) {
        double p = P[s][a][t];
        if (p < 0.0 || !std::isfinite(p))
          throw std::invalid_argument("TabularMdp: negative or non-finite transition probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("TabularMdp: transition row does not sum to 1");
      if (!std::isfinite(R[s][a])) throw std::invalid_argument("TabularMdp: non-finite reward");
    }
    if (!any) throw std::invalid_argument("TabularMdp: state with no feasible action");
  }
  double mass = 0.0;
  for (int s = 0; s < n_states; ++s) {
    if (start_dist[s] < 0.0) throw std::invalid_argument("TabularMdp: negative start weight");
    mass += start_dist[s];
  }
  if (std::abs(mass - 1.0) > 1e-9)
    throw std::invalid_argument("TabularMdp: start distribution does not sum to 1");
  if (terminal >= 0 && start_dist[terminal] != 0.0)
    throw std::invalid_argument("TabularMdp: start mass on terminal state");
}

namespace {

double backup(const TabularMdp& mdp, int s, int a, const std::vector<double>& v, double gamma) {
  double ev = 0.0;
  const auto& row = mdp.P[s][a];
  for (int t = 0; t < mdp.n_states; ++t) ev += row[t] * v[t];
  return mdp.R[s][a] + gamma * ev;
}

}  // namespace

Solution value_iteration(const TabularMdp& mdp, double gamma, double tol) {
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("value_iteration: gamma in (0,1)");
  if (tol <= 0.0) throw std::invalid_argument("value_iteration: tol must be positive");
  mdp.validate();

  const double stop = tol * (1.0 - gamma) / gamma;
  std::vector<double> v(mdp.n_states, 0.0), next(mdp.n_states, 0.0);
  int iters = 0;
  for (;;) {
    double delta = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < kNumActions; ++a)
        if (mdp.feasible[s][a]) best = std::max(best, backup(mdp, s, a, v, gamma));
      next[s] = best;
      delta = std::max(delta, std::abs(next[s] - v[s]));
    }
    v.swap(next);
    ++iters;
    if (delta <= stop) break;
    if (iters > 10'000'000) throw std::runtime_error("value_iteration: did not converge");
  }

  Solution sol;
  sol.v = v;
  sol.iterations = iters;
  sol.q.assign(mdp.n_states, {std::numeric_limits<double>::quiet_NaN(),
                              std::numeric_limits<double>::quiet_NaN()});
  sol.policy.assign(mdp.n_states, Action::NoBooster);
  double residual = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    Action arg = Action::NoBooster;
    for (int a = 0; a < kNumActions; ++a) {
      if (!mdp.feasible[s][a]) continue;
      double qa = backup(mdp, s, a, v, gamma);
      sol.q[s][a] = qa;
      if (qa > best) {  // strict: ties stay at NoBooster
        best = qa;
        arg = static_cast<Action>(a);
      }
    }
    sol.policy[s] = arg;
    residual = std::max(residual, std::abs(best - v[s]));
  }
  sol.residual = residual;
  return sol;
}

StationaryPolicy deterministic_policy(const std::vector<Action>& actions) {
  StationaryPolicy p(actions.size(), 0.0);
  for (std::size_t s = 0; s < actions.size(); ++s)
    p[s] = actions[s] == Action::Booster ? 1.0 : 0.0;
  return p;
}

std::vector<double> policy_evaluation_exact(const TabularMdp& mdp,
                                            const StationaryPolicy& booster_prob,
                                            double gamma) {
  mdp.validate();
  if (static_cast<int>(booster_prob.size()) != mdp.n_states)
    throw std::invalid_argument("policy_evaluation_exact: policy size mismatch");
  const int n = mdp.n_states;
  for (int s = 0; s < n; ++s) {
    double pb = booster_prob[s];
    if (pb < 0.0 || pb > 1.0)
      throw std::domain_error("policy_evaluation_exact: booster probability outside [0,1]");
    if (pb > 0.0 && !mdp.feasible[s][1])
      throw std::domain_error("policy_evaluation_exact: policy uses infeasible Booster at state " +
                              std::to_string(s));
    if (pb < 1.0 && !mdp.feasible[s][0])
      throw std::domain_error("policy_evaluation_exact: policy uses infeasible NoBooster at state " +
                              std::to_string(s));
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b(n);
  for (int s = 0; s < n; ++s) {
    const double pb = booster_prob[s];
    const double pn = 1.0 - pb;
    b(s) = pn * mdp.R[s][0] + pb * mdp.R[s][1];
    for (int t = 0; t < n; ++t)
      A(s, t) -= gamma * (pn * mdp.P[s][0][t] + pb * mdp.P[s][1][t]);
  }
  Eigen::VectorXd x = A.partialPivLu().solve(b);
  double res = (A * x - b).lpNorm<Eigen::Infinity>();
  if (!(res <= 1e-10))
    throw std::runtime_error("policy_evaluation_exact: linear solve residual " +
                             std::to_string(res));
  return std::vector<double>(x.data(), x.data() + n);
}

double start_weighted_value(const TabularMdp& mdp, const std::vector<double>& v) {
  double acc = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) acc += mdp.start_dist[s] * v[s];
  return acc;
}

BruteForceResult brute_force_best_policy(const TabularMdp& mdp, double gamma,
                                         std::uint64_t max_policies) {
  mdp.validate();
  std::vector<int> free_states;
  std::vector<Action> base(mdp.n_states, Action::NoBooster);
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.feasible[s][0] && mdp.feasible[s][1])
      free_states.push_back(s);
    else
      base[s] = mdp.feasible[s][0] ? Action::NoBooster : Action::Booster;
  }
  if (free_states.size() >= 63 || (1ull << free_states.size()) > max_policies)
    throw std::length_error("brute_force_best_policy: " + std::to_string(free_states.size()) +
                            " free states exceed the enumeration budget");

  BruteForceResult best;
  bool have = false;
  const std::uint64_t count = 1ull << free_states.size();
  for (std::uint64_t bits = 0; bits < count; ++bits) {
    std::vector<Action> pol = base;
    for (std::size_t i = 0; i < free_states.size(); ++i)
      pol[free_states[i]] = (bits >> i) & 1 ? Action::Booster : Action::NoBooster;
    std::vector<double> v = policy_evaluation_exact(mdp, deterministic_policy(pol), gamma);
    double score = start_weighted_value(mdp, v);
    if (!have || score > best.start_value) {
      best.policy = std::move(pol);
      best.v = std::move(v);
      best.start_value = score;
      have = true;
    }
  }
  return best;
}

}  // namespace booster

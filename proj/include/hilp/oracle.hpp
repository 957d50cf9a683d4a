#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <ostream>
#include <vector>

#include "hilp/error.hpp"
#include "hilp/mdp.hpp"

namespace hilp {

/// Exact optimal temporal distances d*(s, g); kUnreachable marks +infinity.
class DistanceMatrix {
 public:
  static constexpr std::int64_t kUnreachable = std::numeric_limits<std::int64_t>::max();

  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, kUnreachable) {}

  std::size_t size() const noexcept { return n_; }
  std::int64_t operator()(State s, State g) const { return d_[s * n_ + g]; }
  std::int64_t& at(State s, State g) { return d_[s * n_ + g]; }
  bool reachable(State s, State g) const { return (*this)(s, g) != kUnreachable; }

  std::size_t unreachable_pairs() const {
    return static_cast<std::size_t>(std::count(d_.begin(), d_.end(), kUnreachable));
  }

  std::int64_t max_finite() const {
    std::int64_t m = 0;
    for (auto v : d_)
      if (v != kUnreachable) m = std::max(m, v);
    return m;
  }

  bool operator==(const DistanceMatrix&) const = default;

  /// One row per source state; unreachable entries written as "inf".
  void write_csv(std::ostream& out) const {
    for (State s = 0; s < n_; ++s) {
      for (State g = 0; g < n_; ++g) {
        if (g) out << ',';
        if (reachable(s, g))
          out << (*this)(s, g);
        else
          out << "inf";
      }
      out << '\n';
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::int64_t> d_;
};

/// Breadth-first search from every source over the action-induced successor graph.
inline DistanceMatrix temporal_distances(const Mdp& mdp) {
  const std::size_t n = mdp.n_states();
  DistanceMatrix dist(n);
  std::deque<State> queue;
  for (State src = 0; src < n; ++src) {
    dist.at(src, src) = 0;
    queue.assign(1, src);
    while (!queue.empty()) {
      const State s = queue.front();
      queue.pop_front();
      const auto ds = dist(src, s);
      for (Action a = 0; a < mdp.n_actions(); ++a) {
        const State t = mdp.step(s, a);
        if (!dist.reachable(src, t)) {
          dist.at(src, t) = ds + 1;
          queue.push_back(t);
        }
      }
    }
  }
  return dist;
}

/// (1 - gamma^d) / (1 - gamma); d itself at gamma = 1. Unreachable maps to
/// 1/(1-gamma), or +infinity when gamma = 1.
inline double discounted_distance(std::int64_t d, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("discounted_distance: gamma must be in (0, 1]");
  if (d == DistanceMatrix::kUnreachable)
    return gamma == 1.0 ? std::numeric_limits<double>::infinity() : 1.0 / (1.0 - gamma);
  if (d < 0) throw InvalidArgument("discounted_distance: negative distance");
  if (gamma == 1.0) return static_cast<double>(d);
  return (1.0 - std::pow(gamma, static_cast<double>(d))) / (1.0 - gamma);
}

struct GoalPolicy {
  // optimal[s] = actions that reach g optimally from s; empty when s cannot reach g.
  std::vector<std::vector<Action>> optimal;
  std::vector<State> unreachable;
};

/// Actions a with d*(p(s,a), g) = d*(s,g) - 1, and at s = g the actions that stay at g.
inline GoalPolicy optimal_goal_policy(const Mdp& mdp, const DistanceMatrix& dist, State g) {
  if (g >= mdp.n_states()) throw InvalidArgument("optimal_goal_policy: goal out of range");
  GoalPolicy out;
  out.optimal.resize(mdp.n_states());
  for (State s = 0; s < mdp.n_states(); ++s) {
    if (!dist.reachable(s, g)) {
      out.unreachable.push_back(s);
      continue;
    }
    for (Action a = 0; a < mdp.n_actions(); ++a) {
      const State t = mdp.step(s, a);
      const bool ok = s == g ? t == g : dist.reachable(t, g) && dist(t, g) == dist(s, g) - 1;
      if (ok) out.optimal[s].push_back(a);
    }
  }
  return out;
}

inline GoalPolicy optimal_goal_policy(const Mdp& mdp, State g) {
  return optimal_goal_policy(mdp, temporal_distances(mdp), g);
}

struct OracleQ {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma = 0.0;
  std::vector<double> q;
  std::vector<double> residuals;  // sup-norm Bellman residual per sweep

  double operator()(State s, Action a) const { return q[s * n_actions + a]; }

  double value(State s) const {
    double best = -std::numeric_limits<double>::infinity();
    for (Action a = 0; a < n_actions; ++a) best = std::max(best, (*this)(s, a));
    return best;
  }

  /// Greedy action; ties (within 1e-12 relative) resolved to the lowest index.
  Action greedy(State s) const {
    const double best = value(s);
    const double tol = 1e-12 * std::max(1.0, std::abs(best));
    for (Action a = 0; a < n_actions; ++a)
      if ((*this)(s, a) >= best - tol) return a;
    return 0;
  }
};

/// Jacobi value iteration on Q until the sup-norm Bellman residual is <= tol.
inline OracleQ value_iteration(const Mdp& mdp, const RewardFn& reward, double gamma, double tol = 1e-10) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("value_iteration: gamma must be in (0, 1)");
  if (!(tol > 0.0)) throw InvalidArgument("value_iteration: tol must be positive");
  if (!reward.all_finite()) throw InvalidArgument("value_iteration: non-finite reward");
  const std::size_t ns = mdp.n_states();
  const std::size_t na = mdp.n_actions();
  OracleQ out{ns, na, gamma, std::vector<double>(ns * na, 0.0), {}};
  std::vector<double> v(ns, 0.0);
  std::vector<double> next(ns * na);
  for (;;) {
    double residual = 0.0;
    for (State s = 0; s < ns; ++s)
      for (Action a = 0; a < na; ++a) {
        const State t = mdp.step(s, a);
        const double backup = reward(s, a, t) + gamma * v[t];
        residual = std::max(residual, std::abs(backup - out.q[s * na + a]));
        next[s * na + a] = backup;
      }
    out.q.swap(next);
    out.residuals.push_back(residual);
    for (State s = 0; s < ns; ++s) v[s] = out.value(s);
    if (residual <= tol) break;
  }
  return out;
}

/// Discounted return of running `policy` (callable State -> Action) for `horizon` steps.
template <typename Policy>
double oracle_return(const Mdp& mdp, const RewardFn& reward, double gamma, Policy&& policy, State start,
                     std::size_t horizon) {
  double ret = 0.0;
  double discount = 1.0;
  State s = start;
  for (std::size_t t = 0; t < horizon; ++t) {
    const Action a = policy(s);
    const State next = mdp.step(s, a);
    ret += discount * reward(s, a, next);
    discount *= gamma;
    s = next;
  }
  return ret;
}

/// Optimal finite-horizon-truncated return: greedy rollout of the value-iteration oracle.
inline double optimal_return(const Mdp& mdp, const RewardFn& reward, const OracleQ& q, State start,
                             std::size_t horizon) {
  return oracle_return(mdp, reward, q.gamma, [&](State s) { return q.greedy(s); }, start, horizon);
}

}  // namespace hilp

#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "hilp/hilp.hpp"

namespace hilp::testing {

inline constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

/// Floyd-Warshall over the unit-weight transition graph.
inline std::vector<std::int64_t> floyd_warshall(const Mdp& mdp) {
  const std::size_t n = mdp.n_states();
  std::vector<std::int64_t> d(n * n, kInf);
  for (State s = 0; s < n; ++s) {
    d[s * n + s] = 0;
    for (Action a = 0; a < mdp.n_actions(); ++a) {
      const State t = mdp.step(s, a);
      if (t != s) d[s * n + t] = std::min<std::int64_t>(d[s * n + t], 1);
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (d[i * n + k] + d[k * n + j] < d[i * n + j]) d[i * n + j] = d[i * n + k] + d[k * n + j];
  return d;
}

/// Random deterministic MDP; every state has a self-loop action with probability 1/2.
inline Mdp random_mdp(std::mt19937_64& rng, std::size_t max_states = 9, std::size_t max_actions = 4) {
  std::uniform_int_distribution<std::size_t> ns_dist(2, max_states), na_dist(1, max_actions);
  const std::size_t ns = ns_dist(rng), na = na_dist(rng);
  std::uniform_int_distribution<State> any(0, ns - 1);
  std::vector<State> trans(ns * na);
  for (auto& t : trans) t = any(rng);
  std::vector<double> init(ns, 0.0);
  init[any(rng)] = 1.0;
  return Mdp("random", ns, na, std::move(trans), std::move(init));
}

/// Grid from a random map with roughly `wall_frac` walls; retries until connected.
inline Mdp random_grid(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double wall_frac) {
  std::bernoulli_distribution wall(wall_frac);
  for (;;) {
    std::string map;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) map += wall(rng) ? '#' : '.';
      map += '\n';
    }
    try {
      return build_gridworld(map, "random-grid");
    } catch (const InvalidMap&) {
    }
  }
}

inline Embedding random_embedding(std::mt19937_64& rng, std::size_t n, std::size_t dim, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Embedding e(n, dim);
  for (State s = 0; s < n; ++s)
    for (auto& v : e.phi(s)) v = u(rng);
  e.sync_target();
  return e;
}

/// Exhaustive search over deterministic stationary policies of a tiny MDP;
/// each policy is evaluated by iterating its Bellman operator to convergence.
inline std::vector<double> brute_force_values(const Mdp& mdp, const RewardFn& r, double gamma) {
  const std::size_t n = mdp.n_states(), m = mdp.n_actions();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= m;
  std::vector<double> best(n, -std::numeric_limits<double>::infinity());
  std::vector<Action> pi(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (State s = 0; s < n; ++s) {
      pi[s] = c % m;
      c /= m;
    }
    std::vector<double> v(n, 0.0), next(n);
    for (int it = 0; it < 5000; ++it) {
      for (State s = 0; s < n; ++s) {
        const State t = mdp.step(s, pi[s]);
        next[s] = r(s, pi[s], t) + gamma * v[t];
      }
      v.swap(next);
    }
    for (State s = 0; s < n; ++s) best[s] = std::max(best[s], v[s]);
  }
  return best;
}

inline Dataset uniform_dataset(const Mdp& mdp, std::size_t n, std::size_t horizon, std::uint64_t seed) {
  return generate_dataset(mdp, Behavior::uniform(), n, horizon, seed);
}

}  // namespace hilp::testing

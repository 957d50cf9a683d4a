#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hilp/dataset.hpp"
#include "hilp/error.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"
#include "hilp/skills.hpp"

namespace hilp {

struct RegressionConfig {
  std::size_t n_samples = 0;  // 0: use every dataset transition
  double ridge_lambda = 1e-6;
  std::uint64_t seed = 0;
};

struct PromptResult {
  Vec latent;                  // unit-norm unless degenerate
  Vec raw;                     // unnormalized solution (regression) or direction (goal)
  bool degenerate = false;     // no usable direction
  bool at_goal = false;        // goal prompting: phi(g) ~ phi(s)
  bool fallback = false;       // planning fell back to the goal direction
  double residual = 0.0;       // regression mean squared error
  std::vector<State> waypoints;
};

namespace detail {

// Unit vector along v, or nullopt when |v| <= eps.
inline std::optional<Vec> normalized(const Vec& v, double eps) {
  const double n = norm(v);
  if (!(n > eps)) return std::nullopt;
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] / n;
  return out;
}

}  // namespace detail

/// Ridge regression of the reward on the cumulant phi(s') - phi(s):
/// (E[f f^T] + lambda I) z = E[r f]. The latent is z normalized.
inline PromptResult infer_latent_regression(const Dataset& data, const Embedding& emb, const RewardFn& reward,
                                            const RegressionConfig& cfg) {
  if (cfg.ridge_lambda < 0.0) throw InvalidArgument("infer_latent_regression: lambda must be >= 0");
  struct Sample {
    State s;
    Action a;
    State next;
  };
  std::vector<Sample> all;
  for (const auto& traj : data.trajectories)
    for (std::size_t t = 0; t < traj.actions.size(); ++t) all.push_back({traj.states[t], traj.actions[t], traj.states[t + 1]});
  if (all.empty()) throw InvalidDataset("infer_latent_regression: dataset has no transitions");
  std::vector<Sample> samples;
  if (cfg.n_samples == 0) {
    samples = all;
  } else {
    if (cfg.n_samples < emb.dim()) throw InvalidArgument("infer_latent_regression: n_samples must be >= D");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    samples.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) samples.push_back(all[pick(rng)]);
  }

  const std::size_t dim = emb.dim();
  std::vector<double> a(dim * dim, 0.0);
  Vec b(dim, 0.0);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (const auto& x : samples) {
    const auto f = difference(emb.phi(x.next), emb.phi(x.s));
    const double r = reward(x.s, x.a, x.next);
    for (std::size_t i = 0; i < dim; ++i) {
      b[i] += r * f[i] * inv_n;
      for (std::size_t j = 0; j < dim; ++j) a[i * dim + j] += f[i] * f[j] * inv_n;
    }
  }
  for (std::size_t i = 0; i < dim; ++i) a[i * dim + i] += cfg.ridge_lambda;

  PromptResult out;
  try {
    out.raw = solve_linear(a, b);
  } catch (const InvalidArgument&) {
    throw InvalidArgument("infer_latent_regression: singular normal equations; use ridge_lambda > 0");
  }
  double sse = 0.0;
  for (const auto& x : samples) {
    const auto f = difference(emb.phi(x.next), emb.phi(x.s));
    const double e = reward(x.s, x.a, x.next) - dot(f, out.raw);
    sse += e * e;
  }
  out.residual = sse * inv_n;
  if (auto unit = detail::normalized(out.raw, 1e-12)) {
    out.latent = std::move(*unit);
  } else {
    out.degenerate = true;
    out.latent.assign(dim, 0.0);
  }
  return out;
}

/// (phi(g) - phi(s)) / |phi(g) - phi(s)|; at_goal when the distance is within norm_epsilon.
inline PromptResult gc_latent(const Embedding& emb, State s, State g) {
  PromptResult out;
  out.raw = difference(emb.phi(g), emb.phi(s));
  if (auto unit = detail::normalized(out.raw, emb.norm_epsilon())) {
    out.latent = std::move(*unit);
  } else {
    out.at_goal = true;
    out.degenerate = true;
    out.latent.assign(emb.dim(), 0.0);
  }
  return out;
}

/// State maximizing max over observed (a, s') of r(s, a, s'); lowest id on ties.
inline State goal_from_reward(const Dataset& data, const RewardFn& reward) {
  std::vector<double> best(reward.n_states(), -std::numeric_limits<double>::infinity());
  bool any = false;
  for (const auto& traj : data.trajectories)
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      const State s = traj.states[t];
      best[s] = std::max(best[s], reward(s, traj.actions[t], traj.states[t + 1]));
      any = true;
    }
  if (!any) throw InvalidDataset("goal_from_reward: dataset has no transitions");
  State arg = 0;
  for (State s = 1; s < best.size(); ++s)
    if (best[s] > best[arg]) arg = s;
  return arg;
}

namespace detail {

struct Ranked {
  double value;
  State id;
};

// Candidates ordered by max(|phi(s) - phi(w)|, |phi(w) - u|), then by id.
inline std::vector<Ranked> rank_midpoints(const Embedding& emb, std::span<const State> candidates, State s,
                                          std::span<const double> u) {
  if (candidates.empty()) throw InvalidArgument("plan_midpoint: no candidates");
  std::vector<Ranked> ranked;
  ranked.reserve(candidates.size());
  const auto ps = emb.phi(s);
  for (State w : candidates) {
    const auto pw = emb.phi(w);
    ranked.push_back({std::max(distance(ps, pw), distance(pw, u)), w});
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const Ranked& x, const Ranked& y) { return x.value < y.value || (x.value == y.value && x.id < y.id); });
  return ranked;
}

}  // namespace detail

/// argmin over candidates w of max(|phi(s) - phi(w)|, |phi(w) - phi(u)|); lowest id on ties.
inline State plan_midpoint(const Embedding& emb, std::span<const State> candidates, State s, State u) {
  const auto pu = emb.phi(u);
  State best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  const auto ps = emb.phi(s);
  if (candidates.empty()) throw InvalidArgument("plan_midpoint: no candidates");
  for (State w : candidates) {
    const auto pw = emb.phi(w);
    const double v = std::max(distance(ps, pw), distance(pw, pu));
    if (v < best_value || (v == best_value && w < best)) {
      best_value = v;
      best = w;
    }
  }
  return best;
}

/// u <- g, then `recursions` times u <- plan_midpoint(s, u).
inline State recursive_plan(const Embedding& emb, std::span<const State> candidates, State s, State g,
                            std::size_t recursions) {
  State u = g;
  for (std::size_t i = 0; i < recursions; ++i) u = plan_midpoint(emb, candidates, s, u);
  return u;
}

struct PlannedWaypoint {
  Vec point;                 // averaged representation of the final top-k waypoints
  std::vector<State> chosen; // final top-k waypoint ids, best first
};

/// Latent-point form of recursive_plan: each recursion targets the average of
/// the top_k argmin representations. With top_k = 1 it tracks recursive_plan.
inline PlannedWaypoint recursive_plan_point(const Embedding& emb, std::span<const State> candidates, State s,
                                            State g, std::size_t recursions, std::size_t top_k) {
  if (top_k < 1) throw InvalidArgument("recursive_plan_point: top_k must be >= 1");
  PlannedWaypoint out;
  const auto pg = emb.phi(g);
  out.point.assign(pg.begin(), pg.end());
  out.chosen = {g};
  for (std::size_t i = 0; i < recursions; ++i) {
    if (top_k == 1) {
      // top_k = 1 reduces to plan_midpoint.
      const State u = plan_midpoint(emb, candidates, s, out.chosen.front());
      out.chosen = {u};
      const auto pu = emb.phi(u);
      out.point.assign(pu.begin(), pu.end());
      continue;
    }
    const auto ranked = detail::rank_midpoints(emb, candidates, s, out.point);
    const std::size_t k = std::min(top_k, ranked.size());
    Vec avg(emb.dim(), 0.0);
    out.chosen.clear();
    for (std::size_t j = 0; j < k; ++j) {
      out.chosen.push_back(ranked[j].id);
      const auto pw = emb.phi(ranked[j].id);
      for (std::size_t d = 0; d < avg.size(); ++d) avg[d] += pw[d] / static_cast<double>(k);
    }
    out.point = std::move(avg);
  }
  return out;
}

/// (w - phi(s)) / |w - phi(s)| for a waypoint representation w; falls back to
/// gc_latent(s, g) when degenerate.
inline PromptResult plan_latent(const Embedding& emb, State s, std::span<const double> waypoint, State g) {
  PromptResult out;
  out.raw = difference(waypoint, emb.phi(s));
  if (auto unit = detail::normalized(out.raw, emb.norm_epsilon())) {
    out.latent = std::move(*unit);
    return out;
  }
  out = gc_latent(emb, s, g);
  out.fallback = true;
  return out;
}

struct PlannerConfig {
  std::size_t n_candidates = 50000;
  std::size_t recursions = 0;
  std::size_t top_k = 1;
  std::uint64_t seed = 0;
};

/// Planner with candidate waypoints selected once per evaluation.
struct Planner {
  std::vector<State> candidates;
  std::size_t recursions = 0;
  std::size_t top_k = 1;
};

/// All distinct dataset states when there are at most n_candidates of them,
/// otherwise a uniform subsample without replacement. Sorted ascending.
inline Planner make_planner(const Dataset& data, const PlannerConfig& cfg) {
  if (cfg.top_k < 1) throw InvalidArgument("planner: top_k must be >= 1");
  std::vector<State> distinct;
  for (const auto& traj : data.trajectories) distinct.insert(distinct.end(), traj.states.begin(), traj.states.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  Planner p{{}, cfg.recursions, cfg.top_k};
  if (distinct.size() <= cfg.n_candidates) {
    p.candidates = std::move(distinct);
  } else {
    std::mt19937_64 rng(cfg.seed);
    std::sample(distinct.begin(), distinct.end(), std::back_inserter(p.candidates), cfg.n_candidates, rng);
    std::sort(p.candidates.begin(), p.candidates.end());
  }
  return p;
}

/// Prompt latent for reaching g from s, optionally refined by midpoint planning.
inline PromptResult goal_prompt(const Embedding& emb, State s, State g, const Planner* planner) {
  if (!planner || planner->recursions == 0) return gc_latent(emb, s, g);
  const auto wp = recursive_plan_point(emb, planner->candidates, s, g, planner->recursions, planner->top_k);
  auto out = plan_latent(emb, s, wp.point, g);
  out.waypoints = wp.chosen;
  return out;
}

struct GcrlResult {
  bool success = false;
  std::size_t steps = 0;  // first-arrival time when successful
  Trajectory trajectory;
  std::optional<std::string> failure;
};

/// Re-prompts every step from the current state and acts until g is reached or
/// the horizon is exhausted.
inline GcrlResult rollout_gcrl(const Mdp& mdp, const SkillPolicy& policy, const Embedding& emb, State g, State start,
                               std::size_t horizon, const Planner* planner = nullptr) {
  GcrlResult out;
  State s = start;
  out.trajectory.states.push_back(s);
  for (std::size_t t = 0;; ++t) {
    if (s == g) {
      out.success = true;
      out.steps = t;
      return out;
    }
    if (t == horizon) break;
    const auto prompt = goal_prompt(emb, s, g, planner);
    if (prompt.at_goal) {
      out.failure = "latent collision: phi(s) ~ phi(g) at state " + std::to_string(s);
      break;
    }
    Action a;
    try {
      a = act(policy, s, prompt.latent);
    } catch (const NoActionError& e) {
      out.failure = e.what();
      break;
    }
    s = mdp.step(s, a);
    out.trajectory.actions.push_back(a);
    out.trajectory.states.push_back(s);
  }
  out.steps = out.trajectory.length();
  return out;
}

/// Discounted task return of goal prompting toward g; after arrival the agent
/// holds position with a self-loop action when one exists.
inline double gcrl_task_return(const Mdp& mdp, const SkillPolicy& policy, const Embedding& emb,
                               const RewardFn& reward, double gamma, State g, State start, std::size_t horizon,
                               const Planner* planner = nullptr) {
  const auto run = rollout_gcrl(mdp, policy, emb, g, start, horizon, planner);
  Trajectory traj = run.trajectory;
  if (run.success) {
    const Action stay = mdp.self_loop_action(g);
    while (stay < mdp.n_actions() && traj.length() < horizon) {
      traj.actions.push_back(stay);
      traj.states.push_back(g);
    }
  }
  double ret = 0.0, discount = 1.0;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    ret += discount * reward(traj.states[t], traj.actions[t], traj.states[t + 1]);
    discount *= gamma;
  }
  return ret;
}

struct ZeroShotResult {
  double ret = 0.0;
  Trajectory trajectory;
  std::optional<std::string> failure;
};

/// Executes pi(a | s, z*) with one fixed latent for the whole episode.
inline ZeroShotResult rollout_zeroshot_rl(const Mdp& mdp, const SkillPolicy& policy, const RewardFn& reward,
                                          const PromptResult& prompt, double gamma, State start, std::size_t horizon) {
  if (prompt.degenerate) throw InvalidArgument("rollout_zeroshot_rl: degenerate latent");
  ZeroShotResult out;
  State s = start;
  out.trajectory.states.push_back(s);
  double discount = 1.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    Action a;
    try {
      a = act(policy, s, prompt.latent);
    } catch (const NoActionError& e) {
      out.failure = e.what();
      break;
    }
    const State next = mdp.step(s, a);
    out.ret += discount * reward(s, a, next);
    discount *= gamma;
    out.trajectory.actions.push_back(a);
    out.trajectory.states.push_back(next);
    s = next;
  }
  return out;
}

}  // namespace hilp

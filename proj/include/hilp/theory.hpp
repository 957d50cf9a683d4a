#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hilp/error.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"
#include "hilp/oracle.hpp"

namespace hilp {

/// phi(s) + (phi(g) - phi(s)) / |phi(g) - phi(s)|: the point one unit along the
/// latent direction to the goal. Throws when phi(s) ~ phi(g).
inline Vec zprime_star(const Embedding& emb, State s, State g) {
  const auto ps = emb.phi(s);
  const Vec dir = difference(emb.phi(g), ps);
  const double n = norm(dir);
  if (!(n > emb.norm_epsilon())) throw InvalidArgument("zprime_star: phi(s) and phi(g) coincide");
  Vec out(ps.begin(), ps.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += dir[k] / n;
  return out;
}

/// Action maximizing <phi(p(s,a)) - phi(s), phi(g) - phi(s)> among actions with
/// |phi(s) - phi(p(s,a))| <= 1. Ties go to the lowest index; nullopt when none is feasible.
inline std::optional<Action> hat_policy(const Mdp& mdp, const Embedding& emb, State s, State g) {
  const auto ps = emb.phi(s);
  const Vec dir = difference(emb.phi(g), ps);
  std::optional<Action> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Action a = 0; a < mdp.n_actions(); ++a) {
    const auto pn = emb.phi(mdp.step(s, a));
    if (distance(ps, pn) > 1.0) continue;
    const double score = dot(difference(pn, ps), dir);
    if (!best || score > best_score) {
      best = a;
      best_score = score;
    }
  }
  return best;
}

enum class TheoryRegime { kExact, kApproximate };

inline std::string to_string(TheoryRegime r) { return r == TheoryRegime::kExact ? "exact" : "approximate"; }

struct PairCheck {
  State s = 0;
  State g = 0;
  std::int64_t distance = 0;  // d*(s, g)
  bool degenerate = false;    // phi(s) ~ phi(g)
  bool feasible = false;      // some action satisfies the unit-step constraint
  Action action = 0;          // greedy action when feasible
  State next = 0;             // p(s, action)
  double local_eps_e = 0.0;   // over the neighborhood of s plus s itself
  double local_eps_d = 0.0;   // |z'* - phi(next)|, +inf when infeasible or degenerate
  bool condition = false;     // 4 eps_e + eps_d < 1 with the local quantities
  bool optimal = false;       // d*(next, g) = d*(s, g) - 1
};

struct FeasibilityReport {
  std::size_t premise_pairs = 0;  // pairs whose premise holds
  std::size_t violations = 0;     // premise holds but the greedy point misses z'*
  double tolerance = 1e-9;
  double conclusion_tolerance = 0.0;
};

struct TheoryReport {
  TheoryRegime regime = TheoryRegime::kExact;
  double eps_e = 0.0;  // sup over reachable pairs of |d* - |phi(s) - phi(g)||
  double eps_d = 0.0;  // sup over valid pairs of |z'* - phi(next)|
  std::size_t pairs = 0;          // reachable pairs with s != g
  std::size_t valid_pairs = 0;    // not degenerate and feasible
  std::size_t degenerate_pairs = 0;
  std::size_t infeasible_pairs = 0;
  std::size_t unreachable_pairs = 0;
  bool condition_holds = false;   // global 4 eps_e + eps_d < 1 over a fully valid set
  std::size_t greedy_optimal_pairs = 0;
  std::size_t local_condition_pairs = 0;
  std::size_t violations = 0;     // condition held (globally or locally) yet greedy step was not optimal
  std::vector<PairCheck> per_pair;
  FeasibilityReport feasibility;

  bool defect() const { return violations > 0 || feasibility.violations > 0; }
};

namespace detail {

inline double pair_error(const Embedding& emb, const DistanceMatrix& dist, State s, State g, double gamma) {
  if (!dist.reachable(s, g)) return std::numeric_limits<double>::infinity();
  return std::abs(discounted_distance(dist(s, g), gamma) - exact_latent_distance(emb, s, g));
}

}  // namespace detail

/// If phi(s') = z'* for some neighbor s' with |phi(s) - phi(s')| <= 1, the greedy
/// point must coincide with z'*. The premise is tested at `tolerance`; the
/// conclusion at sqrt(2 tolerance), the largest gap a greedy maximizer can
/// have once another feasible point scores within `tolerance` of 1.
inline FeasibilityReport check_feasibility_theorem(const Mdp& mdp, const Embedding& emb, double tolerance = 1e-9) {
  FeasibilityReport rep;
  rep.tolerance = tolerance;
  rep.conclusion_tolerance = std::sqrt(2.0 * tolerance) + 1e-12;
  for (State s = 0; s < mdp.n_states(); ++s)
    for (State g = 0; g < mdp.n_states(); ++g) {
      if (s == g || !(exact_latent_distance(emb, s, g) > emb.norm_epsilon())) continue;
      const Vec target = zprime_star(emb, s, g);
      bool premise = false;
      for (Action a = 0; a < mdp.n_actions() && !premise; ++a) {
        const auto pn = emb.phi(mdp.step(s, a));
        premise = distance(emb.phi(s), pn) <= 1.0 && distance(pn, target) <= tolerance;
      }
      if (!premise) continue;
      ++rep.premise_pairs;
      const auto a = hat_policy(mdp, emb, s, g);
      if (!a || distance(emb.phi(mdp.step(s, *a)), target) > rep.conclusion_tolerance) ++rep.violations;
    }
  return rep;
}

/// Checks the greedy-step optimality guarantee over every reachable pair, both
/// with the global sup errors and with errors restricted to each neighborhood.
/// gamma < 1 compares against discounted distances and is labelled approximate.
inline TheoryReport check_theorem(const Mdp& mdp, const Embedding& emb, const DistanceMatrix& dist,
                                  double gamma = 1.0) {
  if (emb.n_states() != mdp.n_states()) throw InvalidArgument("check_theorem: embedding size mismatch");
  TheoryReport rep;
  rep.regime = gamma == 1.0 ? TheoryRegime::kExact : TheoryRegime::kApproximate;
  const std::size_t n = mdp.n_states();
  for (State s = 0; s < n; ++s)
    for (State g = 0; g < n; ++g) {
      if (!dist.reachable(s, g)) {
        ++rep.unreachable_pairs;
        continue;
      }
      rep.eps_e = std::max(rep.eps_e, detail::pair_error(emb, dist, s, g, gamma));
    }

  for (State s = 0; s < n; ++s)
    for (State g = 0; g < n; ++g) {
      if (s == g || !dist.reachable(s, g)) continue;
      ++rep.pairs;
      PairCheck pc;
      pc.s = s;
      pc.g = g;
      pc.distance = dist(s, g);
      pc.local_eps_e = detail::pair_error(emb, dist, s, g, gamma);
      for (Action a = 0; a < mdp.n_actions(); ++a)
        pc.local_eps_e = std::max(pc.local_eps_e, detail::pair_error(emb, dist, mdp.step(s, a), g, gamma));
      pc.local_eps_d = std::numeric_limits<double>::infinity();
      pc.degenerate = !(exact_latent_distance(emb, s, g) > emb.norm_epsilon());
      if (pc.degenerate) {
        ++rep.degenerate_pairs;
      } else if (const auto a = hat_policy(mdp, emb, s, g)) {
        pc.feasible = true;
        pc.action = *a;
        pc.next = mdp.step(s, *a);
        pc.local_eps_d = distance(zprime_star(emb, s, g), emb.phi(pc.next));
        pc.optimal = dist.reachable(pc.next, g) && dist(pc.next, g) == pc.distance - 1;
        ++rep.valid_pairs;
        rep.eps_d = std::max(rep.eps_d, pc.local_eps_d);
        if (pc.optimal) ++rep.greedy_optimal_pairs;
      } else {
        ++rep.infeasible_pairs;
      }
      pc.condition = 4.0 * pc.local_eps_e + pc.local_eps_d < 1.0;
      if (pc.condition) ++rep.local_condition_pairs;
      rep.per_pair.push_back(pc);
    }

  rep.condition_holds = rep.valid_pairs > 0 && rep.valid_pairs == rep.pairs && 4.0 * rep.eps_e + rep.eps_d < 1.0;
  for (const auto& pc : rep.per_pair) {
    const bool guaranteed = pc.condition || (rep.condition_holds && pc.feasible);
    if (rep.regime == TheoryRegime::kExact && guaranteed && !pc.optimal) ++rep.violations;
  }
  rep.feasibility = check_feasibility_theorem(mdp, emb);
  return rep;
}

/// Throws TheoryDefect when an exact-regime report shows a guarantee violation.
inline void assert_theory(const TheoryReport& rep) {
  if (rep.regime == TheoryRegime::kExact && rep.violations > 0)
    throw TheoryDefect("greedy step not optimal although 4 eps_e + eps_d < 1 (" + std::to_string(rep.violations) +
                       " pairs)");
  if (rep.feasibility.violations > 0)
    throw TheoryDefect("greedy point misses z'* although a feasible neighbor attains it (" +
                       std::to_string(rep.feasibility.violations) + " pairs)");
}

}  // namespace hilp

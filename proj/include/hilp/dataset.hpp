#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hilp/error.hpp"
#include "hilp/mdp.hpp"
#include "hilp/oracle.hpp"

namespace hilp {

enum class BehaviorKind { kUniformRandom, kEpsilonGoal, kMixture };

struct Behavior {
  BehaviorKind kind = BehaviorKind::kUniformRandom;
  double epsilon = 0.3;
  std::optional<State> goal;  // epsilon-goal only; random goal per trajectory when empty

  static Behavior uniform() { return {}; }
  static Behavior epsilon_goal(double eps, std::optional<State> g = std::nullopt) {
    return {BehaviorKind::kEpsilonGoal, eps, g};
  }
  static Behavior mixture() { return {BehaviorKind::kMixture, 0.3, std::nullopt}; }

  std::string label() const {
    switch (kind) {
      case BehaviorKind::kUniformRandom:
        return "uniform-random";
      case BehaviorKind::kEpsilonGoal: {
        std::ostringstream out;
        out << "epsilon-goal-directed(eps=" << epsilon;
        if (goal) out << ",goal=" << *goal;
        out << ')';
        return out.str();
      }
      case BehaviorKind::kMixture:
        return "mixture";
    }
    return "unknown";
  }
};

/// Parses "uniform-random", "epsilon-goal-directed" or "mixture".
inline Behavior parse_behavior(std::string_view name, double epsilon = 0.3,
                               std::optional<State> goal = std::nullopt) {
  if (name == "uniform-random") return Behavior::uniform();
  if (name == "epsilon-goal-directed") return Behavior::epsilon_goal(epsilon, goal);
  if (name == "mixture") return Behavior::mixture();
  throw InvalidArgument("unknown behavior kind '" + std::string(name) + "'");
}

/// Rolls out n_trajectories fixed-horizon episodes (no termination) from the
/// initial distribution. Pure function of its arguments.
inline Dataset generate_dataset(const Mdp& mdp, const Behavior& behavior, std::size_t n_trajectories,
                                std::size_t horizon, std::uint64_t seed) {
  if (horizon < 1) throw InvalidArgument("generate_dataset: horizon must be >= 1");
  if (behavior.kind != BehaviorKind::kUniformRandom &&
      !(behavior.epsilon >= 0.0 && behavior.epsilon <= 1.0))
    throw InvalidArgument("generate_dataset: epsilon must be in [0, 1]");
  if (behavior.goal && *behavior.goal >= mdp.n_states())
    throw InvalidArgument("generate_dataset: goal out of range");

  std::mt19937_64 rng(seed);
  std::discrete_distribution<State> start_dist(mdp.initial().begin(), mdp.initial().end());
  std::uniform_int_distribution<Action> any_action(0, mdp.n_actions() - 1);
  std::uniform_int_distribution<State> any_state(0, mdp.n_states() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DistanceMatrix dist;
  if (behavior.kind != BehaviorKind::kUniformRandom) dist = temporal_distances(mdp);

  Dataset data;
  data.source_mdp = mdp.name();
  data.seed = seed;
  data.behavior = behavior.label();
  data.trajectories.reserve(n_trajectories);

  for (std::size_t i = 0; i < n_trajectories; ++i) {
    const bool directed = behavior.kind == BehaviorKind::kEpsilonGoal ||
                          (behavior.kind == BehaviorKind::kMixture && i % 2 == 1);
    Trajectory traj;
    traj.states.reserve(horizon + 1);
    traj.actions.reserve(horizon);
    State s = start_dist(rng);
    traj.states.push_back(s);
    std::optional<GoalPolicy> goal_policy;
    if (directed) {
      const State g = behavior.goal ? *behavior.goal : any_state(rng);
      goal_policy = optimal_goal_policy(mdp, dist, g);
    }
    for (std::size_t t = 0; t < horizon; ++t) {
      Action a;
      if (!directed || unit(rng) < behavior.epsilon) {
        a = any_action(rng);
      } else {
        const auto& options = goal_policy->optimal[s];
        if (options.empty()) {
          a = any_action(rng);
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
          a = options[pick(rng)];
        }
      }
      s = mdp.step(s, a);
      traj.actions.push_back(a);
      traj.states.push_back(s);
    }
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

struct CoverageReport {
  double fraction = 0.0;                  // observed (s, a) pairs / all pairs
  std::vector<std::size_t> visit_counts;  // occurrences of each state
  std::vector<bool> observed;             // (s, a) -> seen, row-major
  std::size_t observed_pairs = 0;
};

inline CoverageReport dataset_coverage(const Dataset& data, const Mdp& mdp) {
  CoverageReport rep;
  rep.visit_counts.assign(mdp.n_states(), 0);
  rep.observed.assign(mdp.n_states() * mdp.n_actions(), false);
  for (const auto& traj : data.trajectories) {
    for (State s : traj.states) {
      if (s >= mdp.n_states()) throw InvalidDataset("dataset state id out of range");
      ++rep.visit_counts[s];
    }
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      if (traj.actions[t] >= mdp.n_actions()) throw InvalidDataset("dataset action id out of range");
      rep.observed[traj.states[t] * mdp.n_actions() + traj.actions[t]] = true;
    }
  }
  rep.observed_pairs = static_cast<std::size_t>(std::count(rep.observed.begin(), rep.observed.end(), true));
  rep.fraction = static_cast<double>(rep.observed_pairs) / static_cast<double>(rep.observed.size());
  return rep;
}

/// Throws InvalidDataset unless every trajectory is non-empty and replays under mdp.
inline void validate_dataset(const Dataset& data, const Mdp& mdp) {
  if (data.trajectories.empty()) throw InvalidDataset("dataset has no trajectories");
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& traj = data.trajectories[i];
    if (traj.actions.empty()) throw InvalidDataset("trajectory " + std::to_string(i) + " has no actions");
    if (!consistent_with(traj, mdp))
      throw InvalidDataset("trajectory " + std::to_string(i) + " is inconsistent with " + mdp.name());
  }
}

namespace detail {

inline std::vector<std::size_t> parse_id_list(std::string_view text, std::size_t line) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view tok = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
      throw ParseError(line, "invalid id '" + std::string(tok) + "'");
    out.push_back(value);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

// Value of `key=` inside a whitespace-separated header, or empty.
inline std::string header_field(std::string_view header, std::string_view key) {
  std::istringstream in{std::string(header)};
  std::string tok;
  const std::string prefix = std::string(key) + "=";
  while (in >> tok)
    if (tok.rfind(prefix, 0) == 0) return tok.substr(prefix.size());
  return {};
}

}  // namespace detail

inline void write_dataset(const Dataset& data, std::ostream& out) {
  out << "#hilp-dataset v1 mdp=" << data.source_mdp << " seed=" << data.seed << '\n';
  if (!data.behavior.empty()) out << "#behavior=" << data.behavior << '\n';
  for (const auto& traj : data.trajectories)
    out << "states:" << detail::join_ids(traj.states) << "|actions:" << detail::join_ids(traj.actions) << '\n';
}

inline Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("#hilp-dataset v1", 0) != 0) throw ParseError(lineno, "missing '#hilp-dataset v1' header");
      data.source_mdp = detail::header_field(line, "mdp");
      const auto seed = detail::header_field(line, "seed");
      const auto [ptr, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), data.seed);
      if (seed.empty() || ec != std::errc() || ptr != seed.data() + seed.size())
        throw ParseError(lineno, "invalid seed '" + seed + "'");
      header = true;
      continue;
    }
    if (line.rfind("#behavior=", 0) == 0) {
      data.behavior = line.substr(10);
      continue;
    }
    if (line.front() == '#') continue;
    const std::string_view view(line);
    const auto bar = view.find('|');
    if (view.rfind("states:", 0) != 0 || bar == std::string_view::npos ||
        view.substr(bar + 1).rfind("actions:", 0) != 0)
      throw ParseError(lineno, "expected 'states:...|actions:...'");
    Trajectory traj;
    traj.states = detail::parse_id_list(view.substr(7, bar - 7), lineno);
    traj.actions = detail::parse_id_list(view.substr(bar + 9), lineno);
    if (traj.states.size() != traj.actions.size() + 1)
      throw ParseError(lineno, "trajectory needs exactly one more state than actions");
    if (traj.actions.empty()) throw ParseError(lineno, "trajectory has no actions");
    data.trajectories.push_back(std::move(traj));
  }
  if (!header) throw InvalidDataset("dataset file is empty");
  if (data.trajectories.empty()) throw InvalidDataset("dataset file has no trajectories");
  return data;
}

inline void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_dataset(data, out);
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_dataset(in);
}

}  // namespace hilp

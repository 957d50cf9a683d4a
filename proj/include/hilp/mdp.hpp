#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hilp/error.hpp"

namespace hilp {

using State = std::size_t;
using Action = std::size_t;

/// Finite deterministic MDP. Rewards live in RewardFn; tasks are supplied downstream.
class Mdp {
 public:
  Mdp() = default;

  Mdp(std::string name, std::size_t n_states, std::size_t n_actions,
      std::vector<State> transition, std::vector<double> initial,
      std::vector<std::string> action_names = {})
      : name_(std::move(name)),
        n_states_(n_states),
        n_actions_(n_actions),
        transition_(std::move(transition)),
        initial_(std::move(initial)),
        action_names_(std::move(action_names)) {
    validate();
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }

  State step(State s, Action a) const { return transition_[s * n_actions_ + a]; }

  const std::vector<double>& initial() const noexcept { return initial_; }

  /// States with positive initial weight, ascending.
  std::vector<State> initial_support() const {
    std::vector<State> out;
    for (State s = 0; s < n_states_; ++s)
      if (initial_[s] > 0.0) out.push_back(s);
    return out;
  }

  std::string action_name(Action a) const {
    return a < action_names_.size() ? action_names_[a] : std::to_string(a);
  }

  /// Some action maps s to itself, or n_actions() if none does.
  Action self_loop_action(State s) const {
    for (Action a = 0; a < n_actions_; ++a)
      if (step(s, a) == s) return a;
    return n_actions_;
  }

  /// Copy in which every action at g stays at g (goal-reaching tasks end on arrival).
  Mdp with_absorbing(State g) const {
    if (g >= n_states_) throw InvalidArgument("mdp: absorbing state out of range");
    Mdp out = *this;
    for (Action a = 0; a < n_actions_; ++a) out.transition_[g * n_actions_ + a] = g;
    out.name_ += "-absorbing" + std::to_string(g);
    return out;
  }

  // Grid coordinates (row, col) when built from a map; empty otherwise.
  std::vector<std::pair<int, int>> cells;

 private:
  void validate() const {
    if (n_states_ == 0 || n_actions_ == 0) throw InvalidArgument("mdp: empty state or action set");
    if (transition_.size() != n_states_ * n_actions_)
      throw InvalidArgument("mdp: transition table has wrong size");
    for (State t : transition_)
      if (t >= n_states_) throw InvalidArgument("mdp: transition target out of range");
    if (initial_.size() != n_states_) throw InvalidArgument("mdp: initial distribution size");
    double total = 0.0;
    for (double w : initial_) {
      if (!(w >= 0.0)) throw InvalidArgument("mdp: negative initial weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("mdp: initial weights must sum to 1");
  }

  std::string name_;
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<State> transition_;
  std::vector<double> initial_;
  std::vector<std::string> action_names_;
};

/// Reward table r(s, a, s'). State-only rewards are stored constant over (a, s').
class RewardFn {
 public:
  RewardFn() = default;
  RewardFn(std::size_t n_states, std::size_t n_actions)
      : n_states_(n_states), n_actions_(n_actions), values_(n_states * n_actions * n_states, 0.0) {}

  static RewardFn zero(const Mdp& mdp) { return RewardFn(mdp.n_states(), mdp.n_actions()); }

  /// r(s, a, s') = per_state[s].
  static RewardFn from_state(const Mdp& mdp, const std::vector<double>& per_state) {
    RewardFn r(mdp.n_states(), mdp.n_actions());
    for (State s = 0; s < mdp.n_states(); ++s)
      for (Action a = 0; a < mdp.n_actions(); ++a)
        for (State t = 0; t < mdp.n_states(); ++t) r.set(s, a, t, per_state.at(s));
    return r;
  }

  /// r(s, a, s') = per_state[s'], i.e. reward for arriving in s'.
  static RewardFn from_arrival(const Mdp& mdp, const std::vector<double>& per_state) {
    RewardFn r(mdp.n_states(), mdp.n_actions());
    for (State s = 0; s < mdp.n_states(); ++s)
      for (Action a = 0; a < mdp.n_actions(); ++a)
        for (State t = 0; t < mdp.n_states(); ++t) r.set(s, a, t, per_state.at(t));
    return r;
  }

  /// 1 for entering g from another state, 0 otherwise.
  static RewardFn goal_arrival(const Mdp& mdp, State g) {
    RewardFn r(mdp.n_states(), mdp.n_actions());
    for (State s = 0; s < mdp.n_states(); ++s)
      if (s != g)
        for (Action a = 0; a < mdp.n_actions(); ++a) r.set(s, a, g, 1.0);
    return r;
  }

  double operator()(State s, Action a, State next) const { return values_[index(s, a, next)]; }
  void set(State s, Action a, State next, double v) { values_[index(s, a, next)] = v; }

  RewardFn scaled(double c) const {
    RewardFn r = *this;
    for (auto& v : r.values_) v *= c;
    return r;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }

 private:
  std::size_t index(State s, Action a, State t) const { return (s * n_actions_ + a) * n_states_ + t; }

  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> values_;
};

struct Trajectory {
  std::vector<State> states;    // length T + 1
  std::vector<Action> actions;  // length T

  std::size_t length() const noexcept { return actions.size(); }
  bool operator==(const Trajectory&) const = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::string source_mdp;
  std::uint64_t seed = 0;
  std::string behavior;

  std::size_t n_transitions() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

/// True iff every trajectory replays exactly under mdp's transition function.
inline bool consistent_with(const Trajectory& traj, const Mdp& mdp) {
  if (traj.states.size() != traj.actions.size() + 1) return false;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    if (traj.states[t] >= mdp.n_states() || traj.actions[t] >= mdp.n_actions()) return false;
    if (mdp.step(traj.states[t], traj.actions[t]) != traj.states[t + 1]) return false;
  }
  return traj.states.back() < mdp.n_states();
}

namespace chain_action {
inline constexpr Action kLeft = 0;
inline constexpr Action kRight = 1;
inline constexpr Action kStay = 2;
}  // namespace chain_action

namespace grid_action {
inline constexpr Action kUp = 0;
inline constexpr Action kDown = 1;
inline constexpr Action kLeft = 2;
inline constexpr Action kRight = 3;
inline constexpr Action kStay = 4;
}  // namespace grid_action

/// Chain 0..length-1 with Left/Right clamped at the ends and Stay.
inline Mdp build_chain(std::size_t length) {
  using namespace chain_action;
  if (length < 2) throw InvalidArgument("build_chain: length must be >= 2");
  std::vector<State> trans(length * 3);
  for (State s = 0; s < length; ++s) {
    trans[s * 3 + kLeft] = s == 0 ? 0 : s - 1;
    trans[s * 3 + kRight] = s + 1 == length ? s : s + 1;
    trans[s * 3 + kStay] = s;
  }
  std::vector<double> init(length, 1.0 / static_cast<double>(length));
  return Mdp("chain" + std::to_string(length), length, 3, std::move(trans), std::move(init),
             {"Left", "Right", "Stay"});
}

inline std::vector<std::string> split_map_rows(std::string_view text) {
  std::vector<std::string> rows;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(line);
  }
  while (!rows.empty() && rows.back().empty()) rows.pop_back();
  return rows;
}

/// Builds a 5-action gridworld from rows of '.', '#', 'S'. State ids are
/// assigned row-major over free cells; mdp.cells holds the id -> (row, col) map.
inline Mdp build_gridworld(std::string_view map_text, std::string name = "grid") {
  using namespace grid_action;
  const auto rows = split_map_rows(map_text);
  if (rows.empty()) throw InvalidMap("map has no rows");
  const std::size_t width = rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width)
      throw InvalidMap("ragged map: row " + std::to_string(r) + " has width " +
                       std::to_string(rows[r].size()) + ", expected " + std::to_string(width));
    for (char c : rows[r])
      if (c != '.' && c != '#' && c != 'S')
        throw InvalidMap(std::string("unexpected map character '") + c + "'");
  }
  const std::size_t height = rows.size();
  constexpr std::size_t kWall = static_cast<std::size_t>(-1);
  std::vector<std::size_t> id(height * width, kWall);
  std::vector<std::pair<int, int>> cells;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      if (rows[r][c] != '#') {
        id[r * width + c] = cells.size();
        cells.emplace_back(static_cast<int>(r), static_cast<int>(c));
      }
  const std::size_t n = cells.size();
  if (n == 0) throw InvalidMap("map has no free cells");

  constexpr int dr[5] = {-1, 1, 0, 0, 0};
  constexpr int dc[5] = {0, 0, -1, 1, 0};
  std::vector<State> trans(n * 5);
  for (State s = 0; s < n; ++s) {
    const auto [r, c] = cells[s];
    for (Action a = 0; a < 5; ++a) {
      const int nr = r + dr[a];
      const int nc = c + dc[a];
      State target = s;
      if (nr >= 0 && nc >= 0 && nr < static_cast<int>(height) && nc < static_cast<int>(width)) {
        const std::size_t nid = id[static_cast<std::size_t>(nr) * width + static_cast<std::size_t>(nc)];
        if (nid != kWall) target = nid;
      }
      trans[s * 5 + a] = target;
    }
  }

  std::vector<bool> seen(n, false);
  std::deque<State> queue{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!queue.empty()) {
    const State s = queue.front();
    queue.pop_front();
    for (Action a = 0; a < 5; ++a) {
      const State t = trans[s * 5 + a];
      if (!seen[t]) {
        seen[t] = true;
        ++reached;
        queue.push_back(t);
      }
    }
  }
  if (reached != n) throw InvalidMap("free cells are not connected");

  std::vector<double> init(n, 0.0);
  std::size_t starts = 0;
  for (State s = 0; s < n; ++s)
    if (rows[cells[s].first][cells[s].second] == 'S') ++starts;
  for (State s = 0; s < n; ++s) {
    if (starts == 0)
      init[s] = 1.0 / static_cast<double>(n);
    else if (rows[cells[s].first][cells[s].second] == 'S')
      init[s] = 1.0 / static_cast<double>(starts);
  }
  Mdp mdp(std::move(name), n, 5, std::move(trans), std::move(init),
          {"Up", "Down", "Left", "Right", "Stay"});
  mdp.cells = std::move(cells);
  return mdp;
}

/// Open rectangle without walls.
inline std::string open_grid_map(std::size_t rows, std::size_t cols) {
  std::string out;
  for (std::size_t r = 0; r < rows; ++r) out += std::string(cols, '.') + "\n";
  return out;
}

/// 16x16 four-rooms layout: 7x7 rooms separated by a wall cross, outer wall
/// along the last row and column, one doorway in each arm of the cross.
inline std::string four_rooms_map() {
  std::vector<std::string> g(16, std::string(16, '.'));
  for (int i = 0; i < 16; ++i) {
    g[7][i] = '#';
    g[i][7] = '#';
    g[15][i] = '#';
    g[i][15] = '#';
  }
  g[3][7] = '.';   // top-left <-> top-right
  g[11][7] = '.';  // bottom-left <-> bottom-right
  g[7][2] = '.';   // top-left <-> bottom-left
  g[7][10] = '.';  // top-right <-> bottom-right
  std::string out;
  for (const auto& row : g) out += row + "\n";
  return out;
}

/// Serpentine corridor: `bends + 1` runs of `run` cells joined at alternating
/// ends, so the free cells form a single path of (bends+1)*run + bends cells.
/// The start cell (top-left) is marked 'S'.
inline std::string corridor_map(std::size_t run, std::size_t bends) {
  std::vector<std::string> g(2 * bends + 1, std::string(run, '#'));
  for (std::size_t k = 0; k <= bends; ++k) g[2 * k] = std::string(run, '.');
  for (std::size_t k = 0; k < bends; ++k) g[2 * k + 1][k % 2 == 0 ? run - 1 : 0] = '.';
  g[0][0] = 'S';
  std::string out;
  for (const auto& row : g) out += row + "\n";
  return out;
}

}  // namespace hilp

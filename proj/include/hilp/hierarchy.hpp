#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hilp/error.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"
#include "hilp/skills.hpp"

namespace hilp {

struct HighLevelTuple {
  State s = 0;
  std::size_t z = 0;     // codebook index
  double reward = 0.0;   // sum_{i<k} gamma^i r_{t+i}
  State next = 0;        // s_{t+k}
};

struct HighLevelData {
  std::vector<HighLevelTuple> tuples;
  std::size_t dropped_degenerate = 0;
};

/// One tuple per window (s_t .. s_{t+k}); the latent label is the projected
/// direction of phi(s_{t+k}) - phi(s_t). Windows with no displacement are dropped.
inline HighLevelData relabel_high_level(const Dataset& data, const Embedding& emb, const LatentCodebook& codebook,
                                        std::size_t k, const RewardFn& reward, double gamma) {
  if (k < 1) throw InvalidArgument("relabel_high_level: k must be >= 1");
  if (codebook.dim() != emb.dim()) throw InvalidArgument("relabel_high_level: codebook dimension mismatch");
  HighLevelData out;
  for (const auto& traj : data.trajectories) {
    if (traj.length() < k) continue;
    for (std::size_t t = 0; t + k <= traj.length(); ++t) {
      const State s = traj.states[t];
      const State end = traj.states[t + k];
      const Vec disp = difference(emb.phi(end), emb.phi(s));
      const double n = norm(disp);
      if (!(n > emb.norm_epsilon())) {
        ++out.dropped_degenerate;
        continue;
      }
      Vec unit(disp.size());
      for (std::size_t d = 0; d < disp.size(); ++d) unit[d] = disp[d] / n;
      double ret = 0.0, discount = 1.0;
      for (std::size_t i = 0; i < k; ++i) {
        ret += discount * reward(traj.states[t + i], traj.actions[t + i], traj.states[t + i + 1]);
        discount *= gamma;
      }
      out.tuples.push_back({s, codebook.project(unit), ret, end});
    }
  }
  return out;
}

/// pi^h(z | s): greedy over codebook indices observed at s in the relabeled data.
class HighLevelPolicy {
 public:
  HighLevelPolicy() = default;
  HighLevelPolicy(LatentCodebook codebook, std::size_t n_states, std::size_t k, double gamma, std::vector<double> q,
                  std::vector<bool> mask)
      : codebook_(std::move(codebook)), n_states_(n_states), k_(k), gamma_(gamma), q_(std::move(q)),
        mask_(std::move(mask)) {}

  const LatentCodebook& codebook() const noexcept { return codebook_; }
  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t k() const noexcept { return k_; }
  double gamma() const noexcept { return gamma_; }
  std::size_t size() const noexcept { return codebook_.size(); }

  double q(State s, std::size_t z) const { return q_[s * size() + z]; }
  bool allowed(State s, std::size_t z) const { return mask_[s * size() + z]; }
  std::span<const double> q_row(State s) const { return {q_.data() + s * size(), size()}; }

  std::optional<std::size_t> greedy(State s) const { return greedy_masked(q_row(s), mask_, s * size()); }

  bool operator==(const HighLevelPolicy&) const = default;

 private:
  LatentCodebook codebook_;
  std::size_t n_states_ = 0;
  std::size_t k_ = 1;
  double gamma_ = 0.99;
  std::vector<double> q_;
  std::vector<bool> mask_;
};

/// SMDP Q iteration: q(s,z) <- mean over tuples at (s,z) of R + gamma^k max_{z' observed at s'} q(s',z').
inline HighLevelPolicy train_high_level(std::span<const HighLevelTuple> tuples, std::size_t n_states,
                                        const LatentCodebook& codebook, double gamma, std::size_t k,
                                        double tol = 1e-8) {
  if (tuples.empty()) throw InvalidArgument("train_high_level: no tuples");
  if (k < 1) throw InvalidArgument("train_high_level: k must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("train_high_level: gamma must be in [0, 1)");
  const std::size_t m = codebook.size();
  const double gk = std::pow(gamma, static_cast<double>(k));
  std::vector<bool> mask(n_states * m, false);
  std::vector<double> count(n_states * m, 0.0);
  for (const auto& t : tuples) {
    if (t.s >= n_states || t.next >= n_states || t.z >= m) throw InvalidArgument("train_high_level: id out of range");
    mask[t.s * m + t.z] = true;
    count[t.s * m + t.z] += 1.0;
  }
  std::vector<double> q(n_states * m, 0.0), next(n_states * m), v(n_states, 0.0);
  for (std::size_t sweep = 0;; ++sweep) {
    for (State s = 0; s < n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t z = 0; z < m; ++z)
        if (mask[s * m + z]) best = std::max(best, q[s * m + z]);
      v[s] = std::isfinite(best) ? best : 0.0;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (const auto& t : tuples) next[t.s * m + t.z] += (t.reward + gk * v[t.next]) / count[t.s * m + t.z];
    double residual = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) residual = std::max(residual, std::abs(next[i] - q[i]));
    q.swap(next);
    if (residual <= tol) break;
    if (sweep > 10000000) throw Error("train_high_level: no convergence");
  }
  return HighLevelPolicy(codebook, n_states, k, gamma, std::move(q), std::move(mask));
}

struct HrlResult {
  double ret = 0.0;
  Trajectory trajectory;
  std::vector<std::size_t> decisions;  // step index of every high-level choice
  std::optional<std::string> failure;
};

/// Every k steps asks `choose(s)` for a latent (nullopt: no high-level action)
/// and runs the low-level skill with it until the next decision or the horizon.
template <typename Chooser>
HrlResult hierarchical_rollout(const Mdp& mdp, Chooser&& choose, const SkillPolicy& low, std::size_t k,
                               const RewardFn& reward, double gamma, State start, std::size_t horizon) {
  if (k < 1) throw InvalidArgument("hierarchical_rollout: k must be >= 1");
  HrlResult out;
  State s = start;
  out.trajectory.states.push_back(s);
  double discount = 1.0;
  std::optional<Vec> z;
  for (std::size_t t = 0; t < horizon; ++t) {
    if (t % k == 0) {
      std::optional<Vec> chosen = choose(s);
      if (!chosen) {
        out.failure = "no high-level action at state " + std::to_string(s);
        break;
      }
      z = std::move(chosen);
      out.decisions.push_back(t);
    }
    Action a;
    try {
      a = act(low, s, *z);
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

/// Rollout with the greedy high-level policy, discounting at the policy's gamma.
inline HrlResult hierarchical_rollout(const Mdp& mdp, const HighLevelPolicy& high, const SkillPolicy& low,
                                      const RewardFn& reward, State start, std::size_t horizon) {
  return hierarchical_rollout(
      mdp,
      [&](State s) -> std::optional<Vec> {
        const auto z = high.greedy(s);
        if (!z) return std::nullopt;
        return high.codebook().vector(*z);
      },
      low, high.k(), reward, high.gamma(), start, horizon);
}

inline void write_high_level(const HighLevelPolicy& p, std::ostream& out) {
  const auto& cb = p.codebook();
  out << "#hilp-highlevel v1 D=" << cb.dim() << " M=" << cb.size() << '\n';
  out << "#meta states=" << p.n_states() << " k=" << p.k() << " gamma=" << detail::format_double(p.gamma()) << '\n';
  for (std::size_t i = 0; i < cb.size(); ++i) {
    out << "c=" << i << ':';
    for (std::size_t d = 0; d < cb.dim(); ++d) out << (d ? "," : "") << detail::format_double(cb[i][d]);
    out << '\n';
  }
  for (State s = 0; s < p.n_states(); ++s)
    for (std::size_t z = 0; z < cb.size(); ++z)
      if (p.allowed(s, z)) out << "s=" << s << " z=" << z << " q=" << detail::format_double(p.q(s, z)) << '\n';
}

inline HighLevelPolicy read_high_level(std::istream& in) {
  std::string line;
  std::size_t lineno = 0, dim = 0, m = 0, ns = 0, k = 1;
  double gamma = 0.99;
  std::vector<double> cb, q;
  std::vector<bool> mask;
  bool header = false, meta = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("#hilp-highlevel v1", 0) != 0) throw ParseError(lineno, "missing '#hilp-highlevel v1' header");
      dim = detail::parse_count(detail::header_field(line, "D"), lineno, "D");
      m = detail::parse_count(detail::header_field(line, "M"), lineno, "M");
      cb.assign(dim * m, 0.0);
      header = true;
      continue;
    }
    if (line.rfind("#meta", 0) == 0) {
      ns = detail::parse_count(detail::header_field(line, "states"), lineno, "states");
      k = detail::parse_count(detail::header_field(line, "k"), lineno, "k");
      gamma = detail::parse_double(detail::header_field(line, "gamma"), lineno);
      q.assign(ns * m, 0.0);
      mask.assign(ns * m, false);
      meta = true;
      continue;
    }
    if (line.front() == '#') continue;
    if (line.rfind("c=", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) throw ParseError(lineno, "expected 'c=<i>:<values>'");
      const auto i = detail::parse_count(line.substr(2, colon - 2), lineno, "codebook index");
      const auto v = detail::parse_double_list(std::string_view(line).substr(colon + 1), lineno);
      if (i >= m || v.size() != dim) throw ParseError(lineno, "codebook entry out of range");
      std::copy(v.begin(), v.end(), cb.begin() + static_cast<std::ptrdiff_t>(i * dim));
      continue;
    }
    if (!meta) throw ParseError(lineno, "q line before #meta line");
    const auto s = detail::parse_count(detail::header_field(line, "s"), lineno, "s");
    const auto z = detail::parse_count(detail::header_field(line, "z"), lineno, "z");
    const auto val = detail::parse_double(detail::header_field(line, "q"), lineno);
    if (s >= ns || z >= m) throw ParseError(lineno, "q index out of range");
    q[s * m + z] = val;
    mask[s * m + z] = true;
  }
  if (!header || !meta) throw InvalidArgument("high-level policy file is incomplete");
  return HighLevelPolicy(LatentCodebook(dim, std::move(cb)), ns, k, gamma, std::move(q), std::move(mask));
}

inline void save_high_level(const HighLevelPolicy& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_high_level(p, out);
}

inline HighLevelPolicy load_high_level(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_high_level(in);
}

}  // namespace hilp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "hilp/dataset.hpp"
#include "hilp/error.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"

namespace hilp {

/// Finite set of unit directions standing in for the uniform prior over S^{D-1}.
class LatentCodebook {
 public:
  LatentCodebook() = default;
  LatentCodebook(std::size_t dim, std::vector<double> flat) : dim_(dim), data_(std::move(flat)) {
    if (dim_ == 0 || data_.size() % dim_ != 0 || data_.empty())
      throw InvalidArgument("codebook: bad dimensions");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ ? data_.size() / dim_ : 0; }
  std::span<const double> operator[](std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  Vec vector(std::size_t i) const { return {data_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
                                            data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_)}; }

  /// Entry with maximal inner product with z; lowest index on ties.
  std::size_t project(std::span<const double> z) const {
    std::size_t best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < size(); ++i) {
      const double d = dot((*this)[i], z);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return best;
  }

  bool operator==(const LatentCodebook&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// D = 1: {+1, -1}. D = 2: M evenly spaced angles from 0. D >= 3: M normalized
/// Gaussian draws with pairwise inner products <= 0.999.
inline LatentCodebook build_codebook(std::size_t dim, std::size_t m, std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("build_codebook: D must be >= 1");
  if (m < 2) throw InvalidArgument("build_codebook: M must be >= 2");
  if (dim == 1) return LatentCodebook(1, {1.0, -1.0});
  std::vector<double> flat(dim * m);
  if (dim == 2) {
    for (std::size_t i = 0; i < m; ++i) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(m);
      flat[2 * i] = std::cos(angle);
      flat[2 * i + 1] = std::sin(angle);
    }
    // Exact zeros at quarter turns.
    for (auto& v : flat)
      if (std::abs(v) < 1e-15) v = 0.0;
    return LatentCodebook(2, std::move(flat));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](std::size_t i) {
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        flat[i * dim + k] = gauss(rng);
        n2 += flat[i * dim + k] * flat[i * dim + k];
      }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t k = 0; k < dim; ++k) flat[i * dim + k] *= inv;
  };
  for (std::size_t i = 0; i < m; ++i) draw(i);
  constexpr double kMaxCosine = 0.999;
  for (std::size_t round = 0;; ++round) {
    bool clean = true;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const std::span<const double> a(flat.data() + i * dim, dim);
        const std::span<const double> b(flat.data() + j * dim, dim);
        if (dot(a, b) > kMaxCosine) {
          clean = false;
          draw(i);
          break;
        }
      }
    if (clean) break;
    if (round >= 1000) throw Error("build_codebook: cannot separate codebook vectors after 1000 resamples");
  }
  return LatentCodebook(dim, std::move(flat));
}

enum class RewardVariant { kDelta, kCentered };

inline std::string to_string(RewardVariant v) { return v == RewardVariant::kDelta ? "delta" : "centered"; }

inline RewardVariant parse_reward_variant(std::string_view s) {
  if (s == "delta") return RewardVariant::kDelta;
  if (s == "centered") return RewardVariant::kCentered;
  throw InvalidArgument("unknown reward variant '" + std::string(s) + "'");
}

/// delta: <phi(s') - phi(s), z>; centered: <phi(s) - mean, z>.
inline double intrinsic_reward(const Embedding& emb, const MeanEmbedding& mean, State s, State next,
                               std::span<const double> z, RewardVariant variant) {
  double acc = 0.0;
  const auto ps = emb.phi(s);
  if (variant == RewardVariant::kDelta) {
    const auto pn = emb.phi(next);
    for (std::size_t k = 0; k < z.size(); ++k) acc += (pn[k] - ps[k]) * z[k];
  } else {
    for (std::size_t k = 0; k < z.size(); ++k) acc += (ps[k] - mean.mean[k]) * z[k];
  }
  return acc;
}

/// Deterministic transition (s, a) -> next with its reward.
struct Transition {
  State s = 0;
  Action a = 0;
  State next = 0;
  double reward = 0.0;
};

/// Unique observed (s, a) -> s' pairs of a dataset, sorted by (s, a).
inline std::vector<Transition> observed_transitions(const Dataset& data) {
  std::vector<Transition> out;
  for (const auto& traj : data.trajectories)
    for (std::size_t t = 0; t < traj.actions.size(); ++t)
      out.push_back({traj.states[t], traj.actions[t], traj.states[t + 1], 0.0});
  std::sort(out.begin(), out.end(), [](const Transition& x, const Transition& y) {
    return std::tie(x.s, x.a) < std::tie(y.s, y.a);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Transition& x, const Transition& y) { return x.s == y.s && x.a == y.a; }),
            out.end());
  return out;
}

struct ConstrainedQ {
  std::vector<double> q;     // (s, a) row-major; 0 where masked out
  std::vector<bool> mask;    // (s, a) observed
  std::size_t sweeps = 0;
  double residual = 0.0;
};

/// Dataset-constrained Q iteration: q(s,a) <- r + gamma * max_{a' observed at s'} q(s',a').
/// States with no observed action contribute a terminal value of 0.
inline ConstrainedQ constrained_q_iteration(std::size_t n_states, std::size_t n_actions,
                                            std::span<const Transition> transitions, double gamma,
                                            double tol = 1e-8, std::size_t max_sweeps = 1000000) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("constrained_q_iteration: gamma must be in [0, 1)");
  ConstrainedQ out;
  out.mask.assign(n_states * n_actions, false);
  for (const auto& t : transitions) out.mask[t.s * n_actions + t.a] = true;
  std::vector<double> q(n_states * n_actions, 0.0);
  std::vector<double> v(n_states, 0.0);
  auto refresh_values = [&] {
    for (State s = 0; s < n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (Action a = 0; a < n_actions; ++a)
        if (out.mask[s * n_actions + a]) best = std::max(best, q[s * n_actions + a]);
      v[s] = std::isfinite(best) ? best : 0.0;
    }
  };
  for (;;) {
    refresh_values();
    double residual = 0.0;
    std::vector<double> next = q;
    for (const auto& t : transitions) {
      const double backup = t.reward + gamma * v[t.next];
      residual = std::max(residual, std::abs(backup - q[t.s * n_actions + t.a]));
      next[t.s * n_actions + t.a] = backup;
    }
    q.swap(next);
    ++out.sweeps;
    out.residual = residual;
    if (residual <= tol) break;
    if (out.sweeps >= max_sweeps) throw Error("constrained_q_iteration: no convergence");
  }
  out.q = std::move(q);
  return out;
}

/// Greedy action among masked actions of row `q`, ties within a relative 1e-7
/// broken by lowest index. Returns nullopt when no action is allowed.
inline std::optional<Action> greedy_masked(std::span<const double> q, const std::vector<bool>& mask,
                                           std::size_t offset) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < q.size(); ++a)
    if (mask[offset + a]) best = std::max(best, q[a]);
  if (!std::isfinite(best)) return std::nullopt;
  const double tol = 1e-7 * std::max(1.0, std::abs(best));
  for (std::size_t a = 0; a < q.size(); ++a)
    if (mask[offset + a] && q[a] >= best - tol) return a;
  return std::nullopt;
}

struct SkillConfig {
  double gamma = 0.99;
  RewardVariant variant = RewardVariant::kDelta;
  double tol = 1e-8;
  std::size_t jobs = 1;
};

/// pi(a | s, z): one dataset-constrained Q table per codebook direction.
class SkillPolicy {
 public:
  SkillPolicy() = default;
  SkillPolicy(LatentCodebook codebook, std::size_t n_states, std::size_t n_actions, std::vector<double> q,
              std::vector<bool> mask, double gamma, RewardVariant variant)
      : codebook_(std::move(codebook)),
        n_states_(n_states),
        n_actions_(n_actions),
        q_(std::move(q)),
        mask_(std::move(mask)),
        gamma_(gamma),
        variant_(variant) {}

  const LatentCodebook& codebook() const noexcept { return codebook_; }
  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_actions() const noexcept { return n_actions_; }
  double gamma() const noexcept { return gamma_; }
  RewardVariant variant() const noexcept { return variant_; }
  const std::vector<bool>& mask() const noexcept { return mask_; }

  double q(std::size_t z, State s, Action a) const { return q_[(z * n_states_ + s) * n_actions_ + a]; }
  std::span<const double> q_row(std::size_t z, State s) const {
    return {q_.data() + (z * n_states_ + s) * n_actions_, n_actions_};
  }
  bool allowed(State s, Action a) const { return mask_[s * n_actions_ + a]; }
  bool has_action(State s) const {
    for (Action a = 0; a < n_actions_; ++a)
      if (allowed(s, a)) return true;
    return false;
  }

  /// Greedy action of codebook entry z_index at s.
  Action act_index(std::size_t z_index, State s) const {
    const auto a = greedy_masked(q_row(z_index, s), mask_, s * n_actions_);
    if (!a) throw NoActionError(s, "no dataset-observed action");
    return *a;
  }

  bool operator==(const SkillPolicy&) const = default;

 private:
  LatentCodebook codebook_;
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<double> q_;
  std::vector<bool> mask_;
  double gamma_ = 0.99;
  RewardVariant variant_ = RewardVariant::kDelta;
};

/// Calls fn(i) for i in [0, n) on up to `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> workers;
  const std::size_t nthreads = std::min(jobs, n);
  for (std::size_t w = 0; w < nthreads; ++w)
    workers.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += nthreads) fn(i);
    }));
  for (auto& f : workers) f.get();
}

/// Trains one constrained Q table per codebook entry on the intrinsic reward.
inline SkillPolicy train_skills(const Dataset& data, std::size_t n_actions, const Embedding& emb,
                                const MeanEmbedding& mean, const LatentCodebook& codebook,
                                const SkillConfig& cfg = {}) {
  if (codebook.dim() != emb.dim()) throw InvalidArgument("train_skills: codebook and embedding dimensions differ");
  const std::size_t ns = emb.n_states();
  const auto base = observed_transitions(data);
  if (base.empty()) throw InvalidDataset("train_skills: dataset has no transitions");
  for (const auto& t : base)
    if (t.s >= ns || t.next >= ns || t.a >= n_actions) throw InvalidDataset("train_skills: id out of range");
  const std::size_t m = codebook.size();
  std::vector<double> q(m * ns * n_actions);
  std::vector<bool> mask;
  std::vector<ConstrainedQ> solved(m);
  parallel_for(m, cfg.jobs, [&](std::size_t i) {
    auto trans = base;
    for (auto& t : trans) t.reward = intrinsic_reward(emb, mean, t.s, t.next, codebook[i], cfg.variant);
    solved[i] = constrained_q_iteration(ns, n_actions, trans, cfg.gamma, cfg.tol);
  });
  for (std::size_t i = 0; i < m; ++i)
    std::copy(solved[i].q.begin(), solved[i].q.end(), q.begin() + static_cast<std::ptrdiff_t>(i * ns * n_actions));
  mask = std::move(solved.front().mask);
  return SkillPolicy(codebook, ns, n_actions, std::move(q), std::move(mask), cfg.gamma, cfg.variant);
}

/// Projects z onto the codebook and returns that entry's greedy action.
inline Action act(const SkillPolicy& policy, State s, std::span<const double> z) {
  if (squared_norm(z) == 0.0) throw InvalidArgument("act: zero latent vector");
  return policy.act_index(policy.codebook().project(z), s);
}

struct SkillRollout {
  Trajectory trajectory;
  double displacement = 0.0;          // <phi(end) - phi(start), z>
  std::vector<double> step_rewards;   // delta intrinsic rewards along the way
  std::optional<std::string> failure; // set when a state without observed actions was entered
};

inline SkillRollout skill_rollout(const Mdp& mdp, const SkillPolicy& policy, const Embedding& emb,
                                  std::span<const double> z, State start, std::size_t horizon) {
  SkillRollout out;
  out.trajectory.states.push_back(start);
  State s = start;
  const MeanEmbedding unused{Vec(emb.dim(), 0.0)};
  for (std::size_t t = 0; t < horizon; ++t) {
    Action a;
    try {
      a = act(policy, s, z);
    } catch (const NoActionError& e) {
      out.failure = e.what();
      break;
    }
    const State next = mdp.step(s, a);
    out.step_rewards.push_back(intrinsic_reward(emb, unused, s, next, z, RewardVariant::kDelta));
    out.trajectory.actions.push_back(a);
    out.trajectory.states.push_back(next);
    s = next;
  }
  out.displacement = dot(difference(emb.phi(s), emb.phi(start)), z);
  return out;
}

inline void write_skill_policy(const SkillPolicy& p, std::ostream& out) {
  const auto& cb = p.codebook();
  out << "#hilp-skills v1 D=" << cb.dim() << " M=" << cb.size() << '\n';
  out << "#meta states=" << p.n_states() << " actions=" << p.n_actions()
      << " gamma=" << detail::format_double(p.gamma()) << " variant=" << to_string(p.variant()) << '\n';
  for (std::size_t i = 0; i < cb.size(); ++i) {
    out << "c=" << i << ':';
    for (std::size_t k = 0; k < cb.dim(); ++k) out << (k ? "," : "") << detail::format_double(cb[i][k]);
    out << '\n';
  }
  for (std::size_t i = 0; i < cb.size(); ++i)
    for (State s = 0; s < p.n_states(); ++s)
      for (Action a = 0; a < p.n_actions(); ++a)
        if (p.allowed(s, a))
          out << "z=" << i << " s=" << s << " a=" << a << " q=" << detail::format_double(p.q(i, s, a)) << '\n';
}

inline SkillPolicy read_skill_policy(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0, m = 0, ns = 0, na = 0;
  double gamma = 0.99;
  RewardVariant variant = RewardVariant::kDelta;
  std::vector<double> cb;
  std::vector<double> q;
  std::vector<bool> mask;
  bool header = false, meta = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("#hilp-skills v1", 0) != 0) throw ParseError(lineno, "missing '#hilp-skills v1' header");
      dim = detail::parse_count(detail::header_field(line, "D"), lineno, "D");
      m = detail::parse_count(detail::header_field(line, "M"), lineno, "M");
      cb.assign(dim * m, 0.0);
      header = true;
      continue;
    }
    if (line.rfind("#meta", 0) == 0) {
      ns = detail::parse_count(detail::header_field(line, "states"), lineno, "states");
      na = detail::parse_count(detail::header_field(line, "actions"), lineno, "actions");
      gamma = detail::parse_double(detail::header_field(line, "gamma"), lineno);
      variant = parse_reward_variant(detail::header_field(line, "variant"));
      q.assign(m * ns * na, 0.0);
      mask.assign(ns * na, false);
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
    const auto zi = detail::parse_count(detail::header_field(line, "z"), lineno, "z");
    const auto s = detail::parse_count(detail::header_field(line, "s"), lineno, "s");
    const auto a = detail::parse_count(detail::header_field(line, "a"), lineno, "a");
    const auto val = detail::parse_double(detail::header_field(line, "q"), lineno);
    if (zi >= m || s >= ns || a >= na) throw ParseError(lineno, "q index out of range");
    q[(zi * ns + s) * na + a] = val;
    mask[s * na + a] = true;
  }
  if (!header || !meta) throw InvalidArgument("skill policy file is incomplete");
  return SkillPolicy(LatentCodebook(dim, std::move(cb)), ns, na, std::move(q), std::move(mask), gamma, variant);
}

inline void save_skill_policy(const SkillPolicy& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_skill_policy(p, out);
}

inline SkillPolicy load_skill_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_skill_policy(in);
}

}  // namespace hilp

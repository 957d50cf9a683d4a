#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "hilp/dataset.hpp"
#include "hilp/error.hpp"
#include "hilp/linalg.hpp"
#include "hilp/mdp.hpp"
#include "hilp/oracle.hpp"

namespace hilp {

/// Tabular state embedding phi: S -> R^D with a target copy used for bootstrapping.
class Embedding {
 public:
  static constexpr double kDefaultNormEpsilon = 1e-6;

  Embedding() = default;
  Embedding(std::size_t n_states, std::size_t dim, double norm_epsilon = kDefaultNormEpsilon)
      : n_states_(n_states),
        dim_(dim),
        norm_epsilon_(norm_epsilon),
        phi_(n_states * dim, 0.0),
        target_(n_states * dim, 0.0) {}

  /// Builds an embedding from explicit rows; the target copy equals phi.
  static Embedding from_rows(const std::vector<Vec>& rows, double norm_epsilon = kDefaultNormEpsilon) {
    if (rows.empty()) throw InvalidArgument("embedding: no rows");
    Embedding e(rows.size(), rows.front().size(), norm_epsilon);
    for (State s = 0; s < rows.size(); ++s) {
      if (rows[s].size() != e.dim_) throw InvalidArgument("embedding: ragged rows");
      std::copy(rows[s].begin(), rows[s].end(), e.phi_.begin() + static_cast<std::ptrdiff_t>(s * e.dim_));
    }
    e.sync_target();
    return e;
  }

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t dim() const noexcept { return dim_; }
  double norm_epsilon() const noexcept { return norm_epsilon_; }

  std::span<const double> phi(State s) const { return {phi_.data() + s * dim_, dim_}; }
  std::span<double> phi(State s) { return {phi_.data() + s * dim_, dim_}; }
  std::span<const double> target(State s) const { return {target_.data() + s * dim_, dim_}; }
  std::span<double> target(State s) { return {target_.data() + s * dim_, dim_}; }

  const std::vector<double>& phi_table() const noexcept { return phi_; }
  const std::vector<double>& target_table() const noexcept { return target_; }

  void sync_target() { target_ = phi_; }

  /// Polyak averaging: target <- (1 - rate) * target + rate * phi.
  void soft_update(double rate) {
    for (std::size_t i = 0; i < phi_.size(); ++i) target_[i] = (1.0 - rate) * target_[i] + rate * phi_[i];
  }

  Embedding scaled(double c) const {
    Embedding e = *this;
    for (auto& v : e.phi_) v *= c;
    for (auto& v : e.target_) v *= c;
    return e;
  }

  bool all_finite() const {
    for (double v : phi_)
      if (!std::isfinite(v)) return false;
    for (double v : target_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Embedding&) const = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t dim_ = 0;
  double norm_epsilon_ = kDefaultNormEpsilon;
  std::vector<double> phi_;
  std::vector<double> target_;
};

struct ReprConfig {
  std::size_t dim = 2;
  double gamma = 1.0;
  double expectile = 0.9;
  double learning_rate = 0.05;
  double target_rate = 0.005;
  double geometric_p = 0.0;  // <= 0 means "use 1 - gamma"
  double future_goal_prob = 0.625;
  std::size_t steps = 200000;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double init_scale = 0.1;

  double effective_geometric_p() const { return geometric_p > 0.0 ? geometric_p : 1.0 - gamma; }

  /// Throws ValidationError naming the first out-of-range field.
  void validate() const {
    if (dim < 1) throw ValidationError("dim", "must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma", "must be in (0, 1]");
    if (!(expectile > 0.5 && expectile < 1.0)) throw ValidationError("expectile", "must be in (0.5, 1)");
    if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate", "must be >= 0");
    if (!(target_rate >= 0.0 && target_rate <= 1.0)) throw ValidationError("target_rate", "must be in [0, 1]");
    const double p = effective_geometric_p();
    if (!(p > 0.0 && p < 1.0))
      throw ValidationError("geometric_p", "must be in (0, 1); set it explicitly when gamma = 1");
    if (!(future_goal_prob >= 0.0 && future_goal_prob <= 1.0))
      throw ValidationError("future_goal_prob", "must be in [0, 1]");
    if (batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  }
};

/// Occurrence-weighted mean of phi over the dataset (the "center" of the embedding).
struct MeanEmbedding {
  Vec mean;
};

/// |tau - 1(x < 0)| * x^2
inline double expectile_loss(double x, double tau) {
  const double w = x < 0.0 ? 1.0 - tau : tau;
  return w * x * x;
}

/// Smoothed latent distance sqrt(|phi(s) - phi(g)|^2 + eps^2).
inline double latent_distance(const Embedding& emb, State s, State g, bool use_target = false) {
  const auto a = use_target ? emb.target(s) : emb.phi(s);
  const auto b = use_target ? emb.target(g) : emb.phi(g);
  const double eps = emb.norm_epsilon();
  return std::sqrt(squared_distance(a, b) + eps * eps);
}

/// Unsmoothed Euclidean |phi(s) - phi(g)|.
inline double exact_latent_distance(const Embedding& emb, State s, State g) {
  return distance(emb.phi(s), emb.phi(g));
}

struct RelabeledTuple {
  State s = 0;
  State next = 0;
  State goal = 0;
  bool future_branch = false;  // which branch produced the accepted goal
  std::size_t rejections = 0;

  bool operator==(const RelabeledTuple&) const = default;
};

/// Flat index over a dataset for uniform transition / state sampling.
class RelabelSampler {
 public:
  explicit RelabelSampler(const Dataset& data) : data_(&data) {
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
      const auto& traj = data.trajectories[i];
      if (traj.states.size() < 2) throw InvalidDataset("relabeling needs trajectories of length >= 2");
      for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) transitions_.emplace_back(i, t);
      for (State s : traj.states) {
        occurrences_.push_back(s);
        if (s >= distinct_.size()) distinct_.resize(s + 1, false);
        distinct_[s] = true;
      }
    }
    if (transitions_.empty()) throw InvalidDataset("dataset has no transitions");
    for (State s = 0; s < distinct_.size(); ++s)
      if (distinct_[s]) distinct_states_.push_back(s);
  }

  /// Draws (s, s', g): g is a geometric-offset future state of the same trajectory
  /// with probability future_goal_prob, otherwise a uniform dataset state. g = s is
  /// rejected and redrawn up to 100 times, then drawn uniformly from states != s.
  template <typename Rng>
  RelabeledTuple sample(const ReprConfig& cfg, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick_transition(0, transitions_.size() - 1);
    const auto [traj_index, t] = transitions_[pick_transition(rng)];
    const auto& states = data_->trajectories[traj_index].states;
    RelabeledTuple out;
    out.s = states[t];
    out.next = states[t + 1];

    std::bernoulli_distribution future(cfg.future_goal_prob);
    std::geometric_distribution<std::size_t> offset(cfg.effective_geometric_p());
    std::uniform_int_distribution<std::size_t> pick_state(0, occurrences_.size() - 1);
    const std::size_t last = states.size() - 1;
    for (std::size_t attempt = 0; attempt < kMaxRejections; ++attempt) {
      const bool use_future = future(rng);
      State g;
      if (use_future) {
        const std::size_t k = 1 + offset(rng);
        g = states[std::min(last, t + k)];
      } else {
        g = occurrences_[pick_state(rng)];
      }
      if (g != out.s) {
        out.goal = g;
        out.future_branch = use_future;
        return out;
      }
      ++out.rejections;
    }
    std::vector<State> others;
    for (State s : distinct_states_)
      if (s != out.s) others.push_back(s);
    if (others.empty()) throw InvalidDataset("dataset visits a single state; no goal differs from s");
    std::uniform_int_distribution<std::size_t> pick_other(0, others.size() - 1);
    out.goal = others[pick_other(rng)];
    out.future_branch = false;
    return out;
  }

  const std::vector<State>& distinct_states() const noexcept { return distinct_states_; }

 private:
  static constexpr std::size_t kMaxRejections = 100;

  const Dataset* data_;
  std::vector<std::pair<std::size_t, std::size_t>> transitions_;
  std::vector<State> occurrences_;
  std::vector<bool> distinct_;
  std::vector<State> distinct_states_;
};

template <typename Rng>
RelabeledTuple sample_relabeled_tuple(const Dataset& data, const ReprConfig& cfg, Rng& rng) {
  return RelabelSampler(data).sample(cfg, rng);
}

/// Batch expectile TD loss on phi with phi-target held fixed. Bootstrap is cut
/// (episode terminates) when s' = g.
inline double batch_td_loss(const Embedding& emb, std::span<const RelabeledTuple> batch, const ReprConfig& cfg) {
  double total = 0.0;
  for (const auto& b : batch) {
    const double reward = b.s != b.goal ? -1.0 : 0.0;
    const double bootstrap = b.next == b.goal ? 0.0 : latent_distance(emb, b.next, b.goal, true);
    const double x = reward - cfg.gamma * bootstrap + latent_distance(emb, b.s, b.goal);
    total += expectile_loss(x, cfg.expectile);
  }
  return total / static_cast<double>(batch.size());
}

/// Analytic gradient of batch_td_loss with respect to the phi table (row-major).
inline std::vector<double> batch_td_gradient(const Embedding& emb, std::span<const RelabeledTuple> batch,
                                             const ReprConfig& cfg) {
  const std::size_t dim = emb.dim();
  std::vector<double> grad(emb.n_states() * dim, 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& b : batch) {
    const double reward = b.s != b.goal ? -1.0 : 0.0;
    const double bootstrap = b.next == b.goal ? 0.0 : latent_distance(emb, b.next, b.goal, true);
    const double d = latent_distance(emb, b.s, b.goal);
    const double x = reward - cfg.gamma * bootstrap + d;
    const double w = x < 0.0 ? 1.0 - cfg.expectile : cfg.expectile;
    // d/dphi(s) of d is (phi(s) - phi(g)) / d; phi(g) gets the negation.
    const double coeff = 2.0 * w * x * inv_b / d;
    if (b.s == b.goal) continue;
    const auto ps = emb.phi(b.s);
    const auto pg = emb.phi(b.goal);
    for (std::size_t k = 0; k < dim; ++k) {
      const double gk = coeff * (ps[k] - pg[k]);
      grad[b.s * dim + k] += gk;
      grad[b.goal * dim + k] -= gk;
    }
  }
  return grad;
}

/// One SGD step on phi followed by the Polyak target update. Returns the batch
/// loss evaluated before the step.
inline double td_step(Embedding& emb, std::span<const RelabeledTuple> batch, const ReprConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("td_step: empty batch");
  const double loss = batch_td_loss(emb, batch, cfg);
  const auto grad = batch_td_gradient(emb, batch, cfg);
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw Error("td_step: non-finite gradient at state " + std::to_string(i / emb.dim()));
  if (cfg.learning_rate != 0.0) {
    const std::size_t dim = emb.dim();
    for (State s = 0; s < emb.n_states(); ++s) {
      auto row = emb.phi(s);
      for (std::size_t k = 0; k < dim; ++k) row[k] -= cfg.learning_rate * grad[s * dim + k];
    }
  }
  emb.soft_update(cfg.target_rate);
  return loss;
}

struct ReprTrainLog {
  std::vector<std::pair<std::size_t, double>> checkpoints;  // (step, mean loss over the preceding window)
  std::vector<double> losses;                               // per-step batch loss

  void write_csv(std::ostream& out) const {
    out << "step,loss\n";
    for (const auto& [step, loss] : checkpoints) out << step << ',' << loss << '\n';
  }
};

/// Uniform [-scale, scale]^D initialization from the config seed.
inline Embedding initial_embedding(std::size_t n_states, const ReprConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(-cfg.init_scale, cfg.init_scale);
  Embedding emb(n_states, cfg.dim);
  for (State s = 0; s < n_states; ++s)
    for (auto& v : emb.phi(s)) v = init(rng);
  emb.sync_target();
  return emb;
}

/// Runs cfg.steps td_steps on relabeled batches. `on_step(step, emb)` is called
/// after every step when provided.
inline std::pair<Embedding, ReprTrainLog> train_repr(
    const Dataset& data, std::size_t n_states, const ReprConfig& cfg,
    const std::function<void(std::size_t, const Embedding&)>& on_step = {}) {
  cfg.validate();
  for (const auto& traj : data.trajectories)
    for (State s : traj.states)
      if (s >= n_states) throw InvalidDataset("dataset state id out of range");
  RelabelSampler sampler(data);
  Embedding emb = initial_embedding(n_states, cfg);
  // Sampling stream, independent of the initialization stream.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ReprTrainLog log;
  log.losses.reserve(cfg.steps);
  std::vector<RelabeledTuple> batch(cfg.batch_size);
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& b : batch) b = sampler.sample(cfg, rng);
    const double loss = td_step(emb, batch, cfg);
    log.losses.push_back(loss);
    window += loss;
    ++window_n;
    if (step % 1000 == 0 || step == cfg.steps) {
      log.checkpoints.emplace_back(step, window / static_cast<double>(window_n));
      window = 0.0;
      window_n = 0;
    }
    if (on_step) on_step(step, emb);
  }
  return {std::move(emb), std::move(log)};
}

inline std::pair<Embedding, ReprTrainLog> train_repr(const Dataset& data, const Mdp& mdp, const ReprConfig& cfg) {
  return train_repr(data, mdp.n_states(), cfg);
}

struct EmbeddingErrorReport {
  double eps_e = 0.0;         // max |target - |phi(s) - phi(g)|| over included pairs
  double mean_error = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;   // unreachable pairs
  std::vector<double> per_pair;  // row-major (s, g); NaN when excluded
};

/// Compares the unsmoothed latent distance with discounted_distance(d*, gamma).
inline EmbeddingErrorReport embedding_error(const Embedding& emb, const DistanceMatrix& dist, double gamma = 1.0) {
  const std::size_t n = emb.n_states();
  if (dist.size() != n) throw InvalidArgument("embedding_error: state count mismatch");
  EmbeddingErrorReport rep;
  rep.per_pair.assign(n * n, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (State s = 0; s < n; ++s)
    for (State g = 0; g < n; ++g) {
      if (!dist.reachable(s, g)) {
        ++rep.excluded;
        continue;
      }
      const double err = std::abs(discounted_distance(dist(s, g), gamma) - exact_latent_distance(emb, s, g));
      rep.per_pair[s * n + g] = err;
      rep.eps_e = std::max(rep.eps_e, err);
      sum += err;
      ++rep.included;
    }
  rep.mean_error = rep.included ? sum / static_cast<double>(rep.included) : 0.0;
  return rep;
}

inline MeanEmbedding mean_embedding(const Embedding& emb, const Dataset& data) {
  MeanEmbedding out{Vec(emb.dim(), 0.0)};
  std::size_t count = 0;
  for (const auto& traj : data.trajectories)
    for (State s : traj.states) {
      const auto row = emb.phi(s);
      for (std::size_t k = 0; k < emb.dim(); ++k) out.mean[k] += row[k];
      ++count;
    }
  if (count == 0) throw InvalidDataset("mean_embedding: empty dataset");
  for (auto& v : out.mean) v /= static_cast<double>(count);
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "invalid number '" + std::string(tok) + "'");
  return v;
}

inline std::vector<double> parse_double_list(std::string_view text, std::size_t line) {
  std::vector<double> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = text.find(',', pos);
    out.push_back(parse_double(text.substr(pos, comma == std::string_view::npos ? comma : comma - pos), line));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::size_t parse_count(const std::string& tok, std::size_t line, const char* what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, std::string("invalid ") + what + " '" + tok + "'");
  return v;
}

}  // namespace detail

/// Writes phi only; shortest round-trip float formatting.
inline void write_embedding(const Embedding& emb, std::ostream& out) {
  out << "#hilp-embedding v1 D=" << emb.dim() << " states=" << emb.n_states() << '\n';
  for (State s = 0; s < emb.n_states(); ++s) {
    out << s << ':';
    const auto row = emb.phi(s);
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << detail::format_double(row[k]);
    out << '\n';
  }
}

/// Reads phi; the target copy is set equal to phi.
inline Embedding read_embedding(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  Embedding emb;
  bool header = false;
  std::vector<bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("#hilp-embedding v1", 0) != 0) throw ParseError(lineno, "missing '#hilp-embedding v1' header");
      const auto dim = detail::parse_count(detail::header_field(line, "D"), lineno, "D");
      const auto n = detail::parse_count(detail::header_field(line, "states"), lineno, "states");
      if (dim == 0 || n == 0) throw ParseError(lineno, "D and states must be positive");
      emb = Embedding(n, dim);
      seen.assign(n, false);
      header = true;
      continue;
    }
    if (line.front() == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError(lineno, "expected '<id>:<values>'");
    const auto id = detail::parse_count(line.substr(0, colon), lineno, "state id");
    if (id >= emb.n_states()) throw ParseError(lineno, "state id out of range");
    const auto values = detail::parse_double_list(std::string_view(line).substr(colon + 1), lineno);
    if (values.size() != emb.dim()) throw ParseError(lineno, "expected " + std::to_string(emb.dim()) + " values");
    std::copy(values.begin(), values.end(), emb.phi(id).begin());
    seen[id] = true;
  }
  if (!header) throw InvalidArgument("embedding file is empty");
  for (State s = 0; s < seen.size(); ++s)
    if (!seen[s]) throw InvalidArgument("embedding file is missing state " + std::to_string(s));
  emb.sync_target();
  return emb;
}

inline void save_embedding(const Embedding& emb, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_embedding(emb, out);
}

inline Embedding load_embedding(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_embedding(in);
}

}  // namespace hilp

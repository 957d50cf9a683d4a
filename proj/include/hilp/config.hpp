#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hilp/error.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/mdp.hpp"
#include "hilp/skills.hpp"

namespace hilp {

/// Sectioned key = value text. Keys are addressed as "section.key".
class RawConfig {
 public:
  static RawConfig parse(std::istream& in) {
    RawConfig cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) throw ParseError(lineno, "malformed section header");
        section = std::string(trim(text.substr(1, text.size() - 2)));
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string_view::npos) throw ParseError(lineno, "expected 'key = value'");
      if (section.empty()) throw ParseError(lineno, "key outside of a section");
      const std::string key = section + "." + std::string(trim(text.substr(0, eq)));
      if (cfg.values_.count(key)) throw ParseError(lineno, "duplicate key '" + key + "'");
      cfg.values_[key] = std::string(trim(text.substr(eq + 1)));
    }
    return cfg;
  }

  static RawConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static RawConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::optional<std::string> take(const std::string& key) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  /// Throws ValidationError for the first key nobody asked for.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ValidationError(k, "unknown key");
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

struct EnvSpec {
  std::string kind = "chain";  // chain | grid | fourrooms | corridor
  std::size_t length = 16;
  std::size_t rows = 8;
  std::size_t cols = 8;
  std::size_t run = 12;
  std::size_t bends = 4;
  std::string map_file;  // grid only; overrides rows/cols
};

struct DatasetSpec {
  std::string behavior = "uniform-random";
  double epsilon = 0.3;
  std::optional<State> goal;
  std::size_t trajectories = 50;
  std::size_t horizon = 100;
};

struct EvalSpec {
  std::vector<std::string> protocols{"gcrl"};  // gcrl | zeroshot | hrl
  double budget = 2.0;                          // gcrl step budget as a multiple of d*
  std::vector<std::size_t> recursions{0};
  std::size_t top_k = 1;
  std::size_t n_candidates = 50000;
  std::size_t pair_stride = 1;
  std::string goal = "end";  // end | <state id>
  double task_gamma = 0.99;
  std::size_t horizon = 200;
  double ridge_lambda = 1e-6;
  std::size_t n_samples = 0;
  std::size_t k = 10;
};

struct TheorySpec {
  std::string embedding = "trained";  // trained | exact
  std::size_t perturbations = 20;
  double perturb_scale = 0.3;
};

struct AblateSpec {
  std::string axis;  // latent_dim | recursions
  std::vector<std::size_t> values;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string base_dir;  // directory of the config file, for relative paths
  EnvSpec env;
  DatasetSpec dataset;
  ReprConfig repr;
  SkillConfig skills;
  std::size_t codebook_size = 64;
  EvalSpec eval;
  TheorySpec theory;
  AblateSpec ablate;
  std::vector<std::uint64_t> seeds{0};
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ValidationError(key, "invalid number '" + text + "'");
  return value;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    tok.erase(0, tok.find_first_not_of(' '));
    tok.erase(tok.find_last_not_of(' ') + 1);
    if (!tok.empty()) out.push_back(parse_number<T>(key, tok));
    pos = comma + 1;
  }
  return out;
}

inline std::vector<std::string> parse_word_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(' '));
    tok.erase(tok.find_last_not_of(' ') + 1);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

template <typename T>
void read_into(RawConfig& raw, const std::string& key, T& field) {
  if (auto v = raw.take(key)) field = parse_number<T>(key, *v);
}

inline void read_into(RawConfig& raw, const std::string& key, std::string& field) {
  if (auto v = raw.take(key)) field = *v;
}

}  // namespace detail

/// Builds and validates an ExperimentConfig; every problem raises ValidationError
/// naming the offending "section.key".
inline ExperimentConfig parse_experiment(RawConfig raw, std::string base_dir = {}) {
  using detail::read_into;
  ExperimentConfig c;
  c.base_dir = std::move(base_dir);
  read_into(raw, "run.name", c.name);
  if (auto v = raw.take("run.seeds")) c.seeds = detail::parse_number_list<std::uint64_t>("run.seeds", *v);
  if (c.seeds.empty()) throw ValidationError("run.seeds", "at least one seed is required");

  read_into(raw, "env.kind", c.env.kind);
  read_into(raw, "env.length", c.env.length);
  read_into(raw, "env.rows", c.env.rows);
  read_into(raw, "env.cols", c.env.cols);
  read_into(raw, "env.run", c.env.run);
  read_into(raw, "env.bends", c.env.bends);
  read_into(raw, "env.map_file", c.env.map_file);
  if (c.env.kind != "chain" && c.env.kind != "grid" && c.env.kind != "fourrooms" && c.env.kind != "corridor")
    throw ValidationError("env.kind", "expected chain, grid, fourrooms or corridor");
  if (c.env.kind == "chain" && c.env.length < 2) throw ValidationError("env.length", "must be >= 2");

  read_into(raw, "dataset.behavior", c.dataset.behavior);
  read_into(raw, "dataset.epsilon", c.dataset.epsilon);
  if (auto v = raw.take("dataset.goal")) c.dataset.goal = detail::parse_number<State>("dataset.goal", *v);
  read_into(raw, "dataset.trajectories", c.dataset.trajectories);
  read_into(raw, "dataset.horizon", c.dataset.horizon);
  try {
    (void)parse_behavior(c.dataset.behavior);
  } catch (const InvalidArgument& e) {
    throw ValidationError("dataset.behavior", e.what());
  }
  if (!(c.dataset.epsilon >= 0.0 && c.dataset.epsilon <= 1.0)) throw ValidationError("dataset.epsilon", "must be in [0, 1]");
  if (c.dataset.trajectories < 1) throw ValidationError("dataset.trajectories", "must be >= 1");
  if (c.dataset.horizon < 1) throw ValidationError("dataset.horizon", "must be >= 1");

  read_into(raw, "repr.dim", c.repr.dim);
  read_into(raw, "repr.gamma", c.repr.gamma);
  read_into(raw, "repr.expectile", c.repr.expectile);
  read_into(raw, "repr.learning_rate", c.repr.learning_rate);
  read_into(raw, "repr.target_rate", c.repr.target_rate);
  read_into(raw, "repr.geometric_p", c.repr.geometric_p);
  read_into(raw, "repr.future_goal_prob", c.repr.future_goal_prob);
  read_into(raw, "repr.steps", c.repr.steps);
  read_into(raw, "repr.batch_size", c.repr.batch_size);
  read_into(raw, "repr.init_scale", c.repr.init_scale);
  try {
    c.repr.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("repr." + e.field(), e.reason());
  }

  read_into(raw, "skills.gamma", c.skills.gamma);
  read_into(raw, "skills.codebook_size", c.codebook_size);
  if (auto v = raw.take("skills.variant")) {
    try {
      c.skills.variant = parse_reward_variant(*v);
    } catch (const Error& e) {
      throw ValidationError("skills.variant", e.what());
    }
  }
  if (!(c.skills.gamma > 0.0 && c.skills.gamma < 1.0)) throw ValidationError("skills.gamma", "must be in (0, 1)");
  if (c.codebook_size < 2) throw ValidationError("skills.codebook_size", "must be >= 2");

  if (auto v = raw.take("eval.protocols")) c.eval.protocols = detail::parse_word_list(*v);
  for (const auto& p : c.eval.protocols)
    if (p != "gcrl" && p != "zeroshot" && p != "hrl")
      throw ValidationError("eval.protocols", "unknown protocol '" + p + "'");
  read_into(raw, "eval.budget", c.eval.budget);
  if (auto v = raw.take("eval.recursions"))
    c.eval.recursions = detail::parse_number_list<std::size_t>("eval.recursions", *v);
  read_into(raw, "eval.top_k", c.eval.top_k);
  read_into(raw, "eval.n_candidates", c.eval.n_candidates);
  read_into(raw, "eval.pair_stride", c.eval.pair_stride);
  read_into(raw, "eval.goal", c.eval.goal);
  read_into(raw, "eval.task_gamma", c.eval.task_gamma);
  read_into(raw, "eval.horizon", c.eval.horizon);
  read_into(raw, "eval.ridge_lambda", c.eval.ridge_lambda);
  read_into(raw, "eval.n_samples", c.eval.n_samples);
  read_into(raw, "eval.k", c.eval.k);
  if (c.eval.recursions.empty()) throw ValidationError("eval.recursions", "at least one value is required");
  for (auto r : c.eval.recursions)
    if (r > 3) throw ValidationError("eval.recursions", "values must be in 0..3");
  if (c.eval.top_k < 1) throw ValidationError("eval.top_k", "must be >= 1");
  if (c.eval.n_candidates < 1) throw ValidationError("eval.n_candidates", "must be >= 1");
  if (c.eval.pair_stride < 1) throw ValidationError("eval.pair_stride", "must be >= 1");
  if (!(c.eval.budget > 0.0)) throw ValidationError("eval.budget", "must be positive");
  if (!(c.eval.task_gamma > 0.0 && c.eval.task_gamma < 1.0)) throw ValidationError("eval.task_gamma", "must be in (0, 1)");
  if (c.eval.ridge_lambda < 0.0) throw ValidationError("eval.ridge_lambda", "must be >= 0");
  if (c.eval.n_samples != 0 && c.eval.n_samples < c.repr.dim)
    throw ValidationError("eval.n_samples", "must be 0 (all transitions) or >= repr.dim");
  if (c.eval.k < 1) throw ValidationError("eval.k", "must be >= 1");
  if (c.eval.goal != "end") (void)detail::parse_number<State>("eval.goal", c.eval.goal);

  read_into(raw, "theory.embedding", c.theory.embedding);
  read_into(raw, "theory.perturbations", c.theory.perturbations);
  read_into(raw, "theory.perturb_scale", c.theory.perturb_scale);
  if (c.theory.embedding != "trained" && c.theory.embedding != "exact")
    throw ValidationError("theory.embedding", "expected trained or exact");
  if (c.theory.embedding == "exact" && c.env.kind != "chain")
    throw ValidationError("theory.embedding", "exact embeddings exist only for chains");
  if (!(c.theory.perturb_scale >= 0.0)) throw ValidationError("theory.perturb_scale", "must be >= 0");

  if (auto v = raw.take("ablate.axis")) c.ablate.axis = *v;
  if (auto v = raw.take("ablate.values")) c.ablate.values = detail::parse_number_list<std::size_t>("ablate.values", *v);
  if (!c.ablate.axis.empty() && c.ablate.axis != "latent_dim" && c.ablate.axis != "recursions")
    throw ValidationError("ablate.axis", "expected latent_dim or recursions");

  raw.reject_unknown();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return parse_experiment(RawConfig::load(path), slash == std::string::npos ? "." : path.substr(0, slash));
}

}  // namespace hilp

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hilp/config.hpp"
#include "hilp/dataset.hpp"
#include "hilp/error.hpp"
#include "hilp/hierarchy.hpp"
#include "hilp/hilbert.hpp"
#include "hilp/mdp.hpp"
#include "hilp/oracle.hpp"
#include "hilp/prompting.hpp"
#include "hilp/skills.hpp"
#include "hilp/theory.hpp"

namespace hilp {

inline constexpr const char* kToolVersion = "0.1.0";

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Mean of the middle 50%: drops floor(n/4) values from each end of the sorted list.
inline double interquartile_mean(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t cut = values.size() / 4;
  double sum = 0.0;
  for (std::size_t i = cut; i < values.size() - cut; ++i) sum += values[i];
  return sum / static_cast<double>(values.size() - 2 * cut);
}

inline double mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// ---- canonical stage keys --------------------------------------------------

namespace detail {

inline std::string canon(double v) { return format_double(v); }

inline std::string canonical_env(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "env.kind=" << c.env.kind << "\n";
  if (c.env.kind == "chain") o << "env.length=" << c.env.length << "\n";
  if (c.env.kind == "grid") o << "env.rows=" << c.env.rows << "\nenv.cols=" << c.env.cols << "\nenv.map_file=" << c.env.map_file << "\n";
  if (c.env.kind == "corridor") o << "env.run=" << c.env.run << "\nenv.bends=" << c.env.bends << "\n";
  return o.str();
}

inline std::string canonical_gen(const ExperimentConfig& c, std::uint64_t seed) {
  std::ostringstream o;
  o << canonical_env(c) << "dataset.behavior=" << c.dataset.behavior << "\ndataset.epsilon=" << canon(c.dataset.epsilon)
    << "\ndataset.goal=" << (c.dataset.goal ? std::to_string(*c.dataset.goal) : "") << "\ndataset.trajectories="
    << c.dataset.trajectories << "\ndataset.horizon=" << c.dataset.horizon << "\nseed=" << seed << "\n";
  return o.str();
}

inline std::string canonical_repr(const ReprConfig& r) {
  std::ostringstream o;
  o << "repr.dim=" << r.dim << "\nrepr.gamma=" << canon(r.gamma) << "\nrepr.expectile=" << canon(r.expectile)
    << "\nrepr.learning_rate=" << canon(r.learning_rate) << "\nrepr.target_rate=" << canon(r.target_rate)
    << "\nrepr.geometric_p=" << canon(r.geometric_p) << "\nrepr.future_goal_prob=" << canon(r.future_goal_prob)
    << "\nrepr.steps=" << r.steps << "\nrepr.batch_size=" << r.batch_size << "\nrepr.init_scale=" << canon(r.init_scale)
    << "\n";
  return o.str();
}

inline std::string canonical_skills(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "skills.gamma=" << canon(c.skills.gamma) << "\nskills.variant=" << to_string(c.skills.variant)
    << "\nskills.codebook_size=" << c.codebook_size << "\n";
  return o.str();
}

inline std::string canonical_eval(const EvalSpec& e) {
  std::ostringstream o;
  o << "eval.protocols=";
  for (const auto& p : e.protocols) o << p << ',';
  o << "\neval.recursions=";
  for (auto r : e.recursions) o << r << ',';
  o << "\neval.budget=" << canon(e.budget) << "\neval.top_k=" << e.top_k << "\neval.n_candidates=" << e.n_candidates
    << "\neval.pair_stride=" << e.pair_stride << "\neval.goal=" << e.goal << "\neval.task_gamma=" << canon(e.task_gamma)
    << "\neval.horizon=" << e.horizon << "\neval.ridge_lambda=" << canon(e.ridge_lambda)
    << "\neval.n_samples=" << e.n_samples << "\neval.k=" << e.k << "\n";
  return o.str();
}

}  // namespace detail

/// Hash of the whole effective configuration (all stages, all seeds).
inline std::string config_hash(const ExperimentConfig& c) {
  std::string text = detail::canonical_env(c) + detail::canonical_repr(c.repr) + detail::canonical_skills(c) +
                     detail::canonical_eval(c.eval);
  text += detail::canonical_gen(c, 0);
  text += "theory.embedding=" + c.theory.embedding + "\ntheory.perturbations=" + std::to_string(c.theory.perturbations) +
          "\ntheory.perturb_scale=" + detail::canon(c.theory.perturb_scale) + "\nablate.axis=" + c.ablate.axis + "\n";
  for (auto v : c.ablate.values) text += std::to_string(v) + ",";
  text += "\nseeds=";
  for (auto s : c.seeds) text += std::to_string(s) + ",";
  return stable_hash(text);
}

inline Mdp build_env(const ExperimentConfig& c) {
  if (c.env.kind == "chain") return build_chain(c.env.length);
  if (c.env.kind == "fourrooms") return build_gridworld(four_rooms_map(), "fourrooms");
  if (c.env.kind == "corridor") return build_gridworld(corridor_map(c.env.run, c.env.bends), "corridor");
  if (!c.env.map_file.empty()) {
    std::filesystem::path p(c.env.map_file);
    if (p.is_relative() && !c.base_dir.empty()) p = std::filesystem::path(c.base_dir) / p;
    std::ifstream in(p);
    if (!in) throw ValidationError("env.map_file", "cannot open '" + p.string() + "'");
    std::stringstream text;
    text << in.rdbuf();
    return build_gridworld(text.str(), p.stem().string());
  }
  return build_gridworld(open_grid_map(c.env.rows, c.env.cols),
                         "grid" + std::to_string(c.env.rows) + "x" + std::to_string(c.env.cols));
}

/// Trained artifacts for one seed.
struct SeedArtifacts {
  std::uint64_t seed = 0;
  Dataset data;
  Embedding emb;
  MeanEmbedding mean;
  SkillPolicy policy;
  std::string gen_key, repr_key, skills_key;
  std::vector<std::string> cached;  // stages loaded from cache
  double repr_seconds = 0.0;
};

/// Runs the gen -> train-repr -> train-skills stages with on-disk caching.
/// Every stage writes under <out>/<stage>/<hash>/ and is reused when present.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::filesystem::path out, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), out_(std::move(out)), log_(log), mdp_(build_env(cfg_)) {}

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const Mdp& mdp() const noexcept { return mdp_; }
  const std::filesystem::path& out() const noexcept { return out_; }
  const std::string& stage() const noexcept { return stage_; }

  Dataset gen(std::uint64_t seed, std::string* key = nullptr, bool* cached = nullptr) {
    stage_ = "gen";
    const std::string k = stable_hash(detail::canonical_gen(cfg_, seed));
    if (key) *key = k;
    const auto dir = out_ / "gen" / k;
    const auto file = dir / "dataset.txt";
    if (std::filesystem::exists(file)) {
      auto data = load_dataset(file.string());
      validate_dataset(data, mdp_);
      if (cached) *cached = true;
      return data;
    }
    if (cached) *cached = false;
    std::optional<State> goal = cfg_.dataset.goal;
    if (goal && *goal >= mdp_.n_states()) throw ValidationError("dataset.goal", "state out of range");
    const auto data = generate_dataset(mdp_, parse_behavior(cfg_.dataset.behavior, cfg_.dataset.epsilon, goal),
                                       cfg_.dataset.trajectories, cfg_.dataset.horizon, seed);
    std::filesystem::create_directories(dir);
    save_dataset(data, file.string());
    note("gen seed=" + std::to_string(seed) + " -> " + file.string());
    return data;
  }

  SeedArtifacts train(std::uint64_t seed, bool with_skills = true) {
    SeedArtifacts a;
    a.seed = seed;
    bool hit = false;
    a.data = gen(seed, &a.gen_key, &hit);
    if (hit) a.cached.push_back("gen");

    stage_ = "train-repr";
    ReprConfig rc = cfg_.repr;
    rc.seed = seed;
    a.repr_key = stable_hash(a.gen_key + detail::canonical_repr(rc));
    const auto rdir = out_ / "repr" / a.repr_key;
    if (std::filesystem::exists(rdir / "embedding.txt")) {
      a.emb = load_embedding((rdir / "embedding.txt").string());
      if (a.emb.n_states() != mdp_.n_states() || a.emb.dim() != rc.dim)
        throw InvalidArgument("cached embedding does not match the configuration");
      a.cached.push_back("train-repr");
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      auto [emb, trace] = train_repr(a.data, mdp_, rc);
      a.repr_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      a.emb = std::move(emb);
      std::filesystem::create_directories(rdir);
      save_embedding(a.emb, (rdir / "embedding.txt").string());
      std::ofstream csv(rdir / "train_log.csv");
      trace.write_csv(csv);
      note("train-repr seed=" + std::to_string(seed) + " -> " + (rdir / "embedding.txt").string());
    }
    a.mean = mean_embedding(a.emb, a.data);
    if (!with_skills) return a;

    stage_ = "train-skills";
    a.skills_key = stable_hash(a.repr_key + detail::canonical_skills(cfg_));
    const auto sdir = out_ / "skills" / a.skills_key;
    if (std::filesystem::exists(sdir / "skills.txt")) {
      a.policy = load_skill_policy((sdir / "skills.txt").string());
      a.cached.push_back("train-skills");
    } else {
      const auto codebook = build_codebook(rc.dim, cfg_.codebook_size, seed);
      a.policy = train_skills(a.data, mdp_.n_actions(), a.emb, a.mean, codebook, cfg_.skills);
      std::filesystem::create_directories(sdir);
      save_skill_policy(a.policy, (sdir / "skills.txt").string());
      note("train-skills seed=" + std::to_string(seed) + " -> " + (sdir / "skills.txt").string());
    }
    return a;
  }

 private:
  void note(const std::string& msg) {
    if (!log_) return;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    *log_ << msg << '\n';
  }

  ExperimentConfig cfg_;
  std::filesystem::path out_;
  std::ostream* log_;
  Mdp mdp_;
  std::string stage_ = "setup";
};

// ---- evaluation --------------------------------------------------------------

struct EvalRow {
  std::string env;
  std::string task;
  std::string prompt_mode;
  std::size_t recursions = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::size_t steps = 0;
  double ret = 0.0;
  double oracle_ret = 0.0;
  std::string axis;         // ablation axis, empty otherwise
  std::size_t axis_value = 0;
};

inline EvalRow make_row(std::string env, std::string task, std::string prompt_mode, std::size_t recursions,
                        std::uint64_t seed, bool success, std::size_t steps, double ret, double oracle_ret) {
  EvalRow r;
  r.env = std::move(env);
  r.task = std::move(task);
  r.prompt_mode = std::move(prompt_mode);
  r.recursions = recursions;
  r.seed = seed;
  r.success = success;
  r.steps = steps;
  r.ret = ret;
  r.oracle_ret = oracle_ret;
  return r;
}

struct Aggregate {
  std::string env, prompt_mode, axis;
  std::size_t recursions = 0, axis_value = 0, rows = 0;
  double success_rate = 0.0;
  double return_mean = 0.0, oracle_return_mean = 0.0, return_ratio = 0.0;
  std::vector<double> seed_success, seed_ratio;
  double seed_success_mean = 0.0, seed_success_iqm = 0.0;
  double seed_ratio_mean = 0.0, seed_ratio_iqm = 0.0;
};

struct EvalReport {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::string tool_version = kToolVersion;
  std::vector<EvalRow> rows;
  nlohmann::json extra = nlohmann::json::object();

  /// Groups rows by (axis value, env, prompt mode, recursions); per-seed scores
  /// are success rates and sum(return) / sum(oracle return).
  std::vector<Aggregate> aggregates() const {
    using Key = std::tuple<std::size_t, std::string, std::string, std::size_t>;
    std::map<Key, std::vector<const EvalRow*>> groups;
    for (const auto& r : rows) groups[{r.axis_value, r.env, r.prompt_mode, r.recursions}].push_back(&r);
    std::vector<Aggregate> out;
    for (const auto& [key, members] : groups) {
      Aggregate a;
      a.axis_value = std::get<0>(key);
      a.env = std::get<1>(key);
      a.prompt_mode = std::get<2>(key);
      a.recursions = std::get<3>(key);
      a.axis = members.front()->axis;
      a.rows = members.size();
      std::map<std::uint64_t, std::array<double, 4>> per_seed;  // successes, count, return, oracle
      double succ = 0.0, ret = 0.0, orc = 0.0;
      for (const auto* r : members) {
        succ += r->success;
        ret += r->ret;
        orc += r->oracle_ret;
        auto& s = per_seed[r->seed];
        s[0] += r->success;
        s[1] += 1.0;
        s[2] += r->ret;
        s[3] += r->oracle_ret;
      }
      const double n = static_cast<double>(members.size());
      a.success_rate = succ / n;
      a.return_mean = ret / n;
      a.oracle_return_mean = orc / n;
      a.return_ratio = orc != 0.0 ? ret / orc : std::numeric_limits<double>::quiet_NaN();
      for (const auto& [seed, s] : per_seed) {
        a.seed_success.push_back(s[0] / s[1]);
        a.seed_ratio.push_back(s[3] != 0.0 ? s[2] / s[3] : std::numeric_limits<double>::quiet_NaN());
      }
      a.seed_success_mean = mean_of(a.seed_success);
      a.seed_success_iqm = interquartile_mean(a.seed_success);
      a.seed_ratio_mean = mean_of(a.seed_ratio);
      a.seed_ratio_iqm = interquartile_mean(a.seed_ratio);
      out.push_back(std::move(a));
    }
    return out;
  }

  void write_csv(std::ostream& out) const {
    const bool ablation = std::any_of(rows.begin(), rows.end(), [](const EvalRow& r) { return !r.axis.empty(); });
    if (ablation) out << "axis,value,";
    out << "env,task,prompt_mode,recursions,seed,success,steps,return,oracle_return\n";
    for (const auto& r : rows) {
      if (ablation) out << r.axis << ',' << r.axis_value << ',';
      out << r.env << ',' << r.task << ',' << r.prompt_mode << ',' << r.recursions << ',' << r.seed << ','
          << (r.success ? 1 : 0) << ',' << r.steps << ',' << detail::format_double(r.ret) << ','
          << detail::format_double(r.oracle_ret) << '\n';
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool_version"] = tool_version;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    j["rows"] = rows.size();
    auto& aggs = j["aggregates"] = nlohmann::json::array();
    for (const auto& a : aggregates()) {
      nlohmann::json g{{"env", a.env},
                       {"prompt_mode", a.prompt_mode},
                       {"recursions", a.recursions},
                       {"rows", a.rows},
                       {"success_rate", a.success_rate},
                       {"return_mean", a.return_mean},
                       {"oracle_return_mean", a.oracle_return_mean},
                       {"per_seed_success", a.seed_success},
                       {"success_mean", a.seed_success_mean},
                       {"success_iqm", a.seed_success_iqm}};
      if (std::isfinite(a.return_ratio)) {
        g["return_ratio"] = a.return_ratio;
        g["per_seed_return_ratio"] = a.seed_ratio;
        g["return_ratio_mean"] = a.seed_ratio_mean;
        g["return_ratio_iqm"] = a.seed_ratio_iqm;
      }
      if (!a.axis.empty()) {
        g["axis"] = a.axis;
        g["value"] = a.axis_value;
      }
      aggs.push_back(std::move(g));
    }
    if (!extra.empty()) j["extra"] = extra;
    return j;
  }

  void append(const EvalReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
};

inline State resolve_goal(const ExperimentConfig& c, const Mdp& mdp) {
  if (c.eval.goal == "end") return mdp.n_states() - 1;
  const auto g = detail::parse_number<State>("eval.goal", c.eval.goal);
  if (g >= mdp.n_states()) throw ValidationError("eval.goal", "state out of range");
  return g;
}

/// Goal prompting over every reachable (start, goal) pair with start != goal,
/// budget ceil(budget * d*) steps, once per configured recursion depth.
inline std::vector<EvalRow> eval_gcrl(const ExperimentConfig& c, const Mdp& mdp, const DistanceMatrix& dist,
                                      const SeedArtifacts& a) {
  std::vector<EvalRow> rows;
  for (std::size_t rec : c.eval.recursions) {
    PlannerConfig pc{c.eval.n_candidates, rec, c.eval.top_k, a.seed};
    const Planner planner = make_planner(a.data, pc);
    for (State s = 0; s < mdp.n_states(); s += c.eval.pair_stride)
      for (State g = 0; g < mdp.n_states(); g += c.eval.pair_stride) {
        if (s == g || !dist.reachable(s, g)) continue;
        const auto budget = static_cast<std::size_t>(std::ceil(c.eval.budget * static_cast<double>(dist(s, g))));
        const auto r = rollout_gcrl(mdp, a.policy, a.emb, g, s, budget, rec > 0 ? &planner : nullptr);
        rows.push_back(make_row(mdp.name(),
                                "s" + std::to_string(s) + "-g" + std::to_string(g) + "-d" + std::to_string(dist(s, g)),
                                rec > 0 ? "gc-plan" : "gc", rec, a.seed, r.success, r.steps, r.success ? 1.0 : 0.0, 1.0));
      }
  }
  return rows;
}

/// Reward-regression prompting for the goal-cell indicator reward r = 1(s' = goal),
/// one row per start state.
inline std::vector<EvalRow> eval_zeroshot(const ExperimentConfig& c, const Mdp& mdp, const SeedArtifacts& a) {
  const State goal = resolve_goal(c, mdp);
  std::vector<double> indicator(mdp.n_states(), 0.0);
  indicator[goal] = 1.0;
  const auto reward = RewardFn::from_arrival(mdp, indicator);
  const auto prompt = infer_latent_regression(a.data, a.emb, reward, {c.eval.n_samples, c.eval.ridge_lambda, a.seed});
  const auto oracle = value_iteration(mdp, reward, c.eval.task_gamma);
  std::vector<EvalRow> rows;
  for (State s = 0; s < mdp.n_states(); ++s) {
    EvalRow row = make_row(mdp.name(), "goal" + std::to_string(goal) + "-s" + std::to_string(s), "regression", 0, a.seed,
                           false, 0, 0.0, 0.0);
    row.oracle_ret = optimal_return(mdp, reward, oracle, s, c.eval.horizon);
    row.steps = c.eval.horizon;
    if (!prompt.degenerate) {
      const auto r = rollout_zeroshot_rl(mdp, a.policy, reward, prompt, c.eval.task_gamma, s, c.eval.horizon);
      row.ret = r.ret;
      const auto& st = r.trajectory.states;
      const auto hit = std::find(st.begin(), st.end(), goal);
      row.success = hit != st.end();
      if (row.success) row.steps = static_cast<std::size_t>(hit - st.begin());
    }
    rows.push_back(row);
  }
  return rows;
}

/// Goal-reaching task that ends on arrival at the goal: the goal is made
/// absorbing and rewarded with 1 per step spent there. Compares the
/// hierarchical policy against flat goal prompting toward goal_from_reward.
inline std::vector<EvalRow> eval_hrl(const ExperimentConfig& c, const Mdp& mdp, const SeedArtifacts& a,
                                     const std::filesystem::path* save_dir = nullptr) {
  const State goal = resolve_goal(c, mdp);
  std::vector<double> indicator(mdp.n_states(), 0.0);
  indicator[goal] = 1.0;
  const Mdp task = mdp.with_absorbing(goal);
  const auto reward = RewardFn::from_state(task, indicator);
  const double gamma = c.eval.task_gamma;
  const State target = goal_from_reward(a.data, reward);
  const auto relabeled = relabel_high_level(a.data, a.emb, a.policy.codebook(), c.eval.k, reward, gamma);
  const auto high = train_high_level(relabeled.tuples, mdp.n_states(), a.policy.codebook(), gamma, c.eval.k);
  if (save_dir) {
    std::filesystem::create_directories(*save_dir);
    save_high_level(high, (*save_dir / ("highlevel-seed" + std::to_string(a.seed) + ".txt")).string());
  }
  const auto oracle = value_iteration(task, reward, gamma);
  std::vector<EvalRow> rows;
  for (State s : mdp.initial_support()) {
    const double orc = optimal_return(task, reward, oracle, s, c.eval.horizon);
    const std::string name = "goal" + std::to_string(goal) + "-s" + std::to_string(s);
    const auto flat = rollout_gcrl(task, a.policy, a.emb, target, s, c.eval.horizon);
    const double flat_ret = gcrl_task_return(task, a.policy, a.emb, reward, gamma, target, s, c.eval.horizon);
    rows.push_back(make_row(mdp.name(), name, "flat-gc", 0, a.seed, flat.success && target == goal, flat.steps, flat_ret, orc));
    const auto h = hierarchical_rollout(task, high, a.policy, reward, s, c.eval.horizon);
    const auto& st = h.trajectory.states;
    const auto hit = std::find(st.begin(), st.end(), goal);
    const bool reached = hit != st.end();
    rows.push_back(make_row(mdp.name(), name, "hierarchical", 0, a.seed, reached,
                            reached ? static_cast<std::size_t>(hit - st.begin()) : h.trajectory.length(), h.ret, orc));
  }
  return rows;
}

inline EvalReport evaluate_seed(const ExperimentConfig& c, const Mdp& mdp, const DistanceMatrix& dist,
                                const SeedArtifacts& a, const std::filesystem::path* save_dir = nullptr) {
  EvalReport rep;
  for (const auto& p : c.eval.protocols) {
    std::vector<EvalRow> rows;
    if (p == "gcrl") rows = eval_gcrl(c, mdp, dist, a);
    if (p == "zeroshot") rows = eval_zeroshot(c, mdp, a);
    if (p == "hrl") rows = eval_hrl(c, mdp, a, save_dir);
    rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  }
  return rep;
}

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

/// gen -> train-repr -> train-skills -> eval for every seed. Seeds may run in
/// parallel; rows are assembled in seed order.
inline EvalReport run_experiment(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opt,
                                 std::vector<SeedArtifacts>* artifacts = nullptr) {
  Pipeline pipe(c, out, opt.log);
  const auto dist = temporal_distances(pipe.mdp());
  std::vector<EvalReport> per_seed(c.seeds.size());
  std::vector<SeedArtifacts> arts(c.seeds.size());
  parallel_for(c.seeds.size(), opt.jobs, [&](std::size_t i) {
    Pipeline local(c, out, opt.log);
    try {
      arts[i] = local.train(c.seeds[i]);
      const auto save = out / "skills" / arts[i].skills_key;
      per_seed[i] = evaluate_seed(c, local.mdp(), dist, arts[i], &save);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      const std::string stage = arts[i].skills_key.empty() ? local.stage() : "eval";
      throw StageError(stage, "seed " + std::to_string(c.seeds[i]) + ": " + e.what());
    }
  });
  EvalReport rep;
  rep.config_hash = config_hash(c);
  rep.seeds = c.seeds;
  for (auto& r : per_seed) rep.append(r);
  if (artifacts) *artifacts = std::move(arts);
  return rep;
}

/// One full run per axis value (latent_dim changes repr.dim, recursions changes
/// eval.recursions); adds the per-seed embedding error to the report.
inline EvalReport run_ablation(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opt) {
  if (c.ablate.axis.empty()) throw ValidationError("ablate.axis", "no ablation axis configured");
  if (c.ablate.values.empty()) throw ValidationError("ablate.values", "axis value list is empty");
  EvalReport rep;
  rep.config_hash = config_hash(c);
  rep.seeds = c.seeds;
  rep.extra["axis"] = c.ablate.axis;
  auto& errors = rep.extra["embedding_error"] = nlohmann::json::array();
  const Mdp mdp = build_env(c);
  const auto dist = temporal_distances(mdp);
  for (std::size_t v : c.ablate.values) {
    ExperimentConfig point = c;
    if (c.ablate.axis == "latent_dim") {
      if (v < 1) throw ValidationError("ablate.values", "latent_dim values must be >= 1");
      point.repr.dim = v;
    } else {
      if (v > 3) throw ValidationError("ablate.values", "recursion values must be in 0..3");
      point.eval.recursions = {v};
    }
    std::vector<SeedArtifacts> arts;
    auto sub = run_experiment(point, out, opt, &arts);
    for (auto& r : sub.rows) {
      r.axis = c.ablate.axis;
      r.axis_value = v;
    }
    rep.append(sub);
    for (const auto& a : arts) {
      const auto err = embedding_error(a.emb, dist, point.repr.gamma);
      errors.push_back({{"value", v}, {"seed", a.seed}, {"eps_e", err.eps_e}, {"mean_error", err.mean_error}});
    }
  }
  return rep;
}

// ---- theory ------------------------------------------------------------------

/// phi(i) = (i, 0, ..., 0) on a chain: an exact isometry.
inline Embedding exact_chain_embedding(std::size_t n_states, std::size_t dim) {
  Embedding emb(n_states, dim);
  for (State s = 0; s < n_states; ++s) emb.phi(s)[0] = static_cast<double>(s);
  emb.sync_target();
  return emb;
}

/// emb plus i.i.d. uniform [-scale, scale] noise on every coordinate.
inline Embedding perturbed_embedding(const Embedding& emb, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-scale, scale);
  Embedding out = emb;
  for (State s = 0; s < out.n_states(); ++s)
    for (auto& v : out.phi(s)) v += noise(rng);
  out.sync_target();
  return out;
}

inline nlohmann::json theory_json(const TheoryReport& r) {
  return {{"regime", to_string(r.regime)},
          {"eps_e_global", r.eps_e},
          {"eps_d_global", r.eps_d},
          {"condition_holds", r.condition_holds},
          {"pairs", r.pairs},
          {"valid_pairs", r.valid_pairs},
          {"degenerate_pairs", r.degenerate_pairs},
          {"infeasible_pairs", r.infeasible_pairs},
          {"unreachable_pairs", r.unreachable_pairs},
          {"local_condition_pairs", r.local_condition_pairs},
          {"greedy_optimal_pairs", r.greedy_optimal_pairs},
          {"violations", r.violations},
          {"feasibility_checks", {{"tested", r.feasibility.premise_pairs},
                                  {"passed", r.feasibility.premise_pairs - r.feasibility.violations},
                                  {"premise_tolerance", r.feasibility.tolerance},
                                  {"conclusion_tolerance", r.feasibility.conclusion_tolerance}}}};
}

inline void write_theory_pairs_csv(const TheoryReport& r, std::ostream& out) {
  out << "s,g,distance,degenerate,feasible,action,next,local_eps_e,local_eps_d,condition,greedy_optimal\n";
  for (const auto& p : r.per_pair)
    out << p.s << ',' << p.g << ',' << p.distance << ',' << p.degenerate << ',' << p.feasible << ',' << p.action << ','
        << p.next << ',' << detail::format_double(p.local_eps_e) << ',' << detail::format_double(p.local_eps_d) << ','
        << p.condition << ',' << p.optimal << '\n';
}

struct TheoryRun {
  nlohmann::json report;
  bool defect = false;
};

/// Checks the greedy-optimality guarantee on each seed's embedding (trained or
/// exact) and on `theory.perturbations` noisy copies of it.
inline TheoryRun run_theory(const ExperimentConfig& c, const std::filesystem::path& out, const RunOptions& opt) {
  Pipeline pipe(c, out, opt.log);
  const Mdp& mdp = pipe.mdp();
  const auto dist = temporal_distances(mdp);
  TheoryRun run;
  run.report["tool_version"] = kToolVersion;
  run.report["config_hash"] = config_hash(c);
  run.report["seeds"] = c.seeds;
  run.report["env"] = mdp.name();
  run.report["embedding"] = c.theory.embedding;
  auto& per_seed = run.report["per_seed"] = nlohmann::json::array();
  std::filesystem::create_directories(out);
  for (auto seed : c.seeds) {
    Embedding emb;
    if (c.theory.embedding == "exact") {
      emb = exact_chain_embedding(mdp.n_states(), c.repr.dim);
    } else {
      try {
        emb = pipe.train(seed, false).emb;
      } catch (const ValidationError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(pipe.stage(), "seed " + std::to_string(seed) + ": " + e.what());
      }
    }
    const auto rep = check_theorem(mdp, emb, dist, 1.0);
    auto j = theory_json(rep);
    j["seed"] = seed;
    if (c.repr.gamma < 1.0 && c.theory.embedding == "trained")
      j["approximate_eps_e"] = embedding_error(emb, dist, c.repr.gamma).eps_e;
    std::ofstream csv(out / ("theory_pairs_seed" + std::to_string(seed) + ".csv"));
    write_theory_pairs_csv(rep, csv);
    run.defect = run.defect || rep.defect();
    std::size_t violations = 0, holding = 0, feasibility_violations = 0;
    for (std::size_t i = 0; i < c.theory.perturbations; ++i) {
      const auto noisy = perturbed_embedding(emb, c.theory.perturb_scale, seed * 1000003ULL + i);
      const auto pr = check_theorem(mdp, noisy, dist, 1.0);
      violations += pr.violations;
      feasibility_violations += pr.feasibility.violations;
      holding += pr.condition_holds;
      run.defect = run.defect || pr.defect();
    }
    j["perturbed"] = {{"count", c.theory.perturbations},
                      {"scale", c.theory.perturb_scale},
                      {"condition_holds", holding},
                      {"violations", violations},
                      {"feasibility_violations", feasibility_violations}};
    per_seed.push_back(std::move(j));
  }
  run.report["defect"] = run.defect;
  return run;
}

inline void write_report_files(const EvalReport& rep, const std::filesystem::path& out, const std::string& stem) {
  std::filesystem::create_directories(out);
  std::ofstream csv(out / (stem + ".csv"));
  rep.write_csv(csv);
  std::ofstream json(out / (stem + ".json"));
  json << std::setw(2) << rep.to_json() << '\n';
}

}  // namespace hilp

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hilp/hilp.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

hilp::ExperimentConfig load(const Options& o) {
  auto cfg = hilp::load_experiment(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  return cfg;
}

fs::path out_dir(const Options& o, const hilp::ExperimentConfig& cfg) {
  return o.out.empty() ? fs::path("out") / cfg.name : fs::path(o.out);
}

void print_summary(const hilp::EvalReport& rep) {
  for (const auto& a : rep.aggregates()) {
    std::cout << a.env << ' ' << a.prompt_mode;
    if (!a.axis.empty()) std::cout << ' ' << a.axis << '=' << a.axis_value;
    std::cout << " rec=" << a.recursions << " rows=" << a.rows << " success=" << a.success_rate;
    if (std::isfinite(a.return_ratio)) std::cout << " return/oracle=" << a.return_ratio;
    std::cout << '\n';
  }
}

int cmd_stages(const Options& o, const std::string& upto) {
  const auto cfg = load(o);
  const auto out = out_dir(o, cfg);
  hilp::Pipeline pipe(cfg, out, &std::cout);
  const auto dist = hilp::temporal_distances(pipe.mdp());
  for (auto seed : cfg.seeds) {
    if (upto == "gen") {
      std::string key;
      const auto data = pipe.gen(seed, &key);
      const auto cov = hilp::dataset_coverage(data, pipe.mdp());
      std::cout << "seed " << seed << " dataset " << key << " transitions=" << data.n_transitions()
                << " pair_coverage=" << cov.fraction << '\n';
      continue;
    }
    const auto a = pipe.train(seed, upto == "train-skills");
    const auto err = hilp::embedding_error(a.emb, dist, cfg.repr.gamma);
    std::cout << "seed " << seed << " embedding " << a.repr_key << " eps_e=" << err.eps_e
              << " mean_error=" << err.mean_error;
    if (!a.skills_key.empty()) std::cout << " skills " << a.skills_key;
    std::cout << '\n';
  }
  return 0;
}

int cmd_eval(const Options& o, const std::string& stem) {
  const auto cfg = load(o);
  const auto out = out_dir(o, cfg);
  const auto rep = hilp::run_experiment(cfg, out, {o.jobs, &std::cout});
  hilp::write_report_files(rep, out, stem);
  print_summary(rep);
  std::cout << "report: " << (out / (stem + ".csv")).string() << '\n';
  return 0;
}

int cmd_ablate(const Options& o) {
  const auto cfg = load(o);
  const auto out = out_dir(o, cfg);
  const auto rep = hilp::run_ablation(cfg, out, {o.jobs, &std::cout});
  hilp::write_report_files(rep, out, "ablate");
  print_summary(rep);
  std::cout << "report: " << (out / "ablate.csv").string() << '\n';
  return 0;
}

int cmd_theory(const Options& o) {
  const auto cfg = load(o);
  const auto out = out_dir(o, cfg);
  const auto run = hilp::run_theory(cfg, out, {o.jobs, &std::cout});
  std::ofstream(out / "theory.json") << std::setw(2) << run.report << '\n';
  for (const auto& s : run.report["per_seed"])
    std::cout << "seed " << s["seed"] << " eps_e=" << s["eps_e_global"] << " eps_d=" << s["eps_d_global"]
              << " condition_holds=" << s["condition_holds"] << " violations=" << s["violations"]
              << " perturbed_violations=" << s["perturbed"]["violations"] << '\n';
  std::cout << "report: " << (out / "theory.json").string() << '\n';
  if (run.defect) {
    std::cerr << "theory defect: a guarantee was violated\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hilbert representation and foundation policy experiments"};
  app.require_subcommand(1);
  Options opt;
  const char* names[] = {"gen", "train-repr", "train-skills", "eval", "ablate", "theory", "run"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "experiment config file")->required();
    sub->add_option("--out", opt.out, "output directory (default out/<run.name>)");
    sub->add_option("--seed", opt.seed, "run a single seed instead of run.seeds");
    sub->add_option("--jobs", opt.jobs, "parallel seeds")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "gen" || cmd == "train-repr" || cmd == "train-skills") return cmd_stages(opt, cmd);
    if (cmd == "eval") return cmd_eval(opt, "eval");
    if (cmd == "run") return cmd_eval(opt, "run");
    if (cmd == "ablate") return cmd_ablate(opt);
    return cmd_theory(opt);
  } catch (const hilp::ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const hilp::ParseError& e) {
    std::cerr << "config parse error: " << e.what() << '\n';
    return 2;
  } catch (const hilp::TheoryDefect& e) {
    std::cerr << "theory defect: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

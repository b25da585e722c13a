#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polyrec/app.hpp"
#include "polyrec/training.hpp"

using namespace polyrec;
using json = nlohmann::json;

namespace {

enum Exit { ok = 0, config_error = 2, numerical_failure = 3, io_error = 4 };

struct ExperimentFlags {
  std::string config, task, matrix, generator, probe, engine, baseline, output;
  double tol = 0;
  std::size_t max_iters = 0, k = 0, l = 0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;
  CLI::Option *o_tol = nullptr, *o_iters = nullptr, *o_k = nullptr, *o_l = nullptr, *o_seed = nullptr;

  void add(CLI::App* sub, const std::string& baseline_flag = "--baseline") {
    sub->add_option("--config", config, "experiment config (JSON)");
    sub->add_option("--task", task, "eigen | linsolve | matfunc");
    sub->add_option("--matrix", matrix, "Matrix Market file");
    sub->add_option("--generator", generator, "synthetic matrix, e.g. diag:1000:1:1e4");
    sub->add_option("--probe", probe, "lanczos:50 | subspace:20[:seed]");
    sub->add_option("--engine", engine, "engine checkpoint");
    sub->add_option(baseline_flag, baseline, "none | cheb:d | power:d | neumann:d");
    sub->add_option("--out", output, "output prefix");
    o_tol = sub->add_option("--tol", tol, "convergence tolerance");
    o_iters = sub->add_option("--max-iters", max_iters, "iteration cap");
    o_k = sub->add_option("--k", k, "target eigenpairs");
    o_l = sub->add_option("--l", l, "subspace size");
    o_seed = sub->add_option("--seed", seed, "seed for the right-hand side / start block");
  }

  // config file first, flags on top
  ExperimentConfig resolve(Task default_task, const std::string& default_probe) const {
    ExperimentConfig c;
    c.task = default_task;
    c.probe = parse_probe_spec(default_probe);
    if (!config.empty()) c = load_config(config, c);
    if (!task.empty()) c.task = task_from_string(task);
    if (!matrix.empty()) c.matrix = matrix, c.generator.clear();
    if (!generator.empty()) c.generator = generator, c.matrix.clear();
    if (!probe.empty()) c.probe = parse_probe_spec(probe);
    if (!engine.empty()) c.engine = engine, c.baseline.clear();
    if (!baseline.empty()) c.baseline = baseline, c.engine.clear();
    if (!output.empty()) c.output = output;
    if (o_tol->count()) c.solver.tol = tol;
    if (o_iters->count()) c.solver.max_iters = max_iters;
    if (o_k->count()) c.solver.k = k;
    if (o_l->count()) c.solver.l = l;
    if (o_seed->count()) c.seed = seed;
    return c;
  }
};

void print_summary(const std::string& name, const CommandResult& r) {
  std::cout << name << ":\n";
  for (const auto& [key, v] : r.summary.items()) {
    if (key == "config" || key == "trace" || key == "rows" || key == "grid") continue;
    std::cout << "  " << key << ": " << v.dump() << '\n';
  }
  if (r.summary.contains("rows"))
    for (const auto& row : r.summary["rows"])
      std::cout << "  " << row["matrix"].get<std::string>() << " " << row["method"].get<std::string>() << ": "
                << row["iterations"] << (row["converged"].get<bool>() ? "" : " (not converged)") << '\n';
  for (const auto& f : r.files) std::cout << "  wrote " << f << '\n';
}

json flag_overrides(json j, const std::string& task, std::size_t samples, std::size_t epochs, int degree,
                    std::uint64_t seed, CLI::App* sub) {
  if (!task.empty()) j["task"] = task;
  if (sub->get_option("--samples")->count()) j["samples"] = samples;
  if (sub->get_option("--epochs")->count()) j["epochs"] = epochs;
  if (sub->get_option("--degree")->count()) j["degree"] = degree;
  if (sub->get_option("--seed")->count()) j["seed"] = seed;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyrec: learned polynomial recurrences for matrix-free solvers"};
  app.require_subcommand(1);

  // training
  std::string tr_config, tr_out, tr_task, backbone;
  std::size_t tr_samples = 0, tr_epochs = 0;
  int tr_degree = 0;
  std::uint64_t tr_seed = 0;
  auto add_train = [&](CLI::App* s) {
    s->add_option("--config", tr_config, "training config (JSON)");
    s->add_option("--out", tr_out, "output file")->required();
    s->add_option("--task", tr_task, "eigen | linsolve | matfunc");
    s->add_option("--samples", tr_samples);
    s->add_option("--epochs", tr_epochs);
    s->add_option("--degree", tr_degree);
    s->add_option("--seed", tr_seed);
  };
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic spectrum dataset");
  add_train(gen);
  auto* pre = app.add_subcommand("pretrain", "train a backbone on synthetic spectra");
  add_train(pre);
  auto* post = app.add_subcommand("posttrain", "train the probe embedding of a frozen backbone");
  add_train(post);
  post->add_option("--backbone", backbone, "pretrained checkpoint")->required();

  ExperimentFlags f_probe, f_solve, f_eig, f_inv, f_bench;
  auto* probe = app.add_subcommand("probe", "run a spectral probe and write it as JSON");
  f_probe.add(probe);
  auto* solve = app.add_subcommand("solve", "preconditioned CG");
  f_solve.add(solve);
  auto* eig = app.add_subcommand("eig", "polynomial-filtered subspace eigensolver");
  f_eig.add(eig, "--filter");
  auto* inv = app.add_subcommand("invsqrt", "inverse square root whitening residual");
  f_inv.add(inv);
  auto* bench = app.add_subcommand("bench", "compare learned, Chebyshev and classical polynomials");
  f_bench.add(bench);
  std::vector<std::string> bench_mats;
  bench->add_option("--matrices", bench_mats, "Matrix Market files (or gen:<spec>)")->delimiter(',')->required();

  std::string mm_schedule, mm_out = "out";
  MinimaxGrid grid;
  auto* mm = app.add_subcommand("minimax", "Chebyshev-likeness of a schedule");
  mm->add_option("--schedule", mm_schedule, "schedule JSON")->required();
  mm->add_option("--out", mm_out, "output prefix");
  mm->add_option("--c1-min", grid.c1_min);
  mm->add_option("--c1-max", grid.c1_max);
  mm->add_option("--c2-min", grid.c2_min);
  mm->add_option("--c2-max", grid.c2_max);
  mm->add_option("--samples", grid.samples);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? ok : config_error;
  }

  try {
    CommandResult r;
    std::string name;
    auto train_json = [&](CLI::App* s) {
      json j = tr_config.empty() ? json::object() : read_json(tr_config);
      return flag_overrides(j, tr_task, tr_samples, tr_epochs, tr_degree, tr_seed, s);
    };
    if (gen->parsed()) {
      name = "gen-data", r = cmd_gen_data(train_json(gen), tr_out);
    } else if (pre->parsed()) {
      name = "pretrain", r = cmd_pretrain(train_json(pre), tr_out);
    } else if (post->parsed()) {
      name = "posttrain", r = cmd_posttrain(backbone, train_json(post), tr_out);
    } else if (probe->parsed()) {
      name = "probe", r = cmd_probe(f_probe.resolve(Task::linsolve, "lanczos:50"));
    } else if (solve->parsed()) {
      name = "solve", r = cmd_solve(f_solve.resolve(Task::linsolve, "lanczos:50"));
    } else if (eig->parsed()) {
      name = "eig", r = cmd_eig(f_eig.resolve(Task::eigen, "subspace:20"));
    } else if (inv->parsed()) {
      name = "invsqrt", r = cmd_invsqrt(f_inv.resolve(Task::matfunc, "lanczos:50"));
    } else if (bench->parsed()) {
      auto c = f_bench.resolve(Task::linsolve, "lanczos:50");
      if (!f_bench.task.empty() && c.task == Task::eigen && f_bench.probe.empty()) c.probe = parse_probe_spec("subspace:20");
      name = "bench", r = cmd_bench(bench_mats, c);
    } else if (mm->parsed()) {
      name = "minimax", r = cmd_minimax(mm_schedule, grid, mm_out);
    }
    print_summary(name, r);
    if (!r.converged) {
      std::cerr << name << ": did not converge\n";
      return numerical_failure;
    }
    return ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return io_error;
  } catch (const MatrixMarketError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return io_error;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return io_error;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical_failure;
  } catch (const RejectionBudgetExhausted& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical_failure;
  }
}

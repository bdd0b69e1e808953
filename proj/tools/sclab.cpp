// sclab command line: generate, solve, train, experiment, diagnose, plot.

#include "sclab/sclab.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace sclab;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "gaussian-desk, gaussian-paper or adversarial-desk")
      ->check(CLI::IsMember(preset_names()));
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "seed override");
}

/// Preset (default gaussian-desk), overlaid with the config file, then flags.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = preset(c.preset.empty() ? "gaussian-desk" : c.preset);
  if (!c.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(c.config));
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(c.config + ": " + e.what());
    }
    cfg = config_from_json(j, cfg);
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seeds = {*c.seed};
  validate(cfg);
  return cfg;
}

std::uint64_t first_seed(const ExperimentConfig& cfg) { return cfg.seeds.front(); }

int cmd_generate(const Common& c, int count) {
  const ExperimentConfig cfg = resolve(c);
  GeneratorConfig gen = cfg.problem;
  gen.seed = first_seed(cfg);
  const auto dict = gen_dictionary(gen);
  const SampleBatch s = sample_codes(gen, dict->D, count, test_seed(gen.seed));
  const fs::path out(cfg.output_dir);
  save_dictionary(out / "dictionary.txt", *dict);
  save_csv(out / "codes.csv", s.codes.transpose());
  save_csv(out / "signals.csv", s.signals.transpose());
  std::cout << "wrote " << count << " samples (n=" << gen.n << ", m=" << gen.m << ", |B|=" << dict->L << ") to " << out.string()
            << "\n";
  return 0;
}

int cmd_solve(const Common& c, const std::string& dict_path, const std::string& signals_path, const std::string& solver,
              int iterations) {
  const ExperimentConfig cfg = resolve(c);
  std::shared_ptr<const Dictionary> dict;
  Matrix X;
  if (!dict_path.empty()) {
    dict = load_dictionary(dict_path);
  } else {
    GeneratorConfig gen = cfg.problem;
    gen.seed = first_seed(cfg);
    dict = gen_dictionary(gen);
  }
  if (!signals_path.empty()) {
    X = load_csv(signals_path).transpose();
  } else {
    GeneratorConfig gen = cfg.problem;
    gen.seed = first_seed(cfg);
    X = sample_codes(gen, dict->D, 10, test_seed(gen.seed)).signals;
  }
  if (X.rows() != dict->n()) throw std::invalid_argument("signals have " + std::to_string(X.rows()) + " entries, dictionary n = " + std::to_string(dict->n()));
  const SolverKind kind = solver == "ista" ? SolverKind::ista : SolverKind::fista;
  std::ostringstream traces, refs;
  traces.precision(17);
  refs.precision(17);
  traces << "sample,k,f,f_gap\n";
  refs << "sample,f_star,gap,iterations,certified\n";
  int uncertified = 0;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const Problem p(dict, X.col(i), cfg.problem.lambda);
    const ReferenceSolution ref = solve_reference(p, cfg.ref_tol);
    refs << i << ',' << ref.f_star << ',' << ref.gap << ',' << ref.iterations << ',' << (ref.certified ? 1 : 0) << '\n';
    if (!ref.certified) {
      ++uncertified;
      continue;
    }
    for (const auto& r : run_solver(p, kind, iterations, Vector::Zero(p.m()), ref).records)
      traces << i << ',' << r.k << ',' << r.f << ',' << r.f_gap << '\n';
  }
  const fs::path out(cfg.output_dir);
  atomic_write(out / "references.csv", refs.str());
  atomic_write(out / (solver + "_trace.csv"), traces.str());
  std::cout << "solved " << X.cols() << " problems with " << solver << " (" << iterations << " iterations), output in "
            << out.string() << "\n";
  if (uncertified) {
    std::cerr << "error: " << uncertified << " reference solutions not certified\n";
    return 3;
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& model, int depth, std::optional<int> steps,
              std::optional<double> lr) {
  const ExperimentConfig cfg = resolve(c);
  const NetKind kind = net_kind_from_string(model);
  TrainConfig tc = cfg.baselines.linear_train;
  for (const auto& m : cfg.models)
    if (m.kind == kind) tc = m.train;
  if (steps) tc.steps = *steps;
  if (lr) tc.learning_rate = *lr;
  tc.seed = first_seed(cfg);
  tc.test_size = cfg.test_size;
  GeneratorConfig gen = cfg.problem;
  gen.seed = tc.seed;
  const auto dict = gen_dictionary(gen);
  const fs::path out(cfg.output_dir);
  const int K = kind == NetKind::linear ? 1 : depth;
  const TrainResult r = train(kind, K, dict, gen, tc);
  std::ostringstream trace;
  write_train_trace_csv(trace, r.trace);
  save_dictionary(out / "dictionary.txt", *dict);
  atomic_write(out / (model_stem(kind, K) + "_trace.csv"), trace.str());
  save_checkpoint(out / (model_stem(kind, K) + ".ckpt"), r.params, dict->m(), dict->n());
  std::cout << model_stem(kind, K) << ": test loss " << r.trace.init_test_loss << " -> " << r.trace.best_test_loss
            << " (best at step " << r.trace.best_step << ")\n";
  if (r.trace.diverged) {
    std::cerr << "warning: training diverged: " << r.trace.divergence << "\n";
    return 4;
  }
  return 0;
}

int cmd_experiment(const Common& c, bool quiet) {
  const ExperimentConfig cfg = resolve(c);
  RunOptions opt;
  opt.log = quiet ? nullptr : &std::clog;
  const ResultTable t = run_experiment(cfg, opt);
  emit_plots(t, cfg.output_dir);
  std::cout << "wrote " << t.rows.size() << " rows to " << (fs::path(cfg.output_dir) / "results.csv").string() << "\n";
  return 0;
}

int cmd_diagnose(const Common& c, int depth) {
  const ExperimentConfig cfg = resolve(c);
  const std::uint64_t seed = first_seed(cfg);
  const fs::path ckpt = seed_dir(cfg, seed) / (model_stem(NetKind::facnet, depth) + ".ckpt");
  if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt.string() + " (run the experiment first)");
  const Checkpoint cp = load_checkpoint(ckpt);
  const auto* fac = std::get_if<FacnetParams>(&cp.params);
  if (!fac) throw std::runtime_error(ckpt.string() + " is not a facnet checkpoint");
  const SeedInstance s = make_seed_instance(cfg, seed);
  const auto rows = diagnose_factorization(*fac, s);
  const fs::path out = seed_dir(cfg, seed) / (model_stem(NetKind::facnet, depth) + "_diagnosis.csv");
  atomic_write(out, format_diagnosis_csv(rows));
  std::cout << "layer  |R|        min_eig(R)  |A-I|_F    margin_median  satisfied\n";
  for (const auto& d : rows)
    std::cout << std::setw(5) << d.layer << "  " << std::setw(9) << d.residual_norm << "  " << std::setw(10)
              << d.residual_min_eig << "  " << std::setw(9) << d.dist_identity << "  " << std::setw(13) << d.margin_median
              << "  " << d.satisfied_fraction << "\n";
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_plot(const Common& c, const std::string& results) {
  const fs::path in = results.empty() ? fs::path(resolve(c).output_dir) / "results.csv" : fs::path(results);
  const ResultTable t = parse_results_csv(read_file(in), in.string());
  const fs::path out = c.out.empty() ? in.parent_path() : fs::path(c.out);
  emit_plots(t, out);
  std::cout << "wrote " << (out / (t.experiment_id + ".svg")).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse coding acceleration lab"};
  app.require_subcommand(1);

  Common gen_c, solve_c, train_c, exp_c, diag_c, plot_c;

  auto* gen = app.add_subcommand("generate", "write a dictionary and Bernoulli-Gaussian samples");
  add_common(gen, gen_c);
  int count = 1000;
  gen->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);

  auto* solve = app.add_subcommand("solve", "certified references and ISTA/FISTA traces");
  add_common(solve, solve_c);
  std::string dict_path, signals_path, solver = "fista";
  int iterations = 100;
  solve->add_option("--dictionary", dict_path, "dictionary file (default: generated from the config)")->check(CLI::ExistingFile);
  solve->add_option("--signals", signals_path, "CSV with one signal per row")->check(CLI::ExistingFile);
  solve->add_option("--solver", solver)->check(CLI::IsMember({"ista", "fista"}));
  solve->add_option("--iterations", iterations)->check(CLI::NonNegativeNumber);

  auto* tr = app.add_subcommand("train", "train one network");
  add_common(tr, train_c);
  std::string model = "lista";
  int depth = 4;
  std::optional<int> steps;
  std::optional<double> lr;
  tr->add_option("--model", model)->check(CLI::IsMember({"lista", "lfista", "facnet", "linear"}));
  tr->add_option("--depth", depth)->check(CLI::PositiveNumber);
  tr->add_option("--steps", steps);
  tr->add_option("--lr", lr);

  auto* ex = app.add_subcommand("experiment", "run a full experiment and write results.csv");
  add_common(ex, exp_c);
  bool quiet = false;
  ex->add_flag("--quiet", quiet);

  auto* diag = app.add_subcommand("diagnose", "per-layer factorization report of a trained FacNet");
  add_common(diag, diag_c);
  int diag_depth = 4;
  diag->add_option("--depth", diag_depth)->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "SVG chart from results.csv");
  add_common(plot, plot_c);
  std::string results;
  plot->add_option("--results", results, "results.csv (default: <output_dir>/results.csv)")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_c, count);
    if (*solve) return cmd_solve(solve_c, dict_path, signals_path, solver, iterations);
    if (*tr) return cmd_train(train_c, model, depth, steps, lr);
    if (*ex) return cmd_experiment(exp_c, quiet);
    if (*diag) return cmd_diagnose(diag_c, diag_depth);
    if (*plot) return cmd_plot(plot_c, results);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

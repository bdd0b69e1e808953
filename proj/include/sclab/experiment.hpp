#pragma once

// Seeded experiment runner: per seed a dictionary, a fixed test set with
// certified references, solver baselines and trained models, aggregated into
// results.csv.

#include "sclab/bounds.hpp"
#include "sclab/io.hpp"
#include "sclab/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <iostream>
#include <map>

namespace sclab {

using json = nlohmann::json;

struct ModelSpec {
  NetKind kind = NetKind::lista;
  std::vector<int> depths;
  TrainConfig train;
};

struct BaselineSpec {
  int ista = 20;   // k_max
  int fista = 20;  // k_max
  bool linear_warm_start = true;
  TrainConfig linear_train;  // training of the one-layer warm start
};

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  GeneratorConfig problem;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int test_size = 1000;
  std::vector<ModelSpec> models;
  BaselineSpec baselines;
  double ref_tol = 1e-9;
  std::string output_dir = "runs/experiment";
};

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"steps", c.steps},           {"learning_rate", c.learning_rate},
          {"mu", c.mu},                 {"eval_every", c.eval_every}, {"keep_best", c.keep_best},
          {"lr_scale", c.lr_scale},     {"log_space", c.log_space}};
}

inline json to_json(const GeneratorConfig& g) {
  return {{"n", g.n},         {"m", g.m},           {"rho", g.rho},
          {"sigma", g.sigma}, {"lambda", g.lambda}, {"dict_kind", to_string(g.dict_kind)},
          {"noise_sigma", g.noise_sigma}};
}

inline json to_json(const ExperimentConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back({{"kind", to_string(m.kind)}, {"depths", m.depths}, {"train", to_json(m.train)}});
  return {{"experiment_id", c.experiment_id},
          {"problem", to_json(c.problem)},
          {"seeds", c.seeds},
          {"test_size", c.test_size},
          {"models", models},
          {"baselines",
           {{"ista", c.baselines.ista},
            {"fista", c.baselines.fista},
            {"linear_warm_start", c.baselines.linear_warm_start},
            {"linear_train", to_json(c.baselines.linear_train)}}},
          {"ref_tol", c.ref_tol},
          {"output_dir", c.output_dir}};
}

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  detail::reject_unknown(j, {"batch_size", "steps", "learning_rate", "mu", "eval_every", "keep_best", "lr_scale", "log_space"},
                         "train");
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "steps", c.steps);
  detail::read_opt(j, "learning_rate", c.learning_rate);
  detail::read_opt(j, "mu", c.mu);
  detail::read_opt(j, "eval_every", c.eval_every);
  detail::read_opt(j, "keep_best", c.keep_best);
  if (j.contains("lr_scale")) c.lr_scale = j.at("lr_scale").get<std::map<std::string, double>>();
  if (j.contains("log_space")) c.log_space = j.at("log_space").get<std::set<std::string>>();
  return c;
}

/// Missing keys keep the values of `base`; unknown keys are errors.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig c = {}) {
  try {
    detail::reject_unknown(j, {"experiment_id", "problem", "seeds", "test_size", "models", "baselines", "ref_tol", "output_dir"},
                           "experiment");
    detail::read_opt(j, "experiment_id", c.experiment_id);
    detail::read_opt(j, "seeds", c.seeds);
    detail::read_opt(j, "test_size", c.test_size);
    detail::read_opt(j, "ref_tol", c.ref_tol);
    detail::read_opt(j, "output_dir", c.output_dir);
    if (j.contains("problem")) {
      const json& p = j.at("problem");
      detail::reject_unknown(p, {"n", "m", "rho", "sigma", "lambda", "dict_kind", "noise_sigma"}, "problem");
      detail::read_opt(p, "n", c.problem.n);
      detail::read_opt(p, "m", c.problem.m);
      detail::read_opt(p, "rho", c.problem.rho);
      detail::read_opt(p, "sigma", c.problem.sigma);
      detail::read_opt(p, "lambda", c.problem.lambda);
      detail::read_opt(p, "noise_sigma", c.problem.noise_sigma);
      if (p.contains("dict_kind")) c.problem.dict_kind = dict_kind_from_string(p.at("dict_kind").get<std::string>());
    }
    if (j.contains("models")) {
      c.models.clear();
      for (const json& m : j.at("models")) {
        detail::reject_unknown(m, {"kind", "depths", "train"}, "model");
        ModelSpec spec;
        spec.kind = net_kind_from_string(m.at("kind").get<std::string>());
        spec.depths = m.at("depths").get<std::vector<int>>();
        if (m.contains("train")) spec.train = train_config_from_json(m.at("train"));
        c.models.push_back(std::move(spec));
      }
    }
    if (j.contains("baselines")) {
      const json& b = j.at("baselines");
      detail::reject_unknown(b, {"ista", "fista", "linear_warm_start", "linear_train"}, "baselines");
      detail::read_opt(b, "ista", c.baselines.ista);
      detail::read_opt(b, "fista", c.baselines.fista);
      detail::read_opt(b, "linear_warm_start", c.baselines.linear_warm_start);
      if (b.contains("linear_train")) c.baselines.linear_train = train_config_from_json(b.at("linear_train"), c.baselines.linear_train);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

inline void validate(const ExperimentConfig& c) {
  validate(c.problem);
  detail::require(!c.experiment_id.empty(), "config: experiment_id must be nonempty");
  detail::require(!c.seeds.empty(), "config: at least one seed");
  detail::require(c.test_size >= 1, "config: test_size must be >= 1");
  detail::require(c.ref_tol > 0.0, "config: ref_tol must be positive");
  detail::require(c.baselines.ista >= 0 && c.baselines.fista >= 0, "config: baseline iteration counts must be >= 0");
  for (const auto& m : c.models) {
    detail::require(!m.depths.empty(), "config: model without depths");
    for (int d : m.depths) detail::require(d >= 1, "config: depths must be >= 1");
    detail::require(m.kind != NetKind::linear, "config: the linear model is a baseline (baselines.linear_warm_start)");
    TrainConfig t = m.train;
    t.test_size = c.test_size;
    validate(t);
  }
  if (c.baselines.linear_warm_start) {
    TrainConfig t = c.baselines.linear_train;
    t.test_size = c.test_size;
    validate(t);
  }
}

// ---------------------------------------------------------------------------
// Presets

/// Training settings used by the presets. Plain Adagrad at the library
/// default rate overshoots on the deeper networks, and FacNet needs S updated
/// multiplicatively and a stronger unitarity penalty so that the final
/// projection costs little.
inline TrainConfig preset_train_config(NetKind kind) {
  TrainConfig t;
  t.learning_rate = 0.01;
  if (kind == NetKind::facnet) {
    t.mu = 10.0;
    t.log_space = {"S"};
    t.lr_scale = {{"S", 10.0}};
  }
  return t;
}

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.experiment_id = name;
  c.output_dir = "runs/" + name;
  c.problem.n = 16;
  c.problem.m = 32;
  c.problem.rho = 5.0 / 32.0;
  c.problem.sigma = 10.0;
  c.problem.lambda = 0.01;
  c.seeds = {1, 2, 3};
  c.test_size = 1000;
  std::vector<int> depths{1, 2, 4, 7};
  std::vector<NetKind> kinds{NetKind::lista, NetKind::lfista, NetKind::facnet};
  if (name == "gaussian-desk") {
    c.problem.dict_kind = DictKind::gaussian;
  } else if (name == "adversarial-desk") {
    c.problem.dict_kind = DictKind::adversarial;
    kinds = {NetKind::lista, NetKind::facnet};
  } else if (name == "gaussian-paper") {
    c.problem.dict_kind = DictKind::gaussian;
    c.problem.n = 64;
    c.problem.m = 100;
    c.problem.rho = 5.0 / 100.0;
    depths = {1, 2, 4, 7, 12, 20};
    c.baselines.ista = 100;
    c.baselines.fista = 100;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (gaussian-desk, gaussian-paper, adversarial-desk)");
  }
  for (NetKind k : kinds) c.models.push_back({k, depths, preset_train_config(k)});
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"gaussian-desk", "gaussian-paper", "adversarial-desk"};
  return names;
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string model;
  int depth_or_iter = 0;
  std::uint64_t seed = 0;
  double f_gap_median = 0.0;
  double f_gap_q25 = 0.0;
  double f_gap_q75 = 0.0;
};

struct ResultTable {
  std::string experiment_id;
  std::vector<ResultRow> rows;

  /// Median over seeds of the per-seed median gap.
  std::optional<double> median_over_seeds(const std::string& model, int depth) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.model == model && r.depth_or_iter == depth) v.push_back(r.f_gap_median);
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  }
};

/// Linear-interpolation quantile of a sample (q in [0, 1]).
inline double quantile(std::vector<double> v, double q) {
  detail::require(!v.empty(), "quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::string format_results_csv(const ResultTable& t) {
  std::ostringstream os;
  os.precision(17);
  os << "experiment_id,model,depth_or_iter,seed,f_gap_median,f_gap_q25,f_gap_q75\n";
  for (const auto& r : t.rows)
    os << t.experiment_id << ',' << r.model << ',' << r.depth_or_iter << ',' << r.seed << ',' << r.f_gap_median << ','
       << r.f_gap_q25 << ',' << r.f_gap_q75 << '\n';
  return os.str();
}

inline ResultTable parse_results_csv(const std::string& text, const std::string& source = "results.csv") {
  std::istringstream is(text);
  std::string line;
  ResultTable t;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "experiment_id,model,depth_or_iter,seed,f_gap_median,f_gap_q25,f_gap_q75")
        throw FormatError(source + ": unexpected header");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 7 fields");
    try {
      t.experiment_id = cells[0];
      t.rows.push_back({cells[1], std::stoi(cells[2]), std::stoull(cells[3]), std::stod(cells[4]), std::stod(cells[5]),
                        std::stod(cells[6])});
    } catch (const std::logic_error&) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": bad field");
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Per-seed instance: dictionary, test set, certified references

struct SeedInstance {
  std::uint64_t seed = 0;
  GeneratorConfig gen;
  std::shared_ptr<const Dictionary> dict;
  Batch test;
  std::vector<ReferenceSolution> refs;
};

inline SeedInstance make_seed_instance(const ExperimentConfig& c, std::uint64_t seed) {
  SeedInstance s;
  s.seed = seed;
  s.gen = c.problem;
  s.gen.seed = seed;
  s.dict = gen_dictionary(s.gen);
  s.test = make_test_set(s.dict, s.gen, c.test_size, seed);
  s.refs.reserve(static_cast<std::size_t>(s.test.size()));
  std::vector<std::string> failures;
  for (Eigen::Index i = 0; i < s.test.size(); ++i) {
    s.refs.push_back(solve_reference(s.test.problem(i), c.ref_tol));
    if (!s.refs.back().certified && failures.size() < 10)
      failures.push_back("sample " + std::to_string(i) + " gap " + std::to_string(s.refs.back().gap));
  }
  if (!failures.empty()) {
    std::string msg = "uncertified reference solutions for seed " + std::to_string(seed) + ":";
    for (const auto& f : failures) msg += " [" + f + "]";
    throw ExperimentError(msg);
  }
  return s;
}

/// Gap F(z_i) - F*_i for every test column of Z.
inline std::vector<double> f_gaps(const SeedInstance& s, const Matrix& Z) {
  const Vector F = batch_costs(s.test, Z);
  std::vector<double> g(static_cast<std::size_t>(F.size()));
  for (Eigen::Index i = 0; i < F.size(); ++i) {
    g[static_cast<std::size_t>(i)] = F(i) - s.refs[static_cast<std::size_t>(i)].f_star;
    if (g[static_cast<std::size_t>(i)] < -1e-9)
      throw ExperimentError("negative gap " + std::to_string(g[static_cast<std::size_t>(i)]) + " on test sample " +
                            std::to_string(i));
  }
  return g;
}

inline ResultRow summarize(const std::string& model, int depth, std::uint64_t seed, const std::vector<double>& gaps) {
  return {model, depth, seed, quantile(gaps, 0.5), quantile(gaps, 0.25), quantile(gaps, 0.75)};
}

/// Batched solver iterates k = 0..k_max from Z0 (column-wise problems).
inline std::vector<Matrix> solver_iterates(const Batch& b, SolverKind kind, int k_max, const Matrix& Z0) {
  const Dictionary& d = *b.dict;
  const double theta = b.lambda / d.L;
  auto prox = [&](const Matrix& Y) {
    return soft_threshold_rows(Y - (d.B * Y - b.C) / d.L, Vector::Constant(d.m(), theta));
  };
  std::vector<Matrix> out{Z0};
  Matrix z = Z0, z_prev = Z0;
  double t = 1.0, t_prev = 1.0;
  for (int k = 1; k <= k_max; ++k) {
    Matrix next;
    const double coef = kind == SolverKind::fista ? (t_prev - 1.0) / t : 0.0;
    next = coef == 0.0 ? prox(z) : prox(z + coef * (z - z_prev));
    z_prev = std::move(z);
    z = std::move(next);
    t_prev = t;
    t = next_momentum_t(t);
    out.push_back(z);
  }
  return out;
}

struct RunOptions {
  std::ostream* log = nullptr;  // progress lines
  bool write_files = true;
};

inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return fs::path(c.output_dir) / ("seed" + std::to_string(seed));
}

inline std::string model_stem(NetKind kind, int depth) { return std::string(to_string(kind)) + "_K" + std::to_string(depth); }

/// Rows per seed: ISTA and FISTA for k = 0..k_max, ISTA from the trained
/// linear warm start if enabled, then every model at every depth.
inline ResultTable run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
  validate(c);
  auto say = [&](const std::string& s) {
    if (opt.log) *opt.log << "[" << c.experiment_id << "] " << s << std::endl;
  };
  const fs::path out_dir(c.output_dir);
  if (opt.write_files) {
    fs::create_directories(out_dir);
    atomic_write(out_dir / "resolved_config.json", to_json(c).dump(2) + "\n");
  }
  ResultTable table{c.experiment_id, {}};
  for (std::uint64_t seed : c.seeds) {
    say("seed " + std::to_string(seed) + ": references for " + std::to_string(c.test_size) + " test signals");
    const SeedInstance s = make_seed_instance(c, seed);
    const fs::path sdir = seed_dir(c, seed);
    if (opt.write_files) save_dictionary(sdir / "dictionary.txt", *s.dict);
    const Matrix Z0 = Matrix::Zero(s.dict->m(), s.test.size());

    const auto ista = solver_iterates(s.test, SolverKind::ista, c.baselines.ista, Z0);
    for (int k = 0; k <= c.baselines.ista; ++k) table.rows.push_back(summarize("ista", k, seed, f_gaps(s, ista[k])));
    const auto fista = solver_iterates(s.test, SolverKind::fista, c.baselines.fista, Z0);
    for (int k = 0; k <= c.baselines.fista; ++k) table.rows.push_back(summarize("fista", k, seed, f_gaps(s, fista[k])));

    if (c.baselines.linear_warm_start) {
      say("seed " + std::to_string(seed) + ": linear warm start");
      TrainConfig tc = c.baselines.linear_train;
      tc.seed = seed;
      tc.test_size = c.test_size;
      const TrainResult r = train_from(linear_init_zero(*s.dict), s.dict, s.gen, tc, s.test);
      const Matrix W = network_output(r.params, s.test);
      const auto warm = solver_iterates(s.test, SolverKind::ista, c.baselines.ista, W);
      for (int k = 0; k <= c.baselines.ista; ++k)
        table.rows.push_back(summarize("ista_linear", k, seed, f_gaps(s, warm[k])));
      if (opt.write_files) {
        std::ostringstream tr;
        write_train_trace_csv(tr, r.trace);
        atomic_write(sdir / "linear_trace.csv", tr.str());
        save_checkpoint(sdir / "linear.ckpt", r.params, s.dict->m(), s.dict->n());
      }
    }

    for (const auto& m : c.models) {
      for (int K : m.depths) {
        TrainConfig tc = m.train;
        tc.seed = seed;
        tc.test_size = c.test_size;
        const TrainResult r = train_from(init_network(m.kind, *s.dict, s.gen.lambda, K, tc.mu), s.dict, s.gen, tc, s.test);
        const auto gaps = f_gaps(s, network_output(r.params, s.test));
        table.rows.push_back(summarize(to_string(m.kind), K, seed, gaps));
        say("seed " + std::to_string(seed) + ": " + model_stem(m.kind, K) + " median gap " +
            std::to_string(table.rows.back().f_gap_median) + (r.trace.diverged ? " (diverged: " + r.trace.divergence + ")" : ""));
        if (opt.write_files) {
          std::ostringstream tr;
          write_train_trace_csv(tr, r.trace);
          atomic_write(sdir / (model_stem(m.kind, K) + "_trace.csv"), tr.str());
          save_checkpoint(sdir / (model_stem(m.kind, K) + ".ckpt"), r.params, s.dict->m(), s.dict->n());
        }
      }
    }
  }
  if (opt.write_files) atomic_write(out_dir / "results.csv", format_results_csv(table));
  return table;
}

/// |models| * |depths| * |seeds| + per seed (ista + 1) + (fista + 1) [+ (ista + 1)].
inline std::size_t expected_row_count(const ExperimentConfig& c) {
  std::size_t model_rows = 0;
  for (const auto& m : c.models) model_rows += m.depths.size();
  std::size_t baseline = static_cast<std::size_t>(c.baselines.ista + 1 + c.baselines.fista + 1);
  if (c.baselines.linear_warm_start) baseline += static_cast<std::size_t>(c.baselines.ista + 1);
  return c.seeds.size() * (model_rows + baseline);
}

// ---------------------------------------------------------------------------
// Factorization diagnosis of a trained FacNet

struct LayerDiagnosis {
  int layer = 0;
  double residual_norm = 0.0;
  double residual_min_eig = 0.0;
  double unitarity_defect = 0.0;
  double dist_identity = 0.0;  // |A_k - I|_F
  double mean_delta = 0.0;     // mean delta_{A_k}(z*) over the test set
  double margin_median = 0.0;  // acceleration margin at (z_{k-1}, z_k)
  double margin_mean = 0.0;
  double satisfied_fraction = 0.0;
  int margin_samples = 0;
};

inline std::vector<LayerDiagnosis> diagnose_factorization(const FacnetParams& params, const SeedInstance& s) {
  const Eigen::Index m = s.dict->m();
  std::vector<LayerDiagnosis> out;
  std::vector<Vector> z(static_cast<std::size_t>(s.test.size()), Vector::Zero(m));
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    const Factorization f(l.A, l.S);
    const ResidualInfo res = residual(f, s.dict->B);
    LayerDiagnosis d;
    d.layer = static_cast<int>(k + 1);
    d.residual_norm = res.spec_norm;
    d.residual_min_eig = res.min_eig;
    d.unitarity_defect = f.unitarity_defect();
    d.dist_identity = (l.A - Matrix::Identity(m, m)).norm();
    std::vector<double> margins;
    double delta_acc = 0.0;
    int satisfied = 0;
    for (Eigen::Index i = 0; i < s.test.size(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      const Problem p = s.test.problem(i);
      delta_acc += delta_A(l.A, s.refs[idx].z_star, p.lambda());
      const Vector next = rotated_prox_step(p, f, z[idx]);
      try {
        const AccelerationMargin a = acceleration_condition(p, f, z[idx], next, s.refs[idx]);
        margins.push_back(a.margin);
        satisfied += a.satisfied ? 1 : 0;
      } catch (const std::domain_error&) {
        // already at the optimum
      }
      z[idx] = next;
    }
    d.mean_delta = delta_acc / static_cast<double>(s.test.size());
    d.margin_samples = static_cast<int>(margins.size());
    if (!margins.empty()) {
      d.margin_median = quantile(margins, 0.5);
      double acc = 0.0;
      for (double v : margins) acc += v;
      d.margin_mean = acc / static_cast<double>(margins.size());
      d.satisfied_fraction = static_cast<double>(satisfied) / static_cast<double>(margins.size());
    }
    out.push_back(d);
  }
  return out;
}

inline std::string format_diagnosis_csv(const std::vector<LayerDiagnosis>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,residual_norm,residual_min_eig,unitarity_defect,dist_identity,mean_delta,margin_median,margin_mean,"
        "satisfied_fraction,margin_samples\n";
  for (const auto& d : rows)
    os << d.layer << ',' << d.residual_norm << ',' << d.residual_min_eig << ',' << d.unitarity_defect << ','
       << d.dist_identity << ',' << d.mean_delta << ',' << d.margin_median << ',' << d.margin_mean << ','
       << d.satisfied_fraction << ',' << d.margin_samples << '\n';
  return os.str();
}

}  // namespace sclab

#pragma once

// Adagrad training of the unrolled networks on fresh synthetic batches.

#include "sclab/generators.hpp"
#include "sclab/networks.hpp"

#include <functional>
#include <map>
#include <set>
#include <optional>
#include <ostream>

namespace sclab {

struct TrainConfig {
  int batch_size = 500;
  int steps = 3000;
  double learning_rate = 0.1;
  double mu = 1.0;
  int eval_every = 50;
  int test_size = 1000;
  std::uint64_t seed = 0;
  bool keep_best = true;
  bool frozen_batch = false;  // reuse the first batch every step (full-batch sanity runs)
  /// Learning-rate multipliers by tensor role ("A", "S", "W_g", "W_m", "W_e",
  /// "theta", "A0"); missing roles use 1.
  std::map<std::string, double> lr_scale;
  /// Roles updated multiplicatively (Adagrad on the logarithm), e.g. "S".
  std::set<std::string> log_space;
};

/// Role of a tensor name such as "layer3.W_g" -> "W_g".
inline std::string tensor_role(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

inline void validate(const TrainConfig& cfg) {
  detail::require(cfg.batch_size >= 1, "train: batch_size must be >= 1");
  detail::require(cfg.steps >= 0, "train: steps must be >= 0");
  detail::require(cfg.learning_rate > 0.0, "train: learning_rate must be positive");
  detail::require(cfg.mu >= 0.0, "train: mu must be nonnegative");
  detail::require(cfg.eval_every >= 1, "train: eval_every must be >= 1");
  detail::require(cfg.test_size >= 1, "train: test_size must be >= 1");
  for (const auto& [role, v] : cfg.lr_scale) detail::require(v > 0.0, "train: lr_scale for " + role + " must be positive");
}

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& tensor)
      : std::runtime_error("non-finite gradient in tensor " + tensor), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

struct AdagradState {
  NetworkParams accum;
  double epsilon = 1e-8;
};

inline AdagradState adagrad_init(const NetworkParams& params, double epsilon = 1e-8) {
  return AdagradState{zeros_like(params), epsilon};
}

/// accum += g^2; w -= lr g / sqrt(accum + eps). The gradient is checked in
/// full before anything is modified.
/// Roles in `log_space` take the step on log w with gradient w g, so
/// w <- w exp(-lr w g / sqrt(accum + eps)); those entries must be positive.
inline void adagrad_update(AdagradState& state, NetworkParams& params, const NetworkParams& grads, double lr,
                           const std::map<std::string, double>& lr_scale = {},
                           const std::set<std::string>& log_space = {}) {
  detail::require(params.index() == grads.index() && params.index() == state.accum.index(),
                  "adagrad_update: parameter kinds differ");
  NetworkParams g = grads;
  auto pv = tensor_views(params);
  auto gv = tensor_views(g);
  auto av = tensor_views(state.accum);
  detail::require(pv.size() == gv.size() && pv.size() == av.size(), "adagrad_update: tensor count mismatch");
  for (std::size_t t = 0; t < pv.size(); ++t) {
    detail::require(pv[t].size == gv[t].size && pv[t].size == av[t].size,
                    "adagrad_update: shape mismatch in " + pv[t].name);
    for (Eigen::Index i = 0; i < gv[t].size; ++i)
      if (!std::isfinite(gv[t].data[i])) throw NonFiniteGradient(pv[t].name);
  }
  for (std::size_t t = 0; t < pv.size(); ++t) {
    const auto it = lr_scale.find(tensor_role(pv[t].name));
    const double rate = it == lr_scale.end() ? lr : lr * it->second;
    const bool logarithmic = log_space.count(tensor_role(pv[t].name)) > 0;
    for (Eigen::Index i = 0; i < pv[t].size; ++i) {
      double& w = pv[t].data[i];
      const double gi = logarithmic ? w * gv[t].data[i] : gv[t].data[i];
      av[t].data[i] += gi * gi;
      const double step = rate * gi / std::sqrt(av[t].data[i] + state.epsilon);
      if (logarithmic) {
        w *= std::exp(-step);
      } else {
        w -= step;
      }
    }
  }
}

constexpr double kPositiveFloor = 1e-8;

/// Keeps thresholds and scales positive after an unconstrained step.
inline void clamp_positive(NetworkParams& params) {
  for (auto& v : tensor_views(params)) {
    if (v.name.ends_with("theta") || v.name.ends_with(".S"))
      for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] = std::max(v.data[i], kPositiveFloor);
  }
}

/// Every A replaced by its closest unitary matrix, S clamped to >= 1e-8.
inline FacnetParams finalize_facnet(FacnetParams params) {
  for (auto& l : params.layers) {
    l.A = stiefel_project(l.A).Q;
    l.S = l.S.cwiseMax(kPositiveFloor);
  }
  return params;
}

/// Parameters as they would be returned: FacNet layers projected.
inline NetworkParams finalized(const NetworkParams& params) {
  if (const auto* f = std::get_if<FacnetParams>(&params)) return finalize_facnet(*f);
  return params;
}

/// Loss without the unitarity penalty: mean F for the unrolled networks, the
/// Linear objective for the Linear model.
inline double data_loss(const NetworkParams& params, const Batch& b) {
  const double loss = network_loss(params, b);
  if (const auto* f = std::get_if<FacnetParams>(&params)) return loss - unitarity_penalty(*f);
  return loss;
}

struct TrainRecord {
  int step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double penalty = 0.0;
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  double init_test_loss = 0.0;
  double best_test_loss = 0.0;
  int best_step = 0;
  bool diverged = false;
  std::string divergence;
  /// test loss after FacNet projection minus before it, at the returned step
  double projection_change = 0.0;
};

struct TrainResult {
  NetworkParams params;
  TrainTrace trace;
};

inline void write_train_trace_csv(std::ostream& os, const TrainTrace& trace) {
  const auto old = os.precision(17);
  os << "step,train_loss,test_loss,penalty\n";
  for (const auto& r : trace.records) os << r.step << ',' << r.train_loss << ',' << r.test_loss << ',' << r.penalty << '\n';
  os.precision(old);
}

inline std::uint64_t batch_seed(std::uint64_t seed, std::uint64_t step) {
  return splitmix64(seed ^ fnv1a64("train-batch") ^ splitmix64(step + 1));
}

inline std::uint64_t test_seed(std::uint64_t seed) { return splitmix64(seed ^ fnv1a64("test-set")); }

inline Batch draw_batch(const std::shared_ptr<const Dictionary>& dict, const GeneratorConfig& gen, int count,
                        std::uint64_t seed) {
  return Batch(dict, sample_codes(gen, dict->D, count, seed).signals, gen.lambda);
}

/// Held-out set for a training seed; the same for every model trained with it.
inline Batch make_test_set(const std::shared_ptr<const Dictionary>& dict, const GeneratorConfig& gen, int size,
                           std::uint64_t seed) {
  return draw_batch(dict, gen, size, test_seed(seed));
}

using EvalCallback = std::function<void(int step, const NetworkParams& params)>;

/// Adagrad from `init` with one fresh batch per step. Test loss is recorded
/// every eval_every steps and at the last step, always on the parameters as
/// they would be returned (FacNet projected). With keep_best the returned
/// parameters are the recorded ones with the lowest test loss.
inline TrainResult train_from(NetworkParams init, const std::shared_ptr<const Dictionary>& dict,
                              const GeneratorConfig& gen, const TrainConfig& cfg, const Batch& test,
                              const EvalCallback& on_eval = {}) {
  validate(cfg);
  detail::require(dict != nullptr, "train: null dictionary");
  detail::require_dims(test.X.rows(), dict->n(), "train test set");
  if (auto* f = std::get_if<FacnetParams>(&init)) f->mu = cfg.mu;

  TrainResult out{init, {}};
  NetworkParams params = std::move(init);
  AdagradState opt = adagrad_init(params);
  std::optional<Batch> frozen;
  auto batch_for = [&](int step) -> Batch {
    if (cfg.frozen_batch) {
      if (!frozen) frozen = draw_batch(dict, gen, cfg.batch_size, batch_seed(cfg.seed, 0));
      return *frozen;
    }
    return draw_batch(dict, gen, cfg.batch_size, batch_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  };
  double last_train = std::numeric_limits<double>::quiet_NaN();
  double last_penalty = 0.0;
  auto penalty_of = [](const NetworkParams& p) {
    const auto* f = std::get_if<FacnetParams>(&p);
    return f ? unitarity_penalty(*f) : 0.0;
  };
  auto evaluate = [&](int step) {
    const NetworkParams candidate = finalized(params);
    const double test_loss = data_loss(candidate, test);
    out.trace.records.push_back({step, last_train, test_loss, last_penalty});
    if (on_eval) on_eval(step, candidate);
    const bool first = out.trace.records.size() == 1;
    if (first) out.trace.init_test_loss = test_loss;
    if (first || !cfg.keep_best || test_loss < out.trace.best_test_loss) {
      out.trace.best_test_loss = test_loss;
      out.trace.best_step = step;
      out.params = candidate;
      if (const auto* f = std::get_if<FacnetParams>(&params))
        out.trace.projection_change = test_loss - data_loss(NetworkParams(*f), test);
    }
  };

  // step 0 record uses the first batch at the initial parameters
  {
    const Batch b = batch_for(0);
    last_train = network_loss(params, b);
    last_penalty = penalty_of(params);
  }
  evaluate(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    const Batch b = batch_for(step - 1);
    LossAndGrad lg = network_backward(params, b);
    last_train = lg.loss;
    last_penalty = lg.penalty;
    if (!std::isfinite(lg.loss)) {
      out.trace.diverged = true;
      out.trace.divergence = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    try {
      adagrad_update(opt, params, lg.grad, cfg.learning_rate, cfg.lr_scale, cfg.log_space);
    } catch (const NonFiniteGradient& e) {
      out.trace.diverged = true;
      out.trace.divergence = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    clamp_positive(params);
    if (step % cfg.eval_every == 0 || step == cfg.steps) evaluate(step);
  }
  return out;
}

/// Trains from the classical-solver initialization of the given kind and depth.
inline TrainResult train(NetKind kind, int K, const std::shared_ptr<const Dictionary>& dict,
                         const GeneratorConfig& gen, const TrainConfig& cfg, const EvalCallback& on_eval = {}) {
  validate(cfg);
  const Batch test = make_test_set(dict, gen, cfg.test_size, cfg.seed);
  return train_from(init_network(kind, *dict, gen.lambda, K, cfg.mu), dict, gen, cfg, test, on_eval);
}

}  // namespace sclab

#include "sclab/training.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace sclab;
using sclab::testing::desk_config;
using sclab::testing::gaussian_matrix;

namespace {

NetworkParams single_scalar(double w) {
  LinearParams p{Matrix::Constant(1, 1, w)};
  return p;
}

double scalar(const NetworkParams& p) { return std::get<LinearParams>(p).A0(0, 0); }

TrainConfig quick(std::uint64_t seed, int steps) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.steps = steps;
  cfg.batch_size = 100;
  cfg.test_size = 200;
  cfg.eval_every = 10;
  return cfg;
}

bool same_params(const NetworkParams& a, const NetworkParams& b) {
  NetworkParams x = a, y = b;
  auto xv = tensor_views(x), yv = tensor_views(y);
  if (xv.size() != yv.size()) return false;
  for (std::size_t t = 0; t < xv.size(); ++t) {
    if (xv[t].size != yv[t].size) return false;
    for (Eigen::Index i = 0; i < xv[t].size; ++i)
      if (xv[t].data[i] != yv[t].data[i]) return false;
  }
  return true;
}

}  // namespace

TEST(Adagrad, FirstStepArithmetic) {
  NetworkParams p = single_scalar(1.0);
  AdagradState st = adagrad_init(p);
  adagrad_update(st, p, single_scalar(3.0), 0.1);
  EXPECT_NEAR(scalar(p), 1.0 - 0.1 * 3.0 / std::sqrt(9.0 + 1e-8), 1e-15);
  EXPECT_NEAR(scalar(p), 0.9, 1e-9);
}

TEST(Adagrad, ZeroGradientLeavesParameters) {
  NetworkParams p = single_scalar(2.5);
  AdagradState st = adagrad_init(p);
  adagrad_update(st, p, single_scalar(0.0), 0.1);
  EXPECT_EQ(scalar(p), 2.5);
}

TEST(Adagrad, SecondIdenticalStepShrinksBySqrtTwo) {
  NetworkParams p = single_scalar(0.0);
  AdagradState st = adagrad_init(p, 0.0);
  adagrad_update(st, p, single_scalar(0.7), 0.1);
  const double first = -scalar(p);
  adagrad_update(st, p, single_scalar(0.7), 0.1);
  const double second = -scalar(p) - first;
  EXPECT_NEAR(second, first / std::sqrt(2.0), 1e-15);
}

TEST(Adagrad, RoleScaleAndLogSpace) {
  FacnetParams f{{{Matrix::Identity(2, 2), Vector::Constant(2, 4.0)}}, 1.0};
  NetworkParams p = f;
  AdagradState st = adagrad_init(p, 0.0);
  FacnetParams g{{{Matrix::Constant(2, 2, 0.5), Vector::Constant(2, -2.0)}}, 1.0};
  adagrad_update(st, p, g, 0.1, {{"S", 3.0}}, {"S"});
  const auto& l = std::get<FacnetParams>(p).layers[0];
  // additive on A: step lr * sign(g)
  EXPECT_NEAR(l.A(0, 0), 1.0 - 0.1, 1e-15);
  EXPECT_NEAR(l.A(0, 1), -0.1, 1e-15);
  // log space on S with scaled rate: S * exp(-0.3 * sign(S g))
  EXPECT_NEAR(l.S(0), 4.0 * std::exp(0.3), 1e-12);
  EXPECT_EQ(tensor_role("layer12.W_g"), "W_g");
  EXPECT_EQ(tensor_role("A0"), "A0");
}

TEST(Adagrad, LogSpaceKeepsPositive) {
  FacnetParams f{{{Matrix::Identity(1, 1), Vector::Constant(1, 1e-3)}}, 1.0};
  NetworkParams p = f;
  AdagradState st = adagrad_init(p);
  for (int it = 0; it < 100; ++it) {
    FacnetParams g{{{Matrix::Zero(1, 1), Vector::Constant(1, 1e6)}}, 1.0};
    adagrad_update(st, p, g, 1.0, {}, {"S"});
  }
  EXPECT_GT(std::get<FacnetParams>(p).layers[0].S(0), 0.0);
}

TEST(Adagrad, AccumulatorsNondecreasing) {
  const Problem p = sclab::testing::random_problem(1);
  NetworkParams params = lista_init_from_ista(p, 2);
  AdagradState st = adagrad_init(params);
  Rng rng(1);
  for (int it = 0; it < 20; ++it) {
    NetworkParams before = st.accum;
    NetworkParams g = zeros_like(params);
    for (auto& v : tensor_views(g))
      for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] = rng.normal();
    adagrad_update(st, params, g, 0.01);
    auto bv = tensor_views(before), av = tensor_views(st.accum);
    for (std::size_t t = 0; t < av.size(); ++t)
      for (Eigen::Index i = 0; i < av[t].size; ++i) ASSERT_GE(av[t].data[i], bv[t].data[i]);
  }
}

TEST(Adagrad, NonFiniteGradientNamesTensor) {
  const Problem p = sclab::testing::random_problem(2);
  NetworkParams params = lfista_init_from_fista(p, 3);
  const NetworkParams copy = params;
  AdagradState st = adagrad_init(params);
  NetworkParams g = zeros_like(params);
  std::get<LfistaParams>(g).layers[1].W_m(2, 3) = std::numeric_limits<double>::quiet_NaN();
  try {
    adagrad_update(st, params, g, 0.1);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.tensor(), "layer2.W_m");
  }
  EXPECT_TRUE(same_params(params, copy));
}

TEST(FinalizeFacnet, UnitaryLayersUnchanged) {
  Rng rng(3);
  FacnetParams p;
  for (int k = 0; k < 3; ++k) p.layers.push_back({sclab::testing::random_orthogonal(rng, 8), Vector::Constant(8, 2.0)});
  const FacnetParams q = finalize_facnet(p);
  for (int k = 0; k < 3; ++k) EXPECT_LE((q.layers[k].A - p.layers[k].A).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FinalizeFacnet, ProjectsNearUnitaryAndClampsScale) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    FacnetParams p;
    for (int k = 0; k < 3; ++k) {
      Matrix A = sclab::testing::random_orthogonal(rng, 10) + 0.05 * gaussian_matrix(rng, 10, 10);
      Vector S = Vector::Constant(10, 1.0);
      S(0) = -1.0;
      p.layers.push_back({A, S});
    }
    for (const auto& l : finalize_facnet(p).layers) {
      EXPECT_LE(unitarity_defect(l.A), 1e-10);
      EXPECT_GE(l.S.minCoeff(), 1e-8);
    }
  }
}

TEST(Train, ZeroStepsReturnsInitAndSolverCost) {
  const GeneratorConfig gen = desk_config(5);
  auto dict = gen_dictionary(gen);
  TrainConfig cfg = quick(5, 0);
  for (NetKind kind : {NetKind::lista, NetKind::lfista, NetKind::facnet}) {
    const TrainResult r = train(kind, 4, dict, gen, cfg);
    EXPECT_TRUE(same_params(r.params, init_network(kind, *dict, gen.lambda, 4, cfg.mu))) << to_string(kind);
    ASSERT_EQ(r.trace.records.size(), 1u);
    const Batch test = make_test_set(dict, gen, cfg.test_size, cfg.seed);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      const Problem p = test.problem(i);
      SolverState st = initial_state(Vector::Zero(p.m()));
      for (int k = 0; k < 4; ++k) {
        if (kind == NetKind::lfista) {
          st = fista_step(p, st);
        } else {
          st.z = ista_step(p, st.z);
        }
      }
      acc += cost(p, st.z);
    }
    EXPECT_NEAR(r.trace.records[0].test_loss, acc / test.size(), 1e-10 * acc / test.size());
  }
}

TEST(Train, KeepBestNeverWorseThanInit) {
  const GeneratorConfig gen = desk_config(6);
  auto dict = gen_dictionary(gen);
  for (NetKind kind : {NetKind::lista, NetKind::lfista, NetKind::facnet, NetKind::linear}) {
    TrainConfig cfg = quick(6, 60);
    cfg.learning_rate = 0.5;  // deliberately aggressive
    const TrainResult r = train(kind, 3, dict, gen, cfg);
    const Batch test = make_test_set(dict, gen, cfg.test_size, cfg.seed);
    EXPECT_LE(data_loss(r.params, test), r.trace.init_test_loss) << to_string(kind);
    EXPECT_EQ(data_loss(r.params, test), r.trace.best_test_loss) << to_string(kind);
  }
}

TEST(Train, Deterministic) {
  const GeneratorConfig gen = desk_config(7);
  auto dict = gen_dictionary(gen);
  for (NetKind kind : {NetKind::lista, NetKind::facnet}) {
    const TrainResult a = train(kind, 3, dict, gen, quick(7, 40));
    const TrainResult b = train(kind, 3, dict, gen, quick(7, 40));
    std::ostringstream sa, sb;
    write_train_trace_csv(sa, a.trace);
    write_train_trace_csv(sb, b.trace);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_TRUE(same_params(a.params, b.params));
  }
}

TEST(Train, FrozenBatchDescends) {
  const GeneratorConfig gen = desk_config(8);
  auto dict = gen_dictionary(gen);
  for (NetKind kind : {NetKind::lista, NetKind::lfista, NetKind::facnet, NetKind::linear}) {
    TrainConfig cfg = quick(8, 50);
    cfg.frozen_batch = true;
    cfg.learning_rate = 1e-3;
    cfg.eval_every = 1;
    cfg.keep_best = false;
    const TrainResult r = train(kind, 3, dict, gen, cfg);
    ASSERT_EQ(r.trace.records.size(), 51u);
    int violations = 0;
    for (std::size_t i = 2; i < r.trace.records.size(); ++i)
      if (r.trace.records[i].train_loss > r.trace.records[i - 1].train_loss) ++violations;
    EXPECT_LE(violations, 2) << to_string(kind);
    EXPECT_LT(r.trace.records.back().train_loss, r.trace.records[1].train_loss) << to_string(kind);
  }
}

TEST(Train, FacnetReturnsUnitaryLayersAndTraceCsv) {
  const GeneratorConfig gen = desk_config(9);
  auto dict = gen_dictionary(gen);
  TrainConfig cfg = quick(9, 30);
  cfg.keep_best = false;
  const TrainResult r = train(NetKind::facnet, 3, dict, gen, cfg);
  for (const auto& l : std::get<FacnetParams>(r.params).layers) EXPECT_LE(unitarity_defect(l.A), 1e-10);
  std::ostringstream os;
  write_train_trace_csv(os, r.trace);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "step,train_loss,test_loss,penalty");
  EXPECT_EQ(r.trace.records.back().step, 30);
  EXPECT_GE(r.trace.records.back().penalty, 0.0);
}

TEST(Train, DivergenceIsFlagged) {
  // training batches whose squared norms overflow; the held-out set is sane
  const GeneratorConfig gen = desk_config(10);
  auto dict = gen_dictionary(gen);
  GeneratorConfig huge = gen;
  huge.sigma = 1e160;
  TrainConfig cfg = quick(10, 20);
  const Batch test = make_test_set(dict, gen, cfg.test_size, cfg.seed);
  const NetworkParams init = init_network(NetKind::lista, *dict, gen.lambda, 2);
  const TrainResult r = train_from(init, dict, huge, cfg, test);
  EXPECT_TRUE(r.trace.diverged);
  EXPECT_NE(r.trace.divergence.find("step 1"), std::string::npos) << r.trace.divergence;
  EXPECT_TRUE(same_params(r.params, init));
  EXPECT_TRUE(std::isfinite(r.trace.best_test_loss));
}

TEST(Train, ConfigValidation) {
  const GeneratorConfig gen = desk_config(11);
  auto dict = gen_dictionary(gen);
  TrainConfig cfg = quick(11, 1);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(NetKind::lista, 2, dict, gen, cfg), std::invalid_argument);
}

TEST(Train, DeskListaBeatsIstaAtSameDepth) {
  // median over three seeds, K = 4, 3000 steps
  std::vector<double> ratios;
  for (std::uint64_t seed : {1, 2, 3}) {
    const GeneratorConfig gen = desk_config(seed);
    auto dict = gen_dictionary(gen);
    TrainConfig cfg;
    cfg.seed = seed;
    const TrainResult r = train(NetKind::lista, 4, dict, gen, cfg);
    const Batch test = make_test_set(dict, gen, cfg.test_size, cfg.seed);
    std::vector<double> gap_net, gap_ista;
    const Matrix Z = network_output(r.params, test);
    const Matrix Zi = network_output(init_network(NetKind::lista, *dict, gen.lambda, 4), test);
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      const Problem p = test.problem(i);
      const ReferenceSolution ref = solve_reference(p);
      ASSERT_TRUE(ref.certified);
      gap_net.push_back(cost(p, Z.col(i)) - ref.f_star);
      gap_ista.push_back(cost(p, Zi.col(i)) - ref.f_star);
    }
    auto median = [](std::vector<double> v) {
      std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
      return v[v.size() / 2];
    };
    ratios.push_back(median(gap_net) / median(gap_ista));
  }
  std::sort(ratios.begin(), ratios.end());
  EXPECT_LT(ratios[1], 1.0);
}

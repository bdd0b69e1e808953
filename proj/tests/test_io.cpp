#include "sclab/io.hpp"
#include "sclab/training.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace sclab;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sclab_test_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(DictionaryFormat, RoundTripIsExact) {
  for (DictKind kind : {DictKind::gaussian, DictKind::adversarial}) {
    const auto d = gen_dictionary(sclab::testing::desk_config(3, kind));
    const fs::path path = scratch(std::string("dict_") + to_string(kind) + ".txt");
    save_dictionary(path, *d);
    const auto back = load_dictionary(path);
    EXPECT_EQ(back->D, d->D);
    EXPECT_EQ(back->kind, d->kind);
    EXPECT_EQ(back->seed, d->seed);
    EXPECT_EQ(back->zeta, d->zeta);
    EXPECT_EQ(back->L, d->L);
    EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  }
}

TEST(DictionaryFormat, Errors) {
  EXPECT_THROW(parse_dictionary("sclab-dictionary 2\n"), FormatError);
  EXPECT_THROW(parse_dictionary("sclab-dictionary 1\nkind gaussian\nseed 0\nn 2\nm 2\nzeta 0\nD\n1 0\n0\n"), FormatError);
  EXPECT_THROW(parse_dictionary("sclab-dictionary 1\nkind weird\n"), FormatError);
  EXPECT_THROW(load_dictionary(scratch("missing.txt")), std::runtime_error);
}

TEST(CheckpointFormat, RoundTripAllKinds) {
  const Problem p = sclab::testing::random_problem(4);
  Rng rng(4);
  for (NetKind kind : {NetKind::lista, NetKind::lfista, NetKind::facnet, NetKind::linear}) {
    NetworkParams params = init_network(kind, p.dictionary(), p.lambda(), 3, 0.25);
    for (auto& v : tensor_views(params))
      for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] += 1e-3 * rng.normal();
    const fs::path path = scratch(std::string("ckpt_") + to_string(kind) + ".txt");
    save_checkpoint(path, params, p.m(), p.n());
    const Checkpoint c = load_checkpoint(path);
    EXPECT_EQ(kind_of(c.params), kind);
    EXPECT_EQ(c.m, p.m());
    EXPECT_EQ(c.n, p.n());
    NetworkParams back = c.params;
    auto a = tensor_views(params), b = tensor_views(back);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t)
      for (Eigen::Index i = 0; i < a[t].size; ++i) ASSERT_EQ(a[t].data[i], b[t].data[i]) << a[t].name;
    if (kind == NetKind::facnet) {
      EXPECT_EQ(std::get<FacnetParams>(back).mu, 0.25);
    }
  }
}

TEST(CheckpointFormat, RejectsWrongTensorOrder) {
  const Problem p = sclab::testing::random_problem(5);
  std::string text = format_checkpoint(facnet_init_identity(p.dictionary(), 2), p.m(), p.n());
  const auto pos = text.find("layer1.S");
  text.replace(pos, 8, "layer1.X");
  EXPECT_THROW(parse_checkpoint(text), FormatError);
}

TEST(Csv, RoundTripWithHeader) {
  Rng rng(6);
  const Matrix M = sclab::testing::gaussian_matrix(rng, 5, 3);
  const fs::path path = scratch("m.csv");
  save_csv(path, M, {"a", "b", "c"});
  EXPECT_EQ(load_csv(path), M);
  EXPECT_EQ(parse_csv("1,2\n3,4\n"), (Matrix(2, 2) << 1, 2, 3, 4).finished());
  EXPECT_THROW(parse_csv("1,2\n3\n"), FormatError);
  EXPECT_THROW(parse_csv("x\n"), FormatError);
  EXPECT_THROW(parse_csv("1,zz\n"), FormatError);
}

TEST(TrainTraceFormat, Header) {
  TrainTrace t;
  t.records.push_back({0, 1.5, 2.5, 0.0});
  std::ostringstream os;
  write_train_trace_csv(os, t);
  EXPECT_EQ(os.str(), "step,train_loss,test_loss,penalty\n0,1.5,2.5,0\n");
}

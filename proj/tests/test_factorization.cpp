#include "sclab/factorization.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace sclab;
using sclab::testing::gaussian_matrix;
using sclab::testing::gaussian_vector;
using sclab::testing::random_orthogonal;
using sclab::testing::random_problem;

namespace {

Matrix rotation45() {
  const double c = std::sqrt(0.5);
  Matrix A(2, 2);
  A << c, -c, c, c;
  return A;
}

Matrix signed_permutation(Rng& rng, Eigen::Index m) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = m - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  Matrix P = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) P(i, perm[static_cast<std::size_t>(i)]) = rng.bernoulli(0.5) ? 1.0 : -1.0;
  return P;
}

/// Vector with every |z_i| and |(A z)_i| at least `floor`.
Vector kink_free(Rng& rng, const Matrix& A, double floor) {
  for (;;) {
    const Vector z = gaussian_vector(rng, A.cols());
    if (z.cwiseAbs().minCoeff() >= floor && (A * z).cwiseAbs().minCoeff() >= floor) return z;
  }
}

}  // namespace

TEST(DeltaA, Examples) {
  Rng rng(1);
  const Vector z = gaussian_vector(rng, 6);
  EXPECT_EQ(delta_A(Matrix::Identity(6, 6), z, 0.3), 0.0);
  EXPECT_NEAR(delta_A(signed_permutation(rng, 6), z, 0.3), 0.0, 1e-15);
  Vector e(2);
  e << 1.0, 0.0;
  EXPECT_NEAR(delta_A(rotation45(), e, 0.1), 0.1 * (std::sqrt(2.0) - 1.0), 1e-15);
  EXPECT_NEAR(delta_A(rotation45(), e, 0.1), 0.0414214, 1e-7);
  EXPECT_THROW(delta_A(Matrix::Identity(3, 3), z, 0.1), std::invalid_argument);
}

TEST(DeltaSubgradient, IdentityAndZero) {
  Rng rng(2);
  const Vector z = gaussian_vector(rng, 5);
  EXPECT_EQ(delta_subgradient(Matrix::Identity(5, 5), z, 0.2), Vector::Zero(5));
  EXPECT_EQ(delta_subgradient(random_orthogonal(rng, 5), Vector::Zero(5), 0.2), Vector::Zero(5));
}

TEST(DeltaSubgradient, MatchesCentralDifferences) {
  Rng rng(3);
  const double h = 1e-6;
  for (int t = 0; t < 50; ++t) {
    const Matrix A = random_orthogonal(rng, 8);
    const Vector z = kink_free(rng, A, 1e-3);
    const Vector g = delta_subgradient(A, z, 0.7);
    for (int i = 0; i < 8; ++i) {
      Vector zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      const double fd = (delta_A(A, zp, 0.7) - delta_A(A, zm, 0.7)) / (2.0 * h);
      EXPECT_NEAR(g(i), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(LipschitzEstimate, Examples) {
  Rng rng(4);
  const Vector z = gaussian_vector(rng, 6);
  EXPECT_EQ(lipschitz_estimate(Matrix::Identity(6, 6), z, 0.1).local, 0.0);
  // |z|_0 = 3, |A z|_0 = 4 with a block rotation
  Matrix A = Matrix::Identity(4, 4);
  A.topLeftCorner(2, 2) = rotation45();
  Vector v(4);
  v << 1.0, 0.0, 2.0, 3.0;
  const LipschitzEstimate est = lipschitz_estimate(A, v, 0.1);
  EXPECT_NEAR(est.upper, 0.1 * (std::sqrt(3.0) + 2.0), 1e-15);
  EXPECT_NEAR(est.upper, 0.3732, 1e-4);
}

TEST(LipschitzEstimate, LocalBoundsNearbyDifferenceQuotients) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const Matrix A = random_orthogonal(rng, 6);
    const Vector z = kink_free(rng, A, 0.05);
    const double local = lipschitz_estimate(A, z, 0.5).local;
    for (int s = 0; s < 50; ++s) {
      Vector dir = gaussian_vector(rng, 6);
      dir *= 1e-3 * rng.uniform() / dir.norm();
      const Vector z2 = z + dir;
      const double q = std::abs(delta_A(A, z, 0.5) - delta_A(A, z2, 0.5)) / dir.norm();
      EXPECT_LE(q, local + 1e-6);
    }
  }
}

TEST(CommutationBound, HoldsForRandomUnitaryPairs) {
  Rng rng(6);
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index m = 4 + static_cast<Eigen::Index>(rng.below(12));
    const Matrix A = t % 2 ? random_orthogonal(rng, m) : sclab::testing::near_identity_rotation(rng, m, 0.3);
    Vector z = gaussian_vector(rng, m);
    for (Eigen::Index i = 0; i < m; ++i)
      if (rng.bernoulli(0.5)) z(i) = 0.0;
    const double lam = 0.01 + rng.uniform();
    const double l0 = static_cast<double>(std::max(count_nonzero(A * z), count_nonzero(z)));
    const double spec = Eigen::JacobiSVD<Matrix>(A - Matrix::Identity(m, m)).singularValues()(0);
    const double rhs = lam * std::sqrt(2.0 * l0) * spec * z.norm();
    EXPECT_LE(std::abs(delta_A(A, z, lam)), rhs + 1e-9);
  }
}

TEST(Residual, Examples) {
  const Factorization f = Factorization::identity(3, 2.0);
  const ResidualInfo r = residual(f, Matrix::Identity(3, 3));
  EXPECT_TRUE(r.R.isApprox(Matrix::Identity(3, 3)));
  EXPECT_NEAR(r.min_eig, 1.0, 1e-14);
  EXPECT_NEAR(r.spec_norm, 1.0, 1e-14);

  const Problem p = random_problem(3);
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.B());
  const Factorization eig(es.eigenvectors().transpose(), es.eigenvalues());
  EXPECT_LE(residual(eig, p.B()).spec_norm, 1e-10);

  const ResidualInfo ista = residual(Factorization::identity(p.m(), p.L()), p.B());
  EXPECT_GE(ista.min_eig, -1e-9);
  EXPECT_LE((ista.R - ista.R.transpose()).norm(), 1e-12);
}

TEST(FactorizationType, DefectAndValidity) {
  Rng rng(7);
  const Matrix A = gaussian_matrix(rng, 5, 5);
  Factorization f(A, Vector::Ones(5));
  EXPECT_NEAR(f.unitarity_defect(), unitarity_defect(A), 1e-12);
  EXPECT_TRUE(f.valid());
  Vector S = Vector::Ones(5);
  S(2) = 0.0;
  EXPECT_FALSE(Factorization(A, S).valid());
  EXPECT_FALSE(f.residual_min_eig().has_value());
  const Factorization g = f.with_residual(Matrix::Zero(5, 5));
  ASSERT_TRUE(g.residual_min_eig().has_value());
  EXPECT_THROW(Factorization(A, Vector::Ones(4)), std::invalid_argument);
}

TEST(RotatedProx, IdentityEqualsIstaBitForBit) {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = random_problem(seed);
    const Factorization f = Factorization::identity(p.m(), p.L());
    Vector z = Vector::Zero(p.m());
    for (int k = 0; k < 20; ++k) {
      const Vector a = rotated_prox_step(p, f, z);
      ASSERT_EQ(a, ista_step(p, z));
      z = a;
    }
    const Vector r = gaussian_vector(rng, p.m());
    ASSERT_EQ(rotated_prox_step(p, f, r), ista_step(p, r));
  }
}

TEST(RotatedProx, SignedPermutationEqualsIsta) {
  Rng rng(9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = random_problem(seed);
    const Factorization f(signed_permutation(rng, p.m()), Vector::Constant(p.m(), p.L()));
    const Vector z = gaussian_vector(rng, p.m());
    EXPECT_EQ(rotated_prox_step(p, f, z), ista_step(p, z));
  }
}

TEST(RotatedProx, MinimizesSurrogateOnGrid) {
  // surrogate: F(v) + 1/2 (v - z)^T R (v - z) + delta_A(v)
  Rng rng(10);
  for (int t = 0; t < 5; ++t) {
    const Matrix D = gaussian_matrix(rng, 2, 2);
    const Vector x = gaussian_vector(rng, 2);
    const Problem p = build_problem(D, x, 0.2);
    const Matrix A = rotation45();
    const Vector S = sclab::testing::inflate_until_psd(A, (A * p.B() * A.transpose()).diagonal(), p.B(), p.L());
    const Factorization f(A, S);
    const Matrix R = residual(f, p.B()).R;
    const Vector z = gaussian_vector(rng, 2);
    auto surrogate = [&](const Vector& v) {
      return cost(p, v) + 0.5 * (v - z).dot(R * (v - z)) + delta_A(A, v, p.lambda());
    };
    const Vector zn = rotated_prox_step(p, f, z);
    const double best = surrogate(zn);
    const double step = 0.01;
    double grid_min = std::numeric_limits<double>::infinity();
    for (int i = -300; i <= 300; ++i)
      for (int j = -300; j <= 300; ++j) {
        Vector v(2);
        v << zn(0) + i * step, zn(1) + j * step;
        grid_min = std::min(grid_min, surrogate(v));
      }
    EXPECT_LE(best, grid_min + 1e-12);
  }
}

TEST(RotatedProx, Errors) {
  const Problem p = random_problem(1);
  Vector S = Vector::Constant(p.m(), p.L());
  S(0) = 0.0;
  EXPECT_THROW(rotated_prox_step(p, Factorization(Matrix::Identity(p.m(), p.m()), S), Vector::Zero(p.m())),
               std::invalid_argument);
}

TEST(RotatedLayer, BatchedMatchesSingle) {
  Rng rng(11);
  const Problem p = random_problem(2);
  const Matrix A = sclab::testing::near_identity_rotation(rng, p.m(), 0.2);
  const Vector S = sclab::testing::inflate_until_psd(A, Vector::Constant(p.m(), p.L()), p.B(), p.L());
  const Factorization f(A, S);
  const Matrix Z = gaussian_matrix(rng, p.m(), 3);
  const Matrix C = p.Dtx().replicate(1, 3);
  const Matrix out = rotated_prox_forward(A, S, p.lambda(), p.B(), C, Z);
  for (int j = 0; j < 3; ++j) EXPECT_LE((out.col(j) - rotated_prox_step(p, f, Z.col(j))).norm(), 1e-13);
}

TEST(CertifiedSubgradient, VanishesForSignedPermutations) {
  Rng rng(12);
  const Problem p = random_problem(5);
  const Factorization f(signed_permutation(rng, p.m()), Vector::Constant(p.m(), p.L()));
  const RotatedStep st = rotated_prox_detail(p, f, Vector::Zero(p.m()));
  EXPECT_EQ(certified_delta_subgradient(f, st, p.lambda()), Vector::Zero(p.m()));
}

TEST(CertifiedSubgradient, CertifiesFirstOrderOptimality) {
  // -R (z+ - z) - g - grad E(z+) must lie in lambda d|z+|_1
  Rng rng(13);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = random_problem(seed);
    const Matrix A = sclab::testing::near_identity_rotation(rng, p.m(), 0.3);
    const Vector S = sclab::testing::inflate_until_psd(A, Vector::Constant(p.m(), p.L()), p.B(), p.L());
    const Factorization f(A, S);
    const Vector z = 3.0 * gaussian_vector(rng, p.m());
    const RotatedStep st = rotated_prox_detail(p, f, z);
    const Vector g = certified_delta_subgradient(f, st, p.lambda());
    const Matrix R = residual(f, p.B()).R;
    const Vector v = -(R * (st.z_next - z)) - g - smooth_gradient(p, st.z_next);
    for (Eigen::Index i = 0; i < p.m(); ++i) {
      if (st.z_next(i) != 0.0) {
        EXPECT_NEAR(v(i), p.lambda() * sign(st.z_next(i)), 1e-9);
      } else {
        EXPECT_LE(std::abs(v(i)), p.lambda() + 1e-9);
      }
    }
  }
}

TEST(StiefelProject, Examples) {
  Rng rng(14);
  const Matrix Q = random_orthogonal(rng, 6);
  EXPECT_LE((stiefel_project(Q).Q - Q).norm(), 1e-12);
  EXPECT_LE((stiefel_project(2.0 * Matrix::Identity(4, 4)).Q - Matrix::Identity(4, 4)).norm(), 1e-14);
  const StiefelProjection rd = stiefel_project(Matrix::Zero(3, 3));
  EXPECT_TRUE(rd.rank_deficient);
  EXPECT_LE(unitarity_defect(rd.Q), 1e-10);
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(stiefel_project(bad), std::invalid_argument);
}

TEST(StiefelProject, ClosestUnitaryAndIdempotent) {
  Rng rng(15);
  for (int t = 0; t < 5; ++t) {
    const Matrix A = gaussian_matrix(rng, 5, 5);
    const StiefelProjection pr = stiefel_project(A);
    EXPECT_FALSE(pr.rank_deficient);
    EXPECT_LE(unitarity_defect(pr.Q), 1e-10);
    EXPECT_LE((stiefel_project(pr.Q).Q - pr.Q).norm(), 1e-12);
    const double d = (A - pr.Q).norm();
    for (int s = 0; s < 1000; ++s) EXPECT_LE(d, (A - random_orthogonal(rng, 5)).norm() + 1e-12);
  }
}

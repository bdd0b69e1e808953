#pragma once

#include "sclab/generators.hpp"
#include "sclab/rng.hpp"
#include "sclab/solvers.hpp"

#include <cstdint>

namespace sclab::testing {

inline Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = rng.normal();
  return M;
}

inline Vector gaussian_vector(Rng& rng, Eigen::Index n) { return gaussian_matrix(rng, n, 1).col(0); }

/// Haar-ish orthogonal matrix from the QR of a Gaussian matrix.
inline Matrix random_orthogonal(Rng& rng, Eigen::Index m) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rng, m, m));
  Matrix Q = qr.householderQ();
  const Vector d = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < m; ++j)
    if (d(j) < 0) Q.col(j) *= -1.0;
  return Q;
}

/// Cayley transform of a scaled skew matrix: orthogonal, |A - I| = O(eps).
inline Matrix near_identity_rotation(Rng& rng, Eigen::Index m, double eps) {
  Matrix W = gaussian_matrix(rng, m, m);
  W = (eps / std::sqrt(static_cast<double>(m)) * (W - W.transpose())).eval();
  const Matrix I = Matrix::Identity(m, m);
  return (I - W).partialPivLu().solve(I + W);
}

inline GeneratorConfig desk_config(std::uint64_t seed, DictKind kind = DictKind::gaussian) {
  GeneratorConfig cfg;
  cfg.n = 16;
  cfg.m = 32;
  cfg.rho = 5.0 / 32.0;
  cfg.sigma = 10.0;
  cfg.lambda = 0.01;
  cfg.dict_kind = kind;
  cfg.seed = seed;
  return cfg;
}

/// Gaussian-dictionary problem with a Bernoulli-Gaussian planted code.
inline Problem random_problem(std::uint64_t seed, double rho = 5.0 / 32.0, double lambda = 0.01, int n = 16,
                              int m = 32) {
  GeneratorConfig cfg = desk_config(seed);
  cfg.n = n;
  cfg.m = m;
  cfg.rho = rho;
  cfg.lambda = lambda;
  auto dict = gen_gaussian_dictionary(cfg);
  const SampleBatch batch = sample_codes(cfg, dict->D, 1, seed + 1000);
  return build_problem(dict, batch.signals.col(0), lambda);
}

/// S raised uniformly until A^T S A - B is PSD with a little margin.
inline Vector inflate_until_psd(const Matrix& A, Vector S, const Matrix& B, double L) {
  for (int it = 0; it < 10000; ++it) {
    const Matrix R = A.transpose() * S.asDiagonal() * A - B;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) > 1e-6 * L) return S;
    S.array() += 0.02 * L;
  }
  return S;
}

}  // namespace sclab::testing

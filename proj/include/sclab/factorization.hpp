#pragma once

// Factorizations B ~ A^T S A (A unitary, S positive diagonal), the rotated
// proximal step they induce, and the l1 commutation error delta_A.

#include "sclab/problem.hpp"
#include "sclab/solvers.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace sclab {

/// |I - A^T A|_F
inline double unitarity_defect(const Matrix& A) {
  return (Matrix::Identity(A.cols(), A.cols()) - A.transpose() * A).norm();
}

class Factorization {
 public:
  Factorization(Matrix A, Vector S) : A_(std::move(A)), S_(std::move(S)) {
    detail::require(A_.rows() == A_.cols(), "factorization: A must be square");
    detail::require_dims(S_.size(), A_.rows(), "factorization S");
    defect_ = sclab::unitarity_defect(A_);
  }

  /// (I, scale * 1), the ISTA factorization when scale = |B|.
  static Factorization identity(Eigen::Index m, double scale) {
    return Factorization(Matrix::Identity(m, m), Vector::Constant(m, scale));
  }

  const Matrix& A() const { return A_; }
  const Vector& S() const { return S_; }
  Eigen::Index m() const { return A_.rows(); }
  double unitarity_defect() const { return defect_; }
  bool valid() const { return (S_.array() > 0.0).all(); }

  std::optional<double> residual_min_eig() const { return residual_min_eig_; }

  /// Copy carrying min eig of A^T S A - B.
  Factorization with_residual(const Matrix& B) const;

 private:
  Matrix A_;
  Vector S_;
  double defect_ = 0.0;
  std::optional<double> residual_min_eig_;
};

/// delta_A(z) = lambda (|A z|_1 - |z|_1)
inline double delta_A(const Matrix& A, const Vector& z, double lambda) {
  detail::require_dims(A.cols(), z.size(), "delta_A");
  return lambda * ((A * z).lpNorm<1>() - z.lpNorm<1>());
}

/// lambda (A^T sign(A z) - sign(z)), sign(0) = 0. The gradient wherever no
/// coordinate of z or A z vanishes.
inline Vector delta_subgradient(const Matrix& A, const Vector& z, double lambda) {
  detail::require_dims(A.cols(), z.size(), "delta_subgradient");
  const Vector az = A * z;
  return lambda * (A.transpose() * sign(az) - sign(z));
}

inline Eigen::Index count_nonzero(const Vector& v, double zero_tol = 1e-10) {
  return (v.array().abs() > zero_tol).count();
}

struct LipschitzEstimate {
  double upper = 0.0;  // lambda (sqrt|z|_0 + sqrt|A z|_0)
  double local = 0.0;  // |delta_subgradient(A, z)|_2
};

inline LipschitzEstimate lipschitz_estimate(const Matrix& A, const Vector& z, double lambda, double zero_tol = 1e-10) {
  detail::require_dims(A.cols(), z.size(), "lipschitz_estimate");
  const Vector az = A * z;
  LipschitzEstimate est;
  est.upper = lambda * (std::sqrt(static_cast<double>(count_nonzero(z, zero_tol))) +
                        std::sqrt(static_cast<double>(count_nonzero(az, zero_tol))));
  est.local = delta_subgradient(A, z, lambda).norm();
  return est;
}

/// Exactly one nonzero entry per row and column, each equal to +-1.
inline bool is_signed_permutation(const Matrix& A) {
  if (A.rows() != A.cols()) return false;
  std::vector<int> col_hits(static_cast<std::size_t>(A.cols()), 0);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    int hits = 0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      const double a = A(i, j);
      if (a == 0.0) continue;
      if (a != 1.0 && a != -1.0) return false;
      ++hits;
      ++col_hits[static_cast<std::size_t>(j)];
    }
    if (hits != 1) return false;
  }
  return std::all_of(col_hits.begin(), col_hits.end(), [](int h) { return h == 1; });
}

/// Lipschitz constant of delta_A used by the bound evaluators: exactly 0 when
/// delta_A vanishes identically (signed permutations), the sparsity upper
/// bound otherwise.
inline double lipschitz_constant(const Matrix& A, const Vector& z, double lambda) {
  if (is_signed_permutation(A)) return 0.0;
  return lipschitz_estimate(A, z, lambda).upper;
}

struct ResidualInfo {
  Matrix R;
  double min_eig = 0.0;
  double max_eig = 0.0;
  double spec_norm = 0.0;
};

/// R = A^T S A - B, symmetrized, with its extreme eigenvalues.
inline ResidualInfo residual(const Factorization& f, const Matrix& B) {
  detail::require_dims(B.rows(), f.m(), "residual");
  detail::require_dims(B.cols(), f.m(), "residual");
  ResidualInfo info;
  info.R = f.A().transpose() * f.S().asDiagonal() * f.A() - B;
  info.R = 0.5 * (info.R + info.R.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(info.R, Eigen::EigenvaluesOnly);
  info.min_eig = es.eigenvalues()(0);
  info.max_eig = es.eigenvalues()(es.eigenvalues().size() - 1);
  info.spec_norm = std::max(std::abs(info.min_eig), std::abs(info.max_eig));
  return info;
}

inline Factorization Factorization::with_residual(const Matrix& B) const {
  Factorization out = *this;
  out.residual_min_eig_ = residual(*this, B).min_eig;
  return out;
}

// ---------------------------------------------------------------------------
// Rotated proximal step  z+ = A^T h_{lambda/S}(A z - S^{-1} A (B z - D^T x))

struct RotatedStep {
  Vector z_next;
  Vector u;  // pre-threshold point in rotated coordinates
  Vector w;  // thresholded point in rotated coordinates, w = A z_next
  /// s_A = S (u - w) / lambda, the subgradient of |.|_1 at w certified by the
  /// optimality condition of the separable subproblem.
  Vector certificate;
};

inline RotatedStep rotated_prox_detail(const Problem& p, const Factorization& f, const Vector& z) {
  detail::require_dims(f.m(), p.m(), "rotated_prox_step factorization");
  detail::require_dims(z.size(), p.m(), "rotated_prox_step");
  detail::require(f.valid(), "rotated_prox_step: S entries must be positive");
  const Matrix& A = f.A();
  const Vector& S = f.S();
  RotatedStep step;
  const Vector v = A * z;
  const Vector g = A * smooth_gradient(p, z);
  step.u = v - g.cwiseQuotient(S);
  Vector th(S.size());
  for (Eigen::Index i = 0; i < th.size(); ++i) th(i) = p.lambda() / S(i);
  step.w = soft_threshold(step.u, th);
  step.z_next = A.transpose() * step.w;
  step.certificate = (S.array() * (step.u - step.w).array() / p.lambda()).matrix();
  return step;
}

inline Vector rotated_prox_step(const Problem& p, const Factorization& f, const Vector& z) {
  return rotated_prox_detail(p, f, z).z_next;
}

/// Element of the (difference-of-convex) subdifferential of delta_A at z_next
/// consistent with the step's optimality condition:
///   lambda (A^T s_A - s),  s_i = sign(z_next_i), or clamp((A^T s_A)_i, -1, 1) where z_next_i = 0.
/// With this choice -R (z_next - z) - result is a true subgradient of F at z_next.
inline Vector certified_delta_subgradient(const Factorization& f, const RotatedStep& step, double lambda) {
  if (is_signed_permutation(f.A())) return Vector::Zero(f.m());  // delta_A vanishes identically
  const Vector ats = f.A().transpose() * step.certificate;
  Vector s(ats.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double zi = step.z_next(i);
    s(i) = zi != 0.0 ? sign(zi) : std::clamp(ats(i), -1.0, 1.0);
  }
  return lambda * (ats - s);
}

// ---------------------------------------------------------------------------
// Batched rotated layer with reverse-mode product, shared by FacNet and the
// factorization fit.

struct RotatedLayerCache {
  Matrix Z;   // input iterates
  Matrix Rg;  // B Z - C
  Matrix G;   // A Rg
  Matrix U;   // A Z - S^{-1} G
  Matrix W;   // h_{lambda/S}(U)
};

/// C holds D^T x for every column.
inline Matrix rotated_prox_forward(const Matrix& A, const Vector& S, double lambda, const Matrix& B, const Matrix& C,
                                   const Matrix& Z, RotatedLayerCache* cache = nullptr) {
  detail::require((S.array() > 0.0).all(), "rotated layer: S entries must be positive");
  Matrix Rg = B * Z - C;
  Matrix G = A * Rg;
  Matrix U = A * Z - S.cwiseInverse().asDiagonal() * G;
  Vector theta(S.size());
  for (Eigen::Index i = 0; i < S.size(); ++i) theta(i) = lambda / S(i);
  Matrix W = soft_threshold_rows(U, theta);
  Matrix out = A.transpose() * W;
  if (cache) {
    cache->Z = Z;
    cache->Rg = std::move(Rg);
    cache->G = std::move(G);
    cache->U = std::move(U);
    cache->W = std::move(W);
  }
  return out;
}

/// Accumulates d(loss)/dA, d(loss)/dS and returns d(loss)/dZ for the layer
/// output gradient dOut. Threshold derivative is taken as 0 at |u| = theta.
inline Matrix rotated_prox_vjp(const Matrix& A, const Vector& S, double lambda, const Matrix& B,
                               const RotatedLayerCache& c, const Matrix& dOut, Matrix& dA, Vector& dS) {
  const Eigen::Index m = A.rows();
  const Eigen::Index N = dOut.cols();
  // out = A^T W
  const Matrix dW = A * dOut;
  dA.noalias() += c.W * dOut.transpose();
  // W = h_theta(U), theta = lambda / S ; U = V - G / S
  Matrix dU = Matrix::Zero(m, N);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double theta = lambda / S(i);
    double dtheta = 0.0;
    double dS_from_G = 0.0;
    for (Eigen::Index n = 0; n < N; ++n) {
      const double u = c.U(i, n);
      if (std::abs(u) > theta) {
        const double g = dW(i, n);
        dU(i, n) = g;
        dtheta -= sign(u) * g;
        dS_from_G += g * c.G(i, n);
      }
    }
    dS(i) += dtheta * (-lambda / (S(i) * S(i))) + dS_from_G / (S(i) * S(i));
  }
  const Matrix dG = -(S.cwiseInverse().asDiagonal() * dU);
  dA.noalias() += dG * c.Rg.transpose();
  dA.noalias() += dU * c.Z.transpose();
  const Matrix dRg = A.transpose() * dG;
  Matrix dZ = A.transpose() * dU;
  dZ.noalias() += B * dRg;
  return dZ;
}

// ---------------------------------------------------------------------------

struct StiefelProjection {
  Matrix Q;
  bool rank_deficient = false;
};

/// Closest orthogonal matrix in Frobenius norm, U V^T from A = U Sigma V^T.
inline StiefelProjection stiefel_project(const Matrix& A) {
  detail::require(A.rows() == A.cols(), "stiefel_project: A must be square");
  detail::require(A.allFinite(), "stiefel_project: non-finite entries");
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  StiefelProjection out;
  out.Q = svd.matrixU() * svd.matrixV().transpose();
  const Vector& s = svd.singularValues();
  out.rank_deficient = s.size() > 0 && s(s.size() - 1) <= 1e-12 * std::max(1.0, s(0));
  return out;
}

}  // namespace sclab

#pragma once

// Dataset-adapted factorization: descent on the empirical one-step bound
//   mean_i 1/2 e_i^T (A^T S A - B) e_i + delta_A(z*_i) - delta_A(z1_i),
// e_i = z0_i - z*_i, z1_i the rotated step from z0_i.

#include "sclab/factorization.hpp"

#include <limits>
#include <stdexcept>
#include <vector>

namespace sclab {

struct FitSample {
  Vector z0;
  Vector z_star;
  Vector correlation;  // D^T x of the sample
};

enum class FitMethod {
  /// A retracted onto the orthogonal group after every step, R > 0 kept by a
  /// log-det barrier with a decreasing weight.
  retraction_barrier,
  /// Plain descent on A, S with the unitarity penalty and a hinge on negative
  /// eigenvalues of R; projection and repair only on candidates.
  penalty,
};

struct FitOptions {
  FitMethod method = FitMethod::retraction_barrier;
  int iterations = 500;
  double mu = 1.0;           // weight of |I - A^T A|_F^2
  double psd_weight = -1.0;  // weight of the negative-eigenvalue hinge; <= 0 means 10 |B|
  double initial_step = 1e-3;
  double armijo = 1e-4;
  int check_every = 10;      // candidate (projected + repaired) evaluation period
  bool repair = true;        // uniform S shift to restore R >= 0 on returned candidates
  double barrier_start = 1e-1;  // initial barrier weight, relative to the data scale
  double barrier_decay = 0.7;   // applied every `check_every` iterations
  double barrier_floor = 1e-6;
  /// l1 smoothing width for descent directions, relative to the rms of z*;
  /// candidates are always scored with the exact objective.
  double smoothing = 1e-2;
};

struct FitResult {
  Factorization factorization = Factorization::identity(1, 1.0);
  double objective = 0.0;
  double init_objective = 0.0;
  double residual_norm = 0.0;
  double residual_min_eig = 0.0;
  int iterations = 0;
  int best_iteration = 0;  // 0: a starting candidate was never improved on
  double repair_shift = 0.0;
};

class FitDiverged : public std::runtime_error {
 public:
  FitDiverged(const std::string& what, Factorization last) : std::runtime_error(what), last_(std::move(last)) {}
  const Factorization& last_finite() const { return last_; }

 private:
  Factorization last_;
};

namespace detail {

struct FitData {
  Matrix Z0, Zs, C, E;  // columns per sample, E = Z0 - Zs
  Matrix cov;           // E E^T / N
  double delta_star_mean = 0.0;
};

inline FitData pack(const std::vector<FitSample>& data, Eigen::Index m) {
  require(!data.empty(), "fit_factorization: empty dataset");
  const auto N = static_cast<Eigen::Index>(data.size());
  FitData d;
  d.Z0.resize(m, N);
  d.Zs.resize(m, N);
  d.C.resize(m, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const FitSample& s = data[static_cast<std::size_t>(i)];
    require_dims(s.z0.size(), m, "fit sample z0");
    require_dims(s.z_star.size(), m, "fit sample z_star");
    require_dims(s.correlation.size(), m, "fit sample correlation");
    d.Z0.col(i) = s.z0;
    d.Zs.col(i) = s.z_star;
    d.C.col(i) = s.correlation;
  }
  d.E = d.Z0 - d.Zs;
  d.cov = d.E * d.E.transpose() / static_cast<double>(N);
  return d;
}

/// mean over columns of sum_i psi(M_ij), psi(t) = |t| or its smoothed version
/// sqrt(t^2 + eps^2) - eps; dpsi receives psi'.
inline double mean_abs_cols(const Matrix& M, double eps, Matrix* dpsi) {
  const double N = static_cast<double>(M.cols());
  if (eps <= 0.0) {
    if (dpsi) *dpsi = sign(M);
    return M.cwiseAbs().sum() / N;
  }
  const Matrix root = (M.array().square() + eps * eps).sqrt().matrix();
  if (dpsi) *dpsi = M.cwiseQuotient(root);
  return (root.array() - eps).sum() / N;
}

/// Objective without penalties; accumulates gradients when requested. With eps > 0
/// every l1 term is smoothed (used for descent directions only).
inline double fit_objective(const FitData& d, const Matrix& B, double lambda, const Matrix& A, const Vector& S,
                            Matrix* gA, Vector* gS, double eps = 0.0) {
  const double N = static_cast<double>(d.Z0.cols());
  const Matrix AC = A * d.cov;
  // quadratic term 1/2 tr((A^T S A - B) cov)
  double value = 0.5 * ((S.asDiagonal() * AC).cwiseProduct(A).sum() - B.cwiseProduct(d.cov).sum());
  const bool grad = gA != nullptr;
  Matrix sAZs, sZs, sAZ1, sZ1;
  const Matrix AZs = A * d.Zs;
  value += lambda * (mean_abs_cols(AZs, eps, grad ? &sAZs : nullptr) - mean_abs_cols(d.Zs, eps, nullptr));
  RotatedLayerCache cache;
  const Matrix Z1 = rotated_prox_forward(A, S, lambda, B, d.C, d.Z0, grad ? &cache : nullptr);
  const Matrix AZ1 = A * Z1;
  value -= lambda * (mean_abs_cols(AZ1, eps, grad ? &sAZ1 : nullptr) - mean_abs_cols(Z1, eps, grad ? &sZ1 : nullptr));
  if (grad) {
    gA->noalias() += S.asDiagonal() * AC;
    *gS += 0.5 * (AC.cwiseProduct(A)).rowwise().sum();
    gA->noalias() += (lambda / N) * sAZs * d.Zs.transpose();
    gA->noalias() -= (lambda / N) * sAZ1 * Z1.transpose();
    const Matrix dZ1 = -(lambda / N) * (A.transpose() * sAZ1 - sZ1);
    rotated_prox_vjp(A, S, lambda, B, cache, dZ1, *gA, *gS);
  }
  return value;
}

/// Unitarity and PSD penalties: mu |I - A^T A|^2 + rho sum_i min(0, eig_i(R))^2.
inline double fit_penalty(const Matrix& B, double mu, double rho, const Matrix& A, const Vector& S, Matrix* gA,
                          Vector* gS) {
  const Eigen::Index m = A.rows();
  const Matrix AtA = A.transpose() * A;
  const Matrix defect = AtA - Matrix::Identity(m, m);
  double value = mu * defect.squaredNorm();
  Matrix R = A.transpose() * S.asDiagonal() * A - B;
  R = 0.5 * (R + R.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(R);
  const Vector& ev = es.eigenvalues();
  Matrix neg = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m && ev(i) < 0.0; ++i) {
    value += rho * ev(i) * ev(i);
    neg.noalias() += ev(i) * es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
  }
  if (gA) {
    gA->noalias() += (4.0 * mu) * A * defect;
    // d/dR of rho |R_-|_F^2 is 2 rho R_-
    const Matrix dR = 2.0 * rho * neg;
    gA->noalias() += 2.0 * S.asDiagonal() * A * dR;
    *gS += (A * dR * A.transpose()).diagonal();
  }
  return value;
}

/// -tau log det R, +inf outside R > 0.
inline double fit_barrier(const Matrix& B, double tau, const Matrix& A, const Vector& S, Matrix* gA, Vector* gS) {
  Matrix R = A.transpose() * S.asDiagonal() * A - B;
  R = 0.5 * (R + R.transpose()).eval();
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Vector diagL = Matrix(llt.matrixL()).diagonal();
  if ((diagL.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
  const double value = -2.0 * tau * diagL.array().log().sum();
  if (gA) {
    const Matrix dR = -tau * llt.solve(Matrix::Identity(R.rows(), R.cols()));
    gA->noalias() += 2.0 * S.asDiagonal() * A * dR;
    *gS += (A * dR * A.transpose()).diagonal();
  }
  return value;
}

struct Candidate {
  Matrix A;
  Vector S;
  double objective = std::numeric_limits<double>::infinity();
  double shift = 0.0;
};

/// Stiefel projection of A, S clamped, then S shifted uniformly until R >= 0.
inline Candidate make_feasible(const FitData& d, const Matrix& B, double lambda, const Matrix& A, const Vector& S,
                               bool repair) {
  Candidate c;
  c.A = stiefel_project(A).Q;
  c.S = S.cwiseMax(1e-8);
  if (repair) {
    const double min_eig = residual(Factorization(c.A, c.S), B).min_eig;
    if (min_eig < 0.0) {
      c.shift = -min_eig * (1.0 + 1e-12) + 1e-15 * B.norm();
      c.S.array() += c.shift;
    }
  }
  c.objective = fit_objective(d, B, lambda, c.A, c.S, nullptr, nullptr);
  return c;
}

}  // namespace detail

inline std::vector<FitSample> make_fit_dataset(const std::vector<Vector>& z0, const std::vector<Vector>& z_star,
                                               const std::vector<Vector>& correlation) {
  detail::require(z0.size() == z_star.size() && z0.size() == correlation.size(),
                  "make_fit_dataset: list lengths differ");
  std::vector<FitSample> out;
  out.reserve(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out.push_back({z0[i], z_star[i], correlation[i]});
  return out;
}

/// Empirical objective of a factorization on a dataset (no penalties).
inline double factorization_objective(const std::vector<FitSample>& data, const Matrix& B, double lambda,
                                      const Factorization& f) {
  const detail::FitData d = detail::pack(data, f.m());
  return detail::fit_objective(d, B, lambda, f.A(), f.S(), nullptr, nullptr);
}

namespace detail {

inline void finish(FitResult& result, const Candidate& best, const Matrix& B) {
  result.factorization = Factorization(best.A, best.S).with_residual(B);
  result.objective = best.objective;
  result.repair_shift = best.shift;
  const ResidualInfo res = residual(result.factorization, B);
  result.residual_norm = res.spec_norm;
  result.residual_min_eig = res.min_eig;
}

inline FitResult fit_penalty_method(const FitData& d, const Matrix& B, double lambda, const FitOptions& opts,
                                    Candidate best, FitResult result, double B_norm) {
  const Eigen::Index m = B.rows();
  const double rho = opts.psd_weight > 0.0 ? opts.psd_weight : 10.0 * B_norm;
  Matrix A = best.A;
  Vector S = best.S;
  auto penalized = [&](const Matrix& a, const Vector& s, Matrix* ga, Vector* gs) {
    if (ga) {
      ga->setZero(m, m);
      gs->setZero(m);
    }
    return fit_objective(d, B, lambda, a, s, ga, gs) + fit_penalty(B, opts.mu, rho, a, s, ga, gs);
  };

  Matrix gA(m, m);
  Vector gS(m);
  double value = penalized(A, S, &gA, &gS);
  double step = opts.initial_step;
  int it = 0;
  for (it = 1; it <= opts.iterations; ++it) {
    const double g2 = gA.squaredNorm() + gS.squaredNorm();
    if (!(g2 > 0.0)) break;
    Matrix A_try;
    Vector S_try;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      A_try = A - step * gA;
      S_try = (S - step * gS).cwiseMax(1e-8);
      const double v_try = penalized(A_try, S_try, nullptr, nullptr);
      if (std::isfinite(v_try) && v_try <= value - opts.armijo * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    A = std::move(A_try);
    S = std::move(S_try);
    value = penalized(A, S, &gA, &gS);
    if (!std::isfinite(value)) throw FitDiverged("fit_factorization: objective is not finite", {A, S});
    step *= 2.0;
    if (it % opts.check_every == 0) {
      Candidate c = make_feasible(d, B, lambda, A, S, opts.repair);
      if (c.objective < best.objective) {
        best = std::move(c);
        result.best_iteration = it;
      }
    }
  }
  result.iterations = std::min(it, opts.iterations);
  Candidate last = make_feasible(d, B, lambda, A, S, opts.repair);
  if (last.objective < best.objective) {
    best = std::move(last);
    result.best_iteration = result.iterations;
  }
  finish(result, best, B);
  return result;
}

inline FitResult fit_barrier_method(const FitData& d, const Matrix& B, double lambda, const FitOptions& opts,
                                    Candidate best, FitResult result, double B_norm) {
  const Eigen::Index m = B.rows();
  // strictly feasible start: lift the best starting candidate off the boundary
  Matrix A = best.A;
  Vector S = best.S;
  const double min_eig = residual(Factorization(A, S), B).min_eig;
  S.array() += std::max(0.0, 1e-3 * B_norm - min_eig);

  const double scale = 0.5 * d.cov.trace() / static_cast<double>(m);  // d objective / d S_i, typical
  double tau = opts.barrier_start * scale * B_norm;
  const double tau_floor = opts.barrier_floor * scale * B_norm;
  const double eps = opts.smoothing * std::sqrt(d.Zs.squaredNorm() / static_cast<double>(d.Zs.size()));
  auto total = [&](const Matrix& a, const Vector& s, Matrix* ga, Vector* gs) {
    if (ga) {
      ga->setZero(m, m);
      gs->setZero(m);
    }
    const double bar = fit_barrier(B, tau, a, s, ga, gs);
    if (!std::isfinite(bar)) return bar;
    return fit_objective(d, B, lambda, a, s, ga, gs, eps) + bar;
  };

  Matrix gA(m, m);
  Vector gS(m);
  double value = total(A, S, &gA, &gS);
  double step = opts.initial_step;
  int it = 0;
  for (it = 1; it <= opts.iterations; ++it) {
    Matrix A_try;
    Vector S_try;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      A_try = stiefel_project(A - step * gA).Q;
      S_try = (S - step * gS).cwiseMax(1e-8);
      const double moved = (A_try - A).squaredNorm() + (S_try - S).squaredNorm();
      const double v_try = total(A_try, S_try, nullptr, nullptr);
      if (std::isfinite(v_try) && v_try <= value - opts.armijo * moved / step) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (tau <= tau_floor) break;
      step = opts.initial_step;
    } else {
      A = std::move(A_try);
      S = std::move(S_try);
      step *= 2.0;
    }
    if (it % opts.check_every == 0) {
      Candidate c = make_feasible(d, B, lambda, A, S, opts.repair);
      if (c.objective < best.objective) {
        best = std::move(c);
        result.best_iteration = it;
      }
      tau = std::max(tau_floor, tau * opts.barrier_decay);
    }
    value = total(A, S, &gA, &gS);
    if (std::isnan(value)) throw FitDiverged("fit_factorization: objective is not finite", {A, S});
  }
  result.iterations = std::min(it, opts.iterations);
  Candidate last = make_feasible(d, B, lambda, A, S, opts.repair);
  if (last.objective < best.objective) {
    best = std::move(last);
    result.best_iteration = result.iterations;
  }
  finish(result, best, B);
  return result;
}

}  // namespace detail

/// Descent on the empirical objective from the better of (I, |B| 1) and
/// (I, diag(B) shifted to feasibility). Every `check_every` iterations the
/// projected and repaired iterate competes with the best candidate so far,
/// which is returned, so the result never scores worse than (I, |B| 1).
inline FitResult fit_factorization(const std::vector<FitSample>& data, const Matrix& B, double lambda,
                                   const FitOptions& opts = {}) {
  detail::require(B.rows() == B.cols(), "fit_factorization: B must be square");
  detail::require(lambda > 0.0, "fit_factorization: lambda must be positive");
  detail::require(opts.iterations >= 0 && opts.check_every >= 1, "fit_factorization: bad iteration options");
  const Eigen::Index m = B.rows();
  const detail::FitData d = detail::pack(data, m);
  const double B_norm = detail::spectral_norm_sym_exact(B);
  const Matrix I = Matrix::Identity(m, m);

  FitResult result;
  detail::Candidate best;
  best.A = I;
  best.S = Vector::Constant(m, B_norm);
  best.objective = detail::fit_objective(d, B, lambda, best.A, best.S, nullptr, nullptr);
  result.init_objective = best.objective;
  const detail::Candidate diag = detail::make_feasible(d, B, lambda, I, B.diagonal(), true);
  if (diag.objective < best.objective) best = diag;

  if (opts.method == FitMethod::penalty) return detail::fit_penalty_method(d, B, lambda, opts, best, result, B_norm);
  return detail::fit_barrier_method(d, B, lambda, opts, best, result, B_norm);
}

}  // namespace sclab

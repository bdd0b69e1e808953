#pragma once

// Numerical evaluators for the one-step, multi-step and warm-start
// convergence bounds of factorized proximal splitting.

#include "sclab/factorization.hpp"

#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sclab {

enum class BoundKind { one_step, multi_step, warm_step };

inline const char* to_string(BoundKind k) {
  switch (k) {
    case BoundKind::one_step: return "one_step";
    case BoundKind::multi_step: return "multi_step";
    case BoundKind::warm_step: return "warm_step";
  }
  return "?";
}

struct BoundReport {
  BoundKind kind = BoundKind::one_step;
  int k = 0;
  double bound_value = 0.0;
  double lhs_value = 0.0;
  bool valid = false;
  /// term_residual, term_delta, alpha, beta always present; evaluator
  /// specific extras (alternative forms) are added under their own labels.
  std::map<std::string, double> components;

  double component(const std::string& name) const {
    auto it = components.find(name);
    return it == components.end() ? 0.0 : it->second;
  }
  bool holds(double rel_tol = 1e-9) const { return bound_holds(lhs_value, bound_value, rel_tol); }

  static bool bound_holds(double lhs, double bound, double rel_tol = 1e-9) {
    return lhs <= bound + rel_tol * std::max(1.0, std::abs(bound));
  }
};

/// R PSD up to eigensolver jitter: min_eig >= -1e-8 |B|.
inline bool residual_psd(double min_eig, double B_norm) { return min_eig >= -1e-8 * B_norm; }

namespace detail {

inline double quad(const Vector& v, const Matrix& M) { return v.dot(M * v); }

inline void require_certified(const ReferenceSolution& ref, const Problem& p) {
  require(ref.certified, "bound evaluator: reference solution is not certified");
  require_dims(ref.z_star.size(), p.m(), "bound evaluator reference");
}

}  // namespace detail

/// One factorized step from z_k:
///   F(z_{k+1}) - F(z*) <= 1/2 |R| |z_k - z*|^2 + delta_A(z*) - delta_A(z_{k+1}).
inline BoundReport bound_one_step(const Problem& p, const Factorization& f, const Vector& z_k,
                                const ReferenceSolution& ref) {
  detail::require_certified(ref, p);
  const ResidualInfo res = residual(f, p.B());
  const Vector z1 = rotated_prox_step(p, f, z_k);
  BoundReport r;
  r.kind = BoundKind::one_step;
  r.k = 1;
  const double term_res = 0.5 * res.spec_norm * (z_k - ref.z_star).squaredNorm();
  const double term_delta = delta_A(f.A(), ref.z_star, p.lambda()) - delta_A(f.A(), z1, p.lambda());
  r.bound_value = term_res + term_delta;
  r.lhs_value = cost(p, z1) - ref.f_star;
  r.valid = residual_psd(res.min_eig, p.L());
  r.components = {{"term_residual", term_res}, {"term_delta", term_delta}, {"alpha", 0.0}, {"beta", 0.0},
                  {"residual_min_eig", res.min_eig}};
  return r;
}

struct StepInequality {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  /// Right-hand side with the inner product written as <g, z_{k+1} - z*>.
  double rhs_flipped = 0.0;
};

/// F(z_{k+1}) - F(z*) <= 1/2[(z*-z_k)^T R (z*-z_k) - (z*-z_{k+1})^T R (z*-z_{k+1})]
///                       + <g, z* - z_{k+1}>,
/// g the certified subgradient of delta_A at z_{k+1}.
inline StepInequality step_inequality_check(const Problem& p, const Factorization& f, const Vector& z_k,
                                 const ReferenceSolution& ref) {
  detail::require_certified(ref, p);
  const ResidualInfo res = residual(f, p.B());
  const RotatedStep step = rotated_prox_detail(p, f, z_k);
  const Vector g = certified_delta_subgradient(f, step, p.lambda());
  const Vector e0 = ref.z_star - z_k;
  const Vector e1 = ref.z_star - step.z_next;
  const double base = 0.5 * (detail::quad(e0, res.R) - detail::quad(e1, res.R));
  StepInequality out;
  out.lhs = cost(p, step.z_next) - ref.f_star;
  out.rhs = base + g.dot(e1);
  out.rhs_flipped = base - g.dot(e1);
  out.holds = BoundReport::bound_holds(out.lhs, out.rhs);
  return out;
}

/// z_0 .. z_k generated by rotated steps with fs[0] .. fs[k-1].
inline std::vector<Vector> rotated_trajectory(const Problem& p, const std::vector<Factorization>& fs,
                                              const Vector& z0) {
  std::vector<Vector> zs{z0};
  zs.reserve(fs.size() + 1);
  for (const auto& f : fs) zs.push_back(rotated_prox_step(p, f, zs.back()));
  return zs;
}

/// Multi-step bound for every prefix k = 1..fs.size(). `iterates` holds
/// z_0..z_K and must be the rotated trajectory of `fs`.
///
/// bound_value: inner-product form of alpha and beta.
/// components:
///   bound_lnorm      norm form, <g, v> replaced by |g| |v|
///   bound_rederived  per-step lemma summed directly: alpha with
///                    (R_n - R_{n-1}), beta with (n+1) b^T R b + 2n (delta diff)
inline std::vector<BoundReport> bound_multi_step_series(const Problem& p, const std::vector<Factorization>& fs,
                                                   const std::vector<Vector>& iterates,
                                                   const ReferenceSolution& ref) {
  detail::require_certified(ref, p);
  detail::require(!fs.empty(), "bound_multi_step: need at least one factorization");
  if (iterates.size() != fs.size() + 1) {
    throw std::invalid_argument("bound_multi_step: expected " + std::to_string(fs.size() + 1) + " iterates, got " +
                                std::to_string(iterates.size()));
  }
  const std::size_t K = fs.size();
  const double lam = p.lambda();
  const Vector& zs = ref.z_star;

  std::vector<Matrix> R(K);
  std::vector<Vector> g(K);
  std::vector<bool> psd(K);
  for (std::size_t n = 0; n < K; ++n) {
    const ResidualInfo res = residual(fs[n], p.B());
    R[n] = res.R;
    psd[n] = residual_psd(res.min_eig, p.L());
    const RotatedStep step = rotated_prox_detail(p, fs[n], iterates[n]);
    const double scale = 1.0 + iterates[n + 1].norm();
    if ((step.z_next - iterates[n + 1]).norm() > 1e-9 * scale) {
      throw std::invalid_argument("bound_multi_step: iterate " + std::to_string(n + 1) +
                                  " is not the rotated step of the previous one");
    }
    g[n] = certified_delta_subgradient(fs[n], step, lam);
  }

  std::vector<BoundReport> out;
  out.reserve(K);
  const double a0 = detail::quad(zs - iterates[0], R[0]);
  double alpha = 0.0, alpha_l = 0.0, alpha_r = 0.0;
  double beta = 0.0, beta_r = 0.0;
  bool valid = true;
  for (std::size_t k = 1; k <= K; ++k) {
    // extend the sums by the terms that enter at horizon k
    const std::size_t n = k - 1;
    const Vector b = iterates[n + 1] - iterates[n];
    const double bRb = detail::quad(b, R[n]);
    const double ddelta = delta_A(fs[n].A(), iterates[n + 1], lam) - delta_A(fs[n].A(), iterates[n], lam);
    beta += static_cast<double>(n + 1) * (bRb + 2.0 * ddelta);
    beta_r += static_cast<double>(n + 1) * bRb + 2.0 * static_cast<double>(n) * ddelta;
    const Vector e_next = zs - iterates[n + 1];
    if (n >= 1) {
      const Vector e = zs - iterates[n];
      const double drift = detail::quad(e, R[n - 1]) - detail::quad(e, R[n]);
      alpha += 2.0 * g[n].dot(e_next) + drift;
      alpha_l += 2.0 * g[n].norm() * e_next.norm() + drift;
      alpha_r += 2.0 * g[n].dot(e_next) - drift;
    }
    valid = valid && psd[n];

    const Vector e1 = zs - iterates[1];
    const double first_ip = 2.0 * g[0].dot(e1);
    const double first_l = 2.0 * g[0].norm() * e1.norm();
    const double twok = 2.0 * static_cast<double>(k);
    BoundReport r;
    r.kind = BoundKind::multi_step;
    r.k = static_cast<int>(k);
    r.bound_value = (a0 + first_ip + alpha - beta) / twok;
    r.lhs_value = cost(p, iterates[k]) - ref.f_star;
    r.valid = valid;
    r.components = {{"term_residual", a0 / twok},
                    {"term_delta", first_ip / twok},
                    {"alpha", alpha},
                    {"beta", beta},
                    {"bound_lnorm", (a0 + first_l + alpha_l - beta) / twok},
                    {"bound_rederived", (a0 + first_ip + alpha_r - beta_r) / twok}};
    out.push_back(std::move(r));
  }
  return out;
}

inline BoundReport bound_multi_step(const Problem& p, const std::vector<Factorization>& fs,
                               const std::vector<Vector>& iterates, const ReferenceSolution& ref) {
  return bound_multi_step_series(p, fs, iterates, ref).back();
}

/// One factorized step with f0, then plain ISTA. Reports for k = 1..k_max:
///   [(z*-z0)^T R0 (z*-z0) + 2 L (|z*-z1| + |z1-z0|) + (z*-z1)^T R0 (z*-z1)] / 2k
/// with L the Lipschitz constant of delta_{A0} at z1 (0 for signed permutations).
inline std::vector<BoundReport> bound_warm_step(const Problem& p, const Factorization& f0, const Vector& z0,
                                            const Vector& z1, const ReferenceSolution& ref, int k_max) {
  detail::require_certified(ref, p);
  detail::require(k_max >= 1, "bound_warm_step: k_max must be at least 1");
  const Vector z1_check = rotated_prox_step(p, f0, z0);
  detail::require((z1_check - z1).norm() <= 1e-9 * (1.0 + z1.norm()), "bound_warm_step: z1 is not the step from z0");
  const ResidualInfo res = residual(f0, p.B());
  const Vector& zs = ref.z_star;
  const double L_A = lipschitz_constant(f0.A(), z1, p.lambda());
  const double a0 = detail::quad(zs - z0, res.R);
  const double a1 = detail::quad(zs - z1, res.R);
  const double lip_term = 2.0 * L_A * ((zs - z1).norm() + (z1 - z0).norm());
  const bool valid = residual_psd(res.min_eig, p.L());

  std::vector<BoundReport> out;
  out.reserve(static_cast<std::size_t>(k_max));
  Vector z = z1;
  for (int k = 1; k <= k_max; ++k) {
    if (k > 1) z = ista_step(p, z);
    const double twok = 2.0 * k;
    BoundReport r;
    r.kind = BoundKind::warm_step;
    r.k = k;
    r.bound_value = (a0 + lip_term + a1) / twok;
    r.lhs_value = cost(p, z) - ref.f_star;
    r.valid = valid;
    r.components = {{"term_residual", (a0 + a1) / twok},
                    {"term_delta", lip_term / twok},
                    {"alpha", 0.0},
                    {"beta", 0.0},
                    {"lipschitz", L_A}};
    out.push_back(std::move(r));
  }
  return out;
}

struct AccelerationMargin {
  double margin = 0.0;
  bool satisfied = false;
  double residual_norm = 0.0;
  double lipschitz = 0.0;
  double distance = 0.0;
};

/// |B|/2 - |R_k| - 2 L_{A_k}(z_{k+1}) / |z* - z_k|. Throws std::domain_error
/// when z_k = z*.
inline AccelerationMargin acceleration_condition(const Problem& p, const Factorization& f, const Vector& z_k,
                                                 const Vector& z_next, const ReferenceSolution& ref) {
  detail::require_certified(ref, p);
  AccelerationMargin out;
  out.distance = (ref.z_star - z_k).norm();
  if (!(out.distance > 0.0)) throw std::domain_error("acceleration_condition: z_k equals z*, margin undefined");
  out.residual_norm = residual(f, p.B()).spec_norm;
  out.lipschitz = lipschitz_constant(f.A(), z_next, p.lambda());
  out.margin = 0.5 * p.L() - out.residual_norm - 2.0 * out.lipschitz / out.distance;
  out.satisfied = out.margin >= 0.0;
  return out;
}

inline void write_bound_csv(std::ostream& os, const std::vector<BoundReport>& reports) {
  const auto old = os.precision(17);
  os << "kind,k,bound,lhs,valid,term_residual,term_delta,alpha,beta\n";
  for (const auto& r : reports) {
    os << to_string(r.kind) << ',' << r.k << ',' << r.bound_value << ',' << r.lhs_value << ',' << (r.valid ? 1 : 0)
       << ',' << r.component("term_residual") << ',' << r.component("term_delta") << ',' << r.component("alpha")
       << ',' << r.component("beta") << '\n';
  }
  os.precision(old);
}

}  // namespace sclab

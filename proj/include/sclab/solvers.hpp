#pragma once

// ISTA / FISTA and a duality-gap certified reference solver.

#include "sclab/problem.hpp"

#include <chrono>
#include <iomanip>
#include <limits>
#include <ostream>

namespace sclab {

/// Gradient of the smooth term: B z - D^T x.
inline Vector smooth_gradient(const Problem& p, const Vector& z) { return p.B() * z - p.Dtx(); }

/// One proximal gradient step h_{lambda/L}(z - (B z - D^T x) / L).
inline Vector ista_step(const Problem& p, const Vector& z) {
  detail::require_dims(z.size(), p.m(), "ista_step");
  const Vector u = z - smooth_gradient(p, z) / p.L();
  return soft_threshold(u, p.lambda() / p.L());
}

/// FISTA state. Momentum coefficient of the next step is (t_prev - 1) / t,
/// with t_prev = t = 1 at start.
struct SolverState {
  Vector z;
  Vector z_prev;
  double t = 1.0;
  double t_prev = 1.0;
  int k = 0;
};

inline SolverState initial_state(const Vector& z0) { return SolverState{z0, z0, 1.0, 1.0, 0}; }

inline double next_momentum_t(double t) { return 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t)); }

enum class Momentum { nesterov, none };

inline SolverState fista_step(const Problem& p, const SolverState& st, Momentum momentum = Momentum::nesterov) {
  detail::require_dims(st.z.size(), p.m(), "fista_step");
  detail::require_dims(st.z_prev.size(), p.m(), "fista_step");
  const double coef = momentum == Momentum::nesterov ? (st.t_prev - 1.0) / st.t : 0.0;
  SolverState next;
  if (coef == 0.0) {
    next.z = ista_step(p, st.z);
  } else {
    const Vector y = st.z + coef * (st.z - st.z_prev);
    next.z = ista_step(p, y);
  }
  next.z_prev = st.z;
  next.t_prev = st.t;
  next.t = next_momentum_t(st.t);
  next.k = st.k + 1;
  return next;
}

struct ReferenceSolution {
  Vector z_star;
  double f_star = 0.0;
  double gap = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool certified = false;
};

/// FISTA from 0 with function-value restart, keeping the best iterate, until
/// the duality gap at the best iterate drops below `tol`.
inline ReferenceSolution solve_reference(const Problem& p, double tol = 1e-9, int max_iter = 1000000) {
  detail::require(tol > 0.0, "solve_reference: tol must be positive");
  ReferenceSolution ref;
  ref.z_star = Vector::Zero(p.m());
  ref.f_star = cost(p, ref.z_star);
  ref.gap = duality_gap(p, ref.z_star);
  if (ref.gap <= tol) {
    ref.certified = true;
    return ref;
  }
  SolverState st = initial_state(ref.z_star);
  double f_last = ref.f_star;
  for (int it = 1; it <= max_iter; ++it) {
    st = fista_step(p, st);
    const double f = cost(p, st.z);
    if (f > f_last) {
      // restart momentum from the current iterate
      st.t = st.t_prev = 1.0;
      st.z_prev = st.z;
    }
    f_last = f;
    // Near the optimum F stalls at rounding level while the gap keeps
    // shrinking, so any iterate within tol of the best F is a candidate.
    if (f <= ref.f_star + tol) {
      const double gap = duality_gap(p, st.z);
      if (gap <= tol) {
        ref.f_star = f;
        ref.z_star = st.z;
        ref.gap = gap;
        ref.iterations = it;
        ref.certified = true;
        return ref;
      }
      if (f < ref.f_star) {
        ref.f_star = f;
        ref.z_star = st.z;
        ref.gap = gap;
        ref.iterations = it;
      }
    }
  }
  ref.iterations = max_iter;
  return ref;
}

enum class SolverKind { ista, fista };

inline const char* to_string(SolverKind k) { return k == SolverKind::ista ? "ista" : "fista"; }

struct TraceRecord {
  int k = 0;
  double f = 0.0;
  double f_gap = 0.0;
  double wall_ms = 0.0;
};

struct ConvergenceTrace {
  std::vector<TraceRecord> records;
};

/// Records k = 0..k_max of the chosen solver started at z0.
inline ConvergenceTrace run_solver(const Problem& p, SolverKind kind, int k_max, const Vector& z0,
                                   const ReferenceSolution& ref) {
  detail::require(ref.certified, "run_solver: reference solution is not certified");
  detail::require(k_max >= 0, "run_solver: k_max must be nonnegative");
  detail::require_dims(z0.size(), p.m(), "run_solver z0");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };

  ConvergenceTrace trace;
  trace.records.reserve(static_cast<std::size_t>(k_max) + 1);
  SolverState st = initial_state(z0);
  auto record = [&](int k) {
    const double f = cost(p, st.z);
    trace.records.push_back({k, f, f - ref.f_star, elapsed()});
  };
  record(0);
  for (int k = 1; k <= k_max; ++k) {
    if (kind == SolverKind::ista) {
      st.z = ista_step(p, st.z);
    } else {
      st = fista_step(p, st);
    }
    record(k);
  }
  return trace;
}

inline void write_trace_csv(std::ostream& os, const ConvergenceTrace& trace) {
  const auto old = os.precision(17);
  os << "k,f,f_gap,wall_ms\n";
  for (const auto& r : trace.records) os << r.k << ',' << r.f << ',' << r.f_gap << ',' << r.wall_ms << '\n';
  os.precision(old);
}

}  // namespace sclab

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace sclab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// sign with the sign(0) = 0 convention used for every subgradient selection.
inline double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

template <class Derived>
auto sign(const Eigen::MatrixBase<Derived>& v) {
  return v.unaryExpr([](double a) { return sign(a); });
}

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

inline void require_dims(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                                ", expected " + std::to_string(want) + ")");
  }
}

inline double spectral_norm_sym_exact(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail
}  // namespace sclab

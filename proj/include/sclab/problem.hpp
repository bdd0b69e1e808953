#pragma once

// LASSO problem representation: min_z 1/2 |x - D z|^2 + lambda |z|_1.

#include "sclab/types.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace sclab {

// ---------------------------------------------------------------------------
// Soft thresholding h_theta(u) = sign(u) (|u| - theta)_+

inline double soft_threshold(double u, double theta) {
  const double mag = std::abs(u) - theta;
  return mag > 0.0 ? sign(u) * mag : 0.0;
}

inline Vector soft_threshold(const Vector& u, double theta) {
  detail::require(theta >= 0.0, "soft_threshold: negative threshold");
  return u.unaryExpr([theta](double a) { return soft_threshold(a, theta); });
}

inline Vector soft_threshold(const Vector& u, const Vector& theta) {
  detail::require_dims(theta.size(), u.size(), "soft_threshold");
  detail::require((theta.array() >= 0.0).all(), "soft_threshold: negative threshold");
  Vector out(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) out(i) = soft_threshold(u(i), theta(i));
  return out;
}

/// Column-batched shrinkage: row i of U is thresholded by theta(i).
inline Matrix soft_threshold_rows(const Matrix& U, const Vector& theta) {
  detail::require_dims(theta.size(), U.rows(), "soft_threshold_rows");
  Matrix out(U.rows(), U.cols());
  for (Eigen::Index j = 0; j < U.cols(); ++j)
    for (Eigen::Index i = 0; i < U.rows(); ++i) out(i, j) = soft_threshold(U(i, j), theta(i));
  return out;
}

// ---------------------------------------------------------------------------
// Dense helpers

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
/// Stops when |B v - rho v| <= tol * rho. The start vector is fixed.
inline double power_iteration(const Matrix& B, double tol = 1e-10, int max_iter = 10000) {
  const Eigen::Index m = B.rows();
  if (m == 0) return 0.0;
  Vector v(m);
  for (Eigen::Index i = 0; i < m; ++i) v(i) = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
  v.normalize();
  double rho = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = B * v;
    rho = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    if ((w - rho * v).norm() <= tol * std::abs(rho)) break;
    v = w / wn;
  }
  return rho;
}

/// Moore-Penrose pseudoinverse via SVD, singular values below rcond * sigma_max dropped.
inline Matrix pseudo_inverse(const Matrix& D, double rcond = 1e-12) {
  Eigen::JacobiSVD<Matrix> svd(D, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() ? rcond * s(0) : 0.0;
  Vector inv = s.unaryExpr([cutoff](double v) { return v > cutoff ? 1.0 / v : 0.0; });
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// ---------------------------------------------------------------------------
// Dictionary and problem

enum class DictKind { gaussian, adversarial, custom };

inline const char* to_string(DictKind k) {
  switch (k) {
    case DictKind::gaussian: return "gaussian";
    case DictKind::adversarial: return "adversarial";
    case DictKind::custom: return "custom";
  }
  return "custom";
}

inline DictKind dict_kind_from_string(const std::string& s) {
  if (s == "gaussian") return DictKind::gaussian;
  if (s == "adversarial") return DictKind::adversarial;
  if (s == "custom") return DictKind::custom;
  throw std::invalid_argument("unknown dictionary kind: " + s);
}

/// Dictionary with the quantities every problem over it shares:
/// B = D^T D, D^+, and L = |B|.
struct Dictionary {
  Matrix D;
  Matrix B;
  Matrix pinv;
  double L = 0.0;
  DictKind kind = DictKind::custom;
  std::uint64_t seed = 0;
  std::vector<double> zeta;  // adversarial frequencies

  Eigen::Index n() const { return D.rows(); }
  Eigen::Index m() const { return D.cols(); }
};

inline std::shared_ptr<const Dictionary> make_dictionary(Matrix D, DictKind kind = DictKind::custom,
                                                         std::uint64_t seed = 0, std::vector<double> zeta = {}) {
  detail::require(D.size() > 0, "dictionary: empty matrix");
  detail::require(D.allFinite(), "dictionary: non-finite entries");
  auto dict = std::make_shared<Dictionary>();
  dict->B = D.transpose() * D;
  dict->B = 0.5 * (dict->B + dict->B.transpose()).eval();
  dict->pinv = pseudo_inverse(D);
  dict->L = power_iteration(dict->B);
  dict->D = std::move(D);
  dict->kind = kind;
  dict->seed = seed;
  dict->zeta = std::move(zeta);
  return dict;
}

/// One LASSO instance. Immutable; the dictionary part is shared.
class Problem {
 public:
  Problem(std::shared_ptr<const Dictionary> dict, Vector x, double lambda)
      : dict_(std::move(dict)), x_(std::move(x)), lambda_(lambda) {
    detail::require(dict_ != nullptr, "problem: null dictionary");
    detail::require_dims(x_.size(), dict_->n(), "problem signal");
    detail::require(x_.allFinite(), "problem: non-finite signal");
    detail::require(std::isfinite(lambda_) && lambda_ > 0.0, "problem: lambda must be positive");
    y_ = dict_->pinv * x_;
    dtx_ = dict_->D.transpose() * x_;
  }

  const Dictionary& dictionary() const { return *dict_; }
  const std::shared_ptr<const Dictionary>& dictionary_ptr() const { return dict_; }
  const Matrix& D() const { return dict_->D; }
  const Matrix& B() const { return dict_->B; }
  double L() const { return dict_->L; }
  const Vector& x() const { return x_; }
  /// y = D^+ x
  const Vector& y() const { return y_; }
  /// D^T x, the constant part of the gradient of the smooth term.
  const Vector& Dtx() const { return dtx_; }
  double lambda() const { return lambda_; }
  Eigen::Index n() const { return dict_->n(); }
  Eigen::Index m() const { return dict_->m(); }

 private:
  std::shared_ptr<const Dictionary> dict_;
  Vector x_;
  Vector y_;
  Vector dtx_;
  double lambda_;
};

inline Problem build_problem(Matrix D, Vector x, double lambda) {
  return Problem(make_dictionary(std::move(D)), std::move(x), lambda);
}

inline Problem build_problem(std::shared_ptr<const Dictionary> dict, Vector x, double lambda) {
  return Problem(std::move(dict), std::move(x), lambda);
}

// ---------------------------------------------------------------------------
// Costs

struct LassoCost {
  double F = 0.0;       // E + G
  double E = 0.0;       // 1/2 |x - D z|^2
  double G = 0.0;       // lambda |z|_1
  double E_gram = 0.0;  // 1/2 (y - z)^T B (y - z), differs from E by 1/2 |x - D D^+ x|^2
};

inline LassoCost lasso_cost(const Problem& p, const Vector& z) {
  detail::require_dims(z.size(), p.m(), "lasso_cost");
  LassoCost c;
  c.E = 0.5 * (p.x() - p.D() * z).squaredNorm();
  c.G = p.lambda() * z.lpNorm<1>();
  c.F = c.E + c.G;
  const Vector d = p.y() - z;
  c.E_gram = 0.5 * d.dot(p.B() * d);
  return c;
}

/// Primal cost only, the quantity plotted everywhere.
inline double cost(const Problem& p, const Vector& z) {
  detail::require_dims(z.size(), p.m(), "cost");
  return 0.5 * (p.x() - p.D() * z).squaredNorm() + p.lambda() * z.lpNorm<1>();
}

/// Q_M(v, w) = 1/2 (v - w)^T M (v - w) + lambda |v|_1
inline double quad_form(const Matrix& M, const Vector& v, const Vector& w, double lambda) {
  detail::require_dims(M.rows(), v.size(), "quad_form");
  detail::require_dims(M.cols(), v.size(), "quad_form");
  detail::require_dims(w.size(), v.size(), "quad_form");
  const Vector d = v - w;
  return 0.5 * d.dot(M * d) + lambda * v.lpNorm<1>();
}

/// Q_S with S given by its diagonal.
inline double quad_form_diag(const Vector& s, const Vector& v, const Vector& w, double lambda) {
  detail::require_dims(s.size(), v.size(), "quad_form_diag");
  detail::require_dims(w.size(), v.size(), "quad_form_diag");
  const Vector d = v - w;
  return 0.5 * (s.array() * d.array().square()).sum() + lambda * v.lpNorm<1>();
}

/// Duality gap at z using the rescaled residual as dual point.
inline double duality_gap(const Problem& p, const Vector& z) {
  detail::require_dims(z.size(), p.m(), "duality_gap");
  const Vector r = p.x() - p.D() * z;
  const double corr = (p.D().transpose() * r).lpNorm<Eigen::Infinity>();
  const double c = corr > 0.0 ? std::min(1.0, p.lambda() / corr) : 1.0;
  const Vector nu = c * r;
  const double primal = 0.5 * r.squaredNorm() + p.lambda() * z.lpNorm<1>();
  const double dual = 0.5 * p.x().squaredNorm() - 0.5 * (p.x() - nu).squaredNorm();
  return std::max(0.0, primal - dual);
}

}  // namespace sclab

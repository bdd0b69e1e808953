#pragma once

// Unrolled networks (LISTA, LFISTA, FacNet) and the one-layer Linear model:
// forward passes, classical-solver initializations, batch loss and
// hand-written reverse mode.

#include "sclab/factorization.hpp"
#include "sclab/solvers.hpp"

#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace sclab {

enum class NetKind { lista, lfista, facnet, linear };

inline const char* to_string(NetKind k) {
  switch (k) {
    case NetKind::lista: return "lista";
    case NetKind::lfista: return "lfista";
    case NetKind::facnet: return "facnet";
    case NetKind::linear: return "linear";
  }
  return "?";
}

inline NetKind net_kind_from_string(const std::string& s) {
  if (s == "lista") return NetKind::lista;
  if (s == "lfista") return NetKind::lfista;
  if (s == "facnet") return NetKind::facnet;
  if (s == "linear") return NetKind::linear;
  throw std::invalid_argument("unknown network kind '" + s + "'");
}

struct ListaLayer {
  Matrix W_g;    // m x m
  Matrix W_e;    // m x n
  Vector theta;  // m
};

struct LfistaLayer {
  Matrix W_g;
  Matrix W_m;
  Matrix W_e;
  Vector theta;
};

struct FacnetLayer {
  Matrix A;
  Vector S;
};

struct ListaParams {
  std::vector<ListaLayer> layers;
};

struct LfistaParams {
  std::vector<LfistaLayer> layers;
};

struct FacnetParams {
  std::vector<FacnetLayer> layers;
  double mu = 1.0;
};

struct LinearParams {
  Matrix A0;  // m x n
};

using NetworkParams = std::variant<ListaParams, LfistaParams, FacnetParams, LinearParams>;

inline NetKind kind_of(const NetworkParams& params) {
  return static_cast<NetKind>(params.index());
}

/// Number of layers; the Linear model counts as depth 1.
inline int depth(const NetworkParams& params) {
  return std::visit(
      [](const auto& p) -> int {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LinearParams>) {
          return 1;
        } else {
          return static_cast<int>(p.layers.size());
        }
      },
      params);
}

/// Named view of one parameter tensor, flat in Eigen storage order.
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index size;
};

namespace detail {

inline void add_view(std::vector<TensorView>& out, std::string name, Matrix& M) {
  out.push_back({std::move(name), M.data(), M.size()});
}

inline void add_view(std::vector<TensorView>& out, std::string name, Vector& v) {
  out.push_back({std::move(name), v.data(), v.size()});
}

}  // namespace detail

/// Views of every trainable tensor in fixed layer order. Two parameter sets
/// with equal shapes give aligned lists.
inline std::vector<TensorView> tensor_views(NetworkParams& params) {
  std::vector<TensorView> out;
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LinearParams>) {
          detail::add_view(out, "A0", p.A0);
        } else {
          for (std::size_t k = 0; k < p.layers.size(); ++k) {
            const std::string pre = "layer" + std::to_string(k + 1) + ".";
            auto& l = p.layers[k];
            if constexpr (std::is_same_v<T, ListaParams>) {
              detail::add_view(out, pre + "W_g", l.W_g);
              detail::add_view(out, pre + "W_e", l.W_e);
              detail::add_view(out, pre + "theta", l.theta);
            } else if constexpr (std::is_same_v<T, LfistaParams>) {
              detail::add_view(out, pre + "W_g", l.W_g);
              detail::add_view(out, pre + "W_m", l.W_m);
              detail::add_view(out, pre + "W_e", l.W_e);
              detail::add_view(out, pre + "theta", l.theta);
            } else {
              detail::add_view(out, pre + "A", l.A);
              detail::add_view(out, pre + "S", l.S);
            }
          }
        }
      },
      params);
  return out;
}

inline Eigen::Index parameter_count(const NetworkParams& params) {
  NetworkParams copy = params;
  Eigen::Index n = 0;
  for (const auto& v : tensor_views(copy)) n += v.size;
  return n;
}

/// Same shapes, all entries zero (gradient accumulator).
inline NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams out = params;
  for (auto& v : tensor_views(out)) std::fill(v.data, v.data + v.size, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Initializations reproducing the classical solvers

inline ListaParams lista_init_from_ista(const Dictionary& dict, double lambda, int K) {
  detail::require(K >= 1, "lista_init_from_ista: K must be >= 1");
  const Eigen::Index m = dict.m();
  const double L = dict.L;
  ListaLayer layer{Matrix::Identity(m, m) - dict.B / L, dict.D.transpose() / L, Vector::Constant(m, lambda / L)};
  return ListaParams{std::vector<ListaLayer>(static_cast<std::size_t>(K), layer)};
}

inline ListaParams lista_init_from_ista(const Problem& p, int K) { return lista_init_from_ista(p.dictionary(), p.lambda(), K); }

/// Layer k uses the FISTA momentum beta_k = (t_{k-1} - 1) / t_k, t_0 = t_1 = 1:
/// W_g = (1 + beta)(I - B/L), W_m = -beta (I - B/L).
inline LfistaParams lfista_init_from_fista(const Dictionary& dict, double lambda, int K) {
  detail::require(K >= 1, "lfista_init_from_fista: K must be >= 1");
  const Eigen::Index m = dict.m();
  const double L = dict.L;
  const Matrix G = Matrix::Identity(m, m) - dict.B / L;
  LfistaParams params;
  double t_prev = 1.0, t = 1.0;
  for (int k = 0; k < K; ++k) {
    const double beta = (t_prev - 1.0) / t;
    params.layers.push_back({(1.0 + beta) * G, -beta * G, dict.D.transpose() / L, Vector::Constant(m, lambda / L)});
    t_prev = t;
    t = next_momentum_t(t);
  }
  return params;
}

inline LfistaParams lfista_init_from_fista(const Problem& p, int K) {
  return lfista_init_from_fista(p.dictionary(), p.lambda(), K);
}

/// (I, |B| 1) in every layer: K ISTA steps.
inline FacnetParams facnet_init_identity(const Dictionary& dict, int K, double mu = 1.0) {
  detail::require(K >= 1, "facnet_init_identity: K must be >= 1");
  const Eigen::Index m = dict.m();
  FacnetLayer layer{Matrix::Identity(m, m), Vector::Constant(m, dict.L)};
  return FacnetParams{std::vector<FacnetLayer>(static_cast<std::size_t>(K), layer), mu};
}

inline LinearParams linear_init_zero(const Dictionary& dict) { return LinearParams{Matrix::Zero(dict.m(), dict.n())}; }

inline NetworkParams init_network(NetKind kind, const Dictionary& dict, double lambda, int K, double mu = 1.0) {
  switch (kind) {
    case NetKind::lista: return lista_init_from_ista(dict, lambda, K);
    case NetKind::lfista: return lfista_init_from_fista(dict, lambda, K);
    case NetKind::facnet: return facnet_init_identity(dict, K, mu);
    case NetKind::linear: return linear_init_zero(dict);
  }
  throw std::invalid_argument("init_network: unknown kind");
}

// ---------------------------------------------------------------------------
// Single-sample forward passes

struct ForwardResult {
  Vector z;                     // output z_K
  std::vector<Vector> iterates;  // z_0 .. z_K
};

inline ForwardResult lista_forward(const ListaParams& params, const Vector& x, const Vector& z0) {
  ForwardResult out{z0, {z0}};
  for (const auto& l : params.layers) {
    detail::require_dims(l.W_e.cols(), x.size(), "lista_forward signal");
    detail::require_dims(l.W_g.cols(), out.z.size(), "lista_forward code");
    out.z = soft_threshold(Vector(l.W_g * out.z + l.W_e * x), l.theta);
    out.iterates.push_back(out.z);
  }
  return out;
}

/// Two-tap recurrence with z_{-1} := z_0.
inline ForwardResult lfista_forward(const LfistaParams& params, const Vector& x, const Vector& z0) {
  ForwardResult out{z0, {z0}};
  Vector prev = z0;
  for (const auto& l : params.layers) {
    detail::require_dims(l.W_e.cols(), x.size(), "lfista_forward signal");
    detail::require_dims(l.W_g.cols(), out.z.size(), "lfista_forward code");
    Vector next = soft_threshold(Vector(l.W_g * out.z + l.W_m * prev + l.W_e * x), l.theta);
    prev = std::move(out.z);
    out.z = std::move(next);
    out.iterates.push_back(out.z);
  }
  return out;
}

inline ForwardResult facnet_forward(const FacnetParams& params, const Problem& p, const Vector& z0) {
  ForwardResult out{z0, {z0}};
  for (const auto& l : params.layers) {
    out.z = rotated_prox_step(p, Factorization(l.A, l.S), out.z);
    out.iterates.push_back(out.z);
  }
  return out;
}

inline Vector linear_forward(const LinearParams& params, const Vector& x) {
  detail::require_dims(params.A0.cols(), x.size(), "linear_forward");
  return params.A0 * x;
}

// ---------------------------------------------------------------------------
// Batches and batched evaluation

/// Signals sharing one dictionary and lambda, one per column.
struct Batch {
  std::shared_ptr<const Dictionary> dict;
  double lambda = 0.0;
  Matrix X;  // n x N
  Matrix C;  // D^T X

  Batch() = default;
  Batch(std::shared_ptr<const Dictionary> d, Matrix signals, double lam)
      : dict(std::move(d)), lambda(lam), X(std::move(signals)) {
    detail::require(dict != nullptr, "batch: null dictionary");
    detail::require(X.cols() >= 1, "batch: empty");
    detail::require_dims(X.rows(), dict->n(), "batch signals");
    detail::require(lambda > 0.0, "batch: lambda must be positive");
    C = dict->D.transpose() * X;
  }

  Eigen::Index size() const { return X.cols(); }
  Problem problem(Eigen::Index i) const { return Problem(dict, X.col(i), lambda); }
};

/// F_x(z) for every column.
inline Vector batch_costs(const Batch& b, const Matrix& Z) {
  const Matrix res = b.X - b.dict->D * Z;
  return (0.5 * res.colwise().squaredNorm() + b.lambda * Z.cwiseAbs().colwise().sum()).transpose();
}

/// sum_k |I - A_k^T A_k|_F^2 * mu / K
inline double unitarity_penalty(const FacnetParams& params) {
  if (params.layers.empty()) return 0.0;
  double s = 0.0;
  for (const auto& l : params.layers) s += unitarity_defect(l.A) * unitarity_defect(l.A);
  return params.mu * s / static_cast<double>(params.layers.size());
}

/// Network output for every column (z0 = 0). For the Linear model this is
/// A0 x, the warm start.
inline Matrix network_output(const NetworkParams& params, const Batch& b) {
  const Eigen::Index m = b.dict->m();
  const Eigen::Index N = b.size();
  return std::visit(
      [&](const auto& p) -> Matrix {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LinearParams>) {
          return p.A0 * b.X;
        } else if constexpr (std::is_same_v<T, ListaParams>) {
          Matrix Z = Matrix::Zero(m, N);
          for (const auto& l : p.layers) Z = soft_threshold_rows(l.W_g * Z + l.W_e * b.X, l.theta);
          return Z;
        } else if constexpr (std::is_same_v<T, LfistaParams>) {
          Matrix Z = Matrix::Zero(m, N), prev = Matrix::Zero(m, N);
          for (const auto& l : p.layers) {
            Matrix next = soft_threshold_rows(l.W_g * Z + l.W_m * prev + l.W_e * b.X, l.theta);
            prev = std::move(Z);
            Z = std::move(next);
          }
          return Z;
        } else {
          Matrix Z = Matrix::Zero(m, N);
          for (const auto& l : p.layers) Z = rotated_prox_forward(l.A, l.S, b.lambda, b.dict->B, b.C, Z);
          return Z;
        }
      },
      params);
}

/// Linear model objective |I - D A0|_F^2 + lambda mean |A0 x|_1.
inline double linear_loss(const LinearParams& p, const Batch& b) {
  const Eigen::Index n = b.dict->n();
  const Matrix rec = Matrix::Identity(n, n) - b.dict->D * p.A0;
  return rec.squaredNorm() + b.lambda * (p.A0 * b.X).cwiseAbs().sum() / static_cast<double>(b.size());
}

/// Training loss: mean F_x(network(x)), plus the unitarity penalty for FacNet;
/// the Linear model uses its own objective.
inline double network_loss(const NetworkParams& params, const Batch& b) {
  if (const auto* lin = std::get_if<LinearParams>(&params)) return linear_loss(*lin, b);
  const double data = batch_costs(b, network_output(params, b)).mean();
  if (const auto* fac = std::get_if<FacnetParams>(&params)) return data + unitarity_penalty(*fac);
  return data;
}

/// Smallest distance of any pre-activation to a threshold kink over the
/// batch: ||u| - theta| for thresholding layers, |A0 x| for the Linear model,
/// and |z_K| for nonzero outputs. Finite differences with steps well below
/// this stay on one smooth piece.
inline double kink_margin(const NetworkParams& params, const Batch& b) {
  const Eigen::Index m = b.dict->m();
  const Eigen::Index N = b.size();
  double margin = std::numeric_limits<double>::infinity();
  auto scan = [&](const Matrix& U, const Vector& theta) {
    for (Eigen::Index j = 0; j < U.cols(); ++j)
      for (Eigen::Index i = 0; i < U.rows(); ++i) margin = std::min(margin, std::abs(std::abs(U(i, j)) - theta(i)));
  };
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, LinearParams>) {
          margin = (p.A0 * b.X).cwiseAbs().minCoeff();
        } else if constexpr (std::is_same_v<T, ListaParams>) {
          Matrix Z = Matrix::Zero(m, N);
          for (const auto& l : p.layers) {
            const Matrix U = l.W_g * Z + l.W_e * b.X;
            scan(U, l.theta);
            Z = soft_threshold_rows(U, l.theta);
          }
        } else if constexpr (std::is_same_v<T, LfistaParams>) {
          Matrix Z = Matrix::Zero(m, N), prev = Z;
          for (const auto& l : p.layers) {
            const Matrix U = l.W_g * Z + l.W_m * prev + l.W_e * b.X;
            scan(U, l.theta);
            prev = std::move(Z);
            Z = soft_threshold_rows(U, l.theta);
          }
        } else {
          Matrix Z = Matrix::Zero(m, N);
          RotatedLayerCache c;
          for (const auto& l : p.layers) {
            Z = rotated_prox_forward(l.A, l.S, b.lambda, b.dict->B, b.C, Z, &c);
            scan(c.U, Vector((b.lambda / l.S.array()).matrix()));
          }
          for (Eigen::Index i = 0; i < Z.size(); ++i)
            if (Z.data()[i] != 0.0) margin = std::min(margin, std::abs(Z.data()[i]));
        }
      },
      params);
  return margin;
}

struct LossAndGrad {
  double loss = 0.0;
  double penalty = 0.0;  // FacNet unitarity term included in loss
  NetworkParams grad;
};

namespace detail {

/// Gradient of a thresholding layer: returns dU, accumulates dtheta.
inline Matrix threshold_backward(const Matrix& U, const Vector& theta, const Matrix& dOut, Vector& dtheta) {
  Matrix dU = Matrix::Zero(U.rows(), U.cols());
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      const double u = U(i, j);
      if (std::abs(u) > theta(i)) {
        dU(i, j) = dOut(i, j);
        dtheta(i) -= sign(u) * dOut(i, j);
      }
    }
  }
  return dU;
}

/// d mean F / d Z for the network output.
inline Matrix output_gradient(const Batch& b, const Matrix& Z) {
  const double N = static_cast<double>(b.size());
  return (b.dict->B * Z - b.C + b.lambda * sign(Z)) / N;
}

}  // namespace detail

/// Exact reverse mode of network_loss. Threshold derivative is taken as
/// 1{|u| > theta}, and the l1 term uses sign(0) = 0.
inline LossAndGrad network_backward(const NetworkParams& params, const Batch& b) {
  const Eigen::Index m = b.dict->m();
  const Eigen::Index N = b.size();
  LossAndGrad out;
  out.grad = zeros_like(params);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        auto& g = std::get<T>(out.grad);
        if constexpr (std::is_same_v<T, LinearParams>) {
          const Eigen::Index n = b.dict->n();
          const Matrix& D = b.dict->D;
          const Matrix rec = Matrix::Identity(n, n) - D * p.A0;
          const Matrix AX = p.A0 * b.X;
          out.loss = rec.squaredNorm() + b.lambda * AX.cwiseAbs().sum() / static_cast<double>(N);
          g.A0 = -2.0 * D.transpose() * rec + (b.lambda / static_cast<double>(N)) * sign(AX) * b.X.transpose();
        } else if constexpr (std::is_same_v<T, ListaParams>) {
          const std::size_t K = p.layers.size();
          std::vector<Matrix> Z(K + 1), U(K);
          Z[0] = Matrix::Zero(m, N);
          for (std::size_t k = 0; k < K; ++k) {
            U[k] = p.layers[k].W_g * Z[k] + p.layers[k].W_e * b.X;
            Z[k + 1] = soft_threshold_rows(U[k], p.layers[k].theta);
          }
          out.loss = batch_costs(b, Z[K]).mean();
          Matrix dZ = detail::output_gradient(b, Z[K]);
          for (std::size_t k = K; k-- > 0;) {
            const Matrix dU = detail::threshold_backward(U[k], p.layers[k].theta, dZ, g.layers[k].theta);
            g.layers[k].W_g.noalias() += dU * Z[k].transpose();
            g.layers[k].W_e.noalias() += dU * b.X.transpose();
            dZ = p.layers[k].W_g.transpose() * dU;
          }
        } else if constexpr (std::is_same_v<T, LfistaParams>) {
          const std::size_t K = p.layers.size();
          // Z[0] = z_{-1} = z_0, Z[k+1] = z_k
          std::vector<Matrix> Z(K + 2), U(K);
          Z[0] = Matrix::Zero(m, N);
          Z[1] = Z[0];
          for (std::size_t k = 0; k < K; ++k) {
            const auto& l = p.layers[k];
            U[k] = l.W_g * Z[k + 1] + l.W_m * Z[k] + l.W_e * b.X;
            Z[k + 2] = soft_threshold_rows(U[k], l.theta);
          }
          out.loss = batch_costs(b, Z[K + 1]).mean();
          std::vector<Matrix> dZ(K + 2, Matrix::Zero(m, N));
          dZ[K + 1] = detail::output_gradient(b, Z[K + 1]);
          for (std::size_t k = K; k-- > 0;) {
            const auto& l = p.layers[k];
            const Matrix dU = detail::threshold_backward(U[k], l.theta, dZ[k + 2], g.layers[k].theta);
            g.layers[k].W_g.noalias() += dU * Z[k + 1].transpose();
            g.layers[k].W_m.noalias() += dU * Z[k].transpose();
            g.layers[k].W_e.noalias() += dU * b.X.transpose();
            dZ[k + 1].noalias() += l.W_g.transpose() * dU;
            dZ[k].noalias() += l.W_m.transpose() * dU;
          }
        } else {
          const std::size_t K = p.layers.size();
          std::vector<RotatedLayerCache> cache(K);
          Matrix Z = Matrix::Zero(m, N);
          for (std::size_t k = 0; k < K; ++k)
            Z = rotated_prox_forward(p.layers[k].A, p.layers[k].S, b.lambda, b.dict->B, b.C, Z, &cache[k]);
          out.penalty = unitarity_penalty(p);
          out.loss = batch_costs(b, Z).mean() + out.penalty;
          Matrix dZ = detail::output_gradient(b, Z);
          for (std::size_t k = K; k-- > 0;) {
            const auto& l = p.layers[k];
            dZ = rotated_prox_vjp(l.A, l.S, b.lambda, b.dict->B, cache[k], dZ, g.layers[k].A, g.layers[k].S);
            // (mu / K) |I - A^T A|^2
            const Matrix AtA = l.A.transpose() * l.A;
            g.layers[k].A.noalias() +=
                (4.0 * p.mu / static_cast<double>(K)) * l.A * (AtA - Matrix::Identity(m, m));
          }
        }
      },
      params);
  return out;
}

}  // namespace sclab

#pragma once

// Synthetic problems: Gaussian and Fourier-type ("adversarial") dictionaries,
// Bernoulli-Gaussian codes.

#include "sclab/problem.hpp"
#include "sclab/rng.hpp"

#include <algorithm>
#include <iostream>
#include <numbers>

namespace sclab {

struct GeneratorConfig {
  int n = 16;
  int m = 32;
  double rho = 5.0 / 32.0;
  double sigma = 10.0;  // standard deviation of the code amplitudes
  double lambda = 0.01;
  DictKind dict_kind = DictKind::gaussian;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;  // additive observation noise, off by default
};

inline void validate(const GeneratorConfig& cfg) {
  detail::require(cfg.n > 0 && cfg.m > 0, "generator: n and m must be positive");
  detail::require(cfg.rho > 0.0 && cfg.rho <= 1.0, "generator: rho must lie in (0, 1]");
  detail::require(cfg.rho * cfg.m >= 1.0 - 1e-12, "generator: rho * m must be >= 1");
  detail::require(cfg.sigma > 0.0, "generator: sigma must be positive");
  detail::require(cfg.lambda > 0.0, "generator: lambda must be positive");
  detail::require(cfg.noise_sigma >= 0.0, "generator: noise_sigma must be nonnegative");
}

/// Columns drawn from N(0, I_n) and normalized to unit norm.
inline std::shared_ptr<const Dictionary> gen_gaussian_dictionary(const GeneratorConfig& cfg) {
  validate(cfg);
  detail::require(cfg.dict_kind == DictKind::gaussian, "gen_gaussian_dictionary: dict_kind must be gaussian");
  if (cfg.m <= cfg.n) std::clog << "warning: dictionary is not overcomplete (m <= n)\n";
  Rng rng = Rng::stream(cfg.seed, "dictionary");
  Matrix D(cfg.n, cfg.m);
  for (int j = 0; j < cfg.m; ++j)
    for (int i = 0; i < cfg.n; ++i) D(i, j) = rng.normal();
  for (int j = 0; j < cfg.m; ++j) D.col(j) /= D.col(j).norm();
  return make_dictionary(std::move(D), DictKind::gaussian, cfg.seed);
}

/// Real embedding of the Fourier atoms d_{j,k} = exp(-2 pi i j zeta_k).
/// n/2 frequencies zeta_k are drawn without replacement from {1/m, ..., floor(m/2)/m};
/// rows [0, n/2) hold cos(2 pi j zeta_k), rows [n/2, n) hold -sin(2 pi j zeta_k),
/// columns j = 1..m, then every column is normalized.
inline std::shared_ptr<const Dictionary> gen_adversarial_dictionary(const GeneratorConfig& cfg) {
  validate(cfg);
  detail::require(cfg.dict_kind == DictKind::adversarial,
                  "gen_adversarial_dictionary: dict_kind must be adversarial");
  detail::require(cfg.n % 2 == 0, "gen_adversarial_dictionary: n must be even");
  const int half = cfg.n / 2;
  const int pool = cfg.m / 2;
  detail::require(half <= pool, "gen_adversarial_dictionary: not enough distinct frequencies (n/2 > floor(m/2))");
  if (cfg.m <= cfg.n) std::clog << "warning: dictionary is not overcomplete (m <= n)\n";

  Rng rng = Rng::stream(cfg.seed, "dictionary");
  std::vector<int> freq(pool);
  for (int i = 0; i < pool; ++i) freq[i] = i + 1;
  for (int i = 0; i < half; ++i) {  // partial Fisher-Yates
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(pool - i)));
    std::swap(freq[i], freq[j]);
  }
  freq.resize(half);
  std::sort(freq.begin(), freq.end());
  std::vector<double> zeta(half);
  for (int k = 0; k < half; ++k) zeta[k] = static_cast<double>(freq[k]) / cfg.m;

  Matrix D(cfg.n, cfg.m);
  for (int j = 0; j < cfg.m; ++j) {
    for (int k = 0; k < half; ++k) {
      // reduce j * f mod m before scaling to keep the phase argument small
      const long phase_num = (static_cast<long>(j + 1) * freq[k]) % cfg.m;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase_num) / cfg.m;
      D(k, j) = std::cos(angle);
      D(half + k, j) = -std::sin(angle);
    }
    D.col(j) /= D.col(j).norm();
  }
  return make_dictionary(std::move(D), DictKind::adversarial, cfg.seed, std::move(zeta));
}

inline std::shared_ptr<const Dictionary> gen_dictionary(const GeneratorConfig& cfg) {
  switch (cfg.dict_kind) {
    case DictKind::gaussian: return gen_gaussian_dictionary(cfg);
    case DictKind::adversarial: return gen_adversarial_dictionary(cfg);
    case DictKind::custom: break;
  }
  throw std::invalid_argument("gen_dictionary: custom dictionaries are not generated");
}

struct SampleBatch {
  Matrix codes;    // m x N
  Matrix signals;  // n x N, column i = D codes_i (+ noise if enabled)
};

/// Bernoulli(rho) mask times N(0, sigma^2) amplitude per coefficient.
inline SampleBatch sample_codes(const GeneratorConfig& cfg, const Matrix& D, int count, std::uint64_t seed) {
  validate(cfg);
  detail::require(count >= 1, "sample_codes: count must be >= 1");
  detail::require_dims(D.cols(), cfg.m, "sample_codes dictionary");
  Rng rng = Rng::stream(seed, "codes");
  SampleBatch batch;
  batch.codes.resize(cfg.m, count);
  for (int i = 0; i < count; ++i) {
    for (int k = 0; k < cfg.m; ++k) {
      const bool on = rng.bernoulli(cfg.rho);
      const double a = rng.normal() * cfg.sigma;
      batch.codes(k, i) = on ? a : 0.0;
    }
  }
  batch.signals = D * batch.codes;
  if (cfg.noise_sigma > 0.0) {
    Rng noise = Rng::stream(seed, "noise");
    for (Eigen::Index i = 0; i < batch.signals.size(); ++i) batch.signals.data()[i] += cfg.noise_sigma * noise.normal();
  }
  return batch;
}

/// l_inf / l_2 ratio of the `count` leading eigenvectors of B (1 = canonical
/// basis vector, 1/sqrt(m) = perfectly spread).
inline std::vector<double> eigenvector_spread(const Matrix& B, int count) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(B);
  std::vector<double> out;
  const auto m = B.rows();
  for (int i = 0; i < count && i < m; ++i) {
    const Vector v = es.eigenvectors().col(m - 1 - i);
    out.push_back(v.lpNorm<Eigen::Infinity>() / v.norm());
  }
  return out;
}

}  // namespace sclab

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "icar/types.hpp"

namespace icar::metrics {

/// Gaussian summary of a feature distribution. `cov` is dim x dim row-major.
struct FrechetStats {
  std::size_t dim = 0;
  std::size_t samples = 0;
  std::vector<double> mean;
  std::vector<double> cov;

  double cov_at(std::size_t i, std::size_t j) const { return cov[i * dim + j]; }
};

/// Sample mean and unbiased (1/(n-1)) covariance, symmetrized. Needs >= 2 rows.
/// Row order does not affect the result, not even in the last bit.
FrechetStats feature_stats(const std::vector<std::vector<double>>& rows);
FrechetStats feature_stats(const std::vector<Embedding>& rows);

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the square root
/// taken through the symmetric product S_a^{1/2} S_b S_a^{1/2}. Eigenvalues in
/// (-tol, 0) are clamped; anything lower is rejected as "not PSD", where tol is
/// 1e-8 relative to the largest eigenvalue magnitude (and at least 1e-8).
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

double domain_distance(const std::vector<Embedding>& a, const std::vector<Embedding>& b);

/// Sample Pearson correlation. Throws ContractError "zero variance".
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace icar::metrics

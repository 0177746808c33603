#include "icar/metrics/frechet.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "icar/error.hpp"

namespace icar::metrics {

namespace {

using Mat = Eigen::MatrixXd;

template <typename Row>
FrechetStats stats_of(const std::vector<Row>& input) {
  // accumulate in lexicographic row order so the sums do not depend on input order
  std::vector<const Row*> order;
  order.reserve(input.size());
  for (const auto& r : input) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const Row* a, const Row* b) { return *a < *b; });
  const auto& rows = order;
  if (rows.size() < 2) throw ContractError(fmt::format("feature_stats: need >= 2 samples, got {}", rows.size()));
  const std::size_t d = rows.front()->size();
  if (d == 0) throw ContractError("feature_stats: zero-dimensional features");
  FrechetStats s;
  s.dim = d;
  s.samples = rows.size();
  s.mean.assign(d, 0.0);
  for (const Row* p : rows) {
    const Row& r = *p;
    if (r.size() != d) throw ShapeError(fmt::format("feature_stats: row dim {} != {}", r.size(), d));
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += r[i];
  }
  const double n = static_cast<double>(rows.size());
  for (auto& m : s.mean) m /= n;
  s.cov.assign(d * d, 0.0);
  std::vector<double> c(d);
  for (const Row* p : rows) {
    const Row& r = *p;
    for (std::size_t i = 0; i < d; ++i) c[i] = r[i] - s.mean[i];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) s.cov[i * d + j] += c[i] * c[j];
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      s.cov[i * d + j] /= n - 1.0;
      s.cov[j * d + i] = s.cov[i * d + j];
    }
  }
  return s;
}

Mat as_matrix(const FrechetStats& s) {
  Mat m(s.dim, s.dim);
  for (std::size_t i = 0; i < s.dim; ++i)
    for (std::size_t j = 0; j < s.dim; ++j) m(i, j) = s.cov_at(i, j);
  return 0.5 * (m + m.transpose());
}

Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double tol = 1e-8 * scale;
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tol) throw NumericError(fmt::format("frechet_distance: {} not PSD (eigenvalue {:.3e})", what, ev[i]));
    out[i] = std::max(0.0, ev[i]);
  }
  return out;
}

}  // namespace

FrechetStats feature_stats(const std::vector<std::vector<double>>& rows) { return stats_of(rows); }
FrechetStats feature_stats(const std::vector<Embedding>& rows) { return stats_of(rows); }

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  if (a.dim != b.dim) throw ShapeError(fmt::format("frechet_distance: dim {} vs {}", a.dim, b.dim));
  if (a.mean.size() != a.dim || b.mean.size() != b.dim || a.cov.size() != a.dim * a.dim ||
      b.cov.size() != b.dim * b.dim) {
    throw ShapeError("frechet_distance: malformed stats");
  }
  double mu = 0;
  for (std::size_t i = 0; i < a.dim; ++i) mu += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  const Mat sa = as_matrix(a);
  const Mat sb = as_matrix(b);
  Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
  const Eigen::VectorXd la = clamped_eigenvalues(ea.eigenvalues(), "first covariance");
  clamped_eigenvalues(Eigen::SelfAdjointEigenSolver<Mat>(sb, Eigen::EigenvaluesOnly).eigenvalues(),
                      "second covariance");
  const Mat root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Mat mid = root_a * sb * root_a;
  mid = 0.5 * (mid + mid.transpose());
  const Eigen::VectorXd lm =
      clamped_eigenvalues(Eigen::SelfAdjointEigenSolver<Mat>(mid, Eigen::EigenvaluesOnly).eigenvalues(), "product");
  const double tr_root = lm.cwiseSqrt().sum();
  const double value = mu + sa.trace() + sb.trace() - 2.0 * tr_root;
  return std::max(0.0, value);
}

double domain_distance(const std::vector<Embedding>& a, const std::vector<Embedding>& b) {
  return frechet_distance(feature_stats(a), feature_stats(b));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError(fmt::format("pearson: lengths {} and {}", x.size(), y.size()));
  if (x.size() < 2) throw ContractError("pearson: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // identical values can leave rounding residue in the mean
  const auto flat = [n](double ss, double m) { return ss <= 1e-24 * n * std::max(1.0, m * m); };
  if (flat(sxx, mx) || flat(syy, my)) throw ContractError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace icar::metrics

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rmtbag/data.hpp"
#include "rmtbag/errors.hpp"
#include "rmtbag/model.hpp"

namespace rmtbag {

// Ridge-regularized least-squares classifier weights:
//   w = (X X^T / n + lambda I)^{-1} (1/n) X y.
// Solved via Cholesky; the matrix is SPD for lambda > 0, so a factorization
// failure indicates numerical breakdown and is reported with conditioning
// diagnostics rather than silently regularized away.
inline Eigen::VectorXd lssvm_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                   double lambda) {
  if (x.cols() != y.size()) throw DataError("feature/label count mismatch");
  if (x.cols() < 1) throw DataError("cannot train on an empty sample");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  const double n = static_cast<double>(x.cols());
  Eigen::MatrixXd g = (x * x.transpose()) / n;
  g.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
    std::string diag = "lssvm system factorization failed";
    if (eig.info() == Eigen::Success) {
      diag += " (min eig " + std::to_string(eig.eigenvalues().minCoeff()) +
              ", max eig " + std::to_string(eig.eigenvalues().maxCoeff()) + ")";
    }
    throw NumericalError(diag);
  }
  return llt.solve(x * y / n);
}

// Disjoint stratified partition into m subsets of n_s = floor(n/m) samples;
// the remainder n - m*n_s is dropped. Class-1 quota u1 = round(c1 * m * n_s)
// clamped to keep both classes within their available counts, then spread as
// evenly as possible: the first (u1 mod m) subsets get one extra class-1
// sample. Subset index lists are sorted ascending, so m=1 reproduces training
// on the full dataset in original order.
inline std::vector<std::vector<Eigen::Index>> partition_indices(
    const Eigen::VectorXi& y, int m, std::mt19937_64& rng) {
  const Eigen::Index n = y.size();
  if (m < 1) throw ConfigError("m must be at least 1");
  const Eigen::Index n_s = n / m;
  if (n_s < 2) throw ConfigError("m too large: each subset needs at least 2 samples");
  std::vector<Eigen::Index> pool1, pool2;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) == -1)
      pool1.push_back(i);
    else if (y(i) == 1)
      pool2.push_back(i);
    else
      throw DataError("labels must be -1 or +1");
  }
  const Eigen::Index n1 = static_cast<Eigen::Index>(pool1.size());
  const Eigen::Index n2 = static_cast<Eigen::Index>(pool2.size());
  const Eigen::Index used = static_cast<Eigen::Index>(m) * n_s;
  const double c1 = static_cast<double>(n1) / static_cast<double>(n);
  Eigen::Index u1 = static_cast<Eigen::Index>(
      std::llround(std::floor(c1 * static_cast<double>(used) + 0.5)));
  u1 = std::clamp(u1, std::max<Eigen::Index>(0, used - n2), std::min(n1, used));
  const Eigen::Index u2 = used - u1;

  std::shuffle(pool1.begin(), pool1.end(), rng);
  std::shuffle(pool2.begin(), pool2.end(), rng);

  // Class-1 per-subset quota: base + 1 for the first (u1 mod m) subsets.
  const Eigen::Index base1 = u1 / m;
  const Eigen::Index extra1 = u1 % m;
  std::vector<std::vector<Eigen::Index>> subsets(static_cast<std::size_t>(m));
  Eigen::Index p1 = 0, p2 = 0;
  for (int s = 0; s < m; ++s) {
    Eigen::Index k1 = base1 + (s < extra1 ? 1 : 0);
    Eigen::Index k2 = n_s - k1;
    if (k2 < 0 || p1 + k1 > u1 || p2 + k2 > u2)
      throw DataError("class too small for a stratified partition");
    auto& sub = subsets[static_cast<std::size_t>(s)];
    sub.reserve(static_cast<std::size_t>(n_s));
    sub.insert(sub.end(), pool1.begin() + p1, pool1.begin() + p1 + k1);
    sub.insert(sub.end(), pool2.begin() + p2, pool2.begin() + p2 + k2);
    p1 += k1;
    p2 += k2;
    std::sort(sub.begin(), sub.end());
  }
  return subsets;
}

// One trained ensemble: column i of w is the classifier of subset i.
struct TrainedEnsemble {
  Eigen::MatrixXd w;  // d x m
  EnsembleConfig config;
  std::vector<std::vector<Eigen::Index>> subsets;

  // Averaged decision scores g(x) = (1/m) sum_i w_i^T x for each column of x.
  Eigen::VectorXd scores(const Eigen::MatrixXd& x) const {
    if (x.rows() != w.rows()) throw DataError("dimension mismatch in scoring");
    Eigen::VectorXd w_mean = w.rowwise().mean();
    return x.transpose() * w_mean;
  }

  // Predicted labels: score > threshold or score == threshold -> +1 (class 2).
  Eigen::VectorXi classify(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd g = scores(x);
    Eigen::VectorXi out(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i)
      out(i) = g(i) < config.threshold ? -1 : 1;
    return out;
  }
};

inline TrainedEnsemble train_ensemble(const Dataset& data, const EnsembleConfig& config,
                                      std::mt19937_64& rng) {
  data.validate();
  config.validate();
  if (data.dim() != config.d) throw ConfigError("config d does not match dataset");
  if (data.size() != config.n_total) throw ConfigError("config n_total does not match dataset");
  TrainedEnsemble ens;
  ens.config = config;
  ens.subsets = partition_indices(data.y, config.m, rng);
  ens.w.resize(config.d, config.m);
  for (int s = 0; s < config.m; ++s) {
    const auto& idx = ens.subsets[static_cast<std::size_t>(s)];
    Eigen::MatrixXd xs(config.d, static_cast<Eigen::Index>(idx.size()));
    Eigen::VectorXd ys(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xs.col(static_cast<Eigen::Index>(k)) = data.x.col(idx[k]);
      ys(static_cast<Eigen::Index>(k)) = static_cast<double>(data.y(idx[k]));
    }
    ens.w.col(s) = lssvm_solve(xs, ys, config.lambda);
  }
  return ens;
}

// Evaluates one partition at every lambda of a grid, at threshold 0. The
// per-subset Gram and cross-moment are built once; each lambda then costs one
// Cholesky solve per subset, which is what makes dense (m, lambda) error maps
// affordable. With a single lambda this reproduces train_ensemble +
// empirical_error exactly (same partition draw, same arithmetic).
inline std::vector<double> lambda_sweep_errors(const Dataset& train, const Dataset& test,
                                               int m, const std::vector<double>& lambdas,
                                               std::mt19937_64& rng) {
  train.validate();
  test.validate();
  if (train.dim() != test.dim()) throw DataError("train/test dimension mismatch");
  auto subsets = partition_indices(train.y, m, rng);
  const Eigen::Index d = train.dim();
  std::vector<Eigen::MatrixXd> grams;
  std::vector<Eigen::VectorXd> cross;
  grams.reserve(subsets.size());
  cross.reserve(subsets.size());
  for (const auto& idx : subsets) {
    Eigen::MatrixXd xs(d, static_cast<Eigen::Index>(idx.size()));
    Eigen::VectorXd ys(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xs.col(static_cast<Eigen::Index>(k)) = train.x.col(idx[k]);
      ys(static_cast<Eigen::Index>(k)) = static_cast<double>(train.y(idx[k]));
    }
    const double ns = static_cast<double>(idx.size());
    grams.push_back((xs * xs.transpose()) / ns);
    cross.push_back(xs * ys / ns);
  }
  std::vector<double> out;
  out.reserve(lambdas.size());
  for (double lambda : lambdas) {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(d);
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      Eigen::MatrixXd g = grams[s];
      g.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(g);
      if (llt.info() != Eigen::Success)
        throw NumericalError("lambda sweep factorization failed");
      w_mean += llt.solve(cross[s]);
    }
    w_mean /= static_cast<double>(subsets.size());
    Eigen::VectorXd g_test = test.x.transpose() * w_mean;
    Eigen::Index wrong = 0;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      int pred = g_test(i) < 0.0 ? -1 : 1;
      if (pred != test.y(i)) ++wrong;
    }
    out.push_back(static_cast<double>(wrong) / static_cast<double>(test.size()));
  }
  return out;
}

// Fraction of test samples whose predicted label differs from the truth.
inline double empirical_error(const TrainedEnsemble& ens, const Dataset& test) {
  test.validate();
  Eigen::VectorXi pred = ens.classify(test.x);
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i)
    if (pred(i) != test.y(i)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

}  // namespace rmtbag

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rmtbag/data.hpp"
#include "rmtbag/errors.hpp"
#include "rmtbag/model.hpp"
#include "rmtbag/random.hpp"

namespace rmtbag {

struct EstimationConfig {
  int bootstrap_reps = 100;
  std::uint64_t seed = 0;
  // Fixes the shrinkage intensity instead of the data-driven choice.
  std::optional<double> shrinkage_override;

  void validate() const {
    if (bootstrap_reps < 1) throw ConfigError("bootstrap_reps must be at least 1");
    if (shrinkage_override && !(*shrinkage_override >= 0.0 && *shrinkage_override <= 1.0))
      throw ConfigError("shrinkage_override must lie in [0, 1]");
  }
};

namespace detail {

// Canonical sample order: byte-lexicographic on the column payload. Resampling
// over this order makes the estimate invariant to how the caller ordered the
// samples.
inline std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd& samples) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(samples.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t bytes = static_cast<std::size_t>(samples.rows()) * sizeof(double);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::memcmp(samples.col(a).data(), samples.col(b).data(), bytes) < 0;
  });
  return idx;
}

}  // namespace detail

// Average of `reps` with-replacement resample means. A single-sample input is
// reproduced exactly; in general the estimate concentrates on the sample mean
// at rate 1/sqrt(n * reps).
inline Eigen::VectorXd bootstrap_mean(const Eigen::MatrixXd& samples, int reps,
                                      std::mt19937_64& rng) {
  const Eigen::Index n = samples.cols();
  if (n < 1) throw DataError("bootstrap_mean needs at least one sample");
  if (reps < 1) throw ConfigError("bootstrap_reps must be at least 1");
  auto order = detail::canonical_order(samples);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(samples.rows());
  Eigen::VectorXd res(samples.rows());
  for (int b = 0; b < reps; ++b) {
    res.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      res += samples.col(order[static_cast<std::size_t>(pick(rng))]);
    acc += res / static_cast<double>(n);
  }
  return acc / static_cast<double>(reps);
}

struct ShrinkageEstimate {
  Eigen::MatrixXd sigma;
  double rho = 0.0;  // shrinkage intensity toward the scaled identity
};

// Linear shrinkage of the empirical covariance toward mu*I with the
// quadratic-loss-optimal intensity estimated from the data:
//   S = (1/n) Xc Xc^T, mu = tr(S)/d,
//   delta = ||S - mu I||_F^2 / d,
//   beta  = (1/(d n)) sum_ij [ (1/n)(X2 X2^T)_ij - S_ij^2 ],  X2 = Xc.^2,
//   rho   = min(beta, delta) / delta.
// Two samples centered are exact negatives of each other, which drives the
// beta estimate to zero no matter the data; that degenerate case is pinned to
// full shrinkage instead.
inline ShrinkageEstimate ledoit_wolf(const Eigen::MatrixXd& samples,
                                     std::optional<double> shrinkage_override = {}) {
  const Eigen::Index d = samples.rows();
  const Eigen::Index n = samples.cols();
  if (n < 2) throw DataError("covariance shrinkage needs at least 2 samples");
  Eigen::MatrixXd xc = samples.colwise() - samples.rowwise().mean().eval();
  Eigen::MatrixXd s = (xc * xc.transpose()) / static_cast<double>(n);
  double mu = s.trace() / static_cast<double>(d);

  double rho;
  if (shrinkage_override) {
    rho = *shrinkage_override;
  } else if (n == 2) {
    rho = 1.0;
  } else {
    Eigen::MatrixXd centered = s;
    centered.diagonal().array() -= mu;
    double delta = centered.squaredNorm() / static_cast<double>(d);
    if (delta <= 0.0) {
      rho = 0.0;
    } else {
      Eigen::MatrixXd x2 = xc.cwiseProduct(xc);
      double beta = ((x2 * x2.transpose()).array() / static_cast<double>(n) -
                     s.cwiseProduct(s).array())
                        .sum() /
                    (static_cast<double>(d) * static_cast<double>(n));
      beta = std::min(beta, delta);
      rho = beta <= 0.0 ? 0.0 : beta / delta;
    }
  }
  ShrinkageEstimate out;
  out.rho = rho;
  out.sigma = (1.0 - rho) * s;
  out.sigma.diagonal().array() += rho * mu;
  return out;
}

// Plug-in mixture estimate: bootstrap means, shrunk covariances, empirical
// priors. Class 1 is the -1 label block.
inline MixtureModel estimate_model(const Dataset& data, const EstimationConfig& config) {
  data.validate();
  config.validate();
  auto counts = data.class_counts();
  if (counts[0] < 2 || counts[1] < 2)
    throw DataError("model estimation needs at least 2 samples per class");
  MixtureModel model;
  for (int cls = 0; cls < 2; ++cls) {
    const int label = cls == 0 ? -1 : 1;
    Eigen::MatrixXd xs(data.dim(), counts[static_cast<std::size_t>(cls)]);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (data.y(i) == label) xs.col(k++) = data.x.col(i);
    std::mt19937_64 rng = substream(config.seed, "bootstrap", static_cast<std::uint64_t>(cls));
    Eigen::VectorXd mu = bootstrap_mean(xs, config.bootstrap_reps, rng);
    ShrinkageEstimate cov = ledoit_wolf(xs, config.shrinkage_override);
    if (cls == 0) {
      model.mu1 = mu;
      model.sigma1 = cov.sigma;
    } else {
      model.mu2 = mu;
      model.sigma2 = cov.sigma;
    }
  }
  model.priors[0] = static_cast<double>(counts[0]) / static_cast<double>(data.size());
  model.priors[1] = static_cast<double>(counts[1]) / static_cast<double>(data.size());
  model.validate();
  return model;
}

}  // namespace rmtbag

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "rmtbag/errors.hpp"

namespace rmtbag {

// Two-class Gaussian mixture: class 1 ~ N(mu1, sigma1) with prior priors[0],
// class 2 ~ N(mu2, sigma2) with prior priors[1]. Class 1 carries label -1 and
// class 2 label +1 throughout the library.
struct MixtureModel {
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu2;
  Eigen::MatrixXd sigma1;
  Eigen::MatrixXd sigma2;
  Eigen::Vector2d priors{0.5, 0.5};

  Eigen::Index dim() const { return mu1.size(); }

  // Symmetry tolerance 1e-10 (max absolute asymmetry), eigenvalue floor -1e-10.
  void validate() const {
    const Eigen::Index d = mu1.size();
    if (d == 0) throw ConfigError("model dimension must be positive");
    if (mu2.size() != d || sigma1.rows() != d || sigma1.cols() != d ||
        sigma2.rows() != d || sigma2.cols() != d)
      throw ConfigError("model fields have inconsistent dimensions");
    if (!(priors[0] > 0.0) || !(priors[1] > 0.0))
      throw ConfigError("class priors must be positive");
    if (std::abs(priors[0] + priors[1] - 1.0) > 1e-9)
      throw ConfigError("class priors must sum to 1");
    for (const Eigen::MatrixXd* s : {&sigma1, &sigma2}) {
      double asym = (*s - s->transpose()).cwiseAbs().maxCoeff();
      if (asym > 1e-10) throw ConfigError("covariance is not symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(*s, Eigen::EigenvaluesOnly);
      if (eig.info() != Eigen::Success)
        throw NumericalError("covariance eigendecomposition failed");
      if (eig.eigenvalues().minCoeff() < -1e-10)
        throw ConfigError("covariance has a negative eigenvalue");
    }
  }
};

// Mixture with means -scale*e1 / +scale*e1 and a shared covariance.
inline MixtureModel symmetric_model(Eigen::Index d, double mu_scale,
                                    const Eigen::MatrixXd& sigma) {
  MixtureModel m;
  m.mu1 = Eigen::VectorXd::Zero(d);
  m.mu1(0) = -mu_scale;
  m.mu2 = -m.mu1;
  m.sigma1 = sigma;
  m.sigma2 = sigma;
  return m;
}

inline MixtureModel symmetric_identity_model(Eigen::Index d, double mu_scale) {
  return symmetric_model(d, mu_scale, Eigen::MatrixXd::Identity(d, d));
}

// Training/prediction configuration of one bagged ridge classifier ensemble:
// n_total samples split into m disjoint subsets of floor(n_total/m) samples,
// one regularized least-squares classifier per subset, scores averaged and
// compared against `threshold`.
struct EnsembleConfig {
  Eigen::Index n_total = 0;
  Eigen::Index d = 0;
  int m = 1;
  double lambda = 1.0;
  double threshold = 0.0;

  Eigen::Index subset_size() const { return m >= 1 ? n_total / m : 0; }

  // d / floor(n_total/m): the dimension ratio seen by each subset's solver.
  double subset_ratio() const {
    Eigen::Index ns = subset_size();
    return ns > 0 ? static_cast<double>(d) / static_cast<double>(ns) : std::numeric_limits<double>::infinity();
  }

  // The asymptotic error formulas are valid only below the interpolation
  // ratio; training itself is not restricted by this.
  bool theory_feasible() const { return subset_ratio() < 1.0; }

  void validate() const {
    if (d < 1) throw ConfigError("d must be positive");
    if (n_total < 2) throw ConfigError("n_total must be at least 2");
    if (m < 1) throw ConfigError("m must be at least 1");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
    if (!std::isfinite(threshold)) throw ConfigError("threshold must be finite");
    if (subset_size() < 2)
      throw ConfigError("m too large: each subset needs at least 2 samples (n_total/m >= 2)");
  }
};

}  // namespace rmtbag

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rmtbag/errors.hpp"
#include "rmtbag/model.hpp"
#include "rmtbag/stats.hpp"

namespace rmtbag {

// Deterministic equivalent of the subset resolvent Q = (X_s X_s^T/n_s + l I)^{-1}:
//   q_bar = (sum_l chat_l C_l / (1 + delta_l) + lambda I)^{-1},
//   delta_l = tr(C_l q_bar) / n_s,  C_l = Sigma_l + mu_l mu_l^T,
// with chat_l the subset-level class fractions.
struct DeterministicEquivalent {
  Eigen::MatrixXd q_bar;
  Eigen::Vector2d delta;
  Eigen::Index subset_n = 0;
  std::array<Eigen::Index, 2> subset_class_n{0, 0};
  int iterations = 0;
  double residual = 0.0;

  Eigen::Vector2d class_fractions() const {
    return {static_cast<double>(subset_class_n[0]) / static_cast<double>(subset_n),
            static_cast<double>(subset_class_n[1]) / static_cast<double>(subset_n)};
  }
};

// Second-order deterministic equivalents feeding the variance formula:
// k1/k2 are the per-test-class weight-covariance equivalents, delta_prime
// holds (1/n_s) tr(Sigma_{l'} K_l) at (l', l).
struct SecondOrderQuantities {
  Eigen::MatrixXd k1, k2;
  Eigen::Vector2d d_vec1, d_vec2;
  Eigen::Vector2d t_bar1, t_bar2;
  Eigen::Matrix2d v_tilde;
  Eigen::Matrix2d a_tilde;
  Eigen::Matrix2d delta_prime;
};

// Predicted law of the averaged decision score on each class, plus the error
// at the optimal threshold.
struct ScorePrediction {
  double mean1 = 0.0, mean2 = 0.0;
  double var1 = 0.0, var2 = 0.0;
  double threshold = 0.0;
  double error = 0.0;
  EnsembleConfig config;
};

namespace detail {

// Class-1 count at subset level: round(c1 * n_s), half away from zero.
inline std::array<Eigen::Index, 2> subset_class_counts(const Eigen::Vector2d& priors,
                                                       Eigen::Index n_s) {
  Eigen::Index n1 = static_cast<Eigen::Index>(std::llround(priors[0] * static_cast<double>(n_s)));
  n1 = std::clamp<Eigen::Index>(n1, 0, n_s);
  return {n1, n_s - n1};
}

inline Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError("resolvent equivalent system is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

inline double trace_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  // tr(A B) for symmetric A, B.
  return a.cwiseProduct(b).sum();
}

}  // namespace detail

// Damped fixed-point iteration for (q_bar, delta). Starts as plain iteration
// and switches permanently to half-step damping the first time the residual
// grows (which happens near and above the interpolation ratio).
inline DeterministicEquivalent solve_fixed_point(const MixtureModel& model,
                                                 const EnsembleConfig& config,
                                                 double tol = 1e-10,
                                                 int max_iter = 1000) {
  model.validate();
  config.validate();
  if (model.dim() != config.d) throw ConfigError("config d does not match model");
  const Eigen::Index d = config.d;
  const Eigen::Index n_s = config.subset_size();
  DeterministicEquivalent de;
  de.subset_n = n_s;
  de.subset_class_n = detail::subset_class_counts(model.priors, n_s);
  const Eigen::Vector2d chat = de.class_fractions();
  const double ns = static_cast<double>(n_s);

  const Eigen::MatrixXd c1 = model.sigma1 + model.mu1 * model.mu1.transpose();
  const Eigen::MatrixXd c2 = model.sigma2 + model.mu2 * model.mu2.transpose();
  auto build_q = [&](const Eigen::Vector2d& delta) {
    Eigen::MatrixXd m = (chat[0] / (1.0 + delta[0])) * c1 + (chat[1] / (1.0 + delta[1])) * c2;
    m.diagonal().array() += config.lambda;
    return detail::invert_spd(m);
  };

  Eigen::Vector2d delta{0.0, 0.0};
  double prev_res = std::numeric_limits<double>::infinity();
  double theta = 1.0;
  bool converged = false;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::MatrixXd q = build_q(delta);
    Eigen::Vector2d fresh{detail::trace_product(c1, q) / ns,
                          detail::trace_product(c2, q) / ns};
    double res = (fresh - delta).cwiseAbs().maxCoeff();
    if (res <= tol) {
      delta = fresh;
      de.iterations = it;
      converged = true;
      break;
    }
    if (res > prev_res) theta = 0.5;
    prev_res = res;
    delta += theta * (fresh - delta);
  }
  if (!converged)
    throw NumericalError("resolvent fixed point did not converge in " +
                         std::to_string(max_iter) + " iterations");
  de.q_bar = build_q(delta);
  de.delta = delta;
  de.residual = std::max(
      std::abs(detail::trace_product(c1, de.q_bar) / ns - delta[0]),
      std::abs(detail::trace_product(c2, de.q_bar) / ns - delta[1]));
  return de;
}

// Second-order system: v_tilde(i,j) = tr(Sigma_i q_bar Sigma_j q_bar)/n_s,
// a_tilde = diag(chat_l / (1+delta_l)^2), per-class d-vectors solve
// (I - v_tilde a_tilde) d = t_bar, and
// K_l = q_bar Sigma_l q_bar + sum_l' chat_l' d_l'(l)/(1+delta_l')^2 q_bar C_l' q_bar.
inline SecondOrderQuantities second_order(const MixtureModel& model,
                                          const DeterministicEquivalent& de) {
  const Eigen::Vector2d chat = de.class_fractions();
  const double ns = static_cast<double>(de.subset_n);
  const Eigen::MatrixXd& q = de.q_bar;
  const std::array<const Eigen::MatrixXd*, 2> sigma{&model.sigma1, &model.sigma2};

  SecondOrderQuantities so;
  std::array<Eigen::MatrixXd, 2> qsq;  // q_bar Sigma_l q_bar
  for (int l = 0; l < 2; ++l) qsq[static_cast<std::size_t>(l)] = q * (*sigma[static_cast<std::size_t>(l)]) * q;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      so.v_tilde(i, j) =
          detail::trace_product(*sigma[static_cast<std::size_t>(i)], qsq[static_cast<std::size_t>(j)]) / ns;
  so.a_tilde.setZero();
  so.a_tilde(0, 0) = chat[0] / ((1.0 + de.delta[0]) * (1.0 + de.delta[0]));
  so.a_tilde(1, 1) = chat[1] / ((1.0 + de.delta[1]) * (1.0 + de.delta[1]));

  Eigen::Matrix2d sys = Eigen::Matrix2d::Identity() - so.v_tilde * so.a_tilde;
  // Spectral radius of v_tilde * a_tilde must stay below 1 for the series to sum.
  {
    Eigen::Matrix2d p = so.v_tilde * so.a_tilde;
    double tr = p.trace(), det = p.determinant();
    double disc = tr * tr - 4.0 * det;
    double rho = disc >= 0.0
                     ? std::max(std::abs(0.5 * (tr + std::sqrt(disc))),
                                std::abs(0.5 * (tr - std::sqrt(disc))))
                     : std::sqrt(std::abs(det));
    if (rho >= 1.0)
      throw NumericalError("second-order system diverges (spectral radius " +
                           std::to_string(rho) + " >= 1)");
  }

  const Eigen::MatrixXd c1 = model.sigma1 + model.mu1 * model.mu1.transpose();
  const Eigen::MatrixXd c2 = model.sigma2 + model.mu2 * model.mu2.transpose();
  std::array<Eigen::MatrixXd, 2> qcq{q * c1 * q, q * c2 * q};

  std::array<Eigen::Vector2d*, 2> tbars{&so.t_bar1, &so.t_bar2};
  std::array<Eigen::Vector2d*, 2> dvecs{&so.d_vec1, &so.d_vec2};
  std::array<Eigen::MatrixXd*, 2> ks{&so.k1, &so.k2};
  for (int l = 0; l < 2; ++l) {
    Eigen::Vector2d t{so.v_tilde(l, 0), so.v_tilde(l, 1)};
    *tbars[static_cast<std::size_t>(l)] = t;
    Eigen::Vector2d dv = sys.colPivHouseholderQr().solve(t);
    *dvecs[static_cast<std::size_t>(l)] = dv;
    Eigen::MatrixXd k = qsq[static_cast<std::size_t>(l)];
    for (int lp = 0; lp < 2; ++lp)
      k += chat[lp] * dv[lp] / ((1.0 + de.delta[lp]) * (1.0 + de.delta[lp])) *
           qcq[static_cast<std::size_t>(lp)];
    *ks[static_cast<std::size_t>(l)] = k;
    so.delta_prime(0, l) = detail::trace_product(*sigma[0], k) / ns;
    so.delta_prime(1, l) = detail::trace_product(*sigma[1], k) / ns;
  }
  return so;
}

// Class-wise limits of the averaged decision score, with class labels
// ytilde = (-1, +1):
//   m_l = a^T q_bar mu_l,  a = sum_l' ytilde_l' chat_l' mu_l' / (1 + delta_l').
inline Eigen::Vector2d theoretical_means(const MixtureModel& model,
                                         const DeterministicEquivalent& de) {
  const Eigen::Vector2d chat = de.class_fractions();
  Eigen::VectorXd a = -chat[0] / (1.0 + de.delta[0]) * model.mu1 +
                      chat[1] / (1.0 + de.delta[1]) * model.mu2;
  Eigen::VectorXd qa = de.q_bar * a;
  return {qa.dot(model.mu1), qa.dot(model.mu2)};
}

// Class-wise variances of the averaged score for an m-subset ensemble:
// a single-classifier fluctuation term shrinking like 1/m plus the
// between-classifier covariance carried by the shared mean direction.
inline Eigen::Vector2d theoretical_variances(const MixtureModel& model,
                                             const DeterministicEquivalent& de,
                                             const SecondOrderQuantities& so, int m) {
  if (m < 1) throw ConfigError("m must be at least 1");
  const Eigen::Vector2d chat = de.class_fractions();
  const std::array<const Eigen::VectorXd*, 2> mus{&model.mu1, &model.mu2};
  const std::array<const Eigen::MatrixXd*, 2> sigma{&model.sigma1, &model.sigma2};
  const std::array<const Eigen::MatrixXd*, 2> ks{&so.k1, &so.k2};
  const std::array<double, 2> ytilde{-1.0, 1.0};

  Eigen::VectorXd a = Eigen::VectorXd::Zero(model.dim());
  for (int lp = 0; lp < 2; ++lp)
    a += ytilde[static_cast<std::size_t>(lp)] * chat[lp] / (1.0 + de.delta[lp]) *
         (*mus[static_cast<std::size_t>(lp)]);
  Eigen::VectorXd qa = de.q_bar * a;

  Eigen::Vector2d out;
  for (int l = 0; l < 2; ++l) {
    Eigen::VectorXd a_dp = Eigen::VectorXd::Zero(model.dim());
    double trace_term = 0.0;
    for (int lp = 0; lp < 2; ++lp) {
      double w = chat[lp] * so.delta_prime(lp, l) /
                 ((1.0 + de.delta[lp]) * (1.0 + de.delta[lp]));
      trace_term += w;
      a_dp += ytilde[static_cast<std::size_t>(lp)] * w * (*mus[static_cast<std::size_t>(lp)]);
    }
    double v_single = a.dot((*ks[static_cast<std::size_t>(l)]) * a) + trace_term -
                      2.0 * a_dp.dot(qa);
    double v_cross = qa.dot((*sigma[static_cast<std::size_t>(l)]) * qa);
    double var = v_single / static_cast<double>(m) +
                 (static_cast<double>(m - 1) / static_cast<double>(m)) * v_cross;
    if (!(var > 0.0) || !std::isfinite(var))
      throw NumericalError("predicted score variance is not positive");
    out[l] = var;
  }
  return out;
}

// Misclassification mass of the two predicted Gaussians around threshold eta:
//   c1 P(score1 >= eta) + c2 P(score2 < eta).
inline double classification_error(double mean1, double mean2, double sd1, double sd2,
                                   double c1, double c2, double eta) {
  if (!(sd1 > 0.0) || !(sd2 > 0.0)) throw ConfigError("score stddevs must be positive");
  return c1 * (1.0 - normal_cdf((eta - mean1) / sd1)) +
         c2 * normal_cdf((eta - mean2) / sd2);
}

// Threshold minimizing classification_error. Stationary points solve the
// weighted-density equality c1 phi1(eta) = c2 phi2(eta): a linear equation for
// equal variances, otherwise a quadratic whose real roots are compared by
// error value (they may lie outside the means interval for skewed priors).
// When no stationary point beats always predicting the majority class, an
// extreme threshold on the majority side is returned; with equal means and a
// tie, the shared mean is kept.
inline double optimal_threshold(double mean1, double mean2, double sd1, double sd2,
                                double c1, double c2) {
  if (!(sd1 > 0.0) || !(sd2 > 0.0)) throw ConfigError("score stddevs must be positive");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("class priors must be positive");

  auto err = [&](double eta) {
    return classification_error(mean1, mean2, sd1, sd2, c1, c2, eta);
  };
  const double lo = std::min(mean1, mean2), hi = std::max(mean1, mean2);
  const double sd_max = std::max(sd1, sd2);
  const bool equal_sd = std::abs(sd1 - sd2) <= 1e-14 * sd_max;

  std::vector<double> candidates;
  if (mean1 == mean2) candidates.push_back(mean1);
  if (equal_sd) {
    if (mean1 != mean2)
      candidates.push_back(0.5 * (mean1 + mean2) +
                           sd1 * sd1 * std::log(c1 / c2) / (mean2 - mean1));
  } else {
    const double a = 0.5 / (sd2 * sd2) - 0.5 / (sd1 * sd1);
    const double b = mean1 / (sd1 * sd1) - mean2 / (sd2 * sd2);
    const double c = 0.5 * mean2 * mean2 / (sd2 * sd2) -
                     0.5 * mean1 * mean1 / (sd1 * sd1) +
                     std::log((c1 * sd2) / (c2 * sd1));
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      candidates.push_back((-b + std::sqrt(disc)) / (2.0 * a));
      candidates.push_back((-b - std::sqrt(disc)) / (2.0 * a));
    } else if (mean1 != mean2) {
      // No stationary point: bracketed golden-section as a conservative probe.
      double a0 = lo - 8.0 * sd_max, b0 = hi + 8.0 * sd_max;
      const double g = (std::sqrt(5.0) - 1.0) / 2.0;
      for (int i = 0; i < 200; ++i) {
        double x1 = b0 - g * (b0 - a0), x2 = a0 + g * (b0 - a0);
        if (err(x1) < err(x2))
          b0 = x2;
        else
          a0 = x1;
      }
      candidates.push_back(0.5 * (a0 + b0));
    }
  }
  // Majority-class fallback last, adopted only on strict improvement.
  candidates.push_back(c1 <= c2 ? lo - 40.0 * sd_max : hi + 40.0 * sd_max);

  double best = candidates.front();
  double best_err = err(best);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (!std::isfinite(candidates[i])) continue;
    double e = err(candidates[i]);
    if (e < best_err - 1e-15) {
      best = candidates[i];
      best_err = e;
    }
  }
  return best;
}

// Full prediction pipeline for one configuration: deterministic equivalents,
// score moments, optimal threshold, and the resulting error.
inline ScorePrediction predict(const MixtureModel& model, const EnsembleConfig& config) {
  DeterministicEquivalent de = solve_fixed_point(model, config);
  SecondOrderQuantities so = second_order(model, de);
  Eigen::Vector2d means = theoretical_means(model, de);
  Eigen::Vector2d vars = theoretical_variances(model, de, so, config.m);
  ScorePrediction p;
  p.config = config;
  p.mean1 = means[0];
  p.mean2 = means[1];
  p.var1 = vars[0];
  p.var2 = vars[1];
  p.threshold = optimal_threshold(means[0], means[1], std::sqrt(vars[0]),
                                  std::sqrt(vars[1]), model.priors[0], model.priors[1]);
  p.error = classification_error(means[0], means[1], std::sqrt(vars[0]),
                                 std::sqrt(vars[1]), model.priors[0], model.priors[1],
                                 p.threshold);
  return p;
}

// Caching frontend for repeated predictions on one (model, n_total): the
// deterministic equivalents are reused across calls with the same (m, lambda).
class Predictor {
 public:
  Predictor(MixtureModel model, Eigen::Index n_total)
      : model_(std::move(model)), n_total_(n_total) {
    model_.validate();
    if (n_total_ < 2) throw ConfigError("n_total must be at least 2");
  }

  const MixtureModel& model() const { return model_; }
  Eigen::Index n_total() const { return n_total_; }

  EnsembleConfig config_for(int m, double lambda) const {
    EnsembleConfig c;
    c.n_total = n_total_;
    c.d = model_.dim();
    c.m = m;
    c.lambda = lambda;
    return c;
  }

  ScorePrediction at(int m, double lambda) {
    auto key = std::make_pair(m, std::bit_cast<std::uint64_t>(lambda));
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ScorePrediction p = predict(model_, config_for(m, lambda));
    cache_.emplace(key, p);
    return p;
  }

 private:
  MixtureModel model_;
  Eigen::Index n_total_;
  std::map<std::pair<int, std::uint64_t>, ScorePrediction> cache_;
};

}  // namespace rmtbag

#pragma once

#include <array>
#include <cmath>

#include "rmtbag/errors.hpp"
#include "rmtbag/stats.hpp"

namespace rmtbag {

// Balanced two-class problem with means -mu/+mu (|mu|^2 = mu_sq), identity
// covariance, subset dimension ratio c0 = d/n_s, ridge lambda, m subsets.
// Everything below is a closed form in these four numbers.
struct IsotropicParams {
  double mu_sq = 0.0;
  double c0 = 0.5;
  double lambda = 1.0;
  int m = 1;

  void validate() const {
    if (mu_sq < 0.0) throw ConfigError("mu_sq must be nonnegative");
    if (!(c0 > 0.0)) throw ConfigError("c0 must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (m < 1) throw ConfigError("m must be at least 1");
  }
};

struct IsotropicDerived {
  double delta = 0.0;
  double kappa = 0.0;
  double gamma = 0.0;
  double d_test = 0.0;
  double s_factor = 0.0;
  std::array<double, 4> a_coeffs{0.0, 0.0, 0.0, 0.0};
};

// Positive root of lambda delta^2 + (1 + lambda - c0) delta - c0 = 0, i.e. the
// trace self-consistency delta = c0 (1 + delta) / (1 + lambda + lambda delta).
inline double closed_form_delta(double c0, double lambda) {
  if (!(c0 > 0.0) || !(lambda > 0.0)) throw ConfigError("c0 and lambda must be positive");
  double b = 1.0 + lambda - c0;
  return (std::sqrt(b * b + 4.0 * lambda * c0) - b) / (2.0 * lambda);
}

// Second-order trace ratio d_test = c0 kappa^2 (1+delta)^2 / ((1+delta)^2 - c0 kappa^2).
// The denominator is positive whenever (kappa, delta) come from a consistent
// solution; a nonpositive value means the inputs are outside the domain.
inline double isotropic_d_test(double c0, double delta, double kappa) {
  double denom = (1.0 + delta) * (1.0 + delta) - c0 * kappa * kappa;
  if (!(denom > 0.0))
    throw NumericalError("d_test pole: (1+delta)^2 - c0 kappa^2 must be positive");
  return c0 * kappa * kappa * (1.0 + delta) * (1.0 + delta) / denom;
}

inline IsotropicDerived isotropic_derive(const IsotropicParams& p) {
  p.validate();
  IsotropicDerived out;
  out.delta = closed_form_delta(p.c0, p.lambda);
  const double dl = out.delta;
  const double one = 1.0 + dl;
  const double pn = 1.0 + p.lambda + p.lambda * dl;
  out.kappa = one / pn;
  out.gamma = out.kappa * out.kappa / (one + out.kappa * p.mu_sq);
  out.d_test = isotropic_d_test(p.c0, dl, out.kappa);
  out.s_factor = 1.0 + out.d_test / (one * one);
  const double k = out.kappa, g = out.gamma, dt = out.d_test, s = out.s_factor;
  out.a_coeffs[0] = k * k * s / (one * one);
  out.a_coeffs[1] = (k * k * dt / (one * one) - 2.0 * g * k * s) / (one * one);
  out.a_coeffs[2] = (g * g * s - 2.0 * k * g * dt / (one * one)) / (one * one);
  out.a_coeffs[3] = g * g * (dt / (one * one)) / (one * one);
  return out;
}

// Class-2 score mean mu_sq / (P + mu_sq) with P = 1 + lambda + lambda delta;
// the class-1 mean is its negative. Saturates to 1 as the signal grows.
inline double isotropic_mean(const IsotropicParams& p) {
  p.validate();
  double dl = closed_form_delta(p.c0, p.lambda);
  double pn = 1.0 + p.lambda + p.lambda * dl;
  return p.mu_sq / (pn + p.mu_sq);
}

// The four variance contributions. delta0 is the second-order trace input
// (equal to d_test for a self-consistent configuration, but accepted
// explicitly so the coupling can be cross-checked against the general engine):
//   term 0: label-noise term c0 / ((P^2 - c0) m)
//   term 1: signal polynomial sum_i A_i mu_sq^(i+1) / m
//   term 2: -2 delta0 (kappa mu_sq - gamma mu_sq^2) / (1+delta)^3 / m
//   term 3: between-classifier term (m-1)/m (kappa - gamma mu_sq)^2 mu_sq / (1+delta)^2
inline std::array<double, 4> isotropic_variance_terms(const IsotropicParams& p,
                                                      const IsotropicDerived& der,
                                                      double delta0) {
  p.validate();
  const double dl = der.delta, k = der.kappa, g = der.gamma;
  const double one = 1.0 + dl;
  const double pn = 1.0 + p.lambda + p.lambda * dl;
  const double m = static_cast<double>(p.m);
  const double u = p.mu_sq;
  std::array<double, 4> t{};
  double p2c = pn * pn - p.c0;
  if (!(p2c > 0.0))
    throw NumericalError("variance pole: P^2 - c0 must be positive");
  t[0] = p.c0 / (p2c * m);
  t[1] = (der.a_coeffs[0] * u + der.a_coeffs[1] * u * u + der.a_coeffs[2] * u * u * u +
          der.a_coeffs[3] * u * u * u * u) /
         m;
  t[2] = -2.0 * delta0 * (k * u - g * u * u) / (one * one * one) / m;
  t[3] = (m - 1.0) / m * (k * k * u - 2.0 * g * k * u * u + g * g * u * u * u) /
         (one * one);
  return t;
}

inline double isotropic_variance(const IsotropicParams& p) {
  IsotropicDerived der = isotropic_derive(p);
  auto t = isotropic_variance_terms(p, der, der.d_test);
  double v = t[0] + t[1] + t[2] + t[3];
  if (!(v > 0.0)) throw NumericalError("closed-form variance is not positive");
  return v;
}

// Balanced symmetric error: threshold 0, means -mean/+mean, equal variances.
inline double isotropic_error(const IsotropicParams& p) {
  double mean = isotropic_mean(p);
  double sd = std::sqrt(isotropic_variance(p));
  return normal_cdf(-mean / sd);
}

}  // namespace rmtbag

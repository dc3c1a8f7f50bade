#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rmtbag/data.hpp"
#include "rmtbag/isotropic.hpp"
#include "rmtbag/lssvm.hpp"
#include "rmtbag/rmt.hpp"

using namespace rmtbag;

namespace {

EnsembleConfig make_config(Eigen::Index n_total, Eigen::Index d, int m, double lambda) {
  EnsembleConfig c;
  c.n_total = n_total;
  c.d = d;
  c.m = m;
  c.lambda = lambda;
  return c;
}

MixtureModel zero_mean_identity(Eigen::Index d) {
  return symmetric_identity_model(d, 0.0);
}

double operator_norm(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("fixed point reproduces the closed-form trace at ratio 0.5") {
  // d/n_s = 0.5, lambda = 1: delta = (sqrt(4.25) - 1.5) / 2
  MixtureModel model = zero_mean_identity(50);
  DeterministicEquivalent de = solve_fixed_point(model, make_config(100, 50, 1, 1.0));
  const double expect = 0.28077640640441515;
  REQUIRE(de.delta[0] == Catch::Approx(expect).margin(1e-9));
  REQUIRE(de.delta[1] == Catch::Approx(expect).margin(1e-9));
  REQUIRE(de.residual <= 1e-10);
  REQUIRE(de.subset_n == 100);
  REQUIRE(de.subset_class_n[0] == 50);
}

TEST_CASE("subset class counts round the priors") {
  MixtureModel model = symmetric_identity_model(4, 0.5);
  model.priors = {0.7, 0.3};
  DeterministicEquivalent de = solve_fixed_point(model, make_config(10, 4, 1, 1.0));
  REQUIRE(de.subset_class_n[0] == 7);
  REQUIRE(de.subset_class_n[1] == 3);
}

TEST_CASE("huge regularization collapses the equivalent to I/lambda") {
  MixtureModel model = symmetric_identity_model(100, 0.9);
  const double lambda = 1e6;
  DeterministicEquivalent de = solve_fixed_point(model, make_config(1000, 100, 1, lambda));
  REQUIRE(de.delta.cwiseAbs().maxCoeff() <= 1e-4);
  Eigen::MatrixXd gap = de.q_bar - Eigen::MatrixXd::Identity(100, 100) / lambda;
  REQUIRE(operator_norm(gap) <= 1e-4 / lambda);
}

TEST_CASE("equivalent resolvent is bounded by 1/lambda") {
  for (double lambda : {1e-3, 0.1, 3.0}) {
    MixtureModel model = symmetric_model(40, 0.9, toeplitz_covariance(40, 0.5));
    DeterministicEquivalent de = solve_fixed_point(model, make_config(200, 40, 2, lambda));
    REQUIRE(operator_norm(de.q_bar) <= 1.0 / lambda + 1e-12);
  }
}

TEST_CASE("delta shrinks with lambda and grows with m") {
  MixtureModel model = symmetric_identity_model(60, 0.9);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
    DeterministicEquivalent de = solve_fixed_point(model, make_config(600, 60, 1, lambda));
    REQUIRE(de.delta[0] < prev);
    prev = de.delta[0];
  }
  prev = 0.0;
  for (int m : {1, 2, 4, 8}) {
    DeterministicEquivalent de = solve_fixed_point(model, make_config(600, 60, m, 0.5));
    REQUIRE(de.delta[0] > prev);
    prev = de.delta[0];
  }
}

TEST_CASE("fixed point converges in the stiff corner and above ratio 1") {
  // ratio 0.95 at small lambda needs the damped phase
  MixtureModel model = zero_mean_identity(95);
  DeterministicEquivalent de = solve_fixed_point(model, make_config(100, 95, 1, 1e-4));
  REQUIRE(de.residual <= 1e-10);
  double cf = closed_form_delta(0.95, 1e-4);
  REQUIRE(de.delta[0] == Catch::Approx(cf).margin(1e-8));

  // ratio 2.5: training regime past interpolation, still solvable
  MixtureModel wide = symmetric_identity_model(100, 0.9);
  EnsembleConfig cfg = make_config(2000, 100, 50, 0.01);
  REQUIRE_FALSE(cfg.theory_feasible());
  DeterministicEquivalent de2 = solve_fixed_point(wide, cfg);
  REQUIRE(de2.residual <= 1e-10);
}

TEST_CASE("second order collapses when the two covariances coincide") {
  MixtureModel model = symmetric_model(30, 0.9, toeplitz_covariance(30, 0.5));
  DeterministicEquivalent de = solve_fixed_point(model, make_config(300, 30, 3, 0.2));
  SecondOrderQuantities so = second_order(model, de);
  REQUIRE(so.v_tilde(0, 0) == Catch::Approx(so.v_tilde(1, 1)).epsilon(1e-12));
  REQUIRE(so.v_tilde(0, 1) == Catch::Approx(so.v_tilde(1, 0)).epsilon(1e-12));
  REQUIRE(so.v_tilde(0, 0) == Catch::Approx(so.v_tilde(0, 1)).epsilon(1e-12));
  REQUIRE((so.d_vec1 - so.d_vec2).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((so.k1 - so.k2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pure mean model has no second-order fluctuation") {
  MixtureModel model = symmetric_model(10, 0.9, Eigen::MatrixXd::Zero(10, 10));
  DeterministicEquivalent de = solve_fixed_point(model, make_config(100, 10, 1, 0.5));
  SecondOrderQuantities so = second_order(model, de);
  REQUIRE(so.v_tilde.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(so.delta_prime.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(so.k1.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("second-order trace matches the closed-form test ratio") {
  // zero-mean isotropic case: tr(Sigma K)/n_s equals d_test to machine level
  MixtureModel model = zero_mean_identity(100);
  DeterministicEquivalent de = solve_fixed_point(model, make_config(1000, 100, 1, 0.1));
  SecondOrderQuantities so = second_order(model, de);
  IsotropicParams p{0.0, 0.1, 0.1, 1};
  IsotropicDerived der = isotropic_derive(p);
  REQUIRE(so.delta_prime(0, 0) == Catch::Approx(der.d_test).margin(1e-6));

  // with the 0.9e1 spike the rank-one term adds a finite-size drift ~1e-3
  MixtureModel spiked = symmetric_identity_model(100, 0.9);
  DeterministicEquivalent de2 = solve_fixed_point(spiked, make_config(1000, 100, 1, 0.1));
  SecondOrderQuantities so2 = second_order(spiked, de2);
  REQUIRE(so2.delta_prime(0, 0) == Catch::Approx(der.d_test).margin(2e-3));
}

TEST_CASE("score means match the closed form and the published level") {
  MixtureModel model = symmetric_identity_model(100, 0.9);
  DeterministicEquivalent de = solve_fixed_point(model, make_config(2000, 100, 1, 0.1));
  Eigen::Vector2d means = theoretical_means(model, de);
  REQUIRE(means[1] == Catch::Approx(0.423033).margin(1e-5));
  REQUIRE(means[0] == Catch::Approx(-means[1]).margin(1e-12));
  IsotropicParams p{0.81, 0.05, 0.1, 1};
  REQUIRE(means[1] == Catch::Approx(isotropic_mean(p)).margin(1e-5));
}

TEST_CASE("score magnitude does not grow with the subset count") {
  MixtureModel model = symmetric_identity_model(100, 0.9);
  double prev = std::numeric_limits<double>::infinity();
  for (int m : {1, 2, 5, 10}) {
    DeterministicEquivalent de = solve_fixed_point(model, make_config(2000, 100, m, 0.1));
    double mean2 = theoretical_means(model, de)[1];
    REQUIRE(mean2 <= prev + 1e-12);
    prev = mean2;
  }
}

TEST_CASE("zero-signal variance has the closed form and no cross term") {
  MixtureModel model = zero_mean_identity(50);
  for (int m : {1, 3}) {
    EnsembleConfig cfg = make_config(100 * m, 50, m, 0.7);
    DeterministicEquivalent de = solve_fixed_point(model, cfg);
    SecondOrderQuantities so = second_order(model, de);
    Eigen::Vector2d vars = theoretical_variances(model, de, so, m);
    double delta = de.delta[0];
    double pn = 1.0 + 0.7 + 0.7 * delta;
    double c0 = 0.5;
    double expect = c0 / ((pn * pn - c0) * m);
    REQUIRE(vars[0] == Catch::Approx(expect).epsilon(1e-10));
    REQUIRE(vars[1] == Catch::Approx(expect).epsilon(1e-10));
    // cross term vanishes: the variance scales exactly like 1/m
  }
}

TEST_CASE("huge ensembles leave only the between-classifier variance") {
  MixtureModel model = symmetric_identity_model(2, 0.9);
  const int m = 10000;
  EnsembleConfig cfg = make_config(4 * m, 2, m, 0.1);
  DeterministicEquivalent de = solve_fixed_point(model, cfg);
  SecondOrderQuantities so = second_order(model, de);
  Eigen::Vector2d vars = theoretical_variances(model, de, so, m);
  // direct cross-term: (q_bar a)^T Sigma (q_bar a)
  Eigen::Vector2d chat = de.class_fractions();
  Eigen::VectorXd a = -chat[0] / (1.0 + de.delta[0]) * model.mu1 +
                      chat[1] / (1.0 + de.delta[1]) * model.mu2;
  Eigen::VectorXd qa = de.q_bar * a;
  double v_cross = qa.dot(model.sigma1 * qa);
  REQUIRE(std::abs(vars[0] - v_cross) / v_cross <= 1e-3);
}

TEST_CASE("optimal threshold solves the density-balance equation") {
  SECTION("symmetric balanced case is zero") {
    REQUIRE(optimal_threshold(-1.0, 1.0, 1.0, 1.0, 0.5, 0.5) == 0.0);
  }
  SECTION("skewed priors shift the threshold past the nearer mean") {
    double eta = optimal_threshold(-1.0, 1.0, 1.0, 1.0, 0.9, 0.1);
    REQUIRE(eta == Catch::Approx(std::log(9.0) / 2.0).margin(1e-12));
    REQUIRE(eta > 1.0);  // outside the means interval, and correctly so
  }
  SECTION("degenerate equal means return that mean") {
    REQUIRE(optimal_threshold(0.3, 0.3, 1.0, 1.0, 0.5, 0.5) == 0.3);
  }
  SECTION("never loses to a 1001-point grid scan") {
    struct Case {
      double m1, m2, s1, s2, c1, c2;
    };
    for (const Case& k : {Case{-0.4, 0.4, 0.5, 0.5, 0.5, 0.5},
                          Case{-0.4, 0.6, 0.3, 0.9, 0.5, 0.5},
                          Case{-1.0, 0.2, 0.8, 0.2, 0.7, 0.3},
                          Case{-0.1, 0.1, 0.4, 1.3, 0.2, 0.8},
                          Case{0.0, 2.0, 1.5, 0.2, 0.95, 0.05}}) {
      double eta = optimal_threshold(k.m1, k.m2, k.s1, k.s2, k.c1, k.c2);
      double best = classification_error(k.m1, k.m2, k.s1, k.s2, k.c1, k.c2, eta);
      double lo = k.m1 - 3.0 * k.s1, hi = k.m2 + 3.0 * k.s2;
      for (int i = 0; i <= 1000; ++i) {
        double t = lo + (hi - lo) * i / 1000.0;
        REQUIRE(best <= classification_error(k.m1, k.m2, k.s1, k.s2, k.c1, k.c2, t) + 1e-12);
      }
    }
  }
}

TEST_CASE("classification error formula hits the textbook value") {
  double err = classification_error(-1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.0);
  REQUIRE(err == Catch::Approx(0.15865525393145705).margin(1e-9));
  REQUIRE(classification_error(0.2, 0.2, 0.7, 0.7, 0.5, 0.5, 0.2) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("classification error equals the integral of the two masses") {
  struct Case {
    double m1, m2, s1, s2, c1, c2, eta;
  };
  for (const Case& k : {Case{-0.5, 0.4, 0.6, 1.1, 0.35, 0.65, 0.1},
                        Case{-1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.3}}) {
    double closed = classification_error(k.m1, k.m2, k.s1, k.s2, k.c1, k.c2, k.eta);
    auto density1 = [&](double x) { return normal_pdf((x - k.m1) / k.s1) / k.s1; };
    auto density2 = [&](double x) { return normal_pdf((x - k.m2) / k.s2) / k.s2; };
    double mass1 = adaptive_simpson(density1, k.eta, k.m1 + 14.0 * k.s1, 1e-14);
    double mass2 = adaptive_simpson(density2, k.m2 - 14.0 * k.s2, k.eta, 1e-14);
    REQUIRE(std::abs(closed - (k.c1 * mass1 + k.c2 * mass2)) < 1e-10);
  }
}

TEST_CASE("predict composes the full chain") {
  MixtureModel model = symmetric_model(40, 0.9, toeplitz_covariance(40, 0.5));
  EnsembleConfig cfg = make_config(400, 40, 4, 0.3);
  ScorePrediction p = predict(model, cfg);

  DeterministicEquivalent de = solve_fixed_point(model, cfg);
  SecondOrderQuantities so = second_order(model, de);
  Eigen::Vector2d means = theoretical_means(model, de);
  Eigen::Vector2d vars = theoretical_variances(model, de, so, cfg.m);
  double eta = optimal_threshold(means[0], means[1], std::sqrt(vars[0]),
                                 std::sqrt(vars[1]), 0.5, 0.5);
  REQUIRE(p.mean1 == means[0]);
  REQUIRE(p.mean2 == means[1]);
  REQUIRE(p.var1 == vars[0]);
  REQUIRE(p.var2 == vars[1]);
  REQUIRE(p.threshold == eta);
  REQUIRE(p.error ==
          classification_error(means[0], means[1], std::sqrt(vars[0]),
                               std::sqrt(vars[1]), 0.5, 0.5, eta));
  REQUIRE(p.mean1 < p.threshold);
  REQUIRE(p.threshold < p.mean2);
}

TEST_CASE("zero-signal prediction costs the smaller prior") {
  MixtureModel model = zero_mean_identity(20);
  ScorePrediction p = predict(model, make_config(200, 20, 2, 0.5));
  REQUIRE(p.error == Catch::Approx(0.5).margin(1e-12));

  model.priors = {0.7, 0.3};
  ScorePrediction q = predict(model, make_config(200, 20, 2, 0.5));
  REQUIRE(q.error == Catch::Approx(0.3).margin(1e-9));
}

TEST_CASE("label flip mirrors the prediction") {
  MixtureModel model;
  model.mu1 = Eigen::VectorXd::Zero(30);
  model.mu1(0) = -0.8;
  model.mu1(1) = 0.2;
  model.mu2 = Eigen::VectorXd::Zero(30);
  model.mu2(0) = 0.9;
  model.sigma1 = Eigen::MatrixXd::Identity(30, 30);
  model.sigma2 = toeplitz_covariance(30, 0.4);
  model.priors = {0.6, 0.4};

  MixtureModel flipped;
  flipped.mu1 = model.mu2;
  flipped.mu2 = model.mu1;
  flipped.sigma1 = model.sigma2;
  flipped.sigma2 = model.sigma1;
  flipped.priors = {0.4, 0.6};

  EnsembleConfig cfg = make_config(600, 30, 3, 0.2);
  ScorePrediction a = predict(model, cfg);
  ScorePrediction b = predict(flipped, cfg);
  REQUIRE(a.mean1 == Catch::Approx(-b.mean2).margin(1e-12));
  REQUIRE(a.mean2 == Catch::Approx(-b.mean1).margin(1e-12));
  REQUIRE(a.var1 == Catch::Approx(b.var2).epsilon(1e-10));
  REQUIRE(a.var2 == Catch::Approx(b.var1).epsilon(1e-10));
  REQUIRE(a.threshold == Catch::Approx(-b.threshold).margin(1e-9));
  REQUIRE(a.error == Catch::Approx(b.error).margin(1e-12));
}

TEST_CASE("rescaling data and lambda together changes nothing") {
  const double alpha = 3.0;
  MixtureModel base = symmetric_model(25, 0.9, toeplitz_covariance(25, 0.5));
  MixtureModel scaled = base;
  scaled.mu1 *= alpha;
  scaled.mu2 *= alpha;
  scaled.sigma1 *= alpha * alpha;
  scaled.sigma2 *= alpha * alpha;
  for (int m : {1, 3}) {
    for (double lambda : {0.05, 0.8}) {
      ScorePrediction p = predict(base, make_config(250, 25, m, lambda));
      ScorePrediction q = predict(scaled, make_config(250, 25, m, lambda * alpha * alpha));
      REQUIRE(p.error == Catch::Approx(q.error).margin(1e-10));
    }
  }
}

TEST_CASE("prediction matches a large simulated evaluation end to end") {
  MixtureModel model = symmetric_identity_model(100, 0.9);
  EnsembleConfig cfg = make_config(2000, 100, 1, 0.1);
  ScorePrediction p = predict(model, cfg);
  REQUIRE(p.mean2 == Catch::Approx(0.423033).margin(1e-5));

  SyntheticSpec spec;
  spec.d = 100;
  spec.n_per_class = 1000;
  spec.seed = 314;
  Dataset train = generate_synthetic(spec);
  spec.n_per_class = 50000;
  spec.seed = 315;
  Dataset test = generate_synthetic(spec);
  auto rng = substream(316, "partition");
  TrainedEnsemble ens = train_ensemble(train, cfg, rng);
  double emp = empirical_error(ens, test);
  REQUIRE(std::abs(emp - p.error) < 0.01);
}

TEST_CASE("predictor caches per configuration") {
  MixtureModel model = symmetric_identity_model(30, 0.9);
  Predictor pred(model, 300);
  ScorePrediction a = pred.at(3, 0.2);
  ScorePrediction b = pred.at(3, 0.2);
  REQUIRE(a.error == b.error);
  REQUIRE(a.threshold == b.threshold);
  ScorePrediction c = pred.at(4, 0.2);
  REQUIRE(c.error != a.error);
}

TEST_CASE("moment prediction stays calibrated against simulation") {
  // one mid-grid configuration; the full sweep lives in the acceptance suite
  MixtureModel model = symmetric_identity_model(100, 0.9);
  EnsembleConfig cfg = make_config(2000, 100, 5, 0.1);
  DeterministicEquivalent de = solve_fixed_point(model, cfg);
  SecondOrderQuantities so = second_order(model, de);
  Eigen::Vector2d means = theoretical_means(model, de);
  Eigen::Vector2d vars = theoretical_variances(model, de, so, cfg.m);

  const int draws = 30;
  const Eigen::Index test_per_class = 400;
  std::vector<double> draw_mean2;
  std::vector<double> all2;
  for (int r = 0; r < draws; ++r) {
    SyntheticSpec spec;
    spec.d = 100;
    spec.n_per_class = 1000;
    spec.seed = 1000 + static_cast<std::uint64_t>(r);
    Dataset train = generate_synthetic(spec);
    auto rng = substream(2000 + static_cast<std::uint64_t>(r), "partition");
    TrainedEnsemble ens = train_ensemble(train, cfg, rng);
    spec.n_per_class = test_per_class;
    spec.seed = 5000 + static_cast<std::uint64_t>(r);
    Dataset test = generate_synthetic(spec);
    Eigen::VectorXd g = ens.scores(test.x);
    double sum = 0.0;
    for (Eigen::Index i = test_per_class; i < 2 * test_per_class; ++i) {
      sum += g(i);
      all2.push_back(g(i));
    }
    draw_mean2.push_back(sum / static_cast<double>(test_per_class));
  }
  double mc_mean = mean(draw_mean2);
  double se = sample_stddev(draw_mean2) / std::sqrt(static_cast<double>(draws));
  REQUIRE(std::abs(mc_mean - means[1]) <= 3.0 * se);
  double mc_var = 0.0;
  double mu = mean(all2);
  for (double v : all2) mc_var += (v - mu) * (v - mu);
  mc_var /= static_cast<double>(all2.size() - 1);
  REQUIRE(std::abs(mc_var - vars[1]) / vars[1] <= 0.10);
}

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>

#include "eivsc/inference.hpp"
#include "eivsc/panel.hpp"
#include "eivsc/rng.hpp"
#include "eivsc/solver.hpp"
#include "eivsc/spectral.hpp"

using namespace eivsc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("estimate_tau: arithmetic and exact recovery") {
  panel::PanelObservation obs;
  obs.X = MatrixXd::Zero(2, 2);
  obs.y = VectorXd::Zero(2);
  obs.x_e = VectorXd::Zero(2);
  obs.y_e = 4.5;

  solver::FitResult fit;
  fit.theta = VectorXd::Zero(2);
  REQUIRE(inference::estimate_tau(obs, fit) == Catch::Approx(4.5));

  obs.y_e = 5.0;
  obs.x_e << 1.0, 2.0;
  fit.theta << 0.5, 0.5;
  REQUIRE(inference::estimate_tau(obs, fit) == Catch::Approx(3.5));

  fit.theta = VectorXd::Zero(3);
  REQUIRE_THROWS_AS(inference::estimate_tau(obs, fit), std::invalid_argument);

  // Zero-noise panel with b = A theta*, b_e = a_e' theta*: plugging theta*
  // recovers tau exactly.
  panel::SignalSpec spec;
  spec.rank = 2;
  spec.singular_values = {4.0, 1.0};
  const auto draw = panel::generate_signal(spec, 6, 4, 3);
  panel::GroundTruth truth{draw.A, draw.b, draw.a_e, draw.b_e, 1.25,
                           panel::NoiseSpec::iid_columns(6, 4, 0.0, 1)};
  const auto clean = panel::generate_panel(truth, 1);
  solver::FitResult star;
  star.theta = draw.theta_star;
  REQUIRE(inference::estimate_tau(clean, star) == Catch::Approx(1.25).margin(1e-12));
}

TEST_CASE("error_decomposition: identity and degenerate cases") {
  rng::CounterRng gen(61);
  panel::SignalSpec spec;
  spec.rank = 2;
  spec.singular_values = {5.0, 2.0};
  const auto draw = panel::generate_signal(spec, 8, 5, 7);
  panel::GroundTruth truth{draw.A, draw.b, draw.a_e, draw.b_e, 0.8,
                           panel::NoiseSpec::iid_columns(8, 5, 0.6, 2)};
  const auto obs = panel::generate_panel(truth, 11);

  VectorXd theta_tilde(5);
  for (int i = 0; i < 5; ++i) theta_tilde[i] = gen.next_uniform();
  theta_tilde /= theta_tilde.sum();

  SECTION("oracle estimator has zero deviation") {
    solver::FitResult fit;
    fit.theta = theta_tilde;
    const double tau_hat = inference::estimate_tau(obs, fit);
    const auto d = inference::error_decomposition(truth, theta_tilde, obs, tau_hat);
    REQUIRE(std::abs(d.deviation) <= 1e-12);
  }

  SECTION("zero noise: noise term vanishes") {
    panel::GroundTruth quiet = truth;
    quiet.noise = panel::NoiseSpec::iid_columns(8, 5, 0.0, 2);
    const auto quiet_obs = panel::generate_panel(quiet, 13);
    const double tau_hat = 0.123;
    const auto d = inference::error_decomposition(quiet, theta_tilde, quiet_obs, tau_hat);
    REQUIRE(std::abs(d.noise) <= 1e-12);
    REQUIRE(d.deviation + d.bias == Catch::Approx(tau_hat - quiet.tau).margin(1e-12));
  }

  SECTION("random instance: triple sums exactly") {
    const double tau_hat = gen.next_gaussian();
    const auto d = inference::error_decomposition(truth, theta_tilde, obs, tau_hat);
    REQUIRE(d.deviation + d.bias + d.noise == Catch::Approx(tau_hat - truth.tau).margin(1e-12));
  }
}

TEST_CASE("deviation_bound: worked examples") {
  // Rank-1 signal, a_e orthogonal to the rowspace, white noise (psi_col = 0).
  MatrixXd a = MatrixXd::Zero(4, 3);
  a(0, 0) = 6.0;
  const auto dec = spectral::svd(a);
  VectorXd a_e(3);
  a_e << 0.0, 1.5, 2.0;  // orthogonal to v1 = e1
  const auto noise = panel::NoiseSpec::iid_columns(4, 3, 1.3, 1);

  inference::DeviationBoundParams params;
  params.s = 0.4;
  params.sigma = 1.3;
  params.eta = 1.0;
  params.n = 4;
  params.w1 = 1.0;
  params.w2 = 0.0;
  params.width = 2.0;

  const auto rep = inference::deviation_bound(a_e, dec, noise, params);
  REQUIRE(rep.D == Catch::Approx(a_e.norm()).epsilon(1e-12));
  REQUIRE(rep.bound == Catch::Approx(std::sqrt(2.0) * params.s * a_e.norm() / params.sigma).epsilon(1e-12));

  SECTION("s = 0 with psi_col = 0 gives a zero bound") {
    auto zero = params;
    zero.s = 0.0;
    zero.w2 = 1.0;
    const auto r0 = inference::deviation_bound(a_e, dec, noise, zero);
    REQUIRE(r0.bound == 0.0);
    REQUIRE(r0.probability_terms[1] == 0.0);
  }

  SECTION("doubling w2 adds exactly (s/sigma) w2 residual_l2") {
    auto w2a = params;
    w2a.w2 = 1.0;
    auto w2b = params;
    w2b.w2 = 2.0;
    const double delta = inference::deviation_bound(a_e, dec, noise, w2b).bound -
                         inference::deviation_bound(a_e, dec, noise, w2a).bound;
    REQUIRE(delta == Catch::Approx((params.s / params.sigma) * noise.residual_l2()).epsilon(1e-12));
  }

  SECTION("monotone in s, w1, w2 and the autocorrelation norm") {
    const auto ar_noise = panel::NoiseSpec::ar1_columns(4, 3, 1.3, 0.5, 1);
    auto base = params;
    base.w2 = 1.0;
    const double b0 = inference::deviation_bound(a_e, dec, ar_noise, base).bound;

    auto bump_s = base;
    bump_s.s += 0.5;
    REQUIRE(inference::deviation_bound(a_e, dec, ar_noise, bump_s).bound >= b0 - 1e-12);
    auto bump_w1 = base;
    bump_w1.w1 += 0.5;
    REQUIRE(inference::deviation_bound(a_e, dec, ar_noise, bump_w1).bound >= b0 - 1e-12);
    auto bump_w2 = base;
    bump_w2.w2 += 0.5;
    REQUIRE(inference::deviation_bound(a_e, dec, ar_noise, bump_w2).bound >= b0 - 1e-12);
    const auto stronger_ar = panel::NoiseSpec::ar1_columns(4, 3, 1.3, 0.8, 1);
    REQUIRE(inference::deviation_bound(a_e, dec, stronger_ar, base).bound >= b0 - 1e-12);
  }

  SECTION("eta = 0 is rejected") {
    auto bad = params;
    bad.eta = 0.0;
    REQUIRE_THROWS_AS(inference::deviation_bound(a_e, dec, noise, bad), std::invalid_argument);
  }
}

TEST_CASE("variance estimates: plugin") {
  VectorXd theta(4);
  theta << 0.25, 0.25, 0.25, 0.25;  // ||theta||^2 = 0.25
  REQUIRE(inference::plugin_sigma_tau(2.0, 4.0, theta) == Catch::Approx(2.0 * std::sqrt(0.5)).epsilon(1e-12));
  REQUIRE(inference::plugin_sigma_tau(1.7, 1.0, VectorXd::Zero(3)) == Catch::Approx(1.7).epsilon(1e-12));
  REQUIRE_THROWS_AS(inference::plugin_sigma_tau(1.0, 0.0, theta), std::invalid_argument);

  // Simplex weights: sigma_e sqrt(1/p_e + 1/p) <= plugin <= sigma_e sqrt(1/p_e + 1).
  rng::CounterRng gen(67);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 2 + static_cast<int>(gen.next_below(12));
    VectorXd w(p);
    for (int i = 0; i < p; ++i) w[i] = gen.next_uniform();
    w /= w.sum();
    const double sig = inference::plugin_sigma_tau(1.0, 4.0, w);
    REQUIRE(sig >= std::sqrt(0.25 + 1.0 / p) - 1e-12);
    REQUIRE(sig <= std::sqrt(0.25 + 1.0) + 1e-12);
  }
}

TEST_CASE("variance estimates: jackknife over treated series") {
  panel::PanelObservation obs;
  obs.X = MatrixXd::Zero(3, 2);
  obs.y = VectorXd::Zero(3);
  obs.x_e = VectorXd::Zero(2);
  solver::FitResult fit;
  fit.theta = VectorXd::Zero(2);

  SECTION("identical series give zero") {
    MatrixXd series(4, 3);
    for (int j = 0; j < 3; ++j) series.col(j) << 1.0, 2.0, 3.0, 4.0;
    obs.y = series.topRows(3).rowwise().mean();
    obs.y_e = 4.0;
    obs.treated_series = series;
    REQUIRE(inference::jackknife_treated_sigma_tau(fit, obs) == Catch::Approx(0.0).margin(1e-14));
  }

  SECTION("needs p_e >= 2") {
    obs.treated_series = MatrixXd::Zero(4, 1);
    obs.y = VectorXd::Zero(3);
    obs.y_e = 0.0;
    REQUIRE_THROWS_AS(inference::jackknife_treated_sigma_tau(fit, obs), std::invalid_argument);
  }

  SECTION("statistically consistent for the treated-average noise") {
    const int n = 3, p_e = 4000;
    const double sigma = 1.4;
    panel::GroundTruth truth{MatrixXd::Zero(n, 2), VectorXd::Zero(n), VectorXd::Zero(2), 0.0, 0.0,
                             panel::NoiseSpec::iid_columns(n, 2, sigma, p_e)};
    const auto sim = panel::generate_panel(truth, 71);
    const double se = inference::jackknife_treated_sigma_tau(fit, sim);
    REQUIRE(se == Catch::Approx(sigma / std::sqrt(double(p_e))).epsilon(0.08));
  }
}

TEST_CASE("variance estimates: placebo controls") {
  // Pure-noise panel: every placebo gap is a pseudo treatment effect of zero;
  // the rescaled dispersion should sit near the plugin scale.
  const int n = 60, p = 8;
  const double sigma = 1.0;
  panel::GroundTruth truth{MatrixXd::Zero(n, p), VectorXd::Zero(n), VectorXd::Zero(p), 0.0, 0.0,
                           panel::NoiseSpec::iid_columns(n, p, sigma, 2)};
  const auto obs = panel::generate_panel(truth, 73);

  solver::ProblemSpec estimator;
  estimator.design = obs.X;
  estimator.target = obs.y;
  estimator.sigma_row = truth.noise.sigma_row;
  estimator.psi = truth.noise.psi;
  estimator.eta = 1.0;
  estimator.mode = solver::RegCoefficientMode::empirical;
  estimator.constraint = solver::ConstraintSet::Simplex(p);
  const auto fit = solver::solve(estimator);

  const double se = inference::placebo_controls_sigma_tau(fit, obs, estimator, 2.0);
  const double plugin = inference::plugin_sigma_tau(sigma, 2.0, fit.theta);
  REQUIRE(se > 0.2 * plugin);
  REQUIRE(se < 3.0 * plugin);

  panel::PanelObservation tiny;
  tiny.X = MatrixXd::Zero(4, 1);
  tiny.y = VectorXd::Zero(4);
  tiny.x_e = VectorXd::Zero(1);
  solver::FitResult tiny_fit;
  tiny_fit.theta = VectorXd::Zero(1);
  REQUIRE_THROWS_AS(inference::placebo_controls_sigma_tau(tiny_fit, tiny, estimator, 2.0),
                    std::invalid_argument);
}

TEST_CASE("confidence_interval: quantile oracle values") {
  const auto [lo, hi] = inference::confidence_interval(0.0, 1.0, 0.05);
  REQUIRE(lo == Catch::Approx(-1.95996).margin(1e-4));
  REQUIRE(hi == Catch::Approx(1.95996).margin(1e-4));

  const auto [dlo, dhi] = inference::confidence_interval(2.5, 0.0, 0.5);
  REQUIRE(dlo == 2.5);
  REQUIRE(dhi == 2.5);

  const auto [wlo, whi] = inference::confidence_interval(0.0, 1.0, 0.32);
  REQUIRE(0.5 * (whi - wlo) == Catch::Approx(0.99446).margin(1e-4));

  REQUIRE_THROWS_AS(inference::confidence_interval(0.0, 1.0, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(inference::confidence_interval(0.0, 1.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(inference::confidence_interval(0.0, -1.0, 0.1), std::invalid_argument);

  // Half-width scales linearly in sigma.
  const auto [l2, h2] = inference::confidence_interval(0.0, 2.0, 0.05);
  REQUIRE(h2 - l2 == Catch::Approx(2.0 * (hi - lo)).epsilon(1e-12));
}

TEST_CASE("normality_diagnostics: worked constructions") {
  SECTION("zero-rank limit passes the rank condition") {
    inference::DiagnosticsInputs in;
    in.n = 100;
    in.p = 20;
    in.eta = 1.0;
    in.sigma = 1.0;
    in.sigma_e = 1.0;
    in.p_eff = 2.0;
    in.rank = 0;
    in.d_tilde = 1.0;  // driven by the residual L2 when A = 0 and psi_col = 0
    in.oracle_error = 0.0;
    in.psi_col_sigma_norm = 0.0;
    const auto rep = inference::normality_diagnostics(in);
    REQUIRE(rep.rank.ratio == 0.0);
    REQUIRE(rep.rank.pass);
    REQUIRE(rep.p_eff_ratio_branch[2] == 0.0);  // psi_col = 0 branch is vacuous
    REQUIRE(rep.fit.ratio == 0.0);
  }

  SECTION("rank at the first branch boundary gives ratio exactly 1") {
    inference::DiagnosticsInputs in;
    in.n = 100;
    in.p = 16;
    in.eta = 1.0;
    in.sigma = 0.5;  // second branch larger than the first
    in.sigma_e = 1.0;
    in.p_eff = 2.0;
    in.d_tilde = 1.0;  // x = eta sigma_e / d_tilde = 1
    in.rank = 100;     // n x^2 = 100
    // second branch: sigma^2 n^2 x^4 / p_eff = 0.25 * 10000 / 2 = 1250 > 100.
    const auto rep = inference::normality_diagnostics(in);
    REQUIRE(rep.rank_ratio_branch[0] == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(rep.rank.ratio == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE_FALSE(rep.rank.pass);  // threshold 0.1
  }

  SECTION("p_eff at a tenth of the first branch is a boundary pass") {
    inference::DiagnosticsInputs in;
    in.n = 400;
    in.p = 16;
    in.eta = 1.0;
    in.sigma = 1.0;
    in.sigma_e = 1.0;
    in.d_tilde = 1.0;  // x = 1, min(x^2, x^4) = 1
    in.rank = 1;
    const double logp = std::log(16.0);
    in.p_eff = in.n / (10.0 * logp);
    in.psi_col_sigma_norm = 0.0;
    const auto rep = inference::normality_diagnostics(in);
    REQUIRE(rep.p_eff_ratio_branch[0] == Catch::Approx(0.1).epsilon(1e-12));
    REQUIRE(rep.p_eff.pass);  // 0.1 <= threshold 0.1
  }

  SECTION("singular-value substitute check") {
    inference::DiagnosticsInputs in;
    in.n = 100;
    in.p = 20;
    in.eta = 1.0;
    in.sigma = 2.0;
    in.sigma_e = 1.0;
    in.p_eff = 4.0;
    in.rank = 3;
    in.d_tilde = 1.0;
    in.singular_values = std::vector<double>{50.0, 10.0, 0.5};
    in.substitute_R = 2;
    const auto rep = inference::normality_diagnostics(in);
    REQUIRE(rep.sv_substitute.has_value());
    // rhs = sigma / sqrt(p_eff) * R / sqrt(log p).
    const double rhs = 2.0 / std::sqrt(4.0) * 2.0 / std::sqrt(std::log(20.0));
    REQUIRE(rep.sv_substitute->ratio == Catch::Approx(0.5 / rhs).epsilon(1e-12));
    REQUIRE(rep.sv_substitute->pass);
  }

  SECTION("eta = 0 and p < 2 are rejected") {
    inference::DiagnosticsInputs in;
    in.n = 10;
    in.p = 10;
    in.eta = 0.0;
    REQUIRE_THROWS_AS(inference::normality_diagnostics(in), std::invalid_argument);
    in.eta = 1.0;
    in.p = 1;
    REQUIRE_THROWS_AS(inference::normality_diagnostics(in), std::invalid_argument);
  }
}

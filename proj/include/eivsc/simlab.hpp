#pragma once

// Seeded Monte Carlo experiment harness: replication tables, coverage,
// z-statistic normality, rate-scaling slopes, and bound-violation
// frequencies.
//
// Replication r at grid point g uses seed = base_seed ^ mix64(g * GOLDEN +
// mix64(r)) (splitmix constants in rng.hpp), so tables are bitwise
// reproducible for a fixed base seed, independent of thread count and
// scheduling: every replication is an isolated task whose row is written by
// index.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eivsc/inference.hpp"
#include "eivsc/panel.hpp"
#include "eivsc/rates.hpp"
#include "eivsc/rng.hpp"
#include "eivsc/solver.hpp"
#include "eivsc/stats.hpp"
#include "eivsc/util.hpp"

namespace eivsc::simlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ExperimentType {
  coverage,
  zstat_normality,
  coef_rate_scaling,
  deviation_bound_check,
  concentration_check
};

enum class CoverageTarget { E_tau_tilde, tau };

// plugin_oracle: sigma_e sqrt(1/p_e + ||theta~||^2), constant per grid point.
// plugin_fit:    sigma_e sqrt(1/p_e + ||theta^||^2) per replication.
// jackknife_treated: resampled from the disaggregated treated series.
enum class ScenarioVarianceMethod { plugin_oracle, plugin_fit, jackknife_treated };

struct NoiseConfig {
  double sigma = 1.0;
  double rho = 0.0;  // AR(1) autocorrelation of each unit's series; 0 = white
  int p_e = 1;
  panel::NoiseDistribution distribution = panel::NoiseDistribution::gaussian;
};

struct GridOverride {
  std::optional<int> n;
  std::optional<int> p;
};

struct Scenario {
  int n = 100;
  int p = 10;
  panel::SignalSpec signal;
  // When set, signal.singular_values are per-entry scales: the generated
  // spectrum is scale_k * sqrt(n p), keeping the signal-to-noise geometry
  // stable across a grid in n.
  bool scale_sv_with_np = false;
  NoiseConfig noise;
  double tau = 0.0;

  double eta = 1.0;
  solver::ConstraintKind constraint = solver::ConstraintKind::simplex;
  double l1_radius = 1.0;
  bool intercept = false;

  double alpha = 0.05;
  ExperimentType experiment = ExperimentType::coverage;
  ScenarioVarianceMethod variance_method = ScenarioVarianceMethod::plugin_oracle;
  bool use_oracle_estimator = false;  // substitute theta~ for theta^ (isolates the noise term)

  std::vector<GridOverride> grid;  // empty -> single point at (n, p)
  int n_reps = 100;
  std::uint64_t base_seed = 1;
  solver::SolverOptions solver_options{1e-9, 200000, false, 25};
  int workers = 0;

  void validate() const {
    if (n_reps < 1) throw std::invalid_argument("scenario: n_reps must be >= 1");
    if (n < 2 || p < 1) throw std::invalid_argument("scenario: need n >= 2, p >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("scenario: alpha must lie in (0,1)");
    if (noise.p_e < 1) throw std::invalid_argument("scenario: p_e must be >= 1");
    if (!(noise.sigma >= 0.0)) throw std::invalid_argument("scenario: sigma must be >= 0");
  }
};

struct ReplicationRow {
  int grid_index = 0;
  int rep_index = 0;
  std::uint64_t seed = 0;
  double tau_hat = 0.0;
  double tau_tilde = 0.0;
  double dev = 0.0;
  double bias = 0.0;
  double noise = 0.0;
  double coef_dev_norm = 0.0;  // ||Sigma^{1/2}(theta^ - theta~)||
  double pred_dev_norm = 0.0;  // ||A(theta^ - theta~) + theta0^ - theta0~||
  double sigma_tau_hat = 0.0;
  bool covered_oracle_mean = false;
  bool covered_tau = false;
  bool converged = false;
};

struct GridPointInfo {
  int n = 0;
  int p = 0;
  std::vector<double> singular_values;
  double e_tau_tilde = 0.0;    // b_e - a_e' theta~ - theta0~ + tau, exact
  double sigma_tau_true = 0.0; // sigma_e sqrt(1/p_e + ||theta~||^2)
  double p_eff = 0.0;
  double theta_tilde_norm_sq = 0.0;
  double oracle_error = 0.0;   // ||A theta~ + theta0~ - b||
  double oracle_loss = 0.0;
  int non_converged = 0;
};

struct ReplicationTable {
  std::vector<ReplicationRow> rows;  // |grid| * n_reps rows, keyed by (grid, rep)
  std::vector<GridPointInfo> grid;
  int n_reps = 0;
};

// A fully resolved grid point: the deterministic truth, the oracle fit, and
// the per-replication problem template. Exposed so summaries and acceptance
// checks can re-derive exactly what the harness used.
struct GridResolution {
  int n, p;
  panel::GroundTruth truth;
  VectorXd theta_tilde;
  double theta0_tilde = 0.0;
  MatrixXd sigma_sqrt;
  GridPointInfo info;
  solver::ProblemSpec empirical_template;
};

inline GridResolution resolve_grid_point(const Scenario& sc, int g) {
  GridResolution pt;
  pt.n = sc.n;
  pt.p = sc.p;
  if (!sc.grid.empty()) {
    const GridOverride& ov = sc.grid[static_cast<std::size_t>(g)];
    if (ov.n) pt.n = *ov.n;
    if (ov.p) pt.p = *ov.p;
  }
  panel::SignalSpec spec = sc.signal;
  if (sc.scale_sv_with_np) {
    const double scale = std::sqrt(static_cast<double>(pt.n) * pt.p);
    for (double& sv : spec.singular_values) sv *= scale;
  }
  const auto draw = panel::generate_signal(spec, pt.n, pt.p, rng::derive_seed(sc.base_seed, 7000 + g));

  panel::NoiseSpec noise =
      sc.noise.rho == 0.0
          ? panel::NoiseSpec::iid_columns(pt.n, pt.p, sc.noise.sigma, sc.noise.p_e, sc.noise.distribution)
          : panel::NoiseSpec::ar1_columns(pt.n, pt.p, sc.noise.sigma, sc.noise.rho, sc.noise.p_e,
                                          sc.noise.distribution);

  pt.truth = panel::GroundTruth{draw.A, draw.b, draw.a_e, draw.b_e, sc.tau, noise};

  solver::ConstraintSet constraint;
  switch (sc.constraint) {
    case solver::ConstraintKind::simplex: constraint = solver::ConstraintSet::Simplex(pt.p); break;
    case solver::ConstraintKind::l1_ball: constraint = solver::ConstraintSet::L1Ball(pt.p, sc.l1_radius); break;
    case solver::ConstraintKind::nonnegative_orthant: constraint = solver::ConstraintSet::Nonnegative(pt.p); break;
    case solver::ConstraintKind::euclidean: constraint = solver::ConstraintSet::Euclidean(pt.p); break;
  }

  solver::ProblemSpec oracle;
  oracle.design = draw.A;
  oracle.target = draw.b;
  oracle.sigma_row = noise.sigma_row;
  oracle.psi = noise.psi;
  oracle.eta = sc.eta;
  oracle.mode = solver::RegCoefficientMode::oracle;
  oracle.intercept = sc.intercept;
  oracle.constraint = constraint;
  // The oracle row feeds every replication; solve it tightly with its own
  // budget no matter what the per-replication options are.
  solver::SolverOptions oracle_opts;
  oracle_opts.tol = 1e-11;
  oracle_opts.max_iterations = std::max(sc.solver_options.max_iterations, 400000);
  const auto oracle_fit = solver::solve(oracle, oracle_opts);
  if (!oracle_fit.converged) throw std::runtime_error("scenario: oracle solve did not converge");
  pt.theta_tilde = oracle_fit.theta;
  pt.theta0_tilde = oracle_fit.theta0;

  pt.sigma_sqrt = panel::psd_sqrt(noise.sigma_row);

  pt.info.n = pt.n;
  pt.info.p = pt.p;
  pt.info.singular_values = spec.singular_values;
  pt.info.e_tau_tilde = draw.b_e - pt.theta0_tilde - draw.a_e.dot(pt.theta_tilde) + sc.tau;
  pt.info.sigma_tau_true = inference::plugin_sigma_tau(noise.sigma_e, noise.p_e, pt.theta_tilde);
  pt.info.p_eff = rates::effective_sample_size(pt.theta_tilde, noise.p_e);
  pt.info.theta_tilde_norm_sq = pt.theta_tilde.squaredNorm();
  VectorXd oracle_resid = draw.A * pt.theta_tilde - draw.b;
  oracle_resid.array() += pt.theta0_tilde;
  pt.info.oracle_error = oracle_resid.norm();
  pt.info.oracle_loss = oracle_fit.loss;

  pt.empirical_template = oracle;
  pt.empirical_template.mode = solver::RegCoefficientMode::empirical;
  return pt;
}

inline ReplicationTable run_scenario(const Scenario& sc) {
  sc.validate();
  const int n_grid = sc.grid.empty() ? 1 : static_cast<int>(sc.grid.size());
  ReplicationTable table;
  table.n_reps = sc.n_reps;
  table.rows.resize(static_cast<std::size_t>(n_grid) * sc.n_reps);
  table.grid.resize(n_grid);

  const double z_crit = stats::normal_two_sided_z(sc.alpha);

  for (int g = 0; g < n_grid; ++g) {
    GridResolution pt = resolve_grid_point(sc, g);
    const panel::PanelSampler sampler(pt.truth);
    std::vector<std::string> errors(sc.n_reps);

    util::parallel_for(
        static_cast<std::size_t>(sc.n_reps),
        [&](std::size_t r) {
          try {
            const std::uint64_t seed = rng::replication_seed(sc.base_seed, g, r);
            const panel::PanelObservation obs = sampler.draw(seed);

            solver::FitResult fit;
            if (sc.use_oracle_estimator) {
              fit.theta = pt.theta_tilde;
              fit.theta0 = pt.theta0_tilde;
              fit.converged = true;
            } else {
              solver::ProblemSpec prob = pt.empirical_template;
              prob.design = obs.X;
              prob.target = obs.y;
              fit = solver::solve(prob, sc.solver_options);
            }

            ReplicationRow row;
            row.grid_index = g;
            row.rep_index = static_cast<int>(r);
            row.seed = seed;
            row.converged = fit.converged;
            row.tau_hat = inference::estimate_tau(obs, fit);
            const auto decomp =
                inference::error_decomposition(pt.truth, pt.theta_tilde, obs, row.tau_hat, pt.theta0_tilde);
            row.dev = decomp.deviation;
            row.bias = decomp.bias;
            row.noise = decomp.noise;
            row.tau_tilde = row.tau_hat - row.dev;

            // The three-term identity must hold exactly; the harness refuses
            // tables that violate it.
            const double identity_gap =
                std::abs(row.dev + row.bias + row.noise - (row.tau_hat - pt.truth.tau));
            if (identity_gap > 1e-12 * std::max(1.0, std::abs(row.tau_hat)))
              throw std::runtime_error("decomposition identity violated");

            const VectorXd delta = fit.theta - pt.theta_tilde;
            row.coef_dev_norm = (pt.sigma_sqrt * delta).norm();
            VectorXd pred = pt.truth.A * delta;
            pred.array() += fit.theta0 - pt.theta0_tilde;
            row.pred_dev_norm = pred.norm();

            switch (sc.variance_method) {
              case ScenarioVarianceMethod::plugin_oracle:
                row.sigma_tau_hat = pt.info.sigma_tau_true;
                break;
              case ScenarioVarianceMethod::plugin_fit:
                row.sigma_tau_hat =
                    inference::plugin_sigma_tau(pt.truth.noise.sigma_e, pt.truth.noise.p_e, fit.theta);
                break;
              case ScenarioVarianceMethod::jackknife_treated:
                row.sigma_tau_hat = inference::jackknife_treated_sigma_tau(fit, obs);
                break;
            }
            row.covered_oracle_mean = std::abs(row.tau_hat - pt.info.e_tau_tilde) <= z_crit * row.sigma_tau_hat;
            row.covered_tau = std::abs(row.tau_hat - pt.truth.tau) <= z_crit * row.sigma_tau_hat;

            table.rows[static_cast<std::size_t>(g) * sc.n_reps + r] = row;
          } catch (const std::exception& e) {
            errors[r] = e.what();
          }
        },
        sc.workers);

    for (int r = 0; r < sc.n_reps; ++r) {
      if (!errors[r].empty()) {
        std::ostringstream msg;
        msg << "grid point " << g << " (n=" << pt.n << ", p=" << pt.p << "), replication " << r << ": "
            << errors[r];
        throw std::runtime_error(msg.str());
      }
    }

    int non_converged = 0;
    for (int r = 0; r < sc.n_reps; ++r) {
      if (!table.rows[static_cast<std::size_t>(g) * sc.n_reps + r].converged) ++non_converged;
    }
    pt.info.non_converged = non_converged;
    if (non_converged * 20 > sc.n_reps) {
      std::ostringstream msg;
      msg << "grid point " << g << " (n=" << pt.n << ", p=" << pt.p << "): solver non-convergence rate "
          << static_cast<double>(non_converged) / sc.n_reps << " exceeds 5%";
      throw std::runtime_error(msg.str());
    }
    table.grid[g] = pt.info;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Summaries.
// ---------------------------------------------------------------------------

inline std::pair<double, double> coverage_summary(const ReplicationTable& table, CoverageTarget target) {
  if (table.rows.empty()) throw std::invalid_argument("coverage_summary: empty table");
  double covered = 0.0;
  for (const auto& row : table.rows) {
    covered += (target == CoverageTarget::E_tau_tilde ? row.covered_oracle_mean : row.covered_tau) ? 1.0 : 0.0;
  }
  const double m = static_cast<double>(table.rows.size());
  const double frac = covered / m;
  return {frac, std::sqrt(frac * (1.0 - frac) / m)};
}

// Sup distance between the empirical cdf and the standard normal cdf.
inline double ks_statistic(std::vector<double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("ks_statistic: need at least 2 samples");
  std::sort(samples.begin(), samples.end());
  const double m = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = stats::normal_cdf(samples[i]);
    d = std::max(d, std::max((i + 1) / m - cdf, cdf - i / m));
  }
  return d;
}

enum class XField { n, p_eff };
enum class YField { coef_dev_norm, pred_dev_norm, abs_dev, sigma_tau_hat };

namespace detail {

inline double row_field(const ReplicationRow& row, YField f) {
  switch (f) {
    case YField::coef_dev_norm: return row.coef_dev_norm;
    case YField::pred_dev_norm: return row.pred_dev_norm;
    case YField::abs_dev: return std::abs(row.dev);
    case YField::sigma_tau_hat: return row.sigma_tau_hat;
  }
  return 0.0;
}

}  // namespace detail

inline std::vector<double> grid_field(const ReplicationTable& table, int grid_index, YField f) {
  std::vector<double> values;
  for (const auto& row : table.rows) {
    if (row.grid_index == grid_index) values.push_back(detail::row_field(row, f));
  }
  return values;
}

// OLS slope of log(median y) on log(x) across grid points, with its standard
// error. Medians rather than means for heavy-tail robustness.
inline std::pair<double, double> rate_slope(const ReplicationTable& table, XField x_field, YField y_field) {
  std::vector<double> lx, ly;
  for (std::size_t g = 0; g < table.grid.size(); ++g) {
    const double x = x_field == XField::n ? static_cast<double>(table.grid[g].n) : table.grid[g].p_eff;
    const double med = stats::median(grid_field(table, static_cast<int>(g), y_field));
    if (!(med > 0.0)) throw std::invalid_argument("rate_slope: nonpositive median");
    if (!(x > 0.0)) throw std::invalid_argument("rate_slope: nonpositive x");
    lx.push_back(std::log(x));
    ly.push_back(std::log(med));
  }
  std::vector<double> ux = lx;
  std::sort(ux.begin(), ux.end());
  ux.erase(std::unique(ux.begin(), ux.end()), ux.end());
  if (ux.size() < 3) throw std::invalid_argument("rate_slope: need >= 3 distinct x values");

  const double k = static_cast<double>(lx.size());
  const double mx = stats::mean(lx), my = stats::mean(ly);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  const double slope = sxy / sxx;
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double fit = my + slope * (lx[i] - mx);
    rss += (ly[i] - fit) * (ly[i] - fit);
  }
  const double stderr_slope = k > 2 ? std::sqrt(rss / (k - 2) / sxx) : 0.0;
  return {slope, stderr_slope};
}

// Fractions of replications violating the coefficient and prediction bounds.
inline std::pair<double, double> bound_violation_rate(const ReplicationTable& table, double s_star,
                                                      double prediction_bound, int grid_index = -1) {
  double coef = 0.0, pred = 0.0, m = 0.0;
  for (const auto& row : table.rows) {
    if (grid_index >= 0 && row.grid_index != grid_index) continue;
    coef += row.coef_dev_norm > s_star ? 1.0 : 0.0;
    pred += row.pred_dev_norm > prediction_bound ? 1.0 : 0.0;
    m += 1.0;
  }
  if (m == 0.0) return {0.0, 0.0};
  return {coef / m, pred / m};
}

}  // namespace eivsc::simlab

#pragma once

// Gaussian-width estimation, effective sample sizes, and the fixed-point rate
// conditions (simplified and refined).
//
// The deviation set is Theta*_s = {theta - center : theta in Theta,
// ||Sigma^{1/2}(theta - center)|| <= s}. Width bounds follow the worked
// constraint-set reductions (l1/simplex: c sqrt(log p); euclidean: c s
// sqrt(p)); widths can also be estimated by Monte Carlo, solving each draw's
// supremum by projected gradient over the intersection.
//
// All of the theory's universal constants collapse to a single caller-visible
// constant c per formula (default 1) and are echoed in every report.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eivsc/rng.hpp"
#include "eivsc/solver.hpp"
#include "eivsc/util.hpp"

namespace eivsc::rates {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Guarded log used by the width bounds: log(p) with log(1) lifted to 1.
inline double guarded_log(double p_dim) {
  if (!(p_dim >= 1.0)) throw std::invalid_argument("dimension must be >= 1");
  return std::max(std::log(p_dim), 1.0);
}

struct SetDescriptor {
  solver::ConstraintSet base_constraint;
  VectorXd center;          // theta~, must be feasible for the base constraint
  double radius_s = kInf;   // cap in the Sigma^{1/2} metric; +inf disables it
  MatrixXd metric;          // Sigma (PSD); empty means identity

  void validate() const {
    if (center.size() != base_constraint.dimension)
      throw std::invalid_argument("set descriptor: center dimension mismatch");
    if (base_constraint.kind != solver::ConstraintKind::euclidean &&
        !solver::feasible(base_constraint, center))
      throw std::invalid_argument("set descriptor: center infeasible for the base constraint");
    if (!(radius_s >= 0.0)) throw std::invalid_argument("set descriptor: radius_s must be >= 0");
    if (metric.size() > 0 && (metric.rows() != center.size() || metric.cols() != center.size()))
      throw std::invalid_argument("set descriptor: metric must be p x p");
  }

  bool has_metric_cap() const { return radius_s < kInf; }
};

// ---------------------------------------------------------------------------
// Width upper bounds from the worked examples.
// ---------------------------------------------------------------------------

inline double width_upper_bound(const SetDescriptor& set, double p_dim, double c) {
  switch (set.base_constraint.kind) {
    case solver::ConstraintKind::simplex:
    case solver::ConstraintKind::l1_ball:
      return c * std::sqrt(guarded_log(p_dim));
    case solver::ConstraintKind::euclidean: {
      if (!set.has_metric_cap())
        throw std::invalid_argument("width_upper_bound: euclidean set needs a metric radius");
      double min_eig = 1.0;
      if (set.metric.size() > 0) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(set.metric);
        min_eig = es.eigenvalues().minCoeff();
        if (!(min_eig > 0.0))
          throw std::invalid_argument("width_upper_bound: metric must be positive definite for euclidean sets");
      }
      return c * set.radius_s * std::sqrt(p_dim) / std::sqrt(min_eig);
    }
    default:
      throw std::invalid_argument("width_upper_bound: unsupported set kind");
  }
}

// ---------------------------------------------------------------------------
// Monte Carlo width.
// ---------------------------------------------------------------------------

struct WidthMonteCarloOptions {
  int inner_steps = 500;
  double feasibility_tol = 1e-8;
  int workers = 0;  // 0 -> EIVSC_WORKERS / hardware
};

struct WidthEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  int n_samples = 0;
  int n_flagged = 0;
};

namespace detail {

// Projection onto the ellipsoid {d' Sigma d <= s^2} in the eigenbasis of
// Sigma: y = (I + lambda Sigma)^{-1} x with lambda >= 0 chosen so the
// constraint holds with equality; found by bisection on the monotone dual.
struct EllipsoidProjector {
  bool identity = true;
  MatrixXd basis;      // Q
  VectorXd eigenvals;  // d

  explicit EllipsoidProjector(const MatrixXd& sigma) {
    if (sigma.size() == 0) return;
    identity = false;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
    basis = es.eigenvectors();
    eigenvals = es.eigenvalues().cwiseMax(0.0);
  }

  VectorXd project(const VectorXd& x, double s) const {
    if (s == 0.0) {
      if (identity) return VectorXd::Zero(x.size());
      // Zero radius pins every direction with positive metric eigenvalue.
      VectorXd coords = basis.transpose() * x;
      for (int i = 0; i < coords.size(); ++i)
        if (eigenvals[i] > 0.0) coords[i] = 0.0;
      return basis * coords;
    }
    if (identity) {
      const double norm = x.norm();
      return norm <= s ? x : VectorXd((s / norm) * x);
    }
    VectorXd coords = basis.transpose() * x;
    auto quad = [&](double lambda) {
      double q = 0.0;
      for (int i = 0; i < coords.size(); ++i) {
        const double y = coords[i] / (1.0 + lambda * eigenvals[i]);
        q += eigenvals[i] * y * y;
      }
      return q;
    };
    if (quad(0.0) <= s * s) return x;
    double lo = 0.0, hi = 1.0;
    while (quad(hi) > s * s && hi < 1e18) hi *= 2.0;
    for (int it = 0; it < 120; ++it) {
      const double mid = 0.5 * (lo + hi);
      (quad(mid) > s * s ? lo : hi) = mid;
    }
    const double lambda = 0.5 * (lo + hi);
    for (int i = 0; i < coords.size(); ++i) coords[i] /= (1.0 + lambda * eigenvals[i]);
    return basis * coords;
  }
};

// Dykstra's alternating projections onto (base - center) ∩ metric ball.
inline VectorXd project_deviation_set(const SetDescriptor& set, const EllipsoidProjector& ell,
                                      const VectorXd& x, int max_rounds = 100, double tol = 1e-12) {
  const bool base_active = set.base_constraint.kind != solver::ConstraintKind::euclidean;
  const bool ball_active = set.has_metric_cap();
  if (!base_active && !ball_active) return x;
  if (!ball_active) return solver::project(set.base_constraint, x + set.center) - set.center;
  if (!base_active) return ell.project(x, set.radius_s);

  VectorXd z = x;
  VectorXd inc_base = VectorXd::Zero(x.size());
  VectorXd inc_ball = VectorXd::Zero(x.size());
  for (int round = 0; round < max_rounds; ++round) {
    const VectorXd prev = z;
    VectorXd w = z + inc_base;
    z = solver::project(set.base_constraint, w + set.center) - set.center;
    inc_base = w - z;
    w = z + inc_ball;
    z = ell.project(w, set.radius_s);
    inc_ball = w - z;
    if ((z - prev).norm() <= tol * (1.0 + z.norm())) break;
  }
  return z;
}

struct SupremumResult {
  double value = 0.0;
  bool flagged = false;
};

// sup_{delta in Theta*_s} g'delta by projected gradient ascent; the running
// maximum over feasible iterates is the estimate.
inline SupremumResult linear_supremum(const SetDescriptor& set, const EllipsoidProjector& ell,
                                      const VectorXd& g, const WidthMonteCarloOptions& opts) {
  const int p = static_cast<int>(g.size());
  const double gnorm = std::max(g.norm(), 1e-300);
  double scale = 1.0;
  if (set.base_constraint.compact()) {
    scale = set.base_constraint.kind == solver::ConstraintKind::l1_ball ? 2.0 * set.base_constraint.radius : 2.0;
  }
  if (set.has_metric_cap()) {
    double min_eig = 1.0;
    if (!ell.identity) min_eig = std::max(ell.eigenvals.minCoeff(), 1e-12);
    scale = std::min(scale, 2.0 * set.radius_s / std::sqrt(min_eig) + 1e-12);
  }

  VectorXd delta = project_deviation_set(set, ell, VectorXd::Zero(p));
  double best = g.dot(delta);
  double best_at_three_quarters = best;
  const int steps = std::max(opts.inner_steps, 8);
  for (int k = 0; k < steps; ++k) {
    const double step = (k == 0) ? 1e6 * scale / gnorm : 2.0 * scale / (gnorm * std::sqrt(double(k)));
    delta = project_deviation_set(set, ell, delta + step * g);
    best = std::max(best, g.dot(delta));
    if (k == (3 * steps) / 4) best_at_three_quarters = best;
  }
  SupremumResult out;
  out.value = best;
  // Flag draws whose supremum was still moving in the last quarter of the run.
  out.flagged = best - best_at_three_quarters > 1e-6 * (1.0 + std::abs(best));
  return out;
}

}  // namespace detail

inline WidthEstimate width_monte_carlo(const SetDescriptor& set, int n_samples, std::uint64_t seed,
                                       const WidthMonteCarloOptions& opts = {}) {
  set.validate();
  if (n_samples < 2) throw std::invalid_argument("width_monte_carlo: n_samples must be >= 2");
  if (set.base_constraint.kind == solver::ConstraintKind::euclidean && !set.has_metric_cap())
    throw std::invalid_argument("width_monte_carlo: unbounded set");
  if (set.base_constraint.kind == solver::ConstraintKind::nonnegative_orthant && !set.has_metric_cap())
    throw std::invalid_argument("width_monte_carlo: unbounded set");

  const detail::EllipsoidProjector ell(set.metric);
  const int p = static_cast<int>(set.center.size());
  std::vector<double> values(n_samples, 0.0);
  std::vector<char> flags(n_samples, 0);

  // One substream per draw: values are independent of evaluation order, and
  // the reduction below runs in index order, so the estimate is bitwise
  // reproducible for any worker count.
  util::parallel_for(
      static_cast<std::size_t>(n_samples),
      [&](std::size_t i) {
        rng::CounterRng gen(rng::derive_seed(seed, 0xBEEF00 + i));
        VectorXd g(p);
        for (int j = 0; j < p; ++j) g[j] = gen.next_gaussian();
        const auto sup = detail::linear_supremum(set, ell, g, opts);
        values[i] = sup.value;
        flags[i] = sup.flagged ? 1 : 0;
      },
      opts.workers);

  WidthEstimate out;
  double sum = 0.0, sum_sq = 0.0;
  int kept = 0, flagged = 0;
  for (int i = 0; i < n_samples; ++i) {
    if (flags[i]) {
      ++flagged;
      continue;
    }
    sum += values[i];
    sum_sq += values[i] * values[i];
    ++kept;
  }
  if (flagged > n_samples / 10)
    throw std::runtime_error("width_monte_carlo: more than 10% of inner maximizations failed to converge");
  if (kept < 2) throw std::runtime_error("width_monte_carlo: too few converged samples");
  out.estimate = sum / kept;
  const double var = std::max(sum_sq / kept - out.estimate * out.estimate, 0.0) * kept / (kept - 1);
  out.std_error = std::sqrt(var / kept);
  out.n_samples = kept;
  out.n_flagged = flagged;
  return out;
}

// ---------------------------------------------------------------------------
// Effective sample sizes.
// ---------------------------------------------------------------------------

// 1 / (1/p_e + ||theta~||^2): the harmonic combination of the treated count
// and the inverse squared weight norm.
inline double effective_sample_size(const VectorXd& theta_tilde, double p_e) {
  if (!(p_e > 0.0)) throw std::invalid_argument("effective_sample_size: p_e must be > 0");
  return 1.0 / (1.0 / p_e + theta_tilde.squaredNorm());
}

enum class EssMode { rows, columns };

struct EssInputs {
  // rows mode
  std::optional<MatrixXd> sigma_row;
  std::optional<VectorXd> theta_tilde;
  std::optional<VectorXd> psi;
  std::optional<double> residual_l2;  // ||eps_i. psi - nu_i||_{L2}
  // columns mode
  std::optional<double> theta_norm;
  std::optional<double> sigma_col_norm;  // ||Sigma_{eps_.j}||
  std::optional<double> sigma_nu_norm;   // ||Sigma_nu||
};

struct EssResult {
  double p_eff = 0.0;
  bool unbounded = false;  // the table expression evaluated to p_eff^{-1/2} = 0
};

inline EssResult effective_sample_size_general(EssMode mode, const EssInputs& in, bool refined = false) {
  double inv_sqrt = 0.0;
  if (mode == EssMode::rows) {
    if (!in.sigma_row || !in.theta_tilde || !in.psi || !in.residual_l2)
      throw std::invalid_argument("effective_sample_size_general: rows mode needs sigma_row, theta_tilde, psi, residual_l2");
    const MatrixXd& sig = *in.sigma_row;
    const VectorXd diff = *in.theta_tilde - *in.psi;
    const double weighted = std::sqrt(std::max(diff.dot(sig * diff), 0.0));
    inv_sqrt = weighted + *in.residual_l2;
    if (!refined) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(sig);
      const double op_norm = std::max(es.eigenvalues().maxCoeff(), 0.0);
      if (op_norm <= 0.0) throw std::invalid_argument("effective_sample_size_general: sigma_row is zero");
      inv_sqrt /= std::sqrt(op_norm);
    }
  } else {
    if (!in.theta_norm || !in.sigma_col_norm || !in.sigma_nu_norm)
      throw std::invalid_argument("effective_sample_size_general: columns mode needs theta_norm, sigma_col_norm, sigma_nu_norm");
    if (refined) {
      inv_sqrt = std::sqrt(*in.sigma_col_norm) * *in.theta_norm + std::sqrt(*in.sigma_nu_norm);
    } else {
      if (!(*in.sigma_col_norm > 0.0))
        throw std::invalid_argument("effective_sample_size_general: sigma_col_norm must be > 0");
      inv_sqrt = *in.theta_norm + std::sqrt(*in.sigma_nu_norm / *in.sigma_col_norm);
    }
  }
  EssResult out;
  if (inv_sqrt <= 0.0) {
    out.unbounded = true;
    out.p_eff = kInf;
  } else {
    out.p_eff = 1.0 / (inv_sqrt * inv_sqrt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point rate conditions.
// ---------------------------------------------------------------------------

enum class WidthMode { l1_bound, euclidean_bound, monte_carlo };

struct SimplifiedRateParams {
  int n = 0;
  int p = 0;
  double sigma = 1.0;        // noise level per the notation table
  double p_eff = 1.0;
  int rank_or_R = 0;
  double oracle_error = 0.0; // ||A theta~ + theta0~ - b||
  double eta = 1.0;
  double v = 1.0;
  double c = 1.0;
  WidthMode width_mode = WidthMode::l1_bound;
  double width_c = 1.0;      // constant inside the width bound itself
  std::optional<SetDescriptor> mc_set;  // required for WidthMode::monte_carlo
  int mc_samples = 500;
  std::uint64_t mc_seed = 1;
  WidthMonteCarloOptions mc_options{300, 1e-8, 0};
  std::string sigma_convention = "col_operator_norm";  // echoed; see report

  void validate() const {
    if (n < 1 || p < 1) throw std::invalid_argument("rate params: n, p must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("rate params: sigma must be >= 0");
    if (!(p_eff > 0.0)) throw std::invalid_argument("rate params: p_eff must be > 0");
    if (rank_or_R < 0) throw std::invalid_argument("rate params: rank must be >= 0");
    if (!(oracle_error >= 0.0)) throw std::invalid_argument("rate params: oracle_error must be >= 0");
    if (!(eta >= 0.0)) throw std::invalid_argument("rate params: eta must be >= 0");
    if (!(v >= 1.0)) throw std::invalid_argument("rate params: v must be >= 1");
    if (!(c > 0.0)) throw std::invalid_argument("rate params: c must be > 0");
    if (width_mode == WidthMode::monte_carlo && !mc_set)
      throw std::invalid_argument("rate params: monte_carlo width mode needs a set descriptor");
  }
};

struct RefinedRateParams {
  SimplifiedRateParams base;
  double K = 1.0;
  double phi = 1.0;
  double width_sigma = 0.0;   // width_Sigma(Theta*_s) bound, constant in s
  double p_eff_sigma = 1.0;
  std::optional<std::vector<double>> singular_values;  // enables joint R selection
  std::optional<double> width_plain;  // width(Theta*_s) for the R rule; default width_sigma / sigma

  void validate() const {
    base.validate();
    if (!(K >= 1.0) || !(phi >= 1.0)) throw std::invalid_argument("refined rate params: K, phi must be >= 1");
    if (!(width_sigma >= 0.0)) throw std::invalid_argument("refined rate params: width_sigma must be >= 0");
    if (!(p_eff_sigma > 0.0)) throw std::invalid_argument("refined rate params: p_eff_sigma must be > 0");
  }
};

struct RateReport {
  bool solvable = false;
  double s_star = std::numeric_limits<double>::quiet_NaN();
  double prediction_bound = std::numeric_limits<double>::quiet_NaN();  // eta sqrt(n) s_star
  double eta_R_sq = 0.0;
  int R_used = 0;
  double probability_exponent = 0.0;  // u(v, s)
  double width_used = 0.0;
  std::string width_kind;
  std::string reason;  // populated when solvable == false
  double c = 1.0;
  double v = 1.0;
  std::string sigma_convention;
};

namespace detail {

inline double x_one_half(double x) { return x + std::sqrt(std::max(x, 0.0)); }

inline double simplified_rhs(const SimplifiedRateParams& q, double width) {
  const double n = q.n;
  const double denom = q.eta * q.eta * n;
  if (!(denom > 0.0)) return kInf;
  const double noise_sq = q.sigma * q.sigma;
  const double term_width = q.v * q.v * noise_sq * width * width;
  const double term_cross = q.v * q.sigma * (q.oracle_error + q.sigma * std::sqrt(n / q.p_eff)) * width;
  const double term_rank = x_one_half(q.v * q.v * noise_sq * q.rank_or_R / q.p_eff);
  return q.c * (term_width + term_cross + term_rank) / denom;
}

}  // namespace detail

// Simplified fixed point. Evaluates the worked reduction of the fixed-point
// display (constant widths give the closed form s = sqrt(RHS); the euclidean
// width mode has RHS quadratic in s and an unsolvable regime). eta_R^2 =
// max(0, eta^2 - c R / n) gates solvability and is echoed in the report.
inline RateReport solve_fixed_point(const SimplifiedRateParams& params) {
  params.validate();
  RateReport report;
  report.c = params.c;
  report.v = params.v;
  report.sigma_convention = params.sigma_convention;
  report.R_used = params.rank_or_R;
  report.eta_R_sq = std::max(0.0, params.eta * params.eta - params.c * params.rank_or_R / double(params.n));
  if (report.eta_R_sq <= 0.0) {
    report.solvable = false;
    report.reason = "eta_R vanished";
    return report;
  }

  const double n = params.n;
  auto finish = [&](double s, double width, const std::string& kind) {
    report.solvable = true;
    report.s_star = s;
    report.width_used = width;
    report.width_kind = kind;
    report.prediction_bound = params.eta * std::sqrt(n) * s;
    const double ratio = s > 0.0 ? params.v * params.v * params.sigma * params.sigma * width * width / (s * s) : kInf;
    report.probability_exponent = std::min({ratio, params.v * params.v * double(params.rank_or_R), n});
  };

  switch (params.width_mode) {
    case WidthMode::l1_bound: {
      const double width = params.width_c * std::sqrt(guarded_log(params.p));
      finish(std::sqrt(detail::simplified_rhs(params, width)), width, "l1_bound");
      break;
    }
    case WidthMode::euclidean_bound: {
      // width = width_c * s * sqrt(p): RHS(s) = a s^2 + b s + d.
      const double denom = params.eta * params.eta * n;
      const double wc_sqrt_p = params.width_c * std::sqrt(double(params.p));
      const double noise_sq = params.sigma * params.sigma;
      const double a = params.c * params.v * params.v * noise_sq * wc_sqrt_p * wc_sqrt_p / denom;
      const double b = params.c * params.v * params.sigma *
                       (params.oracle_error + params.sigma * std::sqrt(n / params.p_eff)) * wc_sqrt_p / denom;
      const double d =
          params.c * detail::x_one_half(params.v * params.v * noise_sq * params.rank_or_R / params.p_eff) / denom;
      if (a >= 1.0 && (b > 0.0 || d > 0.0)) {
        report.solvable = false;
        report.reason = "width term dominates: p >= c eta^2 n / sigma^2, fixed point has no solution";
        return report;
      }
      double s = 0.0;
      if (a < 1.0) s = (b + std::sqrt(b * b + 4.0 * (1.0 - a) * d)) / (2.0 * (1.0 - a));
      finish(s, wc_sqrt_p * s, "euclidean_bound");
      break;
    }
    case WidthMode::monte_carlo: {
      SetDescriptor set = *params.mc_set;
      auto width_at = [&](double s) {
        set.radius_s = s;
        return width_monte_carlo(set, params.mc_samples, params.mc_seed, params.mc_options).estimate;
      };
      auto h = [&](double s) { return s * s - detail::simplified_rhs(params, width_at(s)); };
      double lo = 1e-12, hi = 1e-12;
      bool bracketed = false;
      for (int k = 0; k < 70 && !bracketed; ++k) {
        hi = 1e-12 * std::pow(2.0, k + 1);
        if (hi > 1e6) hi = 1e6;
        if (h(hi) >= 0.0) {
          bracketed = true;
          break;
        }
        lo = hi;
        if (hi >= 1e6) break;
      }
      if (!bracketed) {
        report.solvable = false;
        report.reason = "no fixed point in [1e-12, 1e6]";
        return report;
      }
      for (int it = 0; it < 90; ++it) {
        const double mid = 0.5 * (lo + hi);
        (h(mid) >= 0.0 ? hi : lo) = mid;
        if (hi - lo <= 1e-10 * hi) break;
      }
      finish(hi, width_at(hi), "monte_carlo(plain)");
      break;
    }
  }
  return report;
}

// Refined fixed point: evaluates the general display verbatim (four bracketed
// terms with K, phi, width_Sigma, p_eff_Sigma) with eta_R^2 = max(0, eta^2 -
// c K^2 phi^2 R / n); R either fixed or jointly selected from the singular
// values via R >= c sigma_{R+1} width / (phi s + v p_eff_Sigma^{-1/2}).
// Monotone bisection on s over [1e-12, 1e6].
inline RateReport solve_fixed_point_refined(const RefinedRateParams& params) {
  params.validate();
  const SimplifiedRateParams& q = params.base;
  RateReport report;
  report.c = q.c;
  report.v = q.v;
  report.sigma_convention = q.sigma_convention;
  report.width_kind = "width_sigma(refined)";
  report.width_used = params.width_sigma;

  const double n = q.n;
  const double inv_sqrt_pes = 1.0 / std::sqrt(params.p_eff_sigma);
  const double width_plain =
      params.width_plain ? *params.width_plain : (q.sigma > 0.0 ? params.width_sigma / q.sigma : params.width_sigma);

  auto select_R = [&](double s) -> int {
    if (!params.singular_values) return q.rank_or_R;
    const auto& sv = *params.singular_values;
    const double denom = params.phi * s + q.v * inv_sqrt_pes;
    for (int r = 0; r <= static_cast<int>(sv.size()); ++r) {
      const double tail = r < static_cast<int>(sv.size()) ? sv[r] : 0.0;
      const double required = denom > 0.0 ? q.c * tail * width_plain / denom : (tail > 0.0 ? kInf : 0.0);
      if (static_cast<double>(r) >= required) return r;
    }
    return static_cast<int>(sv.size());
  };

  auto eta_r_sq_at = [&](int R) {
    return std::max(0.0, q.eta * q.eta - q.c * params.K * params.K * params.phi * params.phi * R / n);
  };

  auto rhs = [&](double s, int R, double eta_r_sq) {
    if (!(eta_r_sq > 0.0)) return kInf;
    const double w = params.width_sigma;
    const double k2 = params.K * params.K;
    const double lead = 1.0 + params.phi * std::sqrt(double(R) / n);
    const double term1 = k2 * k2 * q.v * q.v * w * w * lead * lead / (eta_r_sq * eta_r_sq * n);
    const double term2 = k2 * q.v * q.v * w * w / (eta_r_sq * n);
    const double term3 = (params.K * q.v * q.oracle_error * w + k2 * q.v * std::sqrt(n * inv_sqrt_pes * inv_sqrt_pes) * w +
                          detail::x_one_half(k2 * q.v * q.v * R * inv_sqrt_pes * inv_sqrt_pes)) /
                         (eta_r_sq * n);
    return q.c * (term1 + term2 + term3);
  };

  auto h = [&](double s) {
    const int R = select_R(s);
    return s * s - rhs(s, R, eta_r_sq_at(R));
  };

  const double s_max = 1e6;
  if (h(s_max) < 0.0) {
    const int R = select_R(s_max);
    report.R_used = R;
    report.eta_R_sq = eta_r_sq_at(R);
    report.solvable = false;
    report.reason = report.eta_R_sq <= 0.0 ? "eta_R vanished" : "no fixed point in [1e-12, 1e6]";
    return report;
  }
  double lo = 1e-12, hi = s_max;
  if (h(lo) >= 0.0) {
    hi = lo;
  } else {
    for (int it = 0; it < 140; ++it) {
      const double mid = 0.5 * (lo + hi);
      (h(mid) >= 0.0 ? hi : lo) = mid;
    }
  }
  const int R = select_R(hi);
  report.R_used = R;
  report.eta_R_sq = eta_r_sq_at(R);
  report.solvable = true;
  report.s_star = hi;
  report.prediction_bound = q.eta * std::sqrt(n) * hi;
  const double phi4 = std::pow(params.phi, 4);
  const double ratio = hi > 0.0 ? q.v * q.v * params.width_sigma * params.width_sigma / (phi4 * hi * hi) : kInf;
  report.probability_exponent = std::min({ratio, q.v * q.v * double(R), n});
  return report;
}

}  // namespace eivsc::rates

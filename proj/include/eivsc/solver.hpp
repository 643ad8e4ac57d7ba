#pragma once

// Constrained Tikhonov-regularized least squares.
//
// Minimizes  ||theta0 + M theta - t||^2 + coeff * ||Sigma^{1/2}(theta - psi)||^2
// over Theta0 x Theta, where coeff = n(eta^2 - 1) (empirical mode, the loss of
// the observed regression) or n eta^2 (oracle mode, its expectation). Theta is
// one of: probability simplex, l1 ball, nonnegative orthant, all of R^p; the
// intercept block Theta0 is {0} or R.
//
// Algorithm: accelerated projected gradient with a monotone restart, step from
// the exact Lipschitz constant (spectral radius of the quadratic's Hessian).
// Optimality is certified by the variational-inequality gap
//   max_{theta in Theta} -grad(fit)'(theta - fit.theta),
// evaluated exactly over simplex/l1 (vertex maximization / dual norm) and via
// the gradient-mapping decrease surrogate on unbounded sets.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace eivsc::solver {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ConstraintKind { simplex, l1_ball, nonnegative_orthant, euclidean };

struct ConstraintSet {
  ConstraintKind kind = ConstraintKind::simplex;
  int dimension = 0;
  double radius = 1.0;  // l1_ball only

  static ConstraintSet Simplex(int p) { return {ConstraintKind::simplex, p, 1.0}; }
  static ConstraintSet L1Ball(int p, double r) {
    if (!(r > 0.0)) throw std::invalid_argument("l1 ball radius must be positive");
    return {ConstraintKind::l1_ball, p, r};
  }
  static ConstraintSet Nonnegative(int p) { return {ConstraintKind::nonnegative_orthant, p, 1.0}; }
  static ConstraintSet Euclidean(int p) { return {ConstraintKind::euclidean, p, 1.0}; }

  bool compact() const { return kind == ConstraintKind::simplex || kind == ConstraintKind::l1_ball; }
};

// Euclidean projection onto {w >= 0, sum w = 1}. Sort-and-threshold, O(p log p).
inline VectorXd project_simplex(const VectorXd& v) {
  const int p = static_cast<int>(v.size());
  if (p == 0) throw std::invalid_argument("project_simplex: empty vector");
  std::vector<double> u(v.data(), v.data() + p);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, threshold = 0.0;
  int rho = 0;
  for (int j = 0; j < p; ++j) {
    css += u[j];
    const double candidate = (css - 1.0) / (j + 1);
    if (u[j] - candidate > 0.0) {
      rho = j + 1;
      threshold = candidate;
    }
  }
  VectorXd w(p);
  for (int i = 0; i < p; ++i) w[i] = std::max(v[i] - threshold, 0.0);
  (void)rho;
  return w;
}

// Euclidean projection onto {||w||_1 <= radius}: soft-thresholding at the
// exact level found by the simplex threshold applied to |v|.
inline VectorXd project_l1_ball(const VectorXd& v, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("project_l1_ball: radius must be positive");
  const int p = static_cast<int>(v.size());
  if (p == 0) throw std::invalid_argument("project_l1_ball: empty vector");
  if (v.lpNorm<1>() <= radius) return v;
  std::vector<double> u(p);
  for (int i = 0; i < p; ++i) u[i] = std::abs(v[i]);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, threshold = 0.0;
  for (int j = 0; j < p; ++j) {
    css += u[j];
    const double candidate = (css - radius) / (j + 1);
    if (u[j] - candidate > 0.0) threshold = candidate;
  }
  VectorXd w(p);
  for (int i = 0; i < p; ++i) {
    const double mag = std::max(std::abs(v[i]) - threshold, 0.0);
    w[i] = (v[i] >= 0.0 ? mag : -mag);
  }
  return w;
}

inline VectorXd project(const ConstraintSet& set, const VectorXd& v) {
  switch (set.kind) {
    case ConstraintKind::simplex:
      return project_simplex(v);
    case ConstraintKind::l1_ball:
      return project_l1_ball(v, set.radius);
    case ConstraintKind::nonnegative_orthant:
      return v.cwiseMax(0.0);
    case ConstraintKind::euclidean:
      return v;
  }
  throw std::logic_error("unreachable");
}

inline bool feasible(const ConstraintSet& set, const VectorXd& v, double tol = 1e-8) {
  switch (set.kind) {
    case ConstraintKind::simplex:
      return v.minCoeff() >= -tol && std::abs(v.sum() - 1.0) <= tol;
    case ConstraintKind::l1_ball:
      return v.lpNorm<1>() <= set.radius + tol;
    case ConstraintKind::nonnegative_orthant:
      return v.minCoeff() >= -tol;
    case ConstraintKind::euclidean:
      return true;
  }
  return false;
}

enum class RegCoefficientMode { empirical, oracle };

struct ProblemSpec {
  MatrixXd design;    // n x p
  VectorXd target;    // length n
  MatrixXd sigma_row; // p x p, PSD
  VectorXd psi;       // length p
  double eta = 1.0;
  RegCoefficientMode mode = RegCoefficientMode::empirical;
  bool intercept = false;
  ConstraintSet constraint;

  int n() const { return static_cast<int>(design.rows()); }
  int p() const { return static_cast<int>(design.cols()); }

  double penalty_coefficient() const {
    const double n_rows = static_cast<double>(n());
    return mode == RegCoefficientMode::empirical ? n_rows * (eta * eta - 1.0) : n_rows * eta * eta;
  }

  void validate() const {
    if (target.size() != design.rows()) throw std::invalid_argument("target length != design rows");
    if (sigma_row.rows() != design.cols() || sigma_row.cols() != design.cols())
      throw std::invalid_argument("sigma_row must be p x p");
    if (psi.size() != design.cols()) throw std::invalid_argument("psi length != design cols");
    if (!(eta >= 0.0)) throw std::invalid_argument("eta must be >= 0");
    if (constraint.dimension != design.cols()) throw std::invalid_argument("constraint dimension != p");
  }

  double loss(double theta0, const VectorXd& theta) const {
    VectorXd r = design * theta - target;
    if (intercept) r.array() += theta0;
    const VectorXd d = theta - psi;
    return r.squaredNorm() + penalty_coefficient() * d.dot(sigma_row.selfadjointView<Eigen::Lower>() * d);
  }
};

struct SolverOptions {
  double tol = 1e-8;  // converged when residual <= tol * (1 + |loss|)
  int max_iterations = 100000;
  bool record_loss_trace = false;
  int residual_check_every = 10;
};

enum class ConvexityCertificate { convex, indefinite_detected };

struct FitResult {
  double theta0 = 0.0;
  VectorXd theta;
  double loss = 0.0;
  double optimality_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  ConvexityCertificate convexity_certificate = ConvexityCertificate::convex;
  std::vector<double> loss_trace;  // filled when SolverOptions::record_loss_trace
};

struct UnboundedProblemError : std::runtime_error {
  explicit UnboundedProblemError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// Precomputed quadratic form: loss and gradient in O(p^2) per evaluation.
struct QuadraticModel {
  MatrixXd gram;       // M'M + coeff * Sigma
  VectorXd design_t1;  // M'1 (intercept column cross term)
  VectorXd lin;        // M't + coeff * Sigma psi
  double tt = 0.0;     // t't
  double ones_t = 0.0; // 1't
  double coeff = 0.0;
  double psi_quad = 0.0;  // coeff * psi' Sigma psi
  double n_rows = 0.0;
  bool intercept = false;
  double lipschitz = 1.0;
  double lambda_min = 0.0;

  explicit QuadraticModel(const ProblemSpec& prob) {
    const MatrixXd& M = prob.design;
    coeff = prob.penalty_coefficient();
    n_rows = static_cast<double>(prob.n());
    intercept = prob.intercept;
    const MatrixXd sigma_sym = 0.5 * (prob.sigma_row + prob.sigma_row.transpose());
    gram = M.transpose() * M + coeff * sigma_sym;
    design_t1 = M.transpose() * VectorXd::Ones(prob.n());
    lin = M.transpose() * prob.target + coeff * (sigma_sym * prob.psi);
    tt = prob.target.squaredNorm();
    ones_t = prob.target.sum();
    psi_quad = coeff * prob.psi.dot(sigma_sym * prob.psi);

    MatrixXd h;
    if (intercept) {
      const int p = prob.p();
      h.resize(p + 1, p + 1);
      h(0, 0) = n_rows;
      h.block(0, 1, 1, p) = design_t1.transpose();
      h.block(1, 0, p, 1) = design_t1;
      h.block(1, 1, p, p) = gram;
    } else {
      h = gram;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
    const auto& ev = es.eigenvalues();
    lambda_min = ev.minCoeff();
    const double rho = std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
    lipschitz = 2.0 * std::max(rho, 1e-12);
  }

  double value(double theta0, const VectorXd& theta) const {
    double v = theta.dot(gram.selfadjointView<Eigen::Lower>() * theta) - 2.0 * lin.dot(theta) + tt + psi_quad;
    if (intercept) v += theta0 * theta0 * n_rows + 2.0 * theta0 * (design_t1.dot(theta) - ones_t);
    return v;
  }

  // Sum of term magnitudes: the scale against which roundoff in value() must
  // be judged (the terms cancel, so |value| alone underestimates it).
  double value_magnitude(double theta0, const VectorXd& theta) const {
    double m = std::abs(theta.dot(gram.selfadjointView<Eigen::Lower>() * theta)) +
               2.0 * std::abs(lin.dot(theta)) + std::abs(tt) + std::abs(psi_quad);
    if (intercept) m += theta0 * theta0 * n_rows + 2.0 * std::abs(theta0) * (std::abs(design_t1.dot(theta)) + std::abs(ones_t));
    return m;
  }

  void gradient(double theta0, const VectorXd& theta, double& g0, VectorXd& g) const {
    g = 2.0 * (gram.selfadjointView<Eigen::Lower>() * theta - lin);
    if (intercept) {
      g += 2.0 * theta0 * design_t1;
      g0 = 2.0 * (theta0 * n_rows + design_t1.dot(theta) - ones_t);
    } else {
      g0 = 0.0;
    }
  }
};

// Variational-inequality gap at (theta0, theta), given the gradient there.
// Exact over compact sets; gradient-mapping decrease surrogate otherwise.
inline double residual_from_gradient(const ProblemSpec& prob, const QuadraticModel& model, double theta0,
                                     const VectorXd& theta, double g0, const VectorXd& g) {
  (void)theta0;
  double gap = 0.0;
  switch (prob.constraint.kind) {
    case ConstraintKind::simplex:
      gap = g.dot(theta) - g.minCoeff();
      break;
    case ConstraintKind::l1_ball:
      gap = g.dot(theta) + prob.constraint.radius * g.lpNorm<Eigen::Infinity>();
      break;
    case ConstraintKind::nonnegative_orthant:
    case ConstraintKind::euclidean: {
      // Gradient-mapping norm L ||theta - P(theta - g/L)||; equals ||g|| on
      // the unconstrained set and vanishes exactly at fixed points.
      const double L = model.lipschitz;
      const VectorXd step = project(prob.constraint, theta - g / L);
      gap = L * (theta - step).norm();
      break;
    }
  }
  if (prob.intercept && model.n_rows > 0.0) gap += g0 * g0 / (4.0 * model.n_rows);
  return std::max(gap, 0.0);
}

}  // namespace detail

inline FitResult solve(const ProblemSpec& prob, const SolverOptions& opts = {}) {
  prob.validate();
  const int p = prob.p();
  detail::QuadraticModel model(prob);

  FitResult out;
  out.convexity_certificate = model.lambda_min < -1e-10 ? ConvexityCertificate::indefinite_detected
                                                        : ConvexityCertificate::convex;
  if (out.convexity_certificate == ConvexityCertificate::indefinite_detected && !prob.constraint.compact()) {
    throw UnboundedProblemError("indefinite quadratic over a non-compact constraint set is unbounded below");
  }

  const double L = model.lipschitz;
  auto run_pg = [&](double theta0_init, VectorXd theta_init, int budget, int& used,
                    std::vector<double>* trace) {
    VectorXd x = project(prob.constraint, theta_init);
    double x0 = prob.intercept ? theta0_init : 0.0;
    double fx = model.value(x0, x);
    VectorXd x_prev = x;
    double x0_prev = x0;
    VectorXd y = x;
    double y0 = x0;
    double t_mom = 1.0;
    VectorXd g(p);
    double g0 = 0.0;
    bool converged = false;
    double residual = std::numeric_limits<double>::infinity();
    int k = 0;
    int stagnant = 0;
    if (trace) trace->push_back(fx);
    for (; k < budget; ++k) {
      model.gradient(y0, y, g0, g);
      VectorXd z = project(prob.constraint, y - g / L);
      double z0 = prob.intercept ? y0 - g0 / L : 0.0;
      double fz = model.value(z0, z);
      if (fz > fx) {
        // Monotone restart: drop momentum, take a plain step from x.
        t_mom = 1.0;
        model.gradient(x0, x, g0, g);
        z = project(prob.constraint, x - g / L);
        z0 = prob.intercept ? x0 - g0 / L : 0.0;
        fz = model.value(z0, z);
      }
      // The descent lemma makes a 1/L step nonincreasing in exact arithmetic;
      // apparent increases within the evaluation roundoff are accepted so the
      // iterate keeps polishing after the loss hits its numeric floor.
      const double flat_slack = (64.0 + 8.0 * p) * std::numeric_limits<double>::epsilon() *
                                (1.0 + model.value_magnitude(z0, z));
      if (fz <= fx + flat_slack) {
        const double moved = (z - x).norm() + std::abs(z0 - x0);
        stagnant = moved <= 1e-15 * (1.0 + x.norm()) ? stagnant + 1 : 0;
        x_prev = x;
        x0_prev = x0;
        x = z;
        x0 = z0;
        fx = fz;
      } else {
        ++stagnant;
      }
      if (trace) trace->push_back(fx);
      if (stagnant >= 8) {
        // Fixed point reached to machine precision.
        ++k;
        break;
      }
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
      y = x + ((t_mom - 1.0) / t_next) * (x - x_prev);
      y0 = x0 + ((t_mom - 1.0) / t_next) * (x0 - x0_prev);
      t_mom = t_next;
      if ((k + 1) % opts.residual_check_every == 0) {
        model.gradient(x0, x, g0, g);
        residual = detail::residual_from_gradient(prob, model, x0, x, g0, g);
        if (residual <= opts.tol * (1.0 + std::abs(fx))) {
          converged = true;
          ++k;
          break;
        }
      }
    }
    if (!converged) {
      model.gradient(x0, x, g0, g);
      residual = detail::residual_from_gradient(prob, model, x0, x, g0, g);
      converged = residual <= opts.tol * (1.0 + std::abs(fx));
    }
    used = k;
    struct Local {
      VectorXd x;
      double x0, fx, residual;
      bool converged;
    };
    return Local{x, x0, fx, residual, converged};
  };

  std::vector<double>* trace = opts.record_loss_trace ? &out.loss_trace : nullptr;
  int used = 0;
  auto best = run_pg(0.0, VectorXd::Zero(p), opts.max_iterations, used, trace);
  int total_used = used;

  // Nonconvex compact problems: polish against the vertices of the set.
  if (out.convexity_certificate == ConvexityCertificate::indefinite_detected && prob.constraint.compact() &&
      p <= 20) {
    double best_vertex_loss = std::numeric_limits<double>::infinity();
    VectorXd best_vertex;
    auto consider = [&](const VectorXd& v) {
      const double f = model.value(best.x0, v);
      if (f < best_vertex_loss) {
        best_vertex_loss = f;
        best_vertex = v;
      }
    };
    for (int i = 0; i < p; ++i) {
      VectorXd v = VectorXd::Zero(p);
      if (prob.constraint.kind == ConstraintKind::simplex) {
        v[i] = 1.0;
        consider(v);
      } else {
        v[i] = prob.constraint.radius;
        consider(v);
        v[i] = -prob.constraint.radius;
        consider(v);
      }
    }
    if (best_vertex_loss < best.fx) {
      int used2 = 0;
      auto polished = run_pg(best.x0, best_vertex, std::max(1, opts.max_iterations - total_used), used2, nullptr);
      total_used += used2;
      if (polished.fx < best.fx) best = polished;
    }
  }

  out.theta = best.x;
  out.theta0 = best.x0;
  out.loss = best.fx;
  out.optimality_residual = best.residual;
  out.iterations = total_used;
  out.converged = best.converged;
  return out;
}

// Standalone gap evaluation at an arbitrary feasible point (Eq. of the
// first-order optimality conditions; 0 certifies the variational inequality).
inline double optimality_residual(const FitResult& fit, const ProblemSpec& prob) {
  prob.validate();
  if (!feasible(prob.constraint, fit.theta)) throw std::invalid_argument("optimality_residual: infeasible theta");
  detail::QuadraticModel model(prob);
  VectorXd g(prob.p());
  double g0 = 0.0;
  model.gradient(fit.theta0, fit.theta, g0, g);
  return detail::residual_from_gradient(prob, model, fit.theta0, fit.theta, g0, g);
}

struct ExcessLossIdentity {
  double lhs = 0.0;
  double rhs = 0.0;
};

// Exact term-by-term evaluation of the excess-loss algebra: the change of the
// empirical loss under theta_tilde -> theta_tilde + delta, against its fully
// decomposed expansion with epsilon := X - A and nu := y - b explicit.
inline ExcessLossIdentity excess_loss_identity_check(const ProblemSpec& prob, const VectorXd& theta_tilde,
                                                     const VectorXd& delta, const MatrixXd& signal,
                                                     const VectorXd& signal_target) {
  prob.validate();
  if (prob.intercept) throw std::invalid_argument("identity is stated for theta0 = 0");
  if (prob.mode != RegCoefficientMode::empirical) throw std::invalid_argument("identity uses the empirical loss");
  if (signal.rows() != prob.design.rows() || signal.cols() != prob.design.cols())
    throw std::invalid_argument("signal dimensions must match the design");
  if (signal_target.size() != prob.target.size()) throw std::invalid_argument("signal target length mismatch");
  if (theta_tilde.size() != prob.design.cols() || delta.size() != prob.design.cols())
    throw std::invalid_argument("theta_tilde/delta length mismatch");

  const MatrixXd& X = prob.design;
  const VectorXd& y = prob.target;
  const MatrixXd& A = signal;
  const VectorXd& b = signal_target;
  const MatrixXd eps = X - A;
  const VectorXd nu = y - b;
  const MatrixXd sigma = 0.5 * (prob.sigma_row + prob.sigma_row.transpose());
  const double n_rows = static_cast<double>(prob.n());
  const double eta = prob.eta;

  ExcessLossIdentity out;
  out.lhs = prob.loss(0.0, theta_tilde + delta) - prob.loss(0.0, theta_tilde);

  const VectorXd sigma_delta = sigma * delta;
  const VectorXd A_delta = A * delta;
  const VectorXd eps_delta = eps * delta;
  const VectorXd oracle_resid = A * theta_tilde - b;
  const VectorXd noise_resid = eps * theta_tilde - nu;
  const VectorXd psi_resid = eps * prob.psi - nu;
  const VectorXd centered = theta_tilde - prob.psi;

  out.rhs = (X * delta).squaredNorm() + n_rows * (eta * eta - 1.0) * delta.dot(sigma_delta) +
            2.0 * (oracle_resid.dot(A_delta) + n_rows * eta * eta * centered.dot(sigma_delta)) +
            2.0 * noise_resid.dot(A_delta) + 2.0 * oracle_resid.dot(eps_delta) +
            2.0 * psi_resid.dot(eps_delta) +
            2.0 * (centered.dot(eps.transpose() * eps_delta) - n_rows * centered.dot(sigma_delta));
  return out;
}

}  // namespace eivsc::solver

#pragma once

// Panel data model, synthetic generation under the low-rank-plus-noise model,
// and noise specification plumbing.
//
// Synthetic control frame (columns are units): the observed block matrix is
//   [X y; x_e' y_e] = [A b; a_e' b_e] + tau * e_{n+1} e_{p+1}' + noise,
// with unit columns of the noise independent and identically distributed. The
// treated column [y; y_e] may be the average of p_e disaggregated series,
// which generate_panel materializes so resampling estimators can use them.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eivsc/rng.hpp"

namespace eivsc::panel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Orientation { columns_are_units, rows_are_units };
enum class IndependenceAxis { rows, columns };
enum class NoiseDistribution { gaussian, scaled_rademacher_mixture };
enum class FactorStyle { random_orthonormal, common_trends };
enum class TreatedUnitStyle { typical_row, top_singular_aligned, orthogonal_to_rowspace };
enum class ThetaStarStyle { simplex_dirichlet, uniform_all };

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-1e-12 * scale, 0) are clamped to zero; anything lower is an error.
inline MatrixXd psd_sqrt(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("psd_sqrt: matrix must be square");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigendecomposition failed");
  VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.size() > 0 ? std::abs(ev[ev.size() - 1]) : 1.0);
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-12 * scale) {
      throw std::runtime_error("psd_sqrt: matrix is not positive semidefinite");
    }
    ev[i] = std::max(ev[i], 0.0);
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

struct PanelObservation {
  MatrixXd X;       // n x p pre-treatment control outcomes
  VectorXd y;       // length n, pre-treatment treated/target outcomes
  VectorXd x_e;     // length p, post-treatment control outcomes
  double y_e = 0.0; // post-treatment treated outcome
  std::optional<MatrixXd> treated_series;  // (n+1) x p_e disaggregated treated unit series
  Orientation orientation = Orientation::columns_are_units;

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }

  void validate() const {
    if (y.size() != X.rows()) throw std::invalid_argument("panel: y length != X rows");
    if (x_e.size() != X.cols()) throw std::invalid_argument("panel: x_e length != X cols");
    if (treated_series) {
      const MatrixXd& s = *treated_series;
      if (s.cols() < 1) throw std::invalid_argument("panel: treated_series needs p_e >= 1");
      if (s.rows() != X.rows() + 1) throw std::invalid_argument("panel: treated_series must have n+1 rows");
      const VectorXd agg = s.rowwise().mean();
      for (int i = 0; i < y.size(); ++i) {
        if (std::abs(agg[i] - y[i]) > 1e-12 * std::max(1.0, std::abs(y[i])))
          throw std::invalid_argument("panel: treated_series average does not reproduce y");
      }
      if (std::abs(agg[s.rows() - 1] - y_e) > 1e-12 * std::max(1.0, std::abs(y_e)))
        throw std::invalid_argument("panel: treated_series average does not reproduce y_e");
    }
  }
};

struct NoiseSpec {
  IndependenceAxis independence_axis = IndependenceAxis::columns;
  MatrixXd sigma_row;  // p x p, Sigma_{eps_i.} = n^{-1} E eps'eps
  MatrixXd sigma_col;  // n x n, Sigma_{eps_.j} = p^{-1} E eps eps'
  MatrixXd sigma_nu;   // n x n, Sigma_nu
  VectorXd psi;        // length p, best linear predictor of nu from eps rows
  VectorXd psi_col;    // length n, best linear predictor of eps_ej from the unit's own column
  double sigma_e = 0.0;
  int p_e = 1;
  NoiseDistribution distribution = NoiseDistribution::gaussian;

  // Units' time series iid with white noise of scale sigma.
  static NoiseSpec iid_columns(int n, int p, double sigma, int p_e,
                               NoiseDistribution dist = NoiseDistribution::gaussian) {
    NoiseSpec s;
    s.independence_axis = IndependenceAxis::columns;
    s.sigma_col = sigma * sigma * MatrixXd::Identity(n, n);
    s.sigma_row = sigma * sigma * MatrixXd::Identity(p, p);
    s.sigma_nu = (sigma * sigma / std::max(p_e, 1)) * MatrixXd::Identity(n, n);
    s.psi = VectorXd::Zero(p);
    s.psi_col = VectorXd::Zero(n);
    s.sigma_e = sigma;
    s.p_e = p_e;
    s.distribution = dist;
    return s;
  }

  // Units' time series iid AR(1) with autocorrelation rho and marginal sd sigma.
  static NoiseSpec ar1_columns(int n, int p, double sigma, double rho, int p_e,
                               NoiseDistribution dist = NoiseDistribution::gaussian) {
    if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("ar1_columns: |rho| must be < 1");
    NoiseSpec s;
    s.independence_axis = IndependenceAxis::columns;
    s.sigma_col.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s.sigma_col(i, j) = sigma * sigma * std::pow(rho, std::abs(i - j));
    s.sigma_row = (s.sigma_col.trace() / n) * MatrixXd::Identity(p, p);
    s.sigma_nu = s.sigma_col / std::max(p_e, 1);
    s.psi = VectorXd::Zero(p);
    s.psi_col = VectorXd::Zero(n);
    if (n > 0) s.psi_col[n - 1] = rho;  // Markov: the post period loads only on the last pre period
    s.sigma_e = sigma;
    s.p_e = p_e;
    s.distribution = dist;
    return s;
  }

  // Rows of [eps, nu] iid with row covariance sigma_row and autoregression psi.
  static NoiseSpec iid_rows(int n, int p, const MatrixXd& sigma_row, const VectorXd& psi, double nu_var,
                            NoiseDistribution dist = NoiseDistribution::gaussian) {
    if (sigma_row.rows() != p || sigma_row.cols() != p) throw std::invalid_argument("iid_rows: sigma_row must be p x p");
    if (psi.size() != p) throw std::invalid_argument("iid_rows: psi length != p");
    NoiseSpec s;
    s.independence_axis = IndependenceAxis::rows;
    s.sigma_row = sigma_row;
    s.sigma_col = (sigma_row.trace() / std::max(p, 1)) * MatrixXd::Identity(n, n);
    s.sigma_nu = nu_var * MatrixXd::Identity(n, n);
    s.psi = psi;
    s.psi_col = VectorXd::Zero(n);
    s.sigma_e = std::sqrt(std::max(sigma_row.diagonal().mean(), 0.0));
    s.p_e = 1;
    s.distribution = dist;
    return s;
  }

  // L2 norm of the post-period prediction residual eps_ej - psi_col' eps_.j.
  double residual_l2() const {
    const double explained = psi_col.size() > 0 ? psi_col.dot(sigma_col * psi_col) : 0.0;
    return std::sqrt(std::max(sigma_e * sigma_e - explained, 0.0));
  }

  // ||psi_col' Sigma_{eps_.j}^{1/2}||
  double psi_col_sigma_norm() const {
    if (psi_col.size() == 0) return 0.0;
    return std::sqrt(std::max(psi_col.dot(sigma_col * psi_col), 0.0));
  }

  void validate(int n, int p) const {
    if (sigma_row.rows() != p || sigma_row.cols() != p) throw std::invalid_argument("noise: sigma_row must be p x p");
    if (sigma_col.rows() != n || sigma_col.cols() != n) throw std::invalid_argument("noise: sigma_col must be n x n");
    if (sigma_nu.rows() != n || sigma_nu.cols() != n) throw std::invalid_argument("noise: sigma_nu must be n x n");
    if (psi.size() != p) throw std::invalid_argument("noise: psi length != p");
    if (psi_col.size() != n) throw std::invalid_argument("noise: psi_col length != n");
    if (p_e < 1) throw std::invalid_argument("noise: p_e must be >= 1");
    if (!(sigma_e >= 0.0)) throw std::invalid_argument("noise: sigma_e must be >= 0");
  }
};

struct GroundTruth {
  MatrixXd A;
  VectorXd b;
  VectorXd a_e;
  double b_e = 0.0;
  double tau = 0.0;
  NoiseSpec noise;

  int n() const { return static_cast<int>(A.rows()); }
  int p() const { return static_cast<int>(A.cols()); }

  void validate() const {
    if (b.size() != A.rows()) throw std::invalid_argument("truth: b length != A rows");
    if (a_e.size() != A.cols()) throw std::invalid_argument("truth: a_e length != A cols");
    noise.validate(n(), p());
  }
};

struct SignalSpec {
  int rank = 0;
  std::vector<double> singular_values;  // nonincreasing, length == rank
  FactorStyle factor_style = FactorStyle::random_orthonormal;
  TreatedUnitStyle a_e_style = TreatedUnitStyle::typical_row;
  ThetaStarStyle theta_star_style = ThetaStarStyle::simplex_dirichlet;
  bool misspecified = false;
  double misspec_scale = 0.0;
  double a_e_scale = 1.0;

  void validate(int n, int p) const {
    if (rank < 0 || rank > std::min(n, p)) throw std::invalid_argument("signal: rank must lie in [0, min(n,p)]");
    if (static_cast<int>(singular_values.size()) != rank)
      throw std::invalid_argument("signal: singular_values length must equal rank");
    for (std::size_t k = 0; k < singular_values.size(); ++k) {
      if (!(singular_values[k] >= 0.0)) throw std::invalid_argument("signal: singular values must be >= 0");
      if (k > 0 && singular_values[k] > singular_values[k - 1] + 1e-15)
        throw std::invalid_argument("signal: singular values must be nonincreasing");
    }
  }
};

struct SignalDraw {
  MatrixXd A;
  VectorXd b;
  VectorXd a_e;
  double b_e = 0.0;
  VectorXd theta_star;
};

namespace detail {

inline VectorXd standard_noise(rng::CounterRng& gen, int dim, NoiseDistribution dist) {
  VectorXd z(dim);
  for (int i = 0; i < dim; ++i) {
    double v = gen.next_gaussian();
    if (dist == NoiseDistribution::scaled_rademacher_mixture) {
      // Unit-variance mixture of independent scaled gaussians; each component
      // is a mixture of independent subgaussians, so the Bernstein-type norm
      // concentration holds (unlike a pure Rademacher mask).
      const double scale = (gen.next_u64() & 1ULL) ? std::sqrt(0.5) : std::sqrt(1.5);
      v *= scale * gen.next_sign();
    }
    z[i] = v;
  }
  return z;
}

inline MatrixXd orthonormal_columns(rng::CounterRng& gen, int rows, int cols) {
  MatrixXd g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) g(i, j) = gen.next_gaussian();
  Eigen::HouseholderQR<MatrixXd> qr(g);
  return MatrixXd(qr.householderQ() * MatrixXd::Identity(rows, cols));
}

// Smooth time curves (constant, linear, harmonics), orthonormalized.
inline MatrixXd trend_columns(int rows, int cols) {
  MatrixXd curves(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const double t = rows > 1 ? static_cast<double>(i) / (rows - 1) : 0.0;
    for (int j = 0; j < cols; ++j) {
      switch (j % 4) {
        case 0: curves(i, j) = 1.0 + 0.1 * j; break;
        case 1: curves(i, j) = t + 0.05 * j; break;
        case 2: curves(i, j) = std::sin(2.0 * M_PI * (1 + j / 4) * t); break;
        default: curves(i, j) = std::cos(2.0 * M_PI * (1 + j / 4) * t); break;
      }
    }
  }
  Eigen::HouseholderQR<MatrixXd> qr(curves);
  return MatrixXd(qr.householderQ() * MatrixXd::Identity(rows, cols));
}

}  // namespace detail

inline SignalDraw generate_signal(const SignalSpec& spec, int n, int p, std::uint64_t seed) {
  spec.validate(n, p);
  rng::CounterRng gen(rng::derive_seed(seed, 0x5167A1));
  const int r = spec.rank;

  SignalDraw out;
  out.A = MatrixXd::Zero(n, p);
  MatrixXd v_right = MatrixXd::Zero(p, std::max(r, 0));
  if (r > 0) {
    const MatrixXd u = spec.factor_style == FactorStyle::random_orthonormal
                           ? detail::orthonormal_columns(gen, n, r)
                           : detail::trend_columns(n, r);
    v_right = detail::orthonormal_columns(gen, p, r);
    VectorXd sv(r);
    for (int k = 0; k < r; ++k) sv[k] = spec.singular_values[k];
    out.A = u * sv.asDiagonal() * v_right.transpose();
  }

  // theta*: the simplex weight that makes the treated column exactly representable.
  out.theta_star = VectorXd(p);
  if (spec.theta_star_style == ThetaStarStyle::uniform_all) {
    out.theta_star.setConstant(1.0 / p);
  } else {
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
      out.theta_star[i] = -std::log(gen.next_uniform());
      total += out.theta_star[i];
    }
    out.theta_star /= total;
  }

  out.b = out.A * out.theta_star;
  if (spec.misspecified && spec.misspec_scale != 0.0) {
    for (int i = 0; i < n; ++i) out.b[i] += spec.misspec_scale * gen.next_gaussian();
  }

  out.a_e = VectorXd::Zero(p);
  if (r > 0) {
    const double row_norm = [&] {
      double s = 0.0;
      for (double sv : spec.singular_values) s += sv * sv;
      return std::sqrt(s / n);
    }();
    switch (spec.a_e_style) {
      case TreatedUnitStyle::typical_row: {
        VectorXd w(r);
        for (int k = 0; k < r; ++k) w[k] = spec.singular_values[k] * gen.next_gaussian() / std::sqrt(double(n));
        out.a_e = spec.a_e_scale * (v_right * w);
        break;
      }
      case TreatedUnitStyle::top_singular_aligned:
        out.a_e = spec.a_e_scale * (spec.singular_values[0] / std::sqrt(double(n))) * v_right.col(0);
        break;
      case TreatedUnitStyle::orthogonal_to_rowspace: {
        VectorXd g(p);
        double norm = 0.0;
        for (int attempt = 0; attempt < 8 && norm < 1e-12; ++attempt) {
          for (int i = 0; i < p; ++i) g[i] = gen.next_gaussian();
          g -= v_right * (v_right.transpose() * g);
          norm = g.norm();
        }
        if (norm < 1e-12) throw std::runtime_error("generate_signal: could not draw an orthogonal direction");
        out.a_e = spec.a_e_scale * row_norm * (g / norm);
        break;
      }
    }
  }
  out.b_e = out.a_e.dot(out.theta_star);
  return out;
}

inline std::pair<VectorXd, double> aggregate_treated(const MatrixXd& series) {
  if (series.cols() < 1) throw std::invalid_argument("aggregate_treated: need at least one series");
  if (series.rows() < 2) throw std::invalid_argument("aggregate_treated: need at least two time rows");
  const VectorXd means = series.rowwise().mean();
  return {means.head(series.rows() - 1), means[series.rows() - 1]};
}

// Draws panels from a fixed truth. The joint noise covariance is factored
// once at construction; every draw is then O((n+1)(p+p_e)) in the diagonal
// case and one matvec per unit otherwise, so replication loops stay cheap.
class PanelSampler {
 public:
  explicit PanelSampler(GroundTruth truth) : truth_(std::move(truth)) {
    truth_.validate();
    const int n = truth_.n();
    const int p = truth_.p();
    const NoiseSpec& noise = truth_.noise;
    if (noise.independence_axis == IndependenceAxis::columns) {
      dim_ = n + 1;
      if (noise.psi_col.isZero(0.0) && noise.sigma_col.isDiagonal(0.0)) {
        diag_root_ = VectorXd(dim_);
        for (int i = 0; i < n; ++i) {
          const double v = noise.sigma_col(i, i);
          if (v < -1e-12) throw std::runtime_error("psd_sqrt: matrix is not positive semidefinite");
          diag_root_[i] = std::sqrt(std::max(v, 0.0));
        }
        diag_root_[n] = noise.sigma_e;
      } else {
        MatrixXd joint(dim_, dim_);
        joint.topLeftCorner(n, n) = noise.sigma_col;
        const VectorXd cross = noise.sigma_col * noise.psi_col;
        joint.block(0, n, n, 1) = cross;
        joint.block(n, 0, 1, n) = cross.transpose();
        joint(n, n) = noise.sigma_e * noise.sigma_e;
        root_ = psd_sqrt(joint);
      }
    } else {
      if (noise.p_e != 1)
        throw std::invalid_argument("generate_panel: disaggregated treated series require column independence");
      dim_ = p + 1;
      MatrixXd joint(dim_, dim_);
      joint.topLeftCorner(p, p) = noise.sigma_row;
      const VectorXd cross = noise.sigma_row * noise.psi;
      joint.block(0, p, p, 1) = cross;
      joint.block(p, 0, 1, p) = cross.transpose();
      joint(p, p) = noise.sigma_nu(0, 0);
      root_ = psd_sqrt(joint);
    }
  }

  const GroundTruth& truth() const { return truth_; }

  PanelObservation draw(std::uint64_t seed) const {
    const int n = truth_.n();
    const int p = truth_.p();
    const NoiseSpec& noise = truth_.noise;
    rng::CounterRng gen(rng::derive_seed(seed, 0x9A9E1));

    PanelObservation panel;
    panel.orientation = Orientation::columns_are_units;

    if (noise.independence_axis == IndependenceAxis::columns) {
      MatrixXd eps(n, p);
      VectorXd eps_e(p);
      for (int j = 0; j < p; ++j) {
        const VectorXd col = correlated(gen, noise.distribution);
        eps.col(j) = col.head(n);
        eps_e[j] = col[n];
      }
      panel.X = truth_.A + eps;
      panel.x_e = truth_.a_e + eps_e;

      MatrixXd series(n + 1, noise.p_e);
      for (int j = 0; j < noise.p_e; ++j) {
        const VectorXd col = correlated(gen, noise.distribution);
        series.col(j).head(n) = truth_.b + col.head(n);
        series(n, j) = truth_.b_e + truth_.tau + col[n];
      }
      panel.treated_series = series;
      auto [y, y_e] = aggregate_treated(series);
      panel.y = y;
      panel.y_e = y_e;
    } else {
      panel.X.resize(n, p);
      panel.y.resize(n);
      for (int i = 0; i < n; ++i) {
        const VectorXd row = correlated(gen, noise.distribution);
        panel.X.row(i) = truth_.A.row(i) + row.head(p).transpose();
        panel.y[i] = truth_.b[i] + row[p];
      }
      const VectorXd exposed = correlated(gen, noise.distribution);
      panel.x_e = truth_.a_e + exposed.head(p);
      panel.y_e = truth_.b_e + truth_.tau + exposed[p];
    }
    panel.validate();
    return panel;
  }

 private:
  VectorXd correlated(rng::CounterRng& gen, NoiseDistribution dist) const {
    VectorXd z = detail::standard_noise(gen, dim_, dist);
    if (diag_root_.size() > 0) return diag_root_.cwiseProduct(z);
    return root_ * z;
  }

  GroundTruth truth_;
  int dim_ = 0;
  VectorXd diag_root_;  // fast path: diagonal joint covariance
  MatrixXd root_;
};

inline PanelObservation generate_panel(const GroundTruth& truth, std::uint64_t seed) {
  return PanelSampler(truth).draw(seed);
}

// Counterfactual forecasting reuses the same estimator on the transposed
// block: rows become units, the controls' post outcomes become the target.
inline PanelObservation to_forecasting_frame(const PanelObservation& obs) {
  PanelObservation out;
  out.X = obs.X.transpose();
  out.y = obs.x_e;
  out.x_e = obs.y;
  out.y_e = obs.y_e;
  out.orientation = Orientation::rows_are_units;
  out.validate();
  return out;
}

enum class NoiseEstimationMethod { known, residual_plugin };

// The paper gives no estimator for (Sigma, psi); residual_plugin is the
// documented stopgap: an isotropic spec with sigma^2 from halved
// first-difference column variances and psi = psi_col = 0.
inline NoiseSpec estimate_noise_spec(const PanelObservation& panel, NoiseEstimationMethod method,
                                     const NoiseSpec* known = nullptr) {
  panel.validate();
  if (method == NoiseEstimationMethod::known) {
    if (known == nullptr) throw std::invalid_argument("estimate_noise_spec: known method needs a spec");
    known->validate(panel.n(), panel.p());
    return *known;
  }
  const int n = panel.n();
  const int p = panel.p();
  if (n < 4) throw std::invalid_argument("estimate_noise_spec: residual_plugin needs n >= 4");
  double var_sum = 0.0;
  for (int j = 0; j < p; ++j) {
    double mean_diff = 0.0;
    for (int i = 0; i + 1 < n; ++i) mean_diff += panel.X(i + 1, j) - panel.X(i, j);
    mean_diff /= (n - 1);
    double ss = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
      const double d = panel.X(i + 1, j) - panel.X(i, j) - mean_diff;
      ss += d * d;
    }
    var_sum += ss / (n - 2);
  }
  const double sigma_sq = std::max(var_sum / p / 2.0, 0.0);
  const int p_e = panel.treated_series ? static_cast<int>(panel.treated_series->cols()) : 1;
  return NoiseSpec::iid_columns(n, p, std::sqrt(sigma_sq), p_e);
}

}  // namespace eivsc::panel

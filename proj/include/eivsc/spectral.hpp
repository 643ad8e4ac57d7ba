#pragma once

// SVD utilities: the closed-form regularized least squares minimum, the
// typicality summary D of the post-treatment control means, and approximate
// rank selection.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace eivsc::spectral {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SvdDecomposition {
  VectorXd singular_values;  // nonincreasing, length min(n, p)
  MatrixXd left_vectors;     // n x k, orthonormal columns u_k
  MatrixXd right_vectors;    // p x k, orthonormal columns v_k

  int rank(double tol = 1e-12) const {
    if (singular_values.size() == 0) return 0;
    const double cutoff = tol * std::max(1.0, singular_values[0]);
    int r = 0;
    while (r < singular_values.size() && singular_values[r] > cutoff) ++r;
    return r;
  }

  double singular_value(int k) const {  // 1-based, 0 beyond the stored spectrum
    if (k < 1) throw std::invalid_argument("singular value index is 1-based");
    return k <= singular_values.size() ? singular_values[k - 1] : 0.0;
  }
};

inline SvdDecomposition svd(const MatrixXd& a) {
  if (!a.allFinite()) throw std::invalid_argument("svd: non-finite entries");
  Eigen::BDCSVD<MatrixXd> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdDecomposition out;
  out.singular_values = dec.singularValues();
  out.left_vectors = dec.matrixU();
  out.right_vectors = dec.matrixV();
  return out;
}

// Closed form of min_x alpha^2 ||Ax - b||^2 + beta^2 ||x||^2, summed over a
// complete orthonormal basis of the output space; components of b outside the
// column span (sigma_k = 0) pass through undamped.
inline double ridge_min_value(const MatrixXd& a, const VectorXd& b, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("ridge_min_value: alpha, beta must be > 0");
  if (a.rows() != b.size()) throw std::invalid_argument("ridge_min_value: dimension mismatch");
  const SvdDecomposition dec = svd(a);
  const double ratio = (alpha * alpha) / (beta * beta);
  double value = b.squaredNorm();
  for (int k = 0; k < dec.singular_values.size(); ++k) {
    const double sk = dec.singular_values[k];
    if (sk <= 0.0) continue;
    const double proj = dec.left_vectors.col(k).dot(b);
    const double damping = 1.0 / (1.0 + sk * sk * ratio);
    value -= proj * proj * (1.0 - damping);
  }
  return alpha * alpha * value;
}

struct TypicalityComponent {
  int k = 0;             // 1-based index of the singular direction
  double projection = 0; // a_e' v_k
  double damping = 0;    // 1 / (1 + sigma_k^2 / (sigma^2 eta^2 n))
};

struct TypicalityReport {
  double D = 0.0;
  double D_tilde = 0.0;  // D + ||eps_ej - psi_col' eps_.j||_{L2}
  std::vector<TypicalityComponent> per_component;
};

// D^2 = sum_k (a_e' v_k)^2 / (1 + sigma_k^2 / (sigma^2 eta^2 n)) over a
// complete orthonormal right basis; kernel directions carry damping 1, so the
// sum is evaluated as ||a_e||^2 minus the damped in-rowspace mass.
inline TypicalityReport typicality_D(const VectorXd& a_e, const SvdDecomposition& dec, double sigma, double eta,
                                     int n, double residual_l2 = 0.0) {
  if (!(sigma > 0.0)) throw std::invalid_argument("typicality_D: sigma must be > 0");
  if (!(eta > 0.0)) throw std::invalid_argument("typicality_D: eta must be > 0 (formula degenerates at 0)");
  if (n < 1) throw std::invalid_argument("typicality_D: n must be >= 1");
  if (dec.right_vectors.size() > 0 && a_e.size() != dec.right_vectors.rows())
    throw std::invalid_argument("typicality_D: a_e length must match right vectors");
  const double scale = sigma * sigma * eta * eta * static_cast<double>(n);
  TypicalityReport out;
  double d_sq = a_e.squaredNorm();
  for (int k = 0; k < dec.singular_values.size(); ++k) {
    const double sk = dec.singular_values[k];
    if (sk <= 0.0) continue;
    const double proj = dec.right_vectors.col(k).dot(a_e);
    const double damping = 1.0 / (1.0 + sk * sk / scale);
    d_sq -= proj * proj * (1.0 - damping);
    out.per_component.push_back({k + 1, proj, damping});
  }
  out.D = std::sqrt(std::max(d_sq, 0.0));
  out.D_tilde = out.D + residual_l2;
  return out;
}

// Smallest integer R >= 0 with R >= c * sigma_{R+1}(A) * width / (s + v * sigma / sqrt(p_eff)).
// R = rank(A) always qualifies since sigma_{rank+1} = 0.
inline int approximate_rank(const SvdDecomposition& dec, double s, double v, double sigma, double p_eff,
                            double width, double c) {
  if (!(v >= 1.0)) throw std::invalid_argument("approximate_rank: v must be >= 1");
  if (!(width >= 0.0)) throw std::invalid_argument("approximate_rank: width must be >= 0");
  if (!(p_eff > 0.0)) throw std::invalid_argument("approximate_rank: p_eff must be > 0");
  const double denom = s + v * sigma / std::sqrt(p_eff);
  const int k_max = static_cast<int>(dec.singular_values.size());
  for (int r = 0; r <= k_max; ++r) {
    const double tail = (r < k_max) ? dec.singular_values[r] : 0.0;
    const double required = denom > 0.0 ? c * tail * width / denom
                                        : (tail * width * c > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (static_cast<double>(r) >= required) return r;
  }
  return k_max;
}

}  // namespace eivsc::spectral

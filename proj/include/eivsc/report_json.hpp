#pragma once

// JSON / CSV / table rendering for reports. Keeps serialization out of the
// numeric modules.

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "eivsc/inference.hpp"
#include "eivsc/rates.hpp"
#include "eivsc/simlab.hpp"
#include "eivsc/spectral.hpp"
#include "eivsc/stats.hpp"

namespace eivsc::report {

using nlohmann::json;

inline json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline json to_json(const rates::RateReport& r) {
  json out;
  out["solvable"] = r.solvable;
  out["s_star"] = r.solvable ? finite_or_null(r.s_star) : json(nullptr);
  out["prediction_bound"] = r.solvable ? finite_or_null(r.prediction_bound) : json(nullptr);
  out["eta_R_sq"] = r.eta_R_sq;
  out["R_used"] = r.R_used;
  out["probability_exponent"] = finite_or_null(r.probability_exponent);
  out["width_used"] = r.width_used;
  out["width_kind"] = r.width_kind;
  out["c"] = r.c;
  out["v"] = r.v;
  out["sigma_convention"] = r.sigma_convention;
  if (!r.solvable) out["reason"] = r.reason;
  return out;
}

inline json to_json(const inference::DeviationReport& r) {
  json out;
  out["bound"] = r.bound;
  out["D"] = r.D;
  out["D_tilde"] = r.D_tilde;
  out["w1"] = r.w1;
  out["w2"] = r.w2;
  out["v"] = r.v;
  out["s_used"] = r.s_used;
  out["probability_terms"] = {r.probability_terms[0], r.probability_terms[1], r.probability_terms[2]};
  return out;
}

inline json to_json(const spectral::TypicalityReport& r) {
  json components = json::array();
  for (const auto& c : r.per_component) {
    components.push_back({{"k", c.k}, {"projection", c.projection}, {"damping", c.damping}});
  }
  return json{{"D", r.D}, {"D_tilde", r.D_tilde}, {"per_component", components}};
}

inline json to_json(const inference::ConditionVerdict& v) {
  return json{{"ratio", finite_or_null(v.ratio)}, {"pass", v.pass}};
}

inline json to_json(const inference::DiagnosticsReport& r) {
  json out;
  out["fit"] = to_json(r.fit);
  out["eta_lower_sq"] = to_json(r.eta_lower_sq);
  out["eta_lower_lin"] = to_json(r.eta_lower_lin);
  out["rank"] = to_json(r.rank);
  out["rank_ratio_branches"] = {finite_or_null(r.rank_ratio_branch[0]), finite_or_null(r.rank_ratio_branch[1])};
  out["p_eff"] = to_json(r.p_eff);
  out["p_eff_ratio_branches"] = {finite_or_null(r.p_eff_ratio_branch[0]), finite_or_null(r.p_eff_ratio_branch[1]),
                                 finite_or_null(r.p_eff_ratio_branch[2])};
  if (r.sv_substitute) {
    out["sv_substitute"] = to_json(*r.sv_substitute);
    out["substitute_R"] = r.substitute_R;
  }
  out["kappa"] = r.kappa;
  out["kappa_prime"] = r.kappa_prime;
  out["sigma_tau"] = r.sigma_tau;
  out["eta_bias_window_ratio"] = finite_or_null(r.eta_bias_window_ratio);
  out["eta_bias_window_note"] = "experimental: eta^2 p_eff / (n^{kappa-1} p^{kappa'})";
  out["threshold"] = r.threshold;
  return out;
}

inline json to_json(const inference::InferenceReport& r) {
  json out;
  out["tau_hat"] = r.tau_hat;
  out["tau_tilde"] = r.tau_tilde ? json(*r.tau_tilde) : json(nullptr);
  out["sigma_tau_hat"] = r.sigma_tau_hat;
  out["ci_low"] = r.ci_low;
  out["ci_high"] = r.ci_high;
  out["alpha"] = r.alpha;
  out["variance_method"] = inference::variance_method_name(r.variance_method);
  if (r.decomposition) {
    out["decomposition"] = {{"oracle_deviation", r.decomposition->deviation},
                            {"oracle_bias", r.decomposition->bias},
                            {"oracle_noise", r.decomposition->noise}};
  }
  out["coverage_note"] = r.coverage_note;
  return out;
}

inline json to_json(const simlab::GridPointInfo& g) {
  json out;
  out["n"] = g.n;
  out["p"] = g.p;
  out["singular_values"] = g.singular_values;
  out["e_tau_tilde"] = g.e_tau_tilde;
  out["sigma_tau_true"] = g.sigma_tau_true;
  out["p_eff"] = g.p_eff;
  out["theta_tilde_norm_sq"] = g.theta_tilde_norm_sq;
  out["oracle_error"] = g.oracle_error;
  out["oracle_loss"] = g.oracle_loss;
  out["non_converged"] = g.non_converged;
  return out;
}

inline void write_table_csv(const simlab::ReplicationTable& table, std::ostream& out) {
  out << "grid_index,rep_index,seed,n,p,tau_hat,tau_tilde,dev,bias,noise,"
         "coef_dev_norm,pred_dev_norm,sigma_tau_hat,covered_oracle_mean,covered_tau,converged\n";
  out << std::setprecision(17);
  for (const auto& row : table.rows) {
    const auto& g = table.grid[row.grid_index];
    out << row.grid_index << ',' << row.rep_index << ',' << row.seed << ',' << g.n << ',' << g.p << ','
        << row.tau_hat << ',' << row.tau_tilde << ',' << row.dev << ',' << row.bias << ',' << row.noise << ','
        << row.coef_dev_norm << ',' << row.pred_dev_norm << ',' << row.sigma_tau_hat << ','
        << (row.covered_oracle_mean ? 1 : 0) << ',' << (row.covered_tau ? 1 : 0) << ','
        << (row.converged ? 1 : 0) << '\n';
  }
}

// Human-readable condition table for the diagnose subcommand.
inline std::string diagnostics_table(const inference::DiagnosticsReport& r) {
  std::ostringstream out;
  auto line = [&](const std::string& name, const inference::ConditionVerdict& v) {
    out << "  " << std::left << std::setw(26) << name << " ratio=" << std::setw(12) << std::setprecision(4)
        << v.ratio << (v.pass ? " pass" : " FAIL") << "\n";
  };
  out << "normality diagnostics (pass at ratio <= " << r.threshold << ")\n";
  line("1. oracle fit", r.fit);
  line("2a. eta lower (sq)", r.eta_lower_sq);
  line("2b. eta lower (lin)", r.eta_lower_lin);
  line("3. rank", r.rank);
  line("4. p_eff", r.p_eff);
  if (r.sv_substitute) {
    out << "  " << std::left << std::setw(26) << "sv substitute (R=" + std::to_string(r.substitute_R) + ")"
        << " ratio=" << std::setw(12) << std::setprecision(4) << r.sv_substitute->ratio
        << (r.sv_substitute->pass ? " pass (<=1)" : " FAIL (>1)") << "\n";
  }
  out << "  kappa=" << r.kappa << " kappa'=" << r.kappa_prime << " sigma_tau=" << r.sigma_tau << "\n";
  out << "  eta bias window ratio (experimental): " << r.eta_bias_window_ratio << "\n";
  return out.str();
}

inline std::string inference_table(const inference::InferenceReport& r) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "tau_hat        " << r.tau_hat << "\n";
  if (r.tau_tilde) out << "tau_tilde      " << *r.tau_tilde << "\n";
  out << "sigma_tau_hat  " << r.sigma_tau_hat << "  (" << inference::variance_method_name(r.variance_method)
      << ")\n";
  out << "ci             [" << r.ci_low << ", " << r.ci_high << "]  alpha=" << r.alpha << "\n";
  if (r.decomposition) {
    out << "decomposition  dev=" << r.decomposition->deviation << " bias=" << r.decomposition->bias
        << " noise=" << r.decomposition->noise << "\n";
  }
  out << "note           " << r.coverage_note << "\n";
  return out.str();
}

struct DeviationCheckConfig {
  double w1 = 3.0;
  double w2 = 3.0;
  double s_quantile = 0.99;
};

// Per-experiment summary JSON for the simulate subcommand.
inline json summarize_scenario(const simlab::Scenario& sc, const simlab::ReplicationTable& table,
                               const DeviationCheckConfig& dev_cfg = {}) {
  json out;
  out["n_reps"] = sc.n_reps;
  out["grid"] = json::array();
  for (const auto& g : table.grid) out["grid"].push_back(to_json(g));

  const auto [cov_oracle, se_oracle] = simlab::coverage_summary(table, simlab::CoverageTarget::E_tau_tilde);
  const auto [cov_tau, se_tau] = simlab::coverage_summary(table, simlab::CoverageTarget::tau);
  out["coverage_e_tau_tilde"] = {{"value", cov_oracle}, {"se", se_oracle}};
  out["coverage_tau"] = {{"value", cov_tau}, {"se", se_tau}};
  out["nominal"] = 1.0 - sc.alpha;

  // z statistics per grid point against the exact oracle mean and true scale.
  json ks = json::array();
  for (std::size_t g = 0; g < table.grid.size(); ++g) {
    std::vector<double> z;
    for (const auto& row : table.rows) {
      if (row.grid_index == static_cast<int>(g) && table.grid[g].sigma_tau_true > 0.0)
        z.push_back((row.tau_hat - table.grid[g].e_tau_tilde) / table.grid[g].sigma_tau_true);
    }
    if (z.size() >= 2) ks.push_back(simlab::ks_statistic(z));
  }
  out["ks_distance"] = ks;

  if (table.grid.size() >= 3) {
    try {
      const auto [slope, se] = simlab::rate_slope(table, simlab::XField::n, simlab::YField::coef_dev_norm);
      out["coef_rate_slope"] = {{"slope", slope}, {"stderr", se}};
    } catch (const std::exception&) {
      // slope undefined (duplicate x or zero medians); omitted
    }
  }

  json per_grid = json::array();
  for (std::size_t g = 0; g < table.grid.size(); ++g) {
    json entry;
    const auto coef = simlab::grid_field(table, static_cast<int>(g), simlab::YField::coef_dev_norm);
    const auto pred = simlab::grid_field(table, static_cast<int>(g), simlab::YField::pred_dev_norm);
    const auto dev = simlab::grid_field(table, static_cast<int>(g), simlab::YField::abs_dev);
    entry["median_coef_dev"] = stats::median(coef);
    entry["median_pred_dev"] = stats::median(pred);
    entry["median_abs_dev"] = stats::median(dev);

    // Prediction-bound coupling: the 95th-percentile coefficient radius must
    // carry the prediction deviations at rate eta sqrt(n) s.
    const double s_emp = stats::percentile(coef, 0.95);
    const double pred_bound = sc.eta * std::sqrt(double(table.grid[g].n)) * s_emp;
    const auto [coef_rate, pred_rate] =
        simlab::bound_violation_rate(table, s_emp, pred_bound, static_cast<int>(g));
    entry["s_emp_p95"] = s_emp;
    entry["pred_bound"] = pred_bound;
    entry["coef_violation_rate"] = coef_rate;
    entry["pred_violation_rate"] = pred_rate;

    if (sc.experiment == simlab::ExperimentType::deviation_bound_check) {
      const auto res = simlab::resolve_grid_point(sc, static_cast<int>(g));
      const auto dec = spectral::svd(res.truth.A);
      inference::DeviationBoundParams params;
      params.s = stats::percentile(coef, dev_cfg.s_quantile);
      params.w1 = dev_cfg.w1;
      params.w2 = dev_cfg.w2;
      params.sigma = sc.noise.sigma;
      params.eta = sc.eta;
      params.n = res.n;
      params.width = std::sqrt(rates::guarded_log(res.p));
      const auto bound_rep = inference::deviation_bound(res.truth.a_e, dec, res.truth.noise, params);
      double violations = 0.0;
      for (double d : dev)
        if (d > bound_rep.bound) violations += 1.0;
      entry["deviation_bound"] = to_json(bound_rep);
      entry["deviation_violation_rate"] = violations / dev.size();
      entry["s_quantile"] = dev_cfg.s_quantile;
    }
    per_grid.push_back(entry);
  }
  out["per_grid"] = per_grid;
  return out;
}

}  // namespace eivsc::report

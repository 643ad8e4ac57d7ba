#pragma once

// Command-line workbench: JSON configs with strict key checking, flag
// overrides for the five most-used scalars, atomic output files, and exit
// codes 0 (success) / 1 (usage error) / 2 (numerical failure, with a
// machine-readable error.json).
//
// Subcommands: simulate, estimate, rates, diagnose. Every run writes
// effective_config.json with all defaults resolved; re-running from that dump
// reproduces the outputs bit for bit.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eivsc/csv.hpp"
#include "eivsc/inference.hpp"
#include "eivsc/panel.hpp"
#include "eivsc/rates.hpp"
#include "eivsc/report_json.hpp"
#include "eivsc/simlab.hpp"
#include "eivsc/solver.hpp"

namespace eivsc::cli {

using nlohmann::json;

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  std::string kind;
  NumericalError(std::string kind_, const std::string& what) : std::runtime_error(what), kind(std::move(kind_)) {}
};

namespace detail {

// Strict-mode view over a JSON object: every read registers its key, every
// resolved value (default or explicit) is echoed into the effective config,
// and finish() rejects unknown keys with their full path.
class Section {
 public:
  Section(const json* src, json* effective, std::string path)
      : src_(src), effective_(effective), path_(std::move(path)) {}

  bool has(const std::string& key) const { return src_ != nullptr && src_->contains(key); }

  template <typename T>
  T get(const std::string& key, T def) {
    known_.insert(key);
    T value = std::move(def);
    if (has(key)) value = read<T>(key);
    (*effective_)[key] = value;
    return value;
  }

  template <typename T>
  T require(const std::string& key) {
    known_.insert(key);
    if (!has(key)) throw UsageError("missing required field '" + path_ + key + "'");
    T value = read<T>(key);
    (*effective_)[key] = value;
    return value;
  }

  template <typename T>
  std::optional<T> get_optional(const std::string& key) {
    known_.insert(key);
    if (!has(key) || src_->at(key).is_null()) {
      (*effective_)[key] = nullptr;
      return std::nullopt;
    }
    T value = read<T>(key);
    (*effective_)[key] = value;
    return value;
  }

  Section sub(const std::string& key) {
    known_.insert(key);
    const json* child = nullptr;
    if (has(key)) {
      child = &src_->at(key);
      if (!child->is_object()) throw UsageError("field '" + path_ + key + "' must be an object");
    }
    json& echild = (*effective_)[key] = json::object();
    return Section(child, &echild, path_ + key + ".");
  }

  void finish() const {
    if (src_ == nullptr) return;
    for (const auto& item : src_->items()) {
      if (!known_.count(item.key())) throw UsageError("unknown key '" + path_ + item.key() + "'");
    }
  }

 private:
  template <typename T>
  T read(const std::string& key) const {
    try {
      return src_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError("type mismatch at '" + path_ + key + "': " + e.what());
    }
  }

  const json* src_;
  json* effective_;
  std::string path_;
  std::set<std::string> known_;
};

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline solver::ConstraintKind parse_constraint_kind(const std::string& name, const std::string& where) {
  if (name == "simplex") return solver::ConstraintKind::simplex;
  if (name == "l1") return solver::ConstraintKind::l1_ball;
  if (name == "nonneg") return solver::ConstraintKind::nonnegative_orthant;
  if (name == "euclidean") return solver::ConstraintKind::euclidean;
  throw UsageError("invalid constraint '" + name + "' at " + where +
                   " (expected simplex, l1, nonneg, or euclidean)");
}

template <typename T>
T parse_enum(const std::string& value, const std::vector<std::pair<std::string, T>>& table,
             const std::string& where) {
  for (const auto& [name, v] : table) {
    if (name == value) return v;
  }
  std::string names;
  for (const auto& [name, v] : table) names += (names.empty() ? "" : ", ") + name;
  throw UsageError("invalid value '" + value + "' at " + where + " (expected one of: " + names + ")");
}

}  // namespace detail

enum class Command { simulate, estimate, rates, diagnose };

struct EstimateJob {
  std::string input_csv;
  csv::LayoutConfig layout;
  panel::Orientation orientation = panel::Orientation::columns_are_units;
  bool noise_known = false;
  double noise_sigma = 1.0;
  double noise_rho = 0.0;
  int noise_p_e = 1;
  double eta = 1.0;
  solver::ConstraintKind constraint = solver::ConstraintKind::simplex;
  double l1_radius = 1.0;
  bool intercept = false;
  double alpha = 0.05;
  inference::VarianceMethod variance_method = inference::VarianceMethod::plugin;
  solver::SolverOptions solver_options;
  std::optional<std::vector<double>> theta_tilde;
};

struct RatesJob {
  bool refined = false;
  rates::SimplifiedRateParams params;
  rates::RefinedRateParams refined_params;
};

struct RunConfig {
  Command command = Command::simulate;
  std::filesystem::path output_dir = ".";
  json effective;

  simlab::Scenario scenario;
  report::DeviationCheckConfig deviation_check;
  EstimateJob estimate;
  RatesJob rates_job;
  inference::DiagnosticsInputs diagnostics;
};

namespace detail {

inline solver::SolverOptions parse_solver_options(Section& parent) {
  Section s = parent.sub("solver");
  solver::SolverOptions opts;
  opts.tol = s.get<double>("tol", 1e-9);
  opts.max_iterations = s.get<int>("max_iterations", 200000);
  s.finish();
  return opts;
}

inline panel::SignalSpec parse_signal(Section& parent) {
  Section s = parent.sub("signal");
  panel::SignalSpec spec;
  spec.rank = s.get<int>("rank", 0);
  spec.singular_values = s.get<std::vector<double>>("singular_values", {});
  spec.factor_style = parse_enum<panel::FactorStyle>(
      s.get<std::string>("factor_style", "random_orthonormal"),
      {{"random_orthonormal", panel::FactorStyle::random_orthonormal},
       {"common_trends", panel::FactorStyle::common_trends}},
      "signal.factor_style");
  spec.a_e_style = parse_enum<panel::TreatedUnitStyle>(
      s.get<std::string>("a_e_style", "typical_row"),
      {{"typical_row", panel::TreatedUnitStyle::typical_row},
       {"top_singular_aligned", panel::TreatedUnitStyle::top_singular_aligned},
       {"orthogonal_to_rowspace", panel::TreatedUnitStyle::orthogonal_to_rowspace}},
      "signal.a_e_style");
  spec.theta_star_style = parse_enum<panel::ThetaStarStyle>(
      s.get<std::string>("theta_star_style", "simplex_dirichlet"),
      {{"simplex_dirichlet", panel::ThetaStarStyle::simplex_dirichlet},
       {"uniform_all", panel::ThetaStarStyle::uniform_all}},
      "signal.theta_star_style");
  spec.misspecified = s.get<bool>("misspecified", false);
  spec.misspec_scale = s.get<double>("misspec_scale", 0.0);
  spec.a_e_scale = s.get<double>("a_e_scale", 1.0);
  s.finish();
  return spec;
}

inline simlab::Scenario parse_scenario(Section& root, report::DeviationCheckConfig& dev_cfg) {
  Section s = root.sub("scenario");
  simlab::Scenario sc;
  sc.n = s.get<int>("n", 100);
  sc.p = s.get<int>("p", 10);
  sc.signal = parse_signal(s);
  sc.scale_sv_with_np = s.get<bool>("scale_sv_with_np", false);
  {
    Section noise = s.sub("noise");
    sc.noise.sigma = noise.get<double>("sigma", 1.0);
    sc.noise.rho = noise.get<double>("rho", 0.0);
    sc.noise.p_e = noise.get<int>("p_e", 1);
    sc.noise.distribution = parse_enum<panel::NoiseDistribution>(
        noise.get<std::string>("distribution", "gaussian"),
        {{"gaussian", panel::NoiseDistribution::gaussian},
         {"scaled_rademacher_mixture", panel::NoiseDistribution::scaled_rademacher_mixture}},
        "scenario.noise.distribution");
    noise.finish();
  }
  sc.tau = s.get<double>("tau", 0.0);
  sc.eta = s.get<double>("eta", 1.0);
  sc.constraint =
      parse_constraint_kind(s.get<std::string>("constraint", "simplex"), "scenario.constraint");
  sc.l1_radius = s.get<double>("l1_radius", 1.0);
  sc.intercept = s.get<bool>("intercept", false);
  sc.alpha = s.get<double>("alpha", 0.05);
  sc.experiment = parse_enum<simlab::ExperimentType>(
      s.get<std::string>("experiment", "coverage"),
      {{"coverage", simlab::ExperimentType::coverage},
       {"zstat_normality", simlab::ExperimentType::zstat_normality},
       {"coef_rate_scaling", simlab::ExperimentType::coef_rate_scaling},
       {"deviation_bound_check", simlab::ExperimentType::deviation_bound_check},
       {"concentration_check", simlab::ExperimentType::concentration_check}},
      "scenario.experiment");
  sc.variance_method = parse_enum<simlab::ScenarioVarianceMethod>(
      s.get<std::string>("variance_method", "plugin_oracle"),
      {{"plugin_oracle", simlab::ScenarioVarianceMethod::plugin_oracle},
       {"plugin_fit", simlab::ScenarioVarianceMethod::plugin_fit},
       {"jackknife_treated", simlab::ScenarioVarianceMethod::jackknife_treated}},
      "scenario.variance_method");
  sc.use_oracle_estimator = s.get<bool>("use_oracle_estimator", false);
  {
    Section grid = s.sub("grid");
    const auto ns = grid.get<std::vector<int>>("n", {});
    const auto ps = grid.get<std::vector<int>>("p", {});
    grid.finish();
    const std::size_t count = std::max(ns.size(), ps.size());
    if (!ps.empty() && !ns.empty() && ns.size() != ps.size())
      throw UsageError("scenario.grid: n and p override lists must have equal length");
    sc.grid.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (!ns.empty()) sc.grid[i].n = ns[i];
      if (!ps.empty()) sc.grid[i].p = ps[i];
    }
  }
  sc.n_reps = s.get<int>("n_reps", 100);
  sc.base_seed = s.get<std::uint64_t>("seed", 1);
  sc.solver_options = parse_solver_options(s);
  sc.workers = s.get<int>("workers", 0);
  {
    Section dev = s.sub("deviation_check");
    dev_cfg.w1 = dev.get<double>("w1", 3.0);
    dev_cfg.w2 = dev.get<double>("w2", 3.0);
    dev_cfg.s_quantile = dev.get<double>("s_quantile", 0.99);
    dev.finish();
  }
  s.finish();
  return sc;
}

inline EstimateJob parse_estimate(Section& root) {
  EstimateJob job;
  job.input_csv = root.require<std::string>("input_csv");
  {
    Section layout = root.sub("layout");
    job.layout.treated_column = layout.get<std::string>("treated_column", "");
    job.layout.treated_index = layout.get<int>("treated_index", -1);
    job.layout.control_columns = layout.get<std::vector<std::string>>("control_columns", {});
    job.layout.post_row = layout.get<int>("post_row", -1);
    layout.finish();
  }
  job.orientation = parse_enum<panel::Orientation>(
      root.get<std::string>("orientation", "columns_are_units"),
      {{"columns_are_units", panel::Orientation::columns_are_units},
       {"rows_are_units", panel::Orientation::rows_are_units}},
      "orientation");
  {
    Section noise = root.sub("noise");
    const std::string method = noise.get<std::string>("method", "residual_plugin");
    if (method == "known") {
      job.noise_known = true;
      job.noise_sigma = noise.require<double>("sigma");
      job.noise_rho = noise.get<double>("rho", 0.0);
      job.noise_p_e = noise.get<int>("p_e", 1);
    } else if (method == "residual_plugin") {
      job.noise_known = false;
      job.noise_p_e = noise.get<int>("p_e", 1);
    } else {
      throw UsageError("invalid value '" + method + "' at noise.method (expected known or residual_plugin)");
    }
    noise.finish();
  }
  job.eta = root.get<double>("eta", 1.0);
  job.constraint = parse_constraint_kind(root.get<std::string>("constraint", "simplex"), "constraint");
  job.l1_radius = root.get<double>("l1_radius", 1.0);
  // Counterfactual forecasting turns the intercept on by default.
  job.intercept =
      root.get<bool>("intercept", job.orientation == panel::Orientation::rows_are_units);
  job.alpha = root.get<double>("alpha", 0.05);
  job.variance_method = parse_enum<inference::VarianceMethod>(
      root.get<std::string>("variance_method", "plugin"),
      {{"plugin", inference::VarianceMethod::plugin},
       {"jackknife_treated", inference::VarianceMethod::jackknife_treated},
       {"placebo_controls", inference::VarianceMethod::placebo_controls}},
      "variance_method");
  job.solver_options = parse_solver_options(root);
  job.theta_tilde = root.get_optional<std::vector<double>>("theta_tilde");
  return job;
}

inline RatesJob parse_rates(Section& root) {
  RatesJob job;
  job.refined = root.get<std::string>("mode", "simplified") == "refined";
  Section p = root.sub("params");
  rates::SimplifiedRateParams& q = job.params;
  q.n = p.require<int>("n");
  q.p = p.require<int>("p");
  q.sigma = p.get<double>("sigma", 1.0);
  q.p_eff = p.get<double>("p_eff", 1.0);
  q.rank_or_R = p.get<int>("rank", 0);
  q.oracle_error = p.get<double>("oracle_error", 0.0);
  q.eta = p.get<double>("eta", 1.0);
  q.v = p.get<double>("v", 1.0);
  q.c = p.get<double>("c", 1.0);
  q.width_mode = parse_enum<rates::WidthMode>(
      p.get<std::string>("width_mode", "l1_bound"),
      {{"l1_bound", rates::WidthMode::l1_bound},
       {"euclidean_bound", rates::WidthMode::euclidean_bound},
       {"monte_carlo", rates::WidthMode::monte_carlo}},
      "params.width_mode");
  q.width_c = p.get<double>("width_c", 1.0);
  q.mc_samples = p.get<int>("mc_samples", 500);
  q.mc_seed = p.get<std::uint64_t>("mc_seed", 1);
  q.sigma_convention = p.get<std::string>("sigma_convention", "col_operator_norm");
  if (q.width_mode == rates::WidthMode::monte_carlo) {
    Section set = p.sub("mc_set");
    rates::SetDescriptor descriptor;
    const auto kind = parse_constraint_kind(set.get<std::string>("constraint", "simplex"), "params.mc_set.constraint");
    const int dim = set.get<int>("dimension", q.p);
    const double radius = set.get<double>("l1_radius", 1.0);
    switch (kind) {
      case solver::ConstraintKind::simplex: descriptor.base_constraint = solver::ConstraintSet::Simplex(dim); break;
      case solver::ConstraintKind::l1_ball:
        descriptor.base_constraint = solver::ConstraintSet::L1Ball(dim, radius);
        break;
      case solver::ConstraintKind::nonnegative_orthant:
        descriptor.base_constraint = solver::ConstraintSet::Nonnegative(dim);
        break;
      case solver::ConstraintKind::euclidean:
        descriptor.base_constraint = solver::ConstraintSet::Euclidean(dim);
        break;
    }
    descriptor.center = kind == solver::ConstraintKind::simplex
                            ? Eigen::VectorXd::Constant(dim, 1.0 / dim)
                            : Eigen::VectorXd::Zero(dim);
    descriptor.metric = q.sigma * q.sigma * Eigen::MatrixXd::Identity(dim, dim);
    set.finish();
    q.mc_set = descriptor;
  } else {
    p.sub("mc_set").finish();
  }
  if (job.refined) {
    Section r = p.sub("refined");
    job.refined_params.K = r.get<double>("K", 1.0);
    job.refined_params.phi = r.get<double>("phi", 1.0);
    job.refined_params.width_sigma = r.require<double>("width_sigma");
    job.refined_params.p_eff_sigma = r.require<double>("p_eff_sigma");
    job.refined_params.singular_values = r.get_optional<std::vector<double>>("singular_values");
    job.refined_params.width_plain = r.get_optional<double>("width_plain");
    r.finish();
  } else {
    p.sub("refined").finish();
  }
  p.finish();
  job.refined_params.base = q;
  return job;
}

inline inference::DiagnosticsInputs parse_diagnose(Section& root) {
  Section in = root.sub("inputs");
  inference::DiagnosticsInputs d;
  d.n = in.require<int>("n");
  d.p = in.require<int>("p");
  d.eta = in.get<double>("eta", 1.0);
  d.sigma = in.get<double>("sigma", 1.0);
  d.sigma_e = in.get<double>("sigma_e", 1.0);
  d.p_eff = in.require<double>("p_eff");
  d.rank = in.get<int>("rank", 0);
  d.d_tilde = in.require<double>("d_tilde");
  d.oracle_error = in.get<double>("oracle_error", 0.0);
  d.psi_col_sigma_norm = in.get<double>("psi_col_sigma_norm", 0.0);
  d.kappa = in.get<double>("kappa", 1.0);
  d.kappa_prime = in.get<double>("kappa_prime", 1.0);
  d.threshold = in.get<double>("threshold", 0.1);
  const auto sv = in.get_optional<std::vector<double>>("singular_values");
  if (sv) d.singular_values = *sv;
  d.substitute_R = in.get<int>("substitute_R", -1);
  in.finish();
  return d;
}

}  // namespace detail

// Validates the merged JSON, resolves every default, and returns the typed
// run configuration together with the effective-config dump.
inline RunConfig parse_config(const json& merged) {
  if (!merged.is_object()) throw UsageError("config root must be a JSON object");
  RunConfig config;
  config.effective = json::object();
  detail::Section root(&merged, &config.effective, "");

  const std::string command = root.require<std::string>("command");
  config.command = detail::parse_enum<Command>(command,
                                               {{"simulate", Command::simulate},
                                                {"estimate", Command::estimate},
                                                {"rates", Command::rates},
                                                {"diagnose", Command::diagnose}},
                                               "command");
  config.output_dir = root.get<std::string>("output_dir", ".");

  switch (config.command) {
    case Command::simulate:
      config.scenario = detail::parse_scenario(root, config.deviation_check);
      break;
    case Command::estimate:
      config.estimate = detail::parse_estimate(root);
      break;
    case Command::rates:
      config.rates_job = detail::parse_rates(root);
      break;
    case Command::diagnose:
      config.diagnostics = detail::parse_diagnose(root);
      break;
  }
  root.finish();
  return config;
}

namespace detail {

inline void run_simulate(const RunConfig& config) {
  simlab::ReplicationTable table;
  try {
    table = simlab::run_scenario(config.scenario);
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw NumericalError("experiment_failure", e.what());
  }
  std::ostringstream csv_out;
  report::write_table_csv(table, csv_out);
  write_atomic(config.output_dir / "table.csv", csv_out.str());
  const json summary = report::summarize_scenario(config.scenario, table, config.deviation_check);
  write_atomic(config.output_dir / "report.json", summary.dump(2) + "\n");
}

inline void run_estimate(const RunConfig& config) {
  const EstimateJob& job = config.estimate;
  panel::PanelObservation obs = csv::load_panel_csv(job.input_csv, job.layout);
  if (job.orientation == panel::Orientation::rows_are_units) obs = panel::to_forecasting_frame(obs);
  const int n = obs.n();
  const int p = obs.p();

  panel::NoiseSpec noise =
      job.noise_known
          ? (job.noise_rho == 0.0 ? panel::NoiseSpec::iid_columns(n, p, job.noise_sigma, job.noise_p_e)
                                  : panel::NoiseSpec::ar1_columns(n, p, job.noise_sigma, job.noise_rho, job.noise_p_e))
          : panel::estimate_noise_spec(obs, panel::NoiseEstimationMethod::residual_plugin);
  if (!job.noise_known) noise.p_e = job.noise_p_e;

  solver::ProblemSpec prob;
  prob.design = obs.X;
  prob.target = obs.y;
  prob.sigma_row = noise.sigma_row;
  prob.psi = noise.psi;
  prob.eta = job.eta;
  prob.mode = solver::RegCoefficientMode::empirical;
  prob.intercept = job.intercept;
  switch (job.constraint) {
    case solver::ConstraintKind::simplex: prob.constraint = solver::ConstraintSet::Simplex(p); break;
    case solver::ConstraintKind::l1_ball: prob.constraint = solver::ConstraintSet::L1Ball(p, job.l1_radius); break;
    case solver::ConstraintKind::nonnegative_orthant: prob.constraint = solver::ConstraintSet::Nonnegative(p); break;
    case solver::ConstraintKind::euclidean: prob.constraint = solver::ConstraintSet::Euclidean(p); break;
  }

  solver::FitResult fit;
  try {
    fit = solver::solve(prob, job.solver_options);
  } catch (const solver::UnboundedProblemError& e) {
    throw NumericalError("unbounded_problem", e.what());
  }
  if (!fit.converged) throw NumericalError("non_convergence", "solver did not reach the requested tolerance");

  inference::InferenceReport rep;
  rep.tau_hat = inference::estimate_tau(obs, fit);
  rep.alpha = job.alpha;
  rep.variance_method = job.variance_method;
  switch (job.variance_method) {
    case inference::VarianceMethod::plugin:
      rep.sigma_tau_hat = inference::plugin_sigma_tau(noise.sigma_e, noise.p_e, fit.theta);
      break;
    case inference::VarianceMethod::jackknife_treated:
      rep.sigma_tau_hat = inference::jackknife_treated_sigma_tau(fit, obs);
      break;
    case inference::VarianceMethod::placebo_controls:
      rep.sigma_tau_hat = inference::placebo_controls_sigma_tau(fit, obs, prob, noise.p_e, job.solver_options);
      break;
  }
  const auto [lo, hi] = inference::confidence_interval(rep.tau_hat, rep.sigma_tau_hat, job.alpha);
  rep.ci_low = lo;
  rep.ci_high = hi;
  if (job.theta_tilde) {
    if (static_cast<int>(job.theta_tilde->size()) != p)
      throw UsageError("theta_tilde length must equal the number of controls");
    Eigen::VectorXd tt = Eigen::Map<const Eigen::VectorXd>(job.theta_tilde->data(), p);
    rep.tau_tilde = obs.y_e - obs.x_e.dot(tt);
  }

  json out = report::to_json(rep);
  out["fit"] = {{"converged", fit.converged},
                {"iterations", fit.iterations},
                {"loss", fit.loss},
                {"optimality_residual", fit.optimality_residual},
                {"theta0", fit.theta0},
                {"theta", std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size())},
                {"convexity", fit.convexity_certificate == solver::ConvexityCertificate::convex
                                  ? "convex"
                                  : "indefinite_detected"}};
  out["noise"] = {{"sigma_e", noise.sigma_e}, {"p_e", noise.p_e}, {"method", job.noise_known ? "known" : "residual_plugin"}};
  write_atomic(config.output_dir / "report.json", out.dump(2) + "\n");
  const std::string table = report::inference_table(rep);
  write_atomic(config.output_dir / "report.txt", table);
  std::cout << table;
}

inline void run_rates(const RunConfig& config) {
  const rates::RateReport rep = config.rates_job.refined
                                    ? rates::solve_fixed_point_refined(config.rates_job.refined_params)
                                    : rates::solve_fixed_point(config.rates_job.params);
  write_atomic(config.output_dir / "report.json", report::to_json(rep).dump(2) + "\n");
  if (!rep.solvable) throw NumericalError("rate_unsolvable", rep.reason);
}

inline void run_diagnose(const RunConfig& config) {
  const auto rep = inference::normality_diagnostics(config.diagnostics);
  write_atomic(config.output_dir / "report.json", report::to_json(rep).dump(2) + "\n");
  const std::string table = report::diagnostics_table(rep);
  write_atomic(config.output_dir / "report.txt", table);
  std::cout << table;
}

}  // namespace detail

// Executes a validated configuration. Returns the process exit code.
inline int run(const RunConfig& config) {
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (!std::filesystem::is_directory(config.output_dir))
    throw UsageError("output directory '" + config.output_dir.string() + "' is not writable");
  detail::write_atomic(config.output_dir / "effective_config.json", config.effective.dump(2) + "\n");

  try {
    switch (config.command) {
      case Command::simulate: detail::run_simulate(config); break;
      case Command::estimate: detail::run_estimate(config); break;
      case Command::rates: detail::run_rates(config); break;
      case Command::diagnose: detail::run_diagnose(config); break;
    }
  } catch (const NumericalError& e) {
    const json err = {{"kind", e.kind}, {"message", e.what()}};
    detail::write_atomic(config.output_dir / "error.json", err.dump(2) + "\n");
    std::cerr << err.dump() << "\n";
    return 2;
  }
  return 0;
}

struct FlagValues {
  std::string command;
  std::string config_path;
  std::string output_dir;
  double eta = 0.0;
  bool has_eta = false;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int n_reps = 0;
  bool has_n_reps = false;
  double alpha = 0.0;
  bool has_alpha = false;
  std::string constraint;
};

namespace detail {

// Flags override file values; they land at the command-specific spot so the
// effective config echoes them.
inline void apply_flags(json& config, const FlagValues& flags) {
  if (!flags.command.empty()) config["command"] = flags.command;
  if (!flags.output_dir.empty()) config["output_dir"] = flags.output_dir;
  const std::string command = config.value("command", "");

  auto reject = [&](const std::string& flag) {
    throw UsageError("flag " + flag + " is not applicable to command '" + command + "'");
  };

  auto parse_constraint_flag = [&](json& target) {
    std::string value = flags.constraint;
    const auto colon = value.find(':');
    if (colon != std::string::npos) {
      const std::string radius = value.substr(colon + 1);
      value = value.substr(0, colon);
      if (value != "l1") throw UsageError("only l1 takes a radius, got --constraint " + flags.constraint);
      try {
        target["l1_radius"] = std::stod(radius);
      } catch (const std::exception&) {
        throw UsageError("invalid l1 radius in --constraint " + flags.constraint);
      }
    }
    target["constraint"] = value;
  };

  if (command == "simulate") {
    json& sc = config["scenario"];
    if (flags.has_eta) sc["eta"] = flags.eta;
    if (flags.has_seed) sc["seed"] = flags.seed;
    if (flags.has_n_reps) sc["n_reps"] = flags.n_reps;
    if (flags.has_alpha) sc["alpha"] = flags.alpha;
    if (!flags.constraint.empty()) parse_constraint_flag(sc);
  } else if (command == "estimate") {
    if (flags.has_eta) config["eta"] = flags.eta;
    if (flags.has_alpha) config["alpha"] = flags.alpha;
    if (!flags.constraint.empty()) parse_constraint_flag(config);
    if (flags.has_seed) reject("--seed");
    if (flags.has_n_reps) reject("--n-reps");
  } else if (command == "rates") {
    if (flags.has_eta) config["params"]["eta"] = flags.eta;
    if (flags.has_seed) config["params"]["mc_seed"] = flags.seed;
    if (flags.has_alpha) reject("--alpha");
    if (flags.has_n_reps) reject("--n-reps");
    if (!flags.constraint.empty()) reject("--constraint");
  } else if (command == "diagnose") {
    if (flags.has_eta) config["inputs"]["eta"] = flags.eta;
    if (flags.has_seed || flags.has_n_reps || flags.has_alpha || !flags.constraint.empty())
      reject("--seed/--n-reps/--alpha/--constraint");
  }
}

}  // namespace detail

inline int run_main(int argc, const char* const* argv) {
  FlagValues flags;
  CLI::App app{"error-in-variables synthetic control workbench"};
  app.add_option("command", flags.command, "simulate | estimate | rates | diagnose");
  app.add_option("--config", flags.config_path, "JSON configuration file");
  app.add_option("--output", flags.output_dir, "output directory");
  auto* eta_opt = app.add_option("--eta", flags.eta, "regularization parameter");
  auto* seed_opt = app.add_option("--seed", flags.seed, "base seed");
  auto* reps_opt = app.add_option("--n-reps", flags.n_reps, "replications per grid point");
  auto* alpha_opt = app.add_option("--alpha", flags.alpha, "confidence level alpha");
  app.add_option("--constraint", flags.constraint, "simplex | l1:RADIUS | nonneg | euclidean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  flags.has_eta = eta_opt->count() > 0;
  flags.has_seed = seed_opt->count() > 0;
  flags.has_n_reps = reps_opt->count() > 0;
  flags.has_alpha = alpha_opt->count() > 0;

  try {
    json config = json::object();
    if (!flags.config_path.empty()) {
      std::ifstream in(flags.config_path);
      if (!in) throw UsageError("cannot open config file: " + flags.config_path);
      try {
        in >> config;
      } catch (const json::exception& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
      }
    }
    detail::apply_flags(config, flags);
    const RunConfig run_config = parse_config(config);
    return run(run_config);
  } catch (const NumericalError& e) {
    std::cerr << json{{"kind", e.kind}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"kind", "numerical_failure"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
}

}  // namespace eivsc::cli

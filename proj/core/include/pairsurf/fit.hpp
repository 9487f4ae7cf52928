#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pairsurf/dataset.hpp"
#include "pairsurf/design.hpp"
#include "pairsurf/likelihood.hpp"
#include "pairsurf/optimizer.hpp"
#include "pairsurf/variance.hpp"

namespace pairsurf {

struct FitOptions {
  // Deterministic starts: data-driven values, then smoothing parameters
  // shifted up and down by two decades.
  int num_starts = 3;
  std::optional<VarianceComponents> start;  // replaces the data-driven start
  std::optional<double> fixed_rho;
  std::optional<double> fixed_delta;
  std::optional<double> fixed_ar_corr;
  std::optional<std::vector<double>> fixed_log_smoothing;  // design order
  OptimizerOptions optimizer;
  bool compute_intervals = false;  // observed-information intervals for tau
  bool require_convergence = true; // fit() throws NoConvergence otherwise
};

struct FitDiagnostics {
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int starts = 0;
  bool used_fallback = false;
  double gradient_norm = 0.0;  // projected max-norm over free parameters, transformed scale
  std::vector<std::string> at_bound;
  std::string message;
};

// Natural-scale estimate with a 95% interval mapped from the transformed
// scale; bounds are NaN when unavailable (fixed or at a bound).
struct ParameterEstimate {
  std::string name;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct CriterionFit {
  VarianceComponents tau;
  Eigen::VectorXd x;  // ParameterLayout coordinates
  double value = 0.0;
  std::vector<bool> fixed;  // per layout slot
  FitDiagnostics diagnostics;
  Eigen::MatrixXd inverse_hessian;  // over the free slots, from the winning run
};

// Method-of-moments variance start with smoothing parameters giving about
// half the basis dimension in effective degrees of freedom.
VarianceComponents starting_values(const AssembledDesign& design);

// Maximizes the engine's criterion; never throws on non-convergence.
CriterionFit optimize_criterion(LikelihoodEngine& engine, const FitOptions& options = {});

struct SurfacePrediction {
  double fit = 0.0;
  double se = 0.0;
  bool extrapolated = false;
};

struct FittedModel {
  ModelSpec spec;
  std::vector<int> outcome_ids;
  int num_groups = 1;
  std::shared_ptr<const AssembledDesign> design;  // absent after deserialization

  VarianceComponents tau_hat;
  std::vector<std::string> smoothing_names;
  std::vector<std::string> fixed_names;
  Eigen::VectorXd theta_hat;
  Eigen::VectorXd theta_se;
  Eigen::VectorXd b_hat;                // penalized spline coefficients
  Eigen::MatrixXd subject_effects;      // m x L
  double loglik = 0.0;                  // maximized criterion
  double loglik_ml = 0.0;
  double loglik_reml = 0.0;

  std::vector<SmoothTerm> smooths;
  std::vector<GroupIntercept> group_intercepts;
  std::vector<double> edf_per_smooth;
  Eigen::Index num_penalized = 0;       // columns of Zs
  Eigen::MatrixXd posterior_cov;        // over [Zs | X] coefficients

  Eigen::VectorXd fitted_mu;            // X theta + Zs b
  Eigen::VectorXd residuals;            // y - fitted_mu - Z_u U
  std::vector<std::vector<Point2>> group_hulls;

  std::vector<ParameterEstimate> variance_table;
  FitDiagnostics diagnostics;
};

// Throws the assembly errors, NonPositiveDefinite or NoConvergence.
FittedModel fit(const LongitudinalDataset& ds, const ModelSpec& spec, const FitOptions& options = {});
FittedModel fit(std::shared_ptr<const AssembledDesign> design, const FitOptions& options = {});

// Fitted model at fixed variance components (no optimization).
FittedModel fit_at(std::shared_ptr<const AssembledDesign> design, const VarianceComponents& tau);

std::vector<double> effective_df(const FittedModel& fm);

// outcome is the dataset outcome (1 or 2). Throws UnknownGroup or UnknownOutcome.
std::vector<SurfacePrediction> predict_surface(const FittedModel& fm, int group, int outcome,
                                               std::span<const Point2> grid);

// Natural-scale table for tau from the observed information on the transformed scale.
std::vector<ParameterEstimate> variance_intervals(LikelihoodEngine& engine, const Eigen::VectorXd& x,
                                                  const std::vector<bool>& fixed);

}  // namespace pairsurf

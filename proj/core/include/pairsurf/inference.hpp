#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pairsurf/dataset.hpp"
#include "pairsurf/design.hpp"
#include "pairsurf/fit.hpp"

namespace pairsurf {

enum class TestMethod { bootstrap, adjusted_lrt };
std::string to_string(TestMethod m);

struct ReplicateStatus {
  bool converged = false;
  bool negative = false;  // statistic below -tolerance after a refit
};

struct TestResult {
  TestMethod method = TestMethod::bootstrap;
  double statistic = 0.0;  // bootstrap: loglik difference; LRT: twice the difference
  double p_value = 1.0;
  std::uint64_t seed = 0;
  double loglik_null = 0.0;
  double loglik_full = 0.0;
  std::string reference;

  // Adjusted LRT.
  int nu = 0;
  double p_chisq_nu = 1.0;
  double p_chisq_nu1 = 1.0;
  std::vector<double> edf;                  // per smooth of the penalized full fit
  std::vector<std::vector<int>> basis_dims; // [outcome][group - 1] of the unpenalized full model
  bool edf_floor_applied = false;

  // Bootstrap.
  int B = 0;
  int B_effective = 0;
  std::vector<double> bootstrap_stats;  // per replicate, NaN when failed
  std::vector<ReplicateStatus> replicate_status;
  int failures = 0;
  int negative_count = 0;
};

struct BootstrapOptions {
  int threads = 1;
  bool equal_intercepts = false;
  double max_failure_fraction = 0.10;
  double negative_tolerance = 1e-6;  // relative to 1 + |loglik|
  FitOptions fit;
};

// One resampled response under the fitted null: subjects' (U1, U2) pairs drawn
// with replacement, residuals multiplied by Rademacher signs.
struct BootstrapSample {
  Eigen::VectorXd y;
  std::vector<std::size_t> subjects;  // source subject of each subject's effects
  std::vector<double> multipliers;    // per stacked row
};

BootstrapSample wild_bootstrap_sample(const AssembledDesign& design, const FittedModel& null_fit, std::uint64_t seed,
                                      std::size_t replicate);

// Wild bootstrap comparison of group-specific surfaces against a shared
// surface. Throws InvalidSpecPair, TooManyFailures and the fitting errors.
TestResult bootstrap_test(const LongitudinalDataset& ds, const ModelSpec& full_spec, int B, std::uint64_t seed,
                          const BootstrapOptions& options = {});

// How rounded EDFs become unpenalized basis dimensions.
enum class BasisRule {
  per_outcome_max,  // every surface of an outcome (null included) takes the largest group dimension
  per_smooth,       // each group keeps its own dimension; the null takes the smallest
};

struct LrtOptions {
  bool equal_intercepts = false;
  BasisRule basis_rule = BasisRule::per_outcome_max;
  FitOptions fit;
};

// Likelihood-ratio test between unpenalized models whose basis dimensions
// follow the effective degrees of freedom of the penalized full fit.
// Throws NonNested and the fitting errors.
TestResult adjusted_lrt(const LongitudinalDataset& ds, const ModelSpec& full_spec, std::uint64_t seed,
                        const LrtOptions& options = {});

// Rounds half up and applies the floor of null_dim + 1; sets `floored` when
// the floor was used.
int basis_dim_from_edf(double edf, int null_dim, bool& floored);

double chisq_sf(double x, int nu);
// 0.5 P(chi2_nu >= x) + 0.5 P(chi2_{nu+1} >= x).
double mixture_chisq_sf(double x, int nu);

}  // namespace pairsurf

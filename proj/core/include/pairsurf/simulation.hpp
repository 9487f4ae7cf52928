#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pairsurf/dataset.hpp"
#include "pairsurf/design.hpp"

namespace pairsurf {

// Bivariate test surfaces on [0,1]^2.
double test_function_f1(double x, double t);
double test_function_f2(double x, double t);

enum class SimTruth { null_common_surface, group_specific_surfaces };
enum class SimTest { none, bootstrap, adjusted_lrt };
std::string to_string(SimTruth t);
std::string to_string(SimTest t);

struct SimConfig {
  int m = 50;  // subjects
  int n = 20;  // visits per subject
  int num_groups = 2;  // subjects split into consecutive equal blocks
  SimTruth truth = SimTruth::null_common_surface;

  double beta0 = 10.0, beta1 = 2.0;   // outcome 1 intercept and group shift
  double gamma0 = 15.0, gamma1 = 4.0; // outcome 2
  double sigma1 = 2.0, sigma2 = 3.0, rho = 0.5, sigma_eps = 2.0, delta = 0.8;
  std::optional<double> ar_corr;      // CAR(1) errors on the visit times when set
  double visit_spacing = 1.0;         // visit j (1-based) is at time j * spacing

  // Optional standard-normal parametric covariate named "x1" with these effects.
  bool parametric = false;
  double psi1 = 0.0, psi2 = 0.0;

  int replications = 500;
  std::uint64_t seed = 1;
  SimTest test = SimTest::adjusted_lrt;
  int B = 199;
  int basis_dim = 30;
  double level = 0.05;
  int threads = 1;

  void validate() const;  // throws InvalidSpec naming the key
};

// Dataset for replicate `replicate`; a pure function of (cfg, replicate).
LongitudinalDataset simulate_dataset(const SimConfig& cfg, int replicate);

// Model spec that matches the data-generating structure of cfg.
ModelSpec simulation_model_spec(const SimConfig& cfg);

struct BinomialInterval {
  double lower = 0.0;
  double upper = 1.0;
};

// Exact acceptance band [k_lo/n, k_hi/n] for an observed rejection rate over
// n trials with true rate p. With alpha = 1 - coverage, k_lo is the smallest k
// with P(K <= k) > alpha/2 and k_hi the smallest k with P(K <= k) >= 1 - alpha/2.
BinomialInterval binomial_band(int n, double p, double coverage = 0.95);
// Clopper-Pearson interval for k successes out of n.
BinomialInterval clopper_pearson(int k, int n, double coverage = 0.95);

struct MonteCarloRow {
  int replicate = 0;
  double statistic = 0.0;
  int nu = 0;
  double p_mixture = 1.0;  // bootstrap p for the bootstrap test
  double p_nu = 1.0;
  double p_nu1 = 1.0;
  bool converged = false;
  std::string error;
};

struct RejectionSummary {
  std::string reference;
  int rejections = 0;
  int valid = 0;
  double rate = 0.0;
  BinomialInterval interval;
};

struct MonteCarloReport {
  SimConfig config;
  std::vector<MonteCarloRow> rows;
  std::vector<RejectionSummary> summary;
  int failures = 0;
};

// Runs cfg.replications simulated datasets through the configured test.
// Throws TooManyFailures when more than 10% of replicates fail.
MonteCarloReport monte_carlo(const SimConfig& cfg);

}  // namespace pairsurf

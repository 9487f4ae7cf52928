#include "pairsurf/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/binomial.hpp>

#include "pairsurf/error.hpp"
#include "pairsurf/inference.hpp"
#include "pairsurf/parallel.hpp"
#include "pairsurf/rng.hpp"

namespace pairsurf {

double test_function_f1(double x, double t) {
  return 5.0 * x * x + std::log(0.5 * t + 1.0) + t + 3.0 * std::pow(t, 0.5 * x + 1.0);
}

double test_function_f2(double x, double t) {
  return 1.5 * std::sqrt(x) + 1.5 * t * t * t + 2.25 * x * std::exp(t);
}

std::string to_string(SimTruth t) {
  return t == SimTruth::null_common_surface ? "null_common_surface" : "group_specific_surfaces";
}

std::string to_string(SimTest t) {
  switch (t) {
    case SimTest::none: return "none";
    case SimTest::bootstrap: return "bootstrap";
    case SimTest::adjusted_lrt: return "adjusted_lrt";
  }
  return "?";
}

void SimConfig::validate() const {
  auto fail = [](const char* key, const std::string& what) { throw Error(ErrorCode::InvalidSpec, what, key); };
  if (num_groups < 1) fail("num_groups", "num_groups must be >= 1");
  if (m < num_groups || m % num_groups != 0) fail("m", "m must be a positive multiple of num_groups");
  if (n < 1) fail("n", "n must be >= 1");
  if (!(sigma1 >= 0.0)) fail("sigma1", "sigma1 must be >= 0");
  if (!(sigma2 >= 0.0)) fail("sigma2", "sigma2 must be >= 0");
  if (!(sigma_eps >= 0.0)) fail("sigma_eps", "sigma_eps must be >= 0");
  if (!(delta > 0.0)) fail("delta", "delta must be > 0");
  if (!(std::abs(rho) < 1.0)) fail("rho", "rho must lie in (-1, 1)");
  if (ar_corr && !(*ar_corr >= 0.0 && *ar_corr < 1.0)) fail("ar_corr", "ar_corr must lie in [0, 1)");
  if (!(visit_spacing > 0.0)) fail("visit_spacing", "visit_spacing must be > 0");
  if (replications < 1) fail("replications", "replications must be >= 1");
  if (B < 1) fail("B", "B must be >= 1");
  if (basis_dim < 4) fail("basis_dim", "basis_dim must be >= 4");
  if (!(level > 0.0 && level < 1.0)) fail("level", "level must lie in (0, 1)");
}

LongitudinalDataset simulate_dataset(const SimConfig& cfg, int replicate) {
  cfg.validate();
  RandomEngine rng = make_stream(cfg.seed, static_cast<std::uint64_t>(replicate), StreamTag::Simulation);
  const int per_group = cfg.m / cfg.num_groups;
  const double a = cfg.ar_corr ? std::pow(*cfg.ar_corr, cfg.visit_spacing) : 0.0;
  const double innov = std::sqrt(1.0 - a * a);
  const double sd_e1 = cfg.sigma_eps, sd_e2 = cfg.sigma_eps * cfg.delta;

  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(cfg.m * cfg.n));
  std::vector<double> f1v, f2v;
  std::vector<bool> swapped;
  for (int i = 0; i < cfg.m; ++i) {
    const int g = i / per_group + 1;
    const double z = g - 1;
    const double u1 = standard_normal(rng);
    const double u2 = standard_normal(rng);
    const double U1 = cfg.sigma1 * u1;
    const double U2 = cfg.sigma2 * (cfg.rho * u1 + std::sqrt(1.0 - cfg.rho * cfg.rho) * u2);
    const bool swap = cfg.truth == SimTruth::group_specific_surfaces && g % 2 == 0;
    double e1 = 0.0, e2 = 0.0;
    for (int j = 0; j < cfg.n; ++j) {
      Observation o;
      o.subject_id = "s" + std::to_string(i + 1);
      o.visit_index = j + 1;
      o.time = (j + 1) * cfg.visit_spacing;
      o.group = g;
      o.w = uniform01(rng);
      o.h = uniform01(rng);
      double x1 = 0.0;
      if (cfg.parametric) {
        x1 = standard_normal(rng);
        o.parametric.push_back(x1);
      }
      const double z1 = standard_normal(rng);
      const double z2 = standard_normal(rng);
      if (cfg.ar_corr && j > 0) {
        e1 = a * e1 + sd_e1 * innov * z1;
        e2 = a * e2 + sd_e2 * innov * z2;
      } else {
        e1 = sd_e1 * z1;
        e2 = sd_e2 * z2;
      }
      o.y1 = U1 + cfg.beta0 + z * cfg.beta1 + cfg.psi1 * x1 + e1;
      o.y2 = U2 + cfg.gamma0 + z * cfg.gamma1 + cfg.psi2 * x1 + e2;
      f1v.push_back(test_function_f1(o.w, o.h));
      f2v.push_back(test_function_f2(o.w, o.h));
      swapped.push_back(swap);
      obs.push_back(std::move(o));
    }
  }

  double mean1 = 0.0, mean2 = 0.0;
  for (std::size_t r = 0; r < obs.size(); ++r) {
    mean1 += f1v[r];
    mean2 += f2v[r];
  }
  mean1 /= static_cast<double>(obs.size());
  mean2 /= static_cast<double>(obs.size());
  for (std::size_t r = 0; r < obs.size(); ++r) {
    const double c1 = f1v[r] - mean1, c2 = f2v[r] - mean2;
    obs[r].y1 += swapped[r] ? c2 : c1;
    obs[r].y2 += swapped[r] ? c1 : c2;
  }
  std::vector<std::string> names;
  if (cfg.parametric) names.push_back("x1");
  return LongitudinalDataset::from_observations(std::move(obs), std::move(names));
}

ModelSpec simulation_model_spec(const SimConfig& cfg) {
  ModelSpec spec;
  spec.surface_mode = SurfaceMode::group_specific;
  spec.num_groups = cfg.num_groups;
  spec.basis.k = cfg.basis_dim;
  if (cfg.parametric) spec.parametric_terms = {"x1"};
  spec.error_structure = cfg.ar_corr ? ErrorStructure::car1 : ErrorStructure::independent;
  spec.criterion = Criterion::reml;
  spec.outcomes = OutcomeSet::paired;
  return spec;
}

BinomialInterval binomial_band(int n, double p, double coverage) {
  if (n < 1 || !(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidSpec, "invalid binomial parameters");
  const double alpha = 1.0 - coverage;
  const boost::math::binomial_distribution<double> dist(n, p);
  int lo = 0;
  while (lo < n && boost::math::cdf(dist, lo) <= 0.5 * alpha) ++lo;
  int hi = 0;
  while (hi < n && boost::math::cdf(dist, hi) < 1.0 - 0.5 * alpha) ++hi;
  return {static_cast<double>(lo) / n, static_cast<double>(hi) / n};
}

BinomialInterval clopper_pearson(int k, int n, double coverage) {
  if (n < 1 || k < 0 || k > n) throw Error(ErrorCode::InvalidSpec, "invalid binomial counts");
  using Dist = boost::math::binomial_distribution<double>;
  const double half = 0.5 * (1.0 - coverage);
  const double lo = k == 0 ? 0.0 : Dist::find_lower_bound_on_p(n, k, half, Dist::clopper_pearson_exact_interval);
  const double hi = k == n ? 1.0 : Dist::find_upper_bound_on_p(n, k, half, Dist::clopper_pearson_exact_interval);
  return {lo, hi};
}

MonteCarloReport monte_carlo(const SimConfig& cfg) {
  cfg.validate();
  if (cfg.test == SimTest::none) throw Error(ErrorCode::InvalidSpec, "monte_carlo needs a test", "test");
  MonteCarloReport report;
  report.config = cfg;
  report.rows.resize(static_cast<std::size_t>(cfg.replications));
  const ModelSpec spec = simulation_model_spec(cfg);

  parallel_for(report.rows.size(), cfg.threads, [&](std::size_t r, int) {
    MonteCarloRow& row = report.rows[r];
    row.replicate = static_cast<int>(r);
    try {
      const LongitudinalDataset ds = simulate_dataset(cfg, static_cast<int>(r));
      if (cfg.test == SimTest::adjusted_lrt) {
        const TestResult t = adjusted_lrt(ds, spec, cfg.seed);
        row.statistic = t.statistic;
        row.nu = t.nu;
        row.p_mixture = t.p_value;
        row.p_nu = t.p_chisq_nu;
        row.p_nu1 = t.p_chisq_nu1;
      } else {
        BootstrapOptions bo;
        bo.threads = 1;
        const TestResult t = bootstrap_test(ds, spec, cfg.B, stream_seed(cfg.seed, r, StreamTag::Bootstrap), bo);
        row.statistic = t.statistic;
        row.p_mixture = t.p_value;
        row.p_nu = row.p_nu1 = std::numeric_limits<double>::quiet_NaN();
      }
      row.converged = true;
    } catch (const Error& e) {
      row.converged = false;
      row.error = std::string(error_code_name(e.code())) + ": " + e.what();
    }
  });

  for (const auto& row : report.rows) {
    if (!row.converged) ++report.failures;
  }
  if (report.failures > 0.1 * cfg.replications) {
    throw Error(ErrorCode::TooManyFailures, std::to_string(report.failures) + " of " +
                                                std::to_string(cfg.replications) + " replicates failed");
  }

  auto summarize_rate = [&](const std::string& name, double MonteCarloRow::*field) {
    RejectionSummary s;
    s.reference = name;
    for (const auto& row : report.rows) {
      if (!row.converged) continue;
      ++s.valid;
      if (row.*field <= cfg.level) ++s.rejections;
    }
    s.rate = s.valid > 0 ? static_cast<double>(s.rejections) / s.valid : 0.0;
    s.interval = s.valid > 0 ? clopper_pearson(s.rejections, s.valid) : BinomialInterval{};
    return s;
  };
  if (cfg.test == SimTest::adjusted_lrt) {
    report.summary.push_back(summarize_rate("chi2_nu", &MonteCarloRow::p_nu));
    report.summary.push_back(summarize_rate("mixture", &MonteCarloRow::p_mixture));
    report.summary.push_back(summarize_rate("chi2_nu+1", &MonteCarloRow::p_nu1));
  } else {
    report.summary.push_back(summarize_rate("bootstrap", &MonteCarloRow::p_mixture));
  }
  return report;
}

}  // namespace pairsurf

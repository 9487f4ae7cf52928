#include "pairsurf/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "pairsurf/error.hpp"
#include "pairsurf/parallel.hpp"
#include "pairsurf/rng.hpp"

namespace pairsurf {

std::string to_string(TestMethod m) { return m == TestMethod::bootstrap ? "bootstrap" : "adjusted_lrt"; }

double chisq_sf(double x, int nu) {
  if (nu < 1) throw Error(ErrorCode::InvalidSpec, "degrees of freedom must be >= 1", "nu");
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(nu));
  return boost::math::cdf(boost::math::complement(dist, x));
}

double mixture_chisq_sf(double x, int nu) { return 0.5 * chisq_sf(x, nu) + 0.5 * chisq_sf(x, nu + 1); }

int basis_dim_from_edf(double edf, int null_dim, bool& floored) {
  int k = static_cast<int>(std::floor(edf + 0.5));
  if (k < null_dim + 1) {
    floored = true;
    k = null_dim + 1;
  }
  return k;
}

BootstrapSample wild_bootstrap_sample(const AssembledDesign& design, const FittedModel& null_fit, std::uint64_t seed,
                                      std::size_t replicate) {
  const int L = design.num_outcomes;
  const std::size_t N = design.n_obs;
  const std::size_t m = design.num_subjects;
  const Eigen::VectorXd& mu = null_fit.fitted_mu;
  const Eigen::MatrixXd& U = null_fit.subject_effects;
  const Eigen::VectorXd& eps = null_fit.residuals;

  BootstrapSample out;
  RandomEngine rng = make_stream(seed, replicate, StreamTag::Bootstrap);
  boost::random::uniform_int_distribution<std::size_t> pick(0, m - 1);
  out.subjects.resize(m);
  for (auto& d : out.subjects) d = pick(rng);
  out.multipliers.resize(static_cast<std::size_t>(L) * N);
  fill_rademacher(rng, out.multipliers.data(), out.multipliers.size());

  out.y.resize(static_cast<Eigen::Index>(L * N));
  for (int l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      const double u = U(static_cast<Eigen::Index>(out.subjects[i]), l);
      for (std::size_t r = design.subject_offsets[i]; r < design.subject_offsets[i + 1]; ++r) {
        const auto row = static_cast<Eigen::Index>(design.row_index(l, r));
        out.y(row) = mu(row) + u + eps(row) * out.multipliers[static_cast<std::size_t>(row)];
      }
    }
  }
  return out;
}

TestResult bootstrap_test(const LongitudinalDataset& ds, const ModelSpec& full_spec, int B, std::uint64_t seed,
                          const BootstrapOptions& options) {
  if (B < 1) throw Error(ErrorCode::InvalidSpec, "bootstrap needs at least one replicate", "B");
  auto [null_spec, full] = null_and_full_specs(full_spec, options.equal_intercepts);
  null_spec.criterion = Criterion::ml;
  full.criterion = Criterion::ml;
  const auto dn = std::make_shared<const AssembledDesign>(assemble(ds, null_spec));
  const auto df = std::make_shared<const AssembledDesign>(assemble(ds, full));

  FitOptions observed = options.fit;
  observed.compute_intervals = false;
  observed.require_convergence = true;
  const FittedModel null_fm = fit(dn, observed);
  const FittedModel full_fm = fit(df, observed);

  TestResult res;
  res.method = TestMethod::bootstrap;
  res.seed = seed;
  res.B = B;
  res.loglik_null = null_fm.loglik_ml;
  res.loglik_full = full_fm.loglik_ml;
  res.statistic = full_fm.loglik_ml - null_fm.loglik_ml;

  struct Worker {
    std::unique_ptr<LikelihoodEngine> null_engine, full_engine;
  };
  const int threads = resolve_threads(options.threads);
  std::vector<Worker> workers(static_cast<std::size_t>(threads));
  res.bootstrap_stats.assign(static_cast<std::size_t>(B), std::numeric_limits<double>::quiet_NaN());
  res.replicate_status.assign(static_cast<std::size_t>(B), ReplicateStatus{});

  FitOptions replicate = options.fit;
  replicate.num_starts = 1;
  replicate.compute_intervals = false;

  // Curvature at the observed optimum seeds every replicate's quasi-Newton run.
  auto curvature = [&](const AssembledDesign& d, const VarianceComponents& tau) {
    LikelihoodEngine engine(d, Criterion::ml);
    FitOptions o = replicate;
    o.start = tau;
    return optimize_criterion(engine, o).inverse_hessian;
  };
  FitOptions null_replicate = replicate;
  null_replicate.start = null_fm.tau_hat;
  null_replicate.optimizer.initial_inverse_hessian = curvature(*dn, null_fm.tau_hat);
  FitOptions full_replicate = replicate;
  full_replicate.start = full_fm.tau_hat;
  full_replicate.optimizer.initial_inverse_hessian = curvature(*df, full_fm.tau_hat);

  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b, int w) {
    Worker& wk = workers[static_cast<std::size_t>(w)];
    if (!wk.null_engine) {
      wk.null_engine = std::make_unique<LikelihoodEngine>(*dn, Criterion::ml);
      wk.full_engine = std::make_unique<LikelihoodEngine>(*df, Criterion::ml);
    }
    const BootstrapSample sample = wild_bootstrap_sample(*dn, null_fm, seed, b);
    wk.null_engine->set_response(sample.y);
    wk.full_engine->set_response(sample.y);

    const CriterionFit cn = optimize_criterion(*wk.null_engine, null_replicate);
    FitOptions of = full_replicate;
    CriterionFit cf = optimize_criterion(*wk.full_engine, of);
    const double tol = options.negative_tolerance * (1.0 + std::abs(cn.value));
    if (cf.value - cn.value < -tol) {
      // Restart the full model from the replicate's null fit, each group
      // surface taking the shared smoothing parameter of its outcome.
      VarianceComponents from = cn.tau;
      std::vector<double> logs;
      const auto null_logs = smoothing_logs(cn.tau, *dn);
      for (const auto& sp : df->smoothing) {
        double v = 0.0;
        for (std::size_t k = 0; k < dn->smoothing.size(); ++k) {
          if (dn->smoothing[k].outcome == sp.outcome) v = null_logs[k];
        }
        logs.push_back(v);
      }
      set_smoothing_logs(from, *df, logs);
      of.start = from;
      CriterionFit retry = optimize_criterion(*wk.full_engine, of);
      if (retry.value > cf.value) cf = std::move(retry);
    }
    const double delta = cf.value - cn.value;
    ReplicateStatus& st = res.replicate_status[b];
    st.converged = cn.diagnostics.converged && cf.diagnostics.converged;
    st.negative = delta < -tol;
    if (st.converged) res.bootstrap_stats[b] = delta;
  });

  int count = 0;
  for (int b = 0; b < B; ++b) {
    const auto& st = res.replicate_status[static_cast<std::size_t>(b)];
    if (!st.converged) {
      ++res.failures;
      continue;
    }
    if (st.negative) ++res.negative_count;
    if (res.bootstrap_stats[static_cast<std::size_t>(b)] >= res.statistic) ++count;
  }
  if (res.failures > options.max_failure_fraction * B) {
    throw Error(ErrorCode::TooManyFailures, std::to_string(res.failures) + " of " + std::to_string(B) +
                                                " bootstrap replicates failed to converge");
  }
  res.B_effective = B - res.failures;
  res.p_value = res.B_effective > 0 ? static_cast<double>(count) / res.B_effective : 1.0;
  res.reference = "wild bootstrap, " + std::to_string(res.B_effective) + " effective replicates";
  return res;
}

TestResult adjusted_lrt(const LongitudinalDataset& ds, const ModelSpec& full_spec, std::uint64_t seed,
                        const LrtOptions& options) {
  if (full_spec.surface_mode != SurfaceMode::group_specific) {
    throw Error(ErrorCode::InvalidSpecPair, "the full model must have group-specific surfaces", "surface_mode");
  }
  ModelSpec penalized = full_spec;
  penalized.criterion = Criterion::ml;
  penalized.penalized = true;
  const auto dp = std::make_shared<const AssembledDesign>(assemble(ds, penalized));
  FitOptions fo = options.fit;
  fo.compute_intervals = false;
  const FittedModel pen = fit(dp, fo);

  TestResult res;
  res.method = TestMethod::adjusted_lrt;
  res.seed = seed;
  res.edf = pen.edf_per_smooth;
  res.basis_dims.assign(static_cast<std::size_t>(dp->num_outcomes),
                        std::vector<int>(static_cast<std::size_t>(dp->num_groups), 0));
  for (std::size_t s = 0; s < dp->smooths.size(); ++s) {
    const auto& term = dp->smooths[s];
    int k = basis_dim_from_edf(pen.edf_per_smooth[s], term.basis->null_dim(), res.edf_floor_applied);
    k = std::min(k, term.basis->basis_dim());
    res.basis_dims[static_cast<std::size_t>(term.outcome)][static_cast<std::size_t>(term.group - 1)] = k;
  }

  if (options.basis_rule == BasisRule::per_outcome_max) {
    for (auto& row : res.basis_dims) std::fill(row.begin(), row.end(), *std::max_element(row.begin(), row.end()));
  }

  ModelSpec unpenalized = penalized;
  unpenalized.penalized = false;
  unpenalized.basis_dims = res.basis_dims;
  const auto [null_spec, full] = null_and_full_specs(unpenalized, options.equal_intercepts);
  const auto dn = std::make_shared<const AssembledDesign>(assemble(ds, null_spec));
  const auto df = std::make_shared<const AssembledDesign>(assemble(ds, full));

  FitOptions uo = options.fit;
  uo.compute_intervals = false;
  uo.fixed_log_smoothing.reset();
  VarianceComponents start = pen.tau_hat;
  start.log_lambda.clear();
  start.log_varphi.clear();
  uo.start = start;
  const FittedModel null_fm = fit(dn, uo);
  const FittedModel full_fm = fit(df, uo);

  res.nu = static_cast<int>(df->p() - dn->p());
  if (res.nu < 1) {
    throw Error(ErrorCode::NonNested, "the full model has no more unpenalized coefficients than the null model");
  }
  res.loglik_null = null_fm.loglik_ml;
  res.loglik_full = full_fm.loglik_ml;
  res.statistic = 2.0 * (full_fm.loglik_ml - null_fm.loglik_ml);
  const double x = std::max(0.0, res.statistic);
  res.p_value = mixture_chisq_sf(x, res.nu);
  res.p_chisq_nu = chisq_sf(x, res.nu);
  res.p_chisq_nu1 = chisq_sf(x, res.nu + 1);
  res.reference = "0.5 chi2(" + std::to_string(res.nu) + ") + 0.5 chi2(" + std::to_string(res.nu + 1) + ")";
  return res;
}

}  // namespace pairsurf

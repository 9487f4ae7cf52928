#include "pairsurf/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pairsurf/error.hpp"

namespace pairsurf {

namespace {

constexpr double kZ975 = 1.959963984540054;
constexpr double kStartShift = 4.6;  // two decades in log smoothing parameter

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Penalized effective degrees of freedom of a block with cross-product
// eigenvalues e when the coefficient precision is lambda and the error variance s2.
double block_edf(const Eigen::VectorXd& e, double log_lambda, double s2) {
  const double k = std::exp(log_lambda) * s2;
  return (e.array() / (e.array() + k)).sum();
}

bool smoothing_logs_size_ok(const VarianceComponents& tau, const AssembledDesign& design) {
  std::size_t n1 = 0, n2 = 0;
  for (const auto& s : design.smoothing) (s.outcome == 0 ? n1 : n2)++;
  return tau.log_lambda.size() == n1 && tau.log_varphi.size() == n2;
}

}  // namespace

VarianceComponents starting_values(const AssembledDesign& design) {
  const int L = design.num_outcomes;
  const std::size_t N = design.n_obs;
  const std::size_t m = design.num_subjects;

  const Eigen::VectorXd theta = design.X.colPivHouseholderQr().solve(design.y);
  const Eigen::VectorXd r = design.y - design.X * theta;

  Eigen::MatrixXd means(static_cast<Eigen::Index>(m), L);
  Eigen::VectorXd within = Eigen::VectorXd::Zero(L);
  for (int l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t b = design.subject_offsets[i], e = design.subject_offsets[i + 1];
      double s = 0.0;
      for (std::size_t k = b; k < e; ++k) s += r(static_cast<Eigen::Index>(design.row_index(l, k)));
      const double mean = s / static_cast<double>(e - b);
      means(static_cast<Eigen::Index>(i), l) = mean;
      for (std::size_t k = b; k < e; ++k) {
        const double d = r(static_cast<Eigen::Index>(design.row_index(l, k))) - mean;
        within(l) += d * d;
      }
    }
  }
  const double dof = std::max<double>(1.0, static_cast<double>(N) - static_cast<double>(m));
  const double nbar = static_cast<double>(N) / static_cast<double>(m);
  const double yscale = std::max(1e-8, (design.y.array() - design.y.mean()).square().mean());
  Eigen::VectorXd sw(L), sb(L), raw_var(L);
  for (int l = 0; l < L; ++l) {
    sw(l) = std::max(within(l) / dof, 1e-6 * yscale);
    const Eigen::VectorXd c = means.col(l).array() - means.col(l).mean();
    raw_var(l) = m > 1 ? c.squaredNorm() / static_cast<double>(m - 1) : 0.0;
    sb(l) = std::max(raw_var(l) - sw(l) / nbar, 0.05 * sw(l));
  }

  VarianceComponents tau;
  tau.sigma1_sq = sb(0);
  tau.sigma_eps_sq = sw(0);
  if (L == 2) {
    tau.sigma2_sq = sb(1);
    tau.delta = std::sqrt(sw(1) / sw(0));
    const Eigen::VectorXd c0 = means.col(0).array() - means.col(0).mean();
    const Eigen::VectorXd c1 = means.col(1).array() - means.col(1).mean();
    const double denom = std::sqrt(c0.squaredNorm() * c1.squaredNorm());
    tau.rho = denom > 0.0 ? std::clamp(c0.dot(c1) / denom, -0.9, 0.9) : 0.0;
  }
  if (design.spec.error_structure == ErrorStructure::car1) tau.ar_corr = 0.2;

  std::vector<double> logs(design.smoothing.size(), 0.0);
  for (const auto& blk : design.penalty_layout) {
    const SmoothTerm* term = nullptr;
    for (const auto& s : design.smooths) {
      if (s.smoothing_index == blk.smoothing_index) term = &s;
    }
    const Eigen::MatrixXd Zb = design.Zs.middleCols(blk.first_col, blk.size);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Zb.transpose() * Zb, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd e = es.eigenvalues().cwiseMax(0.0);
    const double s2 = sw(design.smoothing[static_cast<std::size_t>(blk.smoothing_index)].outcome);
    double target = term ? 0.5 * term->basis->basis_dim() - term->basis->null_dim() : 0.5 * blk.size;
    target = std::clamp(target, 0.5, std::max(0.5, blk.size - 0.5));
    double lo = -kLogSmoothingBound, hi = kLogSmoothingBound;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (block_edf(e, mid, s2) > target ? lo : hi) = mid;
    }
    logs[static_cast<std::size_t>(blk.smoothing_index)] = 0.5 * (lo + hi);
  }
  set_smoothing_logs(tau, design, logs);
  return tau;
}

CriterionFit optimize_criterion(LikelihoodEngine& engine, const FitOptions& options) {
  const ParameterLayout& layout = engine.layout();
  const AssembledDesign& design = engine.design();
  const Eigen::Index n = layout.size();

  VarianceComponents start = options.start ? *options.start : starting_values(design);
  if (design.spec.error_structure == ErrorStructure::car1 && !start.ar_corr) start.ar_corr = 0.2;
  if (!smoothing_logs_size_ok(start, design)) {
    set_smoothing_logs(start, design, smoothing_logs(starting_values(design), design));
  }
  Eigen::VectorXd x0 = layout.to_vector(start);

  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  auto fix = [&](ParamKind kind, double value, int sidx = -1) {
    const Eigen::Index i = layout.index_of(kind, sidx);
    if (i < 0) return;
    x0(i) = std::clamp(value, layout.slots()[static_cast<std::size_t>(i)].lower,
                       layout.slots()[static_cast<std::size_t>(i)].upper);
    fixed[static_cast<std::size_t>(i)] = true;
  };
  if (options.fixed_rho) fix(ParamKind::fisher_z_rho, std::atanh(*options.fixed_rho));
  if (options.fixed_delta) fix(ParamKind::log_delta, std::log(*options.fixed_delta));
  if (options.fixed_ar_corr) {
    const double phi = *options.fixed_ar_corr;
    fix(ParamKind::logit_ar_corr, std::log(phi / (1.0 - phi)));
  }
  if (options.fixed_log_smoothing) {
    const auto& v = *options.fixed_log_smoothing;
    if (v.size() != design.smoothing.size()) {
      throw Error(ErrorCode::InvalidSpec, "fixed smoothing parameters do not match the model", "fixed_log_smoothing");
    }
    for (std::size_t k = 0; k < v.size(); ++k) fix(ParamKind::log_smoothing, v[k], static_cast<int>(k));
  }

  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!fixed[static_cast<std::size_t>(i)]) free.push_back(i);
  }
  const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
  Eigen::VectorXd lo(nf), hi(nf), z0(nf);
  for (Eigen::Index k = 0; k < nf; ++k) {
    lo(k) = layout.slots()[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])].lower;
    hi(k) = layout.slots()[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])].upper;
    z0(k) = x0(free[static_cast<std::size_t>(k)]);
  }
  auto expand = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd x = x0;
    for (Eigen::Index k = 0; k < nf; ++k) x(free[static_cast<std::size_t>(k)]) = z(k);
    return x;
  };
  Objective objective = [&](const Eigen::VectorXd& z, double& f, Eigen::VectorXd* grad) {
    const Evaluation e = engine.evaluate_vector(expand(z), grad != nullptr);
    if (!e.ok) return false;
    f = -e.value;
    if (grad) {
      grad->resize(nf);
      for (Eigen::Index k = 0; k < nf; ++k) (*grad)(k) = -e.gradient(free[static_cast<std::size_t>(k)]);
    }
    return true;
  };

  std::vector<Eigen::VectorXd> starts{z0};
  std::vector<Eigen::Index> smoothing_free;
  for (Eigen::Index k = 0; k < nf; ++k) {
    if (layout.slots()[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])].kind == ParamKind::log_smoothing) {
      smoothing_free.push_back(k);
    }
  }
  if (!smoothing_free.empty()) {
    for (double shift : {kStartShift, -kStartShift}) {
      if (static_cast<int>(starts.size()) >= options.num_starts) break;
      Eigen::VectorXd z = z0;
      for (Eigen::Index k : smoothing_free) z(k) = std::clamp(z(k) + shift, lo(k), hi(k));
      starts.push_back(z);
    }
  }

  CriterionFit out;
  OptimizerResult best;
  best.f = std::numeric_limits<double>::infinity();
  int iterations = 0, evaluations = 0;
  for (const auto& z : starts) {
    OptimizerResult r = minimize_bfgs(objective, z, lo, hi, options.optimizer);
    iterations += r.iterations;
    evaluations += r.evaluations;
    if (r.f < best.f || (r.converged && !best.converged && r.f <= best.f + 1e-9 * (1.0 + std::abs(best.f)))) {
      best = std::move(r);
    }
  }
  bool used_fallback = false;
  if (!best.converged) {
    used_fallback = true;
    const Eigen::VectorXd from = std::isfinite(best.f) ? best.x : z0;
    OptimizerResult nm = minimize_nelder_mead(objective, from, lo, hi, 200 * static_cast<int>(nf + 1));
    evaluations += nm.evaluations;
    OptimizerResult r = minimize_bfgs(objective, nm.x, lo, hi, options.optimizer);
    iterations += r.iterations;
    evaluations += r.evaluations;
    if (r.f <= best.f + 1e-9 * (1.0 + std::abs(best.f)) || !std::isfinite(best.f)) best = std::move(r);
  }

  out.x = expand(best.x);
  out.tau = layout.from_vector(out.x);
  out.value = -best.f;
  out.fixed = fixed;
  out.inverse_hessian = best.inverse_hessian;
  auto& diag = out.diagnostics;
  diag.starts = static_cast<int>(starts.size());
  diag.iterations = iterations;
  diag.evaluations = evaluations;
  diag.used_fallback = used_fallback;
  diag.gradient_norm = best.gradient.size() == nf ? projected_gradient_norm(best.x, best.gradient, lo, hi)
                                                  : std::numeric_limits<double>::infinity();
  diag.converged = std::isfinite(best.f) && (best.converged || diag.gradient_norm < 1e-4);
  diag.message = best.message;
  for (Eigen::Index k = 0; k < nf; ++k) {
    if (best.x(k) <= lo(k) + 1e-6 || best.x(k) >= hi(k) - 1e-6) {
      diag.at_bound.push_back(layout.slots()[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])].name);
    }
  }
  return out;
}

namespace {

FittedModel build_model(std::shared_ptr<const AssembledDesign> design, LikelihoodEngine& engine,
                        const VarianceComponents& tau) {
  const AssembledDesign& d = *design;
  const Solution s = engine.solve(tau);
  FittedModel fm;
  fm.spec = d.spec;
  fm.outcome_ids = d.outcome_ids;
  fm.num_groups = d.num_groups;
  fm.tau_hat = tau;
  for (const auto& sp : d.smoothing) fm.smoothing_names.push_back(sp.name);
  fm.fixed_names = d.fixed_names;
  fm.theta_hat = s.theta;
  fm.b_hat = s.b;
  fm.subject_effects = s.subject_effects;
  fm.loglik = s.eval.value;
  fm.loglik_ml = s.eval.ml;
  fm.loglik_reml = s.eval.reml;
  fm.smooths = d.smooths;
  fm.group_intercepts = d.group_intercepts;
  fm.num_penalized = d.q();
  fm.posterior_cov = s.posterior_cov;
  fm.theta_se = s.posterior_cov.bottomRightCorner(d.p(), d.p()).diagonal().cwiseMax(0.0).cwiseSqrt();

  for (const auto& term : d.smooths) {
    double edf = static_cast<double>(term.fixed_cols.size());
    for (int c : term.random_cols) edf += s.column_edf(c);
    fm.edf_per_smooth.push_back(edf);
  }

  fm.fitted_mu = d.X * s.theta;
  if (d.q() > 0) fm.fitted_mu += d.Zs * s.b;
  fm.residuals = d.y - fm.fitted_mu;
  for (int l = 0; l < d.num_outcomes; ++l) {
    for (std::size_t i = 0; i < d.num_subjects; ++i) {
      const double u = s.subject_effects(static_cast<Eigen::Index>(i), l);
      for (std::size_t r = d.subject_offsets[i]; r < d.subject_offsets[i + 1]; ++r) {
        fm.residuals(static_cast<Eigen::Index>(d.row_index(l, r))) -= u;
      }
    }
  }

  std::vector<std::vector<Point2>> pts(static_cast<std::size_t>(d.num_groups));
  for (std::size_t i = 0; i < d.num_subjects; ++i) {
    for (std::size_t r = d.subject_offsets[i]; r < d.subject_offsets[i + 1]; ++r) {
      pts[static_cast<std::size_t>(d.subject_groups[i] - 1)].push_back(d.covariates[r]);
    }
  }
  for (const auto& p : pts) fm.group_hulls.push_back(convex_hull(p));

  const ParameterLayout& layout = engine.layout();
  const Eigen::VectorXd x = layout.to_vector(tau);
  fm.variance_table = variance_intervals(engine, x, std::vector<bool>(static_cast<std::size_t>(x.size()), true));
  fm.design = std::move(design);
  return fm;
}

}  // namespace

FittedModel fit(std::shared_ptr<const AssembledDesign> design, const FitOptions& options) {
  LikelihoodEngine engine(*design, design->spec.criterion);
  CriterionFit cf = optimize_criterion(engine, options);
  if (!cf.diagnostics.converged && options.require_convergence) {
    std::ostringstream os;
    os << "optimizer did not converge (" << cf.diagnostics.message << "); best criterion " << cf.value
       << ", projected gradient max-norm " << cf.diagnostics.gradient_norm;
    throw Error(ErrorCode::NoConvergence, os.str());
  }
  FittedModel fm = build_model(design, engine, cf.tau);
  fm.diagnostics = cf.diagnostics;
  if (options.compute_intervals) {
    std::vector<bool> fixed = cf.fixed;
    const auto& slots = engine.layout().slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (cf.x(static_cast<Eigen::Index>(i)) <= slots[i].lower + 1e-6 ||
          cf.x(static_cast<Eigen::Index>(i)) >= slots[i].upper - 1e-6) {
        fixed[i] = true;
      }
    }
    fm.variance_table = variance_intervals(engine, cf.x, fixed);
  }
  return fm;
}

FittedModel fit(const LongitudinalDataset& ds, const ModelSpec& spec, const FitOptions& options) {
  return fit(std::make_shared<const AssembledDesign>(assemble(ds, spec)), options);
}

FittedModel fit_at(std::shared_ptr<const AssembledDesign> design, const VarianceComponents& tau) {
  LikelihoodEngine engine(*design, design->spec.criterion);
  FittedModel fm = build_model(design, engine, tau);
  fm.diagnostics.converged = true;
  fm.diagnostics.message = "variance components fixed";
  return fm;
}

std::vector<double> effective_df(const FittedModel& fm) { return fm.edf_per_smooth; }

std::vector<ParameterEstimate> variance_intervals(LikelihoodEngine& engine, const Eigen::VectorXd& x,
                                                  const std::vector<bool>& fixed) {
  const ParameterLayout& layout = engine.layout();
  const auto& slots = layout.slots();
  const Eigen::Index n = layout.size();
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!fixed[static_cast<std::size_t>(i)]) free.push_back(i);
  }
  const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
  Eigen::VectorXd se = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (nf > 0) {
    const double h = 1e-4;
    Eigen::MatrixXd H(nf, nf);
    bool ok = true;
    for (Eigen::Index k = 0; k < nf && ok; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(free[static_cast<std::size_t>(k)]) += h;
      xm(free[static_cast<std::size_t>(k)]) -= h;
      const Evaluation ep = engine.evaluate_vector(xp, true);
      const Evaluation em = engine.evaluate_vector(xm, true);
      if (!ep.ok || !em.ok) {
        ok = false;
        break;
      }
      for (Eigen::Index r = 0; r < nf; ++r) {
        H(r, k) = (ep.gradient(free[static_cast<std::size_t>(r)]) - em.gradient(free[static_cast<std::size_t>(r)])) /
                  (2.0 * h);
      }
    }
    if (ok) {
      const Eigen::MatrixXd info = -0.5 * (H + H.transpose());
      // Flat smoothing directions are held at their estimates, weakest curvature first.
      std::vector<Eigen::Index> keep(static_cast<std::size_t>(nf));
      for (Eigen::Index k = 0; k < nf; ++k) keep[static_cast<std::size_t>(k)] = k;
      while (!keep.empty()) {
        const Eigen::Index nk = static_cast<Eigen::Index>(keep.size());
        Eigen::MatrixXd sub(nk, nk);
        for (Eigen::Index a = 0; a < nk; ++a) {
          for (Eigen::Index b = 0; b < nk; ++b) sub(a, b) = info(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(sub);
        if (llt.info() == Eigen::Success) {
          const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(nk, nk));
          for (Eigen::Index a = 0; a < nk; ++a) {
            se(free[static_cast<std::size_t>(keep[static_cast<std::size_t>(a)])]) = std::sqrt(std::max(0.0, cov(a, a)));
          }
          break;
        }
        auto weakest = keep.end();
        for (auto it = keep.begin(); it != keep.end(); ++it) {
          if (slots[static_cast<std::size_t>(free[static_cast<std::size_t>(*it)])].kind != ParamKind::log_smoothing) continue;
          if (weakest == keep.end() || info(*it, *it) < info(*weakest, *weakest)) weakest = it;
        }
        if (weakest == keep.end()) break;
        keep.erase(weakest);
      }
    }
  }

  std::vector<ParameterEstimate> table;
  const auto& design = engine.design();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = slots[static_cast<std::size_t>(i)];
    double (*map)(double) = nullptr;
    std::string name;
    switch (s.kind) {
      case ParamKind::log_smoothing:
        name = design.smoothing[static_cast<std::size_t>(s.smoothing_index)].name;
        map = [](double v) { return std::exp(v); };
        break;
      case ParamKind::log_sigma1_sq:
        name = "sigma1";
        map = [](double v) { return std::exp(0.5 * v); };
        break;
      case ParamKind::log_sigma2_sq:
        name = "sigma2";
        map = [](double v) { return std::exp(0.5 * v); };
        break;
      case ParamKind::fisher_z_rho:
        name = "rho";
        map = [](double v) { return std::tanh(v); };
        break;
      case ParamKind::log_sigma_eps_sq:
        name = "sigma_eps";
        map = [](double v) { return std::exp(0.5 * v); };
        break;
      case ParamKind::log_delta:
        name = "delta";
        map = [](double v) { return std::exp(v); };
        break;
      case ParamKind::logit_ar_corr:
        name = "ar_corr";
        map = [](double v) { return logistic(v); };
        break;
    }
    ParameterEstimate pe;
    pe.name = name;
    pe.estimate = map(x(i));
    pe.lower = map(x(i) - kZ975 * se(i));
    pe.upper = map(x(i) + kZ975 * se(i));
    table.push_back(pe);
  }
  return table;
}

std::vector<SurfacePrediction> predict_surface(const FittedModel& fm, int group, int outcome,
                                               std::span<const Point2> grid) {
  if (group < 1 || group > fm.num_groups) {
    throw Error(ErrorCode::UnknownGroup,
                "group " + std::to_string(group) + " is not in 1.." + std::to_string(fm.num_groups), "group");
  }
  const auto it = std::find(fm.outcome_ids.begin(), fm.outcome_ids.end(), outcome);
  if (it == fm.outcome_ids.end()) {
    throw Error(ErrorCode::UnknownOutcome, "outcome " + std::to_string(outcome) + " is not in the model", "outcome");
  }
  const int l = static_cast<int>(it - fm.outcome_ids.begin());
  const SmoothTerm* term = nullptr;
  for (const auto& s : fm.smooths) {
    if (s.outcome == l && (s.group == group || s.group == 0)) term = &s;
  }
  if (!term) throw Error(ErrorCode::UnknownGroup, "no surface for this group and outcome", "group");

  const Eigen::Index q = fm.num_penalized;
  std::vector<Eigen::Index> idx;
  for (int c : term->fixed_cols) idx.push_back(q + c);
  for (int c : term->random_cols) idx.push_back(c);
  std::optional<Eigen::Index> intercept;
  for (const auto& gi : fm.group_intercepts) {
    if (gi.outcome == l && gi.group == group) intercept = q + gi.col;
  }
  if (intercept) idx.push_back(*intercept);

  const Eigen::Index k = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd coef(k);
  Eigen::MatrixXd cov(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    const Eigen::Index ia = idx[static_cast<std::size_t>(a)];
    coef(a) = ia < q ? fm.b_hat(ia) : fm.theta_hat(ia - q);
    for (Eigen::Index b = 0; b < k; ++b) cov(a, b) = fm.posterior_cov(ia, idx[static_cast<std::size_t>(b)]);
  }

  const Eigen::MatrixXd B = term->basis->evaluate(grid);
  std::vector<SurfacePrediction> out;
  out.reserve(grid.size());
  for (std::size_t r = 0; r < grid.size(); ++r) {
    Eigen::VectorXd a(k);
    a.head(B.cols()) = B.row(static_cast<Eigen::Index>(r)).transpose();
    if (intercept) a(k - 1) = 1.0;
    SurfacePrediction p;
    p.fit = a.dot(coef);
    p.se = std::sqrt(std::max(0.0, a.dot(cov * a)));
    const auto& hull = fm.group_hulls.at(static_cast<std::size_t>(group - 1));
    p.extrapolated = !inside_hull(hull, grid[r]);
    out.push_back(p);
  }
  return out;
}

}  // namespace pairsurf

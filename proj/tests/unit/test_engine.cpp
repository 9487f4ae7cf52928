#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "pairsurf/error.hpp"
#include "pairsurf/fit.hpp"
#include "pairsurf/likelihood.hpp"
#include "pairsurf/marginal_covariance.hpp"
#include "pairsurf/optimizer.hpp"
#include "pairsurf/simulation.hpp"
#include "support/dense_oracle.hpp"
#include "support/instances.hpp"

using namespace pairsurf;

namespace {

std::shared_ptr<const AssembledDesign> design_of(const LongitudinalDataset& ds, const ModelSpec& spec) {
  return std::make_shared<const AssembledDesign>(assemble(ds, spec));
}

ModelSpec paired_spec(int groups, int k, ErrorStructure err = ErrorStructure::independent) {
  ModelSpec s;
  s.num_groups = groups;
  s.basis.k = k;
  s.error_structure = err;
  return s;
}

VarianceComponents tau_for(const AssembledDesign& d, double log_smoothing) {
  VarianceComponents tau;
  std::vector<double> logs(d.smoothing.size(), log_smoothing);
  set_smoothing_logs(tau, d, logs);
  tau.sigma1_sq = 1.3;
  tau.sigma2_sq = 0.8;
  tau.rho = 0.4;
  tau.sigma_eps_sq = 0.6;
  tau.delta = 1.2;
  if (d.spec.error_structure == ErrorStructure::car1) tau.ar_corr = 0.5;
  return tau;
}

}  // namespace

TEST_CASE("error correlation") {
  const Eigen::MatrixXd I = error_correlation({0.0, 1.0, 3.0}, std::nullopt);
  CHECK(I.isIdentity());
  const Eigen::MatrixXd C = error_correlation({0.0, 1.0, 3.0}, 0.5);
  CHECK(C(0, 1) == doctest::Approx(0.5));
  CHECK(C(0, 2) == doctest::Approx(0.125));
  CHECK(C(2, 1) == doctest::Approx(0.25));
  CHECK(C(1, 1) == 1.0);
}

TEST_CASE("variance components") {
  VarianceComponents tau;
  tau.sigma1_sq = 4.0;
  tau.sigma2_sq = 9.0;
  tau.rho = 0.5;
  tau.sigma_eps_sq = 2.0;
  tau.delta = 0.5;
  const Eigen::MatrixXd S = tau.subject_cov();
  CHECK(S(0, 1) == doctest::Approx(3.0));
  CHECK(S(1, 1) == 9.0);
  CHECK(tau.subject_cov(1).size() == 1);
  CHECK(tau.error_var()(1) == doctest::Approx(0.5));
  CHECK_NOTHROW(tau.validate(2));
  tau.rho = 1.0;
  CHECK_THROWS_AS(tau.validate(2), Error);
  tau.rho = 0.0;
  tau.sigma_eps_sq = 0.0;
  CHECK_THROWS_AS(tau.validate(2), Error);
  tau.sigma_eps_sq = 1.0;
  tau.ar_corr = 1.0;
  CHECK_THROWS_AS(tau.validate(2), Error);
}

TEST_CASE("parameter layout round trip") {
  std::mt19937_64 rng(1);
  const auto ds = instances::random_dataset(rng, 8, 5, 2, 0);
  const auto d = assemble(ds, paired_spec(2, 6, ErrorStructure::car1));
  const ParameterLayout layout(d);
  CHECK(layout.size() == 4 + 5 + 1);
  CHECK(layout.index_of(ParamKind::logit_ar_corr) == layout.size() - 1);
  CHECK(layout.index_of(ParamKind::log_smoothing, 3) == 3);
  auto tau = tau_for(d, 1.5);
  tau.log_varphi[1] = -2.0;
  const Eigen::VectorXd x = layout.to_vector(tau);
  const VarianceComponents back = layout.from_vector(x);
  CHECK(back.log_varphi[1] == doctest::Approx(-2.0));
  CHECK(back.rho == doctest::Approx(tau.rho));
  CHECK(back.delta == doctest::Approx(tau.delta));
  CHECK(*back.ar_corr == doctest::Approx(0.5));
  Eigen::VectorXd wild = Eigen::VectorXd::Constant(layout.size(), 1e6);
  CHECK((layout.clamp(wild).array() <= layout.upper().array()).all());
  CHECK((layout.lower().array() < layout.upper().array()).all());
}

TEST_CASE("marginal covariance matches the dense definition") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = instances::random_instance(rng);
    const auto d = assemble(inst.data, inst.spec);
    const MarginalCovariance V(d, inst.tau);
    const auto dm = oracle::build(d, inst.tau);
    CHECK(oracle::rel_err(V.dense(), dm.V) < 1e-12);
    const Eigen::MatrixXd rhs = Eigen::MatrixXd::Random(d.rows(), 3);
    CHECK(oracle::rel_err(V.solve(rhs), dm.V.ldlt().solve(rhs)) < 1e-9);
    CHECK(oracle::rel_err(V.log_det(), std::log(dm.V.determinant())) < 1e-10);
    CHECK(oracle::rel_err(V.quad_form(d.y), d.y.dot(dm.V.ldlt().solve(d.y))) < 1e-9);
  }
}

TEST_CASE("criteria, GLS, BLUPs and EDF match the dense oracle") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    const auto inst = instances::random_instance(rng);
    const auto d = assemble(inst.data, inst.spec);
    REQUIRE(d.rows() <= 40);
    const auto ref = oracle::estimate(d, inst.tau);
    CHECK(oracle::rel_err(reml_criterion(d, inst.tau), ref.reml) < 1e-10);
    CHECK(oracle::rel_err(ml_criterion(d, inst.tau), ref.ml) < 1e-10);
    CHECK(oracle::rel_err(gls_fixed_effects(d, MarginalCovariance(d, inst.tau)), ref.theta) < 1e-8);

    LikelihoodEngine engine(d, inst.spec.criterion);
    const Solution s = engine.solve(inst.tau);
    CHECK(oracle::rel_err(s.eval.reml, ref.reml) < 1e-10);
    CHECK(oracle::rel_err(s.eval.ml, ref.ml) < 1e-10);
    CHECK(s.eval.value == (inst.spec.criterion == Criterion::reml ? s.eval.reml : s.eval.ml));
    CHECK(oracle::rel_err(s.theta, ref.theta) < 1e-8);
    if (d.q() > 0) {
      CHECK(oracle::rel_err(s.b, ref.b) < 1e-8);
      CHECK(oracle::rel_err(s.column_edf.head(d.q()), ref.random_edf) < 1e-8);
    }
    CHECK(oracle::rel_err(s.subject_effects, ref.U) < 1e-8);
    CHECK((s.column_edf.tail(d.p()).array() == 1.0).all());
  }
}

TEST_CASE("dense criteria helpers agree with the oracle") {
  std::mt19937_64 rng(4);
  const auto inst = instances::random_instance(rng);
  const auto d = assemble(inst.data, inst.spec);
  const auto dm = oracle::build(d, inst.tau);
  const auto ref = oracle::estimate(d, inst.tau);
  CHECK(oracle::rel_err(reml_criterion(d.X, d.y, dm.V), ref.reml) < 1e-10);
  CHECK(oracle::rel_err(ml_criterion(d.X, d.y, dm.V), ref.ml) < 1e-10);
  CHECK(oracle::rel_err(gls_fixed_effects(d.X, d.y, dm.V), ref.theta) < 1e-8);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 12; ++rep) {
    const auto inst = instances::random_instance(rng);
    const auto d = assemble(inst.data, inst.spec);
    LikelihoodEngine engine(d, inst.spec.criterion);
    const Eigen::VectorXd x = engine.layout().to_vector(inst.tau);
    const Evaluation e = engine.evaluate_vector(x, true);
    REQUIRE(e.ok);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = 1e-5;
      Eigen::VectorXd xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd = (engine.evaluate_vector(xp).value - engine.evaluate_vector(xm).value) / (2 * h);
      CHECK(e.gradient(i) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("fit reaches a stationary point with consistent outputs") {
  std::mt19937_64 rng(6);
  const auto ds = instances::random_dataset(rng, 24, 6, 2, 1);
  auto spec = paired_spec(2, 10, ErrorStructure::car1);
  spec.parametric_terms = {"x1"};
  auto design = design_of(ds, spec);
  const FittedModel fm = fit(design);
  CHECK(fm.diagnostics.converged);

  // Projected gradient at the optimum, by finite differences on the transformed scale.
  LikelihoodEngine engine(*design, spec.criterion);
  const Eigen::VectorXd x = engine.layout().to_vector(fm.tau_hat);
  const Eigen::VectorXd lo = engine.layout().lower(), hi = engine.layout().upper();
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5;
    Eigen::VectorXd xp = x, xm = x;
    xp(i) = std::min(x(i) + h, hi(i));
    xm(i) = std::max(x(i) - h, lo(i));
    g(i) = -(engine.evaluate_vector(xp).value - engine.evaluate_vector(xm).value) / (xp(i) - xm(i));
  }
  CHECK(projected_gradient_norm(x, g, lo, hi) <= 1e-4);

  // Residual identity y = X theta + Zs b + Z_u U + e.
  const Eigen::MatrixXd Zu = design->subject_design();
  const Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(fm.subject_effects.data(), fm.subject_effects.size());
  const Eigen::VectorXd rebuilt = design->X * fm.theta_hat + design->Zs * fm.b_hat + Zu * u + fm.residuals;
  CHECK((rebuilt - design->y).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((fm.fitted_mu - design->X * fm.theta_hat - design->Zs * fm.b_hat).cwiseAbs().maxCoeff() < 1e-10);

  double total = 0.0;
  for (std::size_t k = 0; k < fm.smooths.size(); ++k) {
    const double e = fm.edf_per_smooth[k];
    CHECK(e >= fm.smooths[k].basis->null_dim() - 1e-9);
    CHECK(e <= fm.smooths[k].basis->basis_dim() + 1e-9);
    total += e;
  }
  CHECK(total <= design->p() + design->q());
  CHECK(effective_df(fm) == fm.edf_per_smooth);
  CHECK(fm.loglik == doctest::Approx(fm.loglik_reml));
  CHECK(fm.theta_se.size() == fm.theta_hat.size());
  CHECK((fm.theta_se.array() > 0.0).all());
  CHECK(fm.variance_table.size() >= 6);
}

TEST_CASE("EDF is non-increasing in the smoothing parameter") {
  std::mt19937_64 rng(7);
  const auto ds = instances::random_dataset(rng, 12, 6, 1, 0);
  auto design = design_of(ds, paired_spec(1, 15));
  std::vector<double> prev(2, 1e9);
  for (double ll = -8.0; ll <= 12.0; ll += 1.0) {
    const FittedModel fm = fit_at(design, tau_for(*design, ll));
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(fm.edf_per_smooth[k] <= prev[k] + 1e-9);
      prev[k] = fm.edf_per_smooth[k];
    }
  }
  CHECK(prev[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("huge smoothing parameters leave the GLS plane") {
  std::mt19937_64 rng(8);
  const auto ds = instances::random_dataset(rng, 10, 6, 1, 0);
  auto design = design_of(ds, paired_spec(1, 12));
  const auto tau = tau_for(*design, std::log(1e8));
  const FittedModel fm = fit_at(design, tau);
  // GLS on the null space alone with V = subject + error covariance.
  const auto dm = oracle::build(*design, tau);
  const Eigen::MatrixXd Vi = dm.W.inverse();
  const Eigen::VectorXd theta =
      (design->X.transpose() * Vi * design->X).ldlt().solve(design->X.transpose() * Vi * design->y);
  CHECK((fm.fitted_mu - design->X * theta).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("fitted values do not depend on subject order") {
  std::mt19937_64 rng(9);
  const auto ds = instances::random_dataset(rng, 10, 5, 2, 0);
  std::vector<Observation> obs = ds.observations();
  std::reverse(obs.begin(), obs.end());
  const auto rev = LongitudinalDataset::from_observations(obs);
  const auto spec = paired_spec(2, 8, ErrorStructure::car1);
  auto da = design_of(ds, spec);
  auto db = design_of(rev, spec);
  const auto a = fit_at(da, tau_for(*da, 0.5));
  const auto b = fit_at(db, tau_for(*db, 0.5));
  CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-10));
  const auto N = static_cast<Eigen::Index>(ds.num_observations());
  for (std::size_t r = 0; r < ds.num_observations(); ++r) {
    // Locate the same observation in the reversed dataset.
    std::size_t s = 0;
    while (rev[s].subject_id != ds[r].subject_id || rev[s].time != ds[r].time) ++s;
    for (int l = 0; l < 2; ++l) {
      CHECK(a.fitted_mu(l * N + static_cast<Eigen::Index>(r)) ==
            doctest::Approx(b.fitted_mu(l * N + static_cast<Eigen::Index>(s))).epsilon(1e-8));
    }
  }
}

TEST_CASE("paired model decouples at fixed uncorrelated components") {
  std::mt19937_64 rng(10);
  const auto ds = instances::random_dataset(rng, 12, 6, 2, 0);
  auto joint = design_of(ds, paired_spec(2, 9));
  auto tau = tau_for(*joint, 0.0);
  tau.rho = 0.0;
  tau.delta = 1.0;
  tau.log_lambda = {0.3, -0.7};
  tau.log_varphi = {1.1, 2.0};
  const auto fj = fit_at(joint, tau);
  const auto N = static_cast<Eigen::Index>(ds.num_observations());
  for (int l = 0; l < 2; ++l) {
    auto spec = paired_spec(2, 9);
    spec.outcomes = l == 0 ? OutcomeSet::first : OutcomeSet::second;
    auto single = design_of(ds, spec);
    VarianceComponents t1;
    t1.log_lambda = l == 0 ? tau.log_lambda : tau.log_varphi;
    t1.sigma1_sq = l == 0 ? tau.sigma1_sq : tau.sigma2_sq;
    t1.sigma_eps_sq = tau.sigma_eps_sq;
    const auto fs = fit_at(single, t1);
    CHECK((fj.fitted_mu.segment(l * N, N) - fs.fitted_mu).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("surface predictions") {
  std::mt19937_64 rng(11);
  const auto ds = instances::random_dataset(rng, 16, 6, 2, 0);
  auto design = design_of(ds, paired_spec(2, 10));
  const auto fm = fit_at(design, tau_for(*design, 1.0));
  std::vector<Point2> pts;
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < ds.num_observations(); ++r) {
    if (ds.subject_group(ds.row_subject()[r]) == 2) {
      pts.push_back({ds[r].w, ds[r].h});
      rows.push_back(static_cast<Eigen::Index>(r));
    }
  }
  const auto pred = predict_surface(fm, 2, 2, pts);
  const auto N = static_cast<Eigen::Index>(ds.num_observations());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(pred[i].fit == doctest::Approx(fm.fitted_mu(N + rows[i])).epsilon(1e-10));
    CHECK(pred[i].se > 0.0);
    CHECK_FALSE(pred[i].extrapolated);
  }
  const std::vector<Point2> far = {{1e4, 1e4}};
  CHECK(predict_surface(fm, 1, 1, far)[0].extrapolated);
  CHECK_THROWS_AS(predict_surface(fm, 3, 1, far), Error);
  CHECK_THROWS_AS(predict_surface(fm, 1, 3, far), Error);
}

TEST_CASE("fixed components stay fixed") {
  std::mt19937_64 rng(12);
  const auto ds = instances::random_dataset(rng, 16, 5, 1, 0);
  FitOptions opt;
  opt.fixed_rho = 0.25;
  opt.fixed_delta = 1.5;
  const auto fm = fit(ds, paired_spec(1, 8), opt);
  CHECK(fm.tau_hat.rho == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(fm.tau_hat.delta == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("bounded quasi-Newton and simplex minimizers") {
  const Objective rosen = [](const Eigen::VectorXd& x, double& f, Eigen::VectorXd* g) {
    f = 100.0 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1.0 - x(0), 2);
    if (g) {
      g->resize(2);
      (*g)(0) = -400.0 * x(0) * (x(1) - x(0) * x(0)) - 2.0 * (1.0 - x(0));
      (*g)(1) = 200.0 * (x(1) - x(0) * x(0));
    }
    return true;
  };
  const Eigen::Vector2d lo(-5, -5), hi(5, 5);
  const auto r = minimize_bfgs(rosen, Eigen::Vector2d(-1.2, 1.0), lo, hi);
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-4));

  // The unconstrained minimum lies outside the box: the answer sits on the bound.
  const Eigen::Vector2d hi2(0.5, 5);
  const auto rb = minimize_bfgs(rosen, Eigen::Vector2d(-1.2, 1.0), lo, hi2);
  CHECK(rb.x(0) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(rb.x(1) == doctest::Approx(0.25).epsilon(1e-4));

  const auto nm = minimize_nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0), lo, hi, 5000);
  CHECK(nm.x(0) == doctest::Approx(1.0).epsilon(1e-3));

  const Eigen::Vector2d x(0.5, 0.0), g(-1.0, 2.0);
  CHECK(projected_gradient_norm(x, g, lo, hi2) == doctest::Approx(2.0));
}

TEST_CASE("variance component intervals are finite and bracket the estimate") {
  SimConfig cfg;
  cfg.m = 40;
  cfg.n = 8;
  cfg.num_groups = 4;
  cfg.basis_dim = 10;
  cfg.ar_corr = 0.2;
  cfg.visit_spacing = 0.5;
  FitOptions o;
  o.compute_intervals = true;
  int smoothing_at_bound = 0;
  // Replicate 31 has an indefinite information matrix unless flat smoothing directions are held fixed.
  for (int rep : {0, 1, 2, 31}) {
    const FittedModel fm = fit(simulate_dataset(cfg, rep), simulation_model_spec(cfg), o);
    for (const auto& name : fm.diagnostics.at_bound) smoothing_at_bound += name.find("log") == 0;
    for (const auto& p : fm.variance_table) {
      if (p.name.find("lambda") == 0 || p.name.find("varphi") == 0) continue;
      INFO(p.name);
      CHECK(std::isfinite(p.lower));
      CHECK(std::isfinite(p.upper));
      CHECK(p.lower <= p.estimate);
      CHECK(p.estimate <= p.upper);
    }
  }
  CHECK(smoothing_at_bound > 0);
}

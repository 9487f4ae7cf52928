#include "pairsurf/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pairsurf/error.hpp"

namespace pairsurf {

// Nonzero columns of [Zs | X | y] on the rows of one subject and outcome.
struct LikelihoodEngine::Block {
  std::size_t subject = 0;
  int outcome = 0;
  std::vector<Eigen::Index> cols;  // ascending; the last entry is the response column
  Eigen::MatrixXd raw;
};

// Error-correlation-whitened sufficient statistics for one ar_corr value.
struct LikelihoodEngine::Whitened {
  double phi = 0.0;
  std::vector<Eigen::MatrixXd> within;  // per outcome, sum of A'A - t t'/kappa
  std::vector<Eigen::VectorXd> t;       // per block, A' 1 after whitening
  std::vector<double> kappa;            // per subject, 1' C^{-1} 1
  std::vector<double> logdet_c;         // per subject
};

struct LikelihoodEngine::Factor {
  const Whitened* w = nullptr;
  Eigen::MatrixXd G;
  Eigen::LLT<Eigen::MatrixXd> llt;  // of the [Zs | X] block plus penalty
  Eigen::VectorXd beta;             // (b, theta)
  Eigen::VectorXd lambda;           // per Zs column
  std::vector<Eigen::MatrixXd> Binv;
  double logdet_w = 0.0, logdet_p = 0.0, logdet_h = 0.0, logdet_m = 0.0, Q = 0.0;
};

LikelihoodEngine::~LikelihoodEngine() = default;

LikelihoodEngine::LikelihoodEngine(const AssembledDesign& design, Criterion criterion)
    : design_(&design),
      criterion_(criterion),
      layout_(design),
      L_(design.num_outcomes),
      q_(design.q()),
      p_(design.p()),
      c_(design.q() + design.p() + 1) {
  const std::size_t N = design.n_obs;
  for (std::size_t i = 0; i < design.num_subjects; ++i) {
    const std::size_t rb = design.subject_offsets[i];
    const std::size_t re = design.subject_offsets[i + 1];
    for (int l = 0; l < L_; ++l) {
      Block blk;
      blk.subject = i;
      blk.outcome = l;
      const Eigen::Index r0 = static_cast<Eigen::Index>(l * N + rb);
      const Eigen::Index n = static_cast<Eigen::Index>(re - rb);
      for (Eigen::Index j = 0; j < q_; ++j) {
        if (!design.Zs.col(j).segment(r0, n).isZero(0.0)) blk.cols.push_back(j);
      }
      for (Eigen::Index j = 0; j < p_; ++j) {
        if (!design.X.col(j).segment(r0, n).isZero(0.0)) blk.cols.push_back(q_ + j);
      }
      blk.cols.push_back(c_ - 1);
      blk.raw.resize(n, static_cast<Eigen::Index>(blk.cols.size()));
      for (std::size_t k = 0; k < blk.cols.size(); ++k) {
        const Eigen::Index c = blk.cols[k];
        const auto kk = static_cast<Eigen::Index>(k);
        if (c < q_) {
          blk.raw.col(kk) = design.Zs.col(c).segment(r0, n);
        } else if (c < c_ - 1) {
          blk.raw.col(kk) = design.X.col(c - q_).segment(r0, n);
        } else {
          blk.raw.col(kk) = design.y.segment(r0, n);
        }
      }
      blocks_.push_back(std::move(blk));
    }
  }
}

void LikelihoodEngine::set_response(const Eigen::VectorXd& y) {
  if (y.size() != design_->rows()) throw Error(ErrorCode::LengthMismatch, "response has the wrong length");
  const std::size_t N = design_->n_obs;
  for (auto& blk : blocks_) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(blk.outcome * N + design_->subject_offsets[blk.subject]);
    blk.raw.col(blk.raw.cols() - 1) = y.segment(r0, blk.raw.rows());
  }
  cache_.clear();
}

const LikelihoodEngine::Whitened& LikelihoodEngine::whitened(double phi) {
  for (auto it = cache_.begin(); it != cache_.end(); ++it) {
    if ((*it)->phi == phi) {
      cache_.splice(cache_.begin(), cache_, it);
      return *cache_.front();
    }
  }
  auto w = std::make_unique<Whitened>();
  w->phi = phi;
  w->within.assign(static_cast<std::size_t>(L_), Eigen::MatrixXd::Zero(c_, c_));
  w->t.resize(blocks_.size());
  w->kappa.resize(design_->num_subjects);
  w->logdet_c.resize(design_->num_subjects);

  for (std::size_t i = 0; i < design_->num_subjects; ++i) {
    const std::size_t rb = design_->subject_offsets[i];
    const Eigen::Index n = static_cast<Eigen::Index>(design_->subject_offsets[i + 1] - rb);
    // Bidiagonal whitening of the CAR(1) correlation: row j becomes
    // (x_j - a_j x_{j-1}) / sqrt(1 - a_j^2) with a_j = phi^(t_j - t_{j-1}).
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
    double logdet = 0.0;
    if (phi > 0.0) {
      for (Eigen::Index j = 1; j < n; ++j) {
        const double d = design_->times[rb + static_cast<std::size_t>(j)] - design_->times[rb + static_cast<std::size_t>(j) - 1];
        a(j) = std::pow(phi, d);
        const double one_minus = 1.0 - a(j) * a(j);
        s(j) = 1.0 / std::sqrt(one_minus);
        logdet += std::log(one_minus);
      }
    }
    Eigen::VectorXd ones(n);
    ones(0) = 1.0;
    for (Eigen::Index j = 1; j < n; ++j) ones(j) = s(j) * (1.0 - a(j));
    const double kappa = ones.squaredNorm();
    w->kappa[i] = kappa;
    w->logdet_c[i] = logdet;

    for (int l = 0; l < L_; ++l) {
      const std::size_t bi = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(l);
      const Block& blk = blocks_[bi];
      Eigen::MatrixXd A = blk.raw;
      if (phi > 0.0) {
        for (Eigen::Index j = n - 1; j >= 1; --j) A.row(j) = s(j) * (blk.raw.row(j) - a(j) * blk.raw.row(j - 1));
      }
      Eigen::VectorXd t = A.transpose() * ones;
      Eigen::MatrixXd cross = A.transpose() * A;
      cross.noalias() -= (t / kappa) * t.transpose();
      auto& Wl = w->within[static_cast<std::size_t>(l)];
      const std::size_t nc = blk.cols.size();
      for (std::size_t u = 0; u < nc; ++u) {
        for (std::size_t v = 0; v < nc; ++v) {
          Wl(blk.cols[u], blk.cols[v]) += cross(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
        }
      }
      w->t[bi] = std::move(t);
    }
  }

  cache_.push_front(std::move(w));
  while (cache_.size() > 4) cache_.pop_back();
  return *cache_.front();
}

bool LikelihoodEngine::factor(const VarianceComponents& tau, Factor& f) {
  const double phi = design_->spec.error_structure == ErrorStructure::car1 ? tau.ar_corr.value_or(0.0) : 0.0;
  if (!(phi >= 0.0 && phi < 1.0)) return false;
  const Whitened& w = whitened(phi);
  f.w = &w;
  const Eigen::MatrixXd Su = tau.subject_cov(L_);
  const Eigen::VectorXd ev = tau.error_var(L_);
  if (!(ev.array() > 0.0).all() || !std::isfinite(ev.sum()) || !std::isfinite(Su.sum())) return false;

  f.G = w.within[0] / ev(0);
  for (int l = 1; l < L_; ++l) f.G += w.within[static_cast<std::size_t>(l)] / ev(l);

  const std::size_t m = design_->num_subjects;
  f.Binv.resize(m);
  f.logdet_w = 0.0;
  const double log_e = ev.array().log().sum();
  for (std::size_t i = 0; i < m; ++i) {
    const double kappa = w.kappa[i];
    Eigen::MatrixXd B = Su * kappa;
    B.diagonal() += ev;
    const double det = B.determinant();
    if (!(det > 0.0) || !(B(0, 0) > 0.0)) return false;
    f.Binv[i] = B.inverse();
    const double n_i = static_cast<double>(design_->subject_offsets[i + 1] - design_->subject_offsets[i]);
    f.logdet_w += (n_i - 1.0) * log_e + L_ * w.logdet_c[i] + std::log(det);
    for (int l = 0; l < L_; ++l) {
      const std::size_t bl = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(l);
      const auto& cl = blocks_[bl].cols;
      const Eigen::VectorXd& tl = w.t[bl];
      for (int k = 0; k < L_; ++k) {
        const std::size_t bk = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(k);
        const auto& ck = blocks_[bk].cols;
        const Eigen::VectorXd& tk = w.t[bk];
        const double coef = f.Binv[i](l, k) / kappa;
        for (std::size_t u = 0; u < cl.size(); ++u) {
          const double tu = coef * tl(static_cast<Eigen::Index>(u));
          for (std::size_t v = 0; v < ck.size(); ++v) f.G(cl[u], ck[v]) += tu * tk(static_cast<Eigen::Index>(v));
        }
      }
    }
  }

  f.lambda = Eigen::VectorXd::Zero(q_);
  f.logdet_p = 0.0;
  if (q_ > 0) {
    const auto logs = smoothing_logs(tau, *design_);
    for (const auto& blk : design_->penalty_layout) {
      const double ll = logs[static_cast<std::size_t>(blk.smoothing_index)];
      f.lambda.segment(blk.first_col, blk.size).setConstant(std::exp(ll));
      f.logdet_p += blk.size * ll;
    }
    f.G.diagonal().head(q_) += f.lambda;
  }

  const Eigen::Index k = q_ + p_;
  f.llt.compute(f.G.topLeftCorner(k, k));
  if (f.llt.info() != Eigen::Success) return false;
  const auto diag = f.llt.matrixLLT().diagonal();
  if (!(diag.array() > 0.0).all() || !diag.allFinite()) return false;
  f.logdet_h = 2.0 * diag.head(q_).array().log().sum();
  f.logdet_m = 2.0 * diag.array().log().sum();
  const Eigen::VectorXd z = f.llt.matrixL().solve(f.G.col(c_ - 1).head(k));
  f.Q = std::max(0.0, f.G(c_ - 1, c_ - 1) - z.squaredNorm());
  f.beta = f.llt.matrixU().solve(z);
  return std::isfinite(f.logdet_w) && std::isfinite(f.Q);
}

void LikelihoodEngine::gradient(const VarianceComponents& tau, const Factor& f, Eigen::VectorXd& out) {
  const Whitened& w = *f.w;
  const Eigen::Index kM = q_ + p_;
  const Eigen::Index k = criterion_ == Criterion::ml ? q_ : kM;
  // Inverse of the leading k x k block of G from its Cholesky factor.
  Eigen::MatrixXd Linv = Eigen::MatrixXd::Identity(k, k);
  f.llt.matrixLLT().topLeftCorner(k, k).triangularView<Eigen::Lower>().solveInPlace(Linv);
  Eigen::MatrixXd Kinv = Eigen::MatrixXd::Zero(k, k);
  Kinv.selfadjointView<Eigen::Lower>().rankUpdate(Linv.transpose());
  Kinv = Kinv.selfadjointView<Eigen::Lower>();
  Eigen::VectorXd v(c_);
  v.head(kM) = -f.beta;
  v(c_ - 1) = 1.0;

  const Eigen::MatrixXd Su = tau.subject_cov(L_);
  const Eigen::VectorXd ev = tau.error_var(L_);
  Eigen::MatrixXd gSu = Eigen::MatrixXd::Zero(L_, L_);
  Eigen::VectorXd ge = Eigen::VectorXd::Zero(L_);

  for (int l = 0; l < L_; ++l) {
    const auto& Wl = w.within[static_cast<std::size_t>(l)];
    const double D = Kinv.cwiseProduct(Wl.topLeftCorner(k, k)).sum() + v.dot(Wl * v);
    const double mN = static_cast<double>(design_->n_obs - design_->num_subjects);
    ge(l) += -D / (ev(l) * ev(l)) + mN / ev(l);
  }

  const std::size_t m = design_->num_subjects;
  Eigen::MatrixXd E(L_, L_);
  std::vector<double> vt(static_cast<std::size_t>(L_));
  for (std::size_t i = 0; i < m; ++i) {
    const double kappa = w.kappa[i];
    for (int l = 0; l < L_; ++l) {
      const std::size_t bl = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(l);
      const auto& cl = blocks_[bl].cols;
      const Eigen::VectorXd& tl = w.t[bl];
      double s = 0.0;
      for (std::size_t u = 0; u < cl.size(); ++u) s += v(cl[u]) * tl(static_cast<Eigen::Index>(u));
      vt[static_cast<std::size_t>(l)] = s;
    }
    for (int l = 0; l < L_; ++l) {
      const std::size_t bl = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(l);
      const auto& cl = blocks_[bl].cols;
      const Eigen::VectorXd& tl = w.t[bl];
      for (int kk = l; kk < L_; ++kk) {
        const std::size_t bk = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(kk);
        const auto& ck = blocks_[bk].cols;
        const Eigen::VectorXd& tk = w.t[bk];
        double tr = 0.0;
        for (std::size_t u = 0; u < cl.size() && cl[u] < k; ++u) {
          double row = 0.0;
          for (std::size_t vv = 0; vv < ck.size() && ck[vv] < k; ++vv) row += Kinv(cl[u], ck[vv]) * tk(static_cast<Eigen::Index>(vv));
          tr += tl(static_cast<Eigen::Index>(u)) * row;
        }
        E(l, kk) = (tr + vt[static_cast<std::size_t>(l)] * vt[static_cast<std::size_t>(kk)]) / kappa;
        E(kk, l) = E(l, kk);
      }
    }
    const Eigen::MatrixXd& Bi = f.Binv[i];
    const Eigen::MatrixXd GB = Bi - Bi * E * Bi;
    gSu += kappa * GB;
    ge += GB.diagonal();
  }

  // dF on the layout scale, F = -2 loglik.
  Eigen::VectorXd dF = Eigen::VectorXd::Zero(layout_.size());
  const auto& slots = layout_.slots();
  std::vector<double> dlog(design_->smoothing.size(), 0.0);
  for (const auto& blk : design_->penalty_layout) {
    double acc = -static_cast<double>(blk.size);
    for (Eigen::Index j = blk.first_col; j < blk.first_col + blk.size; ++j) {
      acc += f.lambda(j) * (Kinv(j, j) + f.beta(j) * f.beta(j));
    }
    dlog[static_cast<std::size_t>(blk.smoothing_index)] += acc;
  }
  const double s1 = Su(0, 0);
  const double cov = L_ == 2 ? Su(0, 1) : 0.0;
  Eigen::Index phi_slot = -1;
  for (Eigen::Index i = 0; i < layout_.size(); ++i) {
    const auto& s = slots[static_cast<std::size_t>(i)];
    switch (s.kind) {
      case ParamKind::log_smoothing: dF(i) = dlog[static_cast<std::size_t>(s.smoothing_index)]; break;
      case ParamKind::log_sigma1_sq: dF(i) = gSu(0, 0) * s1 + (L_ == 2 ? gSu(0, 1) * cov : 0.0); break;
      case ParamKind::log_sigma2_sq: dF(i) = gSu(1, 1) * Su(1, 1) + gSu(0, 1) * cov; break;
      case ParamKind::fisher_z_rho:
        dF(i) = 2.0 * gSu(0, 1) * (1.0 - tau.rho * tau.rho) * std::sqrt(tau.sigma1_sq * tau.sigma2_sq);
        break;
      case ParamKind::log_sigma_eps_sq: dF(i) = ge.dot(ev); break;
      case ParamKind::log_delta: dF(i) = 2.0 * ge(1) * ev(1); break;
      case ParamKind::logit_ar_corr: phi_slot = i; break;
    }
  }
  if (phi_slot >= 0) {
    const Eigen::VectorXd x = layout_.to_vector(tau);
    const double h = 1e-5;
    auto F_at = [&](double xv) {
      Eigen::VectorXd xx = x;
      xx(phi_slot) = xv;
      Factor g;
      if (!factor(layout_.from_vector(xx), g)) return std::numeric_limits<double>::quiet_NaN();
      const double base = g.logdet_w - g.logdet_p + g.Q;
      return criterion_ == Criterion::ml ? base + g.logdet_h : base + g.logdet_m;
    };
    dF(phi_slot) = (F_at(x(phi_slot) + h) - F_at(x(phi_slot) - h)) / (2.0 * h);
  }
  out = -0.5 * dF;
}

Evaluation LikelihoodEngine::evaluate(const VarianceComponents& tau, bool with_gradient) {
  Evaluation e;
  Factor f;
  if (!factor(tau, f)) return e;
  const double rows = static_cast<double>(design_->rows());
  e.ml = -0.5 * (rows * std::log(2.0 * std::numbers::pi) + f.logdet_w - f.logdet_p + f.logdet_h + f.Q);
  e.reml = -0.5 * (f.logdet_w - f.logdet_p + f.logdet_m + f.Q);
  e.value = criterion_ == Criterion::ml ? e.ml : e.reml;
  e.ok = std::isfinite(e.value);
  if (e.ok && with_gradient) gradient(tau, f, e.gradient);
  return e;
}

Evaluation LikelihoodEngine::evaluate_vector(const Eigen::VectorXd& x, bool with_gradient) {
  return evaluate(layout_.from_vector(x), with_gradient);
}

Solution LikelihoodEngine::solve(const VarianceComponents& tau) {
  Factor f;
  if (!factor(tau, f)) {
    throw Error(ErrorCode::NonPositiveDefinite, "penalized normal equations are not positive definite");
  }
  Solution s;
  const double rows = static_cast<double>(design_->rows());
  s.eval.ml = -0.5 * (rows * std::log(2.0 * std::numbers::pi) + f.logdet_w - f.logdet_p + f.logdet_h + f.Q);
  s.eval.reml = -0.5 * (f.logdet_w - f.logdet_p + f.logdet_m + f.Q);
  s.eval.value = criterion_ == Criterion::ml ? s.eval.ml : s.eval.reml;
  s.eval.ok = true;
  s.b = f.beta.head(q_);
  s.theta = f.beta.segment(q_, p_);

  const Eigen::Index kM = q_ + p_;
  const Eigen::MatrixXd Linv = f.llt.matrixL().solve(Eigen::MatrixXd::Identity(kM, kM));
  s.posterior_cov = Linv.transpose() * Linv;
  s.column_edf = Eigen::VectorXd::Ones(kM);
  for (Eigen::Index j = 0; j < q_; ++j) s.column_edf(j) = 1.0 - f.lambda(j) * s.posterior_cov(j, j);

  Eigen::VectorXd v(c_);
  v.head(kM) = -f.beta;
  v(c_ - 1) = 1.0;
  const Eigen::MatrixXd Su = tau.subject_cov(L_);
  const std::size_t m = design_->num_subjects;
  s.subject_effects.resize(static_cast<Eigen::Index>(m), L_);
  for (std::size_t i = 0; i < m; ++i) {
    Eigen::VectorXd g(L_);
    for (int l = 0; l < L_; ++l) {
      const std::size_t bl = i * static_cast<std::size_t>(L_) + static_cast<std::size_t>(l);
      const auto& cl = blocks_[bl].cols;
      double acc = 0.0;
      for (std::size_t u = 0; u < cl.size(); ++u) acc += v(cl[u]) * f.w->t[bl](static_cast<Eigen::Index>(u));
      g(l) = acc;
    }
    s.subject_effects.row(static_cast<Eigen::Index>(i)) = (Su * (f.Binv[i] * g)).transpose();
  }
  return s;
}

double reml_criterion(const AssembledDesign& design, const VarianceComponents& tau) {
  LikelihoodEngine engine(design, Criterion::reml);
  const Evaluation e = engine.evaluate(tau);
  if (!e.ok) throw Error(ErrorCode::NonPositiveDefinite, "criterion undefined at these variance components");
  return e.reml;
}

double ml_criterion(const AssembledDesign& design, const VarianceComponents& tau) {
  LikelihoodEngine engine(design, Criterion::ml);
  const Evaluation e = engine.evaluate(tau);
  if (!e.ok) throw Error(ErrorCode::NonPositiveDefinite, "criterion undefined at these variance components");
  return e.ml;
}

}  // namespace pairsurf

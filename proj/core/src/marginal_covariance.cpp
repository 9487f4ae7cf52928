#include "pairsurf/marginal_covariance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pairsurf/error.hpp"

namespace pairsurf {

Eigen::MatrixXd error_correlation(const std::vector<double>& times, std::optional<double> ar_corr) {
  const Eigen::Index n = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(n, n);
  if (!ar_corr) return C;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double v = std::pow(*ar_corr, std::abs(times[static_cast<std::size_t>(a)] - times[static_cast<std::size_t>(b)]));
      C(a, b) = v;
      C(b, a) = v;
    }
  }
  return C;
}

MarginalCovariance::MarginalCovariance(const AssembledDesign& design, const VarianceComponents& tau)
    : design_(&design) {
  const int L = design.num_outcomes;
  tau.validate(L);
  const Eigen::MatrixXd Su = tau.subject_cov(L);
  const Eigen::VectorXd ev = tau.error_var(L);
  const bool car1 = design.spec.error_structure == ErrorStructure::car1;

  for (std::size_t i = 0; i < design.num_subjects; ++i) {
    const std::size_t b = design.subject_offsets[i];
    const std::size_t e = design.subject_offsets[i + 1];
    const Eigen::Index n = static_cast<Eigen::Index>(e - b);
    std::vector<double> times(design.times.begin() + static_cast<std::ptrdiff_t>(b),
                              design.times.begin() + static_cast<std::ptrdiff_t>(e));
    const Eigen::MatrixXd C = error_correlation(times, car1 ? tau.ar_corr : std::nullopt);
    Eigen::MatrixXd W(L * n, L * n);
    std::vector<Eigen::Index> rows;
    for (int l = 0; l < L; ++l) {
      for (std::size_t r = b; r < e; ++r) rows.push_back(static_cast<Eigen::Index>(design.row_index(l, r)));
      for (int k = 0; k < L; ++k) {
        W.block(l * n, k * n, n, n).setConstant(Su(l, k));
        if (l == k) W.block(l * n, k * n, n, n) += ev(l) * C;
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(W);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::NonPositiveDefinite, "subject covariance block is not positive definite");
    }
    log_det_ += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    blocks_.push_back(std::move(llt));
    rows_.push_back(std::move(rows));
  }

  const Eigen::Index q = design.q();
  if (q > 0) {
    const auto logs = smoothing_logs(tau, design);
    precision_ = Eigen::VectorXd::Zero(q);
    for (const auto& blk : design.penalty_layout) {
      precision_.segment(blk.first_col, blk.size).setConstant(std::exp(logs[static_cast<std::size_t>(blk.smoothing_index)]));
    }
    winv_zs_ = solve_w(design.Zs);
    Eigen::MatrixXd cap = design.Zs.transpose() * winv_zs_;
    cap.diagonal() += precision_;
    capacitance_.compute(cap);
    if (capacitance_.info() != Eigen::Success) {
      throw Error(ErrorCode::NonPositiveDefinite, "penalized capacitance matrix is not positive definite");
    }
    log_det_ += 2.0 * capacitance_.matrixLLT().diagonal().array().log().sum() - precision_.array().log().sum();
  }
}

Eigen::MatrixXd MarginalCovariance::solve_w(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd out(rhs.rows(), rhs.cols());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& rows = rows_[i];
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), rhs.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = rhs.row(rows[k]);
    sub = blocks_[i].solve(sub);
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(rows[k]) = sub.row(static_cast<Eigen::Index>(k));
  }
  return out;
}

Eigen::MatrixXd MarginalCovariance::solve(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd x = solve_w(rhs);
  if (precision_.size() > 0) x -= winv_zs_ * capacitance_.solve(design_->Zs.transpose() * x);
  return x;
}

double MarginalCovariance::log_det() const { return log_det_; }

double MarginalCovariance::quad_form(const Eigen::VectorXd& r) const { return r.dot(solve(r).col(0)); }

Eigen::MatrixXd MarginalCovariance::dense() const {
  const Eigen::Index n = design_->rows();
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Eigen::MatrixXd W = blocks_[i].reconstructedMatrix();
    const auto& rows = rows_[i];
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < rows.size(); ++b) {
        V(rows[a], rows[b]) = W(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
  }
  if (precision_.size() > 0) {
    V += design_->Zs * precision_.cwiseInverse().asDiagonal() * design_->Zs.transpose();
  }
  return V;
}

namespace {

struct GlsParts {
  Eigen::VectorXd theta;
  double log_det_info = 0.0;  // log |X' V^{-1} X|
  double quad = 0.0;          // r' V^{-1} r at theta
};

GlsParts gls_parts(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& vinv_x,
                   const Eigen::VectorXd& vinv_y) {
  const Eigen::MatrixXd info = X.transpose() * vinv_x;
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  const double scale = info.diagonal().cwiseAbs().maxCoeff();
  if (llt.info() != Eigen::Success ||
      llt.matrixLLT().diagonal().array().square().minCoeff() <= 1e-13 * std::max(scale, 1e-300)) {
    throw Error(ErrorCode::RankDeficientX, "X' V^{-1} X is singular");
  }
  GlsParts out;
  out.theta = llt.solve(X.transpose() * vinv_y);
  out.log_det_info = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  out.quad = y.dot(vinv_y) - 2.0 * out.theta.dot(X.transpose() * vinv_y) + out.theta.dot(info * out.theta);
  return out;
}

GlsParts dense_parts(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V, double& log_det) {
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NonPositiveDefinite, "V is not positive definite");
  log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const Eigen::MatrixXd vinv_x = llt.solve(X);
  const Eigen::VectorXd vinv_y = llt.solve(y);
  GlsParts parts = gls_parts(X, y, vinv_x, vinv_y);
  const Eigen::VectorXd r = y - X * parts.theta;
  parts.quad = r.dot(llt.solve(r));
  return parts;
}

}  // namespace

Eigen::VectorXd gls_fixed_effects(const AssembledDesign& design, const MarginalCovariance& V) {
  return gls_parts(design.X, design.y, V.solve(design.X), V.solve(design.y)).theta;
}

Eigen::VectorXd gls_fixed_effects(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V) {
  if (X.rows() != y.size() || V.rows() != y.size() || V.cols() != y.size()) {
    throw Error(ErrorCode::LengthMismatch, "X, y and V dimensions disagree");
  }
  double ld = 0.0;
  return dense_parts(X, y, V, ld).theta;
}

double reml_criterion(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V) {
  double ld = 0.0;
  const GlsParts p = dense_parts(X, y, V, ld);
  return -0.5 * (ld + p.log_det_info + p.quad);
}

double ml_criterion(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V) {
  double ld = 0.0;
  const GlsParts p = dense_parts(X, y, V, ld);
  return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) + ld + p.quad);
}

}  // namespace pairsurf

#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pairsurf/design.hpp"
#include "pairsurf/variance.hpp"

namespace pairsurf {

// Within-subject correlation of one subject's errors: identity, or
// phi^|t_j - t_k| under CAR(1).
Eigen::MatrixXd error_correlation(const std::vector<double>& times, std::optional<double> ar_corr);

// V = Z_u (Sigma_u (x) I_m) Z_u' + Zs diag(1/lambda) Zs' + R, held as
// per-subject Cholesky factors of W_i = Sigma_u (x) J + Sigma_eps (x) C_i and a
// Woodbury correction for the penalized columns. V is never formed densely.
class MarginalCovariance {
 public:
  // Throws NonPositiveDefinite.
  MarginalCovariance(const AssembledDesign& design, const VarianceComponents& tau);

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;  // V^{-1} rhs
  double log_det() const;
  double quad_form(const Eigen::VectorXd& r) const;  // r' V^{-1} r
  // Dense V; for small problems and tests only.
  Eigen::MatrixXd dense() const;

 private:
  Eigen::MatrixXd solve_w(const Eigen::MatrixXd& rhs) const;

  const AssembledDesign* design_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> blocks_;  // per subject, rows ordered outcome-major
  std::vector<std::vector<Eigen::Index>> rows_;      // stacked rows of each subject
  Eigen::VectorXd precision_;                        // lambda per Zs column
  Eigen::MatrixXd winv_zs_;                          // W^{-1} Zs
  Eigen::LLT<Eigen::MatrixXd> capacitance_;          // P + Zs' W^{-1} Zs
  double log_det_ = 0.0;
};

// theta = (X' V^{-1} X)^{-1} X' V^{-1} y. Throws RankDeficientX.
Eigen::VectorXd gls_fixed_effects(const AssembledDesign& design, const MarginalCovariance& V);
Eigen::VectorXd gls_fixed_effects(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V);

// Restricted and full Gaussian log-likelihoods for a dense V with theta
// profiled at its GLS value. The restricted form omits constants; the full
// form includes -rows/2 log(2 pi).
double reml_criterion(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V);
double ml_criterion(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& V);

}  // namespace pairsurf

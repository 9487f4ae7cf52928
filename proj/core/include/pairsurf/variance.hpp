#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pairsurf/design.hpp"

namespace pairsurf {

// tau: smoothing parameters, subject-effect covariance, error scale and the
// optional CAR(1) correlation. Single-outcome models use sigma1_sq and
// log_lambda only.
struct VarianceComponents {
  std::vector<double> log_lambda;  // outcome-1 surfaces
  std::vector<double> log_varphi;  // outcome-2 surfaces
  double sigma1_sq = 1.0;
  double sigma2_sq = 1.0;
  double rho = 0.0;
  double sigma_eps_sq = 1.0;
  double delta = 1.0;
  std::optional<double> ar_corr;

  // Sigma_u restricted to the first `outcomes` outcomes.
  Eigen::MatrixXd subject_cov(int outcomes = 2) const;
  // Per-outcome error variances (sigma_eps^2, sigma_eps^2 delta^2).
  Eigen::VectorXd error_var(int outcomes = 2) const;

  // Throws InvalidSpec when an entry is out of range.
  void validate(int outcomes) const;
};

// log smoothing parameter of each entry of design.smoothing, in order.
std::vector<double> smoothing_logs(const VarianceComponents& tau, const AssembledDesign& design);
void set_smoothing_logs(VarianceComponents& tau, const AssembledDesign& design, const std::vector<double>& logs);

enum class ParamKind {
  log_smoothing,
  log_sigma1_sq,
  log_sigma2_sq,
  fisher_z_rho,
  log_sigma_eps_sq,
  log_delta,
  logit_ar_corr,
};

struct ParamSlot {
  ParamKind kind;
  int smoothing_index = -1;
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
};

// Unconstrained coordinates used by the optimizer: log smoothing parameters
// (design order), log sigma1^2, [log sigma2^2, atanh rho], log sigma_eps^2,
// [log delta], [logit ar_corr].
class ParameterLayout {
 public:
  explicit ParameterLayout(const AssembledDesign& design);

  const std::vector<ParamSlot>& slots() const { return slots_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(slots_.size()); }
  Eigen::Index index_of(ParamKind kind, int smoothing_index = -1) const;  // -1 if absent

  Eigen::VectorXd to_vector(const VarianceComponents& tau) const;
  VarianceComponents from_vector(const Eigen::VectorXd& x) const;
  Eigen::VectorXd lower() const;
  Eigen::VectorXd upper() const;
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;

 private:
  const AssembledDesign* design_;
  int outcomes_;
  bool car1_;
  std::vector<ParamSlot> slots_;
};

inline constexpr double kLogSmoothingBound = 20.0;
inline constexpr double kLogVarianceBound = 25.0;
inline constexpr double kLogitBound = 20.0;
double fisher_z_bound();

}  // namespace pairsurf

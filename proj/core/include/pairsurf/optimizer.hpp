#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace pairsurf {

// Objective for minimization: returns false when f is undefined at x.
// When grad is non-null it must be filled.
using Objective = std::function<bool(const Eigen::VectorXd& x, double& f, Eigen::VectorXd* grad)>;

struct OptimizerOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-5;  // max-norm of the projected gradient
  double relative_f_tolerance = 1e-8;
  double x_tolerance = 1e-6;
  double max_step = 5.0;             // max-norm cap on one step
  // Seeds the inverse Hessian from forward differences of the gradient
  // (one extra gradient per coordinate) instead of the identity.
  bool fd_initial_hessian = true;
  // Starting inverse Hessian; used instead of the above when its size matches.
  Eigen::MatrixXd initial_inverse_hessian;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  Eigen::MatrixXd inverse_hessian;  // final quasi-Newton approximation
};

// Max-norm of the gradient with components pushing into an active bound removed.
double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lower,
                               const Eigen::VectorXd& upper);

// Box-constrained quasi-Newton with an active set and Armijo backtracking.
OptimizerResult minimize_bfgs(const Objective& objective, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper, const OptimizerOptions& options = {});

// Derivative-free simplex search on the same box (coordinates clamped).
OptimizerResult minimize_nelder_mead(const Objective& objective, const Eigen::VectorXd& x0,
                                     const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                     int max_evaluations, double initial_step = 0.5);

}  // namespace pairsurf

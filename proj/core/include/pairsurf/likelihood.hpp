#pragma once

#include <list>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "pairsurf/design.hpp"
#include "pairsurf/variance.hpp"

namespace pairsurf {

struct Evaluation {
  bool ok = false;
  double ml = 0.0;    // full Gaussian log-likelihood, theta and b profiled
  double reml = 0.0;  // restricted log-likelihood, constants omitted
  double value = 0.0; // the engine's criterion
  Eigen::VectorXd gradient;  // d value / d x on the ParameterLayout scale
};

// Estimates at fixed tau.
struct Solution {
  Evaluation eval;
  Eigen::VectorXd theta;          // fixed effects (columns of X)
  Eigen::VectorXd b;              // penalized coefficients (columns of Zs)
  Eigen::MatrixXd subject_effects;// m x L BLUPs
  // (Xc' W^{-1} Xc + P)^{-1} with Xc = [Zs | X]; its X block is (X' V^{-1} X)^{-1}.
  Eigen::MatrixXd posterior_cov;
  // Diagonal of the influence operator per column of [Zs | X].
  Eigen::VectorXd column_edf;
};

// Evaluates the ML and REML criteria through one Cholesky factorization of
// the penalized cross-product matrix of [Zs | X | y] after integrating out
// the subject effects subject by subject. Not thread-safe.
class LikelihoodEngine {
 public:
  LikelihoodEngine(const AssembledDesign& design, Criterion criterion);
  ~LikelihoodEngine();
  LikelihoodEngine(const LikelihoodEngine&) = delete;
  LikelihoodEngine& operator=(const LikelihoodEngine&) = delete;

  const AssembledDesign& design() const { return *design_; }
  const ParameterLayout& layout() const { return layout_; }
  Criterion criterion() const { return criterion_; }

  // Replaces the stacked response (same length as design().y).
  void set_response(const Eigen::VectorXd& y);

  Evaluation evaluate(const VarianceComponents& tau, bool gradient = false);
  Evaluation evaluate_vector(const Eigen::VectorXd& x, bool gradient = false);
  // Throws NonPositiveDefinite.
  Solution solve(const VarianceComponents& tau);

 private:
  struct Block;
  struct Whitened;
  struct Factor;

  const Whitened& whitened(double phi);
  bool factor(const VarianceComponents& tau, Factor& f);
  void gradient(const VarianceComponents& tau, const Factor& f, Eigen::VectorXd& out);

  const AssembledDesign* design_;
  Criterion criterion_;
  ParameterLayout layout_;
  int L_;
  Eigen::Index q_, p_, c_;
  std::vector<Block> blocks_;  // subject-major, outcome-minor
  std::list<std::unique_ptr<Whitened>> cache_;
};

double reml_criterion(const AssembledDesign& design, const VarianceComponents& tau);
double ml_criterion(const AssembledDesign& design, const VarianceComponents& tau);

}  // namespace pairsurf

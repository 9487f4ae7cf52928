#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pairsurf/dataset.hpp"
#include "pairsurf/tps_basis.hpp"

namespace pairsurf {

enum class SurfaceMode {
  group_specific,   // one surface per group per outcome, intercepts absorbed
  shared_centered,  // one centered surface per outcome plus explicit group intercepts
  shared,           // one uncentered surface per outcome, common intercept
};

enum class ErrorStructure { independent, car1 };
enum class Criterion { ml, reml };
// Which outcomes enter the model. Single-outcome models use the outcome-1
// slots of VarianceComponents (sigma1_sq, log_lambda).
enum class OutcomeSet { paired, first, second };

struct ModelSpec {
  SurfaceMode surface_mode = SurfaceMode::group_specific;
  int num_groups = 1;
  std::vector<std::string> parametric_terms;
  BasisOptions basis;
  // false: every spline column is a fixed effect and no smoothing parameter exists.
  bool penalized = true;
  // Optional per-surface basis dimensions, indexed [outcome][group - 1]
  // (a single entry per outcome in the shared modes). Knots are a prefix of
  // one space-filling ordering, so smaller bases are nested in larger ones.
  std::vector<std::vector<int>> basis_dims;
  ErrorStructure error_structure = ErrorStructure::independent;
  Criterion criterion = Criterion::reml;
  OutcomeSet outcomes = OutcomeSet::paired;
};

std::string to_string(SurfaceMode mode);
std::string to_string(ErrorStructure e);
std::string to_string(Criterion c);
std::string to_string(OutcomeSet o);

// One surface term of the stacked model.
struct SmoothTerm {
  int outcome = 0;  // index into the stacked outcomes (0 or 1)
  int group = 0;    // 1..G for group-specific surfaces, 0 when shared
  std::shared_ptr<const SurfaceBasis> basis;
  std::vector<int> fixed_cols;   // columns of X (null space, or all columns if unpenalized)
  std::vector<int> random_cols;  // columns of Zs
  int smoothing_index = -1;      // -1 when unpenalized
  std::string label;
};

struct SmoothingParameter {
  std::string name;
  int outcome = 0;
  int group = 0;
};

// Penalized block of Zs columns sharing one smoothing parameter.
struct PenaltyBlock {
  int first_col = 0;
  int size = 0;
  int smoothing_index = 0;
};

struct GroupIntercept {
  int outcome = 0;
  int group = 0;
  int col = 0;
};

// The joint model stacked as y = X theta + Z_subject U + Zs b + e.
// Rows are outcome-major: rows [0, N) hold outcome 1 in dataset order and rows
// [N, 2N) outcome 2. Z_subject is implicit: subject i, outcome l owns rows
// l*N + [subject_begin(i), subject_end(i)).
struct AssembledDesign {
  ModelSpec spec;
  int num_outcomes = 2;
  std::vector<int> outcome_ids;  // dataset outcome (1 or 2) of each stacked outcome
  std::size_t n_obs = 0;         // N, observations per outcome
  std::size_t num_subjects = 0;
  int num_groups = 1;

  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Zs;
  std::vector<std::string> fixed_names;

  std::vector<SmoothTerm> smooths;
  std::vector<SmoothingParameter> smoothing;
  std::vector<PenaltyBlock> penalty_layout;
  std::vector<GroupIntercept> group_intercepts;

  std::vector<std::size_t> subject_offsets;  // size m + 1, per-outcome row offsets
  std::vector<int> subject_groups;
  std::vector<double> times;  // per dataset row
  std::vector<Point2> covariates;  // per dataset row, raw units

  Eigen::Index rows() const { return y.size(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index q() const { return Zs.cols(); }
  std::size_t row_index(int outcome, std::size_t dataset_row) const {
    return static_cast<std::size_t>(outcome) * n_obs + dataset_row;
  }
  // Dense indicator matrix of subject effects, columns (U_1' , U_2')'.
  Eigen::MatrixXd subject_design() const;
  // Replaces the response (same row layout).
  void set_response(const LongitudinalDataset& ds);
};

struct AssemblyOptions {
  bool require_full_rank = true;
};

// Throws GroupMismatch, RankDeficientX or InvalidSpec.
AssembledDesign assemble(const LongitudinalDataset& ds, const ModelSpec& spec, const AssemblyOptions& options = {});

// Stacked response for a spec (outcome-major).
Eigen::VectorXd stacked_response(const LongitudinalDataset& ds, OutcomeSet outcomes);

// (null, full): the full spec unchanged and the null spec with a shared
// centered surface per outcome plus free group intercepts. With
// equal_intercepts the null surface keeps its constant and no group
// intercepts are added. Throws InvalidSpecPair unless spec is group_specific.
std::pair<ModelSpec, ModelSpec> null_and_full_specs(const ModelSpec& spec, bool equal_intercepts = false);

}  // namespace pairsurf

#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace pairsurf {

struct Point2 {
  double w = 0.0;
  double h = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

// Per-axis shift/scale applied to covariates before any distance is taken.
struct AxisNormalization {
  double shift_w = 0.0;
  double scale_w = 1.0;
  double shift_h = 0.0;
  double scale_h = 1.0;

  Point2 apply(Point2 p) const { return {(p.w - shift_w) / scale_w, (p.h - shift_h) / scale_h}; }
  Point2 invert(Point2 p) const { return {p.w * scale_w + shift_w, p.h * scale_h + shift_h}; }
};

// Thin-plate kernel for a second-order penalty in two dimensions,
// eta(r) = r^2 log(r) / (8 pi), with eta(0) = 0.
double tps_radial(double r);

// Low-rank bivariate thin-plate spline in mixed-model form.
//
// Columns are ordered null space first ({1, w', h'} on normalized covariates,
// or {w', h'} once centered) followed by the penalized columns. The penalized
// columns are radial functions at the knots, constrained to be orthogonal to
// the polynomials and rotated so that the roughness of the represented
// surface is exactly half the squared norm of the penalized coefficients.
class SurfaceBasis {
 public:
  SurfaceBasis(std::vector<Point2> knots, AxisNormalization normalization, Eigen::MatrixXd penalty,
               Eigen::MatrixXd transform, bool centered = false, Eigen::VectorXd column_offsets = {});

  // Knots in normalized coordinates, lexicographically sorted.
  const std::vector<Point2>& knots() const { return knots_; }
  const AxisNormalization& normalization() const { return normalization_; }

  int basis_dim() const { return null_dim() + penalized_dim(); }
  int null_dim() const { return centered_ ? 2 : 3; }
  int penalized_dim() const { return static_cast<int>(penalty_.rows()); }

  // Roughness penalty S on the constrained radial coordinates; J(f) = d' S d / 2.
  const Eigen::MatrixXd& penalty() const { return penalty_; }
  // Maps penalized coefficients b (identity penalty) to radial coefficients at the knots.
  const Eigen::MatrixXd& transform() const { return transform_; }

  bool centered() const { return centered_; }
  // Constant subtracted from each column after centering (length basis_dim when centered).
  const Eigen::VectorXd& column_offsets() const { return column_offsets_; }

  // Evaluates on raw covariates (normalization applied internally).
  Eigen::MatrixXd evaluate(std::span<const Point2> points) const;
  Eigen::RowVectorXd evaluate(Point2 point) const;
  // Evaluates on already-normalized covariates.
  Eigen::MatrixXd evaluate_normalized(std::span<const Point2> points) const;

  // Radial coefficients (length = number of knots) of the penalized part of `coeffs`.
  Eigen::VectorXd radial_coefficients(const Eigen::VectorXd& coeffs) const;

 private:
  void fill_row(Point2 normalized, double* row) const;

  std::vector<Point2> knots_;
  AxisNormalization normalization_;
  Eigen::MatrixXd penalty_;
  Eigen::MatrixXd transform_;
  bool centered_ = false;
  Eigen::VectorXd column_offsets_;
};

struct BasisOptions {
  int k = 30;
  // Explicit knots in raw covariate units; replaces space-filling selection.
  std::optional<std::vector<Point2>> knots;
};

// Builds a basis of dimension k from the observed covariate pairs.
// Throws TooFewPoints, DegenerateGeometry or SingularPenalty.
SurfaceBasis build_basis(std::span<const Point2> points, int k);
SurfaceBasis build_basis(std::span<const Point2> points, const BasisOptions& options);

Eigen::MatrixXd eval_basis(const SurfaceBasis& basis, std::span<const Point2> points);

// J(f) of the surface with coefficient vector `coeffs` (length basis_dim).
// Throws LengthMismatch.
double roughness(const SurfaceBasis& basis, const Eigen::VectorXd& coeffs);

// Removes the constant column and centers the remaining columns over `points`,
// so fitted values of the returned basis sum to zero over those points.
SurfaceBasis center_constraint(const SurfaceBasis& basis, std::span<const Point2> points);

// Order in which farthest-point selection visits `points`: starts from the
// point farthest from the centroid, then repeatedly adds the point whose
// distance to the chosen set is largest. Ties go to the lower index.
std::vector<std::size_t> farthest_point_order(std::span<const Point2> points, std::size_t count);

// Shift/scale to zero mean and unit standard deviation per axis.
AxisNormalization unit_sd_normalization(std::span<const Point2> points);

// Convex hull (counter-clockwise, no repeated endpoint) and containment test.
std::vector<Point2> convex_hull(std::span<const Point2> points);
bool inside_hull(const std::vector<Point2>& hull, Point2 p, double tolerance = 1e-9);

}  // namespace pairsurf

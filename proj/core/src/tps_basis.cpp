#include "pairsurf/tps_basis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "pairsurf/error.hpp"

namespace pairsurf {

double tps_radial(double r) {
  if (r < 0.0 || std::isnan(r)) {
    throw std::domain_error("tps_radial: distance must be nonnegative");
  }
  if (r == 0.0) return 0.0;
  return r * r * std::log(r) / (8.0 * std::numbers::pi);
}

SurfaceBasis::SurfaceBasis(std::vector<Point2> knots, AxisNormalization normalization, Eigen::MatrixXd penalty,
                           Eigen::MatrixXd transform, bool centered, Eigen::VectorXd column_offsets)
    : knots_(std::move(knots)),
      normalization_(normalization),
      penalty_(std::move(penalty)),
      transform_(std::move(transform)),
      centered_(centered),
      column_offsets_(std::move(column_offsets)) {
  if (transform_.rows() != static_cast<Eigen::Index>(knots_.size()) || transform_.cols() != penalty_.rows() ||
      penalty_.rows() != penalty_.cols()) {
    throw Error(ErrorCode::LengthMismatch, "inconsistent basis dimensions");
  }
  if (centered_ && column_offsets_.size() != basis_dim()) {
    throw Error(ErrorCode::LengthMismatch, "centered basis needs one offset per column");
  }
}

void SurfaceBasis::fill_row(Point2 x, double* row) const {
  // Raw radial row first, then project through the transform.
  const Eigen::Index nk = static_cast<Eigen::Index>(knots_.size());
  Eigen::VectorXd radial(nk);
  for (Eigen::Index k = 0; k < nk; ++k) {
    const double dw = x.w - knots_[static_cast<std::size_t>(k)].w;
    const double dh = x.h - knots_[static_cast<std::size_t>(k)].h;
    radial(k) = tps_radial(std::sqrt(dw * dw + dh * dh));
  }
  int c = 0;
  if (!centered_) row[c++] = 1.0;
  row[c++] = x.w;
  row[c++] = x.h;
  Eigen::Map<Eigen::RowVectorXd>(row + c, penalized_dim()) = radial.transpose() * transform_;
  if (centered_) {
    for (int j = 0; j < basis_dim(); ++j) row[j] -= column_offsets_(j);
  }
}

Eigen::MatrixXd SurfaceBasis::evaluate_normalized(std::span<const Point2> points) const {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      static_cast<Eigen::Index>(points.size()), basis_dim());
  for (std::size_t p = 0; p < points.size(); ++p) {
    fill_row(points[p], out.row(static_cast<Eigen::Index>(p)).data());
  }
  return out;
}

Eigen::MatrixXd SurfaceBasis::evaluate(std::span<const Point2> points) const {
  std::vector<Point2> normalized(points.size());
  std::transform(points.begin(), points.end(), normalized.begin(),
                 [&](const Point2& p) { return normalization_.apply(p); });
  return evaluate_normalized(normalized);
}

Eigen::RowVectorXd SurfaceBasis::evaluate(Point2 point) const {
  Eigen::RowVectorXd row(basis_dim());
  fill_row(normalization_.apply(point), row.data());
  return row;
}

Eigen::VectorXd SurfaceBasis::radial_coefficients(const Eigen::VectorXd& coeffs) const {
  if (coeffs.size() != basis_dim()) {
    throw Error(ErrorCode::LengthMismatch, "coefficient vector has length " + std::to_string(coeffs.size()) +
                                               ", basis has " + std::to_string(basis_dim()) + " columns");
  }
  return transform_ * coeffs.tail(penalized_dim());
}

AxisNormalization unit_sd_normalization(std::span<const Point2> points) {
  const double n = static_cast<double>(points.size());
  double mw = 0.0, mh = 0.0;
  for (const auto& p : points) {
    mw += p.w;
    mh += p.h;
  }
  mw /= n;
  mh /= n;
  double sw = 0.0, sh = 0.0;
  for (const auto& p : points) {
    sw += (p.w - mw) * (p.w - mw);
    sh += (p.h - mh) * (p.h - mh);
  }
  const double denom = std::max(n - 1.0, 1.0);
  sw = std::sqrt(sw / denom);
  sh = std::sqrt(sh / denom);
  if (!(sw > 0.0) || !(sh > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "a surface covariate is constant");
  }
  return {mw, sw, mh, sh};
}

std::vector<std::size_t> farthest_point_order(std::span<const Point2> points, std::size_t count) {
  const std::size_t n = points.size();
  count = std::min(count, n);
  std::vector<std::size_t> order;
  if (count == 0) return order;
  order.reserve(count);

  double cw = 0.0, ch = 0.0;
  for (const auto& p : points) {
    cw += p.w;
    ch += p.h;
  }
  cw /= static_cast<double>(n);
  ch /= static_cast<double>(n);

  auto dist2 = [](const Point2& a, const Point2& b) {
    return (a.w - b.w) * (a.w - b.w) + (a.h - b.h) * (a.h - b.h);
  };
  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dist2(points[i], {cw, ch});
    if (d > best) {
      best = d;
      first = i;
    }
  }
  order.push_back(first);
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = dist2(points[i], points[first]);
  while (order.size() < count) {
    std::size_t next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] > far) {
        far = nearest[i];
        next = i;
      }
    }
    order.push_back(next);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(points[i], points[next]));
  }
  return order;
}

namespace {

// Rank of [1, w, h] over the given normalized points.
int polynomial_rank(std::span<const Point2> pts) {
  Eigen::MatrixXd T(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    T(static_cast<Eigen::Index>(i), 0) = 1.0;
    T(static_cast<Eigen::Index>(i), 1) = pts[i].w;
    T(static_cast<Eigen::Index>(i), 2) = pts[i].h;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(T);
  const auto& s = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-8 * s(0)) ++rank;
  }
  return rank;
}

SurfaceBasis basis_from_knots(std::vector<Point2> knots, const AxisNormalization& norm) {
  std::sort(knots.begin(), knots.end(),
            [](const Point2& a, const Point2& b) { return a.w != b.w ? a.w < b.w : a.h < b.h; });
  if (std::adjacent_find(knots.begin(), knots.end()) != knots.end()) {
    throw Error(ErrorCode::DegenerateGeometry, "duplicated knots");
  }
  if (polynomial_rank(knots) < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "knots are collinear");
  }
  const Eigen::Index nk = static_cast<Eigen::Index>(knots.size());

  Eigen::MatrixXd T(nk, 3);
  Eigen::MatrixXd E(nk, nk);
  for (Eigen::Index a = 0; a < nk; ++a) {
    const auto& ka = knots[static_cast<std::size_t>(a)];
    T(a, 0) = 1.0;
    T(a, 1) = ka.w;
    T(a, 2) = ka.h;
    for (Eigen::Index b = 0; b < nk; ++b) {
      const auto& kb = knots[static_cast<std::size_t>(b)];
      E(a, b) = tps_radial(std::hypot(ka.w - kb.w, ka.h - kb.h));
    }
  }

  // Orthonormal basis of {d : T'd = 0} from the trailing Householder columns.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(T);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(nk, nk);
  const Eigen::MatrixXd Zc = Q.rightCols(nk - 3);

  Eigen::MatrixXd S = 2.0 * Zc.transpose() * E * Zc;
  S = 0.5 * (S + S.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(max_ev > 0.0) || min_ev <= 1e-12 * max_ev) {
    throw Error(ErrorCode::SingularPenalty, "thin-plate penalty is numerically rank deficient");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularPenalty, "thin-plate penalty is not positive definite");
  }
  // b = L' d_R  =>  d = Zc L^{-T} b and d_R' S d_R = b'b.
  const Eigen::MatrixXd Lt = llt.matrixU();
  Eigen::MatrixXd transform = Lt.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(Zc);
  return SurfaceBasis(std::move(knots), norm, std::move(S), std::move(transform));
}

}  // namespace

SurfaceBasis build_basis(std::span<const Point2> points, int k) {
  BasisOptions options;
  options.k = k;
  return build_basis(points, options);
}

SurfaceBasis build_basis(std::span<const Point2> points, const BasisOptions& options) {
  if (options.knots) {
    if (options.knots->size() < 4) {
      throw Error(ErrorCode::TooFewPoints, "at least 4 knots are required");
    }
    const AxisNormalization norm = unit_sd_normalization(points.empty() ? std::span<const Point2>(*options.knots)
                                                                        : points);
    std::vector<Point2> knots;
    for (const auto& p : *options.knots) knots.push_back(norm.apply(p));
    return basis_from_knots(std::move(knots), norm);
  }

  if (options.k < 4) {
    throw Error(ErrorCode::TooFewPoints, "basis dimension must be at least 4");
  }
  if (points.size() < 2) {
    throw Error(ErrorCode::TooFewPoints, "need at least " + std::to_string(options.k) + " distinct points");
  }
  const AxisNormalization norm = unit_sd_normalization(points);

  // Deduplicate in input order.
  std::vector<Point2> unique;
  {
    std::set<std::pair<double, double>> seen;
    for (const auto& p : points) {
      if (seen.emplace(p.w, p.h).second) unique.push_back(norm.apply(p));
    }
  }
  if (unique.size() < static_cast<std::size_t>(options.k)) {
    throw Error(ErrorCode::TooFewPoints, "need at least " + std::to_string(options.k) +
                                             " distinct covariate pairs, found " + std::to_string(unique.size()));
  }
  if (polynomial_rank(unique) < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "covariate pairs are collinear");
  }

  std::vector<Point2> knots;
  for (std::size_t idx : farthest_point_order(unique, static_cast<std::size_t>(options.k))) {
    knots.push_back(unique[idx]);
  }
  return basis_from_knots(std::move(knots), norm);
}

Eigen::MatrixXd eval_basis(const SurfaceBasis& basis, std::span<const Point2> points) {
  return basis.evaluate(points);
}

double roughness(const SurfaceBasis& basis, const Eigen::VectorXd& coeffs) {
  if (coeffs.size() != basis.basis_dim()) {
    throw Error(ErrorCode::LengthMismatch, "coefficient vector has length " + std::to_string(coeffs.size()) +
                                               ", basis has " + std::to_string(basis.basis_dim()) + " columns");
  }
  const Eigen::VectorXd b = coeffs.tail(basis.penalized_dim());
  return 0.5 * b.squaredNorm();
}

SurfaceBasis center_constraint(const SurfaceBasis& basis, std::span<const Point2> points) {
  if (basis.centered()) return basis;
  if (points.empty()) {
    throw Error(ErrorCode::TooFewPoints, "centering needs at least one point");
  }
  const Eigen::MatrixXd B = basis.evaluate(points);
  Eigen::VectorXd offsets = B.rightCols(B.cols() - 1).colwise().mean().transpose();
  return SurfaceBasis(basis.knots(), basis.normalization(), basis.penalty(), basis.transform(), true,
                      std::move(offsets));
}

std::vector<Point2> convex_hull(std::span<const Point2> points) {
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(),
            [](const Point2& a, const Point2& b) { return a.w != b.w ? a.w < b.w : a.h < b.h; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Point2& o, const Point2& a, const Point2& b) {
    return (a.w - o.w) * (b.h - o.h) - (a.h - o.h) * (b.w - o.w);
  };
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<Point2>& hull, Point2 p, double tolerance) {
  if (hull.size() < 3) {
    return std::any_of(hull.begin(), hull.end(), [&](const Point2& q) {
      return std::abs(q.w - p.w) <= tolerance && std::abs(q.h - p.h) <= tolerance;
    });
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % hull.size()];
    const double cross = (b.w - a.w) * (p.h - a.h) - (b.h - a.h) * (p.w - a.w);
    const double scale = std::hypot(b.w - a.w, b.h - a.h);
    if (cross < -tolerance * std::max(scale, 1.0)) return false;
  }
  return true;
}

}  // namespace pairsurf

#include <doctest.h>

#include <random>
#include <set>

#include "pairsurf/design.hpp"
#include "pairsurf/error.hpp"
#include "support/instances.hpp"

using namespace pairsurf;

namespace {

LongitudinalDataset sample(std::uint64_t seed, int subjects = 12, int visits = 6, int groups = 3, int parametric = 1) {
  std::mt19937_64 rng(seed);
  return instances::random_dataset(rng, subjects, visits, groups, parametric);
}

ModelSpec spec_for(SurfaceMode mode, int groups, int k = 8) {
  ModelSpec s;
  s.surface_mode = mode;
  s.num_groups = groups;
  s.basis.k = k;
  s.parametric_terms = {"x1"};
  return s;
}

// Largest residual of projecting the columns of A onto the span of B.
double projection_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
  const Eigen::MatrixXd coef = qr.solve(A);
  return (B * coef - A).cwiseAbs().maxCoeff() / std::max(1.0, A.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("group-specific design layout") {
  const auto ds = sample(1);
  const auto d = assemble(ds, spec_for(SurfaceMode::group_specific, 3));
  const auto N = static_cast<Eigen::Index>(ds.num_observations());
  CHECK(d.rows() == 2 * N);
  CHECK(d.smooths.size() == 6);
  CHECK(d.smoothing.size() == 6);
  CHECK(d.group_intercepts.empty());
  CHECK(d.p() == 2 * (1 + 3 * 3));
  CHECK(d.q() == 2 * 3 * 5);
  for (std::size_t r = 0; r < ds.num_observations(); ++r) {
    CHECK(d.y(static_cast<Eigen::Index>(r)) == ds[r].y1);
    CHECK(d.y(N + static_cast<Eigen::Index>(r)) == ds[r].y2);
  }
  CHECK(d.y == stacked_response(ds, OutcomeSet::paired));

  // Each penalized column belongs to exactly one smoothing parameter.
  std::vector<int> owner(static_cast<std::size_t>(d.q()), -1);
  for (const auto& blk : d.penalty_layout) {
    for (int c = blk.first_col; c < blk.first_col + blk.size; ++c) {
      CHECK(owner[static_cast<std::size_t>(c)] == -1);
      owner[static_cast<std::size_t>(c)] = blk.smoothing_index;
    }
  }
  for (int o : owner) CHECK(o >= 0);

  // Surface columns vanish outside their group and outcome.
  for (const auto& term : d.smooths) {
    for (std::size_t r = 0; r < ds.num_observations(); ++r) {
      const bool own_group = ds.subject_group(ds.row_subject()[r]) == term.group;
      for (int l = 0; l < 2; ++l) {
        const auto row = static_cast<Eigen::Index>(d.row_index(l, r));
        const bool live = own_group && l == term.outcome;
        for (int c : term.fixed_cols) {
          if (!live) CHECK(d.X(row, c) == 0.0);
        }
        for (int c : term.random_cols) {
          if (!live) CHECK(d.Zs(row, c) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("shared modes") {
  const auto ds = sample(2);
  const auto c = assemble(ds, spec_for(SurfaceMode::shared_centered, 3));
  CHECK(c.smooths.size() == 2);
  CHECK(c.group_intercepts.size() == 6);
  CHECK(c.p() == 2 * (1 + 3 + 2));
  CHECK(c.q() == 2 * 5);
  const auto s = assemble(ds, spec_for(SurfaceMode::shared, 3));
  CHECK(s.smooths.size() == 2);
  CHECK(s.group_intercepts.empty());
  CHECK(s.p() == 2 * (1 + 3));
}

TEST_CASE("single outcome designs") {
  const auto ds = sample(3);
  auto spec = spec_for(SurfaceMode::group_specific, 3);
  spec.outcomes = OutcomeSet::second;
  const auto d = assemble(ds, spec);
  CHECK(d.num_outcomes == 1);
  CHECK(d.outcome_ids == std::vector<int>{2});
  CHECK(d.rows() == static_cast<Eigen::Index>(ds.num_observations()));
  CHECK(d.y(0) == ds[0].y2);
}

TEST_CASE("unpenalized designs put every spline column in X") {
  const auto ds = sample(4, 20, 8, 2);
  auto spec = spec_for(SurfaceMode::group_specific, 2, 6);
  spec.penalized = false;
  spec.basis_dims = {{6, 9}, {4, 5}};
  const auto d = assemble(ds, spec);
  CHECK(d.q() == 0);
  CHECK(d.smoothing.empty());
  CHECK(d.p() == 2 + 6 + 9 + 4 + 5);
  for (const auto& t : d.smooths) CHECK(t.smoothing_index == -1);
}

TEST_CASE("null and full specs are nested column spaces") {
  const auto ds = sample(5, 16, 7, 2);
  auto spec = spec_for(SurfaceMode::group_specific, 2, 10);
  for (bool equal : {false, true}) {
    const auto [null_spec, full_spec] = null_and_full_specs(spec, equal);
    CHECK(full_spec.surface_mode == SurfaceMode::group_specific);
    CHECK(null_spec.surface_mode == (equal ? SurfaceMode::shared : SurfaceMode::shared_centered));
    const auto n = assemble(ds, null_spec);
    const auto f = assemble(ds, full_spec);
    Eigen::MatrixXd Cn(n.rows(), n.p() + n.q()), Cf(f.rows(), f.p() + f.q());
    Cn << n.X, n.Zs;
    Cf << f.X, f.Zs;
    CHECK(projection_residual(Cn, Cf) < 1e-8);
  }
  CHECK_THROWS_AS(null_and_full_specs(spec_for(SurfaceMode::shared, 2)), Error);
}

TEST_CASE("assembly errors") {
  const auto ds = sample(6, 12, 6, 3);
  auto code = [&](ModelSpec s) {
    try {
      assemble(ds, s);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code(spec_for(SurfaceMode::group_specific, 2)) == ErrorCode::GroupMismatch);
  auto bad_term = spec_for(SurfaceMode::group_specific, 3);
  bad_term.parametric_terms = {"heart_rate"};
  CHECK(code(bad_term) == ErrorCode::InvalidSpec);
  auto bad_dims = spec_for(SurfaceMode::group_specific, 3);
  bad_dims.basis_dims = {{8, 8}};
  CHECK(code(bad_dims) == ErrorCode::InvalidSpec);

  // A parametric covariate equal to the constant is collinear with the intercept.
  std::vector<Observation> obs = ds.observations();
  for (auto& o : obs) o.parametric = {1.0};
  const auto flat = LongitudinalDataset::from_observations(obs, {"x1"});
  try {
    assemble(flat, spec_for(SurfaceMode::shared, 3));
    FAIL("expected RankDeficientX");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankDeficientX);
  }
  AssemblyOptions lax;
  lax.require_full_rank = false;
  CHECK_NOTHROW(assemble(flat, spec_for(SurfaceMode::shared, 3), lax));
}

TEST_CASE("subject design and response replacement") {
  const auto ds = sample(7, 5, 4, 1);
  auto d = assemble(ds, spec_for(SurfaceMode::shared, 1, 6));
  const Eigen::MatrixXd Zu = d.subject_design();
  CHECK(Zu.rows() == d.rows());
  CHECK(Zu.cols() == 10);
  CHECK((Zu.rowwise().sum().array() == 1.0).all());
  CHECK(Zu(static_cast<Eigen::Index>(d.n_obs), 5) == 1.0);

  std::vector<double> y1(ds.num_observations(), 3.0), y2(ds.num_observations(), 4.0);
  d.set_response(ds.with_outcomes(y1, y2));
  CHECK(d.y(0) == 3.0);
  CHECK(d.y(d.rows() - 1) == 4.0);
}

TEST_CASE("enum names") {
  CHECK(to_string(SurfaceMode::group_specific) == "group_specific");
  CHECK(to_string(ErrorStructure::car1) == "car1_on_time");
  CHECK(to_string(Criterion::reml) == "REML");
  CHECK(to_string(OutcomeSet::paired) == "paired");
}

TEST_CASE("explicit knots reach every smooth") {
  const auto ds = sample(8, 12, 6, 2);
  auto s = spec_for(SurfaceMode::group_specific, 2);
  const std::vector<Point2> knots{{50, 160}, {90, 160}, {50, 185}, {90, 185}, {70, 172}, {60, 178}};
  s.basis.knots = knots;
  const auto d = assemble(ds, s);
  REQUIRE(d.smooths.size() == 4);
  for (const auto& t : d.smooths) {
    REQUIRE(t.basis->knots().size() == knots.size());
    std::vector<Point2> expected;
    for (const auto& p : knots) expected.push_back(t.basis->normalization().apply(p));
    for (const auto& k : t.basis->knots()) {
      bool found = false;
      for (const auto& e : expected) found = found || (std::abs(e.w - k.w) < 1e-12 && std::abs(e.h - k.h) < 1e-12);
      CHECK(found);
    }
  }
  s.basis.knots = std::vector<Point2>{{50, 160}, {60, 170}, {70, 180}, {80, 190}};
  CHECK_THROWS_AS(assemble(ds, s), Error);
}

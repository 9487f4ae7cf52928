#include "pairsurf/design.hpp"

#include <algorithm>
#include <map>

#include "pairsurf/error.hpp"

namespace pairsurf {

std::string to_string(SurfaceMode mode) {
  switch (mode) {
    case SurfaceMode::group_specific: return "group_specific";
    case SurfaceMode::shared_centered: return "shared_centered_with_group_intercepts";
    case SurfaceMode::shared: return "shared";
  }
  return "?";
}

std::string to_string(ErrorStructure e) { return e == ErrorStructure::independent ? "independent" : "car1_on_time"; }
std::string to_string(Criterion c) { return c == Criterion::ml ? "ML" : "REML"; }
std::string to_string(OutcomeSet o) {
  switch (o) {
    case OutcomeSet::paired: return "paired";
    case OutcomeSet::first: return "first";
    case OutcomeSet::second: return "second";
  }
  return "?";
}

Eigen::VectorXd stacked_response(const LongitudinalDataset& ds, OutcomeSet outcomes) {
  const std::size_t n = ds.num_observations();
  const int L = outcomes == OutcomeSet::paired ? 2 : 1;
  Eigen::VectorXd y(static_cast<Eigen::Index>(L * n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& o = ds[r];
    switch (outcomes) {
      case OutcomeSet::paired:
        y(static_cast<Eigen::Index>(r)) = o.y1;
        y(static_cast<Eigen::Index>(n + r)) = o.y2;
        break;
      case OutcomeSet::first: y(static_cast<Eigen::Index>(r)) = o.y1; break;
      case OutcomeSet::second: y(static_cast<Eigen::Index>(r)) = o.y2; break;
    }
  }
  return y;
}

Eigen::MatrixXd AssembledDesign::subject_design() const {
  const Eigen::Index m = static_cast<Eigen::Index>(num_subjects);
  Eigen::MatrixXd Zu = Eigen::MatrixXd::Zero(rows(), num_outcomes * m);
  for (int l = 0; l < num_outcomes; ++l) {
    for (std::size_t i = 0; i < num_subjects; ++i) {
      for (std::size_t r = subject_offsets[i]; r < subject_offsets[i + 1]; ++r) {
        Zu(static_cast<Eigen::Index>(row_index(l, r)), l * m + static_cast<Eigen::Index>(i)) = 1.0;
      }
    }
  }
  return Zu;
}

void AssembledDesign::set_response(const LongitudinalDataset& ds) {
  if (ds.num_observations() != n_obs) {
    throw Error(ErrorCode::LengthMismatch, "dataset does not match the assembled design");
  }
  y = stacked_response(ds, spec.outcomes);
}

namespace {

class BasisCache {
 public:
  BasisCache(std::vector<Point2> points, const BasisOptions& options)
      : points_(std::move(points)), options_(options) {}

  std::shared_ptr<const SurfaceBasis> get(int k, bool centered) {
    auto& slot = centered ? centered_[k] : plain_[k];
    if (!slot) {
      if (centered) {
        slot = std::make_shared<SurfaceBasis>(center_constraint(*get(k, false), points_));
      } else {
        BasisOptions opts = options_;
        if (opts.knots && k != static_cast<int>(opts.knots->size())) opts.knots.reset();
        opts.k = k;
        slot = std::make_shared<SurfaceBasis>(build_basis(points_, opts));
      }
      evaluated_[slot.get()] = slot->evaluate(points_);
    }
    return slot;
  }

  const Eigen::MatrixXd& values(const SurfaceBasis* basis) const { return evaluated_.at(basis); }

 private:
  std::vector<Point2> points_;
  BasisOptions options_;
  std::map<int, std::shared_ptr<const SurfaceBasis>> plain_;
  std::map<int, std::shared_ptr<const SurfaceBasis>> centered_;
  std::map<const SurfaceBasis*, Eigen::MatrixXd> evaluated_;
};

int basis_dim_for(const ModelSpec& spec, int outcome, int group) {
  if (spec.basis_dims.empty()) {
    return spec.basis.knots ? static_cast<int>(spec.basis.knots->size()) : spec.basis.k;
  }
  if (outcome >= static_cast<int>(spec.basis_dims.size())) {
    throw Error(ErrorCode::InvalidSpec, "basis_dims has no entry for outcome " + std::to_string(outcome + 1),
                "basis_dims");
  }
  const auto& row = spec.basis_dims[static_cast<std::size_t>(outcome)];
  const std::size_t idx = spec.surface_mode == SurfaceMode::group_specific ? static_cast<std::size_t>(group - 1) : 0;
  if (idx >= row.size()) {
    throw Error(ErrorCode::InvalidSpec, "basis_dims has no entry for group " + std::to_string(group), "basis_dims");
  }
  return row[idx];
}

}  // namespace

AssembledDesign assemble(const LongitudinalDataset& ds, const ModelSpec& spec, const AssemblyOptions& options) {
  if (spec.num_groups != ds.num_groups()) {
    throw Error(ErrorCode::GroupMismatch,
                "model has " + std::to_string(spec.num_groups) + " groups, data has " +
                    std::to_string(ds.num_groups()),
                "num_groups");
  }

  AssembledDesign d;
  d.spec = spec;
  d.n_obs = ds.num_observations();
  d.num_subjects = ds.num_subjects();
  d.num_groups = ds.num_groups();
  switch (spec.outcomes) {
    case OutcomeSet::paired: d.outcome_ids = {1, 2}; break;
    case OutcomeSet::first: d.outcome_ids = {1}; break;
    case OutcomeSet::second: d.outcome_ids = {2}; break;
  }
  d.num_outcomes = static_cast<int>(d.outcome_ids.size());
  d.y = stacked_response(ds, spec.outcomes);
  d.subject_offsets.reserve(d.num_subjects + 1);
  for (std::size_t i = 0; i < d.num_subjects; ++i) {
    d.subject_offsets.push_back(ds.subject_begin(i));
    d.subject_groups.push_back(ds.subject_group(i));
  }
  d.subject_offsets.push_back(ds.num_observations());
  for (const auto& o : ds.observations()) {
    d.times.push_back(o.time);
    d.covariates.push_back({o.w, o.h});
  }

  std::vector<std::size_t> param_index;
  for (const auto& term : spec.parametric_terms) {
    const auto& names = ds.parametric_names();
    auto it = std::find(names.begin(), names.end(), term);
    if (it == names.end()) {
      throw Error(ErrorCode::InvalidSpec, "parametric term '" + term + "' is not a dataset covariate",
                  "parametric_terms");
    }
    param_index.push_back(static_cast<std::size_t>(it - names.begin()));
  }

  const std::size_t N = d.n_obs;
  const Eigen::Index rows = static_cast<Eigen::Index>(d.num_outcomes * N);
  std::vector<int> row_group(N);
  for (std::size_t r = 0; r < N; ++r) row_group[r] = ds.subject_group(ds.row_subject()[r]);

  BasisCache cache(d.covariates, spec.basis);
  std::vector<Eigen::VectorXd> fixed_cols;
  std::vector<Eigen::VectorXd> random_cols;

  auto add_fixed = [&](Eigen::VectorXd col, std::string name) {
    fixed_cols.push_back(std::move(col));
    d.fixed_names.push_back(std::move(name));
    return static_cast<int>(fixed_cols.size() - 1);
  };

  for (int l = 0; l < d.num_outcomes; ++l) {
    const int oid = d.outcome_ids[static_cast<std::size_t>(l)];
    const std::string tag = std::to_string(oid);
    const Eigen::Index base = static_cast<Eigen::Index>(l * N);

    for (std::size_t t = 0; t < param_index.size(); ++t) {
      Eigen::VectorXd col = Eigen::VectorXd::Zero(rows);
      for (std::size_t r = 0; r < N; ++r) col(base + static_cast<Eigen::Index>(r)) = ds[r].parametric[param_index[t]];
      add_fixed(std::move(col), "psi" + tag + ":" + spec.parametric_terms[t]);
    }

    auto add_surface = [&](int group, bool centered) {
      const int k = basis_dim_for(spec, l, group);
      auto basis = cache.get(k, centered);
      const Eigen::MatrixXd& values = cache.values(basis.get());
      SmoothTerm term;
      term.outcome = l;
      term.group = group;
      term.basis = basis;
      term.label = "f" + tag + (group > 0 ? "[g=" + std::to_string(group) + "]" : "[shared]");
      const int null_dim = spec.penalized ? basis->null_dim() : basis->basis_dim();
      for (int j = 0; j < basis->basis_dim(); ++j) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(rows);
        for (std::size_t r = 0; r < N; ++r) {
          if (group == 0 || row_group[r] == group) col(base + static_cast<Eigen::Index>(r)) = values(static_cast<Eigen::Index>(r), j);
        }
        if (j < null_dim) {
          term.fixed_cols.push_back(add_fixed(std::move(col), term.label + ":" + std::to_string(j)));
        } else {
          random_cols.push_back(std::move(col));
          term.random_cols.push_back(static_cast<int>(random_cols.size() - 1));
        }
      }
      if (spec.penalized) {
        term.smoothing_index = static_cast<int>(d.smoothing.size());
        const std::string pname = l == 0 ? "lambda" : "varphi";
        d.smoothing.push_back({group > 0 ? pname + "[" + std::to_string(group) + "]" : pname, l, group});
        d.penalty_layout.push_back({term.random_cols.front(), static_cast<int>(term.random_cols.size()),
                                    term.smoothing_index});
      }
      d.smooths.push_back(std::move(term));
    };

    switch (spec.surface_mode) {
      case SurfaceMode::group_specific:
        for (int g = 1; g <= d.num_groups; ++g) add_surface(g, false);
        break;
      case SurfaceMode::shared_centered:
        for (int g = 1; g <= d.num_groups; ++g) {
          Eigen::VectorXd col = Eigen::VectorXd::Zero(rows);
          for (std::size_t r = 0; r < N; ++r) {
            if (row_group[r] == g) col(base + static_cast<Eigen::Index>(r)) = 1.0;
          }
          const int c = add_fixed(std::move(col), "intercept" + tag + "[g=" + std::to_string(g) + "]");
          d.group_intercepts.push_back({l, g, c});
        }
        add_surface(0, true);
        break;
      case SurfaceMode::shared:
        add_surface(0, false);
        break;
    }
  }

  d.X.resize(rows, static_cast<Eigen::Index>(fixed_cols.size()));
  for (std::size_t c = 0; c < fixed_cols.size(); ++c) d.X.col(static_cast<Eigen::Index>(c)) = fixed_cols[c];
  d.Zs.resize(rows, static_cast<Eigen::Index>(random_cols.size()));
  for (std::size_t c = 0; c < random_cols.size(); ++c) d.Zs.col(static_cast<Eigen::Index>(c)) = random_cols[c];

  if (options.require_full_rank) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
    qr.setThreshold(1e-10);
    if (qr.rank() < d.X.cols()) {
      throw Error(ErrorCode::RankDeficientX, "fixed-effects matrix has rank " + std::to_string(qr.rank()) +
                                                 " < " + std::to_string(d.X.cols()) + " columns");
    }
  }
  return d;
}

std::pair<ModelSpec, ModelSpec> null_and_full_specs(const ModelSpec& spec, bool equal_intercepts) {
  if (spec.surface_mode != SurfaceMode::group_specific) {
    throw Error(ErrorCode::InvalidSpecPair, "the full model must have group-specific surfaces", "surface_mode");
  }
  ModelSpec null_spec = spec;
  null_spec.surface_mode = equal_intercepts ? SurfaceMode::shared : SurfaceMode::shared_centered;
  if (!spec.basis_dims.empty()) {
    // The shared surface takes the smallest group basis so its span is
    // contained in every group's span.
    null_spec.basis_dims.clear();
    for (const auto& row : spec.basis_dims) {
      null_spec.basis_dims.push_back({*std::min_element(row.begin(), row.end())});
    }
  }
  return {null_spec, spec};
}

}  // namespace pairsurf

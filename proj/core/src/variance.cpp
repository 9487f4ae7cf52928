#include "pairsurf/variance.hpp"

#include <algorithm>
#include <cmath>

#include "pairsurf/error.hpp"

namespace pairsurf {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

double fisher_z_bound() { return std::atanh(1.0 - 1e-6); }

Eigen::MatrixXd VarianceComponents::subject_cov(int outcomes) const {
  if (outcomes == 1) return Eigen::MatrixXd::Constant(1, 1, sigma1_sq);
  Eigen::MatrixXd S(2, 2);
  const double c = rho * std::sqrt(sigma1_sq * sigma2_sq);
  S << sigma1_sq, c, c, sigma2_sq;
  return S;
}

Eigen::VectorXd VarianceComponents::error_var(int outcomes) const {
  if (outcomes == 1) return Eigen::VectorXd::Constant(1, sigma_eps_sq);
  return Eigen::Vector2d(sigma_eps_sq, sigma_eps_sq * delta * delta);
}

void VarianceComponents::validate(int outcomes) const {
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidSpec, std::string(key) + " must be positive", key);
  };
  positive(sigma1_sq, "sigma1_sq");
  positive(sigma_eps_sq, "sigma_eps_sq");
  if (outcomes == 2) {
    positive(sigma2_sq, "sigma2_sq");
    positive(delta, "delta");
    if (!(std::abs(rho) < 1.0)) throw Error(ErrorCode::InvalidSpec, "rho must lie in (-1, 1)", "rho");
  }
  if (ar_corr && !(*ar_corr >= 0.0 && *ar_corr < 1.0)) {
    throw Error(ErrorCode::InvalidSpec, "ar_corr must lie in [0, 1)", "ar_corr");
  }
}

std::vector<double> smoothing_logs(const VarianceComponents& tau, const AssembledDesign& design) {
  std::vector<double> out;
  std::size_t i1 = 0, i2 = 0;
  for (const auto& s : design.smoothing) {
    const auto& src = s.outcome == 0 ? tau.log_lambda : tau.log_varphi;
    std::size_t& i = s.outcome == 0 ? i1 : i2;
    if (i >= src.size()) {
      throw Error(ErrorCode::InvalidSpec, "missing smoothing parameter " + s.name,
                  s.outcome == 0 ? "log_lambda" : "log_varphi");
    }
    out.push_back(src[i++]);
  }
  return out;
}

void set_smoothing_logs(VarianceComponents& tau, const AssembledDesign& design, const std::vector<double>& logs) {
  tau.log_lambda.clear();
  tau.log_varphi.clear();
  for (std::size_t k = 0; k < design.smoothing.size(); ++k) {
    (design.smoothing[k].outcome == 0 ? tau.log_lambda : tau.log_varphi).push_back(logs[k]);
  }
}

ParameterLayout::ParameterLayout(const AssembledDesign& design)
    : design_(&design),
      outcomes_(design.num_outcomes),
      car1_(design.spec.error_structure == ErrorStructure::car1) {
  for (std::size_t k = 0; k < design.smoothing.size(); ++k) {
    slots_.push_back({ParamKind::log_smoothing, static_cast<int>(k), "log " + design.smoothing[k].name,
                      -kLogSmoothingBound, kLogSmoothingBound});
  }
  slots_.push_back({ParamKind::log_sigma1_sq, -1, "log sigma1^2", -kLogVarianceBound, kLogVarianceBound});
  if (outcomes_ == 2) {
    slots_.push_back({ParamKind::log_sigma2_sq, -1, "log sigma2^2", -kLogVarianceBound, kLogVarianceBound});
    slots_.push_back({ParamKind::fisher_z_rho, -1, "atanh rho", -fisher_z_bound(), fisher_z_bound()});
  }
  slots_.push_back({ParamKind::log_sigma_eps_sq, -1, "log sigma_eps^2", -kLogVarianceBound, kLogVarianceBound});
  if (outcomes_ == 2) {
    slots_.push_back({ParamKind::log_delta, -1, "log delta", -kLogVarianceBound / 2, kLogVarianceBound / 2});
  }
  if (car1_) slots_.push_back({ParamKind::logit_ar_corr, -1, "logit ar_corr", -kLogitBound, kLogitBound});
}

Eigen::Index ParameterLayout::index_of(ParamKind kind, int smoothing_index) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].kind == kind && (kind != ParamKind::log_smoothing || slots_[i].smoothing_index == smoothing_index)) {
      return static_cast<Eigen::Index>(i);
    }
  }
  return -1;
}

Eigen::VectorXd ParameterLayout::to_vector(const VarianceComponents& tau) const {
  const auto logs = smoothing_logs(tau, *design_);
  Eigen::VectorXd x(size());
  for (Eigen::Index i = 0; i < size(); ++i) {
    const auto& s = slots_[static_cast<std::size_t>(i)];
    switch (s.kind) {
      case ParamKind::log_smoothing: x(i) = logs[static_cast<std::size_t>(s.smoothing_index)]; break;
      case ParamKind::log_sigma1_sq: x(i) = std::log(tau.sigma1_sq); break;
      case ParamKind::log_sigma2_sq: x(i) = std::log(tau.sigma2_sq); break;
      case ParamKind::fisher_z_rho: x(i) = std::atanh(tau.rho); break;
      case ParamKind::log_sigma_eps_sq: x(i) = std::log(tau.sigma_eps_sq); break;
      case ParamKind::log_delta: x(i) = std::log(tau.delta); break;
      case ParamKind::logit_ar_corr: {
        const double phi = std::clamp(tau.ar_corr.value_or(0.0), logistic(-kLogitBound), logistic(kLogitBound));
        x(i) = logit(phi);
        break;
      }
    }
  }
  return clamp(x);
}

VarianceComponents ParameterLayout::from_vector(const Eigen::VectorXd& x) const {
  VarianceComponents tau;
  std::vector<double> logs(design_->smoothing.size(), 0.0);
  for (Eigen::Index i = 0; i < size(); ++i) {
    const auto& s = slots_[static_cast<std::size_t>(i)];
    switch (s.kind) {
      case ParamKind::log_smoothing: logs[static_cast<std::size_t>(s.smoothing_index)] = x(i); break;
      case ParamKind::log_sigma1_sq: tau.sigma1_sq = std::exp(x(i)); break;
      case ParamKind::log_sigma2_sq: tau.sigma2_sq = std::exp(x(i)); break;
      case ParamKind::fisher_z_rho: tau.rho = std::tanh(x(i)); break;
      case ParamKind::log_sigma_eps_sq: tau.sigma_eps_sq = std::exp(x(i)); break;
      case ParamKind::log_delta: tau.delta = std::exp(x(i)); break;
      case ParamKind::logit_ar_corr: tau.ar_corr = logistic(x(i)); break;
    }
  }
  if (outcomes_ == 1) {
    tau.sigma2_sq = tau.sigma1_sq;
    tau.rho = 0.0;
    tau.delta = 1.0;
  }
  set_smoothing_logs(tau, *design_, logs);
  return tau;
}

Eigen::VectorXd ParameterLayout::lower() const {
  Eigen::VectorXd v(size());
  for (Eigen::Index i = 0; i < size(); ++i) v(i) = slots_[static_cast<std::size_t>(i)].lower;
  return v;
}

Eigen::VectorXd ParameterLayout::upper() const {
  Eigen::VectorXd v(size());
  for (Eigen::Index i = 0; i < size(); ++i) v(i) = slots_[static_cast<std::size_t>(i)].upper;
  return v;
}

Eigen::VectorXd ParameterLayout::clamp(const Eigen::VectorXd& x) const {
  return x.cwiseMax(lower()).cwiseMin(upper());
}

}  // namespace pairsurf

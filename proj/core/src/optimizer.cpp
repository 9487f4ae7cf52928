#include "pairsurf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace pairsurf {

namespace {

constexpr double kBoundEps = 1e-10;

Eigen::VectorXd clamp_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Coordinates held at a bound because the gradient pushes outward.
std::vector<bool> active_set(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi) {
  std::vector<bool> active(static_cast<std::size_t>(x.size()), false);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const bool at_lo = x(i) <= lo(i) + kBoundEps && g(i) > 0.0;
    const bool at_hi = x(i) >= hi(i) - kBoundEps && g(i) < 0.0;
    active[static_cast<std::size_t>(i)] = at_lo || at_hi;
  }
  return active;
}

// Inverse of the finite-difference Hessian with eigenvalues made positive;
// identity when any probe fails.
Eigen::MatrixXd fd_inverse_hessian(const Objective& objective, const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int& evaluations) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd gp(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = 1e-4 * std::max(1.0, std::abs(x(j)));
    const double step = x(j) + h <= hi(j) ? h : -h;
    Eigen::VectorXd xp = x;
    xp(j) += step;
    if (step < 0.0 && xp(j) < lo(j)) return Eigen::MatrixXd::Identity(n, n);
    double f = 0.0;
    ++evaluations;
    if (!objective(xp, f, &gp) || !gp.allFinite()) return Eigen::MatrixXd::Identity(n, n);
    H.col(j) = (gp - g) / step;
  }
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
  const double top = ev.maxCoeff();
  if (!(top > 0.0) || !std::isfinite(top)) return Eigen::MatrixXd::Identity(n, n);
  ev = ev.cwiseMax(1e-8 * top);
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lower,
                               const Eigen::VectorXd& upper) {
  const auto active = active_set(x, g, lower, upper);
  double n = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!active[static_cast<std::size_t>(i)]) n = std::max(n, std::abs(g(i)));
  }
  return n;
}

OptimizerResult minimize_bfgs(const Objective& objective, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper, const OptimizerOptions& options) {
  OptimizerResult res;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = clamp_box(x0, lower, upper);
  double f = 0.0;
  Eigen::VectorXd g(n);
  ++res.evaluations;
  if (!objective(x, f, &g)) {
    res.x = x;
    res.f = std::numeric_limits<double>::infinity();
    res.gradient = Eigen::VectorXd::Zero(n);
    res.message = "objective undefined at the starting point";
    return res;
  }
  if (n == 0) {
    res.x = x;
    res.f = f;
    res.gradient = g;
    res.converged = true;
    res.message = "no free parameters";
    return res;
  }

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  if (options.initial_inverse_hessian.rows() == n && options.initial_inverse_hessian.cols() == n) {
    Hinv = options.initial_inverse_hessian;
    fresh = false;
  } else if (options.fd_initial_hessian) {
    Hinv = fd_inverse_hessian(objective, x, g, lower, upper, res.evaluations);
    fresh = false;
  }
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    if (projected_gradient_norm(x, g, lower, upper) < options.gradient_tolerance) {
      res.converged = true;
      res.message = "projected gradient below tolerance";
      break;
    }
    const auto active = active_set(x, g, lower, upper);
    Eigen::VectorXd gf = g;
    Eigen::MatrixXd Hf = Hinv;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (active[static_cast<std::size_t>(i)]) {
        gf(i) = 0.0;
        Hf.row(i).setZero();
        Hf.col(i).setZero();
      }
    }
    Eigen::VectorXd d = -Hf * gf;
    if (!(d.dot(gf) < 0.0)) {
      Hinv.setIdentity();
      fresh = true;
      d = -gf;
    }
    const double dmax = d.cwiseAbs().maxCoeff();
    if (dmax > options.max_step) d *= options.max_step / dmax;

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd xn, gn(n);
    double fn = 0.0;
    for (int k = 0; k < 50; ++k, t *= 0.5) {
      xn = clamp_box(x + t * d, lower, upper);
      if ((xn - x).cwiseAbs().maxCoeff() == 0.0) break;
      ++res.evaluations;
      if (objective(xn, fn, &gn) && std::isfinite(fn) && fn <= f + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!fresh) {
        Hinv.setIdentity();
        fresh = true;
        continue;
      }
      res.message = "line search failed";
      break;
    }

    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd yv = gn - g;
    const double df = f - fn;
    x = xn;
    f = fn;
    g = gn;

    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (fresh) Hinv = Eigen::MatrixXd::Identity(n, n) * (sy / yv.squaredNorm());
      const double r = 1.0 / sy;
      const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - r * s * yv.transpose();
      Hinv = A * Hinv * A.transpose() + r * s * s.transpose();
      fresh = false;
    }

    if (std::abs(df) <= options.relative_f_tolerance * (1.0 + std::abs(f)) &&
        s.cwiseAbs().maxCoeff() <= options.x_tolerance) {
      if (projected_gradient_norm(x, g, lower, upper) < 1e-3) {
        res.converged = true;
        res.message = "criterion and parameter changes below tolerance";
        break;
      }
      if (!fresh) {
        Hinv.setIdentity();
        fresh = true;
      } else {
        res.message = "stalled with a large gradient";
        break;
      }
    }
  }
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  res.x = x;
  res.f = f;
  res.gradient = g;
  res.inverse_hessian = Hinv;
  return res;
}

OptimizerResult minimize_nelder_mead(const Objective& objective, const Eigen::VectorXd& x0,
                                     const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                     int max_evaluations, double initial_step) {
  OptimizerResult res;
  const Eigen::Index n = x0.size();
  auto eval = [&](const Eigen::VectorXd& x) {
    double f = 0.0;
    ++res.evaluations;
    if (!objective(x, f, nullptr) || !std::isfinite(f)) return std::numeric_limits<double>::infinity();
    return f;
  };

  std::vector<Eigen::VectorXd> simplex;
  std::vector<double> fv;
  simplex.push_back(clamp_box(x0, lower, upper));
  fv.push_back(eval(simplex[0]));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v = simplex[0];
    v(i) += (v(i) + initial_step <= upper(i)) ? initial_step : -initial_step;
    v = clamp_box(v, lower, upper);
    simplex.push_back(v);
    fv.push_back(eval(v));
  }

  std::vector<std::size_t> order(simplex.size());
  while (res.evaluations < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    ++res.iterations;
    if (std::isfinite(fv[worst]) && std::abs(fv[worst] - fv[best]) <= 1e-10 * (1.0 + std::abs(fv[best]))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += simplex[order[k]];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = clamp_box(centroid + (centroid - simplex[worst]), lower, upper);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const Eigen::VectorXd xe = clamp_box(centroid + 2.0 * (centroid - simplex[worst]), lower, upper);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        fv[worst] = fe;
      } else {
        simplex[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      simplex[worst] = xr;
      fv[worst] = fr;
    } else {
      const Eigen::VectorXd xc = clamp_box(centroid + 0.5 * (simplex[worst] - centroid), lower, upper);
      const double fc = eval(xc);
      if (fc < fv[worst]) {
        simplex[worst] = xc;
        fv[worst] = fc;
      } else {
        for (std::size_t k = 1; k < order.size(); ++k) {
          auto& v = simplex[order[k]];
          v = simplex[best] + 0.5 * (v - simplex[best]);
          fv[order[k]] = eval(v);
        }
      }
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  res.x = simplex[static_cast<std::size_t>(it - fv.begin())];
  res.f = *it;
  res.message = res.converged ? "simplex collapsed" : "evaluation limit reached";
  return res;
}

}  // namespace pairsurf

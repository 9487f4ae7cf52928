#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "pairsurf/tps_basis.hpp"

namespace quadrature {

// J(f) = integral over the plane of f_ww^2 + 2 f_wh^2 + f_hh^2 for a function
// given only through point evaluations. Second derivatives come from central
// differences with a step proportional to the distance from the origin; the
// plane is mapped to (-1, 1)^2 by x = c t / (1 - t^2) and integrated with
// composite Gauss-Legendre rules.
inline double roughness_integral(const std::function<double(double, double)>& f, double c = 1.5,
                                 int panels = 40) {
  using Rule = boost::math::quadrature::gauss<double, 8>;
  std::vector<double> t, wt;
  const double width = 2.0 / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = -1.0 + p * width;
    const double mid = a + 0.5 * width, half = 0.5 * width;
    const auto& x = Rule::abscissa();
    const auto& w = Rule::weights();
    for (std::size_t k = 0; k < x.size(); ++k) {
      for (int s : {-1, 1}) {
        if (x[k] == 0.0 && s == 1) continue;
        t.push_back(mid + s * half * x[k]);
        wt.push_back(half * w[k]);
      }
    }
  }
  std::vector<double> xs(t.size()), jac(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = 1.0 - t[i] * t[i];
    xs[i] = c * t[i] / d;
    jac[i] = c * (1.0 + t[i] * t[i]) / (d * d);
  }

  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double w = xs[i], h = xs[j];
      const double e = 1e-3 * std::max(1.0, std::hypot(w, h));
      const double f0 = f(w, h);
      const double fww = (f(w + e, h) - 2.0 * f0 + f(w - e, h)) / (e * e);
      const double fhh = (f(w, h + e) - 2.0 * f0 + f(w, h - e)) / (e * e);
      const double fwh = (f(w + e, h + e) - f(w + e, h - e) - f(w - e, h + e) + f(w - e, h - e)) / (4.0 * e * e);
      total += wt[i] * wt[j] * jac[i] * jac[j] * (fww * fww + 2.0 * fwh * fwh + fhh * fhh);
    }
  }
  return total;
}

}  // namespace quadrature

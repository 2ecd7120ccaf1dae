#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace aigen {

/// Central-difference gradient: (f(x + h e_i) − f(x − h e_i)) / 2h per component.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x, double h) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// max_i |a_i − b_i| / max(|a|_∞, |b|_∞, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

}  // namespace aigen

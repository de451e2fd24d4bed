#pragma once

#include <functional>
#include <vector>

// Finite-difference oracles used to pin expected derivative values. These
// stay independent of the tape machinery they check.
namespace testsupport {

template <typename F>
double central_diff(const F& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

template <typename F>
double second_central_diff(const F& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

// Component-wise central differences of a multivariate scalar function.
template <typename F>
std::vector<double> gradient_fd(const F& f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double hi = f(x);
    x[i] = orig - h;
    const double lo = f(x);
    x[i] = orig;
    g[i] = (hi - lo) / (2.0 * h);
  }
  return g;
}

template <typename F>
double hessian_diag_fd(const F& f, std::vector<double> x, std::size_t i,
                       double h) {
  const double orig = x[i];
  const double mid = f(x);
  x[i] = orig + h;
  const double hi = f(x);
  x[i] = orig - h;
  const double lo = f(x);
  return (hi - 2.0 * mid + lo) / (h * h);
}

inline bool close_rel(double a, double b, double rel, double abs = 1e-12) {
  const double diff = a > b ? a - b : b - a;
  const double mag = (b < 0 ? -b : b);
  return diff <= abs + rel * mag;
}

}  // namespace testsupport

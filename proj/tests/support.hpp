#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace hyem::check {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t d, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  const double r = max_norm * std::pow(u(rng), 1.0 / static_cast<double>(d));
  for (auto& x : v) x *= r / std::sqrt(s);
  return v;
}

/// Central-difference derivative of f along coordinate i of x.
inline double central_difference(const std::function<double()>& f, double& xi, double h = 1e-6) {
  const double keep = xi;
  xi = keep + h;
  const double fp = f();
  xi = keep - h;
  const double fm = f();
  xi = keep;
  return (fp - fm) / (2.0 * h);
}

/// max |a - b| / max(1, |a|, |b|) style relative error used by the gradient checks.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b)));
}

}  // namespace hyem::check

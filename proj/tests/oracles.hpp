#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// it is used to check.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <functional>
#include <random>

namespace oracle {

using Complex = std::complex<double>;
using Mat = Eigen::MatrixXcd;

/// Truncated Taylor series with plain halving/squaring; independent of the
/// Pade path in the library.
inline Mat taylor_exp(const Mat& a, int terms = 40) {
  const double nrm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (std::ldexp(nrm, -s) > 0.25) ++s;
  const Mat as = a / std::ldexp(1.0, s);
  Mat sum = Mat::Identity(a.rows(), a.cols());
  Mat term = sum;
  for (int k = 1; k <= terms; ++k) {
    term = term * as / static_cast<double>(k);
    sum += term;
  }
  for (int k = 0; k < s; ++k) sum = sum * sum;
  return sum;
}

inline Mat eigen_exp(const Mat& a) { return a.exp(); }

inline Mat random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, 1.0);
  Mat out(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) = scale * Complex(d(rng), d(rng));
  return out;
}

inline Mat random_hermitian(std::mt19937_64& rng, int n, double scale = 1.0) {
  Mat a = random_matrix(rng, n, n, scale);
  return 0.5 * (a + a.adjoint());
}

inline Mat random_unitary(std::mt19937_64& rng, int n) {
  Eigen::HouseholderQR<Mat> qr(random_matrix(rng, n, n));
  return qr.householderQ() * Mat::Identity(n, n);
}

/// Classical fixed-step RK4 with N steps; no adaptivity.
inline Mat fixed_rk4(const std::function<Mat(double)>& k, double s0, double s1, Mat y, int steps) {
  const double h = (s1 - s0) / steps;
  for (int i = 0; i < steps; ++i) {
    const double s = s0 + i * h;
    const Mat k1 = k(s) * y;
    const Mat k2 = k(s + h / 2) * (y + h / 2 * k1);
    const Mat k3 = k(s + h / 2) * (y + h / 2 * k2);
    const Mat k4 = k(s + h) * (y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return y;
}

/// Central differences of a matrix-valued function.
inline Mat fd1(const std::function<Mat(double)>& f, double x, double h) { return (f(x + h) - f(x - h)) / (2 * h); }
inline Mat fd2(const std::function<Mat(double)>& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

/// Fourth-order five-point stencils.
inline Mat fd1_5(const std::function<Mat(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2 * h)) / (12 * h);
}
inline Mat fd2_5(const std::function<Mat(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2 * h)) / (12 * h * h);
}

}  // namespace oracle

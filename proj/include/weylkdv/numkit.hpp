#pragma once

// Dense complex matrix kernels: structural block matrices, matrix exponential,
// adaptive integration of linear (and matrix-valued nonlinear) ODEs, the
// linear-fractional transform of 2x2 block matrices, and checked inversion.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "weylkdv/errors.hpp"

namespace weylkdv {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = std::vector<double>;

inline constexpr Complex kI{0.0, 1.0};

inline ComplexMatrix identity(Eigen::Index n) { return ComplexMatrix::Identity(n, n); }
inline ComplexMatrix zeros(Eigen::Index r, Eigen::Index c) { return ComplexMatrix::Zero(r, c); }

/// m x m block (i, j) of a 2m x 2m matrix, zero-based block indices.
inline ComplexMatrix block_of(const ComplexMatrix& a, int i, int j) {
  const Eigen::Index m = a.rows() / 2;
  return a.block(i * m, j * m, m, m);
}

inline ComplexMatrix block2x2(const ComplexMatrix& a11, const ComplexMatrix& a12,
                              const ComplexMatrix& a21, const ComplexMatrix& a22) {
  const Eigen::Index r1 = a11.rows(), r2 = a21.rows(), c1 = a11.cols(), c2 = a12.cols();
  if (a12.rows() != r1 || a22.rows() != r2 || a21.cols() != c1 || a22.cols() != c2)
    throw InvalidInput("block2x2: inconsistent block dimensions");
  ComplexMatrix out(r1 + r2, c1 + c2);
  out << a11, a12, a21, a22;
  return out;
}

inline ComplexMatrix hermitian_part(const ComplexMatrix& a) { return 0.5 * (a + a.adjoint()); }

/// (A - A*)/(2i), the imaginary part of a square matrix.
inline ComplexMatrix imag_part(const ComplexMatrix& a) { return (a - a.adjoint()) / (2.0 * kI); }

inline bool is_hermitian(const ComplexMatrix& a, double rel_tol = 1e-12) {
  return a.rows() == a.cols() && (a - a.adjoint()).norm() <= rel_tol * (1.0 + a.norm());
}

inline Eigen::VectorXd hermitian_eigenvalues(const ComplexMatrix& a) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hermitian_part(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double min_hermitian_eig(const ComplexMatrix& a) { return hermitian_eigenvalues(a).minCoeff(); }
inline double max_hermitian_eig(const ComplexMatrix& a) { return hermitian_eigenvalues(a).maxCoeff(); }

inline bool all_finite(const ComplexMatrix& a) {
  for (Eigen::Index k = 0; k < a.size(); ++k)
    if (!std::isfinite(a.data()[k].real()) || !std::isfinite(a.data()[k].imag())) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Checked inversion. Every inverse carries a 1-norm condition estimate.

struct LuFactor {
  Eigen::PartialPivLU<ComplexMatrix> lu;
  double condition = std::numeric_limits<double>::infinity();
};

inline LuFactor factor(const ComplexMatrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) throw InvalidInput("factor: matrix must be square and non-empty");
  LuFactor f;
  if (!all_finite(a)) return f;
  f.lu.compute(a);
  const double rc = f.lu.rcond();
  f.condition = (rc > 0.0 && std::isfinite(rc)) ? 1.0 / rc : std::numeric_limits<double>::infinity();
  return f;
}

inline double condition_estimate(const ComplexMatrix& a) { return factor(a).condition; }

inline constexpr double kDefaultConditionLimit = 1e12;

/// A^{-1}; throws SingularMatrixError when the condition estimate reaches `limit`.
inline ComplexMatrix checked_inverse(const ComplexMatrix& a, const char* what = "inverse",
                                     double limit = kDefaultConditionLimit) {
  auto f = factor(a);
  if (!(f.condition < limit)) throw SingularMatrixError(what, f.condition);
  return f.lu.inverse();
}

/// X D^{-1} via a factorization of D^T.
inline ComplexMatrix solve_right(const ComplexMatrix& x, const ComplexMatrix& d, const char* what = "solve_right",
                                 double limit = kDefaultConditionLimit) {
  if (x.cols() != d.rows()) throw InvalidInput("solve_right: dimension mismatch");
  auto f = factor(d.transpose());
  if (!(f.condition < limit)) throw SingularMatrixError(what, f.condition);
  return f.lu.solve(x.transpose()).transpose();
}

/// D^{-1} X.
inline ComplexMatrix solve_left(const ComplexMatrix& d, const ComplexMatrix& x, const char* what = "solve_left",
                                double limit = kDefaultConditionLimit) {
  if (x.rows() != d.cols()) throw InvalidInput("solve_left: dimension mismatch");
  auto f = factor(d);
  if (!(f.condition < limit)) throw SingularMatrixError(what, f.condition);
  return f.lu.solve(x);
}

// ---------------------------------------------------------------------------
// Structural matrices J, Sigma_3, J_1, T and K.

struct StructuralSet {
  Eigen::Index m = 0;
  ComplexMatrix J;       // [[0, I], [I, 0]]
  ComplexMatrix Sigma3;  // diag(I, -I)
  ComplexMatrix J1;      // i [[0, -I], [I, 0]] = T J T*
  ComplexMatrix T;       // (1/sqrt 2) [[iI, I], [iI, -I]]
  ComplexMatrix K;       // (1/sqrt 2) [[I, -I], [I, I]]
};

inline StructuralSet structural_matrices(Eigen::Index m) {
  if (m < 1) throw InvalidInput("structural_matrices: block size must be >= 1");
  const ComplexMatrix I = identity(m);
  const ComplexMatrix O = zeros(m, m);
  const double r = 1.0 / std::sqrt(2.0);
  StructuralSet s;
  s.m = m;
  s.J = block2x2(O, I, I, O);
  s.Sigma3 = block2x2(I, O, O, -I);
  s.J1 = kI * block2x2(O, -I, I, O);
  s.T = r * block2x2(kI * I, I, kI * I, -I);
  s.K = r * block2x2(I, -I, I, I);
  return s;
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with diagonal Pade approximants of
// degree 3, 5, 7, 9 or 13 selected by the 1-norm.

namespace detail {

inline double one_norm(const ComplexMatrix& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

template <std::size_t N>
inline void pade_terms(const std::array<double, N>& b, const ComplexMatrix& a, ComplexMatrix& u, ComplexMatrix& v) {
  // Degrees 3..9: U = A * sum_{odd} b_k A^{k-1}, V = sum_{even} b_k A^k.
  const Eigen::Index n = a.rows();
  const ComplexMatrix a2 = a * a;
  ComplexMatrix power = identity(n);
  ComplexMatrix uu = b[1] * power;
  v = b[0] * power;
  for (std::size_t k = 2; k < N; k += 2) {
    power = power * a2;
    v += b[k] * power;
    if (k + 1 < N) uu += b[k + 1] * power;
  }
  u = a * uu;
}

}  // namespace detail

inline ComplexMatrix mat_exp(const ComplexMatrix& a) {
  if (a.rows() != a.cols()) throw InvalidInput("mat_exp: matrix must be square");
  const Eigen::Index n = a.rows();
  if (n == 0) return a;
  if (!all_finite(a)) throw RangeError("mat_exp: non-finite input");

  static constexpr std::array<double, 4> b3{120., 60., 12., 1.};
  static constexpr std::array<double, 6> b5{30240., 15120., 3360., 420., 30., 1.};
  static constexpr std::array<double, 8> b7{17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
  static constexpr std::array<double, 10> b9{17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                             2162160.,     110880.,      3960.,        90.,        1.};
  static constexpr std::array<double, 14> b13{
      64764752532480000., 32382376266240000., 7771770303897600., 1187353796428800., 129060195264000.,
      10559470521600.,    670442572800.,      33522128640.,      1323241920.,      40840800.,
      960960.,            16380.,             182.,              1.};
  static constexpr std::array<double, 4> theta{1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1,
                                               2.097847961257068e0};
  constexpr double theta13 = 5.371920351148152e0;

  const double norm1 = detail::one_norm(a);
  if (norm1 > 1e5) throw RangeError("mat_exp: norm too large, result would overflow");

  ComplexMatrix u, v;
  int squarings = 0;
  if (norm1 <= theta[0]) {
    detail::pade_terms(b3, a, u, v);
  } else if (norm1 <= theta[1]) {
    detail::pade_terms(b5, a, u, v);
  } else if (norm1 <= theta[2]) {
    detail::pade_terms(b7, a, u, v);
  } else if (norm1 <= theta[3]) {
    detail::pade_terms(b9, a, u, v);
  } else {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    const ComplexMatrix as = a / std::ldexp(1.0, squarings);
    const ComplexMatrix I = identity(n);
    const ComplexMatrix a2 = as * as, a4 = a2 * a2, a6 = a4 * a2;
    u = as * (a6 * (b13[13] * a6 + b13[11] * a4 + b13[9] * a2) + b13[7] * a6 + b13[5] * a4 + b13[3] * a2 +
              b13[1] * I);
    v = a6 * (b13[12] * a6 + b13[10] * a4 + b13[8] * a2) + b13[6] * a6 + b13[4] * a4 + b13[2] * a2 + b13[0] * I;
  }
  ComplexMatrix result = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) result = result * result;
  if (!all_finite(result)) throw RangeError("mat_exp: overflow");
  return result;
}

// ---------------------------------------------------------------------------
// Adaptive classical RK4 with step doubling. The two half steps are
// Richardson-extrapolated; the step is accepted when the doubling estimate is
// below tol * |h| * max(1, |y|_inf), i.e. error per unit step.

struct OdeOptions {
  double tol = 1e-10;
  double initial_step = 1e-2;
  double min_step = 1e-13;
  double max_step = 0.0;  // 0: unlimited
  std::size_t max_steps = 20'000'000;
  // steps whose error estimate is below rounding_floor * eps * max(1, |y|_inf)
  // are accepted regardless of tol; the estimate carries no information there
  double rounding_floor = 32.0;
};

struct OdeStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evaluations = 0;
};

namespace detail {

template <class Rhs>
ComplexMatrix eval_rhs(Rhs& rhs, double s, const ComplexMatrix& y, OdeStats& st) {
  ComplexMatrix k = rhs(s, y);
  ++st.rhs_evaluations;
  if (k.rows() != y.rows() || k.cols() != y.cols()) throw InvalidInput("ODE right-hand side has wrong shape");
  if (!all_finite(k)) throw IntegrationError("non-finite coefficient values at s=" + std::to_string(s));
  return k;
}

template <class Rhs>
ComplexMatrix rk4_step(Rhs& rhs, double s, const ComplexMatrix& y, const ComplexMatrix& k1, double h, OdeStats& st) {
  const ComplexMatrix k2 = eval_rhs(rhs, s + 0.5 * h, y + (0.5 * h) * k1, st);
  const ComplexMatrix k3 = eval_rhs(rhs, s + 0.5 * h, y + (0.5 * h) * k2, st);
  const ComplexMatrix k4 = eval_rhs(rhs, s + h, y + h * k3, st);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Integrates y' = rhs(s, y) from s0 through each checkpoint (monotone, all in
/// the same direction from s0) and returns y at every checkpoint.
template <class Rhs>
std::vector<ComplexMatrix> integrate_checkpoints(Rhs&& rhs, double s0, std::span<const double> checkpoints,
                                                 ComplexMatrix y0, const OdeOptions& opt = {},
                                                 OdeStats* stats = nullptr) {
  if (!(opt.tol > 0.0)) throw InvalidInput("ODE tolerance must be positive");
  if (!all_finite(y0)) throw IntegrationError("non-finite initial value");
  OdeStats local;
  OdeStats& st = stats ? *stats : local;

  std::vector<ComplexMatrix> out;
  out.reserve(checkpoints.size());
  double s = s0;
  ComplexMatrix y = std::move(y0);
  double h_abs = opt.initial_step;
  double dir = 0.0;

  for (double target : checkpoints) {
    if (!std::isfinite(target)) throw InvalidInput("non-finite integration endpoint");
    const double d = target - s;
    if (d != 0.0) {
      const double nd = d > 0 ? 1.0 : -1.0;
      if (dir != 0.0 && nd != dir) throw InvalidInput("checkpoints must be monotone");
      dir = nd;
    }
    while (s != target) {
      if (st.accepted + st.rejected >= opt.max_steps) throw IntegrationError("step-count limit exceeded");
      const double remaining = std::abs(target - s);
      if (opt.max_step > 0.0) h_abs = std::min(h_abs, opt.max_step);
      bool last = false;
      double h_try = h_abs;
      if (h_try >= remaining) {
        h_try = remaining;
        last = true;
      }
      const double h = dir * h_try;

      const ComplexMatrix k1 = detail::eval_rhs(rhs, s, y, st);
      const ComplexMatrix full = detail::rk4_step(rhs, s, y, k1, h, st);
      const ComplexMatrix mid = detail::rk4_step(rhs, s, y, k1, 0.5 * h, st);
      const ComplexMatrix kmid = detail::eval_rhs(rhs, s + 0.5 * h, mid, st);
      const ComplexMatrix two = detail::rk4_step(rhs, s + 0.5 * h, mid, kmid, 0.5 * h, st);

      const ComplexMatrix diff = two - full;
      const double err = diff.cwiseAbs().maxCoeff() / 15.0;
      const double scale = std::max({1.0, y.cwiseAbs().maxCoeff(), two.cwiseAbs().maxCoeff()});
      const double allowed =
          std::max(opt.tol * h_try, opt.rounding_floor * std::numeric_limits<double>::epsilon()) * scale;
      if (!std::isfinite(err)) throw IntegrationError("non-finite solution");

      if (err <= allowed) {
        y = two + diff / 15.0;
        s = last ? target : s + h;
        ++st.accepted;
        const double fac = err == 0.0 ? 4.0 : std::clamp(0.9 * std::pow(allowed / err, 0.25), 0.2, 4.0);
        if (!last || fac < 1.0) h_abs = h_try * fac;
      } else {
        ++st.rejected;
        h_abs = h_try * std::clamp(0.9 * std::pow(allowed / err, 0.25), 0.1, 0.9);
        if (h_abs < opt.min_step) throw IntegrationError("step size underflow at s=" + std::to_string(s));
      }
    }
    out.push_back(y);
  }
  return out;
}

template <class Rhs>
ComplexMatrix integrate(Rhs&& rhs, double s0, double s1, ComplexMatrix y0, const OdeOptions& opt = {},
                        OdeStats* stats = nullptr) {
  const std::array<double, 1> cp{s1};
  return integrate_checkpoints(std::forward<Rhs>(rhs), s0, cp, std::move(y0), opt, stats).front();
}

using CoefficientFn = std::function<ComplexMatrix(double)>;

/// Y(s1) for Y' = K(s) Y, Y(s0) = Y0.
inline ComplexMatrix solve_linear_matrix_ode(const CoefficientFn& coeff, double s0, double s1,
                                             const ComplexMatrix& y0, double tol = 1e-10,
                                             OdeStats* stats = nullptr) {
  OdeOptions opt;
  opt.tol = tol;
  auto rhs = [&](double s, const ComplexMatrix& y) -> ComplexMatrix {
    const ComplexMatrix k = coeff(s);
    if (k.rows() != k.cols() || k.cols() != y.rows()) throw InvalidInput("coefficient has wrong shape");
    return k * y;
  };
  return integrate(rhs, s0, s1, y0, opt, stats);
}

// ---------------------------------------------------------------------------
// Linear-fractional transform i (A11 P + A12 Q)(A21 P + A22 Q)^{-1}.

inline ComplexMatrix lft(const ComplexMatrix& a, const ComplexMatrix& p, const ComplexMatrix& q,
                         double limit = kDefaultConditionLimit) {
  const Eigen::Index m = p.rows();
  if (a.rows() != 2 * m || a.cols() != 2 * m || p.cols() != m || q.rows() != m || q.cols() != m)
    throw InvalidInput("lft: expected 2m x 2m coefficient and m x m pair");
  const ComplexMatrix num = a.topLeftCorner(m, m) * p + a.topRightCorner(m, m) * q;
  const ComplexMatrix den = a.bottomLeftCorner(m, m) * p + a.bottomRightCorner(m, m) * q;
  return kI * solve_right(num, den, "lft: near-singular denominator", limit);
}

// ---------------------------------------------------------------------------
// Quadrature used only by cross-checks.

inline ComplexMatrix adaptive_simpson(const std::function<ComplexMatrix(double)>& f, double a, double b,
                                      double tol = 1e-11, int max_depth = 40) {
  struct Rec {
    const std::function<ComplexMatrix(double)>& f;
    ComplexMatrix go(double a, double b, const ComplexMatrix& fa, const ComplexMatrix& fm, const ComplexMatrix& fb,
                     const ComplexMatrix& whole, double tol, int depth) const {
      const double m = 0.5 * (a + b);
      const ComplexMatrix flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
      const ComplexMatrix left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const ComplexMatrix right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const ComplexMatrix delta = left + right - whole;
      if (depth <= 0 || delta.cwiseAbs().maxCoeff() <= 15.0 * tol) return left + right + delta / 15.0;
      return go(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + go(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  };
  if (a == b) {
    const ComplexMatrix fa = f(a);
    return ComplexMatrix::Zero(fa.rows(), fa.cols());
  }
  const ComplexMatrix fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const ComplexMatrix whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return Rec{f}.go(a, b, fa, fm, fb, whole, tol, max_depth);
}

// ---------------------------------------------------------------------------
// Node-parallel sweeps. Each index is handled by exactly one worker, so the
// result does not depend on the thread count.

inline unsigned default_threads() {
  if (const char* env = std::getenv("WEYL_KDV_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace weylkdv

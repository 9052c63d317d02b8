#pragma once

// Time evolution of the Weyl function for the quarter-plane problem with
// u(0,t) = u_xx(0,t) = 0:
//
//   R'(t) = T* (-F(0,t,conj z)*) T R,   R(0) = I,
//   M(t)  = i((-i) r11 M0 + r12)((-i) r21 M0 + r22)^{-1},
//
// the Dirac-type transform R~ = Z^{-1} R Z with zeta = -4 z^{3/2}, the M_D
// formula and low-energy non-existence diagnostics.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weylkdv/diagnostics.hpp"
#include "weylkdv/explicit.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"
#include "weylkdv/triples.hpp"
#include "weylkdv/weyl.hpp"

namespace weylkdv {

/// t -> u_x(0, t) on [0, t_max]; values are checked to be Hermitian.
class BoundaryTrace {
public:
  using Fn = std::function<ComplexMatrix(double)>;

  BoundaryTrace(Fn fn, Eigen::Index m, double t_max) : fn_(std::move(fn)), m_(m), t_max_(t_max) {
    if (m_ < 1) throw InvalidInput("boundary trace needs m >= 1");
    if (!(t_max_ >= 0.0) || !std::isfinite(t_max_)) throw InvalidInput("boundary trace needs finite t_max >= 0");
  }

  ComplexMatrix operator()(double t) const {
    if (!(t >= 0.0 && t <= t_max_ * (1.0 + 1e-12) + 1e-300))
      throw InvalidInput("t=" + format_double(t) + " outside the trace domain [0, " + format_double(t_max_) + "]");
    ComplexMatrix v = fn_(t);
    if (v.rows() != m_ || v.cols() != m_) throw InvalidInput("boundary trace returned a block of the wrong size");
    if (!all_finite(v)) throw IntegrationError("non-finite boundary trace at t=" + format_double(t));
    if ((v - v.adjoint()).norm() > 1e-10 * (1.0 + v.norm()))
      throw InvalidInput("boundary trace is not Hermitian at t=" + format_double(t));
    return v;
  }

  Eigen::Index m() const { return m_; }
  double t_max() const { return t_max_; }

private:
  Fn fn_;
  Eigen::Index m_;
  double t_max_;
};

inline BoundaryTrace zero_trace(Eigen::Index m, double t_max) {
  return {[m](double) { return zeros(m, m); }, m, t_max};
}

inline BoundaryTrace constant_trace(const ComplexMatrix& ux, double t_max) {
  return {[ux](double) { return ux; }, ux.rows(), t_max};
}

/// u_x(0, t) of the explicit solution; the symmetric part is taken to remove
/// rounding asymmetry.
inline BoundaryTrace trace_from_triple(const AdmissibleTriple& tr, double t_max) {
  auto sol = std::make_shared<const ExplicitSolution>(tr);
  return {[sol](double t) { return hermitian_part(sol->derivatives(0.0, t).u_x); }, tr.m(), t_max};
}

/// -F(0, t, conj z)* = [[-u_x, -4 z^2 I], [4 z I, u_x]].
inline ComplexMatrix boundary_F_star(double t, Complex z, const BoundaryTrace& trace) {
  const Eigen::Index m = trace.m();
  const ComplexMatrix ux = trace(t);
  return block2x2(-ux, (-4.0 * z * z) * identity(m), (4.0 * z) * identity(m), ux);
}

inline ComplexMatrix propagator_generator(double t, Complex z, const BoundaryTrace& trace) {
  const ComplexMatrix T = structural_matrices(trace.m()).T;
  return T.adjoint() * boundary_F_star(t, z, trace) * T;
}

/// R(t, z) at increasing times from one integration.
inline std::vector<ComplexMatrix> R_solve(const BoundaryTrace& trace, Complex z, std::span<const double> ts,
                                          double tol = 1e-11) {
  OdeOptions opt;
  opt.tol = tol;
  const ComplexMatrix T = structural_matrices(trace.m()).T;
  const ComplexMatrix Ts = T.adjoint();
  return integrate_checkpoints(
      [&](double s, const ComplexMatrix& r) -> ComplexMatrix { return Ts * (boundary_F_star(s, z, trace) * (T * r)); },
      0.0, ts, identity(2 * trace.m()), opt);
}

inline ComplexMatrix R_solve(const BoundaryTrace& trace, Complex z, double t, double tol = 1e-11) {
  const std::array<double, 1> ts{t};
  return R_solve(trace, z, ts, tol).front();
}

/// Precomputed R(t_k, z) on a time grid.
class Propagator {
public:
  Propagator(const BoundaryTrace& trace, Complex z, std::vector<double> ts, double tol = 1e-11)
      : z_(z), ts_(std::move(ts)), R_(R_solve(trace, z, std::span<const double>(ts_), tol)) {}

  Complex z() const { return z_; }
  const std::vector<double>& times() const { return ts_; }
  const std::vector<ComplexMatrix>& values() const { return R_; }

private:
  Complex z_;
  std::vector<double> ts_;
  std::vector<ComplexMatrix> R_;
};

// ---------------------------------------------------------------------------
// Dirac-type transform.

/// Z(z) = T* diag(I, z^{-1/2} I) T*.
inline ComplexMatrix dirac_Z(Eigen::Index m, Complex z) {
  if (z == Complex(0.0, 0.0)) throw InvalidInput("Z(z) is undefined at z = 0");
  const ComplexMatrix Ts = structural_matrices(m).T.adjoint();
  return Ts * block2x2(identity(m), zeros(m, m), zeros(m, m), (1.0 / sqrt_upper(z)) * identity(m)) * Ts;
}

/// Z(z)^{-1} = T diag(I, sqrt z I) T (T is unitary).
inline ComplexMatrix dirac_Z_inverse(Eigen::Index m, Complex z) {
  if (z == Complex(0.0, 0.0)) throw InvalidInput("Z(z) is undefined at z = 0");
  const ComplexMatrix T = structural_matrices(m).T;
  return T * block2x2(identity(m), zeros(m, m), zeros(m, m), sqrt_upper(z) * identity(m)) * T;
}

/// zeta = -4 z^{3/2} with the upper-half-plane root.
inline Complex dirac_zeta(Complex z) { return -4.0 * z * sqrt_upper(z); }

/// 2pi/3 < arg z < pi.
inline bool in_dirac_sector(Complex z) {
  const double a = std::arg(z);
  return a > 2.0 * std::numbers::pi / 3.0 && a < std::numbers::pi;
}

struct DiracTransform {
  ComplexMatrix Z;
  Complex zeta;
  ComplexMatrix Rt;  // Z^{-1} R Z
  bool in_sector = false;
};

inline DiracTransform dirac_transform(const ComplexMatrix& R, Complex z) {
  const Eigen::Index m = R.rows() / 2;
  DiracTransform d;
  d.Z = dirac_Z(m, z);
  d.zeta = dirac_zeta(z);
  d.Rt = dirac_Z_inverse(m, z) * R * d.Z;
  d.in_sector = in_dirac_sector(z);
  return d;
}

inline DiracTransform dirac_transform(const BoundaryTrace& trace, Complex z, double t) {
  return dirac_transform(R_solve(trace, z, t), z);
}

/// Direct integration of R~' = (i zeta Sigma3 - diag(u_x, u_x) J) R~, R~(0) = I.
inline ComplexMatrix dirac_direct(const BoundaryTrace& trace, Complex zeta, double t, double tol = 1e-11) {
  const Eigen::Index m = trace.m();
  const auto s = structural_matrices(m);
  const ComplexMatrix base = (kI * zeta) * s.Sigma3;
  OdeOptions opt;
  opt.tol = tol;
  return integrate(
      [&](double tau, const ComplexMatrix& r) -> ComplexMatrix {
        const ComplexMatrix ux = trace(tau);
        const ComplexMatrix D = block2x2(ux, zeros(m, m), zeros(m, m), ux);
        return (base - D * s.J) * r;
      },
      0.0, t, identity(2 * m), opt);
}

/// Closed-form propagator for the zero trace: Z e^{i t zeta Sigma3} Z^{-1}.
inline ComplexMatrix R_trivial(Eigen::Index m, Complex z, double t) {
  const Complex zeta = dirac_zeta(z);
  const Complex ep = std::exp(kI * t * zeta), em = std::exp(-kI * t * zeta);
  const ComplexMatrix E = block2x2(ep * identity(m), zeros(m, m), zeros(m, m), em * identity(m));
  return dirac_Z(m, z) * E * dirac_Z_inverse(m, z);
}

// ---------------------------------------------------------------------------
// Evolution map and M_D.

/// i((-i) r11 M0 + r12)((-i) r21 M0 + r22)^{-1}.
inline ComplexMatrix evolve_M(const ComplexMatrix& M0, const ComplexMatrix& R, double limit = kDefaultConditionLimit) {
  const Eigen::Index m = M0.rows();
  if (M0.cols() != m || R.rows() != 2 * m || R.cols() != 2 * m) throw InvalidInput("evolve_M: size mismatch");
  const ComplexMatrix num = -kI * R.topLeftCorner(m, m) * M0 + R.topRightCorner(m, m);
  const ComplexMatrix den = -kI * R.bottomLeftCorner(m, m) * M0 + R.bottomRightCorner(m, m);
  return kI * solve_right(num, den, "evolve_M: singular denominator", limit);
}

/// M(t, z) = evolve_M(M0(z), R(t, z)) for a fixed trace.
inline WeylEvaluator evolved_evaluator(WeylEvaluator M0, BoundaryTrace trace, double t) {
  const Eigen::Index m = M0.m();
  return {WeylPath::evolved, m,
          [M0 = std::move(M0), trace = std::move(trace), t](Complex z) { return evolve_M(M0(z), R_solve(trace, z, t)); }};
}

/// M_D(-4 z^{3/2}) = z^{-1/2} (I + M0)(I - M0)^{-1}.
inline ComplexMatrix MD_from_M0(const ComplexMatrix& M0, Complex z, double limit = kDefaultConditionLimit) {
  if (z == Complex(0.0, 0.0)) throw InvalidInput("M_D is undefined at z = 0");
  const Eigen::Index m = M0.rows();
  const ComplexMatrix I = identity(m);
  return (1.0 / sqrt_upper(z)) * solve_right(I + M0, I - M0, "M_D: I - M0 singular", limit);
}

inline ComplexMatrix MD_from_M0(const WeylEvaluator& M0, Complex z) { return MD_from_M0(M0(z), z); }

// ---------------------------------------------------------------------------
// Monitors.

/// 1.1 * sup |u| over the valid nodes of a grid.
inline double bound_constant(const SolutionGrid& g) {
  double s = 0.0;
  for (std::size_t k = 0; k < g.u.size(); ++k) {
    if (!g.valid[k]) continue;
    s = std::max(s, hermitian_eigenvalues(hermitian_part(g.u[k])).cwiseAbs().maxCoeff());
  }
  return 1.1 * s;
}

/// min eig of R*JR - J (when Im z > 0 and Re z > C/4), min eig of
/// Sigma3 - R~* Sigma3 R~ (when Im zeta > 0) and max |det R - 1| over the samples.
inline DiagnosticsReport expansivity_monitors(const BoundaryTrace& trace, Complex z, const std::vector<double>& ts,
                                              double C) {
  if (!(z.imag() > 0.0)) throw InvalidInput("expansivity monitors need Im z > 0");
  const Eigen::Index m = trace.m();
  const auto s = structural_matrices(m);
  DiagnosticsReport rep;
  rep.title = "expansivity";
  const auto Rs = R_solve(trace, z, std::span<const double>(ts));
  const Complex zeta = dirac_zeta(z);
  const ComplexMatrix Z = dirac_Z(m, z), Zi = dirac_Z_inverse(m, z);
  double j_min = std::numeric_limits<double>::infinity(), s_min = j_min, det_def = 0.0, r_max = 0.0;
  for (const auto& R : Rs) {
    j_min = std::min(j_min, min_hermitian_eig(hermitian_part(R.adjoint() * s.J * R - s.J)));
    const ComplexMatrix Rt = Zi * R * Z;
    s_min = std::min(s_min, min_hermitian_eig(hermitian_part(s.Sigma3 - Rt.adjoint() * s.Sigma3 * Rt)));
    det_def = std::max(det_def, std::abs(R.determinant() - 1.0));
    r_max = std::max(r_max, R.cwiseAbs().maxCoeff());
  }
  // products of entries of size |R| cancel in det R and R*JR
  const double rounding = std::numeric_limits<double>::epsilon() * r_max * r_max;
  if (rounding > 1e-9)
    rep.notes.push_back("max |R_ij| = " + format_double(r_max) + ": rounding floor eps |R|^2 = " + format_double(rounding) +
                        " is comparable to the 1e-8 thresholds");
  if (z.real() > C / 4.0)
    rep.add_lower("j_expansivity_min_eig", j_min, -1e-8);
  else
    rep.notes.push_back("Re z <= C/4: R*JR - J not monitored");
  if (zeta.imag() > 0.0)
    rep.add_lower("sigma3_min_eig", s_min, -1e-8);
  else
    rep.notes.push_back("Im zeta <= 0: Sigma3 - R~*Sigma3 R~ not monitored");
  rep.add_upper("det_defect", det_def, 1e-8);
  rep.verdict = rep.all_passed() ? "EXPANSIVE" : "VIOLATED";
  return rep;
}

// ---------------------------------------------------------------------------
// Non-existence diagnostics.

struct RaySpec {
  double arg = 5.0 * std::numbers::pi / 6.0;
  double r_max = 1e-1;
  double r_min = 1e-4;
  int count = 13;
};

inline std::vector<double> ray_radii(const RaySpec& ray) {
  if (!(ray.r_min > 0.0 && ray.r_max > ray.r_min) || ray.count < 3) throw InvalidInput("invalid ray specification");
  std::vector<double> r(static_cast<std::size_t>(ray.count));
  const double a = std::log(ray.r_max), b = std::log(ray.r_min);
  for (int k = 0; k < ray.count; ++k) r[static_cast<std::size_t>(k)] = std::exp(a + (b - a) * k / (ray.count - 1));
  return r;
}

struct MDSample {
  double r = 0.0;
  Complex z;
  double min_imag_eig = 0.0;
  ComplexMatrix MD;
};

inline constexpr double kHerglotzViolation = -0.1;

struct NonexistenceDiagnosis {
  std::optional<AdmissibleTriple> triple;
  std::string family;  // s19, s31 or custom
  RaySpec ray;
  std::vector<MDSample> samples;
  double fitted_exponent = std::nan("");
  ComplexMatrix fitted_coefficient;
  double expected_exponent = std::nan("");
  ComplexMatrix expected_coefficient;  // empty when unknown
  std::string verdict;
  DiagnosticsReport report;

  Json to_json() const {
    Json j;
    j["triple"] = triple ? triple_to_json(*triple) : Json(nullptr);
    j["family"] = family;
    j["ray"] = {{"arg", ray.arg}, {"r_max", ray.r_max}, {"r_min", ray.r_min}, {"count", ray.count}};
    j["samples"] = Json::array();
    for (const auto& s : samples)
      j["samples"].push_back({{"r", s.r}, {"minImagEig", s.min_imag_eig}, {"MD", matrix_to_json(s.MD)}});
    j["fittedExponent"] = fitted_exponent;
    j["fittedCoefficient"] = matrix_to_json(fitted_coefficient);
    j["verdict"] = verdict;
    j["assumptions"] = "the limit of M(t, z) as t -> infinity is assumed to be the trivial Weyl function; not verified";
    j["report"] = report.to_json();
    return j;
  }
};

/// Samples M_D on the ray z = r e^{i arg}, fits log |M_D| against log r for the
/// exponent p, rounds p to a half-integer and fits M_D z^{-p} on {1, sqrt z, z};
/// the constant term is the leading coefficient.
inline NonexistenceDiagnosis nonexistence_diagnose(const WeylEvaluator& M0, const RaySpec& ray = {},
                                                   unsigned threads = 1) {
  NonexistenceDiagnosis d;
  d.family = "custom";
  d.ray = ray;
  d.triple = M0.triple();
  const auto rs = ray_radii(ray);
  d.samples.resize(rs.size());
  parallel_for(rs.size(), threads, [&](std::size_t k) {
    MDSample s;
    s.r = rs[k];
    s.z = std::polar(rs[k], ray.arg);
    s.MD = MD_from_M0(M0, s.z);
    s.min_imag_eig = min_hermitian_eig(imag_part(s.MD));
    d.samples[k] = std::move(s);
  });

  std::vector<double> norms;
  std::vector<Complex> zs;
  for (const auto& s : d.samples) {
    norms.push_back(s.MD.norm());
    zs.push_back(s.z);
  }
  d.fitted_exponent = detail::loglog_slope(rs, norms);
  const int twice_p = static_cast<int>(std::lround(2.0 * d.fitted_exponent));
  std::vector<ComplexMatrix> scaled;
  for (const auto& s : d.samples) scaled.push_back(s.MD * std::pow(sqrt_upper(s.z), -twice_p));
  d.fitted_coefficient = detail::fit_sqrt_series(zs, scaled)[0];

  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& s : d.samples) min_eig = std::min(min_eig, s.min_imag_eig);
  d.report.title = "nonexistence";
  d.report.add("min_imag_eig_MD", min_eig, kHerglotzViolation, min_eig > kHerglotzViolation,
               "Herglotz violation when <= threshold");
  d.report.add("fitted_exponent", d.fitted_exponent, std::nan(""), true);
  d.report.notes.push_back("the limit of M(t, z) as t -> infinity is assumed to be the trivial Weyl function; not verified");
  if (!in_dirac_sector(std::polar(1.0, ray.arg))) d.report.notes.push_back("ray lies outside the sector 2pi/3 < arg z < pi");
  d.verdict = min_eig <= kHerglotzViolation ? "NON_EXISTENT" : "INCONCLUSIVE";
  d.report.verdict = d.verdict;
  return d;
}

/// Triples with alpha = 0, theta2 = 0, c > 0 use the s25 closed form (expected
/// M_D ~ -c z^{-3/2}); s31 triples use the s34 closed form (expected
/// M_D ~ theta1* alpha^{-1} theta1 z^{-1/2}).
inline NonexistenceDiagnosis nonexistence_diagnose(const AdmissibleTriple& tr, const RaySpec& ray = {},
                                                   unsigned threads = 1) {
  const auto flags = classify_family(tr);
  std::string family;
  WeylEvaluator ev = closed_trivial_evaluator(tr.m());
  double p = 0.0;
  ComplexMatrix coef;
  if (flags.satisfies_s19) {
    if (!(min_hermitian_eig(tr.c_hat()) > 0.0)) throw FamilyMismatch("non-existence test needs c = theta1* theta1 > 0");
    family = "s19";
    ev = closed_s25_evaluator(tr);
    p = -1.5;
    coef = -tr.c_hat();
  } else if (flags.satisfies_s31) {
    family = "s31";
    ev = closed_s34_evaluator(tr);
    p = -0.5;
    coef = theta_alpha_inverse_theta(tr);
  } else {
    throw FamilyMismatch("non-existence test needs an s19 or s31 triple: " + flags.note);
  }
  auto d = nonexistence_diagnose(WeylEvaluator(ev.path(), tr.m(), [ev](Complex z) { return ev(z); }, tr), ray, threads);
  d.family = family;
  d.expected_exponent = p;
  d.expected_coefficient = coef;
  d.report.add_upper("exponent_error", std::abs(d.fitted_exponent - p), 0.05);
  d.report.add_upper("coefficient_rel_error", (d.fitted_coefficient - coef).norm() / coef.norm(), 0.02);
  return d;
}

}  // namespace weylkdv

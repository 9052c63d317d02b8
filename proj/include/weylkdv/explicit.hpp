#pragma once

// Explicit matrix-KdV solutions generated by an admissible triple:
//
//   Lambda(x,t) = e^{x beta + 4t beta^3} [theta1; theta2],  beta = [[0, alpha], [-I, 0]],
//   S(x,t)      = I + P1 [0  e^{x beta + 4t beta^3}] e^{x omega + 4t omega^3} [P1*; 0],
//   u           = 2 (O22^2 + O12 + O21),  Okj = Lambda_k* S^{-1} Lambda_j,
//
// which solves u_t + 3(u u_x + u_x u) - u_xxx = 0 where S is invertible.

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "weylkdv/diagnostics.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"
#include "weylkdv/triples.hpp"

namespace weylkdv {

/// condS at or above this marks S(x,t) as singular.
inline constexpr double kSingularityThreshold = 1e10;

struct GeneratorState {
  ComplexMatrix beta;   // 2n x 2n
  ComplexMatrix omega;  // 4n x 4n, [[beta*, 0], [b, -beta]]
  ComplexMatrix b;      // 2n x 2n, [theta1; theta2][theta1* theta2*]
  ComplexMatrix P1;     // n x 2n, [0 I]
};

inline GeneratorState make_generator(const AdmissibleTriple& tr) {
  const Eigen::Index n = tr.n();
  GeneratorState g;
  g.beta = block2x2(zeros(n, n), tr.alpha(), -identity(n), zeros(n, n));
  ComplexMatrix theta(2 * n, tr.m());
  theta << tr.theta1(), tr.theta2();
  g.b = theta * theta.adjoint();
  g.omega = block2x2(g.beta.adjoint(), zeros(2 * n, 2 * n), g.b, -g.beta);
  g.P1 = zeros(n, 2 * n);
  g.P1.rightCols(n) = identity(n);
  return g;
}

struct EvaluationPoint {
  ComplexMatrix Lambda1;  // n x m
  ComplexMatrix Lambda2;  // n x m
  ComplexMatrix S;        // n x n
  double condS = 0.0;
  bool invertible = false;
};

/// max(1, |S|_1) * |S^{-1}|_1. S is I plus a generated term, so the identity
/// scale is the reference even when |S| is small.
inline double s_condition(const ComplexMatrix& s) {
  const auto f = factor(s);
  if (!std::isfinite(f.condition)) return f.condition;
  const double norm1 = s.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 == 0.0) return std::numeric_limits<double>::infinity();
  return std::max(1.0, norm1) * f.condition / norm1;
}

struct SolutionDerivatives {
  ComplexMatrix u;
  ComplexMatrix u_x;
  ComplexMatrix expr13;  // 3u^2 - u_xx
  ComplexMatrix expr14;  // d/dx (3u^2 - u_xx)

  ComplexMatrix u_xx() const { return 3.0 * u * u - expr13; }
  ComplexMatrix u_xxx() const { return 3.0 * (u * u_x + u_x * u) - expr14; }
};

class ExplicitSolution {
public:
  explicit ExplicitSolution(AdmissibleTriple triple)
      : triple_(std::move(triple)), gen_(make_generator(triple_)) {
    beta3_ = gen_.beta * gen_.beta * gen_.beta;
    omega3_ = gen_.omega * gen_.omega * gen_.omega;
    theta_.resize(2 * triple_.n(), triple_.m());
    theta_ << triple_.theta1(), triple_.theta2();
  }

  const AdmissibleTriple& triple() const { return triple_; }
  const GeneratorState& generator() const { return gen_; }
  Eigen::Index n() const { return triple_.n(); }
  Eigen::Index m() const { return triple_.m(); }

  EvaluationPoint point(double x, double t) const {
    const Eigen::Index n = triple_.n();
    const ComplexMatrix e = mat_exp(x * gen_.beta + (4.0 * t) * beta3_);
    const ComplexMatrix w = mat_exp(x * gen_.omega + (4.0 * t) * omega3_);
    const ComplexMatrix lambda = e * theta_;
    EvaluationPoint p;
    p.Lambda1 = lambda.topRows(n);
    p.Lambda2 = lambda.bottomRows(n);
    // [P1*; 0] selects columns n..2n-1 of w; [0 e] picks its lower 2n rows.
    p.S = identity(n) + (e * w.block(2 * n, n, 2 * n, n)).bottomRows(n);
    p.condS = s_condition(p.S);
    p.invertible = p.condS < kSingularityThreshold;
    return p;
  }

  Complex det_S(double x, double t) const { return point(x, t).S.determinant(); }

  ComplexMatrix u(double x, double t) const {
    const auto p = point(x, t);
    if (!p.invertible) throw SingularSError(x, t, p.condS);
    const auto lu = factor(p.S);
    const ComplexMatrix sl2 = lu.lu.solve(p.Lambda2);
    const ComplexMatrix o22 = p.Lambda2.adjoint() * sl2;
    const ComplexMatrix o12 = p.Lambda1.adjoint() * sl2;
    const ComplexMatrix o21 = p.Lambda2.adjoint() * lu.lu.solve(p.Lambda1);
    return 2.0 * (o22 * o22 + o12 + o21);
  }

  SolutionDerivatives derivatives(double x, double t) const {
    const auto p = point(x, t);
    if (!p.invertible) throw SingularSError(x, t, p.condS);
    const auto& a = triple_.alpha();
    const ComplexMatrix ah = a.adjoint();
    const auto& L1 = p.Lambda1;
    const auto& L2 = p.Lambda2;
    const auto lu = factor(p.S);
    const ComplexMatrix SiL1 = lu.lu.solve(L1), SiL2 = lu.lu.solve(L2);
    const ComplexMatrix SiaL1 = lu.lu.solve(a * L1), SiaL2 = lu.lu.solve(a * L2);
    const ComplexMatrix Sia2L2 = lu.lu.solve(a * a * L2);
    // alpha* S^{-1} applied on the right of Lambda_k*: (S^{-*} alpha Lambda_k)*.
    const ComplexMatrix L1ah = L1.adjoint() * ah, L2ah = L2.adjoint() * ah;

    const ComplexMatrix O11 = L1.adjoint() * SiL1;
    const ComplexMatrix O12 = L1.adjoint() * SiL2;
    const ComplexMatrix O21 = L2.adjoint() * SiL1;
    const ComplexMatrix O22 = L2.adjoint() * SiL2;

    // X_{p,q}^{a*} := Lambda_p* alpha* S^{-1} Lambda_q, X_{p,q}^{a} := Lambda_p* S^{-1} alpha Lambda_q
    const ComplexMatrix A22s = L2ah * SiL2, A21s = L2ah * SiL1, A11s = L1ah * SiL1, A12s = L1ah * SiL2;
    const ComplexMatrix A22 = L2.adjoint() * SiaL2, A21 = L2.adjoint() * SiaL1, A11 = L1.adjoint() * SiaL1,
                        A12 = L1.adjoint() * SiaL2;
    const ComplexMatrix A22ss = L2ah * ah * SiL2;   // Lambda2* alpha*^2 S^{-1} Lambda2
    const ComplexMatrix A22aa = L2.adjoint() * Sia2L2;  // Lambda2* S^{-1} alpha^2 Lambda2

    SolutionDerivatives d;
    d.u = 2.0 * (O22 * O22 + O12 + O21);
    d.u_x = 2.0 * (A22s + A22 - 2.0 * O11 - O12 * O22 - O22 * O21) - d.u * O22 - O22 * d.u;
    d.expr13 = 8.0 * (O21 * O12 + A22 * O22 + O22 * A22s + A21 + A12s);
    d.expr14 = 8.0 * (A22ss - A11s - A12s * O22 + A22aa - A11 - O22 * A21 - A22 * (O22 * O22 + O21) -
                      (A21 + A12 + O22 * A22) * O22 - (O22 * O22 + O12) * A22s -
                      O22 * (A21s + A12s + A22s * O22) - (O22 * O21 + O11) * O12 - O21 * (O12 * O22 + O11));
    return d;
  }

private:
  AdmissibleTriple triple_;
  GeneratorState gen_;
  ComplexMatrix beta3_, omega3_, theta_;
};

inline EvaluationPoint lambda_S(const AdmissibleTriple& tr, double x, double t) {
  return ExplicitSolution(tr).point(x, t);
}

inline ComplexMatrix u_eval(const AdmissibleTriple& tr, double x, double t) { return ExplicitSolution(tr).u(x, t); }

inline SolutionDerivatives u_derivatives(const AdmissibleTriple& tr, double x, double t) {
  return ExplicitSolution(tr).derivatives(x, t);
}

/// I + int_0^x Lambda2 Lambda2* dy at t = 0 by adaptive Simpson; cross-check
/// for the closed exponential form of S.
inline ComplexMatrix s_by_quadrature(const ExplicitSolution& sol, double x, double tol = 1e-11) {
  const auto integrand = [&](double y) -> ComplexMatrix {
    const auto p = sol.point(y, 0.0);
    return p.Lambda2 * p.Lambda2.adjoint();
  };
  return identity(sol.n()) + adaptive_simpson(integrand, 0.0, x, tol);
}

// ---------------------------------------------------------------------------
// Blow-up loci: zeros of det S(., t).

struct BlowupSample {
  double t = 0.0;
  double x = 0.0;
};

struct BlowupScanOptions {
  double x_lo = 0.0;
  double x_hi = 10.0;
  std::size_t nx = 2001;
  double x_tol = 1e-12;
  double imag_tol = 1e-10;
};

struct BlowupScan {
  std::vector<BlowupSample> roots;
  std::size_t imag_violations = 0;  // nodes where Im det S exceeded imag_tol
};

/// Roots of Re det S(., t) on [x_lo, x_hi] located by bracketing on nx
/// nodes and bisection.
inline std::vector<double> blowup_roots(const ExplicitSolution& sol, double t, const BlowupScanOptions& opt,
                                        std::size_t* imag_violations = nullptr) {
  if (opt.nx < 2 || !(opt.x_hi > opt.x_lo)) throw InvalidInput("blowup scan needs nx >= 2 and x_hi > x_lo");
  const auto f = [&](double x) {
    const Complex d = sol.det_S(x, t);
    if (std::abs(d.imag()) > opt.imag_tol * std::max(1.0, std::abs(d)) && imag_violations) ++*imag_violations;
    return d.real();
  };
  // Values this close to zero at a node are taken as a root there; the
  // constant term of det S is formed as 1 - (something of order 1).
  constexpr double zero_tol = 16 * std::numeric_limits<double>::epsilon();
  std::vector<double> roots;
  const double hx = (opt.x_hi - opt.x_lo) / static_cast<double>(opt.nx - 1);
  double xa = opt.x_lo, fa = f(xa);
  bool a_is_root = false;
  if (std::abs(fa) <= zero_tol) {
    roots.push_back(xa);
    a_is_root = true;
  }
  for (std::size_t i = 1; i < opt.nx; ++i) {
    const double xb = i + 1 == opt.nx ? opt.x_hi : opt.x_lo + static_cast<double>(i) * hx;
    const double fb = f(xb);
    const bool b_is_root = std::abs(fb) <= zero_tol;
    if (b_is_root) {
      roots.push_back(xb);
    } else if (!a_is_root && ((fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0))) {
      double lo = xa, hi = xb, flo = fa;
      for (int it = 0; it < 200 && hi - lo > opt.x_tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) {
          lo = hi = mid;
          break;
        }
        if ((fm < 0.0) == (flo < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      roots.push_back(0.5 * (lo + hi));
    }
    xa = xb;
    fa = fb;
    a_is_root = b_is_root;
  }
  return roots;
}

inline BlowupScan blowup_scan(const AdmissibleTriple& tr, const std::vector<double>& t_nodes,
                              const BlowupScanOptions& opt = {}) {
  const ExplicitSolution sol(tr);
  BlowupScan scan;
  for (double t : t_nodes)
    for (double x : blowup_roots(sol, t, opt, &scan.imag_violations)) scan.roots.push_back({t, x});
  return scan;
}

/// t-nodes t_lo + k (t_hi - t_lo)/(nt - 1); a single node when nt == 1.
inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  if (count == 0) throw InvalidInput("linspace needs at least one node");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t k = 0; k < count; ++k)
    out[k] = k + 1 == count ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  return out;
}

inline void write_blowup_csv(const BlowupScan& scan, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.header({"t", "x_star"});
  for (const auto& r : scan.roots) w.row_strings({format_double(r.t), format_double(r.x)});
}

// ---------------------------------------------------------------------------
// Boundary compliance. For the s15 family the corner values
// u(0,0) = u_xx(0,0) = u_xxx(0,0) = 0 and u_x(0,0) = -4 theta1* theta1 hold.
// u(0,t) = u_xx(0,t) = 0 for all t is only guaranteed when alpha = 0; for other
// s15 triples the sampled maxima are reported without a threshold.

inline constexpr double kBoundaryTol = 1e-9;

inline DiagnosticsReport boundary_report(const AdmissibleTriple& tr, const std::vector<double>& t_samples) {
  const auto flags = classify_family(tr);
  if (!flags.satisfies_s15) throw FamilyMismatch("boundary_report requires a triple in the s15 family");
  const ExplicitSolution sol(tr);
  DiagnosticsReport rep;
  rep.title = "boundary compliance";

  const auto d0 = sol.derivatives(0.0, 0.0);
  const ComplexMatrix ux_expected = -4.0 * tr.c_hat();
  rep.add_upper("norm_u(0,0)", d0.u.norm(), kBoundaryTol);
  rep.add_upper("norm_u_xx(0,0)", d0.u_xx().norm(), kBoundaryTol);
  rep.add_upper("norm_u_xxx(0,0)", d0.u_xxx().norm(), kBoundaryTol);
  rep.add_upper("norm_u_x(0,0)+4theta1*theta1", (d0.u_x - ux_expected).norm(), 1e-12 * (1.0 + ux_expected.norm()));
  const ComplexMatrix uxxx_expected =
      8.0 * tr.theta1().adjoint() * (tr.alpha() + tr.alpha().adjoint()) * tr.theta1();
  rep.add_upper("norm_u_xxx(0,0)-8theta1*(a+a*)theta1", (d0.u_xxx() - uxxx_expected).norm(), kBoundaryTol);

  double max_u = 0.0, max_uxx = 0.0;
  std::size_t singular = 0;
  for (double t : t_samples) {
    try {
      const auto d = sol.derivatives(0.0, t);
      max_u = std::max(max_u, d.u.norm());
      max_uxx = std::max(max_uxx, d.u_xx().norm());
    } catch (const SingularSError& e) {
      ++singular;
      rep.notes.push_back("singular S at t=" + format_double(e.t()));
    }
  }
  if (flags.satisfies_s19) {
    rep.add_upper("max_norm_u(0,t)", max_u, kBoundaryTol);
    rep.add_upper("max_norm_u_xx(0,t)", max_uxx, kBoundaryTol);
  } else {
    const double inf = std::numeric_limits<double>::infinity();
    rep.add("max_norm_u(0,t)", max_u, inf, true, "informational: alpha != 0");
    rep.add("max_norm_u_xx(0,t)", max_uxx, inf, true, "informational: alpha != 0");
  }
  rep.add("singular_t_samples", static_cast<double>(singular), 0.0, true);
  rep.verdict = rep.all_passed() ? "COMPLIANT" : "NON_COMPLIANT";
  return rep;
}

// ---------------------------------------------------------------------------
// Sampled solution grids.

struct GridSpec {
  double x0 = 0.0, x1 = 2.0, hx = 1.0 / 64.0;
  double t0 = 0.0, t1 = 0.2, ht = 1.0 / 64.0;
  bool with_derivatives = true;
};

/// Nodes lo, lo + h, ... not exceeding hi (within rounding).
inline std::vector<double> uniform_nodes(double lo, double hi, double h) {
  if (!(h > 0.0) || !(hi >= lo)) throw InvalidInput("grid needs h > 0 and hi >= lo");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / h + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = lo + static_cast<double>(k) * h;
  return out;
}

struct SolutionGrid {
  std::vector<double> x, t;
  double hx = 0.0, ht = 0.0;
  Eigen::Index m = 0;
  std::vector<ComplexMatrix> u;           // node (it, ix) at it * nx + ix
  std::vector<ComplexMatrix> u_x, u_xx;   // closed-form derivatives; empty when unavailable
  std::vector<unsigned char> valid;       // 0 at masked (singular) nodes
  std::vector<double> condS;              // empty for grids not built from a triple
  std::optional<AdmissibleTriple> triple;
  GridSpec spec;
  double singularity_threshold = kSingularityThreshold;

  std::size_t nx() const { return x.size(); }
  std::size_t nt() const { return t.size(); }
  std::size_t index(std::size_t it, std::size_t ix) const { return it * x.size() + ix; }
  bool has_derivatives() const { return !u_x.empty(); }
  bool is_valid(std::size_t it, std::size_t ix) const { return valid[index(it, ix)] != 0; }
};

inline SolutionGrid make_solution_grid(const AdmissibleTriple& tr, const GridSpec& spec, unsigned threads = 1) {
  SolutionGrid g;
  g.spec = spec;
  g.x = uniform_nodes(spec.x0, spec.x1, spec.hx);
  g.t = uniform_nodes(spec.t0, spec.t1, spec.ht);
  g.hx = spec.hx;
  g.ht = spec.ht;
  g.m = tr.m();
  g.triple = tr;
  const std::size_t count = g.nx() * g.nt();
  g.u.assign(count, ComplexMatrix());
  g.valid.assign(count, 0);
  g.condS.assign(count, 0.0);
  if (spec.with_derivatives) {
    g.u_x.assign(count, ComplexMatrix());
    g.u_xx.assign(count, ComplexMatrix());
  }
  const ExplicitSolution sol(tr);
  const ComplexMatrix nan_block = ComplexMatrix::Constant(g.m, g.m, Complex(std::nan(""), std::nan("")));
  parallel_for(count, threads, [&](std::size_t k) {
    const double x = g.x[k % g.nx()], t = g.t[k / g.nx()];
    const auto p = sol.point(x, t);
    g.condS[k] = p.condS;
    if (!p.invertible) {
      g.u[k] = nan_block;
      if (spec.with_derivatives) g.u_x[k] = g.u_xx[k] = nan_block;
      return;
    }
    g.valid[k] = 1;
    if (spec.with_derivatives) {
      const auto d = sol.derivatives(x, t);
      g.u[k] = d.u;
      g.u_x[k] = d.u_x;
      g.u_xx[k] = d.u_xx();
    } else {
      g.u[k] = sol.u(x, t);
    }
  });
  return g;
}

using PotentialField = std::function<ComplexMatrix(double x, double t)>;

/// Grid of an arbitrary field; every node valid, no closed-form derivatives.
inline SolutionGrid make_field_grid(const PotentialField& u, Eigen::Index m, const GridSpec& spec) {
  SolutionGrid g;
  g.spec = spec;
  g.spec.with_derivatives = false;
  g.x = uniform_nodes(spec.x0, spec.x1, spec.hx);
  g.t = uniform_nodes(spec.t0, spec.t1, spec.ht);
  g.hx = spec.hx;
  g.ht = spec.ht;
  g.m = m;
  g.u.reserve(g.nx() * g.nt());
  for (double t : g.t)
    for (double x : g.x) {
      ComplexMatrix v = u(x, t);
      if (v.rows() != m || v.cols() != m) throw InvalidInput("field returned a block of the wrong size");
      g.u.push_back(std::move(v));
    }
  g.valid.assign(g.u.size(), 1);
  return g;
}

/// Columns: x, t, re_u_i_j, im_u_i_j (1-based i, j), mask (1 = singular node).
inline void write_grid_csv(const SolutionGrid& g, const std::filesystem::path& path) {
  CsvWriter w(path);
  std::vector<std::string> head{"x", "t"};
  for (auto& c : matrix_columns("u", g.m)) head.push_back(c);
  head.emplace_back("mask");
  w.header(head);
  for (std::size_t it = 0; it < g.nt(); ++it)
    for (std::size_t ix = 0; ix < g.nx(); ++ix) {
      const std::size_t k = g.index(it, ix);
      std::vector<std::string> cells{format_double(g.x[ix]), format_double(g.t[it])};
      if (g.valid[k])
        append_matrix_cells(cells, g.u[k]);
      else
        append_nan_cells(cells, g.m);
      cells.emplace_back(g.valid[k] ? "0" : "1");
      w.row_strings(cells);
    }
}

inline Json grid_manifest_json(const SolutionGrid& g) {
  Json j;
  if (g.triple) j["triple"] = triple_to_json(*g.triple);
  j["x"] = {{"start", g.x.front()}, {"stop", g.x.back()}, {"count", g.nx()}, {"spacing", g.hx}};
  j["t"] = {{"start", g.t.front()}, {"stop", g.t.back()}, {"count", g.nt()}, {"spacing", g.ht}};
  j["m"] = g.m;
  j["singularity_threshold"] = g.singularity_threshold;
  std::size_t masked = 0;
  for (auto v : g.valid) masked += v ? 0 : 1;
  j["masked_nodes"] = masked;
  return j;
}

}  // namespace weylkdv

#pragma once

// Canonical system Psi~_x = i z J H(x) Psi~ built from a potential u through
// the Schroedinger system Psi_x = G(x, z) Psi, G = [[0, I], [u - zI, 0]]:
//
//   H(x)      = T* Psi(x,0)* diag(I, 0) Psi(x,0) T,
//   Psi~(x,z) = (Psi(x,0) T)^{-1} Psi(x,z) T,
//
// Weyl-disc points M(l,z) = lft(Psi~(l, conj z)*, P, Q), their large-l limit,
// and the square-integrability functional of the Weyl solution.

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "weylkdv/diagnostics.hpp"
#include "weylkdv/explicit.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"
#include "weylkdv/weyl.hpp"

namespace weylkdv {

using Potential = std::function<ComplexMatrix(double x)>;

inline Potential zero_potential(Eigen::Index m) {
  return [m](double) { return zeros(m, m); };
}

/// x -> u(x, t) of the explicit solution; throws SingularSError where S is singular.
inline Potential potential_from_triple(const AdmissibleTriple& tr, double t = 0.0) {
  auto sol = std::make_shared<const ExplicitSolution>(tr);
  return [sol, t](double x) { return sol->u(x, t); };
}

/// G(x, z) = [[0, I], [u(x) - zI, 0]].
inline ComplexMatrix schroedinger_G(const ComplexMatrix& u, Complex z) {
  const Eigen::Index m = u.rows();
  ComplexMatrix g = zeros(2 * m, 2 * m);
  g.topRightCorner(m, m) = identity(m);
  g.bottomLeftCorner(m, m) = u - z * identity(m);
  return g;
}

class Hamiltonian {
public:
  Hamiltonian(Potential u, Eigen::Index m, double l_max, double tol = 1e-10)
      : u_(std::move(u)), m_(m), l_max_(l_max), tol_(tol), T_(structural_matrices(m).T) {
    if (!(l_max_ > 0.0)) throw InvalidInput("Hamiltonian needs l_max > 0");
    if (!(tol_ > 0.0)) throw InvalidInput("Hamiltonian tolerance must be positive");
  }

  Eigen::Index m() const { return m_; }
  double l_max() const { return l_max_; }
  double tol() const { return tol_; }
  const Potential& potential() const { return u_; }
  const ComplexMatrix& T() const { return T_; }

  ComplexMatrix u(double x) const {
    ComplexMatrix v = u_(x);
    if (v.rows() != m_ || v.cols() != m_) throw InvalidInput("potential returned a block of the wrong size");
    if (!all_finite(v)) throw IntegrationError("non-finite potential at x=" + format_double(x));
    return v;
  }

  /// Psi(x, 0) with Psi(0) = I.
  ComplexMatrix psi0(double x) const {
    check_range(x);
    OdeOptions opt;
    opt.tol = tol_;
    return integrate([this](double s, const ComplexMatrix& y) -> ComplexMatrix { return schroedinger_G(u(s), 0.0) * y; },
                     0.0, x, identity(2 * m_), opt);
  }

  /// H from a given Psi(x, 0).
  ComplexMatrix from_psi0(const ComplexMatrix& p0) const {
    const ComplexMatrix top = p0.topRows(m_) * T_;  // [I 0] Psi T
    return top.adjoint() * top;
  }

  ComplexMatrix at(double x) const { return from_psi0(psi0(x)); }

  void check_range(double x) const {
    if (x < 0.0 || x > l_max_ * (1.0 + 1e-12)) throw InvalidInput("x outside [0, l_max] of the Hamiltonian");
  }

private:
  Potential u_;
  Eigen::Index m_;
  double l_max_, tol_;
  ComplexMatrix T_;
};

inline Hamiltonian hamiltonian_H(Potential u, Eigen::Index m, double l_max, double tol = 1e-10) {
  return {std::move(u), m, l_max, tol};
}

/// int_0^l H(x) dx, integrated jointly with Psi(x, 0).
inline ComplexMatrix hamiltonian_integral(const Hamiltonian& h, double l) {
  h.check_range(l);
  const Eigen::Index m2 = 2 * h.m();
  ComplexMatrix y0 = zeros(2 * m2, m2);
  y0.topRows(m2) = identity(m2);
  OdeOptions opt;
  opt.tol = h.tol();
  const auto y = integrate(
      [&](double s, const ComplexMatrix& y) -> ComplexMatrix {
        ComplexMatrix d(2 * m2, m2);
        d.topRows(m2) = schroedinger_G(h.u(s), 0.0) * y.topRows(m2);
        d.bottomRows(m2) = h.from_psi0(y.topRows(m2));
        return d;
      },
      0.0, l, y0, opt);
  return y.bottomRows(m2);
}

/// Hermitian, positive semidefinite, rank <= m at the samples; int_0^l H > 0.
inline DiagnosticsReport hamiltonian_report(const Hamiltonian& h, const std::vector<double>& x_samples, double l) {
  DiagnosticsReport rep;
  rep.title = "hamiltonian";
  double min_eig = std::numeric_limits<double>::infinity(), herm = 0.0;
  double max_rank = 0.0;
  for (double x : x_samples) {
    const ComplexMatrix H = h.at(x);
    herm = std::max(herm, (H - H.adjoint()).norm() / (1.0 + H.norm()));
    const auto ev = hermitian_eigenvalues(H);
    min_eig = std::min(min_eig, ev.minCoeff());
    max_rank = std::max(max_rank, static_cast<double>((ev.array() > 1e-8).count()));
  }
  rep.add_upper("hermitian_defect", herm, 1e-12);
  rep.add_lower("min_eigenvalue", min_eig, -1e-10);
  rep.add_upper("max_rank", max_rank, static_cast<double>(h.m()));
  rep.add_lower("integral_min_eigenvalue", min_hermitian_eig(hamiltonian_integral(h, l)), 1e-8);
  return rep;
}

// ---------------------------------------------------------------------------
// Fundamental solutions.

namespace detail {

/// Right-hand side for the stacked state [Psi(x,0) | Psi(x,z)].
struct GaugeRhs {
  const Hamiltonian* h;
  Complex z;
  ComplexMatrix operator()(double s, const ComplexMatrix& y) const {
    const Eigen::Index m2 = 2 * h->m();
    const ComplexMatrix u = h->u(s);
    ComplexMatrix d(m2, 2 * m2);
    d.leftCols(m2) = schroedinger_G(u, 0.0) * y.leftCols(m2);
    d.rightCols(m2) = schroedinger_G(u, z) * y.rightCols(m2);
    return d;
  }
};

inline ComplexMatrix gauge_initial(Eigen::Index m) {
  ComplexMatrix y(2 * m, 4 * m);
  y << identity(2 * m), identity(2 * m);
  return y;
}

inline ComplexMatrix gauge_to_canonical(const ComplexMatrix& y, const ComplexMatrix& T) {
  const Eigen::Index m2 = T.rows();
  return solve_left(y.leftCols(m2) * T, y.rightCols(m2) * T, "Psi(x,0) T");
}

}  // namespace detail

/// Psi~(l, z) with Psi~(0) = I.
inline ComplexMatrix canonical_fund(const Hamiltonian& h, double l, Complex z, OdeStats* stats = nullptr) {
  h.check_range(l);
  OdeOptions opt;
  opt.tol = h.tol();
  const auto y = integrate(detail::GaugeRhs{&h, z}, 0.0, l, detail::gauge_initial(h.m()), opt, stats);
  return detail::gauge_to_canonical(y, h.T());
}

/// Psi~(l, z) by integrating Psi~_x = i z J H Psi~ with H formed from Psi(x,0)
/// carried along in the same state; cross-check for canonical_fund.
inline ComplexMatrix canonical_fund_direct(const Hamiltonian& h, double l, Complex z) {
  h.check_range(l);
  const Eigen::Index m2 = 2 * h.m();
  const ComplexMatrix J = structural_matrices(h.m()).J;
  OdeOptions opt;
  opt.tol = h.tol();
  const auto y = integrate(
      [&](double s, const ComplexMatrix& y) -> ComplexMatrix {
        ComplexMatrix d(m2, 2 * m2);
        d.leftCols(m2) = schroedinger_G(h.u(s), 0.0) * y.leftCols(m2);
        d.rightCols(m2) = (kI * z) * J * h.from_psi0(y.leftCols(m2)) * y.rightCols(m2);
        return d;
      },
      0.0, l, detail::gauge_initial(h.m()), opt);
  return y.rightCols(m2);
}

// ---------------------------------------------------------------------------
// Weyl disc.

struct PropertyJPair {
  ComplexMatrix P, Q;
};

struct PairCheck {
  bool ok = false;
  double sum_min_eig = 0.0;    // P*P + Q*Q
  double cross_min_eig = 0.0;  // P*Q + Q*P
};

inline PairCheck check_property_j(const PropertyJPair& pq) {
  if (pq.P.rows() != pq.P.cols() || pq.Q.rows() != pq.P.rows() || pq.Q.cols() != pq.P.cols())
    throw InvalidInput("property-J pair needs square P, Q of equal size");
  PairCheck c;
  c.sum_min_eig = min_hermitian_eig(pq.P.adjoint() * pq.P + pq.Q.adjoint() * pq.Q);
  c.cross_min_eig = min_hermitian_eig(pq.P.adjoint() * pq.Q + pq.Q.adjoint() * pq.P);
  c.ok = c.sum_min_eig >= 1e-12 && c.cross_min_eig >= -1e-12;
  return c;
}

inline PropertyJPair default_pair(Eigen::Index m) { return {identity(m), identity(m)}; }

inline ComplexMatrix disc_point(const ComplexMatrix& psi_conj, const PropertyJPair& pq) {
  return lft(psi_conj.adjoint(), pq.P, pq.Q);
}

/// M(l, z) = lft(Psi~(l, conj z)*, P, Q).
inline ComplexMatrix weyl_disc(const Hamiltonian& h, double l, Complex z, const PropertyJPair& pq) {
  if (!(z.imag() > 0.0)) throw InvalidInput("Weyl disc needs Im z > 0");
  const auto c = check_property_j(pq);
  if (!c.ok) throw InvalidInput("pair (P, Q) does not have property J");
  if (pq.P.rows() != h.m()) throw InvalidInput("pair size differs from m");
  return disc_point(canonical_fund(h, l, std::conj(z)), pq);
}

inline std::vector<double> default_l_schedule() { return {1, 2, 4, 8, 16, 32, 64}; }

struct WeylLimit {
  ComplexMatrix M;
  std::vector<double> l;
  std::vector<ComplexMatrix> values;  // M(l_k, z)
  std::vector<double> distances;      // |M(l_{k+1}) - M(l_k)|, first entry nan
  bool converged = false;
};

inline constexpr double kDiscConvergenceTol = 1e-6;

/// M(l, z) along an increasing schedule computed from one integration with
/// checkpoints; converged when the last successive difference is <= 1e-6.
inline WeylLimit weyl_limit(const Hamiltonian& h, Complex z, const std::vector<double>& schedule,
                            const PropertyJPair& pq) {
  if (!(z.imag() > 0.0)) throw InvalidInput("Weyl limit needs Im z > 0");
  if (schedule.empty()) throw InvalidInput("l-schedule is empty");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    if (!(schedule[k] > 0.0) || (k > 0 && !(schedule[k] > schedule[k - 1])))
      throw InvalidInput("l-schedule must be positive and increasing");
    h.check_range(schedule[k]);
  }
  if (!check_property_j(pq).ok) throw InvalidInput("pair (P, Q) does not have property J");
  OdeOptions opt;
  opt.tol = h.tol();
  const auto ys = integrate_checkpoints(detail::GaugeRhs{&h, std::conj(z)}, 0.0, std::span<const double>(schedule),
                                        detail::gauge_initial(h.m()), opt);
  WeylLimit w;
  w.l = schedule;
  for (std::size_t k = 0; k < ys.size(); ++k) {
    w.values.push_back(disc_point(detail::gauge_to_canonical(ys[k], h.T()), pq));
    w.distances.push_back(k == 0 ? std::nan("") : (w.values[k] - w.values[k - 1]).norm());
  }
  w.M = w.values.back();
  w.converged = w.values.size() > 1 && w.distances.back() <= kDiscConvergenceTol;
  return w;
}

inline WeylLimit weyl_limit(const Hamiltonian& h, Complex z) {
  return weyl_limit(h, z, default_l_schedule(), default_pair(h.m()));
}

/// Evaluator z -> M(l_max, z) of the disc schedule; the Hamiltonian is shared.
inline WeylEvaluator disc_limit_evaluator(std::shared_ptr<const Hamiltonian> h,
                                          std::vector<double> schedule = default_l_schedule()) {
  const Eigen::Index m = h->m();
  return {WeylPath::disc_limit, m, [h, schedule](Complex z) {
            return weyl_limit(*h, z, schedule, default_pair(h->m())).M;
          }};
}

/// Columns: l, re_M_i_j, im_M_i_j, distance.
inline void write_convergence_csv(const WeylLimit& w, const std::filesystem::path& path) {
  const Eigen::Index m = w.M.rows();
  CsvWriter out(path);
  std::vector<std::string> head{"l"};
  for (auto& c : matrix_columns("M", m)) head.push_back(c);
  head.emplace_back("distance");
  out.header(head);
  for (std::size_t k = 0; k < w.l.size(); ++k) {
    std::vector<std::string> cells{format_double(w.l[k])};
    append_matrix_cells(cells, w.values[k]);
    cells.push_back(format_double(w.distances[k]));
    out.row_strings(cells);
  }
}

// ---------------------------------------------------------------------------
// Schroedinger solutions and the Weyl square-integrability functional.

struct SchroedingerSolution {
  ComplexMatrix Y;   // m x 2m
  ComplexMatrix Yx;  // m x 2m
};

/// Y with [Y; Y_x](0) = T, i.e. [Y; Y_x](x) = Psi(x, z) T.
inline SchroedingerSolution schroedinger_solution(const Potential& u, Eigen::Index m, Complex z, double x,
                                                  double tol = 1e-10) {
  const ComplexMatrix T = structural_matrices(m).T;
  OdeOptions opt;
  opt.tol = tol;
  const auto psi = integrate([&](double s, const ComplexMatrix& y) -> ComplexMatrix { return schroedinger_G(u(s), z) * y; },
                             0.0, x, T, opt);
  return {psi.topRows(m), psi.bottomRows(m)};
}

/// Y and Y_x at increasing points from one integration.
inline std::vector<SchroedingerSolution> schroedinger_solutions(const Potential& u, Eigen::Index m, Complex z,
                                                                std::span<const double> xs, double tol = 1e-10) {
  const ComplexMatrix T = structural_matrices(m).T;
  OdeOptions opt;
  opt.tol = tol;
  const auto ys = integrate_checkpoints(
      [&](double s, const ComplexMatrix& y) -> ComplexMatrix { return schroedinger_G(u(s), z) * y; }, 0.0, xs, T, opt);
  std::vector<SchroedingerSolution> out;
  out.reserve(ys.size());
  for (const auto& psi : ys) out.push_back({psi.topRows(m), psi.bottomRows(m)});
  return out;
}

struct WeylInequality {
  ComplexMatrix integral_L;       // int_0^L v* v, v = Y [I; -iM]
  ComplexMatrix integral_half;    // same over [0, L/2]
  double value = 0.0;             // |integral_L|
  double growth_ratio = 0.0;      // |integral_L| / |integral_half|
};

/// Truncated integral of [I iM*] Y*Y [I; -iM] over [0, L] and the growth
/// ratio between L and L/2.
inline WeylInequality weyl_inequality(const Potential& u, Eigen::Index m, const ComplexMatrix& M, Complex z, double L,
                                      double tol = 1e-10) {
  if (!(z.imag() > 0.0)) throw InvalidInput("Weyl inequality needs Im z > 0");
  if (L < 0.0) throw InvalidInput("L must be non-negative");
  if (M.rows() != m || M.cols() != m) throw InvalidInput("M has the wrong size");
  WeylInequality w;
  w.integral_L = w.integral_half = zeros(m, m);
  if (L == 0.0) {
    w.growth_ratio = std::nan("");
    return w;
  }
  const ComplexMatrix T = structural_matrices(m).T;
  ComplexMatrix dir(2 * m, m);
  dir << identity(m), -kI * M;
  const ComplexMatrix Tdir = T * dir;
  // state: rows 0..2m-1 hold Psi(x,z) (2m x 2m); rows 2m..3m-1, first m columns, hold the integral
  ComplexMatrix y0 = zeros(3 * m, 2 * m);
  y0.topRows(2 * m) = identity(2 * m);
  OdeOptions opt;
  opt.tol = tol;
  const std::vector<double> cps{0.5 * L, L};
  const auto ys = integrate_checkpoints(
      [&](double s, const ComplexMatrix& y) -> ComplexMatrix {
        ComplexMatrix d = zeros(3 * m, 2 * m);
        const ComplexMatrix psi = y.topRows(2 * m);
        d.topRows(2 * m) = schroedinger_G(u(s), z) * psi;
        const ComplexMatrix v = psi.topRows(m) * Tdir;
        d.bottomRows(m).leftCols(m) = v.adjoint() * v;
        return d;
      },
      0.0, std::span<const double>(cps), y0, opt);
  w.integral_half = ys[0].bottomRows(m).leftCols(m);
  w.integral_L = ys[1].bottomRows(m).leftCols(m);
  w.value = w.integral_L.norm();
  w.growth_ratio = w.value / w.integral_half.norm();
  return w;
}

inline double weyl_inequality_residual(const Potential& u, Eigen::Index m, const ComplexMatrix& M, Complex z,
                                       double L) {
  return weyl_inequality(u, m, M, z, L).value;
}

}  // namespace weylkdv

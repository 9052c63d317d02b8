#pragma once

// Finite-difference residuals of the KdV equation
//   u_t + 3(u u_x + u_x u) - u_xxx
// and of the zero-curvature identity G_t - F_x + [G, F] on solution grids,
// plus point checks of the closed-form derivative identities.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "weylkdv/canonical.hpp"
#include "weylkdv/diagnostics.hpp"
#include "weylkdv/explicit.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"

namespace weylkdv {

enum class NodeStatus : unsigned char {
  ok,        // central stencils
  degraded,  // one-sided stencil at the grid edge
  excluded,  // computed, but within the exclusion radius of a masked node
  skipped,   // a stencil point is masked
  masked,    // the node itself is masked
};

inline std::string to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::ok: return "ok";
    case NodeStatus::degraded: return "degraded";
    case NodeStatus::excluded: return "excluded";
    case NodeStatus::skipped: return "skipped";
    case NodeStatus::masked: return "masked";
  }
  return "unknown";
}

/// Nodes within this Chebyshev distance of a masked node are excluded from
/// the statistics (three widths of the u_xxx stencil).
inline constexpr std::size_t kExclusionRadius = 6;

struct ResidualField {
  std::string kind;
  std::vector<double> x, t;
  double hx = 0.0, ht = 0.0;
  std::vector<double> residual;  // norm per node, nan where not computed
  std::vector<NodeStatus> status;
  double max_residual = 0.0;     // over ok nodes
  double max_degraded = 0.0;     // over degraded nodes
  double order_estimate = std::nan("");
  std::size_t excluded = 0, skipped = 0, masked = 0, degraded = 0;

  std::size_t nx() const { return x.size(); }
  std::size_t nt() const { return t.size(); }
  std::size_t index(std::size_t it, std::size_t ix) const { return it * x.size() + ix; }

  Json summary() const {
    return Json{{"kind", kind},
                {"max", max_residual},
                {"max_degraded", max_degraded},
                {"order_estimate", order_estimate},
                {"excluded_nodes", excluded},
                {"skipped_nodes", skipped},
                {"masked_nodes", masked},
                {"degraded_nodes", degraded},
                {"nx", nx()},
                {"nt", nt()},
                {"hx", hx},
                {"ht", ht}};
  }
};

namespace detail {

/// First derivative at node i of n points, second order; `deg` set when one-sided.
template <class Get>
ComplexMatrix d1(Get&& f, std::size_t i, std::size_t n, double h, bool& deg) {
  if (i > 0 && i + 1 < n) return (f(i + 1) - f(i - 1)) / (2.0 * h);
  deg = true;
  if (i == 0) return (-1.5 * f(0) + 2.0 * f(1) - 0.5 * f(2)) / h;
  return (1.5 * f(n - 1) - 2.0 * f(n - 2) + 0.5 * f(n - 3)) / h;
}

template <class Get>
ComplexMatrix d2(Get&& f, std::size_t i, std::size_t n, double h, bool& deg) {
  if (i > 0 && i + 1 < n) return (f(i + 1) - 2.0 * f(i) + f(i - 1)) / (h * h);
  deg = true;
  if (i == 0) return (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / (h * h);
  return (2.0 * f(n - 1) - 5.0 * f(n - 2) + 4.0 * f(n - 3) - f(n - 4)) / (h * h);
}

/// (u_{i+2} - 2u_{i+1} + 2u_{i-1} - u_{i-2}) / (2h^3) and second-order
/// one-sided variants within two nodes of the edge.
template <class Get>
ComplexMatrix d3(Get&& f, std::size_t i, std::size_t n, double h, bool& deg) {
  const double h3 = h * h * h;
  if (i >= 2 && i + 2 < n) return (f(i + 2) - 2.0 * f(i + 1) + 2.0 * f(i - 1) - f(i - 2)) / (2.0 * h3);
  deg = true;
  if (i == 0) return (-2.5 * f(0) + 9.0 * f(1) - 12.0 * f(2) + 7.0 * f(3) - 1.5 * f(4)) / h3;
  if (i == 1) return (-1.5 * f(0) + 5.0 * f(1) - 6.0 * f(2) + 3.0 * f(3) - 0.5 * f(4)) / h3;
  if (i == n - 1) return -(-2.5 * f(n - 1) + 9.0 * f(n - 2) - 12.0 * f(n - 3) + 7.0 * f(n - 4) - 1.5 * f(n - 5)) / h3;
  return -(-1.5 * f(n - 1) + 5.0 * f(n - 2) - 6.0 * f(n - 3) + 3.0 * f(n - 4) - 0.5 * f(n - 5)) / h3;
}

/// Node indices used by the stencils above at node i.
inline std::pair<std::size_t, std::size_t> support(std::size_t i, std::size_t n, std::size_t half) {
  if (i >= half && i + half < n) return {i - half, i + half};
  if (i < half) return {0, std::min(n - 1, std::size_t{2} * half)};
  return {n - 1 - std::min(n - 1, std::size_t{2} * half), n - 1};
}

inline void require_grid(const SolutionGrid& g) {
  if (g.nx() < 5 || g.nt() < 3) throw InvalidInput("residuals need at least 5 x-nodes and 3 t-nodes");
  if (!(g.hx > 0.0) || !(g.ht > 0.0)) throw InvalidInput("residuals need positive grid spacings");
}

/// Shared node loop: statuses, exclusion and statistics. `eval(it, ix, deg)`
/// returns the residual norm at a node whose stencils are all valid.
template <class Eval>
ResidualField residual_field(const SolutionGrid& g, std::string kind, std::size_t x_half, Eval&& eval,
                             unsigned threads) {
  require_grid(g);
  ResidualField r;
  r.kind = std::move(kind);
  r.x = g.x;
  r.t = g.t;
  r.hx = g.hx;
  r.ht = g.ht;
  const std::size_t nx = g.nx(), nt = g.nt();
  r.residual.assign(nx * nt, std::nan(""));
  r.status.assign(nx * nt, NodeStatus::ok);

  // distance to the nearest masked node (Chebyshev metric, capped)
  std::vector<int> near(nx * nt, 0);
  for (std::size_t it = 0; it < nt; ++it)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      if (g.is_valid(it, ix)) continue;
      const std::size_t t0 = it >= kExclusionRadius ? it - kExclusionRadius : 0;
      const std::size_t x0 = ix >= kExclusionRadius ? ix - kExclusionRadius : 0;
      for (std::size_t a = t0; a <= std::min(nt - 1, it + kExclusionRadius); ++a)
        for (std::size_t b = x0; b <= std::min(nx - 1, ix + kExclusionRadius); ++b) near[a * nx + b] = 1;
    }

  parallel_for(nt, threads, [&](std::size_t it) {
    const auto [ta, tb] = support(it, nt, 1);
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const std::size_t k = g.index(it, ix);
      if (!g.is_valid(it, ix)) {
        r.status[k] = NodeStatus::masked;
        continue;
      }
      const auto [xa, xb] = support(ix, nx, x_half);
      bool ok = true;
      for (std::size_t b = xa; b <= xb && ok; ++b) ok = g.is_valid(it, b);
      for (std::size_t a = ta; a <= tb && ok; ++a) ok = g.is_valid(a, ix);
      if (!ok) {
        r.status[k] = NodeStatus::skipped;
        continue;
      }
      bool deg = false;
      r.residual[k] = eval(it, ix, deg);
      if (near[k])
        r.status[k] = NodeStatus::excluded;
      else if (deg)
        r.status[k] = NodeStatus::degraded;
    }
  });

  for (std::size_t k = 0; k < r.residual.size(); ++k) {
    switch (r.status[k]) {
      case NodeStatus::ok: r.max_residual = std::max(r.max_residual, r.residual[k]); break;
      case NodeStatus::degraded:
        ++r.degraded;
        r.max_degraded = std::max(r.max_degraded, r.residual[k]);
        break;
      case NodeStatus::excluded: ++r.excluded; break;
      case NodeStatus::skipped: ++r.skipped; break;
      case NodeStatus::masked: ++r.masked; break;
    }
  }
  return r;
}

}  // namespace detail

/// u_t + 3(u u_x + u_x u) - u_xxx with 2-point central u_t, u_x and the
/// 4-point central u_xxx.
inline ResidualField kdv_residual(const SolutionGrid& g, unsigned threads = 1) {
  const std::size_t nx = g.nx(), nt = g.nt();
  return detail::residual_field(
      g, "kdv", 2,
      [&](std::size_t it, std::size_t ix, bool& deg) {
        auto in_x = [&](std::size_t j) -> const ComplexMatrix& { return g.u[g.index(it, j)]; };
        auto in_t = [&](std::size_t j) -> const ComplexMatrix& { return g.u[g.index(j, ix)]; };
        const ComplexMatrix& u = g.u[g.index(it, ix)];
        const ComplexMatrix ut = detail::d1(in_t, it, nt, g.ht, deg);
        const ComplexMatrix ux = detail::d1(in_x, ix, nx, g.hx, deg);
        const ComplexMatrix uxxx = detail::d3(in_x, ix, nx, g.hx, deg);
        return (ut + 3.0 * (u * ux + ux * u) - uxxx).norm();
      },
      threads);
}

/// G_t - F_x + [G, F] with G = [[0, I], [u - zI, 0]] and
/// F = [[u_x, -2(u + 2z)], [u_xx - 2(u + 2z)(u - z), -u_x]]; u_x, u_xx come
/// from the grid when present, else from central differences.
inline ResidualField zero_curvature_residual(const SolutionGrid& g, Complex z, unsigned threads = 1) {
  detail::require_grid(g);
  const std::size_t nx = g.nx(), nt = g.nt();
  const Eigen::Index m = g.m;
  const ComplexMatrix I = identity(m);

  std::vector<ComplexMatrix> ux(g.u.size()), uxx(g.u.size());
  if (g.has_derivatives()) {
    ux = g.u_x;
    uxx = g.u_xx;
  } else {
    parallel_for(nt, threads, [&](std::size_t it) {
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const auto [xa, xb] = detail::support(ix, nx, 2);
        bool ok = true;
        for (std::size_t b = xa; b <= xb && ok; ++b) ok = g.is_valid(it, b);
        if (!ok) continue;
        auto in_x = [&](std::size_t j) -> const ComplexMatrix& { return g.u[g.index(it, j)]; };
        bool deg = false;
        ux[g.index(it, ix)] = detail::d1(in_x, ix, nx, g.hx, deg);
        uxx[g.index(it, ix)] = detail::d2(in_x, ix, nx, g.hx, deg);
      }
    });
  }
  auto F_at = [&](std::size_t k) {
    const ComplexMatrix& u = g.u[k];
    return block2x2(ux[k], -2.0 * (u + 2.0 * z * I), uxx[k] - 2.0 * (u + 2.0 * z * I) * (u - z * I), -ux[k]);
  };
  std::vector<ComplexMatrix> F(g.u.size());
  for (std::size_t k = 0; k < g.u.size(); ++k)
    if (g.valid[k] && ux[k].size() != 0) F[k] = F_at(k);

  // F_x uses u_x, u_xx at neighbours, so FD-derived derivatives widen the x-support
  const bool fd = !g.has_derivatives();
  const std::size_t half = fd ? 3 : 1;
  return detail::residual_field(
      g, "zero_curvature", half,
      [&](std::size_t it, std::size_t ix, bool& deg) {
        // a neighbour carries one-sided u_x, u_xx
        if (fd && (ix < 2 || ix + 2 >= nx)) deg = true;
        auto u_t = [&](std::size_t j) -> const ComplexMatrix& { return g.u[g.index(j, ix)]; };
        auto F_x = [&](std::size_t j) -> const ComplexMatrix& { return F[g.index(it, j)]; };
        const std::size_t k = g.index(it, ix);
        const ComplexMatrix G =
            block2x2(zeros(m, m), I, g.u[k] - z * I, zeros(m, m));
        ComplexMatrix Gt = zeros(2 * m, 2 * m);
        Gt.bottomLeftCorner(m, m) = detail::d1(u_t, it, nt, g.ht, deg);
        const ComplexMatrix Fx = detail::d1(F_x, ix, nx, g.hx, deg);
        const ComplexMatrix& Fk = F[k];
        return (Gt - Fx + G * Fk - Fk * G).norm();
      },
      threads);
}

/// log2(max_coarse / max_fine) over nodes shared by a grid and its refinement
/// by two in both directions, counting only nodes that are ok in both.
inline double residual_order(const ResidualField& coarse, const ResidualField& fine) {
  if (std::abs(fine.hx * 2.0 - coarse.hx) > 1e-12 * coarse.hx || std::abs(fine.ht * 2.0 - coarse.ht) > 1e-12 * coarse.ht)
    throw InvalidInput("residual_order needs a refinement by two in x and t");
  double mc = 0.0, mf = 0.0;
  for (std::size_t it = 0; it < coarse.nt() && 2 * it < fine.nt(); ++it)
    for (std::size_t ix = 0; ix < coarse.nx() && 2 * ix < fine.nx(); ++ix) {
      const std::size_t kc = coarse.index(it, ix), kf = fine.index(2 * it, 2 * ix);
      if (coarse.status[kc] != NodeStatus::ok || fine.status[kf] != NodeStatus::ok) continue;
      mc = std::max(mc, coarse.residual[kc]);
      mf = std::max(mf, fine.residual[kf]);
    }
  if (!(mf > 0.0) || !(mc > 0.0)) return std::nan("");
  return std::log2(mc / mf);
}

struct ResidualStudy {
  ResidualField coarse, fine;
  double order = std::nan("");
};

enum class ResidualKind { kdv, zero_curvature };

/// Residuals of a triple-generated grid at spacing h and h/2, with the
/// order estimate stored on both fields.
inline ResidualStudy residual_study(const AdmissibleTriple& tr, const GridSpec& spec, ResidualKind kind,
                                    Complex z = 1.0, unsigned threads = 1) {
  GridSpec fine = spec;
  fine.hx = spec.hx / 2.0;
  fine.ht = spec.ht / 2.0;
  const bool derivs = kind == ResidualKind::zero_curvature && spec.with_derivatives;
  GridSpec cs = spec;
  cs.with_derivatives = derivs;
  fine.with_derivatives = derivs;
  const auto gc = make_solution_grid(tr, cs, threads);
  const auto gf = make_solution_grid(tr, fine, threads);
  ResidualStudy s;
  if (kind == ResidualKind::kdv) {
    s.coarse = kdv_residual(gc, threads);
    s.fine = kdv_residual(gf, threads);
  } else {
    s.coarse = zero_curvature_residual(gc, z, threads);
    s.fine = zero_curvature_residual(gf, z, threads);
  }
  s.order = residual_order(s.coarse, s.fine);
  s.coarse.order_estimate = s.fine.order_estimate = s.order;
  return s;
}

/// Columns: x, t, residual, status.
inline void write_residual_csv(const ResidualField& r, const std::filesystem::path& path) {
  CsvWriter out(path);
  out.header({"x", "t", "residual", "status"});
  for (std::size_t it = 0; it < r.nt(); ++it)
    for (std::size_t ix = 0; ix < r.nx(); ++ix) {
      const std::size_t k = r.index(it, ix);
      out.row_strings({format_double(r.x[ix]), format_double(r.t[it]), format_double(r.residual[k]),
                       to_string(r.status[k])});
    }
}

// ---------------------------------------------------------------------------
// Point identities.

struct CrosscheckPoint {
  double x = 0.0, t = 0.0;
};

inline constexpr double kCrosscheckStep = 1e-4;
inline constexpr double kCrosscheckAbsTol = 1e-6;
inline constexpr double kCrosscheckRelTol = 1e-4;
inline constexpr double kSchroedingerTol = 1e-7;

/// Closed-form u_x, expr13 and expr14 against central differences (step 1e-4)
/// of the closed-form u and u_xx; entries are the worst error divided by
/// 1e-6 + 1e-4 |reference| (pass <= 1). The Schroedinger residual
/// |-Y_xx + u Y - z Y| / (1 + |Y|) uses a 5-point difference of Y_x taken
/// along one integration.
inline DiagnosticsReport identity_crosscheck(const AdmissibleTriple& tr, const std::vector<CrosscheckPoint>& pts,
                                             Complex z = Complex(1.0, 1.0)) {
  const ExplicitSolution sol(tr);
  const double h = kCrosscheckStep;
  double e_ux = 0.0, e13 = 0.0, e14 = 0.0, e_s = 0.0;
  double a_ux = 0.0, a13 = 0.0, a14 = 0.0;
  std::size_t schroedinger_points = 0;
  std::vector<std::string> schroedinger_failures;
  auto scaled = [](const ComplexMatrix& got, const ComplexMatrix& ref) {
    return (got - ref).norm() / (kCrosscheckAbsTol + kCrosscheckRelTol * ref.norm());
  };
  for (const auto& p : pts) {
    const auto d = sol.derivatives(p.x, p.t);
    const ComplexMatrix up = sol.u(p.x + h, p.t), um = sol.u(p.x - h, p.t);
    const ComplexMatrix fd_ux = (up - um) / (2.0 * h);
    const ComplexMatrix fd_uxx = (up - 2.0 * d.u + um) / (h * h);
    const ComplexMatrix fd_uxxx =
        (sol.derivatives(p.x + h, p.t).u_xx() - sol.derivatives(p.x - h, p.t).u_xx()) / (2.0 * h);
    const ComplexMatrix r13 = 3.0 * d.u * d.u - fd_uxx;
    const ComplexMatrix r14 = 3.0 * (d.u * d.u_x + d.u_x * d.u) - fd_uxxx;
    e_ux = std::max(e_ux, scaled(d.u_x, fd_ux));
    e13 = std::max(e13, scaled(d.expr13, r13));
    e14 = std::max(e14, scaled(d.expr14, r14));
    a_ux = std::max(a_ux, (d.u_x - fd_ux).norm());
    a13 = std::max(a13, (d.expr13 - r13).norm());
    a14 = std::max(a14, (d.expr14 - r14).norm());

    if (std::abs(p.x) < 2.0 * h) continue;
    const double t = p.t;
    const Potential pot = [&sol, t](double x) { return sol.u(x, t); };
    std::vector<double> xs{p.x - 2 * h, p.x - h, p.x, p.x + h, p.x + 2 * h};
    if (p.x < 0.0) std::reverse(xs.begin(), xs.end());
    std::vector<SchroedingerSolution> ys;
    try {
      ys = schroedinger_solutions(pot, tr.m(), z, std::span<const double>(xs), 1e-12);
    } catch (const Error& e) {
      e_s = std::numeric_limits<double>::infinity();
      schroedinger_failures.push_back("x=" + format_double(p.x) + ", t=" + format_double(t) + ": " + e.what());
      continue;
    }
    const int c = 2;
    const int s = p.x < 0.0 ? -1 : 1;  // xs[c + s k] = x + k h
    const ComplexMatrix yxx = (ys[c - 2 * s].Yx - 8.0 * ys[c - s].Yx + 8.0 * ys[c + s].Yx - ys[c + 2 * s].Yx) / (12.0 * h);
    const ComplexMatrix& Y = ys[c].Y;
    e_s = std::max(e_s, (-yxx + d.u * Y - z * Y).norm() / (1.0 + Y.norm()));
    ++schroedinger_points;
  }
  DiagnosticsReport rep;
  rep.title = "identity_crosscheck";
  rep.add_upper("u_x_vs_fd", e_ux, 1.0, "max abs error " + format_double(a_ux));
  rep.add_upper("expr13_vs_fd", e13, 1.0, "max abs error " + format_double(a13));
  rep.add_upper("expr14_vs_fd", e14, 1.0, "max abs error " + format_double(a14));
  for (auto& f : schroedinger_failures) rep.notes.push_back("Schroedinger integration failed at " + f);
  if (schroedinger_points > 0 || !schroedinger_failures.empty())
    rep.add_upper("schroedinger_residual", e_s, kSchroedingerTol);
  else
    rep.notes.push_back("no point with |x| >= 2h for the Schroedinger check");
  rep.verdict = rep.all_passed() ? "CONSISTENT" : "INCONSISTENT";
  return rep;
}

/// |-Y_xx + u Y - z Y| / (1 + |Y|) at x for a given potential, with the same
/// 5-point difference of Y_x along one integration.
inline double schroedinger_residual(const Potential& u, Eigen::Index m, Complex z, double x, double h = kCrosscheckStep) {
  if (!(x >= 2.0 * h)) throw InvalidInput("schroedinger_residual needs x >= 2h");
  const std::vector<double> xs{x - 2 * h, x - h, x, x + h, x + 2 * h};
  const auto ys = schroedinger_solutions(u, m, z, std::span<const double>(xs), 1e-12);
  const ComplexMatrix yxx = (ys[0].Yx - 8.0 * ys[1].Yx + 8.0 * ys[3].Yx - ys[4].Yx) / (12.0 * h);
  const ComplexMatrix& Y = ys[2].Y;
  return (-yxx + u(x) * Y - z * Y).norm() / (1.0 + Y.norm());
}

}  // namespace weylkdv

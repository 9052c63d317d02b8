#pragma once

// Weyl functions M(z) of the explicit potentials: realization formulas,
// closed forms for the worked examples, Herglotz probing and low-energy fits.

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "weylkdv/diagnostics.hpp"
#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"
#include "weylkdv/triples.hpp"

namespace weylkdv {

/// Square root in the closed upper half-plane; positive on the positive axis.
inline Complex sqrt_upper(Complex z) {
  if (z == Complex(0.0, 0.0)) return {0.0, 0.0};
  Complex w = std::sqrt(z);
  if (w.imag() < 0.0) w = -w;
  return w;
}

enum class WeylPath { closed_trivial, closed_s25, closed_s34, realization, disc_limit, evolved };

inline std::string to_string(WeylPath p) {
  switch (p) {
    case WeylPath::closed_trivial: return "closed_trivial";
    case WeylPath::closed_s25: return "closed_s25";
    case WeylPath::closed_s34: return "closed_s34";
    case WeylPath::realization: return "realization";
    case WeylPath::disc_limit: return "disc_limit";
    case WeylPath::evolved: return "evolved";
  }
  return "unknown";
}

/// A map z -> M(z) tagged by how it is computed.
class WeylEvaluator {
public:
  using Fn = std::function<ComplexMatrix(Complex)>;

  WeylEvaluator(WeylPath path, Eigen::Index m, Fn fn, std::optional<AdmissibleTriple> triple = std::nullopt)
      : path_(path), m_(m), fn_(std::move(fn)), triple_(std::move(triple)) {
    if (m_ < 1) throw InvalidInput("Weyl evaluator needs m >= 1");
  }

  ComplexMatrix operator()(Complex z) const { return fn_(z); }
  WeylPath path() const { return path_; }
  Eigen::Index m() const { return m_; }
  const std::optional<AdmissibleTriple>& triple() const { return triple_; }

private:
  WeylPath path_;
  Eigen::Index m_;
  Fn fn_;
  std::optional<AdmissibleTriple> triple_;
};

// ---------------------------------------------------------------------------
// Realization.

struct Realization {
  ComplexMatrix A;     // (2n+m) x (2n+m)
  ComplexMatrix B;     // (2n+m) x m
  ComplexMatrix C;     // m x (2n+m)
  ComplexMatrix Jhat;  // (2n+m) x (2n+m)
  Eigen::Index n = 0, m = 0;
};

inline Realization make_realization(const AdmissibleTriple& tr) {
  const Eigen::Index n = tr.n(), m = tr.m(), N = 2 * n + m;
  const auto& a = tr.alpha();
  const auto& t1 = tr.theta1();
  const auto& t2 = tr.theta2();
  const ComplexMatrix Im = identity(m);
  const ComplexMatrix g = t2.adjoint() * t2;

  Realization r;
  r.n = n;
  r.m = m;
  r.A = zeros(N, N);
  r.A.block(0, 0, n, n) = a.adjoint();
  r.A.block(n, 0, m, n) = t1.adjoint();
  r.A.block(n + m, 0, n, n) = t2 * t2.adjoint();
  r.A.block(n + m, n, n, m) = t1;
  r.A.block(n + m, n + m, n, n) = a;

  r.B.resize(N, m);
  r.B << t1 + t2 * (Im + g), Im + g, -t2;

  r.C.resize(m, N);
  r.C << t2.adjoint(), Im - g, -t1.adjoint() + (Im - g) * t2.adjoint();

  r.Jhat = zeros(N, N);
  r.Jhat.block(0, n + m, n, n) = identity(n);
  r.Jhat.block(n, n, m, m) = Im;
  r.Jhat.block(n + m, 0, n, n) = identity(n);
  return r;
}

struct RealizationTerms {
  ComplexMatrix phi1_inv;  // I + B* Jhat (z - A)^{-1} B
  ComplexMatrix phi2;      // -I + C (z - A)^{-1} B
  ComplexMatrix M;         // -phi^{-1}, phi = (phi2 + 2i/sqrt(z)) phi1
};

inline RealizationTerms realization_terms(const Realization& r, Complex z, double limit = kDefaultConditionLimit) {
  const Eigen::Index N = r.A.rows();
  const ComplexMatrix zA = z * identity(N) - r.A;
  const auto f = factor(zA);
  if (!(f.condition < limit)) throw PoleError(z, f.condition);
  const ComplexMatrix res_b = f.lu.solve(r.B);
  RealizationTerms out;
  out.phi1_inv = identity(r.m) + r.B.adjoint() * r.Jhat * res_b;
  out.phi2 = -identity(r.m) + r.C * res_b;
  if (z == Complex(0.0, 0.0)) throw PoleError(z, std::numeric_limits<double>::infinity());
  const ComplexMatrix d = out.phi2 + (2.0 * kI / sqrt_upper(z)) * identity(r.m);
  const auto fd = factor(d);
  if (!(fd.condition < limit)) throw PoleError(z, fd.condition);
  // phi^{-1} = phi1^{-1} (phi2 + 2i/sqrt z)^{-1}
  out.M = -solve_right(out.phi1_inv, d, "phi", limit);
  return out;
}

inline WeylEvaluator weyl_realization(const AdmissibleTriple& tr) {
  auto r = std::make_shared<const Realization>(make_realization(tr));
  return {WeylPath::realization, tr.m(), [r](Complex z) { return realization_terms(*r, z).M; }, tr};
}

// ---------------------------------------------------------------------------
// Closed forms.

/// u = 0: ((i sqrt z - 1)/(i sqrt z + 1)) I.
inline ComplexMatrix weyl_closed_trivial(Eigen::Index m, Complex z) {
  const Complex w = sqrt_upper(z);
  const Complex den = kI * w + 1.0;
  if (std::abs(den) < 1e-14) throw PoleError(z, std::numeric_limits<double>::infinity());
  return ((kI * w - 1.0) / den) * identity(m);
}

/// {0, theta1, 0} with c = theta1* theta1:
/// sqrt z (z^3 + (z + c)^2) (sqrt z (z^3 - z^2 + c^2) - 2i z^3)^{-1}.
inline ComplexMatrix weyl_closed_s25(const ComplexMatrix& c, Complex z, double limit = kDefaultConditionLimit) {
  const Eigen::Index m = c.rows();
  const ComplexMatrix I = identity(m);
  const Complex w = sqrt_upper(z);
  const ComplexMatrix zc = z * I + c;
  const ComplexMatrix num = w * (z * z * z * I + zc * zc);
  const ComplexMatrix den = w * (z * z * z * I - z * z * I + c * c) - 2.0 * kI * z * z * z * I;
  const auto f = factor(den);
  if (!(f.condition < limit)) throw PoleError(z, f.condition);
  return solve_right(num, den, "s25 denominator", limit);
}

/// {alpha = alpha*, theta1, 0}: with k = theta1*(z - alpha)^{-1} theta1,
/// M = -(z + (I + k)^2)(-z + I - k^2 + 2i sqrt z)^{-1}.
inline ComplexMatrix weyl_closed_s34(const AdmissibleTriple& tr, Complex z, double limit = kDefaultConditionLimit) {
  const Eigen::Index n = tr.n(), m = tr.m();
  const ComplexMatrix I = identity(m);
  const auto f = factor(z * identity(n) - tr.alpha());
  if (!(f.condition < limit)) throw PoleError(z, f.condition);
  const ComplexMatrix k = tr.theta1().adjoint() * f.lu.solve(tr.theta1());
  const ComplexMatrix ik = I + k;
  const ComplexMatrix y = z * I + ik * ik;
  const ComplexMatrix x = (1.0 - z + 2.0 * kI * sqrt_upper(z)) * I - k * k;
  const auto fx = factor(x);
  if (!(fx.condition < limit)) throw PoleError(z, fx.condition);
  return -solve_right(y, x, "s34 denominator", limit);
}

enum class ClosedKind { trivial, s25, s34 };

inline void require_zero_theta2_hermitian(const AdmissibleTriple& tr, const char* what) {
  const bool t2_zero = tr.theta2().norm() <= kAdmissibleRelTol * (1.0 + tr.theta1().norm());
  if (!t2_zero || !is_hermitian(tr.alpha(), kAdmissibleRelTol))
    throw FamilyMismatch(std::string(what) + " requires alpha = alpha* and theta2 = 0");
}

/// kind = trivial uses only m of the triple; s25 requires alpha = 0, theta2 = 0.
inline ComplexMatrix weyl_closed(ClosedKind kind, const AdmissibleTriple& tr, Complex z) {
  switch (kind) {
    case ClosedKind::trivial: return weyl_closed_trivial(tr.m(), z);
    case ClosedKind::s25:
      if (!classify_family(tr).satisfies_s19) throw FamilyMismatch("closed form s25 requires alpha = 0, theta2 = 0");
      return weyl_closed_s25(tr.c_hat(), z);
    case ClosedKind::s34:
      require_zero_theta2_hermitian(tr, "closed form s34");
      return weyl_closed_s34(tr, z);
  }
  throw InvalidInput("unknown closed form");
}

inline WeylEvaluator closed_trivial_evaluator(Eigen::Index m) {
  return {WeylPath::closed_trivial, m, [m](Complex z) { return weyl_closed_trivial(m, z); }};
}

inline WeylEvaluator closed_s25_evaluator(const AdmissibleTriple& tr) {
  if (!classify_family(tr).satisfies_s19) throw FamilyMismatch("closed form s25 requires alpha = 0, theta2 = 0");
  const ComplexMatrix c = tr.c_hat();
  return {WeylPath::closed_s25, tr.m(), [c](Complex z) { return weyl_closed_s25(c, z); }, tr};
}

inline WeylEvaluator closed_s34_evaluator(const AdmissibleTriple& tr) {
  require_zero_theta2_hermitian(tr, "closed form s34");
  return {WeylPath::closed_s34, tr.m(), [tr](Complex z) { return weyl_closed_s34(tr, z); }, tr};
}

/// Closed form matching the triple: trivial for theta1 = 0, s25 for alpha = 0,
/// s34 for other alpha = alpha*, theta2 = 0; FamilyMismatch otherwise.
inline WeylEvaluator closed_evaluator_for(const AdmissibleTriple& tr) {
  if (tr.theta1().norm() == 0.0 && tr.theta2().norm() == 0.0) return closed_trivial_evaluator(tr.m());
  if (classify_family(tr).satisfies_s19) return closed_s25_evaluator(tr);
  return closed_s34_evaluator(tr);
}

// ---------------------------------------------------------------------------
// Herglotz probing.

struct HerglotzProbe {
  double min_imag_eig = std::numeric_limits<double>::infinity();
  Complex witness{0.0, 0.0};
  std::vector<Complex> witnesses;  // samples with negative minimum eigenvalue
  std::size_t evaluated = 0;
  std::size_t poles = 0;
};

inline HerglotzProbe herglotz_probe(const WeylEvaluator& ev, const std::vector<Complex>& samples,
                                    double witness_threshold = -1e-9) {
  HerglotzProbe p;
  for (Complex z : samples) {
    if (!(z.imag() > 0.0)) throw InvalidInput("Herglotz samples must lie in the open upper half-plane");
    ComplexMatrix mz;
    try {
      mz = ev(z);
    } catch (const PoleError&) {
      ++p.poles;
      continue;
    }
    ++p.evaluated;
    const double e = min_hermitian_eig(imag_part(mz));
    if (e < p.min_imag_eig) {
      p.min_imag_eig = e;
      p.witness = z;
    }
    if (e < witness_threshold) p.witnesses.push_back(z);
  }
  return p;
}

/// Uniform samples in the annulus r_min <= |z| <= r_max, margin < arg z < pi - margin.
inline std::vector<Complex> upper_half_plane_samples(std::mt19937_64& rng, std::size_t count, double r_min,
                                                     double r_max, double margin = 1e-2) {
  if (!(r_min > 0.0) || !(r_max >= r_min)) throw InvalidInput("sample annulus needs 0 < r_min <= r_max");
  std::uniform_real_distribution<double> ur(r_min, r_max), ua(margin, M_PI - margin);
  std::vector<Complex> out(count);
  for (auto& z : out) z = std::polar(ur(rng), ua(rng));
  return out;
}

// ---------------------------------------------------------------------------
// Low-energy asymptotics.

enum class LowEnergyFamily { s26, s36 };

namespace detail {

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nan("");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

/// Entrywise complex least squares of samples F(z_k) on the basis {1, sqrt z, z}.
inline std::array<ComplexMatrix, 3> fit_sqrt_series(const std::vector<Complex>& zs,
                                                    const std::vector<ComplexMatrix>& fs) {
  const Eigen::Index K = static_cast<Eigen::Index>(zs.size());
  if (K < 3) throw InvalidInput("series fit needs at least three samples");
  Eigen::MatrixXcd V(K, 3);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Complex w = sqrt_upper(zs[k]);
    V(k, 0) = 1.0;
    V(k, 1) = w;
    V(k, 2) = zs[k];
  }
  const auto qr = V.colPivHouseholderQr();
  const Eigen::Index m = fs.front().rows(), c = fs.front().cols();
  std::array<ComplexMatrix, 3> out{zeros(m, c), zeros(m, c), zeros(m, c)};
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      Eigen::VectorXcd rhs(K);
      for (Eigen::Index k = 0; k < K; ++k) rhs(k) = fs[static_cast<std::size_t>(k)](i, j);
      const Eigen::VectorXcd coef = qr.solve(rhs);
      for (int b = 0; b < 3; ++b) out[b](i, j) = coef(b);
    }
  return out;
}

}  // namespace detail

/// Default low-energy samples z = 10^{-k} i, k = 2..4 (s26 criterion).
inline std::vector<Complex> low_energy_imaginary_samples(int k_min = 2, int k_max = 4) {
  std::vector<Complex> zs;
  for (int k = k_min; k <= k_max; ++k) zs.emplace_back(0.0, std::pow(10.0, -k));
  return zs;
}

/// s26: |M(z) - I - 2z c^{-1}| / |z|^2 stays bounded (spread of the ratio over
/// the samples <= 2) and the residual decays with order >= 1.8.
/// s36: fits M(z) = c0 + c1 sqrt z + c2 z and compares c0 with
/// -(I + k)^{-1}(I - k) and c1 with 2i (I + k)^{-2}, k = theta1* alpha^{-1} theta1.
inline DiagnosticsReport low_energy_residual(const WeylEvaluator& ev, LowEnergyFamily family,
                                             const std::vector<Complex>& samples) {
  if (!ev.triple()) throw FamilyMismatch("low-energy check needs an evaluator built from a triple");
  const auto& tr = *ev.triple();
  const auto flags = classify_family(tr);
  for (Complex z : samples)
    if (!(z.imag() > 0.0) || std::abs(z) > 0.1) throw InvalidInput("low-energy samples must be in C+ with |z| <= 0.1");

  DiagnosticsReport rep;
  const ComplexMatrix I = identity(tr.m());
  if (family == LowEnergyFamily::s26) {
    if (!flags.satisfies_s19) throw FamilyMismatch("s26 asymptotics require alpha = 0, theta2 = 0");
    if (!(min_hermitian_eig(tr.c_hat()) > 0.0)) throw FamilyMismatch("s26 asymptotics require theta1* theta1 > 0");
    rep.title = "low energy s26";
    const ComplexMatrix cinv = checked_inverse(tr.c_hat(), "theta1* theta1");
    std::vector<double> r, res;
    double rmax = 0.0, rmin = std::numeric_limits<double>::infinity();
    for (Complex z : samples) {
      const double d = (ev(z) - I - 2.0 * z * cinv).norm();
      const double ratio = d / std::norm(z);
      r.push_back(std::abs(z));
      res.push_back(d);
      rmax = std::max(rmax, ratio);
      rmin = std::min(rmin, ratio);
      rep.notes.push_back("z=" + format_double(z.real()) + "+" + format_double(z.imag()) +
                          "i ratio=" + format_double(ratio));
    }
    rep.add_upper("max_ratio", rmax, 1e3);
    rep.add_upper("ratio_spread", rmax / rmin, 2.0);
    rep.add_lower("fitted_order", detail::loglog_slope(r, res), 1.8);
  } else {
    if (!flags.satisfies_s31) throw FamilyMismatch("s36 asymptotics require the s31 conditions: " + flags.note);
    rep.title = "low energy s36";
    const ComplexMatrix k = theta_alpha_inverse_theta(tr);
    const ComplexMatrix ik_inv = checked_inverse(I + k, "I + k");
    const ComplexMatrix c0_ref = -ik_inv * (I - k);
    const ComplexMatrix c1_ref = 2.0 * kI * ik_inv * ik_inv;
    std::vector<ComplexMatrix> fs;
    for (Complex z : samples) fs.push_back(ev(z));
    const auto c = detail::fit_sqrt_series(samples, fs);
    double fit_res = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Complex z = samples[i];
      fit_res = std::max(fit_res, (fs[i] - c[0] - sqrt_upper(z) * c[1] - z * c[2]).norm());
    }
    rep.add_upper("constant_term_error", (c[0] - c0_ref).norm(), 1e-3);
    rep.add_upper("sqrt_coefficient_error", (c1_ref - c[1]).norm(), 1e-2 * (1.0 + c1_ref.norm()));
    rep.add("fit_residual", fit_res, std::numeric_limits<double>::infinity(), true, "informational");
    rep.add("constant_term_re_11", c[0](0, 0).real(), c0_ref(0, 0).real(), true, "fitted vs predicted");
    rep.add("sqrt_coefficient_im_11", c[1](0, 0).imag(), c1_ref(0, 0).imag(), true, "fitted vs predicted");
  }
  rep.verdict = rep.all_passed() ? "CONSISTENT" : "INCONSISTENT";
  return rep;
}

// ---------------------------------------------------------------------------
// CSV export.

struct WeylSample {
  Complex z;
  ComplexMatrix M;  // empty at a pole
  std::string path;
};

/// Columns: re_z, im_z, re_M_i_j, im_M_i_j, path. Poles are written as nan.
inline void write_weyl_csv(const std::vector<WeylSample>& samples, Eigen::Index m, const std::filesystem::path& path) {
  CsvWriter w(path);
  std::vector<std::string> head{"re_z", "im_z"};
  for (auto& c : matrix_columns("M", m)) head.push_back(c);
  head.emplace_back("path");
  w.header(head);
  for (const auto& s : samples) {
    std::vector<std::string> cells{format_double(s.z.real()), format_double(s.z.imag())};
    if (s.M.size() == 0)
      append_nan_cells(cells, m);
    else
      append_matrix_cells(cells, s.M);
    cells.push_back(s.path);
    w.row_strings(cells);
  }
}

inline std::vector<WeylSample> sample_weyl(const WeylEvaluator& ev, const std::vector<Complex>& zs) {
  std::vector<WeylSample> out;
  out.reserve(zs.size());
  for (Complex z : zs) {
    WeylSample s{z, ComplexMatrix(), to_string(ev.path())};
    try {
      s.M = ev(z);
    } catch (const PoleError&) {
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace weylkdv

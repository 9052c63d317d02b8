#pragma once

// Admissible triples {alpha, theta1, theta2}:
//   alpha - alpha* = theta1 theta2* - theta2 theta1*,
// with alpha n x n and theta_k n x m, and the special families used by the
// explicit constructions.

#include <string>

#include "weylkdv/io.hpp"
#include "weylkdv/numkit.hpp"

namespace weylkdv {

inline constexpr double kAdmissibleRelTol = 1e-12;

struct AdmissibilityCheck {
  bool ok = false;
  double residual = 0.0;
};

inline void check_triple_dimensions(const ComplexMatrix& alpha, const ComplexMatrix& theta1,
                                    const ComplexMatrix& theta2) {
  if (alpha.rows() < 1 || alpha.rows() != alpha.cols()) throw InvalidInput("alpha must be a non-empty square matrix");
  if (theta1.rows() != alpha.rows() || theta2.rows() != alpha.rows())
    throw InvalidInput("theta1 and theta2 must have n = dim(alpha) rows");
  if (theta1.cols() < 1 || theta1.cols() != theta2.cols())
    throw InvalidInput("theta1 and theta2 must have the same number m >= 1 of columns");
}

inline AdmissibilityCheck check_admissible(const ComplexMatrix& alpha, const ComplexMatrix& theta1,
                                           const ComplexMatrix& theta2) {
  check_triple_dimensions(alpha, theta1, theta2);
  const ComplexMatrix r =
      alpha - alpha.adjoint() - theta1 * theta2.adjoint() + theta2 * theta1.adjoint();
  AdmissibilityCheck c;
  c.residual = r.norm();
  c.ok = c.residual <= kAdmissibleRelTol * (1.0 + alpha.norm());
  return c;
}

class AdmissibleTriple {
public:
  /// Throws InvalidInput unless the triple is dimensionally consistent and admissible.
  AdmissibleTriple(ComplexMatrix alpha, ComplexMatrix theta1, ComplexMatrix theta2)
      : alpha_(std::move(alpha)), theta1_(std::move(theta1)), theta2_(std::move(theta2)) {
    const auto c = check_admissible(alpha_, theta1_, theta2_);
    if (!c.ok) throw InvalidInput("triple is not admissible (residual " + format_double(c.residual) + ")");
  }

  /// {alpha, theta1, 0}.
  static AdmissibleTriple with_zero_theta2(ComplexMatrix alpha, ComplexMatrix theta1) {
    ComplexMatrix t2 = zeros(theta1.rows(), theta1.cols());
    return {std::move(alpha), std::move(theta1), std::move(t2)};
  }

  Eigen::Index n() const { return alpha_.rows(); }
  Eigen::Index m() const { return theta1_.cols(); }
  const ComplexMatrix& alpha() const { return alpha_; }
  const ComplexMatrix& theta1() const { return theta1_; }
  const ComplexMatrix& theta2() const { return theta2_; }

  /// theta1* theta1 (m x m), written c-hat in the worked examples.
  ComplexMatrix c_hat() const { return theta1_.adjoint() * theta1_; }
  /// theta1 theta1* (n x n).
  ComplexMatrix c() const { return theta1_ * theta1_.adjoint(); }

private:
  ComplexMatrix alpha_, theta1_, theta2_;
};

struct FamilyFlags {
  bool satisfies_s15 = false;  // alpha = alpha*, theta1* alpha theta1 = 0, theta2 = 0
  bool satisfies_s19 = false;  // alpha = 0, theta2 = 0
  bool satisfies_s31 = false;  // s15 plus det alpha != 0, det(I +- k) != 0, k not <= 0
  std::string note;            // why s31 failed, when it did
};

namespace detail {
inline constexpr double kInvertibleRcond = 1e-12;
inline constexpr double kPositiveEigenvalue = 1e-10;
}  // namespace detail

/// k = theta1* alpha^{-1} theta1; throws SingularMatrixError when alpha is singular.
inline ComplexMatrix theta_alpha_inverse_theta(const AdmissibleTriple& tr) {
  return tr.theta1().adjoint() *
         solve_left(tr.alpha(), tr.theta1(), "alpha is singular", 1.0 / detail::kInvertibleRcond);
}

inline FamilyFlags classify_family(const AdmissibleTriple& tr) {
  const auto& a = tr.alpha();
  const auto& t1 = tr.theta1();
  const double an = a.norm();
  const bool hermitian = (a - a.adjoint()).norm() <= kAdmissibleRelTol * (1.0 + an);
  const bool theta2_zero = tr.theta2().norm() <= kAdmissibleRelTol * (1.0 + t1.norm());
  const double scale = an * t1.squaredNorm();
  const bool orthogonal = (t1.adjoint() * a * t1).norm() <= kAdmissibleRelTol * scale;
  const bool alpha_zero = an <= kAdmissibleRelTol;

  FamilyFlags f;
  f.satisfies_s15 = hermitian && orthogonal && theta2_zero;
  f.satisfies_s19 = alpha_zero && theta2_zero;
  if (!f.satisfies_s15) {
    f.note = "s15 conditions fail";
    return f;
  }
  if (f.satisfies_s19) {
    f.note = "alpha = 0 (det alpha = 0)";
    return f;
  }
  if (!(factor(a).condition < 1.0 / detail::kInvertibleRcond)) {
    f.note = "alpha singular";
    return f;
  }
  const ComplexMatrix k = theta_alpha_inverse_theta(tr);
  const ComplexMatrix I = identity(tr.m());
  if (!(factor(I + k).condition < 1.0 / detail::kInvertibleRcond) ||
      !(factor(I - k).condition < 1.0 / detail::kInvertibleRcond)) {
    f.note = "det(I +- theta1* alpha^-1 theta1) = 0";
    return f;
  }
  if (!(max_hermitian_eig(k) > detail::kPositiveEigenvalue)) {
    f.note = "theta1* alpha^-1 theta1 <= 0";
    return f;
  }
  f.satisfies_s31 = true;
  return f;
}

// JSON: {n, m, alpha, theta1, theta2}; complex entries as [re, im].

inline Json triple_to_json(const AdmissibleTriple& tr) {
  return Json{{"n", tr.n()},
              {"m", tr.m()},
              {"alpha", matrix_to_json(tr.alpha())},
              {"theta1", matrix_to_json(tr.theta1())},
              {"theta2", matrix_to_json(tr.theta2())}};
}

struct RawTriple {
  ComplexMatrix alpha, theta1, theta2;
};

/// Parses dimensions and entries without checking admissibility.
inline RawTriple raw_triple_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidInput("triple must be a JSON object");
  for (const char* key : {"n", "m", "alpha", "theta1", "theta2"})
    if (!j.contains(key)) throw InvalidInput(std::string("triple is missing field '") + key + "'");
  if (!j["n"].is_number_integer() || !j["m"].is_number_integer())
    throw InvalidInput("triple fields n and m must be integers");
  const auto n = j["n"].get<Eigen::Index>();
  const auto m = j["m"].get<Eigen::Index>();
  if (n < 1 || m < 1) throw InvalidInput("triple dimensions n, m must be >= 1");
  return {matrix_from_json(j["alpha"], n, n, "alpha"), matrix_from_json(j["theta1"], n, m, "theta1"),
          matrix_from_json(j["theta2"], n, m, "theta2")};
}

inline AdmissibleTriple triple_from_json(const Json& j) {
  auto r = raw_triple_from_json(j);
  return {std::move(r.alpha), std::move(r.theta1), std::move(r.theta2)};
}

inline Json flags_to_json(const FamilyFlags& f) {
  return Json{{"s15", f.satisfies_s15}, {"s19", f.satisfies_s19}, {"s31", f.satisfies_s31}, {"note", f.note}};
}

}  // namespace weylkdv

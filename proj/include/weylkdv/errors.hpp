#pragma once

#include <complex>
#include <sstream>
#include <stdexcept>
#include <string>

namespace weylkdv {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed arguments: dimension mismatches, empty blocks, bad ranges.
class InvalidInput : public Error {
public:
  using Error::Error;
};

class SingularMatrixError : public Error {
public:
  SingularMatrixError(const std::string& what, double condition)
      : Error(what + " (condition estimate " + fmt(condition) + ")"), condition_(condition) {}
  double condition() const noexcept { return condition_; }

private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
  double condition_;
};

// A Weyl function or resolvent evaluated at (numerically) a pole.
class PoleError : public Error {
public:
  PoleError(std::complex<double> z, double condition)
      : Error(describe(z, condition)), z_(z), condition_(condition) {}
  std::complex<double> z() const noexcept { return z_; }
  double condition() const noexcept { return condition_; }

private:
  static std::string describe(std::complex<double> z, double c) {
    std::ostringstream os;
    os << "pole at z=" << z.real() << (z.imag() < 0 ? "" : "+") << z.imag() << "i (condition " << c << ")";
    return os.str();
  }
  std::complex<double> z_;
  double condition_;
};

// S(x,t) not invertible: blow-up point of the explicit solution.
class SingularSError : public Error {
public:
  SingularSError(double x, double t, double condition)
      : Error(describe(x, t, condition)), x_(x), t_(t), condition_(condition) {}
  double x() const noexcept { return x_; }
  double t() const noexcept { return t_; }
  double condition() const noexcept { return condition_; }

private:
  static std::string describe(double x, double t, double c) {
    std::ostringstream os;
    os << "S(x,t) singular at x=" << x << ", t=" << t << " (condition " << c << ")";
    return os.str();
  }
  double x_, t_, condition_;
};

class IntegrationError : public Error {
public:
  using Error::Error;
};

class RangeError : public Error {
public:
  using Error::Error;
};

class FamilyMismatch : public Error {
public:
  using Error::Error;
};

}  // namespace weylkdv

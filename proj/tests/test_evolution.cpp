#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "weylkdv/evolution.hpp"

using namespace weylkdv;

namespace {

ComplexMatrix scalar(Complex v)
{
   return ComplexMatrix::Constant(1, 1, v);
}

AdmissibleTriple s31_example()
{
   ComplexMatrix alpha = zeros(2, 2);
   alpha(0, 0) = 1.0;
   alpha(1, 1) = -2.0;
   ComplexMatrix t1(2, 1);
   t1 << std::sqrt(2.0), 1.0;
   return AdmissibleTriple::with_zero_theta2(alpha, t1);
}

BoundaryTrace wiggly_trace(std::mt19937_64& rng, int m, double t_max)
{
   const ComplexMatrix a = oracle::random_hermitian(rng, m);
   const ComplexMatrix b = oracle::random_hermitian(rng, m);
   return BoundaryTrace([a, b](double t) -> ComplexMatrix { return a * std::cos(3 * t) + b * t; }, m, t_max);
}

}  // namespace

TEST_CASE("boundary traces", "[evolution]")
{
   const auto z = zero_trace(2, 1.0);
   CHECK(z(0.5).norm() == 0.0);
   CHECK_THROWS_AS(z(1.5), InvalidInput);
   CHECK_THROWS_AS(z(-0.1), InvalidInput);
   ComplexMatrix nh(1, 1);
   nh(0, 0) = Complex(0, 1);
   CHECK_THROWS_AS(constant_trace(nh, 1.0)(0.0), InvalidInput);

   SECTION("explicit trace at t = 0 is -4 theta1* theta1")
   {
      const auto tr = trace_from_triple(AdmissibleTriple(scalar(0), scalar(2.0), scalar(0)), 0.2);
      CHECK(tr(0.0)(0, 0).real() == Catch::Approx(-16.0));
   }
}

TEST_CASE("boundary_F_star", "[evolution]")
{
   const auto f0 = boundary_F_star(0.3, 1.0, zero_trace(1, 1.0));
   ComplexMatrix e0(2, 2);
   e0 << 0.0, -4.0, 4.0, 0.0;
   CHECK((f0 - e0).norm() == 0.0);

   const auto f1 = boundary_F_star(0.0, kI, constant_trace(scalar(-4.0), 1.0));
   ComplexMatrix e1(2, 2);
   e1 << 4.0, 4.0, Complex(0, 4), -4.0;
   CHECK((f1 - e1).norm() < 1e-15);

   std::mt19937_64 rng(1);
   const auto tr = wiggly_trace(rng, 3, 2.0);
   const ComplexMatrix f = boundary_F_star(1.1, Complex(0.3, -2), tr);
   for (int k = 0; k < 3; ++k)
      CHECK(f(k, k) + f(k + 3, k + 3) == Complex(0.0));
}

TEST_CASE("propagator", "[evolution]")
{
   SECTION("t = 0 gives I")
   {
      CHECK((R_solve(zero_trace(2, 1.0), kI, 0.0) - identity(4)).norm() == 0.0);
   }

   SECTION("zero trace: matrix exponential and Z e^{it zeta Sigma3} Z^{-1}")
   {
      for (Complex z : {kI, Complex(1, 1), Complex(-0.5, 0.7)})
         for (double t : {0.25, 0.5, 1.0})
         {
            const ComplexMatrix R = R_solve(zero_trace(1, 1.0), z, t);
            const ComplexMatrix gen = propagator_generator(0.0, z, zero_trace(1, 1.0));
            const ComplexMatrix ref = oracle::taylor_exp(t * gen);
            INFO("z = " << z << " t = " << t);
            CHECK((R - ref).norm() < 1e-9 * (1 + ref.norm()));
            CHECK((R - R_trivial(1, z, t)).norm() < 1e-9 * (1 + ref.norm()));
         }
   }

   SECTION("semigroup for the zero trace")
   {
      const auto tr = zero_trace(2, 2.0);
      const Complex z(0.4, 0.9);
      const ComplexMatrix a = R_solve(tr, z, 0.3), b = R_solve(tr, z, 0.5), ab = R_solve(tr, z, 0.8);
      CHECK((ab - a * b).norm() < 1e-9 * (1 + ab.norm()));
   }

   SECTION("random trace: det = 1 and agreement with fixed-step RK4")
   {
      std::mt19937_64 rng(7);
      for (int rep = 0; rep < 3; ++rep)
      {
         const auto tr = wiggly_trace(rng, 2, 1.0);
         const Complex z(0.5, 1.0);
         const ComplexMatrix R = R_solve(tr, z, 1.0);
         CHECK(std::abs(R.determinant() - 1.0) < 1e-8);
         const ComplexMatrix ref = oracle::fixed_rk4(
            [&](double t) -> ComplexMatrix
            {
               const ComplexMatrix T = structural_matrices(2).T;
               return T.adjoint() * boundary_F_star(t, z, tr) * T;
            },
            0.0, 1.0, identity(4), 4000);
         CHECK((R - ref).norm() < 1e-8 * (1 + ref.norm()));
      }
   }

   SECTION("checkpointed propagator")
   {
      std::mt19937_64 rng(9);
      const auto tr = wiggly_trace(rng, 1, 1.0);
      const Propagator p(tr, kI, {0.25, 0.5, 1.0});
      REQUIRE(p.values().size() == 3);
      CHECK((p.values()[1] - R_solve(tr, kI, 0.5)).norm() < 1e-9 * (1 + p.values()[1].norm()));
   }
}

TEST_CASE("Dirac-type transform", "[evolution]")
{
   SECTION("zeta on the mid-sector ray")
   {
      const Complex z = std::polar(1.0, 5 * std::numbers::pi / 6);
      const Complex zeta = dirac_zeta(z);
      CHECK(std::abs(zeta - std::polar(4.0, std::numbers::pi / 4)) < 1e-14);
      CHECK(in_dirac_sector(z));
      CHECK_FALSE(in_dirac_sector(kI));
   }

   SECTION("Z K* closed form")
   {
      for (Complex z : {kI, Complex(-1, 0.5), Complex(2, 3)})
      {
         const auto s = structural_matrices(2);
         const Complex w = sqrt_upper(z);
         const ComplexMatrix I = identity(2);
         const ComplexMatrix ref = -(1.0 / std::sqrt(2.0 * z)) * block2x2(kI * I, w * I, I, kI * w * I);
         CHECK((dirac_Z(2, z) * s.K.adjoint() - ref).norm() < 1e-14);
         CHECK((dirac_Z(2, z) * dirac_Z_inverse(2, z) - identity(4)).norm() < 1e-14);
      }
   }

   SECTION("zero trace gives e^{it zeta Sigma3}")
   {
      const Complex z(-0.8, 0.4);
      const auto d = dirac_transform(zero_trace(1, 1.0), z, 0.7);
      ComplexMatrix ref = zeros(2, 2);
      ref(0, 0) = std::exp(kI * 0.7 * d.zeta);
      ref(1, 1) = std::exp(-kI * 0.7 * d.zeta);
      CHECK((d.Rt - ref).norm() < 1e-9 * (1 + ref.norm()));
      CHECK(d.in_sector);
   }

   SECTION("transformed propagator solves the Dirac system")
   {
      std::mt19937_64 rng(11);
      for (Complex z : {Complex(-0.8, 0.4), Complex(0.3, 1.2)})
      {
         const auto tr = wiggly_trace(rng, 2, 1.0);
         const auto d = dirac_transform(tr, z, 1.0);
         const ComplexMatrix direct = dirac_direct(tr, d.zeta, 1.0);
         CHECK((d.Rt - direct).norm() < 1e-8 * (1 + direct.norm()));
      }
   }
}

TEST_CASE("evolve_M", "[evolution]")
{
   std::mt19937_64 rng(5);
   SECTION("R = I gives M0")
   {
      const ComplexMatrix M0 = oracle::random_matrix(rng, 2, 2);
      CHECK((evolve_M(M0, identity(4)) - M0).norm() < 1e-14);
   }

   SECTION("trivial case is stationary")
   {
      for (Complex z : {kI, Complex(1, 1)})
         for (double t : {0.5, 1.0, 2.0})
         {
            const ComplexMatrix M0 = weyl_closed_trivial(1, z);
            const ComplexMatrix R = R_solve(zero_trace(1, 2.0), z, t);
            CHECK((evolve_M(M0, R) - M0).norm() < 1e-10);
         }
   }

   SECTION("eigenvector identity")
   {
      for (Complex z : {kI, Complex(1, 1), Complex(-0.3, 0.2)})
      {
         const double t = 0.6;
         const Complex M0 = weyl_closed_trivial(1, z)(0, 0);
         const Complex w = sqrt_upper(z);
         ComplexMatrix v(2, 1);
         v << -kI * M0, 1.0;
         ComplexMatrix ref(2, 1);
         ref << w + kI, kI * w + 1.0;
         ref *= std::exp(kI * t * dirac_zeta(z)) / (kI * w + 1.0);
         const ComplexMatrix got = R_trivial(1, z, t) * v;
         CHECK((got - ref).norm() < 1e-12 * (1 + ref.norm()));
      }
   }

   SECTION("scale invariance")
   {
      const ComplexMatrix M0 = oracle::random_matrix(rng, 2, 2);
      const ComplexMatrix R = identity(4) + 0.3 * oracle::random_matrix(rng, 4, 4);
      CHECK((evolve_M(M0, Complex(2, -3) * R) - evolve_M(M0, R)).norm() < 1e-12 * (1 + evolve_M(M0, R).norm()));
   }

   SECTION("Herglotz preserved for the zero trace")
   {
      for (int k = 0; k < 20; ++k)
      {
         const ComplexMatrix H = oracle::random_hermitian(rng, 2);
         const ComplexMatrix P = oracle::random_matrix(rng, 2, 2);
         const ComplexMatrix M0 = H + kI * (P * P.adjoint() + 0.1 * identity(2));
         const Complex z(std::uniform_real_distribution<double>(0.5, 2.0)(rng), std::uniform_real_distribution<double>(0.5, 2.0)(rng));
         const ComplexMatrix M = evolve_M(M0, R_solve(zero_trace(2, 1.0), z, 0.4));
         CHECK(min_hermitian_eig(imag_part(M)) >= -1e-8);
      }
   }

   SECTION("evolved evaluator")
   {
      const auto ev = evolved_evaluator(closed_trivial_evaluator(1), zero_trace(1, 1.0), 1.0);
      CHECK(ev.path() == WeylPath::evolved);
      CHECK(std::abs(ev(Complex(1, 1))(0, 0) - weyl_closed_trivial(1, Complex(1, 1))(0, 0)) < 1e-10);
   }

   SECTION("singular denominator")
   {
      ComplexMatrix R = zeros(2, 2);
      CHECK_THROWS_AS(evolve_M(scalar(1.0), R), SingularMatrixError);
   }
}

TEST_CASE("M_D", "[evolution]")
{
   SECTION("trivial M0 gives i")
   {
      for (Complex z : {kI, Complex(-1, 0.3), Complex(-0.01, 0.001), Complex(5, 5)})
         CHECK(std::abs(MD_from_M0(closed_trivial_evaluator(1), z)(0, 0) - kI) < 1e-12);
   }

   SECTION("M0 = I is singular")
   {
      CHECK_THROWS_AS(MD_from_M0(identity(2), kI), SingularMatrixError);
   }

   SECTION("s25 low-energy behaviour")
   {
      const auto tr = AdmissibleTriple(scalar(0), scalar(1.0), scalar(0));
      const Complex z = std::polar(1e-4, 5 * std::numbers::pi / 6);
      const Complex md = MD_from_M0(closed_s25_evaluator(tr), z)(0, 0);
      const Complex ref = -1.0 / (z * sqrt_upper(z));
      CHECK(std::abs(md / ref - 1.0) < 1e-3);
   }
}

TEST_CASE("expansivity monitors", "[evolution]")
{
   SECTION("t = 0 gives zero monitors")
   {
      // the two monitors apply in disjoint parts of the half-plane
      const auto a = expansivity_monitors(zero_trace(1, 1.0), Complex(1, 2), {0.0}, 0.0);
      CHECK(a.value("j_expansivity_min_eig") == Catch::Approx(0.0).margin(1e-14));
      CHECK(a.find("sigma3_min_eig") == nullptr);
      const auto b = expansivity_monitors(zero_trace(1, 1.0), Complex(-1, 0.5), {0.0}, 0.0);
      CHECK(b.value("sigma3_min_eig") == Catch::Approx(0.0).margin(1e-14));
      CHECK(b.find("j_expansivity_min_eig") == nullptr);
      CHECK(b.value("det_defect") == 0.0);
   }

   SECTION("zero trace diagonal form")
   {
      const Complex z(-0.8, 0.4);
      const double t = 0.5;
      const auto d = dirac_transform(zero_trace(1, 1.0), z, t);
      const auto s = structural_matrices(1);
      const ComplexMatrix mon = s.Sigma3 - d.Rt.adjoint() * s.Sigma3 * d.Rt;
      const double a = d.zeta.imag();
      CHECK(std::abs(mon(0, 0) - (1 - std::exp(-2 * t * a))) < 1e-9);
      CHECK(std::abs(mon(1, 1) - (std::exp(2 * t * a) - 1)) < 1e-9);
      CHECK(std::abs(mon(0, 1)) < 1e-9);
   }

   SECTION("random bounded trace")
   {
      std::mt19937_64 rng(13);
      for (int rep = 0; rep < 3; ++rep)
      {
         const auto tr = wiggly_trace(rng, 2, 0.5);
         const auto r = expansivity_monitors(tr, Complex(1.0, 2.0), {0.1, 0.2, 0.3, 0.4, 0.5}, 2.0);
         CHECK(r.all_passed());
         CHECK(r.find("j_expansivity_min_eig") != nullptr);
         // Im zeta < 0 at z = 1 + 2i
         CHECK(r.find("sigma3_min_eig") == nullptr);
      }
   }

   SECTION("bound constant from a grid")
   {
      GridSpec spec;
      spec.x1 = 1.0;
      spec.t1 = 0.1;
      spec.hx = spec.ht = 0.05;
      spec.with_derivatives = false;
      const auto g = make_solution_grid(AdmissibleTriple(scalar(0), scalar(1.0), scalar(0)), spec, 1);
      double mx = 0;
      for (std::size_t k = 0; k < g.u.size(); ++k)
         if (g.valid[k])
            mx = std::max(mx, std::abs(g.u[k](0, 0)));
      CHECK(bound_constant(g) == Catch::Approx(1.1 * mx));
   }

   SECTION("large growth is flagged as rounding limited")
   {
      const auto tr = trace_from_triple(AdmissibleTriple(scalar(0), scalar(1.0), scalar(0)), 0.2);
      const auto r = expansivity_monitors(tr, Complex(3.5, 4.0), linspace(0.0, 0.2, 5), 6.0);
      auto noted = [](const DiagnosticsReport& d) {
         for (const auto& n : d.notes)
            if (n.find("rounding floor") != std::string::npos) return true;
         return false;
      };
      CHECK(noted(r));
      const auto small = expansivity_monitors(tr, Complex(2.0, 1.0), linspace(0.0, 0.2, 5), 6.0);
      CHECK_FALSE(noted(small));
      CHECK(small.all_passed());
   }
}

TEST_CASE("non-existence diagnostics", "[evolution]")
{
   SECTION("ray radii")
   {
      const auto r = ray_radii({});
      REQUIRE(r.size() == 13);
      CHECK(r.front() == Catch::Approx(1e-1));
      CHECK(r.back() == Catch::Approx(1e-4));
      CHECK_THROWS_AS(ray_radii({1.0, 1e-3, 1e-2, 5}), InvalidInput);
   }

   SECTION("alpha = 0 scalar triple")
   {
      const auto d = nonexistence_diagnose(AdmissibleTriple(scalar(0), scalar(1.0), scalar(0)));
      CHECK(d.verdict == "NON_EXISTENT");
      CHECK(d.family == "s19");
      CHECK(std::abs(d.fitted_exponent + 1.5) <= 0.05);
      CHECK(std::abs(d.fitted_coefficient(0, 0) + 1.0) <= 0.02);
      CHECK(d.report.all_passed() == false);  // min_imag_eig entry records the violation
      CHECK(d.report.find("exponent_error")->passed);
      CHECK(d.report.find("coefficient_rel_error")->passed);
   }

   SECTION("matrix c")
   {
      ComplexMatrix t1(2, 2);
      t1 << 1.0, 0.2, 0.0, 0.8;
      const auto tr = AdmissibleTriple::with_zero_theta2(zeros(2, 2), t1);
      const auto d = nonexistence_diagnose(tr);
      CHECK(d.verdict == "NON_EXISTENT");
      CHECK((d.fitted_coefficient + tr.c_hat()).norm() <= 0.02 * tr.c_hat().norm());
   }

   SECTION("s31 example")
   {
      const auto d = nonexistence_diagnose(s31_example());
      CHECK(d.verdict == "NON_EXISTENT");
      CHECK(d.family == "s31");
      CHECK(std::abs(d.fitted_exponent + 0.5) <= 0.05);
      CHECK(std::abs(d.fitted_coefficient(0, 0) - 1.5) <= 0.03);
   }

   SECTION("realization path gives the same verdict")
   {
      const auto d = nonexistence_diagnose(weyl_realization(s31_example()));
      CHECK(d.verdict == "NON_EXISTENT");
      CHECK(std::abs(d.fitted_exponent + 0.5) <= 0.05);
   }

   SECTION("trivial Weyl function is inconclusive")
   {
      const auto d = nonexistence_diagnose(closed_trivial_evaluator(1));
      CHECK(d.verdict == "INCONCLUSIVE");
      for (const auto& s : d.samples)
         CHECK(std::abs(s.MD(0, 0) - kI) < 1e-12);
   }

   SECTION("family mismatch")
   {
      ComplexMatrix a(1, 1);
      a(0, 0) = 1.0;
      CHECK_THROWS_AS(nonexistence_diagnose(AdmissibleTriple(a, scalar(0.0), scalar(0.0))), FamilyMismatch);
   }

   SECTION("JSON schema and thread independence")
   {
      const auto tr = AdmissibleTriple(scalar(0), scalar(1.0), scalar(0));
      const auto a = nonexistence_diagnose(tr, {}, 1);
      const auto b = nonexistence_diagnose(tr, {}, 4);
      const Json j = a.to_json();
      for (const char* key : {"triple", "ray", "samples", "fittedExponent", "fittedCoefficient", "verdict"})
         CHECK(j.contains(key));
      CHECK(j["samples"].size() == 13);
      CHECK(j["samples"][0].contains("minImagEig"));
      CHECK(j.dump() == b.to_json().dump());
   }
}

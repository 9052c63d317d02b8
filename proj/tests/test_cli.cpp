#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_app.hpp"

using namespace weylkdv;
using weylkdv::cli::run_command;
namespace fs = std::filesystem;

namespace {

const char* kScalar = R"({"n":1,"m":1,"alpha":[[[0,0]]],"theta1":[[[1,0]]],"theta2":[[[0,0]]]})";
const char* kS31 = R"({"n":2,"m":1,"alpha":[[[1,0],[0,0]],[[0,0],[-2,0]]],
  "theta1":[[[1.4142135623730951,0]],[[1,0]]],"theta2":[[[0,0]],[[0,0]]]})";

fs::path scratch(const std::string& name)
{
   const fs::path p = fs::temp_directory_path() / "weylkdv_cli_test" / name;
   fs::remove_all(p);
   fs::create_directories(p);
   return p;
}

fs::path write_file(const fs::path& p, const std::string& text)
{
   std::ofstream(p) << text;
   return p;
}

std::string slurp(const fs::path& p)
{
   std::ifstream in(p, std::ios::binary);
   std::stringstream ss;
   ss << in.rdbuf();
   return ss.str();
}

struct Result {
   int code;
   std::string out, err;
};

Result run(std::vector<std::string> args)
{
   args.insert(args.begin(), "weylkdv");
   std::ostringstream out, err;
   const int code = run_command(args, out, err);
   return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("complex parsing", "[cli]")
{
   using cli::parse_complex;
   CHECK(parse_complex("1+1i") == Complex(1, 1));
   CHECK(parse_complex("2i") == Complex(0, 2));
   CHECK(parse_complex("-i") == Complex(0, -1));
   CHECK(parse_complex("-1.5-0.25i") == Complex(-1.5, -0.25));
   CHECK(parse_complex("3") == Complex(3, 0));
   CHECK(parse_complex("1e-2+2e1j") == Complex(0.01, 20));
   CHECK(parse_complex("0.5,2") == Complex(0.5, 2));
   CHECK_THROWS_AS(parse_complex("one"), InvalidInput);
   CHECK_THROWS_AS(parse_complex("1+"), InvalidInput);
}

TEST_CASE("triple validate", "[cli]")
{
   const auto dir = scratch("validate");
   const auto t = write_file(dir / "t.json", kScalar);

   SECTION("scalar example prints family flags")
   {
      const auto r = run({"triple", "validate", "-f", t.string(), "--out", (dir / "o").string()});
      CHECK(r.code == 0);
      CHECK(r.out.find("family s15: yes") != std::string::npos);
      CHECK(r.out.find("family s19: yes") != std::string::npos);
      CHECK(r.out.find("family s31: no") != std::string::npos);
      CHECK(fs::exists(dir / "o" / "triple.json"));
      CHECK(fs::exists(dir / "o" / "boundary.json"));
   }
   SECTION("inline triple via --triple")
   {
      const auto r = run({"triple", "validate", "--triple", kS31, "--out", (dir / "o2").string()});
      CHECK(r.code == 0);
      CHECK(r.out.find("family s31: yes") != std::string::npos);
   }
   SECTION("inadmissible triple exits 1 and reports the residual")
   {
      const auto bad =
          write_file(dir / "bad.json", R"({"n":1,"m":1,"alpha":[[[0,1]]],"theta1":[[[1,0]]],"theta2":[[[0,0]]]})");
      const auto r = run({"triple", "validate", "-f", bad.string(), "--out", (dir / "o3").string()});
      CHECK(r.code == 1);
      CHECK(r.out.find("NOT admissible") != std::string::npos);
      const auto man = read_json(dir / "o3" / "manifest.json");
      CHECK(man["exit_code"] == 1);
      CHECK(man["result"]["admissible"] == false);
   }
   SECTION("input errors exit 1")
   {
      CHECK(run({"triple", "validate", "-f", (dir / "missing.json").string()}).code == 1);
      const auto broken = write_file(dir / "broken.json", "{\"n\": 1, ");
      CHECK(run({"triple", "validate", "-f", broken.string(), "--out", (dir / "o4").string()}).code == 1);
      const auto dims = write_file(dir / "dims.json", R"({"n":2,"m":1,"alpha":[[[0,0]]],"theta1":[[[1,0]]],"theta2":[[[0,0]]]})");
      CHECK(run({"triple", "validate", "-f", dims.string(), "--out", (dir / "o5").string()}).code == 1);
      CHECK(run({"triple", "validate", "--out", (dir / "o6").string()}).code == 1);
   }
}

TEST_CASE("blowup scan prints the singularity", "[cli]")
{
   const auto dir = scratch("blowup");
   const auto t = write_file(dir / "t.json", kScalar);
   const auto r = run({"blowup", "scan", "-f", t.string(), "--t", "0.5", "--out", (dir / "o").string()});
   REQUIRE(r.code == 0);
   CHECK(r.out.find("x*=1.44224957") != std::string::npos);
   const std::string csv = slurp(dir / "o" / "blowup.csv");
   CHECK(csv.rfind("t,x_star\n", 0) == 0);
   const auto man = read_json(dir / "o" / "manifest.json");
   CHECK(std::abs(man["result"]["roots"][0]["x_star"].get<double>() - std::cbrt(3.0)) < 1e-8);

   SECTION("no root before 1/(4c)")
   {
      const auto r2 = run({"blowup", "scan", "-f", t.string(), "--t", "0.1", "--out", (dir / "o2").string()});
      CHECK(r2.code == 0);
      CHECK(r2.out.find("no root") != std::string::npos);
   }
}

TEST_CASE("flags override config fields of the same name", "[cli]")
{
   const auto dir = scratch("override");
   write_file(dir / "t.json", kScalar);
   const auto cfg = write_file(dir / "cfg.json", R"({"triple": "t.json", "t": [0.3], "x_hi": 10})");
   const auto r = run({"blowup", "scan", "-f", cfg.string(), "--t", "0.5", "--x-hi", "5", "--out", (dir / "o").string()});
   REQUIRE(r.code == 0);
   const auto man = read_json(dir / "o" / "manifest.json");
   CHECK(man["config"]["t"] == Json::array({0.5}));
   CHECK(man["config"]["x_hi"] == 5);
   CHECK(r.out.find("t=0.5") != std::string::npos);
   CHECK(r.out.find("t=0.3") == std::string::npos);

   SECTION("wrong field types exit 1")
   {
      const auto bad = write_file(dir / "bad.json", R"({"triple": "t.json", "nx": "many"})");
      CHECK(run({"blowup", "scan", "-f", bad.string(), "--out", (dir / "o2").string()}).code == 1);
   }
}

TEST_CASE("manifest contents", "[cli]")
{
   const auto dir = scratch("manifest");
   const auto t = write_file(dir / "t.json", kScalar);
   const auto r = run({"diagnose", "-f", t.string(), "--out", (dir / "o").string(), "--seed", "7", "--threads", "2"});
   REQUIRE(r.code == 0);
   const auto man = read_json(dir / "o" / "manifest.json");
   CHECK(man["tool"] == "weylkdv");
   CHECK(man["version"] == WEYLKDV_VERSION);
   CHECK(man["command"] == "diagnose");
   CHECK(man["seed"] == 7);
   CHECK(man["threads"] == 2);
   CHECK(man["exit_code"] == 0);
   CHECK(man["config"]["alpha"].is_array());
   for (const auto& f : man["outputs"]) CHECK(fs::exists(dir / "o" / f.get<std::string>()));
   CHECK(!man.contains("timestamp"));
}

TEST_CASE("diagnose", "[cli]")
{
   const auto dir = scratch("diagnose");
   const auto t = write_file(dir / "t.json", kScalar);

   SECTION("s19 scalar example is NON_EXISTENT with exit 0")
   {
      const auto r = run({"diagnose", "-f", t.string(), "--out", (dir / "o").string()});
      CHECK(r.code == 0);
      CHECK(r.out.find("verdict: NON_EXISTENT") != std::string::npos);
      const auto d = read_json(dir / "o" / "diagnose.json");
      for (const char* k : {"triple", "ray", "samples", "fittedExponent", "fittedCoefficient", "verdict"})
         CHECK(d.contains(k));
      CHECK(d["samples"].size() == 13);
      for (const char* k : {"r", "minImagEig", "MD"}) CHECK(d["samples"][0].contains(k));
      CHECK(std::abs(d["fittedExponent"].get<double>() + 1.5) < 0.05);
   }
   SECTION("trivial Weyl function is INCONCLUSIVE with exit 0")
   {
      const auto r = run({"diagnose", "--trivial", "--out", (dir / "o2").string()});
      CHECK(r.code == 0);
      CHECK(r.out.find("verdict: INCONCLUSIVE") != std::string::npos);
   }
   SECTION("triple outside both families exits 1")
   {
      const auto s = write_file(dir / "s.json", R"({"n":1,"m":1,"alpha":[[[1,0]]],"theta1":[[[1,0]]],"theta2":[[[0,0]]]})");
      CHECK(run({"diagnose", "-f", s.string(), "--out", (dir / "o3").string()}).code == 1);
   }
}

TEST_CASE("weyl eval", "[cli]")
{
   const auto dir = scratch("weyl");
   const auto t = write_file(dir / "t.json", kScalar);
   auto eval = [&](const std::string& out, std::vector<std::string> extra) {
      std::vector<std::string> a{"weyl", "eval", "-f", t.string(), "--out", (dir / out).string()};
      a.insert(a.end(), extra.begin(), extra.end());
      return run(a);
   };

   SECTION("closed and disc paths agree")
   {
      REQUIRE(eval("c", {"--z", "1+1i"}).code == 0);
      REQUIRE(eval("d", {"--z", "1+1i", "--path", "disc"}).code == 0);
      const std::string head = "re_z,im_z,re_M_1_1,im_M_1_1,path\n";
      const std::string c = slurp(dir / "c" / "weyl.csv");
      const std::string d = slurp(dir / "d" / "weyl.csv");
      CHECK(c.rfind(head, 0) == 0);
      CHECK(d.rfind(head, 0) == 0);
      const auto mc = read_json(dir / "c" / "manifest.json");
      CHECK(mc["result"]["path"] == "closed_s25");
   }
   SECTION("seeded samples rerun bit-identically, independent of threads")
   {
      REQUIRE(eval("r1", {"--path", "realization", "--samples", "25"}).code == 0);
      REQUIRE(eval("r2", {"--path", "realization", "--samples", "25", "--threads", "3"}).code == 0);
      REQUIRE(eval("r3", {"--path", "realization", "--samples", "25", "--seed", "43"}).code == 0);
      CHECK(slurp(dir / "r1" / "weyl.csv") == slurp(dir / "r2" / "weyl.csv"));
      CHECK(slurp(dir / "r1" / "weyl.csv") != slurp(dir / "r3" / "weyl.csv"));
      REQUIRE(eval("d1", {"--path", "disc", "--samples", "4", "--threads", "1"}).code == 0);
      REQUIRE(eval("d2", {"--path", "disc", "--samples", "4", "--threads", "4"}).code == 0);
      CHECK(slurp(dir / "d1" / "weyl.csv") == slurp(dir / "d2" / "weyl.csv"));
   }
   SECTION("bad requests exit 1")
   {
      CHECK(eval("b1", {"--path", "nowhere"}).code == 1);
      CHECK(eval("b2", {"--z", "1-1i"}).code == 1);
      CHECK(eval("b3", {"--z", "abc"}).code == 1);
      CHECK(run({"weyl", "eval", "--trivial", "--path", "realization", "--out", (dir / "b4").string()}).code == 1);
   }
}

TEST_CASE("weyl converge", "[cli]")
{
   const auto dir = scratch("converge");
   const auto t = write_file(dir / "t.json", kScalar);

   SECTION("converged sequence")
   {
      const auto r = run({"weyl", "converge", "-f", t.string(), "--z", "1+1i", "--out", (dir / "o").string()});
      CHECK(r.code == 0);
      const std::string csv = slurp(dir / "o" / "convergence.csv");
      CHECK(csv.rfind("l,re_M_1_1,im_M_1_1,distance\n", 0) == 0);
      const auto man = read_json(dir / "o" / "manifest.json");
      CHECK(man["result"]["points"][0]["converged"] == true);
      CHECK(man["result"]["points"][0]["distance_to_closed_form"].get<double>() < 1e-6);
   }
   SECTION("short schedule does not converge: exit 2 with manifest")
   {
      const auto r = run({"weyl", "converge", "--trivial", "--z", "0.01+0.01i", "--l-schedule", "1,2", "--out",
                          (dir / "o2").string()});
      CHECK(r.code == 2);
      CHECK(fs::exists(dir / "o2" / "convergence.csv"));
      CHECK(read_json(dir / "o2" / "manifest.json")["exit_code"] == 2);
   }
   SECTION("decreasing schedule exits 1")
   {
      CHECK(run({"weyl", "converge", "--trivial", "--l-schedule", "4,2", "--out", (dir / "o3").string()}).code == 1);
   }
}

TEST_CASE("evolve", "[cli]")
{
   const auto dir = scratch("evolve");
   const auto t = write_file(dir / "t.json", kScalar);

   SECTION("zero trace reproduces the trivial propagator")
   {
      const auto r =
          run({"evolve", "--trivial", "--z", "1+1i", "--t", "0.5,1", "--out", (dir / "o").string()});
      REQUIRE(r.code == 0);
      const std::string csv = slurp(dir / "o" / "evolve.csv");
      CHECK(csv.rfind("t,re_z,im_z,re_M_1_1,im_M_1_1\n", 0) == 0);
      const auto mon = read_json(dir / "o" / "monitors.json");
      CHECK(mon["monitors"][0]["verdict"] == "EXPANSIVE");
      // M0 is invariant under the u = 0 evolution
      const ComplexMatrix m0 = weyl_closed_trivial(1, Complex(1, 1));
      const ComplexMatrix m1 = evolve_M(m0, R_trivial(1, Complex(1, 1), 1.0));
      CHECK((m1 - m0).norm() < 1e-10);
   }
   SECTION("triple trace")
   {
      const auto r = run({"evolve", "-f", t.string(), "--z", "1i", "--t", "0.1", "--out", (dir / "o2").string()});
      CHECK(r.code == 0);
      CHECK(read_json(dir / "o2" / "monitors.json")["trace"] == "triple");
   }
   SECTION("negative times exit 1")
   {
      CHECK(run({"evolve", "--trivial", "--t", "-1", "--out", (dir / "o3").string()}).code == 1);
   }
}

TEST_CASE("solution grid and residuals", "[cli]")
{
   const auto dir = scratch("grid");
   const auto t = write_file(dir / "t.json", kScalar);

   SECTION("grid export")
   {
      const auto r = run({"solution", "grid", "-f", t.string(), "--x1", "1", "--t1", "0.1", "--out",
                          (dir / "o").string()});
      REQUIRE(r.code == 0);
      const std::string csv = slurp(dir / "o" / "solution_grid.csv");
      CHECK(csv.rfind("x,t,re_u_1_1,im_u_1_1,mask\n", 0) == 0);
      CHECK(fs::exists(dir / "o" / "grid_manifest.json"));
   }
   SECTION("grid rerun is bit-identical")
   {
      REQUIRE(run({"solution", "grid", "-f", t.string(), "--threads", "1", "--out", (dir / "g1").string()}).code == 0);
      REQUIRE(run({"solution", "grid", "-f", t.string(), "--threads", "4", "--out", (dir / "g2").string()}).code == 0);
      CHECK(slurp(dir / "g1" / "solution_grid.csv") == slurp(dir / "g2" / "solution_grid.csv"));
   }
   SECTION("bad spacing exits 1")
   {
      CHECK(run({"solution", "grid", "-f", t.string(), "--hx", "0", "--out", (dir / "o2").string()}).code == 1);
   }
   SECTION("residuals")
   {
      const auto r = run({"residuals", "-f", t.string(), "--x1", "1", "--t1", "0.1", "--out", (dir / "o3").string()});
      REQUIRE(r.code == 0);
      const auto j = read_json(dir / "o3" / "residuals.json");
      CHECK(j["kdv"]["order_estimate"].get<double>() == Catch::Approx(2.0).margin(0.3));
      CHECK(j["identity_crosscheck"]["verdict"] == "CONSISTENT");
      CHECK(slurp(dir / "o3" / "residual_kdv.csv").rfind("x,t,residual,status\n", 0) == 0);
      CHECK(fs::exists(dir / "o3" / "residual_zero_curvature.csv"));
   }
}

TEST_CASE("usage errors", "[cli]")
{
   CHECK(run({}).code == 1);
   CHECK(run({"bogus"}).code == 1);
   CHECK(run({"weyl"}).code == 1);
   CHECK(run({"diagnose", "--no-such-flag"}).code == 1);
   CHECK(run({"--help"}).code == 0);
   CHECK(run({"weyl", "eval", "--help"}).code == 0);
}

#pragma once

// weylkdv command-line front end. Every subcommand reads an optional JSON
// config (-f/--config), applies flag overrides of the same name (dashes in
// flags map to underscores in config keys), writes its artifacts and a
// manifest.json into --out, and returns 0 / 1 (validation) / 2 (numeric).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "weylkdv/canonical.hpp"
#include "weylkdv/evolution.hpp"
#include "weylkdv/explicit.hpp"
#include "weylkdv/residuals.hpp"
#include "weylkdv/triples.hpp"
#include "weylkdv/weyl.hpp"

#ifndef WEYLKDV_VERSION
#define WEYLKDV_VERSION "0.0.0"
#endif

namespace weylkdv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumeric = 2;

/// Parses "a", "bi", "a+bi", "a-bi" or "a,b".
inline Complex parse_complex(const std::string& text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  static const std::regex pair(R"(^([-+]?[0-9.eE+-]+),([-+]?[0-9.eE+-]+)$)");
  static const std::regex full(R"(^([-+]?(?:[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))([-+](?:[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)?)[ij]$)");
  static const std::regex imag(R"(^([-+]?(?:[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)?)[ij]$)");
  static const std::regex real(R"(^[-+]?(?:[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)$)");
  std::smatch mt;
  auto num = [](const std::string& v) {
    if (v.empty() || v == "+") return 1.0;
    if (v == "-") return -1.0;
    return std::stod(v);
  };
  try {
    if (std::regex_match(s, mt, pair)) return {std::stod(mt[1]), std::stod(mt[2])};
    if (std::regex_match(s, mt, full)) return {std::stod(mt[1]), num(mt[2])};
    if (std::regex_match(s, mt, imag)) return {0.0, num(mt[1])};
    if (std::regex_match(s, real)) return {std::stod(s), 0.0};
  } catch (const std::exception&) {
  }
  throw InvalidInput("cannot parse complex number '" + text + "'");
}

inline Complex complex_from_config(const Json& j) {
  if (j.is_string()) return parse_complex(j.get<std::string>());
  return complex_from_json(j);
}

/// Effective configuration: file contents with flag overrides applied.
class Config {
public:
  Config() : j_(Json::object()) {}

  void load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("config file not found: " + path.string());
    Json j;
    try {
      in >> j;
    } catch (const Json::parse_error& e) {
      throw InvalidInput("malformed config " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    j_ = std::move(j);
    base_ = path.parent_path();
  }

  void set(const std::string& key, Json v) { j_[key] = std::move(v); }
  bool has(const std::string& key) const { return j_.contains(key) && !j_[key].is_null(); }
  const Json& json() const { return j_; }
  const std::filesystem::path& base() const { return base_; }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    const Json& v = j_[key];
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      try {
        std::size_t pos = 0;
        const double d = std::stod(v.get<std::string>(), &pos);
        if (pos == v.get<std::string>().size()) return d;
      } catch (const std::exception&) {
      }
    }
    throw InvalidInput("config field '" + key + "' must be a number");
  }

  long integer(const std::string& key, long def) const {
    const double d = number(key, static_cast<double>(def));
    if (d != std::floor(d)) throw InvalidInput("config field '" + key + "' must be an integer");
    return static_cast<long>(d);
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const Json& v = j_[key];
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
    }
    throw InvalidInput("config field '" + key + "' must be a boolean");
  }

  std::string string(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!j_[key].is_string()) throw InvalidInput("config field '" + key + "' must be a string");
    return j_[key].get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) const {
    if (!has(key)) return def;
    const Json& v = j_[key];
    std::vector<double> out;
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw InvalidInput("config field '" + key + "' must be a number or an array of numbers");
    for (const auto& e : v) {
      if (!e.is_number()) throw InvalidInput("config field '" + key + "' must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<Complex> complexes(const std::string& key, std::vector<Complex> def) const {
    if (!has(key)) return def;
    const Json& v = j_[key];
    if (v.is_string() || v.is_number()) return {complex_from_config(v)};
    if (!v.is_array()) throw InvalidInput("config field '" + key + "' must be an array of complex numbers");
    // a bare [re, im] pair is one number
    if (v.size() == 2 && v[0].is_number() && v[1].is_number()) return {complex_from_json(v)};
    std::vector<Complex> out;
    for (const auto& e : v) out.push_back(complex_from_config(e));
    return out;
  }

  /// The triple object: the config itself, inline, from a file path (relative to
/// the config), or nested.
  std::optional<Json> triple_json() const {
    if (!has("triple")) {
      // the config file may itself be a triple
      if (!j_.contains("alpha")) return std::nullopt;
      Json t = Json::object();
      for (const char* k : {"n", "m", "alpha", "theta1", "theta2"})
        if (j_.contains(k)) t[k] = j_[k];
      return t;
    }
    Json t = j_["triple"];
    if (t.is_string()) {
      const std::string s = t.get<std::string>();
      if (!s.empty() && s.front() == '{') {
        try {
          t = Json::parse(s);
        } catch (const Json::parse_error& e) {
          throw InvalidInput(std::string("malformed inline triple: ") + e.what());
        }
      } else {
        std::filesystem::path p(s);
        if (p.is_relative() && !std::filesystem::exists(p) && !base_.empty()) p = base_ / p;
        std::ifstream in(p);
        if (!in) throw InvalidInput("triple file not found: " + s);
        try {
          in >> t;
        } catch (const Json::parse_error& e) {
          throw InvalidInput("malformed triple file " + s + ": " + e.what());
        }
      }
    }
    if (t.is_object() && t.contains("triple") && !t.contains("alpha")) t = t["triple"];
    return t;
  }

  std::optional<AdmissibleTriple> triple() const {
    const auto t = triple_json();
    if (!t) return std::nullopt;
    return triple_from_json(*t);
  }

private:
  Json j_;
  std::filesystem::path base_;
};

/// Collects output files and writes the manifest.
class Run {
public:
  Run(std::string command, const Config& cfg, std::filesystem::path out, unsigned long seed, unsigned threads)
      : command_(std::move(command)), cfg_(cfg.json()), out_(std::move(out)), seed_(seed), threads_(threads) {
    std::error_code ec;
    std::filesystem::create_directories(out_, ec);
    if (ec) throw InvalidInput("cannot create output directory " + out_.string() + ": " + ec.message());
  }

  std::filesystem::path file(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }

  void set_result(Json r) { result_ = std::move(r); }

  void write_manifest(int code, const std::string& message) const {
    Json m;
    m["tool"] = "weylkdv";
    m["version"] = WEYLKDV_VERSION;
    m["command"] = command_;
    m["config"] = cfg_;
    m["seed"] = seed_;
    m["threads"] = threads_;
    m["outputs"] = outputs_;
    m["exit_code"] = code;
    m["message"] = message;
    if (!result_.is_null()) m["result"] = result_;
    write_json(out_ / "manifest.json", m);
  }

  const std::filesystem::path& out() const { return out_; }
  unsigned long seed() const { return seed_; }
  unsigned threads() const { return threads_; }

private:
  std::string command_;
  Json cfg_;
  std::filesystem::path out_;
  unsigned long seed_;
  unsigned threads_;
  std::vector<std::string> outputs_;
  Json result_;
};

/// Failure that maps to exit code 2 without an underlying library error.
class NumericFailure : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Shared option plumbing.

struct FlagSet {
  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, bool> switches;
  std::string config_path;
};

struct Leaf {
  CLI::App* app = nullptr;
  std::string name;
  std::shared_ptr<FlagSet> flags = std::make_shared<FlagSet>();
};

inline std::string key_of(const std::string& flag) {
  std::string k = flag;
  for (char& c : k)
    if (c == '-') c = '_';
  return k;
}

inline void scalar_flag(Leaf& l, const std::string& flag, const std::string& help) {
  l.app->add_option("--" + flag, l.flags->scalars[key_of(flag)], help);
}

inline void list_flag(Leaf& l, const std::string& flag, const std::string& help) {
  l.app->add_option("--" + flag, l.flags->lists[key_of(flag)], help)->delimiter(';');
}

inline void switch_flag(Leaf& l, const std::string& flag, const std::string& help) {
  l.app->add_flag("--" + flag, l.flags->switches[key_of(flag)], help);
}

inline void common_flags(Leaf& l) {
  l.app->add_option("-f,--config", l.flags->config_path, "JSON config file");
  scalar_flag(l, "out", "output directory (default: out)");
  scalar_flag(l, "seed", "random seed (default: 42)");
  scalar_flag(l, "threads", "worker threads (default: WEYL_KDV_THREADS or all cores)");
  scalar_flag(l, "triple", "triple JSON file or inline JSON object");
}

inline void grid_flags(Leaf& l) {
  for (const char* f : {"x0", "x1", "hx", "t0", "t1", "ht"}) scalar_flag(l, f, std::string("grid ") + f);
  scalar_flag(l, "with-derivatives", "store closed-form u_x, u_xx (true/false)");
}

/// Scalar flag text as JSON: numbers and booleans keep their type.
inline Json flag_value(const std::string& s) {
  try {
    Json j = Json::parse(s);
    if (j.is_number() || j.is_boolean() || j.is_object() || j.is_array()) return j;
  } catch (const Json::parse_error&) {
  }
  return s;
}

inline Config build_config(const Leaf& l) {
  Config cfg;
  if (!l.flags->config_path.empty()) cfg.load(l.flags->config_path);
  for (const auto& [k, v] : l.flags->scalars)
    if (l.app->count("--" + [&] {
          std::string f = k;
          for (char& c : f)
            if (c == '_') c = '-';
          return f;
        }()) > 0)
      cfg.set(k, flag_value(v));
  for (const auto& [k, v] : l.flags->lists) {
    if (v.empty()) continue;
    Json arr = Json::array();
    for (const auto& item : v) {
      // comma-separated numbers inside one item
      std::stringstream ss(item);
      std::string part;
      bool complex_like = item.find('i') != std::string::npos || item.find('j') != std::string::npos;
      if (complex_like || k == "z") {
        arr.push_back(item);
      } else {
        while (std::getline(ss, part, ','))
          if (!part.empty()) arr.push_back(flag_value(part));
      }
    }
    cfg.set(k, arr);
  }
  for (const auto& [k, v] : l.flags->switches)
    if (v) cfg.set(k, true);
  return cfg;
}

inline GridSpec grid_from(const Config& c) {
  GridSpec s;
  s.x0 = c.number("x0", s.x0);
  s.x1 = c.number("x1", s.x1);
  s.hx = c.number("hx", s.hx);
  s.t0 = c.number("t0", s.t0);
  s.t1 = c.number("t1", s.t1);
  s.ht = c.number("ht", s.ht);
  s.with_derivatives = c.boolean("with_derivatives", s.with_derivatives);
  if (!(s.hx > 0.0) || !(s.ht > 0.0)) throw InvalidInput("grid spacings must be positive");
  if (!(s.x1 > s.x0) || !(s.t1 >= s.t0)) throw InvalidInput("grid ranges must be non-degenerate");
  return s;
}

inline AdmissibleTriple require_triple(const Config& c) {
  auto t = c.triple();
  if (!t) throw InvalidInput("this command needs a triple (--triple or config field 'triple')");
  return *t;
}

inline double positive(const Config& c, const std::string& key, double def) {
  const double v = c.number(key, def);
  if (!(v > 0.0)) throw InvalidInput("'" + key + "' must be positive");
  return v;
}

/// Twelve significant digits for terminal output; files keep full precision.
inline std::string show(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

inline std::string complex_text(Complex z) { return show(z.real()) + (z.imag() < 0 ? "" : "+") + show(z.imag()) + "i"; }

inline std::string matrix_text(const ComplexMatrix& a) {
  if (a.size() == 1) return complex_text(a(0, 0));
  return matrix_to_json(a).dump();
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns an exit code and may throw library errors.

inline int cmd_triple_validate(const Config& cfg, Run& run, std::ostream& out) {
  const auto tj = cfg.triple_json();
  if (!tj) throw InvalidInput("this command needs a triple (--triple or config field 'triple')");
  // parsed without the admissibility check so the residual can be reported
  const RawTriple raw = raw_triple_from_json(*tj);
  const auto check = check_admissible(raw.alpha, raw.theta1, raw.theta2);
  Json result{{"admissible", check.ok}, {"residual", check.residual}};
  out << "admissibility residual: " << show(check.residual) << "\n";
  if (!check.ok) {
    out << "triple is NOT admissible\n";
    run.set_result(result);
    return kExitValidation;
  }
  const AdmissibleTriple tr(raw.alpha, raw.theta1, raw.theta2);
  const auto flags = classify_family(tr);
  result["flags"] = flags_to_json(flags);
  out << "admissible: yes (n=" << tr.n() << ", m=" << tr.m() << ")\n";
  out << "family s15: " << (flags.satisfies_s15 ? "yes" : "no") << "\n";
  out << "family s19: " << (flags.satisfies_s19 ? "yes" : "no") << "\n";
  out << "family s31: " << (flags.satisfies_s31 ? "yes" : "no") << "\n";
  if (!flags.note.empty()) out << "note: " << flags.note << "\n";
  if (flags.satisfies_s15) {
    const auto rep = boundary_report(tr, linspace(0.0, cfg.number("t_max", 0.2), 5));
    result["boundary"] = rep.to_json();
    out << "boundary compliance at t=0: " << rep.verdict << "\n";
    write_json(run.file("boundary.json"), rep.to_json());
  }
  write_json(run.file("triple.json"), Json{{"triple", triple_to_json(tr)}, {"flags", flags_to_json(flags)}});
  run.set_result(result);
  return kExitOk;
}

inline int cmd_solution_grid(const Config& cfg, Run& run, std::ostream& out) {
  const auto tr = require_triple(cfg);
  const auto spec = grid_from(cfg);
  const auto g = make_solution_grid(tr, spec, run.threads());
  write_grid_csv(g, run.file("solution_grid.csv"));
  const Json man = grid_manifest_json(g);
  write_json(run.file("grid_manifest.json"), man);
  std::size_t masked = 0;
  for (auto v : g.valid) masked += v ? 0 : 1;
  out << "grid " << g.nx() << " x " << g.nt() << " nodes, " << masked << " masked\n";
  run.set_result(Json{{"nx", g.nx()}, {"nt", g.nt()}, {"masked_nodes", masked}});
  if (masked == g.valid.size()) throw NumericFailure("every grid node is singular");
  return kExitOk;
}

inline int cmd_blowup_scan(const Config& cfg, Run& run, std::ostream& out) {
  const auto tr = require_triple(cfg);
  BlowupScanOptions opt;
  opt.x_lo = cfg.number("x_lo", opt.x_lo);
  opt.x_hi = cfg.number("x_hi", opt.x_hi);
  const long nx = cfg.integer("nx", static_cast<long>(opt.nx));
  if (nx < 2) throw InvalidInput("'nx' must be >= 2");
  opt.nx = static_cast<std::size_t>(nx);
  std::vector<double> ts = cfg.numbers("t", {});
  if (ts.empty()) {
    const long nt = cfg.integer("nt", 11);
    if (nt < 1) throw InvalidInput("'nt' must be >= 1");
    ts = linspace(cfg.number("t0", 0.0), cfg.number("t1", 1.0), static_cast<std::size_t>(nt));
  }
  const auto scan = blowup_scan(tr, ts, opt);
  write_blowup_csv(scan, run.file("blowup.csv"));
  Json roots = Json::array();
  for (double t : ts) {
    std::vector<std::string> xs;
    for (const auto& r : scan.roots)
      if (r.t == t) xs.push_back(show(r.x));
    out << "t=" << show(t) << ": ";
    if (xs.empty()) {
      out << "no root on [" << show(opt.x_lo) << ", " << show(opt.x_hi) << "]\n";
    } else {
      for (std::size_t k = 0; k < xs.size(); ++k) out << (k ? ", " : "") << "x*=" << xs[k];
      out << "\n";
    }
  }
  for (const auto& r : scan.roots) roots.push_back({{"t", r.t}, {"x_star", r.x}});
  run.set_result(Json{{"roots", roots}, {"imag_violations", scan.imag_violations}});
  return kExitOk;
}

/// u = 0 of block size m when `trivial` is set, else the triple's potential.
struct WeylSource {
  std::optional<AdmissibleTriple> triple;
  Eigen::Index m = 1;
};

inline WeylSource weyl_source(const Config& cfg) {
  WeylSource s;
  if (cfg.boolean("trivial", false)) {
    s.m = cfg.integer("m", 1);
    if (s.m < 1) throw InvalidInput("'m' must be >= 1");
    return s;
  }
  s.triple = require_triple(cfg);
  s.m = s.triple->m();
  return s;
}

inline std::vector<double> l_schedule(const Config& cfg) {
  auto sched = cfg.numbers("l_schedule", default_l_schedule());
  if (sched.empty()) throw InvalidInput("'l_schedule' is empty");
  return sched;
}

inline std::shared_ptr<const Hamiltonian> hamiltonian_for(const WeylSource& src, double l_max, const Config& cfg) {
  const double tol = positive(cfg, "tol", 1e-10);
  const Potential u = src.triple ? potential_from_triple(*src.triple) : zero_potential(src.m);
  return std::make_shared<const Hamiltonian>(u, src.m, l_max, tol);
}

inline std::vector<Complex> z_points(const Config& cfg, Run& run, std::vector<Complex> def) {
  auto zs = cfg.complexes("z", {});
  const long samples = cfg.integer("samples", 0);
  if (samples < 0) throw InvalidInput("'samples' must be >= 0");
  if (samples > 0) {
    std::mt19937_64 rng(run.seed());
    const auto extra = upper_half_plane_samples(rng, static_cast<std::size_t>(samples), positive(cfg, "r_min", 0.1),
                                                positive(cfg, "r_max", 10.0));
    zs.insert(zs.end(), extra.begin(), extra.end());
  }
  return zs.empty() ? def : zs;
}

inline int cmd_weyl_eval(const Config& cfg, Run& run, std::ostream& out) {
  const auto src = weyl_source(cfg);
  const std::string path = cfg.string("path", "closed");
  const auto zs = z_points(cfg, run, {Complex(1.0, 1.0)});
  for (Complex z : zs)
    if (!(z.imag() > 0.0)) throw InvalidInput("Weyl functions are evaluated for Im z > 0, got " + complex_text(z));

  std::optional<WeylEvaluator> ev;
  if (path == "closed") {
    ev = src.triple ? closed_evaluator_for(*src.triple) : closed_trivial_evaluator(src.m);
  } else if (path == "realization") {
    if (!src.triple) throw InvalidInput("the realization path needs a triple");
    ev = weyl_realization(*src.triple);
  } else if (path == "disc") {
    const auto sched = l_schedule(cfg);
    ev = disc_limit_evaluator(hamiltonian_for(src, sched.back(), cfg), sched);
  } else {
    throw InvalidInput("unknown Weyl path '" + path + "' (closed|realization|disc)");
  }

  std::vector<WeylSample> samples(zs.size());
  const unsigned threads = path == "disc" ? run.threads() : 1u;
  parallel_for(zs.size(), threads, [&](std::size_t k) {
    WeylSample s;
    s.z = zs[k];
    s.path = to_string(ev->path());
    try {
      s.M = (*ev)(zs[k]);
    } catch (const PoleError&) {
      s.M = ComplexMatrix();
    }
    samples[k] = std::move(s);
  });
  write_weyl_csv(samples, src.m, run.file("weyl.csv"));
  std::size_t poles = 0;
  double min_im = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    if (s.M.size() == 0) {
      ++poles;
      out << "z=" << complex_text(s.z) << ": pole\n";
      continue;
    }
    min_im = std::min(min_im, min_hermitian_eig(imag_part(s.M)));
    out << "z=" << complex_text(s.z) << ": M=" << matrix_text(s.M) << "\n";
  }
  out << "path " << to_string(ev->path()) << ", " << samples.size() << " points, " << poles << " poles\n";
  run.set_result(Json{{"path", to_string(ev->path())}, {"points", samples.size()}, {"poles", poles},
                      {"min_imag_eig", poles == samples.size() ? Json(nullptr) : Json(min_im)}});
  if (poles == samples.size()) throw NumericFailure("every requested point is a pole");
  return kExitOk;
}

inline int cmd_weyl_converge(const Config& cfg, Run& run, std::ostream& out) {
  const auto src = weyl_source(cfg);
  const auto sched = l_schedule(cfg);
  const auto zs = cfg.complexes("z", {Complex(1.0, 1.0)});
  const auto h = hamiltonian_for(src, sched.back(), cfg);
  std::vector<WeylLimit> limits(zs.size());
  parallel_for(zs.size(), run.threads(), [&](std::size_t k) { limits[k] = weyl_limit(*h, zs[k], sched, default_pair(src.m)); });
  bool all = true;
  Json res = Json::array();
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const std::string name = zs.size() == 1 ? "convergence.csv" : "convergence_" + std::to_string(k) + ".csv";
    write_convergence_csv(limits[k], run.file(name));
    const auto& w = limits[k];
    out << "z=" << complex_text(zs[k]) << ": M(" << show(w.l.back()) << ")=" << matrix_text(w.M)
        << ", last distance " << show(w.distances.back()) << (w.converged ? " (converged)" : " (NOT converged)")
        << "\n";
    Json e{{"z", complex_to_json(zs[k])}, {"M", matrix_to_json(w.M)}, {"converged", w.converged},
           {"last_distance", w.distances.back()}};
    if (src.triple && classify_family(*src.triple).satisfies_s19) {
      const double d = (w.M - weyl_closed_s25(src.triple->c_hat(), zs[k])).norm();
      e["distance_to_closed_form"] = d;
      out << "  |M - closed form| = " << show(d) << "\n";
    } else if (!src.triple) {
      const double d = (w.M - weyl_closed_trivial(src.m, zs[k])).norm();
      e["distance_to_closed_form"] = d;
      out << "  |M - closed form| = " << show(d) << "\n";
    }
    res.push_back(e);
    all = all && w.converged;
  }
  run.set_result(Json{{"points", res}});
  if (!all) throw NumericFailure("Weyl-disc sequence did not converge within the l-schedule");
  return kExitOk;
}

inline int cmd_evolve(const Config& cfg, Run& run, std::ostream& out) {
  const auto src = weyl_source(cfg);
  auto ts = cfg.numbers("t", {0.5, 1.0, 2.0});
  std::sort(ts.begin(), ts.end());
  for (double t : ts)
    if (!(t >= 0.0)) throw InvalidInput("evolution times must be >= 0");
  const double t_max = ts.back();
  const std::string trace_kind = cfg.string("trace", src.triple ? "triple" : "zero");
  std::optional<BoundaryTrace> trace;
  if (trace_kind == "zero") {
    trace = zero_trace(src.m, t_max);
  } else if (trace_kind == "triple") {
    if (!src.triple) throw InvalidInput("trace 'triple' needs a triple");
    trace = trace_from_triple(*src.triple, t_max);
  } else {
    throw InvalidInput("unknown trace '" + trace_kind + "' (zero|triple)");
  }
  const auto zs = cfg.complexes("z", {kI, Complex(1.0, 1.0)});
  for (Complex z : zs)
    if (!(z.imag() > 0.0)) throw InvalidInput("evolution needs Im z > 0");
  const WeylEvaluator M0 = src.triple ? closed_evaluator_for(*src.triple) : closed_trivial_evaluator(src.m);

  double C = 0.0;
  if (src.triple) {
    GridSpec gs;
    gs.x0 = 0.0;
    gs.x1 = cfg.number("x1", 2.0);
    gs.hx = cfg.number("hx", gs.hx);
    gs.t0 = 0.0;
    gs.t1 = t_max;
    gs.ht = cfg.number("ht", gs.ht);
    gs.with_derivatives = false;
    C = bound_constant(make_solution_grid(*src.triple, gs, run.threads()));
  }

  struct Row {
    Complex z;
    std::vector<ComplexMatrix> M;
    DiagnosticsReport monitors;
  };
  std::vector<Row> rows(zs.size());
  parallel_for(zs.size(), run.threads(), [&](std::size_t k) {
    Row r;
    r.z = zs[k];
    const ComplexMatrix m0 = M0(zs[k]);
    const auto Rs = R_solve(*trace, zs[k], std::span<const double>(ts));
    for (const auto& R : Rs) r.M.push_back(evolve_M(m0, R));
    r.monitors = expansivity_monitors(*trace, zs[k], ts, C);
    rows[k] = std::move(r);
  });

  CsvWriter csv(run.file("evolve.csv"));
  std::vector<std::string> head{"t", "re_z", "im_z"};
  for (auto& c : matrix_columns("M", src.m)) head.push_back(c);
  csv.header(head);
  Json mon = Json::array();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      std::vector<std::string> cells{format_double(ts[i]), format_double(r.z.real()), format_double(r.z.imag())};
      append_matrix_cells(cells, r.M[i]);
      csv.row_strings(cells);
      out << "z=" << complex_text(r.z) << " t=" << show(ts[i]) << ": M=" << matrix_text(r.M[i]) << "\n";
    }
    Json mj = r.monitors.to_json();
    mj["z"] = complex_to_json(r.z);
    mon.push_back(mj);
    out << "z=" << complex_text(r.z) << " monitors: " << r.monitors.verdict << "\n";
  }
  write_json(run.file("monitors.json"), Json{{"C", C}, {"trace", trace_kind}, {"monitors", mon}});
  run.set_result(Json{{"C", C}, {"trace", trace_kind}});
  return kExitOk;
}

inline int cmd_diagnose(const Config& cfg, Run& run, std::ostream& out) {
  RaySpec ray;
  ray.arg = cfg.number("arg", ray.arg);
  ray.r_max = positive(cfg, "r_max", ray.r_max);
  ray.r_min = positive(cfg, "r_min", ray.r_min);
  ray.count = static_cast<int>(cfg.integer("count", ray.count));
  NonexistenceDiagnosis d;
  if (cfg.boolean("trivial", false)) {
    d = nonexistence_diagnose(closed_trivial_evaluator(cfg.integer("m", 1)), ray, run.threads());
  } else {
    d = nonexistence_diagnose(require_triple(cfg), ray, run.threads());
  }
  write_json(run.file("diagnose.json"), d.to_json());
  CsvWriter csv(run.file("diagnose_samples.csv"));
  const Eigen::Index m = d.samples.front().MD.rows();
  std::vector<std::string> head{"r", "re_z", "im_z", "min_imag_eig"};
  for (auto& c : matrix_columns("MD", m)) head.push_back(c);
  csv.header(head);
  for (const auto& s : d.samples) {
    std::vector<std::string> cells{format_double(s.r), format_double(s.z.real()), format_double(s.z.imag()),
                                   format_double(s.min_imag_eig)};
    append_matrix_cells(cells, s.MD);
    csv.row_strings(cells);
  }
  out << "family: " << d.family << "\n";
  out << "fitted exponent: " << show(d.fitted_exponent) << "\n";
  out << "fitted coefficient: " << matrix_text(d.fitted_coefficient) << "\n";
  out << "verdict: " << d.verdict << "\n";
  run.set_result(Json{{"verdict", d.verdict}, {"fittedExponent", d.fitted_exponent}});
  return kExitOk;
}

inline int cmd_residuals(const Config& cfg, Run& run, std::ostream& out) {
  const auto tr = require_triple(cfg);
  const auto spec = grid_from(cfg);
  const Complex z = cfg.complexes("z", {Complex(1.0)}).front();
  const auto kd = residual_study(tr, spec, ResidualKind::kdv, z, run.threads());
  const auto zc = residual_study(tr, spec, ResidualKind::zero_curvature, z, run.threads());
  write_residual_csv(kd.coarse, run.file("residual_kdv.csv"));
  write_residual_csv(zc.coarse, run.file("residual_zero_curvature.csv"));

  // identity checks at up to three unmasked interior points of the first row
  const ExplicitSolution sol(tr);
  std::vector<CrosscheckPoint> pts;
  for (double f : {0.25, 0.5, 0.75}) {
    const double x = spec.x0 + f * (spec.x1 - spec.x0);
    if (sol.point(x, spec.t0).invertible) pts.push_back({x, spec.t0});
  }
  const auto ic = identity_crosscheck(tr, pts);
  Json summary{{"kdv", kd.coarse.summary()},
               {"zero_curvature", zc.coarse.summary()},
               {"z", complex_to_json(z)},
               {"kdv_fine_max", kd.fine.max_residual},
               {"zero_curvature_fine_max", zc.fine.max_residual},
               {"identity_crosscheck", ic.to_json()}};
  write_json(run.file("residuals.json"), summary);
  out << "kdv: max " << show(kd.coarse.max_residual) << ", order " << show(kd.order) << ", excluded "
      << kd.coarse.excluded << ", skipped " << kd.coarse.skipped << "\n";
  out << "zero curvature (z=" << complex_text(z) << "): max " << show(zc.coarse.max_residual) << ", order "
      << show(zc.order) << "\n";
  out << "identity crosscheck: " << ic.verdict << "\n";
  run.set_result(Json{{"kdv_order", kd.order}, {"zero_curvature_order", zc.order}, {"identity", ic.verdict}});
  if (std::isnan(kd.order) || std::isnan(zc.order)) throw NumericFailure("no usable grid nodes for the order estimate");
  return kExitOk;
}

// ---------------------------------------------------------------------------

using Handler = int (*)(const Config&, Run&, std::ostream&);

/// Runs one invocation; argv[0] is the program name.
inline int run_command(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Explicit matrix KdV solutions, Weyl functions and their evolution", "weylkdv"};
  app.set_version_flag("--version", WEYLKDV_VERSION);
  app.require_subcommand(1);

  std::vector<std::pair<Leaf, Handler>> leaves;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help, const std::string& full,
                  Handler h) -> Leaf& {
    Leaf l;
    l.app = parent->add_subcommand(name, help);
    l.name = full;
    common_flags(l);
    leaves.emplace_back(std::move(l), h);
    return leaves.back().first;
  };
  leaves.reserve(16);

  auto* triple = app.add_subcommand("triple", "admissible triples")->require_subcommand(1);
  auto& tv = leaf(triple, "validate", "check admissibility and families", "triple validate", cmd_triple_validate);
  scalar_flag(tv, "t-max", "end of the boundary sampling interval");

  auto* solution = app.add_subcommand("solution", "explicit solutions")->require_subcommand(1);
  auto& sg = leaf(solution, "grid", "u(x,t) on a grid", "solution grid", cmd_solution_grid);
  grid_flags(sg);

  auto* blowup = app.add_subcommand("blowup", "singularities of the explicit solution")->require_subcommand(1);
  auto& bs = leaf(blowup, "scan", "zeros of det S(x,t) in x", "blowup scan", cmd_blowup_scan);
  list_flag(bs, "t", "times (repeat or comma-separate)");
  for (const char* f : {"t0", "t1", "nt", "x-lo", "x-hi", "nx"}) scalar_flag(bs, f, f);

  auto* weyl = app.add_subcommand("weyl", "Weyl functions")->require_subcommand(1);
  auto& we = leaf(weyl, "eval", "evaluate M(z)", "weyl eval", cmd_weyl_eval);
  auto& wc = leaf(weyl, "converge", "Weyl-disc sequence along an l-schedule", "weyl converge", cmd_weyl_converge);
  for (Leaf* l : {&we, &wc}) {
    list_flag(*l, "z", "spectral points, e.g. 1+1i (repeat)");
    list_flag(*l, "l-schedule", "increasing l values (comma-separated)");
    switch_flag(*l, "trivial", "use u = 0 instead of a triple");
    scalar_flag(*l, "m", "block size for --trivial");
    scalar_flag(*l, "tol", "integration tolerance");
  }
  scalar_flag(we, "path", "closed | realization | disc");
  for (const char* f : {"samples", "r-min", "r-max"}) scalar_flag(we, f, f);

  auto& ev = leaf(&app, "evolve", "evolve M(t,z) with the boundary propagator", "evolve", cmd_evolve);
  list_flag(ev, "z", "spectral points (repeat)");
  list_flag(ev, "t", "times (comma-separated)");
  scalar_flag(ev, "trace", "zero | triple");
  switch_flag(ev, "trivial", "use u = 0 instead of a triple");
  for (const char* f : {"m", "x1", "hx", "ht"}) scalar_flag(ev, f, f);

  auto& dg = leaf(&app, "diagnose", "low-energy non-existence diagnostics", "diagnose", cmd_diagnose);
  switch_flag(dg, "trivial", "use the u = 0 Weyl function");
  for (const char* f : {"m", "arg", "r-min", "r-max", "count"}) scalar_flag(dg, f, f);

  auto& rs = leaf(&app, "residuals", "finite-difference residuals of KdV and zero curvature", "residuals", cmd_residuals);
  grid_flags(rs);
  list_flag(rs, "z", "spectral parameter of the zero-curvature check");

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  if (cargv.empty()) cargv.push_back("weylkdv");
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  for (auto& [l, handler] : leaves) {
    if (!l.app->parsed()) continue;
    std::unique_ptr<Run> run;
    try {
      const Config cfg = build_config(l);
      const long seed = cfg.integer("seed", 42);
      if (seed < 0) throw InvalidInput("'seed' must be >= 0");
      const long thr = cfg.integer("threads", static_cast<long>(default_threads()));
      if (thr < 1) throw InvalidInput("'threads' must be >= 1");
      run = std::make_unique<Run>(l.name, cfg, cfg.string("out", "out"), static_cast<unsigned long>(seed),
                                  static_cast<unsigned>(thr));
      const int code = handler(cfg, *run, out);
      run->write_manifest(code, code == kExitOk ? "ok" : "validation failure");
      return code;
    } catch (const InvalidInput& e) {
      err << "error: " << e.what() << "\n";
      if (run) run->write_manifest(kExitValidation, e.what());
      return kExitValidation;
    } catch (const FamilyMismatch& e) {
      err << "error: " << e.what() << "\n";
      if (run) run->write_manifest(kExitValidation, e.what());
      return kExitValidation;
    } catch (const Json::exception& e) {
      err << "error: malformed JSON input: " << e.what() << "\n";
      if (run) run->write_manifest(kExitValidation, e.what());
      return kExitValidation;
    } catch (const Error& e) {
      err << "numeric failure: " << e.what() << "\n";
      if (run) run->write_manifest(kExitNumeric, e.what());
      return kExitNumeric;
    }
  }
  err << "error: no command given\n";
  return kExitValidation;
}

}  // namespace weylkdv::cli

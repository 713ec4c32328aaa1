#pragma once

// Command-line front end: generate, solve, verify and bench subcommands.
// Everything here returns an exit code instead of calling exit() so the
// commands can be driven from tests.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "optdesign/baselines.hpp"
#include "optdesign/error.hpp"
#include "optdesign/formulations.hpp"
#include "optdesign/instances.hpp"
#include "optdesign/model.hpp"
#include "optdesign/verify.hpp"

namespace optdesign::cli {

// Certificate tolerance: 1e-6 unless OPTDESIGN_TOL says otherwise.
inline double default_tolerance() {
  const char* env = std::getenv("OPTDESIGN_TOL");
  if (!env || !*env) return 1e-6;
  char* end = nullptr;
  const double v = std::strtod(env, &end);
  if (end == env || *end != '\0' || !(v > 0) || !std::isfinite(v))
    throw Error(ErrorCode::InvalidArgument, std::string("OPTDESIGN_TOL is not a positive number: ") + env);
  return v;
}

struct Outcome {
  std::string status;
  Design design;
  double value = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  double time_ms = 0;
  int iterations = 0;
  Certificate certificate;
  std::vector<std::string> notes;  // human-readable identities for the solve report
  json extra = json::object();     // certificate material stored in the design file
  bool ok() const { return status == "Optimal" || status == "Converged"; }
  bool certified() const { return ok() && certificate.passed(); }
};

namespace detail {

inline void append(Certificate& into, const Certificate& from, const std::string& prefix) {
  for (auto r : from.residuals) {
    r.name = prefix + r.name;
    into.residuals.push_back(r);
  }
}

inline json vectors_to_json(const std::vector<Vector>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(vector_to_json(v));
  return a;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::string fmt(double v, const char* spec = "%.12g") {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline Outcome solve_conic(const DesignProblem& p, Criterion crit, double tol) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SocpDesign r = solve_socp(p, crit);
  o.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  o.status = conic::to_string(r.status);
  o.iterations = r.solution.iterations;
  if (r.status != conic::Status::Optimal) return o;
  o.design = r.design;
  const bool constrained = crit == Criterion::C && p.constraints();
  if (constrained) {
    // Unnormalised weights: the variance identity is the certificate.
    const Vector& c = p.target_vector();
    InformationMatrix info(information_matrix(p.observations(), r.design.weights()));
    const double var = info.estimable(c) ? info.quadratic(c) : std::numeric_limits<double>::infinity();
    o.value = r.value;
    o.certificate.kind = "identity";
    o.certificate.residuals.push_back({"variance=sum_mu", rel(var, r.value), tol});
    o.notes.push_back("sum mu = " + fmt(r.value) + ", c'M(w)^-c = " + fmt(var));
    o.extra["h"] = vectors_to_json(r.h);
    return o;
  }
  o.value = criterion_value(p, r.design, crit);
  o.gap = optimality_gap(p, r.design, crit);
  switch (crit) {
    case Criterion::C: {
      const Vector& c = p.target_vector();
      double hsum = 0;
      for (const auto& h : r.h) hsum += h.norm();
      const double cu = c.dot(r.u);
      o.certificate = check_elfving(p, c, r.design, r.h, tol, &r.u);
      append(o.certificate, check_rank_one_sdp(p, c, r.u, o.value, tol), "rank1:");
      o.notes.push_back("variance = " + fmt(o.value) + ", t^-2 = " + fmt(hsum * hsum) + ", (c'u)^2 = " + fmt(cu * cu));
      o.extra["u"] = vector_to_json(r.u);
      o.extra["h"] = vectors_to_json(r.h);
      break;
    }
    case Criterion::A:
    case Criterion::T:
      o.certificate = check_optimality_gap(p, r.design, crit, tol);
      if (crit == Criterion::T && r.formal_only) o.notes.push_back("target has no exact left inverse; value is the continuous extension");
      break;
    case Criterion::D:
      o.certificate = check_s_beta_kkt(nested_d_models(p), r.design, tol);
      break;
    case Criterion::S:
      o.certificate = check_s_beta_kkt(*p.models(), r.design, tol);
      break;
  }
  return o;
}

inline Outcome solve_baseline(const DesignProblem& p, Criterion crit, Method method, const BaselineOptions& opt) {
  if (p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "resource constraints need --method socp");
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const BaselineResult r = run_baseline(p, crit, method, opt);
  o.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  o.status = r.converged ? "Converged" : "MaxIter";
  o.iterations = r.state.iteration;
  o.design = r.design;
  o.value = criterion_value(p, r.design, crit);
  o.gap = optimality_gap(p, r.design, crit);
  // A baseline promises only its stopping ratio.
  o.certificate = check_optimality_gap(p, r.design, crit, opt.stop_ratio - 1.0 + 1e-12);
  return o;
}

}  // namespace detail

inline Outcome solve(const DesignProblem& p, Criterion crit, Method method, const BaselineOptions& opt, double tol) {
  if (method == Method::Socp) return detail::solve_conic(p, crit, tol);
  return detail::solve_baseline(p, crit, method, opt);
}

inline json design_document(const DesignProblem& p, const Outcome& o, Criterion crit, Method method) {
  json extra = o.extra;
  extra["criterion"] = to_string(crit);
  extra["method"] = to_string(method);
  extra["status"] = o.status;
  extra["value"] = o.value;
  extra["iterations"] = o.iterations;
  return design_to_json(o.design, problem_hash(p), extra);
}

// Check a stored design against its problem with the named certificate.
inline Certificate verify(const DesignProblem& p, const json& design_doc, const std::string& kind,
                          std::optional<Criterion> crit, double tol) {
  const Design d = design_from_json(design_doc);
  const std::string expect = design_doc.at("problem_hash").get<std::string>();
  const std::string actual = problem_hash(p);
  if (expect != actual) throw Error(ErrorCode::HashMismatch, "design belongs to problem " + expect + ", not " + actual);
  check_design(p, d);
  if (!crit && design_doc.contains("criterion")) crit = parse_criterion(design_doc["criterion"].get<std::string>());
  if (kind == "elfving") return check_elfving(p, p.target_vector(), d, tol);
  if (kind == "rank1") {
    const Vector& c = p.target_vector();
    const double var = c_variance(p, d, c);
    Vector u;
    if (design_doc.contains("u")) {
      u = vector_from_json(design_doc["u"]);
    } else {
      InformationMatrix info(p, d);
      u = info.solve(c) / std::sqrt(var);
    }
    return check_rank_one_sdp(p, c, u, var, tol);
  }
  if (kind == "kkt") {
    if (p.models() && crit != Criterion::D) return check_s_beta_kkt(*p.models(), d, tol);
    return check_s_beta_kkt(nested_d_models(p), d, tol);
  }
  if (kind == "gap") {
    if (!crit) throw Error(ErrorCode::InvalidArgument, "gap certificate needs --criterion");
    return check_optimality_gap(p, d, *crit, tol);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown certificate '" + kind + "'");
}

// ------------------------------------------------------------------ bench

inline const char* kCsvHeader = "instance_id,s,m,l,r,criterion,method,status,value,gap,time_ms,iters,support,certified";

struct BenchCase {
  std::string id;
  std::function<Generated()> make;
  Criterion criterion;
  Method method;
};

struct BenchRecord {
  std::string id;
  Index s = 0, m = 0, l = 0, r = 0;
  std::string criterion, method, status;
  double value = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  double time_ms = 0;
  int iterations = 0;
  Index support = 0;
  bool certified = false;

  std::string csv(bool with_time = true) const {
    std::ostringstream os;
    os << id << ',' << s << ',' << m << ',' << l << ',' << r << ',' << criterion << ',' << method << ',' << status << ','
       << detail::fmt(value) << ',' << detail::fmt(gap, "%.6e") << ','
       << (with_time ? detail::fmt(time_ms, "%.3f") : std::string("-")) << ',' << iterations << ',' << support << ','
       << (certified ? "PASS" : "FAIL");
    return os.str();
  }
};

inline BenchRecord run_case(const BenchCase& bc, const BaselineOptions& opt, double tol,
                            const std::optional<std::filesystem::path>& artifacts) {
  BenchRecord rec;
  rec.id = bc.id;
  rec.criterion = to_string(bc.criterion);
  rec.method = to_string(bc.method);
  try {
    const Generated g = bc.make();
    const DesignProblem& p = g.problem;
    rec.s = p.num_experiments();
    rec.m = p.num_params();
    rec.l = p.max_rows();
    rec.r = p.has_target() ? p.target_columns() : 0;
    const Outcome o = solve(p, bc.criterion, bc.method, opt, tol);
    rec.status = o.status;
    rec.value = o.value;
    rec.gap = o.gap;
    rec.time_ms = o.time_ms;
    rec.iterations = o.iterations;
    rec.support = o.ok() ? static_cast<Index>(o.design.support().size()) : 0;
    rec.certified = o.certified();
    if (artifacts && o.ok()) {
      std::filesystem::create_directories(*artifacts);
      write_json_file((*artifacts / (bc.id + ".problem.json")).string(), problem_to_json(p, g.family, g.parameters));
      write_json_file((*artifacts / (bc.id + "." + rec.criterion + "." + rec.method + ".design.json")).string(),
                      design_document(p, o, bc.criterion, bc.method));
    }
  } catch (const Error& e) {
    rec.status = to_string(e.code());
  }
  return rec;
}

// Runs every case, in parallel when jobs > 1; output order follows the cases.
inline std::vector<BenchRecord> run_bench(const std::vector<BenchCase>& cases, const BaselineOptions& opt, double tol,
                                          unsigned jobs, const std::optional<std::filesystem::path>& artifacts = {}) {
  std::vector<BenchRecord> out(cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) out[i] = run_case(cases[i], opt, tol, artifacts);
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(cases.size(), 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

// ------------------------------------------------------------------- main

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Optimal experimental designs via second-order cone programming"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a problem file");
  std::string family = "random", traffic = "lognormal", gen_out;
  Index s = 0, m = 0, l = 1, r = 1, degree = 5, grid = 300, nodes = 0, edges = 0;
  double lo = 0, hi = 3;
  std::uint64_t seed = 1;
  gen->add_option("--family", family, "random | polynomial | network")->check(CLI::IsMember({"random", "polynomial", "network"}));
  gen->add_option("--s", s, "experiments (random)");
  gen->add_option("--m", m, "parameters (random)");
  gen->add_option("--l", l, "rows per experiment (random)");
  gen->add_option("--r", r, "target columns: 0 none, 1 vector, >1 matrix (random)");
  gen->add_option("--seed", seed, "PRNG seed");
  gen->add_option("--degree", degree, "polynomial degree");
  gen->add_option("--grid", grid, "grid points");
  gen->add_option("--lo", lo, "grid start");
  gen->add_option("--hi", hi, "grid end");
  gen->add_option("--nodes", nodes, "network nodes");
  gen->add_option("--edges", edges, "network arcs");
  gen->add_option("--traffic", traffic, "uniform | lognormal")->check(CLI::IsMember({"uniform", "lognormal"}));
  gen->add_option("--out", gen_out, "output file (default stdout)");

  // solve
  auto* sol = app.add_subcommand("solve", "compute a design");
  std::string sol_problem, sol_out, sol_crit = "c", sol_method = "socp";
  bool certify = false;
  std::optional<double> sol_tol;
  BaselineOptions bopt;
  sol->add_option("problem", sol_problem, "problem file")->required();
  sol->add_option("--criterion", sol_crit, "c | A | T | D | S");
  sol->add_option("--method", sol_method, "socp | mult | accel | exchange");
  sol->add_option("--out", sol_out, "design file to write");
  sol->add_flag("--certify", certify, "run the matching certificate");
  sol->add_option("--tol", sol_tol, "certificate tolerance");
  sol->add_option("--lambda", bopt.lambda, "multiplicative exponent");
  sol->add_option("--gamma", bopt.gamma, "acceleration parameter (default 0.9 for A, 0.5 for D)");
  sol->add_option("--stop-ratio", bopt.stop_ratio, "Kiefer stopping ratio");
  sol->add_option("--max-iter", bopt.max_iter, "baseline iteration cap");

  // verify
  auto* ver = app.add_subcommand("verify", "check a design against its problem");
  std::string ver_problem, ver_design, ver_cert = "gap", ver_crit;
  std::optional<double> ver_tol;
  ver->add_option("problem", ver_problem, "problem file")->required();
  ver->add_option("design", ver_design, "design file")->required();
  ver->add_option("--certificate", ver_cert, "elfving | kkt | gap | rank1")->check(CLI::IsMember({"elfving", "kkt", "gap", "rank1"}));
  ver->add_option("--criterion", ver_crit, "criterion for the gap certificate");
  ver->add_option("--tol", ver_tol, "tolerance");

  // bench
  auto* ben = app.add_subcommand("bench", "run a sweep and emit CSV");
  std::vector<Index> b_s, b_m, b_l{1}, b_r{1};
  std::vector<std::uint64_t> b_seeds{1};
  std::vector<std::string> b_crit{"c"}, b_method{"socp"}, b_files;
  Index s_per_m = 0;
  unsigned jobs = 1;
  bool no_time = false;
  std::string ben_out, artifacts;
  std::optional<double> ben_tol;
  BaselineOptions bench_opt;
  ben->add_option("--s", b_s, "experiment counts");
  ben->add_option("--s-per-m", s_per_m, "use s = factor * m instead of --s");
  ben->add_option("--m", b_m, "parameter counts");
  ben->add_option("--l", b_l, "rows per experiment");
  ben->add_option("--r", b_r, "target columns");
  ben->add_option("--seeds", b_seeds, "seeds");
  ben->add_option("--criteria", b_crit, "criteria");
  ben->add_option("--methods", b_method, "methods");
  ben->add_option("--problem", b_files, "problem files added to the sweep");
  ben->add_option("--jobs", jobs, "parallel runs");
  ben->add_option("--out", ben_out, "CSV file (default stdout)");
  ben->add_option("--artifacts", artifacts, "directory for problem and design files");
  ben->add_option("--tol", ben_tol, "certificate tolerance");
  ben->add_option("--stop-ratio", bench_opt.stop_ratio, "Kiefer stopping ratio for baselines");
  ben->add_option("--max-iter", bench_opt.max_iter, "baseline iteration cap");
  ben->add_flag("--no-time", no_time, "replace the timing column by '-'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      Generated g = [&] {
        if (family == "random") {
          if (s <= 0 || m <= 0) throw Error(ErrorCode::InvalidArgument, "random family needs --s and --m");
          return gen_random(s, m, l, r, seed);
        }
        if (family == "polynomial") return gen_polynomial(degree, lo, hi, grid);
        if (nodes <= 0 || edges <= 0) throw Error(ErrorCode::InvalidArgument, "network family needs --nodes and --edges");
        return gen_network(nodes, edges, traffic == "uniform" ? Traffic::Uniform : Traffic::Lognormal, seed);
      }();
      for (const auto& w : g.warnings) err << "warning: " << w << "\n";
      const json doc = problem_to_json(g.problem, g.family, g.parameters);
      if (gen_out.empty())
        out << doc.dump(1) << "\n";
      else
        write_json_file(gen_out, doc);
      (gen_out.empty() ? err : out) << problem_hash(g.problem) << "\n";
      return 0;
    }

    if (*sol) {
      const double tol = sol_tol ? *sol_tol : default_tolerance();
      const DesignProblem p = problem_from_json(read_json_file(sol_problem));
      const Criterion crit = parse_criterion(sol_crit);
      const Method method = parse_method(sol_method);
      const Outcome o = solve(p, crit, method, bopt, tol);
      out << "status: " << o.status << "\n";
      if (!o.ok()) return 1;
      out << "criterion " << to_string(crit) << " value: " << detail::fmt(o.value) << "\n";
      for (const auto& n : o.notes) out << n << "\n";
      out << "kiefer gap: " << detail::fmt(o.gap, "%.3e") << "\n";
      out << "support: " << o.design.support().size() << "\n";
      out << "iterations: " << o.iterations << "\n";
      out << "time_ms: " << detail::fmt(o.time_ms, "%.3f") << "\n";
      if (!sol_out.empty()) write_json_file(sol_out, design_document(p, o, crit, method));
      if (certify) {
        out << o.certificate.report();
        return o.certificate.passed() ? 0 : 1;
      }
      return 0;
    }

    if (*ver) {
      const double tol = ver_tol ? *ver_tol : default_tolerance();
      const DesignProblem p = problem_from_json(read_json_file(ver_problem));
      std::optional<Criterion> crit;
      if (!ver_crit.empty()) crit = parse_criterion(ver_crit);
      const Certificate cert = verify(p, read_json_file(ver_design), ver_cert, crit, tol);
      out << cert.report();
      if (!cert.passed())
        for (const auto& f : cert.failures()) out << "violated: " << f << "\n";
      return cert.passed() ? 0 : 1;
    }

    if (*ben) {
      const double tol = ben_tol ? *ben_tol : default_tolerance();
      std::vector<Criterion> crits;
      std::vector<Method> methods;
      for (const auto& c : b_crit) crits.push_back(parse_criterion(c));
      for (const auto& mth : b_method) methods.push_back(parse_method(mth));
      std::vector<BenchCase> cases;
      auto add = [&](const std::string& id, std::function<Generated()> make) {
        for (auto c : crits)
          for (auto mth : methods) cases.push_back({id, make, c, mth});
      };
      for (const auto& f : b_files) {
        const std::string id = std::filesystem::path(f).stem().string();
        add(id, [f] {
          Generated g;
          const json doc = read_json_file(f);
          g.problem = problem_from_json(doc);
          g.family = doc.value("family", std::string("custom"));
          g.parameters = doc.value("parameters", json::object());
          return g;
        });
      }
      std::vector<Index> svals = b_s;
      for (auto mm : b_m) {
        if (s_per_m > 0) svals = {s_per_m * mm};
        for (auto ss : svals)
          for (auto ll : b_l)
            for (auto rr : b_r)
              for (auto sd : b_seeds) {
                const std::string id = "random-s" + std::to_string(ss) + "-m" + std::to_string(mm) + "-l" +
                                       std::to_string(ll) + "-r" + std::to_string(rr) + "-seed" + std::to_string(sd);
                add(id, [=] { return gen_random(ss, mm, ll, rr, sd); });
              }
      }
      std::optional<std::filesystem::path> art;
      if (!artifacts.empty()) art = artifacts;
      const auto recs = run_bench(cases, bench_opt, tol, jobs, art);
      std::ofstream file;
      if (!ben_out.empty()) {
        file.open(ben_out);
        if (!file) throw Error(ErrorCode::InvalidArgument, "cannot write " + ben_out);
      }
      std::ostream& csv = ben_out.empty() ? out : file;
      csv << kCsvHeader << "\n";
      for (const auto& rec : recs) csv << rec.csv(!no_time) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace optdesign::cli

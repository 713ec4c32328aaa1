#pragma once

// Second-order cone formulations of the design criteria and the maps that
// turn solver output back into designs, estimator coefficients and values.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "optdesign/conic/program.hpp"
#include "optdesign/conic/solver.hpp"
#include "optdesign/error.hpp"
#include "optdesign/model.hpp"

namespace optdesign {

using conic::AffineExpr;
using conic::ConeProgram;
using conic::ConicSolution;
using conic::ProgramBuilder;

struct Slice {
  enum class Space { Primal, Dual };
  Space space = Space::Primal;
  Index offset = 0;
  Index size = 0;
  double sign = 1.0;
};

using RecoveryMap = std::map<std::string, std::vector<Slice>>;

struct Formulation {
  Criterion criterion = Criterion::C;
  ConeProgram program;
  RecoveryMap recovery;
  Index num_experiments = 0;
  std::vector<double> beta;  // active sub-model weights (S and D)
  std::vector<Index> models;  // active sub-model indices (S and D)
};

inline Vector extract(const Slice& sl, const ConicSolution& sol) {
  const Vector& src = sl.space == Slice::Space::Primal ? sol.x : sol.y;
  return sl.sign * src.segment(sl.offset, sl.size);
}

inline const std::vector<Slice>& slices(const Formulation& f, const std::string& name) {
  auto it = f.recovery.find(name);
  if (it == f.recovery.end()) throw Error(ErrorCode::InvalidArgument, "formulation has no slice '" + name + "'");
  return it->second;
}

namespace detail {

inline Slice primal(Index off, Index n) { return {Slice::Space::Primal, off, n, 1.0}; }
inline Slice dual(Index off, Index n, double sign = 1.0) { return {Slice::Space::Dual, off, n, sign}; }

// Row a of A * U with U stored column-major from `off`: entry (a, k).
inline AffineExpr times_u(const Matrix& A, Index a, Index k, Index off, Index m) {
  AffineExpr e;
  for (Index j = 0; j < A.cols(); ++j)
    if (A(a, j) != 0.0) e.add(off + j + m * k, A(a, j));
  return e;
}

inline void require_solved(const ConicSolution& sol) {
  if (sol.status != conic::Status::Optimal)
    throw Error(ErrorCode::SolverFailure, std::string("cannot recover from status ") + conic::to_string(sol.status));
}

inline Vector clip_normalize(Vector w) {
  w = w.cwiseMax(0.0);
  const double t = w.sum();
  if (!(t > 0)) throw Error(ErrorCode::SolverFailure, "recovered weights have no mass");
  return w / t;
}

}  // namespace detail

// ---------------------------------------------------------------- c-optimal

// max c'u  s.t. ||A_i u|| <= 1; the cone duals carry (mu_i, h_i).
inline Formulation build_c_optimal(const DesignProblem& p, const Vector& c) {
  if (c.size() != p.num_params()) throw Error(ErrorCode::DimensionMismatch, "target length mismatch");
  const Index m = p.num_params();
  ProgramBuilder pb;
  const auto u = pb.add_variables(m);
  AffineExpr obj;
  for (Index j = 0; j < m; ++j) obj.add(u[j], -c[j]);
  pb.minimize(obj);
  std::vector<conic::ConeHandle> cones;
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Matrix& A = p.observation(i);
    std::vector<AffineExpr> rows{1.0};
    for (Index a = 0; a < A.rows(); ++a) rows.push_back(detail::times_u(A, a, 0, u.offset, m));
    cones.push_back(pb.add_soc(std::move(rows)));
  }
  Formulation f;
  f.criterion = Criterion::C;
  f.num_experiments = p.num_experiments();
  f.recovery["u"] = {detail::primal(u.offset, m)};
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Index off = pb.row_offset(cones[static_cast<std::size_t>(i)]);
    f.recovery["mu"].push_back(detail::dual(off, 1));
    f.recovery["h"].push_back(detail::dual(off + 1, p.observation(i).rows(), -1.0));
  }
  f.program = pb.build();
  return f;
}

struct COptimalResult {
  Design design;
  Vector u;
  Vector mu;
  std::vector<Vector> h;
  double variance = 0;  // (sum mu)^2 = (c'u)^2
};

inline COptimalResult recover_c_optimal(const Formulation& f, const ConicSolution& sol) {
  detail::require_solved(sol);
  COptimalResult r;
  r.u = extract(slices(f, "u").front(), sol);
  const auto& mus = slices(f, "mu");
  const auto& hs = slices(f, "h");
  r.mu.resize(static_cast<Index>(mus.size()));
  for (std::size_t i = 0; i < mus.size(); ++i) {
    r.mu[static_cast<Index>(i)] = extract(mus[i], sol)[0];
    r.h.push_back(extract(hs[i], sol));
  }
  const double total = r.mu.cwiseMax(0.0).sum();
  r.design = Design(detail::clip_normalize(r.mu));
  r.variance = total * total;
  return r;
}

// ---------------------------------------------------------------- A-optimal

// A-optimality as c-optimality: A~_i = blockdiag(A_i, ..., A_i), c~ = vec(K).
inline DesignProblem augment_a_optimal(const DesignProblem& p) {
  const Matrix& K = p.target_matrix();
  const Index m = p.num_params(), r = K.cols();
  std::vector<Matrix> obs;
  for (const auto& A : p.observations()) {
    Matrix B = Matrix::Zero(A.rows() * r, m * r);
    for (Index k = 0; k < r; ++k) B.block(k * A.rows(), k * m, A.rows(), m) = A;
    obs.push_back(std::move(B));
  }
  Vector ct(m * r);
  for (Index k = 0; k < r; ++k) ct.segment(k * m, m) = K.col(k);
  DesignProblem q(std::move(obs));
  q.set_target(ct);
  return q;
}

// max tr(K'U)  s.t. ||A_i U||_F <= 1.
inline Formulation build_a_optimal(const DesignProblem& p) {
  const Matrix& K = p.target_matrix();
  const Index m = p.num_params(), r = K.cols();
  ProgramBuilder pb;
  const auto U = pb.add_variables(m * r);
  AffineExpr obj;
  for (Index k = 0; k < r; ++k)
    for (Index j = 0; j < m; ++j) obj.add(U.offset + j + m * k, -K(j, k));
  pb.minimize(obj);
  std::vector<conic::ConeHandle> cones;
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Matrix& A = p.observation(i);
    std::vector<AffineExpr> rows{1.0};
    for (Index a = 0; a < A.rows(); ++a)
      for (Index k = 0; k < r; ++k) rows.push_back(detail::times_u(A, a, k, U.offset, m));
    cones.push_back(pb.add_soc(std::move(rows)));
  }
  Formulation f;
  f.criterion = Criterion::A;
  f.num_experiments = p.num_experiments();
  f.recovery["U"] = {detail::primal(U.offset, m * r)};
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Index off = pb.row_offset(cones[static_cast<std::size_t>(i)]);
    f.recovery["mu"].push_back(detail::dual(off, 1));
    f.recovery["H"].push_back(detail::dual(off + 1, p.observation(i).rows() * r, -1.0));
  }
  f.program = pb.build();
  return f;
}

struct AOptimalResult {
  Design design;
  Matrix U;
  Vector mu;
  std::vector<Matrix> H;  // l_i x r, sum_i A_i' H_i = K
  double value = 0;       // tr(K' M^- K) = (sum mu)^2
};

inline AOptimalResult recover_a_optimal(const Formulation& f, const ConicSolution& sol, Index m, Index r) {
  detail::require_solved(sol);
  AOptimalResult out;
  const Vector u = extract(slices(f, "U").front(), sol);
  out.U = Eigen::Map<const Matrix>(u.data(), m, r);
  const auto& mus = slices(f, "mu");
  const auto& Hs = slices(f, "H");
  out.mu.resize(static_cast<Index>(mus.size()));
  for (std::size_t i = 0; i < mus.size(); ++i) {
    out.mu[static_cast<Index>(i)] = extract(mus[i], sol)[0];
    const Vector hv = extract(Hs[i], sol);
    const Index l = hv.size() / r;
    Matrix H(l, r);
    for (Index a = 0; a < l; ++a)
      for (Index k = 0; k < r; ++k) H(a, k) = hv[a * r + k];
    out.H.push_back(std::move(H));
  }
  const double total = out.mu.cwiseMax(0.0).sum();
  out.design = Design(detail::clip_normalize(out.mu));
  out.value = total * total;
  return out;
}

// ------------------------------------------------------ constrained c-optimal

// min sum mu  s.t.  sum_i A_i' h_i = c, R w <= b, w, mu >= 0, ||h_i||^2 <= w_i mu_i.
inline Formulation build_constrained_c_optimal(const DesignProblem& p, const Vector& c) {
  if (!p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "problem has no resource constraints");
  if (c.size() != p.num_params()) throw Error(ErrorCode::DimensionMismatch, "target length mismatch");
  const auto& lc = *p.constraints();
  const Index s = p.num_experiments(), m = p.num_params();
  ProgramBuilder pb;
  const auto w = pb.add_variables(s);
  const auto mu = pb.add_variables(s);
  std::vector<conic::VarRange> h;
  for (Index i = 0; i < s; ++i) h.push_back(pb.add_variables(p.observation(i).rows()));
  AffineExpr obj;
  for (Index i = 0; i < s; ++i) obj.add(mu[i], 1.0);
  pb.minimize(obj);
  std::vector<AffineExpr> eq(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) eq[static_cast<std::size_t>(j)].constant = -c[j];
  for (Index i = 0; i < s; ++i) {
    const Matrix& A = p.observation(i);
    for (Index a = 0; a < A.rows(); ++a)
      for (Index j = 0; j < m; ++j)
        if (A(a, j) != 0.0) eq[static_cast<std::size_t>(j)].add(h[static_cast<std::size_t>(i)][a], A(a, j));
  }
  pb.add_zero(std::move(eq));
  std::vector<AffineExpr> lin;
  for (Index k = 0; k < lc.R.rows(); ++k) {
    AffineExpr e(lc.b[k]);
    for (Index i = 0; i < s; ++i)
      if (lc.R(k, i) != 0.0) e.add(w[i], -lc.R(k, i));
    lin.push_back(std::move(e));
  }
  for (Index i = 0; i < s; ++i) lin.push_back(AffineExpr::var(w[i]));
  for (Index i = 0; i < s; ++i) lin.push_back(AffineExpr::var(mu[i]));
  pb.add_nonneg(std::move(lin));
  for (Index i = 0; i < s; ++i) {
    std::vector<AffineExpr> x;
    for (Index a = 0; a < h[static_cast<std::size_t>(i)].size; ++a) x.push_back(AffineExpr::var(h[static_cast<std::size_t>(i)][a]));
    pb.add_hyperbolic(x, AffineExpr::var(w[i]), AffineExpr::var(mu[i]));
  }
  Formulation f;
  f.criterion = Criterion::C;
  f.num_experiments = s;
  f.recovery["w"] = {detail::primal(w.offset, s)};
  f.recovery["mu"] = {detail::primal(mu.offset, s)};
  for (const auto& hr : h) f.recovery["h"].push_back(detail::primal(hr.offset, hr.size));
  f.program = pb.build();
  return f;
}

struct ConstrainedResult {
  Design design;  // unnormalised: it satisfies R w <= b
  Vector mu;
  std::vector<Vector> h;
  double variance = 0;  // sum mu
};

inline ConstrainedResult recover_constrained_c_optimal(const Formulation& f, const ConicSolution& sol) {
  detail::require_solved(sol);
  ConstrainedResult r;
  r.design = Design(extract(slices(f, "w").front(), sol).cwiseMax(0.0));
  r.mu = extract(slices(f, "mu").front(), sol);
  for (const auto& sl : slices(f, "h")) r.h.push_back(extract(sl, sol));
  r.variance = r.mu.sum();
  return r;
}

// ---------------------------------------------------------------- T-optimal

// min t  s.t. K'U = I, ||A_i U||_F^2 <= t (hyperbolic form with the constant 1).
inline Formulation build_t_optimal(const DesignProblem& p) {
  const Matrix& K = p.target_matrix();
  const Index m = p.num_params(), r = K.cols();
  ProgramBuilder pb;
  const Index t = pb.add_variable();
  const auto U = pb.add_variables(m * r);
  pb.minimize(AffineExpr::var(t));
  std::vector<AffineExpr> eq;
  for (Index q = 0; q < r; ++q)
    for (Index a = 0; a < r; ++a) {
      AffineExpr e(a == q ? -1.0 : 0.0);
      for (Index j = 0; j < m; ++j)
        if (K(j, a) != 0.0) e.add(U.offset + j + m * q, K(j, a));
      eq.push_back(std::move(e));
    }
  pb.add_zero(std::move(eq));
  std::vector<conic::ConeHandle> cones;
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Matrix& A = p.observation(i);
    std::vector<AffineExpr> x;
    for (Index a = 0; a < A.rows(); ++a)
      for (Index k = 0; k < r; ++k) x.push_back(detail::times_u(A, a, k, U.offset, m));
    cones.push_back(pb.add_hyperbolic(x, AffineExpr::var(t), 1.0));
  }
  Formulation f;
  f.criterion = Criterion::T;
  f.num_experiments = p.num_experiments();
  f.recovery["t"] = {detail::primal(t, 1)};
  f.recovery["U"] = {detail::primal(U.offset, m * r)};
  for (std::size_t i = 0; i < cones.size(); ++i)
    f.recovery["cone"].push_back(detail::dual(pb.row_offset(cones[i]), pb.block_size(cones[i])));
  f.program = pb.build();
  return f;
}

struct TOptimalResult {
  Design design;
  Matrix U;
  double value = 0;          // t* = sup Phi_T
  bool formal_only = false;  // Range K not inside Range M(w*)
};

inline TOptimalResult recover_t_optimal(const Formulation& f, const ConicSolution& sol, const DesignProblem& p) {
  detail::require_solved(sol);
  TOptimalResult out;
  out.value = extract(slices(f, "t").front(), sol)[0];
  const Vector u = extract(slices(f, "U").front(), sol);
  out.U = Eigen::Map<const Matrix>(u.data(), p.num_params(), p.target_columns());
  const auto& cs = slices(f, "cone");
  Vector w(static_cast<Index>(cs.size()));
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const Vector z = extract(cs[i], sol);
    w[static_cast<Index>(i)] = z[0] + z[z.size() - 1];
  }
  out.design = Design(detail::clip_normalize(w));
  InformationMatrix info(p, out.design.pruned());
  out.formal_only = !info.estimable(p.target_matrix());
  return out;
}

// ------------------------------------------------------------ S_beta / D

// max prod t_k^beta_k  s.t. t_k c_k = sum_i A_(k),i' v_ik,
// ||(sqrt(beta_k) v_ik)_k|| <= w_i, sum w <= 1.
inline Formulation build_s_optimal(const MultiModel& mm, Index s) {
  std::vector<Index> active;
  std::vector<double> beta;
  for (std::size_t k = 0; k < mm.models.size(); ++k)
    if (mm.beta[static_cast<Index>(k)] > 0) {
      active.push_back(static_cast<Index>(k));
      beta.push_back(mm.beta[static_cast<Index>(k)]);
    }
  if (active.empty()) throw Error(ErrorCode::InvalidArgument, "all model weights are zero");
  const Index r = static_cast<Index>(active.size());
  ProgramBuilder pb;
  const auto t = pb.add_variables(r);
  const auto w = pb.add_variables(s);
  // v[i][k]
  std::vector<std::vector<conic::VarRange>> v(static_cast<std::size_t>(s));
  for (Index i = 0; i < s; ++i)
    for (Index k = 0; k < r; ++k) {
      const auto& sm = mm.models[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
      v[static_cast<std::size_t>(i)].push_back(pb.add_variables(sm.observations[static_cast<std::size_t>(i)].rows()));
    }
  std::vector<conic::ConeHandle> eqs;
  for (Index k = 0; k < r; ++k) {
    const auto& sm = mm.models[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
    const Index mk = sm.target.size();
    std::vector<AffineExpr> rows(static_cast<std::size_t>(mk));
    for (Index j = 0; j < mk; ++j) rows[static_cast<std::size_t>(j)].add(t[k], sm.target[j]);
    for (Index i = 0; i < s; ++i) {
      const Matrix& A = sm.observations[static_cast<std::size_t>(i)];
      const auto& vr = v[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      for (Index a = 0; a < A.rows(); ++a)
        for (Index j = 0; j < mk; ++j)
          if (A(a, j) != 0.0) rows[static_cast<std::size_t>(j)].add(vr[a], -A(a, j));
    }
    eqs.push_back(pb.add_zero(std::move(rows)));
  }
  {
    std::vector<AffineExpr> lin;
    AffineExpr mass(1.0);
    for (Index i = 0; i < s; ++i) mass.add(w[i], -1.0);
    lin.push_back(std::move(mass));
    for (Index k = 0; k < r; ++k) lin.push_back(AffineExpr::var(t[k]));
    pb.add_nonneg(std::move(lin));
  }
  for (Index i = 0; i < s; ++i) {
    std::vector<AffineExpr> rows{AffineExpr::var(w[i])};
    for (Index k = 0; k < r; ++k) {
      const double sb = std::sqrt(beta[static_cast<std::size_t>(k)]);
      const auto& vr = v[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      for (Index a = 0; a < vr.size; ++a) rows.push_back(AffineExpr::var(vr[a], sb));
    }
    pb.add_soc(std::move(rows));
  }
  std::vector<AffineExpr> leaves;
  for (Index k = 0; k < r; ++k) leaves.push_back(AffineExpr::var(t[k]));
  const Index g = pb.add_geometric_mean(leaves, beta);
  pb.minimize(AffineExpr::var(g, -1.0));

  Formulation f;
  f.criterion = Criterion::S;
  f.num_experiments = s;
  f.beta = beta;
  f.models = active;
  f.recovery["t"] = {detail::primal(t.offset, r)};
  f.recovery["w"] = {detail::primal(w.offset, s)};
  f.recovery["g"] = {detail::primal(g, 1)};
  for (Index i = 0; i < s; ++i)
    for (Index k = 0; k < r; ++k) {
      const auto& vr = v[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      f.recovery["v"].push_back(detail::primal(vr.offset, vr.size));
    }
  for (Index k = 0; k < r; ++k)
    f.recovery["eq"].push_back(detail::dual(pb.row_offset(eqs[static_cast<std::size_t>(k)]),
                                            pb.block_size(eqs[static_cast<std::size_t>(k)])));
  f.program = pb.build();
  return f;
}

inline Formulation build_s_optimal(const DesignProblem& p) {
  if (!p.models()) throw Error(ErrorCode::UnsupportedCombination, "S criterion needs sub-models");
  return build_s_optimal(*p.models(), p.num_experiments());
}

inline Formulation build_d_optimal(const DesignProblem& p) {
  Formulation f = build_s_optimal(nested_d_models(p), p.num_experiments());
  f.criterion = Criterion::D;
  return f;
}

struct SOptimalResult {
  Design design;
  Vector t;                                // per active model
  std::vector<std::vector<Vector>> eps;    // eps[i][k] = v_ik / w_i
  std::vector<Vector> h;                   // KKT multipliers per active model
  double value = 0;                        // sum beta_k log var_k = -2 sum beta_k log t_k
  double root = 0;                         // geometric-mean root
  std::vector<Index> models;
  std::vector<double> beta;
};

inline SOptimalResult recover_s_optimal(const Formulation& f, const ConicSolution& sol) {
  detail::require_solved(sol);
  SOptimalResult out;
  out.models = f.models;
  out.beta = f.beta;
  out.t = extract(slices(f, "t").front(), sol);
  const Vector w = extract(slices(f, "w").front(), sol).cwiseMax(0.0);
  out.root = extract(slices(f, "g").front(), sol)[0];
  const Index r = out.t.size();
  const Index s = w.size();
  const auto& vs = slices(f, "v");
  const double wsum = w.sum();
  if (!(wsum > 0)) throw Error(ErrorCode::SolverFailure, "recovered weights have no mass");
  for (Index i = 0; i < s; ++i) {
    std::vector<Vector> row;
    for (Index k = 0; k < r; ++k) {
      const Vector v = extract(vs[static_cast<std::size_t>(i * r + k)], sol);
      row.push_back(w[i] > 1e-12 * wsum ? Vector(v / w[i]) : Vector(Vector::Zero(v.size())));
    }
    out.eps.push_back(std::move(row));
  }
  out.design = Design(w / wsum);
  // Raw equality multipliers; finalize_s_multipliers rescales them once the
  // targets are at hand.
  for (const auto& sl : slices(f, "eq")) out.h.push_back(extract(sl, sol));
  out.value = 0;
  for (Index k = 0; k < r; ++k) out.value += -2.0 * out.beta[static_cast<std::size_t>(k)] * std::log(out.t[k]);
  return out;
}

inline void finalize_s_multipliers(SOptimalResult& res, const MultiModel& mm) {
  double total = 0;
  for (std::size_t k = 0; k < res.h.size(); ++k)
    total += res.t[static_cast<Index>(k)] * mm.models[static_cast<std::size_t>(res.models[k])].target.dot(res.h[k]);
  if (total == 0 || !std::isfinite(total)) throw Error(ErrorCode::SolverFailure, "degenerate multipliers");
  for (auto& hk : res.h) hk /= total;
}

namespace detail {

// sum_k beta_k log var_k(w) with gradient and Hessian restricted to `idx`,
// plus the largest normalised sensitivity over all experiments (1 at the
// optimum). Returns false when some sub-model is singular on the support.
struct SObjective {
  double value = 0, max_sens = 0;
  Vector grad;
  Matrix hess;
};

inline bool s_objective(const MultiModel& mm, const Vector& w, const std::vector<Index>& idx, SObjective& o) {
  const auto q = static_cast<Index>(idx.size());
  const Index s = w.size();
  o.value = 0;
  o.grad = Vector::Zero(q);
  o.hess = Matrix::Zero(q, q);
  Vector sens = Vector::Zero(s);
  for (std::size_t k = 0; k < mm.models.size(); ++k) {
    const double b = mm.beta[static_cast<Index>(k)];
    if (b == 0) continue;
    const auto& sm = mm.models[k];
    const Matrix M = information_matrix(sm.observations, w);
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success) return false;
    const Vector g = llt.solve(sm.target);
    const double var = sm.target.dot(g);
    if (!(var > 0)) return false;
    o.value += b * std::log(var);
    Vector gv(q);
    Matrix a(M.rows(), q);
    for (Index j = 0; j < q; ++j) {
      const Matrix& A = sm.observations[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
      const Vector u = A * g;
      gv[j] = -u.squaredNorm();
      a.col(j) = A.transpose() * u;
    }
    for (Index i = 0; i < s; ++i) sens[i] += b * (sm.observations[static_cast<std::size_t>(i)] * g).squaredNorm() / var;
    const Matrix hv = 2.0 * a.transpose() * llt.solve(a);
    o.grad += b * gv / var;
    o.hess += b * (hv / var - gv * gv.transpose() / (var * var));
  }
  o.max_sens = sens.maxCoeff();
  return true;
}

// Newton polish of S-type weights on a fixed support. Interior-point weights
// are accurate only to about the square root of the solver tolerance because
// the criterion is flat at the optimum; with the support identified, the
// reduced problem is smooth and Newton converges quadratically. The polished
// weights are kept only if both the criterion and the equivalence-theorem gap
// improve, so the result is never worse than the conic solution.
inline Vector polish_s_weights(const MultiModel& mm, const Vector& w0) {
  const double wmax = w0.maxCoeff();
  std::vector<Index> idx;
  for (Index i = 0; i < w0.size(); ++i)
    if (w0[i] > 1e-6 * wmax) idx.push_back(i);
  const auto q = static_cast<Index>(idx.size());
  SObjective start, cur;
  if (q < 2 || !s_objective(mm, w0, idx, start)) return w0;
  Vector w = Vector::Zero(w0.size());
  for (auto i : idx) w[i] = w0[i];
  w /= w.sum();
  if (!s_objective(mm, w, idx, cur)) return w0;
  for (int it = 0; it < 50; ++it) {
    Matrix kkt = Matrix::Zero(q + 1, q + 1);
    kkt.topLeftCorner(q, q) = cur.hess;
    kkt.topLeftCorner(q, q).diagonal().array() += 1e-14 * (1.0 + cur.hess.diagonal().cwiseAbs().maxCoeff());
    kkt.block(0, q, q, 1).setOnes();
    kkt.block(q, 0, 1, q).setOnes();
    Vector rhs = Vector::Zero(q + 1);
    rhs.head(q) = -cur.grad;
    const Vector sol = kkt.partialPivLu().solve(rhs);
    Vector d = sol.head(q);
    d.array() -= d.mean();
    const double decrement = -cur.grad.dot(d);
    if (!(decrement > 1e-24)) break;
    double alpha = 1.0;
    for (Index j = 0; j < q; ++j)
      if (d[j] < 0) alpha = std::min(alpha, -0.99 * w[idx[static_cast<std::size_t>(j)]] / d[j]);
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      Vector wn = w;
      for (Index j = 0; j < q; ++j) wn[idx[static_cast<std::size_t>(j)]] += alpha * d[j];
      SObjective next;
      if (s_objective(mm, wn, idx, next) && next.value <= cur.value + 0.25 * alpha * cur.grad.dot(d) + 1e-15 * std::abs(cur.value)) {
        w = wn;
        cur = next;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  const double tol = 1e-13 * (1.0 + std::abs(start.value));
  if (cur.value <= start.value + tol && cur.max_sens <= start.max_sens) return w;
  return w0;
}

}  // namespace detail

// ------------------------------------------------------------ one-call API

struct SocpDesign {
  Criterion criterion = Criterion::C;
  conic::Status status = conic::Status::NumericalFailure;
  Design design;
  double value = 0;  // criterion value in the form criterion_value reports
  ConicSolution solution;
  bool formal_only = false;
  // Certificate material; which fields are filled depends on the criterion.
  Vector u;
  std::vector<Vector> h;
  Matrix U;
  std::vector<Matrix> H;
  Vector t;
  std::vector<std::vector<Vector>> eps;
  std::vector<Vector> hk;
};

namespace detail {

// Experiments that some feasible w can make positive (R w <= b, w >= 0).
inline std::vector<Index> positive_experiments(const LinearConstraints& lc, Index s,
                                               const conic::SolverSettings& st) {
  std::vector<Index> all;
  if ((lc.b.array() > 0).all()) {
    for (Index i = 0; i < s; ++i) all.push_back(i);
    return all;
  }
  for (Index i = 0; i < s; ++i) {
    ProgramBuilder pb;
    const auto w = pb.add_variables(s);
    pb.minimize(AffineExpr::var(w[i], -1.0));
    std::vector<AffineExpr> lin;
    for (Index k = 0; k < lc.R.rows(); ++k) {
      AffineExpr e(lc.b[k]);
      for (Index j = 0; j < s; ++j)
        if (lc.R(k, j) != 0.0) e.add(w[j], -lc.R(k, j));
      lin.push_back(std::move(e));
    }
    for (Index j = 0; j < s; ++j) lin.push_back(AffineExpr::var(w[j]));
    pb.add_nonneg(std::move(lin));
    const auto sol = conic::solve(pb.build(), st);
    if (sol.status == conic::Status::PrimalInfeasible)
      throw Error(ErrorCode::Infeasible, "resource constraints admit no design");
    if (sol.status == conic::Status::DualInfeasible ||
        (sol.status == conic::Status::Optimal && -sol.primal_objective > 1e-7 * (1.0 + lc.b.cwiseAbs().maxCoeff())))
      all.push_back(i);
  }
  return all;
}

}  // namespace detail

inline SocpDesign solve_c_optimal(const DesignProblem& p, const conic::SolverSettings& st = {}) {
  SocpDesign out;
  out.criterion = Criterion::C;
  const Vector c = p.target_vector();
  if (p.constraints()) {
    const auto keep = detail::positive_experiments(*p.constraints(), p.num_experiments(), st);
    std::vector<Matrix> obs;
    Matrix R(p.constraints()->R.rows(), static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      obs.push_back(p.observation(keep[j]));
      R.col(static_cast<Index>(j)) = p.constraints()->R.col(keep[j]);
    }
    if (keep.empty() || !InformationMatrix(information_matrix(obs, Vector::Ones(static_cast<Index>(obs.size())))).estimable(c)) {
      out.status = conic::Status::PrimalInfeasible;
      throw Error(ErrorCode::Inestimable, "no feasible design makes the target estimable");
    }
    DesignProblem sub(obs);
    sub.set_target(c);
    sub.set_constraints(R, p.constraints()->b);
    const Formulation f = build_constrained_c_optimal(sub, c);
    out.solution = conic::solve(f.program, st);
    out.status = out.solution.status;
    if (out.status != conic::Status::Optimal) return out;
    const auto r = recover_constrained_c_optimal(f, out.solution);
    Vector w = Vector::Zero(p.num_experiments());
    out.h.assign(static_cast<std::size_t>(p.num_experiments()), Vector());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      w[keep[j]] = r.design[static_cast<Index>(j)];
      out.h[static_cast<std::size_t>(keep[j])] = r.h[j];
    }
    for (Index i = 0; i < p.num_experiments(); ++i)
      if (out.h[static_cast<std::size_t>(i)].size() == 0) out.h[static_cast<std::size_t>(i)] = Vector::Zero(p.observation(i).rows());
    out.design = Design(w);
    out.value = r.variance;
    return out;
  }
  const Formulation f = build_c_optimal(p, c);
  out.solution = conic::solve(f.program, st);
  out.status = out.solution.status;
  if (out.status == conic::Status::DualInfeasible)
    throw Error(ErrorCode::Inestimable, "target vector is not estimable under any design");
  if (out.status != conic::Status::Optimal) return out;
  const auto r = recover_c_optimal(f, out.solution);
  out.design = r.design;
  out.u = r.u;
  out.h = r.h;
  out.value = r.variance;
  return out;
}

inline SocpDesign solve_a_optimal(const DesignProblem& p, const conic::SolverSettings& st = {}) {
  SocpDesign out;
  out.criterion = Criterion::A;
  const Formulation f = build_a_optimal(p);
  out.solution = conic::solve(f.program, st);
  out.status = out.solution.status;
  if (out.status == conic::Status::DualInfeasible)
    throw Error(ErrorCode::Inestimable, "target columns are not estimable under any design");
  if (out.status != conic::Status::Optimal) return out;
  const auto r = recover_a_optimal(f, out.solution, p.num_params(), p.target_columns());
  out.design = r.design;
  out.U = r.U;
  out.H = r.H;
  out.value = r.value;
  return out;
}

inline SocpDesign solve_t_optimal(const DesignProblem& p, const conic::SolverSettings& st = {}) {
  SocpDesign out;
  out.criterion = Criterion::T;
  const Formulation f = build_t_optimal(p);
  out.solution = conic::solve(f.program, st);
  out.status = out.solution.status;
  if (out.status == conic::Status::PrimalInfeasible)
    throw Error(ErrorCode::Inestimable, "target matrix admits no U with K'U = I");
  if (out.status != conic::Status::Optimal) return out;
  const auto r = recover_t_optimal(f, out.solution, p);
  out.design = r.design;
  out.U = r.U;
  out.value = r.value;
  out.formal_only = r.formal_only;
  return out;
}

inline SocpDesign solve_s_optimal(const MultiModel& mm, Index s, Criterion crit, const conic::SolverSettings& st = {}) {
  SocpDesign out;
  out.criterion = crit;
  for (std::size_t k = 0; k < mm.models.size(); ++k) {
    if (mm.beta[static_cast<Index>(k)] == 0) continue;
    const auto& sm = mm.models[k];
    InformationMatrix info(information_matrix(sm.observations, Vector::Ones(s)));
    if (!info.estimable(sm.target))
      throw Error(ErrorCode::Inestimable, "sub-model " + std::to_string(k) + " target is not estimable");
  }
  Formulation f = build_s_optimal(mm, s);
  f.criterion = crit;
  out.solution = conic::solve(f.program, st);
  out.status = out.solution.status;
  if (out.status != conic::Status::Optimal) return out;
  auto r = recover_s_optimal(f, out.solution);
  finalize_s_multipliers(r, mm);
  const Vector polished = detail::polish_s_weights(mm, r.design.weights());
  if (polished == r.design.weights()) {
    out.design = r.design;
    out.t = r.t;
    out.eps = r.eps;
    out.hk = r.h;
    out.value = r.value;
    return out;
  }
  // Multipliers follow from the polished weights in closed form:
  // t_k = var_k^{-1/2}, h_k = beta_k M_k^- c_k t_k, eps_ik = A_(k),i M_k^- c_k t_k.
  out.design = Design(polished);
  out.eps.assign(static_cast<std::size_t>(s), {});
  out.t = Vector(static_cast<Index>(r.models.size()));
  out.value = 0;
  for (std::size_t j = 0; j < r.models.size(); ++j) {
    const auto& sm = mm.models[static_cast<std::size_t>(r.models[j])];
    InformationMatrix info(information_matrix(sm.observations, polished));
    const double var = info.quadratic(sm.target);
    const double tk = 1.0 / std::sqrt(var);
    const Vector g = info.solve(sm.target) * tk;
    out.t[static_cast<Index>(j)] = tk;
    out.hk.push_back(r.beta[j] * g);
    out.value += r.beta[j] * std::log(var);
    for (Index i = 0; i < s; ++i)
      out.eps[static_cast<std::size_t>(i)].push_back(sm.observations[static_cast<std::size_t>(i)] * g);
  }
  return out;
}

inline SocpDesign solve_socp(const DesignProblem& p, Criterion crit, const conic::SolverSettings& st = {}) {
  switch (crit) {
    case Criterion::C:
      if (!p.target_is_vector() && p.target_columns() != 1)
        throw Error(ErrorCode::UnsupportedCombination, "c-optimality needs a target vector");
      return solve_c_optimal(p, st);
    case Criterion::A:
      if (p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "resource constraints are supported for c only");
      return solve_a_optimal(p, st);
    case Criterion::T:
      if (p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "resource constraints are supported for c only");
      return solve_t_optimal(p, st);
    case Criterion::D:
      if (p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "resource constraints are supported for c only");
      return solve_s_optimal(nested_d_models(p), p.num_experiments(), Criterion::D, st);
    case Criterion::S:
      if (p.constraints()) throw Error(ErrorCode::UnsupportedCombination, "resource constraints are supported for c only");
      if (!p.models()) throw Error(ErrorCode::UnsupportedCombination, "S criterion needs sub-models");
      return solve_s_optimal(*p.models(), p.num_experiments(), Criterion::S, st);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown criterion");
}

}  // namespace optdesign

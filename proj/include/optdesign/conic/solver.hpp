#pragma once

// Homogeneous self-dual interior-point method for ConeProgram.
//
// Zero-cone rows become equality constraints A x = b, every other row goes
// into G x + s = h with s in a product of an orthant and second-order cones.
// Each iteration factors a regularised, scaled form of the quasi-definite
// KKT matrix once and performs a Mehrotra predictor-corrector step in Nesterov-Todd
// scaled coordinates.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <limits>
#include <optional>
#include <memory>
#include <string>
#include <vector>

#include "optdesign/conic/cones.hpp"
#include "optdesign/conic/program.hpp"

namespace optdesign::conic {

enum class Status { Optimal, PrimalInfeasible, DualInfeasible, MaxIter, NumericalFailure };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::PrimalInfeasible: return "PrimalInfeasible";
    case Status::DualInfeasible: return "DualInfeasible";
    case Status::MaxIter: return "MaxIter";
    case Status::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

struct SolverSettings {
  double tol = 1e-8;
  double infeasibility_tol = 1e-8;
  int max_iter = 200;
  double step_fraction = 0.99;
  double regularization = 1e-9;
  int refinement_steps = 8;
  int equilibration_passes = 15;
  Index dense_threshold = 500;
  bool verbose = false;
};

struct ConicSolution {
  Status status = Status::NumericalFailure;
  Vector x;  // primal variables
  Vector s;  // slacks, one per row (zero on zero-cone rows)
  Vector y;  // dual multipliers, one per row
  double primal_objective = 0;
  double dual_objective = 0;
  int iterations = 0;
  double primal_residual = 0;
  double dual_residual = 0;
  double gap = 0;
  double solve_time_ms = 0;
  // Farkas ray: dual (rows) for PrimalInfeasible, primal (vars) for
  // DualInfeasible, empty otherwise.
  Vector certificate;
};

namespace detail {

using Sparse = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using Triplets = std::vector<Eigen::Triplet<double>>;

// Factorisation of the KKT system in scaled form. With dz' = W dz the
// third block row reads W^{-1}G dx - dz' = W^{-1} r_z, so the matrix
//
//   [ dI        A'   (W^{-1}G)' ]
//   [ A        -dI    0         ]
//   [ W^{-1}G   0    -(1+d)I    ]
//
// has a fixed sparsity pattern and a perfectly conditioned (3,3) block even
// when the cone iterates approach the boundary.
class KktSystem {
 public:
  KktSystem(const Sparse& A, const Sparse& G, const ConeSpace& K, double reg, Index dense_threshold)
      : A_(A), G_(G), K_(K), reg_(reg) {
    n_ = A.cols();
    p_ = A.rows();
    m_ = G.rows();
    N_ = n_ + p_ + m_;
    dense_ = N_ < dense_threshold;
    const Index z0 = n_ + p_;
    // Row-major copy of G for per-cone column sets.
    const Eigen::SparseMatrix<double, Eigen::RowMajor> Gr(G);
    Triplets t;
    for (Index j = 0; j < N_; ++j) t.emplace_back(j, j, 0.0);
    for (Index j = 0; j < n_; ++j) t.emplace_back(j, j, reg_);
    for (Index j = 0; j < A.outerSize(); ++j)
      for (Sparse::InnerIterator it(A, j); it; ++it) t.emplace_back(n_ + it.row(), j, it.value());
    for (Index i = 0; i < p_; ++i) t.emplace_back(n_ + i, n_ + i, -reg_);
    for (Index i = 0; i < m_; ++i) t.emplace_back(z0 + i, z0 + i, -1.0 - reg_);
    for (Index i = 0; i < K.orthant(); ++i)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Gr, i); it; ++it)
        t.emplace_back(z0 + i, it.col(), 1.0);
    for (const auto& b : K.socs()) {
      std::vector<Index> cols;
      for (Index r = 0; r < b.size; ++r)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Gr, b.offset + r); it; ++it)
          cols.push_back(it.col());
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      Eigen::MatrixXd Gk = Eigen::MatrixXd::Zero(b.size, static_cast<Index>(cols.size()));
      for (Index r = 0; r < b.size; ++r)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Gr, b.offset + r); it; ++it) {
          const auto c = std::lower_bound(cols.begin(), cols.end(), it.col()) - cols.begin();
          Gk(r, c) = it.value();
        }
      for (Index r = 0; r < b.size; ++r)
        for (auto c : cols) t.emplace_back(z0 + b.offset + r, c, 1.0);
      soc_cols_.push_back(std::move(cols));
      soc_G_.push_back(std::move(Gk));
    }
    K_lower_.resize(N_, N_);
    K_lower_.setFromTriplets(t.begin(), t.end());
    K_lower_.makeCompressed();
    auto pos = [&](Index r, Index c) {
      const auto* outer = K_lower_.outerIndexPtr();
      const auto* inner = K_lower_.innerIndexPtr();
      const auto* it = std::lower_bound(inner + outer[c], inner + outer[c + 1], static_cast<int>(r));
      return static_cast<Index>(it - inner);
    };
    for (Index i = 0; i < K.orthant(); ++i)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Gr, i); it; ++it) {
        orth_pos_.push_back(pos(z0 + i, it.col()));
        orth_val_.push_back(it.value());
        orth_row_.push_back(i);
      }
    for (std::size_t k = 0; k < K.socs().size(); ++k) {
      const auto& b = K.socs()[k];
      std::vector<Index> ps;
      for (std::size_t c = 0; c < soc_cols_[k].size(); ++c)
        for (Index r = 0; r < b.size; ++r) ps.push_back(pos(z0 + b.offset + r, soc_cols_[k][c]));
      soc_pos_.push_back(std::move(ps));
    }
    for (Index j = 0; j < N_; ++j) diag_pos_.push_back(pos(j, j));
    if (!dense_) sparse_.analyzePattern(K_lower_);
  }

  double regularization() const { return reg_; }
  void set_regularization(double reg) { reg_ = reg; }
  // Worst relative residual left by solve() since the last factor().
  double worst_residual() const { return worst_; }

  bool factor(const NTScaling& W) {
    W_ = &W;
    double* val = K_lower_.valuePtr();
    worst_ = 0;
    for (Index j = 0; j < N_; ++j) val[diag_pos_[j]] = j < n_ ? reg_ : (j < n_ + p_ ? -reg_ : -1.0 - reg_);
    const auto& d = W.orthant_scale();
    for (std::size_t e = 0; e < orth_pos_.size(); ++e) val[orth_pos_[e]] = orth_val_[e] / d[orth_row_[e]];
    for (std::size_t k = 0; k < K_.socs().size(); ++k) {
      const Eigen::MatrixXd B = W.inverse_block(k, soc_G_[k]);
      std::size_t idx = 0;
      for (Index c = 0; c < B.cols(); ++c)
        for (Index r = 0; r < B.rows(); ++r) val[soc_pos_[k][idx++]] = B(r, c);
    }
    if (dense_) {
      Eigen::MatrixXd full = Eigen::MatrixXd(K_lower_);
      full = full.selfadjointView<Eigen::Lower>();
      dense_ldlt_.compute(full);
      return dense_ldlt_.info() == Eigen::Success;
    }
    sparse_.factorize(K_lower_);
    return sparse_.info() == Eigen::Success;
  }

  // Solve the unscaled, unregularised system [0 A' G'; A 0 0; G 0 -W^2] using
  // the regularised scaled factor plus iterative refinement.
  Vector solve(const Vector& rhs, int refine) const {
    Vector sol = raw_solve(rhs);
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    const double target = 1e-14 * scale;
    Vector best = sol;
    double best_rn = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= refine; ++k) {
      const Vector r = rhs - multiply(sol);
      const double rn = r.lpNorm<Eigen::Infinity>();
      if (!(rn < best_rn)) break;
      best_rn = rn;
      best = sol;
      if (rn <= target || k == refine) break;
      sol += raw_solve(r);
    }
    worst_ = std::max(worst_, std::isfinite(best_rn) ? best_rn / scale : std::numeric_limits<double>::infinity());
    return best;
  }

 private:
  Vector raw_solve(Vector rhs) const {
    rhs.tail(m_) = W_->apply_inverse(rhs.tail(m_));
    Vector sol = dense_ ? Vector(dense_ldlt_.solve(rhs)) : Vector(sparse_.solve(rhs));
    sol.tail(m_) = W_->apply_inverse(sol.tail(m_));
    return sol;
  }

  Vector multiply(const Vector& v) const {
    Vector out(N_);
    const auto vx = v.head(n_);
    const auto vy = v.segment(n_, p_);
    const auto vz = v.tail(m_);
    out.head(n_) = A_.transpose() * vy + G_.transpose() * vz;
    out.segment(n_, p_) = A_ * vx;
    out.tail(m_) = G_ * vx - W_->apply_squared(vz);
    return out;
  }

  const Sparse& A_;
  const Sparse& G_;
  const ConeSpace& K_;
  const NTScaling* W_ = nullptr;
  double reg_;
  Index n_, p_, m_, N_;
  bool dense_;
  Sparse K_lower_;
  mutable double worst_ = 0;
  std::vector<Index> diag_pos_, orth_pos_, orth_row_;
  std::vector<double> orth_val_;
  std::vector<std::vector<Index>> soc_cols_;
  std::vector<Eigen::MatrixXd> soc_G_;
  std::vector<std::vector<Index>> soc_pos_;
  Eigen::SimplicialLDLT<Sparse, Eigen::Lower, Eigen::AMDOrdering<int>> sparse_;
  Eigen::LDLT<Eigen::MatrixXd> dense_ldlt_;
};

// Ruiz equilibration of [A; G]; second-order cone rows share one factor.
struct Equilibration {
  Vector D;   // columns
  Vector EA;  // equality rows
  Vector EG;  // cone rows

  void compute(Sparse& A, Sparse& G, const ConeSpace& K, int passes) {
    const Index n = A.cols();
    D = Vector::Ones(n);
    EA = Vector::Ones(A.rows());
    EG = Vector::Ones(G.rows());
    for (int it = 0; it < passes; ++it) {
      Vector cn = Vector::Zero(n), ra = Vector::Zero(A.rows()), rg = Vector::Zero(G.rows());
      for (Index j = 0; j < n; ++j) {
        for (Sparse::InnerIterator a(A, j); a; ++a) {
          cn[j] = std::max(cn[j], std::abs(a.value()));
          ra[a.row()] = std::max(ra[a.row()], std::abs(a.value()));
        }
        for (Sparse::InnerIterator g(G, j); g; ++g) {
          cn[j] = std::max(cn[j], std::abs(g.value()));
          rg[g.row()] = std::max(rg[g.row()], std::abs(g.value()));
        }
      }
      for (const auto& b : K.socs()) rg.segment(b.offset, b.size).setConstant(rg.segment(b.offset, b.size).maxCoeff());
      auto fac = [](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; };
      Vector dc = cn.unaryExpr(fac), da = ra.unaryExpr(fac), dg = rg.unaryExpr(fac);
      // Keep cumulative scalings within [1e-4, 1e4].
      for (Index j = 0; j < n; ++j) dc[j] = std::clamp(D[j] * dc[j], 1e-4, 1e4) / D[j];
      for (Index i = 0; i < da.size(); ++i) da[i] = std::clamp(EA[i] * da[i], 1e-4, 1e4) / EA[i];
      for (Index i = 0; i < dg.size(); ++i) dg[i] = std::clamp(EG[i] * dg[i], 1e-4, 1e4) / EG[i];
      A = da.asDiagonal() * A * dc.asDiagonal();
      G = dg.asDiagonal() * G * dc.asDiagonal();
      D.array() *= dc.array();
      EA.array() *= da.array();
      EG.array() *= dg.array();
      if ((cn.array() - 1).abs().maxCoeff() < 1e-3 && ra.size() + rg.size() > 0) {
        const double rmax = std::max(ra.size() ? (ra.array() - 1).abs().maxCoeff() : 0.0,
                                     rg.size() ? (rg.array() - 1).abs().maxCoeff() : 0.0);
        if (rmax < 1e-3) break;
      }
    }
  }
};

}  // namespace detail

class Solver {
 public:
  explicit Solver(SolverSettings settings = {}) : set_(settings) {}

  ConicSolution solve(const ConeProgram& prog) const {
    const auto t0 = std::chrono::steady_clock::now();
    prog.validate();
    ConicSolution sol = run(prog);
    sol.solve_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return sol;
  }

 private:
  using Sparse = detail::Sparse;

  ConicSolution run(const ConeProgram& prog) const {
    const Index n = prog.num_vars();
    // Row partition: equalities, orthant rows, second-order cones.
    std::vector<Index> eq_rows, lp_rows;
    std::vector<std::pair<Index, Index>> soc_rows;  // (program offset, size)
    {
      Index off = 0;
      for (const auto& k : prog.cones) {
        if (k.type == ConeType::Zero)
          for (Index i = 0; i < k.size; ++i) eq_rows.push_back(off + i);
        else if (k.type == ConeType::NonNeg)
          for (Index i = 0; i < k.size; ++i) lp_rows.push_back(off + i);
        else
          soc_rows.emplace_back(off, k.size);
        off += k.size;
      }
    }
    std::vector<Index> cone_rows = lp_rows;  // internal G row -> program row
    std::vector<Index> soc_sizes;
    for (auto [off, q] : soc_rows) {
      for (Index i = 0; i < q; ++i) cone_rows.push_back(off + i);
      soc_sizes.push_back(q);
    }
    const Index p = static_cast<Index>(eq_rows.size());
    const Index m = static_cast<Index>(cone_rows.size());
    ConeSpace K(static_cast<Index>(lp_rows.size()), soc_sizes);

    // Row selection as sparse permutation-like matrices.
    auto select = [&](const std::vector<Index>& rows, double sign) {
      Sparse P(static_cast<Index>(rows.size()), prog.num_rows());
      detail::Triplets t;
      for (std::size_t i = 0; i < rows.size(); ++i) t.emplace_back(static_cast<Index>(i), rows[i], sign);
      P.setFromTriplets(t.begin(), t.end());
      return P;
    };
    const Sparse Peq = select(eq_rows, 1.0), Pg = select(cone_rows, 1.0);
    const Sparse A0 = Peq * prog.A;
    const Sparse G0 = Pg * prog.A;
    const Vector b0 = Peq * prog.b, h0 = Pg * prog.b;
    const Vector& c0 = prog.c;

    Sparse A = A0, G = G0;
    detail::Equilibration eq;
    eq.compute(A, G, K, set_.equilibration_passes);
    A.makeCompressed();
    G.makeCompressed();
    const Vector c = eq.D.cwiseProduct(c0);
    const Vector b = eq.EA.cwiseProduct(b0);
    const Vector h = eq.EG.cwiseProduct(h0);

    ConicSolution out;
    auto finish = [&](Status st, const Vector& x, const Vector& y, const Vector& z, const Vector& s, double tau) {
      out.status = st;
      out.x = eq.D.cwiseProduct(x) / tau;
      const Vector yu = eq.EA.cwiseProduct(y) / tau;
      const Vector zu = eq.EG.cwiseProduct(z) / tau;
      const Vector su = s.cwiseQuotient(eq.EG) / tau;
      out.y = Vector::Zero(prog.num_rows());
      out.s = Vector::Zero(prog.num_rows());
      for (Index i = 0; i < p; ++i) out.y[eq_rows[static_cast<std::size_t>(i)]] = yu[i];
      for (Index i = 0; i < m; ++i) {
        out.y[cone_rows[static_cast<std::size_t>(i)]] = zu[i];
        out.s[cone_rows[static_cast<std::size_t>(i)]] = su[i];
      }
      out.primal_objective = c0.dot(out.x) + prog.objective_offset;
      out.dual_objective = -b0.dot(yu) - h0.dot(zu) + prog.objective_offset;
      return out;
    };

    NTScaling W(K);
    detail::KktSystem kkt(A, G, K, set_.regularization, set_.dense_threshold);
    const Index N = n + p + m;

    // Initial point: two least-squares solves with W = I.
    W.update(K.identity(), K.identity());
    if (!kkt.factor(W)) {
      out.status = Status::NumericalFailure;
      return out;
    }
    Vector rhs = Vector::Zero(N);
    rhs.segment(n, p) = b;
    rhs.tail(m) = h;
    Vector sol = kkt.solve(rhs, set_.refinement_steps);
    Vector x = sol.head(n);
    Vector s = K.bring_to_cone(-sol.tail(m));
    rhs.setZero();
    rhs.head(n) = -c;
    sol = kkt.solve(rhs, set_.refinement_steps);
    Vector y = sol.segment(n, p);
    Vector z = K.bring_to_cone(sol.tail(m));
    double tau = 1.0, kappa = 1.0;

    const double D = static_cast<double>(K.degree());
    const double nb = std::sqrt(b0.squaredNorm() + h0.squaredNorm());
    const double nc = c0.norm();

    // Once the tolerance is met the iteration continues for a few polishing
    // steps; the weights of a design converge only like the square root of
    // the duality gap, so the extra digits matter downstream. Any trouble
    // during polishing falls back to the best iterate that met the tolerance.
    struct Snapshot {
      Vector x, y, z, s;
      double tau = 0, merit = std::numeric_limits<double>::infinity();
      int iter = 0;
      double pres = 0, dres = 0, gap = 0;
    };
    std::optional<Snapshot> polished;
    int polish_steps = 0, stalls = 0;
    auto bail = [&](Status st, const Vector& x, const Vector& y, const Vector& z, const Vector& s, double tau) {
      if (!polished) return finish(st, x, y, z, s, tau);
      finish(Status::Optimal, polished->x, polished->y, polished->z, polished->s, polished->tau);
      out.iterations = polished->iter;
      out.primal_residual = polished->pres;
      out.dual_residual = polished->dres;
      out.gap = polished->gap;
      return out;
    };

    for (int iter = 0; iter <= set_.max_iter; ++iter) {
      // Residuals (scaled space).
      const Vector rx = -A.transpose() * y - G.transpose() * z - c * tau;
      const Vector ry = A * x - b * tau;
      const Vector rz = s + G * x - h * tau;
      const double rt = kappa + c.dot(x) + b.dot(y) + h.dot(z);
      const double mu = (s.dot(z) + tau * kappa) / (D + 1.0);

      // Termination tests on unscaled quantities.
      {
        const Vector xu = eq.D.cwiseProduct(x), yu = eq.EA.cwiseProduct(y), zu = eq.EG.cwiseProduct(z);
        const Vector su = s.cwiseQuotient(eq.EG);
        const Vector pr_eq = A0 * xu - b0 * tau;
        const Vector pr_g = G0 * xu + su - h0 * tau;
        const Vector dr = A0.transpose() * yu + G0.transpose() * zu + c0 * tau;
        const double pres = std::sqrt(pr_eq.squaredNorm() + pr_g.squaredNorm()) / tau / (1.0 + nb);
        const double dres = dr.norm() / tau / (1.0 + nc);
        const double pcost = c0.dot(xu) / tau;
        const double dcost = -(b0.dot(yu) + h0.dot(zu)) / tau;
        const double gap = su.dot(zu) / (tau * tau);
        if (set_.verbose)
          std::fprintf(stderr, "%3d pcost %+.9e dcost %+.9e pres %.2e dres %.2e gap %.2e tau %.2e kap %.2e\n", iter,
                       pcost, dcost, pres, dres, gap, tau, kappa);
        out.iterations = iter;
        out.primal_residual = pres;
        out.dual_residual = dres;
        out.gap = gap;
        if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(gap)) {
          if (polished) return bail(Status::NumericalFailure, x, y, z, s, tau);
          out.status = Status::NumericalFailure;
          return out;
        }
        const double scale = 1.0 + std::min(std::abs(pcost), std::abs(dcost));
        const double merit = std::max({pres, dres, std::abs(pcost - dcost) / scale, gap / scale});
        if (merit <= set_.tol) {
          if (!polished || merit < polished->merit) {
            stalls = (polished && merit > 0.5 * polished->merit) ? stalls + 1 : 0;
            polished = Snapshot{x, y, z, s, tau, merit, iter, pres, dres, gap};
          } else {
            ++stalls;
          }
          if (polished->merit <= set_.tol * kPolishFactor || polish_steps >= kPolishSteps || stalls >= 2)
            return bail(Status::Optimal, x, y, z, s, tau);
          ++polish_steps;
        }
        // Infeasibility certificates are only trusted once kappa dominates tau.
        if (kappa > tau) {
          const double btz = b0.dot(yu) + h0.dot(zu);
          if (btz < 0) {
            const double res = (A0.transpose() * yu + G0.transpose() * zu).norm() / -btz;
            if (res <= set_.infeasibility_tol * std::max(1.0, nc)) {
              finish(Status::PrimalInfeasible, x, y, z, s, 1.0);
              Vector cert = out.y / -btz;
              out.certificate = cert;
              out.x.setConstant(std::numeric_limits<double>::quiet_NaN());
              return out;
            }
          }
          const double ctx = c0.dot(xu);
          if (ctx < 0) {
            const double res = std::sqrt((A0 * xu).squaredNorm() + (G0 * xu + su).squaredNorm()) / -ctx;
            if (res <= set_.infeasibility_tol * std::max(1.0, nb)) {
              finish(Status::DualInfeasible, x, y, z, s, 1.0);
              out.certificate = out.x / -ctx;
              out.y.setConstant(std::numeric_limits<double>::quiet_NaN());
              return out;
            }
          }
        }
        if (iter == set_.max_iter) return bail(Status::MaxIter, x, y, z, s, tau);
      }

      W.update(s, z);
      // Static regularisation starts at its base value every iteration and is
      // raised only when factorisation or refinement fails for this matrix.
      kkt.set_regularization(set_.regularization);
      Vector d1;
      rhs.head(n) = -c;
      rhs.segment(n, p) = b;
      rhs.tail(m) = h;
      for (;;) {
        const bool ok = kkt.factor(W);
        if (ok) d1 = kkt.solve(rhs, set_.refinement_steps);
        if (set_.verbose) std::fprintf(stderr, "    kkt reg %.1e residual %.2e\n", kkt.regularization(), ok ? kkt.worst_residual() : -1.0);
        if (ok && kkt.worst_residual() <= kSolveAccuracy) break;
        if (kkt.regularization() >= kMaxRegularization) {
          if (!ok) {
            if (set_.verbose) std::fprintf(stderr, "factorization failed\n");
            return bail(Status::NumericalFailure, x, y, z, s, tau);
          }
          break;
        }
        kkt.set_regularization(kkt.regularization() * 100);
        if (set_.verbose) std::fprintf(stderr, "regularization raised to %.1e\n", kkt.regularization());
      }
      const Vector lambda = W.apply(z);
      const double den = kappa / tau - c.dot(d1.head(n)) - b.dot(d1.segment(n, p)) - h.dot(d1.tail(m));

      struct Dir {
        Vector dx, dy, dz, ds;
        double dtau, dkappa;
      };
      auto direction = [&](double sigma, const Vector& dss, double dkk) {
        const double f = 1.0 - sigma;
        Vector r(N);
        r.head(n) = f * rx;
        r.segment(n, p) = -f * ry;
        r.tail(m) = -f * rz - W.apply(K.jordan_solve(lambda, dss));
        const Vector d2 = kkt.solve(r, set_.refinement_steps);
        const double num = f * rt + c.dot(d2.head(n)) + b.dot(d2.segment(n, p)) + h.dot(d2.tail(m)) + dkk / tau;
        Dir d;
        d.dtau = num / den;
        const Vector full = d2 + d.dtau * d1;
        d.dx = full.head(n);
        d.dy = full.segment(n, p);
        d.dz = full.tail(m);
        d.dkappa = (dkk - kappa * d.dtau) / tau;
        d.ds = W.apply(K.jordan_solve(lambda, dss) - W.apply(d.dz));
        return d;
      };
      auto step_to_boundary = [&](const Dir& d) {
        double a = std::min(K.max_step(s, d.ds), K.max_step(z, d.dz));
        if (d.dtau < 0) a = std::min(a, -tau / d.dtau);
        if (d.dkappa < 0) a = std::min(a, -kappa / d.dkappa);
        return a;
      };

      const Vector ll = K.jordan(lambda, lambda);
      const Dir aff = direction(0.0, -ll, -tau * kappa);
      const double a_aff = std::min(1.0, step_to_boundary(aff));
      const double sigma = std::clamp(std::pow(1.0 - a_aff, 3), 0.0, 1.0);
      const Vector corr = K.jordan(W.apply_inverse(aff.ds), W.apply(aff.dz));
      const Vector dss = -ll - corr + sigma * mu * K.identity();
      const double dkk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
      const Dir d = direction(sigma, dss, dkk);
      const double alpha = std::min(1.0, set_.step_fraction * step_to_boundary(d));
      if (!(alpha > 0) || !std::isfinite(alpha)) {
        if (set_.verbose) std::fprintf(stderr, "bad step %g (dtau %g den %g)\n", alpha, d.dtau, den);
        return bail(Status::NumericalFailure, x, y, z, s, tau);
      }
      x += alpha * d.dx;
      y += alpha * d.dy;
      z += alpha * d.dz;
      s += alpha * d.ds;
      tau += alpha * d.dtau;
      kappa += alpha * d.dkappa;
      if (!(tau > 0) || !(kappa > 0) || K.min_margin(s) <= 0 || K.min_margin(z) <= 0) {
        if (set_.verbose)
          std::fprintf(stderr, "left cone: tau %g kappa %g s %g z %g\n", tau, kappa, K.min_margin(s), K.min_margin(z));
        return bail(Status::NumericalFailure, x, y, z, s, std::max(tau, 1e-300));
      }
    }
    return out;
  }

  static constexpr double kPolishFactor = 1e-4;
  static constexpr int kPolishSteps = 8;
  static constexpr double kSolveAccuracy = 1e-8;
  static constexpr double kMaxRegularization = 1e-5;
  SolverSettings set_;
};

inline ConicSolution solve(const ConeProgram& prog, const SolverSettings& settings = {}) {
  return Solver(settings).solve(prog);
}

}  // namespace optdesign::conic

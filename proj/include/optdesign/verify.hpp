#pragma once

// Solver-independent optimality certificates. Each check recomputes its
// residuals from the problem data and the claimed design; nothing from the
// solver is trusted beyond the vectors passed in.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "optdesign/baselines.hpp"
#include "optdesign/error.hpp"
#include "optdesign/model.hpp"

namespace optdesign {

struct Residual {
  std::string name;
  double value = 0;
  double tol = 0;
  bool passed() const { return std::isfinite(value) && value <= tol; }
};

struct Certificate {
  std::string kind;
  std::vector<Residual> residuals;

  bool passed() const {
    return !residuals.empty() && std::all_of(residuals.begin(), residuals.end(), [](const Residual& r) { return r.passed(); });
  }
  bool failed(const std::string& name) const {
    for (const auto& r : residuals)
      if (r.name == name) return !r.passed();
    return false;
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& r : residuals)
      if (!r.passed()) out.push_back(r.name);
    return out;
  }
  std::string report() const {
    std::ostringstream os;
    os << kind << ": " << (passed() ? "PASS" : "FAIL") << "\n";
    for (const auto& r : residuals)
      os << "  " << r.name << " = " << r.value << " (tol " << r.tol << ") " << (r.passed() ? "ok" : "FAIL") << "\n";
    return os.str();
  }
};

// Elfving certificate for c-optimality. With h_i the estimator coefficients,
// t = 1 / sum ||h_i|| and eps_i = h_i / ||h_i||:
//   (a) t c = sum_i w_i A_i' eps_i
//   (b) ||eps_i|| <= 1
//   (c) w_i = ||h_i|| / sum_k ||h_k||
//   (d) t^{-2} = c' M(w)^- c
// plus, when a primal u is supplied or M(w) is nonsingular, the supporting
// hyperplane condition max_i ||A_i u|| <= 1 with c'u = 1 / t.
inline Certificate check_elfving(const DesignProblem& p, const Vector& c, const Design& d, const std::vector<Vector>& h,
                                 double tol = 1e-6, const Vector* u = nullptr) {
  check_design(p, d);
  if (static_cast<Index>(h.size()) != p.num_experiments())
    throw Error(ErrorCode::DimensionMismatch, "one coefficient block per experiment required");
  const Vector w = d.weights() / d.weights().sum();
  double hsum = 0;
  for (const auto& hi : h) hsum += hi.norm();
  if (!(hsum > 0)) throw Error(ErrorCode::InvalidArgument, "estimator coefficients are all zero");
  const double t = 1.0 / hsum;
  Certificate cert;
  cert.kind = "elfving";
  Vector comb = Vector::Zero(p.num_params());
  double eps_max = 0, wdev = 0;
  for (Index i = 0; i < p.num_experiments(); ++i) {
    const Vector& hi = h[static_cast<std::size_t>(i)];
    const double n = hi.norm();
    if (n > 0) {
      const Vector eps = hi / n;
      eps_max = std::max(eps_max, eps.norm());
      comb += w[i] * p.observation(i).transpose() * eps;
    }
    wdev = std::max(wdev, std::abs(w[i] - n / hsum));
  }
  cert.residuals.push_back({"a:unbiased", (t * c - comb).norm() / (t * c.norm()), tol});
  cert.residuals.push_back({"b:eps_norm", eps_max - 1.0, tol});
  cert.residuals.push_back({"c:weights", wdev, tol});
  InformationMatrix info(p, d);
  double var = std::numeric_limits<double>::infinity();
  if (info.estimable(c)) var = info.quadratic(c);
  cert.residuals.push_back({"d:variance", std::abs(1.0 / (t * t) - var) / var, tol});
  Vector uu;
  if (u) {
    uu = *u;
  } else if (info.nonsingular() && std::isfinite(var)) {
    uu = info.solve(c) / std::sqrt(var);
  }
  if (uu.size() == p.num_params()) {
    double amax = 0;
    for (const auto& A : p.observations()) amax = std::max(amax, (A * uu).norm());
    cert.residuals.push_back({"e:hyperplane", std::max(amax - 1.0, std::abs(c.dot(uu) * t - 1.0)), tol});
  }
  return cert;
}

// Elfving check with BLUE coefficients computed from the design itself.
inline Certificate check_elfving(const DesignProblem& p, const Vector& c, const Design& d, double tol = 1e-6) {
  const Design dp = d.pruned();
  return check_elfving(p, c, dp, blue(p, dp, c), tol);
}

// Rank-one SDP certificate: X = u u' is feasible for the semidefinite
// relaxation (tr(A_i X A_i') <= 1) and its value (c'u)^2 matches the claimed
// variance, which the design attains in the dual.
inline Certificate check_rank_one_sdp(const DesignProblem& p, const Vector& c, const Vector& u, double variance,
                                      double tol = 1e-6) {
  if (u.size() != p.num_params()) throw Error(ErrorCode::DimensionMismatch, "u has wrong length");
  Certificate cert;
  cert.kind = "rank1";
  double feas = -1;
  for (const auto& A : p.observations()) feas = std::max(feas, (A * u).squaredNorm() - 1.0);
  cert.residuals.push_back({"feasibility", feas, tol});
  const double v = c.dot(u) * c.dot(u);
  cert.residuals.push_back({"objective", std::abs(v - variance) / std::max(variance, 1e-300), tol});
  return cert;
}

// Multiplier data for the S_beta KKT check; all vectors refer to the active
// (beta_k > 0) sub-models listed in `models`.
struct SBetaCertificateData {
  std::vector<Index> models;
  std::vector<double> beta;
  Vector t;
  std::vector<std::vector<Vector>> eps;  // [i][k]
  std::vector<Vector> h;                 // [k]
};

// Reconstruct certificate data from the design alone: t_k = var_k^{-1/2},
// h_k = beta_k M_k^- c_k t_k, eps_ik = A_(k),i M_k^- c_k t_k.
inline SBetaCertificateData s_beta_data_from_design(const MultiModel& mm, const Design& d) {
  SBetaCertificateData data;
  const Vector w = d.weights() / d.weights().sum();
  const Index s = w.size();
  data.eps.assign(static_cast<std::size_t>(s), {});
  std::vector<double> t;
  for (std::size_t k = 0; k < mm.models.size(); ++k) {
    const double b = mm.beta[static_cast<Index>(k)];
    if (b == 0) continue;
    const auto& sm = mm.models[k];
    InformationMatrix info(information_matrix(sm.observations, w));
    const double var = info.quadratic(sm.target);
    const double tk = 1.0 / std::sqrt(var);
    const Vector g = info.solve(sm.target) * tk;
    data.models.push_back(static_cast<Index>(k));
    data.beta.push_back(b);
    t.push_back(tk);
    data.h.push_back(b * g);
    for (Index i = 0; i < s; ++i) data.eps[static_cast<std::size_t>(i)].push_back(sm.observations[static_cast<std::size_t>(i)] * g);
  }
  data.t = Eigen::Map<Vector>(t.data(), static_cast<Index>(t.size()));
  return data;
}

// KKT conditions of the S_beta program:
//   (i)   sum_k beta_k ||eps_ik||^2 <= 1
//   (ii)  t_k c_k = sum_i w_i A_(k),i' eps_ik
//   (iii) ||beta^{-1/2} . z_i|| <= 1 for all i, = 1 on the support,
//         with z_i = (A_(k),i h_k)_k
//   (iv)  t_k h_k' c_k = beta_k
//   (v)   sum w = 1
inline Certificate check_s_beta_kkt(const MultiModel& mm, const Design& d, const SBetaCertificateData& data,
                                    double tol = 1e-6) {
  Certificate cert;
  cert.kind = "kkt";
  const Vector& w = d.weights();
  const Index s = w.size();
  const auto r = data.models.size();
  double ci = -1, cii = 0, ciii = -1, csupp = 0, civ = 0;
  const auto support = d.support(1e-5);
  std::vector<char> on(static_cast<std::size_t>(s), 0);
  for (auto i : support) on[static_cast<std::size_t>(i)] = 1;
  for (Index i = 0; i < s; ++i) {
    double q = 0, zn = 0;
    for (std::size_t k = 0; k < r; ++k) {
      const auto& sm = mm.models[static_cast<std::size_t>(data.models[k])];
      const Matrix& A = sm.observations[static_cast<std::size_t>(i)];
      q += data.beta[k] * data.eps[static_cast<std::size_t>(i)][k].squaredNorm();
      zn += (A * data.h[k]).squaredNorm() / data.beta[k];
    }
    if (on[static_cast<std::size_t>(i)]) ci = std::max(ci, q - 1.0);
    zn = std::sqrt(zn);
    ciii = std::max(ciii, zn - 1.0);
    if (on[static_cast<std::size_t>(i)]) csupp = std::max(csupp, std::abs(zn - 1.0));
  }
  for (std::size_t k = 0; k < r; ++k) {
    const auto& sm = mm.models[static_cast<std::size_t>(data.models[k])];
    Vector comb = data.t[static_cast<Index>(k)] * sm.target;
    for (Index i = 0; i < s; ++i)
      comb -= w[i] * sm.observations[static_cast<std::size_t>(i)].transpose() * data.eps[static_cast<std::size_t>(i)][k];
    cii = std::max(cii, comb.norm() / std::max(1.0, data.t[static_cast<Index>(k)] * sm.target.norm()));
    civ = std::max(civ, std::abs(data.t[static_cast<Index>(k)] * data.h[k].dot(sm.target) - data.beta[k]));
  }
  cert.residuals.push_back({"i:eps_norm", ci, tol});
  cert.residuals.push_back({"ii:unbiased", cii, tol});
  cert.residuals.push_back({"iii:dual_norm", ciii, tol});
  cert.residuals.push_back({"iii:support_tight", csupp, tol});
  cert.residuals.push_back({"iv:scaling", civ, tol});
  cert.residuals.push_back({"v:mass", std::abs(w.sum() - 1.0), tol});
  return cert;
}

inline Certificate check_s_beta_kkt(const MultiModel& mm, const Design& d, double tol = 1e-6) {
  const Design dp = d.pruned();
  return check_s_beta_kkt(mm, dp, s_beta_data_from_design(mm, dp), tol);
}

// Upper bound on relative suboptimality from the general equivalence theorem:
// max_i (directional derivative toward e_i) / (derivative toward w) - 1.
// Zero at an optimum, positive elsewhere.
inline double optimality_gap(const DesignProblem& p, const Design& d, Criterion crit) {
  check_design(p, d);
  switch (crit) {
    case Criterion::C:
    case Criterion::A:
    case Criterion::D: return kiefer_ratio(p, d, crit) - 1.0;
    case Criterion::T: {
      const auto ti = t_information(information_matrix(p.observations(), d.weights()), p.target_matrix());
      double mx = 0;
      for (const auto& A : p.observations()) mx = std::max(mx, (A * ti.U).squaredNorm());
      return mx / ti.value - 1.0;
    }
    case Criterion::S: {
      if (!p.models()) throw Error(ErrorCode::UnsupportedCombination, "S criterion needs sub-models");
      const auto& mm = *p.models();
      Vector score = Vector::Zero(p.num_experiments());
      for (std::size_t k = 0; k < mm.models.size(); ++k) {
        const double b = mm.beta[static_cast<Index>(k)];
        if (b == 0) continue;
        const auto& sm = mm.models[k];
        InformationMatrix info(information_matrix(sm.observations, d.weights()));
        const double var = info.quadratic(sm.target);
        const Vector g = info.solve(sm.target);
        for (Index i = 0; i < p.num_experiments(); ++i)
          score[i] += b * (sm.observations[static_cast<std::size_t>(i)] * g).squaredNorm() / var;
      }
      return score.maxCoeff() - 1.0;
    }
  }
  return 0;
}

inline Certificate check_optimality_gap(const DesignProblem& p, const Design& d, Criterion crit, double tol = 1e-3) {
  Certificate cert;
  cert.kind = "gap";
  cert.residuals.push_back({"kiefer_gap", optimality_gap(p, d, crit), tol});
  return cert;
}

}  // namespace optdesign

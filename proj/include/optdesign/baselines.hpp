#pragma once

// First-order design algorithms used as references for the cone programs:
// multiplicative weight updates, their accelerated variant and the
// Fedorov-Wynn vertex-exchange method. A-type criteria (including c, which is
// A with a single target column) and D are supported.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "optdesign/error.hpp"
#include "optdesign/model.hpp"

namespace optdesign {

enum class Method { Socp, Multiplicative, Accelerated, Exchange };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Socp: return "socp";
    case Method::Multiplicative: return "mult";
    case Method::Accelerated: return "accel";
    case Method::Exchange: return "exchange";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "socp") return Method::Socp;
  if (s == "mult" || s == "multiplicative") return Method::Multiplicative;
  if (s == "accel" || s == "accelerated") return Method::Accelerated;
  if (s == "exchange" || s == "fedorov") return Method::Exchange;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + s + "'");
}

struct IterationState {
  Vector weights;
  int iteration = 0;
  std::vector<double> history;  // criterion value (minimisation form) after each step
  double ratio = std::numeric_limits<double>::infinity();
};

struct BaselineOptions {
  double lambda = 0.9;
  double gamma = -1;  // negative: 0.9 for A-type, 0.5 for D
  double stop_ratio = 1.001;
  int max_iter = 200000;
  int refresh_every = 200;  // exchange: rebuild M^{-1} from scratch this often
};

namespace detail {

// All observation rows stacked, for batched sensitivity evaluation.
struct Stacked {
  Matrix A;
  std::vector<Index> start;  // s + 1 offsets

  explicit Stacked(const DesignProblem& p) {
    start.push_back(0);
    for (const auto& a : p.observations()) start.push_back(start.back() + a.rows());
    A.resize(start.back(), p.num_params());
    for (Index i = 0; i < p.num_experiments(); ++i) A.middleRows(start[static_cast<std::size_t>(i)], p.observation(i).rows()) = p.observation(i);
  }
  Index experiments() const { return static_cast<Index>(start.size()) - 1; }

  Matrix information(const Vector& w) const {
    Vector rw(A.rows());
    for (Index i = 0; i < experiments(); ++i)
      rw.segment(start[static_cast<std::size_t>(i)], start[static_cast<std::size_t>(i) + 1] - start[static_cast<std::size_t>(i)]).setConstant(std::sqrt(std::max(w[i], 0.0)));
    const Matrix Aw = rw.asDiagonal() * A;
    Matrix M = Matrix::Zero(A.cols(), A.cols());
    M.selfadjointView<Eigen::Lower>().rankUpdate(Aw.transpose());
    return M.selfadjointView<Eigen::Lower>();
  }

  // Row-block squared Frobenius norms of P.
  Vector block_norms(const Matrix& P) const {
    Vector out(experiments());
    for (Index i = 0; i < experiments(); ++i)
      out[i] = P.middleRows(start[static_cast<std::size_t>(i)], start[static_cast<std::size_t>(i) + 1] - start[static_cast<std::size_t>(i)]).squaredNorm();
    return out;
  }
};

inline bool a_type(Criterion c) { return c == Criterion::A || c == Criterion::C; }

inline void check_supported(Criterion c) {
  if (!a_type(c) && c != Criterion::D)
    throw Error(ErrorCode::UnsupportedCombination, std::string("baselines support c, A and D, not ") + to_string(c));
}

inline Matrix inverse_spd(const Matrix& M) {
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularM, "information matrix is singular");
  return llt.solve(Matrix::Identity(M.rows(), M.cols()));
}

struct Sensitivity {
  Vector phi;
  double phibar = 0;
  double value = 0;  // criterion in minimisation form
};

inline Sensitivity sensitivity(const DesignProblem& p, const Stacked& st, const Matrix& Minv, Criterion crit) {
  Sensitivity out;
  if (a_type(crit)) {
    const Matrix& K = p.target_matrix();
    const Matrix B = Minv * K;
    out.phi = st.block_norms(st.A * B);
    out.phibar = (K.transpose() * B).trace();
    out.value = out.phibar;
  } else {
    Eigen::LLT<Matrix> llt(Minv);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularM, "information matrix is singular");
    // tr(M^{-1} A_i'A_i) = ||A_i L||_F^2 with Minv = L L'.
    const Matrix L = llt.matrixL();
    out.phi = st.block_norms(st.A * L);
    out.phibar = static_cast<double>(p.num_params());
    out.value = 2.0 * L.diagonal().array().log().sum() / static_cast<double>(p.num_params());
  }
  return out;
}

inline Sensitivity sensitivity(const DesignProblem& p, const Stacked& st, const Vector& w, Criterion crit) {
  check_supported(crit);
  const Matrix M = st.information(w);
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-150)
    return sensitivity(p, st, Matrix(llt.solve(Matrix::Identity(M.rows(), M.cols()))), crit);
  if (crit == Criterion::D) throw Error(ErrorCode::SingularM, "information matrix is singular");
  // Singular M with an estimable target: use the pseudo-inverse.
  InformationMatrix info(M);
  const Matrix& K = p.target_matrix();
  if (!info.estimable(K)) throw Error(ErrorCode::Inestimable, "target not estimable under the current design");
  Sensitivity out;
  const Matrix B = info.solve(K);
  out.phi = st.block_norms(st.A * B);
  out.phibar = (K.transpose() * B).trace();
  out.value = out.phibar;
  return out;
}

inline double default_gamma(Criterion crit, double gamma) {
  if (gamma >= 0) return gamma;
  return crit == Criterion::D ? 0.5 : 0.9;
}

}  // namespace detail

// max_i phi_i(w) / phibar(w); equals 1 exactly at an optimum.
inline double kiefer_ratio(const DesignProblem& p, const Design& d, Criterion crit) {
  check_design(p, d);
  detail::Stacked st(p);
  const auto sens = detail::sensitivity(p, st, d.weights(), crit);
  return sens.phi.maxCoeff() / sens.phibar;
}

inline Vector sensitivities(const DesignProblem& p, const Design& d, Criterion crit) {
  check_design(p, d);
  detail::Stacked st(p);
  return detail::sensitivity(p, st, d.weights(), crit).phi;
}

namespace detail {

inline IterationState advance(const DesignProblem& p, const Stacked& st, IterationState state, Vector w, Criterion crit) {
  state.weights = std::move(w);
  ++state.iteration;
  const auto sens = sensitivity(p, st, state.weights, crit);
  state.history.push_back(sens.value);
  state.ratio = sens.phi.maxCoeff() / sens.phibar;
  return state;
}

inline Vector multiplicative_update(const Vector& w, const Sensitivity& sens, double lambda) {
  Vector nw = w.array() * sens.phi.array().pow(lambda);
  const double t = nw.sum();
  if (!(t > 0) || !std::isfinite(t)) throw Error(ErrorCode::DegenerateDenominator, "multiplicative normaliser vanished");
  return nw / t;
}

inline Vector accelerated_update(const Vector& w, const Sensitivity& sens, double gamma) {
  const double pmin = sens.phi.minCoeff();
  const double den = sens.phibar - gamma * pmin;
  if (!(std::abs(den) > 1e-14 * std::max(1.0, std::abs(sens.phibar))))
    throw Error(ErrorCode::DegenerateDenominator, "phibar equals gamma * phi_min");
  Vector nw = w.array() * (sens.phi.array() - gamma * pmin) / den;
  nw = nw.cwiseMax(0.0);
  return nw / nw.sum();
}

// Step length toward vertex i for the exchange method, given M^{-1}.
inline double exchange_alpha(const DesignProblem& p, const Matrix& Minv, const Sensitivity& sens,
                             Index i, Criterion crit) {
  const double rho = sens.phi[i] / sens.phibar;
  if (!(rho > 1.0)) return 0.0;
  const Matrix& A = p.observation(i);
  const Matrix S = A * Minv * A.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  if (crit == Criterion::D) {
    const double m = static_cast<double>(p.num_params());
    double alpha = (rho - 1.0) / (rho * m - 1.0);
    alpha = std::clamp(alpha, 0.0, 1.0 - 1e-12);
    // log det change: m log(1 - a) + sum log(1 + b lam), b = a / (1 - a).
    for (int k = 0; k < 60; ++k) {
      const double b = alpha / (1.0 - alpha);
      const double gain = m * std::log1p(-alpha) + (1.0 + b * lam.array()).log().sum();
      if (gain > 0) return alpha;
      alpha *= 0.5;
    }
    return 0.0;
  }
  // A-type: Phi(a) = (Phi0 - sum_j b q_j / (1 + b lam_j)) / (1 - a), minimised
  // exactly by golden section (it is convex in a).
  const Matrix& K = p.target_matrix();
  const Matrix AB = A * (Minv * K);
  const Vector q = (es.eigenvectors().transpose() * AB).rowwise().squaredNorm();
  const double phi0 = sens.phibar;
  if (lam.size() == 1) {
    // Single row: with b = a / (1 - a) the stationarity condition is
    // lam D b^2 + 2 D b + (phi0 - q) = 0, D = phi0 lam - q >= 0.
    const double D = phi0 * lam[0] - q[0];
    if (D > 1e-12 * phi0 * lam[0]) {
      const double b = (q[0] - phi0) / (D + std::sqrt(D * D + lam[0] * D * (q[0] - phi0)));
      return b > 0 ? b / (1.0 + b) : 0.0;
    }
  }
  auto value = [&](double a) {
    const double b = a / (1.0 - a);
    double red = 0;
    for (Index j = 0; j < lam.size(); ++j) red += b * q[j] / (1.0 + b * lam[j]);
    return (phi0 - red) / (1.0 - a);
  };
  double lo = 0.0, hi = 1.0 - 1e-10;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = value(x1), f2 = value(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = value(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = value(x2);
    }
  }
  const double a = 0.5 * (lo + hi);
  return value(a) < phi0 ? a : 0.0;
}

// M^{-1} after w <- (1 - a) w + a e_i, via Woodbury.
inline Matrix exchange_inverse(const Matrix& Minv, const Matrix& A, double a) {
  const double b = a / (1.0 - a);
  const Matrix MA = Minv * A.transpose();
  Matrix cap = Matrix::Identity(A.rows(), A.rows()) + b * A * MA;
  const Matrix upd = MA * cap.ldlt().solve(MA.transpose());
  Matrix out = (Minv - b * upd) / (1.0 - a);
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

inline IterationState initial_state(const DesignProblem& p, const Design& d, Criterion crit) {
  check_design(p, d);
  detail::Stacked st(p);
  IterationState s;
  s.weights = d.weights() / d.weights().sum();
  const auto sens = detail::sensitivity(p, st, s.weights, crit);
  s.ratio = sens.phi.maxCoeff() / sens.phibar;
  s.history.push_back(sens.value);
  return s;
}

inline IterationState multiplicative_step(const DesignProblem& p, const IterationState& state, Criterion crit,
                                          double lambda = 0.9) {
  if (!(lambda > 0 && lambda <= 1)) throw Error(ErrorCode::InvalidArgument, "lambda must lie in (0, 1]");
  detail::Stacked st(p);
  const auto sens = detail::sensitivity(p, st, state.weights, crit);
  return detail::advance(p, st, state, detail::multiplicative_update(state.weights, sens, lambda), crit);
}

inline IterationState accelerated_step(const DesignProblem& p, const IterationState& state, Criterion crit,
                                       double gamma = -1) {
  gamma = detail::default_gamma(crit, gamma);
  if (!(gamma >= 0 && gamma <= 1)) throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 1]");
  detail::Stacked st(p);
  const auto sens = detail::sensitivity(p, st, state.weights, crit);
  return detail::advance(p, st, state, detail::accelerated_update(state.weights, sens, gamma), crit);
}

inline IterationState exchange_step(const DesignProblem& p, const IterationState& state, Criterion crit) {
  detail::Stacked st(p);
  const Matrix Minv = detail::inverse_spd(st.information(state.weights));
  const auto sens = detail::sensitivity(p, st, Minv, crit);
  Index i = 0;
  sens.phi.maxCoeff(&i);
  const double a = detail::exchange_alpha(p, Minv, sens, i, crit);
  Vector w = (1.0 - a) * state.weights;
  w[i] += a;
  return detail::advance(p, st, state, w, crit);
}

struct BaselineResult {
  Design design;
  IterationState state;
  bool converged = false;
  double value = 0;  // final criterion, minimisation form
};

inline BaselineResult run_baseline(const DesignProblem& p, Criterion crit, Method method,
                                   const BaselineOptions& opt = {}, const Design* start = nullptr) {
  detail::check_supported(crit);
  if (method == Method::Socp) throw Error(ErrorCode::InvalidArgument, "socp is not a baseline method");
  const Design d0 = start ? *start : Design::uniform(p.num_experiments());
  check_design(p, d0);
  detail::Stacked st(p);
  IterationState state;
  state.weights = d0.weights() / d0.weights().sum();
  const double gamma = detail::default_gamma(crit, opt.gamma);

  if (method == Method::Exchange) {
    Matrix Minv = detail::inverse_spd(st.information(state.weights));
    auto sens = detail::sensitivity(p, st, Minv, crit);
    state.history.push_back(sens.value);
    state.ratio = sens.phi.maxCoeff() / sens.phibar;
    while (state.ratio > opt.stop_ratio && state.iteration < opt.max_iter) {
      Index i = 0;
      sens.phi.maxCoeff(&i);
      const double a = detail::exchange_alpha(p, Minv, sens, i, crit);
      if (a <= 0) break;
      state.weights *= (1.0 - a);
      state.weights[i] += a;
      ++state.iteration;
      if (state.iteration % opt.refresh_every == 0)
        Minv = detail::inverse_spd(st.information(state.weights));
      else
        Minv = detail::exchange_inverse(Minv, p.observation(i), a);
      sens = detail::sensitivity(p, st, Minv, crit);
      state.history.push_back(sens.value);
      state.ratio = sens.phi.maxCoeff() / sens.phibar;
    }
  } else {
    auto sens = detail::sensitivity(p, st, state.weights, crit);
    state.history.push_back(sens.value);
    state.ratio = sens.phi.maxCoeff() / sens.phibar;
    while (state.ratio > opt.stop_ratio && state.iteration < opt.max_iter) {
      state.weights = method == Method::Multiplicative ? detail::multiplicative_update(state.weights, sens, opt.lambda)
                                                       : detail::accelerated_update(state.weights, sens, gamma);
      ++state.iteration;
      sens = detail::sensitivity(p, st, state.weights, crit);
      state.history.push_back(sens.value);
      state.ratio = sens.phi.maxCoeff() / sens.phibar;
    }
  }
  BaselineResult out;
  out.converged = state.ratio <= opt.stop_ratio;
  out.value = state.history.back();
  out.design = Design(state.weights);
  out.state = std::move(state);
  return out;
}

}  // namespace optdesign

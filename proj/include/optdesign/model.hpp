#pragma once

// Experiments, designs and the information-matrix algebra every other module
// builds on.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "optdesign/error.hpp"

namespace optdesign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Criterion { C, A, T, D, S };

inline const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::C: return "c";
    case Criterion::A: return "A";
    case Criterion::T: return "T";
    case Criterion::D: return "D";
    case Criterion::S: return "S";
  }
  return "?";
}

inline Criterion parse_criterion(const std::string& name) {
  if (name == "c" || name == "C") return Criterion::C;
  if (name == "A" || name == "a") return Criterion::A;
  if (name == "T" || name == "t") return Criterion::T;
  if (name == "D" || name == "d") return Criterion::D;
  if (name == "S" || name == "s") return Criterion::S;
  throw Error(ErrorCode::InvalidArgument, "unknown criterion '" + name + "'");
}

struct LinearConstraints {
  Matrix R;  // n x s
  Vector b;  // n
};

// One regression model of a multi-model (S_beta) problem. Every sub-model
// shares the experiment index set of the parent problem.
struct SubModel {
  std::vector<Matrix> observations;
  Vector target;
};

struct MultiModel {
  std::vector<SubModel> models;
  Vector beta;
};

class DesignProblem {
 public:
  DesignProblem() = default;

  explicit DesignProblem(std::vector<Matrix> observations) : obs_(std::move(observations)) {
    if (obs_.empty()) throw Error(ErrorCode::InvalidArgument, "no experiments");
    m_ = obs_.front().cols();
    if (m_ == 0) throw Error(ErrorCode::InvalidArgument, "zero parameters");
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      if (obs_[i].cols() != m_)
        throw Error(ErrorCode::DimensionMismatch,
                    "experiment " + std::to_string(i) + " has " + std::to_string(obs_[i].cols()) +
                        " columns, expected " + std::to_string(m_));
      if (obs_[i].rows() == 0)
        throw Error(ErrorCode::InvalidArgument, "experiment " + std::to_string(i) + " has no rows");
      if (!obs_[i].allFinite())
        throw Error(ErrorCode::InvalidArgument, "experiment " + std::to_string(i) + " is not finite");
    }
  }

  DesignProblem& set_target(const Vector& c) {
    if (c.size() != m_)
      throw Error(ErrorCode::DimensionMismatch, "target length " + std::to_string(c.size()) +
                                                    " != parameters " + std::to_string(m_));
    target_ = Matrix(c);
    vector_target_ = true;
    return *this;
  }

  DesignProblem& set_target(const Matrix& K) {
    if (K.rows() != m_)
      throw Error(ErrorCode::DimensionMismatch, "target has " + std::to_string(K.rows()) +
                                                    " rows, expected " + std::to_string(m_));
    if (K.cols() == 0) throw Error(ErrorCode::InvalidArgument, "empty target matrix");
    target_ = K;
    vector_target_ = false;
    return *this;
  }

  DesignProblem& set_constraints(const Matrix& R, const Vector& b) {
    if (R.cols() != num_experiments() || R.rows() != b.size())
      throw Error(ErrorCode::DimensionMismatch, "constraint matrix must be n x s with b of length n");
    constraints_ = LinearConstraints{R, b};
    return *this;
  }

  DesignProblem& set_models(MultiModel mm) {
    if (mm.models.empty()) throw Error(ErrorCode::InvalidArgument, "no sub-models");
    if (mm.beta.size() != static_cast<Eigen::Index>(mm.models.size()))
      throw Error(ErrorCode::DimensionMismatch, "beta length must equal the number of models");
    if ((mm.beta.array() < 0).any() || std::abs(mm.beta.sum() - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "beta must be a probability vector");
    for (const auto& sm : mm.models) {
      if (sm.observations.size() != obs_.size())
        throw Error(ErrorCode::DimensionMismatch, "sub-model experiment count mismatch");
      const auto mk = sm.target.size();
      for (const auto& a : sm.observations)
        if (a.cols() != mk)
          throw Error(ErrorCode::DimensionMismatch, "sub-model observation/target mismatch");
    }
    models_ = std::move(mm);
    return *this;
  }

  Eigen::Index num_experiments() const { return static_cast<Eigen::Index>(obs_.size()); }
  Eigen::Index num_params() const { return m_; }
  Eigen::Index max_rows() const {
    Eigen::Index l = 0;
    for (const auto& a : obs_) l = std::max(l, a.rows());
    return l;
  }
  Eigen::Index total_rows() const {
    Eigen::Index l = 0;
    for (const auto& a : obs_) l += a.rows();
    return l;
  }

  const Matrix& observation(Eigen::Index i) const { return obs_.at(static_cast<std::size_t>(i)); }
  const std::vector<Matrix>& observations() const { return obs_; }

  bool has_target() const { return target_.has_value(); }
  bool target_is_vector() const { return target_.has_value() && vector_target_; }
  Eigen::Index target_columns() const { return target_ ? target_->cols() : 0; }

  Vector target_vector() const {
    if (!target_ || target_->cols() != 1)
      throw Error(ErrorCode::UnsupportedCombination, "problem has no single target vector");
    return target_->col(0);
  }
  const Matrix& target_matrix() const {
    if (!target_) throw Error(ErrorCode::UnsupportedCombination, "problem has no target");
    return *target_;
  }

  const std::optional<LinearConstraints>& constraints() const { return constraints_; }
  const std::optional<MultiModel>& models() const { return models_; }

 private:
  std::vector<Matrix> obs_;
  Eigen::Index m_ = 0;
  std::optional<Matrix> target_;
  bool vector_target_ = false;
  std::optional<LinearConstraints> constraints_;
  std::optional<MultiModel> models_;
};

class Design {
 public:
  Design() = default;

  explicit Design(Vector weights) : w_(std::move(weights)) {
    if (!w_.allFinite()) throw Error(ErrorCode::InvalidArgument, "design weights not finite");
    if (w_.size() > 0 && w_.minCoeff() < 0)
      throw Error(ErrorCode::InvalidArgument, "design weights must be nonnegative");
  }

  static Design uniform(Eigen::Index s) { return Design(Vector::Constant(s, 1.0 / static_cast<double>(s))); }

  const Vector& weights() const { return w_; }
  Eigen::Index size() const { return w_.size(); }
  double operator[](Eigen::Index i) const { return w_[i]; }
  double total() const { return w_.sum(); }

  // Indices whose weight exceeds rel * max weight.
  std::vector<Eigen::Index> support(double rel = 1e-7) const {
    std::vector<Eigen::Index> out;
    if (w_.size() == 0) return out;
    const double cut = rel * w_.maxCoeff();
    for (Eigen::Index i = 0; i < w_.size(); ++i)
      if (w_[i] > cut) out.push_back(i);
    return out;
  }

  // Zero out weights below rel * max and renormalise to unit mass.
  Design pruned(double rel = 1e-7) const {
    Vector w = Vector::Zero(w_.size());
    for (auto i : support(rel)) w[i] = w_[i];
    const double t = w.sum();
    if (t <= 0) throw Error(ErrorCode::InvalidArgument, "design has no mass");
    return Design(w / t);
  }

 private:
  Vector w_;
};

inline Matrix information_matrix(const std::vector<Matrix>& obs, const Vector& w) {
  if (obs.empty()) throw Error(ErrorCode::InvalidArgument, "no experiments");
  if (static_cast<std::size_t>(w.size()) != obs.size())
    throw Error(ErrorCode::DimensionMismatch, "weight vector length differs from experiment count");
  const auto m = obs.front().cols();
  Matrix M = Matrix::Zero(m, m);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (w[static_cast<Eigen::Index>(i)] == 0.0) continue;
    M.selfadjointView<Eigen::Lower>().rankUpdate(obs[i].transpose(), w[static_cast<Eigen::Index>(i)]);
  }
  return M.selfadjointView<Eigen::Lower>();
}

// Symmetric PSD information matrix with a cached eigendecomposition; all
// generalized inverses are Moore-Penrose with an eigenvalue cutoff of
// 1e-10 * lambda_max.
class InformationMatrix {
 public:
  static constexpr double kCutoff = 1e-10;
  static constexpr double kEstimTol = 1e-8;

  explicit InformationMatrix(Matrix M) : M_(std::move(M)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(M_);
    V_ = es.eigenvectors();
    lambda_ = es.eigenvalues();
    const double lmax = lambda_.size() ? std::max(lambda_.maxCoeff(), 0.0) : 0.0;
    inv_ = Vector::Zero(lambda_.size());
    rank_ = 0;
    for (Eigen::Index k = 0; k < lambda_.size(); ++k) {
      if (lmax > 0 && lambda_[k] > kCutoff * lmax) {
        inv_[k] = 1.0 / lambda_[k];
        ++rank_;
      }
    }
  }

  InformationMatrix(const DesignProblem& p, const Design& d)
      : InformationMatrix(information_matrix(p.observations(), d.weights())) {}

  const Matrix& matrix() const { return M_; }
  Eigen::Index dim() const { return M_.rows(); }
  Eigen::Index rank() const { return rank_; }
  bool nonsingular() const { return rank_ == M_.rows(); }
  const Vector& eigenvalues() const { return lambda_; }

  Matrix pseudo_inverse() const { return V_ * inv_.asDiagonal() * V_.transpose(); }

  Matrix solve(const Matrix& B) const { return V_ * (inv_.asDiagonal() * (V_.transpose() * B)); }

  // Orthogonal projector onto Range M applied to B.
  Matrix project(const Matrix& B) const {
    Vector mask = (inv_.array() > 0).cast<double>();
    return V_ * (mask.asDiagonal() * (V_.transpose() * B));
  }

  bool estimable(const Matrix& K) const {
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      const Vector c = K.col(j);
      const double nc = c.norm();
      if ((c - project(c)).norm() > kEstimTol * std::max(nc, 1e-300)) return false;
    }
    return true;
  }

  // c' M^- c, throwing Inestimable when c is outside Range M.
  double quadratic(const Vector& c) const {
    if (!estimable(c)) throw Error(ErrorCode::Inestimable, "target vector not in range of M");
    return c.dot(Vector(solve(c)));
  }

 private:
  Matrix M_;
  Matrix V_;
  Vector lambda_;
  Vector inv_;
  Eigen::Index rank_ = 0;
};

inline void check_design(const DesignProblem& p, const Design& d) {
  if (d.size() != p.num_experiments())
    throw Error(ErrorCode::DimensionMismatch, "design has " + std::to_string(d.size()) +
                                                  " weights for " + std::to_string(p.num_experiments()) +
                                                  " experiments");
}

inline double c_variance(const DesignProblem& p, const Design& d, const Vector& c) {
  check_design(p, d);
  if (c.size() != p.num_params()) throw Error(ErrorCode::DimensionMismatch, "target length mismatch");
  return InformationMatrix(p, d).quadratic(c);
}

// BLUE coefficients h_i = w_i A_i M^+ c; zero blocks off the support.
inline std::vector<Vector> blue(const DesignProblem& p, const Design& d, const Vector& c) {
  check_design(p, d);
  InformationMatrix info(p, d);
  if (!info.estimable(c)) throw Error(ErrorCode::Inestimable, "target vector not in range of M");
  const Vector g = info.solve(c);
  std::vector<Vector> h;
  h.reserve(static_cast<std::size_t>(p.num_experiments()));
  for (Eigen::Index i = 0; i < p.num_experiments(); ++i) h.push_back(d[i] * (p.observation(i) * g));
  return h;
}

// Variance of the linear estimator sum_i h_i' y_i / w_i.
inline double estimator_variance(const Design& d, const std::vector<Vector>& h) {
  double v = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double n2 = h[i].squaredNorm();
    if (n2 == 0) continue;
    if (d[static_cast<Eigen::Index>(i)] <= 0) return std::numeric_limits<double>::infinity();
    v += n2 / d[static_cast<Eigen::Index>(i)];
  }
  return v;
}

// Minimiser of tr(U'MU) subject to K'U = I; its value is the T-criterion
// extended continuously to designs that do not make K'theta estimable.
struct TInformation {
  Matrix U;
  double value = 0;
};

inline TInformation t_information(const Matrix& M, const Matrix& K) {
  const auto m = M.rows();
  const auto r = K.cols();
  Eigen::ColPivHouseholderQR<Matrix> qr(K);
  if (qr.rank() < r) throw Error(ErrorCode::InvalidArgument, "target matrix must have full column rank");
  // U0 = K (K'K)^{-1}; N spans the null space of K'.
  const Matrix U0 = K * (K.transpose() * K).ldlt().solve(Matrix::Identity(r, r));
  Eigen::HouseholderQR<Matrix> full(K);
  const Matrix Q = full.householderQ() * Matrix::Identity(m, m);
  const Matrix N = Q.rightCols(m - r);
  Matrix U = U0;
  if (m > r) {
    const Matrix NMN = N.transpose() * M * N;
    const Matrix rhs = N.transpose() * M * U0;
    InformationMatrix inner(NMN);
    U = U0 - N * inner.solve(rhs);
  }
  return {U, (U.transpose() * M * U).trace()};
}

// Criterion values in minimisation form, except T which is maximised.
inline double criterion_value(const DesignProblem& p, const Design& d, Criterion crit) {
  check_design(p, d);
  switch (crit) {
    case Criterion::C: return c_variance(p, d, p.target_vector());
    case Criterion::A: {
      InformationMatrix info(p, d);
      const Matrix& K = p.target_matrix();
      if (!info.estimable(K)) throw Error(ErrorCode::Inestimable, "target columns not in range of M");
      return (K.transpose() * info.solve(K)).trace();
    }
    case Criterion::T: {
      return t_information(information_matrix(p.observations(), d.weights()), p.target_matrix()).value;
    }
    case Criterion::D: {
      const Matrix M = information_matrix(p.observations(), d.weights());
      Eigen::LLT<Matrix> llt(M);
      if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularM, "information matrix is singular");
      const Vector diag = llt.matrixLLT().diagonal();
      if (diag.minCoeff() <= 0) throw Error(ErrorCode::SingularM, "information matrix is singular");
      return -2.0 * diag.array().log().sum() / static_cast<double>(M.rows());
    }
    case Criterion::S: {
      if (!p.models()) throw Error(ErrorCode::UnsupportedCombination, "S criterion needs sub-models");
      const auto& mm = *p.models();
      double v = 0;
      for (std::size_t k = 0; k < mm.models.size(); ++k) {
        const double b = mm.beta[static_cast<Eigen::Index>(k)];
        if (b == 0) continue;
        InformationMatrix info(information_matrix(mm.models[k].observations, d.weights()));
        v += b * std::log(info.quadratic(mm.models[k].target));
      }
      return v;
    }
  }
  return 0;
}

// Nested models giving D-optimality as an S_beta problem: model k keeps the
// first k parameters and targets e_k.
inline MultiModel nested_d_models(const DesignProblem& p) {
  const auto m = p.num_params();
  MultiModel mm;
  mm.beta = Vector::Constant(m, 1.0 / static_cast<double>(m));
  for (Eigen::Index k = 1; k <= m; ++k) {
    SubModel sm;
    for (const auto& a : p.observations()) sm.observations.push_back(a.leftCols(k));
    sm.target = Vector::Unit(k, k - 1);
    mm.models.push_back(std::move(sm));
  }
  return mm;
}

}  // namespace optdesign

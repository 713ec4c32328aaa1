#pragma once

#include <Eigen/Dense>

#include <numbers>
#include <vector>

#include "optdesign/optdesign.hpp"

namespace fixtures {

using optdesign::DesignProblem;
using optdesign::Matrix;
using optdesign::Vector;

inline Matrix row(std::initializer_list<double> v) {
  Matrix A(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) A(0, k++) = x;
  return A;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double a : v) x[k++] = a;
  return x;
}

// A_1 = [1 0], A_2 = [0 1], c = (1, 1).
inline DesignProblem e1e2() {
  DesignProblem p({row({1, 0}), row({0, 1})});
  p.set_target(vec({1, 1}));
  return p;
}

// Same experiments with K = I_2.
inline DesignProblem e1e2_identity() {
  DesignProblem p({row({1, 0}), row({0, 1})});
  p.set_target(Matrix(Matrix::Identity(2, 2)));
  return p;
}

// A_1 = I_2, c = (1, 1).
inline DesignProblem identity_single() {
  DesignProblem p({Matrix(Matrix::Identity(2, 2))});
  p.set_target(vec({1, 1}));
  return p;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace fixtures

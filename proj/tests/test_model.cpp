#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

using namespace optdesign;
using namespace fixtures;

TEST(InformationMatrix, SingleIdentityExperiment) {
  const Matrix M = information_matrix({Matrix(Matrix::Identity(2, 2))}, vec({1}));
  EXPECT_TRUE(M.isApprox(Matrix::Identity(2, 2)));
}

TEST(InformationMatrix, OrthonormalRows) {
  const Matrix M = information_matrix(e1e2().observations(), vec({0.5, 0.5}));
  EXPECT_TRUE(M.isApprox(Matrix(Vector::Constant(2, 0.5).asDiagonal())));
}

TEST(InformationMatrix, MatchesNaiveTripleLoop) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<Matrix> obs;
  for (int i = 0; i < 3; ++i) {
    Matrix A(2, 3);
    for (Index r = 0; r < 2; ++r)
      for (Index c = 0; c < 3; ++c) A(r, c) = n01(rng);
    obs.push_back(A);
  }
  const Vector w = vec({0.2, 0.3, 0.5});
  Matrix naive = Matrix::Zero(3, 3);
  for (int i = 0; i < 3; ++i)
    for (Index a = 0; a < 3; ++a)
      for (Index b = 0; b < 3; ++b)
        for (Index r = 0; r < 2; ++r) naive(a, b) += w[i] * obs[i](r, a) * obs[i](r, b);
  const Matrix M = information_matrix(obs, w);
  EXPECT_LT((M - naive).norm(), 1e-12);
  EXPECT_EQ(M, M.transpose());
}

TEST(InformationMatrix, LengthMismatchThrows) {
  try {
    information_matrix(e1e2().observations(), vec({1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(CVariance, OrthonormalRowsGivesFour) {
  const auto p = e1e2();
  EXPECT_NEAR(c_variance(p, Design(vec({0.5, 0.5})), vec({1, 1})), 4.0, 1e-12);
}

TEST(CVariance, GridSearchConfirmsMinimumAtHalf) {
  const auto p = e1e2();
  double best = 1e300, arg = 0;
  for (int k = 1; k < 1000; ++k) {
    const double w1 = k / 1000.0;
    const double v = c_variance(p, Design(vec({w1, 1 - w1})), vec({1, 1}));
    if (v < best) best = v, arg = w1;
  }
  EXPECT_NEAR(best, 4.0, 1e-12);
  EXPECT_NEAR(arg, 0.5, 1e-12);
}

TEST(CVariance, SingleObservation) {
  DesignProblem p({row({1, 0})});
  EXPECT_NEAR(c_variance(p, Design(vec({1})), vec({1, 0})), 1.0, 1e-12);
}

TEST(CVariance, InestimableTargetThrows) {
  DesignProblem p({row({1, 0})});
  try {
    c_variance(p, Design(vec({1})), vec({0, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Inestimable);
  }
}

TEST(CriterionValue, AOptimalOnOrthonormalRows) {
  EXPECT_NEAR(criterion_value(e1e2_identity(), Design(vec({0.5, 0.5})), Criterion::A), 4.0, 1e-12);
}

TEST(CriterionValue, DOptimalOnOrthonormalRows) {
  const auto p = e1e2_identity();
  EXPECT_NEAR(criterion_value(p, Design(vec({0.5, 0.5})), Criterion::D), std::log(2.0), 1e-12);
  double best = 1e300;
  for (int k = 1; k < 100; ++k) {
    const double w1 = k / 100.0;
    best = std::min(best, criterion_value(p, Design(vec({w1, 1 - w1})), Criterion::D));
  }
  EXPECT_NEAR(best, std::log(2.0), 1e-12);
}

TEST(CriterionValue, TOptimalSingleExperiment) {
  DesignProblem p({Matrix(2.0 * Matrix::Identity(2, 2))});
  p.set_target(Matrix(Matrix::Identity(2, 2)));
  EXPECT_NEAR(criterion_value(p, Design(vec({1})), Criterion::T), 8.0, 1e-12);
}

TEST(CriterionValue, DSingularThrows) {
  DesignProblem p({row({1, 0}), row({0, 1})});
  p.set_target(Matrix(Matrix::Identity(2, 2)));
  try {
    criterion_value(p, Design(vec({1, 0})), Criterion::D);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularM);
  }
}

TEST(Blue, IdentityModel) {
  const auto p = identity_single();
  const auto h = blue(p, Design(vec({1})), vec({1, 1}));
  ASSERT_EQ(h.size(), 1u);
  EXPECT_TRUE(h[0].isApprox(vec({1, 1})));
  EXPECT_NEAR(estimator_variance(Design(vec({1})), h), 2.0, 1e-12);
}

TEST(Blue, OrthonormalRows) {
  const auto p = e1e2();
  const Design d(vec({0.5, 0.5}));
  const auto h = blue(p, d, vec({1, 1}));
  EXPECT_NEAR(h[0][0], 1.0, 1e-12);
  EXPECT_NEAR(h[1][0], 1.0, 1e-12);
  EXPECT_NEAR(estimator_variance(d, h), 4.0, 1e-12);
}

TEST(Blue, ZeroWeightBlockIsExactlyZero) {
  DesignProblem p({row({1, 0}), row({0, 1}), row({1, 1})});
  const auto h = blue(p, Design(vec({0.5, 0.5, 0})), vec({1, 1}));
  EXPECT_EQ(h[2][0], 0.0);
}

TEST(Design, SupportPrunesRelativeToMaximum) {
  const Design d(vec({0.5, 1e-9, 0.5}));
  EXPECT_EQ(d.support(), (std::vector<Index>{0, 2}));
  const Design q = d.pruned();
  EXPECT_EQ(q.weights()[1], 0.0);
  EXPECT_NEAR(q.weights().sum(), 1.0, 1e-15);
}

TEST(Design, NegativeWeightRejected) {
  try {
    Design d(vec({0.5, -0.1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(DesignProblem, BetaMustBeProbabilityVector) {
  MultiModel mm;
  SubModel sm;
  sm.observations = {row({1}), row({2})};
  sm.target = vec({1});
  mm.models = {sm, sm};
  mm.beta = vec({0.5, 0.4});
  DesignProblem p({row({1}), row({2})});
  EXPECT_THROW(p.set_models(mm), Error);
}

TEST(DesignProblem, ColumnMismatchRejected) {
  try {
    DesignProblem p({row({1, 0}), row({1, 0, 0})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(NestedModels, TruncatedColumnsAndUnitTargets) {
  DesignProblem p({row({1, 2, 3}), row({4, 5, 6})});
  const MultiModel mm = nested_d_models(p);
  ASSERT_EQ(mm.models.size(), 3u);
  EXPECT_EQ(mm.models[1].observations[1].cols(), 2);
  EXPECT_EQ(mm.models[1].observations[1](0, 1), 5.0);
  EXPECT_EQ(mm.models[2].target, vec({0, 0, 1}));
  EXPECT_NEAR(mm.beta.sum(), 1.0, 1e-15);
}

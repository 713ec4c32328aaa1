#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace optdesign;
using namespace fixtures;

TEST(Kiefer, RatioAtSkewedDesign) {
  EXPECT_NEAR(kiefer_ratio(e1e2_identity(), Design(vec({0.9, 0.1})), Criterion::D), 5.0, 1e-12);
  EXPECT_NEAR(kiefer_ratio(e1e2_identity(), Design(vec({0.5, 0.5})), Criterion::D), 1.0, 1e-12);
}

TEST(Kiefer, SensitivitiesForC) {
  const Vector phi = sensitivities(e1e2(), Design(vec({0.5, 0.5})), Criterion::C);
  EXPECT_NEAR(phi[0], 4.0, 1e-12);
  EXPECT_NEAR(phi[1], 4.0, 1e-12);
}

TEST(Multiplicative, OneStepReachesOptimumForD) {
  const auto p = e1e2_identity();
  const auto s0 = initial_state(p, Design(vec({0.9, 0.1})), Criterion::D);
  const auto s1 = multiplicative_step(p, s0, Criterion::D, 1.0);
  EXPECT_NEAR(s1.weights[0], 0.5, 1e-12);
  EXPECT_NEAR(s1.weights[1], 0.5, 1e-12);
  EXPECT_NEAR(s1.ratio, 1.0, 1e-12);
  EXPECT_EQ(s1.iteration, 1);
  ASSERT_EQ(s1.history.size(), 2u);
  EXPECT_LT(s1.history[1], s1.history[0]);
}

TEST(Multiplicative, HalfPowerStepForC) {
  const auto p = e1e2();
  const auto s1 = multiplicative_step(p, initial_state(p, Design(vec({0.9, 0.1})), Criterion::C), Criterion::C, 0.5);
  EXPECT_NEAR(s1.weights[0], 0.5, 1e-12);
}

TEST(Multiplicative, LambdaOutOfRangeRejected) {
  const auto p = e1e2();
  const auto s0 = initial_state(p, Design::uniform(2), Criterion::C);
  EXPECT_THROW(multiplicative_step(p, s0, Criterion::C, 0.0), Error);
  EXPECT_THROW(multiplicative_step(p, s0, Criterion::C, 1.5), Error);
}

TEST(Accelerated, GammaZeroIsMultiplicativeWithUnitPower) {
  const auto p = e1e2_identity();
  const auto s0 = initial_state(p, Design(vec({0.9, 0.1})), Criterion::D);
  const auto a = accelerated_step(p, s0, Criterion::D, 0.0);
  const auto m = multiplicative_step(p, s0, Criterion::D, 1.0);
  EXPECT_LT((a.weights - m.weights).norm(), 1e-14);
}

TEST(Accelerated, PositiveGammaTakesLargerStep) {
  const auto p = e1e2_identity();
  const auto s0 = initial_state(p, Design(vec({0.9, 0.1})), Criterion::D);
  const auto g0 = accelerated_step(p, s0, Criterion::D, 0.0);
  const auto g5 = accelerated_step(p, s0, Criterion::D, 0.5);
  EXPECT_GT((g5.weights - s0.weights).norm(), (g0.weights - s0.weights).norm());
  EXPECT_NEAR(g5.weights.sum(), 1.0, 1e-14);
  EXPECT_GE(g5.weights.minCoeff(), 0.0);
}

TEST(Accelerated, DegenerateDenominatorDetected) {
  const auto p = e1e2_identity();
  const auto s0 = initial_state(p, Design::uniform(2), Criterion::D);
  try {
    accelerated_step(p, s0, Criterion::D, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateDenominator);
  }
}

TEST(Exchange, OneStepReachesOptimumForD) {
  const auto p = e1e2_identity();
  const auto s1 = exchange_step(p, initial_state(p, Design(vec({0.9, 0.1})), Criterion::D), Criterion::D);
  EXPECT_NEAR(s1.weights[1], 0.5, 1e-12);
}

TEST(Exchange, WoodburyMatchesDirectInverse) {
  const auto p = gen_random(10, 3, 2, 0, 4).problem;
  const Vector w = Vector::Constant(10, 0.1);
  const Matrix M = information_matrix(p.observations(), w);
  const double a = 0.2;
  Vector w2 = (1 - a) * w;
  w2[3] += a;
  const Matrix direct = information_matrix(p.observations(), w2).inverse();
  const Matrix upd = detail::exchange_inverse(M.inverse(), p.observation(3), a);
  EXPECT_LT((upd - direct).norm(), 1e-10 * direct.norm());
}

TEST(RunBaseline, AllMethodsAgreeOnAOptimum) {
  const auto p = e1e2_identity();
  for (auto m : {Method::Multiplicative, Method::Accelerated, Method::Exchange}) {
    BaselineOptions opt;
    opt.stop_ratio = 1.0 + 1e-9;
    const auto r = run_baseline(p, Criterion::A, m, opt);
    EXPECT_TRUE(r.converged) << to_string(m);
    EXPECT_NEAR(r.value, 4.0, 1e-6) << to_string(m);
  }
}

TEST(RunBaseline, StopsAtRatio) {
  const auto p = gen_random(40, 4, 1, 0, 9).problem;
  BaselineOptions opt;
  const auto r = run_baseline(p, Criterion::D, Method::Multiplicative, opt);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.state.ratio, 1.001);
  EXPECT_EQ(static_cast<int>(r.state.history.size()), r.state.iteration + 1);
  EXPECT_NEAR(r.value, criterion_value(p, r.design, Criterion::D), 1e-10);
}

TEST(RunBaseline, MaxIterRespected) {
  const auto p = gen_random(40, 4, 1, 0, 9).problem;
  BaselineOptions opt;
  opt.stop_ratio = 1.0;
  opt.max_iter = 7;
  const auto r = run_baseline(p, Criterion::D, Method::Multiplicative, opt);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.state.iteration, 7);
}

TEST(RunBaseline, TCriterionUnsupported) {
  try {
    run_baseline(e1e2_identity(), Criterion::T, Method::Multiplicative);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedCombination);
  }
}

TEST(RunBaseline, SocpIsNotABaseline) {
  EXPECT_THROW(run_baseline(e1e2_identity(), Criterion::A, Method::Socp), Error);
}

TEST(RunBaseline, SingularStartForD) {
  try {
    run_baseline(e1e2_identity(), Criterion::D, Method::Multiplicative, {}, nullptr);
  } catch (...) {
    FAIL();
  }
  const Design start(vec({1, 0}));
  try {
    run_baseline(e1e2_identity(), Criterion::D, Method::Multiplicative, {}, &start);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularM);
  }
}

TEST(Method, NamesRoundTrip) {
  for (auto m : {Method::Socp, Method::Multiplicative, Method::Accelerated, Method::Exchange})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("simplex"), Error);
}

TEST(Exchange, SingleRowStepMinimisesAlongSegment) {
  const auto p = gen_random(12, 3, 1, 2, 6).problem;
  const Vector w = Vector::Constant(12, 1.0 / 12);
  const Matrix Minv = information_matrix(p.observations(), w).inverse();
  const detail::Stacked st(p);
  const auto sens = detail::sensitivity(p, st, Minv, Criterion::A);
  Index i = 0;
  sens.phi.maxCoeff(&i);
  const double a = detail::exchange_alpha(p, Minv, sens, i, Criterion::A);
  auto value = [&](double t) {
    Vector v = (1 - t) * w;
    v[i] += t;
    return criterion_value(p, Design(v), Criterion::A);
  };
  ASSERT_GT(a, 0.0);
  double best = 1e300;
  for (int k = 1; k < 10000; ++k) best = std::min(best, value(k / 10000.0));
  EXPECT_LE(value(a), best + 1e-12);
  EXPECT_LT(value(a), value(0));
}

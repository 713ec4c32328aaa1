#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

using namespace optdesign;
using namespace fixtures;

namespace {

Vector random_simplex(std::mt19937_64& rng, Index s) {
  std::exponential_distribution<double> e(1.0);
  Vector w(s);
  for (Index i = 0; i < s; ++i) w[i] = e(rng);
  return w / w.sum();
}

}  // namespace

TEST(Property, InformationMatrixIsSymmetricPsd) {
  std::mt19937_64 rng(1);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = gen_random(8, 5, 2, 0, seed).problem;
    const Matrix M = information_matrix(p.observations(), random_simplex(rng, 8));
    EXPECT_EQ(M, M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
  }
}

TEST(Property, CVarianceScalesInverselyWithWeights) {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = gen_random(10, 4, 1, 1, seed).problem;
    const Vector w = random_simplex(rng, 10);
    const double v1 = c_variance(p, Design(w), p.target_vector());
    for (double a : {2.0, 10.0}) EXPECT_LT(rel(c_variance(p, Design(a * w), p.target_vector()), v1 / a), 1e-10);
  }
}

TEST(Property, CVarianceIsConvexAlongSegments) {
  std::mt19937_64 rng(3);
  const auto p = gen_random(10, 3, 1, 1, 4).problem;
  for (int k = 0; k < 20; ++k) {
    const Vector a = random_simplex(rng, 10), b = random_simplex(rng, 10);
    const double fa = c_variance(p, Design(a), p.target_vector());
    const double fb = c_variance(p, Design(b), p.target_vector());
    const double fm = c_variance(p, Design(0.5 * (a + b)), p.target_vector());
    EXPECT_LE(fm, 0.5 * (fa + fb) * (1 + 1e-12));
  }
}

TEST(Property, LogDetGradientMatchesSensitivities) {
  // d/dw_i of -log det M = -tr(M^{-1} A_i'A_i) = -phi_i.
  std::mt19937_64 rng(4);
  const auto p = gen_random(12, 4, 2, 0, 6).problem;
  const Vector w = random_simplex(rng, 12);
  const double m = static_cast<double>(p.num_params());
  const Vector phi = sensitivities(p, Design(w), Criterion::D);
  const double h = 1e-6;
  for (Index i = 0; i < 12; ++i) {
    Vector wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    const double fd = m * (criterion_value(p, Design(wp), Criterion::D) - criterion_value(p, Design(wm), Criterion::D)) / (2 * h);
    EXPECT_NEAR(fd, -phi[i], 1e-5 * std::max(1.0, phi[i]));
  }
}

TEST(Property, MultiplicativeDIsMonotone) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = gen_random(20, 3, 1, 0, seed).problem;
    auto st = initial_state(p, Design::uniform(20), Criterion::D);
    for (int k = 0; k < 30; ++k) {
      const auto nx = multiplicative_step(p, st, Criterion::D, 1.0);
      EXPECT_LE(nx.history.back(), st.history.back() + 1e-12);
      st = nx;
    }
  }
}

TEST(Property, KieferRatioAtLeastOne) {
  std::mt19937_64 rng(5);
  const auto p = gen_random(15, 4, 1, 3, 8).problem;
  for (int k = 0; k < 20; ++k) {
    const Design d(random_simplex(rng, 15));
    EXPECT_GE(kiefer_ratio(p, d, Criterion::A), 1.0 - 1e-12);
    EXPECT_GE(kiefer_ratio(p, d, Criterion::D), 1.0 - 1e-12);
  }
}

TEST(Property, HyperbolicConeEquivalence) {
  // (a + b, 2x, a - b) in SOC  <=>  ||x||^2 <= a b, a >= 0, b >= 0.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> U(-2, 2);
  int agree = 0;
  for (int k = 0; k < 1000; ++k) {
    const double x1 = U(rng), x2 = U(rng), a = U(rng), b = U(rng);
    const bool soc = a + b >= std::sqrt(4 * (x1 * x1 + x2 * x2) + (a - b) * (a - b));
    const bool hyp = x1 * x1 + x2 * x2 <= a * b && a >= 0 && b >= 0;
    agree += soc == hyp;
  }
  EXPECT_EQ(agree, 1000);
}

TEST(Property, GeometricMeanMatchesClosedForm) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0.5, 5);
  const std::vector<std::vector<double>> betas{{0.5, 0.5}, {0.25, 0.75}, {0.2, 0.3, 0.5}, {0.125, 0.125, 0.75}};
  for (const auto& beta : betas) {
    conic::ProgramBuilder pb;
    const auto y = pb.add_variables(static_cast<Index>(beta.size()));
    std::vector<conic::AffineExpr> leaves, eq;
    double expect = 1;
    for (std::size_t k = 0; k < beta.size(); ++k) {
      const double v = U(rng);
      eq.push_back(conic::AffineExpr::var(y[static_cast<Index>(k)]) - v);
      leaves.push_back(conic::AffineExpr::var(y[static_cast<Index>(k)]));
      expect *= std::pow(v, beta[k]);
    }
    pb.add_zero(eq);
    const Index g = pb.add_geometric_mean(leaves, beta);
    pb.minimize(conic::AffineExpr::var(g, -1.0));
    const auto sol = conic::solve(pb.build());
    ASSERT_EQ(sol.status, conic::Status::Optimal);
    EXPECT_LT(rel(sol.x[g], expect), 1e-6);
  }
}

TEST(Property, SolvesAreDeterministic) {
  const auto p = gen_random(30, 5, 2, 1, 13).problem;
  const auto a = solve_socp(p, Criterion::C);
  const auto b = solve_socp(p, Criterion::C);
  EXPECT_EQ(a.design.weights(), b.design.weights());
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.solution.iterations, b.solution.iterations);
}

TEST(Property, OptimalCBeatsRandomDesigns) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = gen_random(15, 3, 2, 1, seed).problem;
    const auto r = solve_socp(p, Criterion::C);
    ASSERT_EQ(r.status, conic::Status::Optimal);
    for (int k = 0; k < 20; ++k)
      EXPECT_GE(c_variance(p, Design(random_simplex(rng, 15)), p.target_vector()), r.value * (1 - 1e-7));
  }
}

TEST(Property, PermutingExperimentsPermutesDesign) {
  const auto p = gen_random(12, 3, 1, 1, 17).problem;
  std::vector<Matrix> rev(p.observations().rbegin(), p.observations().rend());
  DesignProblem q(rev);
  q.set_target(p.target_vector());
  const auto a = solve_socp(p, Criterion::C), b = solve_socp(q, Criterion::C);
  EXPECT_LT(rel(a.value, b.value), 1e-7);
  for (Index i = 0; i < 12; ++i) EXPECT_NEAR(a.design[i], b.design[11 - i], 1e-5);
}

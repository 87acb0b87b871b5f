// Copyright 2026 The robfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "robfeat/gaussian.hpp"

using namespace robfeat;

namespace {

double log_density_oracle(const GaussianParams& p, const Vec& x) {
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = p.sigma[i];
    const double z = x[i] - p.mu[i];
    lp += std::log(std::exp(-0.5 * z * z / s) / std::sqrt(2 * std::numbers::pi * s));
  }
  return lp;
}

GaussianParams random_params(RngStream& r, std::size_t d) {
  Vec mu(d), s(d);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = r.uniform(-2, 2);
    s[i] = std::exp(r.uniform(-2, 2));
  }
  return {mu, DiagMat(s)};
}

}  // namespace

TEST(Nll, MatchesProductOfUnivariateDensities) {
  RngStream r(11, 0);
  for (int k = 0; k < 50; ++k) {
    const auto p = random_params(r, 1 + r.below(6));
    Vec x(p.dim());
    for (auto& v : x) v = r.uniform(-3, 3);
    EXPECT_NEAR(nll(p, x), -log_density_oracle(p, x), 1e-10);
  }
}

TEST(Nll, GradientMatchesFiniteDifference) {
  RngStream r(12, 0);
  const auto p = random_params(r, 4);
  const Vec x = {0.3, -1.0, 2.0, 0.1};
  const Vec g = nll_grad_x(p, x);
  const Vec fd = finite_diff_grad([&](const Vec& z) { return nll(p, z); }, x, 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-6 * (1 + std::abs(fd[i])));
}

TEST(Classify, SignOfLinearScoreWithTiesPositive) {
  const GaussianParams p{{1.0, -1.0}, DiagMat(Vec{1.0, 4.0})};
  EXPECT_EQ(classify(p, Vec{1.0, 0.0}), 1);
  EXPECT_EQ(classify(p, Vec{-1.0, 0.0}), -1);
  EXPECT_EQ(classify(p, Vec{0.25, 1.0}), 1);  // 0.25 - 0.25 = 0
  EXPECT_EQ(classify(p, Vec{0.0, 1.0}), -1);
}

TEST(Mahalanobis, HandComputed) {
  const GaussianParams p{{0.0, 0.0}, DiagMat(Vec{4.0, 1.0})};
  EXPECT_DOUBLE_EQ(mahalanobis(p, Vec{2.0, 0.0}, Vec{0.0, 1.0}), std::sqrt(2.0));
}

TEST(MleFit, FoldsLabelsAndUsesPopulationVariance) {
  const std::vector<Vec> xs = {{1.0, 2.0}, {-3.0, -2.0}, {2.0, 0.0}, {0.0, -4.0}};
  const std::vector<int> ys = {1, -1, 1, -1};
  const auto p = mle_fit(xs, ys);
  // Folded samples: (1,2) (3,2) (2,0) (0,4); mean (1.5, 2).
  EXPECT_DOUBLE_EQ(p.mu[0], 1.5);
  EXPECT_DOUBLE_EQ(p.mu[1], 2.0);
  EXPECT_DOUBLE_EQ(p.sigma[0], (0.25 + 2.25 + 0.25 + 2.25) / 4);
  EXPECT_DOUBLE_EQ(p.sigma[1], (0 + 0 + 4 + 4) / 4.0);
}

TEST(MleFit, RejectsDegenerateInput) {
  EXPECT_THROW(mle_fit({{1.0}}, {1}), Error);
  EXPECT_THROW(mle_fit({{1.0}, {1.0}}, {1, 1}), Error);
  EXPECT_THROW(mle_fit({{1.0}, {2.0}}, {1, 0}), Error);
}

TEST(MleFit, ConvergesOnSamples) {
  RngStream r(13, 0);
  const GaussianParams truth{{1.0, -0.5}, DiagMat(Vec{0.5, 2.0})};
  std::vector<Vec> xs;
  std::vector<int> ys;
  for (int i = 0; i < 40000; ++i) {
    const int y = r.uniform() < 0.5 ? -1 : 1;
    Vec x = sample_gaussian(r, truth.mu, truth.sigma);
    for (auto& v : x) v *= y;
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto p = mle_fit(xs, ys);
  EXPECT_NEAR(p.mu[0], 1.0, 0.02);
  EXPECT_NEAR(p.mu[1], -0.5, 0.03);
  EXPECT_NEAR(p.sigma[0], 0.5, 0.02);
  EXPECT_NEAR(p.sigma[1], 2.0, 0.06);
}

TEST(OptimalDelta, OnSphereAndStationary) {
  RngStream r(14, 0);
  for (int k = 0; k < 200; ++k) {
    const auto p = random_params(r, 1 + r.below(8));
    Vec x(p.dim());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = p.mu[i] + r.normal();
    const double eps = r.uniform(0.01, 3.0);
    const Vec d = optimal_delta(p, x, eps);
    EXPECT_NEAR(norm2(d), eps, 1e-9 * eps);
    // Stationarity: the objective gradient at x + d is parallel to d.
    const Vec g = nll_grad_x(p, add(x, d));
    const double cosine = dot(g, d) / (norm2(g) * norm2(d));
    EXPECT_NEAR(cosine, 1.0, 1e-8);
  }
}

TEST(OptimalDelta, BeatsDenseAngularSearchIn2D) {
  const GaussianParams p{{1.0, 1.0}, DiagMat(Vec{1.0, 0.1})};
  const Vec x = {1.7, 0.4};
  const double eps = 0.6;
  const double best = nll(p, add(x, optimal_delta(p, x, eps)));
  double brute = -1e300;
  for (int k = 0; k < 100000; ++k) {
    const double a = 2 * std::numbers::pi * k / 100000.0;
    brute = std::max(brute, nll(p, Vec{x[0] + eps * std::cos(a), x[1] + eps * std::sin(a)}));
  }
  EXPECT_GE(best, brute - 1e-9);
  EXPECT_LE(best - brute, 1e-6);
}

TEST(OptimalDelta, HardCaseWithoutMassOnSmallestVariance) {
  const GaussianParams p{{0.0, 0.0}, DiagMat(Vec{1.0, 0.25})};
  const Vec x = {0.3, 0.0};
  const Vec d = optimal_delta(p, x, 1.0);
  EXPECT_NEAR(norm2(d), 1.0, 1e-12);
  const double best = nll(p, add(x, d));
  for (int k = 0; k < 3600; ++k) {
    const double a = 2 * std::numbers::pi * k / 3600.0;
    EXPECT_GE(best, nll(p, Vec{x[0] + std::cos(a), x[1] + std::sin(a)}) - 1e-12);
  }
}

TEST(OptimalDelta, Errors) {
  const GaussianParams p{{1.0}, DiagMat(Vec{1.0})};
  EXPECT_THROW(optimal_delta(p, Vec{1.0}, 0.5), Error);
  EXPECT_THROW(optimal_delta(p, Vec{2.0}, 0.0), Error);
  const GaussianParams bad{{1.0}, DiagMat(Vec{0.0})};
  try {
    optimal_delta(bad, Vec{2.0}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonpositiveVariance);
  }
}

TEST(LagrangianDelta, MaximizesPenalizedObjective) {
  RngStream r(15, 0);
  for (int k = 0; k < 20; ++k) {
    const auto p = random_params(r, 3);
    const double c = r.uniform(1.1, 4.0) / p.sigma.min();
    Vec x(3);
    for (auto& v : x) v = r.uniform(-2, 2);
    const Vec d = lagrangian_delta(p, x, {c});
    auto obj = [&](const Vec& dd) { return nll(p, add(x, dd)) - 0.5 * c * squared_norm(dd); };
    const Vec g = finite_diff_grad(obj, d, 1e-6);
    EXPECT_LT(norm2(g), 1e-6);
    for (int j = 0; j < 20; ++j) {
      Vec probe = d;
      for (auto& v : probe) v += 0.1 * r.normal();
      EXPECT_LE(obj(probe), obj(d) + 1e-12);
    }
  }
  const GaussianParams p{{0.0}, DiagMat(Vec{1.0})};
  EXPECT_THROW(lagrangian_delta(p, Vec{1.0}, {0.5}), Error);
  EXPECT_THROW(lagrangian_delta(p, Vec{1.0}, {1.0}), Error);
}

TEST(VulnerabilityGap, ScalarHandValueAndMonteCarlo) {
  EXPECT_DOUBLE_EQ(vulnerability_gap(DiagMat(Vec{1.0}), 2.0), 3.0);
  const GaussianParams truth{{1.0, 1.0}, DiagMat(Vec{2.0, 1.0})};
  const double cf = vulnerability_gap(truth.sigma, 2.0);
  EXPECT_NEAR(cf, 16.0 / 9.0 + 4.0 - 2.0, 1e-12);
  const double mc = vulnerability_gap_monte_carlo(truth, 2.0, 200000, 3, 2);
  EXPECT_NEAR(mc / cf, 1.0, 0.02);
  EXPECT_EQ(mc, vulnerability_gap_monte_carlo(truth, 2.0, 200000, 3, 5));
}

TEST(SolveLambda, ScalarClosedForm) {
  for (double eps : {0.05, 0.1, 0.5, 1.0, 3.0}) {
    const DiagMat s(Vec{1.0});
    EXPECT_NEAR(solve_lambda(s, s, eps), 1.0 + 1.0 / eps, 1e-10 * (1 + 1 / eps));
  }
}

TEST(SolveLambda, SatisfiesTraceBudget) {
  RngStream r(16, 0);
  for (int k = 0; k < 50; ++k) {
    const auto p = random_params(r, 2 + r.below(8));
    const auto q = random_params(r, p.dim());
    const double eps = r.uniform(0.05, 2.0);
    const double lam = solve_lambda(p.sigma, q.sigma, eps);
    EXPECT_GT(lam, 1.0 / p.sigma.min());
    const double tr = trace_sigma_m2(q.sigma, adversary_operator(p.sigma, lam));
    EXPECT_NEAR(tr, eps * eps, 1e-9 * eps * eps);
  }
}

TEST(RobustCov, ClosedFormSolvesFixedPointQuadratic) {
  RngStream r(17, 0);
  for (int k = 0; k < 100; ++k) {
    const double s = std::exp(r.uniform(-3, 3));
    const double lam = std::exp(r.uniform(-2, 4));
    const double sr = robust_cov_closed_form(DiagMat(Vec{s}), lam)[0];
    const double m = 1.0 / (lam * sr - 1.0);
    EXPECT_NEAR(s * (1 + m) * (1 + m) / sr, 1.0, 1e-10);
    EXPECT_GT(sr, s);
  }
}

TEST(AdversarialFit, ZeroBudgetReturnsTruth) {
  const Vec mu = {1.0, -1.0};
  const DiagMat s(Vec{1.0, 0.05});
  const auto r = adversarial_mle_fit(mu, s, 0.0);
  EXPECT_EQ(r.params.mu, mu);
  EXPECT_EQ(r.params.sigma.diag, s.diag);
}

TEST(AdversarialFit, ConvergesToFixedPoint) {
  const Vec mu = {1.0, 1.0, 0.5};
  const DiagMat s(Vec{1.0, 0.05, 0.3});
  for (double eps : {0.05, 0.2, 1.0}) {
    const auto r = adversarial_mle_fit(mu, s, eps);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.params.mu[i], mu[i], 1e-9);
    const DiagMat cf = robust_cov_closed_form(s, r.lambda);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.params.sigma[i] / cf[i], 1.0, 1e-6);
    EXPECT_LE(r.fixed_point_residual, 1e-6);
    const auto b = lambda_bounds(s, r.params.sigma, eps);
    EXPECT_LE(b.lower, r.lambda);
    EXPECT_LE(r.lambda, b.upper);
  }
}

TEST(AdversarialFit, SampledModeIsCloseToPopulation) {
  const Vec mu = {1.0, 1.0};
  const DiagMat s(Vec{1.0, 0.2});
  RobustFitOptions o;
  o.sampled = true;
  o.sample_count = 50000;
  o.seed = 4;
  const auto a = adversarial_mle_fit(mu, s, 0.3, o);
  const auto b = adversarial_mle_fit(mu, s, 0.3);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(a.params.mu[i], 1.0, 0.02);
    EXPECT_NEAR(a.params.sigma[i] / b.params.sigma[i], 1.0, 0.05);
  }
}

TEST(Alignment, WorstCosineMatchesBruteForce) {
  const DiagMat s(Vec{3.0, 0.5});
  const auto st = alignment_stats(s);
  EXPECT_DOUBLE_EQ(st.kappa, 6.0);
  double worst = 1.0;
  for (int k = 0; k < 100000; ++k) {
    const double a = std::numbers::pi * k / 100000.0;
    const Vec u = {std::cos(a), std::sin(a)};
    const Vec su = {3.0 * u[0], 0.5 * u[1]};
    worst = std::min(worst, dot(u, su) / norm2(su));
  }
  EXPECT_NEAR(st.worst_cosine, worst, 1e-6);
}

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

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "robfeat/numerics.hpp"

namespace robfeat {

struct GaussianParams {
  Vec mu;
  DiagMat sigma;

  std::size_t dim() const noexcept { return mu.size(); }
  void validate() const;
};

/// T = Sigma^-1, m = Sigma^-1 mu.
struct NaturalParams {
  DiagMat t;
  Vec m;
};

NaturalParams to_natural(const GaussianParams& p);
GaussianParams from_natural(const NaturalParams& n);

struct LagrangianConfig {
  double c = 0.0;
};

struct RobustFitOptions {
  double step = 1e-2;
  double grad_tol = 1e-8;
  std::uint64_t max_iter = 100000;
  /// Use empirical moments of `sample_count` draws instead of the population.
  bool sampled = false;
  std::uint64_t sample_count = 10000;
  std::uint64_t seed = 0;
};

struct RobustFitResult {
  GaussianParams params;
  double lambda = 0.0;
  DiagMat m_star;
  double trace_residual = 0.0;
  double fixed_point_residual = 0.0;
  double grad_norm = 0.0;
  std::uint64_t iterations = 0;
};

struct LambdaBounds {
  double lower = 0.0;
  double upper = 0.0;
};

struct AlignmentStats {
  double kappa = 1.0;
  double worst_cosine = 1.0;
};

double nll(const GaussianParams& p, std::span<const double> x);
/// Gradient of nll with respect to x: Sigma^-1 (x - mu).
Vec nll_grad_x(const GaussianParams& p, std::span<const double> x);
int classify(const GaussianParams& p, std::span<const double> x);
double mahalanobis(const GaussianParams& p, std::span<const double> a, std::span<const double> b);

GaussianParams mle_fit(const std::vector<Vec>& xs, const std::vector<int>& ys);

Vec optimal_delta(const GaussianParams& p, std::span<const double> x, double epsilon);
Vec lagrangian_delta(const GaussianParams& p, std::span<const double> x, const LagrangianConfig& cfg);

/// tr[(I + (C Sigma* - I)^-1)^2] - d, the gap in the quadratic-form loss
/// E[(v+delta)^T Sigma^-1 (v+delta)] - E[v^T Sigma^-1 v].
double vulnerability_gap(const DiagMat& sigma_star, double c);
/// Sampled estimate of the same quantity at (mu*, Sigma*) using lagrangian_delta.
double vulnerability_gap_monte_carlo(const GaussianParams& truth, double c, std::uint64_t n,
                                     std::uint64_t seed, unsigned threads = 1);

/// lambda > 1/sigma_min(sigma) with sum_i s*_i / (lambda sigma_i - 1)^2 = epsilon^2.
double solve_lambda(const DiagMat& sigma, const DiagMat& sigma_star, double epsilon);
/// M = (lambda Sigma - I)^-1.
DiagMat adversary_operator(const DiagMat& sigma, double lambda);
double trace_sigma_m2(const DiagMat& sigma_star, const DiagMat& m);

DiagMat robust_cov_closed_form(const DiagMat& sigma_star, double lambda);
/// max_i |1 - s*_i (1 + m_i)^2 / s_i|: residual of Sigma*^-1 = Sigma^-1 (M + I)^2.
double fixed_point_residual(const DiagMat& sigma, const DiagMat& sigma_star, const DiagMat& m);

RobustFitResult adversarial_mle_fit(std::span<const double> mu_star, const DiagMat& sigma_star,
                                    double epsilon, const RobustFitOptions& opts = {});

LambdaBounds lambda_bounds(const DiagMat& sigma_star, const DiagMat& sigma, double epsilon);

AlignmentStats alignment_stats(const DiagMat& sigma);

}  // namespace robfeat

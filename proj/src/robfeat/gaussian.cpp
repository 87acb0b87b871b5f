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

#include "robfeat/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "robfeat/parallel.hpp"

namespace robfeat {

namespace {

void require_positive(const DiagMat& s, const char* what) {
  require(s.dim() >= 1, ErrorCode::kInvalidArgument, std::string(what) + ": empty covariance");
  for (double v : s.diag) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::kNonpositiveVariance, std::string(what) + ": nonpositive variance");
    }
  }
}

// Finds s > 0 with f(s) = target for f strictly decreasing from above target
// (as s -> 0) to 0 (as s -> inf). Bisection runs geometrically until the
// bracket is within a factor of 4, then arithmetically to machine precision.
template <typename F>
double bisect_shift(F&& f, double target, double scale, const char* what) {
  constexpr double kCap = 1e300;
  constexpr double kFloor = 1e-300;
  double hi = scale;
  while (f(hi) > target) {
    hi *= 2.0;
    if (hi > kCap) fail(ErrorCode::kNotConverged, std::string(what) + ": upper bracket not found");
  }
  double lo = hi * 0.5;
  while (f(lo) <= target) {
    lo *= 0.5;
    if (lo < kFloor) fail(ErrorCode::kNotConverged, std::string(what) + ": lower bracket not found");
  }
  for (int it = 0; it < 2000; ++it) {
    const double mid = (hi > 4.0 * lo) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    if (f(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::abs(f(lo) - target) <= std::abs(f(hi) - target) ? lo : hi;
}

// 1/(lambda sigma_i - 1) written in terms of s = lambda - 1/sigma_min so the
// pole coordinate carries no cancellation.
double inv_gap(double s, double sigma_i, double sigma_min) {
  return 1.0 / (s * sigma_i + (sigma_i / sigma_min - 1.0));
}

double trace_at_shift(double s, const DiagMat& sigma, const DiagMat& sigma_star, double smin) {
  double t = 0.0;
  for (std::size_t i = 0; i < sigma.dim(); ++i) {
    const double m = inv_gap(s, sigma.diag[i], smin);
    t += sigma_star.diag[i] * m * m;
  }
  return t;
}

double solve_shift(const DiagMat& sigma, const DiagMat& sigma_star, double epsilon) {
  const double smin = sigma.min();
  const double budget = epsilon * epsilon;
  const double s = bisect_shift(
      [&](double x) { return trace_at_shift(x, sigma, sigma_star, smin); }, budget, 1.0 / smin,
      "solve_lambda");
  const double resid = std::abs(trace_at_shift(s, sigma, sigma_star, smin) - budget) / budget;
  if (!(resid <= 1e-10)) {
    fail(ErrorCode::kNotConverged,
         "solve_lambda: residual " + std::to_string(resid) + " above tolerance");
  }
  return s;
}

DiagMat operator_at_shift(const DiagMat& sigma, double s) {
  const double smin = sigma.min();
  Vec m(sigma.dim());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = inv_gap(s, sigma.diag[i], smin);
  return DiagMat(std::move(m));
}

}  // namespace

void GaussianParams::validate() const {
  require_same_dim(mu.size(), sigma.dim(), "GaussianParams");
  require_finite(mu, "GaussianParams mean");
  require_positive(sigma, "GaussianParams");
}

NaturalParams to_natural(const GaussianParams& p) {
  p.validate();
  NaturalParams n;
  n.t.diag.resize(p.dim());
  n.m.resize(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) {
    n.t.diag[i] = 1.0 / p.sigma.diag[i];
    n.m[i] = p.mu[i] / p.sigma.diag[i];
  }
  return n;
}

GaussianParams from_natural(const NaturalParams& n) {
  require_same_dim(n.m.size(), n.t.dim(), "NaturalParams");
  require_positive(n.t, "NaturalParams");
  GaussianParams p;
  p.mu.resize(n.m.size());
  p.sigma.diag.resize(n.m.size());
  for (std::size_t i = 0; i < n.m.size(); ++i) {
    p.sigma.diag[i] = 1.0 / n.t.diag[i];
    p.mu[i] = n.m[i] / n.t.diag[i];
  }
  return p;
}

double nll(const GaussianParams& p, std::span<const double> x) {
  p.validate();
  require_same_dim(x.size(), p.dim(), "nll");
  double quad = 0.0;
  double logdet = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double v = x[i] - p.mu[i];
    quad += v * v / p.sigma.diag[i];
    logdet += std::log(p.sigma.diag[i]);
  }
  return 0.5 * quad + 0.5 * logdet +
         0.5 * static_cast<double>(p.dim()) * std::log(2.0 * std::numbers::pi);
}

Vec nll_grad_x(const GaussianParams& p, std::span<const double> x) {
  p.validate();
  require_same_dim(x.size(), p.dim(), "nll_grad_x");
  Vec g(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) g[i] = (x[i] - p.mu[i]) / p.sigma.diag[i];
  return g;
}

int classify(const GaussianParams& p, std::span<const double> x) {
  p.validate();
  require_same_dim(x.size(), p.dim(), "classify");
  double score = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) score += x[i] * p.mu[i] / p.sigma.diag[i];
  return score >= 0.0 ? 1 : -1;
}

double mahalanobis(const GaussianParams& p, std::span<const double> a, std::span<const double> b) {
  p.validate();
  require_same_dim(a.size(), p.dim(), "mahalanobis");
  require_same_dim(b.size(), p.dim(), "mahalanobis");
  double q = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double v = a[i] - b[i];
    q += v * v / p.sigma.diag[i];
  }
  return std::sqrt(q);
}

GaussianParams mle_fit(const std::vector<Vec>& xs, const std::vector<int>& ys) {
  require(xs.size() >= 2, ErrorCode::kInvalidArgument, "mle_fit: need at least 2 samples");
  require_same_dim(xs.size(), ys.size(), "mle_fit labels");
  const std::size_t d = xs.front().size();
  require(d >= 1, ErrorCode::kInvalidArgument, "mle_fit: zero-dimensional samples");
  const double n = static_cast<double>(xs.size());
  Vec mean(d, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_dim(xs[k].size(), d, "mle_fit sample");
    require(ys[k] == 1 || ys[k] == -1, ErrorCode::kInvalidArgument, "mle_fit: labels must be +-1");
    for (std::size_t i = 0; i < d; ++i) mean[i] += ys[k] * xs[k][i];
  }
  for (double& m : mean) m /= n;
  Vec var(d, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      const double c = ys[k] * xs[k][i] - mean[i];
      var[i] += c * c;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    var[i] /= n;
    if (!(var[i] > 0.0)) {
      fail(ErrorCode::kNonpositiveVariance,
           "mle_fit: zero empirical variance in coordinate " + std::to_string(i));
    }
  }
  return GaussianParams{std::move(mean), DiagMat(std::move(var))};
}

Vec optimal_delta(const GaussianParams& p, std::span<const double> x, double epsilon) {
  p.validate();
  require_same_dim(x.size(), p.dim(), "optimal_delta");
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::kInvalidArgument,
          "optimal_delta: epsilon must be positive");
  const Vec v = sub(x, p.mu);
  require(squared_norm(v) > 0.0, ErrorCode::kInvalidArgument,
          "optimal_delta: x equals mu, no ascent direction");
  const std::size_t d = p.dim();
  const double smin = p.sigma.min();

  auto delta_at = [&](double s) {
    Vec out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = v[i] * inv_gap(s, p.sigma.diag[i], smin);
    return out;
  };

  // Hard case: v has no mass on the smallest-variance coordinates, so the
  // norm stays bounded as lambda approaches 1/sigma_min.
  bool pole_free = true;
  std::size_t pole = d;
  for (std::size_t i = 0; i < d; ++i) {
    if (p.sigma.diag[i] == smin) {
      if (pole == d) pole = i;
      if (v[i] != 0.0) pole_free = false;
    }
  }
  if (pole_free) {
    Vec base(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (p.sigma.diag[i] != smin) base[i] = v[i] / (p.sigma.diag[i] / smin - 1.0);
    }
    const double r0 = norm2(base);
    if (r0 <= epsilon) {
      base[pole] = std::sqrt(epsilon * epsilon - r0 * r0);
      return base;
    }
  }

  const double s = bisect_shift([&](double t) { return norm2(delta_at(t)); }, epsilon, 1.0 / smin,
                                "optimal_delta");
  Vec delta = delta_at(s);
  const double resid = std::abs(norm2(delta) - epsilon) / epsilon;
  if (!(resid <= 1e-10)) {
    fail(ErrorCode::kNotConverged, "optimal_delta: norm residual " + std::to_string(resid));
  }
  return delta;
}

Vec lagrangian_delta(const GaussianParams& p, std::span<const double> x,
                     const LagrangianConfig& cfg) {
  p.validate();
  require_same_dim(x.size(), p.dim(), "lagrangian_delta");
  require(std::isfinite(cfg.c) && cfg.c * p.sigma.min() >= 1.0, ErrorCode::kInvalidArgument,
          "lagrangian_delta: C must be at least 1/sigma_min");
  Vec out(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double g = cfg.c * p.sigma.diag[i] - 1.0;
    require(g != 0.0, ErrorCode::kInvalidArgument, "lagrangian_delta: C sigma_i = 1 (singular)");
    out[i] = (x[i] - p.mu[i]) / g;
  }
  return out;
}

double vulnerability_gap(const DiagMat& sigma_star, double c) {
  require_positive(sigma_star, "vulnerability_gap");
  require(std::isfinite(c) && c * sigma_star.min() >= 1.0, ErrorCode::kInvalidArgument,
          "vulnerability_gap: C must be at least 1/sigma_min");
  double total = 0.0;
  for (double s : sigma_star.diag) {
    const double g = c * s - 1.0;
    require(g != 0.0, ErrorCode::kInvalidArgument, "vulnerability_gap: C sigma_i = 1 (singular)");
    const double a = 1.0 + 1.0 / g;
    total += a * a;
  }
  return total - static_cast<double>(sigma_star.dim());
}

double vulnerability_gap_monte_carlo(const GaussianParams& truth, double c, std::uint64_t n,
                                     std::uint64_t seed, unsigned threads) {
  truth.validate();
  require(n >= 1, ErrorCode::kInvalidArgument, "vulnerability_gap_monte_carlo: n must be >= 1");
  const LagrangianConfig cfg{c};
  const RngStream base(seed, 0x6761700ULL);
  const double sum = parallel_sum(n, threads, [&](std::size_t k) {
    RngStream rng = base.fork(k);
    const Vec x = sample_gaussian(rng, truth.mu, truth.sigma);
    const Vec delta = lagrangian_delta(truth, x, cfg);
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.dim(); ++i) {
      const double v = x[i] - truth.mu[i];
      const double w = v + delta[i];
      acc += (w * w - v * v) / truth.sigma.diag[i];
    }
    return acc;
  });
  return sum / static_cast<double>(n);
}

double solve_lambda(const DiagMat& sigma, const DiagMat& sigma_star, double epsilon) {
  require_positive(sigma, "solve_lambda");
  require_positive(sigma_star, "solve_lambda");
  require_same_dim(sigma.dim(), sigma_star.dim(), "solve_lambda");
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::kInvalidArgument,
          "solve_lambda: epsilon must be positive");
  return 1.0 / sigma.min() + solve_shift(sigma, sigma_star, epsilon);
}

DiagMat adversary_operator(const DiagMat& sigma, double lambda) {
  require_positive(sigma, "adversary_operator");
  Vec m(sigma.dim());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double g = lambda * sigma.diag[i] - 1.0;
    require(g != 0.0, ErrorCode::kInvalidArgument, "adversary_operator: singular");
    m[i] = 1.0 / g;
  }
  return DiagMat(std::move(m));
}

double trace_sigma_m2(const DiagMat& sigma_star, const DiagMat& m) {
  require_same_dim(sigma_star.dim(), m.dim(), "trace_sigma_m2");
  double t = 0.0;
  for (std::size_t i = 0; i < m.dim(); ++i) t += sigma_star.diag[i] * m.diag[i] * m.diag[i];
  return t;
}

DiagMat robust_cov_closed_form(const DiagMat& sigma_star, double lambda) {
  require_positive(sigma_star, "robust_cov_closed_form");
  require(lambda > 0.0, ErrorCode::kInvalidArgument, "robust_cov_closed_form: lambda must be > 0");
  Vec out(sigma_star.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = sigma_star.diag[i];
    out[i] = 1.0 / lambda + 0.5 * s + std::sqrt(s / lambda + 0.25 * s * s);
  }
  return DiagMat(std::move(out));
}

double fixed_point_residual(const DiagMat& sigma, const DiagMat& sigma_star, const DiagMat& m) {
  require_same_dim(sigma.dim(), sigma_star.dim(), "fixed_point_residual");
  require_same_dim(sigma.dim(), m.dim(), "fixed_point_residual");
  double worst = 0.0;
  for (std::size_t i = 0; i < sigma.dim(); ++i) {
    const double a = 1.0 + m.diag[i];
    worst = std::max(worst, std::abs(1.0 - sigma_star.diag[i] * a * a / sigma.diag[i]));
  }
  return worst;
}

namespace {

struct FitState {
  Vec t;
  Vec m;
  double shift = 0.0;
  Vec op;
  double objective = 0.0;
  Vec gt;
  Vec gm;
  double trace_residual = 0.0;
};

// Robust objective and its Danskin gradient in (T, m). The adversary's budget
// is measured against the second moment of x - mu about the current mean.
FitState evaluate_fit(Vec t, Vec m, const Vec& mu_t, const Vec& var_t, double epsilon) {
  const std::size_t d = t.size();
  FitState st;
  Vec sigma(d), moment(d), mu(d);
  for (std::size_t i = 0; i < d; ++i) {
    sigma[i] = 1.0 / t[i];
    mu[i] = m[i] / t[i];
    const double off = mu_t[i] - mu[i];
    moment[i] = var_t[i] + off * off;
  }
  const DiagMat sig(sigma);
  const DiagMat mom(moment);
  st.shift = solve_shift(sig, mom, epsilon);
  st.op = operator_at_shift(sig, st.shift).diag;
  st.gt.resize(d);
  st.gm.resize(d);
  double tr = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double a = (1.0 + st.op[i]) * (1.0 + st.op[i]);
    st.objective += 0.5 * a * t[i] * moment[i] - 0.5 * std::log(t[i]);
    st.gt[i] = 0.5 * a * (var_t[i] + mu_t[i] * mu_t[i] - mu[i] * mu[i]) - 0.5 * sigma[i];
    st.gm[i] = a * (mu[i] - mu_t[i]);
    tr += moment[i] * st.op[i] * st.op[i];
  }
  st.trace_residual = std::abs(tr - epsilon * epsilon);
  st.t = std::move(t);
  st.m = std::move(m);
  return st;
}

double grad_norm(const FitState& st) {
  return std::sqrt(squared_norm(st.gt) + squared_norm(st.gm));
}

}  // namespace

RobustFitResult adversarial_mle_fit(std::span<const double> mu_star, const DiagMat& sigma_star,
                                    double epsilon, const RobustFitOptions& opts) {
  const GaussianParams truth{Vec(mu_star.begin(), mu_star.end()), sigma_star};
  truth.validate();
  require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorCode::kInvalidArgument,
          "adversarial_mle_fit: epsilon must be >= 0");
  require(opts.step > 0.0 && opts.grad_tol > 0.0 && opts.max_iter >= 1,
          ErrorCode::kInvalidArgument, "adversarial_mle_fit: invalid options");
  const std::size_t d = truth.dim();

  Vec mu_t = truth.mu;
  Vec var_t = truth.sigma.diag;
  if (opts.sampled) {
    require(opts.sample_count >= 2, ErrorCode::kInvalidArgument,
            "adversarial_mle_fit: sampled mode needs at least 2 draws");
    std::vector<Vec> xs(opts.sample_count);
    std::vector<int> ys(opts.sample_count, 1);
    const RngStream base(opts.seed, 0x726f62ULL);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      RngStream rng = base.fork(k);
      xs[k] = sample_gaussian(rng, truth.mu, truth.sigma);
    }
    const GaussianParams emp = mle_fit(xs, ys);
    mu_t = emp.mu;
    var_t = emp.sigma.diag;
  }

  RobustFitResult res;
  if (epsilon == 0.0) {
    res.params = GaussianParams{mu_t, DiagMat(var_t)};
    res.lambda = std::numeric_limits<double>::infinity();
    res.m_star = DiagMat(Vec(d, 0.0));
    return res;
  }

  Vec t0(d), m0(d);
  for (std::size_t i = 0; i < d; ++i) {
    t0[i] = 1.0 / var_t[i];
    m0[i] = mu_t[i] / var_t[i];
  }
  FitState st = evaluate_fit(std::move(t0), std::move(m0), mu_t, var_t, epsilon);
  double step = opts.step;
  std::uint64_t it = 0;
  for (; it < opts.max_iter; ++it) {
    if (grad_norm(st) <= opts.grad_tol) break;
    // Per-coordinate Newton direction from the fixed-operator Hessian.
    Vec dt(d), dm(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double a = (1.0 + st.op[i]) * (1.0 + st.op[i]);
      const double t = st.t[i];
      const double m = st.m[i];
      const double htt = a * m * m / (t * t * t) + 0.5 / (t * t);
      const double hmm = a / t;
      const double htm = -a * m / (t * t);
      const double det = htt * hmm - htm * htm;
      dt[i] = (hmm * st.gt[i] - htm * st.gm[i]) / det;
      dm[i] = (htt * st.gm[i] - htm * st.gt[i]) / det;
    }
    bool accepted = false;
    while (!accepted) {
      Vec t(d), m(d);
      bool positive = true;
      for (std::size_t i = 0; i < d; ++i) {
        t[i] = st.t[i] - step * dt[i];
        m[i] = st.m[i] - step * dm[i];
        positive = positive && t[i] > 0.0 && std::isfinite(t[i]) && std::isfinite(m[i]);
      }
      if (positive) {
        FitState trial = evaluate_fit(std::move(t), std::move(m), mu_t, var_t, epsilon);
        const double slack = 1e-14 * std::max(1.0, std::abs(st.objective));
        if (trial.objective <= st.objective + slack) {
          st = std::move(trial);
          accepted = true;
          continue;
        }
      }
      step *= 0.5;
      if (step < 1e-30) {
        fail(ErrorCode::kNotConverged, "adversarial_mle_fit: step underflow at iteration " +
                                           std::to_string(it));
      }
    }
  }
  if (grad_norm(st) > opts.grad_tol) {
    fail(ErrorCode::kNotConverged, "adversarial_mle_fit: no convergence after " +
                                       std::to_string(it) + " iterations (gradient norm " +
                                       std::to_string(grad_norm(st)) + ")");
  }

  NaturalParams nat{DiagMat(st.t), st.m};
  res.params = from_natural(nat);
  res.lambda = 1.0 / res.params.sigma.min() + st.shift;
  res.m_star = DiagMat(st.op);
  res.trace_residual = st.trace_residual;
  res.fixed_point_residual = fixed_point_residual(res.params.sigma, DiagMat(var_t), res.m_star);
  res.grad_norm = grad_norm(st);
  res.iterations = it;
  return res;
}

LambdaBounds lambda_bounds(const DiagMat& sigma_star, const DiagMat& sigma, double epsilon) {
  require_positive(sigma_star, "lambda_bounds");
  require_positive(sigma, "lambda_bounds");
  require_same_dim(sigma.dim(), sigma_star.dim(), "lambda_bounds");
  require(epsilon > 0.0, ErrorCode::kInvalidArgument, "lambda_bounds: epsilon must be positive");
  const double d = static_cast<double>(sigma.dim());
  const double budget = epsilon * epsilon;
  LambdaBounds b;
  b.lower = (d / sigma.trace()) * (1.0 + std::sqrt(d * sigma_star.min() / budget));
  b.upper = (1.0 / sigma.min()) * (std::sqrt(sigma_star.frobenius() * d / budget) + 1.0);
  return b;
}

AlignmentStats alignment_stats(const DiagMat& sigma) {
  require_positive(sigma, "alignment_stats");
  AlignmentStats a;
  a.kappa = sigma.max() / sigma.min();
  a.worst_cosine = 2.0 * std::sqrt(a.kappa) / (1.0 + a.kappa);
  return a;
}

}  // namespace robfeat

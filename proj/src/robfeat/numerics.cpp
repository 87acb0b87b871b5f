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

#include "robfeat/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace robfeat {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "ok";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNonpositiveVariance: return "nonpositive variance";
    case ErrorCode::kNotConverged: return "not converged";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown";
}

double DiagMat::min() const {
  require(!diag.empty(), ErrorCode::kInvalidArgument, "empty diagonal matrix");
  return *std::min_element(diag.begin(), diag.end());
}

double DiagMat::max() const {
  require(!diag.empty(), ErrorCode::kInvalidArgument, "empty diagonal matrix");
  return *std::max_element(diag.begin(), diag.end());
}

double DiagMat::trace() const { return std::accumulate(diag.begin(), diag.end(), 0.0); }

double DiagMat::frobenius() const { return norm2(diag); }

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  key_ = mix64(seed ^ mix64(stream_id ^ 0x6A09E667F3BCC909ULL));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c + 0xBB67AE8584CAA73BULL));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  require(n > 0, ErrorCode::kInvalidArgument, "below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return r % n;
}

double RngStream::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::fork(std::uint64_t child_id) const {
  return RngStream(seed_, mix64(stream_id_ * 0x9E3779B97F4A7C15ULL + child_id + 1));
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

double norm2(std::span<const double> a) {
  // Scaled accumulation so huge or tiny entries do not overflow/underflow.
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double v : a) {
    const double r = v / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

double distance2(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "distance2");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Vec sub(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "sub");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec add(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "add");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec scaled(std::span<const double> a, double s) {
  Vec out(a.begin(), a.end());
  for (double& v : out) v *= s;
  return out;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_dim(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(std::span<const double> a) noexcept {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(std::span<const double> a, const char* what) {
  if (!all_finite(a)) fail(ErrorCode::kNonFinite, std::string(what) + ": non-finite entry");
}

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorCode::kDimensionMismatch, std::string(what) + ": dimension mismatch (" +
                                            std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

Vec sample_gaussian(RngStream& rng, std::span<const double> mu, const DiagMat& sigma) {
  require_same_dim(mu.size(), sigma.dim(), "sample_gaussian");
  for (double s : sigma.diag) {
    require(s > 0.0, ErrorCode::kNonpositiveVariance, "sample_gaussian: nonpositive variance");
  }
  Vec out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    out[i] = mu[i] + std::sqrt(sigma.diag[i]) * rng.normal();
  }
  return out;
}

Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h) {
  require(h > 0.0, ErrorCode::kInvalidArgument, "finite_diff_grad: step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorCode::kNonFinite, "finite_diff_grad: non-finite evaluation at coordinate " +
                                      std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Vec l2_project(std::span<const double> v, std::span<const double> center, double radius) {
  require_same_dim(v.size(), center.size(), "l2_project");
  require(radius >= 0.0, ErrorCode::kInvalidArgument, "l2_project: negative radius");
  const double dist = distance2(v, center);
  if (dist <= radius) return Vec(v.begin(), v.end());
  Vec out(center.begin(), center.end());
  if (radius == 0.0) return out;
  const double s = radius / dist;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] += s * (v[i] - center[i]);
  // Rounding can leave the result a hair outside; pull it in.
  for (int pass = 0; pass < 16; ++pass) {
    const double d2 = distance2(out, center);
    if (d2 <= radius) break;
    const double s2 = radius / d2 * (1.0 - std::ldexp(1.0, pass - 52));
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = center[i] + s2 * (out[i] - center[i]);
  }
  return out;
}

void clip(std::span<double> v, double lo, double hi) {
  for (double& x : v) x = std::clamp(x, lo, hi);
}

}  // namespace robfeat

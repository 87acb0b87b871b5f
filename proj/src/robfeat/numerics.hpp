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
#include <functional>
#include <span>
#include <vector>

#include "robfeat/error.hpp"

namespace robfeat {

using Vec = std::vector<double>;

/// Diagonal of a d x d diagonal matrix. Covariances and adversary operators
/// in the Gaussian model are all diagonal, so no dense type exists.
struct DiagMat {
  Vec diag;

  DiagMat() = default;
  explicit DiagMat(Vec d) : diag(std::move(d)) {}
  static DiagMat identity(std::size_t d) { return DiagMat(Vec(d, 1.0)); }

  std::size_t dim() const noexcept { return diag.size(); }
  double operator[](std::size_t i) const { return diag[i]; }
  double min() const;
  double max() const;
  double trace() const;
  double frobenius() const;
};

/// Counter-based random stream. Draw k of stream (seed, id) is a pure function
/// of (seed, id, k), so per-sample streams can be handed to any worker.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Independent child stream; the parent is not advanced.
  RngStream fork(std::uint64_t child_id) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

// Vector helpers. Spans keep these usable on rows of flat matrices.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double squared_norm(std::span<const double> a);
double distance2(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
Vec add(std::span<const double> a, std::span<const double> b);
Vec scaled(std::span<const double> a, double s);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
bool all_finite(std::span<const double> a) noexcept;
void require_finite(std::span<const double> a, const char* what);
void require_same_dim(std::size_t a, std::size_t b, const char* what);

/// mu + sqrt(sigma) * z with z standard normal drawn from rng.
Vec sample_gaussian(RngStream& rng, std::span<const double> mu, const DiagMat& sigma);

using ScalarFn = std::function<double(const Vec&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h);

/// Euclidean projection of v onto the closed ball B(center, radius).
Vec l2_project(std::span<const double> v, std::span<const double> center, double radius);

/// Clamp every entry into [lo, hi].
void clip(std::span<double> v, double lo, double hi);

}  // namespace robfeat

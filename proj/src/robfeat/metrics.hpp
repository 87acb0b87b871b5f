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

#include <functional>
#include <string>
#include <vector>

#include "robfeat/attack.hpp"
#include "robfeat/dataset.hpp"
#include "robfeat/model.hpp"

namespace robfeat {

/// Scalar feature standardized to zero mean and unit variance on a
/// reference dataset.
struct FeatureFn {
  std::function<double(const Vec&)> evaluator;
  /// Gradient of the raw evaluator; central differences when empty.
  std::function<Vec(const Vec&)> gradient;
  double mean = 0.0;
  double stdev = 1.0;

  double operator()(const Vec& x) const { return (evaluator(x) - mean) / stdev; }
  Vec grad(const Vec& x) const;
};

FeatureFn fit_feature(std::function<double(const Vec&)> evaluator, const LabeledDataset& ref,
                      std::function<Vec(const Vec&)> gradient = {});
/// Coordinate j of the input as a feature.
FeatureFn coordinate_feature(std::size_t j, const LabeledDataset& ref);

/// Empirical E[y f(x)] for binary labels.
double usefulness_rho(const FeatureFn& f, const LabeledDataset& ds);
/// One-vs-rest usefulness per class (y = +1 for the class, -1 otherwise).
std::vector<double> usefulness_rho_per_class(const FeatureFn& f, const LabeledDataset& ds);
/// Empirical E[min_delta y f(x + delta)] with the inner minimum found by PGD.
/// PGD only upper-bounds the true minimum, so this can overestimate gamma.
double robust_usefulness_gamma(const FeatureFn& f, const LabeledDataset& ds,
                               const AttackConfig& delta);

enum class LabelMap { kIdentity, kPlusOneModC };

double eval_accuracy(const Model& m, const LabeledDataset& ds, LabelMap map,
                     unsigned threads = 1);

struct TransferEntry {
  std::string name;
  double clean_accuracy = 0.0;
  /// Accuracy on the original test set of this architecture trained on the
  /// relabeled dataset; filled by the caller.
  double relabeled_train_accuracy = 0.0;
  double transfer_rate = 0.0;
  double targeted_success = 0.0;
  std::size_t source_successes = 0;
};

struct TransferReport {
  std::vector<TransferEntry> entries;
  double source_attack_success = 0.0;
  Json to_json() const;
};

/// Adversarial examples are crafted on `source`; rates are measured over the
/// rows where the source attack succeeded. The targeted rate uses targets
/// (y + 1) mod C.
TransferReport transfer_rate(const Model& source, const std::vector<const Model*>& targets,
                             const LabeledDataset& ds, const AttackConfig& cfg, bool targeted,
                             std::uint64_t seed = 0, unsigned threads = 1);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Normal-approximation 95% half-width for a fraction over n trials.
double confidence_halfwidth(double p, std::size_t n);

struct MetricRow {
  std::string metric;
  double value = 0.0;
  double stderr_ = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash);

}  // namespace robfeat

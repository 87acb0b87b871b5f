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
#include <optional>
#include <string>
#include <vector>

#include "robfeat/attack_config.hpp"
#include "robfeat/dataset.hpp"
#include "robfeat/model.hpp"

namespace robfeat {

struct AttackStats {
  std::uint32_t zero_grad_steps = 0;
};

/// l2 PGD from the clean input. For untargeted attacks `label` is the true
/// class; for targeted attacks it is the target class.
Vec pgd_l2(const Model& m, std::span<const double> x, std::uint32_t label, const AttackConfig& cfg,
           RngStream& rng, AttackStats* stats = nullptr);

struct AttackRecord {
  std::size_t index = 0;
  std::uint32_t clean_label = 0;
  std::uint32_t adv_label = 0;
  double l2_dist = 0.0;
  bool success = false;
};

/// Attacks every row. Targeted mode reads per-row targets from `targets`.
/// Success means a prediction change (untargeted) or a hit on the target.
std::vector<AttackRecord> attack_dataset(const Model& m, const LabeledDataset& ds,
                                         const AttackConfig& cfg, std::uint64_t seed,
                                         unsigned threads,
                                         const std::vector<std::uint32_t>* targets = nullptr,
                                         std::vector<Vec>* adversarial = nullptr);

double robust_accuracy(const Model& m, const LabeledDataset& ds, const AttackConfig& cfg,
                       std::uint64_t seed = 0, unsigned threads = 1);

/// Robust accuracy for each step count in an ascending grid (independent runs).
std::vector<double> accuracy_vs_steps(const Model& m, const LabeledDataset& ds,
                                      const AttackConfig& cfg,
                                      const std::vector<std::uint32_t>& step_grid,
                                      std::uint64_t seed = 0, unsigned threads = 1);

void write_attack_csv(const std::string& path, const std::vector<AttackRecord>& rows);

}  // namespace robfeat

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
#include <string>

#include "robfeat/attack.hpp"
#include "robfeat/dataset.hpp"
#include "robfeat/model.hpp"

namespace robfeat {

enum class SeedMode { kRandomImage, kNoise };
enum class RelabelMode { kRandom, kDeterministic };

const char* seed_mode_name(SeedMode m);
const char* relabel_mode_name(RelabelMode m);

struct DistillConfig {
  /// Budget for image-seeded runs; noise-seeded runs use ten times as many.
  std::uint32_t steps = 1000;
  double step_size = 0.1;
  SeedMode seed_mode = SeedMode::kRandomImage;
  std::uint64_t seed = 0;
  /// Clip iterates to [0,1] each step.
  bool clip01 = false;

  void validate() const;
  std::uint32_t effective_steps() const;
  Json to_json() const;
};

struct InversionResult {
  Vec x;
  double initial_objective = 0.0;
  double objective = 0.0;
};

/// Normalized gradient descent on ||g(x_r) - g(x_target)||_2 from x_init.
/// Returns the best iterate seen, so the objective never exceeds its start.
InversionResult invert_representation(const Model& m, std::span<const double> x_target,
                                      std::span<const double> x_init, const DistillConfig& cfg);

struct DistillStats {
  double mean_initial_objective = 0.0;
  double mean_final_objective = 0.0;
  double attack_success = 0.0;
};

LabeledDataset build_robust_dataset(const LabeledDataset& ds, const Model& m,
                                    const DistillConfig& cfg, unsigned threads = 1,
                                    DistillStats* stats = nullptr);

/// Targeted PGD toward t(y) per row; rows are emitted as (x_adv, t).
LabeledDataset build_nonrobust_dataset(const LabeledDataset& ds, const Model& m,
                                       const AttackConfig& atk, RelabelMode mode,
                                       std::uint64_t seed, unsigned threads = 1,
                                       DistillStats* stats = nullptr);

inline std::uint32_t plus_one_label(std::uint32_t y, std::size_t num_classes) {
  return static_cast<std::uint32_t>((y + 1) % num_classes);
}

}  // namespace robfeat

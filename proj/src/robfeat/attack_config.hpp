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

namespace robfeat {

enum class AttackMode { kUntargeted, kTargeted };
enum class AttackLoss { kCrossEntropy, kMargin };

struct AttackConfig {
  double epsilon = 0.5;
  double step_size = 0.1;
  std::uint32_t steps = 7;
  AttackMode mode = AttackMode::kUntargeted;
  AttackLoss loss = AttackLoss::kCrossEntropy;
  bool clip01 = false;
  bool random_start = false;

  void validate() const;
  /// 7 steps of size epsilon / 5.
  static AttackConfig training_default(double epsilon);
};

}  // namespace robfeat

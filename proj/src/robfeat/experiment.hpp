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
#include <utility>
#include <vector>

#include "robfeat/attack.hpp"
#include "robfeat/dataset.hpp"
#include "robfeat/distill.hpp"
#include "robfeat/model.hpp"

namespace robfeat {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;  // 0 selects the hardware concurrency
};

struct RunResult {
  /// 0 when every requested check passed, 1 when a check failed.
  int exit_code = 0;
  Json report;
  /// Wall-clock seconds per pipeline stage. Kept out of the report so reruns
  /// stay byte-identical.
  std::vector<std::pair<std::string, double>> stage_seconds;
};

/// Loads, validates and runs one subcommand. Configuration problems raise
/// Error with ErrorCode::kConfig before any compute starts.
RunResult run_command(const RunOptions& opts);

/// Parses a JSON config file and validates it against the command's schema.
Json load_config(const std::string& path, const std::string& command);

TrainConfig train_config_from_json(const Json& j, const TrainConfig& defaults = {});
AttackConfig attack_config_from_json(const Json& j, const AttackConfig& defaults = {});
DistillConfig distill_config_from_json(const Json& j, const DistillConfig& defaults = {});
Json attack_config_to_json(const AttackConfig& c);
Json train_config_to_json(const TrainConfig& c);

/// Seed for a named stage derived from the global seed.
std::uint64_t derive_seed(std::uint64_t global, const std::string& tag);

Json run_theory(const Json& cfg, std::uint64_t seed, unsigned threads);
Json run_pipeline(const Json& cfg, const std::string& base_dir, const std::string& out_dir,
                  std::uint64_t seed, unsigned threads,
                  std::vector<std::pair<std::string, double>>* stage_seconds = nullptr);

}  // namespace robfeat

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
#include <vector>

#include <json.hpp>

#include "robfeat/numerics.hpp"

namespace robfeat {

using Json = nlohmann::json;

/// N x d inputs (row-major) with labels in [0, C) and a provenance manifest.
/// Binary tasks store label 1 for y = +1 and label 0 for y = -1.
struct LabeledDataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t num_classes = 0;
  bool image_like = false;
  Vec inputs;
  std::vector<std::uint32_t> labels;
  Json manifest = Json::object();

  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * d, d}; }
  std::span<double> row(std::size_t i) { return {inputs.data() + i * d, d}; }
  Vec row_vec(std::size_t i) const { return Vec(row(i).begin(), row(i).end()); }
  void push(std::span<const double> x, std::uint32_t label);
  void validate() const;
  /// Hash of shape, inputs and labels (the manifest is excluded).
  std::string content_hash() const;
};

inline int signed_label(std::uint32_t label) { return label == 1 ? 1 : -1; }
inline std::uint32_t class_label(int y) { return y > 0 ? 1u : 0u; }

LabeledDataset empty_like(const LabeledDataset& ds);
LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& idx);
/// Deterministic shuffled split; the first `n_train` permuted rows go to train.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, std::size_t n_train,
                                                std::uint64_t seed);
/// Rows whose label is in `classes`, relabeled to their position in `classes`.
LabeledDataset select_classes(const LabeledDataset& ds, const std::vector<std::uint32_t>& classes);
std::vector<std::size_t> class_counts(const LabeledDataset& ds);
/// Per-coordinate min and max over all rows.
std::pair<Vec, Vec> coordinate_range(const LabeledDataset& ds);

enum class SyntheticKind { kTwoGaussian, kRobustnessVsAccuracy };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kTwoGaussian;
  std::size_t dim = 2;
  std::size_t n = 1000;
  Vec mu_star;
  Vec sigma_star;
  double epsilon_design = 0.5;
  std::uint64_t seed = 0;
  // Robustness-vs-accuracy task: non-robust block of `nonrobust_dims`
  // coordinates, each y * nonrobust_scale + N(0, nonrobust_noise^2). The
  // defaults (1 coordinate, scale epsilon/2, no noise) give the plain 2D task.
  std::size_t nonrobust_dims = 1;
  double nonrobust_scale = -1.0;  // negative selects epsilon_design / 2
  double nonrobust_noise = 0.0;
};

LabeledDataset gen_two_gaussian(const SyntheticSpec& spec);
LabeledDataset gen_robustness_vs_accuracy(const SyntheticSpec& spec);
Json spec_to_json(const SyntheticSpec& spec);

struct IdxTensor {
  std::uint8_t type = 0x08;
  std::vector<std::uint32_t> dims;
  Vec data;  // uint8 payloads are scaled to [0, 1]
  std::size_t count() const;
};

IdxTensor load_idx(const std::string& path);
/// Writes uint8 (values are data * 255 rounded) or float32 payloads.
void save_idx(const std::string& path, const IdxTensor& t);
/// Images (N x ...) + labels (N) into an image-like dataset.
LabeledDataset load_idx_dataset(const std::string& images, const std::string& labels);

void save_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& path);

}  // namespace robfeat

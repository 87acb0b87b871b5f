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
#include "robfeat/numerics.hpp"

namespace robfeat {

enum class Arch : std::uint32_t {
  kLinear = 0,
  kMlp32 = 1,
  kMlp64x64 = 2,
  kMlp128 = 3,
  kMlp64x64Tanh = 4,
};

const char* arch_name(Arch a);
Arch parse_arch(const std::string& name);
std::vector<Arch> all_archs();
std::vector<std::size_t> arch_hidden(Arch a);

struct Layer {
  std::size_t out = 0;
  std::size_t in = 0;
  Vec w;  // out x in, row-major
  Vec b;
};

/// Input standardization (x - shift) * scale followed by an affine/activation
/// chain. The last layer is linear and produces one logit per class.
struct Model {
  Arch arch = Arch::kLinear;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  Vec input_shift;
  Vec input_scale;
  std::vector<Layer> layers;
  std::vector<double> loss_curve;  // not serialized

  std::size_t representation_dim() const;
  std::size_t parameter_count() const;
  void validate() const;
  /// Hash of the serialized checkpoint bytes.
  std::string hash() const;
};

Model init_model(Arch arch, std::size_t input_dim, std::size_t num_classes, std::uint64_t seed);

Vec forward(const Model& m, std::span<const double> x);
Vec representation(const Model& m, std::span<const double> x);
Vec softmax(std::span<const double> logits);
int predict(const Model& m, std::span<const double> x);

double cross_entropy(std::span<const double> logits, std::uint32_t label);
/// CW margin max(Z_y - max_{j != y} Z_j, -kappa).
double margin_loss(std::span<const double> logits, std::uint32_t label, double kappa = 0.0);

enum class LossId { kCrossEntropy, kMargin };

double loss_value(const Model& m, std::span<const double> x, LossId loss, std::uint32_t label);
/// Gradient of the loss with respect to the input by reverse-mode accumulation.
Vec grad_input(const Model& m, std::span<const double> x, LossId loss, std::uint32_t label);
/// Gradient of <dlogits, forward(x)> with respect to x.
Vec input_vjp(const Model& m, std::span<const double> x, std::span<const double> dlogits);
/// Gradient of <drep, representation(x)> with respect to x.
Vec representation_vjp(const Model& m, std::span<const double> x, std::span<const double> drep);

/// Parameters flattened layer by layer as [W, b].
Vec flatten_params(const Model& m);
void unflatten_params(Model& m, std::span<const double> p);
/// Cross-entropy gradient with respect to flatten_params order.
Vec grad_params(const Model& m, std::span<const double> x, std::uint32_t label);

struct TrainConfig {
  double lr = 0.05;
  std::uint32_t epochs = 30;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double momentum = 0.9;
  bool normalize_inputs = false;
  std::optional<AttackConfig> attack;
  unsigned threads = 1;

  void validate(std::size_t dataset_size) const;
};

Model train(const LabeledDataset& ds, Arch arch, const TrainConfig& cfg);

double accuracy(const Model& m, const LabeledDataset& ds, unsigned threads = 1);

void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);
std::vector<unsigned char> serialize_model(const Model& m);

}  // namespace robfeat

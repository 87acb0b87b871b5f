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

#include "robfeat/attack.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "robfeat/parallel.hpp"

namespace robfeat {

void AttackConfig::validate() const {
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::kInvalidArgument,
          "attack: epsilon must be > 0");
  require(step_size >= 0.0 && std::isfinite(step_size), ErrorCode::kInvalidArgument,
          "attack: step_size must be >= 0");
  require(steps >= 1, ErrorCode::kInvalidArgument, "attack: steps must be >= 1");
}

AttackConfig AttackConfig::training_default(double epsilon) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = epsilon / 5.0;
  c.steps = 7;
  return c;
}

namespace {

// Gradient of the ascent objective with respect to the logits.
Vec objective_dlogits(const Vec& z, std::uint32_t label, const AttackConfig& cfg) {
  const std::size_t c = z.size();
  require(label < c, ErrorCode::kInvalidArgument, "attack: label out of range");
  const bool targeted = cfg.mode == AttackMode::kTargeted;
  Vec g(c, 0.0);
  if (cfg.loss == AttackLoss::kCrossEntropy) {
    g = softmax(z);
    g[label] -= 1.0;
    if (targeted) {
      for (double& v : g) v = -v;
    }
    return g;
  }
  std::size_t best = c;
  for (std::size_t j = 0; j < c; ++j) {
    if (j != label && (best == c || z[j] > z[best])) best = j;
  }
  if (best == c) return g;
  // Untargeted: push Z_y below the runner-up; targeted: lift Z_t above it.
  // The kappa = 0 clamp zeroes the gradient once the goal is reached.
  const double gap = z[label] - z[best];
  if (!targeted && gap > 0.0) {
    g[label] = -1.0;
    g[best] = 1.0;
  } else if (targeted && gap < 0.0) {
    g[label] = 1.0;
    g[best] = -1.0;
  }
  return g;
}

}  // namespace

Vec pgd_l2(const Model& m, std::span<const double> x, std::uint32_t label, const AttackConfig& cfg,
           RngStream& rng, AttackStats* stats) {
  cfg.validate();
  require_same_dim(x.size(), m.input_dim, "pgd_l2");
  if (cfg.clip01) {
    for (double v : x) {
      require(v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument, "pgd_l2: input outside [0,1]");
    }
  }
  const Vec x0(x.begin(), x.end());
  Vec cur = x0;
  if (cfg.random_start) {
    Vec dir(x.size());
    for (double& v : dir) v = rng.normal();
    const double n = norm2(dir);
    const double r = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
    if (n > 0.0) axpy(r / n, dir, cur);
    cur = l2_project(cur, x0, cfg.epsilon);
    if (cfg.clip01) clip(cur, 0.0, 1.0);
  }
  for (std::uint32_t s = 0; s < cfg.steps; ++s) {
    const Vec z = forward(m, cur);
    const Vec g = input_vjp(m, cur, objective_dlogits(z, label, cfg));
    const double n = norm2(g);
    if (!(n > 0.0) || !std::isfinite(n)) {
      if (stats != nullptr) ++stats->zero_grad_steps;
      continue;
    }
    axpy(cfg.step_size / n, g, cur);
    cur = l2_project(cur, x0, cfg.epsilon);
    if (cfg.clip01) clip(cur, 0.0, 1.0);
  }
  return cur;
}

std::vector<AttackRecord> attack_dataset(const Model& m, const LabeledDataset& ds,
                                         const AttackConfig& cfg, std::uint64_t seed,
                                         unsigned threads,
                                         const std::vector<std::uint32_t>* targets,
                                         std::vector<Vec>* adversarial) {
  ds.validate();
  cfg.validate();
  const bool targeted = cfg.mode == AttackMode::kTargeted;
  require(!targeted || (targets != nullptr && targets->size() == ds.n),
          ErrorCode::kInvalidArgument, "attack_dataset: targeted mode needs one target per row");
  std::vector<AttackRecord> rows(ds.n);
  if (adversarial != nullptr) adversarial->assign(ds.n, Vec());
  const RngStream base(seed, 0x61746bULL);
  parallel_for(ds.n, threads, [&](std::size_t i) {
    RngStream rng = base.fork(i);
    const std::uint32_t goal = targeted ? (*targets)[i] : ds.labels[i];
    Vec adv = pgd_l2(m, ds.row(i), goal, cfg, rng);
    AttackRecord r;
    r.index = i;
    r.clean_label = ds.labels[i];
    r.adv_label = static_cast<std::uint32_t>(predict(m, adv));
    r.l2_dist = distance2(adv, ds.row(i));
    r.success = targeted ? r.adv_label == goal : r.adv_label != ds.labels[i];
    rows[i] = r;
    if (adversarial != nullptr) (*adversarial)[i] = std::move(adv);
  });
  return rows;
}

double robust_accuracy(const Model& m, const LabeledDataset& ds, const AttackConfig& cfg,
                       std::uint64_t seed, unsigned threads) {
  AttackConfig c = cfg;
  c.mode = AttackMode::kUntargeted;
  const auto rows = attack_dataset(m, ds, c, seed, threads);
  std::size_t ok = 0;
  for (const auto& r : rows) ok += r.adv_label == r.clean_label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

std::vector<double> accuracy_vs_steps(const Model& m, const LabeledDataset& ds,
                                      const AttackConfig& cfg,
                                      const std::vector<std::uint32_t>& step_grid,
                                      std::uint64_t seed, unsigned threads) {
  require(!step_grid.empty(), ErrorCode::kInvalidArgument, "accuracy_vs_steps: empty grid");
  for (std::size_t i = 1; i < step_grid.size(); ++i) {
    require(step_grid[i] > step_grid[i - 1], ErrorCode::kInvalidArgument,
            "accuracy_vs_steps: step grid must be ascending");
  }
  std::vector<double> curve;
  for (auto steps : step_grid) {
    AttackConfig c = cfg;
    c.steps = steps;
    curve.push_back(robust_accuracy(m, ds, c, seed, threads));
  }
  return curve;
}

void write_attack_csv(const std::string& path, const std::vector<AttackRecord>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << "sample_index,clean_label,adv_label,l2_dist,success\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.index << ',' << r.clean_label << ',' << r.adv_label << ',' << r.l2_dist << ','
        << (r.success ? 1 : 0) << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write error on " + path);
}

}  // namespace robfeat

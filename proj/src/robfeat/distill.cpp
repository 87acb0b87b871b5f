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

#include "robfeat/distill.hpp"

#include <algorithm>
#include <cmath>

#include "robfeat/parallel.hpp"

namespace robfeat {

const char* seed_mode_name(SeedMode m) {
  return m == SeedMode::kNoise ? "noise" : "random-image";
}

const char* relabel_mode_name(RelabelMode m) {
  return m == RelabelMode::kDeterministic ? "deterministic" : "random";
}

void DistillConfig::validate() const {
  require(steps >= 1, ErrorCode::kInvalidArgument, "distill: steps must be >= 1");
  require(step_size > 0.0 && std::isfinite(step_size), ErrorCode::kInvalidArgument,
          "distill: step_size must be > 0");
}

std::uint32_t DistillConfig::effective_steps() const {
  return seed_mode == SeedMode::kNoise ? steps * 10 : steps;
}

Json DistillConfig::to_json() const {
  return {{"steps", steps},
          {"effective_steps", effective_steps()},
          {"step_size", step_size},
          {"seed_mode", seed_mode_name(seed_mode)},
          {"seed", seed},
          {"clip01", clip01}};
}

InversionResult invert_representation(const Model& m, std::span<const double> x_target,
                                      std::span<const double> x_init, const DistillConfig& cfg) {
  cfg.validate();
  require_same_dim(x_target.size(), m.input_dim, "invert_representation target");
  require_same_dim(x_init.size(), m.input_dim, "invert_representation init");
  const Vec goal = representation(m, x_target);
  auto objective = [&](const Vec& x) {
    const double v = distance2(representation(m, x), goal);
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "invert_representation: non-finite objective");
    return v;
  };

  InversionResult res;
  Vec cur(x_init.begin(), x_init.end());
  if (cfg.clip01) clip(cur, 0.0, 1.0);
  res.initial_objective = objective(cur);
  res.x = cur;
  res.objective = res.initial_objective;
  const std::uint32_t steps = cfg.effective_steps();
  for (std::uint32_t s = 0; s < steps && res.objective > 0.0; ++s) {
    const Vec r = sub(representation(m, cur), goal);
    const double rn = norm2(r);
    if (!(rn > 0.0)) break;
    const Vec g = representation_vjp(m, cur, scaled(r, 1.0 / rn));
    const double gn = norm2(g);
    if (!(gn > 0.0) || !std::isfinite(gn)) break;
    axpy(-cfg.step_size / gn, g, cur);
    if (cfg.clip01) clip(cur, 0.0, 1.0);
    const double obj = objective(cur);
    if (obj < res.objective) {
      res.objective = obj;
      res.x = cur;
    }
  }
  return res;
}

LabeledDataset build_robust_dataset(const LabeledDataset& ds, const Model& m,
                                    const DistillConfig& cfg, unsigned threads,
                                    DistillStats* stats) {
  ds.validate();
  cfg.validate();
  require_same_dim(ds.d, m.input_dim, "build_robust_dataset");
  DistillConfig run_cfg = cfg;
  run_cfg.clip01 = cfg.clip01 || ds.image_like;
  double lo = 0.0;
  double hi = 1.0;
  if (!ds.image_like) {
    lo = *std::min_element(ds.inputs.begin(), ds.inputs.end());
    hi = *std::max_element(ds.inputs.begin(), ds.inputs.end());
  }
  std::vector<Vec> out(ds.n);
  std::vector<double> init_obj(ds.n), final_obj(ds.n);
  const RngStream base(cfg.seed, 0x64526f62ULL);
  parallel_for(ds.n, threads, [&](std::size_t i) {
    RngStream rng = base.fork(i);
    // The seed point never looks at row i's label.
    Vec init(ds.d);
    if (cfg.seed_mode == SeedMode::kRandomImage) {
      const auto src = ds.row(rng.below(ds.n));
      init.assign(src.begin(), src.end());
    } else {
      for (double& v : init) v = rng.uniform(lo, hi);
    }
    try {
      auto r = invert_representation(m, ds.row(i), init, run_cfg);
      init_obj[i] = r.initial_objective;
      final_obj[i] = r.objective;
      out[i] = std::move(r.x);
    } catch (const Error& e) {
      fail(e.code(), "build_robust_dataset: sample " + std::to_string(i) + ": " + e.what());
    }
  });
  LabeledDataset res = empty_like(ds);
  for (std::size_t i = 0; i < ds.n; ++i) res.push(out[i], ds.labels[i]);
  double mi = 0.0, mf = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    mi += init_obj[i];
    mf += final_obj[i];
  }
  mi /= static_cast<double>(ds.n);
  mf /= static_cast<double>(ds.n);
  res.manifest = {{"op", "robustify"},
                  {"source_dataset", ds.content_hash()},
                  {"source_model", m.hash()},
                  {"source_arch", arch_name(m.arch)},
                  {"config", run_cfg.to_json()},
                  {"mean_initial_objective", mi},
                  {"mean_final_objective", mf}};
  if (stats != nullptr) {
    stats->mean_initial_objective = mi;
    stats->mean_final_objective = mf;
  }
  return res;
}

LabeledDataset build_nonrobust_dataset(const LabeledDataset& ds, const Model& m,
                                       const AttackConfig& atk, RelabelMode mode,
                                       std::uint64_t seed, unsigned threads,
                                       DistillStats* stats) {
  ds.validate();
  require(atk.mode == AttackMode::kTargeted, ErrorCode::kInvalidArgument,
          "build_nonrobust_dataset: attack must be targeted");
  require_same_dim(ds.d, m.input_dim, "build_nonrobust_dataset");
  AttackConfig cfg = atk;
  cfg.clip01 = atk.clip01 || ds.image_like;
  std::vector<std::uint32_t> targets(ds.n);
  const RngStream base(seed, 0x74617267ULL);
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (mode == RelabelMode::kDeterministic) {
      targets[i] = plus_one_label(ds.labels[i], ds.num_classes);
    } else {
      RngStream rng = base.fork(i);
      targets[i] = static_cast<std::uint32_t>(rng.below(ds.num_classes));
    }
  }
  std::vector<Vec> adv;
  const auto rows = attack_dataset(m, ds, cfg, seed, threads, &targets, &adv);
  LabeledDataset res = empty_like(ds);
  std::string bitmap(ds.n, '0');
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    res.push(adv[i], targets[i]);
    if (rows[i].success) {
      bitmap[i] = '1';
      ++hits;
    }
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(ds.n);
  res.manifest = {{"op", "nonrobust"},
                  {"relabel", relabel_mode_name(mode)},
                  {"source_dataset", ds.content_hash()},
                  {"source_model", m.hash()},
                  {"source_arch", arch_name(m.arch)},
                  {"seed", seed},
                  {"attack",
                   {{"epsilon", cfg.epsilon},
                    {"step_size", cfg.step_size},
                    {"steps", cfg.steps},
                    {"loss", cfg.loss == AttackLoss::kMargin ? "margin" : "cross-entropy"},
                    {"clip01", cfg.clip01}}},
                  {"attack_success", rate},
                  {"success_bitmap", bitmap}};
  if (stats != nullptr) stats->attack_success = rate;
  return res;
}

}  // namespace robfeat

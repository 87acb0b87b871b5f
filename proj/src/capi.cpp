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

#include <cstring>
#include <string>

#include "robfeat/attack.hpp"
#include "robfeat/experiment.hpp"
#include "robfeat/gaussian.hpp"
#include "robfeat/model.hpp"
#include "robfeat/robfeat.h"

struct rf_dataset {
  robfeat::LabeledDataset ds;
};

struct rf_model {
  robfeat::Model m;
};

namespace {

thread_local std::string g_last_error;

rf_status set_error(rf_status s, const char* msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
rf_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return RF_OK;
  } catch (const robfeat::Error& e) {
    return set_error(static_cast<rf_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(RF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(RF_ERR_INTERNAL, e.what());
  }
}

#define RF_REQUIRE_PTR(p)                                                  \
  do {                                                                     \
    if ((p) == nullptr) {                                                  \
      return set_error(RF_ERR_INVALID_ARGUMENT, #p " must not be NULL");  \
    }                                                                      \
  } while (0)

robfeat::AttackConfig to_attack(const rf_attack_options& o) {
  robfeat::AttackConfig c;
  c.epsilon = o.epsilon;
  c.step_size = o.step_size;
  c.steps = o.steps;
  c.mode = o.targeted ? robfeat::AttackMode::kTargeted : robfeat::AttackMode::kUntargeted;
  c.loss = o.margin_loss ? robfeat::AttackLoss::kMargin : robfeat::AttackLoss::kCrossEntropy;
  c.clip01 = o.clip01 != 0;
  c.random_start = o.random_start != 0;
  return c;
}

robfeat::GaussianParams make_params(size_t d, const double* mu, const double* sigma) {
  return {robfeat::Vec(mu, mu + d), robfeat::DiagMat(robfeat::Vec(sigma, sigma + d))};
}

}  // namespace

extern "C" {

const char* rf_last_error(void) { return g_last_error.c_str(); }

const char* rf_status_name(rf_status s) {
  return robfeat::error_code_name(static_cast<robfeat::ErrorCode>(s));
}

const char* rf_version(void) { return robfeat::kVersion; }

rf_status rf_run_command(const char* command, const char* config_path, const char* out_dir,
                         int has_seed, uint64_t seed_override, unsigned threads, int* exit_code) {
  RF_REQUIRE_PTR(command);
  RF_REQUIRE_PTR(config_path);
  RF_REQUIRE_PTR(exit_code);
  return guarded([&] {
    robfeat::RunOptions o;
    o.command = command;
    o.config_path = config_path;
    if (out_dir != nullptr) o.out_dir = out_dir;
    if (has_seed) o.seed = seed_override;
    o.threads = threads;
    *exit_code = robfeat::run_command(o).exit_code;
  });
}

rf_status rf_dataset_load(const char* path, rf_dataset** out) {
  RF_REQUIRE_PTR(path);
  RF_REQUIRE_PTR(out);
  return guarded([&] { *out = new rf_dataset{robfeat::load_dataset(path)}; });
}

rf_status rf_dataset_load_idx(const char* images, const char* labels, rf_dataset** out) {
  RF_REQUIRE_PTR(images);
  RF_REQUIRE_PTR(labels);
  RF_REQUIRE_PTR(out);
  return guarded([&] { *out = new rf_dataset{robfeat::load_idx_dataset(images, labels)}; });
}

rf_status rf_dataset_create(size_t n, size_t d, uint32_t num_classes, const double* inputs,
                            const uint32_t* labels, rf_dataset** out) {
  RF_REQUIRE_PTR(inputs);
  RF_REQUIRE_PTR(labels);
  RF_REQUIRE_PTR(out);
  return guarded([&] {
    robfeat::LabeledDataset ds;
    ds.n = n;
    ds.d = d;
    ds.num_classes = num_classes;
    ds.inputs.assign(inputs, inputs + n * d);
    ds.labels.assign(labels, labels + n);
    ds.validate();
    *out = new rf_dataset{std::move(ds)};
  });
}

rf_status rf_dataset_save(const rf_dataset* ds, const char* path) {
  RF_REQUIRE_PTR(ds);
  RF_REQUIRE_PTR(path);
  return guarded([&] { robfeat::save_dataset(path, ds->ds); });
}

rf_status rf_dataset_shape(const rf_dataset* ds, size_t* n, size_t* d, uint32_t* num_classes) {
  RF_REQUIRE_PTR(ds);
  if (n) *n = ds->ds.n;
  if (d) *d = ds->ds.d;
  if (num_classes) *num_classes = static_cast<uint32_t>(ds->ds.num_classes);
  return RF_OK;
}

rf_status rf_dataset_row(const rf_dataset* ds, size_t i, double* x, uint32_t* label) {
  RF_REQUIRE_PTR(ds);
  if (i >= ds->ds.n) return set_error(RF_ERR_INVALID_ARGUMENT, "row index out of range");
  if (x) {
    const auto r = ds->ds.row(i);
    std::memcpy(x, r.data(), r.size() * sizeof(double));
  }
  if (label) *label = ds->ds.labels[i];
  return RF_OK;
}

void rf_dataset_free(rf_dataset* ds) { delete ds; }

void rf_train_options_default(rf_train_options* opts) {
  if (opts == nullptr) return;
  const robfeat::TrainConfig t;
  const auto a = robfeat::AttackConfig::training_default(0.5);
  *opts = rf_train_options{t.lr, t.epochs, static_cast<uint32_t>(t.batch), t.seed,
                           t.weight_decay, t.momentum, 0,            0,
                           a.epsilon,      a.step_size, a.steps,     0};
}

rf_status rf_model_train(const rf_dataset* ds, const char* arch, const rf_train_options* opts,
                         rf_model** out) {
  RF_REQUIRE_PTR(ds);
  RF_REQUIRE_PTR(arch);
  RF_REQUIRE_PTR(opts);
  RF_REQUIRE_PTR(out);
  return guarded([&] {
    robfeat::TrainConfig t;
    t.lr = opts->lr;
    t.epochs = opts->epochs;
    t.batch = opts->batch;
    t.seed = opts->seed;
    t.weight_decay = opts->weight_decay;
    t.momentum = opts->momentum;
    t.normalize_inputs = opts->normalize_inputs != 0;
    t.threads = opts->threads;
    if (opts->adversarial) {
      robfeat::AttackConfig a;
      a.epsilon = opts->attack_epsilon;
      a.step_size = opts->attack_step;
      a.steps = opts->attack_steps;
      t.attack = a;
    }
    *out = new rf_model{robfeat::train(ds->ds, robfeat::parse_arch(arch), t)};
  });
}

rf_status rf_model_load(const char* path, rf_model** out) {
  RF_REQUIRE_PTR(path);
  RF_REQUIRE_PTR(out);
  return guarded([&] { *out = new rf_model{robfeat::load_model(path)}; });
}

rf_status rf_model_save(const rf_model* m, const char* path) {
  RF_REQUIRE_PTR(m);
  RF_REQUIRE_PTR(path);
  return guarded([&] { robfeat::save_model(path, m->m); });
}

rf_status rf_model_shape(const rf_model* m, size_t* input_dim, uint32_t* num_classes) {
  RF_REQUIRE_PTR(m);
  if (input_dim) *input_dim = m->m.input_dim;
  if (num_classes) *num_classes = static_cast<uint32_t>(m->m.num_classes);
  return RF_OK;
}

rf_status rf_model_forward(const rf_model* m, const double* x, double* logits) {
  RF_REQUIRE_PTR(m);
  RF_REQUIRE_PTR(x);
  RF_REQUIRE_PTR(logits);
  return guarded([&] {
    const auto z = robfeat::forward(m->m, std::span<const double>(x, m->m.input_dim));
    std::memcpy(logits, z.data(), z.size() * sizeof(double));
  });
}

rf_status rf_model_accuracy(const rf_model* m, const rf_dataset* ds, unsigned threads,
                            double* out) {
  RF_REQUIRE_PTR(m);
  RF_REQUIRE_PTR(ds);
  RF_REQUIRE_PTR(out);
  return guarded([&] { *out = robfeat::accuracy(m->m, ds->ds, threads == 0 ? 1 : threads); });
}

void rf_model_free(rf_model* m) { delete m; }

void rf_attack_options_default(rf_attack_options* opts) {
  if (opts == nullptr) return;
  const robfeat::AttackConfig a;
  *opts = rf_attack_options{a.epsilon, a.step_size, a.steps, 0, 0, 0, 0, 0};
}

rf_status rf_pgd_l2(const rf_model* m, const double* x, uint32_t label,
                    const rf_attack_options* opts, double* x_adv) {
  RF_REQUIRE_PTR(m);
  RF_REQUIRE_PTR(x);
  RF_REQUIRE_PTR(opts);
  RF_REQUIRE_PTR(x_adv);
  return guarded([&] {
    robfeat::RngStream rng(opts->seed, 0);
    const auto adv = robfeat::pgd_l2(m->m, std::span<const double>(x, m->m.input_dim), label,
                                     to_attack(*opts), rng);
    std::memcpy(x_adv, adv.data(), adv.size() * sizeof(double));
  });
}

rf_status rf_robust_accuracy(const rf_model* m, const rf_dataset* ds,
                             const rf_attack_options* opts, unsigned threads, double* out) {
  RF_REQUIRE_PTR(m);
  RF_REQUIRE_PTR(ds);
  RF_REQUIRE_PTR(opts);
  RF_REQUIRE_PTR(out);
  return guarded([&] {
    *out = robfeat::robust_accuracy(m->m, ds->ds, to_attack(*opts), opts->seed,
                                    threads == 0 ? 1 : threads);
  });
}

rf_status rf_gaussian_optimal_delta(size_t d, const double* mu, const double* sigma,
                                    const double* x, double epsilon, double* delta) {
  RF_REQUIRE_PTR(mu);
  RF_REQUIRE_PTR(sigma);
  RF_REQUIRE_PTR(x);
  RF_REQUIRE_PTR(delta);
  return guarded([&] {
    const auto p = make_params(d, mu, sigma);
    const auto r = robfeat::optimal_delta(p, std::span<const double>(x, d), epsilon);
    std::memcpy(delta, r.data(), d * sizeof(double));
  });
}

rf_status rf_gaussian_vulnerability_gap(size_t d, const double* sigma_star, double c,
                                        double* gap) {
  RF_REQUIRE_PTR(sigma_star);
  RF_REQUIRE_PTR(gap);
  return guarded([&] {
    *gap = robfeat::vulnerability_gap(robfeat::DiagMat(robfeat::Vec(sigma_star, sigma_star + d)), c);
  });
}

rf_status rf_gaussian_robust_fit(size_t d, const double* mu_star, const double* sigma_star,
                                 double epsilon, double* mu_r, double* sigma_r, double* lambda) {
  RF_REQUIRE_PTR(mu_star);
  RF_REQUIRE_PTR(sigma_star);
  RF_REQUIRE_PTR(mu_r);
  RF_REQUIRE_PTR(sigma_r);
  return guarded([&] {
    const auto r = robfeat::adversarial_mle_fit(
        std::span<const double>(mu_star, d),
        robfeat::DiagMat(robfeat::Vec(sigma_star, sigma_star + d)), epsilon);
    std::memcpy(mu_r, r.params.mu.data(), d * sizeof(double));
    std::memcpy(sigma_r, r.params.sigma.diag.data(), d * sizeof(double));
    if (lambda) *lambda = r.lambda;
  });
}

}  // extern "C"

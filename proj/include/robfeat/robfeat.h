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

#ifndef ROBFEAT_ROBFEAT_H
#define ROBFEAT_ROBFEAT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define RF_API __attribute__((visibility("default")))
#else
#define RF_API
#endif

typedef enum rf_status {
  RF_OK = 0,
  RF_ERR_INVALID_ARGUMENT = 1,
  RF_ERR_DIMENSION_MISMATCH = 2,
  RF_ERR_NONPOSITIVE_VARIANCE = 3,
  RF_ERR_NOT_CONVERGED = 4,
  RF_ERR_NON_FINITE = 5,
  RF_ERR_IO = 6,
  RF_ERR_FORMAT = 7,
  RF_ERR_CONFIG = 8,
  RF_ERR_INTERNAL = 9
} rf_status;

typedef struct rf_dataset rf_dataset;
typedef struct rf_model rf_model;

/* Message for the most recent failure on the calling thread. Never NULL. */
RF_API const char* rf_last_error(void);
RF_API const char* rf_status_name(rf_status s);
RF_API const char* rf_version(void);

/* Runs a CLI command. threads == 0 means hardware concurrency; seed_override
   is used only when has_seed is nonzero. *exit_code receives 0 (all checks
   passed) or 1 (a check failed). */
RF_API rf_status rf_run_command(const char* command, const char* config_path, const char* out_dir,
                                int has_seed, uint64_t seed_override, unsigned threads,
                                int* exit_code);

/* Datasets. */
RF_API rf_status rf_dataset_load(const char* path, rf_dataset** out);
RF_API rf_status rf_dataset_load_idx(const char* images, const char* labels, rf_dataset** out);
RF_API rf_status rf_dataset_create(size_t n, size_t d, uint32_t num_classes, const double* inputs,
                                   const uint32_t* labels, rf_dataset** out);
RF_API rf_status rf_dataset_save(const rf_dataset* ds, const char* path);
RF_API rf_status rf_dataset_shape(const rf_dataset* ds, size_t* n, size_t* d,
                                  uint32_t* num_classes);
/* Copies row i into x[d] and its label into *label (either may be NULL). */
RF_API rf_status rf_dataset_row(const rf_dataset* ds, size_t i, double* x, uint32_t* label);
RF_API void rf_dataset_free(rf_dataset* ds);

/* Models. arch is one of linear, mlp-32, mlp-64x64, mlp-128, mlp-64x64-tanh. */
typedef struct rf_train_options {
  double lr;
  uint32_t epochs;
  uint32_t batch;
  uint64_t seed;
  double weight_decay;
  double momentum;
  int normalize_inputs;
  int adversarial;       /* nonzero enables PGD adversarial training */
  double attack_epsilon; /* used when adversarial != 0 */
  double attack_step;
  uint32_t attack_steps;
  unsigned threads;
} rf_train_options;

RF_API void rf_train_options_default(rf_train_options* opts);
RF_API rf_status rf_model_train(const rf_dataset* ds, const char* arch, const rf_train_options* opts,
                                rf_model** out);
RF_API rf_status rf_model_load(const char* path, rf_model** out);
RF_API rf_status rf_model_save(const rf_model* m, const char* path);
RF_API rf_status rf_model_shape(const rf_model* m, size_t* input_dim, uint32_t* num_classes);
/* Writes num_classes logits for x[input_dim]. */
RF_API rf_status rf_model_forward(const rf_model* m, const double* x, double* logits);
RF_API rf_status rf_model_accuracy(const rf_model* m, const rf_dataset* ds, unsigned threads,
                                   double* out);
RF_API void rf_model_free(rf_model* m);

/* l2 PGD. targeted != 0 makes `label` the target class. */
typedef struct rf_attack_options {
  double epsilon;
  double step_size;
  uint32_t steps;
  int targeted;
  int margin_loss;
  int clip01;
  int random_start;
  uint64_t seed;
} rf_attack_options;

RF_API void rf_attack_options_default(rf_attack_options* opts);
RF_API rf_status rf_pgd_l2(const rf_model* m, const double* x, uint32_t label,
                           const rf_attack_options* opts, double* x_adv);
RF_API rf_status rf_robust_accuracy(const rf_model* m, const rf_dataset* ds,
                                    const rf_attack_options* opts, unsigned threads, double* out);

/* Diagonal Gaussian theory. Vectors have length d. */
RF_API rf_status rf_gaussian_optimal_delta(size_t d, const double* mu, const double* sigma,
                                           const double* x, double epsilon, double* delta);
RF_API rf_status rf_gaussian_vulnerability_gap(size_t d, const double* sigma_star, double c,
                                               double* gap);
RF_API rf_status rf_gaussian_robust_fit(size_t d, const double* mu_star, const double* sigma_star,
                                        double epsilon, double* mu_r, double* sigma_r,
                                        double* lambda);

#ifdef __cplusplus
}
#endif

#endif

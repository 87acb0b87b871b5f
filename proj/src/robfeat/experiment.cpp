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

#include "robfeat/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "robfeat/gaussian.hpp"
#include "robfeat/hash.hpp"
#include "robfeat/metrics.hpp"
#include "robfeat/schema.hpp"

namespace robfeat {

namespace fs = std::filesystem;

namespace {

struct Checks {
  Json list = Json::array();
  bool all = true;

  void add(const std::string& name, bool passed, double value, const std::string& criterion) {
    list.push_back({{"name", name}, {"passed", passed}, {"value", value}, {"criterion", criterion}});
    all = all && passed;
  }
};

void write_json(const fs::path& p, const Json& j) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::kIo, "cannot open " + p.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write error on " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) fail(ErrorCode::kIo, "cannot open " + p.string() + " for writing");
  out << s;
  if (!out) fail(ErrorCode::kIo, "write error on " + p.string());
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string resolve_path(const std::string& base_dir, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

const Json& sub_or_empty(const Json& j, const char* key) {
  static const Json empty = Json::object();
  return j.contains(key) ? j[key] : empty;
}

unsigned resolve_threads(unsigned t) {
  if (t > 0) return t;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

Json manifest(const std::string& command, const Json& cfg, std::uint64_t seed) {
  return {{"command", command},
          {"config_hash", hash_hex(cfg.dump())},
          {"version", kVersion},
          {"seed", seed}};
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t global, const std::string& tag) {
  Fnv1a h;
  h.str(tag);
  return mix64(global ^ h.value());
}

Json load_config(const std::string& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kConfig, "config " + path + " is not valid JSON: " + e.what());
  }
  validate_schema(j, command);
  return j;
}

AttackConfig attack_config_from_json(const Json& j, const AttackConfig& defaults) {
  AttackConfig c = defaults;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.steps = j.value("steps", c.steps);
  if (j.contains("step_size") && j.contains("step_fraction")) {
    fail(ErrorCode::kConfig, "config key 'step_fraction': conflicts with 'step_size'");
  }
  if (j.contains("step_size")) {
    c.step_size = j["step_size"];
  } else if (j.contains("step_fraction")) {
    c.step_size = c.epsilon * j["step_fraction"].get<double>();
  }
  if (j.contains("mode")) {
    c.mode = j["mode"] == "targeted" ? AttackMode::kTargeted : AttackMode::kUntargeted;
  }
  if (j.contains("loss")) {
    c.loss = j["loss"] == "margin" ? AttackLoss::kMargin : AttackLoss::kCrossEntropy;
  }
  c.clip01 = j.value("clip01", c.clip01);
  c.random_start = j.value("random_start", c.random_start);
  return c;
}

Json attack_config_to_json(const AttackConfig& c) {
  return {{"epsilon", c.epsilon},
          {"step_size", c.step_size},
          {"steps", c.steps},
          {"mode", c.mode == AttackMode::kTargeted ? "targeted" : "untargeted"},
          {"loss", c.loss == AttackLoss::kMargin ? "margin" : "cross-entropy"},
          {"clip01", c.clip01},
          {"random_start", c.random_start}};
}

TrainConfig train_config_from_json(const Json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.momentum = j.value("momentum", c.momentum);
  c.normalize_inputs = j.value("normalize_inputs", c.normalize_inputs);
  if (j.contains("attack")) {
    c.attack = attack_config_from_json(j["attack"], c.attack.value_or(AttackConfig{}));
  }
  return c;
}

Json train_config_to_json(const TrainConfig& c) {
  Json j = {{"lr", c.lr},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"seed", c.seed},
            {"weight_decay", c.weight_decay},
            {"momentum", c.momentum},
            {"normalize_inputs", c.normalize_inputs}};
  if (c.attack) j["attack"] = attack_config_to_json(*c.attack);
  return j;
}

DistillConfig distill_config_from_json(const Json& j, const DistillConfig& defaults) {
  DistillConfig c = defaults;
  c.steps = j.value("steps", c.steps);
  c.step_size = j.value("step_size", c.step_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("seed_mode")) {
    c.seed_mode = j["seed_mode"] == "noise" ? SeedMode::kNoise : SeedMode::kRandomImage;
  }
  return c;
}

// ---------------------------------------------------------------- theory

Json run_theory(const Json& cfg, std::uint64_t seed, unsigned threads) {
  const Vec sig = cfg["sigma_star"].get<Vec>();
  const std::size_t d = sig.size();
  const Vec mu = cfg.contains("mu_star") ? cfg["mu_star"].get<Vec>() : Vec(d, 1.0);
  if (mu.size() != d) fail(ErrorCode::kConfig, "config key 'mu_star': length differs from sigma_star");
  const Vec grid = cfg["epsilon_grid"].get<Vec>();
  const double factor = cfg.value("lagrangian_c_factor", 2.0);
  const std::uint64_t mc_n = cfg.value("monte_carlo_samples", std::uint64_t{100000});
  const Json fitj = sub_or_empty(cfg, "fit");
  RobustFitOptions opts;
  opts.step = fitj.value("step", opts.step);
  opts.grad_tol = fitj.value("grad_tol", opts.grad_tol);
  opts.max_iter = fitj.value("max_iter", opts.max_iter);

  const DiagMat S(sig);
  const GaussianParams truth{mu, S};
  Checks checks;

  const double c = factor / S.min();
  const double gap_cf = vulnerability_gap(S, c);
  const double gap_mc =
      vulnerability_gap_monte_carlo(truth, c, mc_n, derive_seed(seed, "theory-gap"), threads);
  const double gap_rel = std::abs(gap_cf - gap_mc) / std::abs(gap_cf);
  checks.add("vulnerability gap closed form vs Monte Carlo", gap_rel <= 0.02, gap_rel,
             "relative error <= 0.02");

  const AlignmentStats before = alignment_stats(S);
  Json records = Json::array();
  std::vector<std::pair<double, double>> ratios;
  for (double eps : grid) {
    const RobustFitResult r = adversarial_mle_fit(mu, S, eps, opts);
    const AlignmentStats after = alignment_stats(r.params.sigma);
    Json rec;
    rec["sigma_star"] = sig;
    rec["epsilon"] = eps;
    rec["mu_r"] = r.params.mu;
    rec["sigma_r"] = r.params.sigma.diag;
    rec["kappa_before"] = before.kappa;
    rec["kappa_after"] = after.kappa;
    rec["worst_cosine_before"] = before.worst_cosine;
    rec["worst_cosine_after"] = after.worst_cosine;
    rec["lagrangian_c"] = c;
    rec["gap_closed_form"] = gap_cf;
    rec["gap_monte_carlo"] = gap_mc;
    rec["iterations"] = r.iterations;
    std::ostringstream tag_s;
    tag_s << "eps=" << eps;
    const std::string tag = tag_s.str();
    if (eps == 0.0) {
      rec["lambda"] = nullptr;
      rec["residuals"] = Json::object();
      const bool exact = r.params.mu == mu && r.params.sigma.diag == sig;
      checks.add(tag + ": standard MLE reproduced exactly", exact, exact ? 0.0 : 1.0, "bit-equal");
    } else {
      const DiagMat cf = robust_cov_closed_form(S, r.lambda);
      const LambdaBounds b = lambda_bounds(S, r.params.sigma, eps);
      double mean_err = 0.0, cf_err = 0.0, below = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        mean_err = std::max(mean_err, std::abs(r.params.mu[i] - mu[i]));
        cf_err = std::max(cf_err, std::abs(r.params.sigma[i] - cf[i]) / cf[i]);
        below = std::max(below, sig[i] - r.params.sigma[i]);
      }
      rec["lambda"] = r.lambda;
      rec["lambda_bounds"] = {b.lower, b.upper};
      rec["residuals"] = {{"trace", r.trace_residual / (eps * eps)},
                          {"fixed_point", r.fixed_point_residual},
                          {"closed_form_relative", cf_err},
                          {"mean_abs", mean_err},
                          {"gradient_norm", r.grad_norm}};
      checks.add(tag + ": mean recovered", mean_err <= 1e-6, mean_err, "<= 1e-6");
      checks.add(tag + ": implicit covariance equation", r.fixed_point_residual <= 1e-6,
                 r.fixed_point_residual, "<= 1e-6");
      checks.add(tag + ": closed-form agreement", cf_err <= 1e-6, cf_err, "<= 1e-6 relative");
      checks.add(tag + ": lambda within explicit bounds", b.lower <= r.lambda && r.lambda <= b.upper,
                 r.lambda, "lower <= lambda <= upper");
      checks.add(tag + ": condition number not increased", after.kappa <= before.kappa * (1 + 1e-12),
                 after.kappa, "kappa_r <= kappa*");
      checks.add(tag + ": variance inflation", below <= 0.0, below, "sigma_r >= sigma* elementwise");
      ratios.emplace_back(eps, r.params.sigma.min() / S.min());
    }
    records.push_back(rec);
  }
  std::sort(ratios.begin(), ratios.end());
  bool monotone = true;
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    monotone = monotone && ratios[i].second >= ratios[i - 1].second;
  }
  checks.add("min(sigma_r)/min(sigma*) nondecreasing in epsilon", monotone, monotone ? 1.0 : 0.0,
             "monotone over grid");

  // Spread of ||M v|| around its root-mean-square budget.
  Json conc = Json::array();
  const std::vector<std::size_t> dims =
      cfg.contains("concentration_dims") ? cfg["concentration_dims"].get<std::vector<std::size_t>>()
                                         : std::vector<std::size_t>{10, 100, 1000};
  for (std::size_t dim : dims) {
    RngStream rng(derive_seed(seed, "theory-concentration"), dim);
    Vec s(dim);
    for (double& v : s) v = rng.uniform(0.5, 2.0);
    const DiagMat sc(s);
    const double lam = solve_lambda(sc, sc, 1.0);
    const DiagMat M = adversary_operator(sc, lam);
    constexpr int kDraws = 2000;
    double m1 = 0.0, m2 = 0.0;
    const Vec zero(dim, 0.0);
    for (int k = 0; k < kDraws; ++k) {
      const Vec v = sample_gaussian(rng, zero, sc);
      double q = 0.0;
      for (std::size_t i = 0; i < dim; ++i) q += M[i] * M[i] * v[i] * v[i];
      const double n = std::sqrt(q);
      m1 += n;
      m2 += n * n;
    }
    m1 /= kDraws;
    m2 /= kDraws;
    const double sd = std::sqrt(std::max(0.0, m2 - m1 * m1));
    conc.push_back({{"dim", dim},
                    {"budget", 1.0},
                    {"mean_norm", m1},
                    {"rms_norm", std::sqrt(m2)},
                    {"stdev_norm", sd},
                    {"relative_spread", sd / m1}});
  }

  Json report;
  report["records"] = records;
  report["concentration"] = conc;
  report["checks"] = checks.list;
  report["all_passed"] = checks.all;
  return report;
}

// -------------------------------------------------------------- pipeline

namespace {

double robust_acc(const Model& m, const LabeledDataset& ds, const AttackConfig& a,
                  std::uint64_t seed, unsigned threads) {
  return robust_accuracy(m, ds, a, seed, threads);
}

}  // namespace

Json run_pipeline(const Json& cfg, const std::string& base_dir, const std::string& out_dir,
                  std::uint64_t seed, unsigned threads,
                  std::vector<std::pair<std::string, double>>* stage_seconds) {
  const fs::path out(out_dir);
  Json report;
  Checks checks;
  std::vector<MetricRow> metrics;
  std::string stage;
  auto stage_start = std::chrono::steady_clock::now();
  auto close_stage = [&] {
    const auto now = std::chrono::steady_clock::now();
    if (stage_seconds != nullptr && !stage.empty()) {
      stage_seconds->emplace_back(stage, std::chrono::duration<double>(now - stage_start).count());
    }
    stage_start = now;
  };
  auto begin_stage = [&](const char* name) {
    close_stage();
    stage = name;
  };
  auto add_metric = [&](const std::string& name, double p, std::size_t n) {
    metrics.push_back({name, p, std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n))});
  };

  try {
    // ---------------- synthetic robustness-vs-accuracy task
    if (!cfg.contains("synthetic") || !cfg["synthetic"].is_null()) {
      const Json sj = sub_or_empty(cfg, "synthetic");
      begin_stage("synthetic-data");
      SyntheticSpec spec;
      spec.kind = SyntheticKind::kRobustnessVsAccuracy;
      spec.epsilon_design = sj.value("epsilon", 0.5);
      spec.nonrobust_dims = sj.value("nonrobust_dims", std::size_t{64});
      spec.nonrobust_scale = sj.value("nonrobust_scale", 0.0125);
      spec.nonrobust_noise = sj.value("nonrobust_noise", 0.03);
      spec.dim = 1 + spec.nonrobust_dims;
      spec.n = sj.value("n_train", std::size_t{2000});
      spec.seed = derive_seed(seed, "synthetic-train");
      const LabeledDataset train_ds = gen_robustness_vs_accuracy(spec);
      spec.n = sj.value("n_test", std::size_t{1000});
      spec.seed = derive_seed(seed, "synthetic-test");
      const LabeledDataset test_ds = gen_robustness_vs_accuracy(spec);
      save_dataset((out / "synthetic_train.rfd").string(), train_ds);
      save_dataset((out / "synthetic_test.rfd").string(), test_ds);

      begin_stage("synthetic-train");
      const Arch arch = parse_arch(sj.value("arch", std::string("mlp-32")));
      const Arch rearch = parse_arch(sj.value("retrain_arch", std::string("mlp-32")));
      TrainConfig base;
      base.lr = 0.05;
      base.epochs = 30;
      base.batch = 64;
      base.weight_decay = 1e-2;
      base.normalize_inputs = true;
      TrainConfig tc = train_config_from_json(sub_or_empty(sj, "train"), base);
      tc.seed = derive_seed(seed ^ tc.seed, "synthetic-erm");
      tc.threads = threads;
      TrainConfig rbase = base;
      rbase.lr = 0.02;
      rbase.attack = AttackConfig::training_default(spec.epsilon_design);
      TrainConfig rc = train_config_from_json(sub_or_empty(sj, "robust_train"), rbase);
      rc.seed = derive_seed(seed ^ rc.seed, "synthetic-robust");
      rc.threads = threads;
      if (!rc.attack) fail(ErrorCode::kConfig, "config key 'synthetic.robust_train.attack': required");
      AttackConfig ebase;
      ebase.epsilon = spec.epsilon_design;
      ebase.steps = 20;
      ebase.step_size = 0.1;
      const AttackConfig ev = attack_config_from_json(sub_or_empty(sj, "eval_attack"), ebase);
      const std::uint64_t eval_seed = derive_seed(seed, "synthetic-eval");

      const Model erm = train(train_ds, arch, tc);
      const Model rob = train(train_ds, arch, rc);
      save_model((out / "synthetic_erm.rfm").string(), erm);
      save_model((out / "synthetic_robust.rfm").string(), rob);
      const double erm_clean = accuracy(erm, test_ds, threads);
      const double erm_rob = robust_acc(erm, test_ds, ev, eval_seed, threads);
      const double rob_clean = accuracy(rob, test_ds, threads);
      const double rob_rob = robust_acc(rob, test_ds, ev, eval_seed, threads);
      const std::size_t nt = test_ds.n;
      add_metric("synthetic.erm.clean_accuracy", erm_clean, nt);
      add_metric("synthetic.erm.robust_accuracy", erm_rob, nt);
      add_metric("synthetic.robust.clean_accuracy", rob_clean, nt);
      add_metric("synthetic.robust.robust_accuracy", rob_rob, nt);
      checks.add("(a) ERM robust accuracy < 0.20", erm_rob < 0.20, erm_rob, "< 0.20");
      checks.add("(a) adversarially trained robust accuracy >= 0.95", rob_rob >= 0.95, rob_rob,
                 ">= 0.95");

      begin_stage("synthetic-accuracy-vs-steps");
      std::vector<std::uint32_t> grid = sj.contains("step_grid")
                                            ? sj["step_grid"].get<std::vector<std::uint32_t>>()
                                            : std::vector<std::uint32_t>{1, 5, 20, 100};
      AttackConfig ce = ev;
      ce.loss = AttackLoss::kCrossEntropy;
      AttackConfig mg = ev;
      mg.loss = AttackLoss::kMargin;
      const auto curve_ce = accuracy_vs_steps(rob, test_ds, ce, grid, eval_seed, threads);
      const auto curve_mg = accuracy_vs_steps(rob, test_ds, mg, grid, eval_seed, threads);
      std::string csv = "steps,cross_entropy,margin\n";
      bool mono = true;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        csv += std::to_string(grid[i]) + "," + fmt(curve_ce[i]) + "," + fmt(curve_mg[i]) + "\n";
        if (i > 0) {
          mono = mono && curve_ce[i] <= curve_ce[i - 1] + 0.005 &&
                 curve_mg[i] <= curve_mg[i - 1] + 0.005;
        }
      }
      write_text(out / "accuracy_vs_steps.csv", csv);
      checks.add("accuracy-vs-steps nonincreasing within 0.5 points", mono, mono ? 1.0 : 0.0,
                 "monotone within 0.005");
      const double loss_gap = std::abs(curve_ce.back() - curve_mg.back());
      checks.add("margin vs cross-entropy final accuracy within 2 points", loss_gap <= 0.02,
                 loss_gap, "<= 0.02");

      begin_stage("synthetic-distill");
      DistillConfig dbase;
      dbase.steps = 100;
      dbase.step_size = 0.1;
      dbase.seed_mode = SeedMode::kNoise;
      DistillConfig dc = distill_config_from_json(sub_or_empty(sj, "distill"), dbase);
      dc.seed = derive_seed(seed ^ dc.seed, "synthetic-distill");
      DistillStats st_r, st_nr;
      const LabeledDataset d_r = build_robust_dataset(train_ds, rob, dc, threads, &st_r);
      const LabeledDataset d_nr = build_robust_dataset(train_ds, erm, dc, threads, &st_nr);
      save_dataset((out / "d_robust.rfd").string(), d_r);
      save_dataset((out / "d_nonrobust.rfd").string(), d_nr);
      const double inv_r = st_r.mean_final_objective / st_r.mean_initial_objective;
      const double inv_nr = st_nr.mean_final_objective / st_nr.mean_initial_objective;
      checks.add("D_R inversion: final distance <= 10% of initial", inv_r <= 0.10, inv_r, "<= 0.10");
      checks.add("D_NR inversion: final distance <= 10% of initial", inv_nr <= 0.10, inv_nr,
                 "<= 0.10");

      begin_stage("synthetic-retrain");
      TrainConfig rt = tc;
      rt.seed = derive_seed(seed, "synthetic-retrain");
      const Model m_r = train(d_r, rearch, rt);
      const Model m_nr = train(d_nr, rearch, rt);
      save_model((out / "trained_on_d_robust.rfm").string(), m_r);
      save_model((out / "trained_on_d_nonrobust.rfm").string(), m_nr);
      const double r_clean = accuracy(m_r, test_ds, threads);
      const double r_rob = robust_acc(m_r, test_ds, ev, eval_seed, threads);
      const double nr_clean = accuracy(m_nr, test_ds, threads);
      const double nr_rob = robust_acc(m_nr, test_ds, ev, eval_seed, threads);
      add_metric("synthetic.d_robust.clean_accuracy", r_clean, nt);
      add_metric("synthetic.d_robust.robust_accuracy", r_rob, nt);
      add_metric("synthetic.d_nonrobust.clean_accuracy", nr_clean, nt);
      add_metric("synthetic.d_nonrobust.robust_accuracy", nr_rob, nt);
      checks.add("(b) D_R-trained robust accuracy >= 0.8x source robust accuracy",
                 r_rob >= 0.8 * rob_rob, r_rob, ">= " + fmt(0.8 * rob_rob));
      checks.add("(c) D_NR-trained robust accuracy < 0.05", nr_rob < 0.05, nr_rob, "< 0.05");

      report["synthetic"] = {
          {"spec", spec_to_json(spec)},
          {"arch", arch_name(arch)},
          {"retrain_arch", arch_name(rearch)},
          {"train", train_config_to_json(tc)},
          {"robust_train", train_config_to_json(rc)},
          {"eval_attack", attack_config_to_json(ev)},
          {"distill", dc.to_json()},
          {"erm", {{"clean", erm_clean}, {"robust", erm_rob}, {"loss_curve", erm.loss_curve}}},
          {"robust", {{"clean", rob_clean}, {"robust", rob_rob}, {"loss_curve", rob.loss_curve}}},
          {"d_robust",
           {{"clean", r_clean}, {"robust", r_rob}, {"inversion_ratio", inv_r}}},
          {"d_nonrobust",
           {{"clean", nr_clean}, {"robust", nr_rob}, {"inversion_ratio", inv_nr}}},
          {"accuracy_vs_steps",
           {{"steps", grid}, {"cross_entropy", curve_ce}, {"margin", curve_mg}}}};
    }

    // ---------------- digits: non-robust relabeling and transfer
    if (!cfg.contains("digits") || !cfg["digits"].is_null()) {
      const Json dj = sub_or_empty(cfg, "digits");
      begin_stage("digits-data");
      const std::string images =
          resolve_path(base_dir, dj.value("images", std::string("tests/data/digits-images.idx3-ubyte")));
      const std::string labels =
          resolve_path(base_dir, dj.value("labels", std::string("tests/data/digits-labels.idx1-ubyte")));
      LabeledDataset all = load_idx_dataset(images, labels);
      if (dj.contains("classes")) {
        all = select_classes(all, dj["classes"].get<std::vector<std::uint32_t>>());
      }
      const std::size_t n_train = dj.value("n_train", std::size_t{1400});
      if (n_train >= all.n) fail(ErrorCode::kConfig, "config key 'digits.n_train': too large");
      auto [train_ds, test_ds] = split(all, n_train, derive_seed(seed, "digits-split"));
      const double chance = 1.0 / static_cast<double>(all.num_classes);
      const std::size_t nt = test_ds.n;

      begin_stage("digits-train");
      const Arch arch = parse_arch(dj.value("arch", std::string("mlp-128")));
      TrainConfig base;
      base.lr = 0.05;
      base.epochs = 60;
      base.batch = 64;
      base.weight_decay = 5e-4;
      TrainConfig tc = train_config_from_json(sub_or_empty(dj, "train"), base);
      tc.threads = threads;
      const std::uint64_t tc_seed = tc.seed;
      tc.seed = derive_seed(seed ^ tc_seed, "digits-standard");
      TrainConfig rbase = base;
      AttackConfig ra = AttackConfig::training_default(1.5);
      ra.step_size = 0.75;
      ra.clip01 = true;
      rbase.attack = ra;
      TrainConfig rc = train_config_from_json(sub_or_empty(dj, "robust_train"), rbase);
      rc.threads = threads;
      rc.seed = derive_seed(seed ^ rc.seed, "digits-robust");
      if (!rc.attack) fail(ErrorCode::kConfig, "config key 'digits.robust_train.attack': required");
      const Model std_m = train(train_ds, arch, tc);
      const Model rob_m = train(train_ds, arch, rc);
      save_model((out / "digits_standard.rfm").string(), std_m);
      save_model((out / "digits_robust.rfm").string(), rob_m);
      const double std_acc = accuracy(std_m, test_ds, threads);
      const double rob_acc = accuracy(rob_m, test_ds, threads);
      add_metric("digits.standard.clean_accuracy", std_acc, nt);
      add_metric("digits.robust.clean_accuracy", rob_acc, nt);

      begin_stage("digits-nonrobust");
      AttackConfig cbase;
      cbase.mode = AttackMode::kTargeted;
      cbase.epsilon = 1.25;
      cbase.step_size = 0.1;
      cbase.steps = 100;
      cbase.clip01 = true;
      AttackConfig ca = attack_config_from_json(sub_or_empty(dj, "construct_attack"), cbase);
      ca.mode = AttackMode::kTargeted;
      AttackConfig cra = attack_config_from_json(sub_or_empty(dj, "robust_construct_attack"), ca);
      cra.mode = AttackMode::kTargeted;
      DistillStats s_rand, s_det, s_det_r;
      const LabeledDataset d_rand = build_nonrobust_dataset(
          train_ds, std_m, ca, RelabelMode::kRandom, derive_seed(seed, "digits-rand"), threads, &s_rand);
      const LabeledDataset d_det = build_nonrobust_dataset(
          train_ds, std_m, ca, RelabelMode::kDeterministic, derive_seed(seed, "digits-det"), threads,
          &s_det);
      const LabeledDataset d_det_r = build_nonrobust_dataset(
          train_ds, rob_m, cra, RelabelMode::kDeterministic, derive_seed(seed, "digits-det-robust"),
          threads, &s_det_r);
      save_dataset((out / "digits_rand.rfd").string(), d_rand);
      save_dataset((out / "digits_det.rfd").string(), d_det);
      save_dataset((out / "digits_det_robust_source.rfd").string(), d_det_r);

      begin_stage("digits-retrain");
      TrainConfig rt = tc;
      rt.seed = derive_seed(seed ^ tc_seed, "digits-retrain");
      const Model m_rand = train(d_rand, arch, rt);
      const Model m_det = train(d_det, arch, rt);
      const Model m_det_r = train(d_det_r, arch, rt);
      const double acc_rand = eval_accuracy(m_rand, test_ds, LabelMap::kIdentity, threads);
      const double acc_det = eval_accuracy(m_det, test_ds, LabelMap::kIdentity, threads);
      const double acc_det_r_id = eval_accuracy(m_det_r, test_ds, LabelMap::kIdentity, threads);
      const double acc_det_r_perm = eval_accuracy(m_det_r, test_ds, LabelMap::kPlusOneModC, threads);
      add_metric("digits.d_rand.test_accuracy", acc_rand, nt);
      add_metric("digits.d_det.test_accuracy", acc_det, nt);
      add_metric("digits.d_det_robust_source.identity_accuracy", acc_det_r_id, nt);
      add_metric("digits.d_det_robust_source.permuted_accuracy", acc_det_r_perm, nt);
      checks.add("(d) D_rand-trained accuracy > 3x chance", acc_rand > 3 * chance, acc_rand,
                 "> " + fmt(3 * chance));
      checks.add("(d) D_det-trained accuracy > 3x chance", acc_det > 3 * chance, acc_det,
                 "> " + fmt(3 * chance));
      checks.add("(e) robust-source D_det: permuted map > identity map",
                 acc_det_r_perm > acc_det_r_id, acc_det_r_perm - acc_det_r_id, "> 0");

      begin_stage("digits-transfer");
      std::vector<Arch> archs;
      if (dj.contains("transfer_archs")) {
        for (const auto& a : dj["transfer_archs"]) archs.push_back(parse_arch(a.get<std::string>()));
      } else {
        archs = all_archs();
      }
      AttackConfig tbase;
      tbase.epsilon = 1.0;
      tbase.step_size = 0.2;
      tbase.steps = 20;
      tbase.clip01 = true;
      const AttackConfig ta = attack_config_from_json(sub_or_empty(dj, "transfer_attack"), tbase);
      std::vector<Model> on_d, on_det;
      for (Arch a : archs) {
        TrainConfig c = tc;
        c.seed = derive_seed(seed ^ tc_seed, std::string("digits-transfer-") + arch_name(a));
        on_d.push_back(train(train_ds, a, c));
        on_det.push_back(train(d_det, a, c));
      }
      std::vector<const Model*> targets;
      for (const auto& m : on_d) targets.push_back(&m);
      const std::uint64_t tseed = derive_seed(seed, "digits-transfer-attack");
      TransferReport tr = transfer_rate(std_m, targets, test_ds, ta, true, tseed, threads);
      std::vector<double> xs, ys;
      std::string csv = "arch,relabeled_train_accuracy,transfer_rate,targeted_success,clean_accuracy\n";
      for (std::size_t i = 0; i < archs.size(); ++i) {
        auto& e = tr.entries[i];
        e.relabeled_train_accuracy = eval_accuracy(on_det[i], test_ds, LabelMap::kIdentity, threads);
        xs.push_back(e.relabeled_train_accuracy);
        ys.push_back(e.transfer_rate);
        csv += e.name + "," + fmt(e.relabeled_train_accuracy) + "," + fmt(e.transfer_rate) + "," +
               fmt(e.targeted_success) + "," + fmt(e.clean_accuracy) + "\n";
      }
      write_text(out / "transfer.csv", csv);
      const double rho = spearman(xs, ys);
      const TransferReport self = transfer_rate(std_m, {&std_m}, test_ds, ta, false, tseed, threads);
      const double self_rate = self.entries.front().transfer_rate;
      checks.add("transfer: Spearman(D_det accuracy, transfer rate) > 0", rho > 0.0, rho, "> 0");
      checks.add("transfer: self-transfer rate == 1", self_rate == 1.0, self_rate, "== 1.0");

      report["digits"] = {
          {"num_classes", all.num_classes},
          {"n_train", train_ds.n},
          {"n_test", test_ds.n},
          {"arch", arch_name(arch)},
          {"train", train_config_to_json(tc)},
          {"robust_train", train_config_to_json(rc)},
          {"construct_attack", attack_config_to_json(ca)},
          {"robust_construct_attack", attack_config_to_json(cra)},
          {"standard_accuracy", std_acc},
          {"robust_model_accuracy", rob_acc},
          {"attack_success", {{"rand", s_rand.attack_success},
                              {"det", s_det.attack_success},
                              {"det_robust_source", s_det_r.attack_success}}},
          {"d_rand_accuracy", acc_rand},
          {"d_det_accuracy", acc_det},
          {"d_det_robust_source", {{"identity", acc_det_r_id}, {"permuted", acc_det_r_perm}}},
          {"transfer", tr.to_json()},
          {"transfer_attack", attack_config_to_json(ta)},
          {"spearman", rho},
          {"self_transfer", self_rate}};
    }
  } catch (const Error& e) {
    close_stage();
    report["failed_stage"] = stage;
    report["error"] = e.what();
    report["checks"] = checks.list;
    report["all_passed"] = false;
    write_json(out / "pipeline_report.json", report);
    fail(e.code(), "pipeline stage '" + stage + "' failed: " + e.what());
  }

  close_stage();
  report["checks"] = checks.list;
  report["all_passed"] = checks.all;
  write_metrics_csv((out / "metrics.csv").string(), metrics, hash_hex(cfg.dump()));
  return report;
}

// ------------------------------------------------------------ dispatcher

namespace {

std::string output_path(const Json& cfg, const fs::path& out, const std::string& fallback) {
  const std::string name = cfg.value("output", fallback);
  const fs::path p(name);
  return p.is_absolute() ? name : (out / p).string();
}

Json cmd_gen_data(const Json& cfg, const std::string& base, const fs::path& out,
                  std::uint64_t seed) {
  const std::string kind = cfg["kind"];
  LabeledDataset ds;
  if (kind == "idx") {
    if (!cfg.contains("images") || !cfg.contains("labels")) {
      fail(ErrorCode::kConfig, "config key 'images': idx kind needs images and labels");
    }
    ds = load_idx_dataset(resolve_path(base, cfg["images"]), resolve_path(base, cfg["labels"]));
    if (cfg.contains("classes")) {
      ds = select_classes(ds, cfg["classes"].get<std::vector<std::uint32_t>>());
    }
  } else {
    SyntheticSpec spec;
    spec.n = cfg.value("n", std::size_t{1000});
    spec.seed = seed;
    if (kind == "two-gaussian") {
      spec.kind = SyntheticKind::kTwoGaussian;
      spec.sigma_star = cfg.contains("sigma_star") ? cfg["sigma_star"].get<Vec>() : Vec{1.0, 1.0};
      spec.mu_star = cfg.contains("mu_star") ? cfg["mu_star"].get<Vec>() : Vec(spec.sigma_star.size(), 1.0);
      spec.dim = spec.mu_star.size();
      ds = gen_two_gaussian(spec);
    } else {
      spec.kind = SyntheticKind::kRobustnessVsAccuracy;
      spec.epsilon_design = cfg.value("epsilon", 0.5);
      spec.nonrobust_dims = cfg.value("nonrobust_dims", std::size_t{1});
      spec.nonrobust_scale = cfg.value("nonrobust_scale", -1.0);
      spec.nonrobust_noise = cfg.value("nonrobust_noise", 0.0);
      spec.dim = 1 + spec.nonrobust_dims;
      ds = gen_robustness_vs_accuracy(spec);
    }
  }
  const std::string path = output_path(cfg, out, "dataset.rfd");
  save_dataset(path, ds);
  return {{"output", path}, {"n", ds.n}, {"d", ds.d}, {"num_classes", ds.num_classes},
          {"content_hash", ds.content_hash()}};
}

Json cmd_train(const Json& cfg, const std::string& base, const fs::path& out, std::uint64_t seed,
               unsigned threads) {
  const LabeledDataset ds = load_dataset(resolve_path(base, cfg["dataset"]));
  TrainConfig tc = train_config_from_json(sub_or_empty(cfg, "train"));
  if (!sub_or_empty(cfg, "train").contains("seed")) tc.seed = seed;
  tc.threads = threads;
  const Model m = train(ds, parse_arch(cfg["arch"]), tc);
  const std::string path = output_path(cfg, out, "model.rfm");
  save_model(path, m);
  return {{"output", path},
          {"arch", arch_name(m.arch)},
          {"train", train_config_to_json(tc)},
          {"train_accuracy", accuracy(m, ds, threads)},
          {"loss_curve", m.loss_curve},
          {"model_hash", m.hash()},
          {"dataset_hash", ds.content_hash()}};
}

Json cmd_attack(const Json& cfg, const std::string& base, const fs::path& out, std::uint64_t seed,
                unsigned threads) {
  const Model m = load_model(resolve_path(base, cfg["model"]));
  const LabeledDataset ds = load_dataset(resolve_path(base, cfg["dataset"]));
  const AttackConfig a = attack_config_from_json(cfg["attack"]);
  std::vector<std::uint32_t> targets;
  if (a.mode == AttackMode::kTargeted) {
    for (auto y : ds.labels) targets.push_back(plus_one_label(y, ds.num_classes));
  }
  const auto rows = attack_dataset(m, ds, a, seed, threads,
                                   a.mode == AttackMode::kTargeted ? &targets : nullptr);
  const std::string path = output_path(cfg, out, "attacks.csv");
  write_attack_csv(path, rows);
  std::size_t succ = 0;
  for (const auto& r : rows) succ += r.success ? 1 : 0;
  const double rate = static_cast<double>(succ) / static_cast<double>(rows.size());
  return {{"output", path},
          {"attack", attack_config_to_json(a)},
          {"success_rate", rate},
          {"success_halfwidth", confidence_halfwidth(rate, rows.size())}};
}

Json cmd_distill(const Json& cfg, const std::string& base, const fs::path& out, std::uint64_t seed,
                 unsigned threads) {
  const Model m = load_model(resolve_path(base, cfg["model"]));
  const LabeledDataset ds = load_dataset(resolve_path(base, cfg["dataset"]));
  DistillStats st;
  LabeledDataset res;
  Json info;
  if (cfg["kind"] == "robust") {
    DistillConfig dc = distill_config_from_json(sub_or_empty(cfg, "distill"));
    if (!sub_or_empty(cfg, "distill").contains("seed")) dc.seed = seed;
    res = build_robust_dataset(ds, m, dc, threads, &st);
    info = {{"mean_initial_objective", st.mean_initial_objective},
            {"mean_final_objective", st.mean_final_objective}};
  } else {
    AttackConfig a;
    a.mode = AttackMode::kTargeted;
    a.epsilon = 0.5;
    a.step_size = 0.1;
    a.steps = 100;
    a = attack_config_from_json(sub_or_empty(cfg, "attack"), a);
    a.mode = AttackMode::kTargeted;
    const RelabelMode mode = cfg.value("relabel", std::string("random")) == "deterministic"
                                 ? RelabelMode::kDeterministic
                                 : RelabelMode::kRandom;
    res = build_nonrobust_dataset(ds, m, a, mode, seed, threads, &st);
    info = {{"attack_success", st.attack_success}};
  }
  const std::string path = output_path(cfg, out, "distilled.rfd");
  save_dataset(path, res);
  info["output"] = path;
  info["dataset_manifest"] = res.manifest;
  return info;
}

Json cmd_transfer(const Json& cfg, const std::string& base, const fs::path& out,
                  std::uint64_t seed, unsigned threads) {
  const Model src = load_model(resolve_path(base, cfg["source"]));
  std::vector<Model> targets;
  for (const auto& p : cfg["targets"]) targets.push_back(load_model(resolve_path(base, p)));
  std::vector<Model> relabeled;
  if (cfg.contains("relabeled_models")) {
    for (const auto& p : cfg["relabeled_models"]) relabeled.push_back(load_model(resolve_path(base, p)));
    if (relabeled.size() != targets.size()) {
      fail(ErrorCode::kConfig, "config key 'relabeled_models': must match 'targets' in length");
    }
  }
  const LabeledDataset ds = load_dataset(resolve_path(base, cfg["dataset"]));
  const AttackConfig a = attack_config_from_json(cfg["attack"]);
  std::vector<const Model*> ptrs;
  for (const auto& m : targets) ptrs.push_back(&m);
  TransferReport rep = transfer_rate(src, ptrs, ds, a, cfg.value("targeted", false), seed, threads);
  Json j = rep.to_json();
  if (!relabeled.empty()) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < relabeled.size(); ++i) {
      rep.entries[i].relabeled_train_accuracy =
          eval_accuracy(relabeled[i], ds, LabelMap::kIdentity, threads);
      xs.push_back(rep.entries[i].relabeled_train_accuracy);
      ys.push_back(rep.entries[i].transfer_rate);
    }
    j = rep.to_json();
    if (xs.size() >= 2) j["spearman"] = spearman(xs, ys);
  }
  write_json(out / "transfer_report.json", j);
  return j;
}

Json cmd_eval(const Json& cfg, const std::string& base, const fs::path& out, std::uint64_t seed,
              unsigned threads) {
  const Model m = load_model(resolve_path(base, cfg["model"]));
  const LabeledDataset ds = load_dataset(resolve_path(base, cfg["dataset"]));
  const LabelMap map = cfg.value("label_map", std::string("identity")) == "plus-one"
                           ? LabelMap::kPlusOneModC
                           : LabelMap::kIdentity;
  const double acc = eval_accuracy(m, ds, map, threads);
  std::vector<MetricRow> rows{{"accuracy", acc, std::sqrt(acc * (1 - acc) / static_cast<double>(ds.n))}};
  Json j = {{"accuracy", acc}, {"accuracy_halfwidth", confidence_halfwidth(acc, ds.n)}};
  if (cfg.contains("attack")) {
    const AttackConfig a = attack_config_from_json(cfg["attack"]);
    if (cfg.contains("step_grid")) {
      const auto grid = cfg["step_grid"].get<std::vector<std::uint32_t>>();
      const auto curve = accuracy_vs_steps(m, ds, a, grid, seed, threads);
      j["accuracy_vs_steps"] = {{"steps", grid}, {"robust_accuracy", curve}};
      std::string csv = "steps,robust_accuracy\n";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        csv += std::to_string(grid[i]) + "," + fmt(curve[i]) + "\n";
      }
      write_text(out / "accuracy_vs_steps.csv", csv);
    }
    const double r = robust_accuracy(m, ds, a, seed, threads);
    j["robust_accuracy"] = r;
    j["robust_accuracy_halfwidth"] = confidence_halfwidth(r, ds.n);
    rows.push_back({"robust_accuracy", r, std::sqrt(r * (1 - r) / static_cast<double>(ds.n))});
    const auto fractions =
        cfg.value("step_fractions", std::vector<double>{0.1, 0.2, 0.5});
    if (!fractions.empty()) {
      Json sweep = Json::array();
      double worst = r;
      for (double f : fractions) {
        AttackConfig swept = a;
        swept.step_size = a.epsilon * f;
        const double rf = robust_accuracy(m, ds, swept, seed, threads);
        worst = std::min(worst, rf);
        sweep.push_back({{"step_fraction", f}, {"step_size", swept.step_size}, {"robust_accuracy", rf}});
      }
      j["step_sweep"] = sweep;
      j["robust_accuracy_worst_step"] = worst;
      rows.push_back({"robust_accuracy_worst_step", worst,
                      std::sqrt(worst * (1 - worst) / static_cast<double>(ds.n))});
    }
  }
  write_metrics_csv((out / "metrics.csv").string(), rows, hash_hex(cfg.dump()));
  return j;
}

}  // namespace

RunResult run_command(const RunOptions& opts) {
  static const std::vector<std::string> kCommands = {"theory",  "pipeline", "gen-data", "train",
                                                     "attack",  "distill",  "transfer", "eval"};
  if (std::find(kCommands.begin(), kCommands.end(), opts.command) == kCommands.end()) {
    fail(ErrorCode::kConfig, "unknown command '" + opts.command + "'");
  }
  Json cfg = load_config(opts.config_path, opts.command);
  if (opts.seed) cfg["seed"] = *opts.seed;
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  const unsigned threads = resolve_threads(opts.threads > 0 ? opts.threads : cfg.value("threads", 0u));
  const std::string base = fs::path(opts.config_path).parent_path().string();
  const fs::path out(opts.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory " + out.string());

  // The manifest ignores the worker count, which never changes results.
  Json hashed = cfg;
  hashed.erase("threads");
  RunResult res;
  Json body;
  if (opts.command == "theory") {
    body = run_theory(cfg, seed, threads);
    std::string csv = "epsilon,lambda,kappa_after,worst_cosine_after,min_sigma_ratio";
    const std::size_t d = cfg["sigma_star"].size();
    for (std::size_t i = 0; i < d; ++i) csv += ",sigma_r_" + std::to_string(i);
    csv += "\n";
    const Vec sig = cfg["sigma_star"].get<Vec>();
    const double smin = *std::min_element(sig.begin(), sig.end());
    for (const auto& r : body["records"]) {
      const Vec sr = r["sigma_r"].get<Vec>();
      csv += fmt(r["epsilon"].get<double>()) + "," +
             (r["lambda"].is_null() ? std::string("inf") : fmt(r["lambda"].get<double>())) + "," +
             fmt(r["kappa_after"].get<double>()) + "," + fmt(r["worst_cosine_after"].get<double>()) +
             "," + fmt(*std::min_element(sr.begin(), sr.end()) / smin);
      for (double v : sr) csv += "," + fmt(v);
      csv += "\n";
    }
    write_text(out / "theory_sweep.csv", csv);
  } else if (opts.command == "pipeline") {
    body = run_pipeline(cfg, base, out.string(), seed, threads, &res.stage_seconds);
  } else if (opts.command == "gen-data") {
    body = cmd_gen_data(cfg, base, out, seed);
  } else if (opts.command == "train") {
    body = cmd_train(cfg, base, out, seed, threads);
  } else if (opts.command == "attack") {
    body = cmd_attack(cfg, base, out, seed, threads);
  } else if (opts.command == "distill") {
    body = cmd_distill(cfg, base, out, seed, threads);
  } else if (opts.command == "transfer") {
    body = cmd_transfer(cfg, base, out, seed, threads);
  } else {
    body = cmd_eval(cfg, base, out, seed, threads);
  }
  body["manifest"] = manifest(opts.command, hashed, seed);
  const bool passed = body.value("all_passed", true);
  const std::string stem = opts.command == "gen-data" ? "gen_data" : opts.command;
  write_json(out / (stem + "_report.json"), body);
  if (opts.command == "theory") validate_schema(body, "theory_report");
  res.exit_code = passed ? 0 : 1;
  res.report = std::move(body);
  return res;
}

}  // namespace robfeat

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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "robfeat/attack.hpp"
#include "robfeat/experiment.hpp"
#include "robfeat/gaussian.hpp"
#include "robfeat/model.hpp"

using namespace robfeat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& title, Outcome& o, double secs, double limit) {
  o.require(secs < limit, "runtime limit");
  if (!o.passed) ++failures;
  std::printf("%s  criterion %d  %s:%s  (%.1f s, limit %.0f s)\n", o.passed ? "PASS" : "FAIL", id,
              title.c_str(), o.detail.str().c_str(), secs, limit);
  std::fflush(stdout);
}

template <typename F>
void criterion(int id, const std::string& title, double limit, F&& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  report(id, title, o, seconds_since(t0), limit);
}

DiagMat random_diag(RngStream& r, std::size_t d, double lo, double hi) {
  Vec s(d);
  for (double& v : s) v = std::exp(r.uniform(std::log(lo), std::log(hi)));
  return DiagMat(s);
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Gradient agreement in the relative l2 sense.
double rel_l2(const Vec& a, const Vec& b) {
  const double scale = std::max(norm2(b), 1e-12);
  return norm2(sub(a, b)) / scale;
}

struct PipelineRun {
  RunResult result;
  double seconds = 0.0;
};

}  // namespace

int main(int argc, char** argv) {
  const fs::path src = ROBFEAT_SOURCE_DIR;
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "robfeat_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());

  criterion(1, "vulnerability gap closed form vs 1e5-sample Monte Carlo on 50 instances; isotropic covariance minimizes the gap at fixed trace", 60, [&](Outcome& o) {
    RngStream r(101, 0);
    const std::size_t dims[3] = {2, 5, 10};
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const std::size_t d = dims[k % 3];
      const DiagMat s = random_diag(r, d, 0.1, 3.0);
      Vec mu(d);
      for (double& v : mu) v = r.uniform(-1, 1);
      const double c = r.uniform(1.2, 4.0) / s.min();
      const double cf = vulnerability_gap(s, c);
      const double mc = vulnerability_gap_monte_carlo({mu, s}, c, 100000, 1000 + k, threads);
      worst = std::max(worst, std::abs(mc - cf) / cf);
    }
    o.detail << " max relative error " << worst << " (<= 0.02)";
    o.require(worst <= 0.02, "Monte Carlo agreement");
    int wins = 0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t d = dims[k % 3];
      const double trace = r.uniform(0.5, 5.0);
      Vec w(d);
      double tw = 0.0;
      for (double& v : w) tw += (v = r.uniform(0.05, 1.0));
      for (double& v : w) v *= trace / tw;
      const DiagMat alt(w);
      const DiagMat iso(Vec(d, trace / static_cast<double>(d)));
      const double c = r.uniform(1.05, 3.0) / alt.min();
      if (vulnerability_gap(iso, c) <= vulnerability_gap(alt, c) + 1e-12) ++wins;
    }
    o.detail << "; isotropic minimal in " << wins << "/100";
    o.require(wins == 100, "isotropic minimum");
  });

  criterion(2, "robust fit at eps in {0.05, 0.1, 0.2}: mean within 1e-6, implicit covariance residual <= 1e-6, lambda within explicit bounds; scalar lambda = 1 + 1/eps within 1e-10", 60, [&](Outcome& o) {
    RngStream r(202, 0);
    std::vector<std::pair<Vec, DiagMat>> cases = {{{1.0, 1.0}, DiagMat(Vec{1.0, 0.05})}};
    for (int k = 0; k < 9; ++k) {
      const std::size_t d = 2 + r.below(6);
      Vec mu(d);
      for (double& v : mu) v = r.uniform(-2, 2);
      cases.emplace_back(mu, random_diag(r, d, 0.05, 2.0));
    }
    double mean_err = 0.0, fp = 0.0;
    int in_bounds = 0, total = 0;
    for (const auto& [mu, s] : cases) {
      for (double eps : {0.05, 0.1, 0.2}) {
        const auto fit = adversarial_mle_fit(mu, s, eps);
        for (std::size_t i = 0; i < mu.size(); ++i) {
          mean_err = std::max(mean_err, std::abs(fit.params.mu[i] - mu[i]));
        }
        // Independent residual: Sigma = Sigma* (I + M)^2 with M rebuilt from lambda.
        for (std::size_t i = 0; i < mu.size(); ++i) {
          const double m = 1.0 / (fit.lambda * fit.params.sigma[i] - 1.0);
          fp = std::max(fp, std::abs(s[i] * (1 + m) * (1 + m) / fit.params.sigma[i] - 1.0));
        }
        const auto b = lambda_bounds(s, fit.params.sigma, eps);
        in_bounds += (b.lower <= fit.lambda && fit.lambda <= b.upper) ? 1 : 0;
        ++total;
      }
    }
    double scalar = 0.0;
    for (double eps : {0.05, 0.1, 0.2, 0.5, 1.0}) {
      const DiagMat one(Vec{1.0});
      scalar = std::max(scalar, std::abs(solve_lambda(one, one, eps) - (1.0 + 1.0 / eps)));
    }
    o.detail << " mean err " << mean_err << ", residual " << fp << ", lambda in bounds "
             << in_bounds << "/" << total << ", scalar lambda err " << scalar;
    o.require(mean_err <= 1e-6, "mean");
    o.require(fp <= 1e-6, "implicit covariance residual");
    o.require(in_bounds == total, "lambda bounds");
    o.require(scalar <= 1e-10, "scalar lambda");
  });

  criterion(3, "alignment over 100 random covariances: kappa and worst-case cosine never worsen; cosine formula matches brute force over 1e5 unit vectors", 60, [&](Outcome& o) {
    RngStream r(303, 0);
    int kappa_ok = 0, cos_ok = 0;
    double brute_err = 0.0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t d = 2 + r.below(9);
      const DiagMat s = random_diag(r, d, 0.05, 3.0);
      const double eps = r.uniform(0.05, 1.0);
      const auto fit = adversarial_mle_fit(Vec(d, 1.0), s, eps);
      const auto before = alignment_stats(s);
      const auto after = alignment_stats(fit.params.sigma);
      kappa_ok += after.kappa <= before.kappa * (1 + 1e-12) ? 1 : 0;
      cos_ok += after.worst_cosine >= before.worst_cosine * (1 - 1e-12) ? 1 : 0;
    }
    // The minimizer lies in the span of the extreme eigenvectors, so a dense
    // sweep of the 2D case is exhaustive.
    for (int k = 0; k < 100; ++k) {
      const DiagMat s = random_diag(r, 2, 0.05, 3.0);
      double worst = 1.0;
      for (int j = 0; j < 100000; ++j) {
        const double a = std::numbers::pi * j / 100000.0;
        const double u0 = std::cos(a), u1 = std::sin(a);
        const double su0 = s[0] * u0, su1 = s[1] * u1;
        worst = std::min(worst, (u0 * su0 + u1 * su1) / std::hypot(su0, su1));
      }
      brute_err = std::max(brute_err, std::abs(worst - alignment_stats(s).worst_cosine));
    }
    o.detail << " kappa nonincreasing " << kappa_ok << "/100, cosine nondecreasing " << cos_ok
             << "/100, formula vs brute force " << brute_err << " (<= 1e-3)";
    o.require(kappa_ok == 100 && cos_ok == 100, "alignment");
    o.require(brute_err <= 1e-3, "cosine formula");
  });

  criterion(4, "optimal perturbation beats 1e3 random eps-sphere perturbations in NLL on 100 instances", 60, [&](Outcome& o) {
    RngStream r(404, 0);
    int wins = 0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t d = 1 + r.below(10);
      const DiagMat s = random_diag(r, d, 0.05, 3.0);
      Vec mu(d), x(d);
      for (double& v : mu) v = r.uniform(-1, 1);
      for (std::size_t i = 0; i < d; ++i) x[i] = mu[i] + std::sqrt(s[i]) * r.normal();
      const GaussianParams p{mu, s};
      const double eps = r.uniform(0.05, 2.0);
      const double best = nll(p, add(x, optimal_delta(p, x, eps)));
      bool beaten = false;
      for (int j = 0; j < 1000; ++j) {
        Vec u(d);
        for (double& v : u) v = r.normal();
        const double n = norm2(u);
        for (double& v : u) v *= eps / n;
        beaten = beaten || nll(p, add(x, u)) > best + 1e-9;
      }
      wins += beaten ? 0 : 1;
    }
    o.detail << " optimum unbeaten on " << wins << "/100";
    o.require(wins == 100, "optimality");
  });

  // Pipeline runs shared by criteria 5, 6 and 8.
  auto run_pipeline_cmd = [&](const fs::path& out, unsigned t) {
    PipelineRun pr;
    RunOptions opts;
    opts.command = "pipeline";
    opts.config_path = (src / "configs" / "pipeline.json").string();
    opts.out_dir = out.string();
    opts.threads = t;
    const auto t0 = Clock::now();
    pr.result = run_command(opts);
    pr.seconds = seconds_since(t0);
    return pr;
  };
  PipelineRun first;
  std::string pipeline_error;
  try {
    first = run_pipeline_cmd(work / "pipeline_a", threads);
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto check_named = [&](Outcome& o, const std::string& prefix) {
    int n = 0;
    for (const auto& c : first.result.report["checks"]) {
      const std::string name = c["name"];
      if (name.rfind(prefix, 0) != 0) continue;
      ++n;
      o.detail << (o.detail.tellp() > 0 ? "; " : " ") << name << " = " << c["value"].get<double>();
      o.require(c["passed"].get<bool>(), name);
    }
    return n;
  };
  auto stage_time = [&](const std::string& prefix) {
    double t = 0.0;
    for (const auto& [name, secs] : first.result.stage_seconds) {
      if (name.rfind(prefix, 0) == 0) t += secs;
    }
    return t;
  };

  {
    Outcome o;
    if (!pipeline_error.empty()) {
      o.require(false, "pipeline error: " + pipeline_error);
    } else {
      int n = 0;
      for (const char* tag : {"(a)", "(b)", "(c)", "(d)", "(e)"}) n += check_named(o, tag);
      o.require(n == 7, "all directional checks present");
    }
    report(5, "toy-scale pipeline directional checks (a)-(e)", o, first.seconds, 900);
  }
  {
    Outcome o;
    if (!pipeline_error.empty()) {
      o.require(false, "pipeline error: " + pipeline_error);
    } else {
      const auto n = first.result.report["digits"]["transfer"]["entries"].size();
      o.detail << " " << n << " architectures";
      o.require(n >= 4, "at least 4 architectures");
      o.require(check_named(o, "transfer:") == 2, "transfer checks present");
    }
    report(6, "transfer: rank correlation positive, self-transfer exactly 1", o,
           stage_time("digits-transfer"), 300);
  }

  criterion(7, "attack correctness: linear one-step optimum, eps-ball containment, monotone accuracy-vs-steps", 300, [&](Outcome& o) {
    RngStream r(707, 0);
    double lin_err = 0.0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t d = 2 + r.below(8);
      const std::size_t c = 2 + r.below(4);
      Model m = init_model(Arch::kLinear, d, c, 7000 + k);
      Vec x(d);
      for (double& v : x) v = r.normal();
      const auto y = static_cast<std::uint32_t>(r.below(c));
      AttackConfig a;
      a.epsilon = r.uniform(0.05, 2.0);
      a.step_size = a.epsilon;
      a.steps = 1;
      RngStream rr(k, 0);
      const Vec adv = pgd_l2(m, x, y, a, rr);
      // Closed form: the loss is linear to first order in delta with
      // gradient W^T (softmax - e_y); the optimal unit step is its direction.
      const Vec z = forward(m, x);
      const Vec p = softmax(z);
      Vec g(d, 0.0);
      const auto& L = m.layers.front();
      for (std::size_t j = 0; j < c; ++j) {
        const double coef = p[j] - (j == y ? 1.0 : 0.0);
        for (std::size_t i = 0; i < d; ++i) g[i] += coef * L.w[j * d + i];
      }
      const double gn = norm2(g);
      for (std::size_t i = 0; i < d; ++i) {
        lin_err = std::max(lin_err, std::abs(adv[i] - (x[i] + a.epsilon * g[i] / gn)));
      }
    }
    o.detail << " linear one-step error " << lin_err << " (<= 1e-10)";
    o.require(lin_err <= 1e-10, "linear closed form");

    double overshoot = 0.0;
    for (Arch arch : all_archs()) {
      const Model m = init_model(arch, 6, 3, 11);
      for (int k = 0; k < 200; ++k) {
        Vec x(6);
        for (double& v : x) v = r.uniform();
        AttackConfig a;
        a.epsilon = r.uniform(0.01, 2.0);
        a.step_size = r.uniform(0.01, 1.5);
        a.steps = 1 + static_cast<std::uint32_t>(r.below(40));
        a.random_start = k % 2 == 0;
        a.clip01 = k % 3 == 0;
        a.mode = k % 4 == 0 ? AttackMode::kTargeted : AttackMode::kUntargeted;
        a.loss = k % 5 == 0 ? AttackLoss::kMargin : AttackLoss::kCrossEntropy;
        RngStream rr(k, 1);
        const Vec adv = pgd_l2(m, x, static_cast<std::uint32_t>(k % 3), a, rr);
        overshoot = std::max(overshoot, distance2(adv, x) - a.epsilon);
      }
    }
    o.detail << "; max ball overshoot " << std::max(0.0, overshoot) << " (<= 1e-9)";
    o.require(overshoot <= 1e-9, "ball containment");

    // Curves: the pipeline's robust synthetic model plus a standard digits model.
    bool mono = true;
    std::ostringstream curves;
    if (pipeline_error.empty()) {
      const Json& c = first.result.report["synthetic"]["accuracy_vs_steps"];
      for (const char* key : {"cross_entropy", "margin"}) {
        const auto v = c[key].get<std::vector<double>>();
        for (std::size_t i = 1; i < v.size(); ++i) mono = mono && v[i] <= v[i - 1] + 0.005;
      }
      const Model dm = load_model((work / "pipeline_a" / "digits_standard.rfm").string());
      const LabeledDataset all =
          load_idx_dataset((src / "tests/data/digits-images.idx3-ubyte").string(),
                           (src / "tests/data/digits-labels.idx1-ubyte").string());
      const LabeledDataset sub = subset(all, [] {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < 1797; i += 4) idx.push_back(i);
        return idx;
      }());
      AttackConfig a;
      a.epsilon = 1.0;
      a.step_size = 0.1;
      a.clip01 = true;
      const std::vector<std::uint32_t> grid = {1, 2, 5, 10, 20, 50};
      const auto v = accuracy_vs_steps(dm, sub, a, grid, 5, threads);
      for (std::size_t i = 0; i < v.size(); ++i) {
        curves << (i ? "," : "") << v[i];
        if (i > 0) mono = mono && v[i] <= v[i - 1] + 0.005;
      }
    } else {
      mono = false;
    }
    o.detail << "; digits curve [" << curves.str() << "]";
    o.require(mono, "monotone accuracy-vs-steps");
  });

  criterion(8, "gradient checks on 100 cases per model family; RFD1/RFM1/IDX bit-exact round trips; byte-identical pipeline reruns", 600, [&](Outcome& o) {
    RngStream r(808, 0);
    double worst = 0.0;
    for (Arch arch : all_archs()) {
      for (int k = 0; k < 100; ++k) {
        Model m = init_model(arch, 5, 3, 8000 + k);
        for (std::size_t i = 0; i < 5; ++i) {
          m.input_shift[i] = r.uniform(-0.3, 0.3);
          m.input_scale[i] = r.uniform(0.5, 2.0);
        }
        Vec x(5);
        for (double& v : x) v = r.normal();
        const auto y = static_cast<std::uint32_t>(r.below(3));
        for (LossId loss : {LossId::kCrossEntropy, LossId::kMargin}) {
          const Vec g = grad_input(m, x, loss, y);
          const Vec fd =
              finite_diff_grad([&](const Vec& z) { return loss_value(m, z, loss, y); }, x, 1e-6);
          worst = std::max(worst, rel_l2(g, fd));
        }
        const Vec gp = grad_params(m, x, y);
        const Vec p0 = flatten_params(m);
        Vec fdp(p0.size());
        Model tmp = m;
        for (std::size_t j = 0; j < p0.size(); ++j) {
          Vec p = p0;
          p[j] = p0[j] + 1e-6;
          unflatten_params(tmp, p);
          const double fp = cross_entropy(forward(tmp, x), y);
          p[j] = p0[j] - 1e-6;
          unflatten_params(tmp, p);
          fdp[j] = (fp - cross_entropy(forward(tmp, x), y)) / 2e-6;
        }
        worst = std::max(worst, rel_l2(gp, fdp));
      }
    }
    for (int k = 0; k < 100; ++k) {
      const std::size_t d = 1 + r.below(8);
      Vec mu(d), x(d);
      for (double& v : mu) v = r.normal();
      for (double& v : x) v = r.normal();
      const GaussianParams p{mu, random_diag(r, d, 0.1, 3.0)};
      worst = std::max(worst, rel_l2(nll_grad_x(p, x),
                                     finite_diff_grad([&](const Vec& z) { return nll(p, z); }, x, 1e-6)));
    }
    o.detail << " worst gradient relative error " << worst << " (<= 1e-5)";
    o.require(worst <= 1e-5, "gradients");

    bool io = true;
    const fs::path io_dir = work / "io";
    fs::create_directories(io_dir);
    LabeledDataset ds;
    ds.d = 7;
    ds.num_classes = 3;
    for (int i = 0; i < 50; ++i) {
      Vec v(7);
      for (double& e : v) e = r.normal() * std::pow(10.0, r.uniform(-300, 300));
      ds.push(v, static_cast<std::uint32_t>(i % 3));
    }
    save_dataset((io_dir / "a.rfd").string(), ds);
    const auto back = load_dataset((io_dir / "a.rfd").string());
    save_dataset((io_dir / "b.rfd").string(), back);
    io = io && back.inputs == ds.inputs && back.labels == ds.labels &&
         bytes_of(io_dir / "a.rfd") == bytes_of(io_dir / "b.rfd");
    for (Arch arch : all_archs()) {
      const Model m = init_model(arch, 9, 4, 3);
      save_model((io_dir / "a.rfm").string(), m);
      const Model mb = load_model((io_dir / "a.rfm").string());
      io = io && serialize_model(mb) == serialize_model(m) && flatten_params(mb) == flatten_params(m);
    }
    IdxTensor t8{0x08, {4, 3}, {}};
    for (int i = 0; i < 12; ++i) t8.data.push_back((i * 21) / 255.0);
    save_idx((io_dir / "a.idx").string(), t8);
    const auto t8b = load_idx((io_dir / "a.idx").string());
    save_idx((io_dir / "b.idx").string(), t8b);
    io = io && t8b.data == t8.data && bytes_of(io_dir / "a.idx") == bytes_of(io_dir / "b.idx");
    IdxTensor tf{0x0D, {5}, {0.5, -2.0, 1.0 / 3.0f, 1e-20f, 65504.0}};
    for (double& v : tf.data) v = static_cast<float>(v);
    save_idx((io_dir / "f.idx").string(), tf);
    io = io && load_idx((io_dir / "f.idx").string()).data == tf.data;
    o.detail << "; round trips " << (io ? "bit-exact" : "MISMATCH");
    o.require(io, "round trips");

    if (!pipeline_error.empty()) {
      o.require(false, "pipeline unavailable");
      return;
    }
    const unsigned other = threads == 1 ? 2 : 1;
    run_pipeline_cmd(work / "pipeline_b", other);
    std::size_t files = 0, same = 0;
    for (const auto& e : fs::directory_iterator(work / "pipeline_a")) {
      ++files;
      const fs::path twin = work / "pipeline_b" / e.path().filename();
      same += fs::exists(twin) && bytes_of(e.path()) == bytes_of(twin) ? 1 : 0;
    }
    o.detail << "; rerun with " << other << " vs " << threads << " threads: " << same << "/"
             << files << " files identical";
    o.require(files > 0 && same == files, "byte-identical rerun");
  });

  std::printf("%s: %d criterion failure(s)\n", failures == 0 ? "ALL PASSED" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}

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

#include "robfeat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "robfeat/distill.hpp"
#include "robfeat/parallel.hpp"

namespace robfeat {

Vec FeatureFn::grad(const Vec& x) const {
  Vec g = gradient ? gradient(x) : finite_diff_grad(evaluator, x, 1e-6);
  for (double& v : g) v /= stdev;
  return g;
}

FeatureFn fit_feature(std::function<double(const Vec&)> evaluator, const LabeledDataset& ref,
                      std::function<Vec(const Vec&)> gradient) {
  ref.validate();
  FeatureFn f;
  f.evaluator = std::move(evaluator);
  f.gradient = std::move(gradient);
  Vec vals(ref.n);
  for (std::size_t i = 0; i < ref.n; ++i) vals[i] = f.evaluator(ref.row_vec(i));
  require_finite(vals, "fit_feature");
  const double n = static_cast<double>(ref.n);
  f.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  double var = 0.0;
  for (double v : vals) var += (v - f.mean) * (v - f.mean);
  var /= n;
  require(var > 0.0, ErrorCode::kInvalidArgument, "fit_feature: constant feature on reference");
  f.stdev = std::sqrt(var);
  return f;
}

FeatureFn coordinate_feature(std::size_t j, const LabeledDataset& ref) {
  require(j < ref.d, ErrorCode::kInvalidArgument, "coordinate_feature: index out of range");
  const std::size_t d = ref.d;
  return fit_feature([j](const Vec& x) { return x[j]; }, ref,
                     [j, d](const Vec&) {
                       Vec g(d, 0.0);
                       g[j] = 1.0;
                       return g;
                     });
}

namespace {

void require_binary(const LabeledDataset& ds) {
  require(ds.num_classes == 2, ErrorCode::kInvalidArgument,
          "usefulness needs binary labels; use the per-class variant");
}

}  // namespace

double usefulness_rho(const FeatureFn& f, const LabeledDataset& ds) {
  ds.validate();
  require_binary(ds);
  double s = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) s += signed_label(ds.labels[i]) * f(ds.row_vec(i));
  return s / static_cast<double>(ds.n);
}

std::vector<double> usefulness_rho_per_class(const FeatureFn& f, const LabeledDataset& ds) {
  ds.validate();
  std::vector<double> out(ds.num_classes, 0.0);
  Vec vals(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) vals[i] = f(ds.row_vec(i));
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.n; ++i) s += (ds.labels[i] == c ? 1.0 : -1.0) * vals[i];
    out[c] = s / static_cast<double>(ds.n);
  }
  return out;
}

double robust_usefulness_gamma(const FeatureFn& f, const LabeledDataset& ds,
                               const AttackConfig& delta) {
  ds.validate();
  require_binary(ds);
  delta.validate();
  require(delta.mode == AttackMode::kUntargeted, ErrorCode::kInvalidArgument,
          "robust_usefulness_gamma: adversary must be untargeted");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    const double y = signed_label(ds.labels[i]);
    const Vec x0 = ds.row_vec(i);
    Vec x = x0;
    double best = y * f(x);
    for (std::uint32_t s = 0; s < delta.steps; ++s) {
      Vec g = f.grad(x);
      const double n = norm2(g);
      if (!(n > 0.0)) break;
      axpy(-y * delta.step_size / n, g, x);
      x = l2_project(x, x0, delta.epsilon);
      if (delta.clip01) clip(x, 0.0, 1.0);
      best = std::min(best, y * f(x));
    }
    total += best;
  }
  return total / static_cast<double>(ds.n);
}

double eval_accuracy(const Model& m, const LabeledDataset& ds, LabelMap map, unsigned threads) {
  ds.validate();
  const double hits = parallel_sum(ds.n, threads, [&](std::size_t i) {
    std::uint32_t y = ds.labels[i];
    if (map == LabelMap::kPlusOneModC) y = plus_one_label(y, ds.num_classes);
    return predict(m, ds.row(i)) == static_cast<int>(y) ? 1.0 : 0.0;
  });
  return hits / static_cast<double>(ds.n);
}

Json TransferReport::to_json() const {
  Json arr = Json::array();
  for (const auto& e : entries) {
    arr.push_back({{"name", e.name},
                   {"clean_accuracy", e.clean_accuracy},
                   {"relabeled_train_accuracy", e.relabeled_train_accuracy},
                   {"transfer_rate", e.transfer_rate},
                   {"transfer_rate_halfwidth",
                    confidence_halfwidth(e.transfer_rate, e.source_successes)},
                   {"targeted_success", e.targeted_success},
                   {"source_successes", e.source_successes}});
  }
  return {{"entries", arr}, {"source_attack_success", source_attack_success}};
}

TransferReport transfer_rate(const Model& source, const std::vector<const Model*>& targets,
                             const LabeledDataset& ds, const AttackConfig& cfg, bool targeted,
                             std::uint64_t seed, unsigned threads) {
  ds.validate();
  for (const Model* t : targets) {
    require(t != nullptr && t->input_dim == source.input_dim &&
                t->num_classes == source.num_classes,
            ErrorCode::kDimensionMismatch, "transfer_rate: models must share input/output dims");
  }
  AttackConfig ucfg = cfg;
  ucfg.mode = AttackMode::kUntargeted;
  std::vector<Vec> adv;
  const auto rows = attack_dataset(source, ds, ucfg, seed, threads, nullptr, &adv);

  std::vector<Vec> tadv;
  std::vector<AttackRecord> trows;
  std::vector<std::uint32_t> goals(ds.n);
  if (targeted) {
    for (std::size_t i = 0; i < ds.n; ++i) goals[i] = plus_one_label(ds.labels[i], ds.num_classes);
    AttackConfig tcfg = cfg;
    tcfg.mode = AttackMode::kTargeted;
    trows = attack_dataset(source, ds, tcfg, seed + 1, threads, &goals, &tadv);
  }

  TransferReport rep;
  std::size_t succ = 0;
  for (const auto& r : rows) succ += r.success ? 1 : 0;
  rep.source_attack_success = static_cast<double>(succ) / static_cast<double>(ds.n);
  for (const Model* t : targets) {
    TransferEntry e;
    e.name = arch_name(t->arch);
    e.clean_accuracy = eval_accuracy(*t, ds, LabelMap::kIdentity, threads);
    std::size_t fooled = 0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      if (!rows[i].success) continue;
      ++e.source_successes;
      if (predict(*t, adv[i]) != static_cast<int>(ds.labels[i])) ++fooled;
    }
    e.transfer_rate = e.source_successes == 0
                          ? 0.0
                          : static_cast<double>(fooled) / static_cast<double>(e.source_successes);
    if (targeted) {
      std::size_t n = 0, hit = 0;
      for (std::size_t i = 0; i < ds.n; ++i) {
        if (!trows[i].success) continue;
        ++n;
        if (predict(*t, tadv[i]) == static_cast<int>(goals[i])) ++hit;
      }
      e.targeted_success = n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
    }
    rep.entries.push_back(e);
  }
  return rep;
}

namespace {

Vec average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vec r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require_same_dim(a.size(), b.size(), "spearman");
  require(a.size() >= 2, ErrorCode::kInvalidArgument, "spearman: need at least 2 points");
  const Vec ra = average_ranks(a);
  const Vec rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double confidence_halfwidth(double p, std::size_t n) {
  if (n == 0) return 0.0;
  return 1.96 * std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n));
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << "metric,value,stderr,config_hash\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.metric << ',' << r.value << ',' << r.stderr_ << ',' << config_hash << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write error on " + path);
}

}  // namespace robfeat

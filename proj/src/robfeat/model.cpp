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

#include "robfeat/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "robfeat/attack.hpp"
#include "robfeat/hash.hpp"
#include "robfeat/parallel.hpp"

namespace robfeat {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

bool uses_tanh(Arch a) { return a == Arch::kMlp64x64Tanh; }

double activate(Arch a, double v) { return uses_tanh(a) ? std::tanh(v) : (v > 0.0 ? v : 0.0); }

// Derivative expressed through the pre-activation value.
double activate_grad(Arch a, double pre) {
  if (uses_tanh(a)) {
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }
  return pre > 0.0 ? 1.0 : 0.0;
}

struct Trace {
  std::vector<Vec> inputs;  // input to each layer
  std::vector<Vec> pre;     // pre-activation of each layer
};

Trace run(const Model& m, std::span<const double> x) {
  require_same_dim(x.size(), m.input_dim, "model input");
  Trace t;
  t.inputs.reserve(m.layers.size());
  t.pre.reserve(m.layers.size());
  Vec a(m.input_dim);
  for (std::size_t i = 0; i < m.input_dim; ++i) a[i] = (x[i] - m.input_shift[i]) * m.input_scale[i];
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& L = m.layers[l];
    Vec z(L.b);
    for (std::size_t o = 0; o < L.out; ++o) {
      const double* w = L.w.data() + o * L.in;
      double s = 0.0;
      for (std::size_t i = 0; i < L.in; ++i) s += w[i] * a[i];
      z[o] += s;
    }
    t.inputs.push_back(std::move(a));
    a = z;
    if (l + 1 < m.layers.size()) {
      for (double& v : a) v = activate(m.arch, v);
    }
    t.pre.push_back(std::move(z));
  }
  t.inputs.push_back(std::move(a));  // logits
  return t;
}

// Backpropagates `g` (gradient w.r.t. the output of layer `top`) down to the
// raw input. When `pgrad` is given, parameter gradients are accumulated there
// in flatten_params order.
Vec backprop(const Model& m, const Trace& t, std::size_t top, Vec g, Vec* pgrad) {
  std::vector<std::size_t> offsets(m.layers.size() + 1, 0);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    offsets[l + 1] = offsets[l] + m.layers[l].w.size() + m.layers[l].b.size();
  }
  for (std::size_t li = top + 1; li-- > 0;) {
    const Layer& L = m.layers[li];
    if (li + 1 < m.layers.size()) {
      for (std::size_t o = 0; o < L.out; ++o) g[o] *= activate_grad(m.arch, t.pre[li][o]);
    }
    const Vec& in = t.inputs[li];
    if (pgrad != nullptr) {
      double* dw = pgrad->data() + offsets[li];
      double* db = dw + L.w.size();
      for (std::size_t o = 0; o < L.out; ++o) {
        const double go = g[o];
        if (go == 0.0) continue;
        double* row = dw + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) row[i] += go * in[i];
        db[o] += go;
      }
    }
    Vec gin(L.in, 0.0);
    for (std::size_t o = 0; o < L.out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      const double* w = L.w.data() + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) gin[i] += go * w[i];
    }
    g = std::move(gin);
  }
  for (std::size_t i = 0; i < m.input_dim; ++i) g[i] *= m.input_scale[i];
  return g;
}

Vec loss_dlogits(std::span<const double> logits, LossId loss, std::uint32_t label) {
  const std::size_t c = logits.size();
  require(label < c, ErrorCode::kInvalidArgument, "label out of range");
  Vec g(c, 0.0);
  if (loss == LossId::kCrossEntropy) {
    g = softmax(logits);
    g[label] -= 1.0;
    return g;
  }
  std::size_t best = c;
  for (std::size_t j = 0; j < c; ++j) {
    if (j != label && (best == c || logits[j] > logits[best])) best = j;
  }
  if (best == c) return g;
  if (logits[label] - logits[best] > 0.0) {
    g[label] = 1.0;
    g[best] = -1.0;
  }
  return g;
}

void write_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void write_f64(std::vector<unsigned char>& b, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

double objective(const Model& m, const LabeledDataset& ds, double wd, unsigned threads) {
  const double total = parallel_sum(ds.n, threads, [&](std::size_t i) {
    return cross_entropy(forward(m, ds.row(i)), ds.labels[i]);
  });
  double reg = 0.0;
  for (const auto& L : m.layers) reg += squared_norm(L.w);
  return total / static_cast<double>(ds.n) + 0.5 * wd * reg;
}

}  // namespace

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kLinear: return "linear";
    case Arch::kMlp32: return "mlp-32";
    case Arch::kMlp64x64: return "mlp-64x64";
    case Arch::kMlp128: return "mlp-128";
    case Arch::kMlp64x64Tanh: return "mlp-64x64-tanh";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  for (Arch a : all_archs()) {
    if (name == arch_name(a)) return a;
  }
  fail(ErrorCode::kInvalidArgument, "unknown architecture '" + name + "'");
}

std::vector<Arch> all_archs() {
  return {Arch::kLinear, Arch::kMlp32, Arch::kMlp64x64, Arch::kMlp128, Arch::kMlp64x64Tanh};
}

std::vector<std::size_t> arch_hidden(Arch a) {
  switch (a) {
    case Arch::kLinear: return {};
    case Arch::kMlp32: return {32};
    case Arch::kMlp64x64: return {64, 64};
    case Arch::kMlp128: return {128};
    case Arch::kMlp64x64Tanh: return {64, 64};
  }
  fail(ErrorCode::kInvalidArgument, "unknown architecture id");
}

std::size_t Model::representation_dim() const {
  return layers.size() <= 1 ? input_dim : layers[layers.size() - 2].out;
}

std::size_t Model::parameter_count() const {
  std::size_t p = 0;
  for (const auto& L : layers) p += L.w.size() + L.b.size();
  return p;
}

void Model::validate() const {
  require(input_dim >= 1 && num_classes >= 1 && !layers.empty(), ErrorCode::kInvalidArgument,
          "model: empty shape");
  require_same_dim(input_shift.size(), input_dim, "model input_shift");
  require_same_dim(input_scale.size(), input_dim, "model input_scale");
  require_same_dim(layers.size(), arch_hidden(arch).size() + 1, "model layer count");
  std::size_t in = input_dim;
  for (const auto& L : layers) {
    require_same_dim(L.in, in, "model layer chain");
    require_same_dim(L.w.size(), L.out * L.in, "model weight shape");
    require_same_dim(L.b.size(), L.out, "model bias shape");
    require_finite(L.w, "model weights");
    require_finite(L.b, "model biases");
    in = L.out;
  }
  require_same_dim(in, num_classes, "model output width");
}

std::string Model::hash() const {
  const auto bytes = serialize_model(*this);
  Fnv1a h;
  h.bytes(bytes.data(), bytes.size());
  return h.hex();
}

Model init_model(Arch arch, std::size_t input_dim, std::size_t num_classes, std::uint64_t seed) {
  require(input_dim >= 1 && num_classes >= 2, ErrorCode::kInvalidArgument,
          "init_model: need input_dim >= 1 and >= 2 classes");
  Model m;
  m.arch = arch;
  m.input_dim = input_dim;
  m.num_classes = num_classes;
  m.input_shift.assign(input_dim, 0.0);
  m.input_scale.assign(input_dim, 1.0);
  RngStream rng(seed, 0x696e6974ULL);
  std::size_t in = input_dim;
  auto widths = arch_hidden(arch);
  widths.push_back(num_classes);
  for (std::size_t out : widths) {
    Layer L;
    L.in = in;
    L.out = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    L.w.resize(out * in);
    L.b.resize(out);
    for (double& w : L.w) w = rng.uniform(-bound, bound);
    for (double& b : L.b) b = rng.uniform(-bound, bound);
    m.layers.push_back(std::move(L));
    in = out;
  }
  return m;
}

Vec forward(const Model& m, std::span<const double> x) { return run(m, x).inputs.back(); }

Vec representation(const Model& m, std::span<const double> x) {
  if (m.layers.size() <= 1) {
    require_same_dim(x.size(), m.input_dim, "model input");
    return Vec(x.begin(), x.end());
  }
  auto t = run(m, x);
  return t.inputs[m.layers.size() - 1];
}

Vec softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

int predict(const Model& m, std::span<const double> x) {
  const Vec z = forward(m, x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double cross_entropy(std::span<const double> logits, std::uint32_t label) {
  require(label < logits.size(), ErrorCode::kInvalidArgument, "label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[label];
}

double margin_loss(std::span<const double> logits, std::uint32_t label, double kappa) {
  require(label < logits.size(), ErrorCode::kInvalidArgument, "label out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != label) other = std::max(other, logits[j]);
  }
  return std::max(logits[label] - other, -kappa);
}

double loss_value(const Model& m, std::span<const double> x, LossId loss, std::uint32_t label) {
  const Vec z = forward(m, x);
  return loss == LossId::kCrossEntropy ? cross_entropy(z, label) : margin_loss(z, label);
}

Vec grad_input(const Model& m, std::span<const double> x, LossId loss, std::uint32_t label) {
  const Trace t = run(m, x);
  return backprop(m, t, m.layers.size() - 1, loss_dlogits(t.inputs.back(), loss, label), nullptr);
}

Vec input_vjp(const Model& m, std::span<const double> x, std::span<const double> dlogits) {
  require_same_dim(dlogits.size(), m.num_classes, "input_vjp");
  const Trace t = run(m, x);
  return backprop(m, t, m.layers.size() - 1, Vec(dlogits.begin(), dlogits.end()), nullptr);
}

Vec representation_vjp(const Model& m, std::span<const double> x, std::span<const double> drep) {
  require_same_dim(drep.size(), m.representation_dim(), "representation_vjp");
  if (m.layers.size() <= 1) {
    require_same_dim(x.size(), m.input_dim, "model input");
    return Vec(drep.begin(), drep.end());
  }
  const Trace t = run(m, x);
  const std::size_t top = m.layers.size() - 2;
  // backprop applies the activation derivative of `top` before descending.
  return backprop(m, t, top, Vec(drep.begin(), drep.end()), nullptr);
}

Vec flatten_params(const Model& m) {
  Vec p;
  p.reserve(m.parameter_count());
  for (const auto& L : m.layers) {
    p.insert(p.end(), L.w.begin(), L.w.end());
    p.insert(p.end(), L.b.begin(), L.b.end());
  }
  return p;
}

void unflatten_params(Model& m, std::span<const double> p) {
  require_same_dim(p.size(), m.parameter_count(), "unflatten_params");
  std::size_t k = 0;
  for (auto& L : m.layers) {
    for (double& w : L.w) w = p[k++];
    for (double& b : L.b) b = p[k++];
  }
}

Vec grad_params(const Model& m, std::span<const double> x, std::uint32_t label) {
  const Trace t = run(m, x);
  Vec g(m.parameter_count(), 0.0);
  backprop(m, t, m.layers.size() - 1, loss_dlogits(t.inputs.back(), LossId::kCrossEntropy, label),
           &g);
  return g;
}

void TrainConfig::validate(std::size_t dataset_size) const {
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::kInvalidArgument, "train: lr must be > 0");
  require(epochs >= 1, ErrorCode::kInvalidArgument, "train: epochs must be >= 1");
  require(batch >= 1 && batch <= dataset_size, ErrorCode::kInvalidArgument,
          "train: batch must be in [1, dataset size]");
  require(weight_decay >= 0.0, ErrorCode::kInvalidArgument, "train: weight_decay must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidArgument,
          "train: momentum must be in [0, 1)");
  if (attack) attack->validate();
}

Model train(const LabeledDataset& ds, Arch arch, const TrainConfig& cfg) {
  ds.validate();
  cfg.validate(ds.n);
  require(ds.num_classes >= 2, ErrorCode::kInvalidArgument, "train: need >= 2 classes");
  Model m = init_model(arch, ds.d, ds.num_classes, cfg.seed);
  if (cfg.normalize_inputs) {
    for (std::size_t j = 0; j < ds.d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < ds.n; ++i) mean += ds.row(i)[j];
      mean /= static_cast<double>(ds.n);
      double var = 0.0;
      for (std::size_t i = 0; i < ds.n; ++i) {
        const double c = ds.row(i)[j] - mean;
        var += c * c;
      }
      const double sd = std::sqrt(var / static_cast<double>(ds.n));
      m.input_shift[j] = mean;
      m.input_scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }

  const std::size_t P = m.parameter_count();
  Vec params = flatten_params(m);
  Vec velocity(P, 0.0);
  // Mask of weight (not bias) entries for decay.
  Vec decay_mask(P, 0.0);
  {
    std::size_t k = 0;
    for (const auto& L : m.layers) {
      std::fill(decay_mask.begin() + static_cast<std::ptrdiff_t>(k),
                decay_mask.begin() + static_cast<std::ptrdiff_t>(k + L.w.size()), 1.0);
      k += L.w.size() + L.b.size();
    }
  }

  const bool adversarial = cfg.attack.has_value();
  double lr = cfg.lr;
  double prev = adversarial ? 0.0 : objective(m, ds, cfg.weight_decay, cfg.threads);
  std::vector<std::size_t> perm(ds.n);
  std::vector<Vec> per_example(cfg.batch, Vec(P));
  std::vector<double> batch_loss(cfg.batch);
  const RngStream shuffle_base(cfg.seed, 0x73687566ULL);
  const RngStream attack_base(cfg.seed, 0x61647674ULL);
  std::uint64_t iteration = 0;

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Vec snapshot = params;
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream sh = shuffle_base.fork(epoch);
    for (std::size_t i = ds.n - 1; i > 0; --i) std::swap(perm[i], perm[sh.below(i + 1)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < ds.n; start += cfg.batch) {
      const std::size_t bs = std::min(cfg.batch, ds.n - start);
      parallel_for(bs, cfg.threads, [&](std::size_t k) {
        const std::size_t idx = perm[start + k];
        std::span<const double> x = ds.row(idx);
        Vec adv;
        if (adversarial) {
          RngStream rng = attack_base.fork(static_cast<std::uint64_t>(epoch) * ds.n + idx);
          adv = pgd_l2(m, x, ds.labels[idx], *cfg.attack, rng);
          x = adv;
        }
        const Trace t = run(m, x);
        batch_loss[k] = cross_entropy(t.inputs.back(), ds.labels[idx]);
        Vec& g = per_example[k];
        std::fill(g.begin(), g.end(), 0.0);
        backprop(m, t, m.layers.size() - 1,
                 loss_dlogits(t.inputs.back(), LossId::kCrossEntropy, ds.labels[idx]), &g);
      });
      Vec grad(P, 0.0);
      for (std::size_t k = 0; k < bs; ++k) {
        axpy(1.0, per_example[k], grad);
        epoch_loss += batch_loss[k];
      }
      const double inv = 1.0 / static_cast<double>(bs);
      for (std::size_t p = 0; p < P; ++p) {
        const double g = grad[p] * inv + cfg.weight_decay * decay_mask[p] * params[p];
        velocity[p] = cfg.momentum * velocity[p] + g;
        params[p] -= lr * velocity[p];
      }
      ++iteration;
      if (!all_finite(params) || !std::isfinite(epoch_loss)) {
        fail(ErrorCode::kNonFinite,
             "train: divergence (non-finite loss) at iteration " + std::to_string(iteration));
      }
      unflatten_params(m, params);
    }

    if (adversarial) {
      m.loss_curve.push_back(epoch_loss / static_cast<double>(ds.n));
      continue;
    }
    const double obj = objective(m, ds, cfg.weight_decay, cfg.threads);
    if (!std::isfinite(obj)) {
      fail(ErrorCode::kNonFinite,
           "train: divergence (non-finite loss) at iteration " + std::to_string(iteration));
    }
    if (obj > prev) {
      // Reject the epoch and halve the step.
      params = snapshot;
      unflatten_params(m, params);
      std::fill(velocity.begin(), velocity.end(), 0.0);
      lr *= 0.5;
      m.loss_curve.push_back(prev);
    } else {
      prev = obj;
      m.loss_curve.push_back(obj);
    }
  }
  return m;
}

double accuracy(const Model& m, const LabeledDataset& ds, unsigned threads) {
  ds.validate();
  const double hits = parallel_sum(ds.n, threads, [&](std::size_t i) {
    return predict(m, ds.row(i)) == static_cast<int>(ds.labels[i]) ? 1.0 : 0.0;
  });
  return hits / static_cast<double>(ds.n);
}

std::vector<unsigned char> serialize_model(const Model& m) {
  m.validate();
  std::vector<unsigned char> b{'R', 'F', 'M', '1'};
  write_u32(b, kCheckpointVersion);
  write_u32(b, static_cast<std::uint32_t>(m.arch));
  write_u32(b, static_cast<std::uint32_t>(m.input_dim));
  write_u32(b, static_cast<std::uint32_t>(m.num_classes));
  write_u32(b, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& L : m.layers) {
    write_u32(b, static_cast<std::uint32_t>(L.out));
    write_u32(b, static_cast<std::uint32_t>(L.in));
  }
  for (double v : m.input_shift) write_f64(b, v);
  for (double v : m.input_scale) write_f64(b, v);
  for (const auto& L : m.layers) {
    for (double v : L.w) write_f64(b, v);
    for (double v : L.b) write_f64(b, v);
  }
  return b;
}

void save_model(const std::string& path, const Model& m) {
  const auto bytes = serialize_model(m);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, "write error on " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorCode::kIo, "cannot rename to " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  const std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (b.size() - pos < n) fail(ErrorCode::kFormat, "load_model: size mismatch (truncated)");
  };
  auto u32 = [&] {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  auto f64 = [&] {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  };
  need(4);
  if (!(b[0] == 'R' && b[1] == 'F' && b[2] == 'M' && b[3] == '1')) {
    fail(ErrorCode::kFormat, "load_model: magic mismatch");
  }
  pos = 4;
  const std::uint32_t version = u32();
  require(version == kCheckpointVersion, ErrorCode::kFormat, "load_model: unsupported version");
  Model m;
  const std::uint32_t arch = u32();
  require(arch <= static_cast<std::uint32_t>(Arch::kMlp64x64Tanh), ErrorCode::kFormat,
          "load_model: unknown arch id");
  m.arch = static_cast<Arch>(arch);
  m.input_dim = u32();
  m.num_classes = u32();
  const std::uint32_t count = u32();
  require(count >= 1 && count <= 16, ErrorCode::kFormat, "load_model: bad layer count");
  m.layers.resize(count);
  for (auto& L : m.layers) {
    L.out = u32();
    L.in = u32();
  }
  m.input_shift.resize(m.input_dim);
  m.input_scale.resize(m.input_dim);
  for (double& v : m.input_shift) v = f64();
  for (double& v : m.input_scale) v = f64();
  for (auto& L : m.layers) {
    need((L.out * L.in + L.out) * 8);
    L.w.resize(L.out * L.in);
    L.b.resize(L.out);
    for (double& v : L.w) v = f64();
    for (double& v : L.b) v = f64();
  }
  if (pos != b.size()) fail(ErrorCode::kFormat, "load_model: size mismatch (trailing bytes)");
  m.validate();
  return m;
}

}  // namespace robfeat

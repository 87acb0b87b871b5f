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

#include <cmath>
#include <cstring>

#include "robfeat/model.hpp"
#include "test_support.hpp"

using namespace robfeat;

namespace {

// Plain re-implementation of the forward pass used as an oracle.
Vec oracle_forward(const Model& m, const Vec& x) {
  Vec h(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) h[i] = (x[i] - m.input_shift[i]) * m.input_scale[i];
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& L = m.layers[l];
    Vec z(L.out);
    for (std::size_t o = 0; o < L.out; ++o) {
      double s = L.b[o];
      for (std::size_t i = 0; i < L.in; ++i) s += L.w[o * L.in + i] * h[i];
      z[o] = s;
    }
    if (l + 1 < m.layers.size()) {
      for (double& v : z) v = m.arch == Arch::kMlp64x64Tanh ? std::tanh(v) : std::max(0.0, v);
    }
    h = z;
  }
  return h;
}

Model random_model(Arch a, std::size_t d, std::size_t c, std::uint64_t seed) {
  Model m = init_model(a, d, c, seed);
  RngStream r(seed, 99);
  for (std::size_t i = 0; i < d; ++i) {
    m.input_shift[i] = r.uniform(-0.5, 0.5);
    m.input_scale[i] = r.uniform(0.5, 2.0);
  }
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Model, ArchNamesRoundTrip) {
  for (Arch a : all_archs()) EXPECT_EQ(parse_arch(arch_name(a)), a);
  EXPECT_THROW(parse_arch("resnet"), Error);
  EXPECT_EQ(arch_hidden(Arch::kMlp64x64), (std::vector<std::size_t>{64, 64}));
  EXPECT_TRUE(arch_hidden(Arch::kLinear).empty());
}

TEST(Model, InitIsSeededAndBoundedByFanIn) {
  const Model a = init_model(Arch::kMlp32, 5, 3, 7);
  const Model b = init_model(Arch::kMlp32, 5, 3, 7);
  const Model c = init_model(Arch::kMlp32, 5, 3, 8);
  EXPECT_EQ(flatten_params(a), flatten_params(b));
  EXPECT_NE(flatten_params(a), flatten_params(c));
  for (const auto& L : a.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.in));
    for (double w : L.w) EXPECT_LE(std::abs(w), bound);
    for (double v : L.b) EXPECT_LE(std::abs(v), bound);
  }
  EXPECT_EQ(a.parameter_count(), 5u * 32 + 32 + 32 * 3 + 3);
}

TEST(Model, ForwardMatchesOracle) {
  RngStream r(31, 0);
  for (Arch a : all_archs()) {
    const Model m = random_model(a, 6, 4, 3);
    for (int k = 0; k < 10; ++k) {
      Vec x(6);
      for (auto& v : x) v = r.normal();
      const Vec z = forward(m, x);
      const Vec o = oracle_forward(m, x);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(z[j], o[j], 1e-12);
    }
  }
}

TEST(Model, SoftmaxAndLosses) {
  const Vec z = {1000.0, 999.0, -5.0};
  const Vec p = softmax(z);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0) + std::exp(-1005.0)), 1e-15);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_NEAR(cross_entropy(z, 1), std::log1p(std::exp(1.0)) , 1e-12);
  EXPECT_DOUBLE_EQ(margin_loss(z, 0), 1.0);
  EXPECT_DOUBLE_EQ(margin_loss(z, 2), 0.0);
  EXPECT_DOUBLE_EQ(margin_loss(z, 2, 2000.0), -1005.0);
}

TEST(Model, InputGradientsMatchFiniteDifferences) {
  RngStream r(32, 0);
  for (Arch a : all_archs()) {
    const Model m = random_model(a, 5, 3, 4);
    for (int k = 0; k < 20; ++k) {
      Vec x(5);
      for (auto& v : x) v = r.normal();
      const auto y = static_cast<std::uint32_t>(r.below(3));
      for (LossId loss : {LossId::kCrossEntropy, LossId::kMargin}) {
        const Vec g = grad_input(m, x, loss, y);
        const Vec fd =
            finite_diff_grad([&](const Vec& z) { return loss_value(m, z, loss, y); }, x, 1e-6);
        for (std::size_t i = 0; i < 5; ++i) EXPECT_LT(rel_err(g[i], fd[i]), 1e-5) << arch_name(a);
      }
    }
  }
}

TEST(Model, ParameterGradientsMatchFiniteDifferences) {
  RngStream r(33, 0);
  for (Arch a : all_archs()) {
    Model m = random_model(a, 4, 3, 5);
    Vec x(4);
    for (auto& v : x) v = r.normal();
    const std::uint32_t y = 2;
    const Vec g = grad_params(m, x, y);
    const Vec p0 = flatten_params(m);
    ASSERT_EQ(g.size(), p0.size());
    for (int k = 0; k < 30; ++k) {
      const std::size_t j = r.below(p0.size());
      Vec p = p0;
      const double h = 1e-6;
      p[j] = p0[j] + h;
      unflatten_params(m, p);
      const double fp = cross_entropy(forward(m, x), y);
      p[j] = p0[j] - h;
      unflatten_params(m, p);
      const double fm = cross_entropy(forward(m, x), y);
      unflatten_params(m, p0);
      EXPECT_LT(rel_err(g[j], (fp - fm) / (2 * h)), 1e-5) << arch_name(a) << " param " << j;
    }
  }
}

TEST(Model, RepresentationVjpMatchesFiniteDifferences) {
  RngStream r(34, 0);
  const Model m = random_model(Arch::kMlp64x64Tanh, 4, 3, 6);
  Vec x(4), w(m.representation_dim());
  for (auto& v : x) v = r.normal();
  for (auto& v : w) v = r.normal();
  const Vec g = representation_vjp(m, x, w);
  const Vec fd = finite_diff_grad([&](const Vec& z) { return dot(representation(m, z), w); }, x, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(rel_err(g[i], fd[i]), 1e-5);
  const Model lin = random_model(Arch::kLinear, 4, 3, 6);
  EXPECT_EQ(representation(lin, x), x);
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  const auto dir = robfeat::testing::scratch_dir();
  for (Arch a : all_archs()) {
    const Model m = random_model(a, 7, 3, 8);
    const auto p = (dir / (std::string(arch_name(a)) + ".rfm")).string();
    save_model(p, m);
    const Model back = load_model(p);
    EXPECT_EQ(back.arch, m.arch);
    const Vec x = flatten_params(m), y = flatten_params(back);
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(0, std::memcmp(x.data(), y.data(), x.size() * 8));
    EXPECT_EQ(back.input_shift, m.input_shift);
    EXPECT_EQ(back.input_scale, m.input_scale);
    EXPECT_EQ(serialize_model(back), serialize_model(m));
    EXPECT_EQ(std::string(robfeat::testing::read_bytes(p).data(), 4), "RFM1");
  }
}

TEST(Model, CorruptCheckpointRejected) {
  const auto dir = robfeat::testing::scratch_dir();
  save_model((dir / "m.rfm").string(), random_model(Arch::kMlp32, 3, 2, 1));
  auto b = robfeat::testing::read_bytes(dir / "m.rfm");
  b.resize(b.size() - 8);
  robfeat::testing::write_bytes(dir / "t.rfm", b);
  EXPECT_THROW(load_model((dir / "t.rfm").string()), Error);
}

namespace {

LabeledDataset blobs(std::size_t n, std::uint64_t seed) {
  LabeledDataset ds;
  ds.d = 2;
  ds.num_classes = 3;
  RngStream r(seed, 0);
  const double cx[3] = {0.0, 3.0, -3.0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::uint32_t>(i % 3);
    ds.push(Vec{cx[y] + 0.5 * r.normal(), 0.5 * r.normal() + (y == 0 ? 2.0 : 0.0)}, y);
  }
  return ds;
}

}  // namespace

TEST(Train, LearnsSeparableBlobsWithNonincreasingLoss) {
  const auto ds = blobs(300, 1);
  TrainConfig c;
  c.epochs = 20;
  c.seed = 3;
  const Model m = train(ds, Arch::kMlp32, c);
  EXPECT_GT(accuracy(m, blobs(300, 2)), 0.95);
  ASSERT_EQ(m.loss_curve.size(), 20u);
  for (std::size_t i = 1; i < m.loss_curve.size(); ++i) {
    EXPECT_LE(m.loss_curve[i], m.loss_curve[i - 1]);
  }
}

TEST(Train, ResultIsThreadCountInvariant) {
  const auto ds = blobs(200, 4);
  TrainConfig c;
  c.epochs = 5;
  c.seed = 9;
  c.normalize_inputs = true;
  c.threads = 1;
  const Model a = train(ds, Arch::kMlp64x64, c);
  c.threads = 4;
  const Model b = train(ds, Arch::kMlp64x64, c);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  AttackConfig atk = AttackConfig::training_default(0.3);
  c.attack = atk;
  c.threads = 1;
  const Model e = train(ds, Arch::kLinear, c);
  c.threads = 3;
  const Model f = train(ds, Arch::kLinear, c);
  EXPECT_EQ(serialize_model(e), serialize_model(f));
}

TEST(Train, InvalidConfigAndDivergence) {
  const auto ds = blobs(30, 5);
  TrainConfig c;
  c.lr = -1.0;
  EXPECT_THROW(train(ds, Arch::kLinear, c), Error);
  c = TrainConfig{};
  c.batch = 10;
  c.lr = 1e300;
  c.attack = AttackConfig::training_default(0.1);
  try {
    train(ds, Arch::kMlp32, c);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

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

#include "robfeat/attack.hpp"
#include "test_support.hpp"

using namespace robfeat;

namespace {

Model linear_binary(const Vec& w0, const Vec& w1, double b0, double b1) {
  Model m = init_model(Arch::kLinear, w0.size(), 2, 0);
  auto& L = m.layers.front();
  for (std::size_t i = 0; i < w0.size(); ++i) {
    L.w[i] = w0[i];
    L.w[w0.size() + i] = w1[i];
  }
  L.b = {b0, b1};
  return m;
}

LabeledDataset random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  LabeledDataset ds;
  ds.d = d;
  ds.num_classes = 2;
  RngStream r(seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec x(d);
    for (auto& v : x) v = r.normal();
    ds.push(x, static_cast<std::uint32_t>(r.below(2)));
  }
  return ds;
}

}  // namespace

TEST(Pgd, OneFullStepOnLinearModelIsClosedFormOptimum) {
  RngStream r(41, 0);
  for (int k = 0; k < 100; ++k) {
    Vec w0(5), w1(5), x(5);
    for (auto& v : w0) v = r.normal();
    for (auto& v : w1) v = r.normal();
    for (auto& v : x) v = r.normal();
    const Model m = linear_binary(w0, w1, r.normal(), r.normal());
    const std::uint32_t y = static_cast<std::uint32_t>(r.below(2));
    AttackConfig c;
    c.epsilon = r.uniform(0.1, 2.0);
    c.step_size = c.epsilon;
    c.steps = 1;
    RngStream rr(1, 0);
    const Vec adv = pgd_l2(m, x, y, c, rr);
    // The loss increases fastest along w_other - w_y; the optimum is that
    // direction scaled to the budget.
    const Vec dir = y == 0 ? sub(w1, w0) : sub(w0, w1);
    const double n = norm2(dir);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(adv[i], x[i] + c.epsilon * dir[i] / n, 1e-10);
  }
}

TEST(Pgd, StaysInBallAndBox) {
  RngStream r(42, 0);
  Model m = init_model(Arch::kMlp32, 8, 3, 2);
  for (int k = 0; k < 100; ++k) {
    Vec x(8);
    for (auto& v : x) v = r.uniform();
    AttackConfig c;
    c.epsilon = r.uniform(0.05, 1.5);
    c.step_size = r.uniform(0.01, 1.0);
    c.steps = 1 + static_cast<std::uint32_t>(r.below(30));
    c.random_start = k % 2 == 0;
    c.clip01 = k % 3 == 0;
    c.mode = k % 5 == 0 ? AttackMode::kTargeted : AttackMode::kUntargeted;
    c.loss = k % 4 == 0 ? AttackLoss::kMargin : AttackLoss::kCrossEntropy;
    RngStream rr(k, 0);
    const Vec adv = pgd_l2(m, x, static_cast<std::uint32_t>(k % 3), c, rr);
    EXPECT_LE(distance2(adv, x), c.epsilon + 1e-9);
    if (c.clip01) {
      for (double v : adv) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Pgd, TargetedReachesEasyTarget) {
  const Model m = linear_binary({1.0, 0.0}, {-1.0, 0.0}, 0.0, 0.0);
  AttackConfig c;
  c.mode = AttackMode::kTargeted;
  c.epsilon = 1.0;
  c.step_size = 0.25;
  c.steps = 10;
  RngStream rr(0, 0);
  const Vec adv = pgd_l2(m, Vec{0.2, 0.0}, 1, c, rr);
  EXPECT_EQ(predict(m, adv), 1);
  EXPECT_NEAR(adv[0], -0.8, 1e-12);
}

TEST(Pgd, ZeroGradientKeepsIterate) {
  const Model m = linear_binary({0.0, 0.0}, {0.0, 0.0}, 0.0, 0.0);
  AttackConfig c;
  c.steps = 4;
  AttackStats st;
  RngStream rr(0, 0);
  const Vec x = {0.3, 0.4};
  EXPECT_EQ(pgd_l2(m, x, 0, c, rr, &st), x);
  EXPECT_EQ(st.zero_grad_steps, 4u);
}

TEST(Pgd, ConfigValidation) {
  AttackConfig c;
  c.epsilon = -1;
  EXPECT_THROW(c.validate(), Error);
  c = AttackConfig{};
  c.steps = 0;
  EXPECT_THROW(c.validate(), Error);
  c = AttackConfig{};
  c.step_size = 0.0;
  EXPECT_NO_THROW(c.validate());
  const auto t = AttackConfig::training_default(0.5);
  EXPECT_EQ(t.steps, 7u);
  EXPECT_DOUBLE_EQ(t.step_size, 0.1);
}

TEST(AttackDataset, DeterministicAndThreadInvariant) {
  const auto ds = random_points(60, 4, 3);
  const Model m = init_model(Arch::kMlp32, 4, 2, 5);
  AttackConfig c;
  c.random_start = true;
  std::vector<Vec> a1, a2;
  const auto r1 = attack_dataset(m, ds, c, 7, 1, nullptr, &a1);
  const auto r2 = attack_dataset(m, ds, c, 7, 4, nullptr, &a2);
  EXPECT_EQ(a1, a2);
  ASSERT_EQ(r1.size(), 60u);
  for (std::size_t i = 0; i < r1.size(); ++i) {
    EXPECT_EQ(r1[i].index, i);
    EXPECT_EQ(r1[i].success, r1[i].adv_label != r1[i].clean_label);
    EXPECT_NEAR(r1[i].l2_dist, distance2(a1[i], ds.row(i)), 1e-15);
  }
}

TEST(AttackDataset, CsvHeader) {
  const auto dir = robfeat::testing::scratch_dir();
  const auto ds = random_points(5, 2, 1);
  const Model m = init_model(Arch::kLinear, 2, 2, 1);
  write_attack_csv((dir / "a.csv").string(), attack_dataset(m, ds, AttackConfig{}, 1, 1));
  const auto b = robfeat::testing::read_bytes(dir / "a.csv");
  const std::string s(b.begin(), b.end());
  EXPECT_EQ(s.substr(0, s.find('\n')), "sample_index,clean_label,adv_label,l2_dist,success");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 6);
}

TEST(AccuracyVsSteps, NonincreasingForMonotoneAttack) {
  const auto ds = random_points(200, 3, 8);
  TrainConfig tc;
  tc.epochs = 5;
  const Model m = train(ds, Arch::kMlp32, tc);
  AttackConfig c;
  c.epsilon = 0.3;
  c.step_size = 0.05;
  const std::vector<std::uint32_t> grid = {1, 2, 5, 10, 40};
  const auto curve = accuracy_vs_steps(m, ds, c, grid, 1, 2);
  ASSERT_EQ(curve.size(), grid.size());
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i], curve[i - 1] + 0.005);
  EXPECT_LE(curve.front(), accuracy(m, ds));
  EXPECT_THROW(accuracy_vs_steps(m, ds, c, {5, 1}, 1, 1), Error);
}

// Copyright (c) 2026 The prosody-dub Authors
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

#include "prosody/nn.hpp"

#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace prosody::nn {
namespace {

using testing::gradient_error;
using testing::random_matrix;

constexpr double kTol = 1e-6;

// Every layer is checked with loss = sum(probe .* layer(x)).
double probe_loss(const Mat<double>& y, const Mat<double>& probe) {
  return (y.array() * probe.array()).sum();
}

TEST(Linear, ForwardMatchesDefinition) {
  Linear<double> l(2, 3);
  l.weight.value << 1, 2, 3, 4, 5, 6;
  l.bias.value << 0.5, -0.5, 1;
  Mat<double> x(1, 2);
  x << 1, -1;
  const Mat<double> y = l.forward(x);
  EXPECT_DOUBLE_EQ(y(0, 0), -2.5);
  EXPECT_DOUBLE_EQ(y(0, 1), -3.5);
  EXPECT_DOUBLE_EQ(y(0, 2), -2.0);
}

TEST(Linear, Gradients) {
  std::mt19937_64 rng(1);
  Linear<double> l(5, 4);
  l.init(rng);
  l.bias.value = random_matrix(1, 4, rng);
  Mat<double> x = random_matrix(7, 5, rng);
  const Mat<double> probe = random_matrix(7, 4, rng);
  const Mat<double> dx = l.backward(x, probe);
  auto loss = [&] { return probe_loss(l.forward(x), probe); };
  EXPECT_LT(gradient_error(x, dx, loss), kTol);
  EXPECT_LT(gradient_error(l.weight.value, l.weight.grad, loss), kTol);
  EXPECT_LT(gradient_error(l.bias.value, l.bias.grad, loss), kTol);
}

TEST(Conv1d, PreservesLengthAndMatchesDirectSum) {
  std::mt19937_64 rng(2);
  Conv1d<double> c(3, 2, 5);
  c.init(rng);
  c.bias.value = random_matrix(1, 2, rng);
  const Mat<double> x = random_matrix(9, 3, rng);
  const Mat<double> y = c.forward(x);
  ASSERT_EQ(y.rows(), 9);
  for (int t = 0; t < 9; ++t) {
    for (int o = 0; o < 2; ++o) {
      double expected = c.bias.value(0, o);
      for (int j = 0; j < 5; ++j) {
        const int src = t + j - 2;
        if (src < 0 || src >= 9) continue;
        for (int i = 0; i < 3; ++i) expected += x(src, i) * c.weight.value(j * 3 + i, o);
      }
      EXPECT_NEAR(y(t, o), expected, 1e-12);
    }
  }
}

TEST(Conv1d, EvenKernelRejected) { EXPECT_THROW(Conv1d<double>(2, 2, 4), ConfigError); }

TEST(Conv1d, Gradients) {
  std::mt19937_64 rng(3);
  Conv1d<double> c(4, 3, 3);
  c.init(rng);
  Mat<double> x = random_matrix(6, 4, rng);
  const Mat<double> probe = random_matrix(6, 3, rng);
  Conv1d<double>::Cache cache;
  c.forward(x, &cache);
  const Mat<double> dx = c.backward(cache, probe);
  auto loss = [&] { return probe_loss(c.forward(x), probe); };
  EXPECT_LT(gradient_error(x, dx, loss), kTol);
  EXPECT_LT(gradient_error(c.weight.value, c.weight.grad, loss), kTol);
  EXPECT_LT(gradient_error(c.bias.value, c.bias.grad, loss), kTol);
}

TEST(Relu, BackwardMasksNegativeInputs) {
  Mat<double> pre(1, 3);
  pre << -1, 0.5, 2;
  Mat<double> dy(1, 3);
  dy << 7, 8, 9;
  const Mat<double> dx = relu_backward<double>(pre, dy);
  EXPECT_EQ(dx(0, 0), 0.0);
  EXPECT_EQ(dx(0, 1), 8.0);
  EXPECT_EQ(dx(0, 2), 9.0);
}

TEST(LayerNorm, NormalizesEachFrame) {
  std::mt19937_64 rng(4);
  LayerNorm<double> n(6);
  const Mat<double> y = n.forward(random_matrix(5, 6, rng, 3.0));
  for (int t = 0; t < 5; ++t) {
    EXPECT_NEAR(y.row(t).mean(), 0.0, 1e-12);
    EXPECT_NEAR((y.row(t).array() - y.row(t).mean()).square().mean(), 1.0, 1e-4);
  }
}

TEST(LayerNorm, Gradients) {
  std::mt19937_64 rng(5);
  LayerNorm<double> n(5);
  n.gain.value = random_matrix(1, 5, rng);
  n.bias.value = random_matrix(1, 5, rng);
  Mat<double> x = random_matrix(4, 5, rng);
  const Mat<double> probe = random_matrix(4, 5, rng);
  LayerNorm<double>::Cache cache;
  n.forward(x, &cache);
  const Mat<double> dx = n.backward(cache, probe);
  auto loss = [&] { return probe_loss(n.forward(x), probe); };
  EXPECT_LT(gradient_error(x, dx, loss), kTol);
  EXPECT_LT(gradient_error(n.gain.value, n.gain.grad, loss), kTol);
  EXPECT_LT(gradient_error(n.bias.value, n.bias.grad, loss), kTol);
}

TEST(Lstm, ForgetBiasStartsAtOne) {
  std::mt19937_64 rng(6);
  LstmDirection<double> l(3, 4);
  l.init(rng);
  EXPECT_EQ(l.bias.value.block(0, 4, 1, 4), Mat<double>::Ones(1, 4));
  EXPECT_EQ(l.bias.value.block(0, 0, 1, 4), Mat<double>::Zero(1, 4));
}

TEST(Lstm, IsCausal) {
  std::mt19937_64 rng(7);
  LstmDirection<double> l(3, 4);
  l.init(rng);
  Mat<double> x = random_matrix(8, 3, rng);
  const Mat<double> before = l.forward(x, nullptr);
  x.row(5).setConstant(9.0);
  const Mat<double> after = l.forward(x, nullptr);
  EXPECT_EQ(before.topRows(5), after.topRows(5));
  EXPECT_NE(before.row(5), after.row(5));
}

TEST(Lstm, Gradients) {
  std::mt19937_64 rng(8);
  LstmDirection<double> l(3, 4);
  l.init(rng);
  l.bias.value = random_matrix(1, 16, rng, 0.5);
  Mat<double> x = random_matrix(6, 3, rng);
  const Mat<double> probe = random_matrix(6, 4, rng);
  LstmDirection<double>::Cache cache;
  l.forward(x, &cache);
  const Mat<double> dx = l.backward(x, cache, probe);
  auto loss = [&] { return probe_loss(l.forward(x, nullptr), probe); };
  EXPECT_LT(gradient_error(x, dx, loss), kTol);
  EXPECT_LT(gradient_error(l.input_weight.value, l.input_weight.grad, loss), kTol);
  EXPECT_LT(gradient_error(l.recurrent_weight.value, l.recurrent_weight.grad, loss), kTol);
  EXPECT_LT(gradient_error(l.bias.value, l.bias.grad, loss), kTol);
}

TEST(BiLstm, Gradients) {
  std::mt19937_64 rng(9);
  BiLstm<double> l(3, 2);
  l.init(rng);
  Mat<double> x = random_matrix(5, 3, rng);
  const Mat<double> probe = random_matrix(5, 4, rng);
  BiLstm<double>::Cache cache;
  l.forward(x, &cache);
  const Mat<double> dx = l.backward(x, cache, probe);
  auto loss = [&] { return probe_loss(l.forward(x, nullptr), probe); };
  EXPECT_LT(gradient_error(x, dx, loss), kTol);
  l.for_each_parameter("bilstm", [&](const std::string& name, Parameter<double>& p) {
    EXPECT_LT(gradient_error(p.value, p.grad, loss), kTol) << name;
  });
}

TEST(BiLstm, BackwardDirectionSeesTheFuture) {
  std::mt19937_64 rng(10);
  BiLstm<double> l(2, 3);
  l.init(rng);
  Mat<double> x = random_matrix(6, 2, rng);
  const Mat<double> before = l.forward(x, nullptr);
  x.row(5).setConstant(4.0);
  const Mat<double> after = l.forward(x, nullptr);
  EXPECT_EQ(before.block(0, 0, 5, 3), after.block(0, 0, 5, 3));
  EXPECT_NE(before.block(0, 3, 1, 3), after.block(0, 3, 1, 3));
}

}  // namespace
}  // namespace prosody::nn

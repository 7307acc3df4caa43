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

#include "prosody/losses.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "gradcheck.hpp"
#include "kld_oracle.hpp"

namespace prosody::losses {
namespace {

using encoder::GaussianPosterior;
using testing::scalar_posterior;
using Posteriors = std::vector<GaussianPosterior<double>>;

GaussianPosterior<double> random_posterior(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.7);
  GaussianPosterior<double> p{Vec<double>(dim), Vec<double>(dim)};
  for (int i = 0; i < dim; ++i) {
    p.mean(i) = n(rng);
    p.log_variance(i) = n(rng);
  }
  return p;
}

TEST(Kld, ClosedFormValues) {
  EXPECT_EQ(kld_diag_standard(GaussianPosterior<double>{Vec<double>::Zero(7), Vec<double>::Zero(7)}), 0.0);
  EXPECT_DOUBLE_EQ(kld_diag_standard(scalar_posterior(1.0, 0.0)), 0.5);
  EXPECT_NEAR(kld_diag_standard(scalar_posterior(0.0, 1.0)), 0.5 * (std::exp(1.0) - 2.0), 1e-15);
  EXPECT_NEAR(kld_diag_standard(scalar_posterior(0.0, 1.0)), 0.35914, 1e-5);
}

TEST(Kld, AgreesWithMonteCarlo) {
  std::mt19937_64 rng(1);
  for (const auto& p : {scalar_posterior(1.0, 0.0), scalar_posterior(0.0, 1.0), random_posterior(4, rng)}) {
    const double exact = kld_diag_standard(p);
    EXPECT_NEAR(testing::monte_carlo_kld(p, 200000, rng), exact, 2e-2 * std::max(exact, 0.1));
  }
}

TEST(Kld, NonFiniteInputIsNumericError) {
  EXPECT_THROW(kld_diag_standard(scalar_posterior(std::numeric_limits<double>::quiet_NaN(), 0.0)),
               NumericError);
  EXPECT_THROW(kld_diag_standard(scalar_posterior(0.0, std::numeric_limits<double>::infinity())),
               NumericError);
}

TEST(Kld, NonNegativeAndZeroOnlyAtStandardNormal) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) EXPECT_GT(kld_diag_standard(random_posterior(5, rng)), 0.0);
}

TEST(LengthWeightedKld, HandEvaluatedExample) {
  const Posteriors posts = {scalar_posterior(std::sqrt(2.0), 0.0), scalar_posterior(std::sqrt(2.0), 0.0)};
  const std::vector<int> lengths = {5, 20};
  EXPECT_NEAR(length_weighted_kld(posts, lengths, 0.08), 0.5 * (std::exp(-0.4) + std::exp(-1.6)), 1e-12);
  EXPECT_NEAR(length_weighted_kld(posts, lengths, 0.08), 0.43611, 1e-5);
  const auto w = length_weights(lengths, 0.08);
  EXPECT_NEAR(w[0] / w[1], std::exp(1.2), 1e-12);
  EXPECT_NEAR(w[0] / w[1], 3.32012, 1e-5);
}

TEST(LengthWeightedKld, ZeroBetaIsPlainMean) {
  std::mt19937_64 rng(3);
  const Posteriors posts = {random_posterior(3, rng), random_posterior(3, rng), random_posterior(3, rng)};
  const std::vector<int> lengths = {1, 4, 9};
  const double mean = (kld_diag_standard(posts[0]) + kld_diag_standard(posts[1]) +
                       kld_diag_standard(posts[2])) / 3.0;
  EXPECT_NEAR(length_weighted_kld(posts, lengths, 0.0), mean, 1e-12);
}

TEST(LengthWeightedKld, CountMismatchAndBadLengths) {
  const Posteriors posts = {scalar_posterior(1.0, 0.0)};
  const std::vector<int> two = {1, 2}, zero = {0};
  EXPECT_THROW(length_weighted_kld(posts, two, 0.08), CountError);
  EXPECT_THROW(length_weighted_kld(posts, zero, 0.08), CountError);
}

TEST(LengthWeightedKld, BoundedByUnweightedMeanAndMonotoneInLength) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 30), count(1, 5);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = count(rng);
    Posteriors posts;
    std::vector<int> lengths;
    for (int i = 0; i < k; ++i) {
      posts.push_back(random_posterior(3, rng));
      lengths.push_back(len(rng));
    }
    const double weighted = length_weighted_kld(posts, lengths, 0.08);
    EXPECT_LE(weighted, length_weighted_kld(posts, lengths, 0.0));
    auto longer = lengths;
    longer[trial % k] += 1;
    EXPECT_LT(length_weighted_kld(posts, longer, 0.08), weighted);
  }
}

TEST(TotalLoss, CombinesTermsWithWeights) {
  // Prosody KLD 0.5 (K=1, beta=0), noise KLD 0.25.
  const Posteriors prosody = {scalar_posterior(1.0, 0.0)};
  const Posteriors noise = {scalar_posterior(std::sqrt(0.5), 0.0)};
  const std::vector<int> lengths = {3};
  const LossWeights w{0.04, 0.04, 0.0, 0.0};
  const auto b = total_loss(2.0, prosody, noise, lengths, w);
  EXPECT_NEAR(b.prosody_kld, 0.5, 1e-15);
  EXPECT_NEAR(b.noise_kld, 0.25, 1e-15);
  EXPECT_NEAR(b.total, 2.03, 1e-12);
  EXPECT_TRUE(b.finite());
  EXPECT_DOUBLE_EQ(total_loss(2.0, prosody, noise, lengths, LossWeights{0, 0, 0.08, 0.08}).total, 2.0);
  const Posteriors standard = {scalar_posterior(0.0, 0.0)};
  const auto s = total_loss(1.5, standard, standard, lengths, LossWeights{});
  EXPECT_EQ(s.prosody_kld, 0.0);
  EXPECT_EQ(s.total, 1.5);
}

TEST(TotalLoss, RejectsNegativeWeights) {
  const Posteriors p = {scalar_posterior(0.0, 0.0)};
  const std::vector<int> lengths = {1};
  EXPECT_THROW(total_loss(1.0, p, p, lengths, LossWeights{-0.1, 0.04, 0.08, 0.08}), ConfigError);
  EXPECT_THROW(LossWeights({0.04, 0.04, std::nan(""), 0.08}).validate(), ConfigError);
}

TEST(LengthWeightedKld, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Posteriors posts = {random_posterior(4, rng), random_posterior(4, rng)};
  const std::vector<int> lengths = {3, 11};
  Mat<double> dm, dlv;
  length_weighted_kld_gradient(posts, lengths, 0.08, 1.7, dm, dlv);
  for (int k = 0; k < 2; ++k) {
    Mat<double> mean = posts[k].mean.transpose(), lv = posts[k].log_variance.transpose();
    auto loss = [&] {
      Posteriors copy = posts;
      copy[k].mean = mean.transpose();
      copy[k].log_variance = lv.transpose();
      return 1.7 * length_weighted_kld(copy, lengths, 0.08);
    };
    EXPECT_LT(testing::gradient_error(mean, dm.row(k), loss), 1e-7);
    EXPECT_LT(testing::gradient_error(lv, dlv.row(k), loss), 1e-7);
  }
}

TEST(Reconstruction, L1AndGradient) {
  Mat<double> a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 0, 2, 5, 4;
  EXPECT_DOUBLE_EQ(l1_reconstruction(a, b), 0.75);
  const Mat<double> g = l1_reconstruction_gradient(a, b, 2.0);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(g(1, 0), -0.5);
  EXPECT_THROW(l1_reconstruction<double>(a, Mat<double>(3, 2)), ShapeError);
}

TEST(Batch, AggregationIsPermutationInvariantMean) {
  std::vector<LossBreakdown> items = {{1, 2, 3, 4}, {5, 6, 7, 8}, {0.5, 0.25, 0.125, 1}};
  const auto a = aggregate_batch(items);
  EXPECT_NEAR(a.reconstruction, 6.5 / 3, 1e-15);
  std::reverse(items.begin(), items.end());
  const auto b = aggregate_batch(items);
  EXPECT_NEAR(a.total, b.total, 1e-15);
  EXPECT_NEAR(a.prosody_kld, b.prosody_kld, 1e-15);
}

TEST(Weights, DefaultsAndJson) {
  const LossWeights w;
  EXPECT_EQ(w.alpha1, 0.04);
  EXPECT_EQ(w.beta2, 0.08);
  const nlohmann::json j = LossWeights{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(j.get<LossWeights>().beta1, 0.3);
}

}  // namespace
}  // namespace prosody::losses

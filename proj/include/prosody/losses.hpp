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

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "prosody/common.hpp"
#include "prosody/encoder.hpp"

namespace prosody::losses {

using encoder::GaussianPosterior;

struct LossWeights {
  double alpha1 = 0.04;  // prosody KLD weight
  double alpha2 = 0.04;  // noise KLD weight
  double beta1 = 0.08;   // prosody length coefficient
  double beta2 = 0.08;   // noise length coefficient

  void validate() const {
    for (double v : {alpha1, alpha2, beta1, beta2}) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ConfigError("loss weights must be finite and non-negative");
      }
    }
  }

  bool operator==(const LossWeights&) const = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha1", w.alpha1}, {"alpha2", w.alpha2}, {"beta1", w.beta1}, {"beta2", w.beta2}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.alpha1 = j.value("alpha1", w.alpha1);
  w.alpha2 = j.value("alpha2", w.alpha2);
  w.beta1 = j.value("beta1", w.beta1);
  w.beta2 = j.value("beta2", w.beta2);
}

struct LossBreakdown {
  double reconstruction = 0.0;
  double prosody_kld = 0.0;
  double noise_kld = 0.0;
  double total = 0.0;

  bool finite() const {
    return std::isfinite(reconstruction) && std::isfinite(prosody_kld) &&
           std::isfinite(noise_kld) && std::isfinite(total);
  }
  bool operator==(const LossBreakdown&) const = default;
};

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"reconstruction", b.reconstruction},
       {"prosody_kld", b.prosody_kld},
       {"noise_kld", b.noise_kld},
       {"total", b.total}};
}

// KL(N(mean, diag(exp(log_variance))) || N(0, I)), summed over dimensions.
template <typename S>
S kld_diag_standard(const GaussianPosterior<S>& posterior) {
  if (posterior.mean.size() != posterior.log_variance.size()) {
    throw ShapeError("posterior mean and log-variance differ in size");
  }
  if (!posterior.mean.allFinite() || !posterior.log_variance.allFinite()) {
    throw NumericError("posterior has non-finite entries");
  }
  const auto m = posterior.mean.array();
  const auto lv = posterior.log_variance.array();
  return S(0.5) * (m.square() + lv.exp() - lv - S(1)).sum();
}

// Per-phrase factor exp(-beta * L_k) / K applied to each phrase's KLD.
inline std::vector<double> length_weights(std::span<const int> lengths, double beta) {
  if (lengths.empty()) throw CountError("length-weighted KLD needs at least one phrase");
  std::vector<double> w(lengths.size());
  const double inv_k = 1.0 / static_cast<double>(lengths.size());
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    if (lengths[k] < 1) throw CountError("phrase lengths must be positive");
    w[k] = std::exp(-beta * static_cast<double>(lengths[k])) * inv_k;
  }
  return w;
}

// (1/K) * sum_k exp(-beta * L_k) * KLD(h_k || N(0, I))
template <typename S>
S length_weighted_kld(const std::vector<GaussianPosterior<S>>& posteriors,
                      std::span<const int> lengths, double beta) {
  if (posteriors.size() != lengths.size()) {
    throw CountError("got " + std::to_string(posteriors.size()) + " posteriors for " +
                     std::to_string(lengths.size()) + " phrase lengths");
  }
  const auto w = length_weights(lengths, beta);
  S total = S(0);
  for (std::size_t k = 0; k < posteriors.size(); ++k) {
    total += static_cast<S>(w[k]) * kld_diag_standard(posteriors[k]);
  }
  return total;
}

// Gradient of scale * length_weighted_kld with respect to every posterior's
// mean and log-variance, written as K x D matrices.
template <typename S>
void length_weighted_kld_gradient(const std::vector<GaussianPosterior<S>>& posteriors,
                                  std::span<const int> lengths, double beta, double scale,
                                  Mat<S>& d_mean, Mat<S>& d_log_variance) {
  const auto w = length_weights(lengths, beta);
  const auto k_count = static_cast<Eigen::Index>(posteriors.size());
  const Eigen::Index dim = k_count ? posteriors.front().mean.size() : 0;
  d_mean.setZero(k_count, dim);
  d_log_variance.setZero(k_count, dim);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const S c = static_cast<S>(scale * w[k]);
    d_mean.row(k) = c * posteriors[k].mean.transpose();
    d_log_variance.row(k) =
        (c * S(0.5) * (posteriors[k].log_variance.array().exp() - S(1))).matrix().transpose();
  }
}

template <typename S>
LossBreakdown total_loss(double reconstruction,
                         const std::vector<GaussianPosterior<S>>& prosody_posteriors,
                         const std::vector<GaussianPosterior<S>>& noise_posteriors,
                         std::span<const int> lengths, const LossWeights& weights) {
  weights.validate();
  LossBreakdown b;
  b.reconstruction = reconstruction;
  b.prosody_kld = static_cast<double>(length_weighted_kld(prosody_posteriors, lengths, weights.beta1));
  b.noise_kld = static_cast<double>(length_weighted_kld(noise_posteriors, lengths, weights.beta2));
  b.total = b.reconstruction + weights.alpha1 * b.prosody_kld + weights.alpha2 * b.noise_kld;
  return b;
}

// Mean absolute error over all entries.
template <typename S>
S l1_reconstruction(const Mat<S>& predicted, const Mat<S>& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ShapeError("prediction is " + std::to_string(predicted.rows()) + "x" +
                     std::to_string(predicted.cols()) + ", target is " +
                     std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  }
  return (predicted - target).cwiseAbs().sum() / static_cast<S>(predicted.size());
}

template <typename S>
Mat<S> l1_reconstruction_gradient(const Mat<S>& predicted, const Mat<S>& target, double scale) {
  const S c = static_cast<S>(scale / static_cast<double>(predicted.size()));
  return ((predicted - target).array().sign() * c).matrix();
}

// Mean over utterances; permutation-invariant up to floating-point summation
// order.
inline LossBreakdown aggregate_batch(std::span<const LossBreakdown> items) {
  LossBreakdown out;
  if (items.empty()) return out;
  for (const auto& b : items) {
    out.reconstruction += b.reconstruction;
    out.prosody_kld += b.prosody_kld;
    out.noise_kld += b.noise_kld;
    out.total += b.total;
  }
  const double n = static_cast<double>(items.size());
  out.reconstruction /= n;
  out.prosody_kld /= n;
  out.noise_kld /= n;
  out.total /= n;
  return out;
}

}  // namespace prosody::losses

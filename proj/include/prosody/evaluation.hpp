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

// Objective metrics: word error rate and a conditional Fréchet distance
// between paired embedding sets.

#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "prosody/common.hpp"

namespace prosody::evaluation {

struct TranscriptPair {
  std::string utterance_id;
  std::vector<std::string> reference_words;
  std::vector<std::string> hypothesis_words;
};

struct EditCounts {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int reference_length = 0;

  int errors() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

// Minimal word-level edit distance with an S/D/I breakdown. Among optimal
// alignments, substitutions are preferred over deletions over insertions.
inline EditCounts align_words(const std::vector<std::string>& ref,
                              const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int>> cost(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) cost[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }
  EditCounts c;
  c.reference_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

struct PairDetail {
  std::string utterance_id;
  EditCounts counts;
  double wer = 0.0;
};

struct WerReport {
  double corpus_wer = 0.0;
  std::vector<PairDetail> pairs;
};

// Corpus WER = total edits / total reference words.
inline WerReport word_error_rate(const std::vector<TranscriptPair>& pairs) {
  if (pairs.empty()) throw InputError("word error rate needs at least one transcript pair");
  WerReport report;
  long errors = 0, words = 0;
  for (const auto& p : pairs) {
    if (p.reference_words.empty()) {
      throw PairError("transcript pair \"" + p.utterance_id + "\" has an empty reference");
    }
    PairDetail d{p.utterance_id, align_words(p.reference_words, p.hypothesis_words), 0.0};
    d.wer = static_cast<double>(d.counts.errors()) / d.counts.reference_length;
    errors += d.counts.errors();
    words += d.counts.reference_length;
    report.pairs.push_back(std::move(d));
  }
  report.corpus_wer = static_cast<double>(errors) / static_cast<double>(words);
  return report;
}

// The ceil(n/4) shortest items by length, ties broken by id.
inline std::vector<std::string> shortest_quartile(
    std::vector<std::pair<std::string, int>> lengths_by_id) {
  std::sort(lengths_by_id.begin(), lengths_by_id.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  const std::size_t keep = (lengths_by_id.size() + 3) / 4;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(lengths_by_id[i].first);
  return out;
}

// ---------------------------------------------------------------------------
// Fréchet distance

struct FeatureSetSummary {
  Vec<double> mean;
  Mat<double> covariance;
  long sample_count = 0;
};

// Mean and unbiased covariance of the rows of `samples`.
inline FeatureSetSummary fit_summary(const Mat<double>& samples) {
  if (samples.rows() < 2) {
    throw SummaryError("a feature summary needs at least 2 samples, got " +
                       std::to_string(samples.rows()));
  }
  FeatureSetSummary s;
  s.sample_count = static_cast<long>(samples.rows());
  s.mean = samples.colwise().mean().transpose();
  const Mat<double> centered = samples.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  return s;
}

inline constexpr double kEigenClip = 1e-10;

namespace detail {

// Symmetric PSD square root; eigenvalues in [-tol, 0) are clipped to zero,
// anything more negative is an error.
inline Mat<double> psd_sqrt(const Mat<double>& m, const char* what) {
  const Mat<double> sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat<double>> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigensolver failed");
  Vec<double> values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < -kEigenClip * scale) {
      throw NumericError(std::string(what) + " is not positive semidefinite (eigenvalue " +
                         std::to_string(values(i)) + ")");
    }
    values(i) = std::sqrt(std::max(values(i), 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// |mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2)
inline double frechet_distance(const FeatureSetSummary& a, const FeatureSetSummary& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != a.mean.size() ||
      b.covariance.rows() != b.mean.size()) {
    throw ShapeError("feature summaries differ in dimension");
  }
  const Mat<double> root_a = detail::psd_sqrt(a.covariance, "covariance A");
  detail::psd_sqrt(b.covariance, "covariance B");
  const Mat<double> inner = root_a * b.covariance * root_a;
  const Mat<double> cross = detail::psd_sqrt(inner, "covariance product");
  const double d = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                   b.covariance.trace() - 2.0 * cross.trace();
  return std::max(d, 0.0);
}

using EmbeddingSet = std::map<std::string, Vec<double>>;

inline Mat<double> stack(const EmbeddingSet& set) {
  const Eigen::Index dim = set.begin()->second.size();
  Mat<double> out(static_cast<Eigen::Index>(set.size()), dim);
  Eigen::Index row = 0;
  for (const auto& [id, v] : set) {
    if (v.size() != dim) throw ShapeError("embedding \"" + id + "\" has the wrong dimension");
    out.row(row++) = v.transpose();
  }
  return out;
}

// Fréchet distance between generated and reference embeddings that share the
// same utterance ids. Summaries are fit in id order, so the result does not
// depend on the order utterances were supplied in.
inline double cfdsd(const EmbeddingSet& generated, const EmbeddingSet& reference) {
  std::vector<std::string> only_generated, only_reference;
  for (const auto& [id, v] : generated) {
    if (!reference.count(id)) only_generated.push_back(id);
  }
  for (const auto& [id, v] : reference) {
    if (!generated.count(id)) only_reference.push_back(id);
  }
  if (!only_generated.empty() || !only_reference.empty()) {
    std::string msg = "generated and reference sets differ;";
    auto list = [&](const char* label, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" only in ") + label + ":";
      for (const auto& id : ids) msg += " " + id;
    };
    list("generated", only_generated);
    list("reference", only_reference);
    throw PairingError(msg);
  }
  if (generated.empty()) throw PairingError("no utterances to compare");
  return frechet_distance(fit_summary(stack(generated)), fit_summary(stack(reference)));
}

// ---------------------------------------------------------------------------
// Plug-in interfaces

// audio features (T x F) -> fixed-length embedding
using FeatureExtractor = std::function<Vec<double>(const Mat<double>& features)>;
// audio features (T x F) -> word sequence
using Recognizer = std::function<std::vector<std::string>(const Mat<double>& features)>;

// Deterministic stand-in for a pretrained speech backbone: per-band mean and
// standard deviation over time of `bands` equal-width frequency bands.
inline FeatureExtractor synthetic_extractor(int bands = 8) {
  return [bands](const Mat<double>& features) {
    if (features.rows() < 1 || features.cols() < bands) {
      throw ShapeError("synthetic extractor needs at least one frame and " +
                       std::to_string(bands) + " bins");
    }
    Vec<double> out(2 * bands);
    const Eigen::Index width = features.cols() / bands;
    for (int b = 0; b < bands; ++b) {
      const Eigen::Index begin = b * width;
      const Eigen::Index count = b + 1 == bands ? features.cols() - begin : width;
      const Vec<double> band = features.middleCols(begin, count).rowwise().mean();
      const double mean = band.mean();
      const double var = (band.array() - mean).square().mean();
      out(b) = mean;
      out(bands + b) = std::sqrt(var);
    }
    return out;
  };
}

}  // namespace prosody::evaluation

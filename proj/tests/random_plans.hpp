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

// Random conditioning plans and checks of the broadcast properties.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "prosody/conditioning.hpp"

namespace prosody::testing {

struct PlanCase {
  conditioning::ConditioningPlan plan;
  std::vector<Vec<double>> prosody;
  std::vector<Vec<double>> noise;
};

inline PlanCase random_plan(std::mt19937_64& rng, int latent_dim = 4) {
  std::uniform_int_distribution<int> phrases(1, 6), count(1, 9), frames(1, 12);
  std::normal_distribution<double> normal(0.0, 1.0);
  PlanCase c;
  const int k = phrases(rng);
  int frame = 0, phoneme = 0;
  for (int i = 0; i < k; ++i) {
    const int f = frames(rng), p = count(rng);
    c.plan.source_spans.spans.push_back({i, phoneme, phoneme + p, frame, frame + f, 0.1});
    frame += f;
    phoneme += p;
    c.plan.target_phrase_phoneme_counts.push_back(count(rng));
    Vec<double> a(latent_dim), b(latent_dim);
    for (int d = 0; d < latent_dim; ++d) {
      a(d) = normal(rng);
      b(d) = normal(rng);
    }
    c.prosody.push_back(a);
    c.noise.push_back(b);
  }
  c.plan.source_spans.total_frames = frame;
  return c;
}

// Empty when rows are constant within each target phrase, carry that
// phrase's embeddings, and the phrase index never decreases.
inline std::string check_broadcast(const PlanCase& c,
                                   const conditioning::ConditioningMatrix<double>& m) {
  if (m.rows.rows() != c.plan.total_phonemes()) return "row count differs from phoneme count";
  if (static_cast<Eigen::Index>(m.phrase_of_row.size()) != m.rows.rows()) return "row map size";
  const Eigen::Index dp = c.prosody.front().size();
  Eigen::Index row = 0;
  int previous = 0;
  for (int k = 0; k < c.plan.phrase_count(); ++k) {
    for (int j = 0; j < c.plan.target_phrase_phoneme_counts[k]; ++j, ++row) {
      if (m.phrase_of_row[row] != k) return "row mapped to the wrong phrase";
      if (m.phrase_of_row[row] < previous) return "phrase assignment decreased";
      previous = m.phrase_of_row[row];
      if (m.rows.row(row).head(dp) != c.prosody[k].transpose()) return "prosody part differs";
      if (m.rows.row(row).tail(c.noise[k].size()) != c.noise[k].transpose()) return "noise part differs";
      if (j > 0 && m.rows.row(row) != m.rows.row(row - 1)) return "rows within a phrase differ";
    }
  }
  return {};
}

}  // namespace prosody::testing

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

// Random alignments and independent checks of the phrase-partition
// properties, shared by the unit and acceptance suites.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "prosody/corpus.hpp"
#include "prosody/segmentation.hpp"

namespace prosody::testing {

// Speech tokens last 20-150 ms, silences 5-300 ms, optionally split in two,
// with an optional leading silence. Times are whole milliseconds.
inline std::vector<corpus::AlignedToken> random_alignment(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> speech_ms(20, 150), silence_ms(5, 300), count(1, 14);
  std::bernoulli_distribution coin(0.4), split(0.2), lead(0.25);
  std::vector<corpus::AlignedToken> tokens;
  int t = 0;
  auto push = [&](const std::string& name, int ms) {
    tokens.push_back({name, t / 1000.0, (t + ms) / 1000.0, name == "sil"});
    t += ms;
  };
  if (lead(rng)) push("sil", silence_ms(rng));
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    push("p" + std::to_string(i % 7), speech_ms(rng));
    if (coin(rng)) {
      push("sil", silence_ms(rng));
      if (split(rng)) push("sil", silence_ms(rng));
    }
  }
  return tokens;
}

// Silence (merged) immediately before each speech phoneme; 0 if none.
inline std::vector<double> silence_before(const std::vector<corpus::AlignedToken>& tokens) {
  std::vector<double> out;
  double pending = 0.0;
  for (const auto& t : tokens) {
    if (t.is_silence) {
      pending += t.duration();
    } else {
      out.push_back(pending);
      pending = 0.0;
    }
  }
  return out;
}

// Empty string when every property holds, otherwise a description.
inline std::string check_phrase_properties(const std::vector<corpus::AlignedToken>& tokens,
                                           const corpus::FrameSpec& spec, double min_silence_s,
                                           const segmentation::PhraseSet& set) {
  const auto gaps = silence_before(tokens);
  const int n = static_cast<int>(gaps.size());
  // Partition of frames and phonemes.
  int frame = 0, phoneme = 0;
  for (int k = 0; k < set.size(); ++k) {
    const auto& s = set.spans[k];
    if (s.frame_begin != frame || s.frame_end <= s.frame_begin) return "frame partition broken";
    if (s.phoneme_begin != phoneme || s.phoneme_end <= s.phoneme_begin) return "phoneme partition broken";
    frame = s.frame_end;
    phoneme = s.phoneme_end;
  }
  if (frame != set.total_frames) return "frames not covered";
  if (phoneme != n) return "phonemes not covered";
  // Boundary soundness: boundaries exactly at long silences.
  std::vector<bool> starts(static_cast<std::size_t>(n), false);
  for (const auto& s : set.spans) starts[s.phoneme_begin] = true;
  for (int j = 1; j < n; ++j) {
    const bool long_gap = gaps[j] >= min_silence_s - 1e-9;
    if (starts[j] != long_gap) return "boundary/silence mismatch at phoneme " + std::to_string(j);
  }
  // Boundary frames sit where the next phrase's first phoneme starts.
  std::vector<double> starts_s;
  for (const auto& t : tokens) {
    if (!t.is_silence) starts_s.push_back(t.start_s);
  }
  for (int k = 1; k < set.size(); ++k) {
    const auto expected = corpus::time_to_frame(starts_s[set.spans[k].phoneme_begin], spec);
    if (set.spans[k].frame_begin != expected) return "boundary frame misplaced";
  }
  return {};
}

}  // namespace prosody::testing

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

// Prosodic phrase segmentation. A phrase is a run of speech phonemes that is
// closed by a silence of at least `min_silence_s`; the silence belongs to the
// phrase it follows. Frame ranges of the phrases partition [0, T).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prosody/common.hpp"
#include "prosody/corpus.hpp"

namespace prosody::segmentation {

struct PhraseSpan {
  int index = 0;
  int phoneme_begin = 0;  // [begin, end) into the speech phoneme sequence
  int phoneme_end = 0;
  int frame_begin = 0;  // [begin, end) into the frame sequence
  int frame_end = 0;
  double boundary_silence_s = 0.0;  // silence closing this phrase, 0 if none

  int phoneme_count() const { return phoneme_end - phoneme_begin; }
  int frame_count() const { return frame_end - frame_begin; }
  // Later of the two central frames for even-length spans.
  int middle_frame() const { return frame_begin + frame_count() / 2; }

  bool operator==(const PhraseSpan&) const = default;
};

struct PhraseSet {
  std::vector<PhraseSpan> spans;
  int total_frames = 0;

  int size() const { return static_cast<int>(spans.size()); }
  int total_phonemes() const {
    return spans.empty() ? 0 : spans.back().phoneme_end;
  }
  std::vector<int> phoneme_counts() const {
    std::vector<int> out;
    out.reserve(spans.size());
    for (const auto& s : spans) out.push_back(s.phoneme_count());
    return out;
  }

  bool operator==(const PhraseSet&) const = default;
};

// Throws ShapeError unless the set is a well-formed partition.
inline void validate(const PhraseSet& set) {
  if (set.spans.empty()) throw ShapeError("phrase set is empty");
  int frame = 0, phoneme = 0;
  for (std::size_t k = 0; k < set.spans.size(); ++k) {
    const auto& s = set.spans[k];
    if (s.index != static_cast<int>(k) || s.frame_begin != frame ||
        s.phoneme_begin != phoneme || s.frame_end <= s.frame_begin ||
        s.phoneme_end <= s.phoneme_begin) {
      throw ShapeError("phrase " + std::to_string(k) + " breaks the partition");
    }
    frame = s.frame_end;
    phoneme = s.phoneme_end;
  }
  if (frame != set.total_frames) {
    throw ShapeError("phrase frames cover " + std::to_string(frame) + " of " +
                     std::to_string(set.total_frames) + " frames");
  }
}

inline int total_frames_for(const std::vector<corpus::AlignedToken>& tokens,
                            const corpus::FrameSpec& spec) {
  if (tokens.empty()) throw EmptyAlignmentError("alignment is empty");
  return static_cast<int>(corpus::frames_for_samples(
      corpus::time_to_sample(tokens.back().end_s, spec.sample_rate_hz), spec));
}

// Frame boundary of every speech phoneme: boundary[j] is the first frame of
// phoneme j, boundary[N] == total_frames. Silence frames fall to the phoneme
// before them (the first phoneme for a leading silence). Phonemes shorter than
// one hop are widened so every phoneme owns at least one frame.
inline std::vector<int> phoneme_frame_boundaries(
    const std::vector<corpus::AlignedToken>& tokens,
    const corpus::FrameSpec& spec, std::optional<int> total_frames = {}) {
  const int frames = total_frames.value_or(total_frames_for(tokens, spec));
  std::vector<int> bounds;
  for (const auto& t : tokens) {
    if (t.is_silence) continue;
    bounds.push_back(bounds.empty()
                         ? 0
                         : static_cast<int>(corpus::time_to_frame(t.start_s, spec)));
  }
  if (bounds.empty()) throw NoSpeechError("alignment contains only silence");
  const int n = static_cast<int>(bounds.size());
  if (frames < n) {
    throw ShapeError(std::to_string(n) + " phonemes do not fit in " +
                     std::to_string(frames) + " frames");
  }
  bounds.push_back(frames);
  for (int j = 1; j < n; ++j) bounds[j] = std::max(bounds[j], bounds[j - 1] + 1);
  for (int j = n - 1; j >= 1; --j) bounds[j] = std::min(bounds[j], bounds[j + 1] - 1);
  return bounds;
}

inline std::vector<int> phoneme_durations(
    const std::vector<corpus::AlignedToken>& tokens,
    const corpus::FrameSpec& spec, std::optional<int> total_frames = {}) {
  const auto bounds = phoneme_frame_boundaries(tokens, spec, total_frames);
  std::vector<int> out(bounds.size() - 1);
  for (std::size_t j = 0; j + 1 < bounds.size(); ++j) out[j] = bounds[j + 1] - bounds[j];
  return out;
}

inline constexpr double kThresholdTolerance = 1e-9;

// `total_frames` defaults to the frame count of audio ending where the
// alignment ends.
inline PhraseSet segment_phrases(const std::vector<corpus::AlignedToken>& tokens,
                                 const corpus::FrameSpec& spec,
                                 double min_silence_s = 0.05,
                                 std::optional<int> total_frames = {}) {
  if (tokens.empty()) throw EmptyAlignmentError("alignment is empty");
  const auto bounds = phoneme_frame_boundaries(tokens, spec, total_frames);
  const int n = static_cast<int>(bounds.size()) - 1;

  // Silence (merged across consecutive silence tokens) that follows each
  // speech phoneme.
  std::vector<double> silence_after(static_cast<std::size_t>(n), 0.0);
  int phoneme = -1;
  for (const auto& t : tokens) {
    if (!t.is_silence) {
      ++phoneme;
    } else if (phoneme >= 0) {
      silence_after[phoneme] += t.duration();
    }
  }

  PhraseSet set;
  set.total_frames = bounds.back();
  int begin = 0;
  for (int j = 0; j < n; ++j) {
    const bool last = j + 1 == n;
    const bool closes = silence_after[j] >= min_silence_s - kThresholdTolerance;
    if (!last && !closes) continue;
    PhraseSpan span;
    span.index = set.size();
    span.phoneme_begin = begin;
    span.phoneme_end = j + 1;
    span.frame_begin = bounds[begin];
    span.frame_end = bounds[j + 1];
    span.boundary_silence_s = silence_after[j];
    set.spans.push_back(span);
    begin = j + 1;
  }
  return set;
}

// PVAE and GVAE-PP keep phrase spans; GVAE collapses to one global span.
inline PhraseSet spans_for_mode(const PhraseSet& set, Variant mode) {
  if (mode != Variant::kGvae || set.size() <= 1) return set;
  PhraseSpan global;
  global.index = 0;
  global.phoneme_begin = 0;
  global.phoneme_end = set.total_phonemes();
  global.frame_begin = 0;
  global.frame_end = set.total_frames;
  global.boundary_silence_s = set.spans.back().boundary_silence_s;
  return PhraseSet{{global}, set.total_frames};
}

}  // namespace prosody::segmentation

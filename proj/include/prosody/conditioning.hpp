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

// Dual-stream phrase conditioning: denoiser plug-ins, the audio front end
// shared by training and inference, phrase-to-phoneme broadcast and the
// cross-lingual phrase plan.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "prosody/common.hpp"
#include "prosody/corpus.hpp"
#include "prosody/encoder.hpp"
#include "prosody/segmentation.hpp"

namespace prosody::conditioning {

struct NoiseStreams {
  std::vector<double> denoised;
  std::vector<double> noise;
};

// A denoiser maps a waveform to its (denoised, noise) decomposition.
using Denoiser = std::function<NoiseStreams(const std::vector<double>& audio, int sample_rate_hz)>;

inline constexpr double kReconstructionTolerance = 1e-6;

inline NoiseStreams identity_denoiser(const std::vector<double>& audio, int) {
  return {audio, std::vector<double>(audio.size(), 0.0)};
}

// Centered moving average as the denoised stream; the residual is the noise.
inline Denoiser smoothing_denoiser(int radius) {
  return [radius](const std::vector<double>& audio, int) {
    const auto n = static_cast<std::int64_t>(audio.size());
    std::vector<double> prefix(audio.size() + 1, 0.0);
    for (std::int64_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + audio[i];
    NoiseStreams s;
    s.denoised.resize(audio.size());
    s.noise.resize(audio.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t lo = std::max<std::int64_t>(0, i - radius);
      const std::int64_t hi = std::min<std::int64_t>(n, i + radius + 1);
      s.denoised[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
      s.noise[i] = audio[i] - s.denoised[i];
    }
    return s;
  };
}

inline Denoiser make_denoiser(const std::string& name) {
  if (name == "identity") return identity_denoiser;
  if (name == "smoothing") return smoothing_denoiser(4);
  throw ConfigError("unknown denoiser \"" + name + "\" (expected identity or smoothing)");
}

inline NoiseStreams split_noise_streams(const std::vector<double>& audio,
                                        int sample_rate_hz, const Denoiser& denoiser) {
  NoiseStreams s = denoiser(audio, sample_rate_hz);
  if (s.denoised.size() != audio.size() || s.noise.size() != audio.size()) {
    throw PluginError("denoiser returned streams of length " +
                      std::to_string(s.denoised.size()) + "/" +
                      std::to_string(s.noise.size()) + " for " +
                      std::to_string(audio.size()) + " input samples");
  }
  for (std::size_t i = 0; i < audio.size(); ++i) {
    if (!(std::abs(s.denoised[i] + s.noise[i] - audio[i]) <= kReconstructionTolerance)) {
      throw PluginError("denoiser streams do not sum to the input at sample " +
                        std::to_string(i));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Audio front end: capping, segmentation, streams and features for one
// utterance.

struct FrontEndConfig {
  corpus::FrameSpec frame_spec;
  double min_silence_s = 0.05;
  double max_silence_s = 2.0;
};

struct PreparedUtterance {
  std::vector<corpus::AlignedToken> tokens;  // after capping
  std::vector<std::string> phonemes;
  segmentation::PhraseSet phrases;
  std::vector<int> durations;  // frames per speech phoneme
  Mat<double> features;        // log-compressed, T x F
  Mat<double> denoised_features;
  Mat<double> noise_features;
};

inline PreparedUtterance prepare_utterance(const corpus::Waveform& audio,
                                           const std::vector<corpus::AlignedToken>& tokens,
                                           const FrontEndConfig& config,
                                           const Denoiser& denoiser) {
  PreparedUtterance out;
  auto capped = corpus::cap_long_silences(tokens, config.max_silence_s);
  corpus::Waveform wav{audio.sample_rate_hz,
                       corpus::apply_silence_edits(audio.samples, audio.sample_rate_hz,
                                                   capped.edits)};
  out.tokens = std::move(capped.tokens);
  out.phonemes = corpus::speech_phonemes(out.tokens);

  const auto streams = split_noise_streams(wav.samples, wav.sample_rate_hz, denoiser);
  out.features = corpus::log_compress(corpus::compute_features(wav, config.frame_spec));
  out.denoised_features = corpus::log_compress(corpus::compute_features(
      corpus::Waveform{wav.sample_rate_hz, streams.denoised}, config.frame_spec));
  out.noise_features = corpus::log_compress(corpus::compute_features(
      corpus::Waveform{wav.sample_rate_hz, streams.noise}, config.frame_spec));

  const int frames = static_cast<int>(out.features.rows());
  out.phrases = segmentation::segment_phrases(out.tokens, config.frame_spec,
                                              config.min_silence_s, frames);
  out.durations = segmentation::phoneme_durations(out.tokens, config.frame_spec, frames);
  return out;
}

// ---------------------------------------------------------------------------
// Phrase plan and broadcast

struct ConditioningPlan {
  segmentation::PhraseSet source_spans;
  std::vector<int> target_phrase_phoneme_counts;
  std::vector<std::string> target_phonemes;  // flattened, may be empty
  std::string target_locale;
  std::string target_speaker_id;

  int phrase_count() const { return static_cast<int>(target_phrase_phoneme_counts.size()); }
  int total_phonemes() const {
    int n = 0;
    for (int c : target_phrase_phoneme_counts) n += c;
    return n;
  }
};

inline void validate(const ConditioningPlan& plan) {
  if (plan.phrase_count() != plan.source_spans.size()) {
    throw CountError("plan pairs " + std::to_string(plan.source_spans.size()) +
                     " source phrases with " + std::to_string(plan.phrase_count()) +
                     " target phrases");
  }
  for (int c : plan.target_phrase_phoneme_counts) {
    if (c < 1) throw CountError("every target phrase needs at least one phoneme");
  }
}

// Training plan: the reference and the text are the same utterance.
inline ConditioningPlan self_plan(const segmentation::PhraseSet& spans) {
  ConditioningPlan plan;
  plan.source_spans = spans;
  plan.target_phrase_phoneme_counts = spans.phoneme_counts();
  return plan;
}

template <typename S>
struct ConditioningMatrix {
  Mat<S> rows;                   // N_phonemes x (prosody_dim + noise_dim)
  std::vector<int> phrase_of_row;  // source phrase feeding each row
};

// Row j of target phrase k is prosody_k ‖ noise_k.
template <typename S>
ConditioningMatrix<S> build_conditioning(const std::vector<Vec<S>>& prosody,
                                         const std::vector<Vec<S>>& noise,
                                         const ConditioningPlan& plan) {
  validate(plan);
  const int k_count = plan.phrase_count();
  if (static_cast<int>(prosody.size()) != k_count || static_cast<int>(noise.size()) != k_count) {
    throw CountError("got " + std::to_string(prosody.size()) + " prosody and " +
                     std::to_string(noise.size()) + " noise embeddings for " +
                     std::to_string(k_count) + " phrases");
  }
  const Eigen::Index dp = prosody.front().size();
  const Eigen::Index dn = noise.front().size();
  ConditioningMatrix<S> out;
  out.rows.resize(plan.total_phonemes(), dp + dn);
  out.phrase_of_row.reserve(static_cast<std::size_t>(plan.total_phonemes()));
  Eigen::Index row = 0;
  for (int k = 0; k < k_count; ++k) {
    if (prosody[k].size() != dp || noise[k].size() != dn) {
      throw ShapeError("phrase embeddings differ in dimension");
    }
    for (int j = 0; j < plan.target_phrase_phoneme_counts[k]; ++j, ++row) {
      out.rows.row(row).head(dp) = prosody[k].transpose();
      out.rows.row(row).tail(dn) = noise[k].transpose();
      out.phrase_of_row.push_back(k);
    }
  }
  return out;
}

// Sums row gradients back onto each phrase's prosody and noise embeddings.
template <typename S>
void build_conditioning_backward(const Mat<S>& d_rows, const ConditioningPlan& plan,
                                 Eigen::Index prosody_dim, Mat<S>& d_prosody, Mat<S>& d_noise) {
  const int k_count = plan.phrase_count();
  const Eigen::Index noise_dim = d_rows.cols() - prosody_dim;
  d_prosody.setZero(k_count, prosody_dim);
  d_noise.setZero(k_count, noise_dim);
  Eigen::Index row = 0;
  for (int k = 0; k < k_count; ++k) {
    const int count = plan.target_phrase_phoneme_counts[k];
    const auto block = d_rows.middleRows(row, count).colwise().sum();
    d_prosody.row(k) = block.head(prosody_dim);
    d_noise.row(k) = block.tail(noise_dim);
    row += count;
  }
}

// ---------------------------------------------------------------------------
// Cross-lingual plan from phrase-marked target text

inline constexpr std::string_view kPhraseBreak = "|";

// Maps one target-text token to phonemes. The default treats the text as
// already phonemized.
using Lexicon = std::function<std::vector<std::string>(const std::string& token)>;

inline std::vector<std::string> passthrough_lexicon(const std::string& token) {
  return {token};
}

// Splits whitespace-separated text on "|" tokens.
inline std::vector<std::vector<std::string>> split_phrases(const std::string& text) {
  std::vector<std::vector<std::string>> phrases(1);
  for (auto& token : corpus::split_whitespace(text)) {
    if (token == kPhraseBreak) {
      phrases.emplace_back();
    } else {
      phrases.back().push_back(std::move(token));
    }
  }
  for (std::size_t k = 0; k < phrases.size(); ++k) {
    if (phrases[k].empty()) {
      throw InputError("target text phrase " + std::to_string(k) + " is empty");
    }
  }
  return phrases;
}

inline ConditioningPlan make_cross_lingual_plan(const segmentation::PhraseSet& source_spans,
                                                const std::string& target_text,
                                                const Lexicon& lexicon = passthrough_lexicon) {
  const auto phrases = split_phrases(target_text);
  if (static_cast<int>(phrases.size()) != source_spans.size()) {
    throw MismatchError("source reference has " + std::to_string(source_spans.size()) +
                        " phrases but target text has " + std::to_string(phrases.size()));
  }
  ConditioningPlan plan;
  plan.source_spans = source_spans;
  for (const auto& phrase : phrases) {
    int count = 0;
    for (const auto& word : phrase) {
      for (auto& p : lexicon(word)) {
        plan.target_phonemes.push_back(std::move(p));
        ++count;
      }
    }
    if (count == 0) throw InputError("target phrase phonemizes to nothing");
    plan.target_phrase_phoneme_counts.push_back(count);
  }
  return plan;
}

// Encodes the noise stream of a single-phrase clean recording and repeats
// its posterior mean once per source phrase.
template <typename S>
std::vector<Vec<S>> clean_noise_embeddings(const corpus::Waveform& clean_audio,
                                           const std::vector<corpus::AlignedToken>& clean_alignment,
                                           int phrase_count,
                                           const encoder::ReferenceEncoder<S>& noise_encoder,
                                           const FrontEndConfig& front_end,
                                           const Denoiser& denoiser) {
  if (phrase_count < 1) throw CountError("phrase count must be positive");
  const auto prepared = prepare_utterance(clean_audio, clean_alignment, front_end, denoiser);
  if (prepared.phrases.size() != 1) {
    throw CleanReferenceError("clean reference must contain exactly one phrase, found " +
                              std::to_string(prepared.phrases.size()));
  }
  const Mat<S> features = prepared.noise_features.cast<S>();
  const auto posterior = noise_encoder.forward(features, prepared.phrases).posteriors.front();
  const auto embedding = encoder::sample_embedding(posterior, encoder::SampleMode::kInference);
  return std::vector<Vec<S>>(static_cast<std::size_t>(phrase_count), embedding.values);
}

}  // namespace prosody::conditioning

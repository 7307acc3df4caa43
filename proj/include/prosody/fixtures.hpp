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

// Synthetic speech-like corpora with exact alignments. Each phoneme is a
// harmonic tone whose spectral envelope depends on its identity; each phrase
// has its own pitch, loudness and rate; phrases are separated by silences of
// at least 50 ms, with occasional shorter pauses inside phrases.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "prosody/corpus.hpp"

namespace prosody::fixtures {

inline const std::vector<std::string>& phoneme_inventory() {
  static const std::vector<std::string> kInventory = {"a", "e", "i", "o", "u", "m",
                                                      "n", "s", "t", "k", "l", "r"};
  return kInventory;
}

struct CorpusOptions {
  int count = 10;
  std::uint64_t seed = 1;
  int sample_rate_hz = 24000;
  int min_phrases = 1;
  int max_phrases = 3;
  int min_phrase_phonemes = 1;
  int max_phrase_phonemes = 8;
  int min_phoneme_ms = 50;
  int max_phoneme_ms = 110;
  int min_break_ms = 80;  // inter-phrase silence
  int max_break_ms = 250;
  double short_pause_probability = 0.15;  // sub-threshold pause after a phoneme
  double leading_silence_probability = 0.3;
  double noise_level = 0.01;
  std::vector<std::string> locales = {"en-US", "es-ES"};
  int speakers = 2;
};

struct SyntheticUtterance {
  corpus::UtteranceRecord record;
  corpus::Waveform audio;
  std::vector<corpus::AlignedToken> tokens;
  std::vector<double> phrase_pitch;
};

namespace detail {

inline double seconds(int ms) { return static_cast<double>(ms) / 1000.0; }

inline void render_tone(std::vector<double>& out, int phoneme, double f0, double gain,
                        int sample_rate_hz, std::size_t begin, std::size_t end) {
  const double len = static_cast<double>(end - begin);
  for (std::size_t n = begin; n < end; ++n) {
    const double t = static_cast<double>(n) / sample_rate_hz;
    const double local = static_cast<double>(n - begin) / len;
    const double envelope = std::sin(std::numbers::pi * local);
    double v = 0.0;
    for (int h = 1; h <= 6; ++h) {
      // Phoneme identity shapes which harmonics dominate.
      const double weight = 1.0 / (1.0 + std::abs(h - 1 - (phoneme % 6)));
      v += weight * std::sin(2.0 * std::numbers::pi * f0 * h * t + 0.3 * phoneme);
    }
    out[n] += gain * envelope * v / 3.0;
  }
}

}  // namespace detail

inline SyntheticUtterance make_utterance(const std::string& id, std::mt19937_64& rng,
                                         const CorpusOptions& opt) {
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto& inventory = phoneme_inventory();

  SyntheticUtterance u;
  const int speaker = uniform_int(0, opt.speakers - 1);
  const std::string locale = opt.locales[uniform_int(0, static_cast<int>(opt.locales.size()) - 1)];
  const double base_f0 = 100.0 + 60.0 * speaker;

  struct Segment {
    int phoneme;  // -1 for silence
    int ms;
    double f0;
    double gain;
  };
  std::vector<Segment> segments;
  if (uniform(0.0, 1.0) < opt.leading_silence_probability) {
    segments.push_back({-1, uniform_int(20, 120), 0.0, 0.0});
  }
  const int phrases = uniform_int(opt.min_phrases, opt.max_phrases);
  for (int k = 0; k < phrases; ++k) {
    const double pitch = uniform(0.8, 1.25);
    const double gain = uniform(0.25, 0.7);
    const double rate = uniform(0.8, 1.2);
    u.phrase_pitch.push_back(pitch);
    const int len = uniform_int(opt.min_phrase_phonemes, opt.max_phrase_phonemes);
    for (int j = 0; j < len; ++j) {
      const int ph = uniform_int(0, static_cast<int>(inventory.size()) - 1);
      const int ms = static_cast<int>(std::lround(uniform_int(opt.min_phoneme_ms, opt.max_phoneme_ms) * rate));
      // Slight declination within the phrase.
      segments.push_back({ph, ms, base_f0 * pitch * (1.0 - 0.02 * j), gain});
      if (j + 1 < len && uniform(0.0, 1.0) < opt.short_pause_probability) {
        segments.push_back({-1, uniform_int(10, 40), 0.0, 0.0});
      }
    }
    if (k + 1 < phrases) {
      segments.push_back({-1, uniform_int(opt.min_break_ms, opt.max_break_ms), 0.0, 0.0});
    } else if (uniform(0.0, 1.0) < 0.5) {
      segments.push_back({-1, uniform_int(30, 200), 0.0, 0.0});
    }
  }

  int total_ms = 0;
  for (const auto& s : segments) total_ms += s.ms;
  const auto total_samples = static_cast<std::size_t>(
      corpus::time_to_sample(detail::seconds(total_ms), opt.sample_rate_hz));
  u.audio.sample_rate_hz = opt.sample_rate_hz;
  u.audio.samples.assign(total_samples, 0.0);
  int cursor_ms = 0;
  for (const auto& s : segments) {
    const double start = detail::seconds(cursor_ms);
    const double end = detail::seconds(cursor_ms + s.ms);
    corpus::AlignedToken t;
    t.start_s = start;
    t.end_s = end;
    t.is_silence = s.phoneme < 0;
    t.token = t.is_silence ? std::string(corpus::kSilenceToken) : inventory[s.phoneme];
    if (!t.is_silence) {
      detail::render_tone(u.audio.samples, s.phoneme, s.f0, s.gain, opt.sample_rate_hz,
                          static_cast<std::size_t>(corpus::time_to_sample(start, opt.sample_rate_hz)),
                          static_cast<std::size_t>(corpus::time_to_sample(end, opt.sample_rate_hz)));
      u.record.phonemes.push_back(t.token);
    }
    u.tokens.push_back(std::move(t));
    cursor_ms += s.ms;
  }
  std::normal_distribution<double> noise(0.0, opt.noise_level);
  if (opt.noise_level > 0.0) {
    for (auto& x : u.audio.samples) x += noise(rng);
  }

  u.record.utterance_id = id;
  u.record.locale = locale;
  u.record.speaker_id = "spk" + std::to_string(speaker);
  return u;
}

inline std::vector<SyntheticUtterance> make_corpus(const CorpusOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::vector<SyntheticUtterance> out;
  for (int i = 0; i < opt.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "utt%04d", i);
    out.push_back(make_utterance(id, rng, opt));
  }
  return out;
}

// Writes wav/<id>.wav and align/<id>.tsv under `dir`, fills in the record
// paths (absolute) and writes `dir/manifest.jsonl` with paths relative to
// the manifest, so the corpus can be moved. Returns the manifest path.
inline std::string write_corpus(const std::string& dir, std::vector<SyntheticUtterance>& utterances) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "wav");
  fs::create_directories(fs::path(dir) / "align");
  const fs::path root = fs::absolute(dir).lexically_normal();
  const std::string manifest = (root / "manifest.jsonl").string();
  std::ofstream out(manifest);
  for (auto& u : utterances) {
    u.record.audio_path = (root / "wav" / (u.record.utterance_id + ".wav")).string();
    u.record.alignment_path = (root / "align" / (u.record.utterance_id + ".tsv")).string();
    corpus::write_wav(u.record.audio_path, u.audio);
    std::ofstream(u.record.alignment_path) << corpus::serialize_alignment(u.tokens);
    corpus::UtteranceRecord relative = u.record;
    relative.audio_path = "wav/" + u.record.utterance_id + ".wav";
    relative.alignment_path = "align/" + u.record.utterance_id + ".tsv";
    out << corpus::manifest_record_json(relative).dump() << '\n';
  }
  return manifest;
}

}  // namespace prosody::fixtures

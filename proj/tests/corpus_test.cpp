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

#include "prosody/corpus.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "test_util.hpp"

namespace prosody::corpus {
namespace {

using testing::scratch_dir;
using testing::write_text;

AlignedToken tok(const std::string& s, double a, double b) {
  return {s, a, b, s == "sil"};
}

// ---------------------------------------------------------------- manifest

TEST(Manifest, EmptyFileGivesNoRecords) {
  std::istringstream in("");
  EXPECT_TRUE(load_manifest(in).empty());
}

TEST(Manifest, ParsesRecordsInFileOrder) {
  std::istringstream in(
      R"({"utterance_id":"b","audio_path":"b.wav","locale":"en-US","speaker_id":"s1","phonemes":"AH B","alignment_path":"b.tsv"})"
      "\n"
      R"({"utterance_id":"a","audio_path":"a.wav","locale":"es-ES","speaker_id":"s2","phonemes":"K","alignment_path":"a.tsv","dialogue_id":"d7"})"
      "\n");
  const auto records = load_manifest(in);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].utterance_id, "b");
  EXPECT_EQ(records[0].phonemes, (std::vector<std::string>{"AH", "B"}));
  EXPECT_FALSE(records[0].dialogue_id.has_value());
  EXPECT_EQ(records[1].utterance_id, "a");
  EXPECT_EQ(records[1].dialogue_id, "d7");

  // Written back and parsed again, the records are identical.
  std::ostringstream out;
  for (const auto& r : records) out << manifest_record_json(r).dump() << '\n';
  std::istringstream again(out.str());
  EXPECT_EQ(load_manifest(again), records);
}

TEST(Manifest, MissingFieldNamesFieldAndLine) {
  std::istringstream in(
      R"({"utterance_id":"a","audio_path":"a.wav","locale":"en-US","speaker_id":"s","phonemes":"A"})");
  try {
    load_manifest(in);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("alignment_path"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdIsRejected) {
  const std::string line =
      R"({"utterance_id":"a","audio_path":"a.wav","locale":"en-US","speaker_id":"s","phonemes":"A","alignment_path":"a.tsv"})";
  std::istringstream in(line + "\n" + line + "\n");
  EXPECT_THROW(load_manifest(in), DuplicateError);
}

TEST(Manifest, LocaleOutsideConfiguredSet) {
  std::istringstream in(
      R"({"utterance_id":"a","audio_path":"a.wav","locale":"ja-JP","speaker_id":"s","phonemes":"A","alignment_path":"a.tsv"})");
  EXPECT_THROW(load_manifest(in, {"en-US", "es-ES"}), SchemaError);
}

TEST(Manifest, EmptyPhonemesRejected) {
  std::istringstream in(
      R"({"utterance_id":"a","audio_path":"a.wav","locale":"en-US","speaker_id":"s","phonemes":"  ","alignment_path":"a.tsv"})");
  EXPECT_THROW(load_manifest(in), SchemaError);
}

// --------------------------------------------------------------- alignment

TEST(Alignment, ParsesSilenceMarker) {
  std::istringstream in("AH\t0.00\t0.10\nsil\t0.10\t0.16\nB\t0.16\t0.30\n");
  const auto tokens = parse_alignment(in);
  ASSERT_EQ(tokens.size(), 3u);
  EXPECT_FALSE(tokens[0].is_silence);
  EXPECT_TRUE(tokens[1].is_silence);
  EXPECT_FALSE(tokens[2].is_silence);
  EXPECT_DOUBLE_EQ(tokens[1].start_s, 0.10);
  EXPECT_DOUBLE_EQ(tokens[2].end_s, 0.30);
}

TEST(Alignment, SingleRow) {
  std::istringstream in("AH\t0.00\t0.50\n");
  const auto tokens = parse_alignment(in);
  ASSERT_EQ(tokens.size(), 1u);
  EXPECT_FALSE(tokens[0].is_silence);
}

TEST(Alignment, GapIsContiguityError) {
  std::istringstream in("AH\t0.00\t0.10\nB\t0.20\t0.30\n");
  EXPECT_THROW(parse_alignment(in), ContiguityError);
}

TEST(Alignment, OverlapIsContiguityError) {
  std::istringstream in("AH\t0.00\t0.20\nB\t0.10\t0.30\n");
  EXPECT_THROW(parse_alignment(in), ContiguityError);
}

TEST(Alignment, MustStartAtZero) {
  std::istringstream in("AH\t0.05\t0.20\n");
  EXPECT_THROW(parse_alignment(in), ContiguityError);
}

TEST(Alignment, EmptyFile) {
  std::istringstream in("");
  EXPECT_THROW(parse_alignment(in), EmptyAlignmentError);
}

TEST(Alignment, MalformedRow) {
  std::istringstream in("AH 0.0 0.1\n");
  EXPECT_THROW(parse_alignment(in), SchemaError);
  std::istringstream bad_number("AH\t0.0\tzero\n");
  EXPECT_THROW(parse_alignment(bad_number), SchemaError);
}

TEST(Alignment, ToleratesCrlfAndReadsFromFile) {
  const auto dir = scratch_dir("corpus_alignment");
  const auto path = write_text(dir + "/a.tsv", "AH\t0\t0.1\r\nsil\t0.1\t0.2\r\n");
  EXPECT_EQ(parse_alignment(path).size(), 2u);
  EXPECT_THROW(parse_alignment(dir + "/missing.tsv"), IoError);
}

std::vector<AlignedToken> random_alignment(std::mt19937_64& rng, int max_tokens) {
  std::uniform_int_distribution<int> count(1, max_tokens);
  std::uniform_real_distribution<double> dur(0.001, 3.5);
  std::bernoulli_distribution silence(0.3);
  const char* names[] = {"AH", "B", "K", "IY", "sh"};
  std::uniform_int_distribution<int> name(0, 4);
  std::vector<AlignedToken> tokens;
  double t = 0.0;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double end = t + dur(rng);
    const bool s = silence(rng);
    tokens.push_back({s ? "sil" : names[name(rng)], t, end, s});
    t = end;
  }
  return tokens;
}

TEST(AlignmentProperty, SerializeParseRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto tokens = random_alignment(rng, 12);
    std::istringstream in(serialize_alignment(tokens));
    EXPECT_EQ(parse_alignment(in), tokens);
  }
}

// --------------------------------------------------------- silence capping

TEST(CapSilences, LongSilenceCappedAndLaterTokensShifted) {
  const std::vector<AlignedToken> tokens = {tok("A", 0.0, 0.5), tok("sil", 0.5, 3.5),
                                            tok("B", 3.5, 4.0)};
  const auto capped = cap_long_silences(tokens, 2.0);
  ASSERT_EQ(capped.tokens.size(), 3u);
  EXPECT_NEAR(capped.tokens[1].duration(), 2.0, 1e-12);
  EXPECT_NEAR(capped.tokens[2].start_s, 2.5, 1e-12);
  EXPECT_NEAR(capped.tokens[2].end_s, 3.0, 1e-12);
  ASSERT_EQ(capped.edits.size(), 1u);
  EXPECT_NEAR(capped.edits[0].original_time, 2.5, 1e-12);
  EXPECT_NEAR(capped.edits[0].removed_duration, 1.0, 1e-12);
  EXPECT_NO_THROW(check_contiguity(capped.tokens));
}

TEST(CapSilences, NoOpWhenNothingExceedsCap) {
  const std::vector<AlignedToken> tokens = {tok("A", 0.0, 0.5), tok("sil", 0.5, 2.5),
                                            tok("B", 2.5, 4.0)};
  const auto capped = cap_long_silences(tokens, 2.0);
  EXPECT_EQ(capped.tokens, tokens);
  EXPECT_TRUE(capped.edits.empty());
}

TEST(CapSilences, CumulativeShiftFromTwoSilences) {
  const std::vector<AlignedToken> tokens = {tok("A", 0.0, 0.5), tok("sil", 0.5, 3.0),
                                            tok("B", 3.0, 3.5), tok("sil", 3.5, 6.0),
                                            tok("C", 6.0, 6.5)};
  const auto capped = cap_long_silences(tokens, 2.0);
  EXPECT_NEAR(capped.tokens.back().end_s, 6.5 - 1.0, 1e-12);
  EXPECT_NEAR(capped.tokens[2].start_s, 3.0 - 0.5, 1e-12);
  EXPECT_EQ(capped.edits.size(), 2u);
}

TEST(CapSilencesProperty, PreservesSpeechDurationsOrderAndContiguity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto tokens = random_alignment(rng, 15);
    const auto capped = cap_long_silences(tokens, 2.0);
    ASSERT_EQ(capped.tokens.size(), tokens.size());
    ASSERT_NO_THROW(check_contiguity(capped.tokens));
    double removed = 0.0;
    for (const auto& e : capped.edits) removed += e.removed_duration;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      EXPECT_EQ(capped.tokens[i].token, tokens[i].token);
      if (tokens[i].is_silence) {
        EXPECT_LE(capped.tokens[i].duration(), 2.0 + 1e-12);
      } else {
        EXPECT_NEAR(capped.tokens[i].duration(), tokens[i].duration(), 1e-9);
      }
    }
    EXPECT_NEAR(capped.tokens.back().end_s, tokens.back().end_s - removed, 1e-9);
  }
}

TEST(CapSilences, AudioEditsCutTheSameSpan) {
  const int rate = 1000;
  std::vector<double> audio(6500);
  for (std::size_t i = 0; i < audio.size(); ++i) audio[i] = static_cast<double>(i);
  const std::vector<AlignedToken> tokens = {tok("A", 0.0, 0.5), tok("sil", 0.5, 3.0),
                                            tok("B", 3.0, 3.5), tok("sil", 3.5, 6.0),
                                            tok("C", 6.0, 6.5)};
  const auto capped = cap_long_silences(tokens, 2.0);
  const auto cut = apply_silence_edits(audio, rate, capped.edits);
  ASSERT_EQ(cut.size(), 5500u);
  // Token B starts at original sample 3000 and at the capped time afterwards.
  EXPECT_EQ(cut[time_to_sample(capped.tokens[2].start_s, rate)], 3000.0);
  EXPECT_EQ(cut[time_to_sample(capped.tokens[4].start_s, rate)], 6000.0);
}

// ---------------------------------------------------------------- features

FrameSpec default_spec() { return FrameSpec{}; }

TEST(Features, FrameCountFollowsCenteredFormula) {
  Waveform w{24000, std::vector<double>(24000, 0.1)};
  const auto f = compute_features(w, default_spec());
  EXPECT_EQ(f.num_frames(), 94);
  EXPECT_EQ(f.frames.cols(), 513);
}

TEST(Features, ZeroWaveformGivesZeroMagnitudes) {
  Waveform w{24000, std::vector<double>(5000, 0.0)};
  const auto f = compute_features(w, default_spec());
  EXPECT_EQ(f.frames.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Features, BinCenterSinusoidMatchesDftOracle) {
  const FrameSpec spec = default_spec();
  const int bin = 40;
  const double freq = static_cast<double>(bin) * spec.sample_rate_hz / spec.window_samples;
  Waveform w{spec.sample_rate_hz, std::vector<double>(12000)};
  for (std::size_t n = 0; n < w.samples.size(); ++n) {
    w.samples[n] = std::sin(2.0 * std::numbers::pi * freq * n / spec.sample_rate_hz);
  }
  const auto f = compute_features(w, spec);

  // Every frame whose window lies inside the signal peaks at the tone's bin.
  for (Eigen::Index t = 2; t + 2 < f.num_frames(); ++t) {
    Eigen::Index arg = 0;
    f.frames.row(t).maxCoeff(&arg);
    EXPECT_EQ(arg, bin) << "frame " << t;
  }

  // Direct DFT of one windowed frame.
  const int t = 10;
  const auto window = hann_window(spec.window_samples);
  const int origin = t * spec.hop_samples - spec.window_samples / 2;
  for (int k : {0, bin - 1, bin, bin + 1, 200}) {
    std::complex<double> acc = 0.0;
    for (int n = 0; n < spec.window_samples; ++n) {
      const double x = w.samples[origin + n] * window[n];
      acc += x * std::polar(1.0, -2.0 * std::numbers::pi * k * n / spec.window_samples);
    }
    EXPECT_NEAR(f.frames(t, k), std::abs(acc), 1e-8) << "bin " << k;
  }
}

TEST(Features, RateMismatchAndEmptyInput) {
  EXPECT_THROW(compute_features(Waveform{16000, {0.1, 0.2}}, default_spec()), RateError);
  EXPECT_THROW(compute_features(Waveform{24000, {}}, default_spec()), InputError);
  FrameSpec bad = default_spec();
  bad.hop_samples = 2048;
  EXPECT_THROW(compute_features(Waveform{24000, {0.1}}, bad), ConfigError);
}

TEST(Features, ShortSignalsUseFoldedReflection) {
  const auto f = compute_features(Waveform{24000, {0.5, -0.25, 0.125}}, default_spec());
  EXPECT_EQ(f.num_frames(), 1);
  EXPECT_TRUE(f.frames.allFinite());
  EXPECT_EQ(detail::reflect_index(-1, 3), 1);
  EXPECT_EQ(detail::reflect_index(3, 3), 1);
  EXPECT_EQ(detail::reflect_index(-5, 3), 1);
}

TEST(Features, Deterministic) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.3);
  Waveform w{24000, std::vector<double>(7000)};
  for (auto& x : w.samples) x = n(rng);
  const auto a = compute_features(w, default_spec());
  const auto b = compute_features(w, default_spec());
  EXPECT_TRUE(a.frames == b.frames);
  EXPECT_GE(a.frames.minCoeff(), 0.0);
}

TEST(TimeToFrame, MonotoneInTime) {
  const FrameSpec spec = default_spec();
  std::int64_t previous = 0;
  for (int i = 0; i <= 20000; ++i) {
    const double t = i * 0.000137;
    const auto frame = time_to_frame(t, spec);
    EXPECT_GE(frame, previous);
    previous = frame;
  }
  EXPECT_EQ(time_to_frame(0.16, spec), 15);
}

TEST(Wav, RoundTripWithinQuantization) {
  const auto dir = scratch_dir("corpus_wav");
  Waveform w{24000, {0.0, 0.5, -0.5, 0.999, -1.0}};
  write_wav(dir + "/x.wav", w);
  const auto back = read_wav(dir + "/x.wav");
  EXPECT_EQ(back.sample_rate_hz, 24000);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768.0);
  }
  write_text(dir + "/bad.wav", "not a wav");
  EXPECT_THROW(read_wav(dir + "/bad.wav"), InputError);
}

}  // namespace
}  // namespace prosody::corpus

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

// Corpus ingestion: manifests, forced-alignment files, PCM audio and
// linear-magnitude spectrogram features.

#pragma once

#include <unsupported/Eigen/FFT>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "prosody/common.hpp"

namespace prosody::corpus {

inline constexpr std::string_view kSilenceToken = "sil";

struct UtteranceRecord {
  std::string utterance_id;
  std::string audio_path;
  std::string locale;
  std::string speaker_id;
  std::vector<std::string> phonemes;
  std::string alignment_path;
  std::optional<std::string> dialogue_id;

  bool operator==(const UtteranceRecord&) const = default;
};

struct AlignedToken {
  std::string token;
  double start_s = 0.0;
  double end_s = 0.0;
  bool is_silence = false;

  double duration() const { return end_s - start_s; }
  bool operator==(const AlignedToken&) const = default;
};

struct FrameSpec {
  int sample_rate_hz = 24000;
  int window_samples = 1024;
  int hop_samples = 256;
  int num_bins = 513;

  void validate() const {
    if (sample_rate_hz <= 0 || window_samples <= 0 || hop_samples <= 0) {
      throw ConfigError("frame spec: sizes must be positive");
    }
    if (hop_samples > window_samples) {
      throw ConfigError("frame spec: hop_samples exceeds window_samples");
    }
    if (num_bins != window_samples / 2 + 1) {
      throw ConfigError("frame spec: num_bins must equal window_samples/2+1 (" +
                        std::to_string(window_samples / 2 + 1) + ")");
    }
  }

  bool operator==(const FrameSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const FrameSpec& s) {
  j = {{"sample_rate_hz", s.sample_rate_hz},
       {"window_samples", s.window_samples},
       {"hop_samples", s.hop_samples},
       {"num_bins", s.num_bins}};
}

inline void from_json(const nlohmann::json& j, FrameSpec& s) {
  s.sample_rate_hz = j.value("sample_rate_hz", s.sample_rate_hz);
  s.window_samples = j.value("window_samples", s.window_samples);
  s.hop_samples = j.value("hop_samples", s.hop_samples);
  s.num_bins = j.value("num_bins", s.window_samples / 2 + 1);
}

struct FeatureMatrix {
  Mat<double> frames;  // T x num_bins
  FrameSpec frame_spec;

  Eigen::Index num_frames() const { return frames.rows(); }
};

struct Waveform {
  int sample_rate_hz = 24000;
  std::vector<double> samples;
};

// ---------------------------------------------------------------------------
// Time bookkeeping

// Timestamps are first snapped to the nearest sample so that textual values
// such as 0.16 s map to the frame an exact decimal would.
inline std::int64_t time_to_sample(double t, int sample_rate_hz) {
  return std::llround(t * static_cast<double>(sample_rate_hz));
}

inline std::int64_t time_to_frame(double t, const FrameSpec& spec) {
  const std::int64_t sample = time_to_sample(t, spec.sample_rate_hz);
  if (sample <= 0) return 0;
  return sample / spec.hop_samples;
}

inline std::int64_t frames_for_samples(std::int64_t num_samples,
                                       const FrameSpec& spec) {
  return 1 + num_samples / spec.hop_samples;
}

// ---------------------------------------------------------------------------
// Manifest

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

inline UtteranceRecord parse_manifest_line(const std::string& line,
                                           std::size_t line_number) {
  const std::string where = "manifest line " + std::to_string(line_number);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(where + ": malformed record (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(where + ": record is not an object");

  auto required = [&](const char* field) -> std::string {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
      throw SchemaError(where + ": missing required field \"" + field + "\"");
    }
    if (!it->is_string()) {
      throw SchemaError(where + ": field \"" + field + "\" must be a string");
    }
    return it->get<std::string>();
  };

  UtteranceRecord r;
  r.utterance_id = required("utterance_id");
  r.audio_path = required("audio_path");
  r.locale = required("locale");
  r.speaker_id = required("speaker_id");
  r.phonemes = split_whitespace(required("phonemes"));
  r.alignment_path = required("alignment_path");
  if (auto it = j.find("dialogue_id"); it != j.end() && it->is_string()) {
    r.dialogue_id = it->get<std::string>();
  }
  if (r.utterance_id.empty()) {
    throw SchemaError(where + ": field \"utterance_id\" is empty");
  }
  if (r.phonemes.empty()) {
    throw SchemaError(where + ": field \"phonemes\" is empty");
  }
  return r;
}

// Parses line-delimited JSON records. Blank lines are skipped but still
// counted for error messages. An empty locale set accepts any locale.
inline std::vector<UtteranceRecord> load_manifest(
    std::istream& in, const std::vector<std::string>& allowed_locales = {}) {
  std::vector<UtteranceRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    UtteranceRecord r = parse_manifest_line(line, line_number);
    if (!allowed_locales.empty() &&
        std::find(allowed_locales.begin(), allowed_locales.end(), r.locale) ==
            allowed_locales.end()) {
      throw SchemaError("manifest line " + std::to_string(line_number) +
                        ": locale \"" + r.locale + "\" not in configured set");
    }
    if (!seen.insert(r.utterance_id).second) {
      throw DuplicateError("manifest line " + std::to_string(line_number) +
                           ": duplicate utterance_id \"" + r.utterance_id +
                           "\"");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<UtteranceRecord> load_manifest(
    const std::string& path, const std::vector<std::string>& allowed_locales = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  return load_manifest(in, allowed_locales);
}

inline nlohmann::json manifest_record_json(const UtteranceRecord& r) {
  std::string phonemes;
  for (std::size_t i = 0; i < r.phonemes.size(); ++i) {
    if (i) phonemes += ' ';
    phonemes += r.phonemes[i];
  }
  nlohmann::json j = {{"utterance_id", r.utterance_id},
                      {"audio_path", r.audio_path},
                      {"locale", r.locale},
                      {"speaker_id", r.speaker_id},
                      {"phonemes", phonemes},
                      {"alignment_path", r.alignment_path}};
  if (r.dialogue_id) j["dialogue_id"] = *r.dialogue_id;
  return j;
}

// ---------------------------------------------------------------------------
// Alignment files: one "token<TAB>start_s<TAB>end_s" row per line.

inline constexpr double kContiguityToleranceS = 1e-6;

inline void check_contiguity(const std::vector<AlignedToken>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (!(t.start_s >= 0.0) || !(t.end_s > t.start_s)) {
      throw ContiguityError("alignment token " + std::to_string(i) + " (" +
                            t.token + "): requires 0 <= start < end");
    }
    if (i == 0 && std::abs(t.start_s) > kContiguityToleranceS) {
      throw ContiguityError("alignment must start at 0");
    }
    if (i > 0 &&
        std::abs(tokens[i - 1].end_s - t.start_s) > kContiguityToleranceS) {
      std::ostringstream msg;
      msg << "alignment token " << i << " (" << t.token << "): "
          << (t.start_s > tokens[i - 1].end_s ? "gap" : "overlap") << " at "
          << tokens[i - 1].end_s << "-" << t.start_s;
      throw ContiguityError(msg.str());
    }
  }
}

inline double parse_seconds(std::string_view field, std::size_t line_number) {
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw SchemaError("alignment line " + std::to_string(line_number) +
                      ": bad timestamp \"" + std::string(field) + "\"");
  }
  return value;
}

inline std::vector<AlignedToken> parse_alignment(std::istream& in) {
  std::vector<AlignedToken> tokens;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 3 || fields[0].empty()) {
      throw SchemaError("alignment line " + std::to_string(line_number) +
                        ": expected token<TAB>start<TAB>end");
    }
    AlignedToken t;
    t.token = std::string(fields[0]);
    t.start_s = parse_seconds(fields[1], line_number);
    t.end_s = parse_seconds(fields[2], line_number);
    t.is_silence = t.token == kSilenceToken;
    tokens.push_back(std::move(t));
  }
  if (tokens.empty()) throw EmptyAlignmentError("alignment is empty");
  check_contiguity(tokens);
  return tokens;
}

inline std::vector<AlignedToken> parse_alignment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open alignment: " + path);
  return parse_alignment(in);
}

inline std::string format_seconds(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

// Shortest round-trip formatting, so parse(serialize(x)) == x.
inline std::string serialize_alignment(const std::vector<AlignedToken>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    out += t.token;
    out += '\t';
    out += format_seconds(t.start_s);
    out += '\t';
    out += format_seconds(t.end_s);
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> speech_phonemes(
    const std::vector<AlignedToken>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (!t.is_silence) out.push_back(t.token);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Long-silence capping

struct SilenceEdit {
  double original_time = 0.0;  // where the cut starts, original timeline
  double removed_duration = 0.0;

  bool operator==(const SilenceEdit&) const = default;
};

struct CappedAlignment {
  std::vector<AlignedToken> tokens;
  std::vector<SilenceEdit> edits;
};

// Shortens every silence longer than max_silence_s by cutting its tail.
inline CappedAlignment cap_long_silences(const std::vector<AlignedToken>& tokens,
                                         double max_silence_s = 2.0) {
  CappedAlignment out;
  out.tokens.reserve(tokens.size());
  double shift = 0.0;
  for (const auto& t : tokens) {
    AlignedToken c = t;
    c.start_s = t.start_s - shift;
    c.end_s = t.end_s - shift;
    if (t.is_silence && t.duration() > max_silence_s) {
      const double removed = t.duration() - max_silence_s;
      out.edits.push_back({t.start_s + max_silence_s, removed});
      c.end_s = c.start_s + max_silence_s;
      shift += removed;
    }
    out.tokens.push_back(std::move(c));
  }
  return out;
}

inline std::vector<double> apply_silence_edits(const std::vector<double>& audio,
                                               int sample_rate_hz,
                                               const std::vector<SilenceEdit>& edits) {
  if (edits.empty()) return audio;
  std::vector<double> out;
  out.reserve(audio.size());
  std::size_t cursor = 0;
  for (const auto& e : edits) {
    const auto begin = static_cast<std::size_t>(std::clamp<std::int64_t>(
        time_to_sample(e.original_time, sample_rate_hz), 0,
        static_cast<std::int64_t>(audio.size())));
    const auto end = static_cast<std::size_t>(std::clamp<std::int64_t>(
        time_to_sample(e.original_time + e.removed_duration, sample_rate_hz), 0,
        static_cast<std::int64_t>(audio.size())));
    if (begin > cursor) out.insert(out.end(), audio.begin() + cursor, audio.begin() + begin);
    cursor = std::max(cursor, end);
  }
  if (cursor < audio.size()) out.insert(out.end(), audio.begin() + cursor, audio.end());
  return out;
}

// ---------------------------------------------------------------------------
// WAV I/O (mono PCM16 RIFF)

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::string_view(reinterpret_cast<char*>(bytes.data()), 4) != "RIFF" ||
      std::string_view(reinterpret_cast<char*>(bytes.data()) + 8, 4) != "WAVE") {
    throw InputError(path + ": not a RIFF/WAVE file");
  }
  Waveform wav;
  int channels = 0, bits = 0, format = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id(reinterpret_cast<char*>(bytes.data()) + pos, 4);
    const std::uint32_t size = detail::read_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw InputError(path + ": truncated chunk");
    if (id == "fmt ") {
      format = detail::read_u16(&bytes[body]);
      channels = detail::read_u16(&bytes[body + 2]);
      wav.sample_rate_hz = static_cast<int>(detail::read_u32(&bytes[body + 4]));
      bits = detail::read_u16(&bytes[body + 14]);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InputError(path + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16 || channels != 1) {
        throw InputError(path + ": expected mono 16-bit PCM");
      }
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::read_u16(&bytes[body + 2 * i]));
        wav.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw InputError(path + ": no data chunk");
}

inline void write_wav(const std::string& path, const Waveform& wav) {
  std::string data;
  data.reserve(wav.samples.size() * 2);
  for (double x : wav.samples) {
    const double clipped = std::clamp(x, -1.0, 32767.0 / 32768.0);
    detail::put_u16(data, static_cast<std::uint16_t>(
                              static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  std::string out = "RIFF";
  detail::put_u32(out, static_cast<std::uint32_t>(36 + data.size()));
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(wav.sample_rate_hz * 2));
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, static_cast<std::uint32_t>(data.size()));
  out += data;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write audio: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---------------------------------------------------------------------------
// Linear-magnitude STFT with centered frames and reflection padding.

namespace detail {

// numpy-style "reflect" index, folded repeatedly for very short signals.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

inline std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  }
  return w;
}

inline FeatureMatrix compute_features(const Waveform& audio, const FrameSpec& spec) {
  spec.validate();
  if (audio.sample_rate_hz != spec.sample_rate_hz) {
    throw RateError("audio sampled at " + std::to_string(audio.sample_rate_hz) +
                    " Hz, expected " + std::to_string(spec.sample_rate_hz) + " Hz");
  }
  if (audio.samples.empty()) throw InputError("audio is empty");

  const auto n = static_cast<std::int64_t>(audio.samples.size());
  const std::int64_t frames = frames_for_samples(n, spec);
  const int win = spec.window_samples;
  const std::int64_t pad = win / 2;
  const auto window = hann_window(win);

  FeatureMatrix out;
  out.frame_spec = spec;
  out.frames.resize(frames, spec.num_bins);

  Eigen::FFT<double> fft;
  std::vector<double> buffer(static_cast<std::size_t>(win));
  std::vector<std::complex<double>> spectrum;
  for (std::int64_t t = 0; t < frames; ++t) {
    const std::int64_t origin = t * spec.hop_samples - pad;
    for (int i = 0; i < win; ++i) {
      buffer[i] = audio.samples[detail::reflect_index(origin + i, n)] * window[i];
    }
    fft.fwd(spectrum, buffer);
    for (int b = 0; b < spec.num_bins; ++b) out.frames(t, b) = std::abs(spectrum[b]);
  }
  return out;
}

// log(1 + |X|), the feature domain used by the models.
inline Mat<double> log_compress(const FeatureMatrix& features) {
  return features.frames.array().log1p().matrix();
}

}  // namespace prosody::corpus

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

// Run orchestration: training, dubbing inference, evaluation and phrase
// inspection. Everything a CLI run produces is a pure function of its
// inputs and seed.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prosody/backbone.hpp"
#include "prosody/common.hpp"
#include "prosody/conditioning.hpp"
#include "prosody/corpus.hpp"
#include "prosody/encoder.hpp"
#include "prosody/evaluation.hpp"
#include "prosody/io.hpp"
#include "prosody/losses.hpp"
#include "prosody/segmentation.hpp"

namespace prosody::pipeline {

namespace fs = std::filesystem;

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitEntryFailures = 1;
inline constexpr int kExitConfigError = 2;

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
  }
}

inline std::string resolve(const fs::path& base, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal().string();
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

struct FrontEnd {
  corpus::FrameSpec frame_spec;
  double min_silence_s = 0.05;
  double max_silence_s = 2.0;
  std::string denoiser = "identity";

  conditioning::FrontEndConfig config() const { return {frame_spec, min_silence_s, max_silence_s}; }
  conditioning::Denoiser make_denoiser() const { return conditioning::make_denoiser(denoiser); }

  void validate() const {
    frame_spec.validate();
    if (!(min_silence_s >= 0.0) || !(max_silence_s > 0.0)) {
      throw ConfigError("front_end: silence thresholds must be non-negative");
    }
    conditioning::make_denoiser(denoiser);
  }
};

inline void to_json(nlohmann::json& j, const FrontEnd& f) {
  j = {{"frame_spec", f.frame_spec},
       {"min_silence_s", f.min_silence_s},
       {"max_silence_s", f.max_silence_s},
       {"denoiser", f.denoiser}};
}

inline void from_json(const nlohmann::json& j, FrontEnd& f) {
  detail::check_keys(j, {"frame_spec", "min_silence_s", "max_silence_s", "denoiser"}, "front_end");
  if (j.contains("frame_spec")) {
    detail::check_keys(j.at("frame_spec"), {"sample_rate_hz", "window_samples", "hop_samples", "num_bins"},
                       "front_end.frame_spec");
    corpus::from_json(j.at("frame_spec"), f.frame_spec);
  }
  f.min_silence_s = j.value("min_silence_s", f.min_silence_s);
  f.max_silence_s = j.value("max_silence_s", f.max_silence_s);
  f.denoiser = j.value("denoiser", f.denoiser);
}

struct TrainingSchedule {
  int steps = 500;
  int batch_size = 0;  // 0: the whole corpus every step
};

struct RunConfig {
  std::uint64_t seed = 1;
  Variant mode = Variant::kPvae;
  std::string manifest;
  std::string output_dir;
  std::string checkpoint;  // defaults to <output_dir>/model.ckpt
  std::vector<std::string> locales;  // empty: accept any
  FrontEnd front_end;
  backbone::ModelConfig model;
  losses::LossWeights loss;
  backbone::OptimizerConfig optimizer;
  TrainingSchedule training;

  std::string checkpoint_path() const {
    return checkpoint.empty() ? (fs::path(output_dir) / "model.ckpt").string() : checkpoint;
  }
};

// Relative paths are resolved against `base_dir` (the config file's folder).
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
  try {
    detail::check_keys(j, {"seed", "mode", "manifest", "output_dir", "checkpoint", "locales",
                           "front_end", "model", "loss", "optimizer", "training"},
                       "config");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.mode = parse_variant(j.value("mode", std::string("PVAE")));
    if (!j.contains("manifest")) throw ConfigError("config: missing \"manifest\"");
    if (!j.contains("output_dir")) throw ConfigError("config: missing \"output_dir\"");
    c.manifest = detail::resolve(base_dir, j.at("manifest").get<std::string>());
    c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    c.checkpoint = detail::resolve(base_dir, j.value("checkpoint", std::string()));
    c.locales = j.value("locales", c.locales);
    if (j.contains("front_end")) c.front_end = j.at("front_end").get<FrontEnd>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::check_keys(m, {"encoder", "backbone", "num_bins"}, "model");
      if (m.contains("encoder")) {
        detail::check_keys(m.at("encoder"),
                           {"conv_layers", "conv_channels", "kernel", "stride", "recurrent_channels",
                            "latent_dim", "use_recurrence", "downsampling", "log_variance_min",
                            "log_variance_max"},
                           "model.encoder");
      }
      if (m.contains("backbone")) {
        detail::check_keys(m.at("backbone"),
                           {"text_channels", "decoder_channels", "decoder_layers", "decoder_kernel",
                            "speaker_embedding_dim", "locale_embedding_dim"},
                           "model.backbone");
      }
      backbone::from_json(m, c.model);
      if (m.contains("num_bins") && c.model.num_bins != c.front_end.frame_spec.num_bins) {
        throw ConfigError("model.num_bins disagrees with front_end.frame_spec.num_bins");
      }
    }
    c.model.num_bins = c.front_end.frame_spec.num_bins;
    if (j.contains("loss")) {
      detail::check_keys(j.at("loss"), {"alpha1", "alpha2", "beta1", "beta2"}, "loss");
      losses::from_json(j.at("loss"), c.loss);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      detail::check_keys(o, {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"}, "optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      detail::check_keys(t, {"steps", "batch_size"}, "training");
      c.training.steps = t.value("steps", c.training.steps);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
    }
    c.front_end.validate();
    c.model.encoder.validate();
    c.loss.validate();
    if (c.training.steps < 0 || c.training.batch_size < 0) {
      throw ConfigError("training: steps and batch_size must be non-negative");
    }
    if (!(c.optimizer.learning_rate >= 0.0)) throw ConfigError("optimizer: negative learning rate");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(detail::read_json_file(path), fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Vocabulary: phoneme, speaker and locale ids, fixed at training time.

struct Vocabulary {
  std::vector<std::string> phonemes;
  std::vector<std::string> speakers;
  std::vector<std::string> locales;

  static Vocabulary build(const std::vector<corpus::UtteranceRecord>& records) {
    std::set<std::string> p, s, l;
    for (const auto& r : records) {
      p.insert(r.phonemes.begin(), r.phonemes.end());
      s.insert(r.speaker_id);
      l.insert(r.locale);
    }
    return {{p.begin(), p.end()}, {s.begin(), s.end()}, {l.begin(), l.end()}};
  }

  int phoneme_id(const std::string& x) const { return lookup(phonemes, x, "phoneme"); }
  int speaker_id(const std::string& x) const { return lookup(speakers, x, "speaker"); }
  int locale_id(const std::string& x) const { return lookup(locales, x, "locale"); }

  std::vector<int> phoneme_ids(const std::vector<std::string>& xs) const {
    std::vector<int> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(phoneme_id(x));
    return out;
  }

  bool operator==(const Vocabulary&) const = default;

 private:
  static int lookup(const std::vector<std::string>& table, const std::string& x, const char* what) {
    const auto it = std::lower_bound(table.begin(), table.end(), x);
    if (it == table.end() || *it != x) {
      throw IdError(std::string("unknown ") + what + " \"" + x + "\"");
    }
    return static_cast<int>(it - table.begin());
  }
};

inline void to_json(nlohmann::json& j, const Vocabulary& v) {
  j = {{"phonemes", v.phonemes}, {"speakers", v.speakers}, {"locales", v.locales}};
}

inline void from_json(const nlohmann::json& j, Vocabulary& v) {
  v.phonemes = j.at("phonemes").get<std::vector<std::string>>();
  v.speakers = j.at("speakers").get<std::vector<std::string>>();
  v.locales = j.at("locales").get<std::vector<std::string>>();
}

// ---------------------------------------------------------------------------
// Data loading

struct LoadedUtterance {
  corpus::UtteranceRecord record;
  conditioning::PreparedUtterance prepared;
};

inline std::vector<corpus::UtteranceRecord> load_records(const std::string& manifest,
                                                         const std::vector<std::string>& locales = {}) {
  auto records = corpus::load_manifest(manifest, locales);
  const fs::path base = fs::path(manifest).parent_path();
  for (auto& r : records) {
    r.audio_path = detail::resolve(base, r.audio_path);
    r.alignment_path = detail::resolve(base, r.alignment_path);
  }
  return records;
}

// Reads, caps and featurizes one utterance. The manifest phoneme string must
// match the speech tokens of the alignment.
inline LoadedUtterance load_utterance(const corpus::UtteranceRecord& record, const FrontEnd& front_end) {
  const auto tokens = corpus::parse_alignment(record.alignment_path);
  if (corpus::speech_phonemes(tokens) != record.phonemes) {
    throw SchemaError("utterance \"" + record.utterance_id +
                      "\": manifest phonemes disagree with the alignment");
  }
  const auto audio = corpus::read_wav(record.audio_path);
  return {record, conditioning::prepare_utterance(audio, tokens, front_end.config(),
                                                  front_end.make_denoiser())};
}

inline backbone::TrainingExample to_training_example(const LoadedUtterance& u, const Vocabulary& vocab,
                                                     Variant mode) {
  backbone::TrainingExample ex;
  ex.utterance_id = u.record.utterance_id;
  ex.target_features = u.prepared.features;
  ex.denoised_features = u.prepared.denoised_features;
  ex.noise_features = u.prepared.noise_features;
  ex.spans = segmentation::spans_for_mode(u.prepared.phrases, mode);
  ex.phoneme_ids = vocab.phoneme_ids(u.prepared.phonemes);
  ex.durations = u.prepared.durations;
  ex.speaker_id = vocab.speaker_id(u.record.speaker_id);
  ex.locale_id = vocab.locale_id(u.record.locale);
  return ex;
}

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  int step = 0;  // 1-based
  losses::LossBreakdown loss;
};

inline nlohmann::json step_json(const StepRecord& r) {
  nlohmann::json j = r.loss;
  j["step"] = r.step;
  return j;
}

inline std::uint64_t noise_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

// Runs `schedule.steps` optimizer steps. Batches are consecutive slices of a
// per-epoch shuffled order; with batch_size 0 every step sees the whole set.
template <typename S>
std::vector<StepRecord> train_model(backbone::Model<S>& model,
                                    const std::vector<backbone::TrainingExample>& examples,
                                    const losses::LossWeights& weights,
                                    const backbone::OptimizerConfig& optimizer_config,
                                    const TrainingSchedule& schedule, std::uint64_t seed,
                                    const std::function<void(const StepRecord&)>& on_step = {}) {
  if (examples.empty()) throw InputError("no training examples");
  backbone::AdamW<S> optimizer(optimizer_config);
  std::mt19937_64 rng(noise_seed(seed));
  const std::size_t n = examples.size();
  const std::size_t batch = schedule.batch_size <= 0 ? n : std::min<std::size_t>(schedule.batch_size, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  std::vector<StepRecord> log;
  log.reserve(static_cast<std::size_t>(schedule.steps));
  for (int step = 1; step <= schedule.steps; ++step) {
    std::vector<backbone::TrainingExample> items;
    if (batch == n) {
      items = examples;
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        if (cursor == n) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        items.push_back(examples[order[cursor++]]);
      }
    }
    StepRecord record{step, backbone::train_step(items, model, weights, optimizer, rng)};
    if (on_step) on_step(record);
    log.push_back(record);
  }
  return log;
}

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<StepRecord> log;
};

inline nlohmann::json checkpoint_metadata(const RunConfig& config, const Vocabulary& vocab) {
  return {{"mode", to_string(config.mode)},
          {"seed", config.seed},
          {"steps", config.training.steps},
          {"manifest", config.manifest},
          {"vocabulary", vocab},
          {"front_end", config.front_end},
          {"loss", config.loss}};
}

inline TrainResult run_train(const RunConfig& config) {
  if (config.mode == Variant::kGvaePp) {
    throw ModeError("GVAE-PP is an inference-time variant; train with mode GVAE instead");
  }
  const auto records = load_records(config.manifest, config.locales);
  if (records.empty()) throw InputError("manifest " + config.manifest + " has no utterances");
  const Vocabulary vocab = Vocabulary::build(records);
  std::vector<backbone::TrainingExample> examples;
  for (const auto& r : records) {
    examples.push_back(to_training_example(load_utterance(r, config.front_end), vocab, config.mode));
  }

  backbone::ModelConfig model_config = config.model;
  model_config.num_bins = config.front_end.frame_spec.num_bins;
  model_config.backbone.phoneme_vocab_size = static_cast<int>(vocab.phonemes.size());
  model_config.backbone.speaker_count = static_cast<int>(vocab.speakers.size());
  model_config.backbone.locale_count = static_cast<int>(vocab.locales.size());
  backbone::Model<float> model(model_config);
  model.init(config.seed);

  fs::create_directories(config.output_dir);
  TrainResult result;
  result.log_path = (fs::path(config.output_dir) / "train_log.jsonl").string();
  result.checkpoint_path = config.checkpoint_path();
  std::ofstream log(result.log_path);
  if (!log) throw IoError("cannot write " + result.log_path);
  result.log = train_model(model, examples, config.loss, config.optimizer, config.training, config.seed,
                           [&](const StepRecord& r) { log << step_json(r).dump() << '\n' << std::flush; });
  if (!fs::path(result.checkpoint_path).parent_path().empty()) {
    fs::create_directories(fs::path(result.checkpoint_path).parent_path());
  }
  io::save_checkpoint(result.checkpoint_path, model, checkpoint_metadata(config, vocab));
  return result;
}

// ---------------------------------------------------------------------------
// Dubbing

struct DubRequest {
  std::string utterance_id;         // output id
  std::string source_utterance_id;  // reference in the source manifest
  std::string target_text;          // phonemes with "|" phrase breaks
  std::string target_locale;
  std::string target_speaker_id;
  std::string clean_reference_audio;
  std::string clean_reference_alignment;  // defaults to the audio path with .tsv
  std::optional<std::vector<int>> durations;
};

inline DubRequest parse_dub_request(const std::string& line, std::size_t line_number,
                                    const fs::path& base_dir = {}) {
  const std::string where = "request line " + std::to_string(line_number);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(where + ": malformed record (" + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError(where + ": record is not an object");
  auto required = [&](const char* field) {
    auto it = j.find(field);
    if (it == j.end() || !it->is_string()) {
      throw SchemaError(where + ": missing string field \"" + field + "\"");
    }
    return it->get<std::string>();
  };
  DubRequest r;
  r.utterance_id = required("utterance_id");
  r.source_utterance_id = required("source_utterance_id");
  r.target_text = required("target_text");
  r.target_locale = required("target_locale");
  r.target_speaker_id = required("target_speaker_id");
  r.clean_reference_audio = detail::resolve(base_dir, required("clean_reference_audio"));
  if (j.contains("clean_reference_alignment")) {
    r.clean_reference_alignment = detail::resolve(base_dir, required("clean_reference_alignment"));
  } else {
    r.clean_reference_alignment = fs::path(r.clean_reference_audio).replace_extension(".tsv").string();
  }
  if (j.contains("durations")) {
    try {
      r.durations = j.at("durations").get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(where + ": \"durations\" must be a list of integers");
    }
  }
  if (r.utterance_id.empty() || r.utterance_id.find_first_of("/\\") != std::string::npos ||
      r.utterance_id == "." || r.utterance_id == "..") {
    throw SchemaError(where + ": utterance_id must be a plain file name");
  }
  return r;
}

// Which inference layouts a checkpoint trained in `trained` mode may serve.
inline bool mode_allowed(Variant trained, Variant requested) {
  if (trained == Variant::kPvae) return requested == Variant::kPvae;
  return requested == Variant::kGvae || requested == Variant::kGvaePp;
}

inline void check_mode(Variant trained, Variant requested, bool allow_override) {
  if (!mode_allowed(trained, requested) && !allow_override) {
    throw ModeError("checkpoint was trained as " + to_string(trained) + " and cannot serve " +
                    to_string(requested) + " inference without an explicit override");
  }
}

// Each target phrase keeps its source phrase's length, spread evenly over
// its phonemes (at least one frame each).
inline std::vector<int> isochronous_durations(const segmentation::PhraseSet& source_spans,
                                              const std::vector<int>& target_counts) {
  std::vector<int> out;
  for (std::size_t k = 0; k < target_counts.size(); ++k) {
    const int n = target_counts[k];
    const int frames = std::max(source_spans.spans[k].frame_count(), n);
    for (int j = 0; j < n; ++j) out.push_back(frames / n + (j < frames % n ? 1 : 0));
  }
  return out;
}

// Durations used when a request carries none.
enum class DurationPolicy { kConstant, kIsochronous };

inline DurationPolicy parse_duration_policy(const std::string& name) {
  if (name == "constant") return DurationPolicy::kConstant;
  if (name == "isochronous") return DurationPolicy::kIsochronous;
  throw ConfigError("unknown duration policy \"" + name + "\"");
}

struct DurationDefaults {
  DurationPolicy policy = DurationPolicy::kConstant;
  int frames_per_phoneme = 8;
};

struct DubOptions {
  std::string checkpoint;
  std::string requests;
  std::string out_dir;
  std::string manifest;  // defaults to the manifest recorded in the checkpoint
  std::optional<Variant> mode;  // defaults to the checkpoint's training mode
  bool allow_mode_override = false;
  DurationDefaults durations;
};

struct DubEntryResult {
  std::string utterance_id;
  bool ok = false;
  std::string output_path;
  int frames = 0;
  int phonemes = 0;
  int phrases = 0;
  std::string error_kind;
  std::string message;
};

struct DubReport {
  Variant mode = Variant::kPvae;
  std::vector<DubEntryResult> entries;

  int failures() const {
    return static_cast<int>(std::count_if(entries.begin(), entries.end(),
                                          [](const auto& e) { return !e.ok; }));
  }
  int exit_code() const { return failures() == 0 ? kExitOk : kExitEntryFailures; }
};

// Everything needed to serve requests from one checkpoint.
class Dubber {
 public:
  Dubber(io::Checkpoint<float> checkpoint, std::vector<corpus::UtteranceRecord> source_records,
         Variant mode, DurationDefaults durations = {})
      : ckpt_(std::move(checkpoint)), mode_(mode), durations_(durations) {
    if (durations_.frames_per_phoneme < 1) throw ConfigError("frames per phoneme must be >= 1");
    const auto& meta = ckpt_.metadata;
    try {
      vocab_ = meta.at("vocabulary").get<Vocabulary>();
      front_end_ = meta.at("front_end").get<FrontEnd>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    for (auto& r : source_records) sources_.emplace(r.utterance_id, std::move(r));
  }

  Variant mode() const { return mode_; }

  // Predicted log-magnitude features for one request.
  Mat<float> dub(const DubRequest& request, DubEntryResult* info = nullptr) const {
    const auto it = sources_.find(request.source_utterance_id);
    if (it == sources_.end()) {
      throw InputError("unknown source utterance \"" + request.source_utterance_id + "\"");
    }
    const auto source = load_utterance(it->second, front_end_);
    const auto& model = ckpt_.model;

    // Layout of the source reference and the matching target plan.
    const segmentation::PhraseSet spans = segmentation::spans_for_mode(source.prepared.phrases, mode_);
    conditioning::ConditioningPlan plan;
    if (mode_ == Variant::kGvae) {
      std::string merged;
      for (const auto& token : corpus::split_whitespace(request.target_text)) {
        if (token == conditioning::kPhraseBreak) continue;
        merged += token + " ";
      }
      plan = conditioning::make_cross_lingual_plan(spans, merged);
    } else {
      plan = conditioning::make_cross_lingual_plan(spans, request.target_text);
    }
    plan.target_locale = request.target_locale;
    plan.target_speaker_id = request.target_speaker_id;

    const std::vector<int> ids = vocab_.phoneme_ids(plan.target_phonemes);
    const int speaker = vocab_.speaker_id(request.target_speaker_id);
    const int locale = vocab_.locale_id(request.target_locale);
    std::vector<int> durations;
    if (request.durations) {
      durations = *request.durations;
      if (durations.size() != ids.size()) {
        throw ShapeError("request gives " + std::to_string(durations.size()) + " durations for " +
                         std::to_string(ids.size()) + " target phonemes");
      }
    } else if (durations_.policy == DurationPolicy::kIsochronous) {
      durations = isochronous_durations(spans, plan.target_phrase_phoneme_counts);
    } else {
      durations.assign(ids.size(), durations_.frames_per_phoneme);
    }

    const Mat<float> denoised = source.prepared.denoised_features.cast<float>();
    const auto posteriors = model.prosody_encoder.forward(denoised, spans).posteriors;
    std::vector<Vec<float>> prosody;
    for (const auto& p : posteriors) {
      prosody.push_back(encoder::sample_embedding(p, encoder::SampleMode::kInference).values);
    }

    if (!fs::exists(request.clean_reference_audio)) {
      throw IoError("clean reference audio not found: " + request.clean_reference_audio);
    }
    if (!fs::exists(request.clean_reference_alignment)) {
      throw IoError("clean reference alignment not found: " + request.clean_reference_alignment);
    }
    const auto noise = conditioning::clean_noise_embeddings<float>(
        corpus::read_wav(request.clean_reference_audio),
        corpus::parse_alignment(request.clean_reference_alignment), spans.size(),
        model.noise_encoder, front_end_.config(), front_end_.make_denoiser());

    const auto cond = conditioning::build_conditioning(prosody, noise, plan);
    const Mat<float> text = backbone::encode_text(ids, speaker, locale, model);
    auto out = backbone::synthesize(text, cond, durations, model);
    if (info) {
      info->frames = static_cast<int>(out.predicted_features.rows());
      info->phonemes = static_cast<int>(ids.size());
      info->phrases = spans.size();
    }
    return std::move(out.predicted_features);
  }

 private:
  io::Checkpoint<float> ckpt_;
  Variant mode_;
  DurationDefaults durations_;
  Vocabulary vocab_;
  FrontEnd front_end_;
  std::map<std::string, corpus::UtteranceRecord> sources_;
};

inline Variant checkpoint_mode(const nlohmann::json& metadata) {
  if (!metadata.contains("mode")) throw ConfigError("checkpoint does not record its training mode");
  return parse_variant(metadata.at("mode").get<std::string>());
}

inline nlohmann::json entry_json(const DubEntryResult& e) {
  if (e.ok) {
    return {{"utterance_id", e.utterance_id},
            {"features", fs::path(e.output_path).filename().string()},
            {"frames", e.frames},
            {"phonemes", e.phonemes},
            {"phrases", e.phrases}};
  }
  return {{"utterance_id", e.utterance_id}, {"error", e.error_kind}, {"message", e.message}};
}

// Serves every request; entry-level failures are recorded in errors.jsonl
// and never abort the batch. Run-level problems (unreadable checkpoint or
// request file, disallowed mode) throw.
inline DubReport run_dub(const DubOptions& options) {
  auto ckpt = io::load_checkpoint<float>(options.checkpoint);
  const Variant trained = checkpoint_mode(ckpt.metadata);
  const Variant mode = options.mode.value_or(trained);
  check_mode(trained, mode, options.allow_mode_override);

  std::string manifest = options.manifest;
  if (manifest.empty()) manifest = ckpt.metadata.value("manifest", std::string());
  if (manifest.empty()) throw ConfigError("no source manifest given and none recorded in the checkpoint");
  std::ifstream requests(options.requests);
  if (!requests) throw IoError("cannot open requests: " + options.requests);

  Dubber dubber(std::move(ckpt), load_records(manifest), mode, options.durations);
  fs::create_directories(options.out_dir);
  std::ofstream outputs(fs::path(options.out_dir) / "outputs.jsonl");
  std::ofstream errors(fs::path(options.out_dir) / "errors.jsonl");
  if (!outputs || !errors) throw IoError("cannot write to " + options.out_dir);

  DubReport report;
  report.mode = mode;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  const fs::path base = fs::path(options.requests).parent_path();
  while (std::getline(requests, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    DubEntryResult entry;
    entry.utterance_id = "line" + std::to_string(line_number);
    try {
      const DubRequest request = parse_dub_request(line, line_number, base);
      entry.utterance_id = request.utterance_id;
      if (!seen.insert(request.utterance_id).second) {
        throw DuplicateError("duplicate request utterance_id \"" + request.utterance_id + "\"");
      }
      const Mat<float> features = dubber.dub(request, &entry);
      entry.output_path = (fs::path(options.out_dir) / (request.utterance_id + ".npy")).string();
      io::write_npy(entry.output_path, features);
      entry.ok = true;
      outputs << entry_json(entry).dump() << '\n';
    } catch (const Error& e) {
      entry.error_kind = e.kind();
      entry.message = e.what();
      errors << entry_json(entry).dump() << '\n';
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::string out_dir;      // dub output directory (reads outputs.jsonl)
  std::string references;   // JSONL: utterance_id, text, features (.npy) or audio (.wav)
  std::string transcripts;  // optional JSONL: utterance_id, text; bypasses ASR
  std::vector<std::string> metrics = {"wer", "cfdsd"};
  std::string extractor = "synthetic";  // "none" disables
  std::string asr = "none";
  corpus::FrameSpec frame_spec;  // for reference audio given as .wav
  std::string report;            // defaults to <out_dir>/metrics.json
};

struct EvalPlugins {
  std::optional<evaluation::FeatureExtractor> extractor;
  std::optional<evaluation::Recognizer> recognizer;
};

// Built-in plug-ins. No speech recognizer ships with the library; WER needs
// transcripts unless a caller supplies one.
inline EvalPlugins resolve_plugins(const EvalOptions& options) {
  EvalPlugins p;
  if (options.extractor == "synthetic") {
    p.extractor = evaluation::synthetic_extractor(8);
  } else if (options.extractor != "none" && !options.extractor.empty()) {
    throw ConfigError("unknown feature extractor \"" + options.extractor + "\"");
  }
  if (options.asr != "none" && !options.asr.empty()) {
    throw ConfigError("unknown speech recognizer \"" + options.asr + "\"");
  }
  return p;
}

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(std::string(what) + " line " + std::to_string(n) + ": " + e.what());
    }
    if (!rows.back().is_object() || !rows.back().contains("utterance_id")) {
      throw SchemaError(std::string(what) + " line " + std::to_string(n) + ": missing utterance_id");
    }
  }
  return rows;
}

}  // namespace detail

struct EvalReport {
  nlohmann::json metrics;
  std::string path;
};

inline EvalReport run_eval(const EvalOptions& options, EvalPlugins plugins) {
  const bool want_wer = std::count(options.metrics.begin(), options.metrics.end(), "wer") > 0;
  const bool want_cfdsd = std::count(options.metrics.begin(), options.metrics.end(), "cfdsd") > 0;
  for (const auto& m : options.metrics) {
    if (m != "wer" && m != "cfdsd") throw ConfigError("unknown metric \"" + m + "\"");
  }
  if (want_cfdsd && !plugins.extractor) {
    throw ConfigError("cfdsd requested but no feature extractor is configured");
  }
  if (want_wer && options.transcripts.empty() && !plugins.recognizer) {
    throw ConfigError("wer requested but neither transcripts nor a speech recognizer were given");
  }
  if (options.references.empty()) throw ConfigError("eval needs --references");

  const fs::path ref_base = fs::path(options.references).parent_path();
  std::map<std::string, nlohmann::json> references;
  for (auto& r : detail::read_jsonl(options.references, "references")) {
    const auto id = r.at("utterance_id").get<std::string>();
    if (!references.emplace(id, std::move(r)).second) {
      throw DuplicateError("references: duplicate utterance_id \"" + id + "\"");
    }
  }

  // Generated outputs, if a dub output directory is available.
  std::map<std::string, nlohmann::json> outputs;
  const fs::path outputs_path = fs::path(options.out_dir) / "outputs.jsonl";
  if (want_cfdsd || (want_wer && options.transcripts.empty()) || fs::exists(outputs_path)) {
    for (auto& r : detail::read_jsonl(outputs_path.string(), "outputs")) {
      outputs.emplace(r.at("utterance_id").get<std::string>(), std::move(r));
    }
  }
  auto generated_features = [&](const std::string& id) {
    return io::read_npy(detail::resolve(options.out_dir, outputs.at(id).at("features").get<std::string>()));
  };
  auto reference_features = [&](const nlohmann::json& r) -> Mat<double> {
    if (r.contains("features")) return io::read_npy(detail::resolve(ref_base, r.at("features").get<std::string>()));
    if (r.contains("audio")) {
      return corpus::log_compress(corpus::compute_features(
          corpus::read_wav(detail::resolve(ref_base, r.at("audio").get<std::string>())), options.frame_spec));
    }
    throw SchemaError("reference \"" + r.at("utterance_id").get<std::string>() +
                      "\" has neither features nor audio");
  };

  nlohmann::json report = {{"metrics", options.metrics}, {"wer", nullptr}, {"wer_shortest_25", nullptr},
                           {"cfdsd", nullptr}};
  std::map<std::string, nlohmann::json> rows;

  if (want_wer) {
    std::map<std::string, std::vector<std::string>> hypotheses;
    if (!options.transcripts.empty()) {
      for (const auto& t : detail::read_jsonl(options.transcripts, "transcripts")) {
        hypotheses[t.at("utterance_id").get<std::string>()] =
            corpus::split_whitespace(t.value("text", std::string()));
      }
    } else {
      for (const auto& [id, o] : outputs) hypotheses[id] = (*plugins.recognizer)(generated_features(id));
    }
    std::vector<evaluation::TranscriptPair> pairs;
    std::vector<std::pair<std::string, int>> lengths;
    for (const auto& [id, hyp] : hypotheses) {
      const auto it = references.find(id);
      if (it == references.end() || !it->second.contains("text")) {
        throw PairingError("no reference transcript for \"" + id + "\"");
      }
      auto ref_words = corpus::split_whitespace(it->second.at("text").get<std::string>());
      // Length for the shortest-quartile split: target phoneme count.
      int length = static_cast<int>(ref_words.size());
      if (outputs.count(id) && outputs.at(id).contains("phonemes")) {
        length = outputs.at(id).at("phonemes").get<int>();
      } else if (it->second.contains("phonemes")) {
        length = static_cast<int>(corpus::split_whitespace(it->second.at("phonemes").get<std::string>()).size());
      }
      lengths.emplace_back(id, length);
      pairs.push_back({id, std::move(ref_words), hyp});
    }
    const auto wer = evaluation::word_error_rate(pairs);
    const auto shortest = evaluation::shortest_quartile(lengths);
    const std::set<std::string> short_ids(shortest.begin(), shortest.end());
    std::vector<evaluation::TranscriptPair> short_pairs;
    for (const auto& p : pairs) {
      if (short_ids.count(p.utterance_id)) short_pairs.push_back(p);
    }
    report["wer"] = wer.corpus_wer;
    report["wer_shortest_25"] = evaluation::word_error_rate(short_pairs).corpus_wer;
    report["shortest_25_ids"] = shortest;
    for (std::size_t i = 0; i < wer.pairs.size(); ++i) {
      const auto& d = wer.pairs[i];
      auto& row = rows[d.utterance_id];
      row["utterance_id"] = d.utterance_id;
      row["length"] = lengths[i].second;
      row["wer"] = d.wer;
      row["substitutions"] = d.counts.substitutions;
      row["deletions"] = d.counts.deletions;
      row["insertions"] = d.counts.insertions;
      row["reference_words"] = d.counts.reference_length;
      row["shortest_25"] = short_ids.count(d.utterance_id) > 0;
    }
  }

  if (want_cfdsd) {
    evaluation::EmbeddingSet generated, reference;
    for (const auto& [id, o] : outputs) generated[id] = (*plugins.extractor)(generated_features(id));
    for (const auto& [id, r] : references) reference[id] = (*plugins.extractor)(reference_features(r));
    report["cfdsd"] = evaluation::cfdsd(generated, reference);
    for (const auto& [id, v] : generated) rows[id]["utterance_id"] = id;
  }

  report["utterances"] = nlohmann::json::array();
  for (auto& [id, row] : rows) report["utterances"].push_back(row);
  report["utterance_count"] = rows.size();

  EvalReport out{report, options.report.empty()
                             ? (fs::path(options.out_dir) / "metrics.json").string()
                             : options.report};
  if (!fs::path(out.path).parent_path().empty()) fs::create_directories(fs::path(out.path).parent_path());
  std::ofstream(out.path) << report.dump(2) << '\n';
  return out;
}

inline EvalReport run_eval(const EvalOptions& options) { return run_eval(options, resolve_plugins(options)); }

// ---------------------------------------------------------------------------
// Phrase inspection

struct InspectResult {
  std::vector<nlohmann::json> rows;    // one per utterance that segmented
  std::vector<nlohmann::json> errors;  // one per utterance that failed
  int exit_code() const { return errors.empty() ? kExitOk : kExitEntryFailures; }
};

inline nlohmann::json phrase_json(const std::string& id, const segmentation::PhraseSet& set) {
  nlohmann::json phrases = nlohmann::json::array();
  for (const auto& s : set.spans) {
    phrases.push_back({{"index", s.index},
                       {"phonemes", {s.phoneme_begin, s.phoneme_end}},
                       {"frames", {s.frame_begin, s.frame_end}},
                       {"boundary_silence_s", s.boundary_silence_s}});
  }
  return {{"utterance_id", id},
          {"phrase_count", set.size()},
          {"phoneme_counts", set.phoneme_counts()},
          {"total_frames", set.total_frames},
          {"phrases", phrases}};
}

// Segments every manifest entry from its alignment alone (after silence
// capping); audio is not read.
inline InspectResult inspect_phrases(const std::string& manifest, const FrontEnd& front_end) {
  front_end.frame_spec.validate();
  InspectResult result;
  for (const auto& r : load_records(manifest)) {
    try {
      const auto tokens =
          corpus::cap_long_silences(corpus::parse_alignment(r.alignment_path), front_end.max_silence_s).tokens;
      if (corpus::speech_phonemes(tokens) != r.phonemes) {
        throw SchemaError("manifest phonemes disagree with the alignment");
      }
      result.rows.push_back(
          phrase_json(r.utterance_id, segmentation::segment_phrases(tokens, front_end.frame_spec,
                                                                    front_end.min_silence_s)));
    } catch (const Error& e) {
      result.errors.push_back({{"utterance_id", r.utterance_id}, {"error", e.kind()}, {"message", e.what()}});
    }
  }
  return result;
}

}  // namespace prosody::pipeline

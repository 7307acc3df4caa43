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

// prosody_dub: train, dub, eval, inspect-phrases, synth-corpus.
//
// Exit codes: 0 success, 1 per-entry failures (or a diverged run),
// 2 configuration / schema errors.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "prosody/fixtures.hpp"
#include "prosody/pipeline.hpp"

namespace {

using namespace prosody;
namespace pl = prosody::pipeline;

int fail(const Error& e) {
  std::cerr << "error [" << e.kind() << "]: " << e.what() << '\n';
  // A run that diverges is a runtime failure, not a configuration problem.
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e)) {
    return pl::kExitEntryFailures;
  }
  return pl::kExitConfigError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phrase-level prosody transfer for dubbing"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "Run config (JSON)")->required();

  pl::DubOptions dub_options;
  std::string dub_mode;
  auto* dub = app.add_subcommand("dub", "Synthesize dubbed features for a batch of requests");
  dub->add_option("--checkpoint", dub_options.checkpoint)->required();
  dub->add_option("--requests", dub_options.requests, "Requests (JSONL)")->required();
  dub->add_option("--out", dub_options.out_dir, "Output directory")->required();
  dub->add_option("--manifest", dub_options.manifest, "Source manifest (default: from checkpoint)");
  dub->add_option("--mode", dub_mode, "PVAE, GVAE or GVAE-PP (default: training mode)");
  dub->add_flag("--allow-mode-override", dub_options.allow_mode_override,
                "Permit a mode the checkpoint was not trained for");
  std::string duration_policy = "constant";
  dub->add_option("--default-durations", duration_policy,
                  "constant or isochronous, for requests without durations");
  dub->add_option("--frames-per-phoneme", dub_options.durations.frames_per_phoneme,
                  "Frames per phoneme under the constant policy");

  pl::EvalOptions eval_options;
  auto* eval = app.add_subcommand("eval", "Score dubbed outputs");
  eval->add_option("--out", eval_options.out_dir, "Dub output directory")->required();
  eval->add_option("--references", eval_options.references, "References (JSONL)")->required();
  eval->add_option("--transcripts", eval_options.transcripts, "Transcripts of the outputs (JSONL)");
  eval->add_option("--metrics", eval_options.metrics, "wer and/or cfdsd")->delimiter(',');
  eval->add_option("--extractor", eval_options.extractor, "synthetic or none");
  eval->add_option("--asr", eval_options.asr, "Speech recognizer (none)");
  eval->add_option("--report", eval_options.report, "Report path (default: <out>/metrics.json)");

  std::string inspect_manifest, inspect_config;
  pl::FrontEnd inspect_front_end;
  auto* inspect = app.add_subcommand("inspect-phrases", "Print phrase segmentation per utterance");
  inspect->add_option("--manifest", inspect_manifest)->required();
  inspect->add_option("--config", inspect_config, "Take front-end settings from a run config");
  inspect->add_option("--min-silence", inspect_front_end.min_silence_s, "Seconds");
  inspect->add_option("--max-silence", inspect_front_end.max_silence_s, "Seconds");

  fixtures::CorpusOptions corpus_options;
  std::string corpus_out;
  auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic aligned corpus");
  synth->add_option("--out", corpus_out)->required();
  synth->add_option("--count", corpus_options.count);
  synth->add_option("--seed", corpus_options.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pl::kExitConfigError;
  }

  try {
    if (*train) {
      const auto config = pl::load_run_config(config_path);
      const auto result = pl::run_train(config);
      nlohmann::json summary = {{"checkpoint", result.checkpoint_path},
                                {"log", result.log_path},
                                {"steps", result.log.size()}};
      if (!result.log.empty()) summary["final_loss"] = result.log.back().loss;
      std::cout << summary.dump() << '\n';
      return pl::kExitOk;
    }
    if (*dub) {
      if (!dub_mode.empty()) dub_options.mode = parse_variant(dub_mode);
      dub_options.durations.policy = pl::parse_duration_policy(duration_policy);
      const auto report = pl::run_dub(dub_options);
      std::cout << nlohmann::json{{"mode", to_string(report.mode)},
                                  {"entries", report.entries.size()},
                                  {"failures", report.failures()}}
                       .dump()
                << '\n';
      return report.exit_code();
    }
    if (*eval) {
      const auto report = pl::run_eval(eval_options);
      std::cout << nlohmann::json{{"report", report.path},
                                  {"wer", report.metrics.at("wer")},
                                  {"cfdsd", report.metrics.at("cfdsd")}}
                       .dump()
                << '\n';
      return pl::kExitOk;
    }
    if (*inspect) {
      pl::FrontEnd front_end = inspect_front_end;
      if (!inspect_config.empty()) {
        front_end = pl::load_run_config(inspect_config).front_end;
        if (inspect->count("--min-silence")) front_end.min_silence_s = inspect_front_end.min_silence_s;
        if (inspect->count("--max-silence")) front_end.max_silence_s = inspect_front_end.max_silence_s;
      }
      const auto result = pl::inspect_phrases(inspect_manifest, front_end);
      for (const auto& row : result.rows) std::cout << row.dump() << '\n';
      for (const auto& err : result.errors) std::cerr << err.dump() << '\n';
      return result.exit_code();
    }
    if (*synth) {
      auto utterances = fixtures::make_corpus(corpus_options);
      std::cout << fixtures::write_corpus(corpus_out, utterances) << '\n';
      return pl::kExitOk;
    }
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pl::kExitConfigError;
  }
  return pl::kExitOk;
}

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

// A small conditional synthesizer that stands in for the full end-to-end TTS
// model: text encoder with speaker/locale embeddings, phoneme-to-frame
// expansion by durations, and a convolutional decoder predicting
// log-magnitude frames. It exists to train both reference encoders end to
// end; the reconstruction loss is an L1 on features.

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "prosody/common.hpp"
#include "prosody/conditioning.hpp"
#include "prosody/encoder.hpp"
#include "prosody/losses.hpp"
#include "prosody/nn.hpp"
#include "prosody/segmentation.hpp"

namespace prosody::backbone {

struct BackboneConfig {
  int phoneme_vocab_size = 1;
  int text_channels = 64;
  int decoder_channels = 64;
  int decoder_layers = 2;
  int decoder_kernel = 3;
  int speaker_count = 1;
  int locale_count = 1;
  int speaker_embedding_dim = 16;
  int locale_embedding_dim = 8;

  void validate() const {
    for (int v : {phoneme_vocab_size, text_channels, decoder_channels, decoder_kernel,
                  speaker_count, locale_count, speaker_embedding_dim, locale_embedding_dim}) {
      if (v < 1) throw ConfigError("backbone config: sizes must be >= 1");
    }
    if (decoder_layers < 0) throw ConfigError("backbone config: decoder_layers must be >= 0");
    if (decoder_kernel % 2 == 0) throw ConfigError("backbone config: decoder_kernel must be odd");
  }

  bool operator==(const BackboneConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"phoneme_vocab_size", c.phoneme_vocab_size},
       {"text_channels", c.text_channels},
       {"decoder_channels", c.decoder_channels},
       {"decoder_layers", c.decoder_layers},
       {"decoder_kernel", c.decoder_kernel},
       {"speaker_count", c.speaker_count},
       {"locale_count", c.locale_count},
       {"speaker_embedding_dim", c.speaker_embedding_dim},
       {"locale_embedding_dim", c.locale_embedding_dim}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.phoneme_vocab_size = j.value("phoneme_vocab_size", c.phoneme_vocab_size);
  c.text_channels = j.value("text_channels", c.text_channels);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.decoder_kernel = j.value("decoder_kernel", c.decoder_kernel);
  c.speaker_count = j.value("speaker_count", c.speaker_count);
  c.locale_count = j.value("locale_count", c.locale_count);
  c.speaker_embedding_dim = j.value("speaker_embedding_dim", c.speaker_embedding_dim);
  c.locale_embedding_dim = j.value("locale_embedding_dim", c.locale_embedding_dim);
}

// Phoneme embedding plus projected speaker and locale embeddings, added to
// every position.
template <typename S>
class TextEncoder {
 public:
  TextEncoder() = default;
  explicit TextEncoder(const BackboneConfig& c)
      : phonemes_(c.phoneme_vocab_size, c.text_channels),
        speakers_(c.speaker_count, c.speaker_embedding_dim),
        locales_(c.locale_count, c.locale_embedding_dim),
        speaker_proj_(c.speaker_embedding_dim, c.text_channels),
        locale_proj_(c.locale_embedding_dim, c.text_channels) {}

  void init(std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.3);
    for (auto* p : {&phonemes_, &speakers_, &locales_}) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<S>(dist(rng));
    }
    nn::glorot_uniform(speaker_proj_.value, static_cast<int>(speaker_proj_.value.rows()),
                       static_cast<int>(speaker_proj_.value.cols()), rng);
    nn::glorot_uniform(locale_proj_.value, static_cast<int>(locale_proj_.value.rows()),
                       static_cast<int>(locale_proj_.value.cols()), rng);
  }

  int channels() const { return static_cast<int>(phonemes_.value.cols()); }

  Mat<S> encode(const std::vector<int>& phoneme_ids, int speaker_id, int locale_id) const {
    if (phoneme_ids.empty()) throw InputError("phoneme sequence is empty");
    check_id("speaker", speaker_id, speakers_.value.rows());
    check_id("locale", locale_id, locales_.value.rows());
    for (int id : phoneme_ids) check_id("phoneme", id, phonemes_.value.rows());
    const Eigen::Matrix<S, 1, Eigen::Dynamic> identity =
        speakers_.value.row(speaker_id) * speaker_proj_.value +
        locales_.value.row(locale_id) * locale_proj_.value;
    Mat<S> out(static_cast<Eigen::Index>(phoneme_ids.size()), channels());
    for (std::size_t j = 0; j < phoneme_ids.size(); ++j) {
      out.row(static_cast<Eigen::Index>(j)) = phonemes_.value.row(phoneme_ids[j]) + identity;
    }
    return out;
  }

  void backward(const Mat<S>& d_out, const std::vector<int>& phoneme_ids, int speaker_id,
                int locale_id) {
    for (std::size_t j = 0; j < phoneme_ids.size(); ++j) {
      phonemes_.grad.row(phoneme_ids[j]) += d_out.row(static_cast<Eigen::Index>(j));
    }
    const Eigen::Matrix<S, 1, Eigen::Dynamic> d_identity = d_out.colwise().sum();
    speaker_proj_.grad.noalias() += speakers_.value.row(speaker_id).transpose() * d_identity;
    locale_proj_.grad.noalias() += locales_.value.row(locale_id).transpose() * d_identity;
    speakers_.grad.row(speaker_id) += d_identity * speaker_proj_.value.transpose();
    locales_.grad.row(locale_id) += d_identity * locale_proj_.value.transpose();
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    f(prefix + ".phoneme_table", phonemes_);
    f(prefix + ".speaker_table", speakers_);
    f(prefix + ".locale_table", locales_);
    f(prefix + ".speaker_proj", speaker_proj_);
    f(prefix + ".locale_proj", locale_proj_);
  }

 private:
  static void check_id(const char* what, int id, Eigen::Index count) {
    if (id < 0 || id >= count) {
      throw IdError(std::string(what) + " id " + std::to_string(id) + " outside [0, " +
                    std::to_string(count) + ")");
    }
  }

  Parameter<S> phonemes_;
  Parameter<S> speakers_;
  Parameter<S> locales_;
  Parameter<S> speaker_proj_;
  Parameter<S> locale_proj_;
};

template <typename S>
struct SynthOutput {
  Mat<S> predicted_features;  // sum(durations) x num_bins
  std::vector<int> per_phoneme_durations;
};

// Expands [text ‖ conditioning] rows by durations and decodes frames.
template <typename S>
class Synthesizer {
 public:
  struct Cache {
    Mat<S> expanded;
    std::vector<typename nn::Conv1d<S>::Cache> conv;
    std::vector<Mat<S>> pre_activation;
    Mat<S> decoder_output;
    std::vector<int> durations;
  };

  Synthesizer() = default;
  Synthesizer(const BackboneConfig& c, int conditioning_dim, int num_bins)
      : conditioning_dim_(conditioning_dim) {
    int channels = c.text_channels + conditioning_dim;
    for (int l = 0; l < c.decoder_layers; ++l) {
      convs_.emplace_back(channels, c.decoder_channels, c.decoder_kernel);
      channels = c.decoder_channels;
    }
    out_ = nn::Linear<S>(channels, num_bins);
  }

  void init(std::mt19937_64& rng) {
    for (auto& c : convs_) c.init(rng);
    out_.init(rng);
  }

  int conditioning_dim() const { return conditioning_dim_; }

  SynthOutput<S> forward(const Mat<S>& text, const Mat<S>& conditioning,
                         const std::vector<int>& durations, Cache* cache = nullptr) const {
    if (conditioning.rows() != text.rows()) {
      throw ShapeError("conditioning has " + std::to_string(conditioning.rows()) +
                       " rows for " + std::to_string(text.rows()) + " phonemes");
    }
    if (conditioning.cols() != conditioning_dim_) {
      throw ShapeError("conditioning has " + std::to_string(conditioning.cols()) +
                       " channels, decoder expects " + std::to_string(conditioning_dim_));
    }
    if (static_cast<Eigen::Index>(durations.size()) != text.rows()) {
      throw ShapeError("got " + std::to_string(durations.size()) + " durations for " +
                       std::to_string(text.rows()) + " phonemes");
    }
    int frames = 0;
    for (int d : durations) {
      if (d < 1) throw ShapeError("durations must be >= 1 frame");
      frames += d;
    }
    Mat<S> expanded(frames, text.cols() + conditioning.cols());
    Eigen::Index row = 0;
    for (Eigen::Index j = 0; j < text.rows(); ++j) {
      for (int r = 0; r < durations[j]; ++r, ++row) {
        expanded.row(row).head(text.cols()) = text.row(j);
        expanded.row(row).tail(conditioning.cols()) = conditioning.row(j);
      }
    }
    if (cache) {
      cache->conv.assign(convs_.size(), {});
      cache->pre_activation.assign(convs_.size(), {});
      cache->durations = durations;
    }
    Mat<S> x = expanded;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      Mat<S> pre = convs_[l].forward(x, cache ? &cache->conv[l] : nullptr);
      x = nn::relu<S>(pre);
      if (cache) cache->pre_activation[l] = std::move(pre);
    }
    SynthOutput<S> out{out_.forward(x), durations};
    if (cache) {
      cache->expanded = std::move(expanded);
      cache->decoder_output = std::move(x);
    }
    return out;
  }

  // Returns d/d(text) and d/d(conditioning), both per phoneme.
  std::pair<Mat<S>, Mat<S>> backward(const Cache& cache, const Mat<S>& d_pred,
                                     Eigen::Index text_channels) {
    Mat<S> dx = out_.backward(cache.decoder_output, d_pred);
    for (std::size_t l = convs_.size(); l-- > 0;) {
      dx = nn::relu_backward<S>(cache.pre_activation[l], dx);
      dx = convs_[l].backward(cache.conv[l], dx);
    }
    const auto n = static_cast<Eigen::Index>(cache.durations.size());
    Mat<S> d_rows = Mat<S>::Zero(n, dx.cols());
    Eigen::Index row = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      d_rows.row(j) = dx.middleRows(row, cache.durations[j]).colwise().sum();
      row += cache.durations[j];
    }
    return {d_rows.leftCols(text_channels), d_rows.rightCols(d_rows.cols() - text_channels)};
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      convs_[l].for_each_parameter(prefix + ".conv" + std::to_string(l), f);
    }
    out_.for_each_parameter(prefix + ".out", f);
  }

 private:
  int conditioning_dim_ = 0;
  std::vector<nn::Conv1d<S>> convs_;
  nn::Linear<S> out_;
};

struct ModelConfig {
  encoder::EncoderConfig encoder = encoder::EncoderConfig::desk();
  BackboneConfig backbone;
  int num_bins = 513;

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"backbone", c.backbone}, {"num_bins", c.num_bins}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  // Overlay: keys absent from the JSON keep their current values.
  if (j.contains("encoder")) encoder::from_json(j.at("encoder"), c.encoder);
  if (j.contains("backbone")) from_json(j.at("backbone"), c.backbone);
  c.num_bins = j.value("num_bins", c.num_bins);
}

// Prosody encoder (denoised stream), noise encoder (noise stream) and the
// synthesizer they condition.
template <typename S>
struct Model {
  ModelConfig config;
  encoder::ReferenceEncoder<S> prosody_encoder;
  encoder::ReferenceEncoder<S> noise_encoder;
  TextEncoder<S> text_encoder;
  Synthesizer<S> synthesizer;

  Model() = default;
  explicit Model(const ModelConfig& c)
      : config(c),
        prosody_encoder(c.encoder, c.num_bins),
        noise_encoder(c.encoder, c.num_bins),
        text_encoder(c.backbone),
        synthesizer(c.backbone, 2 * c.encoder.latent_dim, c.num_bins) {
    c.backbone.validate();
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    prosody_encoder.init(rng);
    noise_encoder.init(rng);
    text_encoder.init(rng);
    synthesizer.init(rng);
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    prosody_encoder.for_each_parameter("prosody_encoder", f);
    noise_encoder.for_each_parameter("noise_encoder", f);
    text_encoder.for_each_parameter("text_encoder", f);
    synthesizer.for_each_parameter("synthesizer", f);
  }

  void zero_grad() {
    for_each_parameter([](const std::string&, Parameter<S>& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, Parameter<S>& p) {
      n += static_cast<std::size_t>(p.value.size());
    });
    return n;
  }
};

template <typename S>
Mat<S> encode_text(const std::vector<int>& phoneme_ids, int speaker_id, int locale_id,
                   const Model<S>& model) {
  return model.text_encoder.encode(phoneme_ids, speaker_id, locale_id);
}

template <typename S>
SynthOutput<S> synthesize(const Mat<S>& text_encoding,
                          const conditioning::ConditioningMatrix<S>& conditioning,
                          const std::vector<int>& durations, const Model<S>& model) {
  return model.synthesizer.forward(text_encoding, conditioning.rows, durations);
}

// ---------------------------------------------------------------------------
// Training

struct TrainingExample {
  std::string utterance_id;
  Mat<double> target_features;  // T x F, log-compressed original audio
  Mat<double> denoised_features;
  Mat<double> noise_features;
  segmentation::PhraseSet spans;  // already laid out for the training mode
  std::vector<int> phoneme_ids;
  std::vector<int> durations;
  int speaker_id = 0;
  int locale_id = 0;
};

// Standard-normal draws for the reparameterized samples of one example.
template <typename S>
struct NoiseDraw {
  Mat<S> prosody;  // K x latent
  Mat<S> noise;    // K x latent
};

inline void validate_example(const TrainingExample& ex, int num_bins) {
  const std::string where = "example \"" + ex.utterance_id + "\": ";
  const auto frames = ex.target_features.rows();
  if (ex.target_features.cols() != num_bins || ex.denoised_features.cols() != num_bins ||
      ex.noise_features.cols() != num_bins) {
    throw ShapeError(where + "feature bins do not match the model");
  }
  if (ex.denoised_features.rows() != frames || ex.noise_features.rows() != frames) {
    throw ShapeError(where + "stream features differ in frame count");
  }
  if (ex.spans.total_frames != frames) {
    throw ShapeError(where + "spans cover " + std::to_string(ex.spans.total_frames) +
                     " frames, features have " + std::to_string(frames));
  }
  segmentation::validate(ex.spans);
  if (static_cast<int>(ex.phoneme_ids.size()) != ex.spans.total_phonemes() ||
      ex.durations.size() != ex.phoneme_ids.size()) {
    throw ShapeError(where + "phoneme, duration and span counts disagree");
  }
  long total = 0;
  for (int d : ex.durations) total += d;
  if (total != frames) {
    throw ShapeError(where + "durations sum to " + std::to_string(total) + ", expected " +
                     std::to_string(frames));
  }
}

template <typename S>
NoiseDraw<S> draw_noise(const TrainingExample& ex, int latent_dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NoiseDraw<S> d;
  d.prosody.resize(ex.spans.size(), latent_dim);
  d.noise.resize(ex.spans.size(), latent_dim);
  for (Eigen::Index i = 0; i < d.prosody.size(); ++i) d.prosody.data()[i] = static_cast<S>(normal(rng));
  for (Eigen::Index i = 0; i < d.noise.size(); ++i) d.noise.data()[i] = static_cast<S>(normal(rng));
  return d;
}

template <typename S>
struct ExampleResult {
  losses::LossBreakdown loss;
  std::vector<encoder::GaussianPosterior<S>> prosody_posteriors;
  std::vector<encoder::GaussianPosterior<S>> noise_posteriors;
};

// Forward pass for one example; when `gradient_scale` is non-zero, also
// accumulates gradient_scale * d(total)/d(parameters).
template <typename S>
ExampleResult<S> forward_backward(Model<S>& model, const TrainingExample& ex,
                                  const NoiseDraw<S>& draw, const losses::LossWeights& weights,
                                  double gradient_scale) {
  const bool grad = gradient_scale != 0.0;
  const int latent = model.config.encoder.latent_dim;
  const Mat<S> denoised = ex.denoised_features.cast<S>();
  const Mat<S> noise = ex.noise_features.cast<S>();
  const Mat<S> target = ex.target_features.cast<S>();

  auto prosody_pass = model.prosody_encoder.forward(denoised, ex.spans, grad);
  auto noise_pass = model.noise_encoder.forward(noise, ex.spans, grad);
  const int k_count = ex.spans.size();

  std::vector<Vec<S>> prosody_z(k_count), noise_z(k_count);
  for (int k = 0; k < k_count; ++k) {
    const Vec<S> ep = draw.prosody.row(k).transpose();
    const Vec<S> en = draw.noise.row(k).transpose();
    prosody_z[k] = encoder::sample_embedding(prosody_pass.posteriors[k],
                                             encoder::SampleMode::kTrain, &ep).values;
    noise_z[k] = encoder::sample_embedding(noise_pass.posteriors[k],
                                           encoder::SampleMode::kTrain, &en).values;
  }
  const auto plan = conditioning::self_plan(ex.spans);
  const auto cond = conditioning::build_conditioning(prosody_z, noise_z, plan);
  const Mat<S> text = model.text_encoder.encode(ex.phoneme_ids, ex.speaker_id, ex.locale_id);
  typename Synthesizer<S>::Cache synth_cache;
  const auto out = model.synthesizer.forward(text, cond.rows, ex.durations,
                                             grad ? &synth_cache : nullptr);

  const auto lengths = ex.spans.phoneme_counts();
  const double recon = static_cast<double>(losses::l1_reconstruction(out.predicted_features, target));
  ExampleResult<S> result;
  result.loss = losses::total_loss(recon, prosody_pass.posteriors, noise_pass.posteriors,
                                   lengths, weights);
  if (!grad) {
    result.prosody_posteriors = std::move(prosody_pass.posteriors);
    result.noise_posteriors = std::move(noise_pass.posteriors);
    return result;
  }

  const Mat<S> d_pred = losses::l1_reconstruction_gradient(out.predicted_features, target,
                                                           gradient_scale);
  auto [d_text, d_cond] = model.synthesizer.backward(synth_cache, d_pred, text.cols());
  model.text_encoder.backward(d_text, ex.phoneme_ids, ex.speaker_id, ex.locale_id);
  Mat<S> d_zp, d_zn;
  conditioning::build_conditioning_backward<S>(d_cond, plan, latent, d_zp, d_zn);

  auto encoder_grads = [&](const std::vector<encoder::GaussianPosterior<S>>& posts,
                           const Mat<S>& d_z, const Mat<S>& eps, double alpha, double beta,
                           Mat<S>& d_mean, Mat<S>& d_lv) {
    losses::length_weighted_kld_gradient(posts, lengths, beta, gradient_scale * alpha, d_mean, d_lv);
    d_mean += d_z;
    for (int k = 0; k < k_count; ++k) {
      const auto sigma_half = (S(0.5) * posts[k].log_variance.array()).exp() * S(0.5);
      d_lv.row(k).array() += d_z.row(k).array() * sigma_half.transpose() * eps.row(k).array();
    }
  };
  Mat<S> dm, dlv;
  encoder_grads(prosody_pass.posteriors, d_zp, draw.prosody, weights.alpha1, weights.beta1, dm, dlv);
  model.prosody_encoder.backward(prosody_pass.cache, dm, dlv);
  encoder_grads(noise_pass.posteriors, d_zn, draw.noise, weights.alpha2, weights.beta2, dm, dlv);
  model.noise_encoder.backward(noise_pass.cache, dm, dlv);

  result.prosody_posteriors = std::move(prosody_pass.posteriors);
  result.noise_posteriors = std::move(noise_pass.posteriors);
  return result;
}

// Batch loss (mean over examples) and, optionally, its gradient.
template <typename S>
losses::LossBreakdown batch_loss(Model<S>& model, const std::vector<TrainingExample>& batch,
                                 const std::vector<NoiseDraw<S>>& draws,
                                 const losses::LossWeights& weights, bool with_gradient) {
  std::vector<losses::LossBreakdown> items;
  items.reserve(batch.size());
  const double scale = with_gradient ? 1.0 / static_cast<double>(batch.size()) : 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    items.push_back(forward_backward(model, batch[i], draws[i], weights, scale).loss);
  }
  return losses::aggregate_batch(items);
}

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay.
template <typename S>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  long steps() const { return step_; }

  void step(Model<S>& model) {
    ++step_;
    const double lr = config_.learning_rate;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    std::size_t i = 0;
    model.for_each_parameter([&](const std::string&, Parameter<S>& p) {
      if (i == first_.size()) {
        first_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
        second_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      }
      Mat<S>& m = first_[i];
      Mat<S>& v = second_[i];
      m = static_cast<S>(config_.beta1) * m + static_cast<S>(1.0 - config_.beta1) * p.grad;
      v = static_cast<S>(config_.beta2) * v +
          static_cast<S>(1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value *= static_cast<S>(1.0 - lr * config_.weight_decay);
      p.value.array() -= static_cast<S>(lr) * (m.array() / static_cast<S>(c1)) /
                         ((v.array() / static_cast<S>(c2)).sqrt() + static_cast<S>(config_.epsilon));
      ++i;
    });
  }

 private:
  OptimizerConfig config_;
  long step_ = 0;
  std::vector<Mat<S>> first_;
  std::vector<Mat<S>> second_;
};

// One optimizer update on `batch`. Every example is validated before any
// parameter changes.
template <typename S>
losses::LossBreakdown train_step(const std::vector<TrainingExample>& batch, Model<S>& model,
                                 const losses::LossWeights& weights, AdamW<S>& optimizer,
                                 std::mt19937_64& rng) {
  if (batch.empty()) throw InputError("training batch is empty");
  weights.validate();
  for (const auto& ex : batch) validate_example(ex, model.config.num_bins);
  std::vector<NoiseDraw<S>> draws;
  draws.reserve(batch.size());
  for (const auto& ex : batch) draws.push_back(draw_noise<S>(ex, model.config.encoder.latent_dim, rng));

  model.zero_grad();
  const auto loss = batch_loss(model, batch, draws, weights, true);
  if (!loss.finite()) {
    throw DivergenceError("non-finite loss at optimizer step " +
                          std::to_string(optimizer.steps() + 1));
  }
  optimizer.step(model);
  return loss;
}

}  // namespace prosody::backbone

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

// Phrase-level variational reference encoder.
//
// features (T x F)
//   -> conv stack (stride 1, length preserving, ReLU, LayerNorm)
//   -> bidirectional LSTM                 (T x 2H)
//   -> one frame per phrase (middle frame, or mean when configured)
//   -> linear head -> mean ‖ log-variance (K x 2D)
//
// With a single span covering every frame this is the global (GVAE) encoder.

#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prosody/common.hpp"
#include "prosody/nn.hpp"
#include "prosody/segmentation.hpp"

namespace prosody::encoder {

enum class Downsampling { kMiddleFrame, kMeanOfFrames };

struct EncoderConfig {
  int conv_layers = 5;
  int conv_channels = 512;
  int kernel = 3;
  int stride = 1;
  int recurrent_channels = 512;  // per direction
  int latent_dim = 32;
  bool use_recurrence = true;
  Downsampling downsampling = Downsampling::kMiddleFrame;
  double log_variance_min = -12.0;
  double log_variance_max = 6.0;

  static EncoderConfig paper() { return {}; }

  static EncoderConfig desk() {
    EncoderConfig c;
    c.conv_channels = 64;
    c.recurrent_channels = 64;
    c.latent_dim = 8;
    return c;
  }

  void validate() const {
    if (conv_layers < 0 || conv_channels < 1 || kernel < 1 || recurrent_channels < 1 ||
        latent_dim < 1) {
      throw ConfigError("encoder config: sizes must be >= 1");
    }
    if (stride != 1) throw ConfigError("encoder config: stride must be 1");
    if (kernel % 2 == 0) throw ConfigError("encoder config: kernel must be odd");
    if (!(log_variance_min < log_variance_max)) {
      throw ConfigError("encoder config: empty log-variance interval");
    }
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"conv_layers", c.conv_layers},
       {"conv_channels", c.conv_channels},
       {"kernel", c.kernel},
       {"stride", c.stride},
       {"recurrent_channels", c.recurrent_channels},
       {"latent_dim", c.latent_dim},
       {"use_recurrence", c.use_recurrence},
       {"downsampling", c.downsampling == Downsampling::kMeanOfFrames ? "mean" : "middle"},
       {"log_variance_min", c.log_variance_min},
       {"log_variance_max", c.log_variance_max}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.conv_layers = j.value("conv_layers", c.conv_layers);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.kernel = j.value("kernel", c.kernel);
  c.stride = j.value("stride", c.stride);
  c.recurrent_channels = j.value("recurrent_channels", c.recurrent_channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.use_recurrence = j.value("use_recurrence", c.use_recurrence);
  const std::string down = j.value("downsampling", std::string("middle"));
  if (down == "middle") {
    c.downsampling = Downsampling::kMiddleFrame;
  } else if (down == "mean") {
    c.downsampling = Downsampling::kMeanOfFrames;
  } else {
    throw ConfigError("encoder config: unknown downsampling \"" + down + "\"");
  }
  c.log_variance_min = j.value("log_variance_min", c.log_variance_min);
  c.log_variance_max = j.value("log_variance_max", c.log_variance_max);
}

template <typename S>
struct GaussianPosterior {
  Vec<S> mean;
  Vec<S> log_variance;

  bool operator==(const GaussianPosterior& o) const {
    return mean == o.mean && log_variance == o.log_variance;
  }
};

enum class EmbeddingSource { kSampled, kMean };

template <typename S>
struct ProsodyEmbedding {
  Vec<S> values;
  EmbeddingSource source = EmbeddingSource::kMean;
};

enum class SampleMode { kTrain, kInference };

// Reparameterized draw in training, posterior mean at inference.
template <typename S>
ProsodyEmbedding<S> sample_embedding(const GaussianPosterior<S>& posterior, SampleMode mode,
                                     const Vec<S>* noise = nullptr) {
  if (mode == SampleMode::kInference) return {posterior.mean, EmbeddingSource::kMean};
  if (noise == nullptr) {
    throw ConfigError("training-mode sampling requires a standard-normal draw");
  }
  if (noise->size() != posterior.mean.size()) {
    throw ShapeError("noise draw has the wrong dimension");
  }
  Vec<S> values = posterior.mean.array() +
                  (S(0.5) * posterior.log_variance.array()).exp() * noise->array();
  return {std::move(values), EmbeddingSource::kSampled};
}

template <typename S>
class ReferenceEncoder {
 public:
  struct Cache {
    std::vector<typename nn::Conv1d<S>::Cache> conv;
    std::vector<Mat<S>> pre_activation;
    std::vector<typename nn::LayerNorm<S>::Cache> norm;
    Mat<S> recurrent_input;
    typename nn::BiLstm<S>::Cache recurrent;
    Mat<S> pooled;
    Mat<S> raw_log_variance;
    segmentation::PhraseSet spans;
  };

  struct Result {
    std::vector<GaussianPosterior<S>> posteriors;
    Cache cache;
  };

  ReferenceEncoder() = default;

  ReferenceEncoder(const EncoderConfig& config, int input_dim) : config_(config), input_dim_(input_dim) {
    config.validate();
    if (input_dim < 1) throw ConfigError("encoder input dimension must be >= 1");
    int channels = input_dim;
    for (int l = 0; l < config.conv_layers; ++l) {
      convs_.emplace_back(channels, config.conv_channels, config.kernel);
      norms_.emplace_back(config.conv_channels);
      channels = config.conv_channels;
    }
    if (config.use_recurrence) {
      lstm_ = nn::BiLstm<S>(channels, config.recurrent_channels);
      channels = lstm_.output_size();
    }
    head_ = nn::Linear<S>(channels, 2 * config.latent_dim);
  }

  void init(std::mt19937_64& rng) {
    for (auto& c : convs_) c.init(rng);
    if (config_.use_recurrence) lstm_.init(rng);
    head_.init(rng);
  }

  const EncoderConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }
  int latent_dim() const { return config_.latent_dim; }
  int frame_embedding_dim() const {
    if (config_.use_recurrence) return lstm_.output_size();
    return config_.conv_layers > 0 ? config_.conv_channels : input_dim_;
  }
  nn::Linear<S>& head() { return head_; }

  // Frame-level embeddings; one row per input frame.
  Mat<S> frame_embeddings(const Mat<S>& features, Cache* cache = nullptr) const {
    Mat<S> x = features;
    if (cache) {
      cache->conv.assign(convs_.size(), {});
      cache->pre_activation.assign(convs_.size(), {});
      cache->norm.assign(convs_.size(), {});
    }
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      Mat<S> pre = convs_[l].forward(x, cache ? &cache->conv[l] : nullptr);
      x = norms_[l].forward(nn::relu<S>(pre), cache ? &cache->norm[l] : nullptr);
      if (cache) cache->pre_activation[l] = std::move(pre);
    }
    if (config_.use_recurrence) {
      if (cache) cache->recurrent_input = x;
      x = lstm_.forward(x, cache ? &cache->recurrent : nullptr);
    }
    return x;
  }

  Mat<S> downsample(const Mat<S>& frames, const segmentation::PhraseSet& spans) const {
    Mat<S> pooled(spans.size(), frames.cols());
    for (int k = 0; k < spans.size(); ++k) {
      const auto& s = spans.spans[k];
      if (config_.downsampling == Downsampling::kMiddleFrame) {
        pooled.row(k) = frames.row(s.middle_frame());
      } else {
        pooled.row(k) = frames.middleRows(s.frame_begin, s.frame_count()).colwise().mean();
      }
    }
    return pooled;
  }

  Result forward(const Mat<S>& features, const segmentation::PhraseSet& spans,
                 bool keep_cache = false) const {
    check_input(features, spans);
    Result result;
    Cache* cache = keep_cache ? &result.cache : nullptr;
    const Mat<S> frames = frame_embeddings(features, cache);
    Mat<S> pooled = downsample(frames, spans);
    const Mat<S> out = head_.forward(pooled);
    const int d = config_.latent_dim;
    const Mat<S> raw_lv = out.rightCols(d);
    result.posteriors.resize(spans.size());
    for (int k = 0; k < spans.size(); ++k) {
      result.posteriors[k].mean = out.row(k).leftCols(d).transpose();
      result.posteriors[k].log_variance =
          raw_lv.row(k)
              .transpose()
              .cwiseMax(static_cast<S>(config_.log_variance_min))
              .cwiseMin(static_cast<S>(config_.log_variance_max));
    }
    if (cache) {
      cache->pooled = std::move(pooled);
      cache->raw_log_variance = raw_lv;
      cache->spans = spans;
    }
    return result;
  }

  // Accumulates parameter gradients from d(loss)/d(mean) and
  // d(loss)/d(log-variance), both K x latent_dim.
  void backward(const Cache& cache, const Mat<S>& d_mean, const Mat<S>& d_log_variance) {
    const int d = config_.latent_dim;
    const auto& spans = cache.spans;
    Mat<S> d_out(spans.size(), 2 * d);
    d_out.leftCols(d) = d_mean;
    const S lo = static_cast<S>(config_.log_variance_min);
    const S hi = static_cast<S>(config_.log_variance_max);
    for (int k = 0; k < spans.size(); ++k) {
      for (int i = 0; i < d; ++i) {
        const S raw = cache.raw_log_variance(k, i);
        d_out(k, d + i) = (raw >= lo && raw <= hi) ? d_log_variance(k, i) : S(0);
      }
    }
    const Mat<S> d_pooled = head_.backward(cache.pooled, d_out);

    Mat<S> d_frames = Mat<S>::Zero(spans.total_frames, d_pooled.cols());
    for (int k = 0; k < spans.size(); ++k) {
      const auto& s = spans.spans[k];
      if (config_.downsampling == Downsampling::kMiddleFrame) {
        d_frames.row(s.middle_frame()) += d_pooled.row(k);
      } else {
        const S scale = S(1) / static_cast<S>(s.frame_count());
        for (int t = s.frame_begin; t < s.frame_end; ++t) d_frames.row(t) += scale * d_pooled.row(k);
      }
    }
    Mat<S> dx = d_frames;
    if (config_.use_recurrence) dx = lstm_.backward(cache.recurrent_input, cache.recurrent, dx);
    for (std::size_t l = convs_.size(); l-- > 0;) {
      dx = norms_[l].backward(cache.norm[l], dx);
      dx = nn::relu_backward<S>(cache.pre_activation[l], dx);
      dx = convs_[l].backward(cache.conv[l], dx);
    }
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      convs_[l].for_each_parameter(prefix + ".conv" + std::to_string(l), f);
      norms_[l].for_each_parameter(prefix + ".norm" + std::to_string(l), f);
    }
    if (config_.use_recurrence) lstm_.for_each_parameter(prefix + ".lstm", f);
    head_.for_each_parameter(prefix + ".head", f);
  }

 private:
  void check_input(const Mat<S>& features, const segmentation::PhraseSet& spans) const {
    if (features.cols() != input_dim_) {
      throw ShapeError("encoder expects " + std::to_string(input_dim_) +
                       " feature bins, got " + std::to_string(features.cols()));
    }
    if (features.rows() != spans.total_frames) {
      throw ShapeError("feature matrix has " + std::to_string(features.rows()) +
                       " frames but spans cover " + std::to_string(spans.total_frames));
    }
    segmentation::validate(spans);
  }

  EncoderConfig config_;
  int input_dim_ = 0;
  std::vector<nn::Conv1d<S>> convs_;
  std::vector<nn::LayerNorm<S>> norms_;
  nn::BiLstm<S> lstm_;
  nn::Linear<S> head_;
};

// One posterior per span, all computed from a single pass over the utterance.
template <typename S>
std::vector<GaussianPosterior<S>> encode_posteriors(const Mat<S>& features,
                                                    const segmentation::PhraseSet& spans,
                                                    const ReferenceEncoder<S>& encoder) {
  return encoder.forward(features, spans).posteriors;
}

// Each span's frames are encoded on their own, as a one-phrase utterance.
template <typename S>
std::vector<GaussianPosterior<S>> encode_chunked(const Mat<S>& features,
                                                 const segmentation::PhraseSet& spans,
                                                 const ReferenceEncoder<S>& encoder) {
  if (features.rows() != spans.total_frames) {
    throw ShapeError("feature matrix has " + std::to_string(features.rows()) +
                     " frames but spans cover " + std::to_string(spans.total_frames));
  }
  segmentation::validate(spans);
  std::vector<GaussianPosterior<S>> out;
  out.reserve(spans.spans.size());
  for (const auto& s : spans.spans) {
    segmentation::PhraseSet chunk;
    chunk.total_frames = s.frame_count();
    chunk.spans.push_back({0, 0, s.phoneme_count(), 0, s.frame_count(), s.boundary_silence_s});
    const Mat<S> slice = features.middleRows(s.frame_begin, s.frame_count());
    out.push_back(encoder.forward(slice, chunk).posteriors.front());
  }
  return out;
}

}  // namespace prosody::encoder

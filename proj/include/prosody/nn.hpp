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

// Sequence layers with explicit forward/backward passes. Sequences are
// row-major T x C matrices. Backward calls accumulate into Parameter::grad and
// return the gradient with respect to the layer input.

#pragma once

#include <cmath>
#include <random>
#include <string>

#include "prosody/common.hpp"

namespace prosody::nn {

template <typename S>
void glorot_uniform(Mat<S>& w, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(dist(rng));
}

template <typename S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

template <typename S>
Mat<S> relu_backward(const Mat<S>& pre, const Mat<S>& dy) {
  return (pre.array() > S(0)).select(dy, Mat<S>::Zero(dy.rows(), dy.cols()));
}

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// y = x W + b
template <typename S>
struct Linear {
  Parameter<S> weight;  // in x out
  Parameter<S> bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out) : weight(in, out), bias(1, out) {}

  void init(std::mt19937_64& rng) {
    glorot_uniform(weight.value, static_cast<int>(weight.value.rows()),
                   static_cast<int>(weight.value.cols()), rng);
    bias.value.setZero();
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Stride-1 convolution over time with symmetric zero padding, so the output
// has exactly as many frames as the input. Kernel size must be odd.
template <typename S>
struct Conv1d {
  struct Cache {
    Mat<S> columns;
  };

  int kernel = 3;
  int in_channels = 0;
  Parameter<S> weight;  // (kernel * in) x out, tap-major
  Parameter<S> bias;    // 1 x out

  Conv1d() = default;
  Conv1d(int in, int out, int kernel_size)
      : kernel(kernel_size), in_channels(in), weight(kernel_size * in, out), bias(1, out) {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("convolution kernel must be odd to preserve length");
    }
  }

  void init(std::mt19937_64& rng) {
    glorot_uniform(weight.value, kernel * in_channels,
                   static_cast<int>(weight.value.cols()), rng);
    bias.value.setZero();
  }

  Mat<S> im2col(const Mat<S>& x) const {
    const Eigen::Index frames = x.rows();
    const int pad = kernel / 2;
    Mat<S> cols = Mat<S>::Zero(frames, static_cast<Eigen::Index>(kernel) * in_channels);
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = t + j - pad;
        if (src < 0 || src >= frames) continue;
        cols.block(t, static_cast<Eigen::Index>(j) * in_channels, 1, in_channels) = x.row(src);
      }
    }
    return cols;
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache = nullptr) const {
    if (x.cols() != in_channels) throw ShapeError("conv input channel mismatch");
    Mat<S> cols = im2col(x);
    Mat<S> y = cols * weight.value;
    y.rowwise() += bias.value.row(0);
    if (cache) cache->columns = std::move(cols);
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy) {
    weight.grad.noalias() += cache.columns.transpose() * dy;
    bias.grad += dy.colwise().sum();
    const Mat<S> dcols = dy * weight.value.transpose();
    const Eigen::Index frames = dy.rows();
    const int pad = kernel / 2;
    Mat<S> dx = Mat<S>::Zero(frames, in_channels);
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = t + j - pad;
        if (src < 0 || src >= frames) continue;
        dx.row(src) += dcols.block(t, static_cast<Eigen::Index>(j) * in_channels, 1, in_channels);
      }
    }
    return dx;
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Normalizes each frame across channels, then applies a learned gain/bias.
template <typename S>
struct LayerNorm {
  struct Cache {
    Mat<S> normalized;
    Vec<S> inv_std;
  };

  static constexpr double kEpsilon = 1e-5;
  Parameter<S> gain;  // 1 x C
  Parameter<S> bias;  // 1 x C

  LayerNorm() = default;
  explicit LayerNorm(int channels) : gain(1, channels), bias(1, channels) {
    gain.value.setOnes();
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache = nullptr) const {
    const Eigen::Index c = x.cols();
    Vec<S> mean = x.rowwise().mean();
    Mat<S> centered = x.colwise() - mean;
    Vec<S> var = centered.array().square().rowwise().sum() / static_cast<S>(c);
    Vec<S> inv_std = (var.array() + static_cast<S>(kEpsilon)).rsqrt();
    Mat<S> normalized = centered.array().colwise() * inv_std.array();
    Mat<S> y = normalized.array().rowwise() * gain.value.row(0).array();
    y.rowwise() += bias.value.row(0);
    if (cache) {
      cache->normalized = std::move(normalized);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy) {
    gain.grad += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    bias.grad += dy.colwise().sum();
    const Mat<S> dn = dy.array().rowwise() * gain.value.row(0).array();
    const Vec<S> mean_dn = dn.rowwise().mean();
    const Vec<S> mean_dn_n = (dn.array() * cache.normalized.array()).rowwise().mean();
    Mat<S> dx = dn;
    dx.colwise() -= mean_dn;
    dx.array() -= cache.normalized.array().colwise() * mean_dn_n.array();
    return dx.array().colwise() * cache.inv_std.array();
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

// One direction of an LSTM, gate order (input, forget, cell, output).
template <typename S>
struct LstmDirection {
  struct Cache {
    Mat<S> gates;  // T x 4H, post-activation
    Mat<S> cell;   // T x H
    Mat<S> hidden;  // T x H
  };

  int hidden_size = 0;
  Parameter<S> input_weight;      // in x 4H
  Parameter<S> recurrent_weight;  // H x 4H
  Parameter<S> bias;              // 1 x 4H

  LstmDirection() = default;
  LstmDirection(int in, int hidden)
      : hidden_size(hidden), input_weight(in, 4 * hidden),
        recurrent_weight(hidden, 4 * hidden), bias(1, 4 * hidden) {}

  void init(std::mt19937_64& rng) {
    glorot_uniform(input_weight.value, static_cast<int>(input_weight.value.rows()),
                   hidden_size, rng);
    glorot_uniform(recurrent_weight.value, hidden_size, hidden_size, rng);
    bias.value.setZero();
    bias.value.block(0, hidden_size, 1, hidden_size).setOnes();
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const Eigen::Index frames = x.rows();
    const int h = hidden_size;
    Mat<S> pre = x * input_weight.value;
    pre.rowwise() += bias.value.row(0);
    Mat<S> gates(frames, 4 * h), cell(frames, h), hidden(frames, h);
    RowVec prev_h = RowVec::Zero(h), prev_c = RowVec::Zero(h);
    for (Eigen::Index t = 0; t < frames; ++t) {
      RowVec a = pre.row(t) + prev_h * recurrent_weight.value;
      for (int k = 0; k < h; ++k) {
        a(k) = sigmoid(a(k));
        a(h + k) = sigmoid(a(h + k));
        a(2 * h + k) = std::tanh(a(2 * h + k));
        a(3 * h + k) = sigmoid(a(3 * h + k));
      }
      RowVec c = a.segment(h, h).cwiseProduct(prev_c) +
                 a.segment(0, h).cwiseProduct(a.segment(2 * h, h));
      RowVec hh = a.segment(3 * h, h).cwiseProduct(c.array().tanh().matrix());
      gates.row(t) = a;
      cell.row(t) = c;
      hidden.row(t) = hh;
      prev_h = hh;
      prev_c = c;
    }
    if (cache) {
      cache->gates = std::move(gates);
      cache->cell = std::move(cell);
      cache->hidden = hidden;
    }
    return hidden;
  }

  Mat<S> backward(const Mat<S>& x, const Cache& cache, const Mat<S>& dh_out) {
    const Eigen::Index frames = x.rows();
    const int h = hidden_size;
    Mat<S> dpre(frames, 4 * h);
    RowVec dh_next = RowVec::Zero(h), dc_next = RowVec::Zero(h);
    for (Eigen::Index t = frames - 1; t >= 0; --t) {
      const auto g = cache.gates.row(t);
      const RowVec tc = cache.cell.row(t).array().tanh().matrix();
      const RowVec c_prev = t > 0 ? RowVec(cache.cell.row(t - 1)) : RowVec::Zero(h);
      const RowVec dh = dh_out.row(t) + dh_next;
      RowVec dc = dh.cwiseProduct(g.segment(3 * h, h))
                      .cwiseProduct((S(1) - tc.array().square()).matrix()) +
                  dc_next;
      for (int k = 0; k < h; ++k) {
        const S i = g(k), f = g(h + k), c = g(2 * h + k), o = g(3 * h + k);
        dpre(t, k) = dc(k) * c * i * (S(1) - i);
        dpre(t, h + k) = dc(k) * c_prev(k) * f * (S(1) - f);
        dpre(t, 2 * h + k) = dc(k) * i * (S(1) - c * c);
        dpre(t, 3 * h + k) = dh(k) * tc(k) * o * (S(1) - o);
      }
      dc_next = dc.cwiseProduct(g.segment(h, h));
      dh_next = dpre.row(t) * recurrent_weight.value.transpose();
    }
    Mat<S> prev_hidden = Mat<S>::Zero(frames, h);
    if (frames > 1) prev_hidden.bottomRows(frames - 1) = cache.hidden.topRows(frames - 1);
    input_weight.grad.noalias() += x.transpose() * dpre;
    recurrent_weight.grad.noalias() += prev_hidden.transpose() * dpre;
    bias.grad += dpre.colwise().sum();
    return dpre * input_weight.value.transpose();
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    f(prefix + ".input_weight", input_weight);
    f(prefix + ".recurrent_weight", recurrent_weight);
    f(prefix + ".bias", bias);
  }

 private:
  using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
};

template <typename S>
Mat<S> reverse_rows(const Mat<S>& x) {
  return x.colwise().reverse();
}

// Bidirectional LSTM; output is [forward ‖ backward], 2H channels per frame.
template <typename S>
struct BiLstm {
  struct Cache {
    typename LstmDirection<S>::Cache forward_dir;
    typename LstmDirection<S>::Cache backward_dir;
    Mat<S> reversed_input;
  };

  LstmDirection<S> forward_dir;
  LstmDirection<S> backward_dir;

  BiLstm() = default;
  BiLstm(int in, int hidden) : forward_dir(in, hidden), backward_dir(in, hidden) {}

  void init(std::mt19937_64& rng) {
    forward_dir.init(rng);
    backward_dir.init(rng);
  }

  int output_size() const { return 2 * forward_dir.hidden_size; }

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const int h = forward_dir.hidden_size;
    Mat<S> reversed = reverse_rows(x);
    Mat<S> out(x.rows(), 2 * h);
    out.leftCols(h) = forward_dir.forward(x, cache ? &cache->forward_dir : nullptr);
    out.rightCols(h) =
        reverse_rows<S>(backward_dir.forward(reversed, cache ? &cache->backward_dir : nullptr));
    if (cache) cache->reversed_input = std::move(reversed);
    return out;
  }

  Mat<S> backward(const Mat<S>& x, const Cache& cache, const Mat<S>& dy) {
    const int h = forward_dir.hidden_size;
    Mat<S> dx = forward_dir.backward(x, cache.forward_dir, dy.leftCols(h));
    dx += reverse_rows<S>(backward_dir.backward(cache.reversed_input, cache.backward_dir,
                                                reverse_rows<S>(dy.rightCols(h))));
    return dx;
  }

  template <typename F>
  void for_each_parameter(const std::string& prefix, F&& f) {
    forward_dir.for_each_parameter(prefix + ".fwd", f);
    backward_dir.for_each_parameter(prefix + ".bwd", f);
  }
};

}  // namespace prosody::nn

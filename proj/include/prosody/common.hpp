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

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>

namespace prosody {

// Row-major so that row t is frame (or phoneme) t.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Base of every error raised by the library. Each subclass corresponds to one
// documented failure mode so callers can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define PROSODY_DEFINE_ERROR(Name)                              \
  class Name : public Error {                                   \
   public:                                                      \
    using Error::Error;                                         \
    const char* kind() const noexcept override { return #Name; } \
  }

PROSODY_DEFINE_ERROR(SchemaError);
PROSODY_DEFINE_ERROR(DuplicateError);
PROSODY_DEFINE_ERROR(ContiguityError);
PROSODY_DEFINE_ERROR(EmptyAlignmentError);
PROSODY_DEFINE_ERROR(RateError);
PROSODY_DEFINE_ERROR(InputError);
PROSODY_DEFINE_ERROR(IoError);
PROSODY_DEFINE_ERROR(NoSpeechError);
PROSODY_DEFINE_ERROR(ShapeError);
PROSODY_DEFINE_ERROR(ConfigError);
PROSODY_DEFINE_ERROR(CountError);
PROSODY_DEFINE_ERROR(MismatchError);
PROSODY_DEFINE_ERROR(CleanReferenceError);
PROSODY_DEFINE_ERROR(PluginError);
PROSODY_DEFINE_ERROR(NumericError);
PROSODY_DEFINE_ERROR(IdError);
PROSODY_DEFINE_ERROR(DivergenceError);
PROSODY_DEFINE_ERROR(PairingError);
PROSODY_DEFINE_ERROR(ModeError);
PROSODY_DEFINE_ERROR(PairError);
PROSODY_DEFINE_ERROR(SummaryError);

#undef PROSODY_DEFINE_ERROR

// The three compared systems: phrase-level VAE, global VAE, and a globally
// trained encoder applied phrase by phrase at inference.
enum class Variant { kPvae, kGvae, kGvaePp };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kPvae:
      return "PVAE";
    case Variant::kGvae:
      return "GVAE";
    case Variant::kGvaePp:
      return "GVAE-PP";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  if (name == "PVAE") return Variant::kPvae;
  if (name == "GVAE") return Variant::kGvae;
  if (name == "GVAE-PP") return Variant::kGvaePp;
  throw ConfigError("unknown mode \"" + name + "\" (expected PVAE, GVAE or GVAE-PP)");
}

// A trainable array together with its accumulated gradient.
template <typename S>
struct Parameter {
  Mat<S> value;
  Mat<S> grad;

  Parameter() = default;
  Parameter(Eigen::Index rows, Eigen::Index cols)
      : value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
using ParameterVisitor = std::function<void(const std::string&, Parameter<S>&)>;

template <typename S>
using ConstParameterVisitor =
    std::function<void(const std::string&, const Parameter<S>&)>;

}  // namespace prosody

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

// Central-difference gradient checks in double precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "prosody/common.hpp"

namespace prosody::testing {

inline Mat<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                 double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Relative error max|a-n| / max(max|a|, max|n|, floor) over the checked
// entries of `x`, comparing `analytic` to central differences of `loss`.
// At most `max_entries` evenly spread entries are probed.
inline double gradient_error(Mat<double>& x, const Mat<double>& analytic,
                             const std::function<double()>& loss, double h = 1e-6,
                             Eigen::Index max_entries = 200, double floor = 1e-8) {
  const Eigen::Index n = x.size();
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
  double worst_diff = 0.0, scale = floor;
  for (Eigen::Index i = 0; i < n; i += stride) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = loss();
    x.data()[i] = saved - h;
    const double down = loss();
    x.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.data()[i];
    worst_diff = std::max(worst_diff, std::abs(a - numeric));
    scale = std::max({scale, std::abs(a), std::abs(numeric)});
  }
  return worst_diff / scale;
}

}  // namespace prosody::testing

// Copyright 2026 The MMChange Authors. All Rights Reserved.
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

#ifndef MMCHANGE_VISUALIZE_HPP_
#define MMCHANGE_VISUALIZE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mmchange/image_io.hpp"
#include "mmchange/metrics.hpp"
#include "mmchange/ops.hpp"

namespace mmchange {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kTruePositiveColor{255, 255, 255};
inline constexpr Rgb kTrueNegativeColor{0, 0, 0};
inline constexpr Rgb kFalseNegativeColor{0, 0, 255};
inline constexpr Rgb kFalsePositiveColor{255, 0, 0};

/// Four-colour comparison of a prediction against ground truth.
inline Raster overlay(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int height, int width) {
  require(pred.size() == gt.size() && pred.size() == static_cast<std::size_t>(height) * width,
          "overlay: mask sizes disagree with the raster");
  Raster r(height, width, 3);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Rgb& c = pred[i] ? (gt[i] ? kTruePositiveColor : kFalsePositiveColor)
                           : (gt[i] ? kFalseNegativeColor : kTrueNegativeColor);
    std::copy(c.begin(), c.end(), r.pixels.begin() + 3 * i);
  }
  return r;
}

/// Recover confusion counts from an overlay; throws on any foreign colour.
inline ConfusionCounts overlay_counts(const Raster& r) {
  require(r.channels == 3, "overlay_counts expects an RGB raster");
  ConfusionCounts c;
  for (std::size_t i = 0; i < r.pixels.size(); i += 3) {
    const Rgb px{r.pixels[i], r.pixels[i + 1], r.pixels[i + 2]};
    if (px == kTruePositiveColor) ++c.tp;
    else if (px == kTrueNegativeColor) ++c.tn;
    else if (px == kFalseNegativeColor) ++c.fn;
    else if (px == kFalsePositiveColor) ++c.fp;
    else throw ShapeError("overlay_counts: pixel outside the four-colour palette");
  }
  return c;
}

/// Min-max normalised map; a constant input maps to 0.5 everywhere.
template <typename T>
std::vector<double> normalize_range(std::span<const T> v) {
  std::vector<double> out(v.size(), 0.5);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (static_cast<double>(v[i]) - *lo) / range;
  return out;
}

/// Linear blue (0) to red (1) ramp.
inline Rgb blue_red(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto r = static_cast<std::uint8_t>(std::lround(255.0 * t));
  return {r, 0, static_cast<std::uint8_t>(255 - r)};
}

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // normalised to [0, 1]
  Raster image;
};

/// Channel-mean of the first sample of `gate`, bilinearly resized to
/// height x width, min-max normalised and colour mapped.
template <typename T>
Heatmap make_heatmap(const Tensor<T>& gate, int height, int width) {
  NoGradGuard no_grad;
  Var<T> mean = channel_mean(Var<T>(gate.slice(0)));
  Var<T> resized = upsample(mean, height, width);
  Heatmap h;
  h.height = height;
  h.width = width;
  h.values = normalize_range<T>(resized.value().span());
  h.image = Raster(height, width, 3);
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    const Rgb c = blue_red(h.values[i]);
    std::copy(c.begin(), c.end(), h.image.pixels.begin() + 3 * i);
  }
  return h;
}

}  // namespace mmchange

#endif  // MMCHANGE_VISUALIZE_HPP_

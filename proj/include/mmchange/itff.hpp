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

#ifndef MMCHANGE_ITFF_HPP_
#define MMCHANGE_ITFF_HPP_

#include <string>

#include "mmchange/layers.hpp"

namespace mmchange {

struct ItffOptions {
  int reduction = 4;
  int spatial_kernel = 7;
};

template <typename T>
struct ItffTrace {
  Var<T> out;
  Var<T> spatial;  // [N, 1, H, W]
  Var<T> channel;  // [N, C, 1, 1]
  Var<T> pixel;    // [N, C, H, W]
};

/// Image-text fusion at one pyramid scale. Both inputs enter only through
/// their sum, so the block is symmetric in its arguments.
template <typename T>
class Itff {
 public:
  Itff() = default;
  Itff(ParamTable<T>& table, const std::string& name, int channels, ItffOptions opt = {})
      : channels_(channels) {
    require(opt.reduction > 0 && channels % opt.reduction == 0,
            "itff: channels " + std::to_string(channels) + " not divisible by reduction");
    spatial_ = Conv2d<T>(table, name + ".spatial", 2, 1, opt.spatial_kernel);
    squeeze_ = Conv2d<T>(table, name + ".squeeze", channels, channels / opt.reduction, 1);
    excite_ = Conv2d<T>(table, name + ".excite", channels / opt.reduction, channels, 1);
    pixel_ = Conv2d<T>(table, name + ".pixel", 2 * channels, channels, 1);
    out_ = Conv2d<T>(table, name + ".out", channels, channels, 3);
  }

  /// sigmoid(Conv7(Cat(mean_c, max_c))), values in (0, 1).
  Var<T> spatial_attention(const Var<T>& x) const {
    return sigmoid(spatial_(concat_channels(channel_mean(x), channel_max(x))));
  }

  /// sigmoid(Conv1(ReLU(Conv1(avgpool)))), one gate per channel.
  Var<T> channel_attention(const Var<T>& x) const {
    return sigmoid(excite_(relu(squeeze_(global_avg_pool(x)))));
  }

  ItffTrace<T> trace(const Var<T>& text, const Var<T>& image) const {
    require(text.shape() == image.shape(),
            "itff: input shapes differ " + text.shape().str() + " vs " + image.shape().str());
    require(text.shape().c == channels_, "itff: expected " + std::to_string(channels_) + " channels");
    Var<T> fused = text + image;
    Var<T> sa = spatial_attention(fused);
    Var<T> ca = channel_attention(fused);
    Var<T> saliency = ca + sa;  // broadcast to [N, C, H, W]
    Var<T> pixel = sigmoid(pixel_(concat_channels(saliency, fused)));
    Var<T> out = out_(fused * pixel);
    return {out, sa, ca, pixel};
  }

  Var<T> operator()(const Var<T>& text, const Var<T>& image) const { return trace(text, image).out; }

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  Conv2d<T> spatial_;
  Conv2d<T> squeeze_;
  Conv2d<T> excite_;
  Conv2d<T> pixel_;
  Conv2d<T> out_;
};

}  // namespace mmchange

#endif  // MMCHANGE_ITFF_HPP_

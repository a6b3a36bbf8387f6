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

#ifndef MMCHANGE_IFR_HPP_
#define MMCHANGE_IFR_HPP_

#include <string>

#include "mmchange/layers.hpp"

namespace mmchange {

/// Intermediate maps kept for inspection.
template <typename T>
struct IfrTrace {
  Var<T> refined;  // gated output
  Var<T> grouped;  // pre-gate feature (grouped branch + residual)
  Var<T> gate;     // [N, C, 1, 1]
};

/// Image feature refinement at one pyramid scale. Operates on the difference
/// d = f1 - f2 only:
///   base   = ReLU(BN(Conv3(d)))
///   key    = BN(Conv3(d))
///   attn   = softmax_c(Conv1(Cat(base, d)) * key)     (2C -> C before the product)
///   pre    = ReLU(BN(GroupConv3(attn, groups = 4))) + base
///   out    = sigmoid(avgpool(pre)) * pre
template <typename T>
class Ifr {
 public:
  static constexpr int kGroups = 4;

  Ifr() = default;
  Ifr(ParamTable<T>& table, const std::string& name, int channels,
      SoftmaxAxis axis = SoftmaxAxis::kChannel)
      : channels_(channels), axis_(axis) {
    require(channels % kGroups == 0, "ifr: channels must be divisible by 4, got " + std::to_string(channels));
    base_ = ConvBn<T>(table, name + ".base", channels, channels, 3);
    key_ = ConvBn<T>(table, name + ".key", channels, channels, 3);
    project_ = Conv2d<T>(table, name + ".project", 2 * channels, channels, 1);
    grouped_ = ConvBn<T>(table, name + ".grouped", channels, channels, 3, ConvOptions{1, kGroups});
  }

  IfrTrace<T> trace(const Var<T>& image_a, const Var<T>& image_b) const {
    require(image_a.shape() == image_b.shape(),
            "ifr: input shapes differ " + image_a.shape().str() + " vs " + image_b.shape().str());
    require(image_a.shape().c == channels_, "ifr: expected " + std::to_string(channels_) + " channels, got " +
                                                image_a.shape().str());
    Var<T> d = image_a - image_b;
    Var<T> base = relu(base_(d));
    Var<T> key = key_(d);
    Var<T> attn = softmax(project_(concat_channels(base, d)) * key, axis_);
    Var<T> pre = relu(grouped_(attn)) + base;
    Var<T> gate = sigmoid(global_avg_pool(pre));
    return {pre * gate, pre, gate};
  }

  Var<T> operator()(const Var<T>& image_a, const Var<T>& image_b) const {
    return trace(image_a, image_b).refined;
  }

  int channels() const { return channels_; }
  const ConvBn<T>& grouped() const { return grouped_; }

 private:
  int channels_ = 0;
  SoftmaxAxis axis_ = SoftmaxAxis::kChannel;
  ConvBn<T> base_;
  ConvBn<T> key_;
  Conv2d<T> project_;
  ConvBn<T> grouped_;
};

}  // namespace mmchange

#endif  // MMCHANGE_IFR_HPP_

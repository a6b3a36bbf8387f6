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

#ifndef MMCHANGE_TDE_HPP_
#define MMCHANGE_TDE_HPP_

#include <string>

#include "mmchange/layers.hpp"

namespace mmchange {

/// Text difference enhancement at one pyramid scale.
///
/// With d = t1 - t2 upsampled to the image grid:
///   a    = ReLU(BN(Conv3(d)))          b = ReLU(BN(Conv3'(d)))
///   attn = SDPA(d)
///   g    = ReLU(BN(Conv3(a - b)))
///   mix  = Conv3(Cat(a + a*g, b + b*g))        (2C -> C)
///   out  = ReLU(BN(Conv3(mix * attn)))
/// The two branches are parameterised independently; with shared weights a
/// and b would coincide and g would vanish.
template <typename T>
class Tde {
 public:
  Tde() = default;
  Tde(ParamTable<T>& table, const std::string& name, int channels)
      : channels_(channels),
        branch_a_(table, name + ".branch_a", channels, channels, 3),
        branch_b_(table, name + ".branch_b", channels, channels, 3),
        contrast_(table, name + ".contrast", channels, channels, 3),
        mix_(table, name + ".mix", 2 * channels, channels, 3),
        out_(table, name + ".out", channels, channels, 3) {}

  /// Output on an explicit grid (>= the input grid).
  Var<T> operator()(const Var<T>& text_a, const Var<T>& text_b, int out_h, int out_w) const {
    require(text_a.shape() == text_b.shape(),
            "tde: input shapes differ " + text_a.shape().str() + " vs " + text_b.shape().str());
    require(text_a.shape().c == channels_, "tde: expected " + std::to_string(channels_) + " channels, got " +
                                               text_a.shape().str());
    Var<T> d = upsample(text_a - text_b, out_h, out_w);
    Var<T> a = relu(branch_a_(d));
    Var<T> b = relu(branch_b_(d));
    Var<T> attn = sdpa(d);
    Var<T> g = relu(contrast_(a - b));
    Var<T> mix = mix_(concat_channels(a + a * g, b + b * g));
    return relu(out_(mix * attn));
  }

  /// Output at twice the input resolution.
  Var<T> operator()(const Var<T>& text_a, const Var<T>& text_b) const {
    return (*this)(text_a, text_b, 2 * text_a.shape().h, 2 * text_a.shape().w);
  }

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  ConvBn<T> branch_a_;
  ConvBn<T> branch_b_;
  ConvBn<T> contrast_;
  Conv2d<T> mix_;
  ConvBn<T> out_;
};

}  // namespace mmchange

#endif  // MMCHANGE_TDE_HPP_

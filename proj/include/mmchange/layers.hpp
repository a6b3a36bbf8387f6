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

#ifndef MMCHANGE_LAYERS_HPP_
#define MMCHANGE_LAYERS_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmchange/ops.hpp"
#include "mmchange/random.hpp"

namespace mmchange {

/// 64-bit FNV-1a. Also the caption tokenizer's bucket hash.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Init { kFanInUniform, kUniformUnit, kOnes, kZeros };

/// Named parameter table plus the batch-norm statistics of a network.
/// Initial values depend only on (seed, name), never on creation order, and
/// are drawn in double precision so float and double networks agree.
template <typename T>
class ParamTable {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };
  struct NormEntry {
    std::string name;
    std::shared_ptr<NormStats<T>> stats;
  };

  explicit ParamTable(std::uint64_t seed = 0) : seed_(seed) {}

  Var<T> create(const std::string& name, Shape shape, Init init) {
    for (const auto& e : params_) require(e.name != name, "duplicate parameter name " + name);
    Tensor<T> value(shape);
    Rng rng(derive_seed({seed_, fnv1a64(name)}));
    const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
    switch (init) {
      case Init::kFanInUniform: {
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : value.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case Init::kUniformUnit:
        for (auto& v : value.vec()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        break;
      case Init::kOnes:
        value.fill(T(1));
        break;
      case Init::kZeros:
        break;
    }
    Var<T> var(std::move(value), true);
    params_.push_back({name, var});
    return var;
  }

  std::shared_ptr<NormStats<T>> create_norm(const std::string& name, int channels) {
    auto stats = std::make_shared<NormStats<T>>(channels);
    norms_.push_back({name, stats});
    return stats;
  }

  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& params() const { return params_; }
  std::vector<NormEntry>& norms() { return norms_; }
  const std::vector<NormEntry>& norms() const { return norms_; }

  Var<T>* find(std::string_view name) {
    for (auto& e : params_)
      if (e.name == name) return &e.var;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : params_) n += e.var.value().size();
    return n;
  }

  void set_training(bool training) {
    for (auto& e : norms_) e.stats->training = training;
  }

  void zero_grad() {
    for (auto& e : params_) e.var.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Entry> params_;
  std::vector<NormEntry> norms_;
};

/// Bias-free convolution.
template <typename T>
struct Conv2d {
  Var<T> weight;
  ConvOptions options;

  Conv2d() = default;
  Conv2d(ParamTable<T>& table, const std::string& name, int in, int out, int kernel,
         ConvOptions opt = {})
      : options(opt) {
    require(in % opt.groups == 0 && out % opt.groups == 0, name + ": channels not divisible by groups");
    weight = table.create(name + ".weight", Shape{out, in / opt.groups, kernel, kernel}, Init::kFanInUniform);
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, options); }
  int out_channels() const { return weight.shape().n; }
};

/// Learnable per-channel scale/shift over NormStats.
template <typename T>
struct BatchNorm2d {
  Var<T> gamma;
  Var<T> beta;
  std::shared_ptr<NormStats<T>> stats;

  BatchNorm2d() = default;
  BatchNorm2d(ParamTable<T>& table, const std::string& name, int channels)
      : gamma(table.create(name + ".gamma", Shape{channels, 1, 1, 1}, Init::kOnes)),
        beta(table.create(name + ".beta", Shape{channels, 1, 1, 1}, Init::kZeros)),
        stats(table.create_norm(name, channels)) {}

  Var<T> operator()(const Var<T>& x) const { return batch_norm(x, gamma, beta, *stats); }
};

/// Convolution followed by batch norm.
template <typename T>
struct ConvBn {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBn() = default;
  ConvBn(ParamTable<T>& table, const std::string& name, int in, int out, int kernel, ConvOptions opt = {})
      : conv(table, name + ".conv", in, out, kernel, opt), bn(table, name + ".bn", out) {}

  Var<T> operator()(const Var<T>& x) const { return bn(conv(x)); }
};

}  // namespace mmchange

#endif  // MMCHANGE_LAYERS_HPP_

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

#ifndef MMCHANGE_GRADCHECK_HPP_
#define MMCHANGE_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmchange/model.hpp"

namespace mmchange {

/// Worst disagreement between backprop and central differences.
/// Relative error is |a - n| / max(|a|, |n|, floor).
struct GradcheckReport {
  std::string module;
  double max_rel_error = 0.0;
  std::string worst_entry;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double threshold = 1e-4;

  bool passed() const { return std::isfinite(max_rel_error) && max_rel_error < threshold; }
};

struct GradcheckOptions {
  int channels = 4;
  int height = 4;
  int width = 4;
  int batch = 2;
  double epsilon = 1e-5;
  double floor = 1e-4;
  std::uint64_t seed = 1;
  // Coordinates probed per leaf; 0 probes all of them.
  std::size_t samples_per_leaf = 0;
};

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"primitives", "tde", "ifr", "itff", "fallback", "model"};
  return names;
}

namespace detail {

using Leaf = std::pair<std::string, Var<double>>;

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar probe sum(out * r) with a fixed random r, so every output
/// coordinate contributes with a distinct weight.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : seed_(seed) {}
  Var<double> operator()(const Var<double>& out) {
    if (weights_.empty() || weights_.shape() != out.shape()) {
      Rng rng(derive_seed({seed_, 0x9e0ULL}));
      weights_ = random_tensor(out.shape(), rng);
    }
    return sum(out * Var<double>(weights_));
  }

 private:
  std::uint64_t seed_;
  Tensor<double> weights_;
};

inline void check_leaves(GradcheckReport& report, const std::function<Var<double>()>& loss_fn,
                         std::vector<Leaf>& leaves, const GradcheckOptions& opt) {
  for (auto& [name, leaf] : leaves) leaf.zero_grad();
  Var<double> loss = loss_fn();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  for (auto& [name, leaf] : leaves) {
    analytic.push_back(leaf.grad().empty() ? Tensor<double>(leaf.shape()) : leaf.grad());
  }
  NoGradGuard no_grad;
  Rng pick(derive_seed({opt.seed, 0x5a4ULL}));
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& [name, leaf] = leaves[k];
    auto& values = leaf.mutable_value();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.samples_per_leaf > 0 && coords.size() > opt.samples_per_leaf) {
      for (std::size_t i = 0; i < opt.samples_per_leaf; ++i)
        std::swap(coords[i], coords[i + pick.next() % (coords.size() - i)]);
      coords.resize(opt.samples_per_leaf);
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.epsilon;
      const double up = loss_fn().value()[0];
      values[i] = saved - opt.epsilon;
      const double down = loss_fn().value()[0];
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++report.checked;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = rel;
        report.worst_entry = name + "[" + std::to_string(i) + "]";
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
}

inline std::vector<Leaf> table_leaves(ParamTable<double>& table) {
  std::vector<Leaf> out;
  for (auto& e : table.params()) out.emplace_back(e.name, e.var);
  return out;
}

/// Spread parameters away from their structured init (ones, zeros) so that
/// every path carries signal.
inline void randomize(ParamTable<double>& table, Rng& rng, double spread = 0.5) {
  for (auto& e : table.params())
    for (auto& v : e.var.mutable_value().vec()) v += rng.uniform(-spread, spread);
}

inline void merge(GradcheckReport& into, const GradcheckReport& part, const std::string& prefix) {
  into.checked += part.checked;
  if (!(part.max_rel_error <= into.max_rel_error)) {
    into.max_rel_error = part.max_rel_error;
    into.worst_entry = prefix + ":" + part.worst_entry;
    into.analytic = part.analytic;
    into.numeric = part.numeric;
  }
}

inline GradcheckReport check_primitives(const GradcheckOptions& opt) {
  GradcheckReport total;
  Rng rng(derive_seed({opt.seed, 0x1ULL}));
  const Shape s{opt.batch, opt.channels, opt.height, opt.width};
  auto leaf = [&](Shape shape, double lo = -1.0, double hi = 1.0) {
    return Var<double>(random_tensor(shape, rng, lo, hi), true);
  };
  auto run = [&](const std::string& name, std::vector<Leaf> leaves, std::function<Var<double>()> fn) {
    GradcheckReport part;
    check_leaves(part, fn, leaves, opt);
    merge(total, part, name);
  };
  Projector proj(opt.seed);
  {
    auto x = leaf(s);
    run("softmax_channel", {{"x", x}}, [&] { return proj(softmax(x, SoftmaxAxis::kChannel)); });
    run("softmax_spatial", {{"x", x}}, [&] { return proj(softmax(x, SoftmaxAxis::kSpatial)); });
    run("sdpa", {{"x", x}}, [&] { return proj(sdpa(x)); });
    run("sigmoid", {{"x", x}}, [&] { return proj(sigmoid(x)); });
    run("global_avg_pool", {{"x", x}}, [&] { return proj(global_avg_pool(x)); });
    run("channel_mean", {{"x", x}}, [&] { return proj(channel_mean(x)); });
    run("channel_max", {{"x", x}}, [&] { return proj(channel_max(x)); });
    run("upsample", {{"x", x}}, [&] { return proj(upsample(x, 2 * opt.height + 1, 2 * opt.width)); });
    run("relu", {{"x", x}}, [&] { return proj(relu(x)); });
  }
  {
    auto x = leaf(s);
    auto w = leaf(Shape{opt.channels + 2, opt.channels, 3, 3});
    run("conv3x3", {{"x", x}, {"w", w}}, [&] { return proj(conv2d(x, w)); });
    auto ws = leaf(Shape{opt.channels, opt.channels, 3, 3});
    run("conv3x3_stride2", {{"x", x}, {"w", ws}}, [&] { return proj(conv2d(x, ws, {2, 1})); });
    if (opt.channels % 2 == 0) {
      auto wg = leaf(Shape{opt.channels, opt.channels / 2, 3, 3});
      run("conv_grouped", {{"x", x}, {"w", wg}}, [&] { return proj(conv2d(x, wg, {1, 2})); });
    }
  }
  {
    auto x = leaf(s);
    auto gamma = leaf(Shape{opt.channels, 1, 1, 1}, 0.5, 1.5);
    auto beta = leaf(Shape{opt.channels, 1, 1, 1});
    NormStats<double> train_stats(opt.channels);
    train_stats.training = true;
    run("batch_norm_train", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
        [&] { return proj(batch_norm(x, gamma, beta, train_stats)); });
    NormStats<double> eval_stats(opt.channels);
    for (int c = 0; c < opt.channels; ++c) {
      eval_stats.running_mean[c] = rng.uniform(-0.5, 0.5);
      eval_stats.running_var[c] = rng.uniform(0.5, 2.0);
    }
    run("batch_norm_eval", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
        [&] { return proj(batch_norm(x, gamma, beta, eval_stats)); });
  }
  {
    auto a = leaf(s);
    auto b = leaf(Shape{1, opt.channels, 1, 1});
    run("broadcast_mul", {{"a", a}, {"b", b}}, [&] { return proj(a * b); });
    run("broadcast_sub", {{"a", a}, {"b", b}}, [&] { return proj(a - b); });
    run("concat", {{"a", a}}, [&] { return proj(concat_channels(a, scale(a, 2.0))); });
    run("expand_spatial", {{"b", b}}, [&] { return proj(expand_spatial(b, opt.height, opt.width)); });
    run("slice_batch", {{"a", a}}, [&] { return proj(slice_batch(a, opt.batch - 1, 1)); });
  }
  {
    auto logits = leaf(Shape{opt.batch, 2, opt.height, opt.width}, -2.0, 2.0);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(opt.batch) * opt.height * opt.width);
    for (auto& l : labels) l = rng.coin() ? 1 : 0;
    run("cross_entropy", {{"logits", logits}}, [&] { return cross_entropy(logits, labels); });
  }
  {
    auto table = leaf(Shape{6, opt.channels, 1, 1});
    std::vector<std::vector<std::uint32_t>> ids{{1, 2, 2, 5}, {0, 0}, {3}};
    run("embedding_mean", {{"table", table}}, [&] { return proj(embedding_mean(table, ids)); });
  }
  return total;
}

template <typename Build>
GradcheckReport check_binary_module(const GradcheckOptions& opt, std::uint64_t tag, Build build) {
  ParamTable<double> table(derive_seed({opt.seed, tag}));
  auto fn_factory = build(table);
  table.set_training(true);
  Rng rng(derive_seed({opt.seed, tag, 0x2ULL}));
  randomize(table, rng);
  const Shape s{opt.batch, opt.channels, opt.height, opt.width};
  Var<double> a(random_tensor(s, rng), true), b(random_tensor(s, rng), true);
  std::vector<Leaf> leaves = table_leaves(table);
  leaves.emplace_back("input_a", a);
  leaves.emplace_back("input_b", b);
  Projector proj(opt.seed);
  GradcheckReport report;
  check_leaves(report, [&] { return proj(fn_factory(a, b)); }, leaves, opt);
  return report;
}

}  // namespace detail

/// Full-model check: eval mode with randomized running statistics (a 1x1
/// coarsest level makes batch statistics degenerate), seeded parameter sample.
inline GradcheckReport gradcheck_model(const GradcheckOptions& opt, ModelConfig config) {
  config.seed = opt.seed;
  MMChange<double> model(config);
  auto& table = model.params();
  Rng rng(derive_seed({opt.seed, 0x30ULL}));
  detail::randomize(table, rng, 0.25);
  for (auto& e : table.norms()) {
    for (auto& m : e.stats->running_mean) m = rng.uniform(-0.2, 0.2);
    for (auto& v : e.stats->running_var) v = rng.uniform(0.5, 2.0);
  }
  model.set_training(false);
  BiTemporalBatch<double> batch;
  const Shape s{1, 3, opt.height, opt.width};
  batch.image_a = detail::random_tensor(s, rng, 0.0, 1.0);
  batch.image_b = detail::random_tensor(s, rng, 0.0, 1.0);
  batch.caption_a = {"These are 3 buildings, 1 roads and 2 patches of vegetation"};
  batch.caption_b = {"These are 4 buildings, 1 roads and 1 patches of vegetation"};
  std::vector<std::uint8_t> labels(s.plane());
  for (auto& l : labels) l = rng.coin() ? 1 : 0;
  auto leaves = detail::table_leaves(table);
  GradcheckReport report;
  report.module = "model";
  report.threshold = 1e-3;
  GradcheckOptions o = opt;
  if (o.samples_per_leaf == 0) o.samples_per_leaf = 2;
  detail::check_leaves(report, [&] { return cross_entropy(model(batch), labels); }, leaves, o);
  return report;
}

/// Dispatch by module name. `opt` dims are C x H x W for module checks and
/// H x W for the model.
inline GradcheckReport gradcheck(const std::string& module, const GradcheckOptions& opt,
                                 const ModelConfig& model_config = {}) {
  using VarD = Var<double>;
  GradcheckReport r;
  if (module == "primitives") {
    r = detail::check_primitives(opt);
  } else if (module == "tde") {
    r = detail::check_binary_module(opt, 0x7deULL, [&](ParamTable<double>& t) {
      Tde<double> m(t, "tde", opt.channels);
      return [m, &opt](const VarD& a, const VarD& b) { return m(a, b, 2 * opt.height, 2 * opt.width); };
    });
  } else if (module == "ifr") {
    r = detail::check_binary_module(opt, 0x1f2ULL, [&](ParamTable<double>& t) {
      Ifr<double> m(t, "ifr", opt.channels);
      return [m](const VarD& a, const VarD& b) { return m(a, b); };
    });
  } else if (module == "itff") {
    r = detail::check_binary_module(opt, 0x177ULL, [&](ParamTable<double>& t) {
      Itff<double> m(t, "itff", opt.channels);
      return [m](const VarD& a, const VarD& b) { return m(a, b); };
    });
  } else if (module == "fallback") {
    r = detail::check_binary_module(opt, 0xfa1ULL, [&](ParamTable<double>& t) {
      Fallback<double> m(t, "fallback", opt.channels);
      return [m](const VarD& a, const VarD& b) { return m(a, b); };
    });
  } else if (module == "model") {
    return gradcheck_model(opt, model_config);
  } else {
    throw std::invalid_argument("unknown gradcheck module '" + module + "'");
  }
  r.module = module;
  r.threshold = 1e-4;
  return r;
}

}  // namespace mmchange

#endif  // MMCHANGE_GRADCHECK_HPP_

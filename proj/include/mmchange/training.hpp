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

#ifndef MMCHANGE_TRAINING_HPP_
#define MMCHANGE_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmchange/config.hpp"
#include "mmchange/data.hpp"
#include "mmchange/metrics.hpp"
#include "mmchange/model.hpp"

namespace mmchange {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimisation recipe. Defaults are the desk-scale setting; full_scale()
/// returns the original large-batch schedule.
struct TrainConfig {
  double lr0 = 0.0005;
  int batch_size = 8;
  int max_iteration = 500;
  double power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0001;
  bool decoupled_weight_decay = true;
  std::uint64_t seed = 0;
  int eval_interval = 0;        // 0: only at the end
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  AugmentConfig augment{};
  ModelConfig model{};

  static TrainConfig full_scale() {
    TrainConfig c;
    c.batch_size = 32;
    c.max_iteration = 40000;
    return c;
  }

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr must be positive");
    if (!(power > 0)) throw ConfigError("power must be positive");
    if (max_iteration <= 0) throw ConfigError("max_iteration must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ConfigError("betas must lie in (0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "lr", "batch_size", "max_iteration", "power", "beta1", "beta2", "adam_epsilon", "weight_decay",
        "decoupled_weight_decay", "seed", "eval_interval", "checkpoint_interval", "flip", "temporal_swap",
        "crop_probability", "crop_size", "widths", "vocab", "embed_dim", "reduction", "spatial_kernel",
        "ifr_softmax", "use_ifr", "use_tde", "use_itff", "use_text"};
    return k;
  }

  static TrainConfig from(const KeyValueConfig& kv) {
    kv.check_known(keys());
    TrainConfig c;
    c.lr0 = kv.number("lr", c.lr0);
    c.batch_size = kv.number("batch_size", c.batch_size);
    c.max_iteration = kv.number("max_iteration", c.max_iteration);
    c.power = kv.number("power", c.power);
    c.beta1 = kv.number("beta1", c.beta1);
    c.beta2 = kv.number("beta2", c.beta2);
    c.adam_epsilon = kv.number("adam_epsilon", c.adam_epsilon);
    c.weight_decay = kv.number("weight_decay", c.weight_decay);
    c.decoupled_weight_decay = kv.flag("decoupled_weight_decay", c.decoupled_weight_decay);
    c.seed = kv.number<std::uint64_t>("seed", c.seed);
    c.eval_interval = kv.number("eval_interval", c.eval_interval);
    c.checkpoint_interval = kv.number("checkpoint_interval", c.checkpoint_interval);
    c.augment.flip = kv.flag("flip", c.augment.flip);
    c.augment.temporal_swap = kv.flag("temporal_swap", c.augment.temporal_swap);
    c.augment.crop_probability = kv.number("crop_probability", c.augment.crop_probability);
    c.augment.crop_size = kv.number("crop_size", c.augment.crop_size);
    auto w = kv.list<int>("widths", {c.model.widths.begin(), c.model.widths.end()});
    if (w.size() != 4) throw ConfigError("widths needs exactly 4 entries");
    std::copy(w.begin(), w.end(), c.model.widths.begin());
    c.model.vocab = kv.number("vocab", c.model.vocab);
    c.model.embed_dim = kv.number("embed_dim", c.model.embed_dim);
    c.model.itff.reduction = kv.number("reduction", c.model.itff.reduction);
    c.model.itff.spatial_kernel = kv.number("spatial_kernel", c.model.itff.spatial_kernel);
    const std::string axis = kv.str("ifr_softmax", "channel");
    if (axis != "channel" && axis != "spatial") throw ConfigError("ifr_softmax must be channel or spatial");
    c.model.ifr_softmax = axis == "channel" ? SoftmaxAxis::kChannel : SoftmaxAxis::kSpatial;
    c.model.flags.use_ifr = kv.flag("use_ifr", true);
    c.model.flags.use_tde = kv.flag("use_tde", true);
    c.model.flags.use_itff = kv.flag("use_itff", true);
    c.model.flags.use_text = kv.flag("use_text", true);
    c.model.seed = c.seed;
    c.validate();
    return c;
  }

  /// Round-trips through from().
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "lr = " << lr0 << "\nbatch_size = " << batch_size << "\nmax_iteration = " << max_iteration
       << "\npower = " << power << "\nbeta1 = " << beta1 << "\nbeta2 = " << beta2
       << "\nadam_epsilon = " << adam_epsilon << "\nweight_decay = " << weight_decay
       << "\ndecoupled_weight_decay = " << (decoupled_weight_decay ? "true" : "false") << "\nseed = " << seed
       << "\neval_interval = " << eval_interval << "\ncheckpoint_interval = " << checkpoint_interval
       << "\nflip = " << (augment.flip ? "true" : "false")
       << "\ntemporal_swap = " << (augment.temporal_swap ? "true" : "false")
       << "\ncrop_probability = " << augment.crop_probability << "\ncrop_size = " << augment.crop_size
       << "\nwidths = " << model.widths[0] << ',' << model.widths[1] << ',' << model.widths[2] << ','
       << model.widths[3] << "\nvocab = " << model.vocab << "\nembed_dim = " << model.embed_dim
       << "\nreduction = " << model.itff.reduction << "\nspatial_kernel = " << model.itff.spatial_kernel
       << "\nifr_softmax = " << (model.ifr_softmax == SoftmaxAxis::kChannel ? "channel" : "spatial")
       << "\nuse_ifr = " << (model.flags.use_ifr ? "true" : "false")
       << "\nuse_tde = " << (model.flags.use_tde ? "true" : "false")
       << "\nuse_itff = " << (model.flags.use_itff ? "true" : "false")
       << "\nuse_text = " << (model.flags.use_text ? "true" : "false") << '\n';
    return os.str();
  }
};

/// lr0 * (1 - step / max_iteration)^power, zero from max_iteration on.
inline double poly_lr(long step, const TrainConfig& cfg) {
  if (step < 0) step = 0;
  if (step >= cfg.max_iteration) return 0.0;
  return cfg.lr0 * std::pow(1.0 - static_cast<double>(step) / cfg.max_iteration, cfg.power);
}

/// Adam moments for every parameter of a table, keyed by position.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
};

/// One Adam update with bias correction. Weight decay is subtracted as
/// lr * wd * param when decoupled, or folded into the gradient otherwise.
template <typename T>
void adam_step(ParamTable<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg) {
  auto& entries = params.params();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.var.value().size(), T(0));
      state.v.emplace_back(e.var.value().size(), T(0));
    }
  }
  require(state.m.size() == entries.size(), "adam_step: optimizer state does not match parameter table");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& g = entries[k].var.grad();
    if (g.empty()) continue;
    if (!g.all_finite()) throw TrainingError("non-finite gradient in parameter " + entries[k].name);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T step = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.adam_epsilon);
  const T decay = static_cast<T>(lr * cfg.weight_decay);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& p = entries[k].var.mutable_value();
    const auto& g = entries[k].var.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    require(m.size() == p.size(), "adam_step: state shape mismatch for " + entries[k].name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      T gi = g.empty() ? T(0) : g[i];
      if (!cfg.decoupled_weight_decay) gi += wd * p[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      if (cfg.decoupled_weight_decay) p[i] -= decay * p[i];
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
BiTemporalBatch<T> make_batch(const std::vector<const BiTemporalSample*>& samples, std::vector<std::uint8_t>* labels) {
  require(!samples.empty(), "make_batch needs at least one sample");
  const int h = samples.front()->height(), w = samples.front()->width();
  BiTemporalBatch<T> b;
  b.image_a = Tensor<T>(Shape{static_cast<int>(samples.size()), 3, h, w});
  b.image_b = Tensor<T>(b.image_a.shape());
  const std::size_t per = static_cast<std::size_t>(3) * h * w;
  if (labels) labels->clear();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = *samples[i];
    require(s.height() == h && s.width() == w, "make_batch: samples differ in size");
    std::transform(s.image_a.data(), s.image_a.data() + per, b.image_a.data() + i * per,
                   [](float v) { return static_cast<T>(v); });
    std::transform(s.image_b.data(), s.image_b.data() + per, b.image_b.data() + i * per,
                   [](float v) { return static_cast<T>(v); });
    b.caption_a.push_back(s.caption_a);
    b.caption_b.push_back(s.caption_b);
    if (labels) labels->insert(labels->end(), s.mask.labels.begin(), s.mask.labels.end());
  }
  return b;
}

/// Deterministic sample schedule: the j-th sample of step k is position
/// k * batch + j of an endless sequence of seeded per-epoch permutations.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, int batch_size, std::uint64_t seed)
      : n_(dataset_size), batch_(batch_size), seed_(seed) {
    require(n_ > 0, "training needs a non-empty dataset");
  }

  struct Slot {
    std::size_t index;
    std::uint64_t epoch;
  };

  std::vector<Slot> step(std::uint64_t k) {
    std::vector<Slot> out;
    for (int j = 0; j < batch_; ++j) {
      const std::uint64_t pos = k * batch_ + j;
      const std::uint64_t epoch = pos / n_;
      out.push_back({permutation(epoch)[pos % n_], epoch});
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& permutation(std::uint64_t epoch) {
    auto it = cache_.find(epoch);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4) cache_.clear();
    std::vector<std::size_t> p(n_);
    std::iota(p.begin(), p.end(), 0);
    Rng rng(derive_seed({seed_, 0x5eedULL, epoch}));
    for (std::size_t i = n_; i > 1; --i) std::swap(p[i - 1], p[rng.next() % i]);
    return cache_.emplace(epoch, std::move(p)).first->second;
  }

  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  std::map<std::uint64_t, std::vector<std::size_t>> cache_;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Micro-averaged metrics over a dataset (eval mode, no graph).
template <typename T>
MetricReport evaluate(MMChange<T>& model, const std::vector<BiTemporalSample>& data, int batch_size = 8,
                      const Perturbation& perturbation = {}, std::uint64_t perturb_seed = 0) {
  NoGradGuard no_grad;
  model.set_training(false);
  ConfusionCounts total;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<BiTemporalSample> perturbed;
    std::vector<const BiTemporalSample*> ptrs;
    const std::size_t end = std::min(data.size(), start + batch_size);
    if (!perturbation.identity()) {
      for (std::size_t i = start; i < end; ++i) {
        Rng rng(derive_seed({perturb_seed, i}));
        perturbed.push_back(perturb(data[i], perturbation, rng));
      }
      for (auto& s : perturbed) ptrs.push_back(&s);
    } else {
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&data[i]);
    }
    std::vector<std::uint8_t> labels;
    auto batch = make_batch<T>(ptrs, &labels);
    auto pred = predict_mask(model(batch).value());
    total += confusion(pred, labels);
  }
  return MetricReport::from(total);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'C', 'H', 'C', 'K', 'P', 'T'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to resume: the training recipe, the step counter, the
/// parameters, the batch-norm statistics and Adam's moments.
template <typename T>
struct TrainingState {
  TrainConfig config;
  std::uint64_t step = 0;
  AdamState<T> adam;
};

namespace detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void pod(const U& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename U>
  void reals(const std::vector<U>& v) {
    pod<std::uint64_t>(v.size());
    for (U x : v) pod<double>(static_cast<double>(x));
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  template <typename U>
  U pod() {
    U v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is_) throw CheckpointError("checkpoint truncated");
    return v;
  }
  std::string str() {
    auto n = pod<std::uint64_t>();
    if (n > (1u << 26)) throw CheckpointError("checkpoint string length is implausible");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw CheckpointError("checkpoint truncated");
    return s;
  }
  template <typename U>
  std::vector<U> reals() {
    auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) throw CheckpointError("checkpoint array length is implausible");
    std::vector<U> v(n);
    for (auto& x : v) x = static_cast<U>(pod<double>());
    return v;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

/// Binary archive, native byte order:
///   magic[8] u32 version, str config_text, u64 config_hash, u64 step,
///   u64 n_params { str name, u8 dtype, i32 shape[4], raw values },
///   u64 n_norms  { str name, reals mean, reals var },
///   u64 adam_t, u64 n_moments { reals m, reals v }
/// dtype 0 = float32, 1 = float64. Reals in the statistics and moment
/// sections are always stored as float64.
template <typename T>
void save_checkpoint(const std::string& path, const MMChange<T>& model, const TrainingState<T>& state) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + path);
    detail::BinaryWriter w(os);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.pod(kCheckpointVersion);
    w.str(state.config.to_text());
    w.pod<std::uint64_t>(model.config().hash());
    w.pod<std::uint64_t>(state.step);
    const auto& params = model.params().params();
    w.pod<std::uint64_t>(params.size());
    for (const auto& e : params) {
      w.str(e.name);
      w.pod<std::uint8_t>(sizeof(T) == 4 ? 0 : 1);
      const Shape& s = e.var.shape();
      for (int d : {s.n, s.c, s.h, s.w}) w.pod<std::int32_t>(d);
      os.write(reinterpret_cast<const char*>(e.var.value().data()),
               static_cast<std::streamsize>(e.var.value().size() * sizeof(T)));
    }
    const auto& norms = model.params().norms();
    w.pod<std::uint64_t>(norms.size());
    for (const auto& n : norms) {
      w.str(n.name);
      w.reals(n.stats->running_mean);
      w.reals(n.stats->running_var);
    }
    w.pod<std::uint64_t>(state.adam.t);
    w.pod<std::uint64_t>(state.adam.m.size());
    for (std::size_t k = 0; k < state.adam.m.size(); ++k) {
      w.reals(state.adam.m[k]);
      w.reals(state.adam.v[k]);
    }
    if (!os) throw CheckpointError("write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

/// Header fields of a checkpoint, readable without a model.
struct CheckpointHeader {
  TrainConfig config;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

namespace detail {

inline CheckpointHeader read_header(std::istream& is, BinaryReader& r, const std::string& path) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError(path + " is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  std::istringstream cfg(r.str());
  CheckpointHeader h;
  h.config = TrainConfig::from(KeyValueConfig::parse(cfg, path));
  h.config_hash = r.pod<std::uint64_t>();
  h.step = r.pod<std::uint64_t>();
  return h;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  detail::BinaryReader r(is);
  return detail::read_header(is, r, path);
}

/// Restore parameters and statistics into `model` (and optimizer state into
/// `state` when given). A model whose config hash differs from the stored
/// one is rejected unless `allow_config_mismatch`, in which case entries are
/// matched by name and shape.
template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, MMChange<T>& model, TrainingState<T>* state = nullptr,
                                 bool allow_config_mismatch = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  detail::BinaryReader r(is);
  CheckpointHeader h = detail::read_header(is, r, path);
  const bool mismatch = h.config_hash != model.config().hash();
  if (mismatch && !allow_config_mismatch)
    throw CheckpointError(path + ": config hash mismatch (checkpoint " + std::to_string(h.config_hash) +
                          ", model " + std::to_string(model.config().hash()) + ")");
  auto& table = model.params();
  const auto n_params = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < n_params; ++k) {
    const std::string name = r.str();
    const auto dtype = r.pod<std::uint8_t>();
    Shape s;
    s.n = r.pod<std::int32_t>();
    s.c = r.pod<std::int32_t>();
    s.h = r.pod<std::int32_t>();
    s.w = r.pod<std::int32_t>();
    if (dtype > 1) throw CheckpointError(path + ": unknown dtype for " + name);
    std::vector<double> values(s.numel());
    for (auto& v : values) v = dtype == 0 ? static_cast<double>(r.pod<float>()) : r.pod<double>();
    Var<T>* dst = table.find(name);
    if (!dst || dst->shape() != s) {
      if (mismatch) continue;
      throw CheckpointError(path + ": parameter " + name + " missing or mis-shaped in model");
    }
    std::transform(values.begin(), values.end(), dst->mutable_value().data(),
                   [](double v) { return static_cast<T>(v); });
  }
  const auto n_norms = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < n_norms; ++k) {
    const std::string name = r.str();
    auto mean = r.reals<T>();
    auto var = r.reals<T>();
    bool found = false;
    for (auto& e : table.norms()) {
      if (e.name != name || e.stats->running_mean.size() != mean.size()) continue;
      e.stats->running_mean = std::move(mean);
      e.stats->running_var = std::move(var);
      found = true;
      break;
    }
    if (!found && !mismatch) throw CheckpointError(path + ": norm statistics " + name + " missing in model");
  }
  AdamState<T> adam;
  adam.t = r.pod<std::uint64_t>();
  const auto n_moments = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < n_moments; ++k) {
    adam.m.push_back(r.reals<T>());
    adam.v.push_back(r.reals<T>());
  }
  if (state) {
    state->config = h.config;
    state->step = h.step;
    state->adam = mismatch ? AdamState<T>{} : std::move(adam);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogEntry {
  std::uint64_t step;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<TrainLogEntry> losses;
  std::vector<std::pair<std::uint64_t, MetricReport>> evals;
};

struct TrainHooks {
  std::ostream* log = nullptr;                       // tab-separated step / EVAL lines
  std::string checkpoint_path;                       // empty: no checkpoints written
  const std::vector<BiTemporalSample>* eval_data = nullptr;
  std::uint64_t stop_at = 0;  // pause once state.step reaches this; 0 runs to max_iteration
};

inline std::string format_step_line(const TrainLogEntry& e) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%llu\t%.9g\t%.9g", static_cast<unsigned long long>(e.step), e.lr, e.loss);
  return buf;
}

inline std::string format_eval_line(std::uint64_t step, const MetricReport& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "EVAL\t%llu\t%.9f\t%.9f\t%.9f\t%.9f", static_cast<unsigned long long>(step), m.iou,
                m.f1, m.precision, m.recall);
  return buf;
}

/// Run (or resume) training until state.step reaches max_iteration.
template <typename T>
TrainResult train(MMChange<T>& model, TrainingState<T>& state, const std::vector<BiTemporalSample>& data,
                  const TrainHooks& hooks = {}) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (cfg.model.flags.use_text) {
    for (const auto& s : data)
      if (s.caption_a.empty() || s.caption_b.empty())
        throw TrainingError("sample " + s.id + " has no captions but the model uses text");
  }
  BatchSchedule schedule(data.size(), cfg.batch_size, cfg.seed);
  TrainResult result;
  std::vector<BiTemporalSample> batch_samples;
  std::vector<const BiTemporalSample*> ptrs;
  std::vector<std::uint8_t> labels;
  auto& params = model.params();
  auto run_eval = [&](std::uint64_t step) {
    if (!hooks.eval_data) return;
    MetricReport m = evaluate(model, *hooks.eval_data, cfg.batch_size);
    result.evals.emplace_back(step, m);
    if (hooks.log) *hooks.log << format_eval_line(step, m) << '\n' << std::flush;
  };
  std::uint64_t end = static_cast<std::uint64_t>(cfg.max_iteration);
  if (hooks.stop_at > 0) end = std::min(end, hooks.stop_at);
  while (state.step < end) {
    const std::uint64_t k = state.step;
    batch_samples.clear();
    for (const auto& slot : schedule.step(k)) {
      Rng rng(derive_seed({cfg.seed, 0xa06ULL, slot.epoch, slot.index}));
      batch_samples.push_back(augment(data[slot.index], rng, cfg.augment));
    }
    ptrs.clear();
    for (auto& s : batch_samples) ptrs.push_back(&s);
    auto batch = make_batch<T>(ptrs, &labels);
    model.set_training(true);
    Var<T> loss = cross_entropy(model(batch), labels);
    const double loss_value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(loss_value)) throw TrainingError("non-finite loss at step " + std::to_string(k));
    params.zero_grad();
    backward(loss);
    const double lr = poly_lr(static_cast<long>(k), cfg);
    adam_step(params, state.adam, lr, cfg);
    state.step = k + 1;
    TrainLogEntry entry{k, lr, loss_value};
    result.losses.push_back(entry);
    if (hooks.log) *hooks.log << format_step_line(entry) << '\n';
    const bool last = state.step == end;
    if (cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0 && !last) run_eval(state.step);
    if (!hooks.checkpoint_path.empty() && cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 &&
        !last)
      save_checkpoint(hooks.checkpoint_path, model, state);
  }
  params.zero_grad();
  run_eval(state.step);
  if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model, state);
  if (hooks.log) hooks.log->flush();
  return result;
}

}  // namespace mmchange

#endif  // MMCHANGE_TRAINING_HPP_

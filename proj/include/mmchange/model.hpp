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

#ifndef MMCHANGE_MODEL_HPP_
#define MMCHANGE_MODEL_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmchange/encoders.hpp"
#include "mmchange/ifr.hpp"
#include "mmchange/itff.hpp"
#include "mmchange/tde.hpp"

namespace mmchange {

/// Which blocks are live. A disabled block is replaced by a Fallback.
struct AblationFlags {
  bool use_ifr = true;
  bool use_tde = true;
  bool use_itff = true;
  bool use_text = true;

  bool operator==(const AblationFlags&) const = default;

  /// Image encoder only; every block and the text branch off.
  static AblationFlags image_only() { return {false, false, false, false}; }
  /// Text branch on, every block replaced by its fallback.
  static AblationFlags text_baseline() { return {false, false, false, true}; }
  static AblationFlags full() { return {}; }

  std::string label() const {
    if (*this == full()) return "full";
    if (*this == image_only()) return "image-only";
    if (*this == text_baseline()) return "text-baseline";
    std::string s;
    if (!use_text) s += "no-text,";
    if (!use_ifr) s += "no-ifr,";
    if (!use_tde) s += "no-tde,";
    if (!use_itff) s += "no-itff,";
    if (!s.empty()) s.pop_back();
    return s;
  }
};

struct ModelConfig {
  std::array<int, 4> widths{16, 32, 64, 128};
  std::uint32_t vocab = 4096;
  int embed_dim = 32;
  ItffOptions itff{};
  SoftmaxAxis ifr_softmax = SoftmaxAxis::kChannel;
  AblationFlags flags{};
  std::uint64_t seed = 0;

  /// Canonical text form; the config hash is FNV-1a 64 of this string.
  std::string canonical() const {
    std::ostringstream os;
    os << "widths=" << widths[0] << ',' << widths[1] << ',' << widths[2] << ',' << widths[3]
       << ";vocab=" << vocab << ";embed_dim=" << embed_dim << ";reduction=" << itff.reduction
       << ";spatial_kernel=" << itff.spatial_kernel
       << ";ifr_softmax=" << (ifr_softmax == SoftmaxAxis::kChannel ? "channel" : "spatial")
       << ";use_ifr=" << flags.use_ifr << ";use_tde=" << flags.use_tde << ";use_itff=" << flags.use_itff
       << ";use_text=" << flags.use_text << ";loss=cross_entropy";
    return os.str();
  }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

/// Two co-registered image batches and their captions.
template <typename T>
struct BiTemporalBatch {
  Tensor<T> image_a;  // [N, 3, H, W], values in [0, 1]
  Tensor<T> image_b;
  std::vector<std::string> caption_a;
  std::vector<std::string> caption_b;
};

/// Ablation stand-in for a disabled block: Conv1(a) + Conv1'(b).
template <typename T>
class Fallback {
 public:
  Fallback() = default;
  Fallback(ParamTable<T>& table, const std::string& name, int channels)
      : left_(table, name + ".left", channels, channels, 1),
        right_(table, name + ".right", channels, channels, 1) {}

  Var<T> operator()(const Var<T>& a, const Var<T>& b) const {
    require(a.shape() == b.shape(), "fallback: input shapes differ " + a.shape().str() + " vs " + b.shape().str());
    return left_(a) + right_(b);
  }

  Conv2d<T>& left() { return left_; }
  Conv2d<T>& right() { return right_; }

 private:
  Conv2d<T> left_;
  Conv2d<T> right_;
};

/// Top-down merge of the fused pyramid followed by a 4x head to 2 logits.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamTable<T>& table, const std::string& name, std::array<int, 4> widths) {
    for (int i = 0; i < 3; ++i) {
      lateral_[i] = Conv2d<T>(table, name + ".lateral" + std::to_string(i + 1), widths[i + 1], widths[i], 1);
      smooth_[i] = ConvBn<T>(table, name + ".smooth" + std::to_string(i + 1), widths[i], widths[i], 3);
    }
    head_ = Conv2d<T>(table, name + ".head", widths[0], 2, 1);
    // Shrunk so the step-0 loss stays near ln 2. Much smaller (0.1) lets weak
    // variants settle on all-background under class imbalance.
    for (auto& v : head_.weight.mutable_value().vec()) v *= T(0.3);
    head_bias_ = table.create(name + ".head.bias", Shape{1, 2, 1, 1}, Init::kZeros);
  }

  /// Logits [N, 2, image_h, image_w]; channel 1 is "change".
  Var<T> operator()(const FeaturePyramid<T>& fused, int image_h, int image_w) const {
    Var<T> x = fused[3];
    for (int i = 2; i >= 0; --i) {
      const Shape& s = fused[i].shape();
      Var<T> top = lateral_[i](upsample(x, s.h, s.w));
      x = relu(smooth_[i](fused[i] + top));
    }
    require(4 * x.shape().h == image_h && 4 * x.shape().w == image_w, "decoder: finest level is not stride 4");
    return head_(upsample(x, image_h, image_w)) + head_bias_;
  }

 private:
  std::array<Conv2d<T>, 3> lateral_;
  std::array<ConvBn<T>, 3> smooth_;
  Conv2d<T> head_;
  Var<T> head_bias_;
};

/// Optional intermediate outputs of a forward pass.
template <typename T>
struct ForwardTrace {
  Var<T> logits;
  std::optional<Var<T>> finest_pixel_gate;  // ITFF pixel gate at stride 4, when ITFF is live
};

/// The assembled change-detection network. Copies share parameters.
template <typename T>
class MMChange {
 public:
  explicit MMChange(const ModelConfig& config) : config_(config), table_(std::make_shared<ParamTable<T>>(config.seed)) {
    auto& t = *table_;
    const auto& w = config.widths;
    const auto& f = config.flags;
    image_encoder_ = ImageEncoder<T>(t, "image_encoder", w);
    if (f.use_text) text_encoder_ = TextEncoder<T>(t, "text_encoder", config.vocab, config.embed_dim, w);
    for (int s = 0; s < 4; ++s) {
      const std::string k = std::to_string(s + 1);
      if (f.use_ifr) ifr_[s] = Ifr<T>(t, "ifr" + k, w[s], config.ifr_softmax);
      else ifr_fallback_[s] = Fallback<T>(t, "ifr_fallback" + k, w[s]);
      if (f.use_text) {
        if (f.use_tde) tde_[s] = Tde<T>(t, "tde" + k, w[s]);
        else tde_fallback_[s] = Fallback<T>(t, "tde_fallback" + k, w[s]);
      }
      if (f.use_itff) itff_[s] = Itff<T>(t, "itff" + k, w[s], config.itff);
      else if (f.use_text) itff_fallback_[s] = Fallback<T>(t, "itff_fallback" + k, w[s]);
    }
    decoder_ = Decoder<T>(t, "decoder", w);
  }

  ForwardTrace<T> trace(const BiTemporalBatch<T>& batch) const {
    const Shape s = batch.image_a.shape();
    require(s == batch.image_b.shape(), "forward: image shapes differ " + s.str() + " vs " + batch.image_b.shape().str());
    const auto& f = config_.flags;
    if (f.use_text) {
      require(batch.caption_a.size() == static_cast<std::size_t>(s.n) &&
                  batch.caption_b.size() == static_cast<std::size_t>(s.n),
              "forward: a text-enabled model needs one caption pair per sample");
    }
    // Both dates share the encoder; one pass over the stacked batch.
    Tensor<T> both(Shape{2 * s.n, s.c, s.h, s.w});
    std::copy_n(batch.image_a.data(), batch.image_a.size(), both.data());
    std::copy_n(batch.image_b.data(), batch.image_b.size(), both.data() + batch.image_a.size());
    FeaturePyramid<T> feats = image_encoder_(Var<T>(std::move(both)));

    FeaturePyramid<T> text_a, text_b;
    if (f.use_text) {
      text_a = text_encoder_(batch.caption_a, s.h, s.w);
      text_b = text_encoder_(batch.caption_b, s.h, s.w);
    }
    ForwardTrace<T> out;
    FeaturePyramid<T> fused;
    for (int k = 0; k < 4; ++k) {
      auto [fa, fb] = split_batch(feats[k], s.n);
      Var<T> image = f.use_ifr ? ifr_[k](fa, fb) : ifr_fallback_[k](fa, fb);
      const int h = image.shape().h, w = image.shape().w;
      std::optional<Var<T>> text;
      if (f.use_text) {
        text = f.use_tde ? tde_[k](text_a[k], text_b[k], h, w)
                         : tde_fallback_[k](upsample(text_a[k], h, w), upsample(text_b[k], h, w));
      }
      if (f.use_itff) {
        Var<T> t = text ? *text : Var<T>(Tensor<T>(image.shape()));
        auto tr = itff_[k].trace(t, image);
        fused[k] = tr.out;
        if (k == 0) out.finest_pixel_gate = tr.pixel;
      } else {
        fused[k] = text ? itff_fallback_[k](*text, image) : image;
      }
    }
    out.logits = decoder_(fused, s.h, s.w);
    return out;
  }

  Var<T> operator()(const BiTemporalBatch<T>& batch) const { return trace(batch).logits; }

  const ModelConfig& config() const { return config_; }
  ParamTable<T>& params() { return *table_; }
  const ParamTable<T>& params() const { return *table_; }
  void set_training(bool training) { table_->set_training(training); }

  const Ifr<T>& ifr(int scale) const { return ifr_[scale]; }
  const Tde<T>& tde(int scale) const { return tde_[scale]; }
  const Itff<T>& itff(int scale) const { return itff_[scale]; }

 private:
  static std::pair<Var<T>, Var<T>> split_batch(const Var<T>& x, int n) {
    return {slice_batch(x, 0, n), slice_batch(x, n, n)};
  }

  ModelConfig config_;
  std::shared_ptr<ParamTable<T>> table_;
  ImageEncoder<T> image_encoder_;
  TextEncoder<T> text_encoder_;
  std::array<Ifr<T>, 4> ifr_;
  std::array<Tde<T>, 4> tde_;
  std::array<Itff<T>, 4> itff_;
  std::array<Fallback<T>, 4> ifr_fallback_;
  std::array<Fallback<T>, 4> tde_fallback_;
  std::array<Fallback<T>, 4> itff_fallback_;
  Decoder<T> decoder_;
};

/// Per-pixel argmax over the two logit channels; ties go to "no change".
/// Returns N*H*W labels in {0, 1}.
template <typename T>
std::vector<std::uint8_t> predict_mask(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  require(s.c == 2, "predict_mask expects 2 logit channels, got " + s.str());
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.n) * s.plane());
  for (int n = 0; n < s.n; ++n) {
    const T* no = logits.plane(n, 0);
    const T* yes = logits.plane(n, 1);
    for (std::size_t i = 0; i < s.plane(); ++i) mask[n * s.plane() + i] = yes[i] > no[i] ? 1 : 0;
  }
  return mask;
}

}  // namespace mmchange

#endif  // MMCHANGE_MODEL_HPP_

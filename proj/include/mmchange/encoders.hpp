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

#ifndef MMCHANGE_ENCODERS_HPP_
#define MMCHANGE_ENCODERS_HPP_

#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mmchange/layers.hpp"

namespace mmchange {

inline constexpr std::array<int, 4> kPyramidStrides{4, 8, 16, 32};

template <typename T>
using FeaturePyramid = std::array<Var<T>, 4>;

// ---------------------------------------------------------------------------
// Image encoder

/// Residual basic block: ReLU(BN(Conv3(ReLU(BN(Conv3(x))))) + shortcut(x)).
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParamTable<T>& table, const std::string& name, int in, int out, int stride)
      : first_(table, name + ".conv1", in, out, 3, ConvOptions{stride, 1}),
        second_(table, name + ".conv2", out, out, 3) {
    if (in != out || stride != 1) {
      shortcut_ = ConvBn<T>(table, name + ".shortcut", in, out, 1, ConvOptions{stride, 1});
      project_ = true;
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = second_(relu(first_(x)));
    return relu(y + (project_ ? shortcut_(x) : x));
  }

 private:
  ConvBn<T> first_;
  ConvBn<T> second_;
  ConvBn<T> shortcut_;
  bool project_ = false;
};

/// Reduced-width residual encoder: two stride-2 stem convolutions followed by
/// one residual block per stage, producing strides 4/8/16/32.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(ParamTable<T>& table, const std::string& name, std::array<int, 4> widths)
      : widths_(widths) {
    for (int w : widths) require(w > 0 && w % 4 == 0, "image encoder widths must be positive multiples of 4");
    const int stem = std::max(4, widths[0] / 2);
    stem1_ = ConvBn<T>(table, name + ".stem1", 3, stem, 3, ConvOptions{2, 1});
    stem2_ = ConvBn<T>(table, name + ".stem2", stem, widths[0], 3, ConvOptions{2, 1});
    int in = widths[0];
    for (int i = 0; i < 4; ++i) {
      stages_[i] = ResidualBlock<T>(table, name + ".stage" + std::to_string(i + 1), in, widths[i], i == 0 ? 1 : 2);
      in = widths[i];
    }
  }

  /// `images` is [N, 3, H, W] with H and W divisible by 32.
  FeaturePyramid<T> operator()(const Var<T>& images) const {
    const Shape s = images.shape();
    require(s.c == 3, "image encoder expects 3 channels, got " + s.str());
    require(s.h % 32 == 0 && s.w % 32 == 0,
            "image dimensions must be divisible by 32, got " + std::to_string(s.h) + "x" + std::to_string(s.w));
    Var<T> x = relu(stem2_(relu(stem1_(images))));
    FeaturePyramid<T> out;
    for (int i = 0; i < 4; ++i) {
      x = stages_[i](x);
      out[i] = x;
    }
    return out;
  }

  const std::array<int, 4>& widths() const { return widths_; }

 private:
  std::array<int, 4> widths_{};
  ConvBn<T> stem1_;
  ConvBn<T> stem2_;
  std::array<ResidualBlock<T>, 4> stages_;
};

// ---------------------------------------------------------------------------
// Captions and text encoder

inline constexpr std::uint32_t kEmptyToken = 0;

/// Lowercase, split on ASCII non-alphanumerics (bytes >= 0x80 stay inside
/// tokens so multi-byte UTF-8 letters are never split), hash each token with
/// FNV-1a 64 into buckets [1, vocab). Id 0 is reserved for the empty caption.
inline std::vector<std::uint32_t> tokenize(std::string_view caption, std::uint32_t vocab) {
  require(vocab >= 2, "tokenize: vocabulary needs at least 2 buckets");
  std::vector<std::uint32_t> ids;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    ids.push_back(static_cast<std::uint32_t>(fnv1a64(token) % (vocab - 1)) + 1);
    token.clear();
  };
  for (char ch : caption) {
    const auto u = static_cast<unsigned char>(ch);
    if (u >= 0x80 || std::isalnum(u)) {
      token.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    } else {
      flush();
    }
  }
  flush();
  if (ids.empty()) ids.push_back(kEmptyToken);
  return ids;
}

/// Hash-embedding text encoder. The caption's mean token embedding is
/// projected per scale and tiled over a grid of half the scale's resolution
/// (rounded up), so TDE upsamples onto the image grid.
template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamTable<T>& table, const std::string& name, std::uint32_t vocab, int embed_dim,
              std::array<int, 4> widths)
      : vocab_(vocab) {
    require(vocab >= 2 && embed_dim > 0, "text encoder: invalid vocabulary or embedding size");
    table_ = table.create(name + ".embedding", Shape{static_cast<int>(vocab), embed_dim, 1, 1}, Init::kUniformUnit);
    for (int i = 0; i < 4; ++i)
      projections_[i] = Conv2d<T>(table, name + ".proj" + std::to_string(i + 1), embed_dim, widths[i], 1);
  }

  /// Text grid side for an image-feature side.
  static int grid_extent(int feature_extent) { return (feature_extent + 1) / 2; }

  /// One caption per batch element; `image_h`, `image_w` are the input image
  /// dimensions.
  FeaturePyramid<T> operator()(const std::vector<std::string>& captions, int image_h, int image_w) const {
    std::vector<std::vector<std::uint32_t>> ids;
    ids.reserve(captions.size());
    for (const auto& c : captions) ids.push_back(tokenize(c, vocab_));
    Var<T> pooled = embedding_mean(table_, ids);
    FeaturePyramid<T> out;
    for (int i = 0; i < 4; ++i) {
      const int fh = (image_h + kPyramidStrides[i] - 1) / kPyramidStrides[i];
      const int fw = (image_w + kPyramidStrides[i] - 1) / kPyramidStrides[i];
      out[i] = expand_spatial(projections_[i](pooled), grid_extent(fh), grid_extent(fw));
    }
    return out;
  }

  std::uint32_t vocab() const { return vocab_; }

 private:
  std::uint32_t vocab_ = 0;
  Var<T> table_;
  std::array<Conv2d<T>, 4> projections_;
};

struct CaptionPair {
  std::string id;
  std::string t1;
  std::string t2;
  bool operator==(const CaptionPair&) const = default;
};

using CaptionMap = std::map<std::string, CaptionPair>;

class CaptionFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parse a captions.jsonl stream: one {"id", "t1", "t2"} object per line.
/// Blank lines are skipped.
inline CaptionMap parse_captions(std::istream& in, const std::string& source = "captions") {
  CaptionMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CaptionFileError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw CaptionFileError(where + ": expected a JSON object");
    CaptionPair pair;
    for (auto [key, field] : {std::pair{"id", &pair.id}, std::pair{"t1", &pair.t1}, std::pair{"t2", &pair.t2}}) {
      auto it = obj.find(key);
      if (it == obj.end()) throw CaptionFileError(where + ": missing key \"" + key + "\"");
      if (!it->is_string()) throw CaptionFileError(where + ": key \"" + key + "\" must be a string");
      *field = it->get<std::string>();
      if (field->empty()) throw CaptionFileError(where + ": key \"" + key + "\" must not be empty");
    }
    if (out.contains(pair.id)) throw CaptionFileError(where + ": duplicate id \"" + pair.id + "\"");
    out.emplace(pair.id, std::move(pair));
  }
  return out;
}

inline CaptionMap load_captions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CaptionFileError("cannot open captions file " + path);
  return parse_captions(in, path);
}

inline std::string caption_line(const CaptionPair& p) {
  nlohmann::ordered_json obj;
  obj["id"] = p.id;
  obj["t1"] = p.t1;
  obj["t2"] = p.t2;
  return obj.dump();
}

/// Writes entries in id order, LF-terminated.
inline void save_captions(const std::string& path, const CaptionMap& captions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CaptionFileError("cannot write captions file " + path);
  for (const auto& [id, pair] : captions) out << caption_line(pair) << '\n';
  if (!out) throw CaptionFileError("write failed for " + path);
}

}  // namespace mmchange

#endif  // MMCHANGE_ENCODERS_HPP_

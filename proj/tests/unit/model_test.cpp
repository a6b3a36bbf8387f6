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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mmchange/model.hpp"
#include "mmchange/data.hpp"
#include "mmchange/training.hpp"
#include "test_util.hpp"

namespace mmchange {
namespace {

BiTemporalBatch<float> scene_batch(int n, int size, std::uint64_t seed, std::vector<std::uint8_t>* labels) {
  std::vector<BiTemporalSample> samples;
  for (int i = 0; i < n; ++i) samples.push_back(sample_from_scene(make_scene(sample_seed(seed, i), size), sample_id(i)));
  std::vector<const BiTemporalSample*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);
  return make_batch<float>(ptrs, labels);
}

TEST(Model, LogitsMatchTheInputResolution) {
  ModelConfig cfg;
  MMChange<float> model(cfg);
  auto batch = scene_batch(2, 64, 1, nullptr);
  auto tr = model.trace(batch);
  EXPECT_EQ(tr.logits.shape(), (Shape{2, 2, 64, 64}));
  ASSERT_TRUE(tr.finest_pixel_gate.has_value());
  EXPECT_EQ(tr.finest_pixel_gate->shape().h, 16);
  EXPECT_EQ(tr.finest_pixel_gate->shape().w, 16);
}

TEST(Model, NonSquareInputsWork) {
  ModelConfig cfg;
  cfg.widths = {4, 8, 8, 16};
  MMChange<float> model(cfg);
  BiTemporalBatch<float> b;
  b.image_a = Tensor<float>(Shape{1, 3, 32, 64});
  b.image_b = Tensor<float>(Shape{1, 3, 32, 64});
  b.caption_a = {"a"};
  b.caption_b = {"b"};
  EXPECT_EQ(model(b).shape(), (Shape{1, 2, 32, 64}));
}

TEST(Model, AblationVariantsCreateTheRightParameters) {
  struct Case {
    AblationFlags flags;
    const char* label;
    const char* present;
    const char* absent;
  };
  const Case cases[] = {
      {AblationFlags::full(), "full", "ifr1.", "ifr_fallback1."},
      {{false, true, true, true}, "no-ifr", "ifr_fallback1.", "ifr1."},
      {{true, false, true, true}, "no-tde", "tde_fallback1.", "tde1."},
      {{true, true, false, true}, "no-itff", "itff_fallback1.", "itff1."},
      {AblationFlags::image_only(), "image-only", "ifr_fallback4.", "text_encoder."},
      {AblationFlags::text_baseline(), "text-baseline", "itff_fallback1.", "itff1."},
  };
  for (const auto& c : cases) {
    ModelConfig cfg;
    cfg.flags = c.flags;
    MMChange<float> model(cfg);
    EXPECT_EQ(c.flags.label(), c.label);
    bool present = false, absent = false;
    for (const auto& e : model.params().params()) {
      present = present || e.name.rfind(c.present, 0) == 0;
      absent = absent || e.name.rfind(c.absent, 0) == 0;
    }
    EXPECT_TRUE(present) << c.label;
    EXPECT_FALSE(absent) << c.label;
  }
}

TEST(Model, ImageOnlyIgnoresCaptions) {
  ModelConfig cfg;
  cfg.widths = {4, 8, 8, 16};
  cfg.flags = AblationFlags::image_only();
  MMChange<float> model(cfg);
  model.set_training(false);
  auto batch = scene_batch(1, 32, 2, nullptr);
  auto with = model(batch).value();
  batch.caption_a.clear();
  batch.caption_b.clear();
  EXPECT_EQ(model(batch).value().vec(), with.vec());
  EXPECT_FALSE(model.trace(batch).finest_pixel_gate.has_value());
}

TEST(Model, CaptionsChangeTheFullModel) {
  ModelConfig cfg;
  cfg.widths = {4, 8, 8, 16};
  MMChange<float> model(cfg);
  model.set_training(false);
  auto batch = scene_batch(1, 32, 2, nullptr);
  auto base = model(batch).value();
  batch.caption_b = {"completely different words here"};
  EXPECT_NE(model(batch).value().vec(), base.vec());
}

TEST(Model, TextModelRequiresCaptions) {
  MMChange<float> model(ModelConfig{});
  auto batch = scene_batch(1, 32, 2, nullptr);
  batch.caption_b.clear();
  EXPECT_THROW(model(batch), ShapeError);
}

TEST(Model, InitialLossIsNearLnTwo) {
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig cfg;
    cfg.seed = seed;
    MMChange<float> model(cfg);
    model.set_training(true);
    std::vector<std::uint8_t> labels;
    auto batch = scene_batch(8, 64, seed, &labels);
    const double loss = cross_entropy(model(batch), labels).value()[0];
    EXPECT_NEAR(loss, std::log(2.0), 0.15) << "seed " << seed;
  }
}

TEST(Model, SameSeedSameParameters) {
  ModelConfig cfg;
  cfg.seed = 4;
  MMChange<float> a(cfg), b(cfg);
  ASSERT_EQ(a.params().params().size(), b.params().params().size());
  for (std::size_t i = 0; i < a.params().params().size(); ++i)
    EXPECT_EQ(a.params().params()[i].var.value().vec(), b.params().params()[i].var.value().vec());
  cfg.seed = 5;
  MMChange<float> c(cfg);
  EXPECT_NE(a.params().params()[0].var.value().vec(), c.params().params()[0].var.value().vec());
}

TEST(Model, ParameterNamesAreUnique) {
  MMChange<float> model(ModelConfig{});
  std::set<std::string> names;
  for (const auto& e : model.params().params()) EXPECT_TRUE(names.insert(e.name).second) << e.name;
}

TEST(ModelConfig, HashTracksArchitectureButNotSeed) {
  ModelConfig a, b;
  b.seed = 77;
  EXPECT_EQ(a.hash(), b.hash());
  b.flags.use_tde = false;
  EXPECT_NE(a.hash(), b.hash());
  ModelConfig c;
  c.widths[3] = 64;
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash(), fnv1a64(a.canonical()));
}

TEST(PredictMask, TiesGoToNoChange) {
  Tensor<float> logits(Shape{1, 2, 1, 3});
  logits(0, 0, 0, 0) = 1, logits(0, 1, 0, 0) = 2;
  logits(0, 0, 0, 1) = 2, logits(0, 1, 0, 1) = 1;
  logits(0, 0, 0, 2) = 3, logits(0, 1, 0, 2) = 3;
  EXPECT_EQ(predict_mask(logits), (std::vector<std::uint8_t>{1, 0, 0}));
}

}  // namespace
}  // namespace mmchange

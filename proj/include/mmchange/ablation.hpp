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

#ifndef MMCHANGE_ABLATION_HPP_
#define MMCHANGE_ABLATION_HPP_

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "mmchange/training.hpp"

namespace mmchange {

/// Named variant of the ablation study.
struct Variant {
  std::string label;
  AblationFlags flags;
};

/// Full model first, then one single-module removal per block, then the
/// image-only baseline.
inline std::vector<Variant> standard_variants() {
  return {{"full", AblationFlags::full()},
          {"no-ifr", {false, true, true, true}},
          {"no-tde", {true, false, true, true}},
          {"no-itff", {true, true, false, true}},
          {"image-only", AblationFlags::image_only()}};
}

/// Looks a label up among the standard variants plus "text-baseline".
inline Variant variant_by_label(const std::string& label) {
  for (auto& v : standard_variants())
    if (v.label == label) return v;
  if (label == "text-baseline") return {label, AblationFlags::text_baseline()};
  throw ConfigError("unknown variant '" + label + "'");
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  MetricReport clean;
  std::string error;  // empty on success
};

/// Train one variant from `base` with the given seed and score it on `test`.
/// Returns the trained model so callers can run further evaluations.
template <typename T>
MMChange<T> train_variant(TrainConfig cfg, const AblationFlags& flags, std::uint64_t seed,
                          const std::vector<BiTemporalSample>& train_data, TrainHooks hooks = {}) {
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.model.flags = flags;
  MMChange<T> model(cfg.model);
  TrainingState<T> state;
  state.config = cfg;
  train(model, state, train_data, hooks);
  return model;
}

/// Every (variant, seed) pair is trained with the same budget. A failing
/// variant records its error and the others still run.
template <typename T>
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<BiTemporalSample>& train_data,
                                      const std::vector<BiTemporalSample>& test_data, std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : variants) {
      AblationRow row;
      row.variant = v.label;
      row.seed = seed;
      try {
        auto model = train_variant<T>(base, v.flags, seed, train_data);
        row.clean = evaluate(model, test_data, base.batch_size);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (progress) *progress << v.label << " seed " << seed << (row.error.empty() ? " done" : " failed: " + row.error) << '\n';
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// One row per (variant, seed): percentages as in the metric text report.
inline std::string ablation_tsv(const std::vector<AblationRow>& rows) {
  std::string out = "variant\tseed\tIoU\tF1\tPrecision\tRecall\terror\n";
  char buf[160];
  for (const auto& r : rows) {
    if (r.error.empty()) {
      std::snprintf(buf, sizeof(buf), "%s\t%llu\t%.2f\t%.2f\t%.2f\t%.2f\t\n", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), 100 * r.clean.iou, 100 * r.clean.f1,
                    100 * r.clean.precision, 100 * r.clean.recall);
      out += buf;
    } else {
      std::string msg = r.error;
      for (char& ch : msg)
        if (ch == '\t' || ch == '\n') ch = ' ';
      out += r.variant + "\t" + std::to_string(r.seed) + "\t\t\t\t\t" + msg + "\n";
    }
  }
  return out;
}

}  // namespace mmchange

#endif  // MMCHANGE_ABLATION_HPP_

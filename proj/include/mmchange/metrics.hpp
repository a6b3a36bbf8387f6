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

#ifndef MMCHANGE_METRICS_HPP_
#define MMCHANGE_METRICS_HPP_

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

#include "json.hpp"
#include "mmchange/tensor.hpp"

namespace mmchange {

/// Pixel tallies for the "change" class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Masks hold one label per pixel, nonzero meaning "change".
inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  require(pred.size() == gt.size(), "confusion: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                                        std::to_string(gt.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// When there is nothing to find and nothing was predicted (tp + fp + fn = 0)
// every score is 1; otherwise a zero denominator scores 0.

inline bool nothing_to_score(const ConfusionCounts& c) { return c.tp + c.fp + c.fn == 0; }

inline double precision(const ConfusionCounts& c) {
  if (nothing_to_score(c)) return 1.0;
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline double recall(const ConfusionCounts& c) {
  if (nothing_to_score(c)) return 1.0;
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double iou(const ConfusionCounts& c) {
  if (nothing_to_score(c)) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn + c.fp);
}

inline double f1(const ConfusionCounts& c) {
  if (nothing_to_score(c)) return 1.0;
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

struct MetricReport {
  ConfusionCounts counts;
  double iou = 0, f1 = 0, precision = 0, recall = 0;

  static MetricReport from(const ConfusionCounts& c) {
    return {c, mmchange::iou(c), mmchange::f1(c), mmchange::precision(c), mmchange::recall(c)};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["iou"] = iou;
    j["f1"] = f1;
    j["precision"] = precision;
    j["recall"] = recall;
    j["counts"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}};
    return j;
  }

  static MetricReport from_json(const nlohmann::json& j) {
    MetricReport r;
    r.iou = j.at("iou").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    const auto& c = j.at("counts");
    r.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(), c.at("fn").get<std::uint64_t>(),
                c.at("tn").get<std::uint64_t>()};
    return r;
  }

  /// Percentages to two decimals.
  std::string to_text() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "IoU\tF1\tRecall\tPrecision\n%.2f\t%.2f\t%.2f\t%.2f\n"
                  "TP\tFP\tFN\tTN\n%llu\t%llu\t%llu\t%llu\n",
                  100.0 * iou, 100.0 * f1, 100.0 * recall, 100.0 * precision,
                  static_cast<unsigned long long>(counts.tp), static_cast<unsigned long long>(counts.fp),
                  static_cast<unsigned long long>(counts.fn), static_cast<unsigned long long>(counts.tn));
    return buf;
  }
};

}  // namespace mmchange

#endif  // MMCHANGE_METRICS_HPP_

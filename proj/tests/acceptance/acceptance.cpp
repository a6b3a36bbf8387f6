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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Criteria 5-7 train real models and take tens of minutes
// on one core; --only selects a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmchange/mmchange.hpp"

namespace fs = std::filesystem;
using namespace mmchange;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Shared experiment state. Trained models are reused by later criteria.

struct OverfitRun {
  std::uint64_t seed = 0;
  std::vector<BiTemporalSample> data;
  std::optional<MMChange<float>> model;
  TrainingState<float> state;
  double final_logged_f1 = 0;
  double seconds = 0;
};

struct VariantRun {
  MetricReport clean;
  MetricReport perturbed;
};

class Suite {
 public:
  explicit Suite(fs::path work) : work_(std::move(work)) { fs::create_directories(work_); }

  // Overfit recipe: 16 samples, 64x64, widths 16/32/64/128, batch 8, 500
  // steps; no flips or swaps so the network sees its training set as is.
  OverfitRun& overfit(std::uint64_t seed) {
    auto it = overfit_.find(seed);
    if (it != overfit_.end()) return it->second;
    OverfitRun run;
    run.seed = seed;
    const fs::path dir = work_ / ("overfit_data_" + std::to_string(seed));
    fs::remove_all(dir);
    generate_dataset(seed, 16, 64, dir);
    run.data = load_dataset(dir);
    run.state.config.seed = seed;
    run.state.config.model.seed = seed;
    run.state.config.batch_size = 8;
    run.state.config.max_iteration = 500;
    run.state.config.augment.flip = false;
    run.state.config.augment.temporal_swap = false;
    run.model.emplace(run.state.config.model);
    TrainHooks hooks;
    hooks.eval_data = &run.data;
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train(*run.model, run.state, run.data, hooks);
    run.seconds = seconds_since(t0);
    run.final_logged_f1 = result.evals.back().second.f1;
    return overfit_.emplace(seed, std::move(run)).first->second;
  }

  // Ablation split: 64 training and 32 held-out samples from disjoint seeds.
  const std::vector<BiTemporalSample>& ablation_train() { return split(ablation_train_, "ablation_train", 1001, 64); }
  const std::vector<BiTemporalSample>& ablation_test() { return split(ablation_test_, "ablation_test", 2002, 32); }

  static TrainConfig ablation_config() {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_iteration = 800;
    return cfg;
  }

  static Perturbation pinned_perturbation() { return {0.05, 0.2, 1.2}; }

  VariantRun& variant(const Variant& v, std::uint64_t seed) {
    const auto key = std::make_pair(v.label, seed);
    auto it = variants_.find(key);
    if (it != variants_.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    auto model = train_variant<float>(ablation_config(), v.flags, seed, ablation_train());
    VariantRun run;
    run.clean = evaluate(model, ablation_test(), 8);
    run.perturbed = evaluate(model, ablation_test(), 8, pinned_perturbation(), seed);
    std::fprintf(stderr, "  trained %-10s seed %llu: IoU %.4f F1 %.4f perturbed F1 %.4f (%.0f s)\n", v.label.c_str(),
                 static_cast<unsigned long long>(seed), run.clean.iou, run.clean.f1, run.perturbed.f1,
                 seconds_since(t0));
    return variants_.emplace(key, run).first->second;
  }

  const fs::path& work() const { return work_; }

 private:
  const std::vector<BiTemporalSample>& split(std::optional<std::vector<BiTemporalSample>>& slot, const char* name,
                                             std::uint64_t seed, std::size_t count) {
    if (!slot) {
      const fs::path dir = work_ / name;
      fs::remove_all(dir);
      generate_dataset(seed, count, 64, dir);
      slot = load_dataset(dir);
    }
    return *slot;
  }

  fs::path work_;
  std::map<std::uint64_t, OverfitRun> overfit_;
  std::optional<std::vector<BiTemporalSample>> ablation_train_, ablation_test_;
  std::map<std::pair<std::string, std::uint64_t>, VariantRun> variants_;
};

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

Outcome gradient_fidelity(Suite&) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  for (const std::string m : {"primitives", "tde", "ifr", "itff", "fallback"}) {
    const auto r = gradcheck(m, GradcheckOptions{});
    const bool ok = r.max_rel_error < 1e-4;
    o.pass = o.pass && ok;
    o.detail += m + " " + fmt("%.1e", r.max_rel_error) + (ok ? "" : " (worst " + r.worst_entry + ")") + ", ";
  }
  GradcheckOptions opt;
  opt.height = opt.width = 32;
  ModelConfig cfg;
  cfg.widths = {4, 8, 8, 16};
  cfg.embed_dim = 8;
  const auto r = gradcheck("model", opt, cfg);
  o.pass = o.pass && r.max_rel_error < 1e-3;
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 120;
  o.detail += "model@32x32 " + fmt("%.1e", r.max_rel_error) + "; " + fmt("%.1f s", secs) +
              " (limits 1e-4 / 1e-3 / 120 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Algebraic invariants, 200 random cases per property

constexpr int kCases = 200;

template <typename T>
Tensor<T> uniform_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Multiples of 1/64: sums stay exact, so offsets cancel bit for bit.
Tensor<double> dyadic(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = rng.uniform_int(-256, 255) / 64.0;
  return t;
}

void scramble(ParamTable<double>& table, Rng& rng) {
  for (auto& e : table.norms()) {
    for (auto& m : e.stats->running_mean) m = rng.uniform(-0.5, 0.5);
    for (auto& v : e.stats->running_var) v = rng.uniform(0.5, 2.0);
  }
  for (auto& e : table.params())
    for (auto& v : e.var.mutable_value().vec()) v += rng.uniform(-0.25, 0.25);
}

Shape random_shape(Rng& rng, int c) { return {rng.uniform_int(1, 2), c, rng.uniform_int(1, 4), rng.uniform_int(1, 4)}; }

Outcome algebraic_invariants(Suite&) {
  std::vector<std::pair<std::string, bool>> checks;
  Rng rng(2024);
  using V = Var<double>;

  {  // TDE offset invariance
    ParamTable<double> t(1);
    Tde<double> tde(t, "tde", 4);
    scramble(t, rng);
    bool ok = true;
    for (int i = 0; i < kCases && ok; ++i) {
      const Shape s = random_shape(rng, 4);
      V a(dyadic(s, rng)), b(dyadic(s, rng)), c(dyadic(s, rng));
      ok = tde(a, b).value() == tde(a + c, b + c).value();
    }
    checks.emplace_back("tde-offset", ok);
  }
  {  // IFR offset invariance, both softmax axes
    bool ok = true;
    for (auto axis : {SoftmaxAxis::kChannel, SoftmaxAxis::kSpatial}) {
      ParamTable<double> t(2);
      Ifr<double> ifr(t, "ifr", 8, axis);
      scramble(t, rng);
      for (int i = 0; i < kCases && ok; ++i) {
        const Shape s = random_shape(rng, 8);
        V a(dyadic(s, rng)), b(dyadic(s, rng)), c(dyadic(s, rng));
        ok = ifr(a, b).value() == ifr(a + c, b + c).value();
      }
    }
    checks.emplace_back("ifr-offset", ok);
  }
  {  // TDE zero difference under identity BN
    ParamTable<double> t(3);
    Tde<double> tde(t, "tde", 4);
    for (auto& e : t.params()) {
      for (auto& v : e.var.mutable_value().vec()) v += rng.uniform(-0.25, 0.25);
      if (e.name.ends_with(".gamma")) e.var.mutable_value().fill(1.0);
      if (e.name.ends_with(".beta")) e.var.mutable_value().fill(0.0);
    }
    bool ok = true;
    for (int i = 0; i < kCases && ok; ++i) {
      V a(uniform_tensor<double>(random_shape(rng, 4), rng, -1, 1));
      const auto y = tde(a, a).value();
      for (double v : y.vec()) ok = ok && v == 0.0;
    }
    checks.emplace_back("tde-zero", ok);
  }
  {  // ITFF depends on the sum only; every gate strictly inside (0, 1)
    ParamTable<double> t(4);
    Itff<double> itff(t, "itff", 8);
    bool sum_ok = true, gates_ok = true;
    for (int i = 0; i < kCases; ++i) {
      const Shape s = random_shape(rng, 8);
      V a(uniform_tensor<double>(s, rng, -3, 3)), b(uniform_tensor<double>(s, rng, -3, 3));
      auto tr = itff.trace(a, b);
      sum_ok = sum_ok && tr.out.value() == itff(b, a).value() && tr.out.value() == itff(a + b, V(Tensor<double>(s))).value();
      for (const auto* m : {&tr.spatial.value(), &tr.channel.value(), &tr.pixel.value()})
        for (double v : m->vec()) gates_ok = gates_ok && v > 0.0 && v < 1.0;
    }
    ParamTable<double> t2(5);
    Ifr<double> ifr(t2, "ifr", 8);
    scramble(t2, rng);
    for (int i = 0; i < kCases; ++i) {
      const Shape s = random_shape(rng, 8);
      auto tr = ifr.trace(V(uniform_tensor<double>(s, rng, -1, 1)), V(uniform_tensor<double>(s, rng, -1, 1)));
      for (double v : tr.gate.value().vec()) gates_ok = gates_ok && v > 0.0 && v < 1.0;
    }
    checks.emplace_back("itff-sum", sum_ok);
    checks.emplace_back("gates-open-interval", gates_ok);
  }
  {  // softmax slices sum to one
    bool ok = true;
    for (int i = 0; i < kCases; ++i) {
      const Shape s = random_shape(rng, 3);
      auto x = uniform_tensor<double>(s, rng, -8, 8);
      auto ch = softmax(V(x), SoftmaxAxis::kChannel).value();
      auto sp = softmax(V(x), SoftmaxAxis::kSpatial).value();
      for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < s.plane(); ++p) {
          double sum = 0;
          for (int c = 0; c < s.c; ++c) sum += ch.plane(n, c)[p];
          ok = ok && std::abs(sum - 1.0) <= 1e-6;
        }
        for (int c = 0; c < s.c; ++c)
          ok = ok && std::abs(std::accumulate(sp.plane(n, c), sp.plane(n, c) + s.plane(), 0.0) - 1.0) <= 1e-6;
      }
    }
    checks.emplace_back("softmax-sums", ok);
  }
  {  // SDPA spatial permutation equivariance
    bool ok = true;
    for (int i = 0; i < kCases; ++i) {
      const Shape s{1, 3, rng.uniform_int(1, 3), rng.uniform_int(2, 4)};
      const int n = static_cast<int>(s.plane());
      auto x = uniform_tensor<double>(s, rng, -1, 1);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (int k = n - 1; k > 0; --k) std::swap(perm[k], perm[rng.uniform_int(0, k)]);
      Tensor<double> xp(s);
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n; ++k) xp.plane(0, c)[k] = x.plane(0, c)[perm[k]];
      auto y = sdpa(V(x)).value(), yp = sdpa(V(xp)).value();
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n; ++k) ok = ok && std::abs(yp.plane(0, c)[k] - y.plane(0, c)[perm[k]]) <= 1e-12;
    }
    checks.emplace_back("sdpa-permutation", ok);
  }
  Outcome o{true, std::to_string(kCases) + " cases each:"};
  for (const auto& [name, ok] : checks) {
    o.pass = o.pass && ok;
    o.detail += " " + name + (ok ? " ok" : " FAILED");
  }
  return o;
}

// ---------------------------------------------------------------------------
// 3. Metric correctness

Outcome metric_correctness(Suite&) {
  Rng rng(3);
  bool oracle = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> pred(64), gt(64);
    const double p = rng.uniform(), q = rng.uniform();
    for (auto& v : pred) v = rng.coin(p);
    for (auto& v : gt) v = rng.coin(q);
    ConfusionCounts ref;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const int i = y * 8 + x;
        if (pred[i] && gt[i]) ++ref.tp;
        if (pred[i] && !gt[i]) ++ref.fp;
        if (!pred[i] && gt[i]) ++ref.fn;
        if (!pred[i] && !gt[i]) ++ref.tn;
      }
    oracle = oracle && confusion(pred, gt) == ref;
  }
  double worst = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    ConfusionCounts c{static_cast<std::uint64_t>(rng.uniform_int(0, 100000)),
                      static_cast<std::uint64_t>(rng.uniform_int(0, 100000)),
                      static_cast<std::uint64_t>(rng.uniform_int(0, 100000)), 0};
    const double j = iou(c);
    worst = std::max(worst, std::abs(f1(c) - 2 * j / (1 + j)));
  }
  const ConfusionCounts ex{50, 10, 40, 0};
  const bool worked = std::abs(precision(ex) - 0.833333) < 5e-7 && std::abs(recall(ex) - 0.555556) < 5e-7 &&
                      std::abs(iou(ex) - 0.500000) < 5e-7 && std::abs(f1(ex) - 0.666667) < 5e-7;
  Outcome o;
  o.pass = oracle && worst <= 1e-12 && worked;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "oracle on 100 pairs %s; max |F1 - 2IoU/(1+IoU)| %.1e; worked example (%.6f, %.6f, %.6f, %.6f)",
                oracle ? "ok" : "FAILED", worst, precision(ex), recall(ex), iou(ex), f1(ex));
  o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------
// 4. Schedule correctness

Outcome schedule_correctness(Suite&) {
  TrainConfig cfg = TrainConfig::full_scale();
  const double at0 = poly_lr(0, cfg), at_max = poly_lr(cfg.max_iteration, cfg), mid = poly_lr(20000, cfg);
  Rng rng(4);
  std::vector<long> steps(1000);
  for (auto& s : steps) s = rng.uniform_int(0, cfg.max_iteration);
  std::sort(steps.begin(), steps.end());
  bool monotone = true;
  for (std::size_t i = 1; i < steps.size(); ++i) monotone = monotone && poly_lr(steps[i], cfg) <= poly_lr(steps[i - 1], cfg);
  Outcome o;
  o.pass = at0 == 0.0005 && at_max == 0.0 && std::abs(mid - 2.6795e-4) <= 1e-8 && monotone;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "lr(0)=%.4g lr(max)=%g lr(20000)=%.6e monotone over 1000 steps: %s", at0, at_max, mid,
                monotone ? "yes" : "no");
  o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------
// 5. Trainability

Outcome trainability(Suite& suite) {
  Outcome o{true, ""};
  for (std::uint64_t seed : {1, 2}) {
    auto& run = suite.overfit(seed);
    const bool ok = run.final_logged_f1 >= 0.95 && run.seconds < 600;
    o.pass = o.pass && ok;
    o.detail += "seed " + std::to_string(seed) + ": F1 " + fmt("%.4f", run.final_logged_f1) + " in " +
                fmt("%.0f s", run.seconds) + "; ";
  }
  o.detail += "need F1 >= 0.95 within 500 steps and 600 s, 2 of 2 seeds";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Ablation direction, 7. robustness direction

const std::vector<std::uint64_t> kAblationSeeds{1, 2, 3};

Outcome ablation_direction(Suite& suite) {
  const auto variants = standard_variants();
  Outcome o{true, "held-out IoU full>=variant seeds:"};
  for (std::size_t k = 1; k < variants.size(); ++k) {
    int wins = 0;
    for (auto seed : kAblationSeeds)
      wins += suite.variant(variants[0], seed).clean.iou >= suite.variant(variants[k], seed).clean.iou;
    o.pass = o.pass && wins >= 2;
    o.detail += " " + variants[k].label + " " + std::to_string(wins) + "/3";
  }
  o.detail += " (full IoU";
  for (auto seed : kAblationSeeds) o.detail += " " + fmt("%.4f", suite.variant(variants[0], seed).clean.iou);
  o.detail += ")";
  return o;
}

Outcome robustness_direction(Suite& suite) {
  const Variant full = variant_by_label("full"), image_only = variant_by_label("image-only");
  int wins = 0;
  std::string detail;
  for (auto seed : kAblationSeeds) {
    const auto& f = suite.variant(full, seed);
    const auto& b = suite.variant(image_only, seed);
    const double drop_full = f.clean.f1 - f.perturbed.f1, drop_image = b.clean.f1 - b.perturbed.f1;
    wins += drop_full <= drop_image;
    char buf[128];
    std::snprintf(buf, sizeof(buf), " seed %llu drop full %.4f vs image-only %.4f;", static_cast<unsigned long long>(seed),
                  drop_full, drop_image);
    detail += buf;
  }
  return {wins >= 2, "sigma 0.05, brightness 0.2, contrast 1.2:" + detail + " " + std::to_string(wins) + "/3 seeds"};
}

// ---------------------------------------------------------------------------
// 8. Round trip and determinism

Outcome round_trip(Suite& suite) {
  auto& run = suite.overfit(1);
  const fs::path ckpt = suite.work() / "overfit_seed1.bin";
  save_checkpoint(ckpt.string(), *run.model, run.state);
  MMChange<float> restored(read_checkpoint_header(ckpt.string()).config.model);
  load_checkpoint(ckpt.string(), restored);
  const MetricReport before = evaluate(*run.model, run.data, 8);
  const MetricReport after = evaluate(restored, run.data, 8);
  const double metric_gap = std::max({std::abs(before.iou - after.iou), std::abs(before.f1 - after.f1),
                                      std::abs(before.precision - after.precision),
                                      std::abs(before.recall - after.recall)});
  const double log_gap = std::abs(after.f1 - run.final_logged_f1);

  // Two short same-seed runs.
  double curve_gap = 0;
  std::vector<double> curves[2];
  for (auto& curve : curves) {
    TrainingState<float> st;
    st.config.seed = 9;
    st.config.model.seed = 9;
    st.config.max_iteration = 20;
    MMChange<float> m(st.config.model);
    for (const auto& e : train(m, st, run.data).losses) curve.push_back(e.loss);
  }
  for (std::size_t i = 0; i < curves[0].size(); ++i) curve_gap = std::max(curve_gap, std::abs(curves[0][i] - curves[1][i]));

  // Regenerate the overfit set and compare every file.
  const fs::path a = suite.work() / "regen_a", b = suite.work() / "regen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  generate_dataset(1, 16, 64, a);
  generate_dataset(1, 16, 64, b);
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    differing += slurp(e.path()) != slurp(b / fs::relative(e.path(), a));
  }
  Outcome o;
  o.pass = metric_gap <= 1e-6 && log_gap <= 1e-6 && curve_gap <= 1e-6 && differing == 0 && files > 0 &&
           curves[0].size() == 20;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "checkpoint metric gap %.1e, logged-F1 gap %.1e, rerun loss gap %.1e over %zu steps, %zu/%zu "
                "regenerated files identical",
                metric_gap, log_gap, curve_gap, curves[0].size(), files - differing, files);
  o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------
// 9. Visualization contract

Outcome visualization(Suite& suite) {
  auto& run = suite.overfit(1);
  const fs::path dir = suite.work() / "overlays";
  fs::create_directories(dir);
  const std::set<Rgb> palette{kTruePositiveColor, kTrueNegativeColor, kFalsePositiveColor, kFalseNegativeColor};
  NoGradGuard no_grad;
  run.model->set_training(false);
  bool ok = true;
  std::set<Rgb> seen;
  ConfusionCounts total;
  for (const auto& s : run.data) {
    std::vector<const BiTemporalSample*> one{&s};
    const auto pred = predict_mask(run.model->operator()(make_batch<float>(one, nullptr)).value());
    const auto path = (dir / (s.id + ".png")).string();
    write_png(path, overlay(pred, s.mask.labels, s.height(), s.width()));
    const Raster back = read_png(path, 3);
    for (std::size_t i = 0; i < back.pixels.size(); i += 3) {
      const Rgb px{back.pixels[i], back.pixels[i + 1], back.pixels[i + 2]};
      ok = ok && palette.count(px) == 1;
      seen.insert(px);
    }
    const ConfusionCounts expect = confusion(pred, s.mask.labels);
    ok = ok && overlay_counts(back) == expect;
    total += expect;
  }
  // A synthetic pair covering all four classes.
  std::vector<std::uint8_t> pred{1, 1, 0, 0}, gt{1, 0, 1, 0};
  const auto path = (dir / "four_classes.png").string();
  write_png(path, overlay(pred, gt, 2, 2));
  const Raster four = read_png(path, 3);
  std::set<Rgb> four_seen;
  for (std::size_t i = 0; i < four.pixels.size(); i += 3) four_seen.insert({four.pixels[i], four.pixels[i + 1], four.pixels[i + 2]});
  ok = ok && four_seen == palette && overlay_counts(four) == confusion(pred, gt);
  return {ok, std::to_string(run.data.size()) + " overlays of the overfit model plus a four-class pair; " +
                  std::to_string(seen.size()) + " palette colours used; counts " + (ok ? "match" : "MISMATCH") +
                  " confusion (tp " + std::to_string(total.tp) + ", fp " + std::to_string(total.fp) + ", fn " +
                  std::to_string(total.fn) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome(Suite&)>>> criteria{
      {"gradient fidelity", gradient_fidelity},   {"algebraic invariants", algebraic_invariants},
      {"metric correctness", metric_correctness}, {"schedule correctness", schedule_correctness},
      {"trainability (overfit)", trainability},   {"ablation direction", ablation_direction},
      {"robustness direction", robustness_direction}, {"round trip and determinism", round_trip},
      {"visualization contract", visualization},
  };
  Suite suite(work);
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(suite);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    ++ran;
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}

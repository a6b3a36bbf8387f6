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

// Command-line entry points. Exit codes: 0 success, 2 usage error, 1 runtime
// failure.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmchange/mmchange.hpp"
// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's
// product kernels.
#include "mmchange/captioner.hpp"

namespace fs = std::filesystem;
using namespace mmchange;

namespace {

/// Bad flag combinations detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("MMCHANGE_SEED");
  if (!text || !*text) return std::nullopt;
  std::uint64_t v = 0;
  const char* end = text + std::strlen(text);
  auto [ptr, ec] = std::from_chars(text, end, v);
  if (ec != std::errc() || ptr != end) throw UsageError(std::string("MMCHANGE_SEED is not an integer: ") + text);
  return v;
}

/// Explicit flag, then the environment, then `fallback`.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback = 0) {
  if (flag) return *flag;
  if (auto env = env_seed()) return *env;
  return fallback;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

/// Config file (optional) plus `key=value` overrides plus seed resolution.
TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides,
                         const std::optional<std::uint64_t>& seed_flag) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (seed_flag) kv.set("seed", std::to_string(*seed_flag));
  else if (!kv.has("seed"))
    if (auto env = env_seed()) kv.set("seed", std::to_string(*env));
  return TrainConfig::from(kv);
}

struct AblationSwitches {
  bool no_ifr = false, no_tde = false, no_itff = false, image_only = false;

  void apply(ModelConfig& m) const {
    if (image_only && (no_ifr || no_tde || no_itff))
      throw UsageError("--image-only already disables every block; it cannot be combined with --no-ifr, "
                       "--no-tde or --no-itff");
    if (image_only) m.flags = AblationFlags::image_only();
    if (no_ifr) m.flags.use_ifr = false;
    if (no_tde) m.flags.use_tde = false;
    if (no_itff) m.flags.use_itff = false;
  }
};

struct LoadedModel {
  MMChange<float> model;
  CheckpointHeader header;
};

LoadedModel load_model(const std::string& ckpt) {
  CheckpointHeader h = read_checkpoint_header(ckpt);
  MMChange<float> model(h.config.model);
  load_checkpoint(ckpt, model);
  model.set_training(false);
  return {model, h};
}

struct PairInputs {
  std::string a, b, label, captions, id, caption_a, caption_b;
};

void add_pair_options(CLI::App* cmd, PairInputs& in) {
  cmd->add_option("--a", in.a, "First-date image (PNG)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--b", in.b, "Second-date image (PNG)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--captions", in.captions, "captions.jsonl holding this pair")->check(CLI::ExistingFile);
  cmd->add_option("--id", in.id, "Sample id in --captions (default: stem of --a)");
  cmd->add_option("--caption-a", in.caption_a, "First-date caption text");
  cmd->add_option("--caption-b", in.caption_b, "Second-date caption text");
}

BiTemporalSample load_pair(const PairInputs& in, bool needs_text) {
  BiTemporalSample s;
  s.id = in.id.empty() ? fs::path(in.a).stem().string() : in.id;
  s.image_a = from_raster(read_png(in.a, 3));
  s.image_b = from_raster(read_png(in.b, 3));
  if (s.image_a.shape() != s.image_b.shape()) throw std::runtime_error("--a and --b differ in size");
  s.mask = Mask(s.height(), s.width());
  if (!in.captions.empty()) {
    const CaptionMap caps = load_captions(in.captions);
    auto it = caps.find(s.id);
    if (it == caps.end()) throw UsageError("no captions for id '" + s.id + "' in " + in.captions);
    s.caption_a = it->second.t1;
    s.caption_b = it->second.t2;
  }
  if (!in.caption_a.empty()) s.caption_a = in.caption_a;
  if (!in.caption_b.empty()) s.caption_b = in.caption_b;
  if (needs_text && (s.caption_a.empty() || s.caption_b.empty()))
    throw UsageError("this checkpoint uses text: pass --captions (with --id) or --caption-a and --caption-b");
  return s;
}

BiTemporalBatch<float> single_batch(const BiTemporalSample& s) {
  std::vector<const BiTemporalSample*> ptrs{&s};
  return make_batch<float>(ptrs, nullptr);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::optional<std::uint64_t> seed;
  long count = -1;
  int size = 64;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  if (a.count < 0) throw UsageError("--count must be non-negative");
  DatasetManifest m;
  try {
    m = generate_dataset(resolve_seed(a.seed), static_cast<std::size_t>(a.count), a.size, a.out);
  } catch (const DatasetError& e) {
    if (a.size <= 0 || a.size % 32 != 0) throw UsageError(e.what());
    throw;
  }
  std::cout << "generated " << m.count << " samples of " << m.size << "x" << m.size << " (seed " << m.seed << ") in "
            << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, data, eval_data, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  AblationSwitches ablation;
  bool resume = false;
  std::uint64_t stop_at = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = build_config(a.config, a.overrides, a.seed);
  a.ablation.apply(cfg.model);
  ensure_dir(a.out);
  const fs::path ckpt = fs::path(a.out) / "checkpoint.bin";
  const fs::path log_path = fs::path(a.out) / "train.log";
  auto data = load_dataset(a.data);
  if (data.empty()) throw std::runtime_error("training set " + a.data + " is empty");
  std::vector<BiTemporalSample> eval_data;
  if (!a.eval_data.empty()) eval_data = load_dataset(a.eval_data);

  MMChange<float> model(cfg.model);
  TrainingState<float> state;
  state.config = cfg;
  if (a.resume && fs::exists(ckpt)) {
    const auto header = read_checkpoint_header(ckpt.string());
    if (header.config.to_text() != cfg.to_text())
      throw CheckpointError(ckpt.string() + " was written with a different configuration; rerun without --resume "
                            "or with the original flags");
    load_checkpoint(ckpt.string(), model, &state);
    std::cerr << "resuming at step " << state.step << '\n';
  }
  std::ofstream log(log_path, a.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint_path = ckpt.string();
  hooks.eval_data = eval_data.empty() ? nullptr : &eval_data;
  hooks.stop_at = a.stop_at;
  const TrainResult result = train(model, state, data, hooks);
  std::cout << model.config().flags.label() << ": " << result.losses.size() << " steps, now at step " << state.step
            << " of " << cfg.max_iteration;
  if (!result.losses.empty()) std::cout << ", last loss " << result.losses.back().loss;
  std::cout << '\n';
  if (!result.evals.empty()) std::cout << format_eval_line(result.evals.back().first, result.evals.back().second) << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out;
  double noise = 0.0, brightness = 0.0, contrast = 1.0;
  std::optional<std::uint64_t> seed;
  int batch = 8;
};

int run_eval(const EvalArgs& a) {
  if (a.noise < 0) throw UsageError("--noise must be non-negative");
  if (a.batch <= 0) throw UsageError("--batch-size must be positive");
  auto [model, header] = load_model(a.ckpt);
  auto data = load_dataset(a.data);
  const Perturbation p{a.noise, a.brightness, a.contrast};
  const MetricReport report = evaluate(model, data, a.batch, p, resolve_seed(a.seed));
  const fs::path out = a.out.empty() ? fs::path(a.ckpt).parent_path() : fs::path(a.out);
  if (!out.empty()) ensure_dir(out);
  nlohmann::ordered_json j = report.to_json();
  j["perturbation"] = {{"noise_sigma", p.noise_sigma}, {"brightness", p.brightness}, {"contrast", p.contrast}};
  j["samples"] = data.size();
  j["checkpoint_step"] = header.step;
  write_text(out / "eval.json", j.dump(2) + "\n");
  write_text(out / "eval.txt", report.to_text());
  std::cout << report.to_text();
  return 0;
}

struct PredictArgs {
  std::string ckpt, out, label;
  PairInputs pair;
};

int run_predict(const PredictArgs& a) {
  auto [model, header] = load_model(a.ckpt);
  const BiTemporalSample s = load_pair(a.pair, model.config().flags.use_text);
  std::vector<std::uint8_t> pred;
  {
    NoGradGuard no_grad;
    pred = predict_mask(model(single_batch(s)).value());
  }
  ensure_dir(a.out);
  Mask m(s.height(), s.width());
  m.labels = pred;
  write_png((fs::path(a.out) / "mask.png").string(), mask_raster(m));
  std::cout << "changed pixels " << m.count() << " of " << m.labels.size() << '\n';
  if (!a.label.empty()) {
    const Mask gt = mask_from_raster(read_png(a.label, 1));
    if (gt.height != s.height() || gt.width != s.width()) throw std::runtime_error("--label size differs from images");
    const Raster o = overlay(pred, gt.labels, s.height(), s.width());
    write_png((fs::path(a.out) / "overlay.png").string(), o);
    const ConfusionCounts c = confusion(pred, gt.labels);
    std::cout << MetricReport::from(c).to_text();
  }
  return 0;
}

struct HeatmapArgs {
  std::string ckpt, out;
  PairInputs pair;
};

int run_heatmap(const HeatmapArgs& a) {
  auto [model, header] = load_model(a.ckpt);
  if (!model.config().flags.use_itff) throw std::runtime_error("checkpoint has no ITFF block to visualise");
  const BiTemporalSample s = load_pair(a.pair, model.config().flags.use_text);
  NoGradGuard no_grad;
  auto tr = model.trace(single_batch(s));
  const Heatmap h = make_heatmap(tr.finest_pixel_gate->value(), s.height(), s.width());
  if (auto parent = fs::path(a.out).parent_path(); !parent.empty()) ensure_dir(parent);
  write_png(a.out, h.image);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

struct AblateArgs {
  std::string config, data, test_data, out;
  std::vector<std::string> overrides, variants;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

int run_ablate(const AblateArgs& a) {
  TrainConfig base = build_config(a.config, a.overrides, std::nullopt);
  std::vector<Variant> variants;
  if (a.variants.empty()) variants = standard_variants();
  for (const auto& label : a.variants) {
    try {
      variants.push_back(variant_by_label(label));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  auto train_data = load_dataset(a.data);
  auto test_data = a.test_data.empty() ? train_data : load_dataset(a.test_data);
  ensure_dir(a.out);
  auto rows = run_ablation<float>(base, variants, a.seeds, train_data, test_data, &std::cerr);
  const std::string tsv = ablation_tsv(rows);
  write_text(fs::path(a.out) / "ablation.tsv", tsv);
  std::cout << tsv;
  for (const auto& r : rows)
    if (!r.error.empty()) return 1;
  return 0;
}

struct GradcheckArgs {
  std::string module, dims;
  double epsilon = 1e-5;
  std::optional<std::uint64_t> seed;
};

std::vector<int> parse_dims(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size() || v <= 0)
      throw UsageError("--dims expects positive integers joined by 'x', got '" + text + "'");
    out.push_back(v);
  }
  return out;
}

int run_gradcheck(const GradcheckArgs& a) {
  const auto& known = gradcheck_modules();
  if (std::find(known.begin(), known.end(), a.module) == known.end()) {
    std::string list;
    for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
    throw UsageError("unknown module '" + a.module + "' (expected one of " + list + ")");
  }
  GradcheckOptions opt;
  opt.epsilon = a.epsilon;
  opt.seed = resolve_seed(a.seed, 1);
  ModelConfig model_config;
  if (a.module == "model") {
    opt.height = opt.width = 32;
    model_config.widths = {4, 8, 8, 16};
    model_config.embed_dim = 8;
  }
  if (!a.dims.empty()) {
    auto d = parse_dims(a.dims);
    if (a.module == "model") {
      if (d.size() != 2) throw UsageError("model --dims is HxW");
      opt.height = d[0];
      opt.width = d[1];
    } else {
      if (d.size() != 3) throw UsageError("module --dims is CxHxW");
      opt.channels = d[0];
      opt.height = d[1];
      opt.width = d[2];
    }
  }
  GradcheckReport r;
  try {
    r = gradcheck(a.module, opt, model_config);
  } catch (const ShapeError& e) {
    throw UsageError(std::string("dims rejected: ") + e.what());
  }
  std::printf("%s\tmax_rel_error=%.3e\tthreshold=%.0e\tchecked=%zu\tworst=%s\t%s\n", r.module.c_str(),
              r.max_rel_error, r.threshold, r.checked, r.worst_entry.c_str(), r.passed() ? "PASS" : "FAIL");
  return r.passed() ? 0 : 1;
}

struct CaptionArgs {
  std::string endpoint, data, prompt{kDefaultCaptionPrompt};
  int concurrency = 4;
  int retries = 3;
};

int run_caption(const CaptionArgs& a) {
  CaptionerConfig cfg;
  cfg.endpoint = a.endpoint;
  cfg.prompt = a.prompt;
  cfg.max_concurrency = a.concurrency;
  cfg.retries = a.retries;
  Captioner captioner(cfg);
  const fs::path root(a.data);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root / "A"))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  std::vector<std::string> paths;
  for (const auto& id : ids) {
    paths.push_back((root / "A" / (id + ".png")).string());
    paths.push_back((root / "B" / (id + ".png")).string());
  }
  const auto texts = captioner.describe_files(paths);
  CaptionMap caps;
  for (std::size_t i = 0; i < ids.size(); ++i) caps.emplace(ids[i], CaptionPair{ids[i], texts[2 * i], texts[2 * i + 1]});
  save_captions((root / "captions.jsonl").string(), caps);
  std::cout << "captioned " << ids.size() << " pairs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal bitemporal change detection"};
  app.name("mmchange");
  app.require_subcommand(1, 1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic bitemporal dataset");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed (default: MMCHANGE_SEED, then 0)");
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();
  gen_cmd->add_option("--size", gen.size, "Side length in pixels, a multiple of 32")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Training dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--eval-data", tr.eval_data, "Dataset scored on EVAL lines")->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "Output directory (checkpoint.bin, train.log)")->required();
  train_cmd->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--seed", tr.seed, "Seed (default: config, then MMCHANGE_SEED, then 0)");
  train_cmd->add_flag("--no-ifr", tr.ablation.no_ifr, "Replace IFR by its fallback");
  train_cmd->add_flag("--no-tde", tr.ablation.no_tde, "Replace TDE by its fallback");
  train_cmd->add_flag("--no-itff", tr.ablation.no_itff, "Replace ITFF by its fallback");
  train_cmd->add_flag("--image-only", tr.ablation.image_only, "Image branch only");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint.bin when present");
  train_cmd->add_option("--stop-at", tr.stop_at, "Pause after this step (checkpoint written)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", ev.out, "Report directory (default: checkpoint directory)");
  eval_cmd->add_option("--noise", ev.noise, "Gaussian noise sigma")->capture_default_str();
  eval_cmd->add_option("--brightness", ev.brightness, "Brightness offset")->capture_default_str();
  eval_cmd->add_option("--contrast", ev.contrast, "Contrast factor")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "Noise seed (default: MMCHANGE_SEED, then 0)");
  eval_cmd->add_option("--batch-size", ev.batch, "Evaluation batch size")->capture_default_str();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict a change mask for one image pair");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  add_pair_options(predict_cmd, pr.pair);
  predict_cmd->add_option("--label", pr.label, "Ground-truth mask; also writes overlay.png")->check(CLI::ExistingFile);
  predict_cmd->add_option("--out", pr.out, "Output directory (mask.png, overlay.png)")->required();

  HeatmapArgs hm;
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Export the finest ITFF pixel gate as a heatmap");
  heatmap_cmd->add_option("--ckpt", hm.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  add_pair_options(heatmap_cmd, hm.pair);
  heatmap_cmd->add_option("--out", hm.out, "Output PNG")->required();

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every variant and tabulate held-out metrics");
  ablate_cmd->add_option("--config", ab.config, "key = value config file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--data", ab.data, "Training dataset")->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--test-data", ab.test_data, "Held-out dataset (default: --data)")
      ->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--out", ab.out, "Output directory (ablation.tsv)")->required();
  ablate_cmd->add_option("--set", ab.overrides, "Config override key=value (repeatable)");
  ablate_cmd->add_option("--seeds", ab.seeds, "Training seeds")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--variants", ab.variants, "Variant labels (default: full, no-ifr, no-tde, no-itff, "
                                                    "image-only)")
      ->delimiter(',');

  GradcheckArgs gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck_cmd->add_option("--module", gc.module, "primitives, tde, ifr, itff, fallback or model")->required();
  gradcheck_cmd->add_option("--dims", gc.dims, "CxHxW for modules (default 4x4x4), HxW for the model (default 32x32)");
  gradcheck_cmd->add_option("--epsilon", gc.epsilon, "Central-difference step")->capture_default_str();
  gradcheck_cmd->add_option("--seed", gc.seed, "Seed (default: MMCHANGE_SEED, then 1)");

  CaptionArgs ca;
  auto* caption_cmd = app.add_subcommand("caption", "Caption a dataset through a describe service");
  caption_cmd->add_option("--endpoint", ca.endpoint, "Service base URL")->required();
  caption_cmd->add_option("--data", ca.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  caption_cmd->add_option("--prompt", ca.prompt, "Prompt")->capture_default_str();
  caption_cmd->add_option("--concurrency", ca.concurrency, "Requests in flight")->capture_default_str();
  caption_cmd->add_option("--retries", ca.retries, "Retries per image on network errors")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*predict_cmd) return run_predict(pr);
    if (*heatmap_cmd) return run_heatmap(hm);
    if (*ablate_cmd) return run_ablate(ab);
    if (*gradcheck_cmd) return run_gradcheck(gc);
    if (*caption_cmd) return run_caption(ca);
  } catch (const UsageError& e) {
    std::cerr << "mmchange: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "mmchange: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mmchange: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

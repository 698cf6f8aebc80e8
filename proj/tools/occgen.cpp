// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "occgen/config.hpp"
#include "occgen/error.hpp"
#include "occgen/pipeline.hpp"

namespace {

using namespace occgen;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--set", c.overrides, "extra key=value overrides");
}

struct SamplerFlags {
  std::optional<int> steps;
  std::optional<std::string> strategy;
  std::optional<int> td;
};

void add_sampler(CLI::App* app, SamplerFlags& s, std::vector<int>* eval_steps = nullptr) {
  if (eval_steps) {
    app->add_option("--steps", *eval_steps, "sampling step counts to evaluate")->delimiter(',');
  } else {
    app->add_option("--steps", s.steps, "sampling steps");
  }
  app->add_option("--strategy", s.strategy, "ddim or ddpm")->check(CLI::IsMember({"ddim", "ddpm"}));
  app->add_option("--td", s.td, "asymmetric time offset");
}

Config resolve(const Common& c, const SamplerFlags& s = {}) {
  Config config = c.config.empty() ? Config{} : load_config(c.config);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) config.seed = *c.seed;
  if (!c.out.empty()) config.out_dir = c.out;
  if (s.steps) config.sampler.steps = *s.steps;
  if (s.strategy) config.sampler.strategy = parse_sampler_strategy(*s.strategy);
  if (s.td) config.sampler.td = *s.td;
  config.sync_derived();
  config.validate();
  return config;
}

void print_grids(const InferReport& r) {
  for (std::size_t k = 0; k < r.result.grids.size(); ++k) {
    std::printf("step %zu  t=(%d,%d)  occupied %zu", k + 1, r.result.times[k].first, r.result.times[k].second,
                r.result.grids[k].occupied_count());
    if (k > 0) std::printf("  changed %zu", r.result.uncertainty[k - 1].count);
    std::printf("\n");
  }
  std::printf("encoder passes %zu (%.3f s)  decoder passes %zu (%.3f s)\n", r.trace.encoder_passes,
              r.trace.encoder_seconds, r.trace.decoder_passes, r.trace.decoder_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occgen: diffusion-based 3D semantic occupancy on synthetic scenes"};
  app.require_subcommand(1);

  Common gen_c;
  std::size_t count = 200;
  auto* gen = app.add_subcommand("gen-data", "generate synthetic scenes and a manifest");
  add_common(gen, gen_c);
  gen->add_option("--count", count, "number of scenes")->check(CLI::PositiveNumber);

  Common train_c;
  std::string train_data;
  std::string resume;
  std::size_t stop_after = 0;
  auto* tr = app.add_subcommand("train", "train on a generated dataset");
  add_common(tr, train_c);
  tr->add_option("--data", train_data, "dataset directory (default: paths.data)");
  tr->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  tr->add_option("--stop-after", stop_after, "stop at this global step");

  Common infer_c;
  SamplerFlags infer_s;
  std::string infer_ckpt, infer_scene;
  auto* inf = app.add_subcommand("infer", "progressive inference on one scene");
  add_common(inf, infer_c);
  add_sampler(inf, infer_s);
  inf->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--scene", infer_scene, "scene file")->required()->check(CLI::ExistingFile);

  Common eval_c;
  SamplerFlags eval_s;
  std::vector<int> eval_steps{1, 3};
  std::string eval_ckpt, eval_data;
  auto* ev = app.add_subcommand("eval", "IoU / mIoU over a dataset per step count");
  add_common(ev, eval_c);
  add_sampler(ev, eval_s, &eval_steps);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "dataset directory (default: paths.data)");

  Common grad_c;
  double perturb = 1.0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gc, grad_c);
  gc->add_option("--analytic-scale", perturb, "scale analytic gradients (fault injection)");

  std::string export_grid_path, export_format = "points", export_out;
  auto* ex = app.add_subcommand("export", "export an occupancy grid for visualization");
  ex->add_option("--grid", export_grid_path, "grid or scene file")->required()->check(CLI::ExistingFile);
  ex->add_option("--format", export_format, "points or obj");
  ex->add_option("--out", export_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const Config config = resolve(gen_c);
      const auto entries = cmd_gen_data(config, config.out_dir, count);
      std::printf("wrote %zu scenes to %s\n", entries.size(), config.out_dir.c_str());
    } else if (*tr) {
      const Config config = resolve(train_c);
      TrainOptions opts;
      if (!resume.empty()) opts.resume = resume;
      opts.stop_after = stop_after;
      opts.log = [](const std::string& line) { std::printf("%s\n", line.c_str()); };
      const TrainResult r = cmd_train(config, train_data.empty() ? config.data_dir : train_data, config.out_dir, opts);
      std::printf("trained %zu/%zu steps in %.1f s, loss ema %.5f\n", static_cast<std::size_t>(r.checkpoint.step),
                  r.total_steps, r.seconds, r.checkpoint.loss_ema);
    } else if (*inf) {
      const Config config = resolve(infer_c, infer_s);
      print_grids(cmd_infer(config, infer_ckpt, infer_scene, config.sampler, config.out_dir));
    } else if (*ev) {
      const Config config = resolve(eval_c, eval_s);
      const EvalReport r =
          cmd_eval(config, eval_ckpt, eval_data.empty() ? config.data_dir : eval_data, eval_steps, config.out_dir);
      std::cout << format_eval_summary(r);
    } else if (*gc) {
      resolve(grad_c);
      GradCheckOptions opts;
      opts.analytic_scale = perturb;
      bool ok = true;
      for (const GradCheckResult& r : cmd_gradcheck(opts)) {
        std::printf("%-20s rel err %.3e  tol %.0e  %s\n", r.name.c_str(), r.error, r.tolerance,
                    r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      return ok ? kOk : kNumerical;
    } else if (*ex) {
      cmd_export(export_grid_path, parse_export_format(export_format), export_out);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kOk;
}

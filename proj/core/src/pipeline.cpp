// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "occgen/error.hpp"
#include "occgen/ops.hpp"
#include "occgen/scene_io.hpp"

namespace occgen {

namespace {

enum Stream : std::uint64_t { kShuffle = 3, kInfer = 4 };

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string num(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const path& file, const std::string& text) {
  detail::write_file(file, std::vector<char>(text.begin(), text.end()));
}

void ensure_dir(const path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string scene_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu.ocgs", i);
  return buf;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kShuffle, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void check_scene(const Config& config, const SceneSample& scene, const std::string& what) {
  if (scene.grid.geometry != config.scene.geometry || scene.grid.num_classes != config.scene.num_classes) {
    throw ShapeError(what + ": grid does not match the configured geometry and class count");
  }
  for (const CameraView& v : scene.views) {
    if (v.channels() != config.encoder.image_channels || v.num_depth_bins != config.scene.depth.count) {
      throw ShapeError(what + ": camera views do not match the configured encoder");
    }
  }
}

SceneSample grid_file(const SemanticGrid& grid) {
  SceneSample s;
  s.grid = grid;
  return s;
}

}  // namespace

std::string metrics_row(std::uint64_t step, std::size_t scene, double iou_v, double miou_v, const LossReport& loss) {
  std::ostringstream out;
  out << step << ',' << scene << ',' << num(iou_v) << ',' << num(miou_v) << ',' << num(loss.ce) << ','
      << num(loss.lovasz) << ',' << num(loss.scal_geo) << ',' << num(loss.scal_sem) << ',' << num(loss.depth) << ','
      << num(loss.total);
  return out.str();
}

// ---- data ----------------------------------------------------------------

std::vector<DatasetEntry> cmd_gen_data(const Config& config, const path& out_dir, std::size_t count) {
  if (count == 0) throw ValueError("gen-data: count must be positive");
  ensure_dir(out_dir);
  std::vector<DatasetEntry> entries;
  nlohmann::json manifest;
  manifest["scenes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = config.seed + i;
    const std::string file = scene_file_name(i);
    write_scene(out_dir / file, gen_scene(seed, config.scene));
    entries.push_back({file, seed});
    manifest["scenes"].push_back({{"file", file}, {"seed", seed}});
  }
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return entries;
}

Dataset load_dataset(const Config& config, const path& dir) {
  const std::vector<char> bytes = detail::read_file(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::Invalid, "manifest.json: " + std::string(e.what()));
  }
  if (!manifest.contains("scenes") || !manifest["scenes"].is_array()) {
    throw FormatError(FormatError::Kind::Invalid, "manifest.json: missing scene list");
  }
  Dataset data;
  for (const auto& item : manifest["scenes"]) {
    DatasetEntry e;
    try {
      e.file = item.at("file").get<std::string>();
      e.seed = item.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(FormatError::Kind::Invalid, "manifest.json: " + std::string(ex.what()));
    }
    SceneSample scene = read_scene(dir / e.file);
    scene.seed = e.seed;
    check_scene(config, scene, e.file);
    data.entries.push_back(std::move(e));
    data.scenes.push_back(std::move(scene));
  }
  if (data.scenes.empty()) throw ValueError("dataset " + dir.string() + " is empty");
  return data;
}

// ---- training ------------------------------------------------------------

std::size_t total_train_steps(const Config& config, std::size_t scenes) {
  const std::size_t per_epoch = (scenes + config.train.batch - 1) / config.train.batch;
  return per_epoch * config.train.epochs;
}

TrainResult train(const Config& config, const Dataset& data, const path& out_dir, const TrainOptions& options) {
  const auto start = Clock::now();
  ensure_dir(out_dir);
  const std::size_t n = data.scenes.size();
  if (n == 0) throw ValueError("train: empty dataset");
  const std::size_t batch = config.train.batch;
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total = total_train_steps(config, n);
  const std::size_t warmup = std::min(config.train.warmup, total);
  const std::string config_text = to_text(config);
  const NoiseSchedule schedule = make_schedule(config.schedule, config.diffusion_steps);

  TrainResult result;
  result.total_steps = total;
  Checkpoint& ck = result.checkpoint;
  if (options.resume) {
    ck = load_checkpoint(*options.resume);
    if (ck.config_text != config_text) throw ConfigError("resume: checkpoint was trained with a different config");
    if (ck.step > total) throw ValueError("resume: checkpoint step beyond the training schedule");
  } else {
    ck.config_text = config_text;
    ck.params = init_model(config);
  }
  ck.optimizer.config.weight_decay = config.train.weight_decay;
  ck.optimizer.step = ck.step;

  const path csv_path = out_dir / "train_metrics.csv";
  std::ofstream csv(csv_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  if (!options.resume) csv << kMetricsHeader << '\n';

  const std::size_t end = options.stop_after ? std::min(options.stop_after, total) : total;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  while (ck.step < end) {
    const std::size_t step = ck.step;
    const std::size_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(config.seed, epoch, n);
      cached_epoch = epoch;
    }
    const std::size_t first = (step % per_epoch) * batch;
    const std::size_t last = std::min(first + batch, n);

    GradMap grads;
    double batch_loss = 0.0;
    for (std::size_t i = first; i < last; ++i) {
      const std::size_t scene_idx = order[i];
      const SceneSample& scene = data.scenes[scene_idx];
      SampleResult r = training_sample(ck.params, scene, config, schedule, draw_training_sample(config, step, i - first));
      if (grads.empty()) {
        grads = std::move(r.grads);
      } else {
        for (auto& [name, g] : grads) g.add_(r.grads.at(name));
      }
      TrainRecord rec{step, scene_idx, iou(r.prediction, scene.grid), miou(r.prediction, scene.grid), r.loss};
      csv << metrics_row(rec.step, rec.scene, rec.iou, rec.miou, rec.loss) << '\n';
      batch_loss += r.loss.total;
      result.records.push_back(rec);
    }
    const double count = static_cast<double>(last - first);
    for (auto& [_, g] : grads) g.scale_(1.0 / count);
    if (config.train.clip > 0.0) clip_grad_norm(grads, config.train.clip);
    const double lr = config.train.lr * lr_schedule(step + 1, total, warmup);
    adamw_step(ck.params, grads, ck.optimizer, lr);
    batch_loss /= count;
    ck.loss_ema = step == 0 ? batch_loss : 0.9 * ck.loss_ema + 0.1 * batch_loss;
    ck.step = step + 1;
    if (options.log && (ck.step % 50 == 0 || ck.step == end)) {
      options.log("step " + std::to_string(ck.step) + "/" + std::to_string(total) + " loss " + num(batch_loss) +
                  " ema " + num(ck.loss_ema));
    }
    if (config.train.checkpoint_every && ck.step % config.train.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("checkpoint_" + std::to_string(ck.step) + ".ocgc"), ck);
    }
  }
  csv.flush();
  if (!csv) throw IoError("write failed for " + csv_path.string());
  save_checkpoint(out_dir / "checkpoint.ocgc", ck);
  result.seconds = seconds_since(start);
  return result;
}

TrainResult cmd_train(const Config& config, const path& data_dir, const path& out_dir, const TrainOptions& options) {
  return train(config, load_dataset(config, data_dir), out_dir, options);
}

// ---- inference -----------------------------------------------------------

Denoiser oracle_denoiser(const SceneSample& scene, double scale) {
  const SemanticGrid grid = scene.grid;
  return [grid, scale](const AnalogMap&, int) {
    const std::size_t vol = grid.labels.size();
    Tensor logits(Shape{grid.num_classes, grid.geometry.dims.x, grid.geometry.dims.y, grid.geometry.dims.z}, -50.0);
    for (std::size_t v = 0; v < vol; ++v) logits[grid.labels[v] * vol + v] = 50.0;
    return std::pair<Tensor, AnalogMap>{std::move(logits), encode_analog(grid, scale)};
  };
}

InferenceResult infer_scene(const ParamSet& params, const Config& config, const SceneSample& scene,
                            const SamplerConfig& sampler, std::uint64_t scene_index, InferenceTrace& trace,
                            const DenoiserFactory& override_denoiser) {
  check_scene(config, scene, "inference scene");
  const NoiseSchedule schedule = make_schedule(config.schedule, config.diffusion_steps);
  sampler.validate(schedule.steps);

  auto start = Clock::now();
  const EncodedScene encoded = encode_scene_features(params, scene, config);
  trace.encoder_passes += 1;
  trace.encoder_seconds += seconds_since(start);

  const Denoiser inner = override_denoiser ? override_denoiser(scene)
                                           : Denoiser([&](const AnalogMap& state, int t) {
                                               return denoise(params, encoded, state, t, config);
                                             });
  const Denoiser timed = [&](const AnalogMap& state, int t) {
    const auto s = Clock::now();
    auto out = inner(state, t);
    trace.decoder_passes += 1;
    trace.decoder_seconds += seconds_since(s);
    return out;
  };
  Rng rng(derive_seed(config.seed, kInfer, scene_index));
  return progressive_infer(timed, scene.grid.geometry, config.scene.num_classes, config.scale, sampler, schedule, rng);
}

InferReport cmd_infer(const Config& config, const path& checkpoint, const path& scene_path, const SamplerConfig& sampler,
                      const path& out_dir) {
  try {
    sampler.validate(config.diffusion_steps);
  } catch (const ValueError& e) {
    throw ConfigError(std::string("infer: ") + e.what());
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  const SceneSample scene = read_scene(scene_path);
  InferReport report;
  report.result = infer_scene(ck.params, config, scene, sampler, 0, report.trace);
  ensure_dir(out_dir);

  nlohmann::json summary;
  summary["strategy"] = to_string(sampler.strategy);
  summary["steps"] = sampler.steps;
  summary["td"] = sampler.td;
  summary["times"] = nlohmann::json::array();
  for (const auto& [a, b] : report.result.times) summary["times"].push_back({a, b});
  summary["grids"] = nlohmann::json::array();
  for (std::size_t k = 0; k < report.result.grids.size(); ++k) {
    const std::string file = "step_" + std::to_string(k + 1) + ".ocgs";
    write_scene(out_dir / file, grid_file(report.result.grids[k]));
    summary["grids"].push_back({{"file", file},
                                {"occupied", report.result.grids[k].occupied_count()},
                                {"iou", iou(report.result.grids[k], scene.grid)},
                                {"miou", miou(report.result.grids[k], scene.grid)}});
  }
  summary["uncertainty"] = nlohmann::json::array();
  for (std::size_t k = 0; k < report.result.uncertainty.size(); ++k) {
    const UncertaintyMap& u = report.result.uncertainty[k];
    SemanticGrid map(scene.grid.geometry, 2);
    map.labels = u.changed;
    const std::string file = "uncertainty_" + std::to_string(k + 2) + ".ocgs";
    write_scene(out_dir / file, grid_file(map));
    summary["uncertainty"].push_back({{"file", file}, {"changed", u.count}});
  }
  write_text(out_dir / "infer_summary.json", summary.dump(2) + "\n");

  nlohmann::json timing;
  timing["encoder_passes"] = report.trace.encoder_passes;
  timing["decoder_passes"] = report.trace.decoder_passes;
  timing["encoder_seconds"] = report.trace.encoder_seconds;
  timing["decoder_seconds"] = report.trace.decoder_seconds;
  write_text(out_dir / "infer_timing.json", timing.dump(2) + "\n");
  return report;
}

// ---- evaluation ----------------------------------------------------------

EvalReport evaluate(const ParamSet& params, const Config& config, const Dataset& data, const std::vector<int>& steps,
                    const DenoiserFactory& override_denoiser) {
  if (data.scenes.empty()) throw ValueError("eval: empty dataset");
  if (steps.empty()) throw ValueError("eval: no step counts requested");
  const std::size_t C = config.scene.num_classes;
  EvalReport report;
  for (int k : steps) {
    SamplerConfig sampler = config.sampler;
    sampler.steps = k;
    EvalSummary summary{k, 0.0, 0.0, std::vector<double>(C - 1, 0.0)};
    std::vector<std::size_t> class_count(C - 1, 0);
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
      const SceneSample& scene = data.scenes[i];
      InferenceTrace trace;
      const InferenceResult res = infer_scene(params, config, scene, sampler, i, trace, override_denoiser);
      const SemanticGrid& pred = res.grids.back();
      EvalRow row;
      row.steps = k;
      row.scene = i;
      row.iou = iou(pred, scene.grid);
      row.miou = miou(pred, scene.grid);
      const ConfusionStats stats = confusion(pred, scene.grid);
      for (std::size_t c = 1; c < C; ++c) {
        const double v = class_iou(stats, c);
        row.class_iou.push_back(v);
        if (v >= 0.0) {
          summary.class_iou[c - 1] += v;
          ++class_count[c - 1];
        }
      }
      Tape tape;
      const Var logits = tape.constant(res.last_logits);
      std::vector<Var> depth;
      std::vector<std::vector<std::uint16_t>> bins;
      const EncodedScene encoded = encode_scene_features(params, scene, config);
      for (std::size_t v = 0; v < scene.views.size(); ++v) {
        depth.push_back(tape.constant(encoded.depth_logits[v]));
        bins.push_back(scene.views[v].depth_bins);
      }
      row.loss = total_loss(logits, scene.grid, depth, bins, config.loss).report();
      summary.mean_iou += row.iou;
      summary.mean_miou += row.miou;
      report.rows.push_back(std::move(row));
    }
    const auto n = static_cast<double>(data.scenes.size());
    summary.mean_iou /= n;
    summary.mean_miou /= n;
    for (std::size_t c = 0; c + 1 < C; ++c) {
      summary.class_iou[c] = class_count[c] ? summary.class_iou[c] / static_cast<double>(class_count[c]) : -1.0;
    }
    report.summary.push_back(std::move(summary));
  }
  return report;
}

std::string format_eval_summary(const EvalReport& report) {
  std::ostringstream out;
  char buf[128];
  out << "steps   mean IoU   mean mIoU   per-class IoU\n";
  for (const EvalSummary& s : report.summary) {
    std::snprintf(buf, sizeof buf, "%5d   %8.4f   %9.4f  ", s.steps, s.mean_iou, s.mean_miou);
    out << buf;
    for (double v : s.class_iou) {
      if (v < 0.0) {
        out << "      -";
      } else {
        std::snprintf(buf, sizeof buf, " %6.3f", v);
        out << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

void write_eval_report(const EvalReport& report, const Config& config, const path& out_dir) {
  ensure_dir(out_dir);
  std::ostringstream rows;
  rows << kMetricsHeader << '\n';
  for (const EvalRow& r : report.rows) rows << metrics_row(static_cast<std::uint64_t>(r.steps), r.scene, r.iou, r.miou, r.loss) << '\n';
  write_text(out_dir / "eval_metrics.csv", rows.str());

  std::ostringstream sum;
  sum << "steps,mean_iou,mean_miou";
  for (std::size_t c = 1; c < config.scene.num_classes; ++c) sum << ",iou_class_" << c;
  sum << '\n';
  for (const EvalSummary& s : report.summary) {
    sum << s.steps << ',' << num(s.mean_iou) << ',' << num(s.mean_miou);
    for (double v : s.class_iou) sum << ',' << (v < 0.0 ? std::string() : num(v));
    sum << '\n';
  }
  write_text(out_dir / "eval_summary.csv", sum.str());
}

EvalReport cmd_eval(const Config& config, const path& checkpoint, const path& data_dir, const std::vector<int>& steps,
                    const path& out_dir) {
  for (int k : steps) {
    SamplerConfig s = config.sampler;
    s.steps = k;
    try {
      s.validate(config.diffusion_steps);
    } catch (const ValueError& e) {
      throw ConfigError(std::string("eval: ") + e.what());
    }
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  const EvalReport report = evaluate(ck.params, config, load_dataset(config, data_dir), steps);
  write_eval_report(report, config, out_dir);
  return report;
}

// ---- gradient checks -----------------------------------------------------

std::vector<GradCheckResult> cmd_gradcheck(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  for (const GradCheckCase& c : gradcheck_cases()) {
    const double err = c.run(options);
    results.push_back({c.name, err, c.tolerance, err < c.tolerance});
  }
  return results;
}

// ---- export --------------------------------------------------------------

ExportFormat parse_export_format(std::string_view name) {
  if (name == "points" || name == "xyz") return ExportFormat::Points;
  if (name == "obj") return ExportFormat::Obj;
  throw ConfigError("unknown export format '" + std::string(name) + "'");
}

std::string export_grid(const SemanticGrid& grid, ExportFormat format) {
  const GridDims& d = grid.geometry.dims;
  std::ostringstream out;
  if (format == ExportFormat::Points) {
    out << "# x y z class\n";
    for (std::size_t x = 0; x < d.x; ++x)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t z = 0; z < d.z; ++z)
          if (const int c = grid.at(x, y, z); c > 0) out << x << ' ' << y << ' ' << z << ' ' << c << '\n';
    return out.str();
  }
  // Cube soup: 8 vertices and 12 triangles per occupied voxel, in voxel units.
  static constexpr int kFaces[12][3] = {{1, 3, 2}, {1, 4, 3}, {5, 6, 7}, {5, 7, 8}, {1, 2, 6}, {1, 6, 5},
                                        {4, 8, 7}, {4, 7, 3}, {1, 5, 8}, {1, 8, 4}, {2, 3, 7}, {2, 7, 6}};
  out << "# occgen voxel export\n";
  std::size_t base = 0;
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t z = 0; z < d.z; ++z) {
        const int c = grid.at(x, y, z);
        if (c == 0) continue;
        out << "o voxel_" << x << '_' << y << '_' << z << "_class_" << c << '\n';
        for (int zz = 0; zz < 2; ++zz) {
          out << "v " << x << ' ' << y << ' ' << z + zz << '\n';
          out << "v " << x + 1 << ' ' << y << ' ' << z + zz << '\n';
          out << "v " << x + 1 << ' ' << y + 1 << ' ' << z + zz << '\n';
          out << "v " << x << ' ' << y + 1 << ' ' << z + zz << '\n';
        }
        for (const auto& f : kFaces) out << "f " << base + f[0] << ' ' << base + f[1] << ' ' << base + f[2] << '\n';
        base += 8;
      }
  return out.str();
}

void cmd_export(const path& grid_path, ExportFormat format, const path& out_file) {
  write_text(out_file, export_grid(read_scene(grid_path).grid, format));
}

}  // namespace occgen

// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "occgen/checkpoint.hpp"
#include "occgen/config.hpp"
#include "occgen/gradcheck.hpp"
#include "occgen/model.hpp"
#include "occgen/refine.hpp"

// End-to-end commands. Each is a pure function of its config, inputs and seed.
namespace occgen {

using std::filesystem::path;

// ---- data ----------------------------------------------------------------

struct DatasetEntry {
  std::string file;
  std::uint64_t seed = 0;
};

/// Writes `count` scenes with seeds config.seed .. config.seed + count - 1 and a manifest.json.
std::vector<DatasetEntry> cmd_gen_data(const Config& config, const path& out_dir, std::size_t count);

struct Dataset {
  std::vector<DatasetEntry> entries;
  std::vector<SceneSample> scenes;
};

/// Reads manifest.json and every listed scene; throws ValueError on an empty set and
/// ShapeError if a scene disagrees with the configured grid.
Dataset load_dataset(const Config& config, const path& dir);

// ---- training ------------------------------------------------------------

struct TrainOptions {
  std::optional<path> resume;  // checkpoint to continue from
  std::size_t stop_after = 0;  // stop once this global step is reached (0 = full schedule)
  std::function<void(const std::string&)> log;
};

struct TrainRecord {
  std::uint64_t step = 0;
  std::size_t scene = 0;
  double iou = 0.0;
  double miou = 0.0;
  LossReport loss;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainRecord> records;  // one per sample, in order
  std::size_t total_steps = 0;
  double seconds = 0.0;
};

/// Steps per epoch times epochs for a dataset of `scenes` scenes.
std::size_t total_train_steps(const Config& config, std::size_t scenes);

/// AdamW training over the dataset. Writes out_dir/checkpoint.ocgc (plus periodic
/// checkpoint_<step>.ocgc) and out_dir/train_metrics.csv.
TrainResult train(const Config& config, const Dataset& data, const path& out_dir, const TrainOptions& options = {});

TrainResult cmd_train(const Config& config, const path& data_dir, const path& out_dir, const TrainOptions& options = {});

// ---- inference -----------------------------------------------------------

struct InferenceTrace {
  std::size_t encoder_passes = 0;
  std::size_t decoder_passes = 0;
  double encoder_seconds = 0.0;
  double decoder_seconds = 0.0;
};

/// Replaces the learned decoder, e.g. with a ground-truth oracle.
using DenoiserFactory = std::function<Denoiser(const SceneSample&)>;

/// Denoiser that returns saturated ground-truth logits and the exact analog encoding.
Denoiser oracle_denoiser(const SceneSample& scene, double scale);

/// Encoder once, then progressive sampling. Noise comes from (config.seed, scene_index).
InferenceResult infer_scene(const ParamSet& params, const Config& config, const SceneSample& scene,
                            const SamplerConfig& sampler, std::uint64_t scene_index, InferenceTrace& trace,
                            const DenoiserFactory& override_denoiser = {});

struct InferReport {
  InferenceResult result;
  InferenceTrace trace;
};

/// Loads the checkpoint and scene, runs inference and writes step_<k>.ocgs,
/// uncertainty_<k>.ocgs and infer_summary.json to out_dir.
InferReport cmd_infer(const Config& config, const path& checkpoint, const path& scene, const SamplerConfig& sampler,
                      const path& out_dir);

// ---- evaluation ----------------------------------------------------------

struct EvalRow {
  int steps = 0;
  std::size_t scene = 0;
  double iou = 0.0;
  double miou = 0.0;
  std::vector<double> class_iou;  // classes 1..C-1; negative when absent
  LossReport loss;
};

struct EvalSummary {
  int steps = 0;
  double mean_iou = 0.0;
  double mean_miou = 0.0;
  std::vector<double> class_iou;  // mean over scenes where the class is present; -1 if never
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalSummary> summary;  // one per requested step count
};

EvalReport evaluate(const ParamSet& params, const Config& config, const Dataset& data, const std::vector<int>& steps,
                    const DenoiserFactory& override_denoiser = {});

/// Human-readable table of the summary.
std::string format_eval_summary(const EvalReport& report);

/// Writes eval_metrics.csv and eval_summary.csv to out_dir.
void write_eval_report(const EvalReport& report, const Config& config, const path& out_dir);

EvalReport cmd_eval(const Config& config, const path& checkpoint, const path& data_dir, const std::vector<int>& steps,
                    const path& out_dir);

// ---- gradient checks -----------------------------------------------------

struct GradCheckCase {
  std::string name;
  double tolerance = 1e-4;
  std::function<double(const GradCheckOptions&)> run;  // returns the relative error
};

/// Every registered finite-difference check at reduced sizes.
std::vector<GradCheckCase> gradcheck_cases();

struct GradCheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

std::vector<GradCheckResult> cmd_gradcheck(const GradCheckOptions& options = {});

// ---- export --------------------------------------------------------------

enum class ExportFormat { Points, Obj };

ExportFormat parse_export_format(std::string_view name);

/// Occupied voxels as "x y z class" lines or an OBJ cube soup, in x, y, z order.
std::string export_grid(const SemanticGrid& grid, ExportFormat format);

void cmd_export(const path& grid_file, ExportFormat format, const path& out_file);

// ---- metrics CSV ---------------------------------------------------------

inline constexpr const char* kMetricsHeader = "step,scene,iou,miou,ce,lovasz,scal_geo,scal_sem,depth,total";

std::string metrics_row(std::uint64_t step, std::size_t scene, double iou, double miou, const LossReport& loss);

}  // namespace occgen

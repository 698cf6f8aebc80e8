// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "occgen/error.hpp"

namespace occgen {

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

struct Entry {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, std::string_view key, std::string_view)> set;
};

template <typename T, typename Access>
Entry numeric(Access access) {
  return {[access](const Config& c) { return format_number<T>(access(const_cast<Config&>(c))); },
          [access](Config& c, std::string_view key, std::string_view v) { access(c) = parse_number<T>(key, v); }};
}

#define OCCGEN_FIELD(type, expr) numeric<type>([](Config& c) -> type& { return c.expr; })

const std::map<std::string, Entry>& table() {
  static const std::map<std::string, Entry> entries = [] {
    std::map<std::string, Entry> m;
    m["grid.x"] = OCCGEN_FIELD(std::uint16_t, scene.geometry.dims.x);
    m["grid.y"] = OCCGEN_FIELD(std::uint16_t, scene.geometry.dims.y);
    m["grid.z"] = OCCGEN_FIELD(std::uint16_t, scene.geometry.dims.z);
    m["grid.voxel_size"] = OCCGEN_FIELD(float, scene.geometry.voxel_size);
    m["grid.origin_x"] = OCCGEN_FIELD(float, scene.geometry.origin[0]);
    m["grid.origin_y"] = OCCGEN_FIELD(float, scene.geometry.origin[1]);
    m["grid.origin_z"] = OCCGEN_FIELD(float, scene.geometry.origin[2]);
    m["classes"] = OCCGEN_FIELD(std::uint16_t, scene.num_classes);
    m["scene.objects"] = OCCGEN_FIELD(int, scene.num_objects);
    m["scene.min_box"] = OCCGEN_FIELD(int, scene.min_box_extent);
    m["scene.max_box"] = OCCGEN_FIELD(int, scene.max_box_extent);
    m["sensor.x"] = OCCGEN_FIELD(float, scene.sensor[0]);
    m["sensor.y"] = OCCGEN_FIELD(float, scene.sensor[1]);
    m["sensor.z"] = OCCGEN_FIELD(float, scene.sensor[2]);
    m["lidar.azimuth"] = OCCGEN_FIELD(int, scene.lidar.azimuth_steps);
    m["lidar.elevation"] = OCCGEN_FIELD(int, scene.lidar.elevation_steps);
    m["lidar.elevation_min"] = OCCGEN_FIELD(double, scene.lidar.elevation_min_deg);
    m["lidar.elevation_max"] = OCCGEN_FIELD(double, scene.lidar.elevation_max_deg);
    m["lidar.dropout"] = OCCGEN_FIELD(double, scene.lidar.dropout);
    m["lidar.range"] = OCCGEN_FIELD(double, scene.lidar.max_range);
    m["camera.count"] = OCCGEN_FIELD(int, scene.cameras.count);
    m["camera.height"] = OCCGEN_FIELD(std::uint16_t, scene.cameras.height);
    m["camera.width"] = OCCGEN_FIELD(std::uint16_t, scene.cameras.width);
    m["camera.focal"] = OCCGEN_FIELD(float, scene.cameras.focal);
    m["depth.bins"] = OCCGEN_FIELD(std::uint16_t, scene.depth.count);
    m["depth.near"] = OCCGEN_FIELD(double, scene.depth.near);
    m["depth.far"] = OCCGEN_FIELD(double, scene.depth.far);
    m["depth.spacing"] = {
        [](const Config& c) { return std::string(c.scene.depth.spacing == DepthSpacing::Uniform ? "uniform" : "inverse"); },
        [](Config& c, std::string_view key, std::string_view v) {
          if (v == "uniform") {
            c.scene.depth.spacing = DepthSpacing::Uniform;
          } else if (v == "inverse") {
            c.scene.depth.spacing = DepthSpacing::Inverse;
          } else {
            throw ConfigError("config key '" + std::string(key) + "': expected uniform or inverse");
          }
        }};
    m["scale"] = OCCGEN_FIELD(double, scale);
    m["encoder.channels"] = OCCGEN_FIELD(std::size_t, encoder.feature_channels);
    m["encoder.tau"] = OCCGEN_FIELD(double, encoder.tau);
    m["encoder.dilation"] = OCCGEN_FIELD(int, encoder.dilation);
    m["decoder.width"] = OCCGEN_FIELD(std::size_t, decoder.width);
    m["decoder.layers"] = OCCGEN_FIELD(std::size_t, decoder.layers);
    m["decoder.points"] = OCCGEN_FIELD(std::size_t, decoder.points);
    m["decoder.time_dim"] = OCCGEN_FIELD(int, decoder.time.dim);
    m["decoder.time_raw_dim"] = OCCGEN_FIELD(int, decoder.time.raw_dim);
    m["decoder.offset_init"] = OCCGEN_FIELD(double, decoder.offset_init);
    m["diffusion.steps"] = OCCGEN_FIELD(int, diffusion_steps);
    m["diffusion.schedule"] = {[](const Config& c) { return to_string(c.schedule); },
                               [](Config& c, std::string_view key, std::string_view v) {
                                 try {
                                   c.schedule = parse_schedule_kind(v);
                                 } catch (const ValueError& e) {
                                   throw ConfigError("config key '" + std::string(key) + "': " + e.what());
                                 }
                               }};
    m["sampler.steps"] = OCCGEN_FIELD(int, sampler.steps);
    m["sampler.td"] = OCCGEN_FIELD(int, sampler.td);
    m["sampler.strategy"] = {[](const Config& c) { return to_string(c.sampler.strategy); },
                             [](Config& c, std::string_view key, std::string_view v) {
                               try {
                                 c.sampler.strategy = parse_sampler_strategy(v);
                               } catch (const ValueError& e) {
                                 throw ConfigError("config key '" + std::string(key) + "': " + e.what());
                               }
                             }};
    m["train.lr"] = OCCGEN_FIELD(double, train.lr);
    m["train.weight_decay"] = OCCGEN_FIELD(double, train.weight_decay);
    m["train.warmup"] = OCCGEN_FIELD(std::size_t, train.warmup);
    m["train.epochs"] = OCCGEN_FIELD(std::size_t, train.epochs);
    m["train.batch"] = OCCGEN_FIELD(std::size_t, train.batch);
    m["train.clip"] = OCCGEN_FIELD(double, train.clip);
    m["train.checkpoint_every"] = OCCGEN_FIELD(std::size_t, train.checkpoint_every);
    m["loss.ce"] = OCCGEN_FIELD(double, loss.ce);
    m["loss.lovasz"] = OCCGEN_FIELD(double, loss.lovasz);
    m["loss.scal_geo"] = OCCGEN_FIELD(double, loss.scal_geo);
    m["loss.scal_sem"] = OCCGEN_FIELD(double, loss.scal_sem);
    m["loss.depth"] = OCCGEN_FIELD(double, loss.depth);
    m["seed"] = OCCGEN_FIELD(std::uint64_t, seed);
    m["paths.data"] = {[](const Config& c) { return c.data_dir; },
                       [](Config& c, std::string_view, std::string_view v) { c.data_dir = std::string(v); }};
    m["paths.out"] = {[](const Config& c) { return c.out_dir; },
                      [](Config& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); }};
    return m;
  }();
  return entries;
}

#undef OCCGEN_FIELD

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

void Config::sync_derived() {
  encoder.image_channels = std::size_t{scene.num_classes} + 1;
  encoder.depth = scene.depth;
  decoder.num_classes = scene.num_classes;
  decoder.feature_channels = encoder.feature_channels;
}

void Config::validate() const {
  try {
    scene.geometry.validate();
    if (scene.num_classes < 2 || scene.num_classes > 255) throw ConfigError("classes must be in [2, 255]");
    if (scene.num_objects < 0) throw ConfigError("scene.objects must be non-negative");
    if (scene.min_box_extent < 1 || scene.max_box_extent < scene.min_box_extent) throw ConfigError("invalid box extents");
    if (scene.cameras.count < 1 || scene.cameras.count > 4) throw ConfigError("camera.count must be in [1, 4]");
    if (scene.cameras.height == 0 || scene.cameras.width == 0) throw ConfigError("camera image must be non-empty");
    if (scene.cameras.focal == 0.f) throw ConfigError("camera.focal must be nonzero");
    if (scene.lidar.azimuth_steps < 1 || scene.lidar.elevation_steps < 1) throw ConfigError("lidar ray counts must be positive");
    if (!(scene.lidar.dropout >= 0.0 && scene.lidar.dropout < 1.0)) throw ConfigError("lidar.dropout must be in [0, 1)");
    if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    encoder.validate();
    decoder.validate();
    if (decoder.time.raw_dim < 4 || decoder.time.raw_dim % 2 || decoder.time.dim < 1) {
      throw ConfigError("decoder.time_raw_dim must be even and >= 4, decoder.time_dim positive");
    }
    if (diffusion_steps < 2) throw ConfigError("diffusion.steps must be >= 2");
    sampler.validate(diffusion_steps);
    if (!(train.lr > 0.0) || train.weight_decay < 0.0 || train.batch < 1 || train.epochs < 1 || train.clip < 0.0) {
      throw ConfigError("invalid training hyperparameters");
    }
    if (encoder.image_channels != std::size_t{scene.num_classes} + 1 || decoder.num_classes != scene.num_classes ||
        decoder.feature_channels != encoder.feature_channels) {
      throw ConfigError("derived model fields are out of sync with the scene");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : table()) keys.push_back(k);
  return keys;
}

void set_config_value(Config& config, std::string_view key, std::string_view value) {
  const auto it = table().find(std::string(key));
  if (it == table().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second.set(config, key, value);
}

Config parse_config(std::string_view text) {
  Config config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    set_config_value(config, key, trim(line.substr(eq + 1)));
  }
  config.sync_derived();
  config.validate();
  return config;
}

Config load_config(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return parse_config(std::string_view(bytes.data(), bytes.size()));
}

std::string to_text(const Config& config) {
  std::ostringstream out;
  for (const auto& [key, entry] : table()) out << key << '=' << entry.get(config) << '\n';
  return out.str();
}

}  // namespace occgen

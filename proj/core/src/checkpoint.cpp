// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#include "occgen/checkpoint.hpp"

#include <algorithm>
#include <map>
#include <string_view>

#include "binary_io.hpp"
#include "occgen/error.hpp"

namespace occgen {

namespace {

constexpr std::string_view kFirst = "adam.m/";
constexpr std::string_view kSecond = "adam.v/";
constexpr std::string_view kStep = "train.step";
constexpr std::string_view kLossEma = "train.loss_ema";

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint) {
  std::map<std::string, const Tensor*> tensors;
  for (const auto& [name, t] : checkpoint.params.tensors()) {
    if (starts_with(name, "adam.") || starts_with(name, "train.")) {
      throw ValueError("parameter name '" + name + "' collides with a reserved checkpoint prefix");
    }
    tensors[name] = &t;
  }
  for (const auto& [name, t] : checkpoint.optimizer.first_moment) tensors[std::string(kFirst) + name] = &t;
  for (const auto& [name, t] : checkpoint.optimizer.second_moment) tensors[std::string(kSecond) + name] = &t;
  const Tensor step = Tensor::scalar(static_cast<double>(checkpoint.step));
  const Tensor ema = Tensor::scalar(checkpoint.loss_ema);
  tensors[std::string(kStep)] = &step;
  tensors[std::string(kLossEma)] = &ema;

  detail::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.config_text.size()));
  w.put_bytes(checkpoint.config_text);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t->rank()));
    for (std::size_t d : t->shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t->data()) w.put<double>(v);
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (std::string_view(bytes.data(), head) != std::string_view(kCheckpointMagic, head)) {
    throw FormatError(FormatError::Kind::BadMagic, "checkpoint: bad magic");
  }
  if (head < 4) throw FormatError(FormatError::Kind::Truncated, "checkpoint: truncated magic");
  detail::ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  r.get_bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = r.get_bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  bool have_step = false, have_ema = false;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_bytes(r.get<std::uint32_t>());
    if (i > 0 && name <= prev) throw FormatError(FormatError::Kind::Invalid, "checkpoint: tensors not in canonical order");
    prev = name;
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    const std::size_t n = shape_numel(shape);
    r.need(8 * n);
    std::vector<double> data(n);
    for (double& v : data) v = r.get<double>();
    Tensor t(std::move(shape), std::move(data));
    if (starts_with(name, kFirst)) {
      ck.optimizer.first_moment.emplace(name.substr(kFirst.size()), std::move(t));
    } else if (starts_with(name, kSecond)) {
      ck.optimizer.second_moment.emplace(name.substr(kSecond.size()), std::move(t));
    } else if (name == kStep) {
      if (t.numel() != 1) throw FormatError(FormatError::Kind::Invalid, "checkpoint: malformed step counter");
      ck.step = static_cast<std::uint64_t>(t.item());
      have_step = true;
    } else if (name == kLossEma) {
      if (t.numel() != 1) throw FormatError(FormatError::Kind::Invalid, "checkpoint: malformed loss EMA");
      ck.loss_ema = t.item();
      have_ema = true;
    } else {
      ck.params.add(name, std::move(t));
    }
  }
  if (!have_step || !have_ema) throw FormatError(FormatError::Kind::Invalid, "checkpoint: missing training counters");
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::Invalid, "checkpoint: trailing bytes");
  ck.optimizer.step = ck.step;
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  detail::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace occgen

// Copyright 2026 The S2Vec Authors.
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

#pragma once

// Parameter checkpoints: magic "S2VP", u16 version, u32 tensor count; per
// tensor u32 name length, UTF-8 name, u8 rank, u32 extents, float32 data.
// Optimizer state uses magic "S2VO" with full-width values so a restored
// run continues bit-identically.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/numerics/optim.hpp"
#include "s2vec/numerics/params.hpp"
#include "s2vec/util/binary_io.hpp"

namespace s2vec {

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace ckpt_detail {

template <typename Stored, typename T>
void write_tensor(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  if constexpr (std::is_same_v<Stored, T>) {
    io::write_span<T>(out, t.values());
  } else {
    std::vector<Stored> tmp(t.values().begin(), t.values().end());
    io::write_span<Stored>(out, tmp);
  }
}

template <typename Stored, typename T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& in) {
  const auto len = io::read_pod<std::uint32_t>(in);
  detail::require(len < (1u << 16), "checkpoint tensor name too long");
  std::string name(len, '\0');
  in.read(name.data(), len);
  if (!in) throw ValidationError("truncated checkpoint");
  const auto rank = io::read_pod<std::uint8_t>(in);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = io::read_pod<std::uint32_t>(in);
    n *= e;
  }
  std::vector<Stored> raw(n);
  io::read_span<Stored>(in, raw);
  return {std::move(name), Tensor<T>(std::move(shape), std::vector<T>(raw.begin(), raw.end()))};
}

}  // namespace ckpt_detail

template <std::floating_point T>
void write_checkpoint(std::ostream& out, const ParamSet<T>& params) {
  io::write_magic(out, "S2VP");
  io::write_pod<std::uint16_t>(out, kCheckpointVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) ckpt_detail::write_tensor<float>(out, params.name(i), params[i]);
}

template <std::floating_point T>
ParamSet<T> read_checkpoint(std::istream& in) {
  io::expect_magic(in, "S2VP");
  const auto version = io::read_pod<std::uint16_t>(in);
  detail::require(version == kCheckpointVersion, "unsupported checkpoint version " + std::to_string(version));
  const auto count = io::read_pod<std::uint32_t>(in);
  ParamSet<T> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto [name, tensor] = ckpt_detail::read_tensor<float, T>(in);
    params.add(std::move(name), std::move(tensor));
  }
  return params;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint: " + path);
  write_checkpoint(out, params);
}

template <std::floating_point T>
ParamSet<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  return read_checkpoint<T>(in);
}

template <std::floating_point T>
void write_optimizer_state(std::ostream& out, const OptimizerState<T>& s) {
  io::write_magic(out, "S2VO");
  io::write_pod<std::uint16_t>(out, kCheckpointVersion);
  io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(T)));
  io::write_pod<std::int64_t>(out, s.step);
  for (double h : {s.config.beta1, s.config.beta2, s.config.eps, s.config.weight_decay}) io::write_pod<double>(out, h);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    ckpt_detail::write_tensor<T>(out, "m", s.m[k]);
    ckpt_detail::write_tensor<T>(out, "v", s.v[k]);
  }
}

template <std::floating_point T>
OptimizerState<T> read_optimizer_state(std::istream& in) {
  io::expect_magic(in, "S2VO");
  detail::require(io::read_pod<std::uint16_t>(in) == kCheckpointVersion, "unsupported optimizer state version");
  detail::require(io::read_pod<std::uint8_t>(in) == sizeof(T), "optimizer state precision mismatch");
  OptimizerState<T> s;
  s.step = io::read_pod<std::int64_t>(in);
  s.config.beta1 = io::read_pod<double>(in);
  s.config.beta2 = io::read_pod<double>(in);
  s.config.eps = io::read_pod<double>(in);
  s.config.weight_decay = io::read_pod<double>(in);
  const auto count = io::read_pod<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    s.m.push_back(ckpt_detail::read_tensor<T, T>(in).second);
    s.v.push_back(ckpt_detail::read_tensor<T, T>(in).second);
  }
  return s;
}

}  // namespace s2vec

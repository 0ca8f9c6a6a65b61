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

// S2-compatible hierarchical cell identifiers.
//
// Cell ids use the reference S2 layout: 3 face bits, 2 bits per level of
// Hilbert-curve position, then a trailing 1 bit. Points are projected onto
// the cube with the quadratic ST<->UV transform, so ids and tokens produced
// here are interchangeable with the reference library's.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "s2vec/error.hpp"

namespace s2vec {

inline constexpr int kMaxLevel = 30;

struct LatLng {
  double lat = 0.0;  // degrees
  double lng = 0.0;  // degrees

  // Validates ranges and maps lng == 180 onto -180.
  static LatLng from_degrees(double lat, double lng) {
    detail::require(std::isfinite(lat) && std::isfinite(lng), "non-finite coordinate");
    detail::require(lat >= -90.0 && lat <= 90.0, "latitude out of [-90, 90]: " + std::to_string(lat));
    detail::require(lng >= -180.0 && lng <= 180.0,
                    "longitude out of [-180, 180]: " + std::to_string(lng));
    if (lng == 180.0) lng = -180.0;
    return LatLng{lat, lng};
  }

  friend bool operator==(const LatLng&, const LatLng&) = default;
};

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct GridPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
};

namespace s2detail {

inline constexpr int kLookupBits = 4;
inline constexpr int kSwapMask = 1;
inline constexpr int kInvertMask = 2;
inline constexpr int kPosBits = 2 * kMaxLevel + 1;
inline constexpr std::uint32_t kMaxSize = 1u << kMaxLevel;
inline constexpr double kMaxSiTi = static_cast<double>(1u << 31);

inline constexpr int kPosToIJ[4][4] = {
    {0, 1, 3, 2},  // canonical order
    {0, 2, 3, 1},  // axes swapped
    {3, 2, 0, 1},  // bits inverted
    {3, 1, 0, 2},  // swapped & inverted
};
inline constexpr int kPosToOrientation[4] = {kSwapMask, 0, 0, kInvertMask + kSwapMask};

struct LookupTables {
  std::array<std::uint16_t, 1 << (2 * kLookupBits + 2)> pos{};
  std::array<std::uint16_t, 1 << (2 * kLookupBits + 2)> ij{};

  constexpr void init_cell(int level, int i, int j, int orig_orientation, int pos_v, int orientation) {
    if (level == kLookupBits) {
      const int ij_v = (i << kLookupBits) + j;
      pos[(ij_v << 2) + orig_orientation] = static_cast<std::uint16_t>((pos_v << 2) + orientation);
      ij[(pos_v << 2) + orig_orientation] = static_cast<std::uint16_t>((ij_v << 2) + orientation);
      return;
    }
    ++level;
    i <<= 1;
    j <<= 1;
    pos_v <<= 2;
    const int* r = kPosToIJ[orientation];
    for (int index = 0; index < 4; ++index) {
      init_cell(level, i + (r[index] >> 1), j + (r[index] & 1), orig_orientation, pos_v + index,
                orientation ^ kPosToOrientation[index]);
    }
  }

  constexpr LookupTables() {
    init_cell(0, 0, 0, 0, 0, 0);
    init_cell(0, 0, 0, kSwapMask, 0, kSwapMask);
    init_cell(0, 0, 0, kInvertMask, 0, kInvertMask);
    init_cell(0, 0, 0, kSwapMask | kInvertMask, 0, kSwapMask | kInvertMask);
  }
};

inline const LookupTables& lookup() {
  static const LookupTables tables;
  return tables;
}

inline double uv_to_st(double u) {
  return u >= 0 ? 0.5 * std::sqrt(1 + 3 * u) : 1 - 0.5 * std::sqrt(1 - 3 * u);
}

inline double st_to_uv(double s) {
  return s >= 0.5 ? (1.0 / 3) * (4 * s * s - 1) : (1.0 / 3) * (1 - 4 * (1 - s) * (1 - s));
}

inline std::uint32_t st_to_ij(double s) {
  const double v = std::floor(kMaxSize * s);
  return static_cast<std::uint32_t>(std::clamp(v, 0.0, static_cast<double>(kMaxSize - 1)));
}

inline int largest_abs_component(const Point3& p) {
  const double ax = std::fabs(p.x), ay = std::fabs(p.y), az = std::fabs(p.z);
  if (ax > ay) return ax > az ? 0 : 2;
  return ay > az ? 1 : 2;
}

inline int xyz_to_face_uv(const Point3& p, double& u, double& v) {
  int face = largest_abs_component(p);
  const double c = face == 0 ? p.x : face == 1 ? p.y : p.z;
  if (c < 0) face += 3;
  switch (face) {
    case 0: u = p.y / p.x; v = p.z / p.x; break;
    case 1: u = -p.x / p.y; v = p.z / p.y; break;
    case 2: u = -p.x / p.z; v = -p.y / p.z; break;
    case 3: u = p.z / p.x; v = p.y / p.x; break;
    case 4: u = p.z / p.y; v = -p.x / p.y; break;
    default: u = -p.y / p.z; v = -p.x / p.z; break;
  }
  return face;
}

inline Point3 face_uv_to_xyz(int face, double u, double v) {
  switch (face) {
    case 0: return {1, u, v};
    case 1: return {-u, 1, v};
    case 2: return {-u, -v, 1};
    case 3: return {-1, -v, -u};
    case 4: return {v, -1, -u};
    default: return {v, u, -1};
  }
}

inline Point3 latlng_to_point(const LatLng& ll) {
  const double phi = ll.lat * (std::numbers::pi / 180);
  const double theta = ll.lng * (std::numbers::pi / 180);
  const double cosphi = std::cos(phi);
  return {std::cos(theta) * cosphi, std::sin(theta) * cosphi, std::sin(phi)};
}

inline LatLng point_to_latlng(const Point3& p) {
  const double lat = std::atan2(p.z + 0.0, std::sqrt(p.x * p.x + p.y * p.y));
  // +0.0 folds negative zeros so pole points report longitude 0.
  const double lng = std::atan2(p.y + 0.0, p.x + 0.0);
  return {lat * (180 / std::numbers::pi), lng * (180 / std::numbers::pi)};
}

}  // namespace s2detail

class CellId {
 public:
  constexpr CellId() = default;
  constexpr explicit CellId(std::uint64_t raw) : raw_(raw) {}

  static CellId from_raw(std::uint64_t raw) {
    CellId c(raw);
    detail::require(c.is_valid(), "invalid cell id: " + std::to_string(raw));
    return c;
  }

  static CellId from_face(int face) {
    detail::require(face >= 0 && face < 6, "face out of range");
    return CellId((static_cast<std::uint64_t>(face) << s2detail::kPosBits) + lsb_for_level(0));
  }

  static CellId from_face_ij(int face, std::uint32_t i, std::uint32_t j) {
    using namespace s2detail;
    const auto& tables = lookup();
    std::uint64_t n = static_cast<std::uint64_t>(face) << (kPosBits - 1);
    std::uint64_t bits = face & kSwapMask;
    constexpr std::uint32_t mask = (1u << kLookupBits) - 1;
    for (int k = 7; k >= 0; --k) {
      bits += ((i >> (k * kLookupBits)) & mask) << (kLookupBits + 2);
      bits += ((j >> (k * kLookupBits)) & mask) << 2;
      bits = tables.pos[bits];
      n |= (bits >> 2) << (k * 2 * kLookupBits);
      bits &= (kSwapMask | kInvertMask);
    }
    return CellId(n * 2 + 1);
  }

  static constexpr std::uint64_t lsb_for_level(int level) {
    return std::uint64_t{1} << (2 * (kMaxLevel - level));
  }

  constexpr std::uint64_t raw() const { return raw_; }

  constexpr bool is_valid() const {
    return face() < 6 && raw_ != 0 && (lsb() & 0x1555555555555555ULL) != 0;
  }

  constexpr int face() const { return static_cast<int>(raw_ >> s2detail::kPosBits); }
  constexpr std::uint64_t lsb() const { return raw_ & (~raw_ + 1); }

  int level() const {
    detail::require(raw_ != 0, "invalid cell id: no set bits");
    return kMaxLevel - (std::countr_zero(raw_) >> 1);
  }

  bool is_leaf() const { return (raw_ & 1) != 0; }

  CellId parent(int lvl) const {
    detail::require(lvl >= 0 && lvl <= level(),
                    "parent level " + std::to_string(lvl) + " exceeds cell level " + std::to_string(level()));
    const std::uint64_t new_lsb = lsb_for_level(lvl);
    return CellId((raw_ & (~new_lsb + 1)) | new_lsb);
  }

  std::array<CellId, 4> children() const {
    detail::require(level() < kMaxLevel, "leaf cell has no children");
    const std::uint64_t new_lsb = lsb() >> 2;
    std::uint64_t id = raw_ - lsb() + new_lsb;
    std::array<CellId, 4> out;
    for (auto& c : out) {
      c = CellId(id);
      id += new_lsb << 1;
    }
    return out;
  }

  // All descendants at `lvl`, in Hilbert order.
  std::vector<CellId> descendants(int lvl) const {
    detail::require(lvl >= level() && lvl <= kMaxLevel, "descendant level out of range");
    const std::uint64_t child_lsb = lsb_for_level(lvl);
    const std::uint64_t begin = raw_ - lsb() + child_lsb;
    const std::uint64_t end = raw_ + lsb() + child_lsb;
    std::vector<CellId> out;
    out.reserve(static_cast<std::size_t>((end - begin) / (child_lsb << 1)));
    for (std::uint64_t id = begin; id != end; id += child_lsb << 1) out.emplace_back(id);
    return out;
  }

  bool contains(CellId other) const {
    return other.raw_ >= range_min() && other.raw_ <= range_max();
  }
  std::uint64_t range_min() const { return raw_ - (lsb() - 1); }
  std::uint64_t range_max() const { return raw_ + (lsb() - 1); }

  // Face and the (i, j) leaf coordinates the id's Hilbert position decodes to.
  int to_face_ij(std::uint32_t& i, std::uint32_t& j) const {
    using namespace s2detail;
    const auto& tables = lookup();
    i = 0;
    j = 0;
    const int f = face();
    std::uint64_t bits = f & kSwapMask;
    for (int k = 7; k >= 0; --k) {
      const int nbits = (k == 7) ? (kMaxLevel - 7 * kLookupBits) : kLookupBits;
      bits += ((raw_ >> (k * 2 * kLookupBits + 1)) & ((std::uint64_t{1} << (2 * nbits)) - 1)) << 2;
      bits = tables.ij[bits];
      i += static_cast<std::uint32_t>(bits >> (kLookupBits + 2)) << (k * kLookupBits);
      j += static_cast<std::uint32_t>((bits >> 2) & ((1u << kLookupBits) - 1)) << (k * kLookupBits);
      bits &= (kSwapMask | kInvertMask);
    }
    return f;
  }

  // Lower-left leaf (i, j) of the cell's square and its side in leaf units.
  int ij_bounds(std::uint32_t& i_lo, std::uint32_t& j_lo, std::uint32_t& size) const {
    std::uint32_t i, j;
    const int f = to_face_ij(i, j);
    size = std::uint32_t{1} << (kMaxLevel - level());
    i_lo = i & ~(size - 1);
    j_lo = j & ~(size - 1);
    return f;
  }

  Point3 center_point() const {
    using namespace s2detail;
    std::uint32_t i, j;
    const int f = to_face_ij(i, j);
    const std::uint32_t delta = is_leaf() ? 1 : (((i ^ (static_cast<std::uint32_t>(raw_ >> 2))) & 1) ? 2 : 0);
    const std::uint32_t si = 2 * i + delta;
    const std::uint32_t ti = 2 * j + delta;
    const double u = st_to_uv(si / kMaxSiTi);
    const double v = st_to_uv(ti / kMaxSiTi);
    return face_uv_to_xyz(f, u, v);
  }

  // Unnormalized corner points, counterclockwise from (u_lo, v_lo).
  std::array<Point3, 4> vertices() const {
    using namespace s2detail;
    std::uint32_t i_lo, j_lo, size;
    const int f = ij_bounds(i_lo, j_lo, size);
    const double u0 = st_to_uv(static_cast<double>(i_lo) / kMaxSize);
    const double u1 = st_to_uv(static_cast<double>(i_lo + size) / kMaxSize);
    const double v0 = st_to_uv(static_cast<double>(j_lo) / kMaxSize);
    const double v1 = st_to_uv(static_cast<double>(j_lo + size) / kMaxSize);
    return {face_uv_to_xyz(f, u0, v0), face_uv_to_xyz(f, u1, v0), face_uv_to_xyz(f, u1, v1),
            face_uv_to_xyz(f, u0, v1)};
  }

  // Lowercase hex with trailing zero nibbles stripped; "X" for the zero id.
  std::string token() const {
    if (raw_ == 0) return "X";
    const int digits = 16 - (std::countr_zero(raw_) >> 2);
    std::string out(16, '0');
    static constexpr char kHex[] = "0123456789abcdef";
    for (int k = 0; k < 16; ++k) out[k] = kHex[(raw_ >> (60 - 4 * k)) & 0xf];
    out.resize(static_cast<std::size_t>(digits));
    return out;
  }

  static CellId from_token(std::string_view token) {
    detail::require(!token.empty() && token.size() <= 16, "malformed cell token '" + std::string(token) + "'");
    std::uint64_t value = 0;
    for (char ch : token) {
      int nibble;
      if (ch >= '0' && ch <= '9') nibble = ch - '0';
      else if (ch >= 'a' && ch <= 'f') nibble = ch - 'a' + 10;
      else if (ch >= 'A' && ch <= 'F') nibble = ch - 'A' + 10;
      else throw ValidationError("malformed cell token '" + std::string(token) + "'");
      value = (value << 4) | static_cast<std::uint64_t>(nibble);
    }
    value <<= 4 * (16 - token.size());
    detail::require(value != 0, "cell token decodes to the zero id");
    CellId c(value);
    detail::require(c.is_valid(), "cell token '" + std::string(token) + "' is not a valid cell");
    return c;
  }

  friend constexpr auto operator<=>(const CellId&, const CellId&) = default;

 private:
  std::uint64_t raw_ = 0;
};

inline void require_level(int level) {
  detail::require(level >= 0 && level <= kMaxLevel, "level out of range [0, 30]: " + std::to_string(level));
}

inline CellId cell_from_point(const Point3& p, int level) {
  require_level(level);
  double u, v;
  const int face = s2detail::xyz_to_face_uv(p, u, v);
  const auto i = s2detail::st_to_ij(s2detail::uv_to_st(u));
  const auto j = s2detail::st_to_ij(s2detail::uv_to_st(v));
  return CellId::from_face_ij(face, i, j).parent(level);
}

inline CellId cell_from_latlng(const LatLng& p, int level) {
  const LatLng q = LatLng::from_degrees(p.lat, p.lng);
  return cell_from_point(s2detail::latlng_to_point(q), level);
}

inline int level_of(CellId c) { return c.level(); }

inline CellId parent_at(CellId c, int level) {
  detail::require(c.is_valid(), "invalid cell id");
  return c.parent(level);
}

inline std::array<CellId, 4> children_of(CellId c) {
  detail::require(c.is_valid(), "invalid cell id");
  return c.children();
}

inline LatLng cell_center(CellId c) {
  detail::require(c.is_valid(), "invalid cell id: " + std::to_string(c.raw()));
  return s2detail::point_to_latlng(c.center_point());
}

inline std::string token_of(CellId c) { return c.token(); }
inline CellId cell_from_token(std::string_view token) { return CellId::from_token(token); }

// Row-major slot of `child` inside the 2^d x 2^d grid of `parent`, d being
// the level difference. Larger j renders upward, so row 0 holds the
// largest-j children.
inline GridPos grid_position(CellId child, CellId parent) {
  detail::require(child.is_valid() && parent.is_valid(), "invalid cell id");
  detail::require(child.level() >= parent.level() && parent.contains(child),
                  "cell " + child.token() + " is not a descendant of " + parent.token());
  std::uint32_t ci, cj, csize, pi, pj, psize;
  child.ij_bounds(ci, cj, csize);
  parent.ij_bounds(pi, pj, psize);
  const int grid = static_cast<int>(psize / csize);
  const int i_rel = static_cast<int>((ci - pi) / csize);
  const int j_rel = static_cast<int>((cj - pj) / csize);
  return GridPos{grid - 1 - j_rel, i_rel};
}

inline int grid_side(int parent_level, int child_level) {
  detail::require(parent_level < child_level && child_level - parent_level <= 15,
                  "need parent level < child level");
  return 1 << (child_level - parent_level);
}

}  // namespace s2vec

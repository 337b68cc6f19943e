#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dgm/vec3.hpp"

namespace dgm {

using CellId = std::int64_t;

struct CellCoord {
  int i = 0;
  int j = 0;
  int k = 0;
  constexpr int operator[](int a) const { return a == 0 ? i : (a == 1 ? j : k); }
  friend constexpr bool operator==(const CellCoord&, const CellCoord&) = default;
};

/// Cell faces in the order used by every stencil: x-, x+, y-, y+, z-, z+.
enum class Face : int { XMinus = 0, XPlus, YMinus, YPlus, ZMinus, ZPlus };
inline constexpr int kFaceCount = 6;
constexpr int face_axis(int face) { return face / 2; }
constexpr int face_sign(int face) { return (face % 2) == 0 ? -1 : 1; }

struct Box {
  Vec3 lower;
  Vec3 upper;
};

/// Axis-aligned structured grid of identical box cells.
///
/// Cell membership is half-open [low, high) on every axis. Cell ids run x
/// fastest: id = i + nx * (j + ny * k).
class UniformGrid {
 public:
  UniformGrid(const Vec3& origin, const Vec3& spacing, const std::array<int, 3>& dims);

  const Vec3& origin() const { return origin_; }
  const Vec3& spacing() const { return spacing_; }
  const std::array<int, 3>& dims() const { return dims_; }
  Vec3 upper() const;

  CellId cell_count() const { return static_cast<CellId>(dims_[0]) * dims_[1] * dims_[2]; }
  double cell_volume() const { return spacing_.x * spacing_.y * spacing_.z; }
  double min_spacing() const;

  bool contains(const CellCoord& c) const;
  CellId index(const CellCoord& c) const {
    return c.i + static_cast<CellId>(dims_[0]) * (c.j + static_cast<CellId>(dims_[1]) * c.k);
  }
  CellCoord coord(CellId id) const;

  /// Lower face coordinate of cell index n along an axis (origin + n * h).
  double face_coordinate(int axis, int n) const { return origin_[axis] + n * spacing_[axis]; }
  Vec3 cell_center(CellId id) const;
  Box cell_box(CellId id) const;

  /// Face neighbour id, or nullopt on the domain boundary.
  std::optional<CellId> neighbor(CellId id, int face) const;

  friend bool operator==(const UniformGrid&, const UniformGrid&) = default;

 private:
  Vec3 origin_;
  Vec3 spacing_;
  std::array<int, 3> dims_;
};

struct CellOverlap {
  CellId senderCell = 0;
  CellId receiverCell = 0;
  double volume = 0.0;
};

/// Overlaps below this fraction of the smaller cell volume are dropped.
inline constexpr double kOverlapDiscardFraction = 1e-12;

std::optional<CellCoord> locate_coord(const UniformGrid& grid, const Vec3& point);
std::optional<CellId> locate_cell(const UniformGrid& grid, const Vec3& point);

/// Every sender/receiver cell pair with positive intersection volume, sorted
/// by (receiverCell, senderCell).
std::vector<CellOverlap> compute_overlaps(const UniformGrid& sender, const UniformGrid& receiver);

}  // namespace dgm

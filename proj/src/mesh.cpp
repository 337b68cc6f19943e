#include "dgm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dgm/error.hpp"

namespace dgm {

UniformGrid::UniformGrid(const Vec3& origin, const Vec3& spacing, const std::array<int, 3>& dims)
    : origin_(origin), spacing_(spacing), dims_(dims) {
  for (int a = 0; a < 3; ++a) {
    if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
      throw ConfigError("grid spacing must be strictly positive on axis " + std::to_string(a));
    if (dims_[a] < 1) throw ConfigError("grid dims must be >= 1 on axis " + std::to_string(a));
    if (!std::isfinite(origin_[a])) throw ConfigError("grid origin must be finite");
  }
}

Vec3 UniformGrid::upper() const {
  return {face_coordinate(0, dims_[0]), face_coordinate(1, dims_[1]), face_coordinate(2, dims_[2])};
}

double UniformGrid::min_spacing() const { return std::min({spacing_.x, spacing_.y, spacing_.z}); }

bool UniformGrid::contains(const CellCoord& c) const {
  return c.i >= 0 && c.j >= 0 && c.k >= 0 && c.i < dims_[0] && c.j < dims_[1] && c.k < dims_[2];
}

CellCoord UniformGrid::coord(CellId id) const {
  const CellId nx = dims_[0];
  const CellId ny = dims_[1];
  return {static_cast<int>(id % nx), static_cast<int>((id / nx) % ny), static_cast<int>(id / (nx * ny))};
}

Vec3 UniformGrid::cell_center(CellId id) const {
  const auto c = coord(id);
  return {origin_.x + (c.i + 0.5) * spacing_.x, origin_.y + (c.j + 0.5) * spacing_.y,
          origin_.z + (c.k + 0.5) * spacing_.z};
}

Box UniformGrid::cell_box(CellId id) const {
  const auto c = coord(id);
  return {{face_coordinate(0, c.i), face_coordinate(1, c.j), face_coordinate(2, c.k)},
          {face_coordinate(0, c.i + 1), face_coordinate(1, c.j + 1), face_coordinate(2, c.k + 1)}};
}

std::optional<CellId> UniformGrid::neighbor(CellId id, int face) const {
  auto c = coord(id);
  const int axis = face_axis(face);
  const int step = face_sign(face);
  if (axis == 0) c.i += step;
  if (axis == 1) c.j += step;
  if (axis == 2) c.k += step;
  if (!contains(c)) return std::nullopt;
  return index(c);
}

std::optional<CellCoord> locate_coord(const UniformGrid& grid, const Vec3& point) {
  std::array<int, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double rel = (point[a] - grid.origin()[a]) / grid.spacing()[a];
    if (!(rel >= 0.0)) return std::nullopt;  // also rejects NaN
    int n = static_cast<int>(std::floor(rel));
    // Correct floor() rounding so that the half-open test uses the same face
    // coordinates as cell_box().
    if (n > 0 && point[a] < grid.face_coordinate(a, n)) --n;
    if (n < grid.dims()[a] && point[a] >= grid.face_coordinate(a, n + 1)) ++n;
    if (n >= grid.dims()[a]) return std::nullopt;
    idx[a] = n;
  }
  return CellCoord{idx[0], idx[1], idx[2]};
}

std::optional<CellId> locate_cell(const UniformGrid& grid, const Vec3& point) {
  if (auto c = locate_coord(grid, point)) return grid.index(*c);
  return std::nullopt;
}

namespace {

struct Interval {
  int sender;
  int receiver;
  double length;
};

// All pairs of 1-D cells with positive intersection along one axis.
std::vector<Interval> axis_overlaps(const UniformGrid& s, const UniformGrid& r, int axis) {
  std::vector<Interval> out;
  const int ns = s.dims()[axis];
  const int nr = r.dims()[axis];
  int jr = 0;
  for (int is = 0; is < ns; ++is) {
    const double a0 = s.face_coordinate(axis, is);
    const double a1 = s.face_coordinate(axis, is + 1);
    while (jr < nr && r.face_coordinate(axis, jr + 1) <= a0) ++jr;
    for (int j = jr; j < nr; ++j) {
      const double b0 = r.face_coordinate(axis, j);
      if (b0 >= a1) break;
      const double b1 = r.face_coordinate(axis, j + 1);
      const double len = std::min(a1, b1) - std::max(a0, b0);
      if (len > 0.0) out.push_back({is, j, len});
    }
  }
  return out;
}

}  // namespace

std::vector<CellOverlap> compute_overlaps(const UniformGrid& sender, const UniformGrid& receiver) {
  const auto ox = axis_overlaps(sender, receiver, 0);
  const auto oy = axis_overlaps(sender, receiver, 1);
  const auto oz = axis_overlaps(sender, receiver, 2);
  const double threshold =
      kOverlapDiscardFraction * std::min(sender.cell_volume(), receiver.cell_volume());

  std::vector<CellOverlap> out;
  out.reserve(ox.size() * oy.size() * oz.size() > 0 ? ox.size() * oy.size() * oz.size() : 0);
  for (const auto& z : oz) {
    for (const auto& y : oy) {
      for (const auto& x : ox) {
        const double volume = x.length * y.length * z.length;
        if (volume <= threshold) continue;
        out.push_back({sender.index({x.sender, y.sender, z.sender}),
                       receiver.index({x.receiver, y.receiver, z.receiver}), volume});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const CellOverlap& a, const CellOverlap& b) {
    return a.receiverCell != b.receiverCell ? a.receiverCell < b.receiverCell
                                            : a.senderCell < b.senderCell;
  });
  return out;
}

}  // namespace dgm

#pragma once

#include <span>
#include <vector>

#include "dgm/mesh.hpp"

namespace dgm {

/// Cell -> rank ownership for one grid. Every cell has exactly one owner.
class PartitionMap {
 public:
  PartitionMap(const UniformGrid& grid, std::vector<int> owner, int rankCount);

  const UniformGrid& grid() const { return grid_; }
  int rank_count() const { return rankCount_; }
  int owner(CellId cell) const { return owner_[static_cast<std::size_t>(cell)]; }
  std::span<const int> owners() const { return owner_; }

  /// Owned cells of a rank in ascending id order.
  std::vector<CellId> cells_of(int rank) const;
  std::vector<CellId> cell_counts() const;

  friend bool operator==(const PartitionMap&, const PartitionMap&) = default;

 private:
  UniformGrid grid_;
  std::vector<int> owner_;
  int rankCount_;
};

/// Non-negative per-cell load; at least one entry must be positive.
struct LoadWeights {
  std::vector<double> perCell;

  static LoadWeights uniform(const UniformGrid& grid);
  /// Particle count per cell (centre-in-cell rule); points outside the grid are ignored.
  static LoadWeights histogram(const UniformGrid& grid, std::span<const Vec3> points);
  void validate(const UniformGrid& grid) const;
};

/// Box decomposition shared by the DEM domain and the coarse grid.
///
/// Picks the factorisation px*py*pz = rankCount that minimises the largest
/// per-rank cell count, then the total cut area, then prefers the
/// lexicographically smallest (px, py, pz). Falls back to contiguous chunks of
/// the cell id order when no factorisation fits the grid dims.
PartitionMap colocate_partition(const UniformGrid& coarse, int rankCount);

/// Recursive coordinate bisection of an arbitrary grid.
///
/// Each level splits the longest axis of the current cell set's bounding box.
/// Cells are ordered along that axis (then the remaining axes, then id) and cut
/// at the position whose prefix weight is closest to the proportional target;
/// ties go to the lower position. rankCount must be a power of two.
PartitionMap rcb_partition(const UniformGrid& grid, const LoadWeights& weights, int rankCount);

/// Renumbers ranks as (owner + offset) mod P; used to force non-aligned partitions.
PartitionMap shift_ranks(const PartitionMap& map, int offset);

/// max over ranks of owned weight / mean over ranks of owned weight.
double imbalance_factor(const PartitionMap& map, const LoadWeights& weights);

/// True when the rank's cells form one face-connected set (and it owns at least one cell).
bool is_face_connected(const PartitionMap& map, int rank);

/// Axis-aligned bounding box (in cell coordinates, inclusive) of a rank's cells.
struct CellRange {
  CellCoord lo;
  CellCoord hi;
};
CellRange owned_bounds(const PartitionMap& map, int rank);

}  // namespace dgm

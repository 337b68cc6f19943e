#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dgm/partition.hpp"
#include "dgm/transport.hpp"

namespace dgm {

inline constexpr int kBoundary = -1;

/// One rank's view of a partitioned grid: owned cells, a one-cell face halo,
/// the face-neighbour table and the halo exchange pattern.
///
/// Local numbering: owned cells first in ascending global id, then halo cells
/// in ascending global id.
class Subdomain {
 public:
  struct HaloLink {
    int peer = 0;
    std::vector<int> sendLocal;  // owned cells the peer needs
    std::vector<int> recvLocal;  // halo cells the peer owns
  };

  Subdomain(std::shared_ptr<const PartitionMap> map, int rank);

  const PartitionMap& partition() const { return *map_; }
  std::shared_ptr<const PartitionMap> partition_ptr() const { return map_; }
  const UniformGrid& grid() const { return map_->grid(); }
  int rank() const { return rank_; }

  int owned_count() const { return ownedCount_; }
  int local_count() const { return static_cast<int>(globalOf_.size()); }
  CellId global_id(int local) const { return globalOf_[static_cast<std::size_t>(local)]; }
  /// Local index of a global cell, or kBoundary when the cell is not stored here.
  int local_index(CellId cell) const { return localOf_[static_cast<std::size_t>(cell)]; }
  /// Face neighbour (local index) of an owned cell, or kBoundary at the domain edge.
  int neighbor(int ownedLocal, int face) const {
    return neighbors_[static_cast<std::size_t>(ownedLocal)][static_cast<std::size_t>(face)];
  }
  const std::vector<HaloLink>& halo_links() const { return links_; }

 private:
  std::shared_ptr<const PartitionMap> map_;
  int rank_;
  int ownedCount_ = 0;
  std::vector<CellId> globalOf_;
  std::vector<int> localOf_;
  std::vector<std::array<int, 6>> neighbors_;
  std::vector<HaloLink> links_;
};

/// Cell-centred scalar (1 component) or vector (3 components) field on a
/// subdomain. Halo values are only refreshed by halo_exchange().
class GridField {
 public:
  GridField() = default;
  GridField(std::shared_ptr<const Subdomain> sub, int components = 1, double init = 0.0);

  const Subdomain& subdomain() const { return *sub_; }
  std::shared_ptr<const Subdomain> subdomain_ptr() const { return sub_; }
  int components() const { return comps_; }

  double& operator()(int local, int c = 0) { return values_[static_cast<std::size_t>(local * comps_ + c)]; }
  double operator()(int local, int c = 0) const {
    return values_[static_cast<std::size_t>(local * comps_ + c)];
  }
  Vec3 vec(int local) const {
    const auto* v = &values_[static_cast<std::size_t>(local * comps_)];
    return {v[0], v[1], v[2]};
  }
  void set_vec(int local, const Vec3& v) {
    auto* p = &values_[static_cast<std::size_t>(local * comps_)];
    p[0] = v.x;
    p[1] = v.y;
    p[2] = v.z;
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

 private:
  std::shared_ptr<const Subdomain> sub_;
  int comps_ = 1;
  std::vector<double> values_;
};

/// Refreshes halo cells of every field from their owners. All fields must live
/// on the same subdomain; one message per neighbour rank carries all of them.
void halo_exchange(std::span<GridField* const> fields, Communicator& comm);
void halo_exchange(GridField& field, Communicator& comm);

/// Owned values of every rank assembled in global cell order at the root.
std::optional<std::vector<double>> gather_global(const GridField& field, Communicator& comm);

}  // namespace dgm

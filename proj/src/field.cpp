#include "dgm/field.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "dgm/error.hpp"
#include "dgm/tags.hpp"

namespace dgm {

Subdomain::Subdomain(std::shared_ptr<const PartitionMap> map, int rank) : map_(std::move(map)), rank_(rank) {
  const auto& grid = map_->grid();
  if (rank_ < 0 || rank_ >= map_->rank_count()) throw ConfigError("subdomain rank out of range");
  const auto owned = map_->cells_of(rank_);
  ownedCount_ = static_cast<int>(owned.size());

  std::map<int, std::set<CellId>> sendSets;
  std::map<int, std::set<CellId>> recvSets;
  std::set<CellId> halo;
  for (CellId c : owned) {
    for (int f = 0; f < kFaceCount; ++f) {
      const auto n = grid.neighbor(c, f);
      if (!n) continue;
      const int r = map_->owner(*n);
      if (r == rank_) continue;
      sendSets[r].insert(c);
      recvSets[r].insert(*n);
      halo.insert(*n);
    }
  }

  globalOf_ = owned;
  globalOf_.insert(globalOf_.end(), halo.begin(), halo.end());
  localOf_.assign(static_cast<std::size_t>(grid.cell_count()), kBoundary);
  for (std::size_t l = 0; l < globalOf_.size(); ++l) localOf_[static_cast<std::size_t>(globalOf_[l])] = static_cast<int>(l);

  neighbors_.resize(owned.size());
  for (std::size_t l = 0; l < owned.size(); ++l) {
    for (int f = 0; f < kFaceCount; ++f) {
      const auto n = grid.neighbor(owned[l], f);
      neighbors_[l][static_cast<std::size_t>(f)] = n ? localOf_[static_cast<std::size_t>(*n)] : kBoundary;
    }
  }

  for (const auto& [peer, cells] : sendSets) {
    HaloLink link;
    link.peer = peer;
    for (CellId c : cells) link.sendLocal.push_back(localOf_[static_cast<std::size_t>(c)]);
    for (CellId c : recvSets[peer]) link.recvLocal.push_back(localOf_[static_cast<std::size_t>(c)]);
    links_.push_back(std::move(link));
  }
}

GridField::GridField(std::shared_ptr<const Subdomain> sub, int components, double init)
    : sub_(std::move(sub)), comps_(components) {
  if (components != 1 && components != 3) throw ConfigError("grid fields have 1 or 3 components");
  values_.assign(static_cast<std::size_t>(sub_->local_count() * comps_), init);
}

void halo_exchange(std::span<GridField* const> fields, Communicator& comm) {
  if (fields.empty()) return;
  const Subdomain& sub = fields[0]->subdomain();
  for (auto* f : fields)
    if (&f->subdomain() != &sub) throw ConfigError("halo_exchange: fields live on different subdomains");

  for (const auto& link : sub.halo_links()) {
    ByteWriter w;
    for (const auto* f : fields)
      for (int l : link.sendLocal)
        for (int c = 0; c < f->components(); ++c) w.put((*f)(l, c));
    comm.send(link.peer, tags::kHalo, std::move(w).take());
  }
  for (const auto& link : sub.halo_links()) {
    const Bytes payload = comm.receive(link.peer, tags::kHalo);
    ByteReader r(payload);
    for (auto* f : fields)
      for (int l : link.recvLocal)
        for (int c = 0; c < f->components(); ++c) (*f)(l, c) = r.get<double>();
    if (!r.done()) throw TransportError("halo payload size mismatch from rank " + std::to_string(link.peer));
  }
}

void halo_exchange(GridField& field, Communicator& comm) {
  GridField* one[] = {&field};
  halo_exchange(one, comm);
}

std::optional<std::vector<double>> gather_global(const GridField& field, Communicator& comm) {
  const auto& sub = field.subdomain();
  ByteWriter w;
  const int comps = field.components();
  for (int l = 0; l < sub.owned_count(); ++l)
    for (int c = 0; c < comps; ++c) w.put(field(l, c));
  auto all = comm.gather_to_root(std::move(w).take());
  if (!all) return std::nullopt;
  const auto& map = sub.partition();
  std::vector<double> out(static_cast<std::size_t>(map.grid().cell_count() * comps), 0.0);
  for (int r = 0; r < map.rank_count(); ++r) {
    ByteReader reader((*all)[static_cast<std::size_t>(r)]);
    for (CellId c : map.cells_of(r))
      for (int k = 0; k < comps; ++k) out[static_cast<std::size_t>(c * comps + k)] = reader.get<double>();
  }
  return out;
}

}  // namespace dgm

#include "dgm/interp.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <tuple>

#include "dgm/error.hpp"
#include "dgm/tags.hpp"

namespace dgm {

namespace {

std::atomic<std::uint64_t> gBuildCount{0};
const std::vector<DatasetEntry> kEmptyDataset;

constexpr std::uint64_t kHeaderBytes = 4;        // u32 dataset count
constexpr std::uint64_t kDatasetHeaderBytes = 8;  // u32 rank + u32 value count

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "gather-scatter") return Strategy::GatherScatter;
  if (name == "distributed") return Strategy::Distributed;
  throw ConfigError("unknown strategy '" + name + "' (expected gather-scatter|distributed)");
}

std::string to_string(Strategy strategy) {
  return strategy == Strategy::GatherScatter ? "gather-scatter" : "distributed";
}

CommMatrix build_comm_matrix(std::shared_ptr<const PartitionMap> sender,
                             std::shared_ptr<const PartitionMap> receiver) {
  if (sender->rank_count() != receiver->rank_count())
    throw ConfigError("comm matrix: sender and receiver partitions have different world sizes (" +
                      std::to_string(sender->rank_count()) + " vs " + std::to_string(receiver->rank_count()) +
                      ")");
  ++gBuildCount;
  CommMatrix m;
  m.sender_ = std::move(sender);
  m.receiver_ = std::move(receiver);
  for (const auto& o : compute_overlaps(m.sender_->grid(), m.receiver_->grid())) {
    const int i = m.receiver_->owner(o.receiverCell);
    const int j = m.sender_->owner(o.senderCell);
    m.datasets_[{i, j}].push_back({o.senderCell, o.receiverCell, o.volume});
  }
  return m;
}

std::uint64_t CommMatrix::build_count() { return gBuildCount.load(); }

const std::vector<DatasetEntry>& CommMatrix::dataset(int receiverRank, int senderRank) const {
  auto it = datasets_.find({receiverRank, senderRank});
  return it == datasets_.end() ? kEmptyDataset : it->second;
}

std::vector<std::pair<int, int>> CommMatrix::nonempty_off_diagonal() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& [key, entries] : datasets_)
    if (key.first != key.second && !entries.empty()) out.push_back(key);
  return out;
}

std::size_t CommMatrix::entry_count() const {
  std::size_t n = 0;
  for (const auto& [key, entries] : datasets_) n += entries.size();
  return n;
}

CommMatrix CommMatrix::transposed() const {
  CommMatrix t;
  t.sender_ = receiver_;
  t.receiver_ = sender_;
  for (const auto& [key, entries] : datasets_) {
    auto& out = t.datasets_[{key.second, key.first}];
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.receiverCell, e.senderCell, e.volume});
  }
  for (auto& [key, entries] : t.datasets_)
    std::sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
      return std::tie(a.receiverCell, a.senderCell) < std::tie(b.receiverCell, b.senderCell);
    });
  return t;
}

RankInterpPlan CommMatrix::plan_for(std::shared_ptr<const Subdomain> senderSub,
                                    std::shared_ptr<const Subdomain> receiverSub) const {
  if (!(senderSub->partition() == *sender_) || !(receiverSub->partition() == *receiver_))
    throw ConfigError("interpolation plan: subdomains do not match the comm matrix partitions");
  const int me = senderSub->rank();
  if (receiverSub->rank() != me) throw ConfigError("interpolation plan: subdomains of different ranks");

  RankInterpPlan plan;
  plan.rank_ = me;
  plan.worldSize_ = world_size();
  plan.senderSub_ = senderSub;
  plan.receiverSub_ = receiverSub;
  plan.receiverCellVolume_ = receiver_->grid().cell_volume();

  // Column: datasets (i, me) for i != me.
  for (const auto& [key, entries] : datasets_) {
    if (key.second != me || key.first == me || entries.empty()) continue;
    RankInterpPlan::Outgoing out;
    out.receiverRank = key.first;
    for (const auto& e : entries) out.senderLocal.push_back(senderSub->local_index(e.senderCell));
    plan.column_.push_back(std::move(out));
  }

  // Row: every dataset (me, j), including the local diagonal. Each entry gets a
  // slot; slots of a receiver cell are ordered by sender global id.
  struct Pending {
    int receiverLocal;
    CellId senderCell;
    int source;  // -1 local, otherwise index into row_
    std::size_t position;
    double volume;
  };
  std::vector<Pending> pending;
  for (const auto& [key, entries] : datasets_) {
    if (key.first != me || entries.empty()) continue;
    int source = -1;
    if (key.second != me) {
      source = static_cast<int>(plan.row_.size());
      RankInterpPlan::Incoming in;
      in.senderRank = key.second;
      in.slot.resize(entries.size());
      plan.row_.push_back(std::move(in));
    }
    for (std::size_t q = 0; q < entries.size(); ++q) {
      const auto& e = entries[q];
      pending.push_back({receiverSub->local_index(e.receiverCell), e.senderCell, source, q, e.volume});
      if (source < 0) plan.localSenderLocal_.push_back(senderSub->local_index(e.senderCell));
    }
  }
  std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    return std::tie(a.receiverLocal, a.senderCell) < std::tie(b.receiverLocal, b.senderCell);
  });

  const int owned = receiverSub->owned_count();
  plan.cellSlotStart_.assign(static_cast<std::size_t>(owned) + 1, 0);
  plan.coveredVolume_.assign(static_cast<std::size_t>(owned), 0.0);
  plan.localSlot_.assign(plan.localSenderLocal_.size(), 0);
  plan.slotVolume_.resize(pending.size());
  // Local entries were appended in dataset order; map dataset position -> local index.
  std::size_t localCounter = 0;
  std::vector<std::size_t> localIndexOfPosition;
  {
    const auto& diag = dataset(me, me);
    localIndexOfPosition.resize(diag.size());
    for (std::size_t q = 0; q < diag.size(); ++q) localIndexOfPosition[q] = localCounter++;
  }
  for (std::size_t s = 0; s < pending.size(); ++s) {
    const auto& p = pending[s];
    ++plan.cellSlotStart_[static_cast<std::size_t>(p.receiverLocal) + 1];
    plan.coveredVolume_[static_cast<std::size_t>(p.receiverLocal)] += p.volume;
    plan.slotVolume_[s] = p.volume;
    if (p.source < 0)
      plan.localSlot_[localIndexOfPosition[p.position]] = static_cast<int>(s);
    else
      plan.row_[static_cast<std::size_t>(p.source)].slot[p.position] = static_cast<int>(s);
  }
  for (int l = 0; l < owned; ++l) plan.cellSlotStart_[l + 1] += plan.cellSlotStart_[l];
  return plan;
}

double RankInterpPlan::min_coverage() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : coveredVolume_) m = std::min(m, v / receiverCellVolume_);
  return m;
}

void interpolate(const RankInterpPlan& plan, const GridField& sender, GridField& receiver,
                 InterpolationKind kind, Strategy strategy, Communicator& comm) {
  if (comm.size() != plan.world_size())
    throw ConfigError("interpolate: plan built for " + std::to_string(plan.world_size()) + " ranks, world has " +
                      std::to_string(comm.size()));
  if (&sender.subdomain() != plan.senderSub_.get() || &receiver.subdomain() != plan.receiverSub_.get())
    throw ConfigError("interpolate: fields do not live on the plan's subdomains");
  const int comps = sender.components();
  if (receiver.components() != comps) throw ConfigError("interpolate: component count mismatch");

  const std::size_t slotCount = static_cast<std::size_t>(plan.cellSlotStart_.back());
  std::vector<double> contrib(slotCount * static_cast<std::size_t>(comps), 0.0);

  for (std::size_t e = 0; e < plan.localSlot_.size(); ++e) {
    const auto slot = static_cast<std::size_t>(plan.localSlot_[e]);
    for (int c = 0; c < comps; ++c)
      contrib[slot * comps + c] = sender(plan.localSenderLocal_[e], c);
  }

  auto packDataset = [&](const RankInterpPlan::Outgoing& out, ByteWriter& w) {
    for (std::size_t e = 0; e < out.senderLocal.size(); ++e)
      for (int c = 0; c < comps; ++c) w.put(sender(out.senderLocal[e], c));
  };
  auto unpackDataset = [&](const RankInterpPlan::Incoming& in, ByteReader& r) {
    for (int s : in.slot)
      for (int c = 0; c < comps; ++c) contrib[static_cast<std::size_t>(s) * comps + c] = r.get<double>();
  };
  auto findIncoming = [&](int senderRank) -> const RankInterpPlan::Incoming& {
    for (const auto& in : plan.row_)
      if (in.senderRank == senderRank) return in;
    throw TransportError("interpolate: unexpected dataset from rank " + std::to_string(senderRank));
  };

  if (strategy == Strategy::Distributed) {
    for (const auto& out : plan.column_) {
      ByteWriter w(out.senderLocal.size() * comps * sizeof(double));
      packDataset(out, w);
      comm.send(out.receiverRank, tags::kInterpDistributed, std::move(w).take());
    }
    for (const auto& in : plan.row_) {
      const Bytes payload = comm.receive(in.senderRank, tags::kInterpDistributed);
      ByteReader r(payload);
      unpackDataset(in, r);
      if (!r.done()) throw TransportError("interpolate: dataset size mismatch from rank " + std::to_string(in.senderRank));
    }
  } else {
    // Column to the root, rows back from the root.
    ByteWriter w;
    w.put(static_cast<std::uint32_t>(plan.column_.size()));
    for (const auto& out : plan.column_) {
      w.put(static_cast<std::uint32_t>(out.receiverRank));
      w.put(static_cast<std::uint32_t>(out.senderLocal.size() * comps));
      packDataset(out, w);
    }
    auto columns = comm.gather_to_root(std::move(w).take());
    std::optional<std::vector<Bytes>> rows;
    if (columns) {
      const int p = comm.size();
      struct Piece {
        std::uint32_t sender;
        std::vector<double> values;
      };
      std::vector<std::vector<Piece>> perRow(static_cast<std::size_t>(p));
      for (int j = 0; j < p; ++j) {
        ByteReader r((*columns)[static_cast<std::size_t>(j)]);
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < n; ++d) {
          const auto i = r.get<std::uint32_t>();
          std::vector<double> values(r.get<std::uint32_t>());
          r.get_doubles(values);
          perRow.at(i).push_back({static_cast<std::uint32_t>(j), std::move(values)});
        }
      }
      rows.emplace(static_cast<std::size_t>(p));
      for (int i = 0; i < p; ++i) {
        ByteWriter rw;
        const auto& pieces = perRow[static_cast<std::size_t>(i)];
        rw.put(static_cast<std::uint32_t>(pieces.size()));
        for (const auto& piece : pieces) {
          rw.put(piece.sender);
          rw.put(static_cast<std::uint32_t>(piece.values.size()));
          rw.put_doubles(piece.values);
        }
        (*rows)[static_cast<std::size_t>(i)] = std::move(rw).take();
      }
    }
    const Bytes mine = comm.scatter_from_root(std::move(rows));
    ByteReader r(mine);
    const auto n = r.get<std::uint32_t>();
    if (n != plan.row_.size()) throw TransportError("interpolate: row has unexpected dataset count");
    for (std::uint32_t d = 0; d < n; ++d) {
      const auto senderRank = static_cast<int>(r.get<std::uint32_t>());
      const auto count = r.get<std::uint32_t>();
      const auto& in = findIncoming(senderRank);
      if (count != in.slot.size() * comps) throw TransportError("interpolate: dataset size mismatch");
      unpackDataset(in, r);
    }
  }

  const int owned = receiver.subdomain().owned_count();
  for (int l = 0; l < owned; ++l) {
    const int a = plan.cellSlotStart_[static_cast<std::size_t>(l)];
    const int b = plan.cellSlotStart_[static_cast<std::size_t>(l) + 1];
    if (a == b) continue;
    const auto& vol = plan.slotVolume_;
    for (int c = 0; c < comps; ++c) {
      const auto at = [&](int s) { return contrib[static_cast<std::size_t>(s) * comps + c]; };
      if (kind == InterpolationKind::Conservative) {
        double sum = 0.0;
        for (int s = a; s < b; ++s) sum += at(s) * vol[static_cast<std::size_t>(s)];
        receiver(l, c) = sum / plan.receiverCellVolume_;
      } else {
        const double ref = at(a);
        double sum = 0.0;
        for (int s = a + 1; s < b; ++s) sum += (at(s) - ref) * vol[static_cast<std::size_t>(s)];
        receiver(l, c) = ref + sum / plan.coveredVolume_[static_cast<std::size_t>(l)];
      }
    }
  }
}

std::vector<RankCost> strategy_cost(const CommMatrix& matrix, Strategy strategy, int components) {
  const int p = matrix.world_size();
  std::vector<RankCost> cost(static_cast<std::size_t>(p));
  const auto pairs = matrix.nonempty_off_diagonal();
  auto bytesOf = [&](int i, int j) {
    return static_cast<std::uint64_t>(matrix.dataset(i, j).size()) * components * sizeof(double);
  };
  if (strategy == Strategy::Distributed) {
    for (const auto& [i, j] : pairs) {
      const auto b = bytesOf(i, j);
      auto& s = cost[static_cast<std::size_t>(j)];
      auto& r = cost[static_cast<std::size_t>(i)];
      ++s.messagesSent;
      s.bytesSent += b;
      ++r.messagesReceived;
      r.bytesReceived += b;
    }
    return cost;
  }
  std::vector<std::uint64_t> columnBytes(static_cast<std::size_t>(p), kHeaderBytes);
  std::vector<std::uint64_t> rowBytes(static_cast<std::size_t>(p), kHeaderBytes);
  for (const auto& [i, j] : pairs) {
    columnBytes[static_cast<std::size_t>(j)] += kDatasetHeaderBytes + bytesOf(i, j);
    rowBytes[static_cast<std::size_t>(i)] += kDatasetHeaderBytes + bytesOf(i, j);
  }
  for (int k = 1; k < p; ++k) {
    auto& c = cost[static_cast<std::size_t>(k)];
    c.messagesSent = 1;
    c.bytesSent = columnBytes[static_cast<std::size_t>(k)];
    c.messagesReceived = 1;
    c.bytesReceived = rowBytes[static_cast<std::size_t>(k)];
    cost[0].messagesReceived += 1;
    cost[0].bytesReceived += columnBytes[static_cast<std::size_t>(k)];
    cost[0].messagesSent += 1;
    cost[0].bytesSent += rowBytes[static_cast<std::size_t>(k)];
  }
  return cost;
}

}  // namespace dgm

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dgm/field.hpp"

namespace dgm {

/// CONSERVATIVE maps extensive quantities (cell integrals are redistributed by
/// overlap volume); CONSISTENT maps intensive ones (overlap-volume-weighted mean).
enum class InterpolationKind { Conservative, Consistent };

enum class Strategy { GatherScatter, Distributed };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy strategy);

struct DatasetEntry {
  CellId senderCell = 0;
  CellId receiverCell = 0;
  double volume = 0.0;
};

class RankInterpPlan;

/// Sparse rank x rank matrix of overlap datasets between two partitioned grids.
///
/// Element (i, j) holds what rank j (sender-grid owner) contributes to rank i
/// (receiver-grid owner), sorted by (receiverCell, senderCell). The diagonal is
/// applied locally and never transmitted. Geometry is static, so the matrix is
/// built once per run.
class CommMatrix {
 public:
  int world_size() const { return sender_->rank_count(); }
  const PartitionMap& sender() const { return *sender_; }
  const PartitionMap& receiver() const { return *receiver_; }

  const std::vector<DatasetEntry>& dataset(int receiverRank, int senderRank) const;
  /// Nonempty (i, j) pairs with i != j, in ascending order.
  std::vector<std::pair<int, int>> nonempty_off_diagonal() const;
  std::size_t entry_count() const;

  /// Same overlaps with sender and receiver roles swapped; no geometry is recomputed.
  CommMatrix transposed() const;

  /// Row (what `rank` receives) and column (what it sends) of the matrix,
  /// compiled against the rank's subdomains.
  RankInterpPlan plan_for(std::shared_ptr<const Subdomain> senderSub,
                          std::shared_ptr<const Subdomain> receiverSub) const;

  /// Number of build_comm_matrix() calls in this process.
  static std::uint64_t build_count();

 private:
  friend CommMatrix build_comm_matrix(std::shared_ptr<const PartitionMap>, std::shared_ptr<const PartitionMap>);
  CommMatrix() = default;

  std::shared_ptr<const PartitionMap> sender_;
  std::shared_ptr<const PartitionMap> receiver_;
  std::map<std::pair<int, int>, std::vector<DatasetEntry>> datasets_;
};

CommMatrix build_comm_matrix(std::shared_ptr<const PartitionMap> sender,
                             std::shared_ptr<const PartitionMap> receiver);

/// One rank's compiled row and column of a CommMatrix.
///
/// Every contribution to a receiver cell gets a slot; slots of a cell are
/// ordered by sender global cell id. Summing in slot order makes the result
/// independent of the partition and of the exchange strategy.
class RankInterpPlan {
 public:
  struct Outgoing {
    int receiverRank = 0;
    std::vector<int> senderLocal;
  };
  struct Incoming {
    int senderRank = 0;
    std::vector<int> slot;  // payload position -> slot
  };

  int rank() const { return rank_; }
  int world_size() const { return worldSize_; }
  const std::vector<Outgoing>& column() const { return column_; }
  const std::vector<Incoming>& row() const { return row_; }
  std::size_t local_entry_count() const { return localSlot_.size(); }

  /// Smallest covered fraction (Σ overlap / cell volume) over this rank's receiver cells.
  double min_coverage() const;

  const Subdomain& sender_subdomain() const { return *senderSub_; }
  const Subdomain& receiver_subdomain() const { return *receiverSub_; }

 private:
  friend class CommMatrix;
  friend void interpolate(const RankInterpPlan&, const GridField&, GridField&, InterpolationKind, Strategy,
                          Communicator&);

  int rank_ = 0;
  int worldSize_ = 1;
  std::shared_ptr<const Subdomain> senderSub_;
  std::shared_ptr<const Subdomain> receiverSub_;
  std::vector<Outgoing> column_;
  std::vector<Incoming> row_;
  std::vector<int> localSenderLocal_;
  std::vector<int> localSlot_;
  std::vector<double> slotVolume_;   // overlap volume of every slot
  std::vector<int> cellSlotStart_;  // owned receiver cells, size owned + 1
  std::vector<double> coveredVolume_;
  double receiverCellVolume_ = 0.0;
};

/// Maps `sender` onto `receiver`. Datasets carry sender cell values; the
/// receiver applies the overlap volumes. Receiver cells without any overlap
/// keep their previous values. CONSERVATIVE divides the received integral by
/// the receiver cell volume. CONSISTENT takes the covered-volume mean, written
/// as an offset from the first contribution so that constants map exactly.
void interpolate(const RankInterpPlan& plan, const GridField& sender, GridField& receiver,
                 InterpolationKind kind, Strategy strategy, Communicator& comm);

struct RankCost {
  std::uint64_t messagesSent = 0;
  std::uint64_t bytesSent = 0;
  std::uint64_t messagesReceived = 0;
  std::uint64_t bytesReceived = 0;
};

/// Exact per-rank traffic of one interpolate() call with `components` values per cell.
std::vector<RankCost> strategy_cost(const CommMatrix& matrix, Strategy strategy, int components);

}  // namespace dgm

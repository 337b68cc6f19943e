#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dgm/bytes.hpp"

namespace dgm {

enum class Backend { Deterministic, Threads };

Backend parse_backend(const std::string& name);
std::string to_string(Backend backend);

struct PeerTraffic {
  std::uint64_t messagesSent = 0;
  std::uint64_t bytesSent = 0;
  std::uint64_t messagesReceived = 0;
  std::uint64_t bytesReceived = 0;
};

/// Monotone per-rank traffic accounting.
struct TrafficCounters {
  std::uint64_t messagesSent = 0;
  std::uint64_t bytesSent = 0;
  std::uint64_t messagesReceived = 0;
  std::uint64_t bytesReceived = 0;
  std::vector<PeerTraffic> perPeer;

  /// Field-wise difference (this - earlier); both must come from the same rank.
  TrafficCounters since(const TrafficCounters& earlier) const;
};

struct RankContext {
  int rank = 0;
  int worldSize = 1;
};

class World;

/// One rank's handle on the world: tagged point-to-point messages with FIFO
/// order per (sender, receiver, tag), root gather/scatter, and a barrier.
class Communicator {
 public:
  Communicator(World& world, int rank) : world_(&world), rank_(rank) {}

  int rank() const { return rank_; }
  int size() const;
  RankContext context() const { return {rank_, size()}; }

  /// Non-blocking buffered send. Tags must be >= 0; negative tags are reserved.
  void send(int peer, int tag, Bytes payload);
  /// Blocks until a message from `peer` with `tag` is available.
  Bytes receive(int peer, int tag);

  /// Root (rank 0) gets every rank's payload indexed by rank; others get nullopt.
  std::optional<std::vector<Bytes>> gather_to_root(Bytes payload);
  /// Root passes one payload per rank; every rank returns its own.
  Bytes scatter_from_root(std::optional<std::vector<Bytes>> perRank);
  /// Root's payload is returned on every rank.
  Bytes broadcast_from_root(Bytes payload);

  void barrier();

  const TrafficCounters& counters() const;

 private:
  void send_internal(int peer, int tag, Bytes payload);
  Bytes receive_internal(int peer, int tag);

  World* world_;
  int rank_;
};

struct WorldOptions {
  /// Threads backend only: a blocked receive/barrier fails after this long.
  std::chrono::milliseconds timeout{60000};
};

/// Runs `body` once per logical rank and joins them. The first exception thrown
/// by any rank is rethrown here after all ranks have stopped.
///
/// Deterministic backend: ranks run one at a time and hand control on in fixed
/// round-robin order only when they block, so the global interleaving is a pure
/// function of the program. A state where no rank can progress is reported as a
/// deadlock listing what every rank waits for.
///
/// Returns the final traffic counters of every rank.
std::vector<TrafficCounters> run_ranks(int worldSize, Backend backend,
                                       const std::function<void(Communicator&)>& body,
                                       const WorldOptions& options = {});

}  // namespace dgm

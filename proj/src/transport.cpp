#include "dgm/transport.hpp"

#include <condition_variable>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "dgm/error.hpp"

namespace dgm {

namespace {

constexpr int kTagGather = -1;
constexpr int kTagScatter = -2;
constexpr int kTagBroadcast = -3;

/// Thrown in ranks that were blocked when another rank failed.
class AbortedError : public TransportError {
 public:
  using TransportError::TransportError;
};

}  // namespace

Backend parse_backend(const std::string& name) {
  if (name == "deterministic") return Backend::Deterministic;
  if (name == "threads") return Backend::Threads;
  throw ConfigError("unknown backend '" + name + "' (expected deterministic|threads)");
}

std::string to_string(Backend backend) {
  return backend == Backend::Deterministic ? "deterministic" : "threads";
}

TrafficCounters TrafficCounters::since(const TrafficCounters& earlier) const {
  TrafficCounters d;
  d.messagesSent = messagesSent - earlier.messagesSent;
  d.bytesSent = bytesSent - earlier.bytesSent;
  d.messagesReceived = messagesReceived - earlier.messagesReceived;
  d.bytesReceived = bytesReceived - earlier.bytesReceived;
  d.perPeer.resize(perPeer.size());
  for (std::size_t i = 0; i < perPeer.size(); ++i) {
    const auto& a = perPeer[i];
    const PeerTraffic b = i < earlier.perPeer.size() ? earlier.perPeer[i] : PeerTraffic{};
    d.perPeer[i] = {a.messagesSent - b.messagesSent, a.bytesSent - b.bytesSent,
                    a.messagesReceived - b.messagesReceived, a.bytesReceived - b.bytesReceived};
  }
  return d;
}

class World {
 public:
  World(int size, Backend backend, const WorldOptions& options)
      : size_(size), backend_(backend), options_(options), counters_(static_cast<std::size_t>(size)),
        state_(static_cast<std::size_t>(size), State::Runnable), waitPred_(static_cast<std::size_t>(size)),
        waitDesc_(static_cast<std::size_t>(size)) {
    for (auto& c : counters_) c.perPeer.resize(static_cast<std::size_t>(size));
  }

  int size() const { return size_; }
  const TrafficCounters& counters(int rank) const { return counters_[static_cast<std::size_t>(rank)]; }
  std::vector<TrafficCounters> all_counters() const { return counters_; }

  void send(int from, int to, int tag, Bytes payload) {
    std::unique_lock lk(mu_);
    throw_if_aborted();
    auto& c = counters_[static_cast<std::size_t>(from)];
    ++c.messagesSent;
    c.bytesSent += payload.size();
    ++c.perPeer[static_cast<std::size_t>(to)].messagesSent;
    c.perPeer[static_cast<std::size_t>(to)].bytesSent += payload.size();
    mail_[{from, to, tag}].push_back(std::move(payload));
    if (backend_ == Backend::Threads) cv_.notify_all();
  }

  Bytes receive(int me, int from, int tag) {
    std::unique_lock lk(mu_);
    const std::tuple key{from, me, tag};
    wait_until(lk, me, [this, key] {
      auto it = mail_.find(key);
      return it != mail_.end() && !it->second.empty();
    }, [from, tag] { return "receive(from=" + std::to_string(from) + ", tag=" + std::to_string(tag) + ")"; });
    auto& queue = mail_[key];
    Bytes payload = std::move(queue.front());
    queue.pop_front();
    auto& c = counters_[static_cast<std::size_t>(me)];
    ++c.messagesReceived;
    c.bytesReceived += payload.size();
    ++c.perPeer[static_cast<std::size_t>(from)].messagesReceived;
    c.perPeer[static_cast<std::size_t>(from)].bytesReceived += payload.size();
    return payload;
  }

  void barrier(int me) {
    std::unique_lock lk(mu_);
    throw_if_aborted();
    const std::uint64_t gen = generation_;
    if (++arrived_ == size_) {
      arrived_ = 0;
      ++generation_;
      if (backend_ == Backend::Threads) cv_.notify_all();
      return;
    }
    wait_until(lk, me, [this, gen] { return generation_ != gen; }, [] { return std::string("barrier"); });
  }

  // Rank thread entry: under the deterministic backend, wait for the first turn.
  void enter(int me) {
    if (backend_ != Backend::Deterministic) return;
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return aborted_ || turn_ == me; });
  }

  void leave(int me, std::exception_ptr error, bool rootCause) {
    std::unique_lock lk(mu_);
    if (error && rootCause && !rootError_) rootError_ = error;
    if (error && !aborted_) {
      aborted_ = true;
      abortReason_ = "rank " + std::to_string(me) + " failed";
    }
    state_[static_cast<std::size_t>(me)] = State::Done;
    if (backend_ == Backend::Deterministic && !aborted_) pass_turn(me);
    cv_.notify_all();
  }

  std::exception_ptr root_error() const { return rootError_; }
  bool aborted() const { return aborted_; }
  const std::string& abort_reason() const { return abortReason_; }

 private:
  enum class State { Runnable, Blocked, Done };

  void throw_if_aborted() const {
    if (aborted_) throw AbortedError("world aborted: " + abortReason_);
  }

  template <typename Pred, typename Describe>
  void wait_until(std::unique_lock<std::mutex>& lk, int me, Pred pred, Describe describe) {
    throw_if_aborted();
    if (pred()) return;
    const auto idx = static_cast<std::size_t>(me);
    state_[idx] = State::Blocked;
    waitPred_[idx] = pred;
    waitDesc_[idx] = describe();
    if (backend_ == Backend::Deterministic) {
      pass_turn(me);
      cv_.notify_all();
      if (aborted_ && abortIsDeadlock_ && deadlockDetector_ == me) {
        state_[idx] = State::Runnable;
        throw TransportError(abortReason_);
      }
      cv_.wait(lk, [&] { return aborted_ || (turn_ == me && pred()); });
    } else {
      const bool ok = cv_.wait_for(lk, options_.timeout, [&] { return aborted_ || pred(); });
      if (!ok) {
        aborted_ = true;
        abortReason_ = "timeout after " + std::to_string(options_.timeout.count()) + " ms\n" + wait_report();
        cv_.notify_all();
        state_[idx] = State::Runnable;
        throw TransportError(abortReason_);
      }
    }
    state_[idx] = State::Runnable;
    throw_if_aborted();
  }

  // Deterministic backend: hand control to the next rank (round-robin from `from`)
  // that can make progress; abort with a report when none can.
  void pass_turn(int from) {
    for (int off = 1; off <= size_; ++off) {
      const int r = (from + off) % size_;
      const auto idx = static_cast<std::size_t>(r);
      if (state_[idx] == State::Done) continue;
      if (state_[idx] == State::Runnable || waitPred_[idx]()) {
        turn_ = r;
        return;
      }
    }
    bool allDone = true;
    for (auto s : state_) allDone = allDone && s == State::Done;
    if (allDone) return;
    aborted_ = true;
    abortIsDeadlock_ = true;
    deadlockDetector_ = from;
    abortReason_ = "deadlock: no rank can progress\n" + wait_report();
  }

  std::string wait_report() const {
    std::ostringstream os;
    for (int r = 0; r < size_; ++r) {
      const auto idx = static_cast<std::size_t>(r);
      os << "  rank " << r << ": ";
      switch (state_[idx]) {
        case State::Done: os << "finished"; break;
        case State::Runnable: os << "running"; break;
        case State::Blocked: os << "blocked in " << waitDesc_[idx]; break;
      }
      os << '\n';
    }
    return os.str();
  }

  int size_;
  Backend backend_;
  WorldOptions options_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<int, int, int>, std::deque<Bytes>> mail_;
  std::vector<TrafficCounters> counters_;
  int arrived_ = 0;
  std::uint64_t generation_ = 0;
  int turn_ = 0;
  std::vector<State> state_;
  std::vector<std::function<bool()>> waitPred_;
  std::vector<std::string> waitDesc_;
  bool aborted_ = false;
  bool abortIsDeadlock_ = false;
  int deadlockDetector_ = -1;
  std::string abortReason_;
  std::exception_ptr rootError_;
};

int Communicator::size() const { return world_->size(); }

const TrafficCounters& Communicator::counters() const { return world_->counters(rank_); }

void Communicator::send(int peer, int tag, Bytes payload) {
  if (tag < 0) throw TransportError("negative tags are reserved");
  send_internal(peer, tag, std::move(payload));
}

Bytes Communicator::receive(int peer, int tag) {
  if (tag < 0) throw TransportError("negative tags are reserved");
  return receive_internal(peer, tag);
}

void Communicator::send_internal(int peer, int tag, Bytes payload) {
  if (peer < 0 || peer >= size())
    throw TransportError("send to out-of-range peer " + std::to_string(peer));
  if (peer == rank_) throw TransportError("self-send on rank " + std::to_string(rank_) + "; use local data");
  world_->send(rank_, peer, tag, std::move(payload));
}

Bytes Communicator::receive_internal(int peer, int tag) {
  if (peer < 0 || peer >= size())
    throw TransportError("receive from out-of-range peer " + std::to_string(peer));
  if (peer == rank_) throw TransportError("self-receive on rank " + std::to_string(rank_));
  return world_->receive(rank_, peer, tag);
}

std::optional<std::vector<Bytes>> Communicator::gather_to_root(Bytes payload) {
  if (rank_ != 0) {
    send_internal(0, kTagGather, std::move(payload));
    return std::nullopt;
  }
  std::vector<Bytes> all(static_cast<std::size_t>(size()));
  all[0] = std::move(payload);
  for (int r = 1; r < size(); ++r) all[static_cast<std::size_t>(r)] = receive_internal(r, kTagGather);
  return all;
}

Bytes Communicator::scatter_from_root(std::optional<std::vector<Bytes>> perRank) {
  if (rank_ != 0) return receive_internal(0, kTagScatter);
  if (!perRank || static_cast<int>(perRank->size()) != size())
    throw TransportError("scatter_from_root needs exactly one payload per rank at the root");
  for (int r = 1; r < size(); ++r)
    send_internal(r, kTagScatter, std::move((*perRank)[static_cast<std::size_t>(r)]));
  return std::move((*perRank)[0]);
}

Bytes Communicator::broadcast_from_root(Bytes payload) {
  if (rank_ != 0) return receive_internal(0, kTagBroadcast);
  for (int r = 1; r < size(); ++r) send_internal(r, kTagBroadcast, payload);
  return payload;
}

void Communicator::barrier() { world_->barrier(rank_); }

std::vector<TrafficCounters> run_ranks(int worldSize, Backend backend,
                                       const std::function<void(Communicator&)>& body,
                                       const WorldOptions& options) {
  if (worldSize < 1) throw ConfigError("world size must be positive");
  World world(worldSize, backend, options);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(worldSize));
  for (int r = 0; r < worldSize; ++r) {
    threads.emplace_back([&world, &body, r] {
      Communicator comm(world, r);
      std::exception_ptr error;
      bool rootCause = false;
      try {
        world.enter(r);
        if (!world.aborted()) body(comm);
      } catch (const AbortedError&) {
        error = std::current_exception();
      } catch (...) {
        error = std::current_exception();
        rootCause = true;
      }
      world.leave(r, error, rootCause);
    });
  }
  for (auto& t : threads) t.join();
  if (auto e = world.root_error()) std::rethrow_exception(e);
  if (world.aborted()) throw TransportError(world.abort_reason());
  return world.all_counters();
}

}  // namespace dgm

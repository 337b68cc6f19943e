#pragma once

#include <stdexcept>
#include <string>

namespace dgm {

/// Invalid scenario or call parameters, detected before any work is done.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nonphysical state or a rejected time step (CFL, stability, overfull cell).
class PhysicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated cross-module invariant, e.g. a particle on a rank that does not own its cell.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Message-passing failure: bad peer, deadlock, timeout, or an aborted world.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dgm

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dgm/exact_sum.hpp"
#include "dgm/transport.hpp"

namespace dgm {

// Reductions built from gather_to_root + broadcast_from_root. Sums are exact
// before the final rounding, so every rank count yields the same bits.

std::vector<double> allreduce_sum(Communicator& comm, std::span<const ExactSum> parts);
double allreduce_sum(Communicator& comm, const ExactSum& part);
std::vector<double> allreduce_max(Communicator& comm, std::span<const double> values);
double allreduce_max(Communicator& comm, double value);
std::uint64_t allreduce_sum(Communicator& comm, std::uint64_t value);

}  // namespace dgm

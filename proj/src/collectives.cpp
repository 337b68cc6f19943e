#include "dgm/collectives.hpp"

#include <algorithm>

namespace dgm {

std::vector<double> allreduce_sum(Communicator& comm, std::span<const ExactSum> parts) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(parts.size()));
  for (const auto& p : parts) {
    w.put(static_cast<std::uint32_t>(p.partials().size()));
    w.put_doubles(p.partials());
  }
  auto gathered = comm.gather_to_root(std::move(w).take());
  Bytes result;
  if (gathered) {
    std::vector<ExactSum> total(parts.size());
    for (const auto& payload : *gathered) {
      ByteReader r(payload);
      const auto n = r.get<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> partials(r.get<std::uint32_t>());
        r.get_doubles(partials);
        total[i].merge_partials(partials);
      }
    }
    ByteWriter out;
    for (const auto& t : total) out.put(t.value());
    result = std::move(out).take();
  }
  result = comm.broadcast_from_root(std::move(result));
  std::vector<double> values(parts.size());
  ByteReader r(result);
  r.get_doubles(values);
  return values;
}

double allreduce_sum(Communicator& comm, const ExactSum& part) {
  return allreduce_sum(comm, std::span<const ExactSum>(&part, 1))[0];
}

std::vector<double> allreduce_max(Communicator& comm, std::span<const double> values) {
  ByteWriter w;
  w.put_doubles(values);
  auto gathered = comm.gather_to_root(std::move(w).take());
  Bytes result;
  if (gathered) {
    std::vector<double> best(values.begin(), values.end());
    for (std::size_t r = 1; r < gathered->size(); ++r) {
      std::vector<double> v(values.size());
      ByteReader(gathered->at(r)).get_doubles(v);
      for (std::size_t i = 0; i < v.size(); ++i) best[i] = std::max(best[i], v[i]);
    }
    ByteWriter out;
    out.put_doubles(best);
    result = std::move(out).take();
  }
  result = comm.broadcast_from_root(std::move(result));
  std::vector<double> out(values.size());
  ByteReader(result).get_doubles(out);
  return out;
}

double allreduce_max(Communicator& comm, double value) {
  return allreduce_max(comm, std::span<const double>(&value, 1))[0];
}

std::uint64_t allreduce_sum(Communicator& comm, std::uint64_t value) {
  ByteWriter w;
  w.put(value);
  auto gathered = comm.gather_to_root(std::move(w).take());
  Bytes result;
  if (gathered) {
    std::uint64_t total = 0;
    for (const auto& g : *gathered) total += ByteReader(g).get<std::uint64_t>();
    ByteWriter out;
    out.put(total);
    result = std::move(out).take();
  }
  result = comm.broadcast_from_root(std::move(result));
  return ByteReader(result).get<std::uint64_t>();
}

}  // namespace dgm

#pragma once

namespace dgm::tags {

// Message tags used by the library. FIFO matching per (sender, receiver, tag)
// keeps repeated calls of the same collective operation in order.
inline constexpr int kHalo = 10;
inline constexpr int kInterpDistributed = 20;
inline constexpr int kMigrate = 30;
inline constexpr int kGhost = 31;
inline constexpr int kCollect = 40;

}  // namespace dgm::tags

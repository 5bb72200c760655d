// Color-class sweep execution with per-block wall timing. Blocks inside a
// class are mutually independent by construction, so they can run
// concurrently with live reads of the shared state and the result is
// bitwise identical at any worker count.
#pragma once

#include "relstate/partition.hpp"

#include <functional>

namespace relstate {

class SweepExecutor {
 public:
  SweepExecutor(const BlockPartition& partition, const Coloring& coloring, int workers);

  /// Runs fn once for every non-frozen block, one color class at a time.
  /// Blocks of the same class may run on different threads; classes are
  /// strictly sequential.
  void run_sweep(const std::function<void(const Block&)>& fn);

  int sweeps() const { return sweeps_; }

  /// Idealized parallel cost: per class the slowest block is charged,
  /// classes and sweeps add up. Independent of the actual worker count.
  double parallel_seconds() const { return parallel_; }

  /// Total single-thread cost: every block's measured time added up.
  double serial_seconds() const { return serial_; }

 private:
  std::vector<Block> blocks_;
  std::vector<std::vector<int>> classes_;  // non-frozen block ids per color
  int workers_ = 1;
  int sweeps_ = 0;
  double parallel_ = 0.0;
  double serial_ = 0.0;
};

}  // namespace relstate

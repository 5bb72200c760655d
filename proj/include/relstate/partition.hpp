// Block partitions for coordinate descent: which variables move together,
// which blocks conflict, and a greedy conflict-graph coloring that groups
// mutually independent blocks for parallel sweeps.
#pragma once

#include "relstate/model.hpp"

namespace relstate {

/// Thrown when the problem's constraints do not respect agent boundaries,
/// which would make per-agent blocks interdependent through equalities.
struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PartitionScheme {
  PerAgent,     // one block per agent (the lifted interior-point solver)
  FactorPairs,  // one block per factor per agent (the low-rank solver)
};

enum class BlockFactor { Single, Left, Right };

struct Block {
  int id = 0;
  int agent = 0;
  BlockFactor factor = BlockFactor::Single;
  bool frozen = false;
};

struct BlockPartition {
  PartitionScheme scheme = PartitionScheme::PerAgent;
  std::vector<Block> blocks;

  int block_count() const { return static_cast<int>(blocks.size()); }
  /// Block id for an agent (and factor, under FactorPairs).
  int block_of(int agent, BlockFactor factor = BlockFactor::Single) const;
};

struct DependencyGraph {
  std::vector<std::vector<int>> adjacency;  // sorted, unique, per block id

  int max_degree() const;
};

struct Coloring {
  std::vector<int> color;                 // per block id
  std::vector<std::vector<int>> classes;  // per color, ascending block ids

  int color_count() const { return static_cast<int>(classes.size()); }
};

/// Builds the block list. Anchored agents produce frozen blocks that occupy
/// their slots but are skipped by sweeps. Verifies that every constraint
/// references exactly one agent and throws PartitionError otherwise.
BlockPartition make_partition(const RealizationProblem& problem, PartitionScheme scheme);

/// Conflict edges between blocks that read each other's variables. Two
/// per-agent blocks conflict when a range term couples their agents. Factor
/// blocks conflict across every measurement edge in all four factor
/// combinations, and the two factors of one agent conflict with each other.
/// Frozen blocks never conflict: nothing writes them.
DependencyGraph build_dependency_graph(const RealizationProblem& problem,
                                       const BlockPartition& partition);

/// Smallest-available-color greedy pass in block id order; uses at most
/// max_degree + 1 colors.
Coloring greedy_coloring(const DependencyGraph& graph);

}  // namespace relstate

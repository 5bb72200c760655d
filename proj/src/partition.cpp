#include "relstate/partition.hpp"

#include <algorithm>
#include <set>

namespace relstate {

namespace {

void assert_single_agent_constraints(const RealizationProblem& problem) {
  for (const CalibPair& pair : problem.calib) {
    if (problem.map.agent_of(pair.col_a) != pair.agent ||
        problem.map.agent_of(pair.col_b) != pair.agent)
      throw PartitionError("calibration pair spans more than one agent");
  }
  for (const LinearRow& row : problem.rows)
    for (const LinearEntry& e : row.entries)
      if (problem.map.agent_of(e.col) != row.agent)
        throw PartitionError("linear constraint row spans more than one agent");
}

}  // namespace

int BlockPartition::block_of(int agent, BlockFactor factor) const {
  if (scheme == PartitionScheme::PerAgent) {
    if (factor != BlockFactor::Single)
      throw std::invalid_argument("per-agent partitions have no factor blocks");
    return agent;
  }
  if (factor == BlockFactor::Single)
    throw std::invalid_argument("factor-pair partitions need Left or Right");
  return 2 * agent + (factor == BlockFactor::Left ? 0 : 1);
}

int DependencyGraph::max_degree() const {
  int deg = 0;
  for (const auto& nbrs : adjacency) deg = std::max(deg, static_cast<int>(nbrs.size()));
  return deg;
}

BlockPartition make_partition(const RealizationProblem& problem, PartitionScheme scheme) {
  assert_single_agent_constraints(problem);
  BlockPartition partition;
  partition.scheme = scheme;
  const int n = problem.agent_count();
  if (scheme == PartitionScheme::PerAgent) {
    partition.blocks.reserve(n);
    for (int i = 0; i < n; ++i)
      partition.blocks.push_back({i, i, BlockFactor::Single, problem.agent_frozen[i] != 0});
  } else {
    partition.blocks.reserve(2 * n);
    for (int i = 0; i < n; ++i) {
      const bool frozen = problem.agent_frozen[i] != 0;
      partition.blocks.push_back({2 * i, i, BlockFactor::Left, frozen});
      partition.blocks.push_back({2 * i + 1, i, BlockFactor::Right, frozen});
    }
  }
  return partition;
}

DependencyGraph build_dependency_graph(const RealizationProblem& problem,
                                       const BlockPartition& partition) {
  std::set<std::pair<int, int>> agent_pairs;
  for (const EdgeTerm& e : problem.edges) {
    if (problem.agent_frozen[e.agent_a] || problem.agent_frozen[e.agent_b]) continue;
    agent_pairs.insert({std::min(e.agent_a, e.agent_b), std::max(e.agent_a, e.agent_b)});
  }

  std::vector<std::set<int>> adj(partition.block_count());
  auto link = [&](int a, int b) {
    adj[a].insert(b);
    adj[b].insert(a);
  };
  if (partition.scheme == PartitionScheme::PerAgent) {
    for (const auto& [a, b] : agent_pairs)
      link(partition.block_of(a), partition.block_of(b));
  } else {
    for (const auto& [a, b] : agent_pairs) {
      for (BlockFactor fa : {BlockFactor::Left, BlockFactor::Right})
        for (BlockFactor fb : {BlockFactor::Left, BlockFactor::Right})
          link(partition.block_of(a, fa), partition.block_of(b, fb));
    }
    // The coupling penalty and calibration terms tie an agent's factors.
    for (const Block& block : partition.blocks)
      if (!block.frozen && block.factor == BlockFactor::Left)
        link(block.id, partition.block_of(block.agent, BlockFactor::Right));
  }

  DependencyGraph graph;
  graph.adjacency.reserve(adj.size());
  for (const auto& nbrs : adj) graph.adjacency.emplace_back(nbrs.begin(), nbrs.end());
  return graph;
}

Coloring greedy_coloring(const DependencyGraph& graph) {
  const int n = static_cast<int>(graph.adjacency.size());
  Coloring coloring;
  coloring.color.assign(n, -1);
  for (int id = 0; id < n; ++id) {
    std::set<int> used;
    for (int nbr : graph.adjacency[id])
      if (coloring.color[nbr] >= 0) used.insert(coloring.color[nbr]);
    int c = 0;
    while (used.count(c)) ++c;
    coloring.color[id] = c;
    if (c >= static_cast<int>(coloring.classes.size())) coloring.classes.resize(c + 1);
    coloring.classes[c].push_back(id);
  }
  return coloring;
}

}  // namespace relstate

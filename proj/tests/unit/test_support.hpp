#pragma once

// Small network builders and brute-force helpers shared by the unit tests.

#include <complex>
#include <random>
#include <string>
#include <vector>

#include "hdsse/grid_model.hpp"

namespace hdsse::testing {

inline RadialNetwork chain(int nodes, double r = 0.01, double x = 0.02) {
  std::vector<Branch> b;
  for (int i = 0; i + 1 < nodes; ++i) b.push_back({NodeId{i}, NodeId{i + 1}, r, x});
  return RadialNetwork(nodes, NodeId{0}, b);
}

inline RadialNetwork star(int leaves) {
  std::vector<Branch> b;
  for (int i = 1; i <= leaves; ++i) b.push_back({NodeId{0}, NodeId{i}, 0.01 * i, 0.02});
  return RadialNetwork(leaves + 1, NodeId{0}, b);
}

/// Random tree: node k > 0 attaches to a uniformly chosen earlier node, with
/// the declared orientation flipped at random.
inline RadialNetwork random_tree(int nodes, std::mt19937_64& rng) {
  std::vector<Branch> b;
  std::uniform_real_distribution<double> imp(0.001, 0.05);
  for (int k = 1; k < nodes; ++k) {
    std::uniform_int_distribution<int> parent(0, k - 1);
    const int p = parent(rng);
    Branch br{NodeId{p}, NodeId{k}, imp(rng), imp(rng)};
    if (rng() % 2) std::swap(br.from, br.to);
    b.push_back(br);
  }
  std::shuffle(b.begin(), b.end(), rng);
  return RadialNetwork(nodes, NodeId{0}, b);
}

/// Parent node of every node by breadth-first search over the undirected
/// branch list; independent of RadialNetwork's own indexing.
inline std::vector<int> bfs_parents(const RadialNetwork& net, std::vector<int>* parent_branch = nullptr) {
  const int n = net.node_count();
  std::vector<int> parent(static_cast<std::size_t>(n), -2), pb(static_cast<std::size_t>(n), -1);
  parent[static_cast<std::size_t>(net.root().value)] = -1;
  std::vector<int> queue{net.root().value};
  for (std::size_t h = 0; h < queue.size(); ++h) {
    const int u = queue[h];
    for (int b = 0; b < net.branch_count(); ++b) {
      const auto& br = net.branch(BranchId{b});
      int v = -1;
      if (br.from.value == u) v = br.to.value;
      if (br.to.value == u) v = br.from.value;
      if (v >= 0 && parent[static_cast<std::size_t>(v)] == -2) {
        parent[static_cast<std::size_t>(v)] = u;
        pb[static_cast<std::size_t>(v)] = b;
        queue.push_back(v);
      }
    }
  }
  if (parent_branch) *parent_branch = pb;
  return parent;
}

/// One secondary with `customers` customers hanging off a junction.
inline std::string small_feeder_text(int customers = 2) {
  std::string t =
      "[base]\ns_base_va = 100000\nv_base_primary_v = 13800\nv_base_secondary_v = 240\n"
      "[nodes]\n0 substation abc\n1 primary abc\n2 transformer a\n"
      "[branches]\n0 0 1 0.001 0.002\n1 1 2 0.001 0.002\n"
      "[transformers]\n2 0\n"
      "[secondary 0]\nnode 3 junction a\n";
  for (int c = 0; c < customers; ++c) t += "node " + std::to_string(4 + c) + " customer a\n";
  t += "branch 2 2 3 0.02 0.05\n";
  for (int c = 0; c < customers; ++c)
    t += "branch " + std::to_string(3 + c) + " 3 " + std::to_string(4 + c) + " 0.05 0.02\n";
  for (int c = 0; c < customers; ++c)
    t += "customer " + std::to_string(4 + c) + " meter=" + (c == 0 ? "1" : "0") + " pv=" +
         (c == 1 ? "1" : "0") + "\n";
  return t;
}

}  // namespace hdsse::testing

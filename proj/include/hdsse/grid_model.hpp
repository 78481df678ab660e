#pragma once

#include <complex>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hdsse {

using Complex = std::complex<double>;

struct NodeId {
  std::int32_t value = -1;
  std::size_t index() const { return static_cast<std::size_t>(value); }
  friend auto operator<=>(NodeId, NodeId) = default;
};

struct BranchId {
  std::int32_t value = -1;
  std::size_t index() const { return static_cast<std::size_t>(value); }
  friend auto operator<=>(BranchId, BranchId) = default;
};

enum class NodeRole { Substation, PrimaryJunction, Transformer, SecondaryJunction, Customer };

std::string_view to_string(NodeRole role);

struct Branch {
  NodeId from;
  NodeId to;
  double r = 0.0;  // p.u.
  double x = 0.0;  // p.u.

  Complex impedance() const { return {r, x}; }
};

/// Immutable radial tree over dense node/branch indices.
///
/// Branches are stored oriented away from the root (`from` is the parent side),
/// whatever orientation they were declared with. Branch ids are preserved.
class RadialNetwork {
 public:
  RadialNetwork() = default;
  /// Throws ValidationError naming the first offending branch or node.
  RadialNetwork(int node_count, NodeId root, std::vector<Branch> branches);

  int node_count() const { return node_count_; }
  int branch_count() const { return static_cast<int>(branches_.size()); }
  NodeId root() const { return root_; }

  const Branch& branch(BranchId b) const { return branches_.at(b.index()); }
  std::span<const Branch> branches() const { return branches_; }

  /// Branch feeding `n` from its parent; empty for the root.
  std::optional<BranchId> parent_branch(NodeId n) const;
  std::span<const BranchId> child_branches(NodeId n) const;
  /// Every node, parents before children (root first).
  std::span<const NodeId> topological_order() const { return order_; }
  int depth(NodeId n) const { return depth_.at(n.index()); }

  /// Branches on the root -> n path, root first. Empty for the root.
  std::vector<BranchId> path_to_root(NodeId n) const;
  /// All branches in the subtree below n, sorted by id.
  std::vector<BranchId> downstream_branches(NodeId n) const;

 private:
  void check_node(NodeId n) const;

  int node_count_ = 0;
  NodeId root_{0};
  std::vector<Branch> branches_;
  std::vector<std::int32_t> parent_branch_;
  std::vector<std::vector<BranchId>> children_;
  std::vector<NodeId> order_;
  std::vector<int> depth_;
};

struct BaseValues {
  double s_base_va = 100e3;
  double v_base_primary_v = 13.8e3;
  double v_base_secondary_v = 240.0;
};

// Raw records as they appear in a model file. FeederModel::build validates them.
struct NodeRecord {
  NodeId id;
  NodeRole role = NodeRole::PrimaryJunction;
  std::string phase = "abc";
};

struct BranchRecord {
  BranchId id;
  NodeId from;
  NodeId to;
  double r = 0.0;
  double x = 0.0;
};

struct CustomerRecord {
  NodeId node;
  bool has_meter = false;
  bool has_pv = false;
  double nominal_p = 0.01;  // mean demand, p.u.
  double nominal_q = 0.003;
};

struct SecondaryRecord {
  int id = 0;
  std::vector<NodeRecord> nodes;
  std::vector<BranchRecord> branches;
  std::vector<CustomerRecord> customers;
};

struct TransformerRecord {
  NodeId primary_node;
  int secondary_id = 0;
};

struct FeederDescription {
  BaseValues base;
  std::vector<NodeRecord> nodes;
  std::vector<BranchRecord> branches;
  std::vector<TransformerRecord> transformers;
  std::vector<SecondaryRecord> secondaries;
};

/// One low-voltage circuit below a service transformer.
///
/// Local node 0 is the transformer node (which lives on the primary). Local
/// node k > 0 is `nodes[k]`; local branch k is `branches[k]`.
struct SecondaryCircuit {
  int id = 0;
  NodeId transformer_node;
  std::vector<NodeId> nodes;
  std::vector<BranchId> branches;
  std::vector<CustomerRecord> customers;
  std::vector<NodeId> customer_local;  // local node of each customer
  RadialNetwork network;

  int state_dim() const { return 2 * static_cast<int>(branches.size()); }
  /// Local ids of branches leaving the transformer node.
  std::span<const BranchId> head_branches() const { return network.child_branches(NodeId{0}); }
  std::vector<std::size_t> metered_customers() const;
};

/// The primary feeder alone, with secondaries collapsed onto their transformer nodes.
struct PrimaryView {
  RadialNetwork network;
  std::vector<NodeId> nodes;               // local -> global
  std::vector<BranchId> branches;          // local -> global
  std::vector<std::int32_t> local_of_node; // global -> local, -1 if not primary
  std::vector<NodeId> transformer_local;   // per secondary circuit index
};

class FeederModel {
 public:
  /// Validate and index a description. Throws ValidationError.
  static FeederModel build(FeederDescription description);

  const FeederDescription& description() const { return description_; }
  const BaseValues& base() const { return description_.base; }

  /// Joint primary + secondary tree.
  const RadialNetwork& network() const { return network_; }
  const PrimaryView& primary() const { return primary_; }
  std::span<const SecondaryCircuit> secondaries() const { return secondaries_; }

  int node_count() const { return network_.node_count(); }
  int branch_count() const { return network_.branch_count(); }
  NodeRole role(NodeId n) const { return roles_.at(n.index()); }
  NodeId root() const { return network_.root(); }
  /// Secondary circuit index containing a node, or -1 for primary nodes.
  int circuit_of(NodeId n) const { return circuit_of_.at(n.index()); }

  int customer_count() const;
  int primary_node_count() const { return primary_.network.node_count(); }

 private:
  FeederDescription description_;
  RadialNetwork network_;
  PrimaryView primary_;
  std::vector<SecondaryCircuit> secondaries_;
  std::vector<NodeRole> roles_;
  std::vector<int> circuit_of_;
};

FeederDescription parse_feeder(std::string_view text);
FeederModel load_feeder(const std::filesystem::path& path);
std::string format_feeder(const FeederDescription& description);
void save_feeder(const FeederModel& model, const std::filesystem::path& path);

std::vector<BranchId> path_to_root(const FeederModel& model, NodeId n);
std::vector<BranchId> downstream_branches(const FeederModel& model, NodeId n);

/// Copy of the model with smart meters installed exactly at `metered` customers.
FeederModel with_metering(const FeederModel& model, std::span<const NodeId> metered);

}  // namespace hdsse

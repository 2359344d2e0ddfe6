#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "hiercls/error.hpp"

namespace hiercls {

using NodeId = std::string;

/// Directed acyclic IS-A graph prior to pruning. Node order is first
/// appearance in the input; edges are deduplicated.
class TaxonomyGraph {
 public:
  /// Adds `parent -> child`. Returns false if the edge was already present.
  bool add_edge(const NodeId& parent, const NodeId& child);

  std::size_t node_count() const { return ids_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  bool contains(const NodeId& id) const { return index_.count(id) != 0; }
  int index(const NodeId& id) const;
  const NodeId& id(int node) const { return ids_[node]; }
  const std::vector<int>& parents(int node) const { return parents_[node]; }
  const std::vector<int>& children(int node) const { return children_[node]; }

  /// Nodes with no parents.
  std::vector<int> roots() const;

  /// Kahn order (parents before children). Throws TopologyError on a cycle.
  std::vector<int> topological_order() const;

 private:
  int intern(const NodeId& id);

  std::vector<NodeId> ids_;
  std::unordered_map<NodeId, int> index_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
  std::size_t edge_count_ = 0;
};

/// Rooted class tree. Immutable once built; all queries are const and
/// thread-safe.
///
/// Nodes are addressed by a dense index. Leaves are additionally addressed
/// by their class index, which is the position in `class_ids()`; every
/// vector and matrix in the library uses that order.
class Taxonomy {
 public:
  /// Builds a tree from `(child, parent)` pairs. `class_order` must be a
  /// permutation of the childless nodes. Throws TopologyError when the input
  /// is not a single-rooted tree or an internal non-root node has exactly
  /// one child.
  static Taxonomy from_parent_map(const std::vector<std::pair<NodeId, NodeId>>& child_parent,
                                  const std::vector<NodeId>& class_order);

  std::size_t node_count() const { return ids_.size(); }
  std::size_t class_count() const { return leaves_.size(); }
  int root() const { return root_; }

  const NodeId& id(int node) const { return ids_[node]; }
  /// Throws UnknownNodeError.
  int index(const NodeId& id) const;
  bool contains(const NodeId& id) const { return index_.count(id) != 0; }

  /// -1 for the root.
  int parent(int node) const { return parent_[node]; }
  const std::vector<int>& children(int node) const { return children_[node]; }
  int depth(int node) const { return depth_[node]; }
  /// Longest downward distance to a leaf.
  int height(int node) const { return height_[node]; }
  int tree_height() const { return height_[root_]; }
  bool is_leaf(int node) const { return children_[node].empty(); }

  /// Node index of each class, in class order.
  const std::vector<int>& leaves() const { return leaves_; }
  std::vector<NodeId> class_ids() const;
  int leaf_node(int class_index) const { return leaves_[class_index]; }
  /// -1 for internal nodes.
  int class_index(int node) const { return class_of_[node]; }
  /// Throws UnknownNodeError if `id` is not a leaf.
  int class_index(const NodeId& id) const;

  /// Class indices of the leaves in the subtree rooted at `node`, ascending.
  const std::vector<int>& leaves_under(int node) const { return leaves_under_[node]; }

  /// Non-root nodes in breadth-first order; this is the output layout of
  /// the conditional-probability head.
  const std::vector<int>& non_root_order() const { return non_root_; }
  /// Position of `node` in `non_root_order()`, -1 for the root.
  int non_root_position(int node) const { return non_root_pos_[node]; }

  /// Path from `node` up to (and excluding) the root.
  std::vector<int> lineage(int node) const;

  int lca(int a, int b) const;
  int lca_height(int a, int b) const { return height_[lca(a, b)]; }

  /// LCA height between two classes, from a precomputed table.
  int class_lca_height(int class_a, int class_b) const { return class_lca_height_(class_a, class_b); }
  const Eigen::MatrixXi& class_lca_heights() const { return class_lca_height_; }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b);

 private:
  Taxonomy() = default;
  void finalize();

  std::vector<NodeId> ids_;
  std::unordered_map<NodeId, int> index_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<int> depth_;
  std::vector<int> height_;
  std::vector<int> leaves_;
  std::vector<int> class_of_;
  std::vector<std::vector<int>> leaves_under_;
  std::vector<int> non_root_;
  std::vector<int> non_root_pos_;
  std::vector<std::vector<int>> jump_;  // jump_[k][v]: 2^k-th ancestor, root saturates
  Eigen::MatrixXi class_lca_height_;
  int root_ = -1;
};

struct Reparent {
  NodeId node;
  NodeId new_parent;
};

/// Parses "parent<TAB>child" lines; blank and '#' lines are skipped.
TaxonomyGraph load_edges(std::string_view text);

/// One class id per non-empty, non-comment line.
std::vector<NodeId> load_class_list(std::string_view text);

/// Keeps the longest class-to-root path for each class, then splices out
/// single-child internal nodes. Among several longest paths the one adding
/// the fewest new nodes wins, then the lexicographically smallest id
/// sequence read from class to root.
Taxonomy prune_to_tree(const TaxonomyGraph& graph, const std::vector<NodeId>& classes);

Taxonomy apply_edits(const Taxonomy& taxonomy, const std::vector<Reparent>& edits);

/// Edit list file: "node<TAB>new_parent" per line.
std::vector<Reparent> load_edits(std::string_view text);

NodeId lca(const Taxonomy& t, const NodeId& a, const NodeId& b);
int lca_height(const Taxonomy& t, const NodeId& a, const NodeId& b);
/// lca_height / tree_height, in [0, 1].
double normalized_distance(const Taxonomy& t, const NodeId& a, const NodeId& b);

/// Seeded uniform permutation of `n` items.
std::vector<int> random_permutation(std::size_t n, std::uint64_t seed);

/// Leaf at class position i is relabelled with class `permutation[i]`; the
/// shape and the class order are unchanged.
Taxonomy relabel_leaves(const Taxonomy& t, const std::vector<int>& permutation);

Taxonomy randomize(const Taxonomy& t, std::uint64_t seed);

/// Canonical edge list: a "# classes" line carrying the class order, then
/// edges in depth-first preorder from the root.
std::string export_edges(const Taxonomy& t);

/// Reads an edge list, taking the class order from `classes` when given,
/// else from the "# classes" line, else from leaves in depth-first order.
Taxonomy load_taxonomy(std::string_view text, const std::optional<std::vector<NodeId>>& classes = std::nullopt);

/// FNV-1a of the canonical export, as 16 hex digits.
std::string taxonomy_hash(const Taxonomy& t);

/// Complete tree with `branching` children per internal node and all leaves
/// at `depth`. Ids are "r" for the root and dotted child positions below it.
Taxonomy make_balanced_tree(int branching, int depth);

}  // namespace hiercls

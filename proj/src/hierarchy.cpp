#include "hiercls/hierarchy.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

namespace hiercls {
namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t") == std::string_view::npos;
}

bool is_comment(std::string_view line) { return !line.empty() && line.front() == '#'; }

// Splits "a<TAB>b"; returns false unless there are exactly two non-empty fields.
bool split_pair(std::string_view line, std::string_view& first, std::string_view& second) {
  const std::size_t tab = line.find('\t');
  if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) return false;
  first = line.substr(0, tab);
  second = line.substr(tab + 1);
  return !first.empty() && !second.empty();
}

constexpr std::string_view kClassesTag = "# classes\t";

}  // namespace

// ---------------------------------------------------------------------------
// TaxonomyGraph

int TaxonomyGraph::intern(const NodeId& id) {
  auto [it, inserted] = index_.try_emplace(id, static_cast<int>(ids_.size()));
  if (inserted) {
    ids_.push_back(id);
    parents_.emplace_back();
    children_.emplace_back();
  }
  return it->second;
}

bool TaxonomyGraph::add_edge(const NodeId& parent, const NodeId& child) {
  if (parent.empty() || child.empty()) throw ParseError("empty node identifier", 0);
  const int p = intern(parent);
  const int c = intern(child);
  auto& kids = children_[p];
  if (std::find(kids.begin(), kids.end(), c) != kids.end()) return false;
  kids.push_back(c);
  parents_[c].push_back(p);
  ++edge_count_;
  return true;
}

int TaxonomyGraph::index(const NodeId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UnknownNodeError(id);
  return it->second;
}

std::vector<int> TaxonomyGraph::roots() const {
  std::vector<int> out;
  for (std::size_t v = 0; v < ids_.size(); ++v)
    if (parents_[v].empty()) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<int> TaxonomyGraph::topological_order() const {
  std::vector<int> indegree(ids_.size());
  for (std::size_t v = 0; v < ids_.size(); ++v) indegree[v] = static_cast<int>(parents_[v].size());
  std::deque<int> ready;
  for (std::size_t v = 0; v < ids_.size(); ++v)
    if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
  std::vector<int> order;
  order.reserve(ids_.size());
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (int c : children_[v])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  if (order.size() != ids_.size()) {
    for (std::size_t v = 0; v < ids_.size(); ++v)
      if (indegree[v] > 0) throw TopologyError("cycle through node '" + ids_[v] + "'");
  }
  return order;
}

// ---------------------------------------------------------------------------
// Taxonomy

Taxonomy Taxonomy::from_parent_map(const std::vector<std::pair<NodeId, NodeId>>& child_parent,
                                   const std::vector<NodeId>& class_order) {
  std::vector<NodeId> ids;
  std::unordered_map<NodeId, int> index;
  auto intern = [&](const NodeId& id) {
    auto [it, inserted] = index.try_emplace(id, static_cast<int>(ids.size()));
    if (inserted) ids.push_back(id);
    return it->second;
  };
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [child, parent] : child_parent) {
    if (child.empty() || parent.empty()) throw TopologyError("empty node identifier");
    pairs.emplace_back(intern(child), intern(parent));
  }
  if (pairs.empty()) {
    if (class_order.size() != 1) throw TopologyError("a tree without edges has exactly one class");
    intern(class_order.front());
  }

  const std::size_t n = ids.size();
  std::vector<int> parent(n, -1);
  for (auto [c, p] : pairs) {
    if (c == p) throw TopologyError("cycle through node '" + ids[c] + "'");
    if (parent[c] != -1 && parent[c] != p)
      throw TopologyError("node '" + ids[c] + "' has more than one parent");
    parent[c] = p;
  }
  int root = -1;
  for (std::size_t v = 0; v < n; ++v) {
    if (parent[v] != -1) continue;
    if (root != -1) throw TopologyError("multiple roots: '" + ids[root] + "' and '" + ids[v] + "'");
    root = static_cast<int>(v);
  }
  if (root == -1) throw TopologyError("no root (every node has a parent)");

  std::vector<std::vector<int>> children(n);
  for (std::size_t v = 0; v < n; ++v)
    if (parent[v] != -1) children[parent[v]].push_back(static_cast<int>(v));

  // Breadth-first reachability from the root; anything left over sits on a cycle.
  std::vector<int> bfs{root};
  for (std::size_t i = 0; i < bfs.size(); ++i)
    for (int c : children[bfs[i]]) bfs.push_back(c);
  if (bfs.size() != n) {
    std::vector<char> seen(n, 0);
    for (int v : bfs) seen[v] = 1;
    for (std::size_t v = 0; v < n; ++v)
      if (!seen[v]) throw TopologyError("cycle through node '" + ids[v] + "'");
  }

  std::vector<int> class_of(n, -1);
  for (std::size_t k = 0; k < class_order.size(); ++k) {
    auto it = index.find(class_order[k]);
    if (it == index.end()) throw UnknownNodeError(class_order[k]);
    const int v = it->second;
    if (!children[v].empty()) throw TopologyError("class '" + class_order[k] + "' is not a leaf");
    if (class_of[v] != -1) throw TopologyError("class '" + class_order[k] + "' listed twice");
    class_of[v] = static_cast<int>(k);
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (children[v].empty() && class_of[v] == -1)
      throw TopologyError("leaf '" + ids[v] + "' is not in the class list");
    if (children[v].size() == 1 && static_cast<int>(v) != root)
      throw TopologyError("internal node '" + ids[v] + "' has a single child");
  }

  // Canonical child order: by the smallest class index in each subtree.
  std::vector<int> min_class(n, std::numeric_limits<int>::max());
  for (auto it = bfs.rbegin(); it != bfs.rend(); ++it) {
    const int v = *it;
    if (class_of[v] != -1) min_class[v] = class_of[v];
    if (parent[v] != -1) min_class[parent[v]] = std::min(min_class[parent[v]], min_class[v]);
  }
  for (auto& kids : children)
    std::sort(kids.begin(), kids.end(), [&](int a, int b) { return min_class[a] < min_class[b]; });

  // Renumber nodes in breadth-first order so indices are canonical.
  std::vector<int> order{root};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c : children[order[i]]) order.push_back(c);
  std::vector<int> renum(n);
  for (std::size_t i = 0; i < n; ++i) renum[order[i]] = static_cast<int>(i);

  Taxonomy t;
  t.ids_.resize(n);
  t.parent_.assign(n, -1);
  t.children_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int old = order[i];
    t.ids_[i] = ids[old];
    t.index_.emplace(ids[old], static_cast<int>(i));
    if (parent[old] != -1) t.parent_[i] = renum[parent[old]];
    for (int c : children[old]) t.children_[i].push_back(renum[c]);
  }
  t.root_ = 0;
  t.leaves_.resize(class_order.size());
  for (std::size_t k = 0; k < class_order.size(); ++k) t.leaves_[k] = t.index_.at(class_order[k]);
  t.finalize();
  return t;
}

void Taxonomy::finalize() {
  const std::size_t n = ids_.size();
  // Indices are breadth-first, so parents precede children.
  depth_.assign(n, 0);
  for (std::size_t v = 1; v < n; ++v) depth_[v] = depth_[parent_[v]] + 1;
  height_.assign(n, 0);
  for (std::size_t v = n; v-- > 1;) height_[parent_[v]] = std::max(height_[parent_[v]], height_[v] + 1);

  class_of_.assign(n, -1);
  for (std::size_t k = 0; k < leaves_.size(); ++k) class_of_[leaves_[k]] = static_cast<int>(k);
  leaves_under_.assign(n, {});
  for (std::size_t k = 0; k < leaves_.size(); ++k)
    for (int v = leaves_[k]; v != -1; v = parent_[v]) leaves_under_[v].push_back(static_cast<int>(k));

  non_root_.clear();
  non_root_pos_.assign(n, -1);
  for (std::size_t v = 1; v < n; ++v) {
    non_root_pos_[v] = static_cast<int>(non_root_.size());
    non_root_.push_back(static_cast<int>(v));
  }

  int levels = 1;
  while ((1 << levels) < static_cast<int>(n)) ++levels;
  jump_.assign(levels, std::vector<int>(n));
  for (std::size_t v = 0; v < n; ++v) jump_[0][v] = parent_[v] == -1 ? static_cast<int>(v) : parent_[v];
  for (int k = 1; k < levels; ++k)
    for (std::size_t v = 0; v < n; ++v) jump_[k][v] = jump_[k - 1][jump_[k - 1][v]];

  const auto c = static_cast<Eigen::Index>(leaves_.size());
  class_lca_height_.resize(c, c);
  for (Eigen::Index a = 0; a < c; ++a)
    for (Eigen::Index b = a; b < c; ++b) {
      const int h = height_[lca(leaves_[a], leaves_[b])];
      class_lca_height_(a, b) = h;
      class_lca_height_(b, a) = h;
    }
}

int Taxonomy::index(const NodeId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UnknownNodeError(id);
  return it->second;
}

int Taxonomy::class_index(const NodeId& id) const {
  const int k = class_of_[index(id)];
  if (k < 0) throw UnknownNodeError(id + " (not a class)");
  return k;
}

std::vector<NodeId> Taxonomy::class_ids() const {
  std::vector<NodeId> out;
  out.reserve(leaves_.size());
  for (int v : leaves_) out.push_back(ids_[v]);
  return out;
}

std::vector<int> Taxonomy::lineage(int node) const {
  std::vector<int> out;
  for (int v = node; v != root_; v = parent_[v]) out.push_back(v);
  return out;
}

int Taxonomy::lca(int a, int b) const {
  if (depth_[a] < depth_[b]) std::swap(a, b);
  int diff = depth_[a] - depth_[b];
  for (int k = 0; diff > 0; ++k, diff >>= 1)
    if (diff & 1) a = jump_[k][a];
  if (a == b) return a;
  for (int k = static_cast<int>(jump_.size()) - 1; k >= 0; --k) {
    if (jump_[k][a] != jump_[k][b]) {
      a = jump_[k][a];
      b = jump_[k][b];
    }
  }
  return parent_[a];
}

bool operator==(const Taxonomy& a, const Taxonomy& b) {
  return a.ids_ == b.ids_ && a.parent_ == b.parent_ && a.leaves_ == b.leaves_;
}

// ---------------------------------------------------------------------------
// Parsing

TaxonomyGraph load_edges(std::string_view text) {
  TaxonomyGraph g;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (is_blank(line) || is_comment(line)) continue;
    std::string_view parent, child;
    if (!split_pair(line, parent, child)) throw ParseError("expected 'parent<TAB>child'", i + 1);
    if (parent == child) throw TopologyError("line " + std::to_string(i + 1) + ": self-loop on '" + std::string(parent) + "'");
    g.add_edge(std::string(parent), std::string(child));
  }
  g.topological_order();
  return g;
}

std::vector<NodeId> load_class_list(std::string_view text) {
  std::vector<NodeId> out;
  std::unordered_set<std::string_view> seen;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (is_blank(line) || is_comment(line)) continue;
    if (!seen.insert(line).second) throw ParseError("duplicate class '" + std::string(line) + "'", i + 1);
    out.emplace_back(line);
  }
  return out;
}

std::vector<Reparent> load_edits(std::string_view text) {
  std::vector<Reparent> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (is_blank(line) || is_comment(line)) continue;
    std::string_view node, parent;
    if (!split_pair(line, node, parent)) throw ParseError("expected 'node<TAB>new_parent'", i + 1);
    out.push_back({std::string(node), std::string(parent)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pruning

namespace {

// Splices out every non-root, non-class node with exactly one child.
// `parent` maps node -> parent (root maps to -1); `alive` selects the nodes
// currently in the tree.
void splice_single_children(std::vector<int>& parent, std::vector<char>& alive, int root,
                            const std::vector<char>& is_class) {
  const std::size_t n = parent.size();
  std::vector<int> child_count(n, 0);
  std::vector<int> only_child(n, -1);
  for (std::size_t v = 0; v < n; ++v)
    if (alive[v] && parent[v] != -1) {
      ++child_count[parent[v]];
      only_child[parent[v]] = static_cast<int>(v);
    }
  // A spliced node forwards to the child that took its place.
  std::vector<int> replaced_by(n, -1);
  for (std::size_t v = 0; v < n; ++v) {
    if (!alive[v] || static_cast<int>(v) == root || is_class[v] || child_count[v] != 1) continue;
    int child = only_child[v];
    while (replaced_by[child] != -1) child = replaced_by[child];
    parent[child] = parent[v];
    alive[v] = 0;
    replaced_by[v] = child;
  }
}

}  // namespace

Taxonomy prune_to_tree(const TaxonomyGraph& g, const std::vector<NodeId>& classes) {
  if (classes.empty()) throw TopologyError("empty class list");
  const auto roots = g.roots();
  if (roots.size() != 1) {
    std::string msg = "expected a single root, found " + std::to_string(roots.size());
    if (roots.size() > 1) msg += " ('" + g.id(roots[0]) + "', '" + g.id(roots[1]) + "', ...)";
    throw TopologyError(msg);
  }
  const int root = roots.front();
  const std::size_t n = g.node_count();

  std::vector<char> is_class(n, 0);
  std::vector<int> class_nodes;
  for (const auto& c : classes) {
    if (!g.contains(c)) throw UnknownNodeError(c + " (class not reachable from the root)");
    const int v = g.index(c);
    if (is_class[v]) throw TopologyError("class '" + c + "' listed twice");
    is_class[v] = 1;
    class_nodes.push_back(v);
  }

  // Longest distance from each node up to the root.
  std::vector<int> longest(n, 0);
  for (int v : g.topological_order())
    for (int p : g.parents(v)) longest[v] = std::max(longest[v], longest[p] + 1);

  std::vector<int> tree_parent(n, -1);
  std::vector<char> in_tree(n, 0);

  struct Best {
    int cost = -1;
    std::vector<int> path;  // node first, root last
  };
  auto id_less = [&](int a, int b) { return g.id(a) < g.id(b); };

  for (std::size_t k = 0; k < class_nodes.size(); ++k) {
    const int c = class_nodes[k];
    if (in_tree[c]) throw TopologyError("class '" + classes[k] + "' is an ancestor of another class");

    std::vector<Best> memo(n);
    std::function<const Best&(int)> best = [&](int v) -> const Best& {
      Best& b = memo[v];
      if (b.cost >= 0) return b;
      if (in_tree[v]) {
        b.cost = 0;
        for (int u = v; u != -1; u = tree_parent[u]) b.path.push_back(u);
        return b;
      }
      if (v == root) {
        b.cost = 1;
        b.path = {v};
        return b;
      }
      const Best* pick = nullptr;
      for (int p : g.parents(v)) {
        if (longest[p] != longest[v] - 1) continue;
        const Best& cand = best(p);
        if (!pick || cand.cost < pick->cost ||
            (cand.cost == pick->cost &&
             std::lexicographical_compare(cand.path.begin(), cand.path.end(), pick->path.begin(),
                                          pick->path.end(), id_less)))
          pick = &cand;
      }
      b.cost = pick->cost + 1;
      b.path.reserve(pick->path.size() + 1);
      b.path.push_back(v);
      b.path.insert(b.path.end(), pick->path.begin(), pick->path.end());
      return b;
    };

    const auto path = best(c).path;
    for (std::size_t i = 0; i < path.size(); ++i) {
      const int v = path[i];
      if (in_tree[v]) break;
      in_tree[v] = 1;
      tree_parent[v] = i + 1 < path.size() ? path[i + 1] : -1;
    }
  }

  for (std::size_t v = 0; v < n; ++v)
    if (in_tree[v] && tree_parent[v] != -1 && is_class[tree_parent[v]])
      throw TopologyError("class '" + g.id(tree_parent[v]) + "' is an ancestor of class '" + g.id(v) + "'");

  splice_single_children(tree_parent, in_tree, root, is_class);

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (std::size_t v = 0; v < n; ++v)
    if (in_tree[v] && tree_parent[v] != -1) pairs.emplace_back(g.id(v), g.id(tree_parent[v]));
  return Taxonomy::from_parent_map(pairs, classes);
}

Taxonomy apply_edits(const Taxonomy& t, const std::vector<Reparent>& edits) {
  const std::size_t n = t.node_count();
  std::vector<int> parent(n);
  std::vector<char> alive(n, 1);
  std::vector<char> is_class(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    parent[v] = t.parent(static_cast<int>(v));
    is_class[v] = t.class_index(static_cast<int>(v)) >= 0;
  }
  auto lookup = [&](const NodeId& id) {
    const int v = t.index(id);
    if (!alive[v]) throw UnknownNodeError(id + " (spliced out by an earlier edit)");
    return v;
  };

  for (const auto& edit : edits) {
    const int node = lookup(edit.node);
    const int target = lookup(edit.new_parent);
    if (node == t.root()) throw TopologyError("cannot reparent the root '" + edit.node + "'");
    for (int u = target; u != -1; u = parent[u])
      if (u == node)
        throw TopologyError("reparenting '" + edit.node + "' under '" + edit.new_parent + "' creates a cycle");
    if (is_class[target])
      throw TopologyError("cannot attach '" + edit.node + "' under class '" + edit.new_parent + "'");
    parent[node] = target;
    splice_single_children(parent, alive, t.root(), is_class);
  }

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (std::size_t v = 0; v < n; ++v)
    if (alive[v] && parent[v] != -1) pairs.emplace_back(t.id(static_cast<int>(v)), t.id(parent[v]));
  return Taxonomy::from_parent_map(pairs, t.class_ids());
}

// ---------------------------------------------------------------------------
// Queries

NodeId lca(const Taxonomy& t, const NodeId& a, const NodeId& b) {
  return t.id(t.lca(t.index(a), t.index(b)));
}

int lca_height(const Taxonomy& t, const NodeId& a, const NodeId& b) {
  return t.lca_height(t.index(a), t.index(b));
}

double normalized_distance(const Taxonomy& t, const NodeId& a, const NodeId& b) {
  const int h = lca_height(t, a, b);
  return t.tree_height() == 0 ? 0.0 : static_cast<double>(h) / t.tree_height();
}

std::vector<int> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

Taxonomy relabel_leaves(const Taxonomy& t, const std::vector<int>& permutation) {
  const auto classes = t.class_ids();
  if (permutation.size() != classes.size()) throw Error("permutation size does not match class count");
  std::vector<NodeId> label(t.node_count());
  for (std::size_t v = 0; v < t.node_count(); ++v) label[v] = t.id(static_cast<int>(v));
  for (std::size_t k = 0; k < classes.size(); ++k) label[t.leaf_node(static_cast<int>(k))] = classes.at(permutation[k]);

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (std::size_t v = 0; v < t.node_count(); ++v)
    if (t.parent(static_cast<int>(v)) != -1) pairs.emplace_back(label[v], label[t.parent(static_cast<int>(v))]);
  return Taxonomy::from_parent_map(pairs, classes);
}

Taxonomy randomize(const Taxonomy& t, std::uint64_t seed) {
  return relabel_leaves(t, random_permutation(t.class_count(), seed));
}

// ---------------------------------------------------------------------------
// Export / import

std::string export_edges(const Taxonomy& t) {
  std::string out(kClassesTag);
  const auto classes = t.class_ids();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (k) out += '\t';
    out += classes[k];
  }
  out += '\n';
  std::vector<int> stack{t.root()};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    const auto& kids = t.children(v);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    if (v != t.root()) out += t.id(t.parent(v)) + '\t' + t.id(v) + '\n';
  }
  return out;
}

Taxonomy load_taxonomy(std::string_view text, const std::optional<std::vector<NodeId>>& classes) {
  const TaxonomyGraph g = load_edges(text);
  if (classes) return prune_to_tree(g, *classes);

  for (auto line : split_lines(text)) {
    if (line.substr(0, kClassesTag.size()) != kClassesTag) continue;
    std::vector<NodeId> order;
    std::string_view rest = line.substr(kClassesTag.size());
    while (!rest.empty()) {
      const std::size_t tab = rest.find('\t');
      order.emplace_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    return prune_to_tree(g, order);
  }

  const auto roots = g.roots();
  if (roots.size() != 1) throw TopologyError("expected a single root, found " + std::to_string(roots.size()));
  std::vector<NodeId> order;
  std::vector<char> seen(g.node_count(), 0);
  std::vector<int> stack{roots.front()};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (seen[v]) continue;
    seen[v] = 1;
    const auto& kids = g.children(v);
    if (kids.empty()) order.push_back(g.id(v));
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  return prune_to_tree(g, order);
}

std::string taxonomy_hash(const Taxonomy& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : export_edges(t)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Taxonomy make_balanced_tree(int branching, int depth) {
  if (branching < 2 || depth < 1) throw Error("balanced tree needs branching >= 2 and depth >= 1");
  std::vector<std::pair<NodeId, NodeId>> pairs;
  std::vector<NodeId> level{"r"};
  for (int d = 0; d < depth; ++d) {
    std::vector<NodeId> next;
    for (const auto& p : level)
      for (int i = 0; i < branching; ++i) {
        next.push_back(p + "." + std::to_string(i));
        pairs.emplace_back(next.back(), p);
      }
    level = std::move(next);
  }
  return Taxonomy::from_parent_map(pairs, level);
}

}  // namespace hiercls

#ifndef PROBEGRID_GRAPH_HPP
#define PROBEGRID_GRAPH_HPP

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "node_set.hpp"

namespace probegrid {

/// Undirected edge between buses `u` and `v`.
struct Edge {
    int u = 0;
    int v = 0;

    int lo() const { return std::min(u, v); }
    int hi() const { return std::max(u, v); }
    friend bool operator==(const Edge& a, const Edge& b) { return a.lo() == b.lo() && a.hi() == b.hi(); }
};

/// Rooted spanning tree over nodes 0..N, node 0 being the root (substation).
class TreeGraph {
public:
    TreeGraph() = default;

    /// `parent[0]` must be -1; every other entry names the parent node.
    static TreeGraph from_parents(std::vector<int> parent) {
        const int n = static_cast<int>(parent.size());
        if (n == 0) throw StructuralError("tree must contain the root node");
        if (parent[0] != -1) throw StructuralError("node 0 is the root and cannot have a parent");
        TreeGraph g;
        g.parent_ = std::move(parent);
        g.children_.assign(n, {});
        for (int m = 1; m < n; ++m) {
            const int p = g.parent_[m];
            if (p < 0 || p >= n || p == m)
                throw StructuralError("node " + std::to_string(m) + " has invalid parent " + std::to_string(p));
            g.children_[p].push_back(m);
        }
        // Every node must reach the root; a cycle leaves some nodes unreachable from 0.
        std::vector<int> stack{0};
        int seen = 0;
        while (!stack.empty()) {
            const int m = stack.back();
            stack.pop_back();
            ++seen;
            for (int c : g.children_[m]) stack.push_back(c);
        }
        if (seen != n) throw StructuralError("parent array contains a cycle or is disconnected");
        return g;
    }

    /// Orients an undirected edge list away from node 0.
    static TreeGraph from_edges(int node_count, const std::vector<Edge>& edges) {
        if (static_cast<int>(edges.size()) != node_count - 1)
            throw StructuralError("a spanning tree on " + std::to_string(node_count) + " nodes needs " +
                                  std::to_string(node_count - 1) + " edges, got " +
                                  std::to_string(edges.size()));
        std::vector<std::vector<int>> adj(node_count);
        for (const auto& e : edges) {
            if (e.u < 0 || e.v < 0 || e.u >= node_count || e.v >= node_count || e.u == e.v)
                throw StructuralError("edge endpoint out of range");
            adj[e.u].push_back(e.v);
            adj[e.v].push_back(e.u);
        }
        std::vector<int> parent(node_count, -2);
        parent[0] = -1;
        std::vector<int> stack{0};
        while (!stack.empty()) {
            const int m = stack.back();
            stack.pop_back();
            for (int n : adj[m]) {
                if (n == parent[m]) continue;
                if (parent[n] != -2) throw StructuralError("edge list contains a cycle");
                parent[n] = m;
                stack.push_back(n);
            }
        }
        for (int m = 0; m < node_count; ++m)
            if (parent[m] == -2) throw StructuralError("edge list does not connect node " + std::to_string(m));
        return from_parents(std::move(parent));
    }

    int node_count() const { return static_cast<int>(parent_.size()); }
    /// Number of non-root nodes, N.
    int bus_count() const { return node_count() - 1; }
    int parent(int m) const { return parent_[m]; }
    const std::vector<int>& parents() const { return parent_; }
    const std::vector<int>& children(int m) const { return children_[m]; }

    /// Edges as (parent, child), ordered by child index.
    std::vector<Edge> edges() const {
        std::vector<Edge> out;
        out.reserve(parent_.size());
        for (int m = 1; m < node_count(); ++m) out.push_back({parent_[m], m});
        return out;
    }

    friend bool operator==(const TreeGraph& a, const TreeGraph& b) { return a.parent_ == b.parent_; }

private:
    std::vector<int> parent_;
    std::vector<std::vector<int>> children_;
};

/// Ancestor/descendant/level-set structure of a rooted tree.
///
/// Depth is the edge count from the root (d_0 = 0), so ancestors(m)[k] is the
/// depth-k ancestor and ancestors(m).back() == m.
class LevelSetIndex {
public:
    int node_count() const { return static_cast<int>(depth_.size()); }
    int depth(int m) const { return depth_[m]; }
    const std::vector<int>& ancestors(int m) const { return ancestors_[m]; }
    int ancestor(int m, int k) const { return ancestors_[m][k]; }
    const NodeSet& descendants(int m) const { return descendants_[m]; }
    const NodeSet& leaves() const { return leaves_; }
    bool is_leaf(int m) const { return leaves_.contains(m); }

    /// k-th level set of m: D(alpha_m^k) minus D(alpha_m^{k+1}), and D_m for k = d_m.
    NodeSet level_set(int m, int k) const {
        if (m < 0 || m >= node_count()) throw ArgumentError("node index out of range");
        if (k < 0 || k > depth_[m])
            throw ArgumentError("level " + std::to_string(k) + " outside [0, " + std::to_string(depth_[m]) +
                                "] for node " + std::to_string(m));
        if (k == depth_[m]) return descendants_[m];
        return descendants_[ancestors_[m][k]] - descendants_[ancestors_[m][k + 1]];
    }

    /// All level sets of m, k = 0..d_m.
    std::vector<NodeSet> level_sets(int m) const {
        std::vector<NodeSet> out;
        out.reserve(depth_[m] + 1);
        for (int k = 0; k <= depth_[m]; ++k) out.push_back(level_set(m, k));
        return out;
    }

    friend LevelSetIndex build_index(const TreeGraph& g);

private:
    std::vector<int> depth_;
    std::vector<std::vector<int>> ancestors_;
    std::vector<NodeSet> descendants_;
    NodeSet leaves_;
};

inline LevelSetIndex build_index(const TreeGraph& g) {
    const int n = g.node_count();
    if (n == 0) throw StructuralError("empty tree");
    LevelSetIndex idx;
    idx.depth_.assign(n, 0);
    idx.ancestors_.assign(n, {});
    idx.descendants_.assign(n, NodeSet(n));
    idx.leaves_ = NodeSet(n);

    // Preorder walk: a node's ancestor list extends its parent's.
    std::vector<int> order;
    order.reserve(n);
    std::vector<int> stack{0};
    idx.ancestors_[0] = {0};
    while (!stack.empty()) {
        const int m = stack.back();
        stack.pop_back();
        order.push_back(m);
        for (int c : g.children(m)) {
            idx.depth_[c] = idx.depth_[m] + 1;
            idx.ancestors_[c] = idx.ancestors_[m];
            idx.ancestors_[c].push_back(c);
            stack.push_back(c);
        }
    }
    if (static_cast<int>(order.size()) != n) throw StructuralError("tree is disconnected");

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int m = *it;
        idx.descendants_[m].insert(m);
        if (g.children(m).empty()) idx.leaves_.insert(m);
        if (m != 0) idx.descendants_[g.parent(m)] |= idx.descendants_[m];
    }
    return idx;
}

/// Disjoint-set forest with union by size and path halving.
class UnionFind {
public:
    explicit UnionFind(int n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    /// Returns false if a and b were already connected.
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (size_[a] < size_[b]) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

private:
    std::vector<int> parent_;
    std::vector<int> size_;
};

/// Weighted candidate edge for spanning-tree selection. `id` breaks ties between
/// parallel edges and is reported back to the caller.
struct WeightedEdge {
    int u = 0;
    int v = 0;
    double weight = 0.0;
    int id = 0;
};

/// Kruskal minimum spanning tree over an explicit edge list.
///
/// Ties are broken by (weight, min endpoint, max endpoint, id), so equal-weight
/// inputs always give the same tree. Returns the ids of the selected edges in
/// selection order.
inline std::vector<int> kruskal(int node_count, std::vector<WeightedEdge> edges) {
    std::sort(edges.begin(), edges.end(), [](const WeightedEdge& a, const WeightedEdge& b) {
        return std::make_tuple(a.weight, std::min(a.u, a.v), std::max(a.u, a.v), a.id) <
               std::make_tuple(b.weight, std::min(b.u, b.v), std::max(b.u, b.v), b.id);
    });
    UnionFind uf(node_count);
    std::vector<int> chosen;
    chosen.reserve(node_count > 0 ? node_count - 1 : 0);
    for (const auto& e : edges) {
        if (uf.unite(e.u, e.v)) {
            chosen.push_back(e.id);
            if (static_cast<int>(chosen.size()) == node_count - 1) break;
        }
    }
    if (static_cast<int>(chosen.size()) != node_count - 1)
        throw InfeasibleError("candidate graph is disconnected; no spanning tree exists");
    return chosen;
}

/// Minimum spanning tree of the graph whose edge weights are the off-diagonal
/// entries of `weights`. When `edge_mask` is given, only pairs with a nonzero
/// mask entry are candidates.
inline TreeGraph minimum_spanning_tree(const Eigen::MatrixXd& weights,
                                       const std::optional<Eigen::MatrixXd>& edge_mask = std::nullopt) {
    const int n = static_cast<int>(weights.rows());
    if (weights.cols() != n) throw ArgumentError("weight matrix must be square");
    if (edge_mask && (edge_mask->rows() != n || edge_mask->cols() != n))
        throw ArgumentError("edge mask dimensions do not match the weight matrix");
    std::vector<WeightedEdge> cand;
    cand.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (edge_mask && (*edge_mask)(i, j) == 0.0) continue;
            cand.push_back({i, j, weights(i, j), i * n + j});
        }
    const auto ids = kruskal(n, cand);
    std::vector<Edge> edges;
    edges.reserve(ids.size());
    for (int id : ids) edges.push_back({id / n, id % n});
    return TreeGraph::from_edges(n, edges);
}

}  // namespace probegrid

#endif  // PROBEGRID_GRAPH_HPP

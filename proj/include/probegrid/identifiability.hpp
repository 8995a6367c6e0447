#ifndef PROBEGRID_IDENTIFIABILITY_HPP
#define PROBEGRID_IDENTIFIABILITY_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "feeder.hpp"
#include "graph.hpp"

namespace probegrid {

/// Level sets of bus m read off the column R e_m.
///
/// Buses with equal entries share a level set; sets are ordered by increasing
/// value, which is increasing depth of the shared ancestor.
struct LevelPartition {
    int bus = 0;
    std::vector<NodeSet> sets;   ///< sets[k] = N_m^k, k = 0..depth
    std::vector<double> values;  ///< common R-entry of each set; values[0] == 0
    std::vector<int> level;      ///< level[n] = k with n in N_m^k
    bool separable = true;       ///< false if some gap fell between the tie and separation thresholds

    int depth() const { return static_cast<int>(sets.size()) - 1; }
};

struct GroupingOptions {
    double rel_tol = 1e-9;        ///< entries closer than rel_tol * max|col| are ties
    double separation = 100.0;    ///< distinct entries must differ by separation * tie threshold
};

inline LevelPartition level_sets_from_column(const Eigen::Ref<const VectorXd>& col, int m,
                                             GroupingOptions opt = {}) {
    const int n = static_cast<int>(col.size());
    if (m < 1 || m > n) throw ArgumentError("probed bus out of range");
    const int nodes = n + 1;
    std::vector<double> value(nodes, 0.0);
    for (int i = 1; i <= n; ++i) value[i] = col[i - 1];
    std::vector<int> order(nodes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return value[a] < value[b]; });

    const double tie = opt.rel_tol * std::max(col.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    LevelPartition part;
    part.bus = m;
    part.level.assign(nodes, -1);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const int node = order[i];
        const bool new_group = i == 0 || value[node] - value[order[i - 1]] > tie;
        if (i > 0) {
            const double gap = value[node] - value[order[i - 1]];
            if (gap > tie && gap < opt.separation * tie) part.separable = false;
        }
        if (new_group) {
            part.sets.emplace_back(nodes);
            part.values.push_back(value[node]);
        }
        part.sets.back().insert(node);
        part.level[node] = static_cast<int>(part.sets.size()) - 1;
    }
    // Entries below zero cannot come from a resistance matrix.
    if (part.level[0] != 0 || std::abs(part.values[0]) > tie) part.separable = false;
    part.values[0] = 0.0;
    if (part.level[m] != part.depth()) part.separable = false;  // [R]_mm must be the largest entry
    return part;
}

/// Tree reconstructed from probing columns.
struct RecoveredTree {
    TreeGraph tree;
    std::vector<double> resistance;  ///< resistance of the line feeding node m; NaN where undetermined
    NodeSet unresolved;              ///< nodes hidden below a probed bus, attached to it arbitrarily

    std::vector<Edge> edges() const { return tree.edges(); }
};

namespace detail {

inline RecoveredTree recover_from_columns(const MatrixXd& columns, const std::vector<int>& probed, bool leaves_only,
                                          GroupingOptions opt) {
    const int n = static_cast<int>(columns.rows());
    const int nodes = n + 1;
    const int c = static_cast<int>(probed.size());
    if (columns.cols() != c) throw ArgumentError("one column is needed per probed bus");
    if (c == 0) throw ArgumentError("at least one probed bus is required");

    std::vector<LevelPartition> parts;
    parts.reserve(c);
    for (int i = 0; i < c; ++i) {
        parts.push_back(level_sets_from_column(columns.col(i), probed[i], opt));
        if (!parts.back().separable)
            throw ReconstructionError("column of bus " + std::to_string(probed[i]) +
                                      " does not split into clean level sets");
        if (leaves_only && parts.back().sets.back().size() != 1)
            throw ReconstructionError("bus " + std::to_string(probed[i]) +
                                      " is not a leaf: its top level set has several buses");
    }

    // Buses strictly below a probed bus are invisible to the data.
    NodeSet removed(nodes);
    for (const auto& p : parts) {
        NodeSet below = p.sets.back();
        below.erase(p.bus);
        removed |= below;
    }
    std::vector<int> active;
    for (int i = 0; i < c; ++i)
        if (!removed.contains(probed[i])) active.push_back(i);

    std::vector<int> parent(nodes, -2);
    std::vector<double> resistance(nodes, std::numeric_limits<double>::quiet_NaN());
    parent[0] = -1;
    const double scale = columns.cwiseAbs().maxCoeff();

    for (int wi : active) {
        const auto& pw = parts[wi];
        int prev = -1;
        for (int k = 0; k <= pw.depth(); ++k) {
            // Leaves hanging below the depth-k ancestor of w are those at level >= k in w's partition;
            // the ancestor is the single node common to all their k-th level sets.
            NodeSet common = NodeSet::full(nodes) - removed;
            for (int vi : active) {
                const auto& pv = parts[vi];
                if (pw.level[pv.bus] < k) continue;
                if (pv.depth() < k)
                    throw ReconstructionError("inconsistent depths for buses " + std::to_string(pw.bus) + " and " +
                                              std::to_string(pv.bus));
                common &= pv.sets[k];
            }
            if (common.size() != 1)
                throw ReconstructionError("no unique depth-" + std::to_string(k) + " ancestor for bus " +
                                          std::to_string(pw.bus));
            const int anc = common.first();
            if (k == 0 && anc != 0) throw ReconstructionError("depth-0 ancestor is not the substation");
            if (k > 0) {
                const double r = pw.values[k] - pw.values[k - 1];
                if (parent[anc] == -2) {
                    parent[anc] = prev;
                    resistance[anc] = r;
                } else if (parent[anc] != prev) {
                    throw ReconstructionError("conflicting parents for bus " + std::to_string(anc));
                } else if (std::abs(resistance[anc] - r) > 1e-7 * scale) {
                    throw ReconstructionError("conflicting resistance for the line feeding bus " +
                                              std::to_string(anc));
                }
            }
            prev = anc;
        }
    }

    NodeSet unresolved(nodes);
    for (int x = 1; x < nodes; ++x) {
        if (removed.contains(x)) {
            for (int wi : active)
                if (parts[wi].sets.back().contains(x)) parent[x] = parts[wi].bus;
            unresolved.insert(x);
            continue;
        }
        if (parent[x] == -2)
            throw ReconstructionError("bus " + std::to_string(x) +
                                      " is not an ancestor of any probed bus; probe every leaf");
    }

    RecoveredTree out;
    try {
        out.tree = TreeGraph::from_parents(parent);
    } catch (const StructuralError& e) {
        throw ReconstructionError(std::string("recovered parents do not form a tree: ") + e.what());
    }
    out.resistance = std::move(resistance);
    out.unresolved = std::move(unresolved);
    return out;
}

}  // namespace detail

/// Exact recovery of topology and resistances from R I_F when every leaf is probed.
///
/// Throws ReconstructionError when a listed bus is not a leaf, a leaf is missing,
/// or no tree reproduces the columns.
inline RecoveredTree recover_tree(const MatrixXd& leaf_columns, const std::vector<int>& leaves,
                                  GroupingOptions opt = {}) {
    RecoveredTree out = detail::recover_from_columns(leaf_columns, leaves, true, opt);
    const int n = static_cast<int>(leaf_columns.rows());
    std::vector<double> r(n), x(n, 1.0);
    for (int m = 1; m <= n; ++m) {
        r[m - 1] = out.resistance[m];
        if (!(r[m - 1] > 0.0)) throw ReconstructionError("non-positive resistance recovered for bus " + std::to_string(m));
    }
    const MatrixXd rebuilt = resistance_matrix_path_sum(Feeder::from_tree(out.tree, r, x));
    const double scale = leaf_columns.cwiseAbs().maxCoeff();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const double err = (rebuilt.col(leaves[i] - 1) - leaf_columns.col(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff();
        if (err > 1e-9 * scale)
            throw ReconstructionError("recovered tree does not reproduce the column of bus " + std::to_string(leaves[i]));
    }
    const LevelSetIndex idx = build_index(out.tree);
    NodeSet given(n + 1);
    for (int w : leaves) given.insert(w);
    if (!(idx.leaves() == given)) throw ReconstructionError("leaves of the recovered tree differ from the probed set");
    return out;
}

/// Recovery when the probed buses need not be leaves: the network left after
/// pruning every probed bus's descendants is recovered exactly, and the pruned
/// buses are attached to their probed ancestor (marked unresolved, resistance NaN).
inline RecoveredTree recover_partial_tree(const MatrixXd& columns, const std::vector<int>& probed,
                                          GroupingOptions opt = {}) {
    return detail::recover_from_columns(columns, probed, false, opt);
}

/// Ordered root path and level sets of each probed bus for one configuration.
struct ProbeSignature {
    std::vector<int> ancestors;
    std::vector<int> path_lines;
    std::vector<NodeSet> level_sets;

    friend bool operator==(const ProbeSignature& a, const ProbeSignature& b) {
        return a.ancestors == b.ancestors && a.path_lines == b.path_lines && a.level_sets == b.level_sets;
    }
};

inline ProbeSignature probe_signature(const Feeder& f, const StatusVector& b, int m) {
    const TreeGraph g = f.tree_for(b);
    const LevelSetIndex idx = build_index(g);
    const auto feed = f.feeding_lines_for(b);
    ProbeSignature sig;
    sig.ancestors = idx.ancestors(m);
    for (std::size_t k = 1; k < sig.ancestors.size(); ++k) sig.path_lines.push_back(feed[sig.ancestors[k]]);
    sig.level_sets = idx.level_sets(m);
    return sig;
}

/// All lines have pairwise distinct resistances (relative tolerance).
inline bool check_distinct_resistances(const Feeder& f, double rel_tol = 1e-9) {
    std::vector<double> r;
    for (const auto& ln : f.lines()) r.push_back(ln.r);
    std::sort(r.begin(), r.end());
    for (std::size_t i = 1; i < r.size(); ++i)
        if (r[i] - r[i - 1] <= rel_tol * std::max(std::abs(r[i]), std::abs(r[i - 1]))) return false;
    return true;
}

struct VerifiabilityReport {
    /// confusable[i][j]: configuration j matches the root paths and level sets of
    /// configuration i at every probed bus.
    std::vector<std::vector<bool>> confusable;
    bool distinct_resistances = false;

    bool verifiable() const {
        for (std::size_t i = 0; i < confusable.size(); ++i)
            for (std::size_t j = 0; j < confusable.size(); ++j)
                if (i != j && confusable[i][j]) return false;
        return true;
    }
    /// The path/level-set test characterizes the minimizers only under distinct resistances.
    bool certified() const { return distinct_resistances && verifiable(); }
};

inline VerifiabilityReport check_verifiable(const Feeder& f, const std::vector<StatusVector>& configs,
                                            const std::vector<int>& probed) {
    for (const auto& b : configs)
        if (!f.is_spanning_tree(b)) throw InfeasibleError("candidate configuration is not a spanning tree");
    for (int m : probed)
        if (m < 1 || m > f.bus_count()) throw ArgumentError("probed bus out of range");
    std::vector<std::vector<ProbeSignature>> sig(configs.size());
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (int m : probed) sig[i].push_back(probe_signature(f, configs[i], m));

    VerifiabilityReport rep;
    rep.distinct_resistances = check_distinct_resistances(f);
    rep.confusable.assign(configs.size(), std::vector<bool>(configs.size(), false));
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (std::size_t j = 0; j < configs.size(); ++j) rep.confusable[i][j] = sig[i] == sig[j];
    return rep;
}

}  // namespace probegrid

#endif  // PROBEGRID_IDENTIFIABILITY_HPP

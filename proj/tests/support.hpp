// Shared generators and independent oracles for the test suites.
#ifndef PROBEGRID_TESTS_SUPPORT_HPP
#define PROBEGRID_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "probegrid/feeder.hpp"
#include "probegrid/graph.hpp"

namespace probegrid::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Uniform random recursive tree on nodes 0..n.
inline TreeGraph random_tree(int n, std::mt19937_64& rng) {
    std::vector<int> parent(n + 1, -1);
    for (int m = 1; m <= n; ++m) parent[m] = std::uniform_int_distribution<int>(0, m - 1)(rng);
    // Relabel so that labels are not ordered by attachment time.
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> label(n + 1, 0);
    for (int m = 1; m <= n; ++m) label[m] = perm[m - 1];
    std::vector<int> out(n + 1, -1);
    for (int m = 1; m <= n; ++m) out[label[m]] = label[parent[m]];
    return TreeGraph::from_parents(out);
}

/// n distinct values drawn from [lo, hi).
inline std::vector<double> distinct_values(int n, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out;
    while (static_cast<int>(out.size()) < n) {
        const double v = u(rng);
        bool clash = false;
        for (double w : out) clash = clash || std::abs(v - w) < 1e-6 * (hi - lo);
        if (!clash) out.push_back(v);
    }
    return out;
}

inline Feeder random_tree_feeder(int n, std::mt19937_64& rng) {
    const TreeGraph g = random_tree(n, rng);
    return Feeder::from_tree(g, distinct_values(n, 0.5, 2.0, rng), distinct_values(n, 0.5, 2.0, rng));
}

/// Random tree plus `extra` switchable lines between distinct non-adjacent pairs.
inline Feeder random_candidate_feeder(int n, int extra, std::mt19937_64& rng) {
    const TreeGraph g = random_tree(n, rng);
    std::set<std::pair<int, int>> used;
    for (const auto& e : g.edges()) used.insert({e.lo(), e.hi()});
    extra = std::min(extra, (n + 1) * n / 2 - n);
    const int lines = n + extra;
    const auto r = distinct_values(lines, 0.5, 2.0, rng);
    const auto x = distinct_values(lines, 0.5, 2.0, rng);
    std::vector<Line> cand;
    int id = 0;
    for (const auto& e : g.edges()) {
        cand.push_back({id, e.u, e.v, r[id], x[id], false});
        ++id;
    }
    std::uniform_int_distribution<int> node(0, n);
    while (id < lines) {
        int a = node(rng), b = node(rng);
        if (a == b || used.count({std::min(a, b), std::max(a, b)})) continue;
        used.insert({std::min(a, b), std::max(a, b)});
        cand.push_back({id, a, b, r[id], x[id], true});
        ++id;
    }
    StatusVector status(lines, 0);
    for (int l = 0; l < n; ++l) status[l] = 1;
    return Feeder::unloaded(n, cand, status);
}

/// Level sets straight from the definition: n is in N_m^k when the deepest common
/// ancestor of m and n sits at depth k.
inline std::vector<std::set<int>> brute_level_sets(const TreeGraph& g, int m) {
    auto path = [&](int v) {
        std::vector<int> p;
        for (; v != -1; v = g.parent(v)) p.push_back(v);
        std::reverse(p.begin(), p.end());
        return p;
    };
    const auto pm = path(m);
    std::vector<std::set<int>> out(pm.size());
    for (int v = 0; v < g.node_count(); ++v) {
        const auto pv = path(v);
        std::size_t k = 0;
        while (k + 1 < pm.size() && k + 1 < pv.size() && pm[k + 1] == pv[k + 1]) ++k;
        out[k].insert(v);
    }
    return out;
}

/// Dense minimum-norm solve used to check Sylvester and similar linear maps.
inline VectorXd dense_solve(const MatrixXd& a, const VectorXd& b) { return a.colPivHouseholderQr().solve(b); }

/// Generic projection oracle: argmin 1/2 ||x - y||^2 s.t. G x <= h, E x = d.
///
/// Enumerates every active set of the inequalities, solves the equality-
/// constrained KKT system and keeps the feasible point with valid multipliers.
/// Exponential in the number of inequalities; meant for tiny instances only.
inline std::optional<VectorXd> qp_projection(const VectorXd& y, const MatrixXd& G, const VectorXd& h,
                                             const MatrixXd& E, const VectorXd& d, double tol = 1e-10) {
    const auto n = y.size();
    const auto m = G.rows();
    const auto p = E.rows();
    for (long mask = 0; mask < (1L << m); ++mask) {
        std::vector<Eigen::Index> act;
        for (Eigen::Index i = 0; i < m; ++i)
            if (mask & (1L << i)) act.push_back(i);
        const auto k = static_cast<Eigen::Index>(act.size()) + p;
        MatrixXd C(k, n);
        VectorXd c(k);
        for (std::size_t i = 0; i < act.size(); ++i) {
            C.row(static_cast<Eigen::Index>(i)) = G.row(act[i]);
            c[static_cast<Eigen::Index>(i)] = h[act[i]];
        }
        if (p > 0) {
            C.bottomRows(p) = E;
            c.tail(p) = d;
        }
        MatrixXd K = MatrixXd::Zero(n + k, n + k);
        K.topLeftCorner(n, n).setIdentity();
        K.topRightCorner(n, k) = C.transpose();
        K.bottomLeftCorner(k, n) = C;
        VectorXd rhs(n + k);
        rhs << y, c;
        Eigen::FullPivLU<MatrixXd> lu(K);
        if (!lu.isInvertible()) continue;
        const VectorXd sol = lu.solve(rhs);
        const VectorXd x = sol.head(n);
        const VectorXd mult = sol.tail(k);
        bool ok = true;
        for (Eigen::Index i = 0; i < m && ok; ++i) ok = G.row(i).dot(x) <= h[i] + tol;
        for (std::size_t i = 0; i < act.size() && ok; ++i) ok = mult[static_cast<Eigen::Index>(i)] >= -tol;
        if (ok) return x;
    }
    return std::nullopt;
}

/// Central finite-difference gradient.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
    VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

/// Number of spanning trees by the matrix-tree theorem.
inline double kirchhoff_count(const Feeder& f) {
    const int n = f.bus_count();
    MatrixXd L = MatrixXd::Zero(n, n);
    for (const auto& ln : f.lines()) {
        const int i = ln.from - 1, j = ln.to - 1;
        if (i >= 0) L(i, i) += 1;
        if (j >= 0) L(j, j) += 1;
        if (i >= 0 && j >= 0) {
            L(i, j) -= 1;
            L(j, i) -= 1;
        }
    }
    return L.determinant();
}

}  // namespace probegrid::testing

#endif

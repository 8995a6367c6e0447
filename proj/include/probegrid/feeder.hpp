#ifndef PROBEGRID_FEEDER_HPP
#define PROBEGRID_FEEDER_HPP

#include <cmath>
#include <complex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "graph.hpp"

namespace probegrid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Candidate line with per-unit impedance. `from`/`to` fix the incidence sign.
struct Line {
    int id = 0;
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    bool switchable = false;
};

using StatusVector = std::vector<int>;

/// Radial feeder: candidate lines, their status, and nominal bus loads.
///
/// Buses are 0..N with 0 the substation at v_0 = 1 pu. Loads are consumption,
/// so the injection at bus n is (-p_load[n-1], -q_load[n-1]).
class Feeder {
public:
    Feeder() = default;

    Feeder(int bus_count, std::vector<Line> lines, StatusVector status, VectorXd p_load, VectorXd q_load,
           std::string name = {})
        : name_(std::move(name)),
          bus_count_(bus_count),
          lines_(std::move(lines)),
          status_(std::move(status)),
          p_load_(std::move(p_load)),
          q_load_(std::move(q_load)) {
        validate();
    }

    /// Unloaded feeder; convenient for the theory-only operations.
    static Feeder unloaded(int bus_count, std::vector<Line> lines, StatusVector status) {
        return Feeder(bus_count, std::move(lines), std::move(status), VectorXd::Zero(bus_count),
                      VectorXd::Zero(bus_count));
    }

    /// Feeder whose lines are exactly the given tree; line i feeds child i+1.
    static Feeder from_tree(const TreeGraph& g, const std::vector<double>& r, const std::vector<double>& x) {
        const int n = g.bus_count();
        std::vector<Line> lines;
        lines.reserve(n);
        for (int m = 1; m <= n; ++m) lines.push_back({m - 1, g.parent(m), m, r[m - 1], x[m - 1], false});
        return unloaded(n, std::move(lines), StatusVector(n, 1));
    }

    const std::string& name() const { return name_; }
    /// N: number of buses excluding the substation.
    int bus_count() const { return bus_count_; }
    int node_count() const { return bus_count_ + 1; }
    /// L_e: number of candidate lines.
    int line_count() const { return static_cast<int>(lines_.size()); }
    const std::vector<Line>& lines() const { return lines_; }
    const Line& line(int l) const { return lines_[l]; }
    const StatusVector& status() const { return status_; }
    const VectorXd& p_load() const { return p_load_; }
    const VectorXd& q_load() const { return q_load_; }

    VectorXd resistances() const {
        VectorXd r(line_count());
        for (int l = 0; l < line_count(); ++l) r[l] = lines_[l].r;
        return r;
    }

    /// Same candidate set and loads, different energized configuration.
    Feeder with_status(StatusVector status) const {
        Feeder f = *this;
        f.status_ = std::move(status);
        f.validate();
        return f;
    }

    Feeder with_loads(VectorXd p_load, VectorXd q_load) const {
        Feeder f = *this;
        f.p_load_ = std::move(p_load);
        f.q_load_ = std::move(q_load);
        f.validate();
        return f;
    }

    /// Energized topology rooted at the substation.
    TreeGraph tree() const { return tree_for(status_); }

    TreeGraph tree_for(const StatusVector& b) const {
        std::vector<Edge> edges;
        for (int l = 0; l < line_count(); ++l)
            if (b[l] != 0) edges.push_back({lines_[l].from, lines_[l].to});
        return TreeGraph::from_edges(node_count(), edges);
    }

    /// Index of the energized line feeding each node (entry 0 is -1).
    std::vector<int> feeding_lines() const { return feeding_lines_for(status_); }

    std::vector<int> feeding_lines_for(const StatusVector& b) const {
        const TreeGraph g = tree_for(b);
        std::vector<int> feed(node_count(), -1);
        for (int l = 0; l < line_count(); ++l) {
            if (b[l] == 0) continue;
            const auto& ln = lines_[l];
            const int child = g.parent(ln.to) == ln.from ? ln.to : ln.from;
            feed[child] = l;
        }
        return feed;
    }

    /// True when the lines with b_l = 1 form a spanning tree of the buses.
    bool is_spanning_tree(const StatusVector& b) const {
        if (static_cast<int>(b.size()) != line_count()) return false;
        int count = 0;
        UnionFind uf(node_count());
        for (int l = 0; l < line_count(); ++l) {
            if (b[l] == 0) continue;
            ++count;
            if (!uf.unite(lines_[l].from, lines_[l].to)) return false;
        }
        return count == bus_count_;
    }

private:
    void validate() const {
        if (bus_count_ < 1) throw ArgumentError("feeder needs at least one bus besides the substation");
        if (static_cast<int>(status_.size()) != line_count())
            throw ArgumentError("status vector length differs from the number of candidate lines");
        if (p_load_.size() != bus_count_ || q_load_.size() != bus_count_)
            throw ArgumentError("load vectors must have one entry per bus");
        for (const auto& ln : lines_) {
            if (ln.from < 0 || ln.to < 0 || ln.from > bus_count_ || ln.to > bus_count_ || ln.from == ln.to)
                throw ArgumentError("line " + std::to_string(ln.id) + " has invalid endpoints");
            if (!(ln.r > 0.0) || !(ln.x > 0.0))
                throw ArgumentError("line " + std::to_string(ln.id) + " must have positive r and x");
        }
        for (int b : status_)
            if (b != 0 && b != 1) throw ArgumentError("status entries must be 0 or 1");
        if (!is_spanning_tree(status_))
            throw InfeasibleError("energized lines do not form a spanning tree of the buses");
    }

    std::string name_;
    int bus_count_ = 0;
    std::vector<Line> lines_;
    StatusVector status_;
    VectorXd p_load_;
    VectorXd q_load_;
};

/// Branch-bus incidence split as [a0 | A] over all candidate lines.
struct Incidence {
    MatrixXd A;   ///< L_e x N, columns for buses 1..N
    VectorXd a0;  ///< substation column
};

inline Incidence incidence(const Feeder& f) {
    const int n = f.bus_count();
    Incidence inc{MatrixXd::Zero(f.line_count(), n), VectorXd::Zero(f.line_count())};
    for (int l = 0; l < f.line_count(); ++l) {
        const auto& ln = f.line(l);
        auto put = [&](int bus, double s) {
            if (bus == 0)
                inc.a0[l] = s;
            else
                inc.A(l, bus - 1) = s;
        };
        put(ln.from, 1.0);
        put(ln.to, -1.0);
    }
    return inc;
}

/// Theta(b) = A^T diag(b) diag(r)^-1 A. Singular whenever b is not a spanning tree.
inline MatrixXd reduced_laplacian(const Feeder& f, const Eigen::Ref<const VectorXd>& b) {
    if (b.size() != f.line_count()) throw ArgumentError("status vector length mismatch");
    const int n = f.bus_count();
    MatrixXd theta = MatrixXd::Zero(n, n);
    for (int l = 0; l < f.line_count(); ++l) {
        if (b[l] == 0.0) continue;
        const auto& ln = f.line(l);
        const double g = b[l] / ln.r;
        const int i = ln.from - 1;
        const int j = ln.to - 1;
        if (i >= 0) theta(i, i) += g;
        if (j >= 0) theta(j, j) += g;
        if (i >= 0 && j >= 0) {
            theta(i, j) -= g;
            theta(j, i) -= g;
        }
    }
    return theta;
}

inline MatrixXd reduced_laplacian(const Feeder& f, const StatusVector& b) {
    VectorXd bv(static_cast<Eigen::Index>(b.size()));
    for (std::size_t l = 0; l < b.size(); ++l) bv[static_cast<Eigen::Index>(l)] = b[l];
    return reduced_laplacian(f, bv);
}

inline MatrixXd reduced_laplacian(const Feeder& f) { return reduced_laplacian(f, f.status()); }

namespace detail {

inline MatrixXd weighted_laplacian_inverse(const Feeder& f, bool use_reactance) {
    const int n = f.bus_count();
    MatrixXd theta = MatrixXd::Zero(n, n);
    for (int l = 0; l < f.line_count(); ++l) {
        if (f.status()[l] == 0) continue;
        const auto& ln = f.line(l);
        const double g = 1.0 / (use_reactance ? ln.x : ln.r);
        const int i = ln.from - 1;
        const int j = ln.to - 1;
        if (i >= 0) theta(i, i) += g;
        if (j >= 0) theta(j, j) += g;
        if (i >= 0 && j >= 0) {
            theta(i, j) -= g;
            theta(j, i) -= g;
        }
    }
    Eigen::LLT<MatrixXd> llt(theta);
    if (llt.info() != Eigen::Success) throw InfeasibleError("reduced Laplacian is singular");
    MatrixXd inv = llt.solve(MatrixXd::Identity(n, n));
    return 0.5 * (inv + inv.transpose());
}

}  // namespace detail

/// R_o = Theta_o^-1 via dense Cholesky.
inline MatrixXd resistance_matrix(const Feeder& f) { return detail::weighted_laplacian_inverse(f, false); }

inline MatrixXd reactance_matrix(const Feeder& f) { return detail::weighted_laplacian_inverse(f, true); }

/// R_o from shared root paths: [R]_mn sums r over lines whose both ends lie in A_m and A_n.
inline MatrixXd resistance_matrix_path_sum(const Feeder& f) {
    const TreeGraph g = f.tree();
    const auto feed = f.feeding_lines();
    const int n = f.bus_count();
    // Resistance from the root to every node, accumulated down the tree.
    std::vector<double> to_root(f.node_count(), 0.0);
    const LevelSetIndex idx = build_index(g);
    for (int m = 1; m <= n; ++m) {
        double s = 0.0;
        for (int k = 1; k <= idx.depth(m); ++k) s += f.line(feed[idx.ancestor(m, k)]).r;
        to_root[m] = s;
    }
    MatrixXd R(n, n);
    for (int m = 1; m <= n; ++m) {
        const auto& am = idx.ancestors(m);
        for (int q = m; q <= n; ++q) {
            const auto& aq = idx.ancestors(q);
            int k = 0;
            while (k + 1 < static_cast<int>(am.size()) && k + 1 < static_cast<int>(aq.size()) &&
                   am[k + 1] == aq[k + 1])
                ++k;
            R(m - 1, q - 1) = R(q - 1, m - 1) = to_root[am[k]];
        }
    }
    return R;
}

/// Sensitivities of the linearized model for the feeder's energized configuration.
struct SensitivityModel {
    MatrixXd R;
    MatrixXd X;
    MatrixXd Theta;
    Incidence incidence;
};

inline SensitivityModel build_sensitivity(const Feeder& f) {
    return {resistance_matrix(f), reactance_matrix(f), reduced_laplacian(f), incidence(f)};
}

/// Full (N+1)x(N+1) Laplacian from its reduced form; rows of the result sum to zero.
inline MatrixXd lift_phi(const MatrixXd& theta) {
    const auto n = theta.rows();
    if (theta.cols() != n) throw ArgumentError("lift_phi expects a square matrix");
    MatrixXd full(n + 1, n + 1);
    const VectorXd row_sums = theta.rowwise().sum();
    const Eigen::RowVectorXd col_sums = theta.colwise().sum();
    full(0, 0) = row_sums.sum();
    full.block(0, 1, 1, n) = -col_sums;
    full.block(1, 0, n, 1) = -row_sums;
    full.block(1, 1, n, n) = theta;
    return full;
}

/// v = R p + X q + 1.
inline VectorXd lindistflow_voltage(const SensitivityModel& model, const VectorXd& p, const VectorXd& q) {
    return model.R * p + model.X * q + VectorXd::Ones(p.size());
}

inline VectorXd lindistflow_voltage(const Feeder& f, const VectorXd& p, const VectorXd& q) {
    return resistance_matrix(f) * p + reactance_matrix(f) * q + VectorXd::Ones(p.size());
}

struct AcOptions {
    double tol = 1e-10;
    int max_iter = 100;
};

/// Voltage magnitudes from the full single-phase AC model, solved with a
/// backward/forward sweep from a flat start. p and q are bus injections.
inline VectorXd ac_voltage(const Feeder& f, const VectorXd& p, const VectorXd& q, AcOptions opt = {}) {
    using cd = std::complex<double>;
    const int n = f.bus_count();
    if (p.size() != n || q.size() != n) throw ArgumentError("injection vectors must have one entry per bus");
    const TreeGraph g = f.tree();
    const auto feed = f.feeding_lines();

    // Preorder so parents precede children in the forward sweep.
    std::vector<int> order;
    order.reserve(f.node_count());
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const int m = stack.back();
        stack.pop_back();
        order.push_back(m);
        for (int c : g.children(m)) stack.push_back(c);
    }

    std::vector<cd> v(f.node_count(), cd{1.0, 0.0});
    std::vector<cd> branch(f.node_count());
    for (int it = 0; it < opt.max_iter; ++it) {
        // Backward: current drawn through the line feeding each node.
        for (auto o = order.rbegin(); o != order.rend(); ++o) {
            const int m = *o;
            if (m == 0) continue;
            cd j = -std::conj(cd{p[m - 1], q[m - 1]} / v[m]);
            for (int c : g.children(m)) j += branch[c];
            branch[m] = j;
        }
        double delta = 0.0;
        for (int m : order) {
            if (m == 0) continue;
            const auto& ln = f.line(feed[m]);
            const cd updated = v[g.parent(m)] - cd{ln.r, ln.x} * branch[m];
            delta = std::max(delta, std::abs(updated - v[m]));
            v[m] = updated;
        }
        if (!std::isfinite(delta)) break;
        if (delta < opt.tol) {
            VectorXd mag(n);
            for (int m = 1; m <= n; ++m) mag[m - 1] = std::abs(v[m]);
            return mag;
        }
    }
    throw SolverError("backward/forward sweep did not converge in " + std::to_string(opt.max_iter) +
                      " iterations");
}

}  // namespace probegrid

#endif  // PROBEGRID_FEEDER_HPP

#ifndef PROBEGRID_VERIFY_HPP
#define PROBEGRID_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "feeder.hpp"
#include "graph.hpp"
#include "identify.hpp"
#include "probing.hpp"

namespace probegrid {

/// Line-status detection: which candidate lines are energized, impedances known.
struct VerifyProblem {
    Feeder feeder;
    ProbingDataset data;
    double mu = 2e-8;   ///< log-det barrier weight
    double nu = 1e-10;  ///< PGD step size; <= 0 selects 1 / (trace of the Gauss-Newton Hessian)
};

/// Every spanning tree of the candidate graph, as status vectors.
///
/// Depth-first include/exclude over the lines; a branch is cut as soon as an
/// included line closes a cycle or the remaining lines cannot connect the buses.
inline std::vector<StatusVector> enumerate_spanning_trees(const Feeder& f, std::int64_t limit = 1000000) {
    const int lines = f.line_count();
    const int need = f.bus_count();
    std::vector<StatusVector> out;
    StatusVector b(lines, 0);

    auto connected_with = [&](int from_line) {
        UnionFind uf(f.node_count());
        int comps = f.node_count();
        for (int l = 0; l < lines; ++l)
            if ((l < from_line && b[l] != 0) || l >= from_line)
                if (uf.unite(f.line(l).from, f.line(l).to)) --comps;
        return comps == 1;
    };
    auto acyclic = [&](int upto) {
        UnionFind uf(f.node_count());
        for (int l = 0; l <= upto; ++l)
            if (b[l] != 0 && !uf.unite(f.line(l).from, f.line(l).to)) return false;
        return true;
    };

    if (!connected_with(0)) throw InfeasibleError("candidate graph is disconnected");

    auto rec = [&](auto&& self, int l, int chosen) -> void {
        if (chosen == need) {
            out.push_back(b);
            if (static_cast<std::int64_t>(out.size()) > limit)
                throw InfeasibleError("more than " + std::to_string(limit) +
                                      " radial configurations; use the relaxed PGD verifier");
            return;
        }
        if (l == lines || chosen + (lines - l) < need) return;
        b[l] = 1;
        if (acyclic(l)) self(self, l + 1, chosen + 1);
        b[l] = 0;
        if (connected_with(l + 1)) self(self, l + 1, chosen);
    };
    rec(rec, 0, 0);
    std::fill(b.begin(), b.end(), 0);
    return out;
}

inline VectorXd to_vector(const StatusVector& b) {
    VectorXd v(static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < b.size(); ++i) v[static_cast<Eigen::Index>(i)] = b[i];
    return v;
}

/// ||Theta(b) V - I_C Delta||_W^2.
inline double detection_objective(const VerifyProblem& prob, const VectorXd& b) {
    const MatrixXd r = reduced_laplacian(prob.feeder, b) * prob.data.V - prob.data.injections();
    return (r.transpose() * prob.data.W * r).trace();
}

struct ExhaustiveResult {
    std::vector<StatusVector> configs;
    std::vector<double> objective;
    std::vector<int> minimizers;  ///< indices tied with the best objective
    StatusVector best;

    bool unique() const { return minimizers.size() == 1; }
};

/// Evaluates the detection cost over every radial configuration.
/// Ties within `tie_rel_tol * ||I_C Delta||_W^2` of the minimum are all reported.
inline ExhaustiveResult exhaustive_verify(const VerifyProblem& prob, std::int64_t limit = 1000000,
                                          double tie_rel_tol = 1e-10) {
    ExhaustiveResult res;
    res.configs = enumerate_spanning_trees(prob.feeder, limit);
    res.objective.reserve(res.configs.size());
    for (const auto& b : res.configs) res.objective.push_back(detection_objective(prob, to_vector(b)));
    const MatrixXd d = prob.data.injections();
    const double scale = (d.transpose() * prob.data.W * d).trace();
    const double best = *std::min_element(res.objective.begin(), res.objective.end());
    for (std::size_t i = 0; i < res.objective.size(); ++i)
        if (res.objective[i] <= best + tie_rel_tol * scale) res.minimizers.push_back(static_cast<int>(i));
    res.best = res.configs[res.minimizers.front()];
    return res;
}

/// 1/2 ||Theta(b) V - I_C Delta||_W^2 - mu log det Theta(b); +inf outside the PD cone.
inline double verification_objective(const VerifyProblem& prob, const VectorXd& b) {
    const MatrixXd theta = reduced_laplacian(prob.feeder, b);
    const MatrixXd r = theta * prob.data.V - prob.data.injections();
    const double fit = 0.5 * (r.transpose() * prob.data.W * r).trace();
    if (prob.mu == 0.0) return fit;
    const auto ld = log_det_pd(theta);
    if (!ld) return std::numeric_limits<double>::infinity();
    return fit - prob.mu * *ld;
}

/// g_l = a_l^T [V (Theta(b) V - I_C Delta)^T W - mu Theta(b)^-1] a_l / r_l.
inline VectorXd verification_gradient(const VerifyProblem& prob, const VectorXd& b) {
    const Feeder& f = prob.feeder;
    const MatrixXd theta = reduced_laplacian(f, b);
    MatrixXd core = prob.data.V * (theta * prob.data.V - prob.data.injections()).transpose() * prob.data.W;
    if (prob.mu != 0.0) {
        Eigen::LLT<MatrixXd> llt(theta);
        if (llt.info() != Eigen::Success) throw SolverError("Theta(b) is not positive definite");
        core -= prob.mu * llt.solve(MatrixXd::Identity(theta.rows(), theta.cols()));
    }
    VectorXd g(f.line_count());
    for (int l = 0; l < f.line_count(); ++l) {
        const auto& ln = f.line(l);
        // a_l has +1 at `from` and -1 at `to`; the substation column is dropped.
        const int i = ln.from - 1;
        const int j = ln.to - 1;
        double q = 0.0;
        if (i >= 0) q += core(i, i);
        if (j >= 0) q += core(j, j);
        if (i >= 0 && j >= 0) q -= core(i, j) + core(j, i);
        g[l] = q / ln.r;
    }
    return g;
}

/// Euclidean projection onto {b in [0,1]^L : 1^T b = N}.
///
/// Bisection on the multiplier of the sum constraint, b(t) = clip(y - t, 0, 1),
/// followed by an exact solve for t on the final free set.
inline VectorXd project_capped_simplex(const VectorXd& y, int n) {
    const auto len = y.size();
    if (n < 0 || n > len) throw ArgumentError("capped simplex needs 0 <= N <= L");
    if (n == len) return VectorXd::Ones(len);
    if (n == 0) return VectorXd::Zero(len);
    auto clipped = [&](double t) { return (y.array() - t).min(1.0).max(0.0).matrix().eval(); };
    double lo = y.minCoeff() - 1.0;  // sum = L
    double hi = y.maxCoeff();        // sum = 0
    for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (clipped(mid).sum() > n)
            lo = mid;
        else
            hi = mid;
    }
    double t = 0.5 * (lo + hi);
    VectorXd b = clipped(t);
    // Entries strictly inside (0,1) are y - t; solve for t so the sum is exact.
    int free_count = 0;
    double free_sum = 0.0;
    double fixed = 0.0;
    for (Eigen::Index i = 0; i < len; ++i) {
        if (b[i] >= 1.0)
            fixed += 1.0;
        else if (b[i] > 0.0) {
            ++free_count;
            free_sum += y[i];
        }
    }
    if (free_count > 0) {
        const double exact = (free_sum + fixed - n) / free_count;
        const VectorXd refined = clipped(exact);
        if (std::abs(refined.sum() - n) <= std::abs(b.sum() - n)) b = refined;
    }
    return b;
}

struct PgdOptions {
    int max_iter = 5000;
    double tol = 1e-10;        ///< stop when max |b^{k+1} - b^k| falls below this
    double step_growth = 1.0;  ///< factor applied to the step after an accepted iteration
    int max_halvings = 80;
    bool record_history = false;
};

struct PgdResult {
    VectorXd b;
    int iterations = 0;
    bool converged = false;
    double step = 0.0;
    double objective = 0.0;
    std::vector<double> history;
};

/// Step 1 / trace(J^T J) of the Gauss-Newton Hessian of the data term.
inline double default_pgd_step(const VerifyProblem& prob) {
    const Feeder& f = prob.feeder;
    const MatrixXd& w = prob.data.W;
    const MatrixXd vg = prob.data.V * prob.data.V.transpose();
    double tr = 0.0;
    for (int l = 0; l < f.line_count(); ++l) {
        const auto& ln = f.line(l);
        VectorXd a = VectorXd::Zero(f.bus_count());
        if (ln.from > 0) a[ln.from - 1] = 1.0;
        if (ln.to > 0) a[ln.to - 1] = -1.0;
        tr += a.dot(w * a) * a.dot(vg * a) / (ln.r * ln.r);
    }
    return tr > 0.0 ? 1.0 / tr : 1.0;
}

/// Projected gradient descent on the relaxed detection problem over the capped simplex.
///
/// A trial step that leaves the PD cone or increases the cost is halved and retried.
inline PgdResult pgd_verify(const VerifyProblem& prob, std::optional<VectorXd> b0 = std::nullopt,
                            const PgdOptions& opt = {}) {
    const int lines = prob.feeder.line_count();
    const int n = prob.feeder.bus_count();
    if (lines < n) throw ArgumentError("fewer candidate lines than buses");
    VectorXd b = b0 ? *b0 : VectorXd::Constant(lines, static_cast<double>(n) / lines);
    if (b.size() != lines) throw ArgumentError("initial status vector has the wrong length");
    if ((b.array() < -1e-12).any() || (b.array() > 1 + 1e-12).any() || std::abs(b.sum() - n) > 1e-9)
        throw ArgumentError("initial point is not in the capped simplex");

    PgdResult res;
    double f_cur = verification_objective(prob, b);
    if (!std::isfinite(f_cur)) throw ArgumentError("Theta(b0) is not positive definite");
    double step = prob.nu > 0.0 ? prob.nu : default_pgd_step(prob);
    if (opt.record_history) res.history.push_back(f_cur);

    for (int k = 1; k <= opt.max_iter; ++k) {
        const VectorXd g = verification_gradient(prob, b);
        VectorXd trial;
        double f_trial = std::numeric_limits<double>::infinity();
        int halvings = 0;
        bool stalled = false;
        for (;;) {
            trial = project_capped_simplex(b - step * g, n);
            f_trial = verification_objective(prob, trial);
            if (std::isfinite(f_trial) && f_trial <= f_cur) break;
            if (++halvings > opt.max_halvings) {
                stalled = true;
                break;
            }
            step *= 0.5;
        }
        if (stalled) {
            // No step along the projected gradient decreases the cost: b is stationary.
            res.iterations = k - 1;
            res.converged = true;
            break;
        }
        const double move = (trial - b).cwiseAbs().maxCoeff();
        b = std::move(trial);
        f_cur = f_trial;
        res.iterations = k;
        if (opt.record_history) res.history.push_back(f_cur);
        if (move <= opt.tol) {
            res.converged = true;
            break;
        }
        step *= opt.step_growth;
    }
    res.b = std::move(b);
    res.step = step;
    res.objective = f_cur;
    return res;
}

enum class RoundingStrategy { TopN, Mst };

struct RoundedStatus {
    StatusVector b;
    bool is_tree = false;
};

/// Binary status from a relaxed solution: the N largest entries, or the maximum
/// weight spanning tree with the relaxed entries as weights.
inline RoundedStatus round_status(const VectorXd& relaxed, const Feeder& f, RoundingStrategy strategy) {
    const int lines = f.line_count();
    const int n = f.bus_count();
    if (relaxed.size() != lines) throw ArgumentError("relaxed status has the wrong length");
    RoundedStatus out;
    out.b.assign(lines, 0);
    if (strategy == RoundingStrategy::TopN) {
        std::vector<int> order(lines);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return relaxed[a] > relaxed[b]; });
        for (int i = 0; i < n; ++i) out.b[order[i]] = 1;
    } else {
        std::vector<WeightedEdge> cand;
        cand.reserve(lines);
        for (int l = 0; l < lines; ++l) cand.push_back({f.line(l).from, f.line(l).to, -relaxed[l], l});
        for (int l : kruskal(f.node_count(), cand)) out.b[l] = 1;
    }
    out.is_tree = f.is_spanning_tree(out.b);
    return out;
}

}  // namespace probegrid

#endif  // PROBEGRID_VERIFY_HPP

#ifndef PROBEGRID_IDENTIFY_HPP
#define PROBEGRID_IDENTIFY_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "feeder.hpp"
#include "graph.hpp"
#include "probing.hpp"

namespace probegrid {

/// Prior line-status knowledge over the full node set 0..N.
/// A zero at (m, n) means line (m, n) is known to be de-energized.
class PriorMask {
public:
    PriorMask() = default;
    explicit PriorMask(MatrixXd gamma) : gamma_(std::move(gamma)) {
        if (gamma_.rows() != gamma_.cols()) throw ArgumentError("prior mask must be square");
        if (!gamma_.isApprox(gamma_.transpose(), 0.0)) throw ArgumentError("prior mask must be symmetric");
    }

    /// No prior information: Gamma = 1 1^T.
    static PriorMask none(int bus_count) { return PriorMask(MatrixXd::Ones(bus_count + 1, bus_count + 1)); }

    int bus_count() const { return static_cast<int>(gamma_.rows()) - 1; }
    const MatrixXd& matrix() const { return gamma_; }
    /// Whether the (reduced-index) pair of buses i, j (0-based, bus i+1) may be connected.
    bool allows(int i, int j) const { return gamma_(i + 1, j + 1) != 0.0; }
    /// Whether bus i+1 may connect to the substation.
    bool allows_root(int i) const { return gamma_(0, i + 1) != 0.0; }

private:
    MatrixXd gamma_;
};

struct MembershipReport {
    bool member = true;
    std::vector<std::string> violations;
};

/// Tests Theta in M: symmetric, sign/zero pattern of S(Gamma), row-sum conditions of S0(Gamma).
inline MembershipReport membership_M(const MatrixXd& theta, const PriorMask& mask, double tol = 1e-12) {
    const int n = static_cast<int>(theta.rows());
    if (theta.cols() != n || mask.bus_count() != n) throw ArgumentError("dimension mismatch in membership test");
    const double eps = tol * std::max(1.0, theta.cwiseAbs().maxCoeff());
    MembershipReport rep;
    auto fail = [&](std::string msg) {
        rep.member = false;
        rep.violations.push_back(std::move(msg));
    };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double v = theta(i, j);
            if (std::abs(v - theta(j, i)) > eps)
                fail("asymmetric entry (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
            if (mask.allows(i, j) && v > eps)
                fail("positive off-diagonal (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
            if (!mask.allows(i, j) && std::abs(v) > eps)
                fail("masked entry nonzero (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
        }
    const VectorXd rows = theta.rowwise().sum();
    for (int i = 0; i < n; ++i) {
        if (mask.allows_root(i) && rows[i] < -eps)
            fail("negative row sum at bus " + std::to_string(i + 1));
        if (!mask.allows_root(i) && std::abs(rows[i]) > eps)
            fail("nonzero row sum at bus " + std::to_string(i + 1) + " with masked substation line");
    }
    return rep;
}

/// Euclidean projection onto S(Gamma): clip allowed off-diagonals to <= 0,
/// zero the masked ones, keep the diagonal.
inline MatrixXd project_S(const MatrixXd& y, const PriorMask& mask) {
    const int n = static_cast<int>(y.rows());
    MatrixXd out = y;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            if (i == j) continue;
            out(i, j) = mask.allows(i, j) ? std::min(y(i, j), 0.0) : 0.0;
        }
    return out;
}

/// Row-wise projection onto {e_n^T Theta 1 >= 0} (or = 0 for masked substation lines).
inline MatrixXd project_S0(const MatrixXd& y, const PriorMask& mask) {
    const int n = static_cast<int>(y.rows());
    MatrixXd out = y;
    for (int i = 0; i < n; ++i) {
        const double s = y.row(i).sum();
        const double shift = mask.allows_root(i) ? std::min(s, 0.0) : s;
        out.row(i).array() -= shift / n;
    }
    return out;
}

/// Solves W X G + 3 rho X = C for fixed PD W and PSD G.
///
/// Both matrices are diagonalized once (W = P diag(w) P^T, G = U diag(g) U^T);
/// each solve is then two similarity transforms and an elementwise division by
/// w_i g_j + 3 rho.
class SylvesterSolver {
public:
    SylvesterSolver(const MatrixXd& w, const MatrixXd& gram, double rho) : rho_(rho) {
        if (!(rho > 0.0)) throw ArgumentError("rho must be positive");
        Eigen::SelfAdjointEigenSolver<MatrixXd> ew(0.5 * (w + w.transpose()));
        if (ew.info() != Eigen::Success || ew.eigenvalues().minCoeff() <= 0.0)
            throw ArgumentError("weighting matrix must be positive definite");
        Eigen::SelfAdjointEigenSolver<MatrixXd> eg(0.5 * (gram + gram.transpose()));
        if (eg.info() != Eigen::Success) throw SolverError("eigendecomposition of the Gram matrix failed");
        p_ = ew.eigenvectors();
        u_ = eg.eigenvectors();
        const VectorXd g = eg.eigenvalues().cwiseMax(0.0);
        wg_ = ew.eigenvalues() * g.transpose();
        set_rho(rho);
    }

    double rho() const { return rho_; }

    void set_rho(double rho) {
        if (!(rho > 0.0)) throw ArgumentError("rho must be positive");
        rho_ = rho;
        denom_ = wg_.array() + 3.0 * rho_;
    }

    MatrixXd solve(const MatrixXd& c) const {
        MatrixXd x = p_.transpose() * c * u_;
        x.array() /= denom_.array();
        return p_ * x * u_.transpose();
    }

private:
    double rho_;
    MatrixXd p_;
    MatrixXd u_;
    MatrixXd wg_;
    MatrixXd denom_;
};

inline MatrixXd sylvester_solve(const MatrixXd& w, const MatrixXd& gram, double rho, const MatrixXd& c) {
    return SylvesterSolver(w, gram, rho).solve(c);
}

/// I + 1 1^T.
inline MatrixXd sparsity_weight(int n) { return MatrixXd::Identity(n, n) + MatrixXd::Ones(n, n); }

/// log det of a symmetric matrix, or nullopt if it is not positive definite.
inline std::optional<double> log_det_pd(const MatrixXd& a) {
    Eigen::LLT<MatrixXd> llt(0.5 * (a + a.transpose()));
    if (llt.info() != Eigen::Success) return std::nullopt;
    const VectorXd d = llt.matrixLLT().diagonal();
    // Rounding-level pivots count as singular.
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * a.diagonal().cwiseAbs().maxCoeff();
    if (d.minCoeff() <= 0.0 || d.cwiseAbs2().minCoeff() <= floor) return std::nullopt;
    return 2.0 * d.array().log().sum();
}

/// Cost of the relaxed identification problem:
/// 1/2 ||Theta V - I_C Delta||_W^2 + lambda tr(Theta Pi) - mu log det Theta.
/// Returns +inf outside the positive definite cone.
inline double identification_objective(const ProbingDataset& ds, const MatrixXd& theta, double lambda, double mu) {
    const MatrixXd r = theta * ds.V - ds.injections();
    const double fit = 0.5 * (r.transpose() * ds.W * r).trace();
    const double sparsity = lambda * (theta * sparsity_weight(static_cast<int>(theta.rows()))).trace();
    if (mu == 0.0) return fit + sparsity;
    const auto ld = log_det_pd(theta);
    if (!ld) return std::numeric_limits<double>::infinity();
    return fit + sparsity - mu * *ld;
}

/// Gradient of identification_objective with respect to the entries of Theta.
inline MatrixXd identification_gradient(const ProbingDataset& ds, const MatrixXd& theta, double lambda, double mu) {
    const int n = static_cast<int>(theta.rows());
    MatrixXd g = ds.W * (theta * ds.V - ds.injections()) * ds.V.transpose() + lambda * sparsity_weight(n);
    if (mu != 0.0) g -= mu * theta.inverse().transpose();
    return g;
}

struct AdmmOptions {
    double lambda = 5e-3;
    double mu = 1.0;
    double rho = 1.0;
    double primal_tol = 1e-7;  ///< scaled by N and max(1, ||Theta_1||_F)
    double dual_tol = 1e-7;    ///< scaled by N and max(1, rho ||(M2, M3, M4)||_F)
    int max_iter = 50000;
    bool record_history = false;
    int history_stride = 1;
    /// Assert after every z-update that each copy lies in its constraint set.
    bool check_constraints = false;
    /// Residual balancing: rescale rho by 2 when one residual exceeds 10x the other.
    bool adaptive_rho = false;
    int adapt_every = 50;
    std::optional<MatrixXd> initial;
};

/// Iterates of the four-copy splitting.
struct AdmmState {
    MatrixXd theta1, theta2, theta3, theta4;
    MatrixXd m2, m3, m4;
    double rho = 1.0;
    double lambda = 0.0;
    double mu = 0.0;
    MatrixXd pi;
    int iteration = 0;
};

struct AdmmIterate {
    int iteration = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double objective = 0.0;
};

struct KktReport {
    double stationarity = 0.0;     ///< relative norm of the Lagrangian gradient
    double complementarity = 0.0;  ///< relative complementary-slackness violation
    double dual_sign = 0.0;        ///< relative violation of multiplier sign constraints
    double primal = 0.0;           ///< relative distance between the copies / asymmetry
    double max() const { return std::max({stationarity, complementarity, dual_sign, primal}); }
};

struct AdmmResult {
    MatrixXd theta;
    AdmmState state;
    int iterations = 0;
    bool converged = false;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    std::vector<AdmmIterate> history;
    KktReport kkt;
};

/// KKT residual of the relaxed problem at the ADMM output, using rho*M_i as
/// multipliers: M3 for S(Gamma), M4 for S0(Gamma), the antisymmetric part of M2
/// for symmetry.
inline KktReport admm_kkt(const ProbingDataset& ds, const PriorMask& mask, const AdmmState& s) {
    const int n = static_cast<int>(s.theta1.rows());
    const MatrixXd& theta = s.theta1;
    const MatrixXd sym = 0.5 * (theta + theta.transpose());
    const MatrixXd fit_v = ds.W * theta * ds.V * ds.V.transpose();
    const MatrixXd fit_d = ds.W * ds.injections() * ds.V.transpose();
    const MatrixXd sparsity = s.lambda * s.pi;
    const MatrixXd barrier = -s.mu * sym.inverse();
    const MatrixXd z3 = s.rho * s.m3;
    const MatrixXd z4 = s.rho * s.m4;
    const MatrixXd k = 0.5 * s.rho * (s.m2 - s.m2.transpose());
    // Residuals are relative to the largest gradient term.
    const double scale = std::max({fit_v.norm(), fit_d.norm(), sparsity.norm(), barrier.norm(),
                                   std::numeric_limits<double>::min()});

    KktReport rep;
    rep.stationarity = (fit_v - fit_d + sparsity + barrier + k + z3 + z4).norm() / scale;

    double sign = 0.0;
    double comp = 0.0;
    const double tscale = std::max(theta.norm(), std::numeric_limits<double>::min());
    for (int i = 0; i < n; ++i) {
        sign += std::abs(z3(i, i));
        for (int j = 0; j < n; ++j) {
            if (i == j || !mask.allows(i, j)) continue;
            sign += std::max(-z3(i, j), 0.0);
            comp += std::abs(z3(i, j) * theta(i, j));
        }
        // z4 row must be -eta 1^T, eta >= 0 (free when the substation line is masked).
        const double eta = -z4.row(i).mean();
        sign += (z4.row(i).array() + eta).abs().sum();
        if (mask.allows_root(i)) {
            sign += std::max(-eta, 0.0) * n;
            comp += std::abs(eta * theta.row(i).sum());
        }
    }
    rep.dual_sign = sign / scale;
    rep.complementarity = comp / (scale * tscale);
    rep.primal = ((theta - s.theta2).norm() + (theta - s.theta3).norm() + (theta - s.theta4).norm() +
                  (theta - theta.transpose()).norm()) /
                 tscale;
    return rep;
}

/// Solves the relaxed identification problem over M with ADMM on four copies
/// of Theta (data fit, log-det barrier, sign pattern, row sums).
inline AdmmResult admm_identify(const ProbingDataset& ds, const PriorMask& mask, const AdmmOptions& opt = {}) {
    const int n = ds.bus_count();
    if (mask.bus_count() != n) throw ArgumentError("prior mask size does not match the dataset");
    if (ds.V.isZero(0.0)) throw ArgumentError("voltage deviation matrix is zero");
    if (!(opt.lambda >= 0.0) || !(opt.mu > 0.0)) throw ArgumentError("lambda must be >= 0 and mu > 0");

    const MatrixXd gram = ds.V * ds.V.transpose();
    SylvesterSolver sylvester(ds.W, gram, opt.rho);  // validates W and rho
    const MatrixXd data_term = ds.W * ds.injections() * ds.V.transpose();

    AdmmState s;
    s.rho = opt.rho;
    s.lambda = opt.lambda;
    s.mu = opt.mu;
    s.pi = sparsity_weight(n);
    const MatrixXd init = opt.initial ? *opt.initial : MatrixXd::Identity(n, n);
    s.theta1 = s.theta2 = s.theta3 = s.theta4 = init;
    s.m2 = s.m3 = s.m4 = MatrixXd::Zero(n, n);

    AdmmResult res;
    double rho = opt.rho;
    double prox_shift = 4.0 * opt.mu / rho;
    for (int k = 1; k <= opt.max_iter; ++k) {
        const MatrixXd c =
            data_term - opt.lambda * s.pi - rho * (s.m2 + s.m3 + s.m4 - s.theta2 - s.theta3 - s.theta4);
        s.theta1 = sylvester.solve(c);

        // Log-det prox on the symmetrized input.
        const MatrixXd y2 = s.theta1 + s.m2;
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (y2 + y2.transpose()));
        if (eig.info() != Eigen::Success) throw SolverError("eigendecomposition failed in the log-det prox");
        const VectorXd lam = eig.eigenvalues();
        const VectorXd shrunk = 0.5 * (lam.array() + (lam.array().square() + prox_shift).sqrt());
        MatrixXd theta2 = eig.eigenvectors() * shrunk.asDiagonal() * eig.eigenvectors().transpose();
        MatrixXd theta3 = project_S(s.theta1 + s.m3, mask);
        MatrixXd theta4 = project_S0(s.theta1 + s.m4, mask);

        if (opt.check_constraints) {
            if (shrunk.minCoeff() <= 0.0) throw SolverError("log-det prox left the PD cone");
            const auto r3 = membership_M(theta3, mask, 1e-12);
            for (const auto& v : r3.violations)
                if (v.rfind("positive", 0) == 0 || v.rfind("masked", 0) == 0)
                    throw SolverError("S projection violated: " + v);
            const VectorXd rows = theta4.rowwise().sum();
            for (int i = 0; i < n; ++i) {
                const double tol = 1e-9 * std::max(1.0, theta4.row(i).cwiseAbs().sum());
                if ((mask.allows_root(i) && rows[i] < -tol) || (!mask.allows_root(i) && std::abs(rows[i]) > tol))
                    throw SolverError("S0 projection violated at row " + std::to_string(i + 1));
            }
        }

        const double dual = rho * std::sqrt((theta2 - s.theta2).squaredNorm() + (theta3 - s.theta3).squaredNorm() +
                                            (theta4 - s.theta4).squaredNorm());
        s.theta2 = std::move(theta2);
        s.theta3 = std::move(theta3);
        s.theta4 = std::move(theta4);
        s.m2 += s.theta1 - s.theta2;
        s.m3 += s.theta1 - s.theta3;
        s.m4 += s.theta1 - s.theta4;
        const double primal = std::sqrt((s.theta1 - s.theta2).squaredNorm() + (s.theta1 - s.theta3).squaredNorm() +
                                        (s.theta1 - s.theta4).squaredNorm());
        s.iteration = k;
        if (!std::isfinite(primal) || !std::isfinite(dual)) throw SolverError("ADMM residuals diverged (NaN)");

        if (opt.record_history && (k % std::max(1, opt.history_stride) == 0 || k == 1))
            res.history.push_back({k, primal, dual, identification_objective(ds, s.theta2, opt.lambda, opt.mu)});

        res.primal_residual = primal;
        res.dual_residual = dual;
        const double primal_scale = std::max(1.0, s.theta1.norm());
        const double dual_scale =
            std::max(1.0, rho * std::sqrt(s.m2.squaredNorm() + s.m3.squaredNorm() + s.m4.squaredNorm()));
        if (primal <= opt.primal_tol * n * primal_scale && dual <= opt.dual_tol * n * dual_scale) {
            res.converged = true;
            break;
        }
        if (opt.adaptive_rho && k % std::max(1, opt.adapt_every) == 0) {
            // Compare the residuals relative to their own stopping thresholds.
            const double rp = primal / (opt.primal_tol * primal_scale);
            const double rd = dual / (opt.dual_tol * dual_scale);
            double factor = 1.0;
            if (rp > 10.0 * rd)
                factor = 2.0;
            else if (rd > 10.0 * rp)
                factor = 0.5;
            if (factor != 1.0) {
                rho *= factor;
                // Scaled multipliers follow 1/rho.
                s.m2 /= factor;
                s.m3 /= factor;
                s.m4 /= factor;
                s.rho = rho;
                sylvester.set_rho(rho);
                prox_shift = 4.0 * opt.mu / rho;
            }
        }
    }
    res.iterations = s.iteration;
    res.theta = s.theta1;
    res.kkt = admm_kkt(ds, mask, s);
    res.state = std::move(s);
    return res;
}

struct MleResult {
    MatrixXd theta;
    MatrixXd gram_inverse;  ///< (V V^T)^-1

    /// Covariance of vec(theta): (V V^T)^-1 (x) Sigma.
    MatrixXd covariance(const MatrixXd& sigma) const {
        const auto n = gram_inverse.rows();
        MatrixXd cov(n * n, n * n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) cov.block(i * n, j * n, n, n) = gram_inverse(i, j) * sigma;
        return cov;
    }
    double covariance_trace(const MatrixXd& sigma) const { return gram_inverse.trace() * sigma.trace(); }
};

/// Unconstrained least-squares fit Theta = (I_C Delta) V^T (V V^T)^-1.
/// Requires every bus to be probed.
inline MleResult mle_identify(const ProbingDataset& ds) {
    const int n = ds.bus_count();
    if (static_cast<int>(ds.buses.size()) != n)
        throw ArgumentError("MLE requires all buses to be probed (C = N)");
    const MatrixXd gram = ds.V * ds.V.transpose();
    Eigen::LLT<MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw InfeasibleError("Gram matrix V V^T is singular");
    const VectorXd piv = llt.matrixLLT().diagonal();
    if (piv.minCoeff() <= 1e-12 * piv.maxCoeff()) throw InfeasibleError("Gram matrix V V^T is singular");
    MleResult res;
    res.gram_inverse = llt.solve(MatrixXd::Identity(n, n));
    res.theta = ds.injections() * ds.V.transpose() * res.gram_inverse;
    return res;
}

/// Radial Laplacian extracted from an estimate by a minimum spanning tree.
struct RoundedTree {
    TreeGraph tree;
    std::vector<double> conductance;  ///< conductance of the line feeding node m (entry 0 unused)
    std::vector<double> resistance;   ///< 1 / conductance; +inf for a zero-weight edge
    MatrixXd theta;                   ///< reduced Laplacian of the rounded tree

    std::vector<Edge> edges() const { return tree.edges(); }
};

/// Runs Kruskal on the lifted estimate Phi(Theta) (most negative entry = strongest
/// coupling) and keeps the selected entries.
inline RoundedTree round_to_tree(const MatrixXd& theta_hat, const PriorMask& mask) {
    const int n = static_cast<int>(theta_hat.rows());
    if (mask.bus_count() != n) throw ArgumentError("prior mask size does not match the estimate");
    MatrixXd full = lift_phi(theta_hat);
    full = 0.5 * (full + full.transpose());
    RoundedTree out;
    out.tree = minimum_spanning_tree(full, mask.matrix());
    out.conductance.assign(n + 1, 0.0);
    out.resistance.assign(n + 1, 0.0);
    out.theta = MatrixXd::Zero(n, n);
    for (int m = 1; m <= n; ++m) {
        const int p = out.tree.parent(m);
        const double g = std::max(-full(p, m), 0.0);
        out.conductance[m] = g;
        out.resistance[m] = g > 0.0 ? 1.0 / g : std::numeric_limits<double>::infinity();
        out.theta(m - 1, m - 1) += g;
        if (p > 0) {
            out.theta(p - 1, p - 1) += g;
            out.theta(p - 1, m - 1) -= g;
            out.theta(m - 1, p - 1) -= g;
        }
    }
    return out;
}

}  // namespace probegrid

#endif  // PROBEGRID_IDENTIFY_HPP

#ifndef PROBEGRID_PROBING_HPP
#define PROBEGRID_PROBING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "feeder.hpp"

namespace probegrid {

enum class ProbeDesign { Diagonal, Paired, Custom };

inline const char* to_string(ProbeDesign d) {
    switch (d) {
        case ProbeDesign::Diagonal: return "diagonal";
        case ProbeDesign::Paired: return "paired";
        case ProbeDesign::Custom: return "custom";
    }
    return "?";
}

/// Probing schedule: bus `buses[i]` changes its active injection by
/// `delta(i, t)` at slot t relative to slot t-1.
struct ProbingPlan {
    std::vector<int> buses;  ///< bus indices in 1..N
    MatrixXd delta;          ///< C x T
    ProbeDesign design = ProbeDesign::Custom;

    int probe_count() const { return static_cast<int>(buses.size()); }
    int slot_count() const { return static_cast<int>(delta.cols()); }
};

/// Diagonal plan diag(delta) or paired plan diag(delta) (x) [+1 -1].
inline ProbingPlan make_plan(const std::vector<int>& buses, const std::vector<double>& deltas, ProbeDesign design) {
    if (buses.size() != deltas.size()) throw ArgumentError("one probing magnitude is needed per bus");
    if (design == ProbeDesign::Custom) throw ArgumentError("custom plans are built from an explicit matrix");
    for (double d : deltas)
        if (d == 0.0 || !std::isfinite(d)) throw ArgumentError("probing magnitudes must be nonzero");
    const int c = static_cast<int>(buses.size());
    ProbingPlan plan{buses, MatrixXd::Zero(c, design == ProbeDesign::Paired ? 2 * c : c), design};
    for (int i = 0; i < c; ++i) {
        if (design == ProbeDesign::Diagonal) {
            plan.delta(i, i) = deltas[i];
        } else {
            plan.delta(i, 2 * i) = deltas[i];
            plan.delta(i, 2 * i + 1) = -deltas[i];
        }
    }
    return plan;
}

/// Plan with the columns of `plan` repeated `times` times.
inline ProbingPlan repeat(const ProbingPlan& plan, int times) {
    if (times < 1) throw ArgumentError("repetition count must be positive");
    ProbingPlan out{plan.buses, MatrixXd(plan.delta.rows(), plan.delta.cols() * times), plan.design};
    for (int k = 0; k < times; ++k) out.delta.middleCols(k * plan.delta.cols(), plan.delta.cols()) = plan.delta;
    return out;
}

/// N x C selector I_C.
inline MatrixXd probe_selector(int bus_count, const std::vector<int>& buses) {
    MatrixXd sel = MatrixXd::Zero(bus_count, static_cast<Eigen::Index>(buses.size()));
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i] < 1 || buses[i] > bus_count)
            throw ArgumentError("probing bus " + std::to_string(buses[i]) + " does not exist");
        sel(buses[i] - 1, static_cast<Eigen::Index>(i)) = 1.0;
    }
    return sel;
}

struct NoiseConfig {
    double meas_rel_accuracy = 0.0;  ///< 3-sigma relative accuracy of a voltage reading
    double load_sigma_rel = 0.0;     ///< per-slot load std relative to nominal
    double profile_sigma_rel = 0.0;  ///< per-run std of the operating point around nominal
    double gamma = 0.0;              ///< x/r ratio used by the BLUE weighting
    double power_factor = 0.95;      ///< reactive load follows active load at this factor
    std::uint64_t seed = 0;
};

enum class PowerModel { Linear, Ac };

inline const char* to_string(PowerModel m) { return m == PowerModel::Linear ? "linear" : "ac"; }

/// Counter-based stream selection: the generator for (seed, run, slot) is
/// independent of how many other runs or slots were drawn before it.
inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t run, std::uint64_t slot) {
    auto splitmix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return splitmix(splitmix(splitmix(seed) ^ run) ^ (slot * 0xd1b54a32d192ed03ULL));
}

inline std::mt19937_64 rng_for(std::uint64_t seed, std::uint64_t run, std::uint64_t slot) {
    return std::mt19937_64(mix_key(seed, run, slot));
}

/// Measured voltage deviations and everything needed to fit them.
struct ProbingDataset {
    MatrixXd V;              ///< N x T voltage deviations
    MatrixXd delta;          ///< C x T
    std::vector<int> buses;  ///< probed buses, 1..N
    MatrixXd W;              ///< N x N weighting (PD)
    std::optional<MatrixXd> theta_true;
    std::optional<StatusVector> status_true;
    std::uint64_t seed = 0;
    PowerModel model = PowerModel::Linear;

    int bus_count() const { return static_cast<int>(V.rows()); }
    int slot_count() const { return static_cast<int>(V.cols()); }
    /// I_C Delta.
    MatrixXd injections() const { return probe_selector(bus_count(), buses) * delta; }
};

/// Stream slot reserved for the per-run operating point.
inline constexpr std::uint64_t profile_slot = ~std::uint64_t{0};

/// Synthesizes V = R I_C Delta + E for one Monte-Carlo run.
///
/// Slots 0..T are simulated; column t of V is v(t) - v(t-1). Each slot draws
/// fresh i.i.d. load variations and measurement noise from the (seed, run, slot)
/// stream, so any run can be regenerated in isolation.
inline ProbingDataset simulate(const Feeder& f, const ProbingPlan& plan, const NoiseConfig& noise, PowerModel model,
                               std::uint64_t run = 0) {
    const int n = f.bus_count();
    const int t_count = plan.slot_count();
    if (plan.delta.rows() != plan.probe_count()) throw ArgumentError("plan matrix rows differ from bus count");
    if (noise.meas_rel_accuracy < 0 || noise.load_sigma_rel < 0 || noise.profile_sigma_rel < 0 || noise.gamma < 0)
        throw ArgumentError("noise parameters must be non-negative");
    const MatrixXd sel = probe_selector(n, plan.buses);

    std::optional<SensitivityModel> lin;
    if (model == PowerModel::Linear) lin = build_sensitivity(f);
    const double tan_phi = std::tan(std::acos(std::clamp(noise.power_factor, 0.0, 1.0)));

    std::normal_distribution<double> gauss(0.0, 1.0);
    // Operating point of this run, held fixed while probing.
    VectorXd p_base = f.p_load();
    VectorXd q_base = f.q_load();
    if (noise.profile_sigma_rel > 0) {
        auto rng = rng_for(noise.seed, run, profile_slot);
        for (int i = 0; i < n; ++i) {
            const double dp = noise.profile_sigma_rel * f.p_load()[i] * gauss(rng);
            p_base[i] += dp;
            q_base[i] += tan_phi * dp;
        }
    }

    VectorXd probe_state = VectorXd::Zero(n);
    VectorXd prev;
    MatrixXd V(n, t_count);
    for (int t = 0; t <= t_count; ++t) {
        auto rng = rng_for(noise.seed, run, static_cast<std::uint64_t>(t));
        if (t > 0) probe_state += sel * plan.delta.col(t - 1);
        VectorXd p_load = p_base;
        VectorXd q_load = q_base;
        if (noise.load_sigma_rel > 0) {
            for (int i = 0; i < n; ++i) {
                const double dp = noise.load_sigma_rel * f.p_load()[i] * gauss(rng);
                p_load[i] += dp;
                q_load[i] += tan_phi * dp;
            }
        }
        const VectorXd p = probe_state - p_load;
        const VectorXd q = -q_load;
        VectorXd v = lin ? lindistflow_voltage(*lin, p, q) : ac_voltage(f, p, q);
        if (noise.meas_rel_accuracy > 0) {
            for (int i = 0; i < n; ++i) v[i] += noise.meas_rel_accuracy * std::abs(v[i]) / 3.0 * gauss(rng);
        }
        if (t > 0) V.col(t - 1) = v - prev;
        prev = std::move(v);
    }

    ProbingDataset ds;
    ds.V = std::move(V);
    ds.delta = plan.delta;
    ds.buses = plan.buses;
    ds.W = MatrixXd::Identity(n, n);
    ds.theta_true = reduced_laplacian(f);
    ds.status_true = f.status();
    ds.seed = noise.seed;
    ds.model = model;
    return ds;
}

/// Second moments of the slot-to-slot load changes.
struct LoadCovariance {
    MatrixXd Sp;
    MatrixXd Sq;
    MatrixXd Spq;
};

/// Load-change covariances implied by the i.i.d. per-slot load model: each
/// change is a difference of two independent draws, hence the factor 2.
inline LoadCovariance load_covariance(const NoiseConfig& noise, const Feeder& f) {
    const double tan_phi = std::tan(std::acos(std::clamp(noise.power_factor, 0.0, 1.0)));
    const VectorXd var = (2.0 * noise.load_sigma_rel * noise.load_sigma_rel) * f.p_load().array().square();
    LoadCovariance cov;
    cov.Sp = var.asDiagonal();
    cov.Sq = tan_phi * tan_phi * cov.Sp;
    cov.Spq = tan_phi * cov.Sp;
    return cov;
}

struct BlueWeight {
    MatrixXd W;
    bool fallback = false;  ///< Sigma was singular; W is the identity
};

/// W = Sigma^-1 with Sigma = Sp + gamma^2 Sq + gamma (Spq + Spq^T).
inline BlueWeight blue_weight(const LoadCovariance& cov, double gamma) {
    const MatrixXd sigma = cov.Sp + gamma * gamma * cov.Sq + gamma * (cov.Spq + cov.Spq.transpose());
    const auto n = sigma.rows();
    Eigen::LLT<MatrixXd> llt(sigma);
    const double scale = sigma.cwiseAbs().maxCoeff();
    bool singular = llt.info() != Eigen::Success || scale == 0.0;
    if (!singular) {
        const double min_pivot = llt.matrixL().toDenseMatrix().diagonal().cwiseAbs().minCoeff();
        singular = min_pivot * min_pivot <= 1e-14 * scale;
    }
    if (singular) return {MatrixXd::Identity(n, n), true};
    MatrixXd w = llt.solve(MatrixXd::Identity(n, n));
    return {0.5 * (w + w.transpose()), false};
}

inline BlueWeight blue_weight(const NoiseConfig& noise, const Feeder& f) {
    return blue_weight(load_covariance(noise, f), noise.gamma);
}

}  // namespace probegrid

#endif  // PROBEGRID_PROBING_HPP

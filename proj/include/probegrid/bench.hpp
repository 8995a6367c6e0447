#ifndef PROBEGRID_BENCH_HPP
#define PROBEGRID_BENCH_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "feeder.hpp"
#include "identify.hpp"
#include "io.hpp"
#include "probing.hpp"
#include "verify.hpp"

namespace probegrid {

/// Which buses probe and by how much.
struct ProbeSpec {
    enum class Selection { Explicit, All, CandidateLeaves };
    Selection selection = Selection::Explicit;
    std::vector<int> buses;
    /// Magnitude per bus: the nominal active load of the bus when unset.
    std::optional<double> delta;
    ProbeDesign design = ProbeDesign::Paired;
    int repeats = 1;  ///< copies of the basic probing block
};

struct IdentificationSettings {
    AdmmOptions admm;
};

struct VerificationSettings {
    double mu = 2e-8;
    double nu = 1e-10;
    PgdOptions pgd;
    RoundingStrategy rounding = RoundingStrategy::TopN;
    bool exhaustive = true;  ///< also run the enumeration oracle when it fits the budget
    std::int64_t exhaustive_limit = 100000;
};

enum class Weighting { Identity, Blue };

struct Scenario {
    std::string name;
    std::filesystem::path feeder_path;
    Feeder feeder;
    ProbeSpec probing;
    NoiseConfig noise;
    PowerModel model = PowerModel::Ac;
    Weighting weighting = Weighting::Identity;
    bool random_topology = true;  ///< draw the energized configuration uniformly per run
    IdentificationSettings identification;
    VerificationSettings verification;
    int runs = 1;
    std::uint64_t seed = 0;
    int threads = 1;  ///< 0 uses every hardware thread

    void validate() const {
        if (runs < 1) throw ArgumentError("scenario needs at least one run");
        if (probing.repeats < 1) throw ArgumentError("probing repeats (T) must be at least 1");
        if (threads < 0) throw ArgumentError("thread count must be non-negative");
        for (int b : probing.buses)
            if (b < 1 || b > feeder.bus_count())
                throw ArgumentError("probing bus " + std::to_string(b) + " does not exist");
        if (probing.delta && *probing.delta == 0.0) throw ArgumentError("probing magnitude must be nonzero");
    }
};

inline const char* to_string(RoundingStrategy r) { return r == RoundingStrategy::TopN ? "top_n" : "mst"; }

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

/// Builds a scenario from its JSON form; relative feeder paths resolve against `base_dir`.
inline Scenario parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    using detail::json_get;
    Scenario s;
    try {
        s.name = json_get<std::string>(j, "name", "scenario");
        s.feeder_path = j.at("feeder").get<std::string>();
        if (s.feeder_path.is_relative()) s.feeder_path = base_dir / s.feeder_path;
        s.runs = json_get<int>(j, "runs", 1);
        s.seed = json_get<std::uint64_t>(j, "seed", 0);
        s.threads = json_get<int>(j, "threads", 1);
        s.random_topology = json_get<bool>(j, "random_topology", true);
        const std::string model = json_get<std::string>(j, "model", "ac");
        if (model != "ac" && model != "linear") throw ArgumentError("model must be 'ac' or 'linear'");
        s.model = model == "ac" ? PowerModel::Ac : PowerModel::Linear;
        const std::string w = json_get<std::string>(j, "weighting", "identity");
        if (w != "identity" && w != "blue") throw ArgumentError("weighting must be 'identity' or 'blue'");
        s.weighting = w == "blue" ? Weighting::Blue : Weighting::Identity;

        if (j.contains("probing")) {
            const auto& p = j.at("probing");
            const auto& buses = p.at("buses");
            if (buses.is_string()) {
                const auto sel = buses.get<std::string>();
                if (sel == "all")
                    s.probing.selection = ProbeSpec::Selection::All;
                else if (sel == "candidate_leaves")
                    s.probing.selection = ProbeSpec::Selection::CandidateLeaves;
                else
                    throw ArgumentError("probing.buses must be a list, 'all' or 'candidate_leaves'");
            } else {
                s.probing.buses = buses.get<std::vector<int>>();
            }
            if (p.contains("delta") && !p.at("delta").is_string()) s.probing.delta = p.at("delta").get<double>();
            const std::string design = json_get<std::string>(p, "design", "paired");
            if (design != "paired" && design != "diagonal") throw ArgumentError("design must be 'paired' or 'diagonal'");
            s.probing.design = design == "paired" ? ProbeDesign::Paired : ProbeDesign::Diagonal;
            s.probing.repeats = json_get<int>(p, "repeats", 1);
        }
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            s.noise.meas_rel_accuracy = json_get<double>(n, "meas_rel_accuracy", 0.0);
            s.noise.load_sigma_rel = json_get<double>(n, "load_sigma_rel", 0.0);
            s.noise.profile_sigma_rel = json_get<double>(n, "profile_sigma_rel", 0.0);
            s.noise.gamma = json_get<double>(n, "gamma", 0.0);
            s.noise.power_factor = json_get<double>(n, "power_factor", 0.95);
        }
        s.noise.seed = s.seed;
        if (j.contains("identification")) {
            const auto& a = j.at("identification");
            auto& o = s.identification.admm;
            o.lambda = json_get<double>(a, "lambda", o.lambda);
            o.mu = json_get<double>(a, "mu", o.mu);
            o.rho = json_get<double>(a, "rho", o.rho);
            o.primal_tol = json_get<double>(a, "primal_tol", o.primal_tol);
            o.dual_tol = json_get<double>(a, "dual_tol", o.dual_tol);
            o.max_iter = json_get<int>(a, "max_iter", o.max_iter);
            o.adaptive_rho = json_get<bool>(a, "adaptive_rho", o.adaptive_rho);
        }
        if (j.contains("verification")) {
            const auto& v = j.at("verification");
            auto& o = s.verification;
            o.mu = json_get<double>(v, "mu", o.mu);
            o.nu = json_get<double>(v, "nu", o.nu);
            o.pgd.max_iter = json_get<int>(v, "max_iter", o.pgd.max_iter);
            o.pgd.tol = json_get<double>(v, "tol", o.pgd.tol);
            o.pgd.step_growth = json_get<double>(v, "step_growth", o.pgd.step_growth);
            const std::string r = json_get<std::string>(v, "rounding", "top_n");
            if (r != "top_n" && r != "mst") throw ArgumentError("rounding must be 'top_n' or 'mst'");
            o.rounding = r == "mst" ? RoundingStrategy::Mst : RoundingStrategy::TopN;
            o.exhaustive = json_get<bool>(v, "exhaustive", o.exhaustive);
            o.exhaustive_limit = json_get<std::int64_t>(v, "exhaustive_limit", o.exhaustive_limit);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("scenario: ") + e.what());
    }
    s.feeder = load_feeder(s.feeder_path);
    s.validate();
    return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, static_cast<int>(e.byte), e.what());
    }
    return parse_scenario(j, path.parent_path());
}

/// Configuration echo written next to every report.
inline nlohmann::ordered_json scenario_json(const Scenario& s) {
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["feeder"] = s.feeder_path.filename().string();
    j["runs"] = s.runs;
    j["seed"] = s.seed;
    j["random_topology"] = s.random_topology;
    j["model"] = to_string(s.model);
    j["weighting"] = s.weighting == Weighting::Blue ? "blue" : "identity";
    auto& p = j["probing"];
    switch (s.probing.selection) {
        case ProbeSpec::Selection::All: p["buses"] = "all"; break;
        case ProbeSpec::Selection::CandidateLeaves: p["buses"] = "candidate_leaves"; break;
        case ProbeSpec::Selection::Explicit: p["buses"] = s.probing.buses; break;
    }
    if (s.probing.delta)
        p["delta"] = *s.probing.delta;
    else
        p["delta"] = "load";
    p["design"] = to_string(s.probing.design);
    p["repeats"] = s.probing.repeats;
    auto& n = j["noise"];
    n["meas_rel_accuracy"] = s.noise.meas_rel_accuracy;
    n["load_sigma_rel"] = s.noise.load_sigma_rel;
    n["profile_sigma_rel"] = s.noise.profile_sigma_rel;
    n["gamma"] = s.noise.gamma;
    n["power_factor"] = s.noise.power_factor;
    auto& a = j["identification"];
    a["lambda"] = s.identification.admm.lambda;
    a["mu"] = s.identification.admm.mu;
    a["rho"] = s.identification.admm.rho;
    a["primal_tol"] = s.identification.admm.primal_tol;
    a["dual_tol"] = s.identification.admm.dual_tol;
    a["max_iter"] = s.identification.admm.max_iter;
    a["adaptive_rho"] = s.identification.admm.adaptive_rho;
    auto& v = j["verification"];
    v["mu"] = s.verification.mu;
    v["nu"] = s.verification.nu;
    v["max_iter"] = s.verification.pgd.max_iter;
    v["tol"] = s.verification.pgd.tol;
    v["step_growth"] = s.verification.pgd.step_growth;
    v["rounding"] = to_string(s.verification.rounding);
    v["exhaustive"] = s.verification.exhaustive;
    return j;
}

/// Buses that are leaves in at least one radial configuration.
inline std::vector<int> candidate_leaves(const Feeder& f, const std::vector<StatusVector>& configs) {
    std::set<int> out;
    for (const auto& b : configs) {
        const auto idx = build_index(f.tree_for(b));
        for (int m : idx.leaves().members())
            if (m != 0) out.insert(m);
    }
    return {out.begin(), out.end()};
}

inline std::vector<int> probe_buses(const Scenario& s, const std::vector<StatusVector>& configs) {
    switch (s.probing.selection) {
        case ProbeSpec::Selection::All: {
            std::vector<int> all(s.feeder.bus_count());
            for (int i = 0; i < s.feeder.bus_count(); ++i) all[i] = i + 1;
            return all;
        }
        case ProbeSpec::Selection::CandidateLeaves: return candidate_leaves(s.feeder, configs);
        case ProbeSpec::Selection::Explicit: break;
    }
    return s.probing.buses;
}

inline ProbingPlan scenario_plan(const Scenario& s, const std::vector<int>& buses) {
    std::vector<double> deltas;
    for (int b : buses) {
        const double d = s.probing.delta ? *s.probing.delta : s.feeder.p_load()[b - 1];
        if (d == 0.0) throw ArgumentError("bus " + std::to_string(b) + " has no load to size its probing inverter");
        deltas.push_back(d);
    }
    return repeat(make_plan(buses, deltas, s.probing.design), s.probing.repeats);
}

/// Per-run record; every field is a deterministic function of (scenario, run).
struct RunRecord {
    int run = 0;
    int config = 0;  ///< index of the drawn configuration
    bool ok = true;
    std::string error;
    double rmse = std::nan("");
    int line_errors = 0;
    int iterations = 0;
    bool converged = false;
    double kkt = std::nan("");  ///< identification only
    bool tree = true;           ///< verification only: rounded status is radial
    int oracle_agrees = -1;     ///< verification only: 1/0 vs the exhaustive oracle, -1 if not run
};

struct MetricsSummary {
    int runs = 0;
    int failures = 0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    double line_errors_mean = 0.0;
    double line_errors_std = 0.0;
    double converged_rate = 0.0;
    double oracle_agreement = std::nan("");
};

struct MetricsReport {
    std::string task;  ///< "identification" or "verification"
    nlohmann::ordered_json config;
    std::vector<RunRecord> runs;
    MetricsSummary summary;
};

inline MetricsSummary summarize(const std::vector<RunRecord>& runs) {
    MetricsSummary s;
    s.runs = static_cast<int>(runs.size());
    std::vector<double> rmse;
    std::vector<double> errs;
    int conv = 0;
    int oracle_runs = 0;
    int oracle_ok = 0;
    for (const auto& r : runs) {
        if (!r.ok) {
            ++s.failures;
            continue;
        }
        rmse.push_back(r.rmse);
        errs.push_back(r.line_errors);
        conv += r.converged ? 1 : 0;
        if (r.oracle_agrees >= 0) {
            ++oracle_runs;
            oracle_ok += r.oracle_agrees;
        }
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        if (v.empty()) {
            mean = sd = std::nan("");
            return;
        }
        double sum = 0.0;
        for (double x : v) sum += x;
        mean = sum / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    mean_std(rmse, s.rmse_mean, s.rmse_std);
    mean_std(errs, s.line_errors_mean, s.line_errors_std);
    const int good = s.runs - s.failures;
    s.converged_rate = good > 0 ? static_cast<double>(conv) / good : 0.0;
    if (oracle_runs > 0) s.oracle_agreement = static_cast<double>(oracle_ok) / oracle_runs;
    return s;
}

/// Runs `body(i)` for i in [0, count) on `threads` workers; results are stored by index.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
    if (threads == 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) body(i);
        });
    for (auto& th : pool) th.join();
}

/// Shared per-run setup: energized configuration and simulated probing data.
struct RunSetup {
    int config = 0;
    Feeder truth;
    ProbingDataset data;
};

/// Stream slot that selects the run's configuration.
inline constexpr std::uint64_t topology_slot = ~std::uint64_t{0} - 1;

class ScenarioRunner {
public:
    explicit ScenarioRunner(const Scenario& s) : s_(s) {
        s_.validate();
        configs_ = s_.random_topology ? enumerate_spanning_trees(s_.feeder, s_.verification.exhaustive_limit)
                                      : std::vector<StatusVector>{s_.feeder.status()};
        buses_ = probe_buses(s_, configs_);
        plan_ = scenario_plan(s_, buses_);
        if (s_.weighting == Weighting::Blue) weight_ = blue_weight(s_.noise, s_.feeder).W;
    }

    const std::vector<StatusVector>& configs() const { return configs_; }
    const std::vector<int>& probed() const { return buses_; }
    const ProbingPlan& plan() const { return plan_; }

    RunSetup setup(int run) const {
        RunSetup r;
        if (s_.random_topology) {
            auto rng = rng_for(s_.seed, static_cast<std::uint64_t>(run), topology_slot);
            r.config = static_cast<int>(rng() % configs_.size());
        }
        r.truth = s_.feeder.with_status(configs_[r.config]);
        NoiseConfig noise = s_.noise;
        noise.seed = s_.seed;
        r.data = simulate(r.truth, plan_, noise, s_.model, static_cast<std::uint64_t>(run));
        if (weight_) r.data.W = *weight_;
        return r;
    }

    RunRecord identify(int run) const {
        RunRecord rec;
        rec.run = run;
        try {
            const RunSetup st = setup(run);
            rec.config = st.config;
            const PriorMask mask = PriorMask::none(st.truth.bus_count());
            const AdmmResult res = admm_identify(st.data, mask, s_.identification.admm);
            const RoundedTree rt = round_to_tree(res.theta, mask);
            const MatrixXd& theta_o = *st.data.theta_true;
            rec.rmse = (rt.theta - theta_o).norm() / theta_o.norm();
            rec.line_errors = edge_errors(st.truth.tree().edges(), rt.edges());
            rec.iterations = res.iterations;
            rec.converged = res.converged;
            rec.kkt = res.kkt.max();
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
        }
        return rec;
    }

    RunRecord verify(int run) const {
        RunRecord rec;
        rec.run = run;
        try {
            const RunSetup st = setup(run);
            rec.config = st.config;
            VerifyProblem prob{st.truth, st.data, s_.verification.mu, s_.verification.nu};
            const PgdResult res = pgd_verify(prob, std::nullopt, s_.verification.pgd);
            const RoundedStatus rs = round_status(res.b, st.truth, s_.verification.rounding);
            const StatusVector& b_o = st.truth.status();
            for (std::size_t l = 0; l < b_o.size(); ++l) rec.line_errors += rs.b[l] != b_o[l] ? 1 : 0;
            const MatrixXd& theta_o = *st.data.theta_true;
            rec.rmse = (reduced_laplacian(st.truth, rs.b) - theta_o).norm() / theta_o.norm();
            rec.iterations = res.iterations;
            rec.converged = res.converged;
            rec.tree = rs.is_tree;
            if (s_.verification.exhaustive && s_.random_topology) {
                const ExhaustiveResult ex = exhaustive_verify(prob, s_.verification.exhaustive_limit);
                rec.oracle_agrees = ex.best == rs.b ? 1 : 0;
            }
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
        }
        return rec;
    }

    /// Lines in exactly one of the two edge sets.
    static int edge_errors(std::vector<Edge> truth, std::vector<Edge> est) {
        auto key = [](const Edge& e) { return std::pair{e.lo(), e.hi()}; };
        std::multiset<std::pair<int, int>> a, b;
        for (const auto& e : truth) a.insert(key(e));
        for (const auto& e : est) b.insert(key(e));
        int common = 0;
        for (const auto& k : a) {
            auto it = b.find(k);
            if (it != b.end()) {
                b.erase(it);
                ++common;
            }
        }
        return static_cast<int>(truth.size() + est.size()) - 2 * common;
    }

private:
    Scenario s_;
    std::vector<StatusVector> configs_;
    std::vector<int> buses_;
    ProbingPlan plan_;
    std::optional<MatrixXd> weight_;
};

inline MetricsReport run_task(const Scenario& s, const std::string& task) {
    const ScenarioRunner runner(s);
    MetricsReport rep;
    rep.task = task;
    rep.config = scenario_json(s);
    rep.config["probed_buses"] = runner.probed();
    rep.config["configurations"] = runner.configs().size();
    rep.runs.resize(s.runs);
    parallel_for(s.runs, s.threads, [&](int i) {
        rep.runs[i] = task == "identification" ? runner.identify(i) : runner.verify(i);
    });
    rep.summary = summarize(rep.runs);
    return rep;
}

/// Monte-Carlo ADMM identification followed by MST rounding.
inline MetricsReport run_identification(const Scenario& s) { return run_task(s, "identification"); }

/// Monte-Carlo PGD verification followed by status rounding.
inline MetricsReport run_verification(const Scenario& s) { return run_task(s, "verification"); }

namespace detail {

inline std::string csv_number(double v) { return std::isnan(v) ? std::string() : format_double(v); }

inline nlohmann::ordered_json json_number(double v) {
    return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

inline std::string csv_escape(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + '"';
}

}  // namespace detail

inline std::string runs_csv(const MetricsReport& r) {
    std::string out = "run,config,ok,rmse,line_errors,iterations,converged,kkt,tree,oracle_agrees,error\n";
    for (const auto& x : r.runs) {
        out += std::to_string(x.run) + ',' + std::to_string(x.config) + ',' + (x.ok ? "1" : "0") + ',' +
               detail::csv_number(x.rmse) + ',' + std::to_string(x.line_errors) + ',' + std::to_string(x.iterations) +
               ',' + (x.converged ? "1" : "0") + ',' + detail::csv_number(x.kkt) + ',' + (x.tree ? "1" : "0") + ',' +
               (x.oracle_agrees < 0 ? std::string() : std::to_string(x.oracle_agrees)) + ',' +
               (x.error.empty() ? std::string() : detail::csv_escape(x.error)) + '\n';
    }
    return out;
}

inline nlohmann::ordered_json summary_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["config"] = r.config;
    auto& s = j["summary"];
    s["runs"] = r.summary.runs;
    s["failures"] = r.summary.failures;
    s["rmse_mean"] = detail::json_number(r.summary.rmse_mean);
    s["rmse_std"] = detail::json_number(r.summary.rmse_std);
    s["line_errors_mean"] = detail::json_number(r.summary.line_errors_mean);
    s["line_errors_std"] = detail::json_number(r.summary.line_errors_std);
    s["converged_rate"] = r.summary.converged_rate;
    s["oracle_agreement"] = detail::json_number(r.summary.oracle_agreement);
    return j;
}

/// Writes `<task>_runs.csv` and `<task>_summary.json` into `dir`.
inline void export_report(const MetricsReport& r, const std::filesystem::path& dir) {
    if (r.runs.empty()) throw ArgumentError("report has no runs");
    std::filesystem::create_directories(dir);
    const auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + p.string());
    };
    write(dir / (r.task + "_runs.csv"), runs_csv(r));
    write(dir / (r.task + "_summary.json"), summary_json(r).dump(2) + "\n");
}

}  // namespace probegrid

#endif  // PROBEGRID_BENCH_HPP

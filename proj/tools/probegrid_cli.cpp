// probegrid command-line front end.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "probegrid/bench.hpp"
#include "probegrid/probegrid.hpp"

namespace fs = std::filesystem;
using namespace probegrid;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<double> noise;
    std::optional<int> repeats;
    std::optional<double> lambda, mu, rho, nu;
    std::optional<int> threads;
};

void add_overrides(CLI::App* app, Overrides& o) {
    app->add_option("--seed", o.seed, "RNG seed");
    app->add_option("--runs", o.runs, "Monte-Carlo runs");
    app->add_option("--noise", o.noise, "relative measurement accuracy (3 sigma), e.g. 1e-4");
    app->add_option("--T", o.repeats, "number of repetitions of the probing block");
    app->add_option("--lambda", o.lambda, "sparsity weight of the identification problem");
    app->add_option("--mu", o.mu, "log-det weight (identification; verification with --task verification)");
    app->add_option("--rho", o.rho, "ADMM penalty");
    app->add_option("--nu", o.nu, "PGD step size (<= 0 selects it automatically)");
    app->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

void apply(Scenario& s, const Overrides& o, bool mu_is_verification) {
    if (o.seed) s.seed = s.noise.seed = *o.seed;
    if (o.runs) s.runs = *o.runs;
    if (o.noise) s.noise.meas_rel_accuracy = *o.noise;
    if (o.repeats) s.probing.repeats = *o.repeats;
    if (o.lambda) s.identification.admm.lambda = *o.lambda;
    if (o.mu) (mu_is_verification ? s.verification.mu : s.identification.admm.mu) = *o.mu;
    if (o.rho) s.identification.admm.rho = *o.rho;
    if (o.nu) s.verification.nu = *o.nu;
    if (o.threads) s.threads = *o.threads;
    s.validate();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

int cmd_simulate(const fs::path& scenario_path, const Overrides& o, int run, const fs::path& out) {
    Scenario s = load_scenario(scenario_path);
    apply(s, o, false);
    const ScenarioRunner runner(s);
    const RunSetup st = runner.setup(run);
    export_dataset(st.data, out);
    std::ofstream feeder_out(out / "truth.feeder", std::ios::binary);
    write_feeder(feeder_out, st.truth);
    std::cout << "wrote dataset for run " << run << " (configuration " << st.config << ", probed "
              << join(st.data.buses) << ") to " << out << "\n";
    return 0;
}

int cmd_identify(const fs::path& data_dir, const AdmmOptions& opt, bool mle, const fs::path& out) {
    const ProbingDataset ds = import_dataset(data_dir);
    fs::create_directories(out);
    const PriorMask mask = PriorMask::none(ds.bus_count());
    nlohmann::ordered_json j;
    MatrixXd theta_hat;
    if (mle) {
        const MleResult r = mle_identify(ds);
        theta_hat = r.theta;
        j["method"] = "mle";
    } else {
        AdmmOptions a = opt;
        a.record_history = true;
        a.history_stride = 10;
        const AdmmResult r = admm_identify(ds, mask, a);
        theta_hat = r.theta;
        j["method"] = "admm";
        j["iterations"] = r.iterations;
        j["converged"] = r.converged;
        j["kkt_residual"] = r.kkt.max();
        std::string hist = "iteration,primal,dual,objective\n";
        for (const auto& h : r.history)
            hist += std::to_string(h.iteration) + ',' + format_double(h.primal_residual) + ',' +
                    format_double(h.dual_residual) + ',' + format_double(h.objective) + '\n';
        write_text(out / "history.csv", hist);
    }
    const RoundedTree rt = round_to_tree(theta_hat, mask);
    write_matrix_csv(out / "theta_hat.csv", theta_hat);
    write_matrix_csv(out / "theta_tree.csv", rt.theta);
    std::string edges = "parent,child,resistance\n";
    for (int m = 1; m < rt.tree.node_count(); ++m)
        edges += std::to_string(rt.tree.parent(m)) + ',' + std::to_string(m) + ',' + format_double(rt.resistance[m]) +
                 '\n';
    write_text(out / "tree.csv", edges);
    if (ds.theta_true) {
        j["rmse"] = (rt.theta - *ds.theta_true).norm() / ds.theta_true->norm();
    }
    write_text(out / "identify.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_verify(const fs::path& feeder_path, const fs::path& data_dir, double mu, double nu, const std::string& rounding,
               bool exhaustive, const fs::path& out) {
    const Feeder f = load_feeder(feeder_path);
    const ProbingDataset ds = import_dataset(data_dir);
    if (ds.bus_count() != f.bus_count()) throw ArgumentError("dataset and feeder disagree on the bus count");
    fs::create_directories(out);
    VerifyProblem prob{f, ds, mu, nu};
    const PgdResult r = pgd_verify(prob);
    const RoundedStatus rs =
        round_status(r.b, f, rounding == "mst" ? RoundingStrategy::Mst : RoundingStrategy::TopN);
    const StatusVector* truth = ds.status_true ? &*ds.status_true : nullptr;
    std::string lines = "line,id,from,to,relaxed,status\n";
    for (int l = 0; l < f.line_count(); ++l)
        lines += std::to_string(l) + ',' + std::to_string(f.line(l).id) + ',' + std::to_string(f.line(l).from) + ',' +
                 std::to_string(f.line(l).to) + ',' + format_double(r.b[l]) + ',' + std::to_string(rs.b[l]) + '\n';
    write_text(out / "status.csv", lines);
    nlohmann::ordered_json j;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["objective"] = r.objective;
    j["rounded_is_tree"] = rs.is_tree;
    if (truth) {
        int h = 0;
        for (int l = 0; l < f.line_count(); ++l) h += rs.b[l] != (*truth)[l];
        j["line_errors"] = h;
    }
    if (exhaustive) {
        const ExhaustiveResult ex = exhaustive_verify(prob);
        std::string table = "config,objective,is_tree,hamming\n";
        for (std::size_t c = 0; c < ex.configs.size(); ++c) {
            int h = 0;
            if (truth)
                for (int l = 0; l < f.line_count(); ++l) h += ex.configs[c][l] != (*truth)[l];
            table += std::to_string(c) + ',' + format_double(ex.objective[c]) + ",1," +
                     (truth ? std::to_string(h) : std::string()) + '\n';
        }
        write_text(out / "exhaustive.csv", table);
        j["exhaustive_minimizers"] = ex.minimizers;
        j["agrees_with_exhaustive"] = ex.best == rs.b;
    }
    write_text(out / "verify.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_check(const fs::path& feeder_path, const std::vector<int>& probes) {
    const Feeder f = load_feeder(feeder_path);
    const auto configs = enumerate_spanning_trees(f);
    std::vector<int> probed = probes;
    if (probed.empty()) probed = candidate_leaves(f, configs);
    const VerifiabilityReport rep = check_verifiable(f, configs, probed);
    std::cout << "feeder " << f.name() << ": " << f.bus_count() << " buses, " << f.line_count()
              << " candidate lines, " << configs.size() << " radial configurations\n";
    std::cout << "probed buses: " << join(probed) << "\n";
    std::cout << "distinct resistances: " << (rep.distinct_resistances ? "yes" : "no") << "\n";
    int covered = 0;
    for (const auto& b : configs) {
        const auto idx = build_index(f.tree_for(b));
        bool all = true;
        for (int m : idx.leaves().members())
            if (m != 0 && std::find(probed.begin(), probed.end(), m) == probed.end()) all = false;
        covered += all ? 1 : 0;
    }
    std::cout << "configurations with every leaf probed (exactly identifiable): " << covered << "/" << configs.size()
              << "\n";
    int pairs = 0;
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (std::size_t j = 0; j < configs.size(); ++j)
            if (i != j && rep.confusable[i][j]) {
                ++pairs;
                std::cout << "  confusable: configuration " << i << " vs " << j << "\n";
            }
    std::cout << "verifiable: " << (rep.verifiable() ? "yes" : "no") << " (" << pairs << " confusable ordered pairs)"
              << (rep.certified() ? ", certified" : "") << "\n";
    return rep.verifiable() ? 0 : 3;
}

int cmd_bench(const fs::path& scenario_path, const Overrides& o, const std::string& task, const fs::path& out) {
    Scenario s = load_scenario(scenario_path);
    apply(s, o, task == "verification");
    std::vector<std::string> tasks;
    if (task == "both" || task == "identification") tasks.push_back("identification");
    if (task == "both" || task == "verification") tasks.push_back("verification");
    for (const auto& t : tasks) {
        const MetricsReport r = run_task(s, t);
        export_report(r, out);
        std::printf("%-15s runs=%d failures=%d rmse_mean=%.6g line_errors_mean=%.6g", t.c_str(), r.summary.runs,
                    r.summary.failures, r.summary.rmse_mean, r.summary.line_errors_mean);
        if (!std::isnan(r.summary.oracle_agreement)) std::printf(" oracle_agreement=%.4g", r.summary.oracle_agreement);
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grid probing: topology identification and line-status verification"};
    app.require_subcommand(1);

    Overrides sim_o, bench_o;
    fs::path scenario, out = "out", data_dir, feeder_path;
    int run = 0;
    auto* sim = app.add_subcommand("simulate", "simulate one probing dataset from a scenario");
    sim->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--run", run, "Monte-Carlo run index");
    sim->add_option("--out", out, "output directory");
    add_overrides(sim, sim_o);

    AdmmOptions admm;
    bool mle = false;
    auto* ident = app.add_subcommand("identify", "identify the topology from a dataset");
    ident->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ident->add_option("--lambda", admm.lambda, "sparsity weight");
    ident->add_option("--mu", admm.mu, "log-det weight");
    ident->add_option("--rho", admm.rho, "ADMM penalty");
    ident->add_option("--max-iter", admm.max_iter, "ADMM iteration cap");
    ident->add_flag("--adaptive-rho", admm.adaptive_rho, "balance primal and dual residuals by rescaling rho");
    ident->add_flag("--mle", mle, "least-squares estimate instead of ADMM (all buses probed)");
    ident->add_option("--out", out, "output directory");

    double vmu = 2e-8, vnu = 1e-10;
    std::string rounding = "top_n";
    bool exhaustive = false;
    auto* ver = app.add_subcommand("verify", "detect line statuses from a dataset");
    ver->add_option("--feeder", feeder_path, "feeder file with the candidate lines")->required()->check(CLI::ExistingFile);
    ver->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ver->add_option("--mu", vmu, "barrier weight");
    ver->add_option("--nu", vnu, "PGD step size (<= 0 selects it automatically)");
    ver->add_option("--rounding", rounding, "top_n or mst")->check(CLI::IsMember({"top_n", "mst"}));
    ver->add_flag("--exhaustive", exhaustive, "also enumerate every radial configuration");
    ver->add_option("--out", out, "output directory");

    std::vector<int> probes;
    auto* chk = app.add_subcommand("check-identifiability", "probing-placement report for a feeder");
    chk->add_option("--feeder", feeder_path, "feeder file")->required()->check(CLI::ExistingFile);
    chk->add_option("--probe", probes, "probed buses (default: every bus that is a leaf in some configuration)")
        ->delimiter(',');

    std::string task = "both";
    auto* bench = app.add_subcommand("bench", "Monte-Carlo experiment from a scenario");
    bench->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    bench->add_option("--task", task, "identification, verification or both")
        ->check(CLI::IsMember({"identification", "verification", "both"}));
    bench->add_option("--out", out, "output directory");
    add_overrides(bench, bench_o);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sim) return cmd_simulate(scenario, sim_o, run, out);
        if (*ident) return cmd_identify(data_dir, admm, mle, out);
        if (*ver) return cmd_verify(feeder_path, data_dir, vmu, vnu, rounding, exhaustive, out);
        if (*chk) return cmd_check(feeder_path, probes);
        if (*bench) return cmd_bench(scenario, bench_o, task, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "probegrid/bench.hpp"

using namespace probegrid;

namespace {

std::filesystem::path data_dir() {
    const char* env = std::getenv("PROBEGRID_DATA");
    return env ? std::filesystem::path(env) : std::filesystem::path("data");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json base_json() {
    return nlohmann::json::parse(R"({
        "name": "t", "feeder": "ieee13_like.feeder", "runs": 4, "seed": 5, "model": "linear",
        "probing": {"buses": "candidate_leaves", "design": "paired"},
        "noise": {"meas_rel_accuracy": 1e-4},
        "identification": {"lambda": 5e-3, "mu": 1, "rho": 1e-4, "adaptive_rho": true, "max_iter": 20000},
        "verification": {"mu": 2e-8, "nu": 1e-10}
    })");
}

}  // namespace

TEST(Scenario, ParsesAndEchoes) {
    const Scenario s = parse_scenario(base_json(), data_dir());
    EXPECT_EQ(s.runs, 4);
    EXPECT_EQ(s.seed, 5U);
    EXPECT_EQ(s.noise.seed, 5U);
    EXPECT_EQ(s.model, PowerModel::Linear);
    EXPECT_EQ(s.probing.selection, ProbeSpec::Selection::CandidateLeaves);
    EXPECT_TRUE(s.identification.admm.adaptive_rho);
    EXPECT_DOUBLE_EQ(s.identification.admm.rho, 1e-4);
    EXPECT_EQ(s.feeder.bus_count(), 12);
    const auto echo = scenario_json(s);
    EXPECT_EQ(echo["probing"]["buses"], "candidate_leaves");
    EXPECT_EQ(echo["identification"]["max_iter"], 20000);
}

TEST(Scenario, RejectsInvalidSettings) {
    auto j = base_json();
    j["runs"] = 0;
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
    j = base_json();
    j["probing"]["buses"] = nlohmann::json::array({99});
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
    j = base_json();
    j["probing"]["repeats"] = 0;
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
    j = base_json();
    j["model"] = "dc";
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
    j = base_json();
    j.erase("feeder");
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
    j = base_json();
    j["verification"]["rounding"] = "random";
    EXPECT_THROW(parse_scenario(j, data_dir()), ArgumentError);
}

TEST(Scenario, BundledScenariosLoad) {
    for (const auto& e : std::filesystem::directory_iterator(data_dir() / "scenarios")) {
        if (e.path().extension() != ".json") continue;
        EXPECT_NO_THROW(load_scenario(e.path())) << e.path();
    }
}

TEST(Runner, CandidateLeavesAndPlan) {
    const Scenario s = parse_scenario(base_json(), data_dir());
    const ScenarioRunner r(s);
    EXPECT_EQ(r.configs().size(), 7U);
    const auto& leaves = r.probed();
    for (const auto& b : r.configs())
        for (int m : build_index(s.feeder.tree_for(b)).leaves().members())
            EXPECT_NE(std::find(leaves.begin(), leaves.end(), m), leaves.end());
    EXPECT_EQ(r.plan().slot_count(), 2 * static_cast<int>(leaves.size()));
    EXPECT_EQ(r.plan().delta(0, 0), s.feeder.p_load()[leaves[0] - 1]);
}

TEST(Runner, EdgeErrorsCountBothDirections) {
    const std::vector<Edge> truth{{0, 1}, {1, 2}, {1, 3}};
    EXPECT_EQ(ScenarioRunner::edge_errors(truth, truth), 0);
    EXPECT_EQ(ScenarioRunner::edge_errors(truth, {{1, 0}, {2, 1}, {2, 3}}), 2);
    EXPECT_EQ(ScenarioRunner::edge_errors(truth, {{0, 2}, {0, 3}, {2, 3}}), 6);
}

TEST(Summary, MeansAndSampleDeviation) {
    std::vector<RunRecord> runs(4);
    for (int i = 0; i < 4; ++i) {
        runs[i].run = i;
        runs[i].rmse = i;
        runs[i].line_errors = 2 * i;
        runs[i].converged = i != 0;
        runs[i].oracle_agrees = i % 2;
    }
    runs[3].ok = false;
    const MetricsSummary s = summarize(runs);
    EXPECT_EQ(s.runs, 4);
    EXPECT_EQ(s.failures, 1);
    EXPECT_DOUBLE_EQ(s.rmse_mean, 1.0);
    EXPECT_DOUBLE_EQ(s.rmse_std, 1.0);
    EXPECT_DOUBLE_EQ(s.line_errors_mean, 2.0);
    EXPECT_DOUBLE_EQ(s.converged_rate, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.oracle_agreement, 1.0 / 3.0);
}

TEST(Bench, DeterministicAcrossThreadCounts) {
    auto j = base_json();
    const Scenario one = parse_scenario(j, data_dir());
    j["threads"] = 3;
    const Scenario three = parse_scenario(j, data_dir());
    for (const char* task : {"identification", "verification"}) {
        const MetricsReport a = run_task(one, task);
        const MetricsReport b = run_task(one, task);
        const MetricsReport c = run_task(three, task);
        EXPECT_EQ(runs_csv(a), runs_csv(b));
        EXPECT_EQ(runs_csv(a), runs_csv(c));
        EXPECT_EQ(a.summary.failures, 0);
        for (const auto& r : a.runs) {
            EXPECT_GE(r.rmse, 0.0);
            EXPECT_GE(r.line_errors, 0);
        }
    }
}

TEST(Bench, ExportIsByteStable) {
    const Scenario s = parse_scenario(base_json(), data_dir());
    const MetricsReport rep = run_verification(s);
    const auto root = std::filesystem::temp_directory_path() / "probegrid_test_bench";
    std::filesystem::remove_all(root);
    export_report(rep, root / "a");
    export_report(run_verification(s), root / "b");
    for (const char* f : {"verification_runs.csv", "verification_summary.json"}) {
        const std::string a = slurp(root / "a" / f);
        EXPECT_FALSE(a.empty());
        EXPECT_EQ(a, slurp(root / "b" / f));
    }
    const auto summary = nlohmann::json::parse(slurp(root / "a" / "verification_summary.json"));
    EXPECT_EQ(summary["summary"]["runs"], 4);
    EXPECT_EQ(summary["config"]["configurations"], 7);
    MetricsReport empty;
    empty.task = "verification";
    EXPECT_THROW(export_report(empty, root / "c"), ArgumentError);
}

TEST(Bench, NoiselessVerificationIsExact) {
    const Scenario s = load_scenario(data_dir() / "scenarios" / "ieee13_verify.json");
    Scenario small = s;
    small.runs = 10;
    const MetricsReport rep = run_verification(small);
    EXPECT_EQ(rep.summary.line_errors_mean, 0.0);
    EXPECT_EQ(rep.summary.oracle_agreement, 1.0);
}

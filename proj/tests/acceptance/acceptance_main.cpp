// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [scratch_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nanoflow/analytic_model.hpp"
#include "nanoflow/commands.hpp"
#include "nanoflow/flow_sim.hpp"
#include "nanoflow/region_config.hpp"
#include "nanoflow/stat_compare.hpp"

using namespace nanoflow;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds, pinned.
constexpr double kEquationTol = 1e-12;
constexpr double kNormalizationTol = 1e-9;
constexpr double kPartitionTol = 1e-12;
constexpr double kBeyondThreeLapsMax = 0.03;
constexpr double kTvMax = 0.02;
constexpr double kTvSecondsMax = 30.0;
constexpr double kConvergeFractionMin = 0.95;
constexpr double kMwAcceptMin = 0.9;
constexpr double kMwAlpha = 0.05;
constexpr double kEcdfMeanMax = 0.05;
constexpr double kKlMax = 0.04;
constexpr double kKlOracleTol = 1e-4;

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_scratch;

fs::path scratch(const std::string& name) {
    const auto dir = g_scratch / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

int cli_run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0)
        std::fprintf(stderr, "%s", err.str().c_str());
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

RegionMap random_map(std::mt19937_64& rng, int regions) {
    std::uniform_real_distribution<double> w(0.05, 1.0), t(20.0, 120.0);
    std::vector<double> weights(regions);
    double total = 0.0;
    for (auto& x : weights)
        total += (x = w(rng));
    std::vector<Region> out;
    double acc = 0.0;
    for (int i = 0; i < regions; ++i) {
        const double p = i + 1 == regions ? 1.0 - acc : weights[i] / total;
        acc += p;
        out.push_back({i + 1, "r" + std::to_string(i + 1), std::round(t(rng)), p});
    }
    return make_region_map(out);
}

// ---------------------------------------------------------------------------

Outcome equation_oracles() {
    const auto [map, params] = builtin_two_region_example();
    const LapVector one_lap_r1{{1, 0}};
    // single R1 lap: path 0.49, one transmission attempt, one detection chance
    const double hand_detected = 0.49 * 0.7 * 0.7;
    const double hand_undetected = 0.49 * 0.7 * (1.0 - 0.7);
    const double detected = atom_prob_detected(one_lap_r1, 1, map, params);
    const double undetected = atom_prob_undetected(one_lap_r1, 1, map, params);
    const double err = std::max({std::abs(detected - hand_detected), std::abs(undetected - hand_undetected),
                                 std::abs(detected - 0.2401), std::abs(undetected - 0.1029)});
    return {err <= kEquationTol,
            "detected=" + fmt(detected) + " undetected=" + fmt(undetected) + " max_err=" + fmt(err)};
}

Outcome normalization() {
    std::mt19937_64 rng(2024);
    double worst_total = 0.0, worst_retained = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto map = random_map(rng, 2 + trial % 4);
        ModelParams p;
        p.p_det = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        p.p_trans = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
        p.max_laps = 3 + static_cast<int>(rng() % 4);
        p.duration_s = 1e6;
        const RegionId event = map.regions()[rng() % map.size()].id;

        const auto pruned = enumerate_pmf(map, event, p);
        worst_total = std::max(worst_total, std::abs(pruned.retained_mass() + pruned.truncated_mass - 1.0));

        p.mass_epsilon = 0.0;
        const auto full = enumerate_pmf(map, event, p);
        const double expected = 1.0 - std::pow(1.0 - p.p_trans, p.max_laps);
        worst_retained = std::max(worst_retained, std::abs(full.retained_mass() - expected));
    }
    return {worst_total <= kNormalizationTol && worst_retained <= kNormalizationTol,
            "max|mass+truncated-1|=" + fmt(worst_total) + " max|retained-closed_form|=" + fmt(worst_retained)};
}

Outcome case_partition() {
    std::mt19937_64 rng(99);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto map = random_map(rng, 2 + trial % 4);
        ModelParams p;
        p.p_det = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        p.p_trans = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
        p.max_laps = 6;
        p.duration_s = 1e6;
        p.mass_epsilon = 0.0;
        const RegionId event = map.regions()[rng() % map.size()].id;
        const auto j = *map.index_of(event);

        std::map<LapVector, double> by_vector;
        for (const auto& a : enumerate_pmf(map, event, p).atoms)
            by_vector[a.provenance.front()] += a.prob;
        for (const auto& [laps, mass] : by_vector) {
            if (laps.counts[j] < 1)
                continue;
            const double whole =
                path_probability(laps, map) * transmission_factor(laps.total_laps(), p.p_trans);
            const double sum = atom_prob_detected(laps, event, map, p) + atom_prob_undetected(laps, event, map, p);
            worst = std::max({worst, std::abs(sum - whole), std::abs(mass - whole)});
            ++checked;
        }
    }
    return {checked > 0 && worst <= kPartitionTol,
            std::to_string(checked) + " lap vectors, max_err=" + fmt(worst)};
}

Outcome two_region_shape() {
    const auto dir = scratch("shape");
    if (cli_run({"dist", "--out", dir.string()}) != 0)
        return {false, "dist command failed"};
    const Pmf pmf = read_pmf_json(dir / "pmf_r1.json");

    std::map<double, double> by_time;
    double within_three = 0.0;
    for (const auto& a : pmf.atoms) {
        by_time[a.time_s] += a.prob;
        int laps = 0;
        for (const auto& v : a.provenance)
            laps = std::max(laps, v.total_laps());
        if (laps <= 3)
            within_three += a.prob;
    }
    std::vector<std::pair<double, double>> ranked(by_time.begin(), by_time.end());
    std::sort(ranked.begin(), ranked.end(), [](auto& x, auto& y) { return x.second > y.second; });
    const std::set<double> top{ranked[0].first, ranked[1].first};
    bool compound_present = true;
    for (double t : {120.0, 127.0, 134.0})
        compound_present = compound_present && by_time.count(t) && by_time[t] > 0.0;
    const double beyond = 1.0 - within_three;
    return {top == std::set<double>{60.0, 67.0} && compound_present && beyond < kBeyondThreeLapsMax,
            "top=" + fmt(ranked[0].first) + "," + fmt(ranked[1].first) + " mass(120,127,134)=" +
                fmt(by_time[120.0]) + "," + fmt(by_time[127.0]) + "," + fmt(by_time[134.0]) +
                " beyond_3_laps=" + fmt(beyond)};
}

Outcome mc_vs_analytic() {
    auto [map, params] = builtin_two_region_example();
    params.noise_sigma_s = 0.0;
    const auto pmf = enumerate_pmf(map, 1, params);
    const auto start = std::chrono::steady_clock::now();
    const auto ds = simulate_population(map, 1, params, 100000, SimSeed{7});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double tv = total_variation(empirical_pmf(ds, map, 1e-6), pmf, 1e-6);
    return {tv < kTvMax && seconds < kTvSecondsMax,
            "records=" + std::to_string(ds.records.size()) + " tv=" + fmt(tv) + " sim_seconds=" + fmt(seconds)};
}

Outcome convergence_trend() {
    int decreasing = 0;
    const int reps = 20;
    for (int seed = 1; seed <= reps; ++seed) {
        const auto dir = scratch("converge_" + std::to_string(seed));
        if (cli_run({"converge", "--ladder", "10,100,1000,10000", "--seed", std::to_string(seed), "--out",
                     dir.string()}) != 0)
            return {false, "converge command failed"};
        std::ifstream in(dir / "converge_r1.csv");
        std::string line;
        std::getline(in, line);
        std::vector<double> mse;
        while (std::getline(in, line))
            mse.push_back(std::stod(line.substr(line.find(',') + 1)));
        bool ok = mse.size() == 4;
        for (std::size_t i = 1; ok && i < mse.size(); ++i)
            ok = mse[i] < mse[i - 1];
        decreasing += ok;
    }
    const double fraction = static_cast<double>(decreasing) / reps;
    return {fraction >= kConvergeFractionMin,
            std::to_string(decreasing) + "/" + std::to_string(reps) + " seeds strictly decreasing"};
}

// Matched model/MC comparisons shared by criteria 7-9.

struct MatchedRun {
    std::string label;
    ComparisonReport report;
};

std::vector<MatchedRun> g_matched;

const std::vector<MatchedRun>& matched_runs() {
    if (!g_matched.empty())
        return g_matched;
    const auto map = make_region_map({{1, "r1", 52.0, 0.35},
                                      {2, "r2", 61.0, 0.30},
                                      {3, "r3", 73.0, 0.20},
                                      {4, "r4", 88.0, 0.15}});
    const std::uint64_t records_per_region = 10000;
    std::vector<std::pair<double, double>> grid; // (p_det, p_trans)
    for (double v : {0.2, 0.4, 0.6, 0.8})
        grid.emplace_back(1.0, v);
    for (double v : {0.2, 0.4, 0.6, 0.8})
        grid.emplace_back(v, 1.0);

    std::uint64_t seed = 1000;
    for (const auto& [p_det, p_trans] : grid) {
        ModelParams p;
        p.p_det = p_det;
        p.p_trans = p_trans;
        p.noise_sigma_s = 1.0;
        p.duration_s = 86400.0;
        p.max_laps = 64;
        p.mass_epsilon = 1e-13;

        DatasetSet data;
        std::map<RegionId, Pmf> model;
        const double windows_per_device = p.duration_s * p.p_trans / map.mean_travel_time();
        const auto devices = static_cast<std::uint64_t>(std::ceil(1.2 * records_per_region / windows_per_device)) + 1;
        for (const auto& region : map.regions()) {
            Dataset ds = simulate_population(map, region.id, p, devices, SimSeed{++seed});
            ds.records.resize(std::min<std::size_t>(ds.records.size(), records_per_region));
            data.emplace(region.id, std::move(ds));
            model.emplace(region.id, enumerate_pmf(map, region.id, p));
        }
        const CompareOptions opt{kMwAlpha, 1e-6, false};
        g_matched.push_back({"p_det=" + fmt(p_det) + ",p_trans=" + fmt(p_trans),
                             compare_with_model(data, model, map, opt, SimSeed{++seed})});
    }
    return g_matched;
}

Outcome mw_acceptance() {
    std::size_t accepted = 0, tests = 0;
    std::string worst;
    for (const auto& run : matched_runs()) {
        for (const auto& rc : run.report.per_region) {
            if (!rc.mw || rc.mw->inconclusive)
                continue;
            ++tests;
            if (rc.mw->accepted)
                ++accepted;
            else
                worst += " rejected[" + run.label + ",region=" + std::to_string(rc.region) +
                         ",p=" + fmt(rc.mw->p_value) + "]";
        }
    }
    const double fraction = tests ? static_cast<double>(accepted) / tests : 0.0;
    return {tests > 0 && fraction >= kMwAcceptMin,
            "accepted " + std::to_string(accepted) + "/" + std::to_string(tests) + " = " + fmt(fraction) + worst};
}

Outcome ecdf_distance() {
    double worst = 0.0;
    std::string worst_label;
    for (const auto& run : matched_runs()) {
        if (run.report.summary.mean_ecdf_distance >= worst) {
            worst = run.report.summary.mean_ecdf_distance;
            worst_label = run.label;
        }
    }
    return {worst <= kEcdfMeanMax, "worst scenario mean=" + fmt(worst) + " (" + worst_label + ")"};
}

Outcome kl_bound() {
    double worst = 0.0;
    std::string worst_label;
    for (const auto& run : matched_runs()) {
        if (run.report.summary.max_kl >= worst) {
            worst = run.report.summary.max_kl;
            worst_label = run.label;
        }
    }
    return {worst <= kKlMax, "max_kl=" + fmt(worst) + " (" + worst_label + ")"};
}

Outcome statistics_oracles() {
    const std::vector<double> u_a{1, 2}, u_b{3, 4};
    double brute_u = 0.0;
    for (double x : u_a)
        for (double y : u_b)
            brute_u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    const double u = mann_whitney(u_a, u_b).u_statistic;

    const std::vector<double> k_a{1, 2, 3}, k_b{2, 3, 4};
    double brute_ks = 0.0;
    for (double x = 0.0; x <= 5.0; x += 0.25) {
        const double fa = std::count_if(k_a.begin(), k_a.end(), [&](double v) { return v <= x; }) / 3.0;
        const double fb = std::count_if(k_b.begin(), k_b.end(), [&](double v) { return v <= x; }) / 3.0;
        brute_ks = std::max(brute_ks, std::abs(fa - fb));
    }
    const double ks = ecdf_max_distance(k_a, k_b);

    const double brute_kl = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    const double kl = kl_bit_divergence(0.5, 0.25);

    const bool pass = u == 0.0 && brute_u == 0.0 && std::abs(ks - 1.0 / 3.0) < 1e-12 &&
                      std::abs(ks - brute_ks) < 1e-12 && std::abs(kl - 0.1438) <= kKlOracleTol &&
                      std::abs(kl - brute_kl) < 1e-12;
    return {pass, "U=" + fmt(u) + " KS=" + fmt(ks) + " KL=" + fmt(kl)};
}

Outcome determinism() {
    const auto dir = scratch("determinism");
    bool same = true;
    std::string reference;
    int run = 0;
    for (const char* threads : {"1", "1", "2", "4"}) {
        const auto out = dir / ("run" + std::to_string(run++) + "_threads" + threads);
        if (cli_run({"simulate", "--devices", "500", "--seed", "31337", "--threads", threads, "--event-region",
                     "all", "--out", out.string()}) != 0)
            return {false, "simulate command failed"};
        const std::string bytes = slurp(out / "dataset_r1.csv") + slurp(out / "dataset_r2.csv");
        if (reference.empty())
            reference = bytes;
        else
            same = same && bytes == reference;
    }
    const auto map = builtin_two_region_example().map;
    const auto params = builtin_two_region_example().params;
    const auto lib_a = simulate_population(map, 2, params, 300, SimSeed{5}, 1);
    const auto lib_b = simulate_population(map, 2, params, 300, SimSeed{5}, 3);
    same = same && lib_a.records == lib_b.records;
    return {same && !reference.empty(), std::to_string(reference.size()) + " bytes per run, 4 runs, threads 1/2/4"};
}

} // namespace

int main(int argc, char** argv) {
    g_scratch = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "nanoflow_acceptance";
    fs::create_directories(g_scratch);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"equation-level atom probabilities", equation_oracles},
        {"normalization on random scenarios", normalization},
        {"detected/undetected case partition", case_partition},
        {"two-region distribution shape", two_region_shape},
        {"Monte Carlo vs analytic total variation", mc_vs_analytic},
        {"MSE convergence over device ladder", convergence_trend},
        {"Mann-Whitney acceptance, model vs simulator", mw_acceptance},
        {"mean ECDF distance, model vs simulator", ecdf_distance},
        {"event-bit KL bound", kl_bound},
        {"statistics oracles", statistics_oracles},
        {"byte-identical datasets", determinism},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}

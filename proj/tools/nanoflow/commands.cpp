#include "nanoflow/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "nanoflow/analytic_model.hpp"
#include "nanoflow/errors.hpp"
#include "nanoflow/flow_sim.hpp"
#include "nanoflow/format.hpp"
#include "nanoflow/region_config.hpp"
#include "nanoflow/stat_compare.hpp"

namespace nanoflow::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

/// Raw command-line values; unset optionals fall back to the scenario file and
/// then to the builtin defaults.
struct ScenarioFlags {
    std::string scenario_path;
    std::optional<std::string> map;
    std::string event_regions;
    std::optional<double> p_det, p_trans, noise_sigma, duration, mass_epsilon;
    std::optional<int> max_laps;
    std::optional<std::uint64_t> devices, seed;
    std::string out = ".";
    std::string sweep;
    unsigned threads = 0;
};

struct ScenarioSpec {
    RegionMap map;
    std::vector<RegionId> event_regions;
    ModelParams params;
    std::uint64_t device_count = 1000;
    std::uint64_t seed = kDefaultSeed;
    fs::path output_dir;
};

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty())
            parts.push_back(item);
    return parts;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("invalid " + what + " '" + s + "'");
    }
}

RegionMap resolve_map(const std::string& spec) {
    if (spec == "builtin:two-region")
        return builtin_two_region_example().map;
    if (spec == "builtin:24-region")
        return builtin_24_region_template();
    return load_region_map(spec);
}

ScenarioSpec resolve_scenario(const ScenarioFlags& f, std::ostream& err) {
    ScenarioSpec s;
    s.params = builtin_two_region_example().params;
    std::optional<std::string> map_spec = f.map;
    std::optional<RegionMap> inline_map;
    std::string regions = f.event_regions;

    if (!f.scenario_path.empty()) {
        std::ifstream in(f.scenario_path);
        if (!in)
            throw ParseError("cannot open scenario '" + f.scenario_path + "'");
        nlohmann::json doc;
        try {
            in >> doc;
            s.params = params_from_json(doc, s.params);
            if (!map_spec && doc.contains("region_map")) {
                const auto& m = doc["region_map"];
                if (m.is_object()) {
                    inline_map = region_map_from_json(m);
                } else {
                    fs::path p = m.get<std::string>();
                    if (p.is_relative() && p.string().rfind("builtin:", 0) != 0)
                        p = fs::path(f.scenario_path).parent_path() / p;
                    map_spec = p.string();
                }
            }
            if (regions.empty() && doc.contains("event_region"))
                regions = doc["event_region"].dump();
            if (doc.contains("device_count"))
                s.device_count = doc["device_count"].get<std::uint64_t>();
            if (doc.contains("seed"))
                s.seed = doc["seed"].get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("scenario '" + f.scenario_path + "': " + e.what());
        }
    }
    s.map = inline_map ? *inline_map : resolve_map(map_spec.value_or("builtin:two-region"));
    if (s.map.is_placeholder())
        err << "nanoflow: warning: region map uses placeholder travel times and probabilities; "
               "calibrate them before interpreting results\n";

    if (f.p_det) s.params.p_det = *f.p_det;
    if (f.p_trans) s.params.p_trans = *f.p_trans;
    if (f.noise_sigma) s.params.noise_sigma_s = *f.noise_sigma;
    if (f.duration) s.params.duration_s = *f.duration;
    if (f.max_laps) s.params.max_laps = *f.max_laps;
    if (f.mass_epsilon) s.params.mass_epsilon = *f.mass_epsilon;
    if (f.devices) s.device_count = *f.devices;

    if (f.seed) {
        s.seed = *f.seed;
    } else if (const char* env = std::getenv("NANOFLOW_SEED"); env && *env) {
        try {
            s.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ValidationError(std::string("NANOFLOW_SEED is not an integer: '") + env + "'");
        }
    }

    if (regions.empty() || regions == "all") {
        if (regions == "all")
            for (const auto& r : s.map.regions())
                s.event_regions.push_back(r.id);
        else
            s.event_regions.push_back(s.map.regions().front().id);
    } else {
        for (const auto& tok : split(regions, ',')) {
            const auto id = static_cast<RegionId>(parse_double(tok, "event region"));
            if (!s.map.contains(id))
                throw ValidationError("event region " + tok + " not in region map");
            s.event_regions.push_back(id);
        }
    }

    validate(s.params);
    if (s.params.duration_s < s.map.min_travel_time())
        throw ValidationError("duration below minimum travel time");
    if (s.device_count < 1)
        throw ValidationError("device count must be >= 1");
    s.output_dir = f.out;
    return s;
}

/// Expands `--sweep key=v1,v2,...` into one scenario per value, each writing
/// to its own subdirectory.
std::vector<ScenarioSpec> expand_sweep(const ScenarioSpec& base, const std::string& sweep) {
    if (sweep.empty())
        return {base};
    const auto eq = sweep.find('=');
    if (eq == std::string::npos)
        throw ValidationError("--sweep expects key=v1,v2,...");
    const std::string key = sweep.substr(0, eq);
    std::vector<ScenarioSpec> out;
    for (const auto& tok : split(sweep.substr(eq + 1), ',')) {
        ScenarioSpec s = base;
        const double v = parse_double(tok, key);
        if (key == "p_trans")
            s.params.p_trans = v;
        else if (key == "p_det")
            s.params.p_det = v;
        else if (key == "noise_sigma")
            s.params.noise_sigma_s = v;
        else
            throw ValidationError("--sweep supports p_trans, p_det, noise_sigma; got '" + key + "'");
        validate(s.params);
        s.output_dir = base.output_dir / (key + "=" + tok);
        out.push_back(std::move(s));
    }
    if (out.empty())
        throw ValidationError("--sweep has no values");
    return out;
}

void write_scenario_metadata(const ScenarioSpec& s, const std::string& command) {
    nlohmann::json doc = {{"command", command},
                          {"region_map", region_map_to_json(s.map)},
                          {"region_map_hash", region_map_hash(s.map)},
                          {"event_regions", s.event_regions},
                          {"device_count", s.device_count},
                          {"seed", s.seed}};
    doc.update(params_to_json(s.params));
    std::ofstream out(s.output_dir / "scenario.json");
    if (!out)
        throw ParseError("cannot write '" + (s.output_dir / "scenario.json").string() + "'");
    out << doc.dump(2) << '\n';
}

void prepare_output(const ScenarioSpec& s, const std::string& command) {
    std::error_code ec;
    fs::create_directories(s.output_dir, ec);
    if (ec)
        throw ValidationError("cannot create output directory '" + s.output_dir.string() +
                              "': " + ec.message());
    write_scenario_metadata(s, command);
}

std::string region_stem(const std::string& prefix, RegionId id) {
    return prefix + "_r" + std::to_string(id);
}

// ---------------------------------------------------------------------------

struct DistOptions {
    double tolerance = 1e-9;
};

void cmd_dist(const ScenarioSpec& s, const DistOptions& opt, std::ostream& out) {
    prepare_output(s, "dist");
    for (RegionId event : s.event_regions) {
        const Pmf pmf = collapse_pmf(enumerate_pmf(s.map, event, s.params), opt.tolerance);
        const fs::path stem = s.output_dir / region_stem("pmf", event);
        write_pmf_csv(pmf, stem.string() + ".csv");
        write_pmf_json(pmf, stem.string() + ".json");
        write_pmf_bars(pmf, stem.string() + "_bars.dat");
        out << "event_region=" << event << " atoms=" << pmf.atoms.size()
            << " retained_mass=" << format_double(pmf.retained_mass())
            << " truncated_mass=" << format_double(pmf.truncated_mass) << '\n';
    }
}

void cmd_simulate(const ScenarioSpec& s, unsigned threads, std::ostream& out) {
    prepare_output(s, "simulate");
    for (RegionId event : s.event_regions) {
        const Dataset ds =
            simulate_population(s.map, event, s.params, s.device_count, SimSeed{s.seed}, threads);
        write_dataset(ds, s.output_dir / (region_stem("dataset", event) + ".csv"));
        out << "event_region=" << event << " records=" << ds.records.size() << '\n';
    }
}

struct ConvergeOptions {
    std::string ladder = "10,100,1000,10000";
    std::optional<double> tolerance;
};

std::vector<std::uint64_t> parse_ladder(const std::string& text) {
    std::vector<std::uint64_t> ladder;
    for (const auto& tok : split(text, ',')) {
        const double v = parse_double(tok, "ladder entry");
        if (!(v >= 1.0) || v != std::floor(v))
            throw ValidationError("ladder entries must be positive integers, got '" + tok + "'");
        const auto n = static_cast<std::uint64_t>(v);
        if (!ladder.empty() && n <= ladder.back())
            throw ValidationError("device ladder must be strictly increasing");
        ladder.push_back(n);
    }
    if (ladder.empty())
        throw ValidationError("device ladder is empty");
    return ladder;
}

double binning_tolerance(const ModelParams& p, const std::optional<double>& requested) {
    if (requested)
        return *requested;
    return p.noise_sigma_s > 0.0 ? 3.0 * p.noise_sigma_s : 1e-6;
}

void cmd_converge(const ScenarioSpec& s, const ConvergeOptions& opt, unsigned threads,
                  std::ostream& out) {
    const auto ladder = parse_ladder(opt.ladder);
    const double tol = binning_tolerance(s.params, opt.tolerance);
    prepare_output(s, "converge");
    for (RegionId event : s.event_regions) {
        const Pmf analytic = enumerate_pmf(s.map, event, s.params);
        std::ofstream csv(s.output_dir / (region_stem("converge", event) + ".csv"));
        if (!csv)
            throw ParseError("cannot write convergence table");
        csv << "devices,mse\n";
        for (std::uint64_t n : ladder) {
            const Dataset ds = simulate_population(s.map, event, s.params, n, SimSeed{s.seed}, threads);
            if (ds.records.empty()) {
                csv << n << ",\n";
                continue;
            }
            const double mse = pmf_mse(empirical_pmf(ds, s.map, tol), analytic, tol);
            csv << n << ',' << format_double(mse) << '\n';
            out << "event_region=" << event << " devices=" << n << " mse=" << format_double(mse) << '\n';
        }
    }
}

// ---------------------------------------------------------------------------

struct CompareFlags {
    std::string a, b;
    bool analytic = false;
    double alpha = 0.05;
    double kl_eps = 1e-6;
    bool ecdf_squared = false;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
};

std::vector<fs::path> dataset_files(const fs::path& p) {
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
        for (const auto& entry : fs::directory_iterator(p))
            if (entry.path().extension() == ".csv" && fs::exists(dataset_metadata_path(entry.path())))
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(p);
    }
    if (files.empty())
        throw ParseError("no datasets found in '" + p.string() + "'");
    return files;
}

DatasetSet load_dataset_set(const fs::path& p) {
    DatasetSet set;
    std::string hash;
    for (const auto& file : dataset_files(p)) {
        Dataset ds = read_dataset(file);
        const auto h = region_map_hash(ds.scenario.map);
        if (!hash.empty() && h != hash)
            throw IncompatibleInputError("datasets under '" + p.string() + "' use different region maps");
        hash = h;
        const RegionId event = ds.scenario.event_region;
        if (!set.emplace(event, std::move(ds)).second)
            throw IncompatibleInputError("two datasets for event region " + std::to_string(event) +
                                         " under '" + p.string() + "'");
    }
    return set;
}

void cmd_compare(const CompareFlags& f, std::ostream& out) {
    if (f.b.empty() == !f.analytic)
        throw ValidationError("compare needs either a second dataset or --analytic");
    const DatasetSet a = load_dataset_set(f.a);
    const RegionMap& map = a.begin()->second.scenario.map;
    const CompareOptions opt{f.alpha, f.kl_eps, f.ecdf_squared};
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
        throw ValidationError("--alpha must lie in (0,1)");

    ComparisonReport report;
    if (f.analytic) {
        std::map<RegionId, Pmf> model;
        for (const auto& [id, ds] : a)
            model.emplace(id, enumerate_pmf(map, id, ds.scenario.params));
        std::uint64_t seed = kDefaultSeed;
        if (f.seed)
            seed = *f.seed;
        else if (const char* env = std::getenv("NANOFLOW_SEED"); env && *env)
            seed = std::stoull(env);
        report = compare_with_model(a, model, map, opt, SimSeed{seed});
    } else {
        const DatasetSet b = load_dataset_set(f.b);
        if (region_map_hash(b.begin()->second.scenario.map) != region_map_hash(map))
            throw IncompatibleInputError("region map hash mismatch between '" + f.a + "' and '" + f.b + "'");
        report = compare_datasets(a, b, map, opt);
    }

    std::error_code ec;
    fs::create_directories(f.out, ec);
    if (ec)
        throw ValidationError("cannot create output directory '" + f.out + "'");
    write_report_json(report, fs::path(f.out) / "report.json");
    write_report_csv(report, fs::path(f.out) / "report.csv");
    const auto& s = report.summary;
    out << "regions=" << report.per_region.size() << " accept_fraction=" << format_double(s.accept_fraction)
        << " mean_ecdf_distance=" << format_double(s.mean_ecdf_distance)
        << " max_kl=" << format_double(s.max_kl) << " missing=" << s.missing_regions << '\n';
}

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f, bool with_devices) {
    cmd->add_option("--scenario", f.scenario_path, "Scenario JSON (model parameters, map, seed)");
    cmd->add_option("--map", f.map, "Region map JSON, builtin:two-region or builtin:24-region");
    cmd->add_option("--event-region", f.event_regions, "Event region id(s), comma separated, or 'all'");
    cmd->add_option("--p-det", f.p_det, "Detection probability");
    cmd->add_option("--p-trans", f.p_trans, "Transmission probability");
    cmd->add_option("--noise-sigma", f.noise_sigma, "Gaussian noise standard deviation [s]");
    cmd->add_option("--duration", f.duration, "Administration duration [s]");
    cmd->add_option("--max-laps", f.max_laps, "Lap cap for the enumeration");
    cmd->add_option("--mass-epsilon", f.mass_epsilon, "Subtree pruning threshold");
    cmd->add_option("--seed", f.seed, "Master seed (falls back to NANOFLOW_SEED)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--sweep", f.sweep, "Parameter sweep, e.g. p_trans=0.2,0.4,0.6,0.8");
    if (with_devices) {
        cmd->add_option("--devices", f.devices, "Number of nanodevices");
        cmd->add_option("--threads", f.threads, "Worker threads (0 = hardware concurrency)");
    }
}

void report_error(std::ostream& err, const char* kind, const std::string& message) {
    err << "nanoflow: error: kind=" << kind << ": " << message << '\n';
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Analytical raw-data model and Monte Carlo simulator for flow-guided localization",
                 "nanoflow"};
    app.require_subcommand(1);

    ScenarioFlags dist_flags, sim_flags, conv_flags;
    DistOptions dist_opt;
    ConvergeOptions conv_opt;
    CompareFlags cmp;

    auto* dist = app.add_subcommand("dist", "Exact raw-data distribution for a scenario");
    add_scenario_flags(dist, dist_flags, false);
    dist->add_option("--tolerance", dist_opt.tolerance, "Merge atoms closer than this [s]");

    auto* sim = app.add_subcommand("simulate", "Monte Carlo raw-data stream for N devices");
    add_scenario_flags(sim, sim_flags, true);

    auto* conv = app.add_subcommand("converge", "MSE of simulated frequencies vs the exact pmf");
    add_scenario_flags(conv, conv_flags, true);
    conv->add_option("--ladder", conv_opt.ladder, "Strictly increasing device counts");
    conv->add_option("--tolerance", conv_opt.tolerance, "Lattice binning tolerance [s]");

    auto* compare = app.add_subcommand("compare", "Metric suite between two datasets");
    compare->add_option("dataset_a", cmp.a, "Dataset CSV or directory of datasets")->required();
    compare->add_option("dataset_b", cmp.b, "Dataset CSV or directory of datasets");
    compare->add_flag("--analytic", cmp.analytic, "Compare against the analytic model instead");
    compare->add_option("--alpha", cmp.alpha, "Mann-Whitney significance level");
    compare->add_option("--kl-eps", cmp.kl_eps, "Smoothing for event-bit ratios");
    compare->add_flag("--ecdf-squared", cmp.ecdf_squared, "Also report the squared ECDF area");
    compare->add_option("--out", cmp.out, "Output directory");
    compare->add_option("--seed", cmp.seed, "Seed for model sampling (falls back to NANOFLOW_SEED)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", e.what());
        return kValidationError;
    }

    try {
        if (dist->parsed()) {
            const auto base = resolve_scenario(dist_flags, err);
            for (const auto& s : expand_sweep(base, dist_flags.sweep))
                cmd_dist(s, dist_opt, out);
        } else if (sim->parsed()) {
            const auto base = resolve_scenario(sim_flags, err);
            for (const auto& s : expand_sweep(base, sim_flags.sweep))
                cmd_simulate(s, sim_flags.threads, out);
        } else if (conv->parsed()) {
            const auto base = resolve_scenario(conv_flags, err);
            for (const auto& s : expand_sweep(base, conv_flags.sweep))
                cmd_converge(s, conv_opt, conv_flags.threads, out);
        } else if (compare->parsed()) {
            cmd_compare(cmp, out);
        }
    } catch (const IncompatibleInputError& e) {
        report_error(err, "incompatible", e.what());
        return kIncompatibleInput;
    } catch (const ValidationError& e) {
        report_error(err, "validation", e.what());
        return kValidationError;
    } catch (const ParseError& e) {
        report_error(err, "parse", e.what());
        return kValidationError;
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what());
        return kValidationError;
    }
    return kSuccess;
}

} // namespace nanoflow::cli

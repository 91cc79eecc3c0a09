#include "nanoflow/flow_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <thread>
#include <tuple>

#include "nanoflow/errors.hpp"

namespace nanoflow {

namespace {

std::mt19937_64 make_engine(std::uint64_t stream_seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(stream_seed),
                      static_cast<std::uint32_t>(stream_seed >> 32)};
    return std::mt19937_64(seq);
}

std::discrete_distribution<std::size_t> region_picker(const RegionMap& map) {
    std::vector<double> w;
    w.reserve(map.size());
    for (const auto& r : map.regions())
        w.push_back(r.traversal_prob);
    return {w.begin(), w.end()};
}

/// Adds one noise draw to `t`, redrawing until the result is positive.
template <class Engine>
double add_noise(double t, double sigma, Engine& rng) {
    if (sigma == 0.0)
        return t;
    std::normal_distribution<double> noise(0.0, sigma);
    double out;
    do {
        out = t + noise(rng);
    } while (!(out > 0.0));
    return out;
}

void check_scenario(const RegionMap& map, RegionId event_region, const ModelParams& params) {
    validate(params);
    if (!map.contains(event_region))
        throw ValidationError("unknown event region " + std::to_string(event_region));
    if (params.duration_s < map.min_travel_time())
        throw ValidationError("duration below minimum travel time");
}

void collect_lattice(const RegionMap& map, std::size_t depth, int laps, double time, int max_laps,
                     double max_time, std::vector<double>& out) {
    if (depth == map.size()) {
        if (laps >= 1)
            out.push_back(time);
        return;
    }
    const double travel = map.regions()[depth].travel_time_s;
    for (int n = 0; laps + n <= max_laps; ++n) {
        const double t = time + n * travel;
        if (t > max_time)
            break;
        collect_lattice(map, depth + 1, laps + n, t, max_laps, max_time, out);
    }
}

} // namespace

std::uint64_t device_stream_seed(SimSeed seed, std::uint64_t device_id) {
    // splitmix64 finalizer over the pair.
    std::uint64_t z = seed.master_seed + 0x9e3779b97f4a7c15ULL * (device_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<RawDatum> simulate_device(const RegionMap& map, RegionId event_region,
                                      const ModelParams& params, std::uint64_t device_id,
                                      SimSeed seed, std::vector<WindowTrace>* trace) {
    check_scenario(map, event_region, params);
    const std::size_t event_index = *map.index_of(event_region);

    auto rng = make_engine(device_stream_seed(seed, device_id));
    auto pick = region_picker(map);
    std::bernoulli_distribution detect(params.p_det);
    std::bernoulli_distribution transmit(params.p_trans);

    std::vector<RawDatum> out;
    double elapsed = 0.0;
    double pending = 0.0;
    int bit = 0;
    int event_passes = 0;
    int detection_pass = 0;
    std::vector<int> counts(map.size(), 0);

    while (true) {
        const std::size_t region = pick(rng);
        const double travel = map.regions()[region].travel_time_s;
        elapsed += travel;
        if (elapsed > params.duration_s)
            break;
        pending += travel;
        ++counts[region];

        if (region == event_index) {
            ++event_passes;
            if (bit == 0 && detect(rng)) {
                bit = 1;
                detection_pass = event_passes;
            }
        }

        if (transmit(rng)) {
            out.push_back({device_id, elapsed, add_noise(pending, params.noise_sigma_s, rng), bit});
            if (trace)
                trace->push_back({LapVector{counts}, detection_pass});
            pending = 0.0;
            bit = 0;
            event_passes = 0;
            detection_pass = 0;
            std::fill(counts.begin(), counts.end(), 0);
        }
    }
    return out;
}

Dataset simulate_population(const RegionMap& map, RegionId event_region, const ModelParams& params,
                            std::uint64_t device_count, SimSeed seed, unsigned threads) {
    check_scenario(map, event_region, params);
    if (device_count < 1)
        throw ValidationError("device_count must be >= 1");
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, device_count));

    std::vector<std::vector<RawDatum>> per_device(device_count);
    auto work = [&](unsigned worker) {
        for (std::uint64_t d = worker; d < device_count; d += threads)
            per_device[d] = simulate_device(map, event_region, params, d, seed);
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back(work, w);
    }

    Dataset ds;
    ds.scenario = {map, event_region, params, device_count, seed};
    std::size_t total = 0;
    for (const auto& v : per_device)
        total += v.size();
    ds.records.reserve(total);
    for (auto& v : per_device)
        ds.records.insert(ds.records.end(), v.begin(), v.end());
    return ds;
}

Dataset sample_pmf(const Pmf& pmf, const RegionMap& map, std::uint64_t count, SimSeed seed) {
    if (pmf.atoms.empty())
        throw ValidationError("cannot sample from an empty pmf");
    if (!pmf.region_map_hash.empty() && pmf.region_map_hash != region_map_hash(map))
        throw IncompatibleInputError("pmf was computed for a different region map");

    std::vector<double> w;
    w.reserve(pmf.atoms.size());
    for (const auto& a : pmf.atoms)
        w.push_back(a.prob);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    auto rng = make_engine(device_stream_seed(seed, ~std::uint64_t{0}));

    Dataset ds;
    ds.source = DataSource::ModelSampled;
    ds.scenario = {map, pmf.event_region, pmf.params, count, seed};
    ds.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto& atom = pmf.atoms[pick(rng)];
        ds.records.push_back(
            {i, atom.time_s, add_noise(atom.time_s, pmf.params.noise_sigma_s, rng), atom.bit});
    }
    return ds;
}

std::vector<double> lattice_times(const RegionMap& map, int max_laps, double max_time) {
    std::vector<double> out;
    collect_lattice(map, 0, 0, 0.0, max_laps, max_time, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, b); }),
              out.end());
    return out;
}

FrequencyTable empirical_pmf(const Dataset& dataset, const RegionMap& map, double time_tolerance,
                             int lattice_max_laps) {
    if (dataset.records.empty())
        throw ValidationError("empirical_pmf: empty dataset");
    if (time_tolerance < 0.0)
        throw ValidationError("time_tolerance must be >= 0");
    const std::string hash = region_map_hash(map);
    if (region_map_hash(dataset.scenario.map) != hash)
        throw IncompatibleInputError("dataset was generated on a different region map");

    const int depth = lattice_max_laps > 0 ? lattice_max_laps : dataset.scenario.params.max_laps;
    double max_time = 0.0;
    for (const auto& r : dataset.records)
        max_time = std::max(max_time, r.iteration_time_s);
    const auto lattice = lattice_times(map, depth, max_time + time_tolerance);

    std::map<std::pair<double, int>, std::pair<std::uint64_t, bool>> bins;
    std::uint64_t unmatched = 0;
    for (const auto& r : dataset.records) {
        const double t = r.iteration_time_s;
        double best = t;
        bool matched = false;
        auto it = std::lower_bound(lattice.begin(), lattice.end(), t);
        double best_gap = time_tolerance;
        for (auto cand : {it, it == lattice.begin() ? lattice.end() : std::prev(it)}) {
            if (cand == lattice.end())
                continue;
            const double gap = std::abs(*cand - t);
            if (gap <= best_gap && (!matched || gap < std::abs(best - t))) {
                best = *cand;
                best_gap = gap;
                matched = true;
            }
        }
        if (!matched)
            ++unmatched;
        auto& slot = bins[{best, r.bit}];
        ++slot.first;
        slot.second = matched;
    }

    FrequencyTable table;
    table.region_map_hash = hash;
    table.record_count = dataset.records.size();
    table.unmatched_count = unmatched;
    const double n = static_cast<double>(dataset.records.size());
    for (const auto& [key, val] : bins)
        table.atoms.push_back({key.first, key.second, val.first, val.first / n, val.second});
    return table;
}

} // namespace nanoflow

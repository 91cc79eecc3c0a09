#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nanoflow/analytic_model.hpp"
#include "nanoflow/region_config.hpp"

namespace nanoflow {

/// One report received by the anchor.
struct RawDatum {
    std::uint64_t device_id = 0;
    /// Noiseless time since administration at which the report was sent.
    double timestamp_s = 0.0;
    /// Time since the previous successful report, noise included. Always > 0.
    double iteration_time_s = 0.0;
    int bit = 0;

    bool operator==(const RawDatum&) const = default;
};

struct SimSeed {
    std::uint64_t master_seed = 0;
};

struct Scenario {
    RegionMap map;
    RegionId event_region = 0;
    ModelParams params;
    std::uint64_t device_count = 0;
    SimSeed seed;
};

/// Where a dataset's records came from.
enum class DataSource { MonteCarlo, ModelSampled };

struct Dataset {
    std::vector<RawDatum> records; // sorted by (device_id, timestamp)
    Scenario scenario;
    DataSource source = DataSource::MonteCarlo;
};

/// Ground truth for each emitted record, for instrumented runs.
struct WindowTrace {
    LapVector laps;
    /// 1-based pass through the event region on which the event was detected,
    /// 0 if it was not.
    int detection_pass = 0;
};

/// Per-device generator seeded from (master_seed, device_id).
std::uint64_t device_stream_seed(SimSeed seed, std::uint64_t device_id);

/// Simulates one device until the administration duration runs out. Each lap
/// picks one region; a pass through the event region detects with p_det
/// (once per window); each heart passage transmits with p_trans, after which
/// the window time and bit reset. A window still open at the end is dropped.
/// When `trace` is given it receives one entry per returned record.
std::vector<RawDatum> simulate_device(const RegionMap& map, RegionId event_region,
                                      const ModelParams& params, std::uint64_t device_id,
                                      SimSeed seed, std::vector<WindowTrace>* trace = nullptr);

/// Independent devices 0..device_count-1. Output does not depend on `threads`
/// (0 picks the hardware concurrency).
Dataset simulate_population(const RegionMap& map, RegionId event_region, const ModelParams& params,
                            std::uint64_t device_count, SimSeed seed, unsigned threads = 0);

/// Draws `count` records from a pmf (renormalized over retained mass) and adds
/// one Gaussian noise draw per record, resampled until positive.
Dataset sample_pmf(const Pmf& pmf, const RegionMap& map, std::uint64_t count, SimSeed seed);

struct FrequencyAtom {
    double time_s = 0.0;
    int bit = 0;
    std::uint64_t count = 0;
    double freq = 0.0;
    /// False when the record time had no lattice point within the tolerance
    /// and was binned at its raw value.
    bool matched = true;
};

struct FrequencyTable {
    std::vector<FrequencyAtom> atoms; // sorted by (time, bit)
    std::string region_map_hash;
    std::uint64_t record_count = 0;
    std::uint64_t unmatched_count = 0;
};

/// Distinct values of sum n_i T_i with 1..max_laps laps and value <= max_time,
/// ascending.
std::vector<double> lattice_times(const RegionMap& map, int max_laps, double max_time);

/// Bins record times to the nearest lattice time within `time_tolerance` and
/// returns normalized frequencies. Lattice depth is `lattice_max_laps`, or
/// the scenario's max_laps when 0. Throws ValidationError on an empty dataset.
FrequencyTable empirical_pmf(const Dataset& dataset, const RegionMap& map, double time_tolerance,
                             int lattice_max_laps = 0);

// Dataset files: CSV `device_id,timestamp_s,iteration_time_s,bit` plus a
// `<stem>.meta.json` sidecar holding the scenario and seed.
std::filesystem::path dataset_metadata_path(const std::filesystem::path& csv_path);
void write_dataset(const Dataset& dataset, const std::filesystem::path& csv_path);
Dataset read_dataset(const std::filesystem::path& csv_path);
nlohmann::json scenario_to_json(const Scenario& scenario);

} // namespace nanoflow

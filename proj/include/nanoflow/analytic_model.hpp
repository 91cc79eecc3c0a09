#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nanoflow/region_config.hpp"

namespace nanoflow {

/// Laps through each region accumulated within one reporting window, in the
/// order of RegionMap::regions().
struct LapVector {
    std::vector<int> counts;

    int total_laps() const;
    auto operator<=>(const LapVector&) const = default;
};

struct PmfAtom {
    /// Lap vectors that produced this outcome. A freshly enumerated atom has
    /// exactly one; collapse_pmf() concatenates them.
    std::vector<LapVector> provenance;
    /// Noiseless lattice time, sum of n_i * T_i.
    double time_s = 0.0;
    int bit = 0;
    double prob = 0.0;
};

/// Truncated probability mass function of (iteration time, event bit) for an
/// event located in `event_region`.
struct Pmf {
    std::vector<PmfAtom> atoms;
    RegionId event_region = 0;
    ModelParams params;
    std::string region_map_hash;
    /// 1 - sum of atom probabilities.
    double truncated_mass = 0.0;
    /// Exact untruncated mass of the subtrees dropped by mass_epsilon pruning.
    double pruned_mass = 0.0;

    /// Sum of atom probabilities (compensated).
    double retained_mass() const;
};

/// (sum n_i)! / prod(n_i!). Throws std::overflow_error when the value does
/// not fit in 64 bits; use log_multinomial_coefficient() for those.
std::uint64_t multinomial_coefficient(std::span<const int> counts);
double log_multinomial_coefficient(std::span<const int> counts);

/// sum n_i * T_i, accumulated in region order.
double lattice_time(const LapVector& laps, const RegionMap& map);

/// Probability that the laps of one window have composition `laps`:
/// multinomial(n) * prod P_i^n_i. Evaluated in log space above 20 laps.
double path_probability(const LapVector& laps, const RegionMap& map);

/// (1 - p_det)^(i-1) * p_det: first detection happens on pass i.
double detect_in_iteration_prob(int iteration, double p_det);

/// (1 - p_trans)^(k-1) * p_trans: only the k-th heart passage transmits.
double transmission_factor(int total_laps, double p_trans);

/// Probability of reporting (sum n_i T_i, b = 1). Requires n_j >= 1 for the
/// event region; throws ValidationError otherwise.
double atom_prob_detected(const LapVector& laps, RegionId event_region, const RegionMap& map,
                          const ModelParams& params);

/// Probability of reporting (sum n_i T_i, b = 0).
double atom_prob_undetected(const LapVector& laps, RegionId event_region, const RegionMap& map,
                            const ModelParams& params);

/// Recursively enumerates every lap vector with at most max_laps laps and
/// lattice time within the duration, skipping subtrees whose total mass is
/// below mass_epsilon. Atoms are sorted by (time, bit, lap vector).
/// Throws ValidationError when the duration is shorter than every travel time.
Pmf enumerate_pmf(const RegionMap& map, RegionId event_region, const ModelParams& params);

/// Merges same-bit atoms whose times lie within `time_tolerance` of the first
/// atom of their group.
Pmf collapse_pmf(const Pmf& pmf, double time_tolerance);

/// Fraction of retained mass carried by bit = 1 atoms.
double event_bit_ratio(const Pmf& pmf);

/// Throws ValidationError if probabilities leave [0,1] or the mass does not
/// add up with truncated_mass.
void validate(const Pmf& pmf);

// Export. CSV columns: time_s,bit,prob,lap_vector where lap_vector is the
// colon-separated counts, alternatives joined with '|'.
void write_pmf_csv(const Pmf& pmf, const std::filesystem::path& path);
void write_pmf_json(const Pmf& pmf, const std::filesystem::path& path);
/// Gnuplot data: one row per time with the bit-0 and bit-1 masses.
void write_pmf_bars(const Pmf& pmf, const std::filesystem::path& path);
Pmf read_pmf_json(const std::filesystem::path& path);

} // namespace nanoflow

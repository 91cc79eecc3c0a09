#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "nanoflow/analytic_model.hpp"
#include "nanoflow/flow_sim.hpp"

namespace nanoflow {

enum class MwMethod {
    Auto,  // exact when both samples have at most kMwExactMaxSize values
    Exact, // permutation distribution of the rank sum, ties handled by midranks
    Normal // normal approximation with tie and continuity correction
};

inline constexpr std::size_t kMwExactMaxSize = 20;
inline constexpr std::size_t kMwMinSampleSize = 3;

struct MannWhitneyResult {
    /// U of the first sample: pairs (a, b) with a > b, ties counting 1/2.
    double u_statistic = 0.0;
    /// Two-sided.
    double p_value = 1.0;
    bool accepted = false;
    /// A sample had fewer than kMwMinSampleSize values; never accepted.
    bool inconclusive = false;
    bool exact = false;
};

/// Two-sided Mann-Whitney U test. Throws ValidationError on an empty sample.
MannWhitneyResult mann_whitney(std::span<const double> sample_a, std::span<const double> sample_b,
                               double alpha = 0.05, MwMethod method = MwMethod::Auto);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ecdf_max_distance(std::span<const double> sample_a, std::span<const double> sample_b);

/// Integral of (F_a - F_b)^2 over the pooled sample range.
double ecdf_squared_area(std::span<const double> sample_a, std::span<const double> sample_b);

/// Bernoulli KL divergence D(a || b) in nats, both ratios clamped to
/// [smoothing_eps, 1 - smoothing_eps].
double kl_bit_divergence(double ratio_a, double ratio_b, double smoothing_eps = 1e-6);

/// Mean squared difference between empirical frequencies and analytic
/// probabilities (renormalized over retained mass) across the union of both
/// supports. Atoms pair up when bits agree and times lie within
/// `time_tolerance`. Throws IncompatibleInputError for different region maps.
double pmf_mse(const FrequencyTable& empirical, const Pmf& analytic, double time_tolerance);

/// Half the L1 distance over the same union as pmf_mse.
double total_variation(const FrequencyTable& empirical, const Pmf& analytic, double time_tolerance);

struct RegionComparison {
    RegionId region = 0;
    std::string name;
    /// "a" or "b" when that input has no dataset for this region.
    std::optional<std::string> missing;

    std::size_t n_bit1_a = 0, n_bit1_b = 0, n_bit0_a = 0, n_bit0_b = 0;
    std::optional<MannWhitneyResult> mw;       // bit = 1 iteration times
    std::optional<double> ecdf_max_distance;   // bit = 0 iteration times
    std::optional<double> ecdf_squared_area;   // only with CompareOptions::ecdf_squared
    std::optional<double> kl_bit_divergence;   // absent for excluded regions
    std::optional<double> bit_ratio_a;
    std::optional<double> bit_ratio_b;
};

struct ComparisonSummary {
    /// Accepted / conclusive Mann-Whitney tests.
    double accept_fraction = 0.0;
    std::size_t mw_tests = 0;
    std::size_t mw_inconclusive = 0;
    double mean_ecdf_distance = 0.0;
    double max_kl = 0.0;
    std::size_t missing_regions = 0;
};

struct ComparisonReport {
    std::string region_map_hash;
    double alpha = 0.05;
    double kl_eps = 1e-6;
    std::vector<RegionComparison> per_region; // region-id order
    ComparisonSummary summary;
};

struct CompareOptions {
    double alpha = 0.05;
    double kl_eps = 1e-6;
    bool ecdf_squared = false;
};

/// Datasets keyed by event region.
using DatasetSet = std::map<RegionId, Dataset>;

/// Runs the metric suite per event region: Mann-Whitney on bit-1 times,
/// ECDF distance on bit-0 times, KL on event-bit ratios.
ComparisonReport compare_datasets(const DatasetSet& a, const DatasetSet& b, const RegionMap& map,
                                  const CompareOptions& options = {});

/// Same protocol against the analytic model: time metrics use records drawn
/// from each pmf (as many as the dataset has), the KL uses the exact
/// event-bit ratio of the pmf.
ComparisonReport compare_with_model(const DatasetSet& data, const std::map<RegionId, Pmf>& model,
                                    const RegionMap& map, const CompareOptions& options,
                                    SimSeed sample_seed);

void write_report_json(const ComparisonReport& report, const std::filesystem::path& path);
void write_report_csv(const ComparisonReport& report, const std::filesystem::path& path);

} // namespace nanoflow

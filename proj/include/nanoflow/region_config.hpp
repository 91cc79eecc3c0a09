#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace nanoflow {

using RegionId = int;

/// One cardiovascular loop (heart -> body part -> heart).
struct Region {
    RegionId id = 0;
    std::string name;
    double travel_time_s = 0.0;
    double traversal_prob = 0.0;

    bool operator==(const Region&) const = default;
};

class RegionMap;

/// Validates and builds a RegionMap. Throws ValidationError naming the
/// violated invariant.
RegionMap make_region_map(std::vector<Region> regions, std::set<RegionId> excluded = {},
                          bool placeholder = false);

/// The localization space. Construct through make_region_map() or a loader so
/// the invariants below hold:
///   - at least one region, ids positive and unique
///   - travel times strictly positive, probabilities in (0,1]
///   - probabilities sum to 1 within kProbSumTolerance (never renormalized)
///   - excluded ids are region ids
class RegionMap {
public:
    static constexpr double kProbSumTolerance = 1e-9;

    RegionMap() = default;

    const std::vector<Region>& regions() const { return regions_; }
    const std::set<RegionId>& excluded_from_bit_metrics() const { return excluded_; }
    std::size_t size() const { return regions_.size(); }

    /// Position of `id` in regions(), or nullopt.
    std::optional<std::size_t> index_of(RegionId id) const;
    const Region& region(RegionId id) const;
    bool contains(RegionId id) const { return index_of(id).has_value(); }
    bool is_excluded(RegionId id) const { return excluded_.count(id) != 0; }

    double min_travel_time() const;
    /// Mean lap time: sum of P_i * T_i.
    double mean_travel_time() const;

    /// Set by builtin_24_region_template(); the travel times and probabilities
    /// are synthetic and must be calibrated before results mean anything.
    bool is_placeholder() const { return placeholder_; }

    bool operator==(const RegionMap& other) const {
        return regions_ == other.regions_ && excluded_ == other.excluded_ &&
               placeholder_ == other.placeholder_;
    }

private:
    friend RegionMap make_region_map(std::vector<Region>, std::set<RegionId>, bool);

    std::vector<Region> regions_;
    std::set<RegionId> excluded_;
    bool placeholder_ = false;
};

/// Detection, transmission, noise and truncation controls.
struct ModelParams {
    double p_det = 0.7;
    double p_trans = 0.7;
    double noise_sigma_s = 1.0;
    double duration_s = 3600.0;
    int max_laps = 6;
    double mass_epsilon = 1e-9;

    bool operator==(const ModelParams&) const = default;
};

/// Throws ValidationError if any ModelParams invariant fails.
void validate(const ModelParams& params);

// JSON schema (schema_version 1).
inline constexpr int kRegionMapSchemaVersion = 1;

nlohmann::json region_map_to_json(const RegionMap& map);
RegionMap region_map_from_json(const nlohmann::json& doc);
nlohmann::json params_to_json(const ModelParams& params);
/// Missing keys keep the value already in `base`.
ModelParams params_from_json(const nlohmann::json& doc, ModelParams base = {});

RegionMap load_region_map(const std::filesystem::path& path);
void save_region_map(const RegionMap& map, const std::filesystem::path& path);

/// Stable 64-bit fingerprint of a region map (hex), used to check that two
/// datasets describe the same localization space.
std::string region_map_hash(const RegionMap& map);

/// The worked two-region example: T = (60, 67) s, P = (0.49, 0.51),
/// p_det = p_trans = 0.7.
struct BuiltinScenario {
    RegionMap map;
    ModelParams params;
};
BuiltinScenario builtin_two_region_example();

/// 24 body regions with uniform placeholder probabilities and synthetic
/// travel times. Lungs (23) and right heart (24) are excluded from bit
/// metrics.
RegionMap builtin_24_region_template();

} // namespace nanoflow

#include "nanoflow/region_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nanoflow/errors.hpp"

namespace nanoflow {

namespace {

std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

template <class T>
T required(const nlohmann::json& obj, const char* key, const char* where) {
    if (!obj.contains(key))
        throw ParseError(std::string(where) + ": missing key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string(where) + ": bad value for '" + key + "': " + e.what());
    }
}

} // namespace

std::optional<std::size_t> RegionMap::index_of(RegionId id) const {
    for (std::size_t i = 0; i < regions_.size(); ++i)
        if (regions_[i].id == id)
            return i;
    return std::nullopt;
}

const Region& RegionMap::region(RegionId id) const {
    auto idx = index_of(id);
    if (!idx)
        throw ValidationError("unknown region id " + std::to_string(id));
    return regions_[*idx];
}

double RegionMap::min_travel_time() const {
    double m = regions_.front().travel_time_s;
    for (const auto& r : regions_)
        m = std::min(m, r.travel_time_s);
    return m;
}

double RegionMap::mean_travel_time() const {
    double acc = 0.0;
    for (const auto& r : regions_)
        acc += r.traversal_prob * r.travel_time_s;
    return acc;
}

RegionMap make_region_map(std::vector<Region> regions, std::set<RegionId> excluded,
                          bool placeholder) {
    if (regions.empty())
        throw ValidationError("region map must contain at least 1 region");

    std::set<RegionId> seen;
    double sum = 0.0;
    for (const auto& r : regions) {
        const std::string tag = "region " + std::to_string(r.id);
        if (r.id <= 0)
            throw ValidationError(tag + ": id must be a positive integer");
        if (!seen.insert(r.id).second)
            throw ValidationError(tag + ": duplicate region id");
        if (!(r.travel_time_s > 0.0) || !std::isfinite(r.travel_time_s))
            throw ValidationError(tag + ": travel_time must be > 0, got " + fmt_num(r.travel_time_s));
        if (!(r.traversal_prob > 0.0 && r.traversal_prob <= 1.0))
            throw ValidationError(tag + ": traversal_prob must be in (0,1], got " +
                                  fmt_num(r.traversal_prob));
        sum += r.traversal_prob;
    }
    if (std::abs(sum - 1.0) > RegionMap::kProbSumTolerance)
        throw ValidationError("traversal probabilities sum to " + fmt_num(sum) +
                              " (must equal 1 within 1e-9)");
    for (RegionId id : excluded)
        if (!seen.count(id))
            throw ValidationError("excluded_from_bit_metrics references unknown region " +
                                  std::to_string(id));

    RegionMap map;
    map.regions_ = std::move(regions);
    map.excluded_ = std::move(excluded);
    map.placeholder_ = placeholder;
    return map;
}

void validate(const ModelParams& p) {
    if (!(p.p_det >= 0.0 && p.p_det <= 1.0))
        throw ValidationError("p_det must be in [0,1], got " + fmt_num(p.p_det));
    if (!(p.p_trans > 0.0 && p.p_trans <= 1.0))
        throw ValidationError("p_trans must be in (0,1], got " + fmt_num(p.p_trans));
    if (!(p.noise_sigma_s >= 0.0) || !std::isfinite(p.noise_sigma_s))
        throw ValidationError("noise_sigma must be >= 0, got " + fmt_num(p.noise_sigma_s));
    if (!(p.duration_s > 0.0) || !std::isfinite(p.duration_s))
        throw ValidationError("duration must be > 0, got " + fmt_num(p.duration_s));
    if (p.max_laps < 1)
        throw ValidationError("max_laps must be a positive integer, got " +
                              std::to_string(p.max_laps));
    if (!(p.mass_epsilon >= 0.0 && p.mass_epsilon <= 1.0))
        throw ValidationError("mass_epsilon must be a probability, got " + fmt_num(p.mass_epsilon));
}

nlohmann::json region_map_to_json(const RegionMap& map) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : map.regions())
        regions.push_back({{"id", r.id},
                           {"name", r.name},
                           {"travel_time_s", r.travel_time_s},
                           {"traversal_prob", r.traversal_prob}});
    nlohmann::json doc = {{"schema_version", kRegionMapSchemaVersion},
                          {"regions", regions},
                          {"excluded_from_bit_metrics", map.excluded_from_bit_metrics()}};
    if (map.is_placeholder())
        doc["placeholder"] = true;
    return doc;
}

RegionMap region_map_from_json(const nlohmann::json& doc) {
    if (!doc.is_object())
        throw ParseError("region map: expected a JSON object");
    const int version = required<int>(doc, "schema_version", "region map");
    if (version != kRegionMapSchemaVersion)
        throw ParseError("region map: unsupported schema_version " + std::to_string(version));
    if (!doc.contains("regions") || !doc["regions"].is_array())
        throw ParseError("region map: 'regions' must be an array");

    std::vector<Region> regions;
    for (const auto& item : doc["regions"]) {
        Region r;
        r.id = required<int>(item, "id", "region");
        r.name = item.value("name", std::string{});
        r.travel_time_s = required<double>(item, "travel_time_s", "region");
        r.traversal_prob = required<double>(item, "traversal_prob", "region");
        regions.push_back(std::move(r));
    }
    std::set<RegionId> excluded;
    if (doc.contains("excluded_from_bit_metrics"))
        excluded = required<std::set<RegionId>>(doc, "excluded_from_bit_metrics", "region map");
    return make_region_map(std::move(regions), std::move(excluded), doc.value("placeholder", false));
}

nlohmann::json params_to_json(const ModelParams& p) {
    return {{"p_det", p.p_det},
            {"p_trans", p.p_trans},
            {"noise_sigma_s", p.noise_sigma_s},
            {"duration_s", p.duration_s},
            {"max_laps", p.max_laps},
            {"mass_epsilon", p.mass_epsilon}};
}

ModelParams params_from_json(const nlohmann::json& doc, ModelParams base) {
    if (!doc.is_object())
        throw ParseError("scenario: expected a JSON object");
    auto read = [&](const char* key, auto& field) {
        if (doc.contains(key))
            field = required<std::decay_t<decltype(field)>>(doc, key, "scenario");
    };
    read("p_det", base.p_det);
    read("p_trans", base.p_trans);
    read("noise_sigma_s", base.noise_sigma_s);
    read("duration_s", base.duration_s);
    read("max_laps", base.max_laps);
    read("mass_epsilon", base.mass_epsilon);
    validate(base);
    return base;
}

RegionMap load_region_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open region map '" + path.string() + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("region map '" + path.string() + "': " + e.what());
    }
    return region_map_from_json(doc);
}

void save_region_map(const RegionMap& map, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot write region map '" + path.string() + "'");
    out << region_map_to_json(map).dump(2) << '\n';
}

std::string region_map_hash(const RegionMap& map) {
    // FNV-1a over the canonical JSON form.
    const std::string text = region_map_to_json(map).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

BuiltinScenario builtin_two_region_example() {
    BuiltinScenario s{make_region_map({{1, "R1", 60.0, 0.49}, {2, "R2", 67.0, 0.51}}),
                      ModelParams{}};
    s.params.p_det = 0.7;
    s.params.p_trans = 0.7;
    return s;
}

RegionMap builtin_24_region_template() {
    // Synthetic loop times in seconds: short loops near the heart, long ones
    // to the extremities. Not physiological data.
    static const std::vector<std::pair<const char*, double>> parts = {
        {"Head", 60.0},           {"Thorax", 45.0},        {"Right shoulder", 55.0},
        {"Left shoulder", 55.0},  {"Spleen", 50.0},        {"Right upper arm", 62.0},
        {"Left upper arm", 62.0}, {"Liver", 52.0},         {"Right elbow", 68.0},
        {"Intestine", 58.0},      {"Right hand", 80.0},    {"Kidneys", 54.0},
        {"Left elbow", 68.0},     {"Left hand", 80.0},     {"Right hip", 66.0},
        {"Left hip", 66.0},       {"Right knee", 84.0},    {"Left pelvis", 64.0},
        {"Left knee", 84.0},      {"Right pelvis", 64.0},  {"Right foot", 98.0},
        {"Left foot", 98.0},      {"Lungs", 40.0},         {"Right heart", 38.0},
    };
    std::vector<Region> regions;
    regions.reserve(parts.size());
    const double p = 1.0 / static_cast<double>(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i)
        regions.push_back({static_cast<RegionId>(i + 1), parts[i].first, parts[i].second, p});
    return make_region_map(std::move(regions), {23, 24}, /*placeholder=*/true);
}

} // namespace nanoflow

#include <charconv>
#include <fstream>
#include <sstream>

#include "nanoflow/errors.hpp"
#include "nanoflow/flow_sim.hpp"
#include "nanoflow/format.hpp"

namespace nanoflow {

namespace {

constexpr const char* kCsvHeader = "device_id,timestamp_s,iteration_time_s,bit";

const char* source_name(DataSource s) {
    return s == DataSource::MonteCarlo ? "monte_carlo" : "model_sampled";
}

template <class T>
T parse_field(std::string_view field, const std::filesystem::path& path, std::size_t line) {
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw ParseError(path.string() + ":" + std::to_string(line) + ": bad field '" +
                         std::string(field) + "'");
    return value;
}

} // namespace

nlohmann::json scenario_to_json(const Scenario& s) {
    return {{"region_map", region_map_to_json(s.map)},
            {"region_map_hash", region_map_hash(s.map)},
            {"event_region", s.event_region},
            {"params", params_to_json(s.params)},
            {"device_count", s.device_count},
            {"seed", s.seed.master_seed}};
}

std::filesystem::path dataset_metadata_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".meta.json");
    return p;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& csv_path) {
    {
        std::ofstream out(csv_path);
        if (!out)
            throw ParseError("cannot write '" + csv_path.string() + "'");
        out << kCsvHeader << '\n';
        for (const auto& r : ds.records)
            out << r.device_id << ',' << format_double(r.timestamp_s) << ','
                << format_double(r.iteration_time_s) << ',' << r.bit << '\n';
    }
    nlohmann::json meta = {{"schema_version", 1},
                           {"kind", "nanoflow-dataset"},
                           {"source", source_name(ds.source)},
                           {"record_count", ds.records.size()},
                           {"scenario", scenario_to_json(ds.scenario)}};
    std::ofstream out(dataset_metadata_path(csv_path));
    if (!out)
        throw ParseError("cannot write metadata for '" + csv_path.string() + "'");
    out << meta.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
    Dataset ds;
    const auto meta_path = dataset_metadata_path(csv_path);
    std::ifstream meta_in(meta_path);
    if (!meta_in)
        throw ParseError("missing dataset metadata '" + meta_path.string() + "'");
    try {
        nlohmann::json meta;
        meta_in >> meta;
        const auto& sc = meta.at("scenario");
        ds.scenario.map = region_map_from_json(sc.at("region_map"));
        if (sc.contains("region_map_hash") &&
            sc["region_map_hash"].get<std::string>() != region_map_hash(ds.scenario.map))
            throw ParseError("dataset metadata: region_map_hash does not match region_map");
        ds.scenario.event_region = sc.at("event_region").get<RegionId>();
        ds.scenario.params = params_from_json(sc.at("params"));
        ds.scenario.device_count = sc.at("device_count").get<std::uint64_t>();
        ds.scenario.seed.master_seed = sc.at("seed").get<std::uint64_t>();
        ds.source = meta.value("source", std::string("monte_carlo")) == "model_sampled"
                        ? DataSource::ModelSampled
                        : DataSource::MonteCarlo;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset metadata '" + meta_path.string() + "': " + e.what());
    }

    std::ifstream in(csv_path);
    if (!in)
        throw ParseError("cannot open dataset '" + csv_path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader)
        throw ParseError(csv_path.string() + ": expected header '" + kCsvHeader + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::string_view rest(line);
        std::string_view fields[4];
        for (int i = 0; i < 4; ++i) {
            const auto comma = rest.find(',');
            if ((comma == std::string_view::npos) != (i == 3))
                throw ParseError(csv_path.string() + ":" + std::to_string(lineno) +
                                 ": expected 4 fields");
            fields[i] = rest.substr(0, comma);
            if (comma != std::string_view::npos)
                rest.remove_prefix(comma + 1);
        }
        RawDatum r;
        r.device_id = parse_field<std::uint64_t>(fields[0], csv_path, lineno);
        r.timestamp_s = parse_field<double>(fields[1], csv_path, lineno);
        r.iteration_time_s = parse_field<double>(fields[2], csv_path, lineno);
        r.bit = parse_field<int>(fields[3], csv_path, lineno);
        if (r.bit != 0 && r.bit != 1)
            throw ParseError(csv_path.string() + ":" + std::to_string(lineno) + ": bit must be 0 or 1");
        ds.records.push_back(r);
    }
    return ds;
}

} // namespace nanoflow

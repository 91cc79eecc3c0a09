#include <charconv>
#include <fstream>
#include <map>

#include "nanoflow/analytic_model.hpp"
#include "nanoflow/errors.hpp"
#include "nanoflow/format.hpp"

namespace nanoflow {

namespace {

std::string lap_vector_field(const std::vector<LapVector>& provenance) {
    std::string out;
    for (std::size_t v = 0; v < provenance.size(); ++v) {
        if (v)
            out += '|';
        for (std::size_t i = 0; i < provenance[v].counts.size(); ++i) {
            if (i)
                out += ':';
            out += std::to_string(provenance[v].counts[i]);
        }
    }
    return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot write '" + path.string() + "'");
    return out;
}

} // namespace

void write_pmf_csv(const Pmf& pmf, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "time_s,bit,prob,lap_vector\n";
    for (const auto& a : pmf.atoms)
        out << format_double(a.time_s) << ',' << a.bit << ',' << format_double(a.prob) << ','
            << lap_vector_field(a.provenance) << '\n';
}

void write_pmf_json(const Pmf& pmf, const std::filesystem::path& path) {
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : pmf.atoms) {
        nlohmann::json laps = nlohmann::json::array();
        for (const auto& v : a.provenance)
            laps.push_back(v.counts);
        atoms.push_back({{"time_s", a.time_s}, {"bit", a.bit}, {"prob", a.prob}, {"lap_vector", laps}});
    }
    nlohmann::json doc = {{"event_region", pmf.event_region},
                          {"region_map_hash", pmf.region_map_hash},
                          {"params", params_to_json(pmf.params)},
                          {"truncated_mass", pmf.truncated_mass},
                          {"pruned_mass", pmf.pruned_mass},
                          {"atoms", atoms}};
    auto out = open_for_write(path);
    out << doc.dump(1) << '\n';
}

void write_pmf_bars(const Pmf& pmf, const std::filesystem::path& path) {
    std::map<double, std::pair<double, double>> bars;
    for (const auto& a : pmf.atoms) {
        auto& slot = bars[a.time_s];
        (a.bit ? slot.second : slot.first) += a.prob;
    }
    auto out = open_for_write(path);
    out << "# time_s prob_bit0 prob_bit1\n";
    for (const auto& [t, p] : bars)
        out << format_double(t) << ' ' << format_double(p.first) << ' ' << format_double(p.second)
            << '\n';
}

Pmf read_pmf_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open pmf '" + path.string() + "'");
    Pmf pmf;
    try {
        nlohmann::json doc;
        in >> doc;
        pmf.event_region = doc.at("event_region").get<RegionId>();
        pmf.region_map_hash = doc.value("region_map_hash", std::string{});
        pmf.params = params_from_json(doc.at("params"));
        pmf.truncated_mass = doc.at("truncated_mass").get<double>();
        pmf.pruned_mass = doc.value("pruned_mass", 0.0);
        for (const auto& item : doc.at("atoms")) {
            PmfAtom a;
            a.time_s = item.at("time_s").get<double>();
            a.bit = item.at("bit").get<int>();
            a.prob = item.at("prob").get<double>();
            for (const auto& v : item.at("lap_vector"))
                a.provenance.push_back({v.get<std::vector<int>>()});
            pmf.atoms.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("pmf '" + path.string() + "': " + e.what());
    }
    validate(pmf);
    return pmf;
}

} // namespace nanoflow

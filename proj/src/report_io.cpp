#include <fstream>

#include "nanoflow/errors.hpp"
#include "nanoflow/format.hpp"
#include "nanoflow/stat_compare.hpp"

namespace nanoflow {

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

} // namespace

void write_report_json(const ComparisonReport& report, const std::filesystem::path& path) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& rc : report.per_region) {
        nlohmann::json r = {{"region_id", rc.region},
                            {"name", rc.name},
                            {"missing", rc.missing ? nlohmann::json(*rc.missing) : nlohmann::json(nullptr)},
                            {"n_bit1_a", rc.n_bit1_a},
                            {"n_bit1_b", rc.n_bit1_b},
                            {"n_bit0_a", rc.n_bit0_a},
                            {"n_bit0_b", rc.n_bit0_b},
                            {"ecdf_max_distance", optional_json(rc.ecdf_max_distance)},
                            {"bit_ratio_a", optional_json(rc.bit_ratio_a)},
                            {"bit_ratio_b", optional_json(rc.bit_ratio_b)}};
        if (rc.mw) {
            r["mw_u"] = rc.mw->u_statistic;
            r["mw_p_value"] = rc.mw->p_value;
            r["mw_accepted"] = rc.mw->accepted;
            r["mw_inconclusive"] = rc.mw->inconclusive;
            r["mw_exact"] = rc.mw->exact;
        } else {
            r["mw_p_value"] = nullptr;
            r["mw_accepted"] = false;
            r["mw_inconclusive"] = true;
        }
        if (rc.ecdf_squared_area)
            r["ecdf_squared_area"] = *rc.ecdf_squared_area;
        if (rc.kl_bit_divergence)
            r["kl_bit_divergence"] = *rc.kl_bit_divergence;
        regions.push_back(std::move(r));
    }
    const auto& s = report.summary;
    nlohmann::json doc = {{"region_map_hash", report.region_map_hash},
                          {"alpha", report.alpha},
                          {"kl_eps", report.kl_eps},
                          {"per_region", regions},
                          {"summary",
                           {{"accept_fraction", s.accept_fraction},
                            {"mw_tests", s.mw_tests},
                            {"mw_inconclusive", s.mw_inconclusive},
                            {"mean_ecdf_distance", s.mean_ecdf_distance},
                            {"max_kl", s.max_kl},
                            {"missing_regions", s.missing_regions}}}};
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << '\n';
}

void write_report_csv(const ComparisonReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot write '" + path.string() + "'");
    out << "region_id,name,missing,mw_u,mw_p_value,mw_accepted,mw_inconclusive,ecdf_max_distance,"
           "ecdf_squared_area,kl_bit_divergence,bit_ratio_a,bit_ratio_b\n";
    for (const auto& rc : report.per_region) {
        out << rc.region << ',' << '"' << rc.name << '"' << ',' << rc.missing.value_or("") << ',';
        if (rc.mw)
            out << format_double(rc.mw->u_statistic) << ',' << format_double(rc.mw->p_value) << ','
                << (rc.mw->accepted ? 1 : 0) << ',' << (rc.mw->inconclusive ? 1 : 0) << ',';
        else
            out << ",,0,1,";
        out << optional_cell(rc.ecdf_max_distance) << ',' << optional_cell(rc.ecdf_squared_area) << ','
            << optional_cell(rc.kl_bit_divergence) << ',' << optional_cell(rc.bit_ratio_a) << ','
            << optional_cell(rc.bit_ratio_b) << '\n';
    }
}

} // namespace nanoflow

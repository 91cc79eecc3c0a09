#include "nanoflow/stat_compare.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nanoflow/errors.hpp"
#include "nanoflow/numeric.hpp"

namespace nanoflow {

namespace {

struct RankedPool {
    /// Twice the midrank of every pooled value; integers, so exact.
    std::vector<long> doubled_ranks;
    /// Which pooled values belong to sample a.
    std::vector<bool> from_a;
    /// Sum over tie groups of t^3 - t.
    double tie_term = 0.0;
};

RankedPool rank_pool(std::span<const double> a, std::span<const double> b) {
    std::vector<std::pair<double, bool>> pooled;
    pooled.reserve(a.size() + b.size());
    for (double x : a)
        pooled.emplace_back(x, true);
    for (double x : b)
        pooled.emplace_back(x, false);
    std::sort(pooled.begin(), pooled.end(),
              [](const auto& l, const auto& r) { return l.first < r.first; });

    RankedPool out;
    out.doubled_ranks.resize(pooled.size());
    out.from_a.resize(pooled.size());
    std::size_t i = 0;
    while (i < pooled.size()) {
        std::size_t j = i;
        while (j + 1 < pooled.size() && pooled[j + 1].first == pooled[i].first)
            ++j;
        // positions i..j (0-based) share midrank ((i+1) + (j+1)) / 2
        const long doubled = static_cast<long>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) {
            out.doubled_ranks[k] = doubled;
            out.from_a[k] = pooled[k].second;
        }
        const double t = static_cast<double>(j - i + 1);
        out.tie_term += t * t * t - t;
        i = j + 1;
    }
    return out;
}

double exact_p_value(const RankedPool& pool, std::size_t n_a, long observed) {
    const long max_sum = std::accumulate(pool.doubled_ranks.begin(), pool.doubled_ranks.end(), 0L);
    // ways[k][s]: subsets of size k with doubled rank sum s
    std::vector<std::vector<double>> ways(n_a + 1, std::vector<double>(max_sum + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t idx = 0; idx < pool.doubled_ranks.size(); ++idx) {
        const long r = pool.doubled_ranks[idx];
        for (std::size_t k = std::min(n_a, idx + 1); k >= 1; --k)
            for (long s = max_sum; s >= r; --s)
                ways[k][s] += ways[k - 1][s - r];
    }
    double total = 0.0, lower = 0.0, upper = 0.0;
    for (long s = 0; s <= max_sum; ++s) {
        const double w = ways[n_a][s];
        total += w;
        if (s <= observed)
            lower += w;
        if (s >= observed)
            upper += w;
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

double normal_p_value(double u, double n_a, double n_b, double tie_term) {
    const double n = n_a + n_b;
    const double mu = 0.5 * n_a * n_b;
    const double var = n_a * n_b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (!(var > 0.0))
        return 1.0;
    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

std::vector<double> sorted_copy(std::span<const double> s) {
    std::vector<double> v(s.begin(), s.end());
    std::sort(v.begin(), v.end());
    return v;
}

/// Walks the pooled distinct values, calling f(x, F_a(x), F_b(x), next_x).
template <class F>
void walk_ecdfs(std::span<const double> a, std::span<const double> b, F&& f) {
    if (a.empty() || b.empty())
        throw ValidationError("ECDF comparison needs two non-empty samples");
    const auto sa = sorted_copy(a);
    const auto sb = sorted_copy(b);
    const double na = static_cast<double>(sa.size());
    const double nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    while (i < sa.size() || j < sb.size()) {
        double x;
        if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j]))
            x = sa[i];
        else
            x = sb[j];
        while (i < sa.size() && sa[i] == x)
            ++i;
        while (j < sb.size() && sb[j] == x)
            ++j;
        double next = x;
        if (i < sa.size() && j < sb.size())
            next = std::min(sa[i], sb[j]);
        else if (i < sa.size())
            next = sa[i];
        else if (j < sb.size())
            next = sb[j];
        f(x, i / na, j / nb, next);
    }
}

struct SplitSample {
    std::vector<double> bit0, bit1;
};

SplitSample split_by_bit(const Dataset& ds) {
    SplitSample s;
    for (const auto& r : ds.records)
        (r.bit ? s.bit1 : s.bit0).push_back(r.iteration_time_s);
    return s;
}

std::optional<double> bit_ratio(const SplitSample& s) {
    const std::size_t n = s.bit0.size() + s.bit1.size();
    if (n == 0)
        return std::nullopt;
    return static_cast<double>(s.bit1.size()) / static_cast<double>(n);
}

void fill_time_metrics(RegionComparison& rc, const SplitSample& a, const SplitSample& b,
                       const CompareOptions& opt) {
    rc.n_bit1_a = a.bit1.size();
    rc.n_bit1_b = b.bit1.size();
    rc.n_bit0_a = a.bit0.size();
    rc.n_bit0_b = b.bit0.size();
    if (!a.bit1.empty() && !b.bit1.empty())
        rc.mw = mann_whitney(a.bit1, b.bit1, opt.alpha);
    if (!a.bit0.empty() && !b.bit0.empty()) {
        rc.ecdf_max_distance = ecdf_max_distance(a.bit0, b.bit0);
        if (opt.ecdf_squared)
            rc.ecdf_squared_area = ecdf_squared_area(a.bit0, b.bit0);
    }
}

void summarize(ComparisonReport& report) {
    auto& s = report.summary;
    std::size_t accepted = 0, ecdf_n = 0;
    double ecdf_sum = 0.0;
    for (const auto& rc : report.per_region) {
        if (rc.missing) {
            ++s.missing_regions;
            continue;
        }
        if (!rc.mw || rc.mw->inconclusive) {
            ++s.mw_inconclusive;
        } else {
            ++s.mw_tests;
            accepted += rc.mw->accepted ? 1 : 0;
        }
        if (rc.ecdf_max_distance) {
            ecdf_sum += *rc.ecdf_max_distance;
            ++ecdf_n;
        }
        if (rc.kl_bit_divergence)
            s.max_kl = std::max(s.max_kl, *rc.kl_bit_divergence);
    }
    s.accept_fraction = s.mw_tests ? static_cast<double>(accepted) / s.mw_tests : 0.0;
    s.mean_ecdf_distance = ecdf_n ? ecdf_sum / ecdf_n : 0.0;
}

void check_map(const Dataset& ds, const std::string& hash) {
    if (region_map_hash(ds.scenario.map) != hash)
        throw IncompatibleInputError("dataset for event region " +
                                     std::to_string(ds.scenario.event_region) +
                                     " uses a different region map");
}

struct PairedAtom {
    double freq = 0.0;
    double prob = 0.0;
};

std::vector<PairedAtom> pair_supports(const FrequencyTable& empirical, const Pmf& analytic,
                                      double tol) {
    if (!analytic.region_map_hash.empty() && !empirical.region_map_hash.empty() &&
        analytic.region_map_hash != empirical.region_map_hash)
        throw IncompatibleInputError("inconsistent lattice: empirical and analytic pmfs use different region maps");
    if (tol < 0.0)
        throw ValidationError("time_tolerance must be >= 0");
    const Pmf collapsed = collapse_pmf(analytic, 1e-9);
    const double retained = collapsed.retained_mass();
    if (!(retained > 0.0))
        throw ValidationError("analytic pmf carries no mass");

    std::vector<PairedAtom> out;
    std::vector<bool> used(empirical.atoms.size(), false);
    for (const auto& atom : collapsed.atoms) {
        PairedAtom p{0.0, atom.prob / retained};
        // atoms are sorted by time; pick the closest unused same-bit entry
        std::size_t best = empirical.atoms.size();
        double best_gap = tol;
        auto first = std::lower_bound(empirical.atoms.begin(), empirical.atoms.end(), atom.time_s - tol,
                                      [](const FrequencyAtom& f, double t) { return f.time_s < t; });
        for (auto it = first; it != empirical.atoms.end() && it->time_s <= atom.time_s + tol; ++it) {
            const auto k = static_cast<std::size_t>(it - empirical.atoms.begin());
            const double gap = std::abs(it->time_s - atom.time_s);
            if (!used[k] && it->bit == atom.bit && gap <= best_gap) {
                best = k;
                best_gap = gap;
            }
        }
        if (best < empirical.atoms.size()) {
            used[best] = true;
            p.freq = empirical.atoms[best].freq;
        }
        out.push_back(p);
    }
    for (std::size_t k = 0; k < empirical.atoms.size(); ++k)
        if (!used[k])
            out.push_back({empirical.atoms[k].freq, 0.0});
    return out;
}

} // namespace

MannWhitneyResult mann_whitney(std::span<const double> a, std::span<const double> b, double alpha,
                               MwMethod method) {
    if (a.empty() || b.empty())
        throw ValidationError("mann_whitney: both samples must be non-empty");
    const auto pool = rank_pool(a, b);
    long doubled_sum = 0;
    for (std::size_t k = 0; k < pool.doubled_ranks.size(); ++k)
        if (pool.from_a[k])
            doubled_sum += pool.doubled_ranks[k];

    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    MannWhitneyResult r;
    r.u_statistic = 0.5 * static_cast<double>(doubled_sum) - na * (na + 1.0) / 2.0;

    const bool use_exact =
        method == MwMethod::Exact ||
        (method == MwMethod::Auto && a.size() <= kMwExactMaxSize && b.size() <= kMwExactMaxSize);
    r.exact = use_exact;
    r.p_value = use_exact ? exact_p_value(pool, a.size(), doubled_sum)
                          : normal_p_value(r.u_statistic, na, nb, pool.tie_term);
    r.inconclusive = a.size() < kMwMinSampleSize || b.size() < kMwMinSampleSize;
    r.accepted = !r.inconclusive && r.p_value >= alpha;
    return r;
}

double ecdf_max_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    walk_ecdfs(a, b, [&](double, double fa, double fb, double) { d = std::max(d, std::abs(fa - fb)); });
    return d;
}

double ecdf_squared_area(std::span<const double> a, std::span<const double> b) {
    CompensatedSum area;
    walk_ecdfs(a, b, [&](double x, double fa, double fb, double next) {
        const double diff = fa - fb;
        area += diff * diff * (next - x);
    });
    return area.value();
}

double kl_bit_divergence(double ratio_a, double ratio_b, double eps) {
    if (!(ratio_a >= 0.0 && ratio_a <= 1.0 && ratio_b >= 0.0 && ratio_b <= 1.0))
        throw ValidationError("kl_bit_divergence: ratios must lie in [0,1]");
    if (!(eps > 0.0 && eps < 0.5))
        throw ValidationError("kl_bit_divergence: smoothing_eps must lie in (0, 0.5)");
    const double p = std::clamp(ratio_a, eps, 1.0 - eps);
    const double q = std::clamp(ratio_b, eps, 1.0 - eps);
    const double d = p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
    return std::max(0.0, d);
}

double pmf_mse(const FrequencyTable& empirical, const Pmf& analytic, double tol) {
    const auto paired = pair_supports(empirical, analytic, tol);
    CompensatedSum s;
    for (const auto& p : paired)
        s += (p.freq - p.prob) * (p.freq - p.prob);
    return paired.empty() ? 0.0 : s.value() / static_cast<double>(paired.size());
}

double total_variation(const FrequencyTable& empirical, const Pmf& analytic, double tol) {
    CompensatedSum s;
    for (const auto& p : pair_supports(empirical, analytic, tol))
        s += std::abs(p.freq - p.prob);
    return 0.5 * s.value();
}

ComparisonReport compare_datasets(const DatasetSet& a, const DatasetSet& b, const RegionMap& map,
                                  const CompareOptions& opt) {
    ComparisonReport report;
    report.region_map_hash = region_map_hash(map);
    report.alpha = opt.alpha;
    report.kl_eps = opt.kl_eps;

    for (const auto& region : map.regions()) {
        const auto ia = a.find(region.id);
        const auto ib = b.find(region.id);
        if (ia == a.end() && ib == b.end())
            continue;
        RegionComparison rc;
        rc.region = region.id;
        rc.name = region.name;
        if (ia == a.end() || ib == b.end()) {
            rc.missing = ia == a.end() ? "a" : "b";
            report.per_region.push_back(std::move(rc));
            continue;
        }
        check_map(ia->second, report.region_map_hash);
        check_map(ib->second, report.region_map_hash);

        const auto sa = split_by_bit(ia->second);
        const auto sb = split_by_bit(ib->second);
        fill_time_metrics(rc, sa, sb, opt);
        rc.bit_ratio_a = bit_ratio(sa);
        rc.bit_ratio_b = bit_ratio(sb);
        if (!map.is_excluded(region.id) && rc.bit_ratio_a && rc.bit_ratio_b)
            rc.kl_bit_divergence = kl_bit_divergence(*rc.bit_ratio_a, *rc.bit_ratio_b, opt.kl_eps);
        report.per_region.push_back(std::move(rc));
    }
    for (const auto* set : {&a, &b})
        for (const auto& [id, ds] : *set)
            if (!map.contains(id))
                throw IncompatibleInputError("dataset for region " + std::to_string(id) +
                                             " not in region map");
    summarize(report);
    return report;
}

ComparisonReport compare_with_model(const DatasetSet& data, const std::map<RegionId, Pmf>& model,
                                    const RegionMap& map, const CompareOptions& opt,
                                    SimSeed sample_seed) {
    ComparisonReport report;
    report.region_map_hash = region_map_hash(map);
    report.alpha = opt.alpha;
    report.kl_eps = opt.kl_eps;

    for (const auto& region : map.regions()) {
        const auto id = data.find(region.id);
        const auto im = model.find(region.id);
        if (id == data.end() && im == model.end())
            continue;
        RegionComparison rc;
        rc.region = region.id;
        rc.name = region.name;
        if (id == data.end() || im == model.end()) {
            rc.missing = id == data.end() ? "a" : "b";
            report.per_region.push_back(std::move(rc));
            continue;
        }
        check_map(id->second, report.region_map_hash);
        const std::uint64_t n = id->second.records.size();
        const auto sa = split_by_bit(id->second);
        if (n > 0) {
            SimSeed seed{sample_seed.master_seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(region.id))};
            const auto sampled = sample_pmf(im->second, map, n, seed);
            fill_time_metrics(rc, sa, split_by_bit(sampled), opt);
        }
        rc.bit_ratio_a = bit_ratio(sa);
        rc.bit_ratio_b = event_bit_ratio(im->second);
        if (!map.is_excluded(region.id) && rc.bit_ratio_a)
            rc.kl_bit_divergence = kl_bit_divergence(*rc.bit_ratio_a, *rc.bit_ratio_b, opt.kl_eps);
        report.per_region.push_back(std::move(rc));
    }
    summarize(report);
    return report;
}

} // namespace nanoflow

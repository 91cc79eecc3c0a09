#include "nanoflow/analytic_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nanoflow/errors.hpp"
#include "nanoflow/numeric.hpp"

namespace nanoflow {

namespace {

constexpr int kLinearDomainMaxLaps = 20;

void check_dimension(const LapVector& laps, const RegionMap& map) {
    if (laps.counts.size() != map.size())
        throw ValidationError("lap vector has " + std::to_string(laps.counts.size()) +
                              " entries, region map has " + std::to_string(map.size()));
    for (int c : laps.counts)
        if (c < 0)
            throw ValidationError("lap counts must be non-negative");
}

double log_path_probability(std::span<const int> counts, const RegionMap& map) {
    double acc = log_multinomial_coefficient(counts);
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 0)
            acc += counts[i] * std::log(map.regions()[i].traversal_prob);
    return acc;
}

/// Sum of P_{d_i} for i = 1..n: probability the event is seen on some pass.
double detected_within(int passes, double p_det) {
    CompensatedSum s;
    for (int i = 1; i <= passes; ++i)
        s += detect_in_iteration_prob(i, p_det);
    return s.value();
}

class Enumerator {
public:
    Enumerator(const RegionMap& map, std::size_t event_index, const ModelParams& params, Pmf& out)
        : map_(map), event_index_(event_index), params_(params), out_(out),
          counts_(map.size(), 0), suffix_prob_(map.size() + 1, 0.0) {
        for (std::size_t i = map.size(); i-- > 0;)
            suffix_prob_[i] = suffix_prob_[i + 1] + map.regions()[i].traversal_prob;
        log_q_ = std::log1p(-params.p_trans);
        log_pt_ = std::log(params.p_trans);
    }

    void run() { descend(0, 0, 0.0); }
    double pruned_mass() const { return pruned_.value(); }

private:
    // Untruncated mass of every window whose first `depth` regions have the
    // counts fixed so far and whose remaining regions are free:
    //   multinom(n) prod P^n * p_t q^(k-1) / (1 - s q)^(k+1)
    // with s the probability of the free regions and q = 1 - p_trans.
    double subtree_mass(std::size_t depth, int laps) const {
        const std::span<const int> fixed(counts_.data(), depth);
        const double s = suffix_prob_[depth];
        const double q = 1.0 - params_.p_trans;
        if (laps > 1 && q == 0.0)
            return 0.0;
        double log_mass = log_path_probability(fixed, map_) + log_pt_;
        if (laps > 1)
            log_mass += (laps - 1) * log_q_;
        log_mass -= (laps + 1) * std::log1p(-s * q);
        return std::exp(log_mass);
    }

    void descend(std::size_t depth, int laps, double time) {
        if (depth == map_.size()) {
            if (laps >= 1)
                emit();
            return;
        }
        const double travel = map_.regions()[depth].travel_time_s;
        for (int n = 0; laps + n <= params_.max_laps; ++n) {
            const double t = time + n * travel;
            if (t > params_.duration_s)
                break;
            counts_[depth] = n;
            const int k = laps + n;
            if (k >= 1) {
                const double mass = subtree_mass(depth + 1, k);
                if (mass == 0.0 || mass < params_.mass_epsilon) {
                    pruned_ += mass;
                    continue;
                }
            }
            descend(depth + 1, k, t);
        }
        counts_[depth] = 0;
    }

    void emit() {
        LapVector laps{counts_};
        const double time = lattice_time(laps, map_);
        const RegionId event = map_.regions()[event_index_].id;
        if (counts_[event_index_] >= 1) {
            const double p1 = atom_prob_detected(laps, event, map_, params_);
            if (p1 > 0.0)
                out_.atoms.push_back({{laps}, time, 1, p1});
        }
        const double p0 = atom_prob_undetected(laps, event, map_, params_);
        if (p0 > 0.0)
            out_.atoms.push_back({{laps}, time, 0, p0});
    }

    const RegionMap& map_;
    std::size_t event_index_;
    const ModelParams& params_;
    Pmf& out_;
    std::vector<int> counts_;
    std::vector<double> suffix_prob_;
    double log_q_ = 0.0;
    double log_pt_ = 0.0;
    CompensatedSum pruned_;
};

bool atom_less(const PmfAtom& a, const PmfAtom& b) {
    if (a.time_s != b.time_s)
        return a.time_s < b.time_s;
    if (a.bit != b.bit)
        return a.bit < b.bit;
    return a.provenance < b.provenance;
}

} // namespace

int LapVector::total_laps() const { return std::accumulate(counts.begin(), counts.end(), 0); }

double Pmf::retained_mass() const {
    CompensatedSum s;
    for (const auto& a : atoms)
        s += a.prob;
    return s.value();
}

std::uint64_t multinomial_coefficient(std::span<const int> counts) {
    // Product of binomials C(s_i, n_i) with s_i the running total; each
    // partial product is an exact integer.
    std::uint64_t result = 1;
    std::uint64_t total = 0;
    for (int c : counts) {
        if (c < 0)
            throw std::invalid_argument("multinomial_coefficient: negative count");
        for (std::uint64_t j = 1; j <= static_cast<std::uint64_t>(c); ++j) {
            ++total;
            // result * total is divisible by j; cancel the common factor first
            const std::uint64_t g = std::gcd(result, j);
            const std::uint64_t factor = total / (j / g);
            if (__builtin_mul_overflow(result / g, factor, &result))
                throw std::overflow_error("multinomial coefficient exceeds 64 bits");
        }
    }
    return result;
}

double log_multinomial_coefficient(std::span<const int> counts) {
    double total = 0.0;
    double acc = 0.0;
    for (int c : counts) {
        if (c < 0)
            throw std::invalid_argument("log_multinomial_coefficient: negative count");
        total += c;
        acc -= std::lgamma(c + 1.0);
    }
    return acc + std::lgamma(total + 1.0);
}

double lattice_time(const LapVector& laps, const RegionMap& map) {
    double t = 0.0;
    for (std::size_t i = 0; i < laps.counts.size(); ++i)
        t = t + laps.counts[i] * map.regions()[i].travel_time_s;
    return t;
}

double path_probability(const LapVector& laps, const RegionMap& map) {
    check_dimension(laps, map);
    const int k = laps.total_laps();
    if (k > kLinearDomainMaxLaps)
        return std::exp(log_path_probability(laps.counts, map));
    double p = static_cast<double>(multinomial_coefficient(laps.counts));
    for (std::size_t i = 0; i < laps.counts.size(); ++i)
        p *= std::pow(map.regions()[i].traversal_prob, laps.counts[i]);
    return p;
}

double detect_in_iteration_prob(int iteration, double p_det) {
    if (iteration < 1)
        throw std::invalid_argument("detection iteration must be >= 1");
    return std::pow(1.0 - p_det, iteration - 1) * p_det;
}

double transmission_factor(int total_laps, double p_trans) {
    if (total_laps < 1)
        throw std::invalid_argument("total_laps must be >= 1");
    return std::pow(1.0 - p_trans, total_laps - 1) * p_trans;
}

double atom_prob_detected(const LapVector& laps, RegionId event_region, const RegionMap& map,
                          const ModelParams& params) {
    check_dimension(laps, map);
    const auto idx = map.index_of(event_region);
    if (!idx)
        throw ValidationError("unknown event region " + std::to_string(event_region));
    const int passes = laps.counts[*idx];
    if (passes < 1)
        throw ValidationError("b=1 outcome impossible: no lap through event region " +
                              std::to_string(event_region));
    return path_probability(laps, map) * transmission_factor(laps.total_laps(), params.p_trans) *
           detected_within(passes, params.p_det);
}

double atom_prob_undetected(const LapVector& laps, RegionId event_region, const RegionMap& map,
                            const ModelParams& params) {
    check_dimension(laps, map);
    const auto idx = map.index_of(event_region);
    if (!idx)
        throw ValidationError("unknown event region " + std::to_string(event_region));
    const int k = laps.total_laps();
    if (k < 1)
        throw ValidationError("lap vector must contain at least one lap");
    const double not_detected = std::pow(1.0 - params.p_det, laps.counts[*idx]);
    return path_probability(laps, map) * not_detected * transmission_factor(k, params.p_trans);
}

Pmf enumerate_pmf(const RegionMap& map, RegionId event_region, const ModelParams& params) {
    validate(params);
    const auto idx = map.index_of(event_region);
    if (!idx)
        throw ValidationError("unknown event region " + std::to_string(event_region));
    if (params.duration_s < map.min_travel_time())
        throw ValidationError("duration below minimum travel time");

    Pmf pmf;
    pmf.event_region = event_region;
    pmf.params = params;
    pmf.region_map_hash = region_map_hash(map);

    Enumerator e(map, *idx, params, pmf);
    e.run();
    pmf.pruned_mass = e.pruned_mass();

    std::sort(pmf.atoms.begin(), pmf.atoms.end(), atom_less);
    pmf.truncated_mass = std::max(0.0, 1.0 - pmf.retained_mass());
    return pmf;
}

Pmf collapse_pmf(const Pmf& pmf, double time_tolerance) {
    if (time_tolerance < 0.0)
        throw ValidationError("time_tolerance must be >= 0");
    std::vector<PmfAtom> sorted = pmf.atoms;
    std::stable_sort(sorted.begin(), sorted.end(), [](const PmfAtom& a, const PmfAtom& b) {
        if (a.bit != b.bit)
            return a.bit < b.bit;
        return atom_less(a, b);
    });

    Pmf out = pmf;
    out.atoms.clear();
    std::size_t i = 0;
    while (i < sorted.size()) {
        PmfAtom merged = sorted[i];
        CompensatedSum mass;
        mass += sorted[i].prob;
        std::size_t j = i + 1;
        for (; j < sorted.size() && sorted[j].bit == merged.bit &&
               sorted[j].time_s - merged.time_s <= time_tolerance;
             ++j) {
            mass += sorted[j].prob;
            merged.provenance.insert(merged.provenance.end(), sorted[j].provenance.begin(),
                                     sorted[j].provenance.end());
        }
        merged.prob = mass.value();
        out.atoms.push_back(std::move(merged));
        i = j;
    }
    std::sort(out.atoms.begin(), out.atoms.end(), atom_less);
    return out;
}

double event_bit_ratio(const Pmf& pmf) {
    if (pmf.atoms.empty())
        throw ValidationError("event_bit_ratio: empty pmf");
    CompensatedSum ones;
    CompensatedSum all;
    for (const auto& a : pmf.atoms) {
        all += a.prob;
        if (a.bit == 1)
            ones += a.prob;
    }
    if (!(all.value() > 0.0))
        throw ValidationError("event_bit_ratio: pmf carries no mass");
    return ones.value() / all.value();
}

void validate(const Pmf& pmf) {
    for (const auto& a : pmf.atoms) {
        if (!(a.prob >= 0.0 && a.prob <= 1.0))
            throw ValidationError("pmf atom probability outside [0,1]");
        if (a.bit != 0 && a.bit != 1)
            throw ValidationError("pmf atom bit must be 0 or 1");
        if (a.provenance.empty())
            throw ValidationError("pmf atom without lap vector");
    }
    if (!(pmf.truncated_mass >= 0.0 && pmf.truncated_mass <= 1.0))
        throw ValidationError("pmf truncated_mass outside [0,1]");
    const double total = pmf.retained_mass() + pmf.truncated_mass;
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError("pmf mass plus truncated_mass is " + std::to_string(total) +
                              ", expected 1");
}

} // namespace nanoflow

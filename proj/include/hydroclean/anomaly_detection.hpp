#pragma once

// Context-dependent error detectors. Every detector is a pure function of one
// stream, so callers may map them over streams in parallel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "core_model.hpp"

namespace hydroclean::detect {

// ---------------------------------------------------------------------------
// Monthly standard deviation profile
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMinReadingsPerMonth = 24;
inline constexpr std::size_t kMinValidMonths = 6;

/// 13 boundaries delimiting 12 consecutive calendar months, the first one
/// starting on the 1st of `year`/`month`.
inline std::vector<Hour> calendar_month_boundaries(int year, unsigned month) {
    std::vector<Hour> b;
    b.reserve(13);
    std::chrono::year_month ym{std::chrono::year{year}, std::chrono::month{month}};
    for (int k = 0; k <= 12; ++k) {
        b.push_back(start_of(Date{ym / std::chrono::day{1}}));
        ym += std::chrono::months{1};
    }
    return b;
}

/// Month boundaries covering the 12 calendar months starting at the month of `h`.
inline std::vector<Hour> calendar_month_boundaries(Hour h) {
    const std::chrono::year_month_day ymd{date_of(h)};
    return calendar_month_boundaries(static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()));
}

struct MonthlyStd {
    std::vector<double> values;  // m³; meaningful only where valid
    std::vector<bool> valid;     // false ⇒ InsufficientData

    std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }
};

/// Population standard deviation of the hourly readings within each month,
/// from exact integer moments.
inline MonthlyStd monthly_std(const DataStream& stream, const std::vector<Hour>& month_boundaries) {
    MonthlyStd out;
    if (month_boundaries.size() < 2) return out;
    const std::size_t months = month_boundaries.size() - 1;
    out.values.assign(months, 0.0);
    out.valid.assign(months, false);
    for (std::size_t k = 0; k < months; ++k) {
        const HourRange m{month_boundaries[k], month_boundaries[k + 1]};
        __int128 n = 0, sum = 0, sq = 0;
        for (auto i = stream.lower_bound(m.begin); i < stream.readings.size() && stream.readings[i].at < m.end; ++i) {
            const __int128 x = stream.readings[i].value.litres;
            ++n;
            sum += x;
            sq += x * x;
        }
        if (n < static_cast<__int128>(kMinReadingsPerMonth)) continue;
        const __int128 num = n * sq - sum * sum;  // n² · variance, in L²
        const long double var = static_cast<long double>(num) / static_cast<long double>(n) / static_cast<long double>(n);
        out.values[k] = static_cast<double>(std::sqrt(var) / 1000.0L);
        out.valid[k] = true;
    }
    return out;
}

/// Population standard deviation of the valid monthly values.
/// Throws NotScorable with fewer than six valid months.
inline double std2m(const MonthlyStd& monthly) {
    std::vector<double> v;
    for (std::size_t k = 0; k < monthly.values.size(); ++k)
        if (monthly.valid[k]) v.push_back(monthly.values[k]);
    if (v.size() < kMinValidMonths)
        throw Error(Errc::NotScorable, "only " + std::to_string(v.size()) + " months with enough readings");
    long double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<long double>(v.size());
    long double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return static_cast<double>(std::sqrt(ss / static_cast<long double>(v.size())));
}

inline double std2m(const std::vector<double>& monthly_values) {
    return std2m(MonthlyStd{monthly_values, std::vector<bool>(monthly_values.size(), true)});
}

struct StdProfile {
    CompositeKey key;
    std::vector<Hour> month_boundaries;
    std::vector<double> monthly_std;
    std::vector<bool> month_valid;
    std::optional<double> std2m;  // nullopt ⇒ NotScorable
};

inline StdProfile std_profile(const DataStream& stream, const std::vector<Hour>& month_boundaries) {
    const auto m = monthly_std(stream, month_boundaries);
    StdProfile p{stream.key, month_boundaries, m.values, m.valid, std::nullopt};
    if (m.valid_count() >= kMinValidMonths) p.std2m = std2m(m);
    return p;
}

// ---------------------------------------------------------------------------
// Meter-unit-inconsistency verdicts
// ---------------------------------------------------------------------------

struct MuiVerdictBand {
    double clean_below = 40.0;  // m³
    double dirty_above = 250.0;

    void validate() const {
        if (!(0.0 < clean_below && clean_below < dirty_above))
            throw Error(Errc::InvalidValue, "MUI band requires 0 < clean_below < dirty_above");
    }
};

enum class MuiVerdict { Clean, NeedsReview, Dirty };

inline std::string_view to_string(MuiVerdict v) {
    switch (v) {
        case MuiVerdict::Clean: return "Clean";
        case MuiVerdict::NeedsReview: return "NeedsReview";
        case MuiVerdict::Dirty: return "Dirty";
    }
    return "Clean";
}

/// Boundary values themselves fall in NeedsReview.
constexpr MuiVerdict classify_mui(double std2m_value, const MuiVerdictBand& band = {}) {
    if (std2m_value < band.clean_below) return MuiVerdict::Clean;
    if (std2m_value > band.dirty_above) return MuiVerdict::Dirty;
    return MuiVerdict::NeedsReview;
}

// ---------------------------------------------------------------------------
// Spikes
// ---------------------------------------------------------------------------

struct SpikeConfig {
    double theta = 10.0;
    std::int64_t neighborhood_hours = 8;
    std::int64_t min_excess_litres = 1000;  // guard for near-zero streams
    std::int64_t max_span_hours = 3;
};

inline double mean_litres(const DataStream& s) {
    if (s.readings.empty()) return 0.0;
    long double sum = 0;
    for (const auto& r : s.readings) sum += static_cast<long double>(r.value.litres);
    return static_cast<double>(sum / static_cast<long double>(s.readings.size()));
}

/// Flags r at t iff r > θ·max(mean of present neighbours within ±h excluding t,
/// annual mean) and r − annual mean ≥ 1 m³. Runs of at most three consecutive
/// flagged hours become one Spike event; longer runs are not spikes.
inline std::vector<AnomalyEvent> detect_spikes(const DataStream& stream, const SpikeConfig& cfg = {}) {
    std::vector<AnomalyEvent> out;
    const auto& rs = stream.readings;
    if (rs.empty()) return out;
    const double annual = mean_litres(stream);

    std::vector<std::size_t> flagged;
    std::vector<double> ratio;
    std::size_t lo = 0, hi = 0;  // neighbours in [lo, hi)
    long double window_sum = 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const Hour t = rs[i].at;
        while (hi < rs.size() && rs[hi].at <= t + cfg.neighborhood_hours) window_sum += rs[hi++].value.litres;
        while (lo < hi && rs[lo].at < t - cfg.neighborhood_hours) window_sum -= rs[lo++].value.litres;
        const std::size_t count = hi - lo - 1;
        const double local = count ? static_cast<double>((window_sum - rs[i].value.litres) / count) : annual;
        const double base = std::max(local, annual);
        const double r = static_cast<double>(rs[i].value.litres);
        if (r > cfg.theta * base && r - annual >= static_cast<double>(cfg.min_excess_litres)) {
            flagged.push_back(i);
            ratio.push_back(base > 0 ? r / base : r);
        }
    }
    for (std::size_t a = 0; a < flagged.size();) {
        std::size_t b = a + 1;
        while (b < flagged.size() && rs[flagged[b]].at == rs[flagged[b - 1]].at + 1) ++b;
        const Hour first = rs[flagged[a]].at;
        const Hour last = rs[flagged[b - 1]].at;
        if (last - first + 1 <= cfg.max_span_hours) {
            AnomalyEvent e;
            e.key = stream.key;
            e.cls = AnomalyClass::Spike;
            e.span = HourRange{first, last + 1};
            e.score = *std::max_element(ratio.begin() + static_cast<std::ptrdiff_t>(a),
                                        ratio.begin() + static_cast<std::ptrdiff_t>(b));
            e.proposed_repair = RepairAction{RepairKind::ReplaceWithNeighborhoodMean, e.span, std::nullopt};
            out.push_back(std::move(e));
        }
        a = b;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quantized readings
// ---------------------------------------------------------------------------

struct QuantizedConfig {
    std::int64_t min_step_litres = 5000;
    double min_fraction = 0.9;
    std::size_t min_nonzero = 720;
    std::size_t candidate_values = 8;  // smallest distinct magnitudes tried as step seeds
};

struct QuantizationFit {
    std::int64_t step_litres = 1;  // g
    double fraction = 0.0;         // share of nonzero readings that are multiples of g
    std::size_t nonzero = 0;
};

/// Finds the coarsest step g ≥ min_step that the largest share of nonzero
/// readings are multiples of. The gcd of all nonzero readings is always a
/// candidate; so are gcds of the readings divisible by each of the smallest
/// distinct magnitudes, which keeps a quantized era detectable when a later
/// reprogramming switched the meter to fine resolution.
inline QuantizationFit fit_quantization(const std::vector<std::int64_t>& nonzero_abs, const QuantizedConfig& cfg) {
    QuantizationFit best;
    best.nonzero = nonzero_abs.size();
    if (nonzero_abs.empty()) return best;
    std::int64_t g_all = 0;
    for (auto v : nonzero_abs) g_all = std::gcd(g_all, v);
    std::vector<std::int64_t> seeds{g_all};
    {
        std::vector<std::int64_t> distinct(nonzero_abs);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        const std::size_t n = std::min(cfg.candidate_values, distinct.size());
        for (std::size_t i = 0; i < n; ++i) {
            seeds.push_back(distinct[i]);
            for (std::size_t j = i + 1; j < n; ++j) seeds.push_back(std::gcd(distinct[i], distinct[j]));
        }
    }
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    best.step_litres = g_all;
    best.fraction = 1.0;
    bool have_coarse = g_all >= cfg.min_step_litres;
    for (auto seed : seeds) {
        if (seed < cfg.min_step_litres) continue;
        std::int64_t g = 0;
        std::size_t hits = 0;
        for (auto v : nonzero_abs)
            if (v % seed == 0) {
                g = std::gcd(g, v);
                ++hits;
            }
        const double frac = static_cast<double>(hits) / static_cast<double>(nonzero_abs.size());
        if (!have_coarse || frac > best.fraction || (frac == best.fraction && g > best.step_litres)) {
            best.step_litres = g;
            best.fraction = frac;
            have_coarse = true;
        }
    }
    return best;
}

inline std::vector<std::int64_t> nonzero_magnitudes(const DataStream& s, const HourRange* within = nullptr) {
    std::vector<std::int64_t> v;
    for (const auto& r : s.readings) {
        if (within && !within->contains(r.at)) continue;
        if (r.value.litres != 0) v.push_back(r.value.litres < 0 ? -r.value.litres : r.value.litres);
    }
    return v;
}

/// Whole-stream check. Streams with fewer than `min_nonzero` nonzero readings
/// are not assessed.
inline std::optional<AnomalyEvent> detect_quantized(const DataStream& stream, const QuantizedConfig& cfg = {}) {
    const auto mags = nonzero_magnitudes(stream);
    if (mags.size() < cfg.min_nonzero) return std::nullopt;
    const auto fit = fit_quantization(mags, cfg);
    if (fit.step_litres < cfg.min_step_litres || fit.fraction < cfg.min_fraction) return std::nullopt;
    AnomalyEvent e;
    e.key = stream.key;
    e.cls = AnomalyClass::Quantized;
    e.span = *stream.observed_range();
    e.score = static_cast<double>(fit.step_litres) / 1000.0;
    e.proposed_repair = RepairAction{};
    return e;
}

/// Windowed variant: tests consecutive windows independently and merges
/// adjacent quantized windows into one event per era. Windows need at least
/// `min_nonzero_per_window` nonzero readings to be assessed.
inline std::vector<AnomalyEvent> detect_quantized_eras(const DataStream& stream, std::int64_t window_hours = 720,
                                                       std::size_t min_nonzero_per_window = 48,
                                                       const QuantizedConfig& cfg = {}) {
    std::vector<AnomalyEvent> out;
    const auto range = stream.observed_range();
    if (!range) return out;
    std::optional<AnomalyEvent> open;
    for (Hour b = range->begin; b < range->end; b = b + window_hours) {
        const HourRange w{b, std::min(range->end, b + window_hours)};
        const auto mags = nonzero_magnitudes(stream, &w);
        bool quantized = false;
        std::int64_t step = 0;
        if (mags.size() >= min_nonzero_per_window) {
            const auto fit = fit_quantization(mags, cfg);
            quantized = fit.step_litres >= cfg.min_step_litres && fit.fraction >= cfg.min_fraction;
            step = fit.step_litres;
        }
        if (quantized && open && static_cast<std::int64_t>(open->score * 1000.0 + 0.5) == step) {
            open->span.end = w.end;
        } else {
            if (open) out.push_back(*open);
            open.reset();
            if (quantized) {
                AnomalyEvent e;
                e.key = stream.key;
                e.cls = AnomalyClass::Quantized;
                e.span = w;
                e.score = static_cast<double>(step) / 1000.0;
                e.proposed_repair = RepairAction{};
                open = e;
            }
        }
    }
    if (open) out.push_back(*open);
    return out;
}

// ---------------------------------------------------------------------------
// Meter resets
// ---------------------------------------------------------------------------

/// One Reset event per negative reading.
inline std::vector<AnomalyEvent> detect_resets(const DataStream& stream) {
    std::vector<AnomalyEvent> out;
    for (const auto& r : stream.readings) {
        if (r.value.litres >= 0) continue;
        AnomalyEvent e;
        e.key = stream.key;
        e.cls = AnomalyClass::Reset;
        e.span = HourRange{r.at, r.at + 1};
        e.score = r.value.m3();
        e.proposed_repair = RepairAction{RepairKind::ReplaceWithNeighborhoodMean, e.span, std::nullopt};
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace hydroclean::detect

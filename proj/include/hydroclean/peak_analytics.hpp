#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "core_model.hpp"
#include "integrity.hpp"
#include "parallel.hpp"

namespace hydroclean::peaks {

struct PeakResult {
    HourRange window;
    std::int64_t window_hours = 0;
    Consumption total_volume;

    bool operator==(const PeakResult&) const = default;
};

/// Average consumption over the peak window, m³/h.
inline double peak_load(const PeakResult& r) { return r.total_volume.m3() / static_cast<double>(r.window_hours); }

/// Hourly sum over all streams for every hour of `range`; missing hours add 0.
inline std::vector<std::int64_t> aggregate(const std::vector<DataStream>& streams, const HourRange& range,
                                           unsigned workers = 1) {
    if (range.empty()) return {};
    const auto len = static_cast<std::size_t>(range.hours());
    const unsigned parts = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(streams.size())));
    std::vector<std::vector<std::int64_t>> partial(parts, std::vector<std::int64_t>(len, 0));
    parallel_for(parts, parts, [&](std::size_t p) {
        auto& acc = partial[p];
        for (std::size_t i = streams.size() * p / parts; i < streams.size() * (p + 1) / parts; ++i) {
            const auto& s = streams[i];
            for (auto j = s.lower_bound(range.begin); j < s.readings.size() && s.readings[j].at < range.end; ++j)
                acc[static_cast<std::size_t>(s.readings[j].at - range.begin)] += s.readings[j].value.litres;
        }
    });
    for (unsigned p = 1; p < parts; ++p)
        for (std::size_t h = 0; h < len; ++h) partial[0][h] += partial[p][h];
    return std::move(partial[0]);
}

/// Maximum-volume W-hour window of an hourly series starting at `begin`.
/// Ties go to the earliest start.
inline PeakResult peak_window_series(const std::vector<std::int64_t>& series, Hour begin, std::int64_t window_hours) {
    if (window_hours < 1) throw Error(Errc::InvalidRange, "window must be at least one hour");
    const auto n = static_cast<std::int64_t>(series.size());
    if (n < window_hours) throw Error(Errc::InvalidRange, "range shorter than window");
    std::int64_t sum = 0;
    for (std::int64_t i = 0; i < window_hours; ++i) sum += series[static_cast<std::size_t>(i)];
    std::int64_t best = sum, best_start = 0;
    for (std::int64_t s = 1; s + window_hours <= n; ++s) {
        sum += series[static_cast<std::size_t>(s + window_hours - 1)] - series[static_cast<std::size_t>(s - 1)];
        if (sum > best) {
            best = sum;
            best_start = s;
        }
    }
    return PeakResult{HourRange{begin + best_start, begin + best_start + window_hours}, window_hours,
                      Consumption{best}};
}

inline PeakResult peak_window(const std::vector<DataStream>& streams, const HourRange& range,
                              std::int64_t window_hours, unsigned workers = 1) {
    if (streams.empty()) throw Error(Errc::EmptyStreamSet, "peak_window needs at least one stream");
    if (window_hours < 1 || range.hours() < window_hours)
        throw Error(Errc::InvalidRange, "range shorter than window");
    return peak_window_series(aggregate(streams, range, workers), range.begin, window_hours);
}

// ---------------------------------------------------------------------------
// Top-k contributors
// ---------------------------------------------------------------------------

struct TopK {
    Ranking ranking;
    std::vector<CompositeKey> excluded;  // no present hours in the window
};

/// Per-stream volume inside `window`, sorted by Ranking::before and cut to k.
/// With `censuses` (aligned to `streams`), each volume is scaled by the
/// stream's gap factor and rounded to a litre; streams with no present hours
/// are excluded and listed.
inline TopK top_k_contributors(const std::vector<DataStream>& streams, const HourRange& window, long long k,
                               const std::vector<integrity::GapCensus>* censuses = nullptr, unsigned workers = 1) {
    if (k <= 0) throw Error(Errc::InvalidK, "k must be positive");
    if (censuses && censuses->size() != streams.size())
        throw Error(Errc::InvalidValue, "gap censuses must align with streams");
    std::vector<std::optional<RankEntry>> loads(streams.size());
    parallel_for(streams.size(), workers, [&](std::size_t i) {
        const auto& s = streams[i];
        const Consumption raw = s.sum_in(window);
        if (!censuses) {
            loads[i] = RankEntry{s.key, raw};
            return;
        }
        try {
            const double f = integrity::gap_scale_factor((*censuses)[i], window);
            loads[i] = RankEntry{s.key, f == 1.0 ? raw : Consumption::from_m3(raw.m3() * f)};
        } catch (const Error& e) {
            if (e.code() != Errc::NoDataInWindow) throw;
        }
    });
    TopK out;
    std::vector<RankEntry> entries;
    entries.reserve(streams.size());
    for (std::size_t i = 0; i < streams.size(); ++i) {
        if (loads[i])
            entries.push_back(std::move(*loads[i]));
        else
            out.excluded.push_back(streams[i].key);
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), entries.size());
    std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep), entries.end(),
                      Ranking::before);
    entries.resize(keep);
    std::sort(out.excluded.begin(), out.excluded.end());
    out.ranking = Ranking{std::move(entries), window};
    return out;
}

struct CategoryShare {
    std::size_t count = 0;
    Consumption volume;
    double volume_share = 0.0;

    bool operator==(const CategoryShare&) const = default;
};

/// Count and volume of each main category among the ranked entries.
inline std::map<MainCategory, CategoryShare> category_shares(const Ranking& ranking,
                                                             const std::vector<DataStream>& streams) {
    std::map<CompositeKey, MainCategory> cat;
    for (const auto& s : streams) cat[s.key] = s.category.main;
    std::map<MainCategory, CategoryShare> out;
    std::int64_t total = 0;
    for (const auto& e : ranking.entries) {
        const auto it = cat.find(e.key);
        auto& share = out[it == cat.end() ? MainCategory::SFR : it->second];
        ++share.count;
        share.volume += e.load;
        total += e.load.litres;
    }
    for (auto& [c, share] : out)
        share.volume_share = total ? static_cast<double>(share.volume.litres) / static_cast<double>(total) : 0.0;
    return out;
}

}  // namespace hydroclean::peaks

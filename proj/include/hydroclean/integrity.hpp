#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "core_model.hpp"
#include "parallel.hpp"

namespace hydroclean::integrity {

// ---------------------------------------------------------------------------
// Duplicate streams
// ---------------------------------------------------------------------------

inline std::uint64_t series_hash(const DataStream& s) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xffU;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::int64_t>(s.readings.size()));
    for (const auto& r : s.readings) {
        mix(r.at.value);
        mix(r.value.litres);
    }
    return h;
}

struct StreamDedupResult {
    std::vector<DataStream> streams;  // survivors, sorted by key
    std::vector<AnomalyEvent> events;
};

/// Streams whose full timestamp→value series are identical form a group; the
/// smallest key survives and every other member yields a DuplicateStream event.
/// Empty streams carry no series to compare and are kept as-is.
inline StreamDedupResult dedup_streams(std::vector<DataStream> streams, unsigned workers = 1) {
    std::sort(streams.begin(), streams.end(), [](const DataStream& a, const DataStream& b) { return a.key < b.key; });
    std::vector<std::uint64_t> hashes(streams.size());
    parallel_for(streams.size(), workers, [&](std::size_t i) { hashes[i] = series_hash(streams[i]); });

    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < streams.size(); ++i)
        if (!streams[i].readings.empty()) buckets[hashes[i]].push_back(i);

    std::vector<bool> removed(streams.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> removed_by;  // (removed, survivor)
    for (auto& [h, members] : buckets) {
        if (members.size() < 2) continue;
        // members ascend by key; compare exactly to split hash collisions
        for (std::size_t a = 0; a < members.size(); ++a) {
            if (removed[members[a]]) continue;
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                if (removed[members[b]]) continue;
                if (streams[members[a]].readings == streams[members[b]].readings) {
                    removed[members[b]] = true;
                    removed_by.emplace_back(members[b], members[a]);
                }
            }
        }
    }

    StreamDedupResult out;
    for (auto [gone, survivor] : removed_by) {
        const auto& s = streams[gone];
        AnomalyEvent e;
        e.key = s.key;
        e.cls = AnomalyClass::DuplicateStream;
        e.span = *s.observed_range();
        e.score = static_cast<double>(s.readings.size());
        e.proposed_repair = RepairAction{RepairKind::DropRecord, e.span, std::nullopt};
        e.status = EventStatus::Repaired;
        out.events.push_back(std::move(e));
    }
    std::sort(out.events.begin(), out.events.end(), event_order);
    for (std::size_t i = 0; i < streams.size(); ++i)
        if (!removed[i]) out.streams.push_back(std::move(streams[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Duplicate records
// ---------------------------------------------------------------------------

enum class ConflictPolicy { DropBothMarkMissing, KeepFirst, KeepMin };

inline std::string_view to_string(ConflictPolicy p) {
    switch (p) {
        case ConflictPolicy::DropBothMarkMissing: return "drop";
        case ConflictPolicy::KeepFirst: return "first";
        case ConflictPolicy::KeepMin: return "min";
    }
    return "drop";
}

inline std::optional<ConflictPolicy> parse_conflict_policy(std::string_view s) {
    if (s == "drop") return ConflictPolicy::DropBothMarkMissing;
    if (s == "first") return ConflictPolicy::KeepFirst;
    if (s == "min") return ConflictPolicy::KeepMin;
    return std::nullopt;
}

struct RecordDedupResult {
    DataStream stream;
    std::vector<AnomalyEvent> events;
    std::vector<Hour> dropped;  // timestamps removed under DropBothMarkMissing
};

/// Collapses repeated timestamps. Equal values merge into one reading
/// (DuplicateRecord); unequal values resolve per policy (Conflict).
inline RecordDedupResult dedup_records(DataStream stream, ConflictPolicy policy = ConflictPolicy::DropBothMarkMissing) {
    RecordDedupResult out;
    stream.sort_readings();  // stable: input order kept within a timestamp
    std::vector<Reading> kept;
    kept.reserve(stream.readings.size());
    const auto& rs = stream.readings;
    for (std::size_t i = 0; i < rs.size();) {
        std::size_t j = i + 1;
        while (j < rs.size() && rs[j].at == rs[i].at) ++j;
        if (j - i == 1) {
            kept.push_back(rs[i]);
            i = j;
            continue;
        }
        const bool all_equal =
            std::all_of(rs.begin() + i, rs.begin() + j, [&](const Reading& r) { return r.value == rs[i].value; });
        AnomalyEvent e;
        e.key = stream.key;
        e.span = HourRange{rs[i].at, rs[i].at + 1};
        e.score = static_cast<double>(j - i);
        e.status = EventStatus::Repaired;
        if (all_equal) {
            e.cls = AnomalyClass::DuplicateRecord;
            e.proposed_repair = RepairAction{RepairKind::DropRecord, e.span, std::nullopt};
            kept.push_back(rs[i]);
        } else {
            e.cls = AnomalyClass::Conflict;
            switch (policy) {
                case ConflictPolicy::DropBothMarkMissing:
                    e.proposed_repair = RepairAction{RepairKind::DropRecord, e.span, std::nullopt};
                    out.dropped.push_back(rs[i].at);
                    break;
                case ConflictPolicy::KeepFirst:
                    e.proposed_repair = RepairAction{RepairKind::DropRecord, e.span, std::nullopt};
                    kept.push_back(rs[i]);
                    break;
                case ConflictPolicy::KeepMin: {
                    e.proposed_repair = RepairAction{RepairKind::DropRecord, e.span, std::nullopt};
                    auto m = std::min_element(rs.begin() + i, rs.begin() + j,
                                              [](const Reading& a, const Reading& b) { return a.value < b.value; });
                    kept.push_back(*m);
                    break;
                }
            }
        }
        out.events.push_back(std::move(e));
        i = j;
    }
    stream.readings = std::move(kept);
    out.stream = std::move(stream);
    return out;
}

// ---------------------------------------------------------------------------
// Gap census
// ---------------------------------------------------------------------------

/// Expected hourly grid: every hour of `range` except hours on outage days.
struct ExpectedGrid {
    HourRange range;
    std::vector<Date> outage_days;  // sorted

    bool is_outage(Hour h) const { return std::binary_search(outage_days.begin(), outage_days.end(), date_of(h)); }

    bool expects(Hour h) const { return range.contains(h) && !is_outage(h); }

    /// Number of expected hours inside `window`.
    std::int64_t expected_hours(const HourRange& window) const {
        const Hour b = std::max(range.begin, window.begin);
        const Hour e = std::min(range.end, window.end);
        if (e <= b) return 0;
        std::int64_t n = e - b;
        for (const auto& d : outage_days) {
            const HourRange day{start_of(d), start_of(d) + 24};
            const Hour ob = std::max(day.begin, b);
            const Hour oe = std::min(day.end, e);
            if (ob < oe) n -= oe - ob;
        }
        return n;
    }

    std::int64_t expected_count() const { return expected_hours(range); }
};

struct GapCensus {
    CompositeKey key;
    HourRange range;
    std::size_t expected_count = 0;
    std::size_t present_count = 0;
    std::vector<Hour> missing_timestamps;  // sorted
    std::vector<Date> global_outage_days;

    bool operator==(const GapCensus&) const = default;
};

inline constexpr double kGlobalOutageThreshold = 0.99;

/// Dates inside `range` on which at least `threshold` of the streams have no reading.
inline std::vector<Date> detect_global_outages(const std::vector<DataStream>& streams, HourRange range,
                                               double threshold = kGlobalOutageThreshold, unsigned workers = 1) {
    if (streams.empty() || range.empty()) return {};
    const std::int64_t first_day = day_index(range.begin);
    const std::int64_t last_day = day_index(range.end - 1);
    const std::size_t days = static_cast<std::size_t>(last_day - first_day + 1);
    std::vector<std::vector<std::uint8_t>> seen(streams.size());
    parallel_for(streams.size(), workers, [&](std::size_t i) {
        seen[i].assign(days, 0);
        for (const auto& r : streams[i].readings)
            if (range.contains(r.at)) seen[i][static_cast<std::size_t>(day_index(r.at) - first_day)] = 1;
    });
    std::vector<Date> out;
    for (std::size_t d = 0; d < days; ++d) {
        std::size_t missing = 0;
        for (const auto& s : seen) missing += s[d] ? 0 : 1;
        if (static_cast<double>(missing) >= threshold * static_cast<double>(streams.size()))
            out.push_back(Date{std::chrono::days{first_day + static_cast<std::int64_t>(d)}});
    }
    return out;
}

/// Partitions the expected grid into present and missing hours. Assumes the
/// stream has already been through record dedup.
inline GapCensus gap_census(const DataStream& stream, const ExpectedGrid& grid) {
    GapCensus c;
    c.key = stream.key;
    c.range = grid.range;
    c.global_outage_days = grid.outage_days;
    c.expected_count = static_cast<std::size_t>(grid.expected_count());
    auto it = stream.readings.begin();
    for (Hour h = grid.range.begin; h < grid.range.end; h = h + 1) {
        if (grid.is_outage(h)) {
            h = start_of(date_of(h)) + 23;  // skip rest of the day
            continue;
        }
        while (it != stream.readings.end() && it->at < h) ++it;
        if (it != stream.readings.end() && it->at == h)
            ++c.present_count;
        else
            c.missing_timestamps.push_back(h);
    }
    return c;
}

/// Gap events: one per maximal run of consecutive missing hours.
inline std::vector<AnomalyEvent> gap_events(const GapCensus& census) {
    std::vector<AnomalyEvent> out;
    const auto& m = census.missing_timestamps;
    for (std::size_t i = 0; i < m.size();) {
        std::size_t j = i + 1;
        while (j < m.size() && m[j] == m[j - 1] + 1) ++j;
        AnomalyEvent e;
        e.key = census.key;
        e.cls = AnomalyClass::Gap;
        e.span = HourRange{m[i], m[j - 1] + 1};
        e.score = static_cast<double>(j - i);
        e.status = EventStatus::CarriedForward;
        out.push_back(std::move(e));
        i = j;
    }
    return out;
}

/// expected_hours_in_window / present_hours_in_window.
inline double gap_scale_factor(const GapCensus& census, const HourRange& window) {
    const ExpectedGrid grid{census.range, census.global_outage_days};
    const std::int64_t expected = grid.expected_hours(window);
    const auto lo = std::lower_bound(census.missing_timestamps.begin(), census.missing_timestamps.end(), window.begin);
    const auto hi = std::lower_bound(census.missing_timestamps.begin(), census.missing_timestamps.end(), window.end);
    const std::int64_t present = expected - (hi - lo);
    if (present <= 0)
        throw Error(Errc::NoDataInWindow, census.key.str() + " has no present hours in " + format_hour(window.begin) +
                                              " .. " + format_hour(window.end));
    return static_cast<double>(expected) / static_cast<double>(present);
}

}  // namespace hydroclean::integrity

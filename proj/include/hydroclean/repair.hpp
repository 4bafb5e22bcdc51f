#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core_model.hpp"

namespace hydroclean::repair {

// ---------------------------------------------------------------------------
// Journal of pre-repair readings
// ---------------------------------------------------------------------------

/// Readings inside `range` before a repair touched them. Restoring them is
/// the exact inverse of the repair.
struct JournalEntry {
    std::uint64_t event_id = 0;
    CompositeKey key;
    HourRange range;
    std::vector<Reading> originals;

    bool operator==(const JournalEntry&) const = default;
};

inline std::vector<Reading> readings_in(const DataStream& s, const HourRange& r) {
    const auto b = s.lower_bound(r.begin);
    const auto e = s.lower_bound(r.end);
    return {s.readings.begin() + static_cast<std::ptrdiff_t>(b), s.readings.begin() + static_cast<std::ptrdiff_t>(e)};
}

/// Replaces every reading inside `r` with `replacement` (sorted, inside `r`).
inline void replace_range(DataStream& s, const HourRange& r, const std::vector<Reading>& replacement) {
    const auto b = static_cast<std::ptrdiff_t>(s.lower_bound(r.begin));
    const auto e = static_cast<std::ptrdiff_t>(s.lower_bound(r.end));
    s.readings.erase(s.readings.begin() + b, s.readings.begin() + e);
    s.readings.insert(s.readings.begin() + b, replacement.begin(), replacement.end());
}

class RepairJournal {
public:
    const JournalEntry& record(std::uint64_t event_id, const DataStream& s, const HourRange& r) {
        entries_.push_back(JournalEntry{event_id, s.key, r, readings_in(s, r)});
        return entries_.back();
    }

    void push(JournalEntry e) { entries_.push_back(std::move(e)); }

    const std::vector<JournalEntry>& entries() const { return entries_; }

    static void restore(DataStream& s, const JournalEntry& e) {
        if (s.key != e.key) throw Error(Errc::InvalidKey, "journal entry for " + e.key.str() + " applied to " + s.key.str());
        replace_range(s, e.range, e.originals);
    }

    /// Undoes every journaled repair on `s`, newest first.
    void undo_all(DataStream& s) const {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
            if (it->key == s.key) restore(s, *it);
    }

private:
    std::vector<JournalEntry> entries_;
};

// ---------------------------------------------------------------------------
// Spikes and resets
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kMaxNeighborhoodHours = 64;

inline std::int64_t round_div(long double num, long double den) {
    const long double q = num / den;
    return static_cast<std::int64_t>(q < 0 ? q - 0.5L : q + 0.5L);
}

struct SpikeRepair {
    DataStream stream;
    JournalEntry audit;
    bool marked_gap = false;
    std::int64_t neighborhood_used = 0;
    std::optional<Consumption> replacement;
};

/// Replaces each reading in the event span by the rounded mean of valid
/// neighbours within ±h of the span. Neighbours inside `excluded` spans (other
/// flagged hours) are not valid. With no valid neighbour the window doubles up
/// to ±64 h; failing that the span's readings are removed and become a gap.
inline SpikeRepair repair_spike(DataStream stream, const AnomalyEvent& event, std::int64_t neighborhood_hours = 8,
                                const std::vector<HourRange>& excluded = {}) {
    if (event.cls != AnomalyClass::Spike && event.cls != AnomalyClass::Reset)
        throw Error(Errc::InvalidValue, "repair_spike expects a Spike or Reset event");
    if (stream.key != event.key) throw Error(Errc::InvalidKey, "event key does not match stream");
    const auto observed = stream.observed_range();
    if (!observed || !observed->overlaps(event.span)) throw Error(Errc::InvalidRange, "event span outside stream");

    auto is_excluded = [&](Hour t) {
        if (event.span.contains(t)) return true;
        return std::any_of(excluded.begin(), excluded.end(), [t](const HourRange& r) { return r.contains(t); });
    };

    SpikeRepair out;
    out.audit = JournalEntry{event.id, stream.key, event.span, readings_in(stream, event.span)};
    for (std::int64_t h = std::max<std::int64_t>(neighborhood_hours, 1); h <= kMaxNeighborhoodHours; h *= 2) {
        const HourRange w{event.span.begin - h, event.span.end + h};
        long double sum = 0;
        std::int64_t n = 0;
        for (auto i = stream.lower_bound(w.begin); i < stream.readings.size() && stream.readings[i].at < w.end; ++i) {
            if (is_excluded(stream.readings[i].at)) continue;
            sum += static_cast<long double>(stream.readings[i].value.litres);
            ++n;
        }
        if (n == 0) {
            if (h == kMaxNeighborhoodHours) break;
            if (h * 2 > kMaxNeighborhoodHours) h = kMaxNeighborhoodHours / 2;
            continue;
        }
        const Consumption mean{round_div(sum, static_cast<long double>(n))};
        std::vector<Reading> fixed = out.audit.originals;
        for (auto& r : fixed) r.value = mean;
        replace_range(stream, event.span, fixed);
        out.neighborhood_used = h;
        out.replacement = mean;
        out.stream = std::move(stream);
        return out;
    }
    replace_range(stream, event.span, {});
    out.marked_gap = true;
    out.stream = std::move(stream);
    return out;
}

// ---------------------------------------------------------------------------
// Billing residual
// ---------------------------------------------------------------------------

/// Billing records whose period overlaps the stream's observed range.
inline std::vector<const BillingRecord*> overlapping_billing(const DataStream& s,
                                                             const std::vector<BillingRecord>& billing) {
    std::vector<const BillingRecord*> out;
    const auto range = s.observed_range();
    if (!range) return out;
    for (const auto& b : billing)
        if (b.hours().overlaps(*range)) out.push_back(&b);
    return out;
}

/// Share of the stream's observed range covered by billing periods.
inline double billing_coverage(const DataStream& s, const std::vector<BillingRecord>& billing) {
    const auto range = s.observed_range();
    if (!range || range->empty()) return 0.0;
    std::vector<HourRange> parts;
    for (const auto* b : overlapping_billing(s, billing)) {
        const auto h = b->hours();
        parts.push_back({std::max(h.begin, range->begin), std::min(h.end, range->end)});
    }
    std::sort(parts.begin(), parts.end());
    std::int64_t covered = 0;
    Hour reach = range->begin;
    for (const auto& p : parts) {
        const Hour b = std::max(p.begin, reach);
        if (p.end > b) {
            covered += p.end - b;
            reach = p.end;
        }
    }
    return static_cast<double>(covered) / static_cast<double>(range->hours());
}

/// Σ over overlapping periods of |stream sum − billed consumption|, in litres.
inline std::int64_t billing_residual_litres(const DataStream& s, const std::vector<BillingRecord>& billing) {
    const auto periods = overlapping_billing(s, billing);
    if (periods.empty()) throw Error(Errc::NoGroundTruth, "no billing records overlap " + s.key.str());
    std::int64_t total = 0;
    for (const auto* b : periods) total += std::llabs(s.sum_in(b->hours()).litres - b->consumption.litres);
    return total;
}

inline double billing_residual(const DataStream& s, const std::vector<BillingRecord>& billing) {
    return static_cast<double>(billing_residual_litres(s, billing)) / 1000.0;
}

// ---------------------------------------------------------------------------
// MUI proposals
// ---------------------------------------------------------------------------

inline constexpr double kImperialGallonsPerM3 = 219.969;
inline constexpr double kCubicFeetPerM3 = 35.3147;
inline constexpr double kFactorMatchTolerance = 0.005;
inline constexpr double kMinBillingCoverage = 0.8;

inline std::vector<double> default_factor_candidates() {
    std::vector<double> out;
    for (double f : {10.0, 100.0, 1000.0, kImperialGallonsPerM3, kCubicFeetPerM3}) {
        out.push_back(f);
        out.push_back(1.0 / f);
    }
    return out;
}

enum class Segment { Before, After };

inline std::string_view to_string(Segment s) { return s == Segment::Before ? "before" : "after"; }

inline std::optional<Segment> parse_segment(std::string_view s) {
    if (s == "before") return Segment::Before;
    if (s == "after") return Segment::After;
    return std::nullopt;
}

struct MuiProposal {
    CompositeKey key;
    Hour changepoint;
    double factor = 1.0;
    double residual_before = 0.0;  // m³
    double residual_after = 0.0;
    Segment segment = Segment::After;

    bool operator==(const MuiProposal&) const = default;
};

/// Hours scaled when `segment` of `range` is split at `changepoint`.
inline HourRange segment_range(const HourRange& range, Hour changepoint, Segment segment) {
    const Hour cp = std::clamp(changepoint, range.begin, range.end);
    return segment == Segment::Before ? HourRange{range.begin, cp} : HourRange{cp, range.end};
}

/// Multiplies every reading in `r` by `factor`, rounding to the nearest litre.
inline void scale_range(DataStream& s, const HourRange& r, double factor) {
    for (auto i = s.lower_bound(r.begin); i < s.readings.size() && s.readings[i].at < r.end; ++i) {
        const long double v = static_cast<long double>(s.readings[i].value.litres) * factor;
        s.readings[i].value.litres = static_cast<std::int64_t>(v < 0 ? v - 0.5L : v + 0.5L);
    }
}

inline RepairAction proposal_action(const MuiProposal& p, const HourRange& stream_range) {
    return RepairAction::scale_segment(segment_range(stream_range, p.changepoint, p.segment), p.factor);
}

namespace detail {

struct DayTotals {
    std::int64_t first_day = 0;
    std::vector<long double> prefix;  // prefix[i] = Σ days [first_day, first_day + i)

    long double sum(std::int64_t from_day, std::int64_t to_day) const {
        const auto n = static_cast<std::int64_t>(prefix.size()) - 1;
        from_day = std::clamp<std::int64_t>(from_day - first_day, 0, n);
        to_day = std::clamp<std::int64_t>(to_day - first_day, 0, n);
        return to_day > from_day ? prefix[static_cast<std::size_t>(to_day)] - prefix[static_cast<std::size_t>(from_day)]
                                 : 0.0L;
    }
};

inline DayTotals day_totals(const DataStream& s) {
    DayTotals d;
    const auto range = *s.observed_range();
    d.first_day = day_index(range.begin);
    const auto days = static_cast<std::size_t>(day_index(range.end - 1) - d.first_day + 1);
    std::vector<long double> totals(days, 0.0L);
    for (const auto& r : s.readings) totals[static_cast<std::size_t>(day_index(r.at) - d.first_day)] += r.value.litres;
    d.prefix.assign(days + 1, 0.0L);
    for (std::size_t i = 0; i < days; ++i) d.prefix[i + 1] = d.prefix[i] + totals[i];
    return d;
}

struct Period {
    std::int64_t from_day, to_day;
    long double billed;
};

struct Candidate {
    long double residual;
    double factor;
    std::int64_t day;
    Segment segment;
};

/// Ordering: residual, then |ln f|, then earlier changepoint, then After first.
inline bool better(const Candidate& a, const Candidate& b) {
    const long double tol = 1e-9L * std::max<long double>(1.0L, std::max(a.residual, b.residual));
    if (std::fabs(a.residual - b.residual) > tol) return a.residual < b.residual;
    const double la = std::fabs(std::log(a.factor)), lb = std::fabs(std::log(b.factor));
    if (std::fabs(la - lb) > 1e-12) return la < lb;
    if (a.day != b.day) return a.day < b.day;
    return a.segment == Segment::After && b.segment == Segment::Before;
}

inline long double residual_at(const DayTotals& dt, const std::vector<Period>& periods, std::int64_t cp_day,
                               double f, Segment seg) {
    long double total = 0;
    for (const auto& p : periods) {
        const long double before = dt.sum(p.from_day, std::min(p.to_day, cp_day));
        const long double after = dt.sum(std::max(p.from_day, cp_day), p.to_day);
        const long double v = seg == Segment::Before ? before * f + after : before + after * f;
        total += std::fabs(v - p.billed);
    }
    return total;
}

}  // namespace detail

/// Searches changepoints at month boundaries, then day boundaries within ±31
/// days of the best month for each (factor, segment), minimizing billing
/// residual. Pure: the stream is not modified.
inline MuiProposal propose_mui_repair(const DataStream& stream, const std::vector<BillingRecord>& billing,
                                      const std::vector<double>& candidates = default_factor_candidates()) {
    const auto range = stream.observed_range();
    if (!range) throw Error(Errc::NoGroundTruth, stream.key.str() + " has no readings");
    const auto periods_ptr = overlapping_billing(stream, billing);
    if (periods_ptr.empty()) throw Error(Errc::NoGroundTruth, "no billing records overlap " + stream.key.str());
    if (billing_coverage(stream, billing) < kMinBillingCoverage)
        throw Error(Errc::NoGroundTruth, "billing covers less than 80% of " + stream.key.str());
    for (double f : candidates)
        if (!(f > 0.0)) throw Error(Errc::InvalidValue, "candidate factors must be positive");

    const auto dt = detail::day_totals(stream);
    std::vector<detail::Period> periods;
    for (const auto* b : periods_ptr)
        periods.push_back({b->period_start.time_since_epoch().count(), b->period_end.time_since_epoch().count(),
                           static_cast<long double>(b->consumption.litres)});

    const std::int64_t first_day = day_index(range->begin);
    const std::int64_t last_day = day_index(range->end - 1);  // inclusive
    // Changepoints strictly inside the observed days so both segments are non-empty.
    std::vector<std::int64_t> month_days;
    {
        const std::chrono::year_month_day ymd{date_of(range->begin)};
        std::chrono::year_month ym{ymd.year(), ymd.month()};
        for (;;) {
            ym += std::chrono::months{1};
            const auto d = Date{ym / std::chrono::day{1}}.time_since_epoch().count();
            if (d > last_day) break;
            if (d > first_day) month_days.push_back(d);
        }
    }
    if (month_days.empty())
        for (std::int64_t d = first_day + 1; d <= last_day; ++d) month_days.push_back(d);
    if (month_days.empty()) throw Error(Errc::NoConfidentProposal, stream.key.str() + " spans a single day");

    std::optional<detail::Candidate> best;
    for (double f : candidates) {
        for (Segment seg : {Segment::After, Segment::Before}) {
            std::optional<detail::Candidate> coarse;
            for (auto d : month_days) {
                detail::Candidate c{detail::residual_at(dt, periods, d, f, seg), f, d, seg};
                if (!coarse || detail::better(c, *coarse)) coarse = c;
            }
            std::optional<detail::Candidate> fine = coarse;
            const auto lo = std::max(first_day + 1, coarse->day - 31);
            const auto hi = std::min(last_day, coarse->day + 31);
            for (auto d = lo; d <= hi; ++d) {
                detail::Candidate c{detail::residual_at(dt, periods, d, f, seg), f, d, seg};
                if (detail::better(c, *fine)) fine = c;
            }
            if (!best || detail::better(*fine, *best)) best = fine;
        }
    }

    MuiProposal p;
    p.key = stream.key;
    p.changepoint = Hour{best->day * 24};
    p.factor = best->factor;
    p.segment = best->segment;
    const std::int64_t before = billing_residual_litres(stream, billing);
    DataStream applied = stream;
    scale_range(applied, segment_range(*range, p.changepoint, p.segment), p.factor);
    const std::int64_t after = billing_residual_litres(applied, billing);
    p.residual_before = static_cast<double>(before) / 1000.0;
    p.residual_after = static_cast<double>(after) / 1000.0;
    if (before == 0 || after >= before || 2 * after > before)
        throw Error(Errc::NoConfidentProposal, stream.key.str() + ": best residual " + std::to_string(after) +
                                                   " L vs " + std::to_string(before) + " L before");
    return p;
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class Decision { Accept, AcceptWithEdit, Reject };

inline std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::Accept: return "Accept";
        case Decision::AcceptWithEdit: return "AcceptWithEdit";
        case Decision::Reject: return "Reject";
    }
    return "Reject";
}

inline std::optional<Decision> parse_decision(std::string_view s) {
    for (auto d : {Decision::Accept, Decision::AcceptWithEdit, Decision::Reject})
        if (to_string(d) == s) return d;
    return std::nullopt;
}

struct Verdict {
    CompositeKey key;
    std::uint64_t event_id = 0;
    Decision decision = Decision::Reject;
    std::optional<Hour> edited_changepoint;
    std::optional<double> edited_factor;
    std::string reviewer;
    std::int64_t decided_at = 0;  // unix seconds

    bool operator==(const Verdict&) const = default;

    void validate() const {
        if (decision == Decision::AcceptWithEdit && !edited_changepoint && !edited_factor)
            throw Error(Errc::InvalidValue, "AcceptWithEdit requires an edited changepoint or factor");
        if (edited_factor && !(*edited_factor > 0.0)) throw Error(Errc::InvalidValue, "edited factor must be positive");
    }
};

/// Snaps `f` to a candidate within ±0.5% relative; otherwise returns `f`.
inline double snap_factor(double f, const std::vector<double>& candidates = default_factor_candidates()) {
    for (double c : candidates)
        if (std::fabs(f - c) <= kFactorMatchTolerance * c) return c;
    return f;
}

struct VerdictOutcome {
    std::optional<RepairAction> applied;  // nullopt for Reject
    std::optional<JournalEntry> audit;
};

/// Applies a reviewer decision to a Queued event. Accept and AcceptWithEdit
/// scale the chosen segment and mark the event Repaired; Reject marks it
/// Rejected and leaves the stream untouched.
inline VerdictOutcome apply_verdict(DataStream& stream, AnomalyEvent& event, const Verdict& verdict,
                                    const std::optional<MuiProposal>& proposal, RepairJournal* journal = nullptr) {
    if (verdict.event_id != event.id || verdict.key != event.key)
        throw Error(Errc::UnknownEvent, "verdict does not reference event " + std::to_string(event.id));
    if (event.status == EventStatus::Repaired || event.status == EventStatus::Rejected)
        throw Error(Errc::AlreadyRepaired, "event " + std::to_string(event.id) + " is " +
                                               std::string(to_string(event.status)));
    if (event.status != EventStatus::Queued)
        throw Error(Errc::NotQueued, "event " + std::to_string(event.id) + " is " + std::string(to_string(event.status)));
    if (stream.key != event.key) throw Error(Errc::InvalidKey, "stream does not match event key");
    verdict.validate();

    VerdictOutcome out;
    if (verdict.decision == Decision::Reject) {
        event.transition(EventStatus::Rejected);
        return out;
    }
    const auto range = stream.observed_range();
    if (!range) throw Error(Errc::InvalidRange, stream.key.str() + " has no readings");
    Hour changepoint;
    double factor = 1.0;
    Segment segment = proposal ? proposal->segment : Segment::After;
    if (verdict.decision == Decision::Accept) {
        if (!proposal) throw Error(Errc::NoConfidentProposal, "Accept requires a proposal; use AcceptWithEdit");
        changepoint = proposal->changepoint;
        factor = proposal->factor;
    } else {
        if (!proposal && !(verdict.edited_changepoint && verdict.edited_factor))
            throw Error(Errc::InvalidValue, "without a proposal both changepoint and factor must be edited");
        changepoint = verdict.edited_changepoint ? *verdict.edited_changepoint : proposal->changepoint;
        factor = verdict.edited_factor ? snap_factor(*verdict.edited_factor) : proposal->factor;
    }
    const auto action = RepairAction::scale_segment(segment_range(*range, changepoint, segment), factor);
    JournalEntry audit{event.id, stream.key, *action.segment, readings_in(stream, *action.segment)};
    scale_range(stream, *action.segment, factor);
    event.proposed_repair = action;
    event.transition(EventStatus::Repaired);
    if (journal) journal->push(audit);
    out.applied = action;
    out.audit = std::move(audit);
    return out;
}

}  // namespace hydroclean::repair

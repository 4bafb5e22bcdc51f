#pragma once

// Scoring a cleaned state against a generator's ground truth.

#include "peak_analytics.hpp"
#include "pipeline.hpp"
#include "rank_metrics.hpp"
#include "synthetic.hpp"

namespace hydroclean::eval {

struct PeakRanking {
    peaks::PeakResult peak;
    Ranking ranking;
};

/// Contributors ranked over the set's own peak window; k = 0 ranks every stream.
inline PeakRanking peak_ranking(const std::vector<DataStream>& streams, const HourRange& range, std::int64_t window_hours,
                                long long k = 0, unsigned workers = 1) {
    const auto peak = peaks::peak_window(streams, range, window_hours, workers);
    const long long n = k > 0 ? k : static_cast<long long>(std::max<std::size_t>(streams.size(), 1));
    return {peak, peaks::top_k_contributors(streams, peak.window, n, nullptr, workers).ranking};
}

/// Streams from an AMID file: hourly rows only, grouped by key.
inline std::vector<DataStream> load_amid(const std::filesystem::path& path) {
    auto rows = ingestion::parse_dataset<MeterReading>(path);
    return ingestion::assemble_streams(rows.records).streams;
}

struct WktPoint {
    std::int64_t days = 0;
    rank::CorrelationResult result;
};

/// Weighted Kendall's tau of the candidate set against the reference for
/// peak windows of 1..max_days days. Each set is ranked over its own peak
/// window; weights are reference consumption in the calendar month holding the
/// reference peak.
inline std::vector<WktPoint> wkt_profile(const std::vector<DataStream>& ref, const std::vector<DataStream>& cand,
                                         std::int64_t max_days, unsigned workers = 1) {
    const auto ref_range = pipeline::day_aligned_range(ref);
    const auto cand_range = pipeline::day_aligned_range(cand);
    std::vector<WktPoint> out;
    for (std::int64_t d = 1; d <= max_days; ++d) {
        const auto w = 24 * d;
        if (ref_range.hours() < w || cand_range.hours() < w) break;
        const auto r = peak_ranking(ref, ref_range, w, 0, workers);
        const auto c = peak_ranking(cand, cand_range, w, 0, workers);
        const auto weights = rank::consumption_weights(ref, rank::calendar_month_of(r.peak.window.begin));
        out.push_back({d, rank::weighted_kendall_tau(r.ranking, c.ranking, weights, rank::Kernel::Auto, workers)});
    }
    return out;
}

/// Reviewer stand-in that knows the planted MUI list: accepts the proposal on
/// planted streams, rejects queued MUI events elsewhere. Events without a
/// proposal on planted streams are left in the queue.
inline std::vector<repair::Verdict> ground_truth_verdicts(const pipeline::State& s, const synth::GroundTruth& gt) {
    std::set<CompositeKey> planted;
    for (const auto& m : gt.mui) planted.insert(m.key);
    std::vector<repair::Verdict> out;
    for (const auto& e : s.events) {
        if (e.cls != AnomalyClass::MUI || e.status != EventStatus::Queued) continue;
        repair::Verdict v;
        v.key = e.key;
        v.event_id = e.id;
        v.reviewer = "ground-truth";
        if (!planted.count(e.key))
            v.decision = repair::Decision::Reject;
        else if (s.proposals.count(e.id))
            v.decision = repair::Decision::Accept;
        else
            continue;
        out.push_back(std::move(v));
    }
    return out;
}

struct Tally {
    std::size_t planted = 0;
    std::size_t recovered = 0;

    double rate() const { return planted ? static_cast<double>(recovered) / static_cast<double>(planted) : 1.0; }
    json to_json() const { return {{"planted", planted}, {"recovered", recovered}, {"rate", rate()}}; }
};

struct Recovery {
    Tally spikes, mui, duplicate_streams, resets, quantized;
    bool quantized_never_resolved = true;
    std::size_t spike_false_positives = 0;        // repaired spikes matching nothing planted
    std::size_t spike_decoy_hits = 0;             // of which on a planted decoy hour
    std::size_t mui_false_accepts = 0;            // Repaired MUI events on unplanted streams
    std::vector<CompositeKey> missed_mui;

    json to_json() const {
        json missed = json::array();
        for (const auto& k : missed_mui) missed.push_back(k);
        return {{"spikes", spikes.to_json()},
                {"mui", mui.to_json()},
                {"duplicate_streams", duplicate_streams.to_json()},
                {"resets", resets.to_json()},
                {"quantized_detected", quantized.to_json()},
                {"quantized_never_resolved", quantized_never_resolved},
                {"spike_false_positives", spike_false_positives},
                {"spike_decoy_hits", spike_decoy_hits},
                {"mui_false_accepts", mui_false_accepts},
                {"missed_mui", missed}};
    }
};

inline constexpr std::int64_t kChangepointToleranceHours = 48;

/// Matches planted errors to the events of a finished run. Spikes count when a
/// repaired Spike event overlaps the planted span; MUI counts when the applied
/// repair scales the after-segment by exactly the planted inverse factor with
/// its changepoint within ±2 days.
inline Recovery score(const pipeline::State& s, const synth::GroundTruth& gt) {
    Recovery r;
    std::map<CompositeKey, std::vector<const AnomalyEvent*>> by_key;
    for (const auto& e : s.events) by_key[e.key].push_back(&e);
    auto events_of = [&](const CompositeKey& k) {
        const auto it = by_key.find(k);
        return it == by_key.end() ? std::vector<const AnomalyEvent*>{} : it->second;
    };

    std::set<std::uint64_t> matched_spikes;
    for (const auto& sp : gt.spikes) {
        ++r.spikes.planted;
        for (const auto* e : events_of(sp.key))
            if (e->cls == AnomalyClass::Spike && e->status == EventStatus::Repaired && e->span.overlaps(sp.span)) {
                ++r.spikes.recovered;
                matched_spikes.insert(e->id);
                break;
            }
    }
    std::set<std::pair<CompositeKey, Hour>> decoys;
    for (const auto& d : gt.decoys) decoys.insert({d.key, d.at});
    std::set<std::pair<CompositeKey, Hour>> spike_hours;
    for (const auto& sp : gt.spikes)
        for (Hour h = sp.span.begin; h < sp.span.end; h = h + 1) spike_hours.insert({sp.key, h});
    for (const auto& e : s.events) {
        if (e.cls != AnomalyClass::Spike || matched_spikes.count(e.id)) continue;
        bool planted_overlap = false;
        for (Hour h = e.span.begin; h < e.span.end; h = h + 1) planted_overlap |= spike_hours.count({e.key, h}) > 0;
        if (planted_overlap) continue;  // second event on an already matched spike
        ++r.spike_false_positives;
        bool decoy = false;
        for (Hour h = e.span.begin; h < e.span.end; h = h + 1) decoy |= decoys.count({e.key, h}) > 0;
        r.spike_decoy_hits += decoy ? 1 : 0;
    }

    std::set<CompositeKey> planted_mui;
    for (const auto& m : gt.mui) {
        planted_mui.insert(m.key);
        ++r.mui.planted;
        bool ok = false;
        for (const auto* e : events_of(m.key)) {
            if (e->cls != AnomalyClass::MUI || e->status != EventStatus::Repaired || !e->proposed_repair) continue;
            const auto& a = *e->proposed_repair;
            const auto* st = s.stream(m.key);
            const auto range = st ? st->observed_range() : std::nullopt;
            ok = a.segment && a.factor && *a.factor == repair::snap_factor(m.repair_factor) && range &&
                 a.segment->end == range->end && std::llabs(a.segment->begin - m.changepoint) <= kChangepointToleranceHours;
            if (ok) break;
        }
        if (ok)
            ++r.mui.recovered;
        else
            r.missed_mui.push_back(m.key);
    }
    for (const auto& e : s.events)
        if (e.cls == AnomalyClass::MUI && e.status == EventStatus::Repaired && !planted_mui.count(e.key))
            ++r.mui_false_accepts;

    for (const auto& d : gt.duplicate_streams) {
        ++r.duplicate_streams.planted;
        const bool removed = !s.stream(d.copy);
        bool flagged = false;
        for (const auto* e : events_of(d.copy)) flagged |= e->cls == AnomalyClass::DuplicateStream;
        r.duplicate_streams.recovered += removed && flagged && s.stream(d.original) ? 1 : 0;
    }
    for (const auto& rs : gt.resets) {
        ++r.resets.planted;
        for (const auto* e : events_of(rs.key))
            if (e->cls == AnomalyClass::Reset && e->status == EventStatus::Repaired && e->span.contains(rs.at)) {
                ++r.resets.recovered;
                break;
            }
    }
    for (const auto& q : gt.quantized) {
        ++r.quantized.planted;
        for (const auto* e : events_of(q.key))
            if (e->cls == AnomalyClass::Quantized) {
                ++r.quantized.recovered;
                break;
            }
    }
    for (const auto& e : s.events)
        if (e.cls == AnomalyClass::Quantized && e.status != EventStatus::CarriedForward) r.quantized_never_resolved = false;
    for (const auto& rep : s.reports) {
        const auto it = rep.counts.find(AnomalyClass::Quantized);
        if (it != rep.counts.end() && it->second.resolved) r.quantized_never_resolved = false;
    }
    return r;
}

}  // namespace hydroclean::eval

#pragma once

// Six progressive cleaning phases over a persistent store.

#include "anomaly_detection.hpp"
#include "config.hpp"
#include "ingestion.hpp"
#include "integrity.hpp"
#include "peak_analytics.hpp"
#include "repair.hpp"
#include "serialization.hpp"
#include "store.hpp"

namespace hydroclean::pipeline {

namespace fs = std::filesystem;

inline constexpr int kLastPhase = 5;

inline std::string_view operation_name(int phase) {
    switch (phase) {
        case 0: return "Duplicate data stream removal";
        case 1: return "Datasets unification";
        case 2: return "Duplicate records elimination";
        case 3: return "Peak analysis attempts";
        case 4: return "Statistical rule-based error filtering";
        case 5: return "Manual repair using ground truth";
    }
    return "Ingest";
}

struct Inputs {
    std::vector<ingestion::MindRecord> mind;
    std::vector<BillingRecord> bild;
};

struct State {
    int phase_completed = store::kIngestPhase;
    HourRange analysis_range;
    std::vector<DataStream> streams;   // sorted by key
    std::vector<AnomalyEvent> events;  // sorted by id
    std::map<std::uint64_t, repair::MuiProposal> proposals;
    std::map<std::uint64_t, repair::JournalEntry> audits;
    ingestion::KeyMapping mapping;
    std::vector<ingestion::JoinReport> join_reports;
    std::vector<Date> outage_days;
    std::vector<PhaseReport> reports;
    json notes = json::object();  // per-phase details keyed by phase tag
    std::uint64_t next_event_id = 1;

    const DataStream* stream(const CompositeKey& k) const {
        const auto it = std::lower_bound(streams.begin(), streams.end(), k,
                                         [](const DataStream& s, const CompositeKey& key) { return s.key < key; });
        return it != streams.end() && it->key == k ? &*it : nullptr;
    }
    DataStream* stream(const CompositeKey& k) { return const_cast<DataStream*>(std::as_const(*this).stream(k)); }

    const AnomalyEvent* event(std::uint64_t id) const {
        const auto it = std::lower_bound(events.begin(), events.end(), id,
                                         [](const AnomalyEvent& e, std::uint64_t v) { return e.id < v; });
        return it != events.end() && it->id == id ? &*it : nullptr;
    }
    AnomalyEvent* event(std::uint64_t id) { return const_cast<AnomalyEvent*>(std::as_const(*this).event(id)); }

    std::optional<repair::MuiProposal> proposal(std::uint64_t id) const {
        const auto it = proposals.find(id);
        return it == proposals.end() ? std::nullopt : std::optional(it->second);
    }
};

// ---------------------------------------------------------------------------
// State hash
// ---------------------------------------------------------------------------

class Fnv {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ b[i]) * 0x100000001b3ULL;
    }
    void i64(std::int64_t v) { bytes(&v, sizeof v); }
    void str(std::string_view s) {
        i64(static_cast<std::int64_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline json mapping_json(const ingestion::KeyMapping& m) {
    json a = json::array();
    for (const auto& [k, v] : m) a.push_back({{"amid", k}, {"mind", v.mind_key}, {"bild", v.bild_key}});
    return a;
}

inline std::string state_hash(const State& s) {
    Fnv h;
    h.i64(s.phase_completed);
    h.i64(s.analysis_range.begin.value);
    h.i64(s.analysis_range.end.value);
    for (const auto& st : s.streams) {
        h.str(st.key.str());
        h.i64(static_cast<std::int64_t>(st.category.main));
        h.str(st.category.sub_code);
        h.str(st.unit_label);
        h.i64(static_cast<std::int64_t>(st.readings.size()));
        for (const auto& r : st.readings) {
            h.i64(r.at.value);
            h.i64(r.value.litres);
        }
    }
    h.str(json(s.events).dump());
    for (const auto& [id, p] : s.proposals) h.str(std::to_string(id) + json(p).dump());
    for (const auto& [id, a] : s.audits) h.str(std::to_string(id) + json(a).dump());
    h.str(mapping_json(s.mapping).dump());
    h.str(json(s.join_reports).dump());
    for (auto d : s.outage_days) h.i64(d.time_since_epoch().count());
    h.str(json(s.reports).dump());
    h.str(s.notes.dump());
    h.i64(static_cast<std::int64_t>(s.next_event_id));
    return h.hex();
}

// ---------------------------------------------------------------------------
// Event bookkeeping
// ---------------------------------------------------------------------------

struct NewEvent {
    AnomalyEvent event;
    std::optional<repair::MuiProposal> proposal;
    std::optional<repair::JournalEntry> audit;
};

/// Orders fresh events deterministically and gives them the next ids.
inline void admit(State& s, std::vector<NewEvent> fresh) {
    std::stable_sort(fresh.begin(), fresh.end(),
                     [](const NewEvent& a, const NewEvent& b) { return event_order(a.event, b.event); });
    for (auto& n : fresh) {
        n.event.id = s.next_event_id++;
        if (n.proposal) s.proposals[n.event.id] = *n.proposal;
        if (n.audit) {
            n.audit->event_id = n.event.id;
            s.audits[n.event.id] = *n.audit;
        }
        s.events.push_back(std::move(n.event));
    }
}

inline bool is_open(EventStatus s) { return s != EventStatus::Repaired && s != EventStatus::Rejected; }

/// found = open at entry + new; resolved = closed during the phase.
inline PhaseReport ledger(int phase, std::size_t streams_in, const State& before, const State& after) {
    PhaseReport r;
    r.phase = phase;
    r.operation_name = std::string(operation_name(phase));
    r.streams_in = streams_in;
    r.streams_out = after.streams.size();
    for (auto c : kAllAnomalyClasses) r.counts[c] = {};
    for (const auto& e : after.events) {
        const auto* prev = before.event(e.id);
        if (prev && !is_open(prev->status)) continue;
        auto& c = r.counts[e.cls];
        ++c.found;
        if (!is_open(e.status)) ++c.resolved;
    }
    for (auto& [cls, c] : r.counts) c.carried_forward = c.found - c.resolved;
    return r;
}

/// Journal records for events that are new or changed between two states.
inline std::vector<json> changed_records(const State& before, const State& after) {
    std::vector<json> out;
    for (const auto& e : after.events) {
        const auto* prev = before.event(e.id);
        const auto p = after.proposals.find(e.id);
        const auto a = after.audits.find(e.id);
        const auto b = before.audits.find(e.id);
        const bool same_audit = (a == after.audits.end()) == (b == before.audits.end()) &&
                                (a == after.audits.end() || a->second == b->second);
        if (prev && *prev == e && before.proposal(e.id) == after.proposal(e.id) && same_audit) continue;
        json rec{{"event", e}};
        if (p != after.proposals.end()) rec["proposal"] = p->second;
        if (a != after.audits.end()) rec["audit"] = a->second;
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phases (pure: state in, state out)
// ---------------------------------------------------------------------------

inline HourRange day_aligned_range(const std::vector<DataStream>& streams) {
    std::optional<HourRange> r;
    for (const auto& s : streams)
        if (auto o = s.observed_range()) r = r ? HourRange{std::min(r->begin, o->begin), std::max(r->end, o->end)} : *o;
    if (!r) return {};
    return {start_of(date_of(r->begin)), start_of(date_of(r->end - 1) + std::chrono::days{1})};
}

inline std::vector<integrity::GapCensus> censuses(const State& s, unsigned workers) {
    const integrity::ExpectedGrid grid{s.analysis_range, s.outage_days};
    std::vector<integrity::GapCensus> out(s.streams.size());
    parallel_for(s.streams.size(), workers, [&](std::size_t i) { out[i] = integrity::gap_census(s.streams[i], grid); });
    return out;
}

inline void phase0(State& s, const PipelineConfig& cfg) {
    auto r = integrity::dedup_streams(std::move(s.streams), cfg.worker_count());
    s.streams = std::move(r.streams);
    std::vector<NewEvent> fresh;
    for (auto& e : r.events) fresh.push_back({std::move(e), std::nullopt, std::nullopt});
    admit(s, std::move(fresh));
}

inline void phase1(State& s, const Inputs& in, const PipelineConfig& cfg) {
    std::vector<CompositeKey> keys;
    for (const auto& st : s.streams) keys.push_back(st.key);
    auto [mapping, report] = ingestion::resolve_keys(keys, in.mind, in.bild, cfg.tier(), cfg.worker_count());
    s.join_reports = ingestion::tier_reports(keys, in.mind, in.bild, cfg.worker_count());
    auto dropped = ingestion::drop_unmatched(mapping, std::move(s.streams));
    s.streams = std::move(dropped.kept);
    ingestion::attach_metadata(s.streams, mapping, in.mind);
    s.mapping = std::move(mapping);
    json d = json::array();
    for (const auto& k : dropped.dropped) d.push_back(k);
    s.notes["1"] = {{"tier", report.tier}, {"matched", report.matched}, {"dropped", d}};
}

inline void phase2(State& s, const PipelineConfig& cfg) {
    const unsigned workers = cfg.worker_count();
    std::vector<integrity::RecordDedupResult> results(s.streams.size());
    const auto policy = cfg.policy();
    parallel_for(s.streams.size(), workers,
                 [&](std::size_t i) { results[i] = integrity::dedup_records(std::move(s.streams[i]), policy); });
    std::vector<NewEvent> fresh;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        s.streams[i] = std::move(results[i].stream);
        dropped += results[i].dropped.size();
        for (auto& e : results[i].events) fresh.push_back({std::move(e), std::nullopt, std::nullopt});
    }
    s.outage_days = integrity::detect_global_outages(s.streams, s.analysis_range, cfg.outage_threshold, workers);
    const auto cs = censuses(s, workers);
    std::size_t missing = 0;
    for (const auto& c : cs) {
        missing += c.missing_timestamps.size();
        for (auto& e : integrity::gap_events(c)) fresh.push_back({std::move(e), std::nullopt, std::nullopt});
    }
    json days = json::array();
    for (auto d : s.outage_days) days.push_back(date_json(d));
    s.notes["2"] = {{"conflict_policy", cfg.conflict_policy},
                    {"conflicting_hours_dropped", dropped},
                    {"global_outage_days", days},
                    {"missing_hours", missing}};
    admit(s, std::move(fresh));
}

/// Flags a stream would raise under the phase-4 detectors, without changing it.
inline std::vector<std::string> screen(const DataStream& st, const State& s, const PipelineConfig& cfg) {
    std::vector<std::string> flags;
    if (detect::detect_quantized(st, cfg.quantized())) flags.emplace_back("Quantized");
    if (!detect::detect_resets(st).empty()) flags.emplace_back("Reset");
    if (!detect::detect_spikes(st, cfg.spike()).empty()) flags.emplace_back("Spike");
    const auto p = detect::std_profile(st, detect::calendar_month_boundaries(s.analysis_range.begin));
    if (p.std2m && detect::classify_mui(*p.std2m, cfg.band()) != detect::MuiVerdict::Clean) flags.emplace_back("MUI");
    return flags;
}

/// Peak window of width `w`, its top-k contributors with gap compensation,
/// category shares, and detector flags on each ranked stream.
inline json peak_report(const State& s, const std::vector<integrity::GapCensus>& cs, std::int64_t w, long long k,
                        const PipelineConfig& cfg) {
    const unsigned workers = cfg.worker_count();
    const auto peak = peaks::peak_window(s.streams, s.analysis_range, w, workers);
    const auto top = peaks::top_k_contributors(s.streams, peak.window, k, &cs, workers);
    json shares = json::object();
    for (const auto& [cat, sh] : peaks::category_shares(top.ranking, s.streams))
        shares[std::string(to_string(cat))] = {{"count", sh.count}, {"volume_share", sh.volume_share}};
    json suspects = json::array();
    for (std::size_t rank = 0; rank < top.ranking.entries.size(); ++rank) {
        const auto* st = s.stream(top.ranking.entries[rank].key);
        const auto flags = screen(*st, s, cfg);
        if (!flags.empty()) suspects.push_back({{"rank", rank + 1}, {"key", st->key}, {"flags", flags}});
    }
    return {{"peak", peak},
            {"top_k", top.ranking},
            {"excluded", top.excluded},
            {"category_shares", shares},
            {"suspects", suspects}};
}

inline void phase3(State& s, const PipelineConfig& cfg) {
    json out = json::object();
    if (s.streams.empty() || s.analysis_range.hours() < cfg.long_window_hours) {
        out["skipped"] = "no streams or range shorter than the long window";
        s.notes["3"] = out;
        return;
    }
    const auto cs = censuses(s, cfg.worker_count());
    out["peaks"] = json::array();
    for (auto w : {cfg.short_window_hours, cfg.long_window_hours})
        out["peaks"].push_back(peak_report(s, cs, w, cfg.top_k, cfg));
    s.notes["3"] = out;
}

inline std::map<CompositeKey, std::vector<BillingRecord>> billing_by_key(const Inputs& in) {
    std::map<CompositeKey, std::vector<BillingRecord>> out;
    for (const auto& b : in.bild) out[b.key].push_back(b);
    return out;
}

struct SweepResult {
    DataStream stream;
    std::vector<NewEvent> events;
    std::size_t spike_passes = 0;
};

/// Detect-and-repair sweep for one stream: quantized streams are only
/// flagged; resets and spikes are repaired; MUI suspects are queued.
inline SweepResult sweep_stream(DataStream st, const std::vector<Hour>& months,
                                const std::vector<BillingRecord>* billing, const PipelineConfig& cfg) {
    SweepResult out;
    auto close = [](AnomalyEvent& e, EventStatus to) { e.transition(to); };

    if (auto q = detect::detect_quantized(st, cfg.quantized())) {
        close(*q, EventStatus::CarriedForward);
        out.events.push_back({std::move(*q), std::nullopt, std::nullopt});
        out.stream = std::move(st);
        return out;
    }

    auto repair_all = [&](std::vector<AnomalyEvent> found) {
        std::vector<HourRange> spans;
        for (const auto& e : found) spans.push_back(e.span);
        for (std::size_t k = 0; k < found.size(); ++k) {
            std::vector<HourRange> others;
            for (std::size_t j = 0; j < spans.size(); ++j)
                if (j != k) others.push_back(spans[j]);
            auto rep = repair::repair_spike(std::move(st), found[k], cfg.spike_neighborhood_hours, others);
            st = std::move(rep.stream);
            close(found[k], EventStatus::Repaired);
            out.events.push_back({std::move(found[k]), std::nullopt, std::move(rep.audit)});
        }
    };
    repair_all(detect::detect_resets(st));
    for (std::int64_t pass = 0; pass < cfg.spike_passes; ++pass) {
        auto found = detect::detect_spikes(st, cfg.spike());
        if (found.empty()) break;
        ++out.spike_passes;
        repair_all(std::move(found));
    }

    const auto range = st.observed_range();
    if (range) {
        const auto profile = detect::std_profile(st, months);
        const bool suspect = !profile.std2m || detect::classify_mui(*profile.std2m, cfg.band()) != detect::MuiVerdict::Clean;
        if (suspect) {
            AnomalyEvent e;
            e.key = st.key;
            e.cls = AnomalyClass::MUI;
            e.span = *range;
            e.score = profile.std2m.value_or(0.0);
            std::optional<repair::MuiProposal> proposal;
            if (billing) {
                try {
                    proposal = repair::propose_mui_repair(st, *billing);
                    e.proposed_repair = repair::proposal_action(*proposal, *range);
                    e.span = *e.proposed_repair->segment;
                } catch (const Error& err) {
                    if (err.code() != Errc::NoConfidentProposal && err.code() != Errc::NoGroundTruth) throw;
                }
            }
            close(e, EventStatus::Queued);
            out.events.push_back({std::move(e), std::move(proposal), std::nullopt});
        }
    }
    out.stream = std::move(st);
    return out;
}

inline void phase4(State& s, const Inputs& in, const PipelineConfig& cfg) {
    const auto billing = billing_by_key(in);
    const auto months = detect::calendar_month_boundaries(s.analysis_range.begin);
    std::vector<SweepResult> results(s.streams.size());
    parallel_for(s.streams.size(), cfg.worker_count(), [&](std::size_t i) {
        const std::vector<BillingRecord>* b = nullptr;
        if (const auto m = s.mapping.find(s.streams[i].key); m != s.mapping.end())
            if (const auto it = billing.find(m->second.bild_key); it != billing.end()) b = &it->second;
        results[i] = sweep_stream(std::move(s.streams[i]), months, b, cfg);
    });
    std::vector<NewEvent> fresh;
    std::size_t multi_pass = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        s.streams[i] = std::move(results[i].stream);
        multi_pass += results[i].spike_passes > 1 ? 1 : 0;
        for (auto& e : results[i].events) fresh.push_back(std::move(e));
    }
    s.notes["4"] = {{"streams_needing_extra_spike_pass", multi_pass}};
    admit(s, std::move(fresh));
}

inline void phase5(State& s, const std::vector<repair::Verdict>& verdicts) {
    json skipped = json::array();
    std::size_t applied = 0;
    for (std::size_t k = 0; k < verdicts.size(); ++k) {
        const auto& v = verdicts[k];
        auto* e = s.event(v.event_id);
        auto* st = e ? s.stream(e->key) : nullptr;
        try {
            if (!e || !st) throw Error(Errc::UnknownEvent, "no event " + std::to_string(v.event_id));
            const auto out = repair::apply_verdict(*st, *e, v, s.proposal(e->id));
            if (out.audit) s.audits[e->id] = *out.audit;
            ++applied;
        } catch (const Error& err) {
            skipped.push_back({{"index", k}, {"event_id", v.event_id}, {"code", std::string(to_string(err.code()))}, {"message", err.what()}});
        }
    }
    s.notes["5"] = {{"verdicts", verdicts.size()}, {"applied", applied}, {"skipped", skipped}};
}

/// Runs one phase on an in-memory state. `prev` must be the state after phase − 1.
inline State advance(const State& prev, int phase, const Inputs& in, const std::vector<repair::Verdict>& verdicts,
                     const PipelineConfig& cfg) {
    if (phase != prev.phase_completed + 1)
        throw Error(Errc::PhaseOrderViolation, "phase " + std::to_string(phase) + " cannot follow phase " +
                                                   std::to_string(prev.phase_completed));
    State s = prev;
    switch (phase) {
        case 0: phase0(s, cfg); break;
        case 1: phase1(s, in, cfg); break;
        case 2: phase2(s, cfg); break;
        case 3: phase3(s, cfg); break;
        case 4: phase4(s, in, cfg); break;
        case 5: phase5(s, verdicts); break;
        default: throw Error(Errc::PhaseOrderViolation, "no phase " + std::to_string(phase));
    }
    s.phase_completed = phase;
    s.reports.push_back(ledger(phase, prev.streams.size(), prev, s));
    return s;
}

// ---------------------------------------------------------------------------
// Persistent store
// ---------------------------------------------------------------------------

inline json state_json(const State& s, std::uint64_t events_offset, const std::string& hash) {
    json days = json::array();
    for (auto d : s.outage_days) days.push_back(date_json(d));
    return {{"phase_completed", s.phase_completed},
            {"analysis_range", s.analysis_range},
            {"mapping", mapping_json(s.mapping)},
            {"join_reports", s.join_reports},
            {"outage_days", days},
            {"reports", s.reports},
            {"notes", s.notes},
            {"next_event_id", s.next_event_id},
            {"events_offset", events_offset},
            {"state_hash", hash}};
}

class Store {
public:
    /// Creates a store from parsed inputs. Existing stores are not overwritten.
    static Store create(const fs::path& dir, std::vector<DataStream> streams, const fs::path& mind_csv,
                        const fs::path& bild_csv, json ingest_notes = json::object(), unsigned workers = 1) {
        store::Layout l{dir};
        if (fs::exists(l.manifest())) throw Error(Errc::InvalidValue, "store already exists at " + dir.string());
        fs::create_directories(dir);
        for (const auto& p : {l.events(), l.verdicts()}) std::ofstream(p, std::ios::binary | std::ios::trunc);
        fs::copy_file(mind_csv, l.mind(), fs::copy_options::overwrite_existing);
        fs::copy_file(bild_csv, l.bild(), fs::copy_options::overwrite_existing);
        std::sort(streams.begin(), streams.end(), [](const DataStream& a, const DataStream& b) { return a.key < b.key; });
        State s;
        s.analysis_range = day_aligned_range(streams);
        s.streams = std::move(streams);
        s.notes["ingest"] = std::move(ingest_notes);
        Store st(dir, workers);
        st.commit(s, {});
        return st;
    }

    /// Opens an existing store, discarding anything written after the last commit.
    static Store open(const fs::path& dir, unsigned workers = 1) {
        Store st(dir, workers);
        st.recover();
        return st;
    }

    const fs::path& dir() const { return layout_.dir; }
    int phase_completed() const { return manifest_.phase_completed; }
    const std::string& committed_hash() const { return manifest_.state_hash; }

    Inputs inputs() const {
        auto m = ingestion::parse_dataset<ingestion::MindRecord>(layout_.mind());
        auto b = ingestion::parse_dataset<BillingRecord>(layout_.bild());
        return {std::move(m.records), std::move(b.records)};
    }

    /// State as committed after `phase` (kIngestPhase for the ingested data).
    State load(int phase) const {
        if (phase > manifest_.phase_completed || phase < store::kIngestPhase)
            throw Error(Errc::PhaseOrderViolation, "phase " + std::to_string(phase) + " has not been committed");
        json j;
        try {
            j = json::parse(store::slurp(layout_.state(phase)));
        } catch (const json::exception& e) {
            throw Error(Errc::StoreCorrupt, std::string("state file: ") + e.what());
        }
        State s;
        s.phase_completed = j.at("phase_completed").get<int>();
        s.analysis_range = j.at("analysis_range").get<HourRange>();
        for (const auto& m : j.at("mapping"))
            s.mapping[m.at("amid").get<CompositeKey>()] = {m.at("mind").get<CompositeKey>(), m.at("bild").get<CompositeKey>()};
        s.join_reports = j.at("join_reports").get<std::vector<ingestion::JoinReport>>();
        for (const auto& d : j.at("outage_days")) s.outage_days.push_back(date_from_json(d));
        s.reports = j.at("reports").get<std::vector<PhaseReport>>();
        s.notes = j.at("notes");
        s.next_event_id = j.at("next_event_id").get<std::uint64_t>();
        s.streams = store::decode_snapshot(store::slurp(layout_.snapshot(phase)), workers_);

        const auto offset = j.at("events_offset").get<std::uint64_t>();
        const auto journal = store::read_framed(layout_.events(), offset);
        if (journal.valid_end != offset) throw Error(Errc::StoreCorrupt, "event journal shorter than committed offset");
        std::map<std::uint64_t, AnomalyEvent> events;
        for (const auto& rec : journal.records) {
            auto e = rec.at("event").get<AnomalyEvent>();
            if (rec.contains("proposal")) s.proposals[e.id] = rec["proposal"].get<repair::MuiProposal>();
            if (rec.contains("audit")) s.audits[e.id] = rec["audit"].get<repair::JournalEntry>();
            events[e.id] = std::move(e);
        }
        for (auto& [id, e] : events) s.events.push_back(std::move(e));
        if (state_hash(s) != j.at("state_hash").get<std::string>())
            throw Error(Errc::StoreCorrupt, "state hash mismatch for phase " + store::phase_tag(phase));
        return s;
    }

    State current() const { return load(manifest_.phase_completed); }

    /// Persists `s` as the state after s.phase_completed. `prev` is the state the
    /// phase started from; events that changed are appended to the journal.
    void commit(const State& s, const std::optional<State>& prev) {
        const std::uint64_t base = prev ? committed_offset(prev->phase_completed) : 0;
        if (prev && manifest_.phase_completed > prev->phase_completed) rollback_to(prev->phase_completed);
        store::truncate_to(layout_.events(), base);
        store::write_atomic(layout_.snapshot(s.phase_completed), store::encode_snapshot(s.streams, workers_));
        store::crash_point("snapshot");
        const auto records = changed_records(prev ? *prev : State{}, s);
        const auto offset = records.empty() ? base : store::append_framed(layout_.events(), records, "event");
        const auto hash = state_hash(s);
        store::write_atomic(layout_.state(s.phase_completed), state_json(s, offset, hash).dump(1) + "\n");
        store::crash_point("state");
        manifest_ = {s.phase_completed, offset, hash};
        store::write_manifest(layout_, manifest_);
        store::crash_point("committed");
    }

    void append_verdict(const repair::Verdict& v) {
        store::append_framed(layout_.verdicts(), {json(v)}, "verdict");
    }

    std::vector<repair::Verdict> verdicts() const {
        std::vector<repair::Verdict> out;
        for (const auto& r : store::read_framed(layout_.verdicts()).records) {
            try {
                out.push_back(r.get<repair::Verdict>());
            } catch (const std::exception&) {
                // a framed but invalid verdict is kept in the file and ignored here
            }
        }
        return out;
    }

private:
    Store(fs::path dir, unsigned workers) : layout_{std::move(dir)}, workers_(workers) {}

    std::uint64_t committed_offset(int phase) const {
        const auto j = json::parse(store::slurp(layout_.state(phase)));
        return j.at("events_offset").get<std::uint64_t>();
    }

    // A rerun first moves the commit point back, so a crash mid-rerun leaves
    // the earlier phase intact.
    void rollback_to(int phase) {
        const auto j = json::parse(store::slurp(layout_.state(phase)));
        manifest_ = {phase, j.at("events_offset").get<std::uint64_t>(), j.at("state_hash").get<std::string>()};
        store::write_manifest(layout_, manifest_);
    }

    void recover() {
        manifest_ = store::read_manifest(layout_);
        store::truncate_to(layout_.events(), manifest_.events_offset);
        const auto v = store::read_framed(layout_.verdicts());
        store::truncate_to(layout_.verdicts(), v.valid_end);
        if (fs::exists(layout_.verdicts()) && fs::file_size(layout_.verdicts()) != v.valid_end)
            throw Error(Errc::StoreCorrupt, "verdict journal could not be repaired");
    }

    store::Layout layout_;
    unsigned workers_ = 1;
    store::Manifest manifest_;
};

/// Runs `phase` against the store. A rerun of the last completed phase starts
/// again from the previous snapshot and replaces its results.
inline PhaseReport run_phase(Store& st, int phase, const PipelineConfig& cfg) {
    const int done = st.phase_completed();
    if (phase < 0 || phase > kLastPhase || phase > done + 1 || phase < done)
        throw Error(Errc::PhaseOrderViolation, "phase " + std::to_string(phase) + " requested; phase " +
                                                   std::to_string(done) + " is the last completed");
    const State prev = st.load(phase - 1);
    const auto verdicts = phase == 5 ? st.verdicts() : std::vector<repair::Verdict>{};
    const Inputs in = (phase == 1 || phase == 4) ? st.inputs() : Inputs{};
    State next = advance(prev, phase, in, verdicts, cfg);
    st.commit(next, prev);
    return next.reports.back();
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

struct IngestSummary {
    std::size_t amid_records = 0;
    std::size_t amid_rejected = 0;
    std::size_t daily_rows_excluded = 0;
    std::size_t streams = 0;
    std::size_t mind_records = 0;
    std::size_t mind_rejected = 0;
    std::size_t bild_records = 0;
    std::size_t bild_rejected = 0;

    json to_json() const {
        return {{"amid_records", amid_records},   {"amid_rejected", amid_rejected},
                {"daily_rows_excluded", daily_rows_excluded}, {"streams", streams},
                {"mind_records", mind_records},   {"mind_rejected", mind_rejected},
                {"bild_records", bild_records},   {"bild_rejected", bild_rejected}};
    }
};

/// Parses the three CSV files and creates a store holding the hourly streams.
inline std::pair<Store, IngestSummary> ingest(const fs::path& amid, const fs::path& mind, const fs::path& bild,
                                              const fs::path& dir, unsigned workers = 1) {
    IngestSummary sum;
    auto rows = ingestion::parse_dataset<MeterReading>(amid);
    sum.amid_records = rows.records.size();
    sum.amid_rejected = rows.rejected.size();
    const auto m = ingestion::parse_dataset<ingestion::MindRecord>(mind);
    const auto b = ingestion::parse_dataset<BillingRecord>(bild);
    sum.mind_records = m.records.size();
    sum.mind_rejected = m.rejected.size();
    sum.bild_records = b.records.size();
    sum.bild_rejected = b.rejected.size();
    auto assembled = ingestion::assemble_streams(rows.records);
    rows.records.clear();
    rows.records.shrink_to_fit();
    sum.daily_rows_excluded = assembled.daily_rows_excluded;
    sum.streams = assembled.streams.size();
    auto st = Store::create(dir, std::move(assembled.streams), mind, bild, sum.to_json(), workers);
    return {std::move(st), sum};
}

}  // namespace hydroclean::pipeline

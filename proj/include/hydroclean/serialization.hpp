#pragma once

// JSON forms of the domain types. Functions live next to each type so
// nlohmann's ADL lookup finds them.

#include <json.hpp>

#include "core_model.hpp"
#include "ingestion.hpp"
#include "integrity.hpp"
#include "peak_analytics.hpp"
#include "repair.hpp"

namespace hydroclean {

using json = nlohmann::json;

namespace detail {

template <typename T>
T parse_or_throw(const std::optional<T>& v, std::string_view what, const json& j) {
    if (!v) throw Error(Errc::InvalidValue, "bad " + std::string(what) + ": " + j.dump());
    return *v;
}

}  // namespace detail

inline void to_json(json& j, const Hour& h) { j = format_hour(h); }
inline void from_json(const json& j, Hour& h) {
    if (!j.is_string()) throw Error(Errc::InvalidValue, "timestamp must be a string");
    h = detail::parse_or_throw(parse_timestamp(j.get<std::string>()), "timestamp", j);
}

inline json date_json(Date d) { return format_date(d); }
inline Date date_from_json(const json& j) {
    if (!j.is_string()) throw Error(Errc::InvalidValue, "date must be a string");
    return detail::parse_or_throw(parse_date(j.get<std::string>()), "date", j);
}

inline void to_json(json& j, const HourRange& r) { j = json{{"start", r.begin}, {"end", r.end}}; }
inline void from_json(const json& j, HourRange& r) {
    r.begin = j.at("start").get<Hour>();
    r.end = j.at("end").get<Hour>();
}

inline void to_json(json& j, const CompositeKey& k) { j = k.str(); }
inline void from_json(const json& j, CompositeKey& k) {
    if (!j.is_string()) throw Error(Errc::InvalidKey, "key must be a string");
    k = CompositeKey::parse(j.get<std::string>());
}

// Consumption travels as integer litres.
inline void to_json(json& j, const Consumption& c) { j = c.litres; }
inline void from_json(const json& j, Consumption& c) { c.litres = j.get<std::int64_t>(); }

inline void to_json(json& j, const Reading& r) { j = json::array({r.at, r.value.litres}); }
inline void from_json(const json& j, Reading& r) {
    r.at = j.at(0).get<Hour>();
    r.value.litres = j.at(1).get<std::int64_t>();
}

inline void to_json(json& j, const AnomalyClass& c) { j = to_string(c); }
inline void from_json(const json& j, AnomalyClass& c) {
    c = detail::parse_or_throw(parse_anomaly_class(j.get<std::string>()), "anomaly class", j);
}

inline void to_json(json& j, const EventStatus& s) { j = to_string(s); }
inline void from_json(const json& j, EventStatus& s) {
    s = detail::parse_or_throw(parse_event_status(j.get<std::string>()), "event status", j);
}

inline void to_json(json& j, const RepairKind& k) { j = to_string(k); }
inline void from_json(const json& j, RepairKind& k) {
    const auto s = j.get<std::string>();
    for (auto v : {RepairKind::ReplaceWithNeighborhoodMean, RepairKind::ScaleSegment, RepairKind::DropRecord,
                   RepairKind::None})
        if (to_string(v) == s) {
            k = v;
            return;
        }
    throw Error(Errc::InvalidValue, "bad repair kind: " + s);
}

inline void to_json(json& j, const RepairAction& a) {
    j = json{{"kind", a.kind}};
    if (a.segment) j["segment"] = *a.segment;
    if (a.factor) j["factor"] = *a.factor;
}
inline void from_json(const json& j, RepairAction& a) {
    a.kind = j.at("kind").get<RepairKind>();
    a.segment = j.contains("segment") ? std::optional<HourRange>(j["segment"].get<HourRange>()) : std::nullopt;
    a.factor = j.contains("factor") ? std::optional<double>(j["factor"].get<double>()) : std::nullopt;
    a.validate();
}

inline void to_json(json& j, const AnomalyEvent& e) {
    j = json{{"id", e.id}, {"key", e.key}, {"class", e.cls}, {"span", e.span}, {"score", e.score}, {"status", e.status}};
    if (e.proposed_repair) j["proposed_repair"] = *e.proposed_repair;
}
inline void from_json(const json& j, AnomalyEvent& e) {
    e.id = j.at("id").get<std::uint64_t>();
    e.key = j.at("key").get<CompositeKey>();
    e.cls = j.at("class").get<AnomalyClass>();
    e.span = j.at("span").get<HourRange>();
    e.score = j.at("score").get<double>();
    e.status = j.at("status").get<EventStatus>();
    e.proposed_repair =
        j.contains("proposed_repair") ? std::optional<RepairAction>(j["proposed_repair"].get<RepairAction>()) : std::nullopt;
}

inline void to_json(json& j, const MainCategory& c) { j = to_string(c); }
inline void from_json(const json& j, MainCategory& c) {
    c = detail::parse_or_throw(parse_category(j.get<std::string>()), "category", j);
}

inline void to_json(json& j, const ClassCounts& c) {
    j = json{{"found", c.found}, {"resolved", c.resolved}, {"carried_forward", c.carried_forward}};
}
inline void from_json(const json& j, ClassCounts& c) {
    c.found = j.at("found").get<std::size_t>();
    c.resolved = j.at("resolved").get<std::size_t>();
    c.carried_forward = j.at("carried_forward").get<std::size_t>();
}

inline void to_json(json& j, const PhaseReport& r) {
    json counts = json::object();
    for (const auto& [cls, c] : r.counts) counts[std::string(to_string(cls))] = c;
    j = json{{"phase", r.phase},
             {"operation_name", r.operation_name},
             {"streams_in", r.streams_in},
             {"streams_out", r.streams_out},
             {"counts", counts}};
}
inline void from_json(const json& j, PhaseReport& r) {
    r.phase = j.at("phase").get<int>();
    r.operation_name = j.at("operation_name").get<std::string>();
    r.streams_in = j.at("streams_in").get<std::size_t>();
    r.streams_out = j.at("streams_out").get<std::size_t>();
    r.counts.clear();
    for (const auto& [name, c] : j.at("counts").items())
        r.counts[detail::parse_or_throw(parse_anomaly_class(name), "anomaly class", j)] = c.get<ClassCounts>();
}

inline void to_json(json& j, const RankEntry& e) {
    j = json{{"key", e.key}, {"load_litres", e.load.litres}, {"load_m3", e.load.str_m3()}};
}
inline void from_json(const json& j, RankEntry& e) {
    e.key = j.at("key").get<CompositeKey>();
    e.load.litres = j.at("load_litres").get<std::int64_t>();
}

inline void to_json(json& j, const Ranking& r) { j = json{{"window", r.window}, {"entries", r.entries}}; }
inline void from_json(const json& j, Ranking& r) {
    r.window = j.at("window").get<HourRange>();
    r.entries = j.at("entries").get<std::vector<RankEntry>>();
}

namespace ingestion {

inline void to_json(json& j, const JoinTier& t) { j = to_string(t); }
inline void from_json(const json& j, JoinTier& t) {
    t = hydroclean::detail::parse_or_throw(parse_join_tier(j.get<std::string>()), "join tier", j);
}

inline void to_json(json& j, const JoinReport& r) {
    j = json{{"tier", r.tier}, {"matched", r.matched}, {"unmatched", r.unmatched}, {"unmatched_keys", r.unmatched_keys}};
}
inline void from_json(const json& j, JoinReport& r) {
    r.tier = j.at("tier").get<JoinTier>();
    r.matched = j.at("matched").get<std::size_t>();
    r.unmatched = j.at("unmatched").get<std::size_t>();
    r.unmatched_keys = j.at("unmatched_keys").get<std::vector<CompositeKey>>();
}

inline void to_json(json& j, const ResolvedIdentity& r) { j = json{{"mind", r.mind_key}, {"bild", r.bild_key}}; }
inline void from_json(const json& j, ResolvedIdentity& r) {
    r.mind_key = j.at("mind").get<CompositeKey>();
    r.bild_key = j.at("bild").get<CompositeKey>();
}

}  // namespace ingestion

namespace integrity {

/// Census summary: counts plus missing runs, not every missing hour.
inline json census_summary(const GapCensus& c) {
    json runs = json::array();
    for (const auto& e : gap_events(c)) runs.push_back(e.span);
    return json{{"key", c.key},
                {"expected_count", c.expected_count},
                {"present_count", c.present_count},
                {"missing_count", c.missing_timestamps.size()},
                {"missing_runs", runs}};
}

}  // namespace integrity

namespace peaks {

inline void to_json(json& j, const PeakResult& r) {
    j = json{{"window", r.window},
             {"window_hours", r.window_hours},
             {"total_volume_litres", r.total_volume.litres},
             {"total_volume_m3", r.total_volume.str_m3()},
             {"peak_load_m3_per_h", peak_load(r)}};
}
inline void from_json(const json& j, PeakResult& r) {
    r.window = j.at("window").get<HourRange>();
    r.window_hours = j.at("window_hours").get<std::int64_t>();
    r.total_volume.litres = j.at("total_volume_litres").get<std::int64_t>();
}

}  // namespace peaks

namespace repair {

inline void to_json(json& j, const Segment& s) { j = to_string(s); }
inline void from_json(const json& j, Segment& s) {
    s = hydroclean::detail::parse_or_throw(parse_segment(j.get<std::string>()), "segment", j);
}

inline void to_json(json& j, const Decision& d) { j = to_string(d); }
inline void from_json(const json& j, Decision& d) {
    d = hydroclean::detail::parse_or_throw(parse_decision(j.get<std::string>()), "decision", j);
}

inline void to_json(json& j, const MuiProposal& p) {
    j = json{{"key", p.key},
             {"changepoint", p.changepoint},
             {"factor", p.factor},
             {"residual_before_m3", p.residual_before},
             {"residual_after_m3", p.residual_after},
             {"segment", p.segment}};
}
inline void from_json(const json& j, MuiProposal& p) {
    p.key = j.at("key").get<CompositeKey>();
    p.changepoint = j.at("changepoint").get<Hour>();
    p.factor = j.at("factor").get<double>();
    p.residual_before = j.at("residual_before_m3").get<double>();
    p.residual_after = j.at("residual_after_m3").get<double>();
    p.segment = j.at("segment").get<Segment>();
}

inline void to_json(json& j, const Verdict& v) {
    j = json{{"key", v.key},
             {"event_id", v.event_id},
             {"decision", v.decision},
             {"reviewer", v.reviewer},
             {"decided_at", v.decided_at}};
    if (v.edited_changepoint) j["edited_changepoint"] = *v.edited_changepoint;
    if (v.edited_factor) j["edited_factor"] = *v.edited_factor;
}
inline void from_json(const json& j, Verdict& v) {
    v.key = j.at("key").get<CompositeKey>();
    v.event_id = j.at("event_id").get<std::uint64_t>();
    v.decision = j.at("decision").get<Decision>();
    v.reviewer = j.value("reviewer", std::string{});
    v.decided_at = j.value("decided_at", std::int64_t{0});
    v.edited_changepoint =
        j.contains("edited_changepoint") ? std::optional<Hour>(j["edited_changepoint"].get<Hour>()) : std::nullopt;
    v.edited_factor = j.contains("edited_factor") ? std::optional<double>(j["edited_factor"].get<double>()) : std::nullopt;
    v.validate();
}

inline void to_json(json& j, const JournalEntry& e) {
    j = json{{"event_id", e.event_id}, {"key", e.key}, {"range", e.range}, {"originals", e.originals}};
}
inline void from_json(const json& j, JournalEntry& e) {
    e.event_id = j.at("event_id").get<std::uint64_t>();
    e.key = j.at("key").get<CompositeKey>();
    e.range = j.at("range").get<HourRange>();
    e.originals = j.at("originals").get<std::vector<Reading>>();
}

}  // namespace repair

}  // namespace hydroclean

#pragma once

// Parsing of the AMID / MIND / BILD CSV exports and reconstruction of the
// composite key shared across them.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "core_model.hpp"
#include "parallel.hpp"

namespace hydroclean::ingestion {

enum class Schema { AMID, MIND, BILD };

inline constexpr std::string_view kAmidHeader = "account_id,meter_id,device_id,interval_end,consumption_m3,flag";
inline constexpr std::string_view kMindHeader =
    "account_id,meter_id,device_id,unit,category,sub_code,latitude,longitude,postal_code";
inline constexpr std::string_view kBildHeader =
    "account_id,meter_id,device_id,unit,period_start,period_end,start_count,end_count,consumption_m3";

inline std::string_view header_for(Schema s) {
    switch (s) {
        case Schema::AMID: return kAmidHeader;
        case Schema::MIND: return kMindHeader;
        case Schema::BILD: return kBildHeader;
    }
    return kAmidHeader;
}

struct MindRecord {
    CompositeKey key;
    std::string unit;
    ConsumerCategory category;
    std::string latitude;
    std::string longitude;
    std::string postal_code;

    bool operator==(const MindRecord&) const = default;
};

struct RejectedLine {
    std::size_t line_number = 0;  // 1-based, header is line 1
    std::string text;
    std::string reason;
};

template <typename Record>
struct ParseResult {
    std::vector<Record> records;
    std::vector<RejectedLine> rejected;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    const std::string n = normalize_field(s);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(n.data(), n.data() + n.size(), v);
    if (n.empty() || ec != std::errc{} || p != n.data() + n.size()) return std::nullopt;
    return v;
}

// Throws std::invalid_argument with a human-readable reason on a bad field.
inline MeterReading parse_amid(const std::vector<std::string_view>& f) {
    CompositeKey key(f[0], f[1], f[2]);
    const auto ts = parse_timestamp(trim(f[3]));
    if (!ts) throw std::invalid_argument("unparseable or non-hourly interval_end");
    const auto c = Consumption::parse_m3(normalize_field(f[4]));
    if (!c) throw std::invalid_argument("unparseable consumption_m3");
    const std::string flag = normalize_field(f[5]);
    Resolution res;
    if (flag == "h")
        res = Resolution::Hourly;
    else if (flag == "d")
        res = Resolution::Daily;
    else
        throw std::invalid_argument("flag must be H or D");
    return MeterReading{std::move(key), *ts, *c, res};
}

inline MindRecord parse_mind(const std::vector<std::string_view>& f) {
    CompositeKey key(f[0], f[1], f[2]);
    const auto cat = parse_category(f[4]);
    if (!cat) throw std::invalid_argument("unknown category");
    return MindRecord{std::move(key),
                      normalize_field(f[3]),
                      ConsumerCategory{*cat, std::string(f[5])},
                      std::string(f[6]),
                      std::string(f[7]),
                      std::string(f[8])};
}

inline BillingRecord parse_bild(const std::vector<std::string_view>& f) {
    CompositeKey key(f[0], f[1], f[2]);
    const auto start = parse_date(trim(f[4]));
    const auto end = parse_date(trim(f[5]));
    if (!start || !end) throw std::invalid_argument("unparseable billing period date");
    const auto sc = parse_int(f[6]);
    const auto ec = parse_int(f[7]);
    if (!sc || !ec) throw std::invalid_argument("unparseable register count");
    const auto c = Consumption::parse_m3(normalize_field(f[8]));
    if (!c) throw std::invalid_argument("unparseable consumption_m3");
    BillingRecord rec{std::move(key), normalize_field(f[3]), *start, *end, *sc, *ec, *c};
    try {
        rec.validate();
    } catch (const Error& e) {
        throw std::invalid_argument(e.what());
    }
    return rec;
}

template <typename Record>
Record parse_fields(const std::vector<std::string_view>& f) {
    if constexpr (std::is_same_v<Record, MeterReading>)
        return parse_amid(f);
    else if constexpr (std::is_same_v<Record, MindRecord>)
        return parse_mind(f);
    else
        return parse_bild(f);
}

template <typename Record>
constexpr Schema schema_of() {
    if constexpr (std::is_same_v<Record, MeterReading>)
        return Schema::AMID;
    else if constexpr (std::is_same_v<Record, MindRecord>)
        return Schema::MIND;
    else
        return Schema::BILD;
}

}  // namespace detail

/// Parses CSV text whose first line must equal the schema header exactly.
/// Malformed lines come back with their line numbers; none are dropped.
template <typename Record>
ParseResult<Record> parse_text(std::string_view text) {
    constexpr Schema schema = detail::schema_of<Record>();
    const std::string_view expected = header_for(schema);
    const std::size_t arity = detail::split_commas(expected).size();

    ParseResult<Record> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = detail::strip_cr(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (!header_seen) {
            if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.remove_prefix(3);  // BOM
            if (line != expected)
                throw Error(Errc::HeaderMismatch, "expected header '" + std::string(expected) + "', got '" +
                                                      std::string(line) + "'");
            header_seen = true;
            continue;
        }
        if (line.empty() && pos >= text.size()) break;  // trailing newline
        const auto fields = detail::split_commas(line);
        if (fields.size() != arity) {
            out.rejected.push_back({line_no, std::string(line),
                                    "expected " + std::to_string(arity) + " fields, got " +
                                        std::to_string(fields.size())});
            continue;
        }
        try {
            out.records.push_back(detail::parse_fields<Record>(fields));
        } catch (const std::exception& e) {
            out.rejected.push_back({line_no, std::string(line), e.what()});
        }
    }
    if (!header_seen) throw Error(Errc::HeaderMismatch, "file is empty; header required");
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename Record>
ParseResult<Record> parse_dataset(const std::filesystem::path& path) {
    return parse_text<Record>(read_file(path));
}

using AmidParse = ParseResult<MeterReading>;
using MindParse = ParseResult<MindRecord>;
using BildParse = ParseResult<BillingRecord>;

// ---------------------------------------------------------------------------
// Composite key resolution
// ---------------------------------------------------------------------------

enum class JoinTier { AccountOnly, ThreeFieldExact, ThreeFieldPartial, ManualPartial };

inline constexpr JoinTier kAllTiers[] = {JoinTier::AccountOnly, JoinTier::ThreeFieldExact,
                                         JoinTier::ThreeFieldPartial, JoinTier::ManualPartial};

inline std::string_view to_string(JoinTier t) {
    switch (t) {
        case JoinTier::AccountOnly: return "account-only";
        case JoinTier::ThreeFieldExact: return "three-field-exact";
        case JoinTier::ThreeFieldPartial: return "three-field-partial";
        case JoinTier::ManualPartial: return "manual-partial";
    }
    return "manual-partial";
}

inline std::optional<JoinTier> parse_join_tier(std::string_view s) {
    for (auto t : kAllTiers)
        if (to_string(t) == s) return t;
    return std::nullopt;
}

inline constexpr std::size_t kMinPartialOverlap = 4;

/// Exact equality, or one string a prefix of the other with the shorter one at least 4 chars.
inline bool prefix_match(std::string_view a, std::string_view b) {
    if (a == b) return true;
    const auto& shorter = a.size() <= b.size() ? a : b;
    const auto& longer = a.size() <= b.size() ? b : a;
    return shorter.size() >= kMinPartialOverlap && longer.substr(0, shorter.size()) == shorter;
}

/// prefix_match, widened to substring containment anywhere.
inline bool substring_match(std::string_view a, std::string_view b) {
    if (a == b) return true;
    const auto& shorter = a.size() <= b.size() ? a : b;
    const auto& longer = a.size() <= b.size() ? b : a;
    return shorter.size() >= kMinPartialOverlap && longer.find(shorter) != std::string_view::npos;
}

enum class FieldRule { Exact, Prefix, Substring };

inline bool field_match(FieldRule rule, std::string_view a, std::string_view b) {
    switch (rule) {
        case FieldRule::Exact: return a == b;
        case FieldRule::Prefix: return prefix_match(a, b);
        case FieldRule::Substring: return substring_match(a, b);
    }
    return false;
}

inline bool key_match(FieldRule rule, const CompositeKey& a, const CompositeKey& b) {
    return field_match(rule, a.account_id(), b.account_id()) && field_match(rule, a.meter_id(), b.meter_id()) &&
           field_match(rule, a.device_id(), b.device_id());
}

/// Rules tried in order at a tier; a key keeps the first unique match.
inline std::vector<FieldRule> cascade_for(JoinTier tier) {
    switch (tier) {
        case JoinTier::AccountOnly: return {};
        case JoinTier::ThreeFieldExact: return {FieldRule::Exact};
        case JoinTier::ThreeFieldPartial: return {FieldRule::Exact, FieldRule::Prefix};
        case JoinTier::ManualPartial: return {FieldRule::Exact, FieldRule::Prefix, FieldRule::Substring};
    }
    return {};
}

struct ResolvedIdentity {
    CompositeKey mind_key;
    CompositeKey bild_key;

    bool operator==(const ResolvedIdentity&) const = default;
};

using KeyMapping = std::map<CompositeKey, ResolvedIdentity>;

struct JoinReport {
    JoinTier tier = JoinTier::ManualPartial;
    std::size_t matched = 0;
    std::size_t unmatched = 0;
    std::vector<CompositeKey> unmatched_keys;  // sorted
};

/// Candidate lookup over a set of identity keys. Exact lookups go through a
/// hash map; partial lookups are narrowed by the 4-character grams of meter_id
/// and then verified field by field.
class KeyIndex {
public:
    explicit KeyIndex(std::vector<CompositeKey> keys) : keys_(std::move(keys)) {
        std::sort(keys_.begin(), keys_.end());
        keys_.erase(std::unique(keys_.begin(), keys_.end()), keys_.end());
        for (std::size_t i = 0; i < keys_.size(); ++i) {
            exact_.emplace(keys_[i].str(), i);
            by_account_[keys_[i].account_id()].push_back(i);
            const auto& m = keys_[i].meter_id();
            if (m.size() >= kMinPartialOverlap) {
                by_head_[m.substr(0, kMinPartialOverlap)].push_back(i);
                for (std::size_t p = 0; p + kMinPartialOverlap <= m.size(); ++p) by_gram_[m.substr(p, kMinPartialOverlap)].push_back(i);
            }
        }
        for (auto& [gram, ids] : by_gram_) ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }

    const std::vector<CompositeKey>& keys() const { return keys_; }

    /// All identity indices matching `probe` under `rule`.
    std::vector<std::size_t> matches(FieldRule rule, const CompositeKey& probe) const {
        std::vector<std::size_t> out;
        if (rule == FieldRule::Exact) {
            if (auto it = exact_.find(probe.str()); it != exact_.end()) out.push_back(it->second);
            return out;
        }
        std::vector<std::size_t> cand;
        const auto& m = probe.meter_id();
        if (auto it = exact_meter_candidates(m); !it.empty()) cand = std::move(it);
        if (m.size() >= kMinPartialOverlap) {
            const auto head = m.substr(0, kMinPartialOverlap);
            append(cand, by_head_, head);
            if (rule == FieldRule::Substring) {
                // identity meter contained in the probe: its head is one of the probe's grams
                for (std::size_t p = 0; p + kMinPartialOverlap <= m.size(); ++p)
                    append(cand, by_head_, m.substr(p, kMinPartialOverlap));
                // probe contained in identity meter: identity contains the probe's head gram
                append(cand, by_gram_, head);
            }
        }
        std::sort(cand.begin(), cand.end());
        cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
        for (auto i : cand)
            if (key_match(rule, probe, keys_[i])) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> account_matches(const CompositeKey& probe) const {
        if (auto it = by_account_.find(probe.account_id()); it != by_account_.end()) return it->second;
        return {};
    }

private:
    std::vector<std::size_t> exact_meter_candidates(const std::string& meter) const {
        // meters shorter than the overlap can only match exactly; scan by account instead
        std::vector<std::size_t> out;
        if (meter.size() >= kMinPartialOverlap) return out;
        for (std::size_t i = 0; i < keys_.size(); ++i)
            if (keys_[i].meter_id() == meter) out.push_back(i);
        return out;
    }

    static void append(std::vector<std::size_t>& out, const std::unordered_map<std::string, std::vector<std::size_t>>& idx,
                       const std::string& k) {
        if (auto it = idx.find(k); it != idx.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }

    std::vector<CompositeKey> keys_;
    std::unordered_map<std::string, std::size_t> exact_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_account_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_head_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_gram_;
};

namespace detail {

inline std::optional<std::size_t> unique_match(const KeyIndex& index, JoinTier tier, const CompositeKey& probe) {
    if (tier == JoinTier::AccountOnly) {
        const auto m = index.account_matches(probe);
        return m.size() == 1 ? std::optional(m.front()) : std::nullopt;
    }
    for (auto rule : cascade_for(tier)) {
        const auto m = index.matches(rule, probe);
        if (m.size() == 1) return m.front();
        if (m.size() > 1) return std::nullopt;  // ambiguous at this rule
    }
    return std::nullopt;
}

}  // namespace detail

/// Maps each AMID key to a unique MIND identity and a unique BILD identity at
/// the given tier. Ambiguous and missing matches are reported as unmatched.
inline std::pair<KeyMapping, JoinReport> resolve_keys(const std::vector<CompositeKey>& amid_keys,
                                                      const std::vector<MindRecord>& mind,
                                                      const std::vector<BillingRecord>& bild, JoinTier tier,
                                                      unsigned workers = 1) {
    std::vector<CompositeKey> probes(amid_keys);
    std::sort(probes.begin(), probes.end());
    probes.erase(std::unique(probes.begin(), probes.end()), probes.end());

    std::vector<CompositeKey> mind_keys;
    mind_keys.reserve(mind.size());
    for (const auto& m : mind) mind_keys.push_back(m.key);
    std::vector<CompositeKey> bild_keys;
    bild_keys.reserve(bild.size());
    for (const auto& b : bild) bild_keys.push_back(b.key);
    const KeyIndex mind_index(std::move(mind_keys));
    const KeyIndex bild_index(std::move(bild_keys));

    std::vector<std::optional<ResolvedIdentity>> slots(probes.size());
    parallel_for(probes.size(), workers, [&](std::size_t i) {
        const auto mi = detail::unique_match(mind_index, tier, probes[i]);
        if (!mi) return;
        const auto bi = detail::unique_match(bild_index, tier, probes[i]);
        if (!bi) return;
        slots[i] = ResolvedIdentity{mind_index.keys()[*mi], bild_index.keys()[*bi]};
    });

    KeyMapping mapping;
    JoinReport report;
    report.tier = tier;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        if (slots[i]) {
            mapping.emplace(probes[i], *slots[i]);
            ++report.matched;
        } else {
            report.unmatched_keys.push_back(probes[i]);
            ++report.unmatched;
        }
    }
    return {std::move(mapping), std::move(report)};
}

/// Reports for every tier in order, as the join was historically attempted.
inline std::vector<JoinReport> tier_reports(const std::vector<CompositeKey>& amid_keys,
                                            const std::vector<MindRecord>& mind,
                                            const std::vector<BillingRecord>& bild, unsigned workers = 1) {
    std::vector<JoinReport> out;
    for (auto t : kAllTiers) out.push_back(resolve_keys(amid_keys, mind, bild, t, workers).second);
    return out;
}

struct DropResult {
    std::vector<DataStream> kept;
    std::vector<CompositeKey> dropped;
};

/// Removes streams whose key has no resolved identity.
inline DropResult drop_unmatched(const KeyMapping& mapping, std::vector<DataStream> streams) {
    DropResult out;
    for (auto& s : streams) {
        if (mapping.count(s.key))
            out.kept.push_back(std::move(s));
        else
            out.dropped.push_back(s.key);
    }
    std::sort(out.dropped.begin(), out.dropped.end());
    return out;
}

// ---------------------------------------------------------------------------
// Stream assembly
// ---------------------------------------------------------------------------

struct AssembleResult {
    std::vector<DataStream> streams;  // sorted by key
    std::size_t daily_rows_excluded = 0;
};

/// Groups hourly AMID rows into per-key streams. Daily rows are counted and
/// left out of cleaning. Duplicate timestamps are preserved in input order.
inline AssembleResult assemble_streams(const std::vector<MeterReading>& rows) {
    AssembleResult out;
    std::map<CompositeKey, std::vector<Reading>> grouped;
    for (const auto& r : rows) {
        if (r.resolution_flag == Resolution::Daily) {
            ++out.daily_rows_excluded;
            continue;
        }
        grouped[r.key].push_back({r.interval_end, r.consumption});
    }
    out.streams.reserve(grouped.size());
    for (auto& [key, readings] : grouped) {
        DataStream s;
        s.key = key;
        s.readings = std::move(readings);
        s.sort_readings();
        out.streams.push_back(std::move(s));
    }
    return out;
}

/// Copies category and billing unit from MIND onto each mapped stream.
inline void attach_metadata(std::vector<DataStream>& streams, const KeyMapping& mapping,
                            const std::vector<MindRecord>& mind) {
    std::map<CompositeKey, const MindRecord*> by_key;
    for (const auto& m : mind) by_key.emplace(m.key, &m);
    for (auto& s : streams) {
        auto it = mapping.find(s.key);
        if (it == mapping.end()) continue;
        if (auto m = by_key.find(it->second.mind_key); m != by_key.end()) {
            s.category = m->second->category;
            s.unit_label = m->second->unit;
        }
    }
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline std::string amid_line(const CompositeKey& k, Hour at, Consumption c, Resolution flag = Resolution::Hourly) {
    return k.account_id() + ',' + k.meter_id() + ',' + k.device_id() + ',' + format_hour(at) + ',' + c.str_m3() + ',' +
           (flag == Resolution::Hourly ? "H" : "D");
}

inline std::string mind_line(const MindRecord& m) {
    return m.key.account_id() + ',' + m.key.meter_id() + ',' + m.key.device_id() + ',' + m.unit + ',' +
           std::string(to_string(m.category.main)) + ',' + m.category.sub_code + ',' + m.latitude + ',' +
           m.longitude + ',' + m.postal_code;
}

inline std::string bild_line(const BillingRecord& b) {
    return b.key.account_id() + ',' + b.key.meter_id() + ',' + b.key.device_id() + ',' + b.unit + ',' +
           format_date(b.period_start) + ',' + format_date(b.period_end) + ',' + std::to_string(b.start_count) + ',' +
           std::to_string(b.end_count) + ',' + b.consumption.str_m3();
}

}  // namespace hydroclean::ingestion

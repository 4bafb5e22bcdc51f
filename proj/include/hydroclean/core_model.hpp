#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hydroclean {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class Errc {
    MissingFile,
    HeaderMismatch,
    InvalidKey,
    InvalidValue,
    InvalidTransition,
    NoDataInWindow,
    NotScorable,
    NoGroundTruth,
    NoConfidentProposal,
    InvalidRange,
    EmptyStreamSet,
    InvalidK,
    UnknownEvent,
    AlreadyRepaired,
    NotQueued,
    PhaseOrderViolation,
    StoreCorrupt,
};

inline std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::MissingFile: return "MissingFile";
        case Errc::HeaderMismatch: return "HeaderMismatch";
        case Errc::InvalidKey: return "InvalidKey";
        case Errc::InvalidValue: return "InvalidValue";
        case Errc::InvalidTransition: return "InvalidTransition";
        case Errc::NoDataInWindow: return "NoDataInWindow";
        case Errc::NotScorable: return "NotScorable";
        case Errc::NoGroundTruth: return "NoGroundTruth";
        case Errc::NoConfidentProposal: return "NoConfidentProposal";
        case Errc::InvalidRange: return "InvalidRange";
        case Errc::EmptyStreamSet: return "EmptyStreamSet";
        case Errc::InvalidK: return "InvalidK";
        case Errc::UnknownEvent: return "UnknownEvent";
        case Errc::AlreadyRepaired: return "AlreadyRepaired";
        case Errc::NotQueued: return "NotQueued";
        case Errc::PhaseOrderViolation: return "PhaseOrderViolation";
        case Errc::StoreCorrupt: return "StoreCorrupt";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

/// Hour-aligned UTC instant, counted in whole hours since 1970-01-01T00:00Z.
struct Hour {
    std::int64_t value = 0;

    constexpr auto operator<=>(const Hour&) const = default;

    constexpr Hour operator+(std::int64_t h) const { return Hour{value + h}; }
    constexpr Hour operator-(std::int64_t h) const { return Hour{value - h}; }
    constexpr std::int64_t operator-(Hour other) const { return value - other.value; }
};

using Date = std::chrono::sys_days;

inline std::int64_t day_index(Hour h) {
    // floor division; hours before the epoch land on the previous day
    return h.value >= 0 ? h.value / 24 : -((-h.value + 23) / 24);
}

inline Date date_of(Hour h) { return Date{std::chrono::days{day_index(h)}}; }

inline Hour start_of(Date d) { return Hour{d.time_since_epoch().count() * 24}; }

inline Hour make_hour(int year, unsigned month, unsigned day, int hour = 0) {
    using namespace std::chrono;
    const Date d = std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day};
    return start_of(d) + hour;
}

inline std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

inline std::string format_hour(Hour h) {
    const auto hod = h.value - day_index(h) * 24;
    char buf[8];
    std::snprintf(buf, sizeof buf, "T%02d", static_cast<int>(hod));
    return format_date(date_of(h)) + buf + ":00:00Z";
}

namespace detail {

inline bool parse_uint(std::string_view s, int& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace detail

inline std::optional<Date> parse_date(std::string_view s) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    if (!detail::parse_uint(s.substr(0, 4), y) || !detail::parse_uint(s.substr(5, 2), m) ||
        !detail::parse_uint(s.substr(8, 2), d))
        return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

/// Parses `YYYY-MM-DD[ T]HH:MM[:SS][Z|±HH[:MM]]` and normalizes to UTC.
/// Returns nullopt for malformed input or instants that are not on an hour boundary.
inline std::optional<Hour> parse_timestamp(std::string_view s) {
    if (s.size() < 16) return std::nullopt;
    const auto date = parse_date(s.substr(0, 10));
    if (!date || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return std::nullopt;
    int hh = 0, mm = 0, ss = 0;
    if (!detail::parse_uint(s.substr(11, 2), hh) || !detail::parse_uint(s.substr(14, 2), mm)) return std::nullopt;
    std::size_t pos = 16;
    if (pos < s.size() && s[pos] == ':') {
        if (pos + 3 > s.size() || !detail::parse_uint(s.substr(pos + 1, 2), ss)) return std::nullopt;
        pos += 3;
    }
    if (hh > 23 || mm > 59 || ss > 59) return std::nullopt;
    int offset_minutes = 0;
    if (pos < s.size()) {
        const char c = s[pos];
        if (c == 'Z' && pos + 1 == s.size()) {
            // UTC
        } else if (c == '+' || c == '-') {
            int oh = 0, om = 0;
            auto rest = s.substr(pos + 1);
            if (rest.size() == 5 && rest[2] == ':') {
                if (!detail::parse_uint(rest.substr(0, 2), oh) || !detail::parse_uint(rest.substr(3, 2), om))
                    return std::nullopt;
            } else if (rest.size() == 4) {
                if (!detail::parse_uint(rest.substr(0, 2), oh) || !detail::parse_uint(rest.substr(2, 2), om))
                    return std::nullopt;
            } else if (rest.size() == 2) {
                if (!detail::parse_uint(rest, oh)) return std::nullopt;
            } else {
                return std::nullopt;
            }
            offset_minutes = (c == '+' ? 1 : -1) * (oh * 60 + om);
        } else {
            return std::nullopt;
        }
    }
    if (ss != 0 || (mm + offset_minutes) % 60 != 0) return std::nullopt;
    const std::int64_t minutes = start_of(*date).value * 60 + hh * 60 + mm - offset_minutes;
    return Hour{minutes / 60};
}

/// Half-open hour range [begin, end).
struct HourRange {
    Hour begin;
    Hour end;

    constexpr auto operator<=>(const HourRange&) const = default;

    constexpr std::int64_t hours() const { return end - begin; }
    constexpr bool empty() const { return end <= begin; }
    constexpr bool contains(Hour h) const { return begin <= h && h < end; }
    constexpr bool contains(const HourRange& r) const { return begin <= r.begin && r.end <= end; }
    constexpr bool overlaps(const HourRange& r) const { return begin < r.end && r.begin < end; }
};

// ---------------------------------------------------------------------------
// Identity
// ---------------------------------------------------------------------------

/// Trim surrounding whitespace and fold ASCII case. Punctuation is kept.
inline std::string normalize_field(std::string_view raw) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0, e = raw.size();
    while (b < e && is_space(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out(raw.substr(b, e - b));
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

class CompositeKey {
public:
    CompositeKey() = default;

    CompositeKey(std::string_view account_id, std::string_view meter_id, std::string_view device_id)
        : account_(normalize_field(account_id)),
          meter_(normalize_field(meter_id)),
          device_(normalize_field(device_id)) {
        if (account_.empty() || meter_.empty() || device_.empty())
            throw Error(Errc::InvalidKey, "composite key fields must be non-empty after normalization");
        if (contains_separator(account_) || contains_separator(meter_) || contains_separator(device_))
            throw Error(Errc::InvalidKey, "composite key fields must not contain '|'");
    }

    const std::string& account_id() const noexcept { return account_; }
    const std::string& meter_id() const noexcept { return meter_; }
    const std::string& device_id() const noexcept { return device_; }

    auto operator<=>(const CompositeKey&) const = default;

    /// Canonical `account|meter|device` form.
    std::string str() const { return account_ + '|' + meter_ + '|' + device_; }

    static CompositeKey parse(std::string_view canonical) {
        const auto a = canonical.find('|');
        const auto b = a == std::string_view::npos ? a : canonical.find('|', a + 1);
        if (b == std::string_view::npos) throw Error(Errc::InvalidKey, "expected account|meter|device");
        return CompositeKey(canonical.substr(0, a), canonical.substr(a + 1, b - a - 1), canonical.substr(b + 1));
    }

private:
    static bool contains_separator(const std::string& s) { return s.find('|') != std::string::npos; }

    std::string account_;
    std::string meter_;
    std::string device_;
};

// ---------------------------------------------------------------------------
// Consumption
// ---------------------------------------------------------------------------

/// Volume in integer litres. Displayed as m³ with three decimals.
struct Consumption {
    std::int64_t litres = 0;

    constexpr auto operator<=>(const Consumption&) const = default;

    constexpr Consumption operator+(Consumption o) const { return {litres + o.litres}; }
    constexpr Consumption operator-(Consumption o) const { return {litres - o.litres}; }
    constexpr Consumption operator-() const { return {-litres}; }
    constexpr Consumption& operator+=(Consumption o) {
        litres += o.litres;
        return *this;
    }

    constexpr double m3() const { return static_cast<double>(litres) / 1000.0; }

    static constexpr Consumption from_litres(std::int64_t l) { return {l}; }

    /// Nearest litre; halves round away from zero.
    static Consumption from_m3(double m3) {
        const double l = m3 * 1000.0;
        return {static_cast<std::int64_t>(l < 0 ? l - 0.5 : l + 0.5)};
    }

    /// Exact decimal parse of an m³ string; digits beyond the third decimal are rounded half-up.
    static std::optional<Consumption> parse_m3(std::string_view s) {
        if (s.empty()) return std::nullopt;
        bool negative = false;
        std::size_t i = 0;
        if (s[0] == '-' || s[0] == '+') {
            negative = s[0] == '-';
            ++i;
        }
        std::int64_t whole = 0;
        std::size_t digits = 0;
        for (; i < s.size() && s[i] != '.'; ++i, ++digits) {
            if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
            if (whole > (INT64_MAX / 10000)) return std::nullopt;
            whole = whole * 10 + (s[i] - '0');
        }
        std::int64_t frac = 0;
        int frac_digits = 0;
        bool round_up = false;
        if (i < s.size()) {
            ++i;  // '.'
            for (; i < s.size(); ++i, ++digits) {
                if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
                if (frac_digits < 3) {
                    frac = frac * 10 + (s[i] - '0');
                    ++frac_digits;
                } else if (frac_digits == 3) {
                    round_up = s[i] >= '5';
                    ++frac_digits;
                }
            }
        }
        if (digits == 0) return std::nullopt;
        while (frac_digits < 3) {
            frac *= 10;
            ++frac_digits;
        }
        std::int64_t litres = whole * 1000 + frac + (round_up ? 1 : 0);
        return Consumption{negative ? -litres : litres};
    }

    std::string str_m3() const {
        const std::int64_t a = litres < 0 ? -litres : litres;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s%lld.%03lld", litres < 0 ? "-" : "", static_cast<long long>(a / 1000),
                      static_cast<long long>(a % 1000));
        return buf;
    }
};

// ---------------------------------------------------------------------------
// Readings and streams
// ---------------------------------------------------------------------------

enum class Resolution { Hourly, Daily };

struct MeterReading {
    CompositeKey key;
    Hour interval_end;
    Consumption consumption;
    Resolution resolution_flag = Resolution::Hourly;
};

struct Reading {
    Hour at;
    Consumption value;

    constexpr bool operator==(const Reading&) const = default;
};

enum class MainCategory { SFR, MFR, IND, COM, INS, AGR };

inline std::string_view to_string(MainCategory c) {
    switch (c) {
        case MainCategory::SFR: return "SFR";
        case MainCategory::MFR: return "MFR";
        case MainCategory::IND: return "IND";
        case MainCategory::COM: return "COM";
        case MainCategory::INS: return "INS";
        case MainCategory::AGR: return "AGR";
    }
    return "SFR";
}

inline std::optional<MainCategory> parse_category(std::string_view s) {
    const std::string n = normalize_field(s);
    if (n == "sfr") return MainCategory::SFR;
    if (n == "mfr" || n == "mfres") return MainCategory::MFR;
    if (n == "ind") return MainCategory::IND;
    if (n == "com") return MainCategory::COM;
    if (n == "ins") return MainCategory::INS;
    if (n == "agr") return MainCategory::AGR;
    return std::nullopt;
}

struct ConsumerCategory {
    MainCategory main = MainCategory::SFR;
    std::string sub_code;

    bool operator==(const ConsumerCategory&) const = default;
};

/// One meter's hourly series. Readings are kept sorted by time; duplicate
/// timestamps are legal until the record-dedup phase has run.
struct DataStream {
    CompositeKey key;
    std::vector<Reading> readings;
    ConsumerCategory category;
    std::string unit_label;

    bool operator==(const DataStream&) const = default;

    void sort_readings() {
        std::stable_sort(readings.begin(), readings.end(),
                         [](const Reading& a, const Reading& b) { return a.at < b.at; });
    }

    bool strictly_increasing() const {
        return std::adjacent_find(readings.begin(), readings.end(), [](const Reading& a, const Reading& b) {
                   return !(a.at < b.at);
               }) == readings.end();
    }

    Consumption total() const {
        Consumption sum;
        for (const auto& r : readings) sum += r.value;
        return sum;
    }

    std::optional<HourRange> observed_range() const {
        if (readings.empty()) return std::nullopt;
        return HourRange{readings.front().at, readings.back().at + 1};
    }

    /// Index of the first reading at or after `h`.
    std::size_t lower_bound(Hour h) const {
        return static_cast<std::size_t>(
            std::lower_bound(readings.begin(), readings.end(), h,
                             [](const Reading& r, Hour t) { return r.at < t; }) -
            readings.begin());
    }

    const Reading* find(Hour h) const {
        const auto i = lower_bound(h);
        return i < readings.size() && readings[i].at == h ? &readings[i] : nullptr;
    }

    Reading* find(Hour h) {
        const auto i = lower_bound(h);
        return i < readings.size() && readings[i].at == h ? &readings[i] : nullptr;
    }

    Consumption sum_in(const HourRange& r) const {
        Consumption sum;
        for (auto i = lower_bound(r.begin); i < readings.size() && readings[i].at < r.end; ++i) sum += readings[i].value;
        return sum;
    }
};

struct BillingRecord {
    CompositeKey key;
    std::string unit;
    Date period_start;
    Date period_end;
    std::int64_t start_count = 0;
    std::int64_t end_count = 0;
    Consumption consumption;

    bool operator==(const BillingRecord&) const = default;

    /// Hours covered by the period: [period_start 00:00, period_end 00:00).
    HourRange hours() const { return {start_of(period_start), start_of(period_end)}; }

    void validate() const {
        if (!(period_start < period_end)) throw Error(Errc::InvalidValue, "billing period_start must precede period_end");
        if (consumption.litres < 0) throw Error(Errc::InvalidValue, "billing consumption must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// Anomalies and repairs
// ---------------------------------------------------------------------------

enum class AnomalyClass { DuplicateStream, DuplicateRecord, Gap, Spike, Reset, Quantized, MUI, Conflict };

inline constexpr AnomalyClass kAllAnomalyClasses[] = {
    AnomalyClass::DuplicateStream, AnomalyClass::DuplicateRecord, AnomalyClass::Gap,  AnomalyClass::Spike,
    AnomalyClass::Reset,           AnomalyClass::Quantized,       AnomalyClass::MUI, AnomalyClass::Conflict};

inline std::string_view to_string(AnomalyClass c) {
    switch (c) {
        case AnomalyClass::DuplicateStream: return "DuplicateStream";
        case AnomalyClass::DuplicateRecord: return "DuplicateRecord";
        case AnomalyClass::Gap: return "Gap";
        case AnomalyClass::Spike: return "Spike";
        case AnomalyClass::Reset: return "Reset";
        case AnomalyClass::Quantized: return "Quantized";
        case AnomalyClass::MUI: return "MUI";
        case AnomalyClass::Conflict: return "Conflict";
    }
    return "Unknown";
}

inline std::optional<AnomalyClass> parse_anomaly_class(std::string_view s) {
    for (auto c : kAllAnomalyClasses)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

enum class EventStatus { Detected, Queued, Repaired, Rejected, CarriedForward };

inline std::string_view to_string(EventStatus s) {
    switch (s) {
        case EventStatus::Detected: return "Detected";
        case EventStatus::Queued: return "Queued";
        case EventStatus::Repaired: return "Repaired";
        case EventStatus::Rejected: return "Rejected";
        case EventStatus::CarriedForward: return "CarriedForward";
    }
    return "Unknown";
}

inline std::optional<EventStatus> parse_event_status(std::string_view s) {
    for (auto v : {EventStatus::Detected, EventStatus::Queued, EventStatus::Repaired, EventStatus::Rejected,
                   EventStatus::CarriedForward})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

/// Detected→{Queued, Repaired, CarriedForward}, Queued→{Repaired, Rejected}.
constexpr bool can_transition(EventStatus from, EventStatus to) {
    switch (from) {
        case EventStatus::Detected:
            return to == EventStatus::Queued || to == EventStatus::Repaired || to == EventStatus::CarriedForward;
        case EventStatus::Queued: return to == EventStatus::Repaired || to == EventStatus::Rejected;
        default: return false;
    }
}

enum class RepairKind { ReplaceWithNeighborhoodMean, ScaleSegment, DropRecord, None };

inline std::string_view to_string(RepairKind k) {
    switch (k) {
        case RepairKind::ReplaceWithNeighborhoodMean: return "ReplaceWithNeighborhoodMean";
        case RepairKind::ScaleSegment: return "ScaleSegment";
        case RepairKind::DropRecord: return "DropRecord";
        case RepairKind::None: return "None";
    }
    return "None";
}

struct RepairAction {
    RepairKind kind = RepairKind::None;
    std::optional<HourRange> segment;
    std::optional<double> factor;

    bool operator==(const RepairAction&) const = default;

    static RepairAction scale_segment(HourRange segment, double factor) {
        RepairAction a{RepairKind::ScaleSegment, segment, factor};
        a.validate();
        return a;
    }

    void validate() const {
        if (kind == RepairKind::ScaleSegment && (!segment || !factor))
            throw Error(Errc::InvalidValue, "ScaleSegment requires segment and factor");
        if (factor && !(*factor > 0.0)) throw Error(Errc::InvalidValue, "repair factor must be positive");
    }
};

struct AnomalyEvent {
    std::uint64_t id = 0;
    CompositeKey key;
    AnomalyClass cls = AnomalyClass::Spike;
    HourRange span;
    double score = 0.0;
    std::optional<RepairAction> proposed_repair;
    EventStatus status = EventStatus::Detected;

    bool operator==(const AnomalyEvent&) const = default;

    void transition(EventStatus to) {
        if (!can_transition(status, to))
            throw Error(Errc::InvalidTransition,
                        std::string(to_string(status)) + " -> " + std::string(to_string(to)));
        status = to;
    }
};

/// Deterministic merge order for events produced in parallel.
inline bool event_order(const AnomalyEvent& a, const AnomalyEvent& b) {
    if (a.key != b.key) return a.key < b.key;
    if (a.span != b.span) return a.span < b.span;
    return a.cls < b.cls;
}

// ---------------------------------------------------------------------------
// Rankings and reports
// ---------------------------------------------------------------------------

struct RankEntry {
    CompositeKey key;
    Consumption load;

    bool operator==(const RankEntry&) const = default;
};

/// Descending by load; ties broken by ascending key.
struct Ranking {
    std::vector<RankEntry> entries;
    HourRange window;

    bool operator==(const Ranking&) const = default;

    static bool before(const RankEntry& a, const RankEntry& b) {
        if (a.load != b.load) return a.load > b.load;
        return a.key < b.key;
    }

    static Ranking from_unsorted(std::vector<RankEntry> entries, HourRange window) {
        std::sort(entries.begin(), entries.end(), before);
        return Ranking{std::move(entries), window};
    }

    bool well_ordered() const {
        return std::is_sorted(entries.begin(), entries.end(), before);
    }

    std::size_t size() const { return entries.size(); }
};

struct ClassCounts {
    std::size_t found = 0;
    std::size_t resolved = 0;
    std::size_t carried_forward = 0;

    bool operator==(const ClassCounts&) const = default;
};

struct PhaseReport {
    int phase = 0;
    std::string operation_name;
    std::size_t streams_in = 0;
    std::size_t streams_out = 0;
    std::map<AnomalyClass, ClassCounts> counts;

    bool operator==(const PhaseReport&) const = default;

    bool consistent() const {
        if (streams_out > streams_in) return false;
        for (const auto& [cls, c] : counts)
            if (c.resolved + c.carried_forward != c.found) return false;
        return true;
    }
};

}  // namespace hydroclean

#pragma once

// Seeded corpus generator with planted errors and an exact ground-truth list.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "core_model.hpp"
#include "ingestion.hpp"
#include "parallel.hpp"
#include "repair.hpp"
#include "serialization.hpp"

namespace hydroclean::synth {

struct SyntheticPlan {
    std::uint64_t seed = 2013;
    std::size_t stream_count = 1000;  // distinct meters, orphans included
    int year = 2013;
    std::int64_t hours = 8760;

    // meter sizes and shape
    double size_median_litres = 300.0;
    double size_sigma = 1.3;
    double noise_sigma = 0.35;
    double weather_sigma = 0.06;

    // integrity errors
    double duplicate_stream_rate = 0.05;
    double gap_stream_fraction = 0.3;
    std::int64_t max_gap_runs = 4;
    std::int64_t max_gap_hours = 12;
    std::int64_t global_outage_days = 4;
    double duplicate_record_fraction = 0.03;
    double conflict_share = 0.5;

    // identity noise
    std::size_t orphan_count = 3;
    double truncated_key_fraction = 0.05;
    double prefixed_key_fraction = 0.02;

    // context-dependent errors
    std::size_t spike_count = 200;
    double spike_two_hour_share = 0.3;
    double spike_log10_min = 1.7;
    double spike_log10_max = 3.5;
    std::int64_t spike_burst_days = 5;  // 0 spreads spikes uniformly
    std::size_t spike_decoys = 50;
    std::size_t reset_count = 50;
    double reset_min_m3 = 100.0;
    double reset_max_m3 = 1000.0;
    double mui_rate = 0.05;
    double mui_factor = repair::kImperialGallonsPerM3;
    std::int64_t mui_first_day = 60;
    std::int64_t mui_last_day = 300;
    double mui_min_base_litres = 1500.0;
    double quantized_rate = 0.01;
    std::int64_t quantized_step_litres = 5000;
    double quantized_min_base_litres = 700.0;

    std::int64_t billing_months = 2;

    /// Every error class switched off.
    static SyntheticPlan clean(std::size_t streams = 1000, std::uint64_t seed = 2013) {
        SyntheticPlan p;
        p.seed = seed;
        p.stream_count = streams;
        p.duplicate_stream_rate = p.gap_stream_fraction = p.duplicate_record_fraction = 0.0;
        p.global_outage_days = 0;
        p.orphan_count = 0;
        p.truncated_key_fraction = p.prefixed_key_fraction = 0.0;
        p.spike_count = p.spike_decoys = p.reset_count = 0;
        p.mui_rate = p.quantized_rate = 0.0;
        return p;
    }

    HourRange range() const {
        const Hour b = make_hour(year, 1, 1);
        return {b, b + hours};
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw Error(Errc::InvalidValue, "plan: " + m); };
        if (stream_count == 0) fail("stream_count must be positive");
        if (orphan_count > stream_count) fail("orphan_count exceeds stream_count");
        if (hours < 24 * 7) fail("hours must cover at least a week");
        if (size_median_litres <= 0 || size_sigma < 0 || noise_sigma < 0) fail("size/noise parameters out of range");
        for (double r : {duplicate_stream_rate, gap_stream_fraction, duplicate_record_fraction, conflict_share,
                         truncated_key_fraction, prefixed_key_fraction, spike_two_hour_share, mui_rate, quantized_rate})
            if (r < 0 || r > 1) fail("rates must lie in [0, 1]");
        if (spike_log10_min > spike_log10_max) fail("spike_log10_min > spike_log10_max");
        if (reset_min_m3 <= 0 || reset_min_m3 > reset_max_m3) fail("reset magnitude range invalid");
        if (mui_factor <= 0) fail("mui_factor must be positive");
        if (mui_first_day < 1 || mui_first_day > mui_last_day || mui_last_day * 24 >= hours)
            fail("mui changepoint days out of range");
        if (quantized_step_litres <= 0) fail("quantized_step_litres must be positive");
        if (billing_months < 1) fail("billing_months must be positive");
        if (global_outage_days < 0 || global_outage_days * 24 > hours / 4) fail("global_outage_days out of range");
    }
};

/// Calls `f(name, field)` for every plan field.
template <typename Plan, typename F>
void visit_fields(Plan& p, F&& f) {
    f("seed", p.seed);
    f("stream_count", p.stream_count);
    f("year", p.year);
    f("hours", p.hours);
    f("size_median_litres", p.size_median_litres);
    f("size_sigma", p.size_sigma);
    f("noise_sigma", p.noise_sigma);
    f("weather_sigma", p.weather_sigma);
    f("duplicate_stream_rate", p.duplicate_stream_rate);
    f("gap_stream_fraction", p.gap_stream_fraction);
    f("max_gap_runs", p.max_gap_runs);
    f("max_gap_hours", p.max_gap_hours);
    f("global_outage_days", p.global_outage_days);
    f("duplicate_record_fraction", p.duplicate_record_fraction);
    f("conflict_share", p.conflict_share);
    f("orphan_count", p.orphan_count);
    f("truncated_key_fraction", p.truncated_key_fraction);
    f("prefixed_key_fraction", p.prefixed_key_fraction);
    f("spike_count", p.spike_count);
    f("spike_two_hour_share", p.spike_two_hour_share);
    f("spike_log10_min", p.spike_log10_min);
    f("spike_log10_max", p.spike_log10_max);
    f("spike_burst_days", p.spike_burst_days);
    f("spike_decoys", p.spike_decoys);
    f("reset_count", p.reset_count);
    f("reset_min_m3", p.reset_min_m3);
    f("reset_max_m3", p.reset_max_m3);
    f("mui_rate", p.mui_rate);
    f("mui_factor", p.mui_factor);
    f("mui_first_day", p.mui_first_day);
    f("mui_last_day", p.mui_last_day);
    f("mui_min_base_litres", p.mui_min_base_litres);
    f("quantized_rate", p.quantized_rate);
    f("quantized_step_litres", p.quantized_step_litres);
    f("quantized_min_base_litres", p.quantized_min_base_litres);
    f("billing_months", p.billing_months);
}

inline json plan_to_json(const SyntheticPlan& p) {
    json j = json::object();
    visit_fields(p, [&](const char* name, const auto& v) { j[name] = v; });
    return j;
}

inline SyntheticPlan plan_from_json(const json& j) {
    SyntheticPlan p;
    visit_fields(p, [&](const char* name, auto& v) {
        if (j.contains(name)) v = j[name].get<std::remove_reference_t<decltype(v)>>();
    });
    return p;
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct PlantedSpike {
    CompositeKey key;
    HourRange span;
    std::vector<Reading> values;
};

struct PlantedReset {
    CompositeKey key;
    Hour at;
    Consumption value;
};

struct PlantedMui {
    CompositeKey key;
    Hour changepoint;
    double factor = 1.0;         // applied to readings from the changepoint on
    double repair_factor = 1.0;  // 1 / factor
};

struct PlantedQuantized {
    CompositeKey key;
    std::int64_t step_litres = 0;
    std::int64_t register_offset = 0;
};

struct PlantedDuplicateStream {
    CompositeKey copy;
    CompositeKey original;
};

struct PlantedDuplicateRecord {
    CompositeKey key;
    Hour at;
    std::int64_t delta_litres = 0;  // 0 = exact copy, otherwise a conflicting value
};

struct PlantedGap {
    CompositeKey key;
    HourRange span;
};

struct PlantedDecoy {
    CompositeKey key;
    Hour at;
};

struct KeyNoise {
    CompositeKey amid;
    CompositeKey mind;
    CompositeKey bild;
};

struct GroundTruth {
    SyntheticPlan plan;
    HourRange range;
    std::vector<Date> outage_days;
    std::vector<CompositeKey> orphans;
    std::vector<KeyNoise> truncated;  // MIND meter id lost its last character
    std::vector<KeyNoise> prefixed;   // BILD meter id gained a leading "x"
    std::vector<PlantedDuplicateStream> duplicate_streams;
    std::vector<PlantedDuplicateRecord> duplicate_records;
    std::vector<PlantedGap> gaps;
    std::vector<PlantedSpike> spikes;
    std::vector<PlantedDecoy> decoys;
    std::vector<PlantedReset> resets;
    std::vector<PlantedMui> mui;
    std::vector<PlantedQuantized> quantized;
};

inline json to_json(const GroundTruth& g) {
    json j;
    j["plan"] = plan_to_json(g.plan);
    j["range"] = g.range;
    j["outage_days"] = json::array();
    for (auto d : g.outage_days) j["outage_days"].push_back(date_json(d));
    j["orphans"] = g.orphans;
    auto noise = [](const std::vector<KeyNoise>& v) {
        json a = json::array();
        for (const auto& n : v) a.push_back({{"amid", n.amid}, {"mind", n.mind}, {"bild", n.bild}});
        return a;
    };
    j["truncated_keys"] = noise(g.truncated);
    j["prefixed_keys"] = noise(g.prefixed);
    j["duplicate_streams"] = json::array();
    for (const auto& d : g.duplicate_streams) j["duplicate_streams"].push_back({{"copy", d.copy}, {"original", d.original}});
    j["duplicate_records"] = json::array();
    for (const auto& d : g.duplicate_records)
        j["duplicate_records"].push_back({{"key", d.key}, {"at", d.at}, {"delta_litres", d.delta_litres}});
    j["gaps"] = json::array();
    for (const auto& d : g.gaps) j["gaps"].push_back({{"key", d.key}, {"span", d.span}});
    j["spikes"] = json::array();
    for (const auto& d : g.spikes) j["spikes"].push_back({{"key", d.key}, {"span", d.span}, {"values", d.values}});
    j["decoys"] = json::array();
    for (const auto& d : g.decoys) j["decoys"].push_back({{"key", d.key}, {"at", d.at}});
    j["resets"] = json::array();
    for (const auto& d : g.resets) j["resets"].push_back({{"key", d.key}, {"at", d.at}, {"value_litres", d.value.litres}});
    j["mui"] = json::array();
    for (const auto& d : g.mui)
        j["mui"].push_back({{"key", d.key},
                            {"changepoint", d.changepoint},
                            {"factor", d.factor},
                            {"repair_factor", d.repair_factor},
                            {"segment", "after"}});
    j["quantized"] = json::array();
    for (const auto& d : g.quantized)
        j["quantized"].push_back(
            {{"key", d.key}, {"step_litres", d.step_litres}, {"register_offset", d.register_offset}});
    return j;
}

inline GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth g;
    g.plan = plan_from_json(j.at("plan"));
    g.range = j.at("range").get<HourRange>();
    for (const auto& d : j.at("outage_days")) g.outage_days.push_back(date_from_json(d));
    g.orphans = j.at("orphans").get<std::vector<CompositeKey>>();
    auto noise = [](const json& a) {
        std::vector<KeyNoise> v;
        for (const auto& n : a)
            v.push_back({n.at("amid").get<CompositeKey>(), n.at("mind").get<CompositeKey>(), n.at("bild").get<CompositeKey>()});
        return v;
    };
    g.truncated = noise(j.at("truncated_keys"));
    g.prefixed = noise(j.at("prefixed_keys"));
    for (const auto& d : j.at("duplicate_streams"))
        g.duplicate_streams.push_back({d.at("copy").get<CompositeKey>(), d.at("original").get<CompositeKey>()});
    for (const auto& d : j.at("duplicate_records"))
        g.duplicate_records.push_back(
            {d.at("key").get<CompositeKey>(), d.at("at").get<Hour>(), d.at("delta_litres").get<std::int64_t>()});
    for (const auto& d : j.at("gaps")) g.gaps.push_back({d.at("key").get<CompositeKey>(), d.at("span").get<HourRange>()});
    for (const auto& d : j.at("spikes"))
        g.spikes.push_back({d.at("key").get<CompositeKey>(), d.at("span").get<HourRange>(),
                            d.at("values").get<std::vector<Reading>>()});
    for (const auto& d : j.at("decoys")) g.decoys.push_back({d.at("key").get<CompositeKey>(), d.at("at").get<Hour>()});
    for (const auto& d : j.at("resets"))
        g.resets.push_back({d.at("key").get<CompositeKey>(), d.at("at").get<Hour>(),
                            Consumption{d.at("value_litres").get<std::int64_t>()}});
    for (const auto& d : j.at("mui"))
        g.mui.push_back({d.at("key").get<CompositeKey>(), d.at("changepoint").get<Hour>(), d.at("factor").get<double>(),
                         d.at("repair_factor").get<double>()});
    for (const auto& d : j.at("quantized"))
        g.quantized.push_back({d.at("key").get<CompositeKey>(), d.at("step_litres").get<std::int64_t>(),
                               d.at("register_offset").get<std::int64_t>()});
    return g;
}

// ---------------------------------------------------------------------------
// Corruption
// ---------------------------------------------------------------------------

enum Corruption : unsigned {
    kSpikes = 1u << 0,
    kResets = 1u << 1,
    kMui = 1u << 2,
    kQuantized = 1u << 3,
    kGaps = 1u << 4,  // planted gaps and global outage days
    kDuplicateRecords = 1u << 5,
    kDuplicateStreams = 1u << 6,
    kAllCorruptions = (1u << 7) - 1,
};

/// Applies the selected planted errors of `gt` to the clean `truth` streams.
/// Value errors go first, then removals, then duplicate rows, then copies.
inline std::vector<DataStream> corrupt(const std::vector<DataStream>& truth, const GroundTruth& gt,
                                       unsigned mask = kAllCorruptions) {
    std::vector<DataStream> out = truth;
    std::map<CompositeKey, std::size_t> at;
    for (std::size_t i = 0; i < out.size(); ++i) at[out[i].key] = i;
    auto stream = [&](const CompositeKey& k) -> DataStream& {
        const auto it = at.find(k);
        if (it == at.end()) throw Error(Errc::InvalidKey, "ground truth names unknown stream " + k.str());
        return out[it->second];
    };

    if (mask & kMui)
        for (const auto& m : gt.mui) {
            auto& s = stream(m.key);
            repair::scale_range(s, {m.changepoint, gt.range.end}, m.factor);
        }
    if (mask & kQuantized)
        for (const auto& q : gt.quantized) {
            auto& s = stream(q.key);
            std::int64_t cum = q.register_offset;
            for (auto& r : s.readings) {
                const std::int64_t before = cum / q.step_litres;
                cum += r.value.litres;
                r.value.litres = (cum / q.step_litres - before) * q.step_litres;
            }
        }
    if (mask & kSpikes)
        for (const auto& sp : gt.spikes) {
            auto& s = stream(sp.key);
            for (const auto& v : sp.values)
                if (auto* r = s.find(v.at)) r->value = v.value;
        }
    if (mask & kResets)
        for (const auto& rs : gt.resets)
            if (auto* r = stream(rs.key).find(rs.at)) r->value = rs.value;

    if (mask & kGaps) {
        const std::set<Date> outage(gt.outage_days.begin(), gt.outage_days.end());
        std::map<CompositeKey, std::vector<HourRange>> holes;
        for (const auto& g : gt.gaps) holes[g.key].push_back(g.span);
        for (auto& s : out) {
            const auto h = holes.find(s.key);
            std::erase_if(s.readings, [&](const Reading& r) {
                if (!outage.empty() && outage.count(date_of(r.at))) return true;
                if (h == holes.end()) return false;
                return std::any_of(h->second.begin(), h->second.end(), [&](const HourRange& x) { return x.contains(r.at); });
            });
        }
    }
    if (mask & kDuplicateRecords)
        for (const auto& d : gt.duplicate_records) {
            auto& s = stream(d.key);
            const auto i = s.lower_bound(d.at);
            if (i >= s.readings.size() || s.readings[i].at != d.at) continue;
            const Reading extra{d.at, Consumption{s.readings[i].value.litres + d.delta_litres}};
            s.readings.insert(s.readings.begin() + static_cast<std::ptrdiff_t>(i + 1), extra);
        }
    if (mask & kDuplicateStreams)
        for (const auto& d : gt.duplicate_streams) {
            DataStream copy = stream(d.original);
            copy.key = d.copy;
            out.push_back(std::move(copy));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct Corpus {
    std::vector<DataStream> truth;  // one per meter, every hour, no planted errors
    std::vector<DataStream> dirty;  // what the AMID file holds
    std::vector<ingestion::MindRecord> mind;
    std::vector<BillingRecord> bild;
    GroundTruth ground_truth;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix(splitmix(seed ^ splitmix(a)) ^ b);
}

struct Shape {
    double size_mult;
    double season_amp;
    const char* sub;
    int diurnal;  // 0 residential, 1 business, 2 agricultural
    double weekend;
};

inline const Shape& shape_of(MainCategory c) {
    static const Shape table[] = {
        {0.6, 0.35, "RES-1", 0, 1.0},  // SFR
        {2.0, 0.20, "RES-M", 0, 1.0},  // MFR
        {4.0, 0.05, "IND-P", 1, 0.8},  // IND
        {1.6, 0.15, "COM-R", 1, 0.6},  // COM
        {2.0, 0.15, "INS-S", 1, 0.6},  // INS
        {2.5, 0.60, "AGR-I", 2, 1.0},  // AGR
    };
    return table[static_cast<int>(c)];
}

inline const std::array<double, 24>& diurnal(int kind) {
    static const auto make = [](std::array<double, 24> a) {
        double m = 0;
        for (double v : a) m += v;
        for (double& v : a) v *= 24.0 / m;
        return a;
    };
    static const std::array<double, 24> tables[3] = {
        make({0.35, 0.3, 0.3, 0.3, 0.35, 0.5, 1.1, 1.6, 1.5, 1.1, 0.9, 0.9, 1.0, 0.9, 0.85, 0.9, 1.1, 1.4, 1.7, 1.6,
              1.3, 1.0, 0.7, 0.5}),
        make({0.5, 0.5, 0.5, 0.5, 0.5, 0.6, 0.9, 1.3, 1.5, 1.5, 1.5, 1.5, 1.4, 1.5, 1.5, 1.5, 1.4, 1.2, 0.9, 0.7, 0.6,
              0.6, 0.5, 0.5}),
        make({0.6, 0.6, 0.6, 0.6, 0.7, 0.9, 1.2, 1.3, 1.3, 1.3, 1.3, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.2, 1.1, 1.0, 0.9,
              0.8, 0.7, 0.6}),
    };
    return tables[kind];
}

inline MainCategory draw_category(std::mt19937_64& rng) {
    static const double cdf[] = {0.55, 0.70, 0.77, 0.91, 0.96, 1.0};
    const double u = std::uniform_real_distribution<double>(0, 1)(rng);
    for (int i = 0; i < 6; ++i)
        if (u < cdf[i]) return static_cast<MainCategory>(i);
    return MainCategory::AGR;
}

inline std::string fmt(const char* f, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, f, i);
    return buf;
}

inline CompositeKey meter_key(std::size_t id) {
    return CompositeKey(fmt("ac%06zu", id), fmt("mtr-%06zu", id) + static_cast<char>('a' + id % 26),
                        fmt("dv%06zu", id));
}

inline CompositeKey orphan_key(std::size_t id) {
    return CompositeKey(fmt("orph%06zu", id), fmt("ghost-%06zu", id), fmt("odv%06zu", id));
}

struct Meter {
    ConsumerCategory category;
    double base_litres = 0;
    std::int64_t register_m3 = 0;
    std::string lat, lon, postal;
};

inline std::int64_t local_max(const DataStream& s, Hour t, std::int64_t h) {
    std::int64_t m = 0;
    for (auto i = s.lower_bound(t - h); i < s.readings.size() && s.readings[i].at <= t + h; ++i)
        m = std::max(m, s.readings[i].value.litres);
    return m;
}

}  // namespace detail

/// Builds the clean series, plants every error class listed in the plan and
/// derives MIND/BILD. Same plan ⇒ same corpus, for any worker count.
inline Corpus generate_synthetic(const SyntheticPlan& plan, unsigned workers = 1) {
    plan.validate();
    const HourRange range = plan.range();
    const std::int64_t days = (plan.hours + 23) / 24;
    const std::size_t n = plan.stream_count;
    const std::size_t regular = n - plan.orphan_count;

    Corpus c;
    GroundTruth& gt = c.ground_truth;
    gt.plan = plan;
    gt.range = range;

    // city-wide daily weather factor, AR(1) in log space
    std::vector<double> weather(static_cast<std::size_t>(days));
    {
        std::mt19937_64 rng(detail::substream(plan.seed, 0xC17E));
        std::normal_distribution<double> z(0, 1);
        const double phi = 0.7;
        double x = 0;
        for (auto& w : weather) {
            x = phi * x + plan.weather_sigma * std::sqrt(1 - phi * phi) * z(rng);
            w = x;
        }
    }

    std::vector<detail::Meter> meters(n);
    c.truth.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        std::mt19937_64 rng(detail::substream(plan.seed, 1, i));
        std::normal_distribution<double> z(0, 1);
        std::uniform_real_distribution<double> u(0, 1);
        auto& m = meters[i];
        m.category.main = detail::draw_category(rng);
        const auto& shape = detail::shape_of(m.category.main);
        m.category.sub_code = shape.sub;
        m.base_litres = plan.size_median_litres * shape.size_mult * std::exp(plan.size_sigma * z(rng));
        m.register_m3 = static_cast<std::int64_t>(u(rng) * 50000);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.5f", 49.0 + 0.1 * u(rng));
        m.lat = buf;
        std::snprintf(buf, sizeof buf, "%.5f", -122.4 + 0.2 * u(rng));
        m.lon = buf;
        m.postal = detail::fmt("V2S%03zu", static_cast<std::size_t>(u(rng) * 1000));

        const double peak_day = 200.0 + 20.0 * (u(rng) - 0.5);
        const auto& profile = detail::diurnal(shape.diurnal);
        const double weather_gain = shape.season_amp / 0.35;
        const double ns = plan.noise_sigma;
        DataStream& s = c.truth[i];
        s.key = i < regular ? detail::meter_key(i) : detail::orphan_key(i);
        s.category = m.category;
        s.unit_label = "m3";
        s.readings.reserve(static_cast<std::size_t>(plan.hours));
        const std::int64_t first_day = day_index(range.begin);
        for (Hour h = range.begin; h < range.end; h = h + 1) {
            const auto d = day_index(h) - first_day;
            const auto hod = static_cast<std::size_t>(h.value - day_index(h) * 24);
            const auto weekday = static_cast<unsigned>(std::chrono::weekday{date_of(h)}.c_encoding());
            const double season =
                1.0 + shape.season_amp * std::cos(2.0 * M_PI * (static_cast<double>(d) - peak_day) / 365.0);
            const double week = (weekday == 0 || weekday == 6) ? shape.weekend : 1.0;
            const double wx = std::exp(weather_gain * weather[static_cast<std::size_t>(d)]);
            const double noise = std::exp(ns * z(rng) - ns * ns / 2);
            const double v = m.base_litres * season * profile[hod] * week * wx * noise;
            s.readings.push_back({h, Consumption{static_cast<std::int64_t>(std::llround(v))}});
        }
    });

    std::mt19937_64 rng(detail::substream(plan.seed, 2));
    std::uniform_real_distribution<double> u01(0, 1);
    auto uniform_int = [&](std::int64_t lo, std::int64_t hi) {  // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
    };
    auto binomial = [&](double p) {
        return p > 0 ? static_cast<std::size_t>(std::binomial_distribution<long long>(static_cast<long long>(regular), p)(rng))
                     : std::size_t{0};
    };

    // global outage: consecutive days in spring
    if (plan.global_outage_days > 0) {
        const std::int64_t hi = std::min<std::int64_t>(150, days - plan.global_outage_days - 1);
        const std::int64_t start = uniform_int(std::min<std::int64_t>(30, hi), hi);
        for (std::int64_t d = 0; d < plan.global_outage_days; ++d)
            gt.outage_days.push_back(date_of(range.begin + 24 * (start + d)));
    }
    const std::set<Date> outage(gt.outage_days.begin(), gt.outage_days.end());
    auto in_outage = [&](Hour h) { return outage.count(date_of(h)) > 0; };

    // victims: disjoint sets
    std::vector<bool> taken(n, false);
    for (std::size_t i = regular; i < n; ++i) taken[i] = true;
    auto pick = [&](std::size_t count, double min_base) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < regular; ++i)
            if (!taken[i] && meters[i].base_litres >= min_base) pool.push_back(i);
        if (pool.size() < count) {  // not enough large meters: fall back to the largest free ones
            pool.clear();
            for (std::size_t i = 0; i < regular; ++i)
                if (!taken[i]) pool.push_back(i);
            std::sort(pool.begin(), pool.end(),
                      [&](std::size_t a, std::size_t b) { return meters[a].base_litres > meters[b].base_litres; });
            pool.resize(std::min(count, pool.size()));
        }
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(std::min(count, pool.size()));
        std::sort(pool.begin(), pool.end());
        for (auto i : pool) taken[i] = true;
        return pool;
    };

    const auto mui_victims = pick(binomial(plan.mui_rate), plan.mui_min_base_litres);
    for (auto i : mui_victims) {
        const Hour cp = range.begin + 24 * uniform_int(plan.mui_first_day, plan.mui_last_day);
        gt.mui.push_back({c.truth[i].key, cp, plan.mui_factor, 1.0 / plan.mui_factor});
    }
    const auto quantized_victims = pick(binomial(plan.quantized_rate), plan.quantized_min_base_litres);
    for (auto i : quantized_victims)
        gt.quantized.push_back({c.truth[i].key, plan.quantized_step_litres, uniform_int(0, plan.quantized_step_litres - 1)});
    const auto spike_victims = pick(plan.spike_count, 0.0);
    const auto reset_victims = pick(plan.reset_count, 0.0);

    // decoys live in the clean data: legitimate bursts a few times the local peak
    std::vector<std::size_t> decoy_pool;
    for (std::size_t i = 0; i < regular; ++i)
        if (!std::binary_search(mui_victims.begin(), mui_victims.end(), i) &&
            !std::binary_search(quantized_victims.begin(), quantized_victims.end(), i))
            decoy_pool.push_back(i);
    std::set<std::pair<std::size_t, Hour>> busy;  // hours reserved for planted events
    for (std::size_t k = 0; k < plan.spike_decoys && !decoy_pool.empty(); ++k) {
        const auto i = decoy_pool[static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(decoy_pool.size()) - 1))];
        const Hour t = range.begin + uniform_int(12, plan.hours - 13);
        auto* r = c.truth[i].find(t);
        const auto peak = detail::local_max(c.truth[i], t, 8);
        r->value.litres = static_cast<std::int64_t>(std::llround(static_cast<double>(peak) * (1.5 + 1.5 * u01(rng))));
        gt.decoys.push_back({c.truth[i].key, t});
        busy.insert({i, t});
    }

    // spikes
    std::vector<std::int64_t> burst_days;
    if (plan.spike_burst_days > 0) {
        std::vector<std::int64_t> candidates;
        for (std::int64_t d = 1; d + 1 < days; ++d)
            if (!outage.count(date_of(range.begin + 24 * d))) candidates.push_back(d);
        std::shuffle(candidates.begin(), candidates.end(), rng);
        candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(plan.spike_burst_days)));
        burst_days = candidates;
    }
    for (auto i : spike_victims) {
        const std::int64_t len = u01(rng) < plan.spike_two_hour_share ? 2 : 1;
        Hour t;
        do {
            if (burst_days.empty())
                t = range.begin + uniform_int(12, plan.hours - 13);
            else
                t = range.begin + 24 * burst_days[static_cast<std::size_t>(
                                           uniform_int(0, static_cast<std::int64_t>(burst_days.size()) - 1))] +
                    uniform_int(0, 23);
        } while (in_outage(t) || in_outage(t + (len - 1)) || t + len > range.end - 12 || t < range.begin + 12);
        const auto& s = c.truth[i];
        const double level = static_cast<double>(detail::local_max(s, t, 8) + 1000);
        const double amp = level * std::pow(10.0, plan.spike_log10_min + (plan.spike_log10_max - plan.spike_log10_min) * u01(rng));
        PlantedSpike sp{s.key, {t, t + len}, {}};
        for (std::int64_t k = 0; k < len; ++k) {
            sp.values.push_back({t + k, Consumption{static_cast<std::int64_t>(std::llround(amp * (0.95 + 0.1 * u01(rng))))}});
            busy.insert({i, t + k});
        }
        gt.spikes.push_back(std::move(sp));
    }
    for (auto i : reset_victims) {
        Hour t;
        do t = range.begin + uniform_int(12, plan.hours - 13);
        while (in_outage(t));
        const auto litres = static_cast<std::int64_t>(std::llround(
            1000.0 * (plan.reset_min_m3 + (plan.reset_max_m3 - plan.reset_min_m3) * u01(rng))));
        gt.resets.push_back({c.truth[i].key, t, Consumption{-litres}});
        busy.insert({i, t});
    }
    auto near_busy = [&](std::size_t i, Hour b, Hour e, std::int64_t margin) {
        auto it = busy.lower_bound({i, b - margin});
        return it != busy.end() && it->first == i && it->second < e + margin;
    };

    // gaps
    std::set<std::pair<std::size_t, Hour>> removed;
    {
        std::vector<std::size_t> order(regular);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(std::llround(plan.gap_stream_fraction * static_cast<double>(regular))));
        std::sort(order.begin(), order.end());
        for (auto i : order) {
            const auto runs = uniform_int(1, plan.max_gap_runs);
            std::vector<HourRange> placed;
            for (std::int64_t k = 0; k < runs; ++k) {
                for (int attempt = 0; attempt < 20; ++attempt) {
                    const auto len = uniform_int(1, plan.max_gap_hours);
                    const Hour b = range.begin + uniform_int(0, plan.hours - len);
                    const HourRange span{b, b + len};
                    bool ok = !near_busy(i, span.begin, span.end, 2);
                    for (Hour h = span.begin; ok && h < span.end; h = h + 1) ok = !in_outage(h);
                    for (const auto& p : placed) ok = ok && !HourRange{p.begin - 1, p.end + 1}.overlaps(span);
                    if (!ok) continue;
                    placed.push_back(span);
                    break;
                }
            }
            std::sort(placed.begin(), placed.end());
            for (const auto& span : placed) {
                gt.gaps.push_back({c.truth[i].key, span});
                for (Hour h = span.begin; h < span.end; h = h + 1) removed.insert({i, h});
            }
        }
    }

    // duplicate timestamps
    {
        std::vector<std::size_t> order(regular);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(std::llround(plan.duplicate_record_fraction * static_cast<double>(regular))));
        std::sort(order.begin(), order.end());
        for (auto i : order) {
            const auto count = uniform_int(1, 3);
            std::set<Hour> used;
            for (std::int64_t k = 0; k < count; ++k) {
                const Hour t = range.begin + uniform_int(0, plan.hours - 1);
                if (in_outage(t) || removed.count({i, t}) || near_busy(i, t, t + 1, 9) || !used.insert(t).second) continue;
                const std::int64_t delta = u01(rng) < plan.conflict_share ? uniform_int(1, 500) : 0;
                gt.duplicate_records.push_back({c.truth[i].key, t, delta});
            }
        }
        std::sort(gt.duplicate_records.begin(), gt.duplicate_records.end(),
                  [](const auto& a, const auto& b) { return std::tie(a.key, a.at) < std::tie(b.key, b.at); });
    }

    // exact copies of whole streams, keyed after every original
    {
        const auto copies = binomial(plan.duplicate_stream_rate);
        for (std::size_t k = 0; k < copies; ++k) {
            const auto original = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(regular) - 1));
            gt.duplicate_streams.push_back({c.truth[original].key, c.truth[original].key});
            gt.duplicate_streams.back().copy = detail::meter_key(n + k);
        }
    }

    for (std::size_t i = regular; i < n; ++i) gt.orphans.push_back(c.truth[i].key);

    // MIND and BILD, with identity noise on some keys
    std::vector<std::size_t> order(regular);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_trunc = static_cast<std::size_t>(std::llround(plan.truncated_key_fraction * static_cast<double>(regular)));
    const auto n_pref = std::min(regular - n_trunc, static_cast<std::size_t>(std::llround(
                                                        plan.prefixed_key_fraction * static_cast<double>(regular))));
    std::vector<CompositeKey> mind_key(regular), bild_key(regular);
    for (std::size_t i = 0; i < regular; ++i) mind_key[i] = bild_key[i] = c.truth[i].key;
    for (std::size_t k = 0; k < n_trunc + n_pref; ++k) {
        const auto i = order[k];
        const auto& key = c.truth[i].key;
        if (k < n_trunc) {
            const auto& m = key.meter_id();
            mind_key[i] = CompositeKey(key.account_id(), m.substr(0, m.size() - 1), key.device_id());
            gt.truncated.push_back({key, mind_key[i], bild_key[i]});
        } else {
            bild_key[i] = CompositeKey(key.account_id(), "x" + key.meter_id(), key.device_id());
            gt.prefixed.push_back({key, mind_key[i], bild_key[i]});
        }
    }
    auto by_amid = [](const KeyNoise& a, const KeyNoise& b) { return a.amid < b.amid; };
    std::sort(gt.truncated.begin(), gt.truncated.end(), by_amid);
    std::sort(gt.prefixed.begin(), gt.prefixed.end(), by_amid);

    for (std::size_t i = 0; i < regular; ++i) {
        const auto& m = meters[i];
        c.mind.push_back({mind_key[i], "m3", m.category, m.lat, m.lon, m.postal});
        std::chrono::year_month ym{std::chrono::year{plan.year}, std::chrono::January};
        std::int64_t cumulative = m.register_m3 * 1000;
        for (;;) {
            const Date ps = Date{ym / std::chrono::day{1}};
            if (start_of(ps) >= range.end) break;
            ym += std::chrono::months{plan.billing_months};
            Date pe = Date{ym / std::chrono::day{1}};
            if (start_of(pe) > range.end) pe = date_of(range.end - 1) + std::chrono::days{1};
            BillingRecord b;
            b.key = bild_key[i];
            b.unit = "m3";
            b.period_start = ps;
            b.period_end = pe;
            b.consumption = c.truth[i].sum_in(b.hours());
            b.start_count = cumulative / 1000;
            cumulative += b.consumption.litres;
            b.end_count = cumulative / 1000;
            c.bild.push_back(std::move(b));
        }
    }

    std::sort(gt.spikes.begin(), gt.spikes.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    std::sort(gt.resets.begin(), gt.resets.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    std::sort(gt.decoys.begin(), gt.decoys.end(),
              [](const auto& a, const auto& b) { return std::tie(a.key, a.at) < std::tie(b.key, b.at); });

    c.dirty = corrupt(c.truth, gt, kAllCorruptions);
    return c;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_amid(const std::vector<DataStream>& streams, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    std::string buf;
    buf.reserve(1 << 22);
    buf.append(ingestion::kAmidHeader).push_back('\n');
    for (const auto& s : streams) {
        const std::string prefix = s.key.account_id() + ',' + s.key.meter_id() + ',' + s.key.device_id() + ',';
        for (const auto& r : s.readings) {
            buf += prefix;
            buf += format_hour(r.at);
            buf += ',';
            buf += r.value.str_m3();
            buf += ",H\n";
            if (buf.size() > (1 << 22) - 256) {
                out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
                buf.clear();
            }
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_mind(const std::vector<ingestion::MindRecord>& mind, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << ingestion::kMindHeader << '\n';
    for (const auto& m : mind) out << ingestion::mind_line(m) << '\n';
}

inline void write_bild(const std::vector<BillingRecord>& bild, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << ingestion::kBildHeader << '\n';
    for (const auto& b : bild) out << ingestion::bild_line(b) << '\n';
}

/// amid.csv, mind.csv, bild.csv, truth.json and (optionally) clean_amid.csv.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir, bool with_clean = true) {
    std::filesystem::create_directories(dir);
    write_amid(c.dirty, dir / "amid.csv");
    write_mind(c.mind, dir / "mind.csv");
    write_bild(c.bild, dir / "bild.csv");
    if (with_clean) write_amid(c.truth, dir / "clean_amid.csv");
    std::ofstream(dir / "truth.json", std::ios::binary) << to_json(c.ground_truth).dump(1) << '\n';
}

}  // namespace hydroclean::synth

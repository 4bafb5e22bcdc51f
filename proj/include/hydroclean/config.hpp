#pragma once

// TOML configuration with HYDROCLEAN_<SECTION>_<KEY> environment overrides.

#include <charconv>
#include <cstdlib>
#include <thread>

#include <toml.hpp>

#include "anomaly_detection.hpp"
#include "ingestion.hpp"
#include "integrity.hpp"
#include "serialization.hpp"
#include "synthetic.hpp"

namespace hydroclean {

struct PipelineConfig {
    std::int64_t workers = 0;  // 0 = hardware concurrency
    std::string join_tier = "manual-partial";
    std::string conflict_policy = "drop";
    double outage_threshold = integrity::kGlobalOutageThreshold;
    double spike_theta = 10.0;
    std::int64_t spike_neighborhood_hours = 8;
    std::int64_t spike_min_excess_litres = 1000;
    std::int64_t spike_max_span_hours = 3;
    std::int64_t spike_passes = 3;
    std::int64_t quantized_min_step_litres = 5000;
    double quantized_min_fraction = 0.9;
    std::int64_t quantized_min_nonzero = 720;
    double mui_clean_below = 40.0;
    double mui_dirty_above = 250.0;
    std::int64_t top_k = 100;
    std::int64_t short_window_hours = 24;
    std::int64_t long_window_hours = 168;

    unsigned worker_count() const {
        if (workers > 0) return static_cast<unsigned>(workers);
        return std::max(1u, std::thread::hardware_concurrency());
    }
    ingestion::JoinTier tier() const {
        const auto t = ingestion::parse_join_tier(join_tier);
        if (!t) throw Error(Errc::InvalidValue, "unknown join_tier '" + join_tier + "'");
        return *t;
    }
    integrity::ConflictPolicy policy() const {
        const auto p = integrity::parse_conflict_policy(conflict_policy);
        if (!p) throw Error(Errc::InvalidValue, "unknown conflict_policy '" + conflict_policy + "'");
        return *p;
    }
    detect::SpikeConfig spike() const {
        return {spike_theta, spike_neighborhood_hours, spike_min_excess_litres, spike_max_span_hours};
    }
    detect::QuantizedConfig quantized() const {
        detect::QuantizedConfig q;
        q.min_step_litres = quantized_min_step_litres;
        q.min_fraction = quantized_min_fraction;
        q.min_nonzero = static_cast<std::size_t>(quantized_min_nonzero);
        return q;
    }
    detect::MuiVerdictBand band() const { return {mui_clean_below, mui_dirty_above}; }

    void validate() const {
        tier();
        policy();
        band().validate();
        if (workers < 0) throw Error(Errc::InvalidValue, "workers must be >= 0");
        if (spike_theta <= 0 || spike_neighborhood_hours < 1 || spike_max_span_hours < 1 || spike_passes < 1)
            throw Error(Errc::InvalidValue, "spike parameters out of range");
        if (outage_threshold <= 0 || outage_threshold > 1) throw Error(Errc::InvalidValue, "outage_threshold out of range");
        if (top_k < 1) throw Error(Errc::InvalidK, "top_k must be >= 1");
        if (short_window_hours < 1 || long_window_hours < 1) throw Error(Errc::InvalidValue, "window hours must be >= 1");
    }
};

template <typename Config, typename F>
void visit_fields(Config& c, F&& f)
    requires std::is_same_v<std::remove_const_t<Config>, PipelineConfig>
{
    f("workers", c.workers);
    f("join_tier", c.join_tier);
    f("conflict_policy", c.conflict_policy);
    f("outage_threshold", c.outage_threshold);
    f("spike_theta", c.spike_theta);
    f("spike_neighborhood_hours", c.spike_neighborhood_hours);
    f("spike_min_excess_litres", c.spike_min_excess_litres);
    f("spike_max_span_hours", c.spike_max_span_hours);
    f("spike_passes", c.spike_passes);
    f("quantized_min_step_litres", c.quantized_min_step_litres);
    f("quantized_min_fraction", c.quantized_min_fraction);
    f("quantized_min_nonzero", c.quantized_min_nonzero);
    f("mui_clean_below", c.mui_clean_below);
    f("mui_dirty_above", c.mui_dirty_above);
    f("top_k", c.top_k);
    f("short_window_hours", c.short_window_hours);
    f("long_window_hours", c.long_window_hours);
}

inline json config_to_json(const PipelineConfig& c) {
    json j = json::object();
    visit_fields(c, [&](const char* name, const auto& v) { j[name] = v; });
    return j;
}

namespace config_detail {

template <typename T>
void assign_from_node(const toml::node& node, T& out, const std::string& where) {
    bool ok = false;
    if constexpr (std::is_same_v<T, std::string>) {
        if (auto v = node.value<std::string>()) out = *v, ok = true;
    } else if constexpr (std::is_floating_point_v<T>) {
        if (auto v = node.value<double>()) out = *v, ok = true;
    } else if constexpr (std::is_unsigned_v<T>) {
        if (auto v = node.value<std::int64_t>(); v && *v >= 0) out = static_cast<T>(*v), ok = true;
    } else {
        if (auto v = node.value<std::int64_t>()) out = static_cast<T>(*v), ok = true;
    }
    if (!ok) throw Error(Errc::InvalidValue, "config " + where + " has the wrong type");
}

template <typename T>
void assign_from_text(std::string_view text, T& out, const std::string& where) {
    if constexpr (std::is_same_v<T, std::string>) {
        out = std::string(text);
    } else if constexpr (std::is_floating_point_v<T>) {
        char* end = nullptr;
        const std::string s(text);
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) throw Error(Errc::InvalidValue, where + ": not a number");
        out = static_cast<T>(v);
    } else {
        T v{};
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || p != text.data() + text.size()) throw Error(Errc::InvalidValue, where + ": not an integer");
        out = v;
    }
}

inline std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace config_detail

/// Overlays `[section]` of `table`, then HYDROCLEAN_<SECTION>_<FIELD> variables.
template <typename Config>
void overlay(Config& cfg, const toml::table* table, const std::string& section) {
    const toml::table* sec = nullptr;
    if (table) {
        if (const auto* node = table->get(section)) {
            sec = node->as_table();
            if (!sec) throw Error(Errc::InvalidValue, "config section [" + section + "] must be a table");
            for (const auto& [k, v] : *sec) {
                bool known = false;
                visit_fields(cfg, [&](const char* name, auto&) { known = known || k.str() == name; });
                if (!known) throw Error(Errc::InvalidValue, "unknown config key " + section + "." + std::string(k.str()));
            }
        }
    }
    visit_fields(cfg, [&](const char* name, auto& field) {
        const std::string where = section + "." + name;
        if (sec)
            if (const auto* node = sec->get(name)) config_detail::assign_from_node(*node, field, where);
        const std::string env = "HYDROCLEAN_" + config_detail::upper(section) + "_" + config_detail::upper(name);
        if (const char* v = std::getenv(env.c_str())) config_detail::assign_from_text(v, field, env);
    });
}

inline toml::table parse_toml_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
    try {
        return toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        throw Error(Errc::InvalidValue, path.string() + ": " + std::string(e.description()));
    }
}

/// Pipeline settings: defaults, then the optional file's [pipeline] table, then the environment.
inline PipelineConfig load_pipeline_config(const std::optional<std::filesystem::path>& path) {
    PipelineConfig c;
    std::optional<toml::table> t;
    if (path) t = parse_toml_file(*path);
    overlay(c, t ? &*t : nullptr, "pipeline");
    c.validate();
    return c;
}

/// Generator plan: defaults, then the optional file's [plan] table, then the environment.
inline synth::SyntheticPlan load_plan(const std::optional<std::filesystem::path>& path) {
    synth::SyntheticPlan p;
    std::optional<toml::table> t;
    if (path) t = parse_toml_file(*path);
    overlay(p, t ? &*t : nullptr, "plan");
    p.validate();
    return p;
}

}  // namespace hydroclean
